import json
import logging
from pathlib import Path

import numpy as np

from utils.utilities import CheckpointLoadError


logger = logging.getLogger(__name__)


#
# Checkpoint file format: a JSON document with two sections:
#
#   {"config": <the model config dict>,
#    "parameters": {<parameter path>: {"shape": [...], "data": [<row-major floats>]}, ...}}
#
# json writes floats via repr(), which round-trips float64 exactly. keys are sorted so that identical parameters give
# byte-identical files.
#

def checkpoint_dict(named_params, config_dict):
    """
    :param named_params: dict mapping parameter path -> Tensor
    :param config_dict: the model config as a dict
    """
    return {'config': config_dict,
            'parameters': {path: {'shape': list(tensor.data.shape),
                                  'data': [float(value) for value in tensor.data.reshape(-1)]}
                           for path, tensor in named_params.items()}}


def save_checkpoint(path, named_params, config_dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as checkpoint_fp:
        json.dump(checkpoint_dict(named_params, config_dict), checkpoint_fp, sort_keys=True)
    logger.info(f"save_checkpoint(): wrote {len(named_params)} parameters to {str(path)!r}")


def read_checkpoint(path):
    """
    :return: 2-tuple: (config_dict, dict mapping parameter path -> np.ndarray)
    :raises CheckpointLoadError: if the file is missing or malformed
    """
    try:
        with open(path) as checkpoint_fp:
            checkpoint = json.load(checkpoint_fp)
    except (OSError, json.JSONDecodeError) as ex:
        raise CheckpointLoadError(f"could not read checkpoint {str(path)!r}. ex={ex!r}")

    if ('config' not in checkpoint) or ('parameters' not in checkpoint):
        raise CheckpointLoadError(f"checkpoint is missing 'config' or 'parameters': {str(path)!r}")

    path_to_array = {}
    for param_path, param_dict in checkpoint['parameters'].items():
        shape, data = param_dict.get('shape'), param_dict.get('data')
        if (shape is None) or (data is None) or (int(np.prod(shape)) != len(data)):
            raise CheckpointLoadError(f"malformed parameter {param_path!r}: shape={shape!r}, "
                                      f"len(data)={len(data) if data is not None else None}")

        path_to_array[param_path] = np.array(data, dtype=np.float64).reshape(shape)
    return checkpoint['config'], path_to_array


def load_parameters_into(named_params, path_to_array):
    """
    Copies checkpoint arrays into the matching parameters, in place.

    :raises CheckpointLoadError: if the parameter paths or shapes differ
    """
    missing = sorted(set(named_params) - set(path_to_array))
    unexpected = sorted(set(path_to_array) - set(named_params))
    if missing or unexpected:
        raise CheckpointLoadError(f"checkpoint parameters do not match model. missing={missing}, "
                                  f"unexpected={unexpected}")

    for param_path, tensor in named_params.items():
        array = path_to_array[param_path]
        if array.shape != tensor.data.shape:
            raise CheckpointLoadError(f"shape mismatch for {param_path!r}: checkpoint={list(array.shape)}, "
                                      f"model={tensor.shape}")

        tensor.data = array.copy()
