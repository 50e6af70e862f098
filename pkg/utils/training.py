import json
import logging
import math
from dataclasses import dataclass
from itertools import chain, count
from pathlib import Path

import numpy as np
import yaml
from more_itertools import chunked

from memvo_app.models.pose import Pose, Trajectory
from memvo_app.models.run_config import RunConfig
from memvo_app.models.vo_model import VoModel
from memvo_repo.settings import load_settings
from utils.checkpoint import save_checkpoint, read_checkpoint, load_parameters_into
from utils.evaluation import ate_rmse, evaluate, paired_trajectories, write_curves_csv
from utils.geometry import compose
from utils.loss import local_loss, global_loss, total_loss
from utils.network import forward_sequence, resolve_attention_mode
from utils.optimizer import AdamState, adam_step
from utils.pose_io import read_manifest, read_trajectory_file, write_trajectory_file
from utils.synthetic import synth_generate, samples_from_manifest, full_samples_from_manifest
from utils.tensor import backward, scale, no_grad
from utils.utilities import AlignmentError, CheckpointLoadError, ConfigError, TrainingError, aligned_table_lines


logger = logging.getLogger(__name__)

RESOLVED_CONFIG_FILE_NAME = 'resolved_config.json'
TRAIN_LOG_FILE_NAME = 'train_log.jsonl'
CHECKPOINT_FILE_NAME = 'checkpoint.json'
SUMMARY_FILE_NAME = 'training_summary.json'
DIAGNOSTICS_FILE_NAME = 'diagnostics.json'


#
# ---- config loading ----
#

def load_run_config(path=None, settings=None, overrides=None):
    """
    :param path: optional JSON (.json) or YAML file whose (possibly nested) keys are merged over the settings'
        defaults. a resolved_config.json snapshot is a valid input
    :param settings: a settings module. default: load_settings()
    :param overrides: optional dict merged last, e.g., from command-line options
    :return: a RunConfig
    :raises ConfigError: if the file cannot be read, is not a mapping, or has unknown keys
    """
    settings = settings or load_settings()
    run_config = RunConfig.from_settings(settings)
    if path:
        try:
            with open(path) as config_fp:
                if Path(path).suffix.lower() == '.json':
                    file_dict = json.load(config_fp)
                else:
                    file_dict = yaml.safe_load(config_fp) or {}
        except (OSError, ValueError, yaml.YAMLError) as ex:
            raise ConfigError(f"could not read config {str(path)!r}. ex={ex!r}")

        if not isinstance(file_dict, dict):
            raise ConfigError(f"config {str(path)!r} must hold a mapping. got {type(file_dict).__name__}")

        run_config = run_config.with_overrides(file_dict)
    if overrides:
        run_config = run_config.with_overrides(overrides)
    return run_config


def _prepare_output_dir(output_dir):
    output_dir = Path(output_dir)
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
    except OSError as ose:
        raise ConfigError(f"could not create output directory {str(output_dir)!r}. ose={ose!r}")

    return output_dir


def _write_json(path, json_obj):
    with open(path, 'w') as json_fp:
        json.dump(json_obj, json_fp, indent=2, sort_keys=True)
        json_fp.write('\n')


#
# ---- datasets ----
#

def load_dataset(run_config):
    """
    :return: 2-tuple: (training SequenceSamples, validation SequenceSamples). the validation samples are the last
        run_config.num_validation samples of the dataset
    :raises ConfigError: if no training samples remain
    """
    if run_config.manifest_path:
        manifest = read_manifest(run_config.manifest_path)
        samples = samples_from_manifest(manifest, run_config.manifest_split, run_config.sequence_length,
                                        run_config.synthetic, run_config.snippet_policy, run_config.snippet_stride,
                                        run_config.snippet_max_overlap, run_config.seed)
    else:
        samples = synth_generate(run_config.synthetic)

    num_train = len(samples) - run_config.num_validation
    if num_train < 1:
        raise ConfigError(f"no training samples left: {len(samples)} samples, "
                          f"num_validation={run_config.num_validation}")

    return samples[:num_train], samples[num_train:]


def _shuffled_forever(num_samples, rng):
    return chain.from_iterable(rng.permutation(num_samples).tolist() for _ in count())


#
# ---- losses over samples ----
#

def sample_losses(model, sample, k, attention_mode=None):
    """
    :return: 3-tuple of single-element Tensors: (L_local, L_global, L_total) for one sequence, plus the SequenceOutput
        as a fourth item
    """
    output = forward_sequence(model, sample.features, attention_mode)
    local = local_loss(output.relative, sample.gt_relative, k)
    global_ = global_loss(output.absolute, sample.gt_absolute[1:], k)
    return local, global_, total_loss(local, global_), output


def estimated_trajectory(output, timestamps=None):
    """
    :return: a Trajectory of the SequenceOutput's absolute poses, starting with the identity origin
    """
    return Trajectory([Pose.identity()] + output.absolute_poses(), timestamps)


def held_out_ate(estimate, reference):
    """
    :return: sim3-aligned ATE, falling back to unaligned ATE when the estimate's point spread is degenerate (e.g., an
        untrained model that barely moves)
    """
    try:
        return ate_rmse(estimate, reference, 'sim3')
    except AlignmentError as ae:
        logger.warning(f"held_out_ate(): sim3 alignment failed, using unaligned ATE. ae={ae!r}")
        return ate_rmse(estimate, reference, 'none')


def validation_metrics(model, samples, k, attention_mode=None):
    """
    :return: dict with the mean 'loss_total', 'ate' (held_out_ate()), and 'memory_slots' (stored steps per sequence)
        over samples. values are None if there are no samples
    """
    if not samples:
        return {'loss_total': None, 'ate': None, 'memory_slots': None}

    losses, ates, memory_slots = [], [], []
    with no_grad():
        for sample in samples:
            _, _, loss, output = sample_losses(model, sample, k, attention_mode)
            losses.append(loss.item())
            ates.append(held_out_ate(estimated_trajectory(output), Trajectory(sample.gt_absolute)))
            memory_slots.append(len(output.stored_steps))
    return {'loss_total': float(np.mean(losses)), 'ate': float(np.mean(ates)),
            'memory_slots': float(np.mean(memory_slots))}


#
# ---- run_train() ----
#

@dataclass
class TrainingResult:
    model: VoModel
    summary: dict
    output_dir: Path


def run_train(run_config):
    """
    Trains a VoModel per run_config. Each iteration averages the gradients of L_total over a batch of training
    sequences and takes one Adam step at the scheduled learning rate. All randomness derives from run_config.seed, so
    repeating a run reproduces its log and checkpoints byte for byte.

    Writes to run_config.output_dir: resolved_config.json, train_log.jsonl (one JSON line per iteration),
    checkpoint-<iteration>.json every checkpoint_interval iterations, checkpoint.json, and training_summary.json.

    :return: a TrainingResult
    :raises TrainingError: if a loss becomes non-finite
    """
    output_dir = _prepare_output_dir(run_config.output_dir)
    _write_json(output_dir / RESOLVED_CONFIG_FILE_NAME, run_config.to_dict())
    train_samples, validation_samples = load_dataset(run_config)
    model = VoModel.initialize(run_config.model, run_config.seed)
    k = run_config.loss_weights().k
    logger.info(f"run_train(): {run_config.iterations} iterations, {len(train_samples)} training and "
                f"{len(validation_samples)} validation sequences, {model.num_scalars()} parameters, "
                f"ablation={run_config.ablation!r}, output_dir={str(output_dir)!r}")

    initial_metrics = validation_metrics(model, validation_samples, k)
    params = model.parameters()
    opt_config = run_config.optimizer
    adam_state = AdamState.for_parameters(params, lr=opt_config.lr, beta1=opt_config.beta1, beta2=opt_config.beta2,
                                          eps=opt_config.eps, weight_decay=opt_config.weight_decay)
    batches = chunked(_shuffled_forever(len(train_samples), np.random.default_rng([run_config.seed, 1])),
                      run_config.batch_size)
    with open(output_dir / TRAIN_LOG_FILE_NAME, 'w') as log_fp:
        for iteration in range(1, run_config.iterations + 1):
            log_dict = _train_iteration(model, params, adam_state, [train_samples[idx] for idx in next(batches)],
                                        iteration, opt_config.lr_at(iteration - 1), k)
            log_fp.write(json.dumps(log_dict) + '\n')
            if iteration % run_config.checkpoint_interval == 0:
                save_checkpoint(output_dir / f"checkpoint-{iteration}.json", model.named_parameters(),
                                run_config.to_dict())
                logger.info(f"run_train(): iteration {iteration}: loss_total={log_dict['loss_total']:.6g}")
    save_checkpoint(output_dir / CHECKPOINT_FILE_NAME, model.named_parameters(), run_config.to_dict())

    final_metrics = validation_metrics(model, validation_samples, k)
    summary = {'iterations': run_config.iterations,
               'num_train': len(train_samples),
               'num_validation': len(validation_samples),
               'initial_validation_loss': initial_metrics['loss_total'],
               'final_validation_loss': final_metrics['loss_total'],
               'initial_validation_ate': initial_metrics['ate'],
               'final_validation_ate': final_metrics['ate'],
               'validation_memory_slots': final_metrics['memory_slots']}
    _write_json(output_dir / SUMMARY_FILE_NAME, summary)
    logger.info(f"run_train(): done. summary={summary}")
    return TrainingResult(model, summary, output_dir)


def _train_iteration(model, params, adam_state, batch, iteration, lr, k):
    # returns the iteration's log dict. gradients accumulate over the batch in batch order
    local_sum, global_sum, total_sum = 0.0, 0.0, 0.0
    model.zero_grad()
    for sample in batch:
        local, global_, total, _ = sample_losses(model, sample, k)
        if not math.isfinite(total.item()):
            raise TrainingError(f"non-finite loss at iteration {iteration}: sample={sample.id!r}, "
                                f"loss_local={local.item()!r}, loss_global={global_.item()!r}")

        local_sum += local.item()
        global_sum += global_.item()
        total_sum += total.item()
        backward(scale(total, 1.0 / len(batch)))
    adam_state.lr = lr
    adam_step(params, [param.grad for param in params], adam_state)
    model.zero_grad()
    return {'iteration': iteration, 'lr': lr, 'loss_local': local_sum / len(batch),
            'loss_global': global_sum / len(batch), 'loss_total': total_sum / len(batch)}


#
# ---- run_infer() ----
#

def load_model(checkpoint_path):
    """
    :return: 2-tuple: (the RunConfig embedded in the checkpoint, a VoModel holding the checkpoint's parameters)
    :raises CheckpointLoadError: if the checkpoint is unreadable or does not fit its own config
    """
    config_dict, path_to_array = read_checkpoint(checkpoint_path)
    try:
        run_config = RunConfig.from_dict(config_dict)
    except ConfigError as ce:
        raise CheckpointLoadError(f"checkpoint {str(checkpoint_path)!r} has an invalid config. ce={ce!r}")

    model = VoModel.zeros_like_config(run_config.model)
    load_parameters_into(model.named_parameters(), path_to_array)
    return run_config, model


def infer_trajectory(model, features, attention_mode=None, chunk_length=None, timestamps=None):
    """
    Estimates the absolute trajectory of a sequence of any length. The frame pairs are processed in consecutive
    chunks of chunk_length pairs (default: the model's sequence_length - 1), each with a fresh recurrent state and
    memory; each chunk's absolute poses are chained onto the last pose of the previous chunk.

    :return: 2-tuple: (estimated Trajectory including the origin, list of per-chunk diagnostics dicts, each with a
        'first_pair' index and SequenceOutput.diagnostics_dict()'s fields)
    """
    chunk_length = chunk_length or (model.config.sequence_length - 1)
    poses = [Pose.identity()]
    chunk_diagnostics = []
    with no_grad():
        for chunk_idx, chunk in enumerate(chunked(features, chunk_length)):
            output = forward_sequence(model, chunk, attention_mode)
            chunk_origin = poses[-1]
            poses.extend(compose(chunk_origin, pose) for pose in output.absolute_poses())
            chunk_diagnostics.append({'first_pair': chunk_idx * chunk_length, **output.diagnostics_dict()})
    return Trajectory(poses, timestamps), chunk_diagnostics


def inference_samples(run_config, source, split='test', data_root=None):
    """
    :param source: 'synthetic' for the run's held-out synthetic sequences, o/w a manifest path whose `split`
        sequences are used whole
    """
    if source == 'synthetic':
        samples = synth_generate(run_config.synthetic)
        return samples[-run_config.num_validation:] if run_config.num_validation else samples

    return full_samples_from_manifest(read_manifest(source, data_root), split, run_config.synthetic, run_config.seed)


def _file_stem(sequence_id):
    return ''.join(char if (char.isalnum() or char in '-_.') else '_' for char in sequence_id)


def run_infer(checkpoint_path, source, output_dir, attention_mode=None, split='test', data_root=None):
    """
    Runs a checkpoint over every sequence of `source` (see inference_samples()). Writes to output_dir, per sequence,
    the estimate as <id>.kitti.txt and <id>.tum.txt and the ground truth as <id>.gt.kitti.txt and <id>.gt.tum.txt,
    plus diagnostics.json holding the memory diagnostics of every sequence.

    :param attention_mode: overrides the checkpoint's ablation mode (see resolve_attention_mode())
    :return: dict mapping sequence id -> estimated Trajectory
    """
    run_config, model = load_model(checkpoint_path)
    attention_mode = resolve_attention_mode(model, attention_mode)
    output_dir = _prepare_output_dir(output_dir)
    samples = inference_samples(run_config, source, split, data_root)
    id_to_trajectory = {}
    sequence_diagnostics = {}
    for sample in samples:
        estimate, chunk_diagnostics = infer_trajectory(model, sample.features, attention_mode,
                                                       timestamps=sample.timestamps)
        reference = Trajectory(sample.gt_absolute, sample.timestamps)
        stem = _file_stem(sample.id)
        for trajectory_format in ['kitti', 'tum']:
            write_trajectory_file(output_dir / f"{stem}.{trajectory_format}.txt", estimate, trajectory_format)
            write_trajectory_file(output_dir / f"{stem}.gt.{trajectory_format}.txt", reference, trajectory_format)
        id_to_trajectory[sample.id] = estimate
        sequence_diagnostics[sample.id] = {'file_stem': stem, 'num_frames': len(estimate),
                                           'chunks': chunk_diagnostics}
    _write_json(output_dir / DIAGNOSTICS_FILE_NAME, {'checkpoint': str(checkpoint_path),
                                                     'attention_mode': attention_mode,
                                                     'sequences': sequence_diagnostics})
    logger.info(f"run_infer(): {len(samples)} sequences, attention_mode={attention_mode!r}, "
                f"output_dir={str(output_dir)!r}")
    return id_to_trajectory


#
# ---- run_eval() ----
#

def run_eval(est_path, ref_path, metrics, alignment='sim3', settings=None, json_path=None, curves_path=None):
    """
    Evaluates an estimated trajectory file against a reference file. File formats are guessed from their content.
    Writes the report as JSON to json_path (default: next to the estimate, as <est stem>.metrics.json) and the
    trajectory-curve CSV to curves_path if passed.

    :param metrics: a subset of utils.evaluation.METRIC_NAMES
    :return: a MetricReport
    """
    settings = settings or load_settings()
    estimate, reference = read_trajectory_file(est_path), read_trajectory_file(ref_path)
    report = evaluate(estimate, reference, metrics, alignment, settings.KITTI_SEGMENT_LENGTHS,
                      settings.KITTI_SEGMENT_STEP, settings.RPE_DELTA, settings.TUM_ASSOCIATION_WINDOW,
                      settings.MAX_UNMATCHED_FRACTION)
    json_path = Path(json_path) if json_path else Path(est_path).with_suffix('.metrics.json')
    json_path.parent.mkdir(parents=True, exist_ok=True)
    _write_json(json_path, {'estimate': str(est_path), 'reference': str(ref_path), **report.to_dict()})
    if curves_path:
        estimate, reference = paired_trajectories(estimate, reference, settings.TUM_ASSOCIATION_WINDOW,
                                                  settings.MAX_UNMATCHED_FRACTION)
        write_curves_csv(curves_path, estimate, reference, alignment)
    logger.info(f"run_eval(): wrote {str(json_path)!r}")
    return report


#
# ---- run_sweep() ----
#

def _axis_label(value):
    return '_'.join(f"{item:g}" for item in value) if isinstance(value, (list, tuple)) else str(value)


def axis_overrides(axis, value):
    """
    :return: the RunConfig overrides dict for one sweep axis value
    """
    if axis == 'sequence_length':
        return {'sequence_length': int(value)}
    elif axis == 'thresholds':
        theta_rot, theta_trans = value
        return {'model': {'theta_rot': float(theta_rot), 'theta_trans': float(theta_trans)}}
    elif axis == 'ablations':
        return {'ablation': value}
    else:
        raise ConfigError(f"invalid sweep axis: {axis!r}")


def run_sweep(run_config, axis, values=None, settings=None):
    """
    Trains and evaluates one run per axis value, all under run_config's seed. The ablations axis always includes
    'none', the tracking-only baseline. Each run writes to <output_dir>/sweep-<axis>/<value>/; the comparison is
    written there as sweep_report.json and sweep_report.txt (an aligned table with one row per axis value).

    :param axis: a key of settings.SWEEP_AXES
    :param values: the axis values. default: settings.SWEEP_AXES[axis]
    :return: list of report row dicts, one per axis value
    """
    settings = settings or load_settings()
    if axis not in settings.SWEEP_AXES:
        raise ConfigError(f"invalid sweep axis: {axis!r}. valid axes: {sorted(settings.SWEEP_AXES)}")

    values = list(values or settings.SWEEP_AXES[axis])
    if (axis == 'ablations') and ('none' not in values):
        values.insert(0, 'none')
    sweep_dir = _prepare_output_dir(Path(run_config.output_dir) / f"sweep-{axis}")
    rows = []
    for value in values:
        label = _axis_label(value)
        value_config = run_config.with_overrides({**axis_overrides(axis, value),
                                                  'output_dir': str(sweep_dir / label)})
        summary = run_train(value_config).summary
        rows.append({axis: label, **summary})
        logger.info(f"run_sweep(): {axis}={label}: {summary}")

    _write_json(sweep_dir / 'sweep_report.json', {'axis': axis, 'rows': rows})
    with open(sweep_dir / 'sweep_report.txt', 'w') as table_fp:
        table_fp.write('\n'.join(sweep_table_lines(axis, rows)) + '\n')
    return rows


def sweep_table_lines(axis, rows):
    columns = ['final_validation_loss', 'initial_validation_ate', 'final_validation_ate', 'validation_memory_slots']
    return aligned_table_lines([tuple([axis] + columns)] +
                               [tuple([row[axis]] + ['-' if row[column] is None else f"{row[column]:.6f}"
                                                     for column in columns]) for row in rows])
