import logging

import numpy as np

from utils.utilities import ShapeError, ContractError, basic_str


logger = logging.getLogger(__name__)


#
# ---- AdamState ----
#

class AdamState:
    """
    Adam moments and hyperparameters for a fixed, ordered list of parameters. Weight decay is decoupled: it is applied
    directly to the parameters and never enters the moment estimates.
    """


    def __init__(self, param_shapes, lr=1e-4, beta1=0.9, beta2=0.99, eps=1e-8, weight_decay=4e-4):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step = 0
        self.first_moments = [np.zeros(shape) for shape in param_shapes]
        self.second_moments = [np.zeros(shape) for shape in param_shapes]


    def __repr__(self):
        return str((self.lr, self.beta1, self.beta2, self.eps, self.weight_decay, self.step,
                    len(self.first_moments)))


    def __str__(self):
        return basic_str(self)


    @classmethod
    def for_parameters(cls, params, **kwargs):
        return cls([param.data.shape for param in params], **kwargs)


def adam_step(params, grads, state):
    """
    Applies one Adam update in place.

    :param params: list of parameter Tensors, in the same order that `state` was created with
    :param grads: list of np.ndarrays (or None, meaning a zero gradient), congruent with params
    :param state: an AdamState. its step counter is incremented
    :return: params
    """
    if (len(params) != len(grads)) or (len(params) != len(state.first_moments)):
        raise ContractError(f"adam_step(): {len(params)} params, {len(grads)} grads, "
                            f"{len(state.first_moments)} moment buffers")

    state.step += 1
    bias_correction1 = 1.0 - state.beta1 ** state.step
    bias_correction2 = 1.0 - state.beta2 ** state.step
    for param, grad, first_moment, second_moment in zip(params, grads, state.first_moments, state.second_moments):
        if first_moment.shape != param.data.shape:
            raise ShapeError(f"adam_step(): moment shape {first_moment.shape} != param shape {param.data.shape}")

        grad = np.zeros_like(param.data) if grad is None else np.asarray(grad, dtype=np.float64)
        if grad.shape != param.data.shape:
            raise ShapeError(f"adam_step(): grad shape {grad.shape} != param shape {param.data.shape}")

        first_moment *= state.beta1
        first_moment += (1.0 - state.beta1) * grad
        second_moment *= state.beta2
        second_moment += (1.0 - state.beta2) * grad * grad
        update = (first_moment / bias_correction1) / (np.sqrt(second_moment / bias_correction2) + state.eps)
        param.data = param.data - state.lr * update - state.lr * state.weight_decay * param.data
    return params
