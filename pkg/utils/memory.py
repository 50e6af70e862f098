import logging

import numpy as np

from memvo_app.models.memory_buffer import MemorySlot
from utils.geometry import rotation_distance, translation_distance
from utils.tensor import constant, cosine_similarity, channel_cosine_similarity, softmax_vec, stack, weighted_sum, \
    channel_scale, scale
from utils.utilities import ContractError


logger = logging.getLogger(__name__)


#
# ---- memory selection ----
#

def memory_update(buffer, candidate_state, candidate_pose, step, theta_rot, theta_trans):
    """
    Decides whether the tracking hidden state at `step` joins the memory. The first candidate offered to an empty
    buffer (normally step 0) is always stored. Later candidates are stored iff their anchor pose moved at least
    theta_rot (rotation distance) OR theta_trans (translation distance) away from the most recently stored anchor.
    A full buffer evicts its oldest slot.

    :param buffer: a MemoryBuffer
    :param candidate_state: the tracking hidden state Tensor [C_h, H, W]
    :param candidate_pose: the integrated tracking Pose at this step
    :return: 2-tuple: (the resulting MemoryBuffer, whether the candidate was stored)
    :raises ContractError: if the buffer is non-empty and step does not follow its last stored step (e.g., step 0
        offered again)
    """
    last_slot = buffer.last_slot()
    if last_slot is None:
        is_store = True
    elif step <= last_slot.step_index:
        raise ContractError(f"memory_update(): steps must increase. step={step}, last stored={last_slot.step_index}")
    else:
        is_store = (rotation_distance(candidate_pose, last_slot.anchor) >= theta_rot) \
                   or (translation_distance(candidate_pose, last_slot.anchor) >= theta_trans)
    if not is_store:
        return buffer, False

    return buffer.with_slot(MemorySlot(candidate_state, candidate_pose, step)), True


#
# ---- attention reads ----
#

def _check_non_empty(buffer, fcn_name):
    if buffer.is_empty():
        raise ContractError(f"{fcn_name}(): empty memory buffer")


def uniform_weights(num):
    return constant(np.full(num, 1.0 / num))


def temporal_attention(guidance, buffer):
    """
    Reads the memory as a convex combination of its states: w_i = cos(guidance, m_i), alpha = softmax(w),
    M' = sum_i alpha_i m_i.

    :param guidance: the previous refining output [C_h, H, W]. zeros at the first step, which gives uniform alpha
    :return: 2-tuple: (M' Tensor [C_h, H, W], alpha Tensor [N])
    """
    _check_non_empty(buffer, 'temporal_attention')
    states = buffer.states()
    alpha = softmax_vec(stack([cosine_similarity(guidance, state) for state in states]))
    return weighted_sum(alpha, states), alpha


def channel_weights(guidance, feature_map):
    """
    :return: beta Tensor [C]: C * softmax_j(cos(guidance[j], feature_map[j])). uniform similarities give all ones, so
        channel_scale() by beta is then the identity
    """
    num_channels = feature_map.shape[0]
    return scale(softmax_vec(channel_cosine_similarity(guidance, feature_map)), num_channels)


def spatial_channel_attention(guidance, buffer, attention_mode='full'):
    """
    Temporal attention over memory slots combined with per-channel reweighting of each slot:
    M' = sum_i alpha_i concat_j(beta_ij m_ij). alpha is the temporal_attention() weighting (computed on the
    unweighted slots) and beta_i = channel_weights(guidance, m_i).

    :param attention_mode: 'full', 'temporal_only' (beta forced to ones, which is exactly temporal_attention()), or
        'no_attention' (alpha uniform and beta ones, i.e., the plain average of the slots)
    :return: 3-tuple: (M' Tensor [C_h, H, W], alpha Tensor [N], list of N beta Tensors [C_h])
    """
    _check_non_empty(buffer, 'spatial_channel_attention')
    states = buffer.states()
    num_channels = states[0].shape[0]
    if attention_mode in ['temporal_only', 'no_attention']:
        if attention_mode == 'temporal_only':
            memory_read, alpha = temporal_attention(guidance, buffer)
        else:
            alpha = uniform_weights(len(states))
            memory_read = weighted_sum(alpha, states)
        return memory_read, alpha, [constant(np.ones(num_channels)) for _ in states]
    elif attention_mode != 'full':
        raise ContractError(f"spatial_channel_attention(): invalid attention_mode: {attention_mode!r}")

    alpha = softmax_vec(stack([cosine_similarity(guidance, state) for state in states]))
    betas = [channel_weights(guidance, state) for state in states]
    reweighted = [channel_scale(state, beta) for state, beta in zip(states, betas)]
    return weighted_sum(alpha, reweighted), alpha, betas


def observation_attention(guidance, features, attention_mode='full'):
    """
    Distills the current observation with the same guidance: X' = concat_j(beta_j X_j) in 'full' mode, o/w X' = X.
    """
    if attention_mode != 'full':
        return features

    if guidance.shape != features.shape:
        raise ContractError(f"observation_attention(): guidance and features must have the same shape. "
                            f"guidance={guidance.shape}, features={features.shape}")

    return channel_scale(features, channel_weights(guidance, features))
