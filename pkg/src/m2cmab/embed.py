"""CLS-attentive pooling and the (action || context) feature used by the adapters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ActionSpec, TaskContext


class MissingEmbedding(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AttentionBundle:
    hidden_states: np.ndarray  # L x d_hid
    cls_attention: np.ndarray  # H x L, row h is the CLS row of head h

    def __post_init__(self):
        hs = np.asarray(self.hidden_states, dtype=float)
        att = np.atleast_2d(np.asarray(self.cls_attention, dtype=float))
        if hs.ndim != 2 or hs.shape[0] < 1:
            raise ValueError("hidden_states must be a nonempty L x d_hid matrix")
        if att.ndim != 2 or att.shape[0] < 1:
            raise ValueError("cls_attention must be H x L with H >= 1")
        if att.shape[1] != hs.shape[0]:
            raise ValueError(
                f"dimension-mismatch: attention rows have length {att.shape[1]}, L = {hs.shape[0]}")
        if np.any(att < 0):
            raise ValueError("attention weights must be nonnegative")
        if not (np.all(np.isfinite(hs)) and np.all(np.isfinite(att))):
            raise ValueError("bundle entries must be finite")
        object.__setattr__(self, "hidden_states", hs)
        object.__setattr__(self, "cls_attention", att)


def cls_attentive_pool(bundle: AttentionBundle, normalize_attention: bool = False) -> np.ndarray:
    """Average over heads of the CLS-weighted sum of hidden states, scaled by 1/L.

    ``z = (1/H) sum_h (1/L) sum_l alpha[h, l] * h_l``. With
    ``normalize_attention`` each alpha row is rescaled to sum to one first
    (all-zero rows stay zero).
    """
    alpha = bundle.cls_attention
    if normalize_attention:
        sums = alpha.sum(axis=1, keepdims=True)
        alpha = np.divide(alpha, sums, out=np.zeros_like(alpha), where=sums > 0)
    n_heads, length = alpha.shape
    return alpha.mean(axis=0) @ bundle.hidden_states / length


def bundle_from_context(context: TaskContext) -> AttentionBundle:
    """Stack modality matrices (sorted by tag) into one token sequence.

    Without supplied CLS rows every token gets weight 1, which reduces the
    pooling to the token mean.
    """
    if context.modality_features is None:
        raise MissingEmbedding("context carries no modality matrices")
    hidden = np.vstack([context.modality_features[k] for k in sorted(context.modality_features)])
    attention = context.attention if context.attention is not None else np.ones((1, hidden.shape[0]))
    return AttentionBundle(hidden, attention)


def context_embedding(context: TaskContext, normalize_attention: bool = False) -> np.ndarray:
    if context.pooled_embedding is not None:
        return context.pooled_embedding
    if context.modality_features is None:
        raise MissingEmbedding("missing-embedding: neither pooled embedding nor matrices present")
    return cls_attentive_pool(bundle_from_context(context), normalize_attention)


def joint_feature(context: TaskContext, action: ActionSpec, normalize_attention: bool = False) -> np.ndarray:
    """``(z_a || z_x)``: action embedding first, then the context embedding."""
    return np.concatenate([action.action_embedding, context_embedding(context, normalize_attention)])


def joint_features_all(z_x: np.ndarray, action_matrix: np.ndarray) -> np.ndarray:
    """Joint features of every action for one context, shape (A, d_act + d_ctx)."""
    n = action_matrix.shape[0]
    return np.hstack([action_matrix, np.broadcast_to(z_x, (n, z_x.shape[0]))])
