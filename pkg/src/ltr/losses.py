"""Ranking losses with per-item weights, padding masks, and exact gradients.

Every loss accepts ``(labels, scores, weights, mask)`` either for one list
(1-D arrays) or for a batch (2-D ``[B, L]`` arrays, returning per-list values
unreduced). ``make_loss_fn`` wraps a loss with the batch reduction used in
training: the sum over lists divided by the number of lists that carry any
signal for that loss.
"""

import enum
from dataclasses import dataclass

import numpy as np

from ltr.errors import ConfigError, DimensionError, DomainError


class LossKey(str, enum.Enum):
    SIGMOID_CROSS_ENTROPY = "sigmoid_cross_entropy"
    PAIRWISE_LOGISTIC = "pairwise_logistic"
    SOFTMAX_CROSS_ENTROPY = "softmax_cross_entropy"
    LIST_MLE = "list_mle"

    @classmethod
    def parse(cls, key):
        if isinstance(key, cls):
            return key
        try:
            return cls(str(key).lower())
        except ValueError:
            try:
                return cls[str(key).upper()]
            except KeyError:
                raise ConfigError(
                    f"unknown loss {key!r}; expected one of {[k.value for k in cls]}"
                ) from None


@dataclass
class LossOutput:
    value: object  # float, or [B] array for unreduced batch input
    grad_scores: np.ndarray
    active: object  # whether each list contributes to the batch mean


def _prepare(labels, scores, weights, mask):
    labels = np.asarray(labels, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    single = labels.ndim == 1
    labels, scores = np.atleast_2d(labels), np.atleast_2d(scores)
    if labels.shape != scores.shape:
        raise DimensionError(f"labels {labels.shape} and scores {scores.shape} differ")
    if mask is None:
        mask = labels >= 0
    mask = np.atleast_2d(np.asarray(mask, dtype=bool))
    if weights is None:
        weights = np.ones_like(labels)
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    if weights.shape == (labels.shape[0], 1) or weights.shape == (1, 1):
        weights = np.broadcast_to(weights, labels.shape)
    if mask.shape != labels.shape or weights.shape != labels.shape:
        raise DimensionError("labels, weights and mask must share one shape")
    # Padded slots are neutralized so -inf sentinels never reach arithmetic.
    y = np.where(mask, labels, 0.0)
    s = np.where(mask, scores, 0.0)
    w = np.where(mask, weights, 0.0)
    return y, s, w, mask, single


def _finish(values, grads, active, single):
    if single:
        return LossOutput(float(values[0]), grads[0], bool(active[0]))
    return LossOutput(values, grads, active)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def loss_sigmoid_ce(labels, scores, weights=None, mask=None):
    """Pointwise ``sum_j w_j * [-y_j log p_j - (1 - y_j) log(1 - p_j)]``, ``p = sigmoid(s)``."""
    y, s, w, mask, single = _prepare(labels, scores, weights, mask)
    if np.any(mask & (y != 0.0) & (y != 1.0)):
        raise DomainError("sigmoid cross-entropy needs binary labels in {0, 1}")
    per_item = np.logaddexp(0.0, s) - y * s
    values = np.sum(w * per_item, axis=1)
    grads = w * (_sigmoid(s) - y)
    return _finish(values, grads, mask.any(axis=1), single)


def loss_pairwise_logistic(labels, scores, weights=None, mask=None):
    """``sum_{j,k} 1[y_j > y_k] * w_j * log(1 + exp(s_k - s_j))``.

    Each pair carries the weight of its preferred (higher-labeled) item.
    """
    y, s, w, mask, single = _prepare(labels, scores, weights, mask)
    valid_pair = mask[:, :, None] & mask[:, None, :]
    prefer = (y[:, :, None] > y[:, None, :]) & valid_pair  # [B, j, k]
    pair_w = np.where(prefer, w[:, :, None], 0.0)
    diff = s[:, None, :] - s[:, :, None]  # s_k - s_j
    values = np.sum(pair_w * np.logaddexp(0.0, diff), axis=(1, 2))
    coeff = pair_w * _sigmoid(diff)
    grads = coeff.sum(axis=1) - coeff.sum(axis=2)
    return _finish(values, grads, prefer.any(axis=(1, 2)), single)


def _masked_log_softmax(s, mask):
    shifted = np.where(mask, s, -np.inf)
    top = np.max(shifted, axis=1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    z = np.where(mask, np.exp(shifted - top), 0.0)
    log_z = np.log(np.maximum(z.sum(axis=1, keepdims=True), np.finfo(float).tiny)) + top
    return np.where(mask, s - log_z, 0.0), z / np.maximum(z.sum(axis=1, keepdims=True), np.finfo(float).tiny)


def loss_softmax_ce(labels, scores, weights=None, mask=None):
    """Listwise ``-sum_j w_j * y_j * log softmax(s)_j`` over valid slots."""
    y, s, w, mask, single = _prepare(labels, scores, weights, mask)
    if np.any(mask & (y < 0)):
        raise DomainError("softmax cross-entropy needs non-negative labels")
    log_p, p = _masked_log_softmax(s, mask)
    wy = w * y
    values = -np.sum(wy * log_p, axis=1)
    grads = p * wy.sum(axis=1, keepdims=True) - wy
    return _finish(values, grads, (mask & (y > 0)).any(axis=1), single)


def loss_listmle(labels, scores, weights=None, mask=None, rng=None):
    """Negative Plackett-Luce log-likelihood of the label-sorted permutation.

    Items are sorted by label descending; ties are broken by ``rng`` (or by
    index when no rng is given). Each list is weighted by the mean weight of
    its valid items.
    """
    y, s, w, mask, single = _prepare(labels, scores, weights, mask)
    B, L = y.shape
    tie = rng.random((B, L)) if rng is not None else np.tile(np.arange(L, dtype=np.float64), (B, 1))
    primary = np.where(mask, -y, np.inf)
    order = np.lexsort((tie, primary), axis=-1)
    s_sorted = np.take_along_axis(s, order, axis=1)
    m_sorted = np.take_along_axis(mask, order, axis=1)
    x = np.where(m_sorted, s_sorted, -np.inf)
    # Suffix log-sum-exp: lse[t] = log sum_{r >= t} exp(x_r).
    with np.errstate(invalid="ignore"):
        lse = np.logaddexp.accumulate(x[:, ::-1], axis=1)[:, ::-1]
    lse = np.where(m_sorted, lse, 0.0)
    n_valid = mask.sum(axis=1)
    list_w = np.where(n_valid > 0, w.sum(axis=1) / np.maximum(n_valid, 1), 0.0)
    values = list_w * np.sum(np.where(m_sorted, lse - s_sorted, 0.0), axis=1)
    # d/dx_r = -1 + sum_{t <= r} exp(x_r - lse_t)
    upper = np.triu(np.ones((L, L), dtype=bool))  # t <= r
    both = upper[None] & m_sorted[:, :, None] & m_sorted[:, None, :]
    expo = np.where(both, s_sorted[:, None, :] - lse[:, :, None], -np.inf)
    g_sorted = np.where(m_sorted, np.exp(expo).sum(axis=1) - 1.0, 0.0) * list_w[:, None]
    grads = np.zeros_like(s)
    np.put_along_axis(grads, order, g_sorted, axis=1)
    return _finish(values, grads, n_valid >= 2, single)


_LOSSES = {
    LossKey.SIGMOID_CROSS_ENTROPY: loss_sigmoid_ce,
    LossKey.PAIRWISE_LOGISTIC: loss_pairwise_logistic,
    LossKey.SOFTMAX_CROSS_ENTROPY: loss_softmax_ce,
    LossKey.LIST_MLE: loss_listmle,
}


def make_loss_fn(key, rng=None):
    """Returns ``fn(labels, scores, weights=None, mask=None) -> LossOutput``.

    For a single list the result equals the direct call. For a ``[B, L]``
    batch, value and gradients are divided by the count of active lists.
    ``rng`` is used for ListMLE tie-breaking.
    """
    key = LossKey.parse(key)
    base = _LOSSES[key]

    def loss_fn(labels, scores, weights=None, mask=None):
        if key is LossKey.LIST_MLE:
            out = base(labels, scores, weights, mask, rng=rng)
        else:
            out = base(labels, scores, weights, mask)
        if np.ndim(out.value) == 0:
            return out
        n_active = int(np.sum(out.active))
        if n_active == 0:
            return LossOutput(0.0, np.zeros_like(out.grad_scores), out.active)
        return LossOutput(float(np.sum(out.value)) / n_active, out.grad_scores / n_active, out.active)

    loss_fn.key = key
    return loss_fn
