"""Ranking metrics: reciprocal rank, average relevance position, DCG, NDCG.

Ranks are 1-based and padded slots carry rank 0. Scores are ranked in
descending order with ties going to the lower original index. A ``topn``
cutoff restricts every metric to items ranked at or above it.
"""

import enum
import re
from dataclasses import dataclass

import numpy as np

from ltr.errors import ConfigError, DimensionError, DomainError


class MetricName(str, enum.Enum):
    MRR = "mrr"
    ARP = "arp"
    DCG = "dcg"
    NDCG = "ndcg"


@dataclass(frozen=True)
class MetricKey:
    name: MetricName
    topn: int = None

    def __post_init__(self):
        if self.topn is not None and self.topn < 1:
            raise ConfigError(f"topn must be >= 1, got {self.topn}")

    def __str__(self):
        return self.name.value if self.topn is None else f"{self.name.value}@{self.topn}"

    @classmethod
    def parse(cls, text):
        if isinstance(text, MetricKey):
            return text
        m = re.fullmatch(r"\s*([a-zA-Z]+)\s*(?:@\s*(\d+))?\s*", str(text))
        if not m:
            raise ConfigError(f"cannot parse metric key {text!r}")
        try:
            name = MetricName(m.group(1).lower())
        except ValueError:
            raise ConfigError(
                f"unknown metric {m.group(1)!r}; expected one of {[k.value for k in MetricName]}"
            ) from None
        return cls(name, int(m.group(2)) if m.group(2) else None)


def rank_from_scores(scores, mask=None):
    """1-based ranks by descending score (stable on ties); 0 on padding."""
    scores = np.asarray(scores, dtype=np.float64)
    single = scores.ndim == 1
    scores = np.atleast_2d(scores)
    mask = np.ones(scores.shape, dtype=bool) if mask is None else np.atleast_2d(np.asarray(mask, dtype=bool))
    if mask.shape != scores.shape:
        raise DimensionError("scores and mask must share one shape")
    if not mask.any(axis=1).all():
        raise DomainError("cannot rank a list without valid items")
    key = np.where(mask, -scores, np.inf)
    order = np.argsort(key, axis=1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(1, scores.shape[1] + 1)[None, :].repeat(scores.shape[0], 0), axis=1)
    ranks = np.where(mask, ranks, 0)
    return ranks[0] if single else ranks


def _in_cutoff(ranks, topn):
    sel = ranks > 0
    if topn is not None:
        sel &= ranks <= topn
    return sel


def _rr(labels, ranks, topn):
    rel = _in_cutoff(ranks, topn) & (labels > 0)
    first = np.min(np.where(rel, ranks, np.iinfo(np.int64).max), axis=-1)
    return np.where(rel.any(axis=-1), 1.0 / np.maximum(first, 1), 0.0)


def _arp(labels, ranks, topn):
    sel = _in_cutoff(ranks, topn)
    y = np.where(sel, labels, 0.0)
    den = y.sum(axis=-1)
    num = (y * ranks).sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)


def _dcg(labels, ranks, topn):
    sel = _in_cutoff(ranks, topn)
    gains = np.where(sel, np.exp2(np.where(sel, labels, 0.0)) - 1.0, 0.0)
    return np.sum(gains / np.log2(1.0 + np.maximum(ranks, 1)), axis=-1)


def _ideal_ranks(labels, valid):
    key = np.where(valid, -labels, np.inf)
    order = np.argsort(key, axis=-1, kind="stable")
    ranks = np.empty_like(order)
    n = labels.shape[-1]
    np.put_along_axis(ranks, order, np.broadcast_to(np.arange(1, n + 1), labels.shape).copy(), axis=-1)
    return np.where(valid, ranks, 0)


def _ndcg(labels, ranks, topn):
    ideal = _dcg(labels, _ideal_ranks(labels, ranks > 0), topn)
    dcg = _dcg(labels, ranks, topn)
    return np.where(ideal > 0, dcg / np.where(ideal > 0, ideal, 1.0), 0.0)


_IMPL = {MetricName.MRR: _rr, MetricName.ARP: _arp, MetricName.DCG: _dcg, MetricName.NDCG: _ndcg}


def _check(labels, ranks):
    labels = np.asarray(labels, dtype=np.float64)
    ranks = np.asarray(ranks, dtype=np.int64)
    if labels.shape != ranks.shape:
        raise DimensionError(f"labels {labels.shape} and ranks {ranks.shape} differ")
    return labels, ranks


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def metric_rr(labels, ranks, topn=None):
    """Reciprocal rank of the first relevant (label > 0) item; 0 if none."""
    return _scalar(_rr(*_check(labels, ranks), topn))


def metric_arp(labels, ranks, topn=None):
    """``sum y_j * rank_j / sum y_j``; NaN when the label mass is zero."""
    return _scalar(_arp(*_check(labels, ranks), topn))


def metric_dcg(labels, ranks, topn=None):
    return _scalar(_dcg(*_check(labels, ranks), topn))


def metric_ndcg(labels, ranks, topn=None):
    return _scalar(_ndcg(*_check(labels, ranks), topn))


def aggregate(values, weights=None):
    """Weighted mean over lists with a defined (non-NaN) value."""
    values = np.asarray(values, dtype=np.float64).ravel()
    weights = np.ones_like(values) if weights is None else np.asarray(weights, dtype=np.float64).ravel()
    if weights.shape != values.shape:
        raise DimensionError("values and weights must have the same length")
    ok = ~np.isnan(values)
    total = weights[ok].sum()
    if not ok.any() or total <= 0:
        raise DomainError("no contributing lists to aggregate")
    return float(np.sum(weights[ok] * values[ok]) / total)


def list_weights(labels, weights, mask):
    """Per-list weight from item weights: the label-weighted mean of the
    weights of relevant items, or the plain mean over valid items when the
    list has no relevant item."""
    labels = np.atleast_2d(np.asarray(labels, dtype=np.float64))
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    mask = np.atleast_2d(np.asarray(mask, dtype=bool))
    rel = np.where(mask & (labels > 0), labels, 0.0)
    rel_mass = rel.sum(axis=1)
    valid_w = np.where(mask, weights, 0.0)
    by_rel = (rel * weights).sum(axis=1) / np.where(rel_mass > 0, rel_mass, 1.0)
    plain = valid_w.sum(axis=1) / np.maximum(mask.sum(axis=1), 1)
    return np.where(rel_mass > 0, by_rel, plain)


@dataclass
class MetricValues:
    key: MetricKey
    values: np.ndarray  # per list; NaN where undefined
    weights: np.ndarray  # per-list weights

    @property
    def skipped(self):
        return int(np.isnan(self.values).sum())

    @property
    def count(self):
        return int((~np.isnan(self.values)).sum())

    @property
    def unweighted(self):
        return aggregate(self.values)

    @property
    def weighted(self):
        return aggregate(self.values, self.weights)


def make_metric_fn(key, topn=None):
    """Returns ``fn(labels, scores, weights=None, mask=None) -> MetricValues``.

    ``key`` is a ``MetricKey``, a ``MetricName`` or a string like ``"ndcg@5"``.
    """
    key = MetricKey.parse(key) if not isinstance(key, MetricName) else MetricKey(key, topn)
    if topn is not None and key.topn is None:
        key = MetricKey(key.name, topn)
    impl = _IMPL[key.name]

    def metric_fn(labels, scores, weights=None, mask=None):
        labels = np.atleast_2d(np.asarray(labels, dtype=np.float64))
        if mask is None:
            mask = labels >= 0
        mask = np.atleast_2d(np.asarray(mask, dtype=bool))
        if weights is None:
            weights = np.ones_like(labels)
        ranks = rank_from_scores(np.atleast_2d(scores), mask)
        values = impl(np.where(mask, labels, 0.0), ranks, key.topn)
        return MetricValues(key, values, list_weights(labels, weights, mask))

    metric_fn.key = key
    return metric_fn
