"""Synthetic ranking data with known ground truth.

Items get dense features ``x ~ U(0, 1)^d`` and a true utility ``u = w . x``
(plus an optional per-token effect for a categorical feature). Labels are
either graded (utility quantiles, dataset-wide) or simulated clicks.

Click model: a logging ranker orders each list by ``z(u) + noise`` where the
noise is ``logging_noise * z(v . x)`` for a random direction ``v``, i.e. the
logged ranking leans on features unrelated to relevance. An item at rank
``r`` with grade ``g`` is clicked with probability
``g / (levels - 1) * r ** -eta``; clicked items carry the inverse propensity
``r ** eta`` as their weight. Evaluation lists always carry the true grades.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ltr.data import Item, RawList
from ltr.errors import ConfigError

WEIGHT_SCHEMES = ("gaussian", "uniform", "ones", "noise")
DENSE_NAME = "dense"
TOKEN_NAME = "token"


@dataclass
class SyntheticSpec:
    num_queries: int = 1100
    min_items: int = 10
    max_items: int = 10
    dim: int = 10
    weight_scheme: str = "gaussian"
    label_scheme: str = "graded"  # or "clicks"
    levels: int = 5
    eta: float = 1.0
    logging_noise: float = 1.0
    vocab_size: int = 0  # > 0 adds a categorical token feature
    token_scale: float = 1.0
    eval_queries: int = None  # default: 10% of queries
    seed: int = 0

    def validate(self):
        errors = []
        if self.dim < 1:
            errors.append("dim must be >= 1")
        if self.levels < 2:
            errors.append("levels must be >= 2")
        if self.eta < 0:
            errors.append("eta must be >= 0")
        if not 1 <= self.min_items <= self.max_items:
            errors.append("need 1 <= min_items <= max_items")
        if self.num_queries < 2:
            errors.append("num_queries must be >= 2")
        if self.weight_scheme not in WEIGHT_SCHEMES:
            errors.append(f"weight_scheme must be one of {WEIGHT_SCHEMES}")
        if self.label_scheme not in ("graded", "clicks"):
            errors.append("label_scheme must be 'graded' or 'clicks'")
        if self.vocab_size < 0:
            errors.append("vocab_size must be >= 0")
        n_eval = self.num_eval
        if not 1 <= n_eval < self.num_queries:
            errors.append("eval split must leave at least one query on each side")
        if errors:
            raise ConfigError("; ".join(errors))
        return self

    @property
    def num_eval(self):
        if self.eval_queries is not None:
            return int(self.eval_queries)
        return max(1, int(round(0.1 * self.num_queries)))


@dataclass
class SyntheticData:
    train: list
    eval: list
    true_weights: np.ndarray
    token_effects: np.ndarray
    utilities: dict  # qid -> utilities in item order
    grades: dict  # qid -> true grades in item order


def _true_weights(spec, rng):
    if spec.weight_scheme == "gaussian":
        return rng.normal(size=spec.dim)
    if spec.weight_scheme == "uniform":
        return rng.uniform(0.0, 1.0, size=spec.dim)
    if spec.weight_scheme == "ones":
        return np.ones(spec.dim)
    return np.zeros(spec.dim)


def _zscore(x):
    sd = x.std()
    return (x - x.mean()) / (sd if sd > 0 else 1.0)


def generate(spec):
    """Builds the dataset in memory; same spec and seed give the same data."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    w = _true_weights(spec, rng)
    effects = rng.normal(scale=spec.token_scale, size=spec.vocab_size) if spec.vocab_size else np.zeros(0)
    sizes = rng.integers(spec.min_items, spec.max_items + 1, size=spec.num_queries)
    xs = [rng.random((n, spec.dim)) for n in sizes]
    toks = [rng.integers(0, spec.vocab_size, size=n) if spec.vocab_size else None for n in sizes]
    utils = []
    for x, t in zip(xs, toks):
        u = x @ w
        if t is not None:
            u = u + effects[t]
        utils.append(u)
    all_u = np.concatenate(utils)
    thresholds = np.quantile(all_u, np.arange(1, spec.levels) / spec.levels)
    grades = [np.searchsorted(thresholds, u, side="right").astype(float) for u in utils]

    n_train = spec.num_queries - spec.num_eval
    labels = [g.copy() for g in grades]
    weights = [np.ones_like(g) for g in grades]
    if spec.label_scheme == "clicks":
        v = rng.normal(size=spec.dim)
        all_x = np.concatenate(xs)
        noise = spec.logging_noise * _zscore(all_x @ v)
        log_score = _zscore(all_u) + noise
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        for q in range(n_train):
            s = log_score[offsets[q]:offsets[q + 1]]
            ranks = np.empty(len(s), dtype=np.int64)
            ranks[np.argsort(-s, kind="stable")] = np.arange(1, len(s) + 1)
            p = grades[q] / (spec.levels - 1) * ranks.astype(float) ** (-spec.eta)
            clicks = (rng.random(len(s)) < p).astype(float)
            labels[q] = clicks
            weights[q] = np.where(clicks > 0, ranks.astype(float) ** spec.eta, 1.0)

    lists = []
    for q in range(spec.num_queries):
        items = []
        for i in range(sizes[q]):
            feats = {DENSE_NAME: [float(v) for v in xs[q][i]]}
            if toks[q] is not None:
                feats[TOKEN_NAME] = f"t{int(toks[q][i])}"
            items.append(Item(feats, float(labels[q][i]), float(weights[q][i])))
        lists.append(RawList(f"q{q}", {}, items))
    return SyntheticData(
        lists[:n_train], lists[n_train:], w, effects,
        {f"q{q}": utils[q] for q in range(spec.num_queries)},
        {f"q{q}": grades[q] for q in range(spec.num_queries)},
    )


def feature_specs(spec, use_tokens=True, embedding_dim=20):
    """Feature declarations matching the generated data."""
    specs = [{"name": DENSE_NAME, "kind": "dense", "scope": "per_item", "width": spec.dim}]
    if spec.vocab_size and use_tokens:
        specs.append({"name": TOKEN_NAME, "kind": "categorical", "scope": "per_item",
                      "vocabulary_id": TOKEN_NAME, "embedding_dim": embedding_dim})
    return specs


def _jsonl_line(raw):
    return json.dumps({
        "qid": raw.query_id,
        "context": raw.context,
        "items": [{"label": it.label, "weight": it.weight, "features": it.features} for it in raw.items],
    }, sort_keys=True)


def write_jsonl(path, raw_lists):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for raw in raw_lists:
            fh.write(_jsonl_line(raw) + "\n")


def gen_synthetic(spec, out_dir):
    """Writes ``train.jsonl``, ``eval.jsonl``, ``truth.tsv`` and ``synth.json``
    under ``out_dir`` and returns the in-memory data."""
    data = generate(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "train.jsonl", data.train)
    write_jsonl(out / "eval.jsonl", data.eval)
    with open(out / "truth.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("qid\titem_index\tutility\tgrade\n")
        for raw in data.train + data.eval:
            for i, (u, g) in enumerate(zip(data.utilities[raw.query_id], data.grades[raw.query_id])):
                fh.write(f"{raw.query_id}\t{i}\t{float(u)!r}\t{int(g)}\n")
    manifest = {"spec": asdict(spec), "true_weights": [float(v) for v in data.true_weights]}
    (out / "synth.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return data
