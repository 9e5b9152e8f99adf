"""Desk-scale experiments on synthetic data.

Each runner generates data, trains one model per configuration and returns
holdout metrics, so the same code backs the acceptance tests and manual
exploration.
"""

import time
from dataclasses import dataclass, replace

import numpy as np
from threadpoolctl import threadpool_limits

from ltr.data import Item, RawList
from ltr.model import RankingConfig, build_model, build_vocabularies, evaluate, train
from ltr.parallel import shard_data, throughput_report, train_async
from ltr.synthetic import SyntheticSpec, feature_specs, generate


@dataclass
class RunResult:
    metrics: dict
    seconds: float
    steps: int


def _binary(raw_lists):
    return [
        RawList(r.query_id, r.context, [Item(it.features, float(it.label > 0), it.weight) for it in r.items])
        for r in raw_lists
    ]


def _unit_weights(raw_lists):
    return [RawList(r.query_id, r.context, [Item(it.features, it.label, 1.0) for it in r.items]) for r in raw_lists]


def train_and_eval(train_lists, eval_lists, config, num_steps=None):
    """Builds a model from ``config``, trains it and evaluates on ``eval_lists``."""
    start = time.perf_counter()
    model = build_model(config, vocabularies=build_vocabularies(config.feature_specs, train_lists))
    steps = num_steps or config.num_steps
    train(model, model.prepare(train_lists), steps)
    report = evaluate(model, model.prepare(eval_lists))
    return RunResult(report.rows, time.perf_counter() - start, steps)


def run_recovery(seed=0, num_steps=2000, **config_overrides):
    """Graded data, 1000 train / 100 eval queries, default network, softmax loss."""
    spec = SyntheticSpec(num_queries=1100, eval_queries=100, dim=10, seed=seed)
    data = generate(spec)
    config = RankingConfig(feature_specs=feature_specs(spec), metrics=("ndcg@5",), seed=seed, **config_overrides)
    return train_and_eval(data.train, data.eval, config, num_steps)


LOSS_CLASSES = {
    "pointwise": "sigmoid_cross_entropy",
    "pairwise": "pairwise_logistic",
    "listwise": "softmax_cross_entropy",
}


def run_loss_comparison(seeds=range(5), num_steps=1000, spec=None, **config_overrides):
    """Holdout NDCG@5 per loss class and seed. The pointwise loss trains on
    binary labels (grade > 0); evaluation always uses the graded labels."""
    out = {name: [] for name in LOSS_CLASSES}
    for seed in seeds:
        s = replace(spec or SyntheticSpec(num_queries=1100, eval_queries=100), seed=seed)
        data = generate(s)
        for name, loss in LOSS_CLASSES.items():
            train_lists = _binary(data.train) if name == "pointwise" else data.train
            config = RankingConfig(feature_specs=feature_specs(s), loss=loss, metrics=("ndcg@5",), seed=seed,
                                   **config_overrides)
            out[name].append(train_and_eval(train_lists, data.eval, config, num_steps).metrics["ndcg@5"]["weighted"])
    return out


def run_ipw(seeds=range(5), num_steps=1000, spec=None, **config_overrides):
    """Pairwise loss on simulated clicks, with and without inverse propensity
    weights. Returns holdout NDCG@5 against the true grades per seed."""
    out = {"ipw": [], "unweighted": []}
    for seed in seeds:
        s = replace(spec or SyntheticSpec(num_queries=1100, eval_queries=100, label_scheme="clicks", eta=1.0),
                    seed=seed)
        data = generate(s)
        config = RankingConfig(feature_specs=feature_specs(s), loss="pairwise_logistic", metrics=("ndcg@5",),
                               seed=seed, **config_overrides)
        for name, lists in (("ipw", data.train), ("unweighted", _unit_weights(data.train))):
            out[name].append(train_and_eval(lists, data.eval, config, num_steps).metrics["ndcg@5"]["unweighted"])
    return out


def run_sparse(seeds=range(3), num_steps=1000, spec=None, embedding_dim=20, **config_overrides):
    """Labels driven by a categorical token plus dense features; compares a
    model with the token embedding against a dense-only model."""
    out = {"with_embedding": [], "dense_only": []}
    for seed in seeds:
        s = replace(spec or SyntheticSpec(num_queries=1100, eval_queries=100, vocab_size=100,
                                          weight_scheme="noise", token_scale=1.0), seed=seed)
        data = generate(s)
        for name, use in (("with_embedding", True), ("dense_only", False)):
            config = RankingConfig(feature_specs=feature_specs(s, use_tokens=use, embedding_dim=embedding_dim),
                                   metrics=("ndcg@5",), seed=seed, **config_overrides)
            out[name].append(train_and_eval(data.train, data.eval, config, num_steps).metrics["ndcg@5"]["weighted"])
    return out


def _async_run(data, spec, workers, seed, num_steps, synthetic_load, metric, **config_overrides):
    config = RankingConfig(feature_specs=feature_specs(spec), metrics=(metric,), seed=seed,
                           worker_count=workers, **config_overrides)
    model = build_model(config)
    result = train_async(model, shard_data(model.prepare(data.train), workers), num_steps,
                         synthetic_load=synthetic_load)
    value = evaluate(model, model.prepare(data.eval)).rows[metric]["weighted"]
    return result, value


def run_scaling(worker_counts=(1, 2, 4), runs=5, num_steps=40, synthetic_load=32, seed=0, metric="mrr",
                **config_overrides):
    """Times asynchronous training per worker count on a compute-bound task
    (each step adds ``synthetic_load`` large matrix products that release
    the interpreter lock). BLAS is pinned to one thread so that any speed-up
    comes from the workers, not from a multi-threaded baseline.

    Returns ``(report, raw)`` where ``report`` is ``throughput_report`` output
    and ``raw`` maps worker count to ``(steps, seconds, metric)`` tuples.
    """
    spec = SyntheticSpec(num_queries=1100, eval_queries=100, seed=seed)
    data = generate(spec)
    raw = {}
    with threadpool_limits(limits=1, user_api="blas"):
        _async_run(data, spec, 1, seed, 5, synthetic_load, metric, **config_overrides)  # warm-up
        for workers in worker_counts:
            raw[workers] = []
            for r in range(runs):
                result, value = _async_run(data, spec, workers, seed + r, num_steps, synthetic_load, metric,
                                           **config_overrides)
                raw[workers].append((result.total_steps, result.wall_time, value))
    return throughput_report(raw), raw


def run_metric_stability(worker_counts=(1, 4), runs=5, num_steps=1000, seed=0, metric="mrr", **config_overrides):
    """Final weighted holdout metric per worker count and run, all trained
    for the same total number of optimizer steps."""
    spec = SyntheticSpec(num_queries=1100, eval_queries=100, seed=seed)
    data = generate(spec)
    return {
        workers: [_async_run(data, spec, workers, seed + r, num_steps, 0, metric, **config_overrides)[1]
                  for r in range(runs)]
        for workers in worker_counts
    }


def summarize(values):
    values = np.asarray(values, dtype=np.float64)
    return float(values.mean()), float(values.std(ddof=1)) if len(values) > 1 else 0.0
