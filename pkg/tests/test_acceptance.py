"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line
(also repeated in the terminal summary under "acceptance criteria")."""

import json
import os
import time

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE_LINES
from gradcheck import loss_instance_error, pipeline_instance_error
from ltr.checkpoint import load_checkpoint, save_checkpoint
from ltr.data import RawList
from ltr.experiments import run_ipw, run_loss_comparison, run_metric_stability, run_recovery, run_scaling, run_sparse
from ltr.losses import LossKey, loss_pairwise_logistic, loss_sigmoid_ce, loss_softmax_ce
from ltr.metrics import metric_dcg, metric_ndcg
from ltr.model import RankingConfig, build_model, build_vocabularies, predict, predict_items, train
from ltr.parallel import shard_data, train_async
from ltr.synthetic import SyntheticSpec, feature_specs, generate
from test_metrics import check_against_oracle


def record(n, passed, detail):
    status = passed if isinstance(passed, str) else ("PASS" if passed else "FAIL")
    line = f"criterion {n:>2}: {status}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)


def available_cores():
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _synthetic_model(seed=0, n_queries=120, **overrides):
    spec = SyntheticSpec(num_queries=n_queries, vocab_size=30, seed=seed)
    data = generate(spec)
    kwargs = dict(feature_specs=feature_specs(spec, embedding_dim=8), hidden_dims=(32, 32), batch_size=16,
                  seed=seed)
    kwargs.update(overrides)
    config = RankingConfig(**kwargs)
    model = build_model(config, vocabularies=build_vocabularies(config.feature_specs, data.train))
    return model, data


def test_criterion_01_gradients():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    loss_err = {k.value: max(loss_instance_error(k, rng) for _ in range(100)) for k in LossKey}
    losses = [k.value for k in LossKey]
    pipe_err = {}
    for gs in (1, 2):
        pipe_err[gs] = max(pipeline_instance_error(rng, gs, losses[i % 4]) for i in range(100))
    elapsed = time.perf_counter() - start
    ok = max(loss_err.values()) <= 1e-5 and max(pipe_err.values()) <= 1e-4 and elapsed < 30
    record(1, ok, f"max rel err losses {max(loss_err.values()):.2e} (<=1e-5), pipeline gs=1 {pipe_err[1]:.2e} "
                  f"gs=2 {pipe_err[2]:.2e} (<=1e-4), 400+200 instances, {elapsed:.1f}s (<30s)")
    assert ok


def test_criterion_02_metric_oracle():
    start = time.perf_counter()
    worst = check_against_oracle(np.random.default_rng(77), 1000)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 10
    record(2, ok, f"1000 draws, n<=6, max abs err {worst:.1e} (<=1e-12), {elapsed:.1f}s (<10s)")
    assert ok


def test_criterion_03_golden_values():
    exact_reverse = float(oracles.dcg_exact([0, 2, 3]) / oracles.dcg_exact([3, 2, 0]))
    checks = [
        ("sigmoid_ce([1],[0])", loss_sigmoid_ce([1.0], [0.0]).value, 0.693147),
        ("pairwise([1,0],[0,0])", loss_pairwise_logistic([1.0, 0.0], [0.0, 0.0]).value, 0.693147),
        ("softmax_ce([1,0,0],[0,0,0])", loss_softmax_ce([1.0, 0.0, 0.0], [0.0, 0.0, 0.0]).value, 1.098612),
        ("DCG([3,2,0] ideal)", metric_dcg([3.0, 2.0, 0.0], [1, 2, 3]), 8.892789),
        # The listed 0.606424 is mis-rounded (exact 0.6064227); the reference
        # here is the high-precision oracle value.
        ("NDCG(reverse)", metric_ndcg([3.0, 2.0, 0.0], [3, 2, 1]), exact_reverse),
    ]
    errs = {name: abs(got - want) for name, got, want in checks}
    ok = max(errs.values()) <= 1e-6
    ndcg = checks[-1][1]
    record(3, ok, f"max abs err {max(errs.values()):.1e} (<=1e-6); NDCG(reverse)={ndcg:.7f} vs exact "
                  f"{exact_reverse:.7f} (listed 0.606424 differs by {abs(ndcg - 0.606424):.1e})")
    assert ok


def test_criterion_04_synthetic_recovery():
    result = run_recovery(seed=0, num_steps=2000)
    ndcg = result.metrics["ndcg@5"]["weighted"]
    ok = ndcg >= 0.90 and result.seconds < 60
    record(4, ok, f"holdout NDCG@5 {ndcg:.4f} (>=0.90) after 2000 steps, {result.seconds:.1f}s (<60s)")
    assert ok


def test_criterion_05_loss_class_ordering():
    start = time.perf_counter()
    res = run_loss_comparison(seeds=range(5), num_steps=1000)
    elapsed = time.perf_counter() - start
    m = {k: float(np.mean(v)) for k, v in res.items()}
    gap_lp = m["listwise"] - m["pairwise"]
    gap_pp = m["pairwise"] - m["pointwise"]
    ok = gap_lp >= -0.002 and gap_pp >= -0.002 and elapsed < 300
    record(5, ok, f"mean NDCG@5 softmax {m['listwise']:.4f} / pairwise {m['pairwise']:.4f} / pointwise "
                  f"{m['pointwise']:.4f}, gaps {gap_lp:+.4f} {gap_pp:+.4f} (>=-0.002), {elapsed:.0f}s (<300s)")
    assert ok


def test_criterion_06_ipw_effect():
    start = time.perf_counter()
    res = run_ipw(seeds=range(5), num_steps=1000)
    elapsed = time.perf_counter() - start
    ipw, plain = float(np.mean(res["ipw"])), float(np.mean(res["unweighted"]))
    ok = ipw - plain >= 0.005 and elapsed < 300
    record(6, ok, f"mean NDCG@5 IPW {ipw:.4f} vs unweighted {plain:.4f}, margin {ipw - plain:+.4f} (>=0.005), "
                  f"{elapsed:.0f}s (<300s)")
    assert ok


def test_criterion_07_sparse_features():
    start = time.perf_counter()
    res = run_sparse(seeds=range(3), num_steps=1000, embedding_dim=20)
    elapsed = time.perf_counter() - start
    gaps = np.array(res["with_embedding"]) - np.array(res["dense_only"])
    ok = gaps.mean() >= 0.05 and elapsed < 180
    record(7, ok, f"mean NDCG@5 with embedding {np.mean(res['with_embedding']):.4f} vs dense-only "
                  f"{np.mean(res['dense_only']):.4f}, gap {gaps.mean():+.4f} (min seed {gaps.min():+.4f}, >=0.05), "
                  f"{elapsed:.0f}s (<180s)")
    assert ok


def test_criterion_08_async_scaling_and_stability():
    start = time.perf_counter()
    stability = run_metric_stability(worker_counts=(1, 4), runs=5, num_steps=1000)
    base = float(np.mean(stability[1]))
    four = float(np.mean(stability[4]))
    rel = abs(four - base) / base
    print("per-run weighted MRR:", {w: [round(v, 4) for v in vals] for w, vals in stability.items()})
    report, _ = run_scaling(worker_counts=(1, 2, 4), runs=5)
    elapsed = time.perf_counter() - start
    print(json.dumps(report, indent=2))
    speed = {r["workers"]: (r["normalized_mean"], r["normalized_ci95"]) for r in report}
    stable_ok = rel <= 0.005
    detail = (f"weighted MRR 4w {four:.4f} vs 1w {base:.4f} (rel diff {rel:.2%}, <=0.5%); normalized speed "
              f"2w {speed[2][0]:.2f}±{speed[2][1]:.2f}, 4w {speed[4][0]:.2f}±{speed[4][1]:.2f} (95% CI, 5 runs); "
              f"{elapsed:.0f}s (<300s)")
    cores = available_cores()
    if cores < 4:
        record(8, "INCOMPLETE", f"{detail}; metric stability {'PASS' if stable_ok else 'FAIL'}; scaling "
                                f"thresholds NOT EVALUATED: {cores} core(s) available, criterion needs >= 4")
        assert stable_ok and elapsed < 300
        pytest.skip(f"speed-up thresholds need a >= 4-core machine; {cores} available")
    ok = stable_ok and speed[2][0] >= 1.5 and speed[4][0] >= 2.5 and elapsed < 300
    record(8, ok, detail + " (2w >= 1.5, 4w >= 2.5)")
    assert ok


def test_criterion_09_degenerate_async(tmp_path):
    a, data = _synthetic_model(loss="list_mle", group_size=2, shuffle_groups=True)
    b, _ = _synthetic_model(loss="list_mle", group_size=2, shuffle_groups=True)
    train(a, a.prepare(data.train), 60)
    train_async(b, shard_data(b.prepare(data.train), 1), 60)
    ok = save_checkpoint(a, tmp_path / "seq.ckpt").read_bytes() == save_checkpoint(b, tmp_path / "async.ckpt").read_bytes()
    record(9, ok, "1-worker async checkpoint byte-identical to sequential trainer after 60 steps")
    assert ok


def test_criterion_10_checkpoint_round_trip(tmp_path):
    model, data = _synthetic_model(seed=1, group_size=2)
    train_data = model.prepare(data.train)
    train(model, train_data, 25)
    path = save_checkpoint(model, tmp_path / "m.ckpt")
    rng = np.random.default_rng(5)
    pool = data.train + data.eval
    lists = [pool[i] for i in rng.choice(len(pool), size=100, replace=False)]
    before = predict(model, lists)
    loaded = load_checkpoint(path)
    after = predict(loaded, lists)
    predict_ok = all(np.array_equal(x, y) for x, y in zip(before, after))
    train(model, train_data, 10)
    train(loaded, train_data, 10)
    resume_ok = all(np.array_equal(model.params[k], loaded.params[k]) for k in model.params)
    resume_ok &= save_checkpoint(model, tmp_path / "a").read_bytes() == save_checkpoint(loaded, tmp_path / "b").read_bytes()
    ok = predict_ok and resume_ok
    record(10, ok, f"predict bit-identical on 100 lists: {predict_ok}; 10-step resume bit-identical: {resume_ok}")
    assert ok


def test_criterion_11_serving_consistency():
    model, data = _synthetic_model(seed=2, group_size=1)
    train(model, model.prepare(data.train), 30)
    lists = data.eval[:10]
    listwise = model.score(model.prepare(lists))
    items, expected = [], []
    for b, r in enumerate(lists):
        for i, it in enumerate(r.items):
            items.append(it)
            expected.append(listwise[b, i])
    items, expected = items[:100], np.array(expected[:100])
    single = predict_items(model, items, lists[0].context)
    diff = float(np.max(np.abs(single - expected)))
    ok = len(items) == 100 and diff == 0.0
    record(11, ok, f"max abs diff singleton vs list-path scores over {len(items)} items: {diff} (==0)")
    assert ok
