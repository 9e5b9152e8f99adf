import numpy as np
import pytest

from ltr.errors import ConfigError
from ltr.metrics import metric_ndcg, rank_from_scores
from ltr.synthetic import SyntheticSpec, gen_synthetic, generate


def test_split_and_shapes():
    d = generate(SyntheticSpec(num_queries=50, min_items=3, max_items=7, dim=4, seed=1))
    assert len(d.train) == 45 and len(d.eval) == 5
    assert all(3 <= len(r.items) <= 7 for r in d.train + d.eval)
    x = np.array(d.train[0].items[0].features["dense"])
    assert x.shape == (4,) and np.all((x >= 0) & (x < 1))


def test_levels_two_gives_binary_labels():
    d = generate(SyntheticSpec(num_queries=30, levels=2))
    assert {it.label for r in d.train for it in r.items} == {0.0, 1.0}


def test_eta_zero_gives_unit_weights():
    d = generate(SyntheticSpec(num_queries=40, label_scheme="clicks", eta=0.0))
    assert {it.weight for r in d.train for it in r.items} == {1.0}


def test_click_weights_are_rank_powers():
    d = generate(SyntheticSpec(num_queries=40, label_scheme="clicks", eta=1.0))
    for r in d.train:
        for it in r.items:
            if it.label > 0:
                assert it.weight in set(range(1, 11))
            else:
                assert it.weight == 1.0
    # Eval lists keep the true grades.
    assert max(it.label for r in d.eval for it in r.items) > 1


def test_oracle_scorer_is_perfect():
    spec = SyntheticSpec(num_queries=60, seed=4)
    d = generate(spec)
    for r in d.train + d.eval:
        labels = np.array([it.label for it in r.items])
        u = np.array([np.dot(d.true_weights, it.features["dense"]) for it in r.items])
        assert metric_ndcg(labels, rank_from_scores(u), topn=5) == pytest.approx(1.0, abs=1e-12)


def test_generation_is_byte_identical(tmp_path):
    spec = SyntheticSpec(num_queries=30, vocab_size=5, label_scheme="clicks", seed=9)
    gen_synthetic(spec, tmp_path / "a")
    gen_synthetic(spec, tmp_path / "b")
    for name in ("train.jsonl", "eval.jsonl", "truth.tsv", "synth.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_spec_validation():
    for kwargs in ({"dim": 0}, {"levels": 1}, {"eta": -1.0}, {"min_items": 5, "max_items": 2},
                   {"weight_scheme": "x"}, {"num_queries": 10, "eval_queries": 10}):
        with pytest.raises(ConfigError):
            generate(SyntheticSpec(**kwargs))
