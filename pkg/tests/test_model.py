import numpy as np
import pytest

from conftest import SMALL_SPECS, random_raw_lists
from ltr.data import Item, RawList
from ltr.errors import ConfigError, DomainError
from ltr.model import (
    Mode, RankingConfig, RngStreams, build_model, build_vocabularies, evaluate, infer_feature_specs, predict,
    predict_items, train,
)
from ltr.scoring import Scorer, ScorerArchitecture


def small_model(raw, **overrides):
    kwargs = dict(list_size=5, hidden_dims=(8, 8), batch_size=4, feature_specs=SMALL_SPECS, seed=3)
    kwargs.update(overrides)
    config = RankingConfig(**kwargs)
    return build_model(config, vocabularies=build_vocabularies(SMALL_SPECS, raw))


def test_config_lists_every_error():
    config = RankingConfig(list_size=0, dropout_rate=2.0, loss="hinge", metrics=("ndcg@0",), learning_rate=-1)
    errors = config.validation_errors()
    assert len(errors) == 5
    with pytest.raises(ConfigError):
        config.validate()


def test_config_dict_round_trip_and_unknown_keys():
    config = RankingConfig(hidden_dims=(4,), metrics=("mrr",))
    assert RankingConfig.from_dict(config.to_dict()) == config
    with pytest.raises(ConfigError):
        RankingConfig.from_dict({"list_sise": 3})


def test_rng_streams_are_independent():
    a, b = RngStreams(7), RngStreams(7)
    a["dropout"].random(100)
    assert a["batches"].random() == b["batches"].random()
    assert RngStreams(7, worker=1)["batches"].random() != RngStreams(7)["batches"].random()


def test_build_model_rejects_incompatible_scorer(rng):
    raw = random_raw_lists(rng, 3)
    config = RankingConfig(list_size=5, feature_specs=SMALL_SPECS)
    vocabs = build_vocabularies(SMALL_SPECS, raw)
    with pytest.raises(ConfigError):
        build_model(config, scorer=Scorer(ScorerArchitecture((4,)), 2, 1), vocabularies=vocabs)


def test_training_reduces_loss(rng):
    raw = random_raw_lists(rng, 20)
    model = small_model(raw)
    data = model.prepare(raw)
    first = model.run(Mode.TRAIN, data.take(np.arange(4)))
    _, trace = train(model, data, 150, log_every=50)
    assert [s for s, _ in trace] == [51, 101, 151]
    assert trace[-1][1] < first
    assert model.global_step == 151


def test_train_is_deterministic(rng):
    raw = random_raw_lists(rng, 10)
    a, b = small_model(raw), small_model(raw)
    train(a, a.prepare(raw), 20)
    train(b, b.prepare(raw), 20)
    for name in a.params:
        assert np.array_equal(a.params[name], b.params[name])


def test_eval_report_and_empty_data(rng):
    raw = random_raw_lists(rng, 6)
    model = small_model(raw, metrics=("mrr", "ndcg@5"))
    report = evaluate(model, model.prepare(raw))
    assert set(report.rows) == {"mrr", "ndcg@5"}
    assert set(report.rows["mrr"]) == {"weighted", "unweighted", "lists", "skipped"}
    assert "weighted" in report.to_text()
    with pytest.raises(DomainError):
        train(model, model.prepare(raw).take([]), 1)


def test_predict_ignores_labels_and_matches_eval_scores(rng):
    raw = random_raw_lists(rng, 5, max_items=5)
    model = small_model(raw)
    train(model, model.prepare(raw), 10)
    relabeled = [RawList(r.query_id, r.context, [Item(it.features, 9.0) for it in r.items]) for r in raw]
    a = predict(model, raw)
    b = predict(model, relabeled)
    scores = model.score(model.prepare(raw))
    for i, (x, y) in enumerate(zip(a, b)):
        np.testing.assert_array_equal(x, y)
        np.testing.assert_array_equal(x, scores[i, :len(raw[i].items)])


def test_predict_mode_run(rng):
    raw = random_raw_lists(rng, 3)
    model = small_model(raw)
    data = model.prepare(raw)
    scores = model.run(Mode.PREDICT, data)
    assert scores.shape == (3, 5)
    assert np.all(np.isneginf(scores[~data.mask]))
    metrics = model.run(Mode.EVAL, data)
    assert set(metrics) == {"mrr", "arp", "ndcg@5"}


def test_singleton_items_match_list_scores(rng):
    raw = random_raw_lists(rng, 6)
    model = small_model(raw)
    train(model, model.prepare(raw), 5)
    items = [it for r in raw for it in r.items]
    single = predict_items(model, items, raw[0].context)
    listwise = np.concatenate(predict(model, [RawList("all", raw[0].context, items)]))
    assert np.max(np.abs(single - listwise)) == 0.0


def test_infer_feature_specs():
    raw = [RawList("q", {"u": "tok"}, [Item({"features": {1: 1.0, 4: 2.0}, "t": ["a", "b"], "d": [1, 2]}, 1.0)])]
    specs = {(s["scope"], s["name"]): s for s in infer_feature_specs(raw)}
    assert specs[("per_item", "features")]["width"] == 4
    assert specs[("per_item", "t")]["kind"] == "categorical"
    assert specs[("per_item", "d")]["width"] == 2
    assert specs[("context", "u")]["kind"] == "categorical"
    empty = infer_feature_specs([RawList("q", {}, [Item({"features": {}}, 0.0)])])
    assert empty[0]["width"] == 1
