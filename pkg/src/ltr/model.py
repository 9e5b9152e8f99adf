"""Ranking head and model builder: wires feature transform, scorer, loss and
metrics together and runs them per mode (train / eval / predict)."""

import enum
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ltr.core import AdagradState, adagrad_update
from ltr.data import BatchCursor, Item, RawList, make_example_lists, pad_to_list_size
from ltr.errors import ConfigError, DomainError, NumericError, TrainingError
from ltr.features import CATEGORICAL, DENSE, FeatureSpec, FeatureTransform, build_vocab
from ltr.losses import LossKey, make_loss_fn
from ltr.metrics import MetricKey, make_metric_fn
from ltr.scoring import Scorer, ScorerArchitecture

log = logging.getLogger(__name__)

EMBEDDING_PREFIX = "embedding/"
EVAL_CHUNK = 256


class Mode(str, enum.Enum):
    TRAIN = "train"
    EVAL = "eval"
    PREDICT = "predict"


@dataclass
class RankingConfig:
    """Hyperparameters for one model. Batch size and step count defaults
    are arbitrary; the rest follow a 3x128 ReLU net with dropout 0.5 and
    Adagrad at learning rate 0.1."""

    list_size: int = 10
    group_size: int = 1
    hidden_dims: tuple = (128, 128, 128)
    dropout_rate: float = 0.5
    learning_rate: float = 0.1
    initial_accumulator: float = 0.1
    epsilon: float = 1e-8
    batch_size: int = 32
    num_steps: int = 1000
    loss: str = LossKey.SOFTMAX_CROSS_ENTROPY.value
    metrics: tuple = ("mrr", "arp", "ndcg@5")
    seed: int = 0
    worker_count: int = 1
    feature_specs: tuple = ()  # dicts, see FeatureSpec.from_dict
    truncate_policy: str = "sample"
    shuffle_groups: bool = False
    log_every: int = 100

    def __post_init__(self):
        self.hidden_dims = tuple(self.hidden_dims)
        self.metrics = tuple(self.metrics)
        self.feature_specs = tuple(dict(s) for s in self.feature_specs)

    def validation_errors(self):
        errors = []
        for name in ("list_size", "group_size", "batch_size", "num_steps", "worker_count", "log_every"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                errors.append(f"{name} must be an integer >= 1, got {value!r}")
        if not self.hidden_dims or any(int(h) < 1 for h in self.hidden_dims):
            errors.append(f"hidden_dims must be positive sizes, got {list(self.hidden_dims)}")
        if not 0.0 <= self.dropout_rate < 1.0:
            errors.append(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if not self.learning_rate > 0:
            errors.append(f"learning_rate must be > 0, got {self.learning_rate}")
        if isinstance(self.group_size, int) and isinstance(self.list_size, int) and 1 <= self.list_size < self.group_size:
            errors.append(f"group_size {self.group_size} exceeds list_size {self.list_size}")
        try:
            LossKey.parse(self.loss)
        except ConfigError as exc:
            errors.append(str(exc))
        for m in self.metrics:
            try:
                MetricKey.parse(m)
            except ConfigError as exc:
                errors.append(str(exc))
        if self.truncate_policy not in ("sample", "first"):
            errors.append(f"truncate_policy must be 'sample' or 'first', got {self.truncate_policy!r}")
        for s in self.feature_specs:
            try:
                FeatureSpec.from_dict(s)
            except (ConfigError, TypeError) as exc:
                errors.append(f"feature spec {s}: {exc}")
        return errors

    def validate(self):
        errors = self.validation_errors()
        if errors:
            raise ConfigError("; ".join(errors))
        return self

    def to_dict(self):
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        d["metrics"] = list(self.metrics)
        d["feature_specs"] = [dict(s) for s in self.feature_specs]
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**d)

    def architecture(self):
        return ScorerArchitecture(self.hidden_dims, self.dropout_rate, self.group_size, self.shuffle_groups)


class RngStreams:
    """Independent named generators derived from one seed.

    Each consumer draws from its own stream, so turning one consumer on or
    off never shifts another. ``worker`` selects a disjoint family of streams
    for asynchronous workers; worker 0 is the sequential trainer's family.
    """

    NAMES = ("init", "dropout", "batches", "listmle", "groups")
    SAMPLING = 100

    def __init__(self, seed, worker=0):
        self.seed = int(seed)
        self.worker = int(worker)
        self.gens = {
            name: np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(self.worker, i)))
            for i, name in enumerate(self.NAMES)
        }

    def __getitem__(self, name):
        return self.gens[name]

    def sampling(self):
        """A fresh generator for down-sampling oversized lists; data
        preparation is therefore a pure function of seed and input."""
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(self.SAMPLING,)))

    def state(self):
        return {name: g.bit_generator.state for name, g in self.gens.items()}

    def set_state(self, state):
        for name, s in state.items():
            self.gens[name].bit_generator.state = s


class RankingHead:
    """Loss, metrics, and the Adagrad step behind one (labels, scores, weights, mask) interface."""

    def __init__(self, loss_key, metric_keys, optimizer, listmle_rng=None):
        self.loss_key = LossKey.parse(loss_key)
        self.loss_fn = make_loss_fn(self.loss_key, listmle_rng)
        self.metric_fns = {str(MetricKey.parse(k)): make_metric_fn(k) for k in metric_keys}
        self.optimizer = optimizer

    def loss(self, labels, scores, weights, mask):
        return self.loss_fn(labels, scores, weights, mask)

    def metrics(self, labels, scores, weights, mask):
        return {name: fn(labels, scores, weights, mask) for name, fn in self.metric_fns.items()}

    def apply(self, params, grads):
        adagrad_update(params, grads, self.optimizer)


def infer_feature_specs(raw_lists, embedding_dim=20):
    """Guesses specs from data: numeric values become dense features and
    strings / string lists become categorical features with a vocabulary of
    the same name."""
    found = {}
    for raw in raw_lists:
        for scope, maps in (("context", [raw.context]), ("per_item", [it.features for it in raw.items])):
            for feats in maps:
                for name, value in feats.items():
                    key = (scope, name)
                    if key in found:
                        continue
                    if isinstance(value, dict):
                        width = max([int(k) for k in value] + [1])
                        found[key] = {"name": name, "kind": DENSE, "scope": scope, "width": width}
                    elif isinstance(value, str) or (isinstance(value, list) and value and isinstance(value[0], str)):
                        found[key] = {"name": name, "kind": CATEGORICAL, "scope": scope,
                                      "vocabulary_id": name, "embedding_dim": embedding_dim}
                    elif isinstance(value, list) and not value:
                        continue
                    else:
                        found[key] = {"name": name, "kind": DENSE, "scope": scope,
                                      "width": int(np.size(value))}
    # LIBSVM widths: widest index seen anywhere.
    for (scope, name), spec in found.items():
        if spec["kind"] == DENSE:
            for raw in raw_lists:
                feats = [raw.context] if scope == "context" else [it.features for it in raw.items]
                for f in feats:
                    v = f.get(name)
                    if isinstance(v, dict) and v:
                        spec["width"] = max(spec["width"], max(int(k) for k in v))
    return [found[k] for k in sorted(found, key=lambda k: (k[0] != "context", k[1]))]


def build_vocabularies(spec_dicts, raw_lists):
    """Builds one vocabulary per ``vocabulary_id`` from the training lists."""
    tokens = {}
    options = {}
    for s in spec_dicts:
        if s.get("kind") != CATEGORICAL:
            continue
        vid = s["vocabulary_id"]
        options.setdefault(vid, (int(s.get("min_frequency", 1)), int(s.get("oov_buckets", 1))))
        stream = tokens.setdefault(vid, [])
        for raw in raw_lists:
            maps = [raw.context] if s.get("scope") == "context" else [it.features for it in raw.items]
            for feats in maps:
                v = feats.get(s["name"])
                if v is None:
                    continue
                stream.append([v] if isinstance(v, str) else [str(t) for t in v])
    return {
        vid: build_vocab(stream, options[vid][0], options[vid][1], vocabulary_id=vid)
        for vid, stream in tokens.items()
    }


class RankingModel:
    """A built ranking model. ``params`` is a flat dict of float64 arrays:
    scorer layers (``dense_<i>/...``) and embedding tables (``embedding/<id>``)."""

    def __init__(self, config, transform, scorer, head, params, rngs, global_step=0):
        self.config = config
        self.transform = transform
        self.scorer = scorer
        self.head = head
        self.params = params
        self.rngs = rngs
        self.global_step = global_step
        self.cursor = None

    @property
    def optimizer(self):
        return self.head.optimizer

    def tables(self, params=None):
        params = self.params if params is None else params
        return {vid: params[EMBEDDING_PREFIX + vid] for vid in self.transform.embedding_dims}

    # data

    def prepare(self, raw_lists, list_size=None):
        """Pads raw lists to ``list_size`` (down-sampling per the truncate
        policy) and resolves them into arrays."""
        lists = make_example_lists(
            raw_lists, list_size or self.config.list_size, self.rngs.sampling(), self.config.truncate_policy
        )
        return self.transform.prepare(lists)

    # core computations

    def compute_gradients(self, params, batch, rngs, loss_fn):
        """Training-mode forward and backward on a prepared batch.

        Returns ``(LossOutput, grads)`` with one gradient per parameter block.
        """
        tables = self.tables(params)
        enc = self.transform.encode(batch, tables)
        scored, cache = self.scorer.forward(
            params, enc.context, enc.per_item, enc.mask, training=True,
            rng=rngs["dropout"], shuffle_rng=rngs["groups"],
        )
        out = loss_fn(batch.labels, scored.scores, batch.weights, batch.mask)
        grads, g_ctx, g_items = self.scorer.backward(cache, out.grad_scores)
        for vid, g in self.transform.backward(batch, g_ctx, g_items, tables).items():
            grads[EMBEDDING_PREFIX + vid] = g
        return out, grads

    def score(self, batch, params=None):
        """Eval-mode scores ``[B, L]`` (``-inf`` on padding); never reads labels."""
        params = self.params if params is None else params
        chunks = []
        for start in range(0, len(batch), EVAL_CHUNK):
            part = batch.take(np.arange(start, min(start + EVAL_CHUNK, len(batch))))
            enc = self.transform.encode(part, self.tables(params))
            scored, _ = self.scorer.forward(params, enc.context, enc.per_item, enc.mask, training=False)
            chunks.append(scored.scores)
        return np.concatenate(chunks, axis=0)

    def train_step(self, batch, batch_id=None):
        out, grads = self.compute_gradients(self.params, batch, self.rngs, self.head.loss_fn)
        if not np.isfinite(out.value):
            raise TrainingError(
                f"non-finite loss at step {self.global_step} (batch {batch_id})",
                step=self.global_step, batch_id=batch_id,
            )
        try:
            self.head.apply(self.params, grads)
        except NumericError as exc:
            raise TrainingError(f"step {self.global_step} (batch {batch_id}): {exc}",
                                step=self.global_step, batch_id=batch_id) from exc
        self.global_step += 1
        return out.value

    def run(self, mode, batch):
        """TRAIN -> loss value after one update; EVAL -> metric map; PREDICT -> scores."""
        mode = Mode(mode)
        if mode is Mode.TRAIN:
            return self.train_step(batch)
        if mode is Mode.EVAL:
            scores = self.score(batch)
            return self.head.metrics(batch.labels, scores, batch.weights, batch.mask)
        return self.score(_without_labels(batch))


def _without_labels(batch):
    from dataclasses import replace

    return replace(batch, labels=np.where(batch.mask, 0.0, -1.0), weights=np.where(batch.mask, 1.0, 0.0))


def build_model(config, transform=None, scorer=None, head=None, params=None, vocabularies=None):
    """Assembles a ``RankingModel`` from its parts, creating defaults for any
    part not given. Incompatible feature/scorer widths raise ``ConfigError``."""
    config.validate()
    rngs = RngStreams(config.seed)
    if transform is None:
        specs = [FeatureSpec.from_dict(s) for s in config.feature_specs]
        transform = FeatureTransform(specs, vocabularies or {})
    if scorer is None:
        scorer = Scorer(config.architecture(), transform.item_width, transform.context_width)
    if scorer.item_width != transform.item_width or scorer.context_width != transform.context_width:
        raise ConfigError(
            f"scorer expects item/context widths {scorer.item_width}/{scorer.context_width}, "
            f"features produce {transform.item_width}/{transform.context_width}"
        )
    if head is None:
        optimizer = AdagradState(config.learning_rate, config.epsilon, config.initial_accumulator)
        head = RankingHead(config.loss, config.metrics, optimizer, rngs["listmle"])
    if params is None:
        params = scorer.init_params(rngs["init"])
        for vid, table in transform.init_tables(rngs["init"]).items():
            params[EMBEDDING_PREFIX + vid] = table
    else:
        check_param_shapes(params, scorer, transform)
    return RankingModel(config, transform, scorer, head, params, rngs)


def expected_param_shapes(scorer, transform):
    shapes = {}
    for i, (d_in, d_out) in enumerate(zip(scorer.dims[:-1], scorer.dims[1:])):
        shapes[f"dense_{i}/weight"] = (d_in, d_out)
        shapes[f"dense_{i}/bias"] = (d_out,)
    for vid, dim in transform.embedding_dims.items():
        shapes[EMBEDDING_PREFIX + vid] = (transform.vocabularies[vid].num_rows, dim)
    return shapes


def check_param_shapes(params, scorer, transform):
    expected = expected_param_shapes(scorer, transform)
    problems = [
        f"{name}: expected {shape}, got {None if name not in params else params[name].shape}"
        for name, shape in expected.items()
        if name not in params or params[name].shape != shape
    ]
    problems += [f"{name}: unexpected parameter" for name in params if name not in expected]
    if problems:
        raise ConfigError("parameters incompatible with the model: " + "; ".join(problems))


def train(model, data, num_steps, log_every=None, on_log=None):
    """Runs exactly ``num_steps`` optimizer steps over shuffled epochs of ``data``.

    Returns ``(params, trace)`` where trace holds ``(step, loss)`` pairs at the
    logging interval (and the final step).
    """
    if num_steps < 1:
        raise ConfigError(f"num_steps must be >= 1, got {num_steps}")
    if len(data) == 0:
        raise DomainError("training data is empty")
    log_every = log_every or model.config.log_every
    if model.cursor is None or model.cursor.n != len(data):
        model.cursor = BatchCursor(len(data), model.config.batch_size, True, model.rngs["batches"])
    trace = []
    for i in range(num_steps):
        idx = model.cursor.next_indices()
        batch_id = f"epoch{model.cursor.epoch}:{model.cursor.pos - len(idx)}"
        loss = model.train_step(data.take(idx), batch_id)
        if (i + 1) % log_every == 0 or i == num_steps - 1:
            trace.append((model.global_step, loss))
            if on_log is not None:
                on_log(model.global_step, loss)
            log.debug("step %d loss %.6f", model.global_step, loss)
    return model.params, trace


@dataclass
class EvalReport:
    rows: dict = field(default_factory=dict)  # metric -> {weighted, unweighted, lists, skipped}
    num_lists: int = 0

    def to_json(self):
        return {"num_lists": self.num_lists, "metrics": self.rows}

    def to_text(self):
        lines = [f"{'metric':<12}{'weighted':>12}{'unweighted':>12}{'lists':>8}{'skipped':>9}"]
        for name, r in self.rows.items():
            lines.append(
                f"{name:<12}{r['weighted']:>12.6f}{r['unweighted']:>12.6f}{r['lists']:>8d}{r['skipped']:>9d}"
            )
        return "\n".join(lines)


def evaluate(model, data, params=None):
    """Weighted and unweighted metrics over all lists of a prepared dataset."""
    if len(data) == 0:
        raise DomainError("evaluation set is empty")
    scores = model.score(data, params)
    report = EvalReport(num_lists=len(data))
    for name, values in model.head.metrics(data.labels, scores, data.weights, data.mask).items():
        if values.count == 0:
            raise DomainError(f"metric {name}: no list in the evaluation set defines it")
        report.rows[name] = {
            "weighted": values.weighted,
            "unweighted": values.unweighted,
            "lists": values.count,
            "skipped": values.skipped,
        }
    return report


def predict(model, raw_lists, params=None):
    """Scores for each list's items in input order; labels are ignored.

    Lists are scored whole (no down-sampling), padded only to a common
    length, which leaves valid-item scores unchanged.
    """
    raw_lists = list(raw_lists)
    gs = model.config.group_size
    out = []
    for start in range(0, len(raw_lists), EVAL_CHUNK):
        chunk = raw_lists[start:start + EVAL_CHUNK]
        width = max([len(r.items) for r in chunk] + [gs])
        lists = [
            pad_to_list_size(RawList(r.query_id, r.context, [Item(it.features, 0.0) for it in r.items]),
                             width, truncate_policy="first")
            for r in chunk
        ]
        scores = model.score(model.transform.prepare(lists), params)
        out.extend(scores[i, :len(r.items)].copy() for i, r in enumerate(chunk))
    return out


def predict_items(model, items, context=None, params=None):
    """Serving path: scores independent items, each as its own singleton list."""
    context = context or {}
    raws = [RawList(str(i), context, [it]) for i, it in enumerate(items)]
    return np.array([s[0] for s in predict(model, raws, params)])
