"""Reading ranking data: LIBSVM and JSONL-listwise parsing, grouping,
padding to a fixed list size, and batching."""

import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ltr.errors import ConfigError, DomainError, ParseError

PAD_LABEL = -1.0
# Name under which LIBSVM's indexed numeric features are exposed to feature specs.
LIBSVM_FEATURE = "features"
TRUNCATE_POLICIES = ("sample", "first")


@dataclass
class RawRecord:
    label: float
    query_id: str
    dense_features: dict = field(default_factory=dict)  # 1-based index -> value
    categorical_features: dict = field(default_factory=dict)  # name -> tokens
    comment: str = None


@dataclass
class Item:
    """One candidate in a list. ``features`` maps a feature name to a number,
    a list of numbers, an ``{index: value}`` map (1-based), or a list of
    string tokens; the declared feature spec decides how it is read."""

    features: dict
    label: float
    weight: float = 1.0


@dataclass
class RawList:
    query_id: str
    context: dict
    items: list


@dataclass
class ExampleList:
    """A query's items padded to ``list_size``; ``mask[i]`` is False on padding."""

    query_id: str
    context: dict
    items: list
    mask: np.ndarray

    @property
    def list_size(self):
        return len(self.items)

    @property
    def labels(self):
        return np.array([it.label for it in self.items], dtype=np.float64)

    @property
    def weights(self):
        return np.array([it.weight for it in self.items], dtype=np.float64)

    @property
    def valid_count(self):
        return int(self.mask.sum())


@dataclass
class Batch:
    lists: list
    list_size: int

    @property
    def batch_size(self):
        return len(self.lists)


def parse_libsvm(lines):
    """Parses ``<label> qid:<id> <idx>:<val> ... [# comment]`` lines.

    Blank lines are skipped. Line numbers in errors are 1-based.
    """
    records = []
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        body, sep, comment = line.partition("#")
        tokens = body.split()
        if not tokens:
            continue
        try:
            label = float(tokens[0])
        except ValueError:
            raise ParseError(f"non-numeric label {tokens[0]!r}", lineno) from None
        if not np.isfinite(label):
            raise ParseError(f"non-finite label {tokens[0]!r}", lineno)
        if len(tokens) < 2 or not tokens[1].startswith("qid:") or len(tokens[1]) == 4:
            raise ParseError("expected 'qid:<id>' after the label", lineno)
        qid = tokens[1][4:]
        dense = {}
        for tok in tokens[2:]:
            idx, colon, val = tok.partition(":")
            try:
                if not colon:
                    raise ValueError
                index = int(idx)
                value = float(val)
            except ValueError:
                raise ParseError(f"malformed feature {tok!r}", lineno) from None
            if index < 1:
                raise ParseError(f"feature index must be >= 1, got {index}", lineno)
            dense[index] = value
        records.append(
            RawRecord(label, qid, dense, {}, comment.strip() if sep else None)
        )
    return records


def group_by_qid(records):
    """Groups records by query id in first-appearance order (globally, not by runs)."""
    groups = OrderedDict()
    for rec in records:
        groups.setdefault(rec.query_id, []).append(rec)
    return list(groups.items())


def densify(sparse, width):
    """Dense vector from a 1-based ``{index: value}`` map; indices beyond width are dropped."""
    out = np.zeros(width, dtype=np.float64)
    for idx, val in sparse.items():
        if 1 <= idx <= width:
            out[idx - 1] = val
    return out


def record_to_item(record):
    features = dict(record.categorical_features)
    features[LIBSVM_FEATURE] = dict(record.dense_features)
    return Item(features, record.label, 1.0)


def libsvm_to_lists(records):
    return [RawList(qid, {}, [record_to_item(r) for r in recs]) for qid, recs in group_by_qid(records)]


def parse_jsonl(lines):
    """Parses JSONL-listwise: one ``{"qid", "context", "items": [...]}`` object per line."""
    out = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
        if not isinstance(obj, dict) or "items" not in obj:
            raise ParseError("expected an object with an 'items' array", lineno)
        qid = str(obj.get("qid", lineno))
        items = []
        for k, raw in enumerate(obj["items"]):
            try:
                label = float(raw.get("label", 0.0))
                weight = float(raw.get("weight", 1.0))
            except (TypeError, ValueError, AttributeError):
                raise ParseError(f"item {k}: label and weight must be numbers", lineno) from None
            if weight <= 0:
                raise ParseError(f"item {k}: weight must be positive", lineno)
            items.append(Item(dict(raw.get("features", {})), label, weight))
        out.append(RawList(qid, dict(obj.get("context", {})), items))
    return out


def read_lists(path):
    """Reads a data file, choosing the format by extension (``.jsonl``/``.json``
    are JSONL-listwise, anything else LIBSVM)."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        if path.suffix in (".jsonl", ".json"):
            return parse_jsonl(fh)
        return libsvm_to_lists(parse_libsvm(fh))


def _pad_item():
    return Item({}, PAD_LABEL, 0.0)


def pad_to_list_size(raw, list_size, rng=None, truncate_policy="sample"):
    """Pads (or down-samples) a ``RawList`` to exactly ``list_size`` slots.

    Oversized lists are reduced by uniform sampling without replacement
    (``sample``, original order preserved) or by keeping the head (``first``).
    """
    if list_size < 1:
        raise ConfigError(f"list_size must be >= 1, got {list_size}")
    if truncate_policy not in TRUNCATE_POLICIES:
        raise ConfigError(f"unknown truncate policy {truncate_policy!r}")
    if not raw.items:
        raise DomainError(f"query {raw.query_id!r} has no items")
    items = list(raw.items)
    if len(items) > list_size:
        if truncate_policy == "first":
            items = items[:list_size]
        else:
            if rng is None:
                raise ConfigError("sampling policy requires an rng")
            keep = np.sort(rng.choice(len(items), size=list_size, replace=False))
            items = [items[i] for i in keep]
    n_valid = len(items)
    items = items + [_pad_item() for _ in range(list_size - n_valid)]
    mask = np.zeros(list_size, dtype=bool)
    mask[:n_valid] = True
    return ExampleList(raw.query_id, raw.context, items, mask)


def make_example_lists(raws, list_size, rng=None, truncate_policy="sample"):
    return [pad_to_list_size(r, list_size, rng, truncate_policy) for r in raws]


class BatchCursor:
    """Resumable epoch-wise iteration over ``n`` list indices.

    Each epoch visits every index once (permuted with ``rng`` when shuffling);
    the final short chunk of an epoch is emitted as-is.
    """

    def __init__(self, n, batch_size, shuffle, rng=None):
        if batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
        if shuffle and rng is None:
            raise ConfigError("shuffling requires an rng")
        self.n = n
        self.batch_size = batch_size
        self.shuffle = shuffle
        self.rng = rng
        self.order = None
        self.pos = 0
        self.epoch = 0

    def next_indices(self):
        if self.n == 0:
            raise DomainError("cannot iterate over an empty dataset")
        if self.order is None or self.pos >= self.n:
            self.order = self.rng.permutation(self.n) if self.shuffle else np.arange(self.n)
            self.pos = 0
            self.epoch += 1
        idx = self.order[self.pos:self.pos + self.batch_size]
        self.pos += len(idx)
        return idx

    def state(self):
        return {
            "order": None if self.order is None else [int(i) for i in self.order],
            "pos": self.pos,
            "epoch": self.epoch,
        }

    def set_state(self, state):
        self.order = None if state["order"] is None else np.asarray(state["order"], dtype=np.int64)
        self.pos = int(state["pos"])
        self.epoch = int(state["epoch"])


def batch_iterator(lists, batch_size, shuffle=False, rng=None, epochs=1):
    """Yields ``Batch`` objects for ``epochs`` passes over ``lists``."""
    cursor = BatchCursor(len(lists), batch_size, shuffle, rng)
    if not lists:
        return
    list_size = lists[0].list_size
    while True:
        idx = cursor.next_indices()
        if cursor.epoch > epochs:
            return
        yield Batch([lists[i] for i in idx], list_size)
