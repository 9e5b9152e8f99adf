"""Feature declarations, vocabularies, embeddings, and the listwise encoder
that turns example lists into a 2-D context matrix and a flattened per-item
matrix."""

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ltr.core import DTYPE
from ltr.errors import ConfigError, DimensionError

DENSE = "dense"
CATEGORICAL = "categorical"
CONTEXT = "context"
PER_ITEM = "per_item"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a_64(data):
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str = DENSE
    scope: str = PER_ITEM
    width: int = 1
    vocabulary_id: str = None
    embedding_dim: int = None

    def __post_init__(self):
        if self.kind not in (DENSE, CATEGORICAL):
            raise ConfigError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.scope not in (CONTEXT, PER_ITEM):
            raise ConfigError(f"feature {self.name!r}: unknown scope {self.scope!r}")
        if self.kind == DENSE and self.width < 1:
            raise ConfigError(f"feature {self.name!r}: width must be >= 1")
        if self.kind == CATEGORICAL:
            if not self.vocabulary_id:
                raise ConfigError(f"feature {self.name!r}: categorical needs a vocabulary_id")
            if self.embedding_dim is None or self.embedding_dim < 1:
                raise ConfigError(f"feature {self.name!r}: embedding_dim must be >= 1")

    @property
    def out_width(self):
        return self.width if self.kind == DENSE else self.embedding_dim

    @classmethod
    def dense(cls, name, width=1, scope=PER_ITEM):
        return cls(name, DENSE, scope, width)

    @classmethod
    def categorical(cls, name, vocabulary_id, embedding_dim, scope=PER_ITEM):
        return cls(name, CATEGORICAL, scope, 1, vocabulary_id, embedding_dim)

    def to_dict(self):
        d = {"name": self.name, "kind": self.kind, "scope": self.scope}
        if self.kind == DENSE:
            d["width"] = self.width
        else:
            d["vocabulary_id"] = self.vocabulary_id
            d["embedding_dim"] = self.embedding_dim
        return d

    @classmethod
    def from_dict(cls, d):
        known = {"name", "kind", "scope", "width", "vocabulary_id", "embedding_dim"}
        unknown = set(d) - known - {"min_frequency", "oov_buckets"}
        if unknown:
            raise ConfigError(f"feature spec has unknown keys {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in known})


class Vocabulary:
    """Token -> row index map with hashed out-of-vocabulary buckets.

    In-vocabulary tokens occupy rows ``[0, size)``; unknown tokens hash with
    FNV-1a (64-bit, UTF-8) into rows ``[size, size + oov_bucket_count)``.
    """

    def __init__(self, vocabulary_id, tokens, oov_bucket_count=1, min_frequency=1):
        if oov_bucket_count < 1:
            raise ConfigError("oov_bucket_count must be >= 1")
        self.id = vocabulary_id
        self.tokens = list(tokens)
        self.index_of = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index_of) != len(self.tokens):
            raise ConfigError(f"vocabulary {vocabulary_id!r} has duplicate tokens")
        self.oov_bucket_count = oov_bucket_count
        self.min_frequency = min_frequency

    @property
    def size(self):
        return len(self.tokens)

    @property
    def num_rows(self):
        return self.size + self.oov_bucket_count

    def __contains__(self, token):
        return token in self.index_of

    def index(self, token):
        i = self.index_of.get(token)
        if i is not None:
            return i
        return self.size + fnv1a_64(token.encode("utf-8")) % self.oov_bucket_count

    def save(self, path):
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path, vocabulary_id=None, oov_bucket_count=1):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(vocabulary_id or Path(path).stem, lines, oov_bucket_count)

    def to_dict(self):
        return {
            "id": self.id,
            "tokens": self.tokens,
            "oov_bucket_count": self.oov_bucket_count,
            "min_frequency": self.min_frequency,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["id"], d["tokens"], d["oov_bucket_count"], d.get("min_frequency", 1))


def build_vocab(token_streams, min_frequency=1, oov_bucket_count=1, vocabulary_id="vocab"):
    """Keeps tokens seen at least ``min_frequency`` times, ordered by
    descending frequency with lexicographic tie-break."""
    if min_frequency < 1:
        raise ConfigError("min_frequency must be >= 1")
    counts = Counter()
    for stream in token_streams:
        counts.update(stream)
    kept = sorted((t for t, c in counts.items() if c >= min_frequency), key=lambda t: (-counts[t], t))
    return Vocabulary(vocabulary_id, kept, oov_bucket_count, min_frequency)


@dataclass
class EmbeddingTable:
    vocabulary: Vocabulary
    rows: np.ndarray

    def __post_init__(self):
        if self.rows.shape[0] != self.vocabulary.num_rows:
            raise DimensionError(
                f"table has {self.rows.shape[0]} rows, vocabulary {self.vocabulary.id!r} "
                f"needs {self.vocabulary.num_rows}"
            )

    @property
    def dim(self):
        return self.rows.shape[1]


def init_embedding(vocab, dim, rng):
    bound = 1.0 / np.sqrt(dim)
    return rng.uniform(-bound, bound, size=(vocab.num_rows, dim))


def _as_tokens(value):
    if value is None:
        return []
    if isinstance(value, str):
        return [value]
    return [str(t) for t in value]


def embed_lookup(tokens, vocab, table):
    """Mean of the rows of ``tokens``; the zero vector for no tokens."""
    rows = table.rows if isinstance(table, EmbeddingTable) else table
    tokens = _as_tokens(tokens)
    if not tokens:
        return np.zeros(rows.shape[1], dtype=DTYPE)
    return rows[[vocab.index(t) for t in tokens]].mean(axis=0)


def embed_backward(tokens, vocab, table, upstream):
    """Row gradients of ``embed_lookup``: ``{row_index: grad}``."""
    tokens = _as_tokens(tokens)
    grads = {}
    if not tokens:
        return grads
    share = np.asarray(upstream, dtype=DTYPE) / len(tokens)
    for t in tokens:
        i = vocab.index(t)
        grads[i] = grads[i] + share if i in grads else share.copy()
    return grads


def _dense_value(value, width, name):
    if value is None:
        return np.zeros(width, dtype=DTYPE)
    if isinstance(value, dict):
        out = np.zeros(width, dtype=DTYPE)
        for idx, v in value.items():
            idx = int(idx)
            if 1 <= idx <= width:
                out[idx - 1] = v
        return out
    arr = np.atleast_1d(np.asarray(value, dtype=DTYPE))
    if arr.shape != (width,):
        raise DimensionError(f"feature {name!r} has {arr.size} values, expected width {width}")
    return arr


@dataclass
class PreparedLists:
    """Example lists resolved to arrays: dense features are materialized and
    tokens mapped to vocabulary rows (``-1`` marks an absent token)."""

    query_ids: list
    labels: np.ndarray  # [N, L]
    weights: np.ndarray  # [N, L]
    mask: np.ndarray  # [N, L] bool
    context_blocks: list  # per context spec: [N, width] float or [N, T] int
    item_blocks: list  # per item spec: [N, L, width] float or [N, L, T] int

    def __len__(self):
        return self.labels.shape[0]

    @property
    def list_size(self):
        return self.labels.shape[1]

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return PreparedLists(
            [self.query_ids[i] for i in idx],
            self.labels[idx],
            self.weights[idx],
            self.mask[idx],
            [b[idx] for b in self.context_blocks],
            [b[idx] for b in self.item_blocks],
        )


@dataclass
class Encoded:
    context: np.ndarray  # [B, C]
    per_item: np.ndarray  # [B * L, E]
    mask: np.ndarray  # [B, L]


class FeatureTransform:
    """Declared features plus their vocabularies; encodes lists to matrices.

    Specs sharing a ``vocabulary_id`` share one embedding table. Output
    columns follow declaration order within each scope.
    """

    def __init__(self, specs, vocabularies=None):
        self.specs = list(specs)
        self.vocabularies = dict(vocabularies or {})
        seen = set()
        dims = {}
        for s in self.specs:
            if (s.scope, s.name) in seen:
                raise ConfigError(f"duplicate feature {s.name!r} in scope {s.scope}")
            seen.add((s.scope, s.name))
            if s.kind == CATEGORICAL:
                if s.vocabulary_id not in self.vocabularies:
                    raise ConfigError(
                        f"feature {s.name!r} references unknown vocabulary {s.vocabulary_id!r}"
                    )
                if dims.setdefault(s.vocabulary_id, s.embedding_dim) != s.embedding_dim:
                    raise ConfigError(
                        f"features sharing vocabulary {s.vocabulary_id!r} disagree on embedding_dim"
                    )
        self.embedding_dims = dims
        self.context_specs = [s for s in self.specs if s.scope == CONTEXT]
        self.item_specs = [s for s in self.specs if s.scope == PER_ITEM]

    @property
    def context_width(self):
        return sum(s.out_width for s in self.context_specs)

    @property
    def item_width(self):
        return sum(s.out_width for s in self.item_specs)

    def init_tables(self, rng):
        """Fresh embedding rows for each vocabulary, in sorted id order."""
        return {
            vid: init_embedding(self.vocabularies[vid], dim, rng)
            for vid, dim in sorted(self.embedding_dims.items())
        }

    def _token_block(self, values, vocab):
        ids = [[vocab.index(t) for t in _as_tokens(v)] for v in values]
        width = max([len(r) for r in ids] + [1])
        out = np.full((len(ids), width), -1, dtype=np.int64)
        for i, r in enumerate(ids):
            out[i, :len(r)] = r
        return out

    def _block(self, spec, values):
        if spec.kind == DENSE:
            if not values:
                return np.zeros((0, spec.width), dtype=DTYPE)
            return np.stack([_dense_value(v, spec.width, spec.name) for v in values])
        return self._token_block(values, self.vocabularies[spec.vocabulary_id])

    def prepare(self, lists):
        """Resolves ``ExampleList`` objects into a ``PreparedLists``."""
        lists = list(lists)
        if not lists:
            raise ConfigError("cannot prepare an empty collection of lists")
        n, L = len(lists), lists[0].list_size
        if any(el.list_size != L for el in lists):
            raise DimensionError("all lists must share one list_size")
        ctx_blocks = [self._block(s, [el.context.get(s.name) for el in lists]) for s in self.context_specs]
        item_blocks = []
        for s in self.item_specs:
            flat = [it.features.get(s.name) for el in lists for it in el.items]
            block = self._block(s, flat)
            item_blocks.append(block.reshape(n, L, block.shape[-1]))
        return PreparedLists(
            [el.query_id for el in lists],
            np.stack([el.labels for el in lists]),
            np.stack([el.weights for el in lists]),
            np.stack([el.mask for el in lists]),
            ctx_blocks,
            item_blocks,
        )

    @staticmethod
    def _pool(ids, table):
        valid = ids >= 0
        count = np.maximum(valid.sum(axis=-1), 1)
        rows = table[np.where(valid, ids, 0)] * valid[..., None]
        return rows.sum(axis=-2) / count[..., None]

    def encode(self, prepared, tables):
        """Returns ``Encoded`` with context ``[B, C]`` and per-item ``[B*L, E]``."""
        B, L = prepared.labels.shape
        ctx = []
        for s, block in zip(self.context_specs, prepared.context_blocks):
            ctx.append(block if s.kind == DENSE else self._pool(block, tables[s.vocabulary_id]))
        items = []
        for s, block in zip(self.item_specs, prepared.item_blocks):
            enc = block if s.kind == DENSE else self._pool(block, tables[s.vocabulary_id])
            items.append(enc.reshape(B * L, s.out_width))
        context = np.concatenate(ctx, axis=1) if ctx else np.zeros((B, 0), dtype=DTYPE)
        per_item = np.concatenate(items, axis=1) if items else np.zeros((B * L, 0), dtype=DTYPE)
        # Padded slots encode as zeros whatever their raw contents.
        per_item = per_item * prepared.mask.reshape(B * L, 1)
        return Encoded(context, per_item, prepared.mask)

    @staticmethod
    def _pool_backward(ids, upstream, grad_table):
        valid = ids >= 0
        count = np.maximum(valid.sum(axis=-1), 1)
        share = upstream / count[..., None]
        expanded = np.broadcast_to(share[..., None, :], ids.shape + (share.shape[-1],))
        np.add.at(grad_table, ids[valid], expanded[valid])

    def backward(self, prepared, grad_context, grad_per_item, tables):
        """Embedding-table gradients (dense arrays keyed by vocabulary id)."""
        B, L = prepared.labels.shape
        grads = {vid: np.zeros_like(tables[vid]) for vid in self.embedding_dims}
        col = 0
        for s, block in zip(self.context_specs, prepared.context_blocks):
            if s.kind == CATEGORICAL:
                self._pool_backward(block, grad_context[:, col:col + s.out_width], grads[s.vocabulary_id])
            col += s.out_width
        col = 0
        g_items = grad_per_item * prepared.mask.reshape(B * L, 1)
        for s, block in zip(self.item_specs, prepared.item_blocks):
            if s.kind == CATEGORICAL:
                g = g_items[:, col:col + s.out_width].reshape(B, L, s.out_width)
                self._pool_backward(block, g, grads[s.vocabulary_id])
            col += s.out_width
        return grads


def encode_listwise(batch, specs, tables):
    """Encodes a ``Batch`` given specs and ``{vocabulary_id: EmbeddingTable}``."""
    vocabs = {vid: t.vocabulary for vid, t in tables.items()}
    transform = FeatureTransform(specs, vocabs)
    enc = transform.encode(transform.prepare(batch.lists), {vid: t.rows for vid, t in tables.items()})
    return enc.context, enc.per_item, enc.mask
