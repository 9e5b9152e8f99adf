"""Feed-forward scoring functions.

The univariate scorer applies one network to ``concat(item, context)`` for
every valid item. The groupwise scorer slides circular windows of
``group_size`` valid items over each list, maps ``concat(items..., context)``
to one logit per group member, and averages the logits each item receives
(the voting layer). With ``group_size == 1`` the two coincide.
"""

from dataclasses import dataclass, field

import numpy as np

from ltr.core import DTYPE, DenseLayer, dense_backward, dense_forward, dropout, init_dense, relu, relu_backward
from ltr.errors import ConfigError, DimensionError, StateError

PAD_SCORE = -np.inf


@dataclass
class ScorerArchitecture:
    hidden_dims: tuple = (128, 128, 128)
    dropout_rate: float = 0.5
    group_size: int = 1
    shuffle_groups: bool = False

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ConfigError("hidden_dims must be a non-empty list of positive sizes")
        if self.group_size < 1:
            raise ConfigError("group_size must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")


@dataclass
class ScoredList:
    """Scores ``[B, L]``; padded slots hold ``-inf``."""

    scores: np.ndarray
    mask: np.ndarray


@dataclass
class ScorerCache:
    layers: list
    inputs: list = field(default_factory=list)  # input to each dense layer
    pre_acts: list = field(default_factory=list)  # hidden pre-activations
    drop_masks: list = field(default_factory=list)
    slots: np.ndarray = None  # [G, group_size] flat slot indices into B*L
    group_list: np.ndarray = None  # [G] list index of each group
    counts: np.ndarray = None  # [B*L] logits received per slot
    shape: tuple = None  # (B, L, item_width, context_width)


def make_groups(list_size, group_size, valid_count, order=None):
    """Circular windows over the valid items: group g is
    ``(g, g+1, ..., g+group_size-1) mod valid_count``.

    ``order`` optionally maps window positions to item indices (a shuffled
    enumeration); by default items are taken in list order.
    """
    if not 1 <= group_size <= list_size:
        raise ConfigError(f"group_size must be in [1, {list_size}], got {group_size}")
    if valid_count < 1:
        return []
    if order is None:
        order = range(valid_count)
    order = list(order)
    return [
        tuple(order[(g + k) % valid_count] for k in range(group_size))
        for g in range(valid_count)
    ]


class Scorer:
    """A multi-layer ReLU network over groups of items. Parameters live in a
    flat dict (``dense_<i>/weight``, ``dense_<i>/bias``) owned by the caller."""

    def __init__(self, arch, item_width, context_width):
        self.arch = arch
        self.item_width = item_width
        self.context_width = context_width
        gs = arch.group_size
        self.dims = [gs * item_width + context_width, *arch.hidden_dims, gs]
        if self.dims[0] < 1:
            raise ConfigError("scorer has no input features")

    @property
    def num_layers(self):
        return len(self.dims) - 1

    def param_names(self):
        names = []
        for i in range(self.num_layers):
            names += [f"dense_{i}/weight", f"dense_{i}/bias"]
        return names

    def init_params(self, rng):
        params = {}
        for i, (d_in, d_out) in enumerate(zip(self.dims[:-1], self.dims[1:])):
            layer = init_dense(d_in, d_out, rng)
            params[f"dense_{i}/weight"] = layer.weight
            params[f"dense_{i}/bias"] = layer.bias
        return params

    def layers(self, params):
        return [
            DenseLayer(params[f"dense_{i}/weight"], params[f"dense_{i}/bias"])
            for i in range(self.num_layers)
        ]

    def _groups(self, mask, shuffle_rng):
        B, L = mask.shape
        gs = self.arch.group_size
        if gs > L:
            raise ConfigError(f"group_size {gs} exceeds list_size {L}")
        if gs == 1 and shuffle_rng is None:
            flat = np.flatnonzero(mask.ravel())
            return flat[:, None], flat // L
        slots, owners = [], []
        for b in range(B):
            valid = np.flatnonzero(mask[b])
            order = valid[shuffle_rng.permutation(len(valid))] if shuffle_rng is not None else valid
            for g in make_groups(L, gs, len(valid), order):
                slots.append([b * L + i for i in g])
                owners.append(b)
        return np.asarray(slots, dtype=np.int64).reshape(-1, gs), np.asarray(owners, dtype=np.int64)

    def forward(self, params, context, per_item, mask, training=False, rng=None, shuffle_rng=None):
        """Scores a batch. Returns ``(ScoredList, ScorerCache)``.

        ``rng`` drives dropout in training mode; ``shuffle_rng`` (only when
        the architecture enables shuffled groups) permutes items before
        windowing.
        """
        mask = np.asarray(mask, dtype=bool)
        B, L = mask.shape
        context = np.asarray(context, dtype=DTYPE)
        per_item = np.asarray(per_item, dtype=DTYPE)
        if context.shape != (B, self.context_width) or per_item.shape != (B * L, self.item_width):
            raise DimensionError(
                f"context {context.shape} / per-item {per_item.shape} do not match "
                f"expected ({B}, {self.context_width}) / ({B * L}, {self.item_width})"
            )
        if training and self.arch.dropout_rate > 0 and rng is None:
            raise ConfigError("training-mode dropout requires an rng")
        if not self.arch.shuffle_groups:
            shuffle_rng = None
        slots, owners = self._groups(mask, shuffle_rng)
        G, gs = slots.shape
        layers = self.layers(params)
        cache = ScorerCache(layers, slots=slots, group_list=owners, shape=(B, L, self.item_width, self.context_width))
        h = np.concatenate([per_item[slots.ravel()].reshape(G, gs * self.item_width), context[owners]], axis=1)
        for layer in layers[:-1]:
            cache.inputs.append(h)
            z = dense_forward(h, layer, batch_invariant=not training)
            cache.pre_acts.append(z)
            h, m = dropout(relu(z), self.arch.dropout_rate, rng, training)
            cache.drop_masks.append(m)
        cache.inputs.append(h)
        logits = dense_forward(h, layers[-1], batch_invariant=not training)
        sums = np.zeros(B * L, dtype=DTYPE)
        np.add.at(sums, slots.ravel(), logits.ravel())
        counts = np.bincount(slots.ravel(), minlength=B * L).astype(DTYPE)
        cache.counts = counts
        scores = np.full(B * L, PAD_SCORE)
        hit = counts > 0
        scores[hit] = sums[hit] / counts[hit]
        return ScoredList(scores.reshape(B, L), mask), cache

    def backward(self, cache, upstream):
        """Gradients of ``sum(upstream * scores)`` over valid slots.

        Returns ``(param_grads, grad_context, grad_per_item)``.
        """
        if cache is None or cache.slots is None:
            raise StateError("scorer backward called without a cached forward pass")
        B, L, E, C = cache.shape
        upstream = np.asarray(upstream, dtype=DTYPE).reshape(B * L)
        slots = cache.slots
        G, gs = slots.shape
        counts = np.maximum(cache.counts, 1.0)
        g = upstream[slots] / counts[slots]
        grads = {}
        n = len(cache.layers)
        g_in, gw, gb = dense_backward(cache.inputs[-1], cache.layers[-1], g)
        grads[f"dense_{n - 1}/weight"], grads[f"dense_{n - 1}/bias"] = gw, gb
        for i in range(n - 2, -1, -1):
            g = relu_backward(cache.pre_acts[i], g_in * cache.drop_masks[i])
            g_in, gw, gb = dense_backward(cache.inputs[i], cache.layers[i], g)
            grads[f"dense_{i}/weight"], grads[f"dense_{i}/bias"] = gw, gb
        grad_items = np.zeros((B * L, E), dtype=DTYPE)
        np.add.at(grad_items, slots.ravel(), g_in[:, :gs * E].reshape(G * gs, E))
        grad_context = np.zeros((B, C), dtype=DTYPE)
        np.add.at(grad_context, cache.group_list, g_in[:, gs * E:])
        return grads, grad_context, grad_items


def score_univariate(scorer, params, context, per_item, mask, training=False, rng=None):
    if scorer.arch.group_size != 1:
        raise ConfigError("score_univariate requires group_size == 1")
    return scorer.forward(params, context, per_item, mask, training, rng)


def score_groupwise(scorer, params, context, per_item, mask, training=False, rng=None, shuffle_rng=None):
    return scorer.forward(params, context, per_item, mask, training, rng, shuffle_rng)


def scorer_backward(scorer, cache, upstream):
    return scorer.backward(cache, upstream)
