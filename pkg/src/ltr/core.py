"""Dense numeric kernel: linear layers, ReLU, dropout and Adagrad.

Matrices are plain 2-D float64 numpy arrays. Per-item ("3-D") tensors are
flattened so that rows = batch * list_size.
"""

from dataclasses import dataclass, field

import numpy as np

from ltr.errors import ConfigError, DimensionError, NumericError

DTYPE = np.float64


@dataclass
class DenseLayer:
    """Weights of an affine map ``x @ weight + bias``."""

    weight: np.ndarray  # [in_dim, out_dim]
    bias: np.ndarray  # [out_dim]

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=DTYPE)
        self.bias = np.asarray(self.bias, dtype=DTYPE)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise DimensionError(
                f"weight {self.weight.shape} and bias {self.bias.shape} are inconsistent"
            )

    @property
    def in_dim(self):
        return self.weight.shape[0]

    @property
    def out_dim(self):
        return self.weight.shape[1]


def init_dense(in_dim, out_dim, rng):
    """Glorot-uniform weights, zero bias."""
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    return DenseLayer(rng.uniform(-limit, limit, size=(in_dim, out_dim)), np.zeros(out_dim))


def _as_matrix(x, name="input"):
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {x.shape}")
    return x


def dense_forward(x, layer, batch_invariant=False):
    """``x @ weight + bias``.

    With ``batch_invariant`` every row is computed by an identically shaped
    product, so a row's output is bit-identical whatever batch it sits in.
    Plain BLAS gemm does not guarantee that (blocking depends on the batch
    size), which matters when serving single items must reproduce list
    scores exactly.
    """
    x = _as_matrix(x)
    if x.shape[1] != layer.in_dim:
        raise DimensionError(
            f"input shape {x.shape} incompatible with weight shape {layer.weight.shape}"
        )
    if batch_invariant:
        return (x[:, None, :] @ layer.weight)[:, 0, :] + layer.bias
    return x @ layer.weight + layer.bias


def dense_backward(x, layer, upstream):
    """Returns ``(grad_input, grad_weight, grad_bias)``."""
    x = _as_matrix(x)
    upstream = _as_matrix(upstream, "upstream_grad")
    if x.shape[1] != layer.in_dim or upstream.shape != (x.shape[0], layer.out_dim):
        raise DimensionError(
            f"input {x.shape}, weight {layer.weight.shape} and upstream "
            f"{upstream.shape} are inconsistent"
        )
    return upstream @ layer.weight.T, x.T @ upstream, upstream.sum(axis=0)


def relu(x):
    return np.maximum(np.asarray(x, dtype=DTYPE), 0.0)


def relu_backward(x, upstream):
    # Subgradient at exactly 0 is 0.
    return upstream * (np.asarray(x) > 0.0)


def dropout(x, rate, rng, training):
    """Inverted dropout. Returns ``(output, mask)`` where mask holds the scale.

    In training mode each element survives with probability ``1 - rate`` and
    is scaled by ``1 / (1 - rate)``; the mask carries that scale (0 for
    dropped elements) so the backward pass is ``upstream * mask``.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    x = np.asarray(x, dtype=DTYPE)
    if not training or rate == 0.0:
        return x, np.ones_like(x)
    keep = rng.random(x.shape, dtype=np.float32) >= rate
    mask = keep * (1.0 / (1.0 - rate))
    return x * mask, mask


@dataclass
class AdagradState:
    learning_rate: float = 0.1
    epsilon: float = 1e-8
    initial_accumulator: float = 0.1
    accumulators: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.initial_accumulator < 0:
            raise ConfigError("initial_accumulator must be non-negative")

    def slot(self, name, shape):
        acc = self.accumulators.get(name)
        if acc is None:
            acc = np.full(shape, self.initial_accumulator, dtype=DTYPE)
            self.accumulators[name] = acc
        return acc


def adagrad_update_block(name, param, grad, state):
    """Applies one Adagrad step to a single named parameter block in place."""
    grad = np.asarray(grad, dtype=DTYPE)
    if grad.shape != param.shape:
        raise DimensionError(f"gradient {grad.shape} does not match parameter {name} {param.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite gradient for parameter block {name!r}")
    acc = state.slot(name, param.shape)
    acc += grad * grad
    param -= state.learning_rate * grad / (np.sqrt(acc) + state.epsilon)


def adagrad_update(params, grads, state):
    """``acc += g**2; theta -= lr * g / (sqrt(acc) + eps)`` for every block.

    ``params`` and ``grads`` are dicts keyed by block name; params are
    updated in place and returned along with the state. All gradients are
    checked before any block is touched.
    """
    for name, g in grads.items():
        if name not in params:
            raise DimensionError(f"gradient for unknown parameter block {name!r}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter block {name!r}")
    for name, g in grads.items():
        adagrad_update_block(name, params[name], g, state)
    return params, state
