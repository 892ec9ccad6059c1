"""Minimal dense network engine with exact analytic gradients.

Everything runs in float64. Forward passes are pure; training mutates
parameters in place through an explicit optimizer state. Randomness comes
exclusively from ``numpy.random.Generator`` (PCG64), so a fixed seed gives
the same parameter stream on every platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "identity")


def as_rng(seed_or_rng) -> np.random.Generator:
    """Coerce an int seed (or an existing Generator) into a Generator."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


class Layer:
    """One affine map plus activation: ``act(W @ x + b)``.

    W has shape (out, in), b has shape (out,).
    """

    __slots__ = ("W", "b", "activation")

    def __init__(self, W, b, activation):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")
        W = np.asarray(W, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if W.ndim != 2 or b.ndim != 1 or W.shape[0] != b.shape[0]:
            raise ValueError(f"layer shape mismatch: W {W.shape}, b {b.shape}")
        self.W = W
        self.b = b
        self.activation = activation

    @property
    def in_dim(self):
        return self.W.shape[1]

    @property
    def out_dim(self):
        return self.W.shape[0]


@dataclass
class ForwardCache:
    """Per-layer activations kept for the backward pass.

    ``net`` pins the cache to the network instance that produced it so a
    stale or foreign cache is rejected instead of silently producing wrong
    gradients.
    """

    net: "DenseNet"
    inputs: list  # layer inputs, inputs[k] has shape (n, in_dim_k)
    preacts: list  # pre-activation values per layer, shape (n, out_dim_k)
    squeezed: bool  # True if the original x was a single vector


class DenseNet:
    """A chain of dense layers, evaluated batched on rows of x."""

    def __init__(self, layers):
        if not layers:
            raise ValueError("DenseNet needs at least one layer")
        for k in range(1, len(layers)):
            if layers[k].in_dim != layers[k - 1].out_dim:
                raise ValueError(
                    f"layer {k - 1} output dim {layers[k - 1].out_dim} does not chain "
                    f"into layer {k} input dim {layers[k].in_dim}"
                )
        self.layers = list(layers)

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def output_dim(self):
        return self.layers[-1].out_dim

    @classmethod
    def init(cls, dims, rng, hidden_activation="relu", output_activation="identity"):
        """He-style uniform init: W ~ U(-L, L) with L = sqrt(6 / fan_in), b = 0.

        ``dims`` lists layer widths, e.g. (784, 400, 400, 2).
        """
        rng = as_rng(rng)
        if len(dims) < 2:
            raise ValueError("dims must list at least input and output width")
        layers = []
        for k in range(len(dims) - 1):
            fan_in, fan_out = dims[k], dims[k + 1]
            limit = np.sqrt(6.0 / fan_in)
            W = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            b = np.zeros(fan_out)
            act = output_activation if k == len(dims) - 2 else hidden_activation
            layers.append(Layer(W, b, act))
        return cls(layers)

    def params(self):
        """Flat list of parameter arrays: [W0, b0, W1, b1, ...] (live views)."""
        out = []
        for layer in self.layers:
            out.append(layer.W)
            out.append(layer.b)
        return out

    def set_params(self, arrays):
        arrays = list(arrays)
        if len(arrays) != 2 * len(self.layers):
            raise ValueError(f"expected {2 * len(self.layers)} arrays, got {len(arrays)}")
        for k, layer in enumerate(self.layers):
            W, b = arrays[2 * k], arrays[2 * k + 1]
            if W.shape != layer.W.shape or b.shape != layer.b.shape:
                raise ValueError(f"shape mismatch at layer {k}")
            layer.W = np.array(W, dtype=np.float64)
            layer.b = np.array(b, dtype=np.float64)

    def copy(self):
        return DenseNet([Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers])

    def forward(self, x):
        """Run the network on x (a vector or a batch of row vectors).

        Returns (output, cache). Output shape mirrors the input: a 1-D x
        gives a 1-D output, an (n, input_dim) batch gives (n, output_dim).
        """
        x = np.asarray(x, dtype=np.float64)
        squeezed = x.ndim == 1
        if squeezed:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(
                f"input shape {x.shape} does not match layer 0 input dim {self.input_dim}"
            )
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite values in network input")
        inputs, preacts = [], []
        h = x
        for layer in self.layers:
            inputs.append(h)
            z = h @ layer.W.T + layer.b
            preacts.append(z)
            h = np.maximum(z, 0.0) if layer.activation == "relu" else z
        cache = ForwardCache(net=self, inputs=inputs, preacts=preacts, squeezed=squeezed)
        out = h[0] if squeezed else h
        return out, cache

    def backward(self, cache, grad_output):
        """Backpropagate d(loss)/d(output) to all parameters and the input.

        Returns (param_grads, grad_input) where param_grads matches the
        layout of ``params()``. Batched grad_output rows are summed into the
        parameter gradients, so scale rows by 1/n upstream for a mean loss.
        """
        if not isinstance(cache, ForwardCache) or cache.net is not self:
            raise ValueError("cache does not belong to this network (stale or foreign cache)")
        g = np.asarray(grad_output, dtype=np.float64)
        if cache.squeezed:
            if g.shape != (self.output_dim,):
                raise ValueError(
                    f"grad_output shape {g.shape} does not match output dim {self.output_dim}"
                )
            g = g[None, :]
        elif g.shape != cache.preacts[-1].shape:
            raise ValueError(
                f"grad_output shape {g.shape} does not match cached output shape "
                f"{cache.preacts[-1].shape}"
            )
        param_grads = [None] * (2 * len(self.layers))
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            if layer.activation == "relu":
                g = g * (cache.preacts[k] > 0.0)
            param_grads[2 * k] = g.T @ cache.inputs[k]
            param_grads[2 * k + 1] = g.sum(axis=0)
            g = g @ layer.W
        grad_input = g[0] if cache.squeezed else g
        return param_grads, grad_input

    def assert_finite(self):
        for k, layer in enumerate(self.layers):
            if not (np.all(np.isfinite(layer.W)) and np.all(np.isfinite(layer.b))):
                raise FloatingPointError(f"non-finite parameters in layer {k}")

    def fingerprint(self):
        """Hex digest of all parameters; stable across save/load round trips."""
        import hashlib

        h = hashlib.sha256()
        for arr in self.params():
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


def finite_diff_grad(loss_fn, params, h=1e-5):
    """Central-difference gradient of a scalar loss over a list of arrays.

    ``loss_fn(params) -> float`` must be deterministic. Used as the
    independent oracle for every analytic gradient in the package.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    base = [np.array(p, dtype=np.float64) for p in params]
    grads = [np.zeros_like(p) for p in base]
    for arr, grad in zip(base, grads):
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(loss_fn(base))
            flat[i] = orig - h
            f_minus = float(loss_fn(base))
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise FloatingPointError("loss is non-finite near the evaluation point")
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grads


@dataclass
class OptimizerState:
    """SGD or Adam state over a flat list of parameter arrays."""

    kind: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


def make_optimizer(kind, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    return OptimizerState(kind=kind, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def optimizer_step(state, params, grads):
    """Apply one update in place; returns ``params`` for convenience.

    SGD: p -= lr * g. Adam: standard bias-corrected moment update.
    """
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params vs {len(grads)} grads")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"param shape {p.shape} vs grad shape {g.shape}")
    if state.kind == "sgd":
        for p, g in zip(params, grads):
            p -= state.lr * g
        return params
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
    return params
