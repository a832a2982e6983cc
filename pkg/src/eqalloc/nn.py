"""Dense feed-forward networks with hand-written reverse-mode gradients.

Array conventions used throughout the package:

* a matrix is a 2-D C-order float64 ``ndarray``; layer weights are shaped
  ``(out, in)``,
* a vector is a 1-D float64 ``ndarray``,
* every operation accepts either a single vector ``(d,)`` or a batch
  ``(n, d)`` with one sample per row.  Parameter gradients of a batch are
  summed over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def softplus(x):
    """log(1 + exp(x)), overflow-safe for any finite input.

    Computed as max(x, 0) + log1p(exp(-|x|)), which never exponentiates a
    positive argument.  Output is strictly positive for finite x.
    """
    x = np.asarray(x, dtype=float)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return float(out) if out.ndim == 0 else out


def softplus_prime(x):
    """Derivative of softplus: the logistic sigmoid, overflow-safe."""
    x = np.asarray(x, dtype=float)
    t = np.exp(-np.abs(x))
    out = np.where(x >= 0.0, 1.0 / (1.0 + t), t / (1.0 + t))
    return float(out) if out.ndim == 0 else out


def identity(x):
    return np.asarray(x, dtype=float)


def identity_prime(x):
    return np.ones_like(np.asarray(x, dtype=float))


ACTIVATIONS = {
    "softplus": (softplus, softplus_prime),
    "identity": (identity, identity_prime),
}


def _check_activation(name):
    if name not in ACTIVATIONS:
        raise ValueError(f"unknown activation {name!r}; expected one of {sorted(ACTIVATIONS)}")


@dataclass
class DenseLayer:
    """Fully-connected layer: y = g(W x + b).

    weights: (out, in), bias: (out,), activation: 'softplus' or 'identity'.
    """

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "softplus"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weights.ndim != 2:
            raise ValueError("weights must be 2-D (out, in)")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"bias length {self.bias.shape} does not match weight rows {self.weights.shape[0]}"
            )
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ValueError("parameters must be finite")
        _check_activation(self.activation)

    @property
    def d_in(self):
        return self.weights.shape[1]

    @property
    def d_out(self):
        return self.weights.shape[0]

    @property
    def n_params(self):
        return self.weights.size + self.bias.size

    def param_arrays(self):
        """Live parameter arrays, in the documented order [weights, bias]."""
        return [self.weights, self.bias]

    def set_param_arrays(self, arrays):
        w, b = arrays
        if w.shape != self.weights.shape or b.shape != self.bias.shape:
            raise ValueError("parameter shapes are fixed after construction")
        self.weights, self.bias = np.asarray(w, float), np.asarray(b, float)

    def forward(self, x):
        y, _ = self.forward_cache(x)
        return y

    def forward_cache(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d_in:
            raise ValueError(f"input length {x.shape[-1]} != layer fan-in {self.d_in}")
        pre = x @ self.weights.T + self.bias
        act, _ = ACTIVATIONS[self.activation]
        return act(pre), (x, pre)

    def backward(self, cache, upstream):
        """Gradients of sum(upstream * output) w.r.t. [weights, bias] and input."""
        x, pre = cache
        upstream = np.asarray(upstream, dtype=float)
        if upstream.shape != pre.shape:
            raise ValueError(f"upstream shape {upstream.shape} != output shape {pre.shape}")
        _, act_prime = ACTIVATIONS[self.activation]
        delta = upstream * act_prime(pre)
        if x.ndim == 1:
            grad_w = np.outer(delta, x)
            grad_b = delta.copy()
        else:
            grad_w = delta.T @ x
            grad_b = delta.sum(axis=0)
        dx = delta @ self.weights
        return [grad_w, grad_b], dx


def dense_forward(layer, x):
    """Apply one dense layer: g(W x + b)."""
    return layer.forward(x)


@dataclass
class Mlp:
    """A stack of layers (DenseLayer or EquivariantLayer) with compatible widths."""

    layers: list

    def __post_init__(self):
        if not self.layers:
            raise ValueError("Mlp needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.d_out != nxt.d_in:
                raise ValueError(
                    f"layer widths incompatible: {prev.d_out} feeds {nxt.d_in}"
                )

    @property
    def d_in(self):
        return self.layers[0].d_in

    @property
    def d_out(self):
        return self.layers[-1].d_out

    @property
    def n_params(self):
        return sum(layer.n_params for layer in self.layers)

    def parameters(self):
        """Flat list of live parameter arrays, layer by layer."""
        out = []
        for layer in self.layers:
            out.extend(layer.param_arrays())
        return out

    def set_parameters(self, arrays):
        i = 0
        for layer in self.layers:
            k = len(layer.param_arrays())
            layer.set_param_arrays(arrays[i : i + k])
            i += k
        if i != len(arrays):
            raise ValueError("wrong number of parameter arrays")

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x


def mlp_forward(net, x):
    """Forward pass through the whole stack."""
    return net.forward(x)


def backprop(net, x, upstream):
    """Reverse-mode gradients of sum(upstream * net(x)).

    Returns (grads, dx): grads is a flat list aligned with net.parameters(),
    dx the gradient w.r.t. the input.  For a batch, parameter gradients are
    summed over the rows of x.
    """
    x = np.asarray(x, dtype=float)
    caches = []
    h = x
    for layer in net.layers:
        h, cache = layer.forward_cache(h)
        caches.append(cache)
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != h.shape:
        raise ValueError(f"upstream shape {upstream.shape} != output shape {h.shape}")
    grads = []
    delta = upstream
    for layer, cache in zip(reversed(net.layers), reversed(caches)):
        layer_grads, delta = layer.backward(cache, delta)
        grads[:0] = layer_grads
    return grads, delta


def glorot_uniform(rng, d_out, d_in, fan_in=None, fan_out=None):
    """Uniform init in +-sqrt(6/(fan_in+fan_out)); fans default to the shape."""
    fan_in = d_in if fan_in is None else fan_in
    fan_out = d_out if fan_out is None else fan_out
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(d_out, d_in))


def init_dense(rng, d_out, d_in, activation="softplus"):
    """Glorot-uniform weights, zero bias."""
    return DenseLayer(glorot_uniform(rng, d_out, d_in), np.zeros(d_out), activation)


@dataclass
class AdamState:
    """Adam moments and hyper-parameters; moment shapes mirror the parameters."""

    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 0.01

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("step counter must be >= 0")


def init_adam(params, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        t=0,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        lr=lr,
    )


def adam_step(params, grads, state, sign=-1):
    """One Adam update with bias correction.

    sign=-1 descends along grads; sign=+1 ascends (descent on the negated
    gradient).  Returns (new_params, new_state); inputs are not mutated.
    """
    if sign not in (-1, 1):
        raise ValueError("sign must be +1 (ascent) or -1 (descent)")
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError("params/grads/state lengths differ")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError("gradient shape does not match parameter shape")
        ge = -sign * g
        m = b1 * m + (1.0 - b1) * ge
        v = b2 * v + (1.0 - b2) * ge * ge
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_p.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(new_m, new_v, t, b1, b2, state.eps, state.lr)
    return new_p, new_state


def clip_gradients(grads, max_norm):
    """Scale a gradient list so its global L2 norm is at most max_norm."""
    total = np.sqrt(sum(float((g * g).sum()) for g in grads))
    if not np.isfinite(total):
        raise FloatingPointError("non-finite gradient")
    if total <= max_norm:
        return grads
    scale = max_norm / total
    return [g * scale for g in grads]


def finite_diff_check(net, x, loss, step=1e-6, analytic_grads=None):
    """Max relative error between backprop and central-difference gradients.

    loss maps the network output to (value, gradient w.r.t. output).  The
    relative error of each parameter entry is
    |analytic - cd| / max(|analytic|, |cd|, 1e-8), so a zero gradient on both
    routes reports 0.  analytic_grads overrides the backprop result (used to
    verify the checker itself catches corrupted gradients).
    """
    x = np.asarray(x, dtype=float)
    if analytic_grads is None:
        _, grad_y = loss(mlp_forward(net, x))
        analytic_grads, _ = backprop(net, x, grad_y)
    worst = 0.0
    params = net.parameters()
    for p, g in zip(params, analytic_grads):
        flat_p = p.reshape(-1)
        flat_g = np.asarray(g, dtype=float).reshape(-1)
        for i in range(flat_p.size):
            saved = flat_p[i]
            flat_p[i] = saved + step
            f_plus, _ = loss(mlp_forward(net, x))
            flat_p[i] = saved - step
            f_minus, _ = loss(mlp_forward(net, x))
            flat_p[i] = saved
            cd = (f_plus - f_minus) / (2.0 * step)
            denom = max(abs(flat_g[i]), abs(cd), 1e-8)
            worst = max(worst, abs(flat_g[i] - cd) / denom)
    return worst
