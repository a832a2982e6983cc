"""Block weight-sharing layers that commute with per-user block permutations.

A layer maps K input blocks of size d_in to K output blocks of size d_out.
The realized dense weight matrix has one sub-matrix U on every diagonal
block and one sub-matrix V on every off-diagonal block, with a single bias
vector shared across blocks, so block k of the output is

    y_k = g(U x_k + V * sum_{n != k} x_n + b).

Permuting the input blocks then permutes the output blocks identically
(the literature this follows calls the property "permutation invariant";
in modern usage the mapping is permutation *equivariant*, which is the
term used here).  The parameter count per layer is 2*d_out*d_in + d_out,
independent of K.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .nn import ACTIVATIONS, _check_activation, glorot_uniform


@dataclass
class EquivariantLayer:
    """Two-sub-matrix shared layer: U on the block diagonal, V elsewhere.

    u, v: (d_out, d_in) each; bias: (d_out,), shared by all K blocks.  A
    per-block bias would break equivariance, which is why only one bias
    vector exists.
    """

    u: np.ndarray
    v: np.ndarray
    bias: np.ndarray
    blocks: int
    activation: str = "softplus"

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.u.ndim != 2 or self.u.shape != self.v.shape:
            raise ValueError("u and v must be 2-D with identical shapes")
        if self.bias.shape != (self.u.shape[0],):
            raise ValueError("bias length must equal the block fan-out")
        if self.blocks < 1:
            raise ValueError("need at least one block")
        _check_activation(self.activation)

    @property
    def block_in(self):
        return self.u.shape[1]

    @property
    def block_out(self):
        return self.u.shape[0]

    @property
    def d_in(self):
        return self.blocks * self.block_in

    @property
    def d_out(self):
        return self.blocks * self.block_out

    @property
    def n_params(self):
        return 2 * self.u.size + self.bias.size

    def param_arrays(self):
        """Live parameter arrays, in the documented order [u, v, bias]."""
        return [self.u, self.v, self.bias]

    def set_param_arrays(self, arrays):
        u, v, b = arrays
        if u.shape != self.u.shape or v.shape != self.v.shape or b.shape != self.bias.shape:
            raise ValueError("parameter shapes are fixed after construction")
        self.u, self.v, self.bias = (np.asarray(a, float) for a in (u, v, b))

    def _to_blocks(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d_in:
            raise ValueError(f"input length {x.shape[-1]} != K*d_in = {self.d_in}")
        return x.reshape(x.shape[:-1] + (self.blocks, self.block_in))

    def forward(self, x):
        y, _ = self.forward_cache(x)
        return y

    def forward_cache(self, x):
        # s = sum of all blocks once, then (U - V) x_k + V s per block:
        # algebraically equal to U x_k + V sum_{n != k} x_n at O(K) cost.
        h = self._to_blocks(x)
        s = h.sum(axis=-2)
        pre = h @ (self.u - self.v).T + np.expand_dims(s @ self.v.T, -2) + self.bias
        act, _ = ACTIVATIONS[self.activation]
        y = act(pre)
        return y.reshape(y.shape[:-2] + (self.d_out,)), (h, s, pre)

    def backward(self, cache, upstream):
        """Gradients aggregated over blocks; the aggregation is the sharing."""
        h, s, pre = cache
        upstream = np.asarray(upstream, dtype=float)
        if upstream.shape[-1] != self.d_out:
            raise ValueError(f"upstream length {upstream.shape[-1]} != K*d_out = {self.d_out}")
        delta = upstream.reshape(pre.shape)
        _, act_prime = ACTIVATIONS[self.activation]
        delta = delta * act_prime(pre)
        neighbors = np.expand_dims(s, -2) - h
        if h.ndim == 2:  # single sample: (K, d)
            grad_u = delta.T @ h
            grad_v = delta.T @ neighbors
            grad_b = delta.sum(axis=0)
            delta_total = delta.sum(axis=0)
        else:  # batch: (n, K, d)
            grad_u = np.einsum("nko,nki->oi", delta, h)
            grad_v = np.einsum("nko,nki->oi", delta, neighbors)
            grad_b = delta.sum(axis=(0, 1))
            delta_total = delta.sum(axis=1)
        dh = delta @ (self.u - self.v) + np.expand_dims(delta_total @ self.v, -2)
        dx = dh.reshape(dh.shape[:-2] + (self.d_in,))
        return [grad_u, grad_v, grad_b], dx


def eq_forward(layer, x):
    """Apply one equivariant layer to a vector of K stacked blocks."""
    return layer.forward(x)


def eq_backward(layer, x, upstream):
    """Gradients (dU, dV, dbias, dx) of sum(upstream * layer(x))."""
    _, cache = layer.forward_cache(x)
    (grad_u, grad_v, grad_b), dx = layer.backward(cache, upstream)
    return grad_u, grad_v, grad_b, dx


def expand_to_dense(layer):
    """The realized (K*d_out) x (K*d_in) weight matrix of the layer.

    Block (k, k) is exactly U; block (k, n) for n != k is exactly V.
    """
    k, do, di = layer.blocks, layer.block_out, layer.block_in
    big = np.tile(layer.v, (k, k))
    for i in range(k):
        big[i * do : (i + 1) * do, i * di : (i + 1) * di] = layer.u
    return big


def expanded_bias(layer):
    """Bias of the realized dense layer: the shared bias tiled K times."""
    return np.tile(layer.bias, layer.blocks)


def init_equivariant(rng, block_out, block_in, blocks, activation="softplus"):
    """Glorot-uniform U and V with fans of the realized dense operator."""
    fan_in = blocks * block_in
    fan_out = blocks * block_out
    u = glorot_uniform(rng, block_out, block_in, fan_in=fan_in, fan_out=fan_out)
    v = glorot_uniform(rng, block_out, block_in, fan_in=fan_in, fan_out=fan_out)
    return EquivariantLayer(u, v, np.zeros(block_out), blocks, activation)


def permute_blocks(x, perm, block_size):
    """Reorder the K size-block_size blocks of x: output block k is input
    block perm[k]."""
    x = np.asarray(x)
    perm = np.asarray(perm, dtype=int)
    k = perm.size
    if x.shape[-1] != k * block_size:
        raise ValueError(f"input length {x.shape[-1]} != K*block_size = {k * block_size}")
    if not np.array_equal(np.sort(perm), np.arange(k)):
        raise ValueError(f"{perm.tolist()} is not a permutation of 0..{k - 1}")
    blocks = x.reshape(x.shape[:-1] + (k, block_size))
    out = blocks[..., perm, :]
    return out.reshape(x.shape)


@dataclass
class InvariantFunctionFixture:
    """A ground-truth member of the block-equivariant function family.

    Block k of the output is combine(self_map(x_k), acc) where acc reduces
    other_map over all blocks n != k with the commutative operation
    ``reduce`` (left-fold, starting from ``identity``; an empty reduction,
    K = 1, yields ``identity``).
    """

    combine: Callable[[Any, Any], Any]
    self_map: Callable[[Any], Any]
    other_map: Callable[[Any], Any]
    reduce: Callable[[Any, Any], Any]
    identity: Any

    def commutes(self, a, b, tol=0.0):
        """Check reduce(a, b) == reduce(b, a) on one sampled pair."""
        lhs = np.asarray(self.reduce(a, b), dtype=float)
        rhs = np.asarray(self.reduce(b, a), dtype=float)
        return bool(np.all(np.abs(lhs - rhs) <= tol))


def perm_invariant_reference(blocks, fixture):
    """Direct evaluation of the equivariant family on a list of blocks."""
    k = len(blocks)
    if k < 1:
        raise ValueError("need at least one block")
    out = []
    for i in range(k):
        acc = fixture.identity
        for n in range(k):
            if n != i:
                acc = fixture.reduce(acc, fixture.other_map(blocks[n]))
        out.append(fixture.combine(fixture.self_map(blocks[i]), acc))
    return out
