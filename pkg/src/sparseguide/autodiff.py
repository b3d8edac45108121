"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

A Tensor wraps an ndarray and, when gradients are enabled, each operation
records a backward closure on the output node. ``backward()`` on a scalar
walks the graph once in reverse topological order, accumulating gradients
additively on every node that requires them (so shared subexpressions sum).

Coverage is exactly what the token-transformer and its losses need: matmul
(plain and stacked), a small elementwise vocabulary, row gather/select ops
for token sparsity, rotary application, and full reductions. Forward values
never consume randomness; identical inputs give identical outputs.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import DimensionError, NumericError

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording (used by sampling and finite differences)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """Dense float64 array with an optional gradient."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        if self.size != 1:
            raise DimensionError("backward() requires a scalar output")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if node is not self and node._backward is not None:
                # interior activations: free the graph edge early
                node._backward = None

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def constant(x) -> Tensor:
    """Wrap an array as a non-differentiable Tensor."""
    return _as_tensor(x)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, int]] = [(root, 0)]
    while stack:
        node, idx = stack.pop()
        if idx == 0:
            if id(node) in seen:
                continue
            seen.add(id(node))
        if idx < len(node._parents):
            stack.append((node, idx + 1))
            child = node._parents[idx]
            if id(child) not in seen:
                stack.append((child, 0))
        else:
            order.append(node)
    return order


def _accumulate(node: Tensor, g: np.ndarray) -> None:
    if node.grad is None:
        # copy: g may alias an upstream gradient that later accumulation
        # would otherwise mutate
        node.grad = np.array(np.broadcast_to(g, node.data.shape))
    else:
        node.grad += g


def _make_node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _is_scalar(t: Tensor) -> bool:
    return t.size == 1


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    # scalar broadcast is the only supported mismatch
    return np.sum(g).reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise DimensionError(f"add: incompatible shapes {a.shape} and {b.shape}")
    data = a.data + b.data

    def backward(g):
        if a.requires_grad or a._parents:
            _accumulate(a, _reduce_to(g, a.shape))
        if b.requires_grad or b._parents:
            _accumulate(b, _reduce_to(g, b.shape))

    return _make_node(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise DimensionError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    data = a.data * b.data

    def backward(g):
        if a.requires_grad or a._parents:
            _accumulate(a, _reduce_to(g * b.data, a.shape))
        if b.requires_grad or b._parents:
            _accumulate(b, _reduce_to(g * a.data, b.shape))

    return _make_node(data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    data = a.data * s

    def backward(g):
        _accumulate(a, g * s)

    return _make_node(data, (a,), backward)


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: (..., m, k) @ (k, n) or (..., m, k) @ (..., k, n).

    Stacked operands must share their leading dimensions exactly; a plain 2-d
    right operand broadcasts across the stack (the weight case) with its
    gradient reduced over the stack.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul requires at least 2-d operands")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul: inner dimensions disagree ({a.shape} @ {b.shape})"
        )
    weight_case = b.ndim == 2 and a.ndim >= 2
    if not weight_case and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(
            f"matmul: stacked leading dims must match ({a.shape} @ {b.shape})"
        )
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad or a._parents:
            ga = g @ np.swapaxes(b.data, -1, -2)
            _accumulate(a, ga)
        if b.requires_grad or b._parents:
            if weight_case and a.ndim > 2:
                k = a.shape[-1]
                n = g.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
            _accumulate(b, gb)

    return _make_node(data, (a, b), backward)


# ---------------------------------------------------------------------------
# nonlinearities and normalization

def gelu(a: Tensor) -> Tensor:
    data, saved_tanh = kernels.gelu_fwd(a.data)

    def backward(g):
        _accumulate(
            a, kernels.gelu_bwd(a.data, saved_tanh, np.ascontiguousarray(g))
        )

    return _make_node(data, (a,), backward)


def softmax_lastdim(a: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max subtraction."""
    width = a.shape[-1]
    flat = a.data.reshape(-1, width)
    y = kernels.softmax_fwd(flat)
    data = y.reshape(a.shape)

    def backward(g):
        gx = kernels.softmax_bwd(y, np.ascontiguousarray(g).reshape(-1, width))
        _accumulate(a, gx.reshape(a.shape))

    return _make_node(data, (a,), backward)


RMSNORM_EPS = 1e-12


def rmsnorm(a: Tensor, gain: Tensor) -> Tensor:
    """Root-mean-square normalization over the last axis with a learned gain."""
    width = a.shape[-1]
    if gain.shape != (width,):
        raise DimensionError(f"rmsnorm: gain shape {gain.shape} != ({width},)")
    flat = a.data.reshape(-1, width)
    y, inv = kernels.rmsnorm_fwd(flat, gain.data, RMSNORM_EPS)
    data = y.reshape(a.shape)

    def backward(g):
        gx, ggain = kernels.rmsnorm_bwd(
            flat, gain.data, inv, np.ascontiguousarray(g).reshape(-1, width)
        )
        if a.requires_grad or a._parents:
            _accumulate(a, gx.reshape(a.shape))
        if gain.requires_grad or gain._parents:
            _accumulate(gain, ggain)

    return _make_node(data, (a, gain), backward)


def rope(a: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotary position application on (..., T, head_dim) with half-split pairs.

    cos/sin carry one row per token position, shape (T, head_dim // 2); they
    are plain arrays (positions are not differentiated).
    """
    t, dh = a.shape[-2], a.shape[-1]
    if cos.shape != (t, dh // 2) or sin.shape != (t, dh // 2):
        raise DimensionError("rope: cos/sin must have shape (T, head_dim/2)")
    stacked = a.data.reshape(-1, t, dh)
    data = kernels.rope_fwd(stacked, cos, sin).reshape(a.shape)

    def backward(g):
        gx = kernels.rope_bwd(
            np.ascontiguousarray(g).reshape(-1, t, dh), cos, sin
        )
        _accumulate(a, gx.reshape(a.shape))

    return _make_node(data, (a,), backward)


# ---------------------------------------------------------------------------
# structure

def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _make_node(data, (a,), backward)


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    data = np.swapaxes(a.data, ax1, ax2)

    def backward(g):
        _accumulate(a, np.swapaxes(g, ax1, ax2))

    return _make_node(np.ascontiguousarray(data), (a,), backward)


def slice_lastdim(a: Tensor, start: int, stop: int) -> Tensor:
    data = a.data[..., start:stop]

    def backward(g):
        full = np.zeros_like(a.data)
        full[..., start:stop] = g
        _accumulate(a, full)

    return _make_node(np.ascontiguousarray(data), (a,), backward)


def expand_axis(a: Tensor, repeats: int, axis: int) -> Tensor:
    """Insert an axis and tile it (used to broadcast per-sample vectors over tokens)."""
    data = np.repeat(np.expand_dims(a.data, axis), repeats, axis=axis)

    def backward(g):
        _accumulate(a, g.sum(axis=axis))

    return _make_node(data, (a,), backward)


def take_rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Row lookup (embedding): table (V, d), idx int (...,) -> (..., d)."""
    idx = np.asarray(idx)
    data = table.data[idx]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[-1]))
        _accumulate(table, gt)

    return _make_node(data, (table,), backward)


def fused_attention(
    u: Tensor,
    w_qkv: Tensor,
    w_out: Tensor,
    cos: np.ndarray,
    sin: np.ndarray,
    bias: np.ndarray | None,
    num_heads: int,
) -> Tensor:
    """Self-attention in one graph node: QKV projection, rotary positions,
    scaled dot-product with optional additive bias, value mix, output
    projection. The hand-written backward follows the chain rule stage by
    stage; keeping this fused cuts ~20 graph nodes per block, which matters
    on the single-core batches this lab runs.
    """
    batch, t_tokens, d = u.shape
    dh = d // num_heads
    inv_sqrt = 1.0 / np.sqrt(dh)

    qkv = u.data @ w_qkv.data  # (B, T, 3d)
    parts = qkv.reshape(batch, t_tokens, 3, num_heads, dh)
    q = np.ascontiguousarray(parts[:, :, 0].transpose(0, 2, 1, 3))  # (B,H,T,dh)
    k = np.ascontiguousarray(parts[:, :, 1].transpose(0, 2, 1, 3))
    v = np.ascontiguousarray(parts[:, :, 2].transpose(0, 2, 1, 3))
    qr = kernels.rope_fwd(q.reshape(-1, t_tokens, dh), cos, sin).reshape(q.shape)
    kr = kernels.rope_fwd(k.reshape(-1, t_tokens, dh), cos, sin).reshape(k.shape)
    scores = (qr @ np.swapaxes(kr, -1, -2)) * inv_sqrt
    if bias is not None:
        scores = scores + bias
    attn = kernels.softmax_fwd(scores.reshape(-1, t_tokens)).reshape(scores.shape)
    ctx = attn @ v  # (B,H,T,dh)
    merged = np.ascontiguousarray(ctx.transpose(0, 2, 1, 3)).reshape(
        batch, t_tokens, d
    )
    out = merged @ w_out.data

    def backward(g):
        g = np.ascontiguousarray(g)
        g_merged = g @ w_out.data.T
        if w_out.requires_grad or w_out._parents:
            _accumulate(w_out, merged.reshape(-1, d).T @ g.reshape(-1, d))
        g_ctx = np.ascontiguousarray(
            g_merged.reshape(batch, t_tokens, num_heads, dh).transpose(0, 2, 1, 3)
        )
        g_attn = g_ctx @ np.swapaxes(v, -1, -2)
        g_v = np.swapaxes(attn, -1, -2) @ g_ctx
        g_scores = kernels.softmax_bwd(
            attn.reshape(-1, t_tokens), np.ascontiguousarray(g_attn).reshape(-1, t_tokens)
        ).reshape(g_attn.shape)
        g_qr = (g_scores @ kr) * inv_sqrt
        g_kr = (np.swapaxes(g_scores, -1, -2) @ qr) * inv_sqrt
        g_q = kernels.rope_bwd(
            np.ascontiguousarray(g_qr).reshape(-1, t_tokens, dh), cos, sin
        ).reshape(q.shape)
        g_k = kernels.rope_bwd(
            np.ascontiguousarray(g_kr).reshape(-1, t_tokens, dh), cos, sin
        ).reshape(k.shape)
        g_qkv = np.empty((batch, t_tokens, 3, num_heads, dh))
        g_qkv[:, :, 0] = g_q.transpose(0, 2, 1, 3)
        g_qkv[:, :, 1] = g_k.transpose(0, 2, 1, 3)
        g_qkv[:, :, 2] = g_v.transpose(0, 2, 1, 3)
        g_qkv = g_qkv.reshape(batch, t_tokens, 3 * d)
        if u.requires_grad or u._parents:
            _accumulate(u, g_qkv @ w_qkv.data.T)
        if w_qkv.requires_grad or w_qkv._parents:
            _accumulate(
                w_qkv, u.data.reshape(-1, d).T @ g_qkv.reshape(-1, 3 * d)
            )

    return _make_node(out, (u, w_qkv, w_out), backward)


def modulate(x: Tensor, scale: Tensor, shift: Tensor) -> Tensor:
    """Fused x * (1 + scale) + shift with per-sample vectors over tokens.

    x is (B, T, d); scale and shift are (B, d) broadcast across the token
    axis. Their gradients sum over tokens.
    """
    if scale.shape != shift.shape or scale.shape != (x.shape[0], x.shape[-1]):
        raise DimensionError(
            f"modulate: scale/shift {scale.shape} must be (B, d) for x {x.shape}"
        )
    sc = scale.data[:, None, :]
    data = x.data * (1.0 + sc) + shift.data[:, None, :]

    def backward(g):
        if x.requires_grad or x._parents:
            _accumulate(x, g * (1.0 + sc))
        if scale.requires_grad or scale._parents:
            _accumulate(scale, (g * x.data).sum(axis=1))
        if shift.requires_grad or shift._parents:
            _accumulate(shift, g.sum(axis=1))

    return _make_node(data, (x, scale, shift), backward)


def gate_residual(h: Tensor, gate: Tensor, y: Tensor) -> Tensor:
    """Fused residual h + gate * y with a per-sample gate vector.

    h and y are (B, T, d); gate is (B, d) broadcast across tokens.
    """
    if h.shape != y.shape or gate.shape != (h.shape[0], h.shape[-1]):
        raise DimensionError(
            f"gate_residual: gate {gate.shape} must be (B, d) for h {h.shape}"
        )
    gt = gate.data[:, None, :]
    data = h.data + gt * y.data

    def backward(g):
        if h.requires_grad or h._parents:
            _accumulate(h, g)
        if gate.requires_grad or gate._parents:
            _accumulate(gate, (g * y.data).sum(axis=1))
        if y.requires_grad or y._parents:
            _accumulate(y, g * gt)

    return _make_node(data, (h, gate, y), backward)


def where_rows(keep: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Per-row select: out[..., t, :] = a if keep[..., t] else b.

    keep is a constant boolean array broadcast over the feature axis.
    """
    if a.shape != b.shape:
        raise DimensionError(f"where_rows: shapes differ {a.shape} vs {b.shape}")
    if keep.shape != a.shape[:-1]:
        raise DimensionError(
            f"where_rows: keep shape {keep.shape} != row shape {a.shape[:-1]}"
        )
    sel = keep[..., None]
    data = np.where(sel, a.data, b.data)

    def backward(g):
        if a.requires_grad or a._parents:
            _accumulate(a, np.where(sel, g, 0.0))
        if b.requires_grad or b._parents:
            _accumulate(b, np.where(sel, 0.0, g))

    return _make_node(data, (a, b), backward)


# ---------------------------------------------------------------------------
# reductions

def sum_all(a: Tensor) -> Tensor:
    data = np.array(a.data.sum())

    def backward(g):
        _accumulate(a, np.broadcast_to(g, a.shape).copy())

    return _make_node(data, (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    data = np.array(a.data.mean())

    def backward(g):
        _accumulate(a, np.broadcast_to(g / n, a.shape).copy())

    return _make_node(data, (a,), backward)


def mean_axis(a: Tensor, axis: int) -> Tensor:
    n = a.shape[axis]
    data = a.data.mean(axis=axis)

    def backward(g):
        _accumulate(a, np.repeat(np.expand_dims(g / n, axis), n, axis=axis))

    return _make_node(data, (a,), backward)


# ---------------------------------------------------------------------------
# gradient checking

def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-4,
) -> float:
    """Max relative error between reverse-mode and central finite differences.

    f must be a deterministic scalar-valued function. eps must lie in
    [1e-6, 1e-3]. Relative error per coordinate uses max(|analytic|,
    |numeric|, 1e-6) as the denominator so exact zeros compare cleanly.
    """
    if not (1e-6 <= eps <= 1e-3):
        raise ValueError(f"eps must be in [1e-6, 1e-3], got {eps}")
    probe = Tensor(x.data.copy(), requires_grad=True)
    out = f(probe)
    if out.size != 1:
        raise DimensionError("grad_check requires a scalar-valued function")
    out.backward()
    analytic = (
        probe.grad.copy() if probe.grad is not None else np.zeros_like(probe.data)
    )
    if not np.all(np.isfinite(analytic)):
        raise NumericError("non-finite analytic gradient")

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f(Tensor(x.data)).item()
            flat[i] = orig - eps
            lo = f(Tensor(x.data)).item()
            flat[i] = orig
            num_flat[i] = (hi - lo) / (2.0 * eps)
    if not np.all(np.isfinite(numeric)):
        raise NumericError("non-finite finite-difference gradient")

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom))


def gelu_scalar(x: float) -> float:
    """Scalar convenience wrapper around the gelu kernel."""
    return float(kernels.gelu_fwd(np.array([float(x)]))[0])
