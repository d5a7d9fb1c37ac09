"""Tape-based reverse-mode differentiation over the package's closed op set.

The op set is exactly what the spectral operator models need: elementwise
arithmetic, tanh, pointwise channel-mixing affine maps, per-mode complex
matrix-vector products, forward/inverse DFTs (full and half spectrum), mode
truncation/embedding, and reductions.

Gradient conventions
--------------------
Losses are real scalars.  For a real node ``y`` the cotangent is the plain
gradient ``dL/dy``; for a complex node it is the conjugate Wirtinger
derivative ``dL/d conj(y)``.  A complex parameter's ``grad`` therefore holds
``dL/d conj(p)``, so steepest descent is ``p <- p - lr * grad`` and the
per-component real derivatives are ``dL/dRe(p) = 2 Re(grad)`` and
``dL/dIm(p) = 2 Im(grad)`` (what finite differences measure).

Primal values are computed eagerly; each recorded op keeps a pullback closure
holding only the arrays it needs.  Two backward passes over one tape produce
bit-identical gradients (fixed traversal and accumulation order).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .grids import (
    dft_raw,
    embed_mode_box,
    idft_raw,
    irdft_raw,
    rdft_raw,
    take_mode_box,
)


class TapeError(ValueError):
    """Raised on malformed tape usage (shape/dtype mismatch, bad backward)."""


class Param:
    """A named trainable array with a persistent gradient accumulator.

    ``grad`` is only reset by an explicit ``zero_grad()`` call; repeated
    backward passes add into it.
    """

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value):
        arr = np.array(value, dtype=np.complex128 if np.iscomplexobj(value) else np.float64)
        self.name = name
        self.value = arr
        self.grad = np.zeros_like(arr)

    @property
    def is_complex(self) -> bool:
        return self.value.dtype == np.complex128

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def __repr__(self) -> str:  # pragma: no cover
        return f"Param({self.name!r}, shape={self.value.shape})"


@dataclass
class _OpRecord:
    out: int
    inputs: tuple[int, ...]
    vjp: Callable[[np.ndarray], tuple]


class Node:
    """Handle to a tape entry; holds the eagerly computed primal value."""

    __slots__ = ("tape", "idx", "value")

    def __init__(self, tape: "Tape", idx: int, value: np.ndarray):
        self.tape = tape
        self.idx = idx
        self.value = value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def is_complex(self) -> bool:
        return self.value.dtype == np.complex128

    def __add__(self, other: "Node") -> "Node":
        return add(self, other)

    def __sub__(self, other: "Node") -> "Node":
        return sub(self, other)

    def __mul__(self, other: "Node") -> "Node":
        return mul(self, other)

    def __neg__(self) -> "Node":
        return neg(self)


class Tape:
    """Ordered record of differentiable ops; single-owner while recording."""

    def __init__(self):
        self._n = 0
        self._ops: list[_OpRecord] = []
        self._param_nodes: dict[int, tuple[Param, int]] = {}

    # -- node creation ----------------------------------------------------

    def _new_node(self, value: np.ndarray) -> Node:
        node = Node(self, self._n, value)
        self._n += 1
        return node

    def constant(self, value) -> Node:
        arr = np.asarray(value, dtype=np.complex128 if np.iscomplexobj(value) else np.float64)
        return self._new_node(arr)

    def param(self, p: Param) -> Node:
        """Leaf node for a parameter; one shared node per parameter per tape."""
        key = id(p)
        if key in self._param_nodes:
            _, idx = self._param_nodes[key]
            return Node(self, idx, p.value)
        node = self._new_node(p.value)
        self._param_nodes[key] = (p, node.idx)
        return node

    def record(self, value: np.ndarray, inputs: Sequence[Node], vjp) -> Node:
        for x in inputs:
            if x.tape is not self:
                raise TapeError("input node belongs to a different tape")
        node = self._new_node(value)
        self._ops.append(_OpRecord(node.idx, tuple(x.idx for x in inputs), vjp))
        return node

    @property
    def num_ops(self) -> int:
        return len(self._ops)

    # -- reverse sweep ----------------------------------------------------

    def backward(self, loss: Node) -> None:
        """Accumulate dL/dp into every parameter's ``grad``.

        ``loss`` must be a real scalar node.
        """
        if loss.tape is not self:
            raise TapeError("loss node belongs to a different tape")
        if loss.value.shape != ():
            raise TapeError("backward requires a scalar loss node")
        if loss.value.dtype != np.float64:
            raise TapeError("backward requires a real loss node")
        cots: dict[int, np.ndarray] = {loss.idx: np.array(1.0)}
        for op in reversed(self._ops):
            c = cots.pop(op.out, None)
            if c is None:
                continue
            grads = op.vjp(c)
            for idx, g in zip(op.inputs, grads):
                if g is None:
                    continue
                acc = cots.get(idx)
                cots[idx] = g if acc is None else acc + g
        for p, idx in self._param_nodes.values():
            c = cots.get(idx)
            if c is not None:
                p.grad += c


# ---------------------------------------------------------------------------
# dtype helpers
# ---------------------------------------------------------------------------


def _require_real(x: Node, op: str) -> None:
    if x.is_complex:
        raise TapeError(f"{op} expects a real node")


def _require_complex(x: Node, op: str) -> None:
    if not x.is_complex:
        raise TapeError(f"{op} expects a complex node")


def _require_same_shape(x: Node, y: Node, op: str) -> None:
    if x.shape != y.shape:
        raise TapeError(f"{op}: shape mismatch {x.shape} vs {y.shape}")


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------


def add(x: Node, y: Node) -> Node:
    _require_same_shape(x, y, "add")
    if x.is_complex != y.is_complex:
        raise TapeError("add: operand kinds differ")
    return x.tape.record(x.value + y.value, (x, y), lambda c: (c, c))


def sub(x: Node, y: Node) -> Node:
    _require_same_shape(x, y, "sub")
    if x.is_complex != y.is_complex:
        raise TapeError("sub: operand kinds differ")
    return x.tape.record(x.value - y.value, (x, y), lambda c: (c, -c))


def neg(x: Node) -> Node:
    return x.tape.record(-x.value, (x,), lambda c: (-c,))


def mul(x: Node, y: Node) -> Node:
    """Elementwise product; for complex operands the pullback conjugates."""
    _require_same_shape(x, y, "mul")
    if x.is_complex != y.is_complex:
        raise TapeError("mul: operand kinds differ")
    xv, yv = x.value, y.value
    if x.is_complex:
        return x.tape.record(xv * yv, (x, y),
                             lambda c: (c * np.conj(yv), c * np.conj(xv)))
    return x.tape.record(xv * yv, (x, y), lambda c: (c * yv, c * xv))


def scale(x: Node, s: float) -> Node:
    s = float(s)
    return x.tape.record(x.value * s, (x,), lambda c: (c * s,))


def mul_const(x: Node, a: np.ndarray) -> Node:
    """Multiply by a constant array (broadcast against x, result keeps x's shape)."""
    a = np.asarray(a)
    out = x.value * a
    if out.shape != x.shape:
        raise TapeError("mul_const: constant must broadcast to the node's shape")
    if np.iscomplexobj(a) or x.is_complex:
        ac = np.conj(a)
        return x.tape.record(out, (x,), lambda c: (c * ac,))
    return x.tape.record(out, (x,), lambda c: (c * a,))


def tanh(x: Node) -> Node:
    _require_real(x, "tanh")
    y = np.tanh(x.value)
    return x.tape.record(y, (x,), lambda c: (c * (1.0 - y * y),))


def real_part(x: Node) -> Node:
    """Real part of a complex node.  The discarded imaginary magnitude is
    available via ``imag_residue`` on the primal for realness checks."""
    _require_complex(x, "real_part")
    return x.tape.record(x.value.real.copy(), (x,),
                         lambda c: ((0.5 * c).astype(np.complex128),))


def conj(x: Node) -> Node:
    _require_complex(x, "conj")
    return x.tape.record(np.conj(x.value), (x,), lambda c: (np.conj(c),))


def promote(x: Node) -> Node:
    """Embed a real node into the complex numbers."""
    _require_real(x, "promote")
    return x.tape.record(x.value.astype(np.complex128), (x,),
                         lambda c: (2.0 * c.real.copy(),))


def imag_residue(x: Node) -> float:
    """Max |Im| of a complex node's primal value (diagnostic, not recorded)."""
    return float(np.max(np.abs(x.value.imag))) if x.value.size else 0.0


# ---------------------------------------------------------------------------
# Fourier ops (full and half spectrum)
# ---------------------------------------------------------------------------


def dft(x: Node, axes: Sequence[int]) -> Node:
    _require_complex(x, "dft")
    axes_t = tuple(int(a) for a in axes)
    n_prod = float(np.prod([x.shape[a] for a in axes_t]))
    y = dft_raw(x.value, axes_t)
    return x.tape.record(y, (x,), lambda c: (idft_raw(c, axes_t) * n_prod,))


def idft(x: Node, axes: Sequence[int]) -> Node:
    _require_complex(x, "idft")
    axes_t = tuple(int(a) for a in axes)
    n_prod = float(np.prod([x.shape[a] for a in axes_t]))
    y = idft_raw(x.value, axes_t)
    return x.tape.record(y, (x,), lambda c: (dft_raw(c, axes_t) / n_prod,))


def _double_self_conjugate(c: np.ndarray, n: int) -> np.ndarray:
    """Double (and realify) the DC and, for even n, the Nyquist column."""
    out = c.copy()
    out[..., 0] = 2.0 * out[..., 0].real
    if n % 2 == 0:
        out[..., -1] = 2.0 * out[..., -1].real
    return out


def _halve_self_conjugate(c: np.ndarray, n: int) -> np.ndarray:
    out = c.copy()
    out[..., 0] = 0.5 * out[..., 0].real
    if n % 2 == 0:
        out[..., -1] = 0.5 * out[..., -1].real
    return out


def rdft(x: Node) -> Node:
    """Half-spectrum forward DFT of a real node along the last axis."""
    _require_real(x, "rdft")
    n = x.shape[-1]
    y = rdft_raw(x.value, axis=-1)
    return x.tape.record(
        y, (x,),
        lambda c: (float(n) * irdft_raw(_double_self_conjugate(c, n), n, axis=-1),),
    )


def irdft(x: Node, n: int) -> Node:
    """Real synthesis from a half spectrum along the last axis.

    Imaginary parts of the self-conjugate entries are explicitly dropped, so
    the op's behaviour does not depend on the FFT backend's conventions.
    """
    _require_complex(x, "irdft")
    n = int(n)
    if x.shape[-1] != n // 2 + 1:
        raise TapeError(f"irdft: expected {n // 2 + 1} columns for length {n}")
    v = x.value.copy()
    v[..., 0] = v[..., 0].real
    if n % 2 == 0:
        v[..., -1] = v[..., -1].real
    y = irdft_raw(v, n, axis=-1)
    return x.tape.record(
        y, (x,),
        lambda c: (_halve_self_conjugate(rdft_raw(c, axis=-1), n) / float(n),),
    )


# ---------------------------------------------------------------------------
# mode bookkeeping
# ---------------------------------------------------------------------------


def take_box(x: Node, axes: tuple[int, ...], widths: tuple[int, ...]) -> Node:
    sizes = tuple(x.shape[a] for a in axes)
    y = take_mode_box(x.value, axes, widths)
    return x.tape.record(
        y, (x,), lambda c: (embed_mode_box(c, axes, widths, sizes),)
    )


def embed_box(x: Node, axes: tuple[int, ...], widths: tuple[int, ...],
              sizes: tuple[int, ...]) -> Node:
    y = embed_mode_box(x.value, axes, widths, sizes)
    return x.tape.record(
        y, (x,), lambda c: (take_mode_box(c, axes, widths),)
    )


def half_take(x: Node, w: int) -> Node:
    """Keep the leading w columns of the last (half-spectrum) axis."""
    k = x.shape[-1]
    y = np.ascontiguousarray(x.value[..., :w])

    def vjp(c):
        out = np.zeros(c.shape[:-1] + (k,), dtype=c.dtype)
        out[..., :w] = c
        return (out,)

    return x.tape.record(y, (x,), vjp)


def half_embed(x: Node, k: int) -> Node:
    """Zero-pad the last axis from w to k half-spectrum columns."""
    w = x.shape[-1]
    if w > k:
        raise TapeError("half_embed: block wider than the target axis")
    y = np.zeros(x.shape[:-1] + (k,), dtype=x.value.dtype)
    y[..., :w] = x.value
    return x.tape.record(y, (x,), lambda c: (np.ascontiguousarray(c[..., :w]),))


def _reverse_conj_box(a: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:
    out = np.conj(np.flip(a, axis=axes))
    out = np.roll(out, shift=(1,) * len(axes), axis=axes)
    return out


def _unpaired_mask(shape: tuple[int, ...], axes: tuple[int, ...],
                   widths: tuple[int, ...]) -> np.ndarray:
    mask = np.ones(tuple(shape[a] for a in axes), dtype=np.float64)
    for i, w in enumerate(widths):
        sl = [slice(None)] * len(axes)
        sl[i] = w  # box index w carries mode -w, whose mirror +w is not retained
        mask[tuple(sl)] = 0.0
    full = [1] * len(shape)
    for i, a in enumerate(axes):
        full[a] = shape[a]
    return mask.reshape(full)


def hermitianize(x: Node, axes: tuple[int, ...], widths: tuple[int, ...]) -> Node:
    """Project a retained-mode tensor onto Hermitian symmetry, K(-m) = conj(K(m)).

    The unpaired band at mode -w per axis (mirror +w falls outside the box) is
    zeroed; spectral convolutions with the projected kernel map real fields to
    real fields up to roundoff.  The projection is self-adjoint, so the
    pullback is the projection itself.
    """
    _require_complex(x, "hermitianize")
    for a, w in zip(axes, widths):
        if x.shape[a] != 2 * w:
            raise TapeError("hermitianize: axis length must equal 2*width")
    mask = _unpaired_mask(x.shape, axes, widths)

    def project(a: np.ndarray) -> np.ndarray:
        return 0.5 * (a + _reverse_conj_box(a, axes)) * mask

    return x.tape.record(project(x.value), (x,), lambda c: (project(c),))


# ---------------------------------------------------------------------------
# linear-algebra ops
# ---------------------------------------------------------------------------


def channel_linear(x: Node, w: Node, b: Node | None = None) -> Node:
    """Pointwise channel mixing: y[s, o, g...] = sum_i W[o, i] x[s, i, g...] + b[o]."""
    _require_real(x, "channel_linear")
    _require_real(w, "channel_linear")
    if w.value.ndim != 2 or x.value.ndim < 2 or x.shape[1] != w.shape[1]:
        raise TapeError(f"channel_linear: W {w.shape} does not act on x {x.shape}")
    batch = x.shape[0]
    rest = x.shape[2:]
    n_in = w.shape[1]
    n_out = w.shape[0]
    x2 = np.ascontiguousarray(np.moveaxis(x.value, 1, 0)).reshape(n_in, -1)
    wv = w.value
    y2 = wv @ x2
    y = np.moveaxis(y2.reshape(n_out, batch, *rest), 0, 1)
    inputs: tuple[Node, ...]
    if b is not None:
        _require_real(b, "channel_linear")
        if b.shape != (n_out,):
            raise TapeError("channel_linear: bias shape mismatch")
        y = y + b.value.reshape((1, n_out) + (1,) * len(rest))
        inputs = (x, w, b)
    else:
        inputs = (x, w)

    def vjp(c):
        c2 = np.ascontiguousarray(np.moveaxis(c, 1, 0)).reshape(n_out, -1)
        gx = np.moveaxis((wv.T @ c2).reshape(n_in, batch, *rest), 0, 1)
        gw = c2 @ x2.T
        if b is not None:
            gb = c2.sum(axis=1)
            return (gx, gw, gb)
        return (gx, gw)

    return x.tape.record(np.ascontiguousarray(y), inputs, vjp)


def add_channel_bias(x: Node, c_param: Node) -> Node:
    """Add a per-channel constant: y[s, h, g...] = x[s, h, g...] + c[h]."""
    _require_real(x, "add_channel_bias")
    _require_real(c_param, "add_channel_bias")
    ch = x.shape[1]
    if c_param.shape != (ch,):
        raise TapeError("add_channel_bias: channel count mismatch")
    rest = x.value.ndim - 2
    y = x.value + c_param.value.reshape((1, ch) + (1,) * rest)
    axes = (0,) + tuple(range(2, x.value.ndim))
    return x.tape.record(y, (x, c_param), lambda c: (c, c.sum(axis=axes)))


def matvec_modes(k: Node, x: Node) -> Node:
    """Per-mode matrix-vector product.

    ``k``: (*modes, o, i) complex, ``x``: (batch, i, *modes) complex,
    returns (batch, o, *modes).
    """
    _require_complex(k, "matvec_modes")
    _require_complex(x, "matvec_modes")
    modes = k.shape[:-2]
    o, i = k.shape[-2], k.shape[-1]
    if x.shape[1] != i or x.shape[2:] != modes:
        raise TapeError(f"matvec_modes: x {x.shape} does not match kernel {k.shape}")
    batch = x.shape[0]
    m = int(np.prod(modes)) if modes else 1
    k2 = k.value.reshape(m, o, i)
    x2 = np.ascontiguousarray(
        x.value.reshape(batch, i, m).transpose(2, 1, 0))  # (m, i, batch)
    y2 = np.matmul(k2, x2)  # (m, o, batch)
    y = np.ascontiguousarray(y2.transpose(2, 1, 0)).reshape((batch, o) + modes)

    def vjp(c):
        c2 = np.ascontiguousarray(
            c.reshape(batch, o, m).transpose(2, 1, 0))  # (m, o, batch)
        gk = np.matmul(c2, np.conj(x2).transpose(0, 2, 1)).reshape(k.shape)
        gx2 = np.matmul(np.conj(k2).transpose(0, 2, 1), c2)  # (m, i, batch)
        gx = np.ascontiguousarray(gx2.transpose(2, 1, 0)).reshape(x.shape)
        return (gk, gx)

    return k.tape.record(y, (k, x), vjp)


def matvec_time(kt: Node, x: Node) -> Node:
    """Time-indexed per-space-mode product for the initial-state term.

    ``kt``: (n_t, *space_modes, o, i) complex, ``x``: (batch, i, *space_modes),
    returns (batch, o, n_t, *space_modes).
    """
    _require_complex(kt, "matvec_time")
    _require_complex(x, "matvec_time")
    n_t = kt.shape[0]
    modes = kt.shape[1:-2]
    o, i = kt.shape[-2], kt.shape[-1]
    if x.shape[1] != i or x.shape[2:] != modes:
        raise TapeError(f"matvec_time: x {x.shape} does not match kernel {kt.shape}")
    batch = x.shape[0]
    s = int(np.prod(modes)) if modes else 1
    k2 = kt.value.reshape(n_t, s, o, i)
    x2 = np.ascontiguousarray(
        x.value.reshape(batch, i, s).transpose(2, 1, 0))[None]  # (1, s, i, batch)
    y2 = np.matmul(k2, x2)  # (n_t, s, o, batch)
    y = np.ascontiguousarray(y2.transpose(3, 2, 0, 1)).reshape(
        (batch, o, n_t) + modes)

    def vjp(c):
        c2 = np.ascontiguousarray(
            c.reshape(batch, o, n_t, s).transpose(2, 3, 1, 0))  # (n_t, s, o, batch)
        gk = np.matmul(c2, np.conj(x2).transpose(0, 1, 3, 2)).reshape(kt.shape)
        gx2 = np.matmul(np.conj(k2).transpose(0, 1, 3, 2), c2).sum(axis=0)  # (s, i, batch)
        gx = np.ascontiguousarray(gx2.transpose(2, 1, 0)).reshape(x.shape)
        return (gk, gx)

    return kt.tape.record(y, (kt, x), vjp)


def time_eval_matrix(n_t: int, w_t: int) -> np.ndarray:
    """Evaluation of the retained time modes on the n_t-point grid.

    E[i, j] = exp(2 pi i k_j i / n_t) with k_j the signed mode of box slot j;
    this is the zero-padded unnormalized inverse transform, i.e. a plain
    Fourier-series evaluation, so it is independent of the grid size used at
    training time.
    """
    i = np.arange(n_t).reshape(-1, 1)
    k = np.concatenate([np.arange(w_t), np.arange(-w_t, 0)]).reshape(1, -1)
    return np.exp(2j * np.pi * (i * k) / n_t)


def time_eval(k: Node, n_t: int) -> Node:
    """Contract the kernel's leading time-mode axis against the grid times."""
    _require_complex(k, "time_eval")
    w2 = k.shape[0]
    e = time_eval_matrix(int(n_t), w2 // 2)
    y = np.tensordot(e, k.value, axes=(1, 0))
    eh = np.conj(e).T
    return k.tape.record(y, (k,), lambda c: (np.tensordot(eh, c, axes=(1, 0)),))


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------


def concat_channels(xs: Sequence[Node]) -> Node:
    for x in xs:
        _require_real(x, "concat_channels")
    sizes = [x.shape[1] for x in xs]
    y = np.concatenate([x.value for x in xs], axis=1)
    offsets = np.cumsum([0] + sizes)

    def vjp(c):
        return tuple(
            np.ascontiguousarray(c[:, offsets[j]:offsets[j + 1]])
            for j in range(len(sizes))
        )

    return xs[0].tape.record(y, tuple(xs), vjp)


def reshape(x: Node, shape: tuple[int, ...]) -> Node:
    old = x.shape
    return x.tape.record(x.value.reshape(shape), (x,),
                         lambda c: (c.reshape(old),))


def contract_noise(x: Node, drive: np.ndarray) -> Node:
    """Apply a matrix field to the (constant) noise: y[s,h,...] = sum_q x[s,h,q,...] w[s,q,...]."""
    _require_real(x, "contract_noise")
    w = np.asarray(drive, dtype=np.float64)
    if x.value.ndim != w.ndim + 1 or x.shape[0] != w.shape[0] or x.shape[2] != w.shape[1]:
        raise TapeError(f"contract_noise: x {x.shape} does not match drive {w.shape}")
    ww = w[:, None]
    y = (x.value * ww).sum(axis=2)
    return x.tape.record(y, (x,), lambda c: (c[:, :, None] * ww,))


def sum_all(x: Node) -> Node:
    _require_real(x, "sum_all")
    shape = x.shape
    y = np.array(np.sum(x.value))
    return x.tape.record(y, (x,), lambda c: (np.full(shape, float(c)),))


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def grad_check(
    loss_fn: Callable[[Tape], Node],
    params: Sequence[Param],
    h: float = 1e-6,
    max_components: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max over parameter components of |analytic - central difference| / (|analytic| + 1e-12).

    ``loss_fn`` rebuilds the scalar loss on a fresh tape from the current
    parameter values.  Complex parameters are checked per real component, i.e.
    against ``2 Re(grad)`` / ``2 Im(grad)``.
    """
    for p in params:
        p.zero_grad()
    tape = Tape()
    loss = loss_fn(tape)
    if loss.value.shape != ():
        raise TapeError("grad_check requires a scalar-valued expression")
    tape.backward(loss)

    def eval_loss() -> float:
        t = Tape()
        return float(loss_fn(t).value)

    worst = 0.0
    for p in params:
        flat = p.value.view(np.float64).reshape(-1)
        analytic = p.grad.view(np.float64).reshape(-1)
        factor = 2.0 if p.is_complex else 1.0
        idxs = np.arange(flat.size)
        if max_components is not None and flat.size > max_components:
            gen = rng if rng is not None else np.random.default_rng(0)
            idxs = gen.choice(flat.size, size=max_components, replace=False)
            idxs.sort()
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = eval_loss()
            flat[i] = orig - h
            f_minus = eval_loss()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            a = factor * analytic[i]
            err = abs(a - fd) / (abs(a) + 1e-12)
            if err > worst:
                worst = err
    return worst
