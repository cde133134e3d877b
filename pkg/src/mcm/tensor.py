"""Dense float64 arrays with reverse-mode automatic differentiation.

Every tensor tracks the operations that produced it; calling ``backward()``
on a scalar result walks the graph in reverse topological order and
accumulates gradients into every participating tensor that requires them.
Gradients accumulate across backward calls until explicitly zeroed.

The engine is deliberately small: only the operations the pose pipeline
needs, all in float64, all single-threaded per graph.  ``finite_diff_check``
is the independent oracle used throughout the test suite to validate every
analytic gradient against central finite differences.
"""

from __future__ import annotations

import math
import zlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, ShapeError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

# When set to an op name, that op's backward output is scaled by 1.01.
# Used only as a negative control for the property-check runner.
_FAULT_OP: str | None = None

_grad_enabled = True


def set_gradient_fault(op_name: str | None) -> None:
    """Deliberately corrupt the named op's gradient (negative-control hook)."""
    global _FAULT_OP
    _FAULT_OP = op_name


class no_grad:
    """Context manager that disables graph construction."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` back down to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """N-dimensional float64 array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn", "_op")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable[[np.ndarray], tuple] | None = None
        self._op = "leaf"

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: tuple["Tensor", ...],
                grad_fn: Callable[[np.ndarray], tuple], op: str) -> "Tensor":
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._grad_fn = grad_fn
            out._op = op
        return out

    # -- basic introspection ---------------------------------------------------

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
        return float(self.data)

    def numpy(self) -> np.ndarray:
        """The underlying value buffer (do not mutate)."""
        return self.data

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, op={self._op!r}{flag})"

    # -- gradient machinery ----------------------------------------------------

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Reverse-mode pass from a scalar root; accumulates into ``grad``."""
        if self.data.size != 1:
            raise ContractError(
                f"backward() requires a scalar root, got shape {self.data.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._grad_fn is None:
                node._accumulate(g)
                continue
            parent_grads = node._grad_fn(g)
            if _FAULT_OP is not None and node._op == _FAULT_OP:
                parent_grads = tuple(
                    None if pg is None else pg * 1.01 for pg in parent_grads)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    # out-of-place: grad_fns may return aliased views
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

    # -- operator overloads ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and
                       isinstance(shape[0], (tuple, list)) else shape)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def astensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- elementwise arithmetic ------------------------------------------------


def add(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return Tensor._result(a.data + b.data, (a, b), grad_fn, "add")


def sub(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return Tensor._result(a.data - b.data, (a, b), grad_fn, "sub")


def mul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    def grad_fn(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))
    return Tensor._result(a.data * b.data, (a, b), grad_fn, "mul")


def div(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    def grad_fn(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))
    return Tensor._result(a.data / b.data, (a, b), grad_fn, "div")


def neg(a) -> Tensor:
    a = astensor(a)
    return Tensor._result(-a.data, (a,), lambda g: (-g,), "neg")


# -- matrix ops -------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    def grad_fn(g):
        return g @ b.data.T, a.data.T @ g
    return Tensor._result(a.data @ b.data, (a, b), grad_fn, "matmul")


def transpose(a) -> Tensor:
    a = astensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got {a.shape}")
    return Tensor._result(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


# -- reductions -------------------------------------------------------------


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = astensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    def grad_fn(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return Tensor._result(np.asarray(out), (a,), grad_fn, "sum")


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = astensor(a)
    n = a.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def tmax(a, axis: int, keepdims=False) -> Tensor:
    """Max along one axis; gradient routes to the first argmax (tie -> lower index)."""
    a = astensor(a)
    idx = a.data.argmax(axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)
    def grad_fn(g):
        g = np.asarray(g)
        if not keepdims:
            g = np.expand_dims(g, axis)
        buf = np.zeros_like(a.data)
        np.put_along_axis(buf, np.expand_dims(idx, axis), g, axis=axis)
        return (buf,)
    return Tensor._result(out, (a,), grad_fn, "max")


# -- shape ops ---------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = astensor(a)
    old = a.shape
    return Tensor._result(a.data.reshape(shape), (a,),
                          lambda g: (g.reshape(old),), "reshape")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    parts = [astensor(t) for t in tensors]
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]
    def grad_fn(g):
        return tuple(np.ascontiguousarray(piece)
                     for piece in np.split(g, bounds, axis=axis))
    return Tensor._result(np.concatenate([p.data for p in parts], axis=axis),
                          tuple(parts), grad_fn, "concat")


def gather_rows(a, idx) -> Tensor:
    """Index along axis 0 with an integer array; backward scatter-adds."""
    a = astensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    def grad_fn(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx.ravel(), g.reshape(-1, *a.shape[1:]))
        return (buf,)
    return Tensor._result(a.data[idx], (a,), grad_fn, "gather_rows")


def flip0(a) -> Tensor:
    """Reverse order along axis 0 (an involution)."""
    a = astensor(a)
    return Tensor._result(a.data[::-1].copy(), (a,),
                          lambda g: (g[::-1].copy(),), "flip0")


def where(cond, a, b) -> Tensor:
    """Select elementwise by a boolean array; cond carries no gradient."""
    cond = np.asarray(cond, dtype=bool)
    a, b = astensor(a), astensor(b)
    def grad_fn(g):
        return (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                _unbroadcast(np.where(cond, 0.0, g), b.shape))
    return Tensor._result(np.where(cond, a.data, b.data), (a, b), grad_fn, "where")


# -- elementwise nonlinear ---------------------------------------------------


def texp(a) -> Tensor:
    a = astensor(a)
    out = np.exp(a.data)
    return Tensor._result(out, (a,), lambda g: (g * out,), "exp")


def tlog(a) -> Tensor:
    a = astensor(a)
    return Tensor._result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tsqrt(a) -> Tensor:
    a = astensor(a)
    out = np.sqrt(a.data)
    return Tensor._result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tabs(a) -> Tensor:
    a = astensor(a)
    return Tensor._result(np.abs(a.data), (a,),
                          lambda g: (g * np.sign(a.data),), "abs")


_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


def sigmoid(a) -> Tensor:
    """Elementwise logistic function, strictly inside (0, 1) for finite input.

    Saturated values are pulled one ulp inside the interval so the open-range
    contract holds even where float64 would round to exactly 0 or 1.
    """
    a = astensor(a)
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    out = np.clip(out, _SIG_LO, _SIG_HI)
    return Tensor._result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def gelu(a) -> Tensor:
    """x * Phi(x) with the exact Gaussian CDF (no tanh approximation)."""
    a = astensor(a)
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    out = a.data * cdf
    def grad_fn(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)
        return (g * (cdf + a.data * pdf),)
    return Tensor._result(out, (a,), grad_fn, "gelu")


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = astensor(a)
    mask = a.data > 0
    out = np.where(mask, a.data, slope * a.data)
    return Tensor._result(out, (a,),
                          lambda g: (np.where(mask, g, slope * g),), "leaky_relu")


# -- structured ops ----------------------------------------------------------


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then apply affine."""
    x, gain, bias = astensor(x), astensor(gain), astensor(bias)
    if x.shape[-1] < 2:
        raise ContractError(f"layer_norm needs >= 2 channels, got {x.shape}")
    mu = tmean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    inv = div(1.0, tsqrt(add(var, eps)))
    return add(mul(mul(centered, inv), gain), bias)


def conv2d(x, weight, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution on one HWC image with a [kh, kw, Cin, Cout] kernel."""
    x, weight = astensor(x), astensor(weight)
    kh, kw, cin, cout = weight.shape
    if x.ndim != 3 or x.shape[2] != cin:
        raise ShapeError(f"conv2d input {x.shape} incompatible with kernel {weight.shape}")
    xp = np.pad(x.data, ((pad, pad), (pad, pad), (0, 0))) if pad else x.data
    hp, wp, _ = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    s0, s1, s2 = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp, shape=(ho, wo, kh, kw, cin),
        strides=(s0 * stride, s1 * stride, s0, s1, s2))
    cols2 = cols.reshape(ho * wo, kh * kw * cin)
    wmat = weight.data.reshape(kh * kw * cin, cout)
    out = cols2 @ wmat
    if bias is not None:
        bias = astensor(bias)
        out = out + bias.data
    out = out.reshape(ho, wo, cout)

    def grad_fn(g):
        gflat = g.reshape(ho * wo, cout)
        gw = (cols2.T @ gflat).reshape(kh, kw, cin, cout)
        gxp = np.zeros((hp, wp, cin))
        for ki in range(kh):
            for kj in range(kw):
                gxp[ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += (
                    g @ weight.data[ki, kj].T)
        gx = gxp[pad:hp - pad, pad:wp - pad] if pad else gxp
        gb = gflat.sum(axis=0) if bias is not None else None
        if bias is None:
            return gx, gw
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out, parents, grad_fn, "conv2d")


def upsample2x(x) -> Tensor:
    """Nearest-neighbor 2x spatial upsampling of an HWC image."""
    x = astensor(x)
    out = np.repeat(np.repeat(x.data, 2, axis=0), 2, axis=1)
    h, w, c = x.shape
    def grad_fn(g):
        return (g.reshape(h, 2, w, 2, c).sum(axis=(1, 3)),)
    return Tensor._result(out, (x,), grad_fn, "upsample2x")


# -- parameters and modules ---------------------------------------------------


def _init_values(scheme: str, shape: tuple[int, ...], seed: int) -> np.ndarray:
    """Materialize an initializer; same (scheme, shape, seed) -> identical bits."""
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF]))
    kind, _, arg = scheme.partition(":")
    if kind == "zeros":
        return np.zeros(shape)
    if kind == "ones":
        return np.ones(shape)
    if kind == "constant":
        return np.full(shape, float(arg))
    if kind == "normal":
        return rng.normal(0.0, float(arg), size=shape)
    if kind == "uniform":
        lo, hi = (float(v) for v in arg.split(","))
        return rng.uniform(lo, hi, size=shape)
    if kind == "log_uniform":
        lo, hi = (float(v) for v in arg.split(","))
        return np.exp(rng.uniform(math.log(lo), math.log(hi), size=shape))
    if kind == "state_decay":
        # row-constant diagonal transition log-magnitudes: log(1), log(2), ...
        n = shape[-1]
        return np.broadcast_to(np.log(np.arange(1, n + 1, dtype=np.float64)),
                               shape).copy()
    raise ContractError(f"unknown initializer scheme {scheme!r}")


def param_seed(master_seed: int, name: str) -> int:
    """Stable per-parameter seed derived from the master seed and name."""
    return (master_seed * 0x9E3779B1 + zlib.crc32(name.encode())) & 0x7FFFFFFF


class Parameter:
    """Named learnable tensor with a reproducible initializer."""

    def __init__(self, name: str, shape: tuple[int, ...], scheme: str, seed: int):
        self.name = name
        self.scheme = scheme
        self.seed = seed
        self.value = Tensor(_init_values(scheme, tuple(shape), seed),
                            requires_grad=True)
        self.value.zero_grad()

    def reinit(self) -> None:
        """Regenerate the value bit-identically from (scheme, seed)."""
        self.value = Tensor(_init_values(self.scheme, self.value.shape, self.seed),
                            requires_grad=True)
        self.value.zero_grad()

    @property
    def grad(self) -> np.ndarray:
        return self.value.grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Module:
    """Minimal container: walks attributes to collect Parameters."""

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        seen: set[int] = set()
        self._collect(self, out, seen)
        return out

    @staticmethod
    def _collect(obj, out: list[Parameter], seen: set[int]) -> None:
        if id(obj) in seen:
            return
        seen.add(id(obj))
        if isinstance(obj, Parameter):
            out.append(obj)
            return
        if isinstance(obj, Module):
            for v in vars(obj).values():
                Module._collect(v, out, seen)
        elif isinstance(obj, (list, tuple)):
            for v in obj:
                Module._collect(v, out, seen)
        elif isinstance(obj, dict):
            for v in obj.values():
                Module._collect(v, out, seen)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.value.zero_grad()


# -- the finite-difference oracle ---------------------------------------------


def finite_diff_check(f: Callable[[], Tensor],
                      params: Iterable,
                      h: float = 1e-5) -> float:
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f`` must be a deterministic scalar function of the given parameters.
    For each scalar entry theta the numeric derivative (f(theta+h) -
    f(theta-h)) / 2h is compared to the analytic one; the return value is the
    worst relative error with denominator max(|analytic|, |numeric|, 1e-8).
    """
    tensors = [p.value if isinstance(p, Parameter) else p for p in params]
    for t in tensors:
        t.zero_grad()
    out = f()
    if out.data.size != 1:
        raise ContractError("finite_diff_check needs a scalar function")
    out.backward()
    analytic = [t.grad.copy() for t in tensors]

    worst = 0.0
    for t, ana in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(f().data)
            flat[i] = orig - h
            f_minus = float(f().data)
            flat[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise ContractError(
                    f"non-finite value when perturbing entry {i} of shape "
                    f"{t.shape} by +/-{h}")
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = ana.reshape(-1)[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst
