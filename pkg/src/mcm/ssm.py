"""Diagonal state-space sequence kernels evaluated along the keypoint axis.

A continuous linear system x'(t) = A x(t) + B u(t), y = C x + D u (diagonal
A, one independent system per channel) is discretized by zero-order hold and
then evaluated either as a step-by-step recurrence or as a causal convolution
with the kernel (CB, CAB, ..., CA^{L-1}B).  Both evaluation routes must agree
to < 1e-9; the test suite enforces that dual-form equivalence.

Token sequences are short here (the number of hand keypoints), so the naive
O(L^2) convolution and the Python-level scan are both perfectly adequate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Module, Parameter, Tensor, astensor


@dataclass
class ContinuousSSM:
    """Per-channel continuous parameters; `a` holds the diagonal entries.

    Shapes: a, b, c are [channels x state_dim]; d is [channels].
    Stability requires every diagonal entry of `a` to be strictly negative.
    """

    a: Tensor
    b: Tensor
    c: Tensor
    d: Tensor

    def __post_init__(self):
        self.a, self.b = astensor(self.a), astensor(self.b)
        self.c, self.d = astensor(self.c), astensor(self.d)

    @property
    def num_channels(self) -> int:
        return self.a.shape[0]

    @property
    def state_dim(self) -> int:
        return self.a.shape[1]


@dataclass
class DiscreteSSM:
    """Zero-order-hold discretization of a ContinuousSSM (same layout)."""

    a_bar: Tensor
    b_bar: Tensor
    c_bar: Tensor
    d_bar: Tensor
    delta: Tensor

    def __post_init__(self):
        self.a_bar, self.b_bar = astensor(self.a_bar), astensor(self.b_bar)
        self.c_bar, self.d_bar = astensor(self.c_bar), astensor(self.d_bar)
        self.delta = astensor(self.delta)

    @property
    def num_channels(self) -> int:
        return self.a_bar.shape[0]


@dataclass
class SSMKernel:
    """Causal convolution taps [L x channels] plus the passthrough term."""

    taps: Tensor
    passthrough: Tensor

    @property
    def length(self) -> int:
        return self.taps.shape[0]


def discretize(cont: ContinuousSSM, delta) -> DiscreteSSM:
    """Zero-order hold: a_bar = exp(dt*a), b_bar = (exp(dt*a) - 1)/a * b.

    `delta` is one positive step per channel.  Entries with a == 0 use the
    analytic limit b_bar = dt * b instead of the 0/0 expression.
    """
    delta = astensor(delta)
    if np.any(delta.data <= 0):
        raise ContractError("discretization step must be positive")
    dt = T.reshape(delta, (cont.num_channels, 1))
    a_bar = T.texp(T.mul(dt, cont.a))
    zero = cont.a.data == 0.0
    a_safe = T.where(zero, np.ones_like(cont.a.data), cont.a)
    b_scale = T.where(zero, T.mul(dt, Tensor(np.ones_like(cont.a.data))),
                      T.div(T.sub(a_bar, 1.0), a_safe))
    return DiscreteSSM(a_bar=a_bar, b_bar=T.mul(b_scale, cont.b),
                       c_bar=cont.c, d_bar=cont.d, delta=delta)


def scan_recurrent(d: DiscreteSSM, u: Tensor) -> Tensor:
    """Step recurrence x_k = a_bar x_{k-1} + b_bar u_k from x_0 = 0.

    `u` is [L x channels]; the output has the same shape.  Differentiable
    through all discrete parameters and the input.
    """
    u = astensor(u)
    if u.ndim != 2 or u.shape[1] != d.num_channels:
        raise ShapeError(f"input {u.shape} does not match {d.num_channels} channels")
    length = u.shape[0]
    state = Tensor(np.zeros_like(d.a_bar.data))
    rows = []
    for k in range(length):
        u_k = T.reshape(T.gather_rows(u, np.array([k])), (d.num_channels, 1))
        state = T.add(T.mul(d.a_bar, state), T.mul(d.b_bar, u_k))
        y_k = T.add(T.tsum(T.mul(d.c_bar, state), axis=1),
                    T.mul(d.d_bar, T.reshape(u_k, (d.num_channels,))))
        rows.append(T.reshape(y_k, (1, d.num_channels)))
    return T.concat(rows, axis=0)


def build_kernel(d: DiscreteSSM, length: int) -> SSMKernel:
    """Materialize taps (CB, CAB, ..., CA^{L-1}B) per channel."""
    if length < 1:
        raise ContractError("kernel length must be >= 1")
    w = d.b_bar
    rows = []
    for _ in range(length):
        tap = T.tsum(T.mul(d.c_bar, w), axis=1)
        rows.append(T.reshape(tap, (1, d.num_channels)))
        w = T.mul(d.a_bar, w)
    return SSMKernel(taps=T.concat(rows, axis=0), passthrough=d.d_bar)


def apply_kernel(k: SSMKernel, u: Tensor) -> Tensor:
    """Causal per-channel convolution y_t = sum_{i<=t} taps_i * u_{t-i} + D u_t."""
    u = astensor(u)
    length = u.shape[0]
    if length != k.length:
        raise ShapeError(f"kernel length {k.length} != sequence length {length}")
    channels = u.shape[1]
    rows = []
    for t in range(length):
        # taps[0..t] paired with u[t..0]
        taps_t = T.gather_rows(k.taps, np.arange(t + 1))
        u_rev = T.gather_rows(u, np.arange(t, -1, -1))
        acc = T.tsum(T.mul(taps_t, u_rev), axis=0)
        u_t = T.reshape(T.gather_rows(u, np.array([t])), (channels,))
        rows.append(T.reshape(T.add(acc, T.mul(k.passthrough, u_t)),
                              (1, channels)))
    return T.concat(rows, axis=0)


class SSMLayer(Module):
    """Learnable channel-wise SSM applied along the token axis.

    The continuous diagonal is parameterized as -exp(a_log) so it stays
    negative under gradient updates; the step is exp(dt_log), initialized
    log-uniform in [1e-3, 1e-1].  The evaluation route ("scan" or "conv")
    is an internal choice; both must agree to < 1e-9.
    """

    def __init__(self, name: str, channels: int, state_dim: int = 16,
                 seed: int = 0, mode: str = "scan"):
        if mode not in ("scan", "conv"):
            raise ContractError(f"unknown SSM evaluation mode {mode!r}")
        self.mode = mode
        self.channels = channels
        self.state_dim = state_dim
        shape = (channels, state_dim)
        mk = lambda suffix, shp, scheme: Parameter(
            f"{name}.{suffix}", shp, scheme, T.param_seed(seed, f"{name}.{suffix}"))
        dt_lo, dt_hi = np.log(1e-3), np.log(1e-1)
        self.a_log = mk("a_log", shape, "state_decay")
        self.b_in = mk("b_in", shape, "ones")
        self.c_out = mk("c_out", shape, f"normal:{1.0 / np.sqrt(state_dim)}")
        self.d_skip = mk("d_skip", (channels,), "ones")
        self.dt_log = mk("dt_log", (channels,), f"uniform:{dt_lo},{dt_hi}")

    def continuous(self) -> ContinuousSSM:
        return ContinuousSSM(a=T.neg(T.texp(self.a_log.value)),
                             b=self.b_in.value, c=self.c_out.value,
                             d=self.d_skip.value)

    def discrete(self) -> DiscreteSSM:
        return discretize(self.continuous(), T.texp(self.dt_log.value))

    def forward(self, x: Tensor) -> Tensor:
        """Evaluate on [L x channels] tokens, independently per channel."""
        d = self.discrete()
        if self.mode == "conv":
            return apply_kernel(build_kernel(d, x.shape[0]), x)
        return scan_recurrent(d, x)

    __call__ = forward
