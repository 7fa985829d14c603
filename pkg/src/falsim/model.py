"""Two-layer ReLU network with a frozen output layer.

The network is ``f(x) = sum_r a_r * relu(<U_r, x> + b_r)`` where only the
hidden columns ``U_r`` train; ``a`` and ``b`` stay at their initial values.
Alongside the real network lives its linearization at initialization: the
same displacement inner products, but gated by the *initial* activation
pattern instead of the current one. That companion is exactly linear in the
hidden-weight displacement, which is what makes it useful as an optimization
surrogate and as a finite-difference target.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import RngStream, require_finite, sample_gaussian, sample_uniform_sym


class LossKind(enum.Enum):
    """Per-sample loss. ABSOLUTE is |z - y|: convex, 1-Lipschitz, zero on the diagonal."""

    ABSOLUTE = "absolute"


@dataclass
class NetParams:
    """hidden: (d, m) trainable columns; output: (m,) and bias: (m,), both frozen."""

    hidden: np.ndarray
    output: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        self.hidden = require_finite(self.hidden, "hidden")
        self.output = require_finite(self.output, "output")
        self.bias = require_finite(self.bias, "bias")
        if self.hidden.ndim != 2:
            raise ValueError("hidden must be a (d, m) matrix")
        m = self.hidden.shape[1]
        if self.output.shape != (m,) or self.bias.shape != (m,):
            raise ValueError("output and bias must both have length m = hidden.shape[1]")

    @property
    def dim(self) -> int:
        return self.hidden.shape[0]

    @property
    def width(self) -> int:
        return self.hidden.shape[1]


@dataclass(frozen=True)
class InitAnchor:
    """Read-only snapshot of the parameters at initialization."""

    hidden0: np.ndarray
    output0: np.ndarray
    bias0: np.ndarray

    def __post_init__(self) -> None:
        for arr in (self.hidden0, self.output0, self.bias0):
            arr.flags.writeable = False


def init_params(m: int, d: int, rng: RngStream) -> tuple[NetParams, InitAnchor]:
    """Draw a fresh network: a_r ~ U[-m^{-1/3}, m^{-1/3}], U_{i,r} and b_r ~ N(0, 1/m).

    Returns the live parameters plus a frozen copy of their initial values.
    """
    if m < 1 or d < 1:
        raise ValueError(f"need m >= 1 and d >= 1, got m={m}, d={d}")
    output = sample_uniform_sym(rng.child(0), m, m ** (-1.0 / 3.0))
    hidden = sample_gaussian(rng.child(1), d * m, 1.0 / m).reshape(d, m)
    bias = sample_gaussian(rng.child(2), m, 1.0 / m)
    params = NetParams(hidden=hidden, output=output, bias=bias)
    anchor = InitAnchor(hidden0=hidden.copy(), output0=output.copy(), bias0=bias.copy())
    return params, anchor


def _as_batch(xs: np.ndarray, d: int) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim == 1:
        xs = xs[None, :]
    if xs.ndim != 2 or xs.shape[1] != d:
        raise ValueError(f"inputs must have {d} features, got shape {xs.shape}")
    return xs


def forward_many(p: NetParams, xs: np.ndarray) -> np.ndarray:
    """Network values on a batch, shape (n,)."""
    xs = _as_batch(xs, p.dim)
    pre = xs @ p.hidden + p.bias
    return np.maximum(pre, 0.0) @ p.output


def forward(p: NetParams, x: np.ndarray) -> float:
    return float(forward_many(p, x)[0])


def pseudo_forward_many(p: NetParams, anchor: InitAnchor, xs: np.ndarray) -> np.ndarray:
    """Linearized network values: displacement inner products gated by the
    initial activation pattern (the event is ``pre >= 0`` throughout)."""
    xs = _as_batch(xs, p.dim)
    if anchor.hidden0.shape != p.hidden.shape:
        raise ValueError("anchor shape does not match parameters")
    gate = (xs @ anchor.hidden0 + anchor.bias0) >= 0.0
    return ((xs @ (p.hidden - anchor.hidden0)) * gate) @ p.output


def pseudo_forward(p: NetParams, anchor: InitAnchor, x: np.ndarray) -> float:
    return float(pseudo_forward_many(p, anchor, x)[0])


def loss_eval(kind: LossKind, z, y):
    """Per-sample loss; accepts scalars or arrays."""
    if kind is not LossKind.ABSOLUTE:
        raise ValueError(f"unsupported loss kind: {kind}")
    return np.abs(np.asarray(z, dtype=np.float64) - y)


def loss_subgrad(kind: LossKind, z, y):
    """Subgradient of the loss in its first argument; 0 at the kink."""
    if kind is not LossKind.ABSOLUTE:
        raise ValueError(f"unsupported loss kind: {kind}")
    return np.sign(np.asarray(z, dtype=np.float64) - y)


def _check_batch(p: NetParams, xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xs = _as_batch(xs, p.dim)
    ys = np.asarray(ys, dtype=np.float64).reshape(-1)
    if xs.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    if ys.shape[0] != xs.shape[0]:
        raise ValueError("labels and inputs disagree in length")
    return xs, ys


def grad_hidden(p: NetParams, xs: np.ndarray, ys: np.ndarray, kind: LossKind = LossKind.ABSOLUTE) -> np.ndarray:
    """Batch-mean gradient of the loss w.r.t. the hidden columns.

    Column r is ``mean_j l'(f(x_j), y_j) * a_r * 1{<U_r,x_j>+b_r >= 0} * x_j``,
    so its 2-norm never exceeds |a_r| when all inputs have unit norm.
    """
    xs, ys = _check_batch(p, xs, ys)
    pre = xs @ p.hidden + p.bias
    z = np.maximum(pre, 0.0) @ p.output
    s = loss_subgrad(kind, z, ys)
    coeff = (pre >= 0.0) * (s[:, None] * p.output[None, :])
    return xs.T @ coeff / xs.shape[0]


def pseudo_grad_hidden(
    p: NetParams, anchor: InitAnchor, xs: np.ndarray, ys: np.ndarray, kind: LossKind = LossKind.ABSOLUTE
) -> np.ndarray:
    """Batch-mean gradient of the *linearized-network* loss w.r.t. the hidden columns.

    The activation gate comes from the anchor, and the loss subgradient is
    evaluated at the linearized output, so this is the exact (sub)gradient of
    the linearized loss and central differences of that loss reproduce it.
    """
    xs, ys = _check_batch(p, xs, ys)
    gate = (xs @ anchor.hidden0 + anchor.bias0) >= 0.0
    g = ((xs @ (p.hidden - anchor.hidden0)) * gate) @ p.output
    s = loss_subgrad(kind, g, ys)
    coeff = gate * (s[:, None] * p.output[None, :])
    return xs.T @ coeff / xs.shape[0]


def batch_loss(p: NetParams, xs: np.ndarray, ys: np.ndarray, kind: LossKind = LossKind.ABSOLUTE) -> float:
    """Mean loss of the real network over a batch."""
    xs, ys = _check_batch(p, xs, ys)
    return float(np.mean(loss_eval(kind, forward_many(p, xs), ys)))


def pseudo_batch_loss(
    p: NetParams, anchor: InitAnchor, xs: np.ndarray, ys: np.ndarray, kind: LossKind = LossKind.ABSOLUTE
) -> float:
    """Mean loss of the linearized network over a batch."""
    xs, ys = _check_batch(p, xs, ys)
    return float(np.mean(loss_eval(kind, pseudo_forward_many(p, anchor, xs), ys)))


def grad_input(p: NetParams, xs: np.ndarray) -> np.ndarray:
    """Gradient of the network value w.r.t. its input, one row per batch row."""
    xs = _as_batch(xs, p.dim)
    act = (xs @ p.hidden + p.bias) >= 0.0
    return (act * p.output[None, :]) @ p.hidden.T
