"""Bounded adversarial perturbations.

Three modes:

* ``L2_SPHERE`` -- loss-ascent steps projected back onto the intersection of
  the rho-ball around the clean point and the data manifold (unit sphere with
  last coordinate pinned to 1/2). The intersection is a spherical cap in the
  leading coordinates, so the projection has a closed form.
* ``LINF_BOX`` -- signed-gradient steps clipped coordinate-wise to
  ``[x - rho, x + rho]``; no manifold constraint and no normalization.
* ``GRID_ORACLE`` -- brute force over the feasible arc, only for d=3 where
  the manifold is the circle ``x1^2 + x2^2 = 3/4, x3 = 1/2``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .core import RngStream
from .model import LossKind, loss_eval, loss_subgrad

MANIFOLD_LAST = 0.5
MANIFOLD_HEAD_RADIUS = float(np.sqrt(3.0) / 2.0)
_TOL = 1e-9


class AdversaryMode(enum.Enum):
    L2_SPHERE = "l2_sphere"
    LINF_BOX = "linf_box"
    GRID_ORACLE = "grid_oracle"


@dataclass
class AdversaryConfig:
    mode: AdversaryMode
    rho: float
    steps: int = 10
    step_size: float = 0.0125
    restarts: int = 1
    grid_resolution: int = 512
    rng: RngStream = field(default_factory=lambda: RngStream(0))

    def __post_init__(self) -> None:
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.mode in (AdversaryMode.L2_SPHERE, AdversaryMode.GRID_ORACLE) and self.rho >= 0.5:
            raise ValueError(f"manifold modes require rho < 1/2, got {self.rho}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.mode is AdversaryMode.GRID_ORACLE and self.grid_resolution < 100:
            raise ValueError("grid_resolution must be >= 100")


def manifold_residuals(xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """|norm - 1| and |last coordinate - 1/2| per row."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    return np.abs(np.linalg.norm(xs, axis=1) - 1.0), np.abs(xs[:, -1] - MANIFOLD_LAST)


def on_manifold(x: np.ndarray, tol: float = _TOL) -> bool:
    rn, rl = manifold_residuals(x)
    return bool(np.all(rn <= tol) and np.all(rl <= tol))


def manifold_project(xs: np.ndarray) -> np.ndarray:
    """Pin the last coordinate and rescale the head to the manifold radius."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if xs.shape[1] < 2:
        raise ValueError("manifold needs dimension >= 2")
    head = xs[:, :-1]
    norms = np.linalg.norm(head, axis=1, keepdims=True)
    out = np.empty_like(xs)
    safe = norms[:, 0] > 0
    out[safe, :-1] = head[safe] * (MANIFOLD_HEAD_RADIUS / norms[safe])
    if not np.all(safe):
        fallback = np.zeros(xs.shape[1] - 1)
        fallback[0] = MANIFOLD_HEAD_RADIUS
        out[~safe, :-1] = fallback
    out[:, -1] = MANIFOLD_LAST
    return out


def sample_manifold(rng: RngStream, n: int, d: int) -> np.ndarray:
    """Uniform samples on the manifold (Gaussian head directions, rescaled)."""
    if d < 2:
        raise ValueError("manifold needs dimension >= 2")
    head = rng.generator().standard_normal((n, d - 1))
    xs = np.concatenate([head, np.full((n, 1), MANIFOLD_LAST)], axis=1)
    return manifold_project(xs)


def _orthonormal_to(c_hat: np.ndarray) -> np.ndarray:
    # deterministic unit vector orthogonal to c_hat (used when the candidate
    # is exactly antipodal/parallel and no preferred direction exists)
    k = int(np.argmin(np.abs(c_hat)))
    w = np.zeros_like(c_hat)
    w[k] = 1.0
    w = w - np.dot(w, c_hat) * c_hat
    return w / np.linalg.norm(w)


def project_cap_batch(candidates: np.ndarray, centers: np.ndarray, rho: float) -> np.ndarray:
    """Exact projection of each row onto B2(center, rho) intersected with the manifold.

    Works in the head coordinates, where the feasible set is the spherical cap
    ``{u : ||u|| = r0, <u, c> >= r0^2 - rho^2/2}``. Rows already inside the cap
    project to the sphere only; rows outside land on the cap boundary, at
    distance exactly rho from their center.
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    if centers.shape != candidates.shape:
        centers = np.broadcast_to(centers, candidates.shape)
    d = candidates.shape[1]
    if d < 2:
        raise ValueError("manifold needs dimension >= 2")
    rn, rl = manifold_residuals(centers)
    if np.any(rn > _TOL) or np.any(rl > _TOL):
        raise ValueError("projection center is off the manifold")
    if rho <= 0:
        raise ValueError("rho must be positive")

    r0 = MANIFOLD_HEAD_RADIUS
    v = candidates[:, :-1]
    c = centers[:, :-1]
    thr = r0 * r0 - rho * rho / 2.0

    if d == 2:
        # head space is one-dimensional: the manifold is two isolated points
        u = np.where(v[:, 0] != 0.0, np.sign(v[:, 0]), np.sign(c[:, 0])) * r0
        u = np.where(np.abs(u - c[:, 0]) <= rho + _TOL, u, c[:, 0])
        out = np.empty_like(candidates)
        out[:, 0] = u
        out[:, 1] = MANIFOLD_LAST
        return out

    vnorm = np.linalg.norm(v, axis=1)
    u = np.empty_like(v)
    zero = vnorm == 0.0
    u[~zero] = v[~zero] * (r0 / vnorm[~zero, None])
    u[zero] = c[zero]

    infeasible = np.einsum("ij,ij->i", u, c) < thr - 1e-15
    if np.any(infeasible):
        c_hat = c[infeasible] / r0
        v_in = v[infeasible]
        v_par = np.einsum("ij,ij->i", v_in, c_hat)
        v_perp = v_in - v_par[:, None] * c_hat
        perp_norm = np.linalg.norm(v_perp, axis=1)
        w = np.empty_like(v_perp)
        ok = perp_norm > 1e-15
        w[ok] = v_perp[ok] / perp_norm[ok, None]
        for idx in np.flatnonzero(~ok):
            w[idx] = _orthonormal_to(c_hat[idx])
        ring_radius = np.sqrt(max(r0 * r0 - (thr / r0) ** 2, 0.0))
        u[infeasible] = (thr / r0) * c_hat + ring_radius * w

    out = np.empty_like(candidates)
    out[:, :-1] = u
    out[:, -1] = MANIFOLD_LAST
    return out


def project_ball_manifold(candidate: np.ndarray, center: np.ndarray, rho: float) -> np.ndarray:
    """Single-point form of :func:`project_cap_batch`."""
    return project_cap_batch(np.asarray(candidate)[None, :], np.asarray(center)[None, :], rho)[0]


def _pgd_sphere(cfg, value_fn, grad_fn, centers, ys, kind, starts, track_best=False):
    xs = project_cap_batch(starts, centers, cfg.rho)
    best = loss_eval(kind, value_fn(xs), ys) if track_best else None
    best_xs = xs.copy() if track_best else None
    for _ in range(cfg.steps):
        s = loss_subgrad(kind, value_fn(xs), ys)
        xs = xs + cfg.step_size * (s[:, None] * grad_fn(xs))
        xs = project_cap_batch(xs, centers, cfg.rho)
        if track_best:
            cur = loss_eval(kind, value_fn(xs), ys)
            better = cur > best
            best = np.where(better, cur, best)
            best_xs[better] = xs[better]
    return (xs, best, best_xs) if track_best else xs


def _pgd_box(cfg, value_fn, grad_fn, centers, ys, kind, starts, track_best=False):
    lo, hi = centers - cfg.rho, centers + cfg.rho
    xs = np.clip(starts, lo, hi)
    best = loss_eval(kind, value_fn(xs), ys) if track_best else None
    best_xs = xs.copy() if track_best else None
    for _ in range(cfg.steps):
        s = loss_subgrad(kind, value_fn(xs), ys)
        xs = xs + cfg.step_size * np.sign(s[:, None] * grad_fn(xs))
        xs = np.clip(xs, lo, hi)
        if track_best:
            cur = loss_eval(kind, value_fn(xs), ys)
            better = cur > best
            best = np.where(better, cur, best)
            best_xs[better] = xs[better]
    return (xs, best, best_xs) if track_best else xs


def _grid_points(x: np.ndarray, rho: float, resolution: int) -> np.ndarray:
    if x.shape[-1] != 3:
        raise ValueError("grid oracle requires dimension 3")
    r0 = MANIFOLD_HEAD_RADIUS
    theta_c = float(np.arctan2(x[1], x[0]))
    half = 2.0 * np.arcsin(min(rho / (2.0 * r0), 1.0))
    angles = theta_c + np.linspace(-half, half, resolution)
    return np.stack(
        [r0 * np.cos(angles), r0 * np.sin(angles), np.full(resolution, MANIFOLD_LAST)], axis=1
    )


def perturb_many(
    cfg: AdversaryConfig,
    value_fn,
    grad_fn,
    xs: np.ndarray,
    ys: np.ndarray,
    kind: LossKind = LossKind.ABSOLUTE,
) -> np.ndarray:
    """Adversarial examples for a batch of points, one PGD run each, started
    from the clean points. ``value_fn``/``grad_fn`` map (n, d) to (n,)/(n, d)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.asarray(ys, dtype=np.float64).reshape(-1)
    if cfg.mode is AdversaryMode.L2_SPHERE:
        return _pgd_sphere(cfg, value_fn, grad_fn, xs, ys, kind, starts=xs)
    if cfg.mode is AdversaryMode.LINF_BOX:
        return _pgd_box(cfg, value_fn, grad_fn, xs, ys, kind, starts=xs)
    if cfg.mode is AdversaryMode.GRID_ORACLE:
        out = np.empty_like(xs)
        for i in range(xs.shape[0]):
            pts = _grid_points(xs[i], cfg.rho, cfg.grid_resolution)
            losses = loss_eval(kind, value_fn(pts), ys[i])
            out[i] = pts[int(np.argmax(losses))]
        return out
    raise ValueError(f"unknown mode {cfg.mode}")


def perturb(
    cfg: AdversaryConfig,
    value_fn,
    grad_fn,
    point: tuple[np.ndarray, float],
    kind: LossKind = LossKind.ABSOLUTE,
) -> np.ndarray:
    """Single-point adversarial example; see :func:`perturb_many`."""
    x, y = point
    return perturb_many(cfg, value_fn, grad_fn, np.asarray(x)[None, :], np.asarray([y]), kind)[0]


def _random_start(cfg: AdversaryConfig, x: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    if cfg.mode is AdversaryMode.LINF_BOX:
        return x + gen.uniform(-cfg.rho, cfg.rho, size=x.shape)
    direction = gen.standard_normal(x.shape)
    direction /= max(np.linalg.norm(direction), 1e-300)
    return x + cfg.rho * gen.uniform(0.0, 1.0) * direction


def worst_case_loss(
    cfg: AdversaryConfig,
    value_fn,
    grad_fn,
    point: tuple[np.ndarray, float],
    kind: LossKind = LossKind.ABSOLUTE,
    rng: RngStream | None = None,
) -> float:
    """Best loss found over restarted PGD runs; a lower bound on the true
    worst case. Restart 0 starts from the clean point and reproduces
    :func:`perturb`; later restarts use random feasible starting points drawn
    from per-restart child streams, so adding restarts never lowers the value.
    """
    x, y = point
    x = np.asarray(x, dtype=np.float64)
    if cfg.mode is AdversaryMode.GRID_ORACLE:
        return grid_oracle_worst_case(value_fn, point, cfg.rho, cfg.grid_resolution, kind)
    rng = rng if rng is not None else cfg.rng
    runner = _pgd_sphere if cfg.mode is AdversaryMode.L2_SPHERE else _pgd_box
    centers = x[None, :]
    ys = np.asarray([y], dtype=np.float64)
    best = float(loss_eval(kind, value_fn(centers), ys)[0])
    for r in range(cfg.restarts):
        if r == 0:
            start = centers
        else:
            start = _random_start(cfg, x, rng.child(r).generator())[None, :]
        _, run_best, _ = runner(cfg, value_fn, grad_fn, centers, ys, kind, starts=start, track_best=True)
        best = max(best, float(run_best[0]))
    return best


def grid_oracle_worst_case(
    value_fn,
    point: tuple[np.ndarray, float],
    rho: float,
    resolution: int,
    kind: LossKind = LossKind.ABSOLUTE,
) -> float:
    """Maximum loss over equally spaced angles of the feasible arc (d=3 only)."""
    x, y = point
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (3,):
        raise ValueError(f"grid oracle requires dimension 3, got shape {x.shape}")
    if resolution < 100:
        raise ValueError("resolution must be >= 100")
    if rho <= 0:
        raise ValueError("rho must be positive")
    pts = _grid_points(x, rho, resolution)
    return float(np.max(loss_eval(kind, value_fn(pts), y)))


def input_lipschitz_bound(hidden: np.ndarray, output: np.ndarray) -> float:
    """sum_r |a_r| * ||U_r||, an upper bound on |f(x) - f(x')| / ||x - x'||."""
    return float(np.sum(np.abs(output) * np.linalg.norm(hidden, axis=0)))
