"""Numerical probes of the training theory's structural claims.

Asymptotic statements are checked as measurable trends: normalized
quantities must stay bounded across a grid of widths (max/min ratio <= 10)
and fitted log-log slopes must carry the predicted sign. Exact identities
(the one-step aggregation identity, the per-column coupling bound, the
finite-difference match) are asserted at tight tolerances.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .adversary import sample_manifold
from .core import RngStream, norm_2_inf
from .data import gen_separable_sphere
from .federation import coupling_measurements
from .model import (
    InitAnchor,
    LossKind,
    NetParams,
    batch_loss,
    forward_many,
    grad_hidden,
    init_params,
    pseudo_batch_loss,
    pseudo_forward_many,
    pseudo_grad_hidden,
)


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx, ly = np.log(np.asarray(xs, dtype=float)), np.log(np.asarray(ys, dtype=float))
    if lx.size < 2:
        raise ValueError("need at least two grid points to fit a slope")
    return float(np.polyfit(lx, ly, 1)[0])


def _ratio(values) -> float:
    values = np.asarray(values, dtype=float)
    lo = values.min()
    return float(values.max() / lo) if lo > 0 else float("inf")


@dataclass
class ScalingStudy:
    name: str
    m_grid: list[int]
    rows: list[dict]
    slopes: dict[str, float] = field(default_factory=dict)
    ratios: dict[str, float] = field(default_factory=dict)
    checks: dict[str, bool] = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.m_grid) < 2 or any(b <= a for a, b in zip(self.m_grid, self.m_grid[1:])):
            raise ValueError("m_grid must be strictly increasing with >= 2 entries")

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def column(self, key: str) -> np.ndarray:
        return np.array([row[key] for row in self.rows], dtype=float)

    def summary(self) -> dict:
        return {
            "study": self.name,
            "m_grid": [int(m) for m in self.m_grid],
            "slopes": {k: float(v) for k, v in self.slopes.items()},
            "ratios": {k: float(v) for k, v in self.ratios.items()},
            "checks": {k: bool(v) for k, v in self.checks.items()},
            "extras": {k: (float(v) if isinstance(v, float) else v) for k, v in self.extras.items()},
            "pass": bool(self.passed),
        }

    def write_csv(self, path) -> None:
        keys = list(self.rows[0].keys())
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(keys)
            for row in self.rows:
                writer.writerow([("%.17g" % row[k]) if isinstance(row[k], float) else row[k] for k in keys])


def perturb_columns(anchor_hidden: np.ndarray, radius: float, rng: RngStream) -> np.ndarray:
    """Shift every column by an independent random direction of 2-norm exactly
    ``radius``, so the 2,inf distance to the anchor is exactly ``radius``."""
    d, m = anchor_hidden.shape
    dirs = rng.generator().standard_normal((d, m))
    dirs /= np.linalg.norm(dirs, axis=0, keepdims=True)
    return anchor_hidden + radius * dirs


def uniform_approx_study(
    R: float,
    m_grid: list[int],
    d: int,
    n_samples: int,
    rng: RngStream,
    n_seeds: int = 1,
) -> ScalingStudy:
    """Largest |real - linearized| over manifold samples, at column
    displacement exactly R / m^{2/3}, for each width in the grid.

    The gap must shrink as the width grows: the study fits the log-log slope
    and counts monotone non-increasing consecutive grid steps (medians over
    ``n_seeds`` replicates).
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    if any(m < d for m in m_grid):
        raise ValueError("every width must be >= the input dimension")
    rows = []
    for gi, m in enumerate(m_grid):
        gaps = []
        for s in range(n_seeds):
            cell = rng.child(gi, s)
            params, anchor = init_params(m, d, cell.child(0))
            params.hidden = perturb_columns(anchor.hidden0, R * m ** (-2.0 / 3.0), cell.child(1))
            xs = sample_manifold(cell.child(2), n_samples, d)
            gap = np.abs(forward_many(params, xs) - pseudo_forward_many(params, anchor, xs))
            gaps.append(float(gap.max()))
        rows.append({"m": m, "sup_gap": float(np.median(gaps)), "sup_gap_seeds": float(np.max(gaps))})
    study = ScalingStudy(name="uniform-approx", m_grid=list(m_grid), rows=rows)
    sup = study.column("sup_gap")
    study.slopes["sup_gap"] = loglog_slope(m_grid, sup)
    decreasing_steps = int(np.sum(np.diff(sup) <= 0.0))
    study.checks["slope_negative"] = study.slopes["sup_gap"] <= -0.05
    study.checks["monotone_steps"] = decreasing_steps >= min(3, len(m_grid) - 1)
    study.extras["decreasing_steps"] = decreasing_steps
    return study


def coupling_study(
    n_clients: int,
    per_client: int,
    d: int,
    m_grid: list[int],
    rng: RngStream,
    delta: float = 0.3,
) -> ScalingStudy:
    """Gradient coupling between the real network and its anchor-gated twin
    at column displacement exactly m^{-15/24}.

    Checks, per cell: the gap never exceeds m^{-1/3} per flipped column; the
    flipped-column fraction trends down in width; and the gap normalized by
    n * m^{13/24} stays within a 10x band across the grid.
    """
    total = n_clients * per_client
    rows = []
    for gi, m in enumerate(m_grid):
        cell = rng.child(gi)
        ds = gen_separable_sphere(n_clients, per_client, d, delta, cell.child(0))
        params, anchor = init_params(m, d, cell.child(1))
        radius = m ** (-15.0 / 24.0)
        params.hidden = perturb_columns(anchor.hidden0, radius, cell.child(2))
        _, gap_21, flip_count = coupling_measurements(
            params, anchor, ds.all_xs(), ds.all_ys(), LossKind.ABSOLUTE
        )
        rows.append(
            {
                "m": m,
                "displacement": radius,
                "coupling_gap_21": gap_21,
                "flip_count": flip_count,
                "flip_fraction": flip_count / m,
                "gap_normalized": gap_21 / (total * m ** (13.0 / 24.0)),
                "flip_normalized": flip_count / (total * m ** (7.0 / 8.0)),
                "column_bound": m ** (-1.0 / 3.0) * flip_count,
            }
        )
    study = ScalingStudy(name="coupling", m_grid=list(m_grid), rows=rows)
    study.checks["per_column_bound"] = all(
        row["coupling_gap_21"] <= row["column_bound"] * (1.0 + 1e-9) + 1e-15 for row in rows
    )
    study.slopes["flip_fraction"] = loglog_slope(m_grid, study.column("flip_fraction"))
    study.checks["flip_fraction_slope_negative"] = study.slopes["flip_fraction"] < 0.0
    study.ratios["gap_normalized"] = _ratio(study.column("gap_normalized"))
    study.checks["gap_normalized_bounded"] = study.ratios["gap_normalized"] <= 10.0
    return study


def fl_gap_study(traces: list[tuple[int, list]]) -> ScalingStudy:
    """Consume audited training traces, one per width: the worst audited gap
    between the true global gradient and the aggregation direction, normalized
    by m^{2/3}, must stay within a 10x band across widths."""
    rows = []
    for m, records in traces:
        audited = [r.audit for r in records if r.audit is not None]
        if not audited:
            raise ValueError(f"trace for width {m} carries no gradient audits")
        rows.append(
            {
                "m": m,
                "max_fl_gap_21": max(a.fl_gap_21 for a in audited),
                "max_fl_gap_fro": max(a.fl_gap_fro for a in audited),
                "gap_normalized": max(a.fl_gap_21 for a in audited) / m ** (2.0 / 3.0),
                "audited_rounds": len(audited),
            }
        )
    study = ScalingStudy(name="fl-gap", m_grid=[m for m, _ in traces], rows=rows)
    study.ratios["gap_normalized"] = _ratio(np.maximum(study.column("gap_normalized"), 1e-300))
    study.checks["gap_normalized_bounded"] = (
        study.ratios["gap_normalized"] <= 10.0 or study.column("max_fl_gap_21").max() <= 1e-9
    )
    return study


@dataclass
class FiniteDiffReport:
    real_max_rel: float
    pseudo_max_rel: float
    checked_real: int
    checked_pseudo: int

    @property
    def max_rel_error(self) -> float:
        return max(self.real_max_rel, self.pseudo_max_rel)


def _rel_err(a: float, b: float, floor: float = 0.0) -> float:
    # floor guards coordinates whose true entry is (near) zero, where central
    # differences only see float roundoff of order |loss| * eps / probe
    scale = max(abs(a), abs(b), floor)
    return 0.0 if scale < 1e-12 else float(abs(a - b) / scale)


def _central_diff(loss_fn, params: NetParams, i: int, r: int, probe: float) -> float:
    original = params.hidden[i, r]
    params.hidden[i, r] = original + probe
    hi = loss_fn()
    params.hidden[i, r] = original - probe
    lo = loss_fn()
    params.hidden[i, r] = original
    return (hi - lo) / (2.0 * probe)


def finite_diff_audit(
    params: NetParams,
    anchor: InitAnchor,
    xs: np.ndarray,
    ys: np.ndarray,
    probe: float = 1e-6,
    rng: RngStream | None = None,
    n_coords: int = 100,
    kind: LossKind = LossKind.ABSOLUTE,
    kink_margin: float = 1e-4,
) -> FiniteDiffReport:
    """Check both closed-form gradients against central differences of their
    losses on randomly chosen coordinates.

    Coordinates whose column has a pre-activation within ``kink_margin`` of
    zero on some batch point are resampled, as are configurations where a
    network output sits within ``kink_margin`` of the loss kink; both
    functions are non-differentiable there and the comparison is meaningless.
    """
    if probe <= 0:
        raise ValueError("probe must be positive")
    rng = rng if rng is not None else RngStream(0)
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.asarray(ys, dtype=np.float64).reshape(-1)
    d, m = params.hidden.shape
    gen = rng.generator()

    pre_real = xs @ params.hidden + params.bias
    pre_anchor = xs @ anchor.hidden0 + anchor.bias0
    f_vals = forward_many(params, xs)
    g_vals = pseudo_forward_many(params, anchor, xs)
    real_col_ok = np.all(np.abs(pre_real) >= kink_margin, axis=0)
    pseudo_col_ok = np.all(np.abs(pre_anchor) >= kink_margin, axis=0)
    real_loss_ok = bool(np.all(np.abs(f_vals - ys) >= kink_margin))
    pseudo_loss_ok = bool(np.all(np.abs(g_vals - ys) >= kink_margin))

    grad_real = grad_hidden(params, xs, ys, kind)
    grad_pseudo = pseudo_grad_hidden(params, anchor, xs, ys, kind)
    real_floor = 0.1 * float(np.max(np.abs(grad_real)))
    pseudo_floor = 0.1 * float(np.max(np.abs(grad_pseudo)))

    report = FiniteDiffReport(0.0, 0.0, 0, 0)
    attempts = 0
    while (report.checked_real < n_coords or report.checked_pseudo < n_coords) and attempts < 50 * n_coords:
        attempts += 1
        i, r = int(gen.integers(d)), int(gen.integers(m))
        if report.checked_real < n_coords and real_loss_ok and real_col_ok[r]:
            fd = _central_diff(lambda: batch_loss(params, xs, ys, kind), params, i, r, probe)
            report.real_max_rel = max(report.real_max_rel, _rel_err(fd, grad_real[i, r], real_floor))
            report.checked_real += 1
        if report.checked_pseudo < n_coords and pseudo_loss_ok and pseudo_col_ok[r]:
            fd = _central_diff(
                lambda: pseudo_batch_loss(params, anchor, xs, ys, kind), params, i, r, probe
            )
            report.pseudo_max_rel = max(report.pseudo_max_rel, _rel_err(fd, grad_pseudo[i, r], pseudo_floor))
            report.checked_pseudo += 1
    if report.checked_real == 0 or report.checked_pseudo == 0:
        side = "real" if report.checked_real == 0 else "linearized"
        raise RuntimeError(f"no {side}-network coordinate clear of kinks was found; resample the batch")
    return report


def min_adv_loss(records: list) -> float:
    """Smallest adversarial loss over the recorded rounds."""
    if not records:
        raise ValueError("no round records")
    return min(r.adv_loss for r in records)


def displacement_from_anchor(params: NetParams, anchor: InitAnchor) -> float:
    return norm_2_inf(params.hidden - anchor.hidden0)
