"""Federated adversarial training: local client updates, server aggregation,
per-round metrics, and gradient audits.

Each round, every client copies the global hidden weights, then alternates
K times between generating fresh adversarial examples against its current
local network and taking one gradient step on them. The server averages the
weight deltas in fixed client order and applies the global step. All
randomness derives from one seed through per-purpose child streams, so runs
are reproducible regardless of client execution order or thread count.
"""

from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .adversary import AdversaryConfig, perturb_many
from .core import RngStream, frobenius, norm_2_1, norm_2_inf
from .data import FederatedDataset, LabeledSet
from .model import (
    InitAnchor,
    LossKind,
    NetParams,
    forward_many,
    grad_hidden,
    grad_input,
    init_params,
    loss_eval,
    loss_subgrad,
    pseudo_forward_many,
)

# child-stream tags off the root seed
_RNG_INIT = 0
_RNG_ADV = 1
_RNG_SHUFFLE = 2
RNG_DATA = 3  # reserved for dataset generation by callers sharing the seed


@dataclass
class FalConfig:
    n_clients: int
    local_steps: int
    rounds: int
    eta_local: float
    eta_global: float
    width: int
    dim: int
    loss: LossKind = LossKind.ABSOLUTE
    adversary: AdversaryConfig | None = None
    batch_size: int | None = None  # None = full batch
    seed: int = 0
    parallel_clients: bool = False
    grad_audit_every: int = 0
    accumulate_adv_set: bool = False
    check_displacement: bool = True

    def __post_init__(self) -> None:
        if self.n_clients < 1 or self.local_steps < 1 or self.rounds < 0:
            raise ValueError("need n_clients >= 1, local_steps >= 1, rounds >= 0")
        if self.width < 1 or self.dim < 1:
            raise ValueError("need width >= 1 and dim >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1 or None")
        if self.grad_audit_every < 0:
            raise ValueError("grad_audit_every must be >= 0")


@dataclass
class GradientReport:
    fl_gap_21: float
    fl_gap_fro: float
    coupling_gap_21: float
    flip_count: int


@dataclass
class RoundRecord:
    t: int
    adv_loss: float
    clean_loss: float
    train_acc: float
    test_acc: float
    dist_init_2inf: float
    delta_u_fro: float
    audit: GradientReport | None = None


@dataclass
class RunResult:
    records: list[RoundRecord]
    params: NetParams
    anchor: InitAnchor


def fl_gradient(deltas: list[np.ndarray]) -> np.ndarray:
    """The direction the server effectively descends: minus the averaged
    client delta. With one local step at unit local rate this equals the
    gradient of the global loss over the round's adversarial set exactly."""
    if not deltas:
        raise ValueError("need at least one client delta")
    return -np.mean(np.stack(deltas), axis=0)


def coupling_measurements(
    params: NetParams, anchor: InitAnchor, xs: np.ndarray, ys: np.ndarray, kind: LossKind
) -> tuple[np.ndarray, float, int]:
    """Real gradient plus its anchor-gated twin, sharing the real network's
    per-point loss subgradients so the two differ only where a neuron's
    activation pattern flipped between the anchor and the current weights.

    Returns (real gradient, 2,1-norm of the difference, number of flipped
    columns). Each flipped column differs by at most |a_r| in 2-norm for
    unit-norm inputs, so the gap never exceeds m^{-1/3} * flip_count.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.asarray(ys, dtype=np.float64).reshape(-1)
    n = xs.shape[0]
    pre = xs @ params.hidden + params.bias
    z = np.maximum(pre, 0.0) @ params.output
    s = loss_subgrad(kind, z, ys)
    scaled = s[:, None] * params.output[None, :]
    coeff = (pre >= 0.0) * scaled
    coeff0 = ((xs @ anchor.hidden0 + anchor.bias0) >= 0.0) * scaled
    grad_real = xs.T @ coeff / n
    grad_anchor = xs.T @ coeff0 / n
    flipped = np.any(coeff != coeff0, axis=0)
    gap = grad_anchor - grad_real
    gap_21 = float(np.linalg.norm(gap, axis=0).sum())
    return grad_real, gap_21, int(flipped.sum())


def gradient_audit(
    params: NetParams,
    anchor: InitAnchor,
    adv_xs: np.ndarray,
    adv_ys: np.ndarray,
    deltas: list[np.ndarray],
    kind: LossKind,
    unit_inputs: bool = False,
) -> GradientReport:
    grad_real, coupling_gap_21, flip_count = coupling_measurements(params, anchor, adv_xs, adv_ys, kind)
    fl = fl_gradient(deltas)
    diff = grad_real - fl
    report = GradientReport(
        fl_gap_21=norm_2_1(diff),
        fl_gap_fro=frobenius(diff),
        coupling_gap_21=coupling_gap_21,
        flip_count=flip_count,
    )
    if unit_inputs:
        bound = params.width ** (-1.0 / 3.0) * flip_count
        if coupling_gap_21 > bound * (1.0 + 1e-9) + 1e-15:
            raise RuntimeError(
                f"coupling gap {coupling_gap_21} exceeds per-column bound {bound}"
            )
    return report


def _adversary_fns(local: NetParams, kind: LossKind):
    def value_fn(pts: np.ndarray) -> np.ndarray:
        return forward_many(local, pts)

    def grad_fn(pts: np.ndarray) -> np.ndarray:
        return grad_input(local, pts)

    return value_fn, grad_fn


def client_update(
    client_id: int,
    round_idx: int,
    global_params: NetParams,
    client_ds,
    cfg: FalConfig,
    root: RngStream | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One client's round: K alternations of adversarial-example generation
    and a local gradient step. Returns the weight delta plus the last
    (freshest) adversarial batch, which the server uses for global metrics.
    """
    if global_params.hidden.shape != (cfg.dim, cfg.width):
        raise ValueError("global parameter shape does not match config")
    root = root if root is not None else RngStream(cfg.seed)
    local = NetParams(
        hidden=global_params.hidden.copy(), output=global_params.output, bias=global_params.bias
    )
    n_points = len(client_ds)
    batch = n_points if cfg.batch_size is None else min(cfg.batch_size, n_points)

    order = np.arange(n_points)
    pos = n_points  # force a shuffle before the first minibatch
    epoch = 0
    accum_xs: list[np.ndarray] = []
    accum_ys: list[np.ndarray] = []
    adv_xs = client_ds.xs
    adv_ys = client_ds.ys

    for k in range(cfg.local_steps):
        if batch == n_points:
            bx, by = client_ds.xs, client_ds.ys
        else:
            if pos + batch > n_points:
                order = root.child(_RNG_SHUFFLE, round_idx, client_id, epoch).generator().permutation(n_points)
                pos = 0
                epoch += 1
            idx = order[pos : pos + batch]
            pos += batch
            bx, by = client_ds.xs[idx], client_ds.ys[idx]

        if cfg.adversary is None:
            adv_xs, adv_ys = bx, by
        else:
            value_fn, grad_fn = _adversary_fns(local, cfg.loss)
            adv_xs = perturb_many(cfg.adversary, value_fn, grad_fn, bx, by, cfg.loss)
            adv_ys = by

        if cfg.accumulate_adv_set:
            accum_xs.append(adv_xs)
            accum_ys.append(adv_ys)
            gx, gy = np.concatenate(accum_xs), np.concatenate(accum_ys)
        else:
            gx, gy = adv_xs, adv_ys
        local.hidden -= cfg.eta_local * grad_hidden(local, gx, gy, cfg.loss)

    delta = local.hidden - global_params.hidden
    return delta, adv_xs, adv_ys


def _worker_count(n_clients: int) -> int:
    env = os.environ.get("FAL_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(n_clients, cap))


def _round_deltas(round_idx: int, params: NetParams, train: FederatedDataset, cfg: FalConfig, root: RngStream):
    clients = train.clients
    if cfg.parallel_clients and len(clients) > 1:
        with ThreadPoolExecutor(max_workers=_worker_count(len(clients))) as pool:
            futures = [
                pool.submit(client_update, c.client_id, round_idx, params, c, cfg, root)
                for c in clients
            ]
            results = []
            for c, fut in zip(clients, futures):
                try:
                    results.append(fut.result())
                except Exception as exc:
                    raise RuntimeError(f"client {c.client_id} failed in round {round_idx}: {exc}") from exc
    else:
        results = [client_update(c.client_id, round_idx, params, c, cfg, root) for c in clients]
    deltas = [r[0] for r in results]
    adv_xs = np.concatenate([r[1] for r in results])
    adv_ys = np.concatenate([r[2] for r in results])
    return deltas, adv_xs, adv_ys


def global_losses(
    params: NetParams,
    anchor: InitAnchor,
    clean_xs: np.ndarray,
    clean_ys: np.ndarray,
    adv_xs: np.ndarray,
    adv_ys: np.ndarray,
    kind: LossKind = LossKind.ABSOLUTE,
) -> tuple[float, float, float]:
    """(clean loss, adversarial loss, linearized-network loss on the
    adversarial points), each a mean over its point set."""
    if len(adv_xs) == 0 or len(clean_xs) == 0:
        raise ValueError("point sets must be non-empty")
    clean = float(np.mean(loss_eval(kind, forward_many(params, clean_xs), clean_ys)))
    adv = float(np.mean(loss_eval(kind, forward_many(params, adv_xs), adv_ys)))
    pseudo = float(np.mean(loss_eval(kind, pseudo_forward_many(params, anchor, adv_xs), adv_ys)))
    return clean, adv, pseudo


def _accuracy(params: NetParams, xs: np.ndarray, ys: np.ndarray) -> float:
    pred = np.where(forward_many(params, xs) >= 0.0, 1.0, -1.0)
    actual = np.where(np.asarray(ys) >= 0.0, 1.0, -1.0)
    return float(np.mean(pred == actual))


def displacement_bound(cfg: FalConfig, round_idx: int) -> float:
    """Worst-case column displacement after ``round_idx`` server updates with
    unit-norm inputs: every local gradient column is at most m^{-1/3} long."""
    return cfg.eta_global * cfg.eta_local * round_idx * cfg.local_steps * cfg.width ** (-1.0 / 3.0)


def _run(cfg: FalConfig, train: FederatedDataset, test: LabeledSet | None) -> RunResult:
    if train.n_clients != cfg.n_clients:
        raise ValueError(f"config expects {cfg.n_clients} clients, dataset has {train.n_clients}")
    if train.dim != cfg.dim:
        raise ValueError(f"config expects dim {cfg.dim}, dataset has {train.dim}")
    root = RngStream(cfg.seed)
    params, anchor = init_params(cfg.width, cfg.dim, root.child(_RNG_INIT))
    clean_xs, clean_ys = train.all_xs(), train.all_ys()
    unit_inputs = train.mode == "sphere"
    records: list[RoundRecord] = []

    for t in range(cfg.rounds):
        deltas, adv_xs, adv_ys = _round_deltas(t, params, train, cfg, root)
        delta_mean = np.mean(np.stack(deltas), axis=0)

        audit = None
        if cfg.grad_audit_every > 0 and t % cfg.grad_audit_every == 0:
            audit = gradient_audit(params, anchor, adv_xs, adv_ys, deltas, cfg.loss, unit_inputs)

        clean_loss, adv_loss, _ = global_losses(params, anchor, clean_xs, clean_ys, adv_xs, adv_ys, cfg.loss)
        dist = norm_2_inf(params.hidden - anchor.hidden0)
        if unit_inputs and cfg.check_displacement:
            bound = displacement_bound(cfg, t)
            if dist > bound * (1.0 + 1e-9) + 1e-12:
                raise RuntimeError(f"round {t}: displacement {dist} exceeds bound {bound}")
        records.append(
            RoundRecord(
                t=t,
                adv_loss=adv_loss,
                clean_loss=clean_loss,
                train_acc=_accuracy(params, clean_xs, clean_ys),
                test_acc=_accuracy(params, test.xs, test.ys) if test is not None else float("nan"),
                dist_init_2inf=dist,
                delta_u_fro=frobenius(delta_mean),
                audit=audit,
            )
        )
        params.hidden = params.hidden + cfg.eta_global * delta_mean

    if not (np.array_equal(params.output, anchor.output0) and np.array_equal(params.bias, anchor.bias0)):
        raise RuntimeError("output weights or biases changed during training")
    return RunResult(records=records, params=params, anchor=anchor)


def run_fal(cfg: FalConfig, train: FederatedDataset, test: LabeledSet | None = None) -> RunResult:
    """Adversarial federated training for ``cfg.rounds`` rounds."""
    return _run(cfg, train, test)


def run_fedavg(cfg: FalConfig, train: FederatedDataset, test: LabeledSet | None = None) -> RunResult:
    """Same loop with the adversary replaced by the identity mapping."""
    return _run(dataclasses.replace(cfg, adversary=None), train, test)
