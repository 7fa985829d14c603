"""Command-line front end: training runs, the FedAvg baseline, verification
studies, and dataset generation.

Configs are JSON documents; a ``preset`` key ("theory" or "experiment6")
fills defaults that explicit keys override, and the fully resolved config is
echoed next to the outputs so any run can be reproduced from its artifacts.
``FAL_THREADS`` caps the client worker count without affecting results.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .adversary import AdversaryConfig, AdversaryMode, sample_manifold
from .charts import curves_svg
from .core import RngStream
from .data import (
    DEFAULT_CLUSTER_CENTERS,
    ClientDataset,
    FederatedDataset,
    LabeledSet,
    gen_gaussian_clusters,
    gen_separable_sphere,
    save_csv,
    separability_stats,
)
from .federation import RNG_DATA, FalConfig, RunResult, run_fal, run_fedavg
from .model import LossKind, init_params
from .verification import (
    ScalingStudy,
    coupling_study,
    finite_diff_audit,
    fl_gap_study,
    min_adv_loss,
    perturb_columns,
    uniform_approx_study,
)

FLOAT_FMT = "%.17g"

# local steps per round for the cluster-classification preset; with the
# frozen-readout architecture and learning rate 1e-5 this many SGD steps per
# round puts convergence of the well-separated setting near round 40
EXPERIMENT6_LOCAL_STEPS = 96


class ConfigError(ValueError):
    pass


_TOP_KEYS = {
    "preset", "seed", "out", "clients", "points_per_client", "local_steps", "rounds",
    "eta_local", "eta_global", "width", "dim", "loss", "batch_size", "parallel_clients",
    "grad_audit_every", "accumulate_adv_set", "check_displacement", "adversary", "data",
}
_ADV_KEYS = {"mode", "rho", "steps", "step_size", "restarts", "grid_resolution"}
_DATA_KEYS = {"kind", "delta", "scale", "per_class_train", "per_class_test", "flip_rate",
              "shard_by_cluster", "centers"}

_BASE = {
    "preset": None,
    "seed": 0,
    "out": "out",
    "clients": 2,
    "points_per_client": 4,
    "local_steps": 1,
    "rounds": 10,
    "eta_local": None,   # defaults to 1/local_steps
    "eta_global": None,  # defaults to 0.5/(clients*points_per_client)
    "width": 256,
    "dim": 3,
    "loss": "absolute",
    "batch_size": None,
    "parallel_clients": False,
    "grad_audit_every": 0,
    "accumulate_adv_set": False,
    "check_displacement": True,
    "adversary": {"mode": "l2_sphere", "rho": 0.05, "steps": 10, "step_size": 0.0125,
                  "restarts": 1, "grid_resolution": 512},
    "data": {"kind": "sphere", "delta": 0.3},
}

PRESETS = {
    "theory": {
        "clients": 2, "points_per_client": 4, "local_steps": 2, "rounds": 500,
        "width": 4096, "dim": 3, "batch_size": None,
        "adversary": {"mode": "l2_sphere", "rho": 0.05, "steps": 10, "step_size": 0.0125,
                      "restarts": 1, "grid_resolution": 512},
        "data": {"kind": "sphere", "delta": 0.5},
    },
    "experiment6": {
        "clients": 4, "points_per_client": 200, "local_steps": EXPERIMENT6_LOCAL_STEPS,
        "rounds": 100, "width": 128, "dim": 2, "batch_size": 50,
        "eta_local": 1e-5, "eta_global": 1.0,
        "adversary": {"mode": "linf_box", "rho": 0.0314, "steps": 7, "step_size": 0.00784,
                      "restarts": 1, "grid_resolution": 512},
        "data": {"kind": "clusters", "scale": 2.5, "per_class_train": 400,
                 "per_class_test": 100, "flip_rate": 0.05, "shard_by_cluster": False},
    },
}


def _merge(base: dict, overlay: dict) -> dict:
    out = dict(base)
    for k, v in overlay.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _check_keys(doc: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"unknown {where} key(s): {', '.join(unknown)}")


def resolve_config(doc: dict) -> dict:
    """Validate a raw config document and fill preset defaults and derived
    values; the result is a complete config that resolves to itself."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(doc, _TOP_KEYS, "config")
    if "adversary" in doc:
        _check_keys(doc["adversary"], _ADV_KEYS, "adversary")
    if "data" in doc:
        _check_keys(doc["data"], _DATA_KEYS, "data")
    preset = doc.get("preset")
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = _merge(_BASE, PRESETS[preset]) if preset else dict(_BASE)
    cfg = _merge(cfg, doc)

    if cfg["data"]["kind"] == "clusters":
        derived = 2 * int(cfg["data"]["per_class_train"]) // int(cfg["clients"])
        if doc.get("points_per_client") not in (None, derived) and preset == "experiment6":
            raise ConfigError("points_per_client conflicts with the cluster sizes")
        cfg["points_per_client"] = derived
        if cfg["dim"] != 2:
            raise ConfigError("cluster data is two-dimensional; set dim = 2")

    if cfg["eta_local"] is None:
        cfg["eta_local"] = 1.0 / cfg["local_steps"]
    if preset == "theory" and abs(cfg["eta_local"] * cfg["local_steps"] - 1.0) > 1e-12:
        raise ConfigError("the theory preset requires eta_local = 1/local_steps")
    if cfg["eta_global"] is None:
        cfg["eta_global"] = 0.5 / (cfg["clients"] * cfg["points_per_client"])
    if cfg["loss"] != "absolute":
        raise ConfigError(f"unsupported loss {cfg['loss']!r}")
    try:
        AdversaryMode(cfg["adversary"]["mode"])
    except ValueError:
        raise ConfigError(f"unknown adversary mode {cfg['adversary']['mode']!r}") from None
    return cfg


def build_adversary(adv: dict, seed: int) -> AdversaryConfig:
    return AdversaryConfig(
        mode=AdversaryMode(adv["mode"]),
        rho=float(adv["rho"]),
        steps=int(adv["steps"]),
        step_size=float(adv["step_size"]),
        restarts=int(adv["restarts"]),
        grid_resolution=int(adv["grid_resolution"]),
        rng=RngStream(seed).child(RNG_DATA + 1),
    )


def build_run(cfg: dict) -> tuple[FalConfig, FederatedDataset, LabeledSet | None]:
    data = cfg["data"]
    rng = RngStream(int(cfg["seed"])).child(RNG_DATA)
    if data["kind"] == "sphere":
        train = gen_separable_sphere(
            int(cfg["clients"]), int(cfg["points_per_client"]), int(cfg["dim"]),
            float(data["delta"]), rng,
        )
        test = None
    elif data["kind"] == "clusters":
        centers = data.get("centers") or DEFAULT_CLUSTER_CENTERS
        train, test = gen_gaussian_clusters(
            float(data["scale"]), int(data["per_class_train"]), int(data["per_class_test"]),
            float(data["flip_rate"]), int(cfg["clients"]), rng,
            centers=centers, shard_by_cluster=bool(data["shard_by_cluster"]),
        )
    else:
        raise ConfigError(f"unknown data kind {data['kind']!r}")
    fal = FalConfig(
        n_clients=int(cfg["clients"]),
        local_steps=int(cfg["local_steps"]),
        rounds=int(cfg["rounds"]),
        eta_local=float(cfg["eta_local"]),
        eta_global=float(cfg["eta_global"]),
        width=int(cfg["width"]),
        dim=int(cfg["dim"]),
        loss=LossKind(cfg["loss"]),
        adversary=build_adversary(cfg["adversary"], int(cfg["seed"])),
        batch_size=None if cfg["batch_size"] is None else int(cfg["batch_size"]),
        seed=int(cfg["seed"]),
        parallel_clients=bool(cfg["parallel_clients"]),
        grad_audit_every=int(cfg["grad_audit_every"]),
        accumulate_adv_set=bool(cfg["accumulate_adv_set"]),
        check_displacement=bool(cfg["check_displacement"]),
    )
    return fal, train, test


METRIC_COLUMNS = ["round", "adv_loss", "clean_loss", "train_acc", "test_acc",
                  "dist_init_2inf", "delta_u_fro"]
AUDIT_COLUMNS = ["fl_gap_21", "coupling_gap_21", "flip_count"]


def write_metrics_csv(path, records, audited: bool) -> None:
    cols = METRIC_COLUMNS + (AUDIT_COLUMNS if audited else [])
    lines = [",".join(cols)]
    for r in records:
        vals = [str(r.t)] + [
            FLOAT_FMT % v
            for v in (r.adv_loss, r.clean_loss, r.train_acc, r.test_acc, r.dist_init_2inf, r.delta_u_fro)
        ]
        if audited:
            if r.audit is None:
                vals += ["", "", ""]
            else:
                vals += [FLOAT_FMT % r.audit.fl_gap_21, FLOAT_FMT % r.audit.coupling_gap_21,
                         str(r.audit.flip_count)]
        lines.append(",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_curves_svg(path, records) -> None:
    ts = [r.t for r in records]
    panels = [
        ("loss vs round", [
            ("adversarial", ts, [r.adv_loss for r in records]),
            ("clean", ts, [r.clean_loss for r in records]),
        ]),
        ("accuracy vs round", [
            ("train", ts, [r.train_acc for r in records]),
            ("test", ts, [r.test_acc for r in records]),
        ]),
    ]
    Path(path).write_text(curves_svg(panels), encoding="utf-8")


def _load_config_file(path: str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def _apply_set_overrides(doc: dict, pairs: list[str]) -> dict:
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return doc


def cmd_run(args, fedavg: bool = False) -> int:
    doc = _load_config_file(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.rounds is not None:
        doc["rounds"] = args.rounds
    if args.out is not None:
        doc["out"] = args.out
    _apply_set_overrides(doc, args.set or [])
    cfg = resolve_config(doc)
    outdir = Path(cfg["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "resolved_config.json").write_text(
        json.dumps(cfg, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    fal, train, test = build_run(cfg)
    result: RunResult = run_fedavg(fal, train, test) if fedavg else run_fal(fal, train, test)
    write_metrics_csv(outdir / "metrics.csv", result.records, audited=fal.grad_audit_every > 0)
    write_curves_svg(outdir / "curves.svg", result.records)
    if result.records:
        last = result.records[-1]
        print(f"rounds={len(result.records)} adv_loss={last.adv_loss:.6g} "
              f"clean_loss={last.clean_loss:.6g} train_acc={last.train_acc:.4f} "
              f"min_adv_loss={min_adv_loss(result.records):.6g}")
    else:
        print("rounds=0")
    return 0


def _parse_grid(text: str) -> list[int]:
    try:
        grid = [int(v) for v in text.split(",") if v]
    except ValueError:
        raise ConfigError(f"bad width grid {text!r}") from None
    if len(grid) < 2:
        raise ConfigError("width grid needs at least two entries")
    return grid


def _verify_fl_gap(args) -> ScalingStudy:
    grid = _parse_grid(args.m_grid or "256,1024,4096")
    traces = []
    for m in grid:
        doc = {
            "preset": "theory", "seed": args.seed, "rounds": 6, "width": m,
            "local_steps": args.K, "grad_audit_every": 1,
            "data": {"kind": "sphere", "delta": 0.3},
        }
        cfg = resolve_config(doc)
        fal, train, test = build_run(cfg)
        traces.append((m, run_fal(fal, train, test).records))
    study = fl_gap_study(traces)
    if args.K == 1:
        worst = max(a.audit.fl_gap_fro for _, recs in traces for a in recs if a.audit is not None)
        study.extras["max_fl_gap_fro"] = worst
        study.checks["one_step_identity"] = worst <= 1e-9
    return study


def _verify_convergence(args) -> dict:
    doc = {"preset": "theory", "seed": args.seed}
    if args.rounds is not None:
        doc["rounds"] = args.rounds
    cfg = resolve_config(doc)
    fal, train, test = build_run(cfg)
    records = run_fal(fal, train, test).records
    best = min_adv_loss(records)
    mean = float(np.mean([r.adv_loss for r in records]))
    initial = records[0].adv_loss
    return {
        "study": "convergence",
        "rounds": len(records),
        "initial_adv_loss": initial,
        "min_adv_loss": best,
        "mean_adv_loss": mean,
        "checks": {
            "halved_initial_loss": bool(best <= 0.5 * initial),
            "min_le_mean": bool(best <= mean),
        },
        "pass": bool(best <= 0.5 * initial and best <= mean),
    }


def _verify_finite_diff(args) -> dict:
    worst_real, worst_pseudo = 0.0, 0.0
    for s in range(args.seeds):
        rng = RngStream(args.seed).child(s)
        params, anchor = init_params(128, 3, rng.child(0))
        params.hidden = perturb_columns(anchor.hidden0, 0.5 * 128 ** (-2.0 / 3.0), rng.child(1))
        xs = sample_manifold(rng.child(2), 8, 3)
        ys = rng.child(3).generator().uniform(-1.0, 1.0, 8)
        report = finite_diff_audit(params, anchor, xs, ys, probe=1e-6, rng=rng.child(4))
        worst_real = max(worst_real, report.real_max_rel)
        worst_pseudo = max(worst_pseudo, report.pseudo_max_rel)
    return {
        "study": "finite-diff",
        "seeds": args.seeds,
        "max_rel_error_real": worst_real,
        "max_rel_error_pseudo": worst_pseudo,
        "checks": {"real_below_1e-5": bool(worst_real <= 1e-5),
                   "pseudo_below_1e-7": bool(worst_pseudo <= 1e-7)},
        "pass": bool(worst_real <= 1e-5 and worst_pseudo <= 1e-7),
    }


def cmd_verify(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    name = args.study
    if name == "uniform-approx":
        grid = _parse_grid(args.m_grid or "256,1024,4096,16384")
        study = uniform_approx_study(args.radius, grid, d=3, n_samples=args.samples,
                                     rng=RngStream(args.seed), n_seeds=args.seeds)
    elif name == "coupling":
        grid = _parse_grid(args.m_grid or "256,1024,4096,16384")
        study = coupling_study(2, 4, 3, grid, RngStream(args.seed))
    elif name == "fl-gap":
        study = _verify_fl_gap(args)
    elif name == "finite-diff":
        summary = _verify_finite_diff(args)
        study = None
    elif name == "convergence":
        summary = _verify_convergence(args)
        study = None
    else:
        print(f"unknown study {name!r}; choose from uniform-approx, coupling, fl-gap, "
              f"finite-diff, convergence", file=sys.stderr)
        return 1
    if study is not None:
        study.write_csv(outdir / f"{name}.csv")
        summary = study.summary()
    (outdir / f"{name}_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0 if summary["pass"] else 1


def cmd_gen_data(args) -> int:
    rng = RngStream(args.seed).child(RNG_DATA)
    if args.kind == "sphere":
        if not 0.0 < args.delta <= 0.5:
            print(f"delta must lie in (0, 0.5], got {args.delta}", file=sys.stderr)
            return 1
        ds = gen_separable_sphere(args.N, args.J, args.d, args.delta, rng)
        save_csv(ds, args.out)
        delta_min, gamma = separability_stats(ds, args.rho)
        print(f"wrote {args.out}: {ds.n_clients * ds.points_per_client} points, "
              f"delta_min={delta_min:.6g} gamma_bound={gamma:.6g} (rho={args.rho})")
        return 0
    if args.kind == "clusters":
        train, test = gen_gaussian_clusters(
            args.scale, args.per_class_train, args.per_class_test, args.flip_rate,
            args.clients, rng, shard_by_cluster=args.shard_by_cluster,
        )
        out = Path(args.out)
        train_path = out if out.suffix else out / "train.csv"
        train_path.parent.mkdir(parents=True, exist_ok=True)
        save_csv(train, train_path)
        test_ds = FederatedDataset(
            clients=[ClientDataset(xs=test.xs, ys=test.ys, client_id=0)], mode="clusters"
        )
        test_path = train_path.with_name(train_path.stem + "_test.csv")
        save_csv(test_ds, test_path)
        delta_min, gamma = separability_stats(train, args.rho)
        print(f"wrote {train_path} ({len(train.all_ys())} rows) and {test_path} "
              f"({len(test)} rows), delta_min={delta_min:.6g} gamma_bound={gamma:.6g}")
        return 0
    print(f"unknown data kind {args.kind!r}", file=sys.stderr)
    return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="falsim",
        description="Federated adversarial training simulator and verification harness.",
        epilog="FAL_THREADS caps the client worker count; results do not depend on it.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for cmd in ("run", "fedavg"):
        p = sub.add_parser(cmd, help=f"{cmd} a training configuration")
        p.add_argument("config", help="JSON config file")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--rounds", type=int, default=None)
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a (dotted) config key; value parsed as JSON")

    v = sub.add_parser("verify", help="run a verification study")
    v.add_argument("study", help="uniform-approx | coupling | fl-gap | finite-diff | convergence")
    v.add_argument("--out", default="out")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--seeds", type=int, default=10, help="replicates where applicable")
    v.add_argument("--m-grid", default=None, help="comma-separated widths")
    v.add_argument("--K", type=int, default=4, help="local steps for fl-gap")
    v.add_argument("--samples", type=int, default=10000, help="manifold samples for uniform-approx")
    v.add_argument("--radius", type=float, default=1.0, help="displacement scale for uniform-approx")
    v.add_argument("--rounds", type=int, default=None, help="override rounds for convergence")

    g = sub.add_parser("gen-data", help="generate a dataset CSV")
    g.add_argument("kind", help="sphere | clusters")
    g.add_argument("--out", default="data.csv")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--rho", type=float, default=0.05, help="adversary radius for the gamma bound")
    g.add_argument("--N", type=int, default=2, help="clients (sphere)")
    g.add_argument("--J", type=int, default=4, help="points per client (sphere)")
    g.add_argument("--d", type=int, default=3, help="dimension (sphere)")
    g.add_argument("--delta", type=float, default=0.3, help="minimum separation (sphere)")
    g.add_argument("--scale", type=float, default=2.5, help="feature scale (clusters)")
    g.add_argument("--per-class-train", type=int, default=400)
    g.add_argument("--per-class-test", type=int, default=100)
    g.add_argument("--flip-rate", type=float, default=0.05)
    g.add_argument("--clients", type=int, default=4)
    g.add_argument("--shard-by-cluster", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args, fedavg=False)
        if args.command == "fedavg":
            return cmd_run(args, fedavg=True)
        if args.command == "verify":
            return cmd_verify(args)
        if args.command == "gen-data":
            return cmd_gen_data(args)
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 2
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
