"""Synthetic federated datasets and their separation statistics.

Two generators: well-separated points on the unit-sphere manifold with labels
in [-1, 1] (the regime the convergence analysis assumes), and planar Gaussian
clusters with +/-1 labels for the classification experiment (two clusters per
class, optional label flips, features multiplied by a separability scale).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .adversary import MANIFOLD_LAST, manifold_residuals, sample_manifold
from .core import RngStream, require_finite

# class 0 then class 1; each class is two unit-std clusters
DEFAULT_CLUSTER_CENTERS = (((-2.0, 0.0), (0.0, 2.0)), ((2.0, 0.0), (0.0, -2.0)))

_REJECTION_LIMIT = 1_000_000


class PackingError(RuntimeError):
    """Separation constraint cannot be met by rejection sampling."""


@dataclass
class LabeledSet:
    xs: np.ndarray  # (n, d)
    ys: np.ndarray  # (n,)

    def __post_init__(self) -> None:
        self.xs = np.atleast_2d(require_finite(self.xs, "xs"))
        self.ys = require_finite(self.ys, "ys").reshape(-1)
        if self.xs.shape[0] != self.ys.shape[0]:
            raise ValueError("xs and ys disagree in length")

    def __len__(self) -> int:
        return self.xs.shape[0]


@dataclass
class ClientDataset(LabeledSet):
    client_id: int = 0


@dataclass
class FederatedDataset:
    clients: list[ClientDataset]
    mode: str = "generic"  # "sphere" | "clusters" | "generic"

    def __post_init__(self) -> None:
        if not self.clients:
            raise ValueError("dataset needs at least one client")
        sizes = {len(c) for c in self.clients}
        if len(sizes) != 1:
            raise ValueError(f"all clients must hold the same number of points, got sizes {sorted(sizes)}")

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    @property
    def points_per_client(self) -> int:
        return len(self.clients[0])

    @property
    def dim(self) -> int:
        return self.clients[0].xs.shape[1]

    def all_xs(self) -> np.ndarray:
        return np.concatenate([c.xs for c in self.clients], axis=0)

    def all_ys(self) -> np.ndarray:
        return np.concatenate([c.ys for c in self.clients], axis=0)


def gen_separable_sphere(
    n_clients: int, per_client: int, d: int, delta: float, rng: RngStream
) -> FederatedDataset:
    """Rejection-sample ``n_clients * per_client`` manifold points with pairwise
    distance >= delta; labels uniform in [-1, 1].

    Raises :class:`PackingError` after 10^6 consecutive rejections instead of
    spinning forever on an infeasible packing.
    """
    if d < 3:
        raise ValueError("separable sphere generation needs d >= 3")
    if not 0 < delta <= 0.5:
        raise ValueError(f"delta must lie in (0, 0.5], got {delta}")
    total = n_clients * per_client
    accepted = np.empty((total, d))
    count = 0
    gen_stream = rng.child(0)
    batch_idx = 0
    consecutive_rejections = 0
    while count < total:
        cand = sample_manifold(gen_stream.child(batch_idx), 256, d)
        batch_idx += 1
        for row in cand:
            if count == total:
                break
            if count > 0:
                dists = np.linalg.norm(accepted[:count] - row, axis=1)
                if dists.min() < delta:
                    consecutive_rejections += 1
                    if consecutive_rejections >= _REJECTION_LIMIT:
                        raise PackingError(
                            f"placed {count}/{total} points at separation {delta}; "
                            f"aborting after {_REJECTION_LIMIT} consecutive rejections"
                        )
                    continue
            accepted[count] = row
            count += 1
            consecutive_rejections = 0
    labels = rng.child(1).generator().uniform(-1.0, 1.0, size=total)
    clients = [
        ClientDataset(
            xs=accepted[c * per_client : (c + 1) * per_client],
            ys=labels[c * per_client : (c + 1) * per_client],
            client_id=c,
        )
        for c in range(n_clients)
    ]
    return FederatedDataset(clients=clients, mode="sphere")


def gen_gaussian_clusters(
    scale: float,
    per_class_train: int,
    per_class_test: int,
    flip_rate: float,
    n_clients: int,
    rng: RngStream,
    centers=DEFAULT_CLUSTER_CENTERS,
    shard_by_cluster: bool = False,
) -> tuple[FederatedDataset, LabeledSet]:
    """Two-class planar clusters: each class is two unit-std Gaussians, the
    whole feature matrix multiplied by ``scale``. ``flip_rate`` of the training
    labels flip sign; training points split evenly across clients, either after
    a seeded shuffle (default, roughly IID) or by cluster (non-IID shards).
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    if not 0 <= flip_rate < 0.5:
        raise ValueError(f"flip_rate must lie in [0, 0.5), got {flip_rate}")
    n_train = 2 * per_class_train
    if n_train % n_clients != 0:
        raise ValueError(
            f"training points ({n_train}) must divide evenly across {n_clients} clients"
        )
    centers = np.asarray(centers, dtype=np.float64)
    if centers.shape != (2, 2, 2):
        raise ValueError("centers must be two classes of two 2-D cluster means")

    def draw(per_class: int, stream: RngStream) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        gen = stream.generator()
        xs, ys, cluster = [], [], []
        for label_idx, sign in enumerate((-1.0, 1.0)):
            counts = [per_class // 2, per_class - per_class // 2]
            for cluster_idx, cnt in enumerate(counts):
                pts = centers[label_idx, cluster_idx] + gen.standard_normal((cnt, 2))
                xs.append(pts)
                ys.append(np.full(cnt, sign))
                cluster.append(np.full(cnt, 2 * label_idx + cluster_idx))
        return np.concatenate(xs) * scale, np.concatenate(ys), np.concatenate(cluster)

    train_xs, train_ys, train_cluster = draw(per_class_train, rng.child(0))
    test_xs, test_ys, _ = draw(per_class_test, rng.child(1))

    n_flips = int(round(flip_rate * n_train))
    if n_flips > 0:
        flip_idx = rng.child(2).generator().choice(n_train, size=n_flips, replace=False)
        train_ys = train_ys.copy()
        train_ys[flip_idx] *= -1.0

    if shard_by_cluster:
        order = np.argsort(train_cluster, kind="stable")
    else:
        order = rng.child(3).generator().permutation(n_train)
    train_xs, train_ys = train_xs[order], train_ys[order]

    per_client = n_train // n_clients
    clients = [
        ClientDataset(
            xs=train_xs[c * per_client : (c + 1) * per_client],
            ys=train_ys[c * per_client : (c + 1) * per_client],
            client_id=c,
        )
        for c in range(n_clients)
    ]
    return FederatedDataset(clients=clients, mode="clusters"), LabeledSet(xs=test_xs, ys=test_ys)


def separability_stats(ds: FederatedDataset, rho: float) -> tuple[float, float]:
    """(delta_min, delta_min * (delta_min - 2 rho)).

    delta_min is the exact minimum pairwise distance over all distinct points,
    recomputed by an O(n^2) scan. The second value may be <= 0; callers decide
    whether that invalidates their separation requirement.
    """
    xs = ds.all_xs()
    n = xs.shape[0]
    if n < 2:
        raise ValueError("need at least two points")
    sq = np.sum(xs * xs, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * xs @ xs.T
    np.fill_diagonal(d2, np.inf)
    delta_min = float(np.sqrt(max(d2.min(), 0.0)))
    return delta_min, delta_min * (delta_min - 2.0 * rho)


CSV_FLOAT_FORMAT = "%.17g"


def save_csv(ds: FederatedDataset, path) -> None:
    """Write ``client,index,y,x0,x1,...`` rows with 17-significant-digit decimals."""
    d = ds.dim
    header = ["client", "index", "y"] + [f"x{i}" for i in range(d)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for client in ds.clients:
            for j in range(len(client)):
                row = [str(client.client_id), str(j), CSV_FLOAT_FORMAT % client.ys[j]]
                row += [CSV_FLOAT_FORMAT % v for v in client.xs[j]]
                writer.writerow(row)


class CsvFormatError(ValueError):
    """Malformed dataset CSV; message carries the offending line number."""


def load_csv(path) -> FederatedDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        if header[:3] != ["client", "index", "y"] or any(
            h != f"x{i}" for i, h in enumerate(header[3:])
        ) or len(header) < 4:
            raise CsvFormatError(f"{path}: line 1: bad header {header!r}")
        d = len(header) - 3
        per_client: dict[int, list[tuple[int, np.ndarray, float]]] = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise CsvFormatError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                client = int(row[0])
                index = int(row[1])
                y = float(row[2])
                x = np.array([float(v) for v in row[3:]], dtype=np.float64)
            except ValueError as exc:
                raise CsvFormatError(f"{path}: line {lineno}: {exc}") from None
            if not np.all(np.isfinite(x)) or not np.isfinite(y):
                raise CsvFormatError(f"{path}: line {lineno}: non-finite value")
            per_client.setdefault(client, []).append((index, x, y))
        if not per_client:
            raise CsvFormatError(f"{path}: no data rows")
    clients = []
    for cid in sorted(per_client):
        rows = sorted(per_client[cid], key=lambda r: r[0])
        xs = np.stack([r[1] for r in rows])
        ys = np.array([r[2] for r in rows])
        clients.append(ClientDataset(xs=xs, ys=ys, client_id=cid))
    ds = FederatedDataset(clients=clients)
    rn, rl = manifold_residuals(ds.all_xs())
    ds.mode = "sphere" if d >= 2 and rn.max() <= 1e-9 and rl.max() <= 1e-9 else "clusters"
    return ds


__all__ = [
    "ClientDataset",
    "CsvFormatError",
    "DEFAULT_CLUSTER_CENTERS",
    "FederatedDataset",
    "LabeledSet",
    "MANIFOLD_LAST",
    "PackingError",
    "gen_gaussian_clusters",
    "gen_separable_sphere",
    "load_csv",
    "save_csv",
    "separability_stats",
]
