"""Metrics: mode coverage, held-out recall, and RBF-kernel MMD."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .data import Dataset, HoldoutRule, ShapeRanges, gen_shapes_dataset, ring_centers

MMD_ESTIMATOR = "biased"
_CHUNK = 1024


def _check_dims(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"{what}: dimension mismatch {a.shape} vs {b.shape}")


def _pairwise_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # explicit differences rather than |a|^2 + |b|^2 - 2ab, which cancels badly
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def mode_coverage(samples, centers, sigma: float, min_count: int = 1) -> tuple[float, np.ndarray]:
    """Fraction of centres that collect >= ``min_count`` nearby samples.

    Each sample is assigned to its nearest centre (ties go to the lowest
    index) and only counts if it lies within 3*sigma of that centre.
    """
    samples = np.asarray(samples, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[0] < 1:
        raise ValueError("need at least one centre")
    _check_dims(samples, centers, "mode_coverage")
    counts = np.zeros(centers.shape[0], dtype=np.int64)
    limit = (3.0 * sigma) ** 2
    for start in range(0, samples.shape[0], _CHUNK):
        d2 = _pairwise_sq(samples[start:start + _CHUNK], centers)
        nearest = np.argmin(d2, axis=1)  # first minimum wins ties
        ok = d2[np.arange(nearest.size), nearest] <= limit
        counts += np.bincount(nearest[ok], minlength=centers.shape[0])
    covered = int(np.sum(counts >= min_count))
    return covered / centers.shape[0], counts


def nearest_distances(refs: np.ndarray, pool: np.ndarray, exclude_self: bool = False) -> np.ndarray:
    """Euclidean distance from each row of ``refs`` to its nearest row of ``pool``."""
    out = np.empty(refs.shape[0])
    for start in range(0, refs.shape[0], _CHUNK):
        d = cdist(refs[start:start + _CHUNK], pool)
        if exclude_self:
            rows = np.arange(d.shape[0])
            d[rows, start + rows] = np.inf
        out[start:start + _CHUNK] = d.min(axis=1)
    return out


def holdout_recall(decoded, heldout_refs, tau: float) -> float:
    decoded = np.asarray(decoded, dtype=np.float64)
    heldout_refs = np.asarray(heldout_refs, dtype=np.float64)
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if heldout_refs.ndim != 2 or heldout_refs.shape[0] == 0:
        raise ValueError("holdout_recall needs at least one held-out reference")
    _check_dims(decoded, heldout_refs, "holdout_recall")
    if decoded.shape[0] == 0:
        return 0.0
    return float(np.mean(nearest_distances(heldout_refs, decoded) <= tau))


def default_tau(heldin: np.ndarray, max_rows: int = 2000, seed: int = 0, percentile: float = 5.0) -> float:
    """5th percentile of held-in nearest-neighbour distances (subsampled above ``max_rows``)."""
    x = np.asarray(heldin, dtype=np.float64)
    if x.shape[0] > max_rows:
        x = x[np.random.default_rng(seed).choice(x.shape[0], max_rows, replace=False)]
    if x.shape[0] < 2:
        raise ValueError("need at least two held-in rows to derive tau")
    nn = nearest_distances(x, x, exclude_self=True)
    return float(np.percentile(nn, percentile))


def median_bandwidth(x: np.ndarray, y: np.ndarray) -> float:
    pooled = np.vstack([x, y])
    d = cdist(pooled, pooled)
    iu = np.triu_indices(pooled.shape[0], k=1)
    h = float(np.median(d[iu]))
    if h == 0.0:
        raise ValueError("median heuristic bandwidth is 0 (pooled points are degenerate)")
    return h


def mmd_rbf(x, y, bandwidth="median") -> float:
    """Biased MMD^2 with k(a, b) = exp(-|a - b|^2 / (2 h^2))."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_dims(x, y, "mmd_rbf")
    if x.shape[0] < 2 or y.shape[0] < 2:
        raise ValueError("mmd_rbf needs at least two rows per sample")
    h = median_bandwidth(x, y) if bandwidth == "median" else float(bandwidth)
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    g = 1.0 / (2.0 * h * h)
    kxx = np.exp(-g * _pairwise_sq(x, x)).mean()
    kyy = np.exp(-g * _pairwise_sq(y, y)).mean()
    kxy = np.exp(-g * _pairwise_sq(x, y)).mean()
    return float(kxx + kyy - 2.0 * kxy)


@dataclass
class EvalConfig:
    n_samples: int = 1000
    min_count: int = 10
    mmd_rows: int = 500
    n_holdout_refs: int = 500
    tau: float | None = None
    seed: int = 0


@dataclass
class MetricsReport:
    n_samples: int
    mmd: float
    mmd_estimator: str
    mmd_bandwidth: float
    mode_coverage: float | None = None
    per_mode_counts: list | None = None
    holdout_recall: float | None = None
    holdout_applicable: bool = False
    tau: float | None = None
    holdout_recall_by_tau_multiple: dict | None = None
    min_count: int | None = None
    sigma: float | None = None
    n_holdout_refs: int = 0
    reconstruction: dict | None = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _rows(x: np.ndarray, k: int, seed: int) -> np.ndarray:
    if x.shape[0] <= k:
        return x
    return x[np.sort(np.random.default_rng(seed).choice(x.shape[0], k, replace=False))]


def holdout_references(dataset: Dataset, cfg: EvalConfig) -> np.ndarray | None:
    """Held-out references: fresh draws from the held-out range for shapes, else the masked rows."""
    rule = HoldoutRule.parse(dataset.meta.get("holdout", "none"))
    if rule.is_empty():
        return None
    if dataset.meta.get("generator") == "shapes" and rule.param is not None:
        lo, hi = rule.low, rule.high
        ranges = ShapeRanges.from_dict(dataset.meta["param_ranges"])
        old = getattr(ranges, rule.param)
        ranges = ranges.with_range(rule.param, max(lo, old[0]), min(hi, old[1]))
        fresh = gen_shapes_dataset(dataset.meta["side"], cfg.n_holdout_refs, ranges, seed=cfg.seed + 7919)
        return fresh.samples
    refs = dataset.heldout_samples()
    return refs if refs.shape[0] else None


def evaluate_arm(samples, dataset: Dataset, cfg: EvalConfig | None = None, reconstruction=None) -> MetricsReport:
    cfg = cfg or EvalConfig()
    samples = np.asarray(samples, dtype=np.float64)
    heldin = dataset.train_samples()
    a = _rows(samples, cfg.mmd_rows, cfg.seed)
    b = _rows(heldin, cfg.mmd_rows, cfg.seed + 1)
    bw = median_bandwidth(a, b)
    rep = MetricsReport(n_samples=int(samples.shape[0]), mmd=mmd_rbf(a, b, bw),
                        mmd_estimator=MMD_ESTIMATOR, mmd_bandwidth=bw, reconstruction=reconstruction)
    if dataset.meta.get("generator") == "gaussian_ring":
        centers = ring_centers(dataset.meta["n_modes"], dataset.meta["radius"])
        sigma = dataset.meta["sigma"]
        frac, counts = mode_coverage(samples, centers, sigma, cfg.min_count)
        rep.mode_coverage, rep.per_mode_counts = frac, counts.tolist()
        rep.sigma, rep.min_count = sigma, cfg.min_count
    else:
        rep.notes.append("mode_coverage not applicable: no known mode centres")
    refs = holdout_references(dataset, cfg)
    if refs is None:
        rep.notes.append("holdout_recall not applicable: nothing held out")
    else:
        tau = cfg.tau if cfg.tau is not None else default_tau(heldin, seed=cfg.seed)
        rep.holdout_recall = holdout_recall(samples, refs, tau)
        rep.holdout_recall_by_tau_multiple = {
            str(k): holdout_recall(samples, refs, k * tau) for k in (1, 2, 4)
        }
        rep.holdout_applicable = True
        rep.tau = tau
        rep.n_holdout_refs = int(refs.shape[0])
    return rep
