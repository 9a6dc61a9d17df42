"""Synthetic datasets, IDX ingestion, hold-out masks and standardization.

The held-out mask never deletes rows: held-out samples stay in the dataset
for evaluation, and :func:`iter_batches` over :meth:`Dataset.train_indices`
is the only path by which rows reach a trainer.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

STD_FLOOR = 1e-8

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

SHAPE_PARAM_NAMES = ("kind", "cx", "cy", "rx", "ry", "theta_deg", "intensity")
SHAPE_KINDS = ("ellipse", "rectangle")


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: np.ndarray
    labels: np.ndarray | None = None
    heldout_mask: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    # per-sample generator parameters (shapes data), column name -> array
    params: dict | None = None

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError(f"samples must be a 2-D matrix, got shape {x.shape}")
        if not np.isfinite(x).all():
            raise ValueError("samples contain NaN/Inf")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        n = x.shape[0]
        if self.labels is not None:
            lab = np.array(self.labels, dtype=np.int64)
            if lab.shape != (n,):
                raise ValueError(f"labels length {lab.shape[0]} != sample count {n}")
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)
        mask = np.zeros(n, dtype=bool) if self.heldout_mask is None else np.array(self.heldout_mask, dtype=bool)
        if mask.shape != (n,):
            raise ValueError("heldout_mask length must equal sample count")
        mask.setflags(write=False)
        object.__setattr__(self, "heldout_mask", mask)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def name(self) -> str:
        return self.meta.get("name", "dataset")

    @property
    def is_pixel(self) -> bool:
        return bool(self.meta.get("pixel", False))

    def train_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.heldout_mask)

    def heldout_indices(self) -> np.ndarray:
        return np.flatnonzero(self.heldout_mask)

    def train_samples(self) -> np.ndarray:
        return self.samples[self.train_indices()]

    def heldout_samples(self) -> np.ndarray:
        return self.samples[self.heldout_indices()]


def iter_batches(indices: np.ndarray, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """One epoch of shuffled full batches drawn from ``indices``; the remainder is dropped."""
    indices = np.asarray(indices)
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    order = indices[rng.permutation(indices.size)]
    for start in range(0, order.size - batch_size + 1, batch_size):
        yield order[start:start + batch_size]


# ---------------------------------------------------------------- ring


def ring_centers(n_modes: int, radius: float) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(n_modes) / n_modes
    return np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)


def gen_gaussian_ring(n_modes: int, radius: float, sigma: float, n: int, seed: int) -> Dataset:
    if n_modes < 2:
        raise ValueError(f"n_modes must be >= 2, got {n_modes}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, n_modes, size=n)
    centers = ring_centers(n_modes, radius)
    x = centers[labels] + sigma * rng.standard_normal((n, 2))
    meta = {
        "name": "ring",
        "generator": "gaussian_ring",
        "n_modes": n_modes,
        "radius": radius,
        "sigma": sigma,
        "n": n,
        "seed": seed,
        "pixel": False,
    }
    return Dataset(x, labels=labels, meta=meta)


# ---------------------------------------------------------------- plane


def gen_plane(n: int, dim: int, rank: int, seed: int, scale: float = 1.0) -> Dataset:
    """Samples on a random ``rank``-dimensional affine subspace of R^dim."""
    if not 1 <= rank < dim:
        raise ValueError(f"need 1 <= rank < dim, got rank={rank}, dim={dim}")
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((dim, rank)))
    coords = scale * rng.standard_normal((n, rank))
    offset = rng.standard_normal(dim)
    x = coords @ basis.T + offset
    meta = {"name": "plane", "generator": "plane", "n": n, "dim": dim, "rank": rank,
            "seed": seed, "scale": scale, "pixel": False}
    return Dataset(x, meta=meta)


# ---------------------------------------------------------------- shapes


@dataclass(frozen=True)
class ShapeSpec:
    side: int
    kind: str
    cx: float
    cy: float
    rx: float
    ry: float
    theta_deg: float
    intensity: float

    def half_extents(self) -> tuple[float, float]:
        return _half_extents(self.kind, self.rx, self.ry, self.theta_deg)

    def inside_image(self) -> bool:
        ex, ey = self.half_extents()
        tol = 1e-9
        return (self.cx - ex >= -tol and self.cx + ex <= self.side + tol
                and self.cy - ey >= -tol and self.cy + ey <= self.side + tol)


def _half_extents(kind, rx, ry, theta_deg):
    t = math.radians(theta_deg)
    c, s = abs(math.cos(t)), abs(math.sin(t))
    if kind == "ellipse":
        return math.sqrt((rx * c) ** 2 + (ry * s) ** 2), math.sqrt((rx * s) ** 2 + (ry * c) ** 2)
    return rx * c + ry * s, rx * s + ry * c


@dataclass(frozen=True)
class ShapeRanges:
    """Uniform priors for the shape generator; all ranges are closed [lo, hi]."""

    kinds: tuple = ("ellipse",)
    cx: tuple = (7.0, 9.0)
    cy: tuple = (7.0, 9.0)
    rx: tuple = (4.0, 6.0)
    ry: tuple = (1.5, 2.5)
    theta_deg: tuple = (0.0, 180.0)
    intensity: tuple = (0.6, 1.0)

    def with_range(self, name: str, lo: float, hi: float) -> "ShapeRanges":
        return replace(self, **{name: (float(lo), float(hi))})

    def to_dict(self) -> dict:
        return {"kinds": list(self.kinds), "cx": list(self.cx), "cy": list(self.cy), "rx": list(self.rx),
                "ry": list(self.ry), "theta_deg": list(self.theta_deg), "intensity": list(self.intensity)}

    @classmethod
    def from_dict(cls, d: dict) -> "ShapeRanges":
        return cls(**{k: tuple(v) for k, v in d.items()})


def rasterize(spec: ShapeSpec) -> np.ndarray:
    """Binary coverage at pixel centres, scaled by intensity; returns [side, side]."""
    s = spec.side
    ys, xs = np.mgrid[0:s, 0:s] + 0.5
    dx, dy = xs - spec.cx, ys - spec.cy
    t = math.radians(spec.theta_deg)
    u = dx * math.cos(t) + dy * math.sin(t)
    v = -dx * math.sin(t) + dy * math.cos(t)
    if spec.kind == "ellipse":
        inside = (u / spec.rx) ** 2 + (v / spec.ry) ** 2 <= 1.0
    elif spec.kind == "rectangle":
        inside = (np.abs(u) <= spec.rx + 1e-12) & (np.abs(v) <= spec.ry + 1e-12)
    else:
        raise ValueError(f"unknown shape kind {spec.kind!r}")
    return inside * float(spec.intensity)


def gen_shapes_dataset(side: int, n: int, param_ranges: ShapeRanges | None = None, seed: int = 0,
                       max_tries: int = 1000) -> Dataset:
    if side < 8:
        raise ValueError(f"side must be >= 8, got {side}")
    r = param_ranges or ShapeRanges()
    for k in r.kinds:
        if k not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {k!r}")
    lo_i, hi_i = r.intensity
    if lo_i < 0 or hi_i > 1:
        raise ValueError("intensity range must lie within [0, 1]")
    if 2 * min(r.rx[0], r.ry[0]) > side:
        raise ValueError("shape ranges force out-of-bounds shapes")
    rng = np.random.default_rng(seed)
    images = np.zeros((n, side * side))
    cols = {k: [] for k in SHAPE_PARAM_NAMES}
    for i in range(n):
        for _ in range(max_tries):
            spec = ShapeSpec(
                side=side,
                kind=r.kinds[int(rng.integers(len(r.kinds)))],
                cx=rng.uniform(*r.cx), cy=rng.uniform(*r.cy),
                rx=rng.uniform(*r.rx), ry=rng.uniform(*r.ry),
                theta_deg=rng.uniform(*r.theta_deg),
                intensity=rng.uniform(*r.intensity),
            )
            if spec.inside_image():
                break
        else:
            raise ValueError(f"shape ranges force out-of-bounds shapes ({max_tries} rejected draws)")
        images[i] = rasterize(spec).reshape(-1)
        for k in SHAPE_PARAM_NAMES:
            cols[k].append(getattr(spec, k))
    params = {k: np.array(v) for k, v in cols.items()}
    kind_ids = np.array([SHAPE_KINDS.index(k) for k in cols["kind"]], dtype=np.int64)
    meta = {"name": "shapes", "generator": "shapes", "side": side, "n": n, "seed": seed,
            "param_ranges": r.to_dict(), "pixel": True}
    return Dataset(images, labels=kind_ids, meta=meta, params=params)


# ---------------------------------------------------------------- IDX


class IdxFormatError(ValueError):
    pass


def _read_idx(raw: bytes, magic: int, ndim: int, what: str) -> tuple[tuple[int, ...], np.ndarray]:
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{what}: file shorter than the {header}-byte header")
    found = struct.unpack_from(">I", raw, 0)[0]
    if found != magic:
        raise IdxFormatError(f"{what}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack_from(">" + "I" * ndim, raw, 4)
    expected = int(np.prod(dims, dtype=np.int64))
    payload = len(raw) - header
    if payload != expected:
        raise IdxFormatError(f"{what}: header implies {expected} payload bytes, found {payload}")
    return dims, np.frombuffer(raw, dtype=np.uint8, offset=header)


def load_idx(images_path, labels_path=None) -> Dataset:
    dims, pix = _read_idx(Path(images_path).read_bytes(), IDX_IMAGES_MAGIC, 3, str(images_path))
    n, rows, cols = dims
    x = pix.reshape(n, rows * cols).astype(np.float64) / 255.0
    labels = None
    if labels_path is not None:
        (nl,), lab = _read_idx(Path(labels_path).read_bytes(), IDX_LABELS_MAGIC, 1, str(labels_path))
        if nl != n:
            raise IdxFormatError(f"image count {n} != label count {nl}")
        labels = lab.astype(np.int64)
    meta = {"name": "idx", "generator": "idx", "images_path": str(images_path),
            "labels_path": None if labels_path is None else str(labels_path),
            "rows": rows, "cols": cols, "side": rows if rows == cols else None, "n": n, "pixel": True}
    return Dataset(x, labels=labels, meta=meta)


def write_idx_images(path, images_u8: np.ndarray) -> None:
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    n, rows, cols = images_u8.shape
    Path(path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images_u8.tobytes())


def write_idx_labels(path, labels_u8: Sequence[int]) -> None:
    lab = np.asarray(labels_u8, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, lab.size) + lab.tobytes())


# ---------------------------------------------------------------- hold-out


@dataclass(frozen=True)
class HoldoutRule:
    """Either a set of label ids, or a closed range on one generator parameter."""

    labels: frozenset = frozenset()
    param: str | None = None
    low: float = 0.0
    high: float = 0.0

    @classmethod
    def none(cls) -> "HoldoutRule":
        return cls()

    @classmethod
    def parse(cls, text: str) -> "HoldoutRule":
        """``none`` | ``labels:3,5`` | ``theta_deg:60:120``."""
        text = text.strip()
        if text in ("", "none"):
            return cls()
        head, _, rest = text.partition(":")
        if head == "labels":
            ids = [int(t) for t in rest.split(",") if t.strip()]
            return cls(labels=frozenset(ids))
        parts = rest.split(":")
        if head in SHAPE_PARAM_NAMES and len(parts) == 2:
            lo, hi = float(parts[0]), float(parts[1])
            if lo > hi:
                raise ValueError(f"hold-out range {lo}..{hi} is empty")
            return cls(param=head, low=lo, high=hi)
        raise ValueError(f"cannot parse hold-out rule {text!r}")

    def is_empty(self) -> bool:
        return not self.labels and self.param is None

    def describe(self) -> str:
        if self.param is not None:
            return f"{self.param}:{self.low:g}:{self.high:g}"
        if self.labels:
            return "labels:" + ",".join(str(i) for i in sorted(self.labels))
        return "none"

    def mask(self, d: Dataset) -> np.ndarray:
        if self.param is not None:
            if d.params is None or self.param not in d.params:
                raise ValueError(f"dataset {d.name!r} has no generator parameter {self.param!r}")
            v = np.asarray(d.params[self.param], dtype=np.float64)
            return (v >= self.low) & (v <= self.high)
        if self.labels:
            if d.labels is None:
                raise ValueError(f"dataset {d.name!r} has no labels to hold out")
            return np.isin(d.labels, sorted(self.labels))
        return np.zeros(d.n, dtype=bool)


def split_holdout(d: Dataset, rule: HoldoutRule) -> Dataset:
    mask = rule.mask(d)
    if d.n > 0 and mask.all():
        raise ValueError(f"hold-out rule {rule.describe()} excludes every sample; training set would be empty")
    meta = dict(d.meta, holdout=rule.describe())
    return replace(d, heldout_mask=mask, meta=meta)


# ---------------------------------------------------------------- standardization


@dataclass(frozen=True)
class StandardizeStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}


def standardize(x, stats: StandardizeStats | None = None, rows=None) -> tuple[np.ndarray, StandardizeStats]:
    """Column-wise (x - mean) / std.

    When ``stats`` is omitted they are computed over ``rows`` (a boolean or
    index selection, e.g. the non-held-out rows) or over all rows.
    """
    x = np.asarray(x, dtype=np.float64)
    if stats is None:
        ref = x if rows is None else x[rows]
        if ref.shape[0] == 0:
            raise ValueError("cannot compute standardization stats from zero rows")
        stats = StandardizeStats(ref.mean(axis=0), np.maximum(ref.std(axis=0), STD_FLOOR))
    return (x - stats.mean) / stats.std, stats


def destandardize(z, stats: StandardizeStats) -> np.ndarray:
    return np.asarray(z, dtype=np.float64) * stats.std + stats.mean
