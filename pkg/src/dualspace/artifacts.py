"""CSV / PGM / SVG writers for run artifacts."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_matrix_csv(path, x: np.ndarray, prefix: str = "x", extra: dict | None = None) -> None:
    x = np.asarray(x, dtype=np.float64)
    extra = extra or {}
    header = [f"{prefix}{j}" for j in range(x.shape[1])] + list(extra)
    cols = [np.asarray(v) for v in extra.values()]
    rows = ([*row, *(c[i].item() for c in cols)] for i, row in enumerate(x.tolist()))
    write_csv(path, header, rows)


def read_matrix_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[float(v) for v in row] for row in r]
    return header, np.array(rows, dtype=np.float64).reshape(len(rows), len(header))


def to_u8(x: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def image_grid(samples: np.ndarray, side: int, ncols: int | None = None, pad: int = 1) -> np.ndarray:
    """Tile flattened ``side x side`` images into one grey grid; values in [0, 1]."""
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.shape[0]
    ncols = ncols or max(1, int(math.ceil(math.sqrt(n))))
    nrows = max(1, int(math.ceil(n / ncols)))
    cell = side + pad
    grid = np.full((nrows * cell + pad, ncols * cell + pad), 0.5)
    for i in range(n):
        r, c = divmod(i, ncols)
        y, x = pad + r * cell, pad + c * cell
        grid[y:y + side, x:x + side] = samples[i].reshape(side, side)
    return grid


def write_pgm(path, image: np.ndarray) -> None:
    """Binary P5 PGM, maxval 255; float images are taken to be in [0, 1]."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = to_u8(img)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos].decode("ascii"))
    if tokens[0] != "P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    data = raw[pos + 1:]
    if len(data) != w * h:
        raise ValueError(f"{path}: payload has {len(data)} bytes, expected {w * h}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def write_loss_svg(path, series: dict, title: str = "") -> None:
    """Line plot of named per-epoch series."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name, values in series.items():
        ax.plot(range(1, len(values) + 1), values, label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    if title:
        ax.set_title(title)
    if series:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
