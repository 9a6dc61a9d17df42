"""Flat ``section.key=value`` run configuration.

Example file::

    # dotted keys, one per line
    data.kind=shapes
    data.holdout=theta_deg:60:120
    gan.epochs=300
    gan.g_hidden=256
    seed=3

Defaults come from :func:`dualspace.pipeline.default_config` for the chosen
``data.kind``; every other key overrides one field. All problems are
collected and reported together before any compute starts.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .data import SHAPE_KINDS, HoldoutRule, ShapeRanges
from .pipeline import PipelineConfig, default_config

DATA_KINDS = ("ring", "shapes", "plane", "idx")
_RANGE_NAMES = ("cx", "cy", "rx", "ry", "theta_deg", "intensity")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration:\n" + "\n".join(f"  {p}" for p in problems))
        self.problems = problems


def parse_lines(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    problems = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            problems.append(f"{source}:{lineno}: expected key=value, got {line!r}")
            continue
        out[key.strip()] = value.strip()
    if problems:
        raise ConfigError(problems)
    return out


def parse_overrides(items) -> dict[str, str]:
    return parse_lines("\n".join(items or []), "--set")


def _to_bool(v: str) -> bool:
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _to_int_tuple(v: str) -> tuple:
    return tuple(int(t) for t in v.replace(" ", "").split(",") if t)


def _to_opt_float(v: str):
    return None if v.lower() in ("", "none", "auto") else float(v)


def _to_opt_str(v: str):
    return None if v.lower() in ("", "none") else v


_FIELDS = {
    "seed": int,
    "data.kind": str, "data.n": int, "data.holdout": str,
    "data.n_modes": int, "data.radius": float, "data.sigma": float,
    "data.side": int, "data.dim": int, "data.rank": int,
    "data.images": _to_opt_str, "data.labels": _to_opt_str,
    "ae.latent_dim": int, "ae.hidden": _to_int_tuple, "ae.epochs": int, "ae.batch_size": int,
    "ae.lr": float, "ae.beta1": float, "ae.beta2": float, "ae.linear": _to_bool,
    "ae.allow_equal_dim": _to_bool,
    "gan.epochs": int, "gan.batch_size": int, "gan.noise_dim": int, "gan.d_steps_per_g_step": int,
    "gan.lr": float, "gan.beta1": float, "gan.beta2": float,
    "gan.g_hidden": _to_int_tuple, "gan.d_hidden": _to_int_tuple,
    "eval.n_samples": int, "eval.min_count": int, "eval.mmd_rows": int,
    "eval.n_holdout_refs": int, "eval.tau": _to_opt_float,
}


def build_config(values: dict[str, str]) -> PipelineConfig:
    problems: list[str] = []
    kind = values.get("data.kind", "shapes")
    if kind not in DATA_KINDS:
        raise ConfigError([f"data.kind: must be one of {', '.join(DATA_KINDS)}, got {kind!r}"])
    cfg = default_config("shapes" if kind == "idx" else kind)
    cfg.data.kind = kind

    ranges = cfg.data.ranges
    for key, raw in values.items():
        if key.startswith("data.ranges."):
            name = key[len("data.ranges."):]
            try:
                if name == "kinds":
                    kinds = tuple(t for t in raw.replace(" ", "").split(",") if t)
                    bad = [k for k in kinds if k not in SHAPE_KINDS]
                    if bad or not kinds:
                        raise ValueError(f"kinds must be a non-empty subset of {SHAPE_KINDS}")
                    ranges = dataclasses.replace(ranges, kinds=kinds)
                elif name in _RANGE_NAMES:
                    lo, hi = (float(t) for t in raw.split(":"))
                    if lo > hi:
                        raise ValueError("empty range")
                    ranges = ranges.with_range(name, lo, hi)
                else:
                    raise KeyError(name)
            except KeyError:
                problems.append(f"{key}: unknown shape range")
            except ValueError as exc:
                problems.append(f"{key}: {exc} (expected lo:hi)")
            continue
        conv = _FIELDS.get(key)
        if conv is None:
            problems.append(f"{key}: unknown configuration key")
            continue
        try:
            value = conv(raw)
        except ValueError as exc:
            problems.append(f"{key}: {exc}")
            continue
        if key == "seed":
            cfg.seed = value
            continue
        section, name = key.split(".", 1)
        setattr(getattr(cfg, section), name, value)
    cfg.data.ranges = ranges
    problems += validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def validate(cfg: PipelineConfig) -> list[str]:
    p = []
    d, ae, gan, ev = cfg.data, cfg.ae, cfg.gan, cfg.eval

    def positive(name, v):
        if v < 1:
            p.append(f"{name}: must be >= 1, got {v}")

    if cfg.seed < 0:
        p.append(f"seed: must be a non-negative integer, got {cfg.seed}")
    positive("data.n", d.n)
    try:
        HoldoutRule.parse(d.holdout)
    except ValueError as exc:
        p.append(f"data.holdout: {exc}")
    if d.kind == "ring":
        if d.n_modes < 2:
            p.append(f"data.n_modes: must be >= 2, got {d.n_modes}")
        if not d.sigma > 0:
            p.append(f"data.sigma: must be > 0, got {d.sigma}")
        if not d.radius > 0:
            p.append(f"data.radius: must be > 0, got {d.radius}")
    if d.kind == "shapes" and d.side < 8:
        p.append(f"data.side: must be >= 8, got {d.side}")
    if d.kind == "plane" and not 1 <= d.rank < d.dim:
        p.append(f"data.rank: need 1 <= rank < dim ({d.dim}), got {d.rank}")
    if d.kind == "idx":
        if d.images is None:
            p.append("data.images: required for data.kind=idx")
        elif not Path(d.images).is_file():
            p.append(f"data.images: dataset file not found: {d.images}")
        if d.labels is not None and not Path(d.labels).is_file():
            p.append(f"data.labels: dataset file not found: {d.labels}")

    positive("ae.latent_dim", ae.latent_dim)
    positive("ae.batch_size", ae.batch_size)
    if ae.epochs < 0:
        p.append(f"ae.epochs: must be >= 0, got {ae.epochs}")
    for name in ("gan.batch_size", "gan.noise_dim", "gan.d_steps_per_g_step"):
        positive(name, getattr(gan, name.split(".")[1]))
    if gan.epochs < 0:
        p.append(f"gan.epochs: must be >= 0, got {gan.epochs}")
    for section, obj in (("ae", ae), ("gan", gan)):
        if not obj.lr > 0:
            p.append(f"{section}.lr: must be > 0, got {obj.lr}")
        for b in ("beta1", "beta2"):
            if not 0.0 <= getattr(obj, b) < 1.0:
                p.append(f"{section}.{b}: must lie in [0, 1), got {getattr(obj, b)}")
    for name in ("ae.hidden", "gan.g_hidden", "gan.d_hidden"):
        section, field = name.split(".")
        if any(h < 1 for h in getattr(getattr(cfg, section), field)):
            p.append(f"{name}: layer widths must be >= 1")
    positive("eval.n_samples", ev.n_samples)
    positive("eval.min_count", ev.min_count)
    if ev.mmd_rows < 2:
        p.append(f"eval.mmd_rows: must be >= 2, got {ev.mmd_rows}")
    positive("eval.n_holdout_refs", ev.n_holdout_refs)
    if ev.tau is not None and not ev.tau > 0:
        p.append(f"eval.tau: must be > 0, got {ev.tau}")
    return p


def load_config(path=None, overrides: dict[str, str] | None = None) -> PipelineConfig:
    values: dict[str, str] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError([f"--config: file not found: {path}"])
        values.update(parse_lines(path.read_text(), str(path)))
    values.update(overrides or {})
    return build_config(values)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(t) for t in v)
    if v is None:
        return "none"
    return str(v)


def to_flat(cfg: PipelineConfig) -> dict[str, str]:
    cfg = cfg.seeded()
    out = {"seed": str(cfg.seed)}
    for key in _FIELDS:
        if key == "seed":
            continue
        section, name = key.split(".", 1)
        out[key] = _fmt(getattr(getattr(cfg, section), name))
    r = cfg.data.ranges
    out["data.ranges.kinds"] = ",".join(r.kinds)
    for name in _RANGE_NAMES:
        lo, hi = getattr(r, name)
        out[f"data.ranges.{name}"] = f"{lo!r}:{hi!r}"
    return out


def dump_flat(cfg: PipelineConfig) -> str:
    return "".join(f"{k}={v}\n" for k, v in to_flat(cfg).items())
