"""The two experimental arms and their comparison.

dual_space: autoencoder -> encode held-in rows -> GAN on codes -> sample -> decode
direct:     GAN on raw held-in rows -> sample

Both arms share one GAN config, one dataset and one shuffling seed, so their
GAN phases see identical streams of training-row indices.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autoencoder as ae_mod
from .artifacts import image_grid, write_csv, write_matrix_csv, write_pgm
from .autoencoder import AEConfig, AutoencoderModel
from .data import (
    Dataset,
    HoldoutRule,
    ShapeRanges,
    gen_gaussian_ring,
    gen_plane,
    gen_shapes_dataset,
    load_idx,
    split_holdout,
)
from .evaluation import EvalConfig, evaluate_arm
from .gan import GanModel, GanTrainConfig, gan_step_flops, sample_generator, train_gan
from .nn import save_params
from .training import TrainingDivergedError, flops_estimate, forward_flops

ARMS = ("dual_space", "direct")

__all__ = [
    "ARMS", "DataConfig", "PipelineConfig", "ExperimentReport", "ArmResult", "PhaseError",
    "default_config", "build_dataset", "run_dual_space", "run_direct", "compare",
    "flops_estimate", "forward_flops", "gan_step_flops", "write_arm_artifacts",
]


class PhaseError(RuntimeError):
    """A pipeline phase failed; ``phase`` names it."""

    def __init__(self, arm: str, phase: str, cause: BaseException):
        super().__init__(f"[{arm}/{phase}] {cause}")
        self.arm = arm
        self.phase = phase
        self.cause = cause


@dataclass
class DataConfig:
    kind: str = "shapes"  # ring | shapes | plane | idx
    n: int = 4096
    holdout: str = "none"
    # ring
    n_modes: int = 8
    radius: float = 2.0
    sigma: float = 0.05
    # shapes
    side: int = 16
    ranges: ShapeRanges = field(default_factory=ShapeRanges)
    # plane
    dim: int = 10
    rank: int = 2
    # idx
    images: str | None = None
    labels: str | None = None


@dataclass
class PipelineConfig:
    data: DataConfig = field(default_factory=DataConfig)
    ae: AEConfig = field(default_factory=AEConfig)
    gan: GanTrainConfig = field(default_factory=GanTrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0

    def seeded(self) -> "PipelineConfig":
        """Copy with the master seed pushed into every sub-config."""
        c = dataclasses.replace(
            self,
            ae=dataclasses.replace(self.ae, seed=self.seed),
            gan=dataclasses.replace(self.gan, seed=self.seed),
            eval=dataclasses.replace(self.eval, seed=self.seed),
        )
        return c

    def snapshot(self) -> dict:
        d = dataclasses.asdict(self.seeded())
        d["data"]["ranges"] = self.data.ranges.to_dict()
        return d


def default_config(kind: str = "shapes") -> PipelineConfig:
    if kind == "shapes":
        return PipelineConfig(
            data=DataConfig(kind="shapes", n=4096, side=16),
            ae=AEConfig(latent_dim=16, hidden=(128, 64), epochs=150, batch_size=64, lr=2e-3),
            gan=GanTrainConfig(epochs=60, batch_size=64, noise_dim=16, g_hidden=(256,), d_hidden=(256,)),
        )
    if kind == "ring":
        return PipelineConfig(
            data=DataConfig(kind="ring", n=4096, n_modes=8, radius=2.0, sigma=0.05),
            ae=AEConfig(latent_dim=2, hidden=(32,), epochs=60, batch_size=64, allow_equal_dim=True),
            gan=GanTrainConfig(epochs=100, batch_size=64, noise_dim=2, g_hidden=(128, 128), d_hidden=(128, 128)),
        )
    if kind == "plane":
        return PipelineConfig(
            data=DataConfig(kind="plane", n=1024, dim=10, rank=2),
            ae=AEConfig(latent_dim=2, hidden=(), epochs=200, batch_size=64, lr=1e-2, linear=True),
            gan=GanTrainConfig(epochs=50, batch_size=64, noise_dim=2, g_hidden=(64,), d_hidden=(64,)),
        )
    raise ValueError(f"no default config for dataset kind {kind!r}")


def build_dataset(dc: DataConfig, seed: int) -> Dataset:
    if dc.kind == "ring":
        d = gen_gaussian_ring(dc.n_modes, dc.radius, dc.sigma, dc.n, seed)
    elif dc.kind == "shapes":
        d = gen_shapes_dataset(dc.side, dc.n, dc.ranges, seed)
    elif dc.kind == "plane":
        d = gen_plane(dc.n, dc.dim, dc.rank, seed)
    elif dc.kind == "idx":
        if dc.images is None:
            raise ValueError("data.images is required for kind=idx")
        d = load_idx(dc.images, dc.labels)
    else:
        raise ValueError(f"unknown dataset kind {dc.kind!r}")
    return split_holdout(d, HoldoutRule.parse(dc.holdout))


@dataclass
class ExperimentReport:
    arm: str
    dataset: str
    seed: int
    config: dict
    space_dim: int
    phase_seconds: dict = field(default_factory=dict)
    phase_flops: dict = field(default_factory=dict)
    flops_per_step: dict = field(default_factory=dict)
    steps: dict = field(default_factory=dict)
    losses: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    @property
    def total_seconds(self) -> float:
        return float(sum(self.phase_seconds.values()))

    @property
    def total_flops(self) -> int:
        return int(sum(self.phase_flops.values()))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["total_seconds"] = self.total_seconds
        d["total_flops"] = self.total_flops
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class ArmResult:
    report: ExperimentReport
    samples: np.ndarray
    gan: GanModel
    autoencoder: AutoencoderModel | None = None
    latent_samples: np.ndarray | None = None


def _gan_config(cfg: PipelineConfig, pixel_space: bool) -> GanTrainConfig:
    return dataclasses.replace(cfg.gan, output_activation="sigmoid" if pixel_space else "identity")


def _phase(arm: str, name: str, fn):
    t0 = time.perf_counter()
    try:
        out = fn()
    except (TrainingDivergedError, ValueError, ArithmeticError) as exc:
        raise PhaseError(arm, name, exc) from exc
    return out, time.perf_counter() - t0


def _sample_seed(cfg: PipelineConfig) -> int:
    return cfg.seed * 1_000_003 + 17


def run_dual_space(cfg: PipelineConfig, dataset: Dataset | None = None, batch_audit=None) -> ArmResult:
    arm = "dual_space"
    cfg = cfg.seeded()
    d = dataset if dataset is not None else _phase(arm, "data", lambda: build_dataset(cfg.data, cfg.seed))[0]
    rep = ExperimentReport(arm, d.name, cfg.seed, cfg.snapshot(), space_dim=cfg.ae.latent_dim)
    train_idx = d.train_indices()

    ae, t = _phase(arm, "ae_train", lambda: ae_mod.train_autoencoder(d, cfg.ae, batch_audit))
    rep.phase_seconds["ae_train"] = t
    rep.phase_flops["ae_train"] = ae.report.flops_total
    rep.flops_per_step["ae_train"] = ae.report.flops_per_step
    rep.steps["ae_train"] = ae.report.steps
    rep.losses["ae_train"] = ae.report.epoch_losses

    code, t = _phase(arm, "encode", lambda: ae_mod.encode(ae, d.samples[train_idx], d.name))
    rep.phase_seconds["encode"] = t
    rep.phase_flops["encode"] = forward_flops(ae.encoder, train_idx.size)

    gcfg = _gan_config(cfg, pixel_space=False)
    gan, t = _phase(arm, "gan_train", lambda: train_gan(code.codes, gcfg, train_idx, batch_audit))
    rep.phase_seconds["gan_train"] = t
    rep.phase_flops["gan_train"] = gan.report.flops_total
    rep.flops_per_step["gan_train"] = gan.report.flops_per_step
    rep.steps["gan_train"] = gan.report.steps
    rep.losses["gan_train"] = gan.report.epoch_losses

    k = cfg.eval.n_samples
    latent, t = _phase(arm, "sample", lambda: sample_generator(gan, k, _sample_seed(cfg)))
    rep.phase_seconds["sample"] = t
    rep.phase_flops["sample"] = forward_flops(gan.generator, k)

    decoded, t = _phase(arm, "decode", lambda: ae_mod.decode(ae, latent))
    rep.phase_seconds["decode"] = t
    rep.phase_flops["decode"] = forward_flops(ae.decoder, k)

    recon = ae_mod.reconstruction_error(ae, d)
    metrics, _ = _phase(arm, "evaluate", lambda: evaluate_arm(decoded, d, cfg.eval, reconstruction=recon))
    rep.metrics = metrics.to_dict()
    return ArmResult(rep, decoded, gan, ae, latent)


def run_direct(cfg: PipelineConfig, dataset: Dataset | None = None, batch_audit=None) -> ArmResult:
    arm = "direct"
    cfg = cfg.seeded()
    d = dataset if dataset is not None else _phase(arm, "data", lambda: build_dataset(cfg.data, cfg.seed))[0]
    rep = ExperimentReport(arm, d.name, cfg.seed, cfg.snapshot(), space_dim=d.dim)
    train_idx = d.train_indices()

    gcfg = _gan_config(cfg, pixel_space=d.is_pixel)
    gan, t = _phase(arm, "gan_train", lambda: train_gan(d.samples[train_idx], gcfg, train_idx, batch_audit))
    rep.phase_seconds["gan_train"] = t
    rep.phase_flops["gan_train"] = gan.report.flops_total
    rep.flops_per_step["gan_train"] = gan.report.flops_per_step
    rep.steps["gan_train"] = gan.report.steps
    rep.losses["gan_train"] = gan.report.epoch_losses

    k = cfg.eval.n_samples
    samples, t = _phase(arm, "sample", lambda: sample_generator(gan, k, _sample_seed(cfg)))
    rep.phase_seconds["sample"] = t
    rep.phase_flops["sample"] = forward_flops(gan.generator, k)

    metrics, _ = _phase(arm, "evaluate", lambda: evaluate_arm(samples, d, cfg.eval))
    rep.metrics = metrics.to_dict()
    return ArmResult(rep, samples, gan)


def _ratio(num: float, den: float) -> float | None:
    if num == den:
        return 1.0
    if den == 0:
        return None
    return float(num) / float(den)


def _comparable_config(c: dict) -> dict:
    c = dict(c)
    c.pop("eval", None)
    return c


def compare(reports) -> dict:
    """Speedups of the dual arm over the direct arm, plus metric deltas (dual - direct).

    ``reports`` is a pair; order is taken from each report's ``arm`` when the
    two differ, otherwise (baseline, candidate).
    """
    a, b = reports
    if {a.arm, b.arm} == set(ARMS):
        direct, dual = (a, b) if a.arm == "direct" else (b, a)
    else:
        direct, dual = a, b
    if _comparable_config(direct.config) != _comparable_config(dual.config):
        raise ValueError("reports come from different configs; cannot compare")
    if direct.dataset != dual.dataset or direct.seed != dual.seed:
        raise ValueError("reports come from different datasets or seeds")

    def phase_sum(r, key, phases):
        return sum(getattr(r, key).get(p, 0) for p in phases)

    gan_only = ("gan_train",)
    summary = {
        "baseline_arm": direct.arm,
        "candidate_arm": dual.arm,
        "dataset": direct.dataset,
        "seed": direct.seed,
        "speedup": {
            "gan_phase": {
                "flops_ratio": _ratio(phase_sum(direct, "phase_flops", gan_only), phase_sum(dual, "phase_flops", gan_only)),
                "wall_clock_ratio": _ratio(phase_sum(direct, "phase_seconds", gan_only),
                                           phase_sum(dual, "phase_seconds", gan_only)),
                "flops_per_step_ratio": _ratio(direct.flops_per_step.get("gan_train", 0),
                                               dual.flops_per_step.get("gan_train", 0)),
            },
            "total_with_ae": {
                "flops_ratio": _ratio(direct.total_flops, dual.total_flops),
                "wall_clock_ratio": _ratio(direct.total_seconds, dual.total_seconds),
            },
        },
        "metric_deltas": {},
        "metrics": {direct.arm: direct.metrics, dual.arm: dual.metrics} if direct.arm != dual.arm
        else {direct.arm: direct.metrics},
    }
    for key in ("mode_coverage", "holdout_recall", "mmd"):
        va, vb = direct.metrics.get(key), dual.metrics.get(key)
        summary["metric_deltas"][key] = None if va is None or vb is None else float(vb) - float(va)
    return summary


def write_arm_artifacts(result: ArmResult, out_dir, dataset: Dataset) -> None:
    out = Path(out_dir)
    models = out / "models"
    models.mkdir(parents=True, exist_ok=True)
    arm = result.report.arm
    save_params(result.gan.generator, models / f"{arm}_generator.dsgp")
    save_params(result.gan.discriminator, models / f"{arm}_discriminator.dsgp")
    if result.autoencoder is not None:
        save_params(result.autoencoder.encoder, models / f"{arm}_encoder.dsgp")
        save_params(result.autoencoder.decoder, models / f"{arm}_decoder.dsgp")
        write_matrix_csv(out / f"latent_samples_{arm}.csv", result.latent_samples, prefix="z")

    rows = []
    for phase, series in result.report.losses.items():
        for name, values in series.items():
            rows.extend((phase, epoch + 1, name, float(v)) for epoch, v in enumerate(values))
    write_csv(out / f"losses_{arm}.csv", ["phase", "epoch", "metric", "value"], rows)

    write_matrix_csv(out / f"samples_{arm}.csv", result.samples)
    side = dataset.meta.get("side")
    if dataset.is_pixel and side:
        write_pgm(out / f"samples_{arm}.pgm", image_grid(result.samples[:64], side))
