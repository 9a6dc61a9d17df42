"""Space-agnostic GAN trainer.

The same :func:`train_gan` runs on raw data and on latent codes; nothing in
it knows which space it is in beyond the column count of ``real``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import iter_batches
from .nn import Activation, AdamState, MlpModel, adam_step, chain_specs, init_params, mlp_forward, predict
from .training import TrainingDivergedError, TrainingReport, flops_estimate, forward_flops


@dataclass
class GanTrainConfig:
    epochs: int = 50
    batch_size: int = 64
    noise_dim: int = 16
    d_steps_per_g_step: int = 1
    seed: int = 0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    g_hidden: tuple = (128,)
    d_hidden: tuple = (128,)
    # generator output: identity for standardized/tabular spaces, sigmoid for [0,1] pixels
    output_activation: str = "identity"

    def validate(self) -> None:
        for name in ("batch_size", "noise_dim", "d_steps_per_g_step"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        Activation(self.output_activation)


@dataclass
class GanModel:
    generator: MlpModel
    discriminator: MlpModel
    noise_dim: int
    space_dim: int
    report: TrainingReport = field(default_factory=TrainingReport)


def build_gan(space_dim: int, cfg: GanTrainConfig) -> GanModel:
    g_specs = chain_specs([cfg.noise_dim, *cfg.g_hidden, space_dim], Activation.LEAKY_RELU, cfg.output_activation)
    d_specs = chain_specs([space_dim, *cfg.d_hidden, 1], Activation.LEAKY_RELU, Activation.SIGMOID)
    return GanModel(init_params(g_specs, cfg.seed), init_params(d_specs, cfg.seed + 1), cfg.noise_dim, space_dim)


def gan_step_flops(gen: MlpModel, disc: MlpModel, batch: int, d_steps: int = 1) -> int:
    """FLOPs of one generator update plus its ``d_steps`` discriminator updates.

    Discriminator update: generator forward only (fakes are constants), then
    forward+backward of D on the real and on the fake batch. Generator update:
    forward+backward through both networks.
    """
    d_update = forward_flops(gen, batch) + 2 * flops_estimate(disc, batch, 1)
    g_update = flops_estimate(gen, batch, 1) + flops_estimate(disc, batch, 1)
    return d_steps * d_update + g_update


def discriminator_loss(m: GanModel, real: np.ndarray, fake: np.ndarray) -> ad.Tensor:
    ones = np.ones((real.shape[0], 1))
    zeros = np.zeros((fake.shape[0], 1))
    return ad.add(ad.bce_loss(mlp_forward(m.discriminator, real), ones),
                  ad.bce_loss(mlp_forward(m.discriminator, fake), zeros))


def generator_loss(m: GanModel, z: np.ndarray) -> ad.Tensor:
    """Non-saturating objective: -mean log D(G(z))."""
    fake = mlp_forward(m.generator, z)
    return ad.bce_loss(mlp_forward(m.discriminator, fake), np.ones((z.shape[0], 1)))


def train_gan(real, cfg: GanTrainConfig, row_ids=None, batch_audit=None) -> GanModel:
    """Alternate discriminator and generator Adam updates over ``real``.

    ``row_ids`` maps rows of ``real`` to caller-side identifiers that are
    passed to ``batch_audit(phase, ids)`` for every real batch consumed.
    """
    cfg.validate()
    real = np.asarray(real, dtype=np.float64)
    if real.ndim != 2 or real.shape[0] == 0:
        raise ValueError("GAN training data is empty")
    if not np.isfinite(real).all():
        raise ValueError("GAN training data contains NaN/Inf")
    n, space_dim = real.shape
    if n < cfg.batch_size:
        raise ValueError(f"need at least batch_size={cfg.batch_size} rows, have {n}")
    row_ids = np.arange(n) if row_ids is None else np.asarray(row_ids)

    m = build_gan(space_dim, cfg)
    g_params, d_params = m.generator.params, m.discriminator.params
    g_opt = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    d_opt = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    shuffle_rng = np.random.default_rng([cfg.seed, 202])
    noise_rng = np.random.default_rng([cfg.seed, 303])
    b, k = cfg.batch_size, cfg.d_steps_per_g_step

    report = m.report
    report.flops_per_step = gan_step_flops(m.generator, m.discriminator, b, k)
    t_start = time.perf_counter()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        snapshot = (g_params.copy_values(), d_params.copy_values())
        d_sum = g_sum = 0.0
        updates = 0
        batches = iter_batches(np.arange(n), b, shuffle_rng)
        try:
            while True:
                chunk = []
                for _ in range(k):
                    idx = next(batches, None)
                    if idx is None:
                        break
                    chunk.append(idx)
                if len(chunk) < k:
                    break
                d_val = 0.0
                for idx in chunk:
                    if batch_audit is not None:
                        batch_audit("gan", row_ids[idx])
                    fake = predict(m.generator, noise_rng.standard_normal((b, cfg.noise_dim)))
                    d_val = ad.value_and_grad(lambda: discriminator_loss(m, real[idx], fake), d_params.values())
                    adam_step(d_params, d_opt)
                z = noise_rng.standard_normal((b, cfg.noise_dim))
                g_val = ad.value_and_grad(lambda: generator_loss(m, z), g_params.values())
                adam_step(g_params, g_opt)
                report.steps += 1
                updates += 1
                d_sum += d_val
                g_sum += g_val
        except ad.NonFiniteError as exc:
            raise TrainingDivergedError("gan", epoch, report.steps, str(exc), snapshot) from exc
        report.epochs += 1
        if updates:
            report.log("d_loss", d_sum / updates)
            report.log("g_loss", g_sum / updates)
        report.epoch_seconds.append(time.perf_counter() - t0)
    report.wall_clock_s = time.perf_counter() - t_start
    return m


def sample_generator(m: GanModel, k: int, seed: int) -> np.ndarray:
    if k < 1:
        raise ValueError("k must be >= 1")
    z = np.random.default_rng(seed).standard_normal((k, m.noise_dim))
    return predict(m.generator, z)


def discriminator_score(m: GanModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != m.space_dim:
        raise ad.ShapeError(f"discriminator expects (n, {m.space_dim}), got {x.shape}")
    return predict(m.discriminator, x)[:, 0]
