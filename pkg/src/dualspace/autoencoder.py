"""Encoder/decoder pair defining the latent ("dual") space.

The map is only approximately invertible; :func:`reconstruction_error`
measures how far from exact it is, separately for held-in and held-out rows.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import Dataset, StandardizeStats, destandardize, iter_batches, standardize
from .nn import Activation, AdamState, MlpModel, adam_step, chain_specs, init_params, mlp_forward, predict
from .training import TrainingDivergedError, TrainingReport, flops_estimate


@dataclass
class AEConfig:
    latent_dim: int = 16
    hidden: tuple = (128, 64)
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    # identity activations everywhere (a linear autoencoder)
    linear: bool = False
    # permit latent_dim == data_dim (no compression); only for tiny tabular data such as the 2-D ring
    allow_equal_dim: bool = False


@dataclass
class AutoencoderModel:
    encoder: MlpModel
    decoder: MlpModel
    latent_dim: int
    data_dim: int
    stats: StandardizeStats | None = None
    clamp: bool = False
    report: TrainingReport = field(default_factory=TrainingReport)


@dataclass
class LatentCode:
    codes: np.ndarray
    stats: StandardizeStats
    source: str = ""


def build_autoencoder(data_dim: int, cfg: AEConfig, clamp: bool = False) -> AutoencoderModel:
    top = data_dim if cfg.allow_equal_dim else data_dim - 1
    if not 1 <= cfg.latent_dim <= top:
        rel = "<=" if cfg.allow_equal_dim else "<"
        raise ValueError(f"latent_dim must satisfy 1 <= latent_dim {rel} data_dim ({data_dim}), got {cfg.latent_dim}")
    hidden_act = Activation.IDENTITY if cfg.linear else Activation.LEAKY_RELU
    hidden = list(cfg.hidden)
    enc = init_params(chain_specs([data_dim, *hidden, cfg.latent_dim], hidden_act, Activation.IDENTITY), cfg.seed)
    dec = init_params(chain_specs([cfg.latent_dim, *hidden[::-1], data_dim], hidden_act, Activation.IDENTITY),
                      cfg.seed + 1)
    return AutoencoderModel(enc, dec, cfg.latent_dim, data_dim, clamp=clamp)


def ae_loss(model: AutoencoderModel, x) -> ad.Tensor:
    x = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
    return ad.mse_loss(mlp_forward(model.decoder, mlp_forward(model.encoder, x)), x)


def train_autoencoder(d: Dataset, cfg: AEConfig, batch_audit=None) -> AutoencoderModel:
    """Fit on the non-held-out rows of ``d`` with Adam on reconstruction MSE.

    ``batch_audit(phase, dataset_indices)`` is called with every batch drawn.
    """
    model = build_autoencoder(d.dim, cfg, clamp=d.is_pixel)
    train_idx = d.train_indices()
    if train_idx.size == 0:
        raise ValueError("autoencoder training set is empty")
    if train_idx.size < cfg.batch_size:
        raise ValueError(f"need at least batch_size={cfg.batch_size} training rows, have {train_idx.size}")
    x = d.samples
    params = list(model.encoder.params.values()) + list(model.decoder.params.values())
    enc_opt = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    dec_opt = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    rng = np.random.default_rng([cfg.seed, 101])
    report = model.report
    report.flops_per_step = (flops_estimate(model.encoder, cfg.batch_size, 1)
                             + flops_estimate(model.decoder, cfg.batch_size, 1))
    t_start = time.perf_counter()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        snapshot = (model.encoder.params.copy_values(), model.decoder.params.copy_values())
        total, count = 0.0, 0
        for idx in iter_batches(train_idx, cfg.batch_size, rng):
            if batch_audit is not None:
                batch_audit("autoencoder", idx)
            try:
                loss = ad.value_and_grad(lambda: ae_loss(model, x[idx]), params)
            except ad.NonFiniteError as exc:
                raise TrainingDivergedError("autoencoder", epoch, report.steps, str(exc), snapshot) from exc
            adam_step(model.encoder.params, enc_opt)
            adam_step(model.decoder.params, dec_opt)
            report.steps += 1
            total += loss
            count += 1
        report.epochs += 1
        report.log("ae_mse", total / count)
        report.epoch_seconds.append(time.perf_counter() - t0)
    report.wall_clock_s = time.perf_counter() - t_start
    freeze_stats(model, x[train_idx])
    return model


def freeze_stats(model: AutoencoderModel, train_x: np.ndarray) -> None:
    """Fix the latent standardization from raw encoder outputs of the training rows."""
    _, model.stats = standardize(predict(model.encoder, train_x))


def encode(model: AutoencoderModel, x, source: str = "") -> LatentCode:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.data_dim:
        raise ad.ShapeError(f"encode expects (n, {model.data_dim}), got {x.shape}")
    if model.stats is None:
        raise ValueError("autoencoder has no frozen latent statistics; train it or call freeze_stats first")
    codes, _ = standardize(predict(model.encoder, x), model.stats)
    return LatentCode(codes, model.stats, source)


def decode(model: AutoencoderModel, z) -> np.ndarray:
    codes = z.codes if isinstance(z, LatentCode) else np.asarray(z, dtype=np.float64)
    if codes.ndim != 2 or codes.shape[1] != model.latent_dim:
        raise ad.ShapeError(f"decode expects (n, {model.latent_dim}), got {codes.shape}")
    if model.stats is None:
        raise ValueError("autoencoder has no frozen latent statistics")
    out = predict(model.decoder, destandardize(codes, model.stats))
    if model.clamp:
        out = np.clip(out, 0.0, 1.0)
    return out


def reconstruction_error(model: AutoencoderModel, d: Dataset) -> dict:
    """Mean squared reconstruction error; ``None`` for a split with no rows."""
    out = {}
    for key, idx in (("mse_heldin", d.train_indices()), ("mse_heldout", d.heldout_indices())):
        if idx.size == 0:
            out[key] = None
            continue
        x = d.samples[idx]
        out[key] = float(np.mean((decode(model, encode(model, x)) - x) ** 2))
    return out
