"""Bookkeeping shared by the autoencoder and GAN trainers."""

from __future__ import annotations

from dataclasses import dataclass, field

from .nn import MlpModel


def forward_flops(model: MlpModel, batch: int) -> int:
    """Sum over layers of 2*in*out*batch (one multiply and one add per weight per row)."""
    return sum(2 * s.in_dim * s.out_dim * batch for s in model.layers)


def flops_estimate(model: MlpModel, batch: int, steps: int, backward: bool = True) -> int:
    """Analytic FLOPs of ``steps`` passes; a backward pass costs twice the forward."""
    per = forward_flops(model, batch)
    if backward:
        per *= 3
    return per * steps


@dataclass
class TrainingReport:
    flops_per_step: int = 0
    steps: int = 0
    epochs: int = 0
    wall_clock_s: float = 0.0
    epoch_losses: dict = field(default_factory=dict)
    epoch_seconds: list = field(default_factory=list)

    @property
    def flops_total(self) -> int:
        return self.flops_per_step * self.steps

    def log(self, name: str, value: float) -> None:
        self.epoch_losses.setdefault(name, []).append(float(value))

    def is_empty(self) -> bool:
        return self.steps == 0 and not self.epoch_losses

    def to_dict(self) -> dict:
        return {
            "flops_per_step": self.flops_per_step,
            "steps": self.steps,
            "flops_total": self.flops_total,
            "epochs": self.epochs,
            "wall_clock_s": self.wall_clock_s,
            "epoch_losses": self.epoch_losses,
            "epoch_seconds": self.epoch_seconds,
        }


class TrainingDivergedError(RuntimeError):
    """A loss went non-finite; carries the parameters from the last finished epoch."""

    def __init__(self, phase: str, epoch: int, step: int, detail: str, last_good=None):
        super().__init__(f"{phase}: non-finite values at epoch {epoch}, step {step}: {detail}")
        self.phase = phase
        self.epoch = epoch
        self.step = step
        self.last_good = last_good
