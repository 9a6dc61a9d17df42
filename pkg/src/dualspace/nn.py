"""MLP layers, Glorot init, Adam/SGD, and the binary parameter file."""

from __future__ import annotations

import copy
import enum
import math
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LEAKY_SLOPE = 0.2

PARAM_MAGIC = b"DSGP"
PARAM_VERSION = 1


class Activation(str, enum.Enum):
    LEAKY_RELU = "leaky_relu"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    IDENTITY = "identity"


_ACT_CODES = {a: i for i, a in enumerate(Activation)}
_ACT_BY_CODE = {i: a for a, i in _ACT_CODES.items()}


def apply_activation(x: Tensor, act: Activation) -> Tensor:
    act = Activation(act)
    if act is Activation.LEAKY_RELU:
        return ad.leaky_relu(x, LEAKY_SLOPE)
    if act is Activation.SIGMOID:
        return ad.sigmoid(x)
    if act is Activation.TANH:
        return ad.tanh(x)
    return x


@dataclass(frozen=True)
class LinearSpec:
    in_dim: int
    out_dim: int
    activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"layer dims must be >= 1, got {self.in_dim}->{self.out_dim}")
        object.__setattr__(self, "activation", Activation(self.activation))


class ParamSet(OrderedDict):
    """Ordered name -> Tensor mapping of trainable parameters."""

    def zero_grad(self) -> None:
        for p in self.values():
            p.zero_grad()

    def num_params(self) -> int:
        return sum(p.size for p in self.values())

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for k, v in values.items():
            self[k].data[...] = v


@dataclass
class MlpModel:
    layers: list[LinearSpec]
    params: ParamSet

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def weight(self, i: int) -> Tensor:
        return self.params[f"layer{i}.weight"]

    def bias(self, i: int) -> Tensor:
        return self.params[f"layer{i}.bias"]

    def clone(self) -> "MlpModel":
        return copy.deepcopy(self)


def chain_specs(dims: list[int], hidden_act, out_act) -> list[LinearSpec]:
    """Layer specs for ``dims[0] -> ... -> dims[-1]``."""
    specs = []
    for i in range(len(dims) - 1):
        act = out_act if i == len(dims) - 2 else hidden_act
        specs.append(LinearSpec(dims[i], dims[i + 1], Activation(act)))
    return specs


def _check_chain(specs) -> None:
    if not specs:
        raise ValueError("an MLP needs at least one layer")
    for i in range(1, len(specs)):
        if specs[i - 1].out_dim != specs[i].in_dim:
            raise ValueError(
                f"layer {i - 1} out_dim {specs[i - 1].out_dim} != layer {i} in_dim {specs[i].in_dim}"
            )


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_params(specs, seed: int) -> MlpModel:
    specs = list(specs)
    _check_chain(specs)
    rng = np.random.default_rng(seed)
    params = ParamSet()
    for i, s in enumerate(specs):
        bound = glorot_bound(s.in_dim, s.out_dim)
        params[f"layer{i}.weight"] = Tensor(
            rng.uniform(-bound, bound, size=(s.in_dim, s.out_dim)), requires_grad=True, name=f"layer{i}.weight"
        )
        params[f"layer{i}.bias"] = Tensor(np.zeros(s.out_dim), requires_grad=True, name=f"layer{i}.bias")
    return MlpModel(specs, params)


def mlp_forward(model: MlpModel, x) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.data.ndim != 2 or x.shape[1] != model.in_dim:
        raise ad.ShapeError(f"mlp input has shape {x.shape}, expected (batch, {model.in_dim})")
    h = x
    for i, spec in enumerate(model.layers):
        h = ad.add_row_broadcast(ad.matmul(h, model.weight(i)), model.bias(i))
        h = apply_activation(h, spec.activation)
    return h


def predict(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Forward pass on plain arrays, never recorded."""
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != model.in_dim:
        raise ad.ShapeError(f"mlp input has shape {h.shape}, expected (batch, {model.in_dim})")
    for i, spec in enumerate(model.layers):
        h = h @ model.weight(i).data + model.bias(i).data
        if spec.activation is Activation.LEAKY_RELU:
            h = np.maximum(h, LEAKY_SLOPE * h)
        elif spec.activation is Activation.SIGMOID:
            h = ad._stable_sigmoid(h)
        elif spec.activation is Activation.TANH:
            h = np.tanh(h)
    if not np.isfinite(h).all():
        raise ad.NonFiniteError("mlp forward produced non-finite values")
    return h


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def _require_grads(params: ParamSet) -> None:
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")


def adam_step(params: ParamSet, state: AdamState) -> None:
    _require_grads(params)
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def sgd_step(params: ParamSet, lr: float) -> None:
    _require_grads(params)
    for p in params.values():
        p.data -= lr * p.grad


# Parameter file layout (little-endian unless noted):
#   b"DSGP" | u32 version | u32 n_layers
#   n_layers x (u32 in_dim, u32 out_dim, u32 activation code)
#   per layer: f64 weight[in*out] row-major, f64 bias[out]


class ParamFileError(ValueError):
    pass


def params_to_bytes(model: MlpModel) -> bytes:
    parts = [PARAM_MAGIC, struct.pack("<II", PARAM_VERSION, len(model.layers))]
    for s in model.layers:
        parts.append(struct.pack("<III", s.in_dim, s.out_dim, _ACT_CODES[s.activation]))
    for i in range(len(model.layers)):
        parts.append(np.ascontiguousarray(model.weight(i).data, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(model.bias(i).data, dtype="<f8").tobytes())
    return b"".join(parts)


def params_from_bytes(raw: bytes, expected=None) -> MlpModel:
    if len(raw) < 12:
        raise ParamFileError("truncated parameter file: header incomplete")
    if raw[:4] != PARAM_MAGIC:
        raise ParamFileError(f"bad magic {raw[:4]!r}, expected {PARAM_MAGIC!r}")
    version, n_layers = struct.unpack_from("<II", raw, 4)
    if version != PARAM_VERSION:
        raise ParamFileError(f"unsupported parameter file version {version} (expected {PARAM_VERSION})")
    off = 12
    if len(raw) < off + 12 * n_layers:
        raise ParamFileError("truncated parameter file: layer manifest incomplete")
    specs = []
    for _ in range(n_layers):
        i, o, code = struct.unpack_from("<III", raw, off)
        off += 12
        if code not in _ACT_BY_CODE:
            raise ParamFileError(f"unknown activation code {code}")
        specs.append(LinearSpec(i, o, _ACT_BY_CODE[code]))
    if expected is not None:
        found = [(s.in_dim, s.out_dim, s.activation.value) for s in specs]
        want = [(s.in_dim, s.out_dim, Activation(s.activation).value) for s in expected]
        if found != want:
            raise ParamFileError(f"layer manifest mismatch: expected {want}, found {found}")
    need = off + sum(8 * (s.in_dim * s.out_dim + s.out_dim) for s in specs)
    if len(raw) != need:
        kind = "truncated" if len(raw) < need else "oversized"
        raise ParamFileError(f"{kind} parameter file: {len(raw)} bytes, manifest implies {need}")
    params = ParamSet()
    for i, s in enumerate(specs):
        nw = s.in_dim * s.out_dim
        w = np.frombuffer(raw, dtype="<f8", count=nw, offset=off).reshape(s.in_dim, s.out_dim)
        off += 8 * nw
        b = np.frombuffer(raw, dtype="<f8", count=s.out_dim, offset=off)
        off += 8 * s.out_dim
        params[f"layer{i}.weight"] = Tensor(w.astype(np.float64), requires_grad=True, name=f"layer{i}.weight")
        params[f"layer{i}.bias"] = Tensor(b.astype(np.float64), requires_grad=True, name=f"layer{i}.bias")
    return MlpModel(specs, params)


def save_params(model: MlpModel, path) -> None:
    Path(path).write_bytes(params_to_bytes(model))


def load_params(path, expected=None) -> MlpModel:
    """Read a parameter file; ``expected`` is an optional sequence of LinearSpec to validate against."""
    return params_from_bytes(Path(path).read_bytes(), expected)
