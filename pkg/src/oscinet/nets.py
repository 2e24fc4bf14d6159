"""DeepONet and multiscale DeepONet construction, evaluation and counting.

A model is a set of branch sub-networks, summed after scaling the sensor
values by their own factor, and a set of trunk sub-networks whose outputs on
scaled query coordinates are stacked into one basis.  Prediction is the
inner product of branch coefficients with that basis plus a scalar offset
carried in the last branch output.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor import (
    ACTIVATIONS,
    ConfigurationError,
    DimensionError,
    Tensor,
    activation_forward,
    affine_forward,
    columns,
    concat,
    matmul,
    scale,
    transpose,
)

CHECKPOINT_MAGIC = b"MSON"
CHECKPOINT_VERSION = 1


class ModeError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple[int, ...]
    activation: str = "tanh"
    final_bias: bool = True
    input_bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ConfigurationError(f"an MLP needs at least 2 widths, got {list(self.widths)}")
        if any(w < 1 for w in self.widths):
            raise ConfigurationError(f"widths must be >= 1, got {list(self.widths)}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def has_bias(self, layer: int) -> bool:
        if layer == 0 and not self.input_bias:
            return False
        if layer == self.n_layers - 1 and not self.final_bias:
            return False
        return True

    def layer_shapes(self) -> list[tuple[tuple[int, int], tuple[int] | None]]:
        out = []
        for i, (a, b) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            out.append(((a, b), (b,) if self.has_bias(i) else None))
        return out


def scale_set(factors: Sequence[float]) -> tuple[float, ...]:
    vals = tuple(float(f) for f in factors)
    if not vals:
        raise ConfigurationError("a scale set needs at least one factor")
    if any(not math.isfinite(v) or v <= 0 for v in vals):
        raise ConfigurationError(f"scale factors must be positive, got {list(vals)}")
    return vals


def default_trunk_scales(n: int) -> tuple[float, ...]:
    return tuple(2.0 ** s for s in range(n))


def default_branch_scales(n: int) -> tuple[float, ...]:
    return tuple(float(i) for i in range(1, n + 1))


@dataclass(frozen=True)
class DeepOnetSpec:
    branch: MlpSpec
    trunk: MlpSpec
    branch_scales: tuple[float, ...] = (1.0,)
    trunk_scales: tuple[float, ...] = (1.0,)
    n_t: int | None = None
    complex_output: bool = False

    def __post_init__(self):
        object.__setattr__(self, "branch_scales", scale_set(self.branch_scales))
        object.__setattr__(self, "trunk_scales", scale_set(self.trunk_scales))
        n_t = self.trunk.widths[-1] if self.n_t is None else int(self.n_t)
        object.__setattr__(self, "n_t", n_t)
        if self.trunk.widths[-1] != n_t:
            raise ConfigurationError(
                f"trunk output width {self.trunk.widths[-1]} != n_t {n_t}")
        if self.trunk.widths[0] != 1:
            raise ConfigurationError(
                f"trunk input width must be 1 (scalar coordinate), got {self.trunk.widths[0]}")
        want = self.basis_size + 1
        if self.branch.widths[-1] != want:
            raise ConfigurationError(
                f"branch output width {self.branch.widths[-1]} != S_trunk*n_t + 1 = {want}")

    @property
    def n_sensors(self) -> int:
        return self.branch.widths[0]

    @property
    def basis_size(self) -> int:
        return len(self.trunk_scales) * self.n_t

    @property
    def n_branch_stacks(self) -> int:
        return 2 if self.complex_output else 1

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("branch", "trunk"):
            d[key]["widths"] = list(d[key]["widths"])
        d["branch_scales"] = list(self.branch_scales)
        d["trunk_scales"] = list(self.trunk_scales)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DeepOnetSpec":
        return cls(
            branch=MlpSpec(**d["branch"]),
            trunk=MlpSpec(**d["trunk"]),
            branch_scales=tuple(d.get("branch_scales", (1.0,))),
            trunk_scales=tuple(d.get("trunk_scales", (1.0,))),
            n_t=d.get("n_t"),
            complex_output=bool(d.get("complex_output", False)),
        )


Layer = tuple[Tensor, "Tensor | None"]
Subnet = list[Layer]


@dataclass
class ModelParams:
    """Parameter tensors per sub-network.

    ``branch_imag`` is only populated for complex-output specs; the trunk
    stack is shared by both branch stacks.
    """

    branch: list[Subnet]
    trunk: list[Subnet]
    branch_imag: list[Subnet] | None = None

    def subnets(self) -> list[Subnet]:
        return self.branch + (self.branch_imag or []) + self.trunk

    def tensors(self) -> list[Tensor]:
        """All parameter tensors in canonical (checkpoint) order."""
        out = []
        for net in self.subnets():
            for w, b in net:
                out.append(w)
                if b is not None:
                    out.append(b)
        return out

    def copy(self) -> "ModelParams":
        def dup(nets):
            if nets is None:
                return None
            return [[(_clone(w), None if b is None else _clone(b)) for w, b in net] for net in nets]

        return ModelParams(dup(self.branch), dup(self.trunk), dup(self.branch_imag))


def _clone(t: Tensor) -> Tensor:
    return Tensor(t.data.copy(), requires_grad=t.requires_grad, name=t.name)


def _check_subnet(spec: MlpSpec, net: Subnet) -> None:
    shapes = spec.layer_shapes()
    if len(net) != len(shapes):
        raise DimensionError(f"expected {len(shapes)} layers, got {len(net)}")
    for (wshape, bshape), (w, b) in zip(shapes, net):
        if w.shape != wshape or (b is None) != (bshape is None) or (b is not None and b.shape != bshape):
            raise DimensionError(
                f"layer params {w.shape}/{None if b is None else b.shape} do not match {wshape}/{bshape}")


# ---------------------------------------------------------------- evaluation

def mlp_eval(spec: MlpSpec, net: Subnet, x: Tensor) -> Tensor:
    if x.data.ndim != 2 or x.shape[1] != spec.widths[0]:
        raise DimensionError(f"input shape {x.shape} does not match MLP input width {spec.widths[0]}")
    h = x
    last = len(net) - 1
    for i, (w, b) in enumerate(net):
        h = affine_forward(h, w, b)
        if i < last:
            h = activation_forward(h, spec.activation)
    return h


def mscale_dnn_eval(spec: MlpSpec, nets: Sequence[Subnet], scales: Sequence[float], x: Tensor) -> Tensor:
    """Sum of sub-networks applied to scaled copies of the input."""
    if len(nets) != len(scales):
        raise ConfigurationError(f"{len(scales)} scale factors for {len(nets)} sub-networks")
    out = None
    for net, a in zip(nets, scales):
        term = mlp_eval(spec, net, scale(x, float(a)))
        out = term if out is None else out + term
    return out


def trunk_eval(spec: DeepOnetSpec, params: ModelParams, x: Tensor) -> Tensor:
    """Stacked basis ``[T_1(beta_1 x), ..., T_S(beta_S x)]`` of width S*n_t."""
    if x.data.ndim != 2 or x.shape[1] != 1:
        raise DimensionError(f"query coordinates must have shape (q, 1), got {x.shape}")
    if len(params.trunk) != len(spec.trunk_scales):
        raise ConfigurationError(
            f"{len(spec.trunk_scales)} trunk scales for {len(params.trunk)} trunk sub-networks")
    blocks = [mlp_eval(spec.trunk, net, scale(x, b)) for net, b in zip(params.trunk, spec.trunk_scales)]
    return concat(blocks, axis=1)


def branch_eval(spec: DeepOnetSpec, params: ModelParams, sensors: Tensor, imag: bool = False) -> Tensor:
    """Branch coefficients; the scale factors multiply sensor values."""
    if sensors.data.ndim != 2 or sensors.shape[1] != spec.n_sensors:
        raise DimensionError(
            f"sensor block {sensors.shape} does not match {spec.n_sensors} sensor points")
    nets = params.branch_imag if imag else params.branch
    if nets is None:
        raise ModeError("model has no imaginary branch stack")
    return mscale_dnn_eval(spec.branch, nets, spec.branch_scales, sensors)


def _combine(coeffs: Tensor, basis: Tensor, n_basis: int) -> Tensor:
    return matmul(columns(coeffs, 0, n_basis), transpose(basis)) + columns(coeffs, n_basis, n_basis + 1)


def deeponet_eval(spec: DeepOnetSpec, params: ModelParams, sensors: Tensor, x: Tensor) -> Tensor:
    """Real-mode prediction of shape (batch, q)."""
    if spec.complex_output:
        raise ModeError("spec is complex-valued; use deeponet_eval_complex")
    return _combine(branch_eval(spec, params, sensors), trunk_eval(spec, params, x), spec.basis_size)


def deeponet_eval_complex(spec: DeepOnetSpec, params: ModelParams, sensors: Tensor,
                          x: Tensor) -> tuple[Tensor, Tensor]:
    if not spec.complex_output:
        raise ModeError("spec is real-valued; use deeponet_eval")
    basis = trunk_eval(spec, params, x)
    n = spec.basis_size
    re = _combine(branch_eval(spec, params, sensors), basis, n)
    im = _combine(branch_eval(spec, params, sensors, imag=True), basis, n)
    return re, im


@dataclass
class DeepOnet:
    """A spec bound to its parameters."""

    spec: DeepOnetSpec
    params: ModelParams = field(repr=False)

    @classmethod
    def create(cls, spec: DeepOnetSpec, seed: int = 0) -> "DeepOnet":
        return cls(spec, init_parameters(spec, seed))

    def __call__(self, sensors, x):
        if not isinstance(sensors, Tensor):
            sensors = Tensor(sensors)
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=np.float64).reshape(-1, 1))
        if self.spec.complex_output:
            return deeponet_eval_complex(self.spec, self.params, sensors, x)
        return deeponet_eval(self.spec, self.params, sensors, x)

    def predict(self, sensors, x) -> np.ndarray:
        """Plain numpy prediction; complex dtype for complex-output models."""
        out = self(sensors, x)
        if self.spec.complex_output:
            return out[0].data + 1j * out[1].data
        return out.data


# ---------------------------------------------------------------- init & counting

def _glorot(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    bound = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, size=shape)


def _init_subnet(spec: MlpSpec, rng: np.random.Generator) -> Subnet:
    net = []
    for wshape, bshape in spec.layer_shapes():
        w = Tensor(_glorot(rng, wshape), requires_grad=True)
        b = None if bshape is None else Tensor(np.zeros(bshape), requires_grad=True)
        net.append((w, b))
    return net


def init_parameters(spec: DeepOnetSpec, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases; one derived RNG stream per sub-network."""
    n_b = len(spec.branch_scales)
    n_t = len(spec.trunk_scales)
    streams = np.random.SeedSequence(int(seed) & (2**64 - 1)).spawn(n_b * spec.n_branch_stacks + n_t)
    rngs = [np.random.default_rng(s) for s in streams]
    branch = [_init_subnet(spec.branch, rngs[i]) for i in range(n_b)]
    imag = None
    if spec.complex_output:
        imag = [_init_subnet(spec.branch, rngs[n_b + i]) for i in range(n_b)]
    off = n_b * spec.n_branch_stacks
    trunk = [_init_subnet(spec.trunk, rngs[off + i]) for i in range(n_t)]
    return ModelParams(branch, trunk, imag)


def mlp_count(spec: MlpSpec, skip_first_bias: bool = False, skip_final_bias: bool = False) -> int:
    n = 0
    last = spec.n_layers - 1
    for i, (wshape, bshape) in enumerate(spec.layer_shapes()):
        n += wshape[0] * wshape[1]
        if bshape is None:
            continue
        if (i == 0 and skip_first_bias) or (i == last and skip_final_bias):
            continue
        n += bshape[0]
    return n


def count_parameters(spec: DeepOnetSpec, convention: str = "all") -> int:
    """Trainable parameter count.

    ``paper`` omits each branch sub-network's final-layer bias and each trunk
    sub-network's first-layer bias, the convention used by the reference
    architecture tables.
    """
    if convention not in ("all", "paper"):
        raise ConfigurationError(f"unknown counting convention {convention!r}")
    table = convention == "paper"
    n_branch = len(spec.branch_scales) * spec.n_branch_stacks
    per_branch = mlp_count(spec.branch, skip_final_bias=table)
    per_trunk = mlp_count(spec.trunk, skip_first_bias=table)
    return n_branch * per_branch + len(spec.trunk_scales) * per_trunk


# ---------------------------------------------------------------- checkpoints

def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_checkpoint(path: str | Path, spec: DeepOnetSpec, params: ModelParams) -> None:
    """Write ``MSON`` | u32 version | u64 json length | json | float64 LE tensors."""
    header = canonical_json(spec.to_dict()).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for t in params.tensors():
            fh.write(t.data.astype("<f8").tobytes())
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[DeepOnetSpec, ModelParams]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 16:
        raise CheckpointError(f"{path}: truncated header")
    version, n = struct.unpack_from("<IQ", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    spec = DeepOnetSpec.from_dict(json.loads(raw[16:16 + n].decode("utf-8")))
    params = init_parameters(spec, 0)
    tensors = params.tensors()
    expected = 16 + n + 8 * sum(t.size for t in tensors)
    if len(raw) != expected:
        raise CheckpointError(f"{path}: expected {expected} bytes, found {len(raw)}")
    off = 16 + n
    for t in tensors:
        t.data[...] = np.frombuffer(raw, dtype="<f8", count=t.size, offset=off).reshape(t.shape)
        off += 8 * t.size
    return spec, params
