"""TOML run configuration: parsing, validation and canonical emission."""
from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import tomli
import tomli_w

from .nets import DeepOnetSpec, MlpSpec, default_branch_scales, default_trunk_scales
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


_TOP = {"dataset", "output_dir", "strict", "model", "train"}
_MODEL = {
    "branch_widths", "trunk_widths", "branch_activation", "trunk_activation", "activation",
    "branch_scales", "trunk_scales", "n_branch", "n_trunk", "n_t", "complex_output",
    "branch_final_bias", "trunk_input_bias",
}
_TRAIN = {"learning_rate", "epochs", "batch_size", "seed", "eval_every", "loss", "shuffle"}


@dataclass(frozen=True)
class RunConfig:
    model: DeepOnetSpec
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: str | None = None
    output_dir: str = "runs/default"
    strict: bool = True

    def validate_paths(self) -> None:
        if self.dataset is None:
            raise ConfigError("dataset: a dataset directory is required for this command")
        if not Path(self.dataset).is_dir():
            raise ConfigError(f"dataset: directory {self.dataset!r} does not exist")


def _unknown(section: str, keys, allowed, strict: bool) -> None:
    extra = sorted(set(keys) - allowed)
    if not extra:
        return
    names = ", ".join(f"{section}{k}" for k in extra)
    if strict:
        raise ConfigError(f"unknown configuration keys: {names}")
    warnings.warn(f"ignoring unknown configuration keys: {names}", stacklevel=3)


def _get(table: dict, key: str, kind, default, where: str):
    if key not in table:
        return default
    v = table[key]
    if kind is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if kind is list:
        ok = isinstance(v, list)
    elif kind is int:
        ok = isinstance(v, int) and not isinstance(v, bool)
    else:
        ok = isinstance(v, kind)
    if not ok:
        raise ConfigError(f"{where}{key}: expected {kind.__name__}, got {type(v).__name__}")
    return v


def parse_config(text: str, strict: bool | None = None) -> RunConfig:
    """Parse TOML run configuration text; defaults fill everything but the widths."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        # tomli omits the position for errors at end of input
        line = m.group(1) if m else str(max(1, text.count("\n")))
        raise ConfigError(f"TOML parse error at line {line}: {exc}") from None

    strict = _get(doc, "strict", bool, True, "") if strict is None else strict
    _unknown("", doc, _TOP, strict)
    model = doc.get("model", {})
    train = doc.get("train", {})
    if not isinstance(model, dict) or not isinstance(train, dict):
        raise ConfigError("model and train must be tables")
    _unknown("model.", model, _MODEL, strict)
    _unknown("train.", train, _TRAIN, strict)

    try:
        bw = _get(model, "branch_widths", list, None, "model.")
        tw = _get(model, "trunk_widths", list, None, "model.")
        if bw is None or tw is None:
            raise ConfigError("model.branch_widths and model.trunk_widths are required")
        act = _get(model, "activation", str, "tanh", "model.")
        n_branch = _get(model, "n_branch", int, 1, "model.")
        n_trunk = _get(model, "n_trunk", int, 1, "model.")
        branch_scales = _get(model, "branch_scales", list, None, "model.")
        trunk_scales = _get(model, "trunk_scales", list, None, "model.")
        spec = DeepOnetSpec(
            branch=MlpSpec(tuple(bw), _get(model, "branch_activation", str, act, "model."),
                           final_bias=_get(model, "branch_final_bias", bool, True, "model.")),
            trunk=MlpSpec(tuple(tw), _get(model, "trunk_activation", str, act, "model."),
                          input_bias=_get(model, "trunk_input_bias", bool, True, "model.")),
            branch_scales=tuple(branch_scales) if branch_scales else default_branch_scales(n_branch),
            trunk_scales=tuple(trunk_scales) if trunk_scales else default_trunk_scales(n_trunk),
            n_t=_get(model, "n_t", int, None, "model."),
            complex_output=_get(model, "complex_output", bool, False, "model."),
        )
        tc = TrainConfig(
            learning_rate=_get(train, "learning_rate", float, 1e-4, "train."),
            epochs=_get(train, "epochs", int, 1500, "train."),
            batch_size=_get(train, "batch_size", int, 100, "train."),
            seed=_get(train, "seed", int, 0, "train."),
            eval_every=_get(train, "eval_every", int, 10, "train."),
            loss=_get(train, "loss", str, "mse", "train."),
            shuffle=_get(train, "shuffle", bool, True, "train."),
        )
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    return RunConfig(
        model=spec,
        train=tc,
        dataset=_get(doc, "dataset", str, None, ""),
        output_dir=_get(doc, "output_dir", str, "runs/default", ""),
        strict=strict,
    )


def emit_config(cfg: RunConfig) -> str:
    """Canonical TOML text; ``parse_config(emit_config(c)) == c``."""
    s = cfg.model
    doc = {"output_dir": cfg.output_dir, "strict": cfg.strict}
    if cfg.dataset is not None:
        doc["dataset"] = cfg.dataset
    doc["model"] = {
        "branch_widths": list(s.branch.widths),
        "trunk_widths": list(s.trunk.widths),
        "branch_activation": s.branch.activation,
        "trunk_activation": s.trunk.activation,
        "branch_scales": list(s.branch_scales),
        "trunk_scales": list(s.trunk_scales),
        "n_t": s.n_t,
        "complex_output": s.complex_output,
        "branch_final_bias": s.branch.final_bias,
        "trunk_input_bias": s.trunk.input_bias,
    }
    t = cfg.train
    doc["train"] = {
        "learning_rate": t.learning_rate,
        "epochs": t.epochs,
        "batch_size": t.batch_size,
        "seed": t.seed,
        "eval_every": t.eval_every,
        "loss": t.loss,
        "shuffle": t.shuffle,
    }
    return tomli_w.dumps(doc)


def load_config(path: str | Path, strict: bool | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} does not exist")
    return parse_config(path.read_text(encoding="utf-8"), strict=strict)
