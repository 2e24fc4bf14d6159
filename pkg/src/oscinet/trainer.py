"""Losses, Adam, and the epoch loop with periodic test evaluation."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .datasets import OperatorDataset
from .nets import DeepOnet, ModelParams, save_checkpoint
from .tensor import DimensionError, Tensor, Tape, backward, mean_square

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("epoch", "train_loss", "test_loss", "rel_l2_re", "rel_l2_im")


class DivergenceError(ArithmeticError):
    pass


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 1500
    batch_size: int = 100
    seed: int = 0
    eval_every: int = 10
    loss: str = "mse"
    shuffle: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.loss != "mse":
            raise ValueError(f"unsupported loss {self.loss!r}")


# ---------------------------------------------------------------- metrics

def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, checked=False)


def mse_loss(pred_re, pred_im, true_re, true_im) -> Tensor:
    """Mean squared error; the complex case adds the real and imaginary means."""
    if (pred_im is None) != (true_im is None):
        raise DimensionError("imaginary parts must be both present or both absent")
    pred_re, true_re = _as_tensor(pred_re), _as_tensor(true_re)
    if pred_re.shape != true_re.shape:
        raise DimensionError(f"prediction {pred_re.shape} vs target {true_re.shape}")
    loss = mean_square(pred_re - true_re)
    if pred_im is not None:
        pred_im, true_im = _as_tensor(pred_im), _as_tensor(true_im)
        if pred_im.shape != true_im.shape:
            raise DimensionError(f"prediction {pred_im.shape} vs target {true_im.shape}")
        loss = loss + mean_square(pred_im - true_im)
    return loss


def relative_l2(pred, true) -> float:
    pred = np.asarray(pred)
    true = np.asarray(true)
    denom = np.linalg.norm(true)
    if denom == 0:
        raise MetricError("relative L2 is undefined for an all-zero target")
    return float(np.linalg.norm(pred - true) / denom)


def median_relative_l2(pred: np.ndarray, true: np.ndarray) -> float:
    """Median over functions (rows) of the per-function relative L2."""
    return float(np.median([relative_l2(p, t) for p, t in zip(pred, true)]))


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[Tensor], **kw) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params], **kw)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update, in place, in the given tensor order."""
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            name = params[i].name or f"#{i}"
            raise DivergenceError(f"non-finite gradient in parameter tensor {name}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------- run record

@dataclass
class RunRecord:
    rows: list[dict] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)
    checkpoints: dict[str, str] = field(default_factory=dict)

    def append(self, row: dict, seconds: float) -> None:
        if self.rows and row["epoch"] <= self.rows[-1]["epoch"]:
            raise ValueError("epochs must increase")
        self.rows.append(row)
        self.wall_time.append(seconds)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] if r[name] is not None else np.nan for r in self.rows], dtype=float)

    def evaluated(self) -> list[dict]:
        return [r for r in self.rows if r["test_loss"] is not None]

    def last_evaluated(self) -> dict:
        rows = self.evaluated()
        if not rows:
            raise ValueError("run has no test evaluations")
        return rows[-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOSS_COLUMNS)
        for r in self.rows:
            w.writerow(["" if r[c] is None else repr(r[c]) for c in LOSS_COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "RunRecord":
        rec = cls()
        for r in csv.DictReader(io.StringIO(text)):
            row = {c: (None if r[c] == "" else float(r[c])) for c in LOSS_COLUMNS}
            row["epoch"] = int(row["epoch"])
            rec.append(row, float("nan"))
        return rec


# ---------------------------------------------------------------- loop

def _forward(model: DeepOnet, inputs: np.ndarray, x: Tensor):
    out = model(Tensor(inputs, checked=False), x)
    return out if model.spec.complex_output else (out, None)


def evaluate(model: DeepOnet, dataset: OperatorDataset, split: str = "test",
             chunk: int = 500) -> dict:
    """Loss and median per-function relative L2 on a dataset split."""
    inputs, re, im = dataset.split(split)
    x = Tensor(dataset.queries.reshape(-1, 1))
    pre, pim = [], []
    for s in range(0, inputs.shape[0], chunk):
        a, b = _forward(model, inputs[s:s + chunk], x)
        pre.append(a.data)
        if b is not None:
            pim.append(b.data)
    pred_re = np.concatenate(pre) if pre else np.zeros_like(re)
    pred_im = np.concatenate(pim) if pim else None
    loss = float(np.mean((pred_re - re) ** 2))
    if im is not None:
        loss += float(np.mean((pred_im - im) ** 2))
    out = {"loss": loss, "rel_l2_re": median_relative_l2(pred_re, re), "rel_l2_im": None,
           "pred_re": pred_re, "pred_im": pred_im}
    if im is not None:
        out["rel_l2_im"] = median_relative_l2(pred_im, im)
    return out


def train(model: DeepOnet, dataset: OperatorDataset, config: TrainConfig,
          run_dir: str | Path | None = None) -> tuple[RunRecord, ModelParams]:
    """Train ``model`` in place.

    Returns the run record and the final parameters.  When ``run_dir`` is
    given, ``loss.csv``, ``best.mson`` (lowest test loss) and ``final.mson``
    are written there.
    """
    if model.spec.complex_output != dataset.is_complex:
        raise ValueError("dataset outputs and model output mode disagree (real vs complex)")
    if dataset.m != model.spec.n_sensors:
        raise DimensionError(f"dataset has {dataset.m} sensors, model expects {model.spec.n_sensors}")
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)

    params = model.params.tensors()
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng([int(config.seed), 7])
    x = Tensor(dataset.queries.reshape(-1, 1))
    n = dataset.train_in.shape[0]
    record = RunRecord()
    best = math.inf
    start = time.perf_counter()

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        total, seen = 0.0, 0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            with Tape() as tape:
                pre, pim = _forward(model, dataset.train_in[idx], x)
                loss = mse_loss(pre, pim, dataset.train_out_re[idx],
                                None if pim is None else dataset.train_out_im[idx])
            value = loss.item()
            if not math.isfinite(value):
                if run_dir is not None:
                    save_checkpoint(run_dir / "last_good.mson", model.spec, model.params)
                    record.checkpoints["last_good"] = str(run_dir / "last_good.mson")
                raise DivergenceError(f"loss became non-finite at epoch {epoch}")
            backward(tape, loss)
            adam_step(params, [p.grad for p in params], state, config.learning_rate)
            total += value * idx.size
            seen += idx.size

        row = {"epoch": epoch, "train_loss": total / seen, "test_loss": None,
               "rel_l2_re": None, "rel_l2_im": None}
        if dataset.test_in.shape[0] and (epoch % config.eval_every == 0 or epoch == config.epochs):
            ev = evaluate(model, dataset, "test")
            row.update(test_loss=ev["loss"], rel_l2_re=ev["rel_l2_re"], rel_l2_im=ev["rel_l2_im"])
            if run_dir is not None and ev["loss"] < best:
                best = ev["loss"]
                save_checkpoint(run_dir / "best.mson", model.spec, model.params)
                record.checkpoints["best"] = str(run_dir / "best.mson")
            log.info("epoch %d train %.4e test %.4e", epoch, row["train_loss"], ev["loss"])
        record.append(row, time.perf_counter() - start)

    if run_dir is not None:
        save_checkpoint(run_dir / "final.mson", model.spec, model.params)
        record.checkpoints["final"] = str(run_dir / "final.mson")
        (run_dir / "loss.csv").write_text(record.to_csv(), encoding="utf-8")
    return record, model.params
