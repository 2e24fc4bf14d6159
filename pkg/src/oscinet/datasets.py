"""Operator-learning datasets: generation and the on-disk directory format.

Directory layout (all arrays raw little-endian float64, row-major)::

    manifest.json
    sensors.f64  queries.f64
    train_in.f64  test_in.f64
    train_out_re.f64  test_out_re.f64   (+ _im variants for helmholtz)
"""
from __future__ import annotations

import json
import math
import os
import shutil
import tempfile
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .scattering import (
    Mesh1D,
    ScatteringProblem,
    default_mesh_elements,
    eval_field,
    nonlinear_map_eval,
    sample_fourier_field,
    solve_scattering,
)

FORMAT_VERSION = 1
KINDS = ("nonlinear_map", "helmholtz")

# RNG stream roles; every stream is keyed by (seed, role[, index])
_SENSORS, _COEFFS, _FIELDS, _QUERIES = range(4)


class DatasetError(ValueError):
    pass


class IntegrityError(DatasetError):
    pass


class MigrationError(DatasetError):
    pass


class ResolutionError(DatasetError):
    pass


class ResolutionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    kind: str
    M: int = 10
    K: int = 50
    k: float = 10.0
    c: float = 0.1
    n_train: int = 100
    n_test: int = 10
    m: int = 500
    q: int = 500
    seed: int = 0
    mesh_n: int | None = None
    query: str = "uniform"
    strict: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DatasetError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.query not in ("uniform", "random"):
            raise DatasetError(f"query must be 'uniform' or 'random', got {self.query!r}")
        for name in ("n_train", "m", "q"):
            if getattr(self, name) < 1:
                raise DatasetError(f"{name} must be >= 1")
        if self.n_test < 0 or self.M < 0 or self.K < 0:
            raise DatasetError("n_test, M and K must be non-negative")
        if not self.c > 0:
            raise DatasetError(f"amplitude c must be positive, got {self.c}")
        if self.kind == "helmholtz" and not self.k > 0:
            raise DatasetError(f"wave number must be positive, got {self.k}")


@dataclass
class OperatorDataset:
    kind: str
    sensors: np.ndarray
    queries: np.ndarray
    train_in: np.ndarray
    test_in: np.ndarray
    train_out_re: np.ndarray
    test_out_re: np.ndarray
    train_out_im: np.ndarray | None = None
    test_out_im: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def is_complex(self) -> bool:
        return self.train_out_im is not None

    @property
    def m(self) -> int:
        return self.sensors.size

    @property
    def q(self) -> int:
        return self.queries.size

    def arrays(self) -> dict[str, np.ndarray]:
        out = {
            "sensors": self.sensors,
            "queries": self.queries,
            "train_in": self.train_in,
            "test_in": self.test_in,
            "train_out_re": self.train_out_re,
            "test_out_re": self.test_out_re,
        }
        if self.is_complex:
            out["train_out_im"] = self.train_out_im
            out["test_out_im"] = self.test_out_im
        return out

    def split(self, which: str) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
        if which == "train":
            return self.train_in, self.train_out_re, self.train_out_im
        return self.test_in, self.test_out_re, self.test_out_im


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *key])


def map_coefficients(K: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = _stream(seed, _COEFFS)
    return rng.uniform(-1.0, 1.0, K + 1), rng.uniform(-1.0, 1.0, K + 1)


def check_resolution(k: float, a_max: float, mesh: Mesh1D, strict: bool) -> float:
    """Nodes per (shortest) wavelength; fewer than 10 warns, or raises in strict mode."""
    n_eff = math.sqrt(max(1.0 + a_max, 1.0))
    per_wave = (2.0 * math.pi / (k * n_eff)) / float(mesh.widths.max())
    if per_wave < 10.0:
        msg = f"only {per_wave:.1f} mesh nodes per wavelength (k={k}); need >= 10"
        if strict:
            raise ResolutionError(msg)
        warnings.warn(msg, ResolutionWarning, stacklevel=3)
    return per_wave


def _helmholtz_sample(args):
    cfg, index, sensors, queries = args
    fld = sample_fourier_field(cfg.M, cfg.c, _stream(cfg.seed, _FIELDS, index))
    mesh = Mesh1D.uniform(cfg.mesh_n or default_mesh_elements(cfg.k))
    problem = ScatteringProblem(cfg.k, fld, mesh)
    a_max = float(problem.quadrature()[2].max())
    check_resolution(cfg.k, a_max, mesh, cfg.strict)
    u = solve_scattering(problem).at(queries)
    return eval_field(fld, sensors), u.real.copy(), u.imag.copy()


def _field_basis(M: int, x: np.ndarray) -> np.ndarray:
    arg = np.multiply.outer(x, np.pi * np.arange(1, M + 1))
    return np.hstack([np.ones((x.size, 1)), np.sin(arg), np.cos(arg)])


def _map_rows(cfg, n, sensors, queries, A, B):
    # all fields share the sensor and query grids, so evaluate them as one product
    coef = np.empty((n, 2 * cfg.M + 1))
    for i in range(n):
        fld = sample_fourier_field(cfg.M, cfg.c, _stream(cfg.seed, _FIELDS, i))
        coef[i] = np.concatenate([fld.b, fld.c_coef])
    ins = cfg.c * (coef @ _field_basis(cfg.M, sensors).T)
    a_q = cfg.c * (coef @ _field_basis(cfg.M, queries).T)
    out = np.empty((n, queries.size))
    for i in range(n):
        out[i] = nonlinear_map_eval(cfg.K, A, B, a_q[i])
    return ins, out


def _workers() -> int:
    try:
        return max(0, int(os.environ.get("OSCINET_THREADS", "0")))
    except ValueError:
        return 0


def build_dataset(cfg: DatasetConfig, workers: int | None = None) -> OperatorDataset:
    """Generate ``n_train + n_test`` input/output function pairs.

    Function ``i`` draws its medium from its own stream, so the result does
    not depend on ``workers``.
    """
    workers = _workers() if workers is None else workers
    sensors = np.sort(_stream(cfg.seed, _SENSORS).uniform(-1.0, 1.0, cfg.m))
    if cfg.query == "uniform":
        queries = np.linspace(-1.0, 1.0, cfg.q)
    else:
        queries = np.sort(_stream(cfg.seed, _QUERIES).uniform(-1.0, 1.0, cfg.q))
    n = cfg.n_train + cfg.n_test
    meta = {
        "kind": cfg.kind,
        "M": cfg.M,
        "c": cfg.c,
        "N_train": cfg.n_train,
        "N_test": cfg.n_test,
        "m": cfg.m,
        "q": cfg.q,
        "seed": cfg.seed,
        "query": cfg.query,
        "format_version": FORMAT_VERSION,
        "seeds": {"sensors": [cfg.seed, _SENSORS], "fields": [cfg.seed, _FIELDS],
                  "queries": [cfg.seed, _QUERIES]},
    }

    if cfg.kind == "nonlinear_map":
        A, B = map_coefficients(cfg.K, cfg.seed)
        meta.update(K=cfg.K, A=A.tolist(), B=B.tolist(), mesh_n=None)
        meta["seeds"]["coefficients"] = [cfg.seed, _COEFFS]
        ins, re = _map_rows(cfg, n, sensors, queries, A, B)
        im = None
    else:
        mesh_n = cfg.mesh_n or default_mesh_elements(cfg.k)
        meta.update(k=cfg.k, mesh_n=mesh_n, incident="exp(ikx)")
        jobs = [(cfg, i, sensors, queries) for i in range(n)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(_helmholtz_sample, jobs))
        else:
            rows = [_helmholtz_sample(j) for j in jobs]
        ins = np.array([r[0] for r in rows]).reshape(n, cfg.m)
        re = np.array([r[1] for r in rows]).reshape(n, cfg.q)
        im = np.array([r[2] for r in rows]).reshape(n, cfg.q)

    t = cfg.n_train
    return OperatorDataset(
        kind=cfg.kind,
        sensors=sensors,
        queries=queries,
        train_in=ins[:t],
        test_in=ins[t:],
        train_out_re=re[:t],
        test_out_re=re[t:],
        train_out_im=None if im is None else im[:t],
        test_out_im=None if im is None else im[t:],
        meta=meta,
    )


# ---------------------------------------------------------------- storage

def _shapes(meta: dict) -> dict[str, tuple[int, ...]]:
    m, q, nt, ns = meta["m"], meta["q"], meta["N_train"], meta["N_test"]
    shapes = {
        "sensors": (m,),
        "queries": (q,),
        "train_in": (nt, m),
        "test_in": (ns, m),
        "train_out_re": (nt, q),
        "test_out_re": (ns, q),
    }
    if meta["kind"] == "helmholtz":
        shapes["train_out_im"] = (nt, q)
        shapes["test_out_im"] = (ns, q)
    return shapes


def save_dataset(ds: OperatorDataset, path: str | Path) -> Path:
    """Write atomically: everything goes to a sibling temp dir renamed on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        meta = dict(ds.meta)
        meta["format_version"] = FORMAT_VERSION
        (tmp / "manifest.json").write_text(
            json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        for name, arr in ds.arrays().items():
            (tmp / f"{name}.f64").write_bytes(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        if path.exists():
            old = path.with_name(path.name + ".old")
            if old.exists():
                shutil.rmtree(old)
            path.rename(old)
            tmp.rename(path)
            shutil.rmtree(old)
        else:
            tmp.rename(path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return path


def load_dataset(path: str | Path) -> OperatorDataset:
    path = Path(path)
    manifest = path / "manifest.json"
    if not manifest.is_file():
        raise DatasetError(f"{path}: no manifest.json")
    meta = json.loads(manifest.read_text(encoding="utf-8"))
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise MigrationError(
            f"{path}: dataset format version {version} is not supported (expected {FORMAT_VERSION})")
    arrays = {}
    for name, shape in _shapes(meta).items():
        f = path / f"{name}.f64"
        want = 8 * int(np.prod(shape))
        got = f.stat().st_size if f.exists() else 0
        if got != want:
            raise IntegrityError(f"{f}: expected {want} bytes, found {got}")
        arrays[name] = np.fromfile(f, dtype="<f8").astype(np.float64).reshape(shape)
    return OperatorDataset(kind=meta["kind"], meta=meta, **arrays)


def dataset_roundtrip(ds: OperatorDataset, path: str | Path) -> OperatorDataset:
    save_dataset(ds, path)
    return load_dataset(path)
