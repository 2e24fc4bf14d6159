"""Command-line entry point: ``oscinet <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .checks import gradient_suite, observed_orders, slab_error
from .config import ConfigError, emit_config, load_config
from .datasets import DatasetConfig, DatasetError, build_dataset, load_dataset, save_dataset
from .diagnostics import param_audit, residual_spectrum
from .nets import DeepOnet, count_parameters, load_checkpoint
from .trainer import evaluate, train

log = logging.getLogger("oscinet")

# default (N_train, N_test) and (m, q) per (M, k) for helmholtz datasets
TABLE_SIZES = {
    (10, 10): ((2000, 100), (500, 500)),
    (10, 50): ((3000, 100), (500, 500)),
    (10, 100): ((5000, 100), (500, 1000)),
    (50, 10): ((2000, 100), (3000, 500)),
    (50, 50): ((3000, 100), (3000, 500)),
    (50, 100): ((5000, 100), (3000, 1000)),
}


def default_sizes(kind: str, M: int, k: float) -> tuple[tuple[int, int], tuple[int, int]]:
    """``((N_train, N_test), (m, q))`` used when ``gen`` is not told otherwise."""
    if kind == "helmholtz" and float(k).is_integer() and (M, int(k)) in TABLE_SIZES:
        return TABLE_SIZES[(M, int(k))]
    return (100, 10), (500, 500)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _dataset_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--modes", "-M", type=int, default=10, help="Fourier modes of the input medium")
    p.add_argument("--c", type=float, default=0.1, help="medium amplitude")
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--m", type=int, help="sensor points")
    p.add_argument("--q", type=int, help="query points")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--query", choices=("uniform", "random"), default="uniform")
    p.add_argument("--out", required=True, help="dataset directory to write")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="oscinet", description="Multiscale DeepONet workbench.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    gen = sub.add_parser("gen", help="generate a dataset")
    gsub = gen.add_subparsers(dest="kind", parser_class=_Parser)
    gm = gsub.add_parser("map", help="closed-form nonlinear map G_K[a]")
    _dataset_args(gm)
    gm.add_argument("--K", type=int, default=50, help="mode cap of the map")
    gh = gsub.add_parser("helmholtz", help="1-D Helmholtz scattered field")
    _dataset_args(gh)
    gh.add_argument("--k", type=float, required=True, help="wave number")
    gh.add_argument("--mesh", type=int, help="mesh elements (default max(400, 20k/pi))")
    gh.add_argument("--strict", action="store_true", help="under-resolved mesh is an error")

    tr = sub.add_parser("train", help="train a model from a TOML config")
    tr.add_argument("--config", required=True)
    tr.add_argument("--dataset", help="override the config's dataset path")
    tr.add_argument("--out", help="override the config's output directory")

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--split", choices=("train", "test"), default="test")

    pa = sub.add_parser("params", help="parameter audit of a config's model")
    pa.add_argument("--config", required=True)
    pa.add_argument("--convention", choices=("paper", "all"), default="paper")

    sp = sub.add_parser("spectrum", help="band-wise residual spectrum of a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--split", choices=("train", "test"), default="test")
    sp.add_argument("--bins", type=int, default=16)
    sp.add_argument("--out", help="write spectrum.csv here instead of stdout")

    ve = sub.add_parser("verify", help="built-in correctness checks")
    vsub = ve.add_subparsers(dest="check", parser_class=_Parser)
    vs = vsub.add_parser("slab", help="Nystrom solver vs the exact slab solution")
    vs.add_argument("--k", type=float, default=50.0)
    vs.add_argument("--a0", type=float, default=0.5)
    vs.add_argument("--mesh", type=int, default=2000)
    vs.add_argument("--tol", type=float, default=2e-2)
    vg = vsub.add_parser("grad", help="autodiff vs central differences on random MLPs")
    vg.add_argument("--models", type=int, default=20)
    vg.add_argument("--seed", type=int, default=0)
    vg.add_argument("--h", type=float, default=1e-5)
    vg.add_argument("--tol", type=float, default=1e-6)
    return parser


def _gen(args) -> int:
    kind = "nonlinear_map" if args.kind == "map" else "helmholtz"
    (nt, ns), (m, q) = default_sizes(kind, args.modes, getattr(args, "k", 0.0))
    cfg = DatasetConfig(
        kind=kind,
        M=args.modes,
        K=getattr(args, "K", 50),
        k=getattr(args, "k", 10.0),
        c=args.c,
        n_train=args.n_train if args.n_train is not None else nt,
        n_test=args.n_test if args.n_test is not None else ns,
        m=args.m or m,
        q=args.q or q,
        seed=args.seed,
        mesh_n=getattr(args, "mesh", None),
        query=args.query,
        strict=getattr(args, "strict", False),
    )
    ds = build_dataset(cfg)
    path = save_dataset(ds, args.out)
    print(f"wrote {path} ({cfg.n_train} train / {cfg.n_test} test, m={cfg.m}, q={cfg.q})")
    return 0


def _train(args) -> int:
    cfg = load_config(args.config)
    if args.dataset:
        cfg = type(cfg)(cfg.model, cfg.train, args.dataset, cfg.output_dir, cfg.strict)
    cfg.validate_paths()
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(emit_config(cfg), encoding="utf-8")
    ds = load_dataset(cfg.dataset)
    model = DeepOnet.create(cfg.model, cfg.train.seed)
    record, _ = train(model, ds, cfg.train, out)
    ev = evaluate(model, ds, "test")
    res = ev["pred_re"] - ds.test_out_re
    if ds.is_complex:
        res = res + 1j * (ev["pred_im"] - ds.test_out_im)
    spec = residual_spectrum(res, grid=ds.queries if ds.meta.get("query") == "uniform" else None,
                             epoch=cfg.train.epochs)
    (out / "spectrum.csv").write_text(spec.to_csv(), encoding="utf-8")
    last = record.last_evaluated()
    print(f"epoch {last['epoch']}: train {last['train_loss']:.6e} test {last['test_loss']:.6e} "
          f"rel_l2_re {last['rel_l2_re']:.4f}")
    return 0


def _eval(args) -> int:
    spec, params = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset)
    ev = evaluate(DeepOnet(spec, params), ds, args.split)
    print(json.dumps({k: ev[k] for k in ("loss", "rel_l2_re", "rel_l2_im")}, sort_keys=True))
    return 0


def _params(args) -> int:
    cfg = load_config(args.config)
    report = param_audit(cfg.model)
    for line in report.lines()[:-1 if report.matched_row else None]:
        print(line)
    if report.matched_row:
        print(report.lines()[-1])
    print(count_parameters(cfg.model, args.convention))
    return 0


def _spectrum(args) -> int:
    spec, params = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset)
    ev = evaluate(DeepOnet(spec, params), ds, args.split)
    _, re, im = ds.split(args.split)
    res = ev["pred_re"] - re
    if im is not None:
        res = res + 1j * (ev["pred_im"] - im)
    text = residual_spectrum(res, args.bins, grid=ds.queries).to_csv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _verify(args) -> int:
    if args.check == "slab":
        err = slab_error(args.k, args.a0, args.mesh)
        ok = err <= args.tol
        print(f"slab k={args.k} a0={args.a0} N={args.mesh}: relative L2 error {err:.3e} "
              f"({'PASS' if ok else 'FAIL'} at tol {args.tol:g})")
        return 0 if ok else 1
    results = gradient_suite(args.models, args.seed, args.h)
    worst = max(r[2] for r in results)
    for act, widths, err in results:
        print(f"{act:6s} {widths}: {err:.3e}")
    ok = worst <= args.tol
    print(f"max relative error {worst:.3e} ({'PASS' if ok else 'FAIL'} at tol {args.tol:g})")
    return 0 if ok else 1


def _limit_threads():
    raw = os.environ.get("OSCINET_THREADS")
    if raw is None:
        return None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return None
    return threadpool_limits(limits=max(1, int(raw)))


def run_command(argv) -> int:
    """Run one CLI invocation; 0 success, 2 usage error, 1 runtime failure."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        if args.command == "gen" and args.kind is None:
            raise UsageError("gen: choose 'map' or 'helmholtz'")
        if args.command == "verify" and args.check is None:
            raise UsageError("verify: choose 'slab' or 'grad'")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"gen": _gen, "train": _train, "eval": _eval, "params": _params,
                "spectrum": _spectrum, "verify": _verify}
    _limit_threads()
    try:
        return handlers[args.command](args)
    except (ConfigError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    except (OSError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
