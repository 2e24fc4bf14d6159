"""Spectral-bias instrumentation: residual spectra, run comparison, parameter audits."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .nets import DeepOnetSpec, count_parameters, mlp_count
from .trainer import RunRecord


class GridError(ValueError):
    pass


class UsageError(ValueError):
    pass


@dataclass
class SpectrumReport:
    """Residual energy per frequency band, in cycles per record, 0 to Nyquist.

    Energies are normalised so that ``energy.sum() == total`` equals the
    mean-square residual summed over functions.
    """

    edges: np.ndarray
    energy: np.ndarray
    total: float
    epoch: int | None = None

    @property
    def n_bins(self) -> int:
        return self.energy.size

    def band(self, lo_frac: float, hi_frac: float) -> float:
        """Energy of bins whose centre lies in [lo_frac, hi_frac] x Nyquist."""
        nyq = self.edges[-1]
        centre = 0.5 * (self.edges[:-1] + self.edges[1:]) / nyq
        return float(self.energy[(centre >= lo_frac) & (centre <= hi_frac)].sum())

    def high_band(self) -> float:
        return self.band(2.0 / 3.0, 1.0)

    def low_band(self) -> float:
        return self.band(0.0, 1.0 / 3.0)

    def high_low_ratio(self) -> float:
        low = self.low_band()
        return self.high_band() / low if low > 0 else float("inf")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("epoch", "bin_lo", "bin_hi", "energy"))
        ep = "" if self.epoch is None else self.epoch
        for lo, hi, e in zip(self.edges[:-1], self.edges[1:], self.energy):
            w.writerow((ep, repr(float(lo)), repr(float(hi)), repr(float(e))))
        return buf.getvalue()


def residual_spectrum(residual, n_bins: int = 16, grid=None, epoch: int | None = None) -> SpectrumReport:
    """Band energies of a residual sampled on a uniform grid.

    ``residual`` is one function (1-D) or a stack of functions (rows); the
    stack's energies add.  Complex residuals use ``|X|^2``, so real and
    imaginary misfit both count.
    """
    r = np.atleast_2d(np.asarray(residual))
    n = r.shape[-1]
    if n < 2:
        raise GridError("a spectrum needs at least two samples")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if grid is not None:
        d = np.diff(np.asarray(grid, dtype=np.float64))
        if d.size != n - 1 or np.any(d <= 0) or not np.allclose(d, d[0], rtol=1e-9, atol=0.0):
            raise GridError("residual spectra require a uniform, increasing grid")
    coef = np.fft.fft(r, axis=-1) / n
    power = (np.abs(coef) ** 2).sum(axis=0)
    j = np.arange(n)
    freq = np.minimum(j, n - j)
    nyq = n / 2.0
    edges = np.linspace(0.0, nyq, n_bins + 1)
    idx = np.minimum((freq / nyq * n_bins).astype(int), n_bins - 1)
    energy = np.bincount(idx, weights=power, minlength=n_bins)
    total = float(np.sum(np.abs(r) ** 2) / n)
    return SpectrumReport(edges, energy, total, epoch)


@dataclass
class Comparison:
    columns: list[str]
    rows: list[dict]
    summary: list[dict] = field(default_factory=list)

    @staticmethod
    def _csv(columns, rows) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow(["" if r.get(c) is None else (r[c] if isinstance(r[c], str) else repr(r[c]))
                        for c in columns])
        return buf.getvalue()

    def to_csv(self) -> str:
        return self._csv(self.columns, self.rows)

    def summary_csv(self) -> str:
        if not self.summary:
            return ""
        return self._csv(list(self.summary[0]), self.summary)


_METRICS = ("train_loss", "test_loss", "rel_l2_re", "rel_l2_im")


def compare_runs(records: Mapping[str, RunRecord] | Sequence[RunRecord],
                 spectra: Mapping[str, SpectrumReport] | Sequence[SpectrumReport] | None = None) -> Comparison:
    """Align runs on their common epochs.

    Per-epoch rows carry each run's metrics plus ``<run>:test_loss_ratio``
    relative to the first run.  The summary holds, per run, the high/low band
    energy ratio of its spectrum and its high-band energy relative to the
    first run.
    """
    if not records:
        raise UsageError("compare_runs needs at least one run")
    if not isinstance(records, Mapping):
        records = {f"run{i}": r for i, r in enumerate(records)}
    names = list(records)
    if spectra is not None and not isinstance(spectra, Mapping):
        spectra = dict(zip(names, spectra))

    epoch_sets = [{r["epoch"] for r in rec.rows} for rec in records.values()]
    common = sorted(set.intersection(*epoch_sets))
    eval_sets = [{r["epoch"] for r in rec.evaluated()} for rec in records.values()]
    if len(set(map(frozenset, eval_sets))) > 1:
        # differing evaluation cadence: keep the coarsest shared grid
        shared = set.intersection(*eval_sets)
        common = [e for e in common if e in shared]

    by_epoch = {n: {r["epoch"]: r for r in rec.rows} for n, rec in records.items()}
    ref = names[0]
    columns = ["epoch"]
    for n in names:
        columns += [f"{n}:{m}" for m in _METRICS]
        if len(names) > 1:
            columns.append(f"{n}:test_loss_ratio")
    rows = []
    for e in common:
        row = {"epoch": e}
        base = by_epoch[ref][e]["test_loss"]
        for n in names:
            src = by_epoch[n][e]
            for m in _METRICS:
                row[f"{n}:{m}"] = src[m]
            if len(names) > 1:
                tl = src["test_loss"]
                row[f"{n}:test_loss_ratio"] = None if tl is None or not base else tl / base
        rows.append(row)

    summary = []
    if spectra:
        ref_high = spectra[ref].high_band()
        for n in names:
            s = spectra[n]
            summary.append({
                "run": n,
                "high_low_ratio": s.high_low_ratio(),
                "high_band_energy": s.high_band(),
                "high_band_ratio": s.high_band() / ref_high if ref_high > 0 else float("nan"),
            })
    return Comparison(columns, rows, summary)


# reference architecture rows, counted under the bias-exclusion convention
KNOWN_TABLE_ROWS = {
    9_506_000: "nonlinear map, M=50, S_branch=1, S_trunk=1",
    8_831_000: "nonlinear map, M=50, S_branch=1, S_trunk=10",
    43_847_000: "nonlinear map, M=50, S_branch=5, S_trunk=10",
    19_852_300: "Helmholtz, M=50, S_branch=1, S_trunk=1",
    18_952_300: "Helmholtz, M=50, S_branch=1, S_trunk=10",
    94_351_500: "Helmholtz, M=50, S_branch=5, S_trunk=10",
}


@dataclass
class AuditReport:
    items: list[dict]
    total_all: int
    total_table: int
    matched_row: str | None

    def lines(self) -> list[str]:
        out = [f"{it['subnet']}: {it['all']} ({it['table']} table convention)" for it in self.items]
        out.append(f"total: {self.total_all} ({self.total_table} table convention)")
        if self.matched_row:
            out.append(f"matches reference row: {self.matched_row}")
        return out


def param_audit(spec: DeepOnetSpec) -> AuditReport:
    items = []
    for stack in (("branch", "branch_imag") if spec.complex_output else ("branch",)):
        for i in range(len(spec.branch_scales)):
            items.append({"subnet": f"{stack}[{i}]",
                          "all": mlp_count(spec.branch),
                          "table": mlp_count(spec.branch, skip_final_bias=True)})
    for i in range(len(spec.trunk_scales)):
        items.append({"subnet": f"trunk[{i}]",
                      "all": mlp_count(spec.trunk),
                      "table": mlp_count(spec.trunk, skip_first_bias=True)})
    table = count_parameters(spec, "paper")
    return AuditReport(items, count_parameters(spec, "all"), table, KNOWN_TABLE_ROWS.get(table))
