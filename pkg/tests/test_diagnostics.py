import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oscinet.diagnostics import (
    GridError,
    UsageError,
    compare_runs,
    param_audit,
    residual_spectrum,
)
from oscinet.nets import DeepOnetSpec, MlpSpec, default_trunk_scales
from oscinet.trainer import RunRecord


def tone(cycles, n=256):
    j = np.arange(n)
    return np.sin(2 * np.pi * cycles * j / n)


def record(losses, eval_every=2):
    rec = RunRecord()
    for e, v in enumerate(losses, start=1):
        ev = e % eval_every == 0
        rec.append({"epoch": e, "train_loss": v, "test_loss": 2 * v if ev else None,
                    "rel_l2_re": v / 3 if ev else None, "rel_l2_im": None}, 0.0)
    return rec


class TestSpectrum:
    def test_zero(self):
        np.testing.assert_array_equal(residual_spectrum(np.zeros(64), 8).energy, 0.0)

    def test_pure_tone(self):
        s = residual_spectrum(tone(6), 16)
        b = int(np.searchsorted(s.edges, 6, side="right")) - 1
        assert s.energy[b] >= 0.99 * s.energy.sum()

    @pytest.mark.parametrize("cycles", [1, 17, 50, 100, 127])
    def test_tone_bin(self, cycles):
        s = residual_spectrum(tone(cycles), 16)
        b = min(int(cycles // s.edges[1]), 15)
        assert s.energy[b] >= 0.99 * s.energy.sum()

    def test_parseval(self, rng):
        for _ in range(100):
            r = rng.normal(size=(3, int(rng.integers(2, 300))))
            if rng.random() < 0.5:
                r = r + 1j * rng.normal(size=r.shape)
            s = residual_spectrum(r, int(rng.integers(1, 20)))
            expected = np.sum(np.abs(r) ** 2) / r.shape[1]
            assert abs(s.energy.sum() - expected) <= 1e-10 * expected
            assert s.total == pytest.approx(expected, rel=1e-12)

    def test_bands(self):
        s = residual_spectrum(tone(100) + 0.5 * tone(3), 3)
        assert s.high_band() == pytest.approx(0.5, rel=1e-9)
        assert s.low_band() == pytest.approx(0.125, rel=1e-9)
        assert s.high_low_ratio() == pytest.approx(4.0, rel=1e-9)

    def test_non_uniform_grid(self):
        grid = np.sort(np.random.default_rng(0).uniform(-1, 1, 32))
        with pytest.raises(GridError):
            residual_spectrum(np.ones(32), grid=grid)
        residual_spectrum(np.ones(32), grid=np.linspace(-1, 1, 32))

    def test_csv(self):
        text = residual_spectrum(tone(2, 16), 4, epoch=7).to_csv()
        lines = text.splitlines()
        assert lines[0] == "epoch,bin_lo,bin_hi,energy" and len(lines) == 5
        assert lines[1].startswith("7,0.0,2.0,")


class TestCompare:
    def test_single_run(self):
        rec = record([1.0, 0.5, 0.25, 0.125])
        cmp = compare_runs([rec])
        assert [r["epoch"] for r in cmp.rows] == [1, 2, 3, 4]
        for row, src in zip(cmp.rows, rec.rows):
            assert row["run0:train_loss"] == src["train_loss"]
            assert row["run0:test_loss"] == src["test_loss"]

    def test_identical_runs(self):
        rec = record([1.0, 0.5, 0.25, 0.125])
        s = residual_spectrum(tone(100) + tone(3), 3)
        cmp = compare_runs({"a": rec, "b": rec}, {"a": s, "b": s})
        ratios = [r["b:test_loss_ratio"] for r in cmp.rows if r["b:test_loss_ratio"] is not None]
        assert ratios == [1.0, 1.0]
        assert [r["high_band_ratio"] for r in cmp.summary] == [1.0, 1.0]

    def test_coarsest_grid(self):
        cmp = compare_runs([record([1, 2, 3, 4, 5, 6], 2), record([1, 2, 3, 4, 5, 6], 3)])
        assert [r["epoch"] for r in cmp.rows] == [6]

    def test_empty(self):
        with pytest.raises(UsageError):
            compare_runs([])


class TestAudit:
    def test_table_row_flagged(self):
        spec = DeepOnetSpec(MlpSpec((3000, 2000, 1000, 500, 501)), MlpSpec((1, 500, 500, 500, 500)))
        report = param_audit(spec)
        assert report.total_table == 9_506_000 and report.matched_row is not None
        assert any("9506000" in line for line in report.lines())

    def test_convention_delta(self):
        spec = DeepOnetSpec(MlpSpec((20, 30, 17)), MlpSpec((1, 9, 8)), (1.0, 2.0),
                            default_trunk_scales(2), complex_output=True)
        report = param_audit(spec)
        # dropped biases: each branch subnet's output bias, each trunk subnet's first-layer bias
        delta = 2 * 2 * 17 + 2 * 9
        assert report.total_all - report.total_table == delta
        assert report.matched_row is None

    def test_zero_width_rejected(self):
        with pytest.raises(ValueError):
            MlpSpec((3, 0, 2))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 512), bins=st.integers(1, 32), seed=st.integers(0, 2**31))
def test_parseval_property(n, bins, seed):
    r = np.random.default_rng(seed).normal(size=n)
    s = residual_spectrum(r, bins)
    assert s.energy.sum() == pytest.approx(np.mean(r ** 2), rel=1e-10)
