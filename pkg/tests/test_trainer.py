import numpy as np
import pytest

from oscinet.datasets import OperatorDataset
from oscinet.nets import DeepOnet, DeepOnetSpec, MlpSpec, load_checkpoint
from oscinet.tensor import Tensor, gradients
from oscinet.trainer import (
    LOSS_COLUMNS,
    AdamState,
    DivergenceError,
    MetricError,
    RunRecord,
    TrainConfig,
    adam_step,
    evaluate,
    mse_loss,
    relative_l2,
    train,
)


def linear_dataset(seed=0, n=100, n_test=20, m=4, q=8):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=m)
    f = rng.normal(size=(n + n_test, m))
    out = np.repeat((f @ w)[:, None], q, axis=1)
    return OperatorDataset("nonlinear_map", np.linspace(-1, 1, m), np.linspace(-1, 1, q),
                           f[:n], f[n:], out[:n], out[n:], meta={"query": "uniform"})


def linear_model(seed=0):
    spec = DeepOnetSpec(MlpSpec((4, 3)), MlpSpec((1, 2)), n_t=2)
    return DeepOnet.create(spec, seed)


class TestLoss:
    def test_zero(self, rng):
        a = rng.normal(size=(3, 4))
        assert mse_loss(a, None, a, None).item() == 0.0

    def test_complex_single_point(self):
        assert mse_loss([[0.0]], [[0.0]], [[1.0]], [[1.0]]).item() == 2.0

    def test_double_loop(self, rng):
        pr, pi, tr, ti = (rng.normal(size=(5, 7)) for _ in range(4))
        acc = 0.0
        for i in range(5):
            for j in range(7):
                acc += (pr[i, j] - tr[i, j]) ** 2 / 35 + (pi[i, j] - ti[i, j]) ** 2 / 35
        assert mse_loss(pr, pi, tr, ti).item() == pytest.approx(acc, rel=1e-12)

    def test_gradient(self, rng):
        p, t = Tensor(rng.normal(size=(2, 3)), requires_grad=True), rng.normal(size=(2, 3))
        _, (g,) = gradients(lambda: mse_loss(p, None, t, None), [p])
        np.testing.assert_allclose(g, 2 * (p.data - t) / 6)


class TestRelativeL2:
    def test_values(self, rng):
        t = rng.normal(size=10)
        assert relative_l2(t, t) == 0.0
        assert relative_l2(2 * t, t) == pytest.approx(1.0)
        assert relative_l2(np.zeros(10), t) == pytest.approx(1.0)

    def test_zero_target(self):
        with pytest.raises(MetricError):
            relative_l2(np.ones(3), np.zeros(3))


class TestAdam:
    def test_first_step(self):
        w = Tensor(np.array([0.0]))
        adam_step([w], [np.array([1.0])], AdamState.zeros_like([w]), 0.1)
        assert w.data[0] == pytest.approx(-0.0999999990, abs=1e-12)

    def test_zero_gradient(self, rng):
        w = Tensor(rng.normal(size=5))
        before = w.data.copy()
        state = AdamState.zeros_like([w])
        for _ in range(3):
            adam_step([w], [np.zeros(5)], state, 0.1)
        np.testing.assert_array_equal(w.data, before)

    def test_non_finite_gradient_named(self):
        w = Tensor(np.zeros(2), name="trunk.0.W")
        with pytest.raises(DivergenceError, match="trunk.0.W"):
            adam_step([w], [np.array([0.0, np.nan])], AdamState.zeros_like([w]), 0.1)

    def test_quadratic_decrease(self, rng):
        target = rng.normal(size=6)
        w = Tensor(rng.normal(size=6), requires_grad=True)

        def loss():
            d = w - Tensor(target)
            return (d * d).data.sum()

        before = loss()
        adam_step([w], [2 * (w.data - target)], AdamState.zeros_like([w]), 1e-3)
        assert loss() < before


class TestTrain:
    def test_linear_target(self):
        record, _ = train(linear_model(), linear_dataset(),
                          TrainConfig(learning_rate=1e-2, epochs=200, batch_size=20, eval_every=50))
        assert record.column("train_loss")[-1] < 1e-6

    def test_epochs_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)

    def test_deterministic(self, tmp_path):
        cfg = TrainConfig(learning_rate=1e-3, epochs=6, batch_size=16, eval_every=2, seed=3)
        r1, p1 = train(linear_model(1), linear_dataset(), cfg, tmp_path / "a")
        r2, p2 = train(linear_model(1), linear_dataset(), cfg, tmp_path / "b")
        assert r1.rows == r2.rows
        assert (tmp_path / "a" / "loss.csv").read_bytes() == (tmp_path / "b" / "loss.csv").read_bytes()
        for a, b in zip(p1.tensors(), p2.tensors()):
            assert a.data.tobytes() == b.data.tobytes()

    def test_run_dir_contents(self, tmp_path):
        model = linear_model()
        record, _ = train(model, linear_dataset(), TrainConfig(epochs=5, eval_every=2), tmp_path)
        assert {"best.mson", "final.mson", "loss.csv"} <= {p.name for p in tmp_path.iterdir()}
        assert [r["epoch"] for r in record.evaluated()] == [2, 4, 5]
        spec, params = load_checkpoint(tmp_path / "final.mson")
        ds = linear_dataset()
        assert evaluate(DeepOnet(spec, params), ds)["loss"] == evaluate(model, ds)["loss"]

    def test_mode_mismatch(self):
        spec = DeepOnetSpec(MlpSpec((4, 3)), MlpSpec((1, 2)), n_t=2, complex_output=True)
        with pytest.raises(ValueError):
            train(DeepOnet.create(spec, 0), linear_dataset(), TrainConfig(epochs=1))

    def test_divergence_saves_last_good(self, tmp_path):
        ds = linear_dataset()
        ds.train_out_re[:] = 1e200
        with pytest.raises(DivergenceError), np.errstate(all="ignore"):
            train(linear_model(), ds, TrainConfig(epochs=2), tmp_path)
        assert (tmp_path / "last_good.mson").exists()


class TestRunRecord:
    def test_csv_roundtrip(self):
        rec = RunRecord()
        rec.append({"epoch": 1, "train_loss": 0.5, "test_loss": None, "rel_l2_re": None, "rel_l2_im": None}, 0.1)
        rec.append({"epoch": 2, "train_loss": 0.25, "test_loss": 0.3, "rel_l2_re": 0.9, "rel_l2_im": None}, 0.2)
        text = rec.to_csv()
        assert text.splitlines()[0] == ",".join(LOSS_COLUMNS)
        assert RunRecord.from_csv(text).rows == rec.rows
        assert rec.last_evaluated()["epoch"] == 2
