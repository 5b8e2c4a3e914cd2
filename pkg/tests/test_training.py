import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pgnet.baselines import bicubic_baseline
from pgnet.checkpoint import read_blobs
from pgnet.degradation import DegradationConfig, patchify, simulate, uniform_srf
from pgnet.errors import ConfigError, ContractError, NumericalError
from pgnet.metrics import all_metrics
from pgnet.model import Pgnet, PgnetConfig
from pgnet.scenes import synthetic_scene
from pgnet.tensor import Parameter, backward
from pgnet.training import Adam, TrainConfig, adam_step, evaluate, lr_at, split_validation, train


def tiny_patches(n_side=2, seed=0):
    sc = synthetic_scene(8, 3, 16 * n_side, 16 * n_side, seed)
    lr, pan = simulate(sc.cube, uniform_srf(8, sc.wavelengths), DegradationConfig(ratio=4, seed=seed))
    return patchify(sc.cube, pan, lr, 16, 4)


def tiny_model(seed=0):
    return Pgnet(PgnetConfig(bands=8, endmembers=3, sab_count=1, pan_mid_channels=4,
                             decoder_mid_channels=6, ratio=4, seed=seed))


class TestAdam:
    def test_first_step(self):
        w = Parameter(np.array([0.5]), name="w")
        w.grad[...] = 1.0
        state = adam_step([w], None, 1e-3)
        assert w.data[0] == pytest.approx(0.5 - 1e-3, abs=1e-9)
        assert state.step_count == 1

    def test_zero_grad_no_change(self):
        w = Parameter(np.array([0.5, -2.0]), name="w")
        adam_step([w], None, 0.1)
        np.testing.assert_array_equal(w.data, [0.5, -2.0])

    def test_quadratic_bowl(self):
        w = Parameter(np.array([1.0]), name="w")
        state = None
        for _ in range(200):
            w.zero_grad()
            backward((w * w).sum())
            state = adam_step([w], state, 0.05)
        assert abs(w.data[0]) < 1e-2

    def test_nan_gradient_names_parameter(self):
        w = Parameter(np.array([1.0]), name="layer.weight")
        w.grad[...] = np.nan
        with pytest.raises(NumericalError, match="layer.weight"):
            Adam([("layer.weight", w)]).step(0.1)

    def test_missing_gradient(self):
        w = Parameter(np.array([1.0]), name="w")
        w.grad = None
        with pytest.raises(ContractError):
            Adam([("w", w)]).step(0.1)

    def test_untracked_parameter(self):
        a, b = Parameter(np.zeros(1), name="a"), Parameter(np.zeros(1), name="b")
        state = adam_step([a], None, 0.1)
        with pytest.raises(ContractError):
            adam_step([b], state, 0.1)


class TestSchedule:
    def test_values(self):
        cfg = TrainConfig()
        assert lr_at(0, cfg) == 0.002
        assert lr_at(99, cfg) == 0.002
        assert lr_at(100, cfg) == pytest.approx(0.0001)
        assert lr_at(400, cfg) == pytest.approx(0.002 * 0.05 ** 4)

    def test_reduce_by(self):
        cfg = TrainConfig(lr_decay_mode="reduce_by")
        assert lr_at(150, cfg) == pytest.approx(0.002 * 0.95)

    @settings(max_examples=30, deadline=None)
    @given(e=st.integers(0, 2000), mode=st.sampled_from(["multiply", "reduce_by"]))
    def test_non_increasing(self, e, mode):
        cfg = TrainConfig(lr_decay_mode=mode)
        assert lr_at(e + 1, cfg) <= lr_at(e, cfg)

    def test_bad_config(self):
        for kw in ({"epochs": 0}, {"batch_size": 0}, {"lr0": 0.0}, {"lr_decay_mode": "cosine"}):
            with pytest.raises(ConfigError):
                TrainConfig(**kw)
        with pytest.raises(ConfigError):
            lr_at(-1, TrainConfig())


class TestTrain:
    def test_single_step(self):
        log = train(tiny_model(), tiny_patches(1), TrainConfig(epochs=1, batch_size=4))
        assert log.steps == 1 and len(log.rows) == 1

    def test_log_rows_and_files(self, tmp_path):
        log = train(tiny_model(), tiny_patches(2), TrainConfig(epochs=3, batch_size=2, val_fraction=0.25),
                    out_dir=tmp_path)
        assert [r["epoch"] for r in log.rows] == [0, 1, 2]
        assert log.steps == 3 * 2
        lines = (tmp_path / "train_log.csv").read_text().splitlines()
        assert lines[0] == "epoch,loss,lr" and len(lines) == 4
        assert (tmp_path / "best.ckpt").exists() and (tmp_path / "last.ckpt").exists()
        assert len(log.validation) == 3

    def test_deterministic(self):
        cfg = TrainConfig(epochs=2, batch_size=2)
        a, b = tiny_model(), tiny_model()
        la, lb = train(a, tiny_patches(2), cfg), train(b, tiny_patches(2), cfg)
        assert la.rows == lb.rows
        for (_, x), (_, y) in zip(a.state_dict().items(), b.state_dict().items()):
            assert x.tobytes() == y.tobytes()

    def test_resume_bit_exact(self, tmp_path):
        patches = tiny_patches(2)
        full = tiny_model()
        train(full, patches, TrainConfig(epochs=4, batch_size=2), out_dir=tmp_path / "full")
        part = tiny_model()
        train(part, patches, TrainConfig(epochs=2, batch_size=2), out_dir=tmp_path / "part")
        resumed = tiny_model(seed=99)
        log = train(resumed, patches, TrainConfig(epochs=4, batch_size=2), out_dir=tmp_path / "resumed",
                    resume_from=tmp_path / "part" / "last.ckpt")
        assert [r["epoch"] for r in log.rows] == [0, 1, 2, 3]
        _, a = read_blobs(tmp_path / "full" / "last.ckpt")
        _, b = read_blobs(tmp_path / "resumed" / "last.ckpt")
        assert list(a) == list(b)
        for k in a:
            assert a[k].tobytes() == b[k].tobytes(), k

    def test_nan_aborts_with_location(self):
        patches = tiny_patches(1)
        hr, pan, lr = patches[0]
        lr = lr.copy()
        lr[0, 0, 0] = np.nan
        with pytest.raises(NumericalError, match="epoch 0 batch 0"):
            train(tiny_model(), [(hr, pan, lr)], TrainConfig(epochs=1))

    def test_needs_patches(self):
        with pytest.raises(ConfigError):
            train(tiny_model(), [], TrainConfig(epochs=1))

    def test_validation_split(self):
        assert split_validation(20, 0.1) == (18, 2)
        assert split_validation(5, 0.1) == (5, 0)
        assert split_validation(1, 0.5) == (1, 0)


class TestEvaluate:
    def test_reference_double(self):
        patches = tiny_patches(2)
        refs = iter([p[0] for p in patches])
        rep = evaluate(lambda lr, pan: next(refs), patches, 4)
        assert rep["ssim"] == pytest.approx(1.0, abs=1e-9)
        assert rep["sam"] == pytest.approx(0.0, abs=1e-9)
        assert rep["psnr"] == 100.0

    def test_mean_of_rows(self):
        patches = tiny_patches(2)
        rep = evaluate(tiny_model(), patches, 4)
        for k in ("psnr", "ssim", "sam", "ergas", "scc"):
            assert rep.mean[k] == pytest.approx(np.mean([r[k] for r in rep.rows]), abs=1e-9)

    def test_bicubic_consistency(self):
        patches = tiny_patches(2)
        rep = evaluate(lambda lr, pan: bicubic_baseline(lr, 4), patches, 4)
        direct = [all_metrics(bicubic_baseline(p[2], 4), p[0], 4) for p in patches]
        for row, d in zip(rep.rows, direct):
            for k, v in d.items():
                assert row[k] == v

    def test_model_left_in_mode(self):
        m = tiny_model()
        m.train()
        evaluate(m, tiny_patches(1), 4)
        assert m.training
