import numpy as np
import pytest

from voxelsr.autodiff import Tape, Tensor, backward, init_adam, mse_loss, no_grad, zero_grads
from voxelsr.models import (
    DcsrnConfig,
    FsrcnnConfig,
    build_dcsrn,
    build_fsrcnn,
    count_params,
    forward_model,
    load_checkpoint,
    save_checkpoint,
)


def dcsrn_param_count(k: int, units: int = 4, in_kernel: int = 3, unit_kernel: int = 3,
                      out_kernel: int = 1) -> int:
    """Closed-form parameter count: conv weights + biases + BN gamma/beta."""
    total = in_kernel**3 * 2 * k + 2 * k                  # input conv
    for i in range(1, units + 1):
        c_in = 2 * k + (i - 1) * k
        total += 2 * c_in                                  # gamma, beta
        total += unit_kernel**3 * c_in * k + k             # unit conv
    final_in = 2 * k + units * k
    total += out_kernel**3 * final_in * 1 + 1              # reconstruction conv
    return total


def fsrcnn_param_count(d: int, s: int, m: int, dims: int = 3, fk: int = 5, mk: int = 3,
                       rk: int = 3) -> int:
    vol = lambda k: k**dims if dims == 3 else k * k
    total = vol(fk) * d + d            # feature extraction
    total += d * s + s                 # shrink (1-kernels)
    total += m * (vol(mk) * s * s + s)  # mapping
    total += s * d + d                 # expand
    total += vol(rk) * d + 1           # reconstruction
    return total


class TestDcsrnArchitecture:
    def test_first_layer_channels_k24(self):
        model = build_dcsrn(DcsrnConfig(growth_rate=24), seed=0)
        assert model.params["input_conv.w"].shape[0] == 48

    def test_dense_unit_input_channels_k24(self):
        model = build_dcsrn(DcsrnConfig(growth_rate=24), seed=0)
        for i, expected in zip(range(1, 5), (48, 72, 96, 120)):
            assert model.params[f"unit{i}.conv.w"].shape[1] == expected
        assert model.params["output_conv.w"].shape[1] == 144

    def test_param_count_matches_closed_form(self):
        for k in (2, 8, 24):
            model = build_dcsrn(DcsrnConfig(growth_rate=k), seed=0)
            assert count_params(model) == dcsrn_param_count(k)

    def test_count_invariant_to_seed(self):
        cfg = DcsrnConfig(growth_rate=8)
        assert count_params(build_dcsrn(cfg, seed=1)) == count_params(build_dcsrn(cfg, seed=2))

    def test_same_seed_bit_identical(self):
        cfg = DcsrnConfig(growth_rate=4)
        a, b = build_dcsrn(cfg, seed=7), build_dcsrn(cfg, seed=7)
        for name, p in a.params.items():
            np.testing.assert_array_equal(p.data, b.params[name].data)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            DcsrnConfig(growth_rate=0)
        with pytest.raises(ValueError):
            DcsrnConfig(unit_kernel=4)


class TestFsrcnnArchitecture:
    def test_layer_and_channel_sequence(self):
        model = build_fsrcnn(FsrcnnConfig(d=56, s=12, m=4), seed=0)
        convs = [n for n in model.params if n.endswith(".w")]
        assert len(convs) == 4 + 4  # 4 fixed stages + m mapping convs
        assert model.params["feature.w"].shape[:2] == (56, 1)
        assert model.params["shrink.w"].shape[:2] == (12, 56)
        for i in range(1, 5):
            assert model.params[f"map{i}.w"].shape[:2] == (12, 12)
        assert model.params["expand.w"].shape[:2] == (56, 12)
        assert model.params["reconstruction.w"].shape[:2] == (1, 56)

    def test_2d_unit_depth_kernels(self):
        model = build_fsrcnn(FsrcnnConfig(d=16, s=4, m=2, dims=2), seed=0)
        for name, p in model.params.items():
            if name.endswith(".w"):
                assert p.shape[2] == 1

    def test_same_size_forward(self):
        model = build_fsrcnn(FsrcnnConfig(d=8, s=3, m=1), seed=0)
        x = Tensor(np.random.default_rng(0).normal(size=(1, 1, 16, 16, 16)).astype(np.float32))
        assert forward_model(model, x, mode="infer").shape == (1, 1, 16, 16, 16)

    def test_param_count_matches_closed_form(self):
        model = build_fsrcnn(FsrcnnConfig(d=56, s=12, m=4), seed=0)
        assert count_params(model) == fsrcnn_param_count(56, 12, 4)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            FsrcnnConfig(d=4, s=8)
        with pytest.raises(ValueError):
            FsrcnnConfig(m=0)
        with pytest.raises(ValueError):
            FsrcnnConfig(dims=4)


class TestForwardModel:
    def test_shape_contract_dcsrn(self):
        model = build_dcsrn(DcsrnConfig(growth_rate=8), seed=0)
        x = Tensor(np.random.default_rng(1).normal(size=(1, 1, 16, 16, 16)).astype(np.float32))
        assert forward_model(model, x, mode="infer").shape == (1, 1, 16, 16, 16)

    @pytest.mark.parametrize("dims", [(8, 9, 10), (12, 8, 15), (11, 11, 11)])
    def test_shape_invariance_random_sizes(self, dims):
        model = build_dcsrn(DcsrnConfig(growth_rate=2), seed=0)
        x = Tensor(np.random.default_rng(2).normal(size=(1, 1) + dims).astype(np.float32))
        assert forward_model(model, x, mode="infer").shape == (1, 1) + dims

    def test_infer_deterministic(self):
        model = build_dcsrn(DcsrnConfig(growth_rate=4), seed=0)
        x = Tensor(np.random.default_rng(3).normal(size=(1, 1, 8, 8, 8)).astype(np.float32))
        a = forward_model(model, x, mode="infer").data
        b = forward_model(model, x, mode="infer").data
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("seed", range(10))
    def test_untrained_output_finite(self, seed):
        model = build_dcsrn(DcsrnConfig(growth_rate=4), seed=seed)
        x = Tensor(np.random.default_rng(seed).normal(size=(1, 1, 8, 8, 8)).astype(np.float32))
        out = forward_model(model, x, mode="train")
        assert np.all(np.isfinite(out.data))

    def test_undersized_input_rejected(self):
        model = build_fsrcnn(FsrcnnConfig(d=8, s=3, m=1), seed=0)
        with pytest.raises(ValueError):
            forward_model(model, Tensor(np.zeros((1, 1, 4, 4, 4), dtype=np.float32)))

    def test_multichannel_input_rejected(self):
        model = build_dcsrn(DcsrnConfig(growth_rate=2), seed=0)
        with pytest.raises(ValueError):
            forward_model(model, Tensor(np.zeros((1, 2, 8, 8, 8), dtype=np.float32)))

    def test_2d_model_accepts_singleton_depth(self):
        model = build_fsrcnn(FsrcnnConfig(d=8, s=3, m=1, dims=2), seed=0)
        x = Tensor(np.random.default_rng(4).normal(size=(3, 1, 1, 12, 12)).astype(np.float32))
        assert forward_model(model, x, mode="infer").shape == (3, 1, 1, 12, 12)


class TestEndToEndGradients:
    def test_dcsrn_k2_all_parameter_gradients(self):
        model = build_dcsrn(DcsrnConfig(growth_rate=2), seed=0, dtype=np.float64)
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(1, 1, 8, 8, 8)))
        target = Tensor(rng.normal(size=(1, 1, 8, 8, 8)))
        params = model.parameters()

        def run_loss():
            # fresh running stats so repeated forwards see identical state
            for rs in model.running.values():
                rs.mean = np.zeros_like(rs.mean)
                rs.var = np.ones_like(rs.var)
            return mse_loss(forward_model(model, x, mode="train"), target)

        tape = Tape()
        with tape:
            loss = run_loss()
        zero_grads(params)
        backward(loss, tape)
        analytic = [p.grad.copy() for p in params]

        def loss_value():
            with no_grad():
                return float(run_loss().data)

        worst = 0.0
        for p, a in zip(params, analytic):
            flat = p.data.reshape(-1)
            fd = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + 1e-3
                hi = loss_value()
                flat[i] = orig - 1e-3
                lo = loss_value()
                flat[i] = orig
                fd[i] = (hi - lo) / 2e-3
            denom = np.maximum(np.maximum(np.abs(a.reshape(-1)), np.abs(fd)), 1e-4)
            worst = max(worst, float(np.max(np.abs(a.reshape(-1) - fd) / denom)))
        assert worst < 1e-3


class TestCheckpoints:
    def test_round_trip_dcsrn(self, tmp_path):
        model = build_dcsrn(DcsrnConfig(growth_rate=4), seed=3)
        adam = init_adam(model.parameters(), lr=1e-3)
        adam.t = 17
        for m in adam.m:
            m += 0.25
        save_checkpoint(model, tmp_path / "m", adam=adam, step=123)
        loaded, adam2, step = load_checkpoint(tmp_path / "m")
        assert step == 123
        assert adam2.t == 17 and adam2.lr == 1e-3
        for name, p in model.params.items():
            np.testing.assert_array_equal(loaded.params[name].data, p.data)
        for name, rs in model.running.items():
            np.testing.assert_array_equal(loaded.running[name].mean, rs.mean)
        np.testing.assert_allclose(adam2.m[0], adam.m[0], atol=1e-7)

    def test_round_trip_preserves_inference(self, tmp_path):
        model = build_fsrcnn(FsrcnnConfig(d=8, s=3, m=1), seed=1)
        x = Tensor(np.random.default_rng(5).normal(size=(1, 1, 8, 8, 8)).astype(np.float32))
        before = forward_model(model, x, mode="infer").data
        save_checkpoint(model, tmp_path / "f", step=1)
        loaded, _, _ = load_checkpoint(tmp_path / "f")
        after = forward_model(loaded, x, mode="infer").data
        np.testing.assert_array_equal(before, after)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "nothing.ckpt")

    def test_corrupt_payload_rejected(self, tmp_path):
        model = build_dcsrn(DcsrnConfig(growth_rate=2), seed=0)
        save_checkpoint(model, tmp_path / "c", step=1)
        payload = (tmp_path / "c.ckpt").read_bytes()
        (tmp_path / "c.ckpt").write_bytes(payload[:-8])
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "c")

    def test_deterministic_bytes(self, tmp_path):
        model = build_dcsrn(DcsrnConfig(growth_rate=2), seed=0)
        save_checkpoint(model, tmp_path / "a", step=5)
        save_checkpoint(model, tmp_path / "b", step=5)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        assert (tmp_path / "a.ckpth").read_bytes() == (tmp_path / "b.ckpth").read_bytes()
