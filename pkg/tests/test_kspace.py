import numpy as np
import pytest

from voxelsr.kspace import (
    ComplexVolume,
    DegradeSpec,
    decimate,
    degrade,
    forward_fft3,
    inverse_fft3,
    truncation_mask,
)
from voxelsr.volume import Volume3D


def naive_dft3(values):
    """Direct DFT via per-axis transform matrices; independent of np.fft."""
    values = np.asarray(values, dtype=np.complex128)
    out = values
    for axis, n in enumerate(values.shape):
        k = np.arange(n)
        mat = np.exp(-2j * np.pi * np.outer(k, k) / n)
        out = np.moveaxis(np.tensordot(mat, np.moveaxis(out, axis, 0), axes=1), 0, axis)
    return out


def random_volume(dims, seed):
    rng = np.random.default_rng(seed)
    return Volume3D(values=rng.normal(size=dims).astype(np.float32))


def cosine_volume(freq, axis, n=64):
    x = np.arange(n)
    line = np.cos(2 * np.pi * freq * x / n)
    shape = [1, 1, 1]
    shape[axis] = n
    vals = np.broadcast_to(line.reshape(shape), (n, n, n)).astype(np.float32)
    return Volume3D(values=vals.copy())


class TestFft:
    def test_constant_volume_dc_only(self):
        n, c = 4, 2.5
        vol = Volume3D(values=np.full((n, n, n), c, dtype=np.float32))
        kv = forward_fft3(vol)
        assert abs(kv.values[0, 0, 0] - c * n**3) < 1e-6
        rest = kv.values.copy()
        rest[0, 0, 0] = 0
        assert np.abs(rest).max() < 1e-6

    def test_impulse_flat_spectrum(self):
        vals = np.zeros((4, 4, 4), dtype=np.float32)
        vals[0, 0, 0] = 1.0
        kv = forward_fft3(Volume3D(values=vals))
        np.testing.assert_allclose(kv.values, 1.0, atol=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_naive_dft(self, seed):
        vol = random_volume((4, 4, 4), seed)
        got = forward_fft3(vol).values
        want = naive_dft3(vol.values)
        err = np.abs(got - want).max() / np.abs(want).max()
        assert err < 1e-4

    @pytest.mark.parametrize("dims", [(4, 6, 8), (8, 8, 8), (5, 7, 3)])
    def test_naive_dft_non_cubic(self, dims):
        vol = random_volume(dims, 11)
        err = np.abs(forward_fft3(vol).values - naive_dft3(vol.values)).max()
        assert err / np.abs(naive_dft3(vol.values)).max() < 1e-4

    @pytest.mark.parametrize("dims", [(8, 8, 8), (16, 16, 16), (32, 32, 32)])
    def test_inversion_identity(self, dims):
        vol = random_volume(dims, sum(dims))
        back = inverse_fft3(forward_fft3(vol))
        assert np.abs(back.values.real - vol.values).max() < 1e-5

    def test_zero_spectrum(self):
        kv = ComplexVolume(values=np.zeros((4, 4, 4), dtype=np.complex128))
        np.testing.assert_array_equal(inverse_fft3(kv).values, 0)

    def test_dc_only_gives_constant(self):
        n, c = 4, 1.75
        spec = np.zeros((n, n, n), dtype=np.complex128)
        spec[0, 0, 0] = c * n**3
        out = inverse_fft3(ComplexVolume(values=spec))
        np.testing.assert_allclose(out.values.real, c, atol=1e-9)

    def test_centered_rejected(self):
        kv = ComplexVolume(values=np.zeros((4, 4, 4), dtype=np.complex128), centered=True)
        with pytest.raises(ValueError):
            inverse_fft3(kv)


class TestTruncationMask:
    def test_kept_count_8_cubed(self):
        mask = truncation_mask((8, 8, 8), DegradeSpec(factors=(2, 2, 1)))
        # per truncated axis the kept lines are {0, 1, 7}
        line = mask[:, 0, 0]
        np.testing.assert_array_equal(np.nonzero(line)[0], [0, 1, 7])
        assert mask.sum() == 3 * 3 * 8

    def test_all_ones_without_truncation(self):
        mask = truncation_mask((8, 8, 8), DegradeSpec(factors=(1, 1, 1)))
        assert mask.all()

    @pytest.mark.parametrize("dims,factors", [((8, 8, 8), (2, 2, 1)), ((16, 8, 4), (4, 2, 2))])
    def test_symmetric_under_negation(self, dims, factors):
        mask = truncation_mask(dims, DegradeSpec(factors=factors))
        for axis in range(3):
            idx = (-np.arange(dims[axis])) % dims[axis]
            np.testing.assert_array_equal(np.take(mask, idx, axis=axis), mask)

    def test_non_divisible_dims(self):
        with pytest.raises(ValueError):
            truncation_mask((9, 8, 8), DegradeSpec(factors=(2, 1, 1)))

    def test_spec_invariant_enforced(self):
        with pytest.raises(ValueError):
            DegradeSpec(factors=(1, 1, 1), axes=(0, 1))
        with pytest.raises(ValueError):
            DegradeSpec(factors=(2, 2, 2), axes=(0, 1))


class TestDegrade:
    def test_constant_unchanged(self):
        vol = Volume3D(values=np.full((8, 8, 8), 0.9, dtype=np.float32))
        out = degrade(vol, DegradeSpec(factors=(2, 2, 1)))
        np.testing.assert_allclose(out.values, 0.9, atol=1e-6)

    def test_sub_cutoff_cosine_passes(self):
        vol = cosine_volume(freq=1, axis=0)
        out = degrade(vol, DegradeSpec(factors=(2, 1, 1)))
        assert np.abs(out.values - vol.values).max() < 1e-5

    def test_supra_cutoff_cosine_annihilated(self):
        vol = cosine_volume(freq=20, axis=0)  # cutoff for n=64, f=2 is 16
        out = degrade(vol, DegradeSpec(factors=(2, 1, 1)))
        assert np.abs(out.values).max() < 1e-5

    def test_cutoff_via_direct_dft(self):
        # the kept band on a truncated axis of length 16, factor 2 is |w| <= 3
        spec = DegradeSpec(factors=(2, 1, 1))
        vol = random_volume((16, 8, 8), 21)
        out = degrade(vol, spec)
        k_out = naive_dft3(out.values)
        k_in = naive_dft3(vol.values)
        kept = np.abs(k_out[np.r_[0:4, 13:16], :, :])
        orig = np.abs(k_in[np.r_[0:4, 13:16], :, :])
        np.testing.assert_allclose(kept, orig, rtol=1e-4, atol=1e-6)
        assert np.abs(k_out[4:13, :, :]).max() < 1e-6 * np.abs(k_in).max()

    @pytest.mark.parametrize("seed", range(4))
    def test_idempotent(self, seed):
        spec = DegradeSpec(factors=(2, 2, 1))
        vol = random_volume((16, 16, 16), seed)
        once = degrade(vol, spec)
        twice = degrade(once, spec)
        assert np.abs(twice.values - once.values).max() < 1e-5

    def test_linearity(self):
        spec = DegradeSpec(factors=(2, 2, 1))
        v = random_volume((16, 16, 16), 1)
        w = random_volume((16, 16, 16), 2)
        a, b = 1.7, -0.4
        combo = Volume3D(values=a * v.values + b * w.values)
        lhs = degrade(combo, spec).values
        rhs = a * degrade(v, spec).values + b * degrade(w, spec).values
        assert np.abs(lhs - rhs).max() < 1e-5

    @pytest.mark.parametrize("seed", range(4))
    def test_parseval_energy_non_increase(self, seed):
        spec = DegradeSpec(factors=(2, 2, 1))
        vol = random_volume((16, 16, 16), 100 + seed)
        out = degrade(vol, spec)
        assert np.sum(out.values.astype(np.float64) ** 2) <= np.sum(
            vol.values.astype(np.float64) ** 2
        ) * (1 + 1e-9)

    @pytest.mark.parametrize("seed", range(4))
    def test_dc_preserved(self, seed):
        spec = DegradeSpec(factors=(2, 2, 1))
        vol = random_volume((16, 16, 16), 200 + seed)
        out = degrade(vol, spec)
        assert abs(out.values.astype(np.float64).mean()
                   - vol.values.astype(np.float64).mean()) < 1e-6

    def test_non_divisible(self):
        with pytest.raises(ValueError):
            degrade(random_volume((10, 8, 8), 0), DegradeSpec(factors=(4, 2, 1)))


class TestDecimate:
    def test_constant_scaling_and_dims(self):
        vol = Volume3D(values=np.full((64, 64, 64), 1.3, dtype=np.float32))
        out = decimate(vol, DegradeSpec(factors=(2, 2, 1)))
        assert out.dims == (32, 32, 64)
        np.testing.assert_allclose(out.values, 1.3, atol=1e-5)

    @pytest.mark.parametrize("seed", range(3))
    def test_kept_coefficients_agree_with_degrade(self, seed):
        spec = DegradeSpec(factors=(2, 2, 1))
        vol = random_volume((16, 16, 16), 300 + seed)
        k_full = np.fft.fftn(degrade(vol, spec).values.astype(np.float64))
        k_small = np.fft.fftn(decimate(vol, spec).values.astype(np.float64)) * spec.total_factor
        m = 3  # kept half-width for n=16, f=2
        keep_full = np.r_[0 : m + 1, 16 - m : 16]
        keep_small = np.r_[0 : m + 1, 8 - m : 8]
        a = k_full[np.ix_(keep_full, keep_full, np.arange(16))]
        b = k_small[np.ix_(keep_small, keep_small, np.arange(16))]
        assert np.abs(a - b).max() / max(np.abs(a).max(), 1e-12) < 1e-4

    def test_identity_factors(self):
        vol = random_volume((8, 8, 8), 5)
        out = decimate(vol, DegradeSpec(factors=(1, 1, 1)))
        np.testing.assert_array_equal(out.values, vol.values)

    def test_spacing_scaled(self):
        vol = Volume3D(values=np.random.default_rng(0).normal(size=(8, 8, 8)).astype(np.float32),
                       spacing=(0.7, 0.7, 0.7))
        out = decimate(vol, DegradeSpec(factors=(2, 2, 1)))
        np.testing.assert_allclose(out.spacing, (1.4, 1.4, 0.7))
