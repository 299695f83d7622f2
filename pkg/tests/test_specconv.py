"""Spectral layer contracts: equivariance, nonlinearity, gradients."""

import numpy as np
import pytest

from so3harmonics import grids, wigner
from so3harmonics.estimation import LossConfig
from so3harmonics.harmonics import SphericalCoeffs, synthesize
from so3harmonics.mapper import FeatureMap, MapperConfig
from so3harmonics.rotations import (RotationMatrix, matrix_to_euler,
                                    sample_uniform_matrices)
from so3harmonics.specconv import (LocalSO3Filter, S2FilterBank, SO3Coeffs,
                                   ToyModel, backward, default_nonlin_grid,
                                   forward, init_toy_model,
                                   local_tap_rotations, load_model, s2_conv,
                                   save_model, so3_conv, so3_nonlinearity)

L = 4


@pytest.fixture(scope="module")
def model():
    return init_toy_model(0, L, in_channels=2, mid_channels=3,
                          hidden_channels=4, tap_count=12)


def left_translate(x: SO3Coeffs, m: np.ndarray) -> SO3Coeffs:
    e = matrix_to_euler(RotationMatrix(m))
    return SO3Coeffs(x.bandlimit, tuple(
        np.einsum("mn,cnk->cmk", wigner.wigner_D_real(l, e).entries, x.blocks[l])
        for l in range(x.bandlimit + 1)))


class TestS2Conv:
    def test_zero_signal(self, model):
        c = SphericalCoeffs(L, np.zeros((3, 25)))
        out = s2_conv(c, model.s2)
        assert all(np.all(b == 0) for b in out.blocks)

    def test_outer_product_structure(self, model):
        rng = np.random.default_rng(0)
        c = SphericalCoeffs(L, rng.normal(size=(3, 25)))
        out = s2_conv(c, model.s2)
        l = 2
        expect = np.einsum("im,oin->omn", c.block(l), model.s2.spectra[l])
        assert np.allclose(out.blocks[l], expect)
        # single input channel gives rank-one degree blocks
        c1 = SphericalCoeffs(L, rng.normal(size=(1, 25)))
        bank1 = S2FilterBank(L, tuple(s[:, :1] for s in model.s2.spectra))
        out1 = s2_conv(c1, bank1)
        for ll in range(1, L + 1):
            ranks = np.linalg.matrix_rank(out1.blocks[ll], tol=1e-10)
            assert np.all(ranks <= 1)

    def test_left_equivariance_exact(self, model):
        rng = np.random.default_rng(1)
        for seed in range(10):
            c = SphericalCoeffs(L, rng.normal(size=(3, 25)))
            m = sample_uniform_matrices(seed, 1)[0]
            lhs = s2_conv(wigner.rotate_coeffs(c, m), model.s2)
            rhs = left_translate(s2_conv(c, model.s2), m)
            err = max(np.max(np.abs(a - b))
                      for a, b in zip(lhs.blocks, rhs.blocks))
            assert err < 1e-9

    def test_bandlimit_mismatch(self, model):
        with pytest.raises(ValueError):
            s2_conv(SphericalCoeffs(L - 1, np.zeros((3, 16))), model.s2)


class TestSO3Conv:
    def test_identity_filter(self, model):
        rng = np.random.default_rng(2)
        x = SO3Coeffs.from_flat(L, rng.normal(size=(4, wigner.m_total(L))))
        ident = LocalSO3Filter(L, 0.01, np.eye(3)[None],
                               np.eye(4)[:, :, None])
        out = so3_conv(x, ident)
        assert max(np.max(np.abs(a - b))
                   for a, b in zip(out.blocks, x.blocks)) < 1e-12

    def test_zero_input(self, model):
        x = SO3Coeffs.from_flat(L, np.zeros((4, wigner.m_total(L))))
        out = so3_conv(x, model.so3)
        assert all(np.all(b == 0) for b in out.blocks)

    def test_left_equivariance_exact(self, model):
        rng = np.random.default_rng(3)
        for seed in range(10):
            x = SO3Coeffs.from_flat(L, rng.normal(size=(4, wigner.m_total(L))))
            m = sample_uniform_matrices(100 + seed, 1)[0]
            lhs = so3_conv(left_translate(x, m), model.so3)
            rhs = left_translate(so3_conv(x, model.so3), m)
            err = max(np.max(np.abs(a - b))
                      for a, b in zip(lhs.blocks, rhs.blocks))
            assert err < 1e-9

    def test_taps_stay_within_support(self):
        taps = local_tap_rotations(32, np.pi / 8)
        ang = np.arccos(np.clip(
            (np.trace(taps, axis1=1, axis2=2) - 1) / 2, -1, 1))
        assert np.all(ang <= np.pi / 8 + 1e-12)
        with pytest.raises(ValueError):
            LocalSO3Filter(L, 0.01, taps, np.ones((1, 1, 32)))


class TestNonlinearity:
    def test_nonneg_band_limited_signal_unchanged(self):
        # square of a half-bandlimit signal: band-limited at L and
        # non-negative, so ReLU is the identity up to re-analysis error
        from so3harmonics.specconv import _grid_operators
        rng = np.random.default_rng(4)
        grid = default_nonlin_grid(2)
        _, p = _grid_operators(grid, L)
        half = SO3Coeffs.from_flat(L // 2, rng.normal(size=(2, wigner.m_total(L // 2))))
        a_half, _ = _grid_operators(grid, L // 2)
        samples = half.flatten() @ a_half.T
        squared = samples ** 2
        coeffs = squared @ p.T  # analysis at L is exact for the square
        x = SO3Coeffs.from_flat(L, coeffs)
        out = so3_nonlinearity(x, grid)
        rel = np.max(np.abs(out.flatten() - coeffs)) / np.max(np.abs(coeffs))
        assert rel < 1e-6

    def test_zero_input(self):
        x = SO3Coeffs.from_flat(L, np.zeros((1, wigner.m_total(L))))
        out = so3_nonlinearity(x, default_nonlin_grid(2))
        assert np.max(np.abs(out.flatten())) < 1e-12

    def test_approximate_equivariance(self):
        rng = np.random.default_rng(5)
        grid = default_nonlin_grid(2)
        x = SO3Coeffs.from_flat(L, rng.normal(size=(1, wigner.m_total(L))))
        m = sample_uniform_matrices(55, 1)[0]
        lhs = so3_nonlinearity(left_translate(x, m), grid)
        rhs = left_translate(so3_nonlinearity(x, grid), m)
        num = np.linalg.norm(lhs.flatten() - rhs.flatten())
        den = np.linalg.norm(rhs.flatten())
        assert num / den < 0.02


class TestForward:
    def test_zero_input_zero_output(self, model):
        grid = grids.healpix_s2(2)
        sig = synthesize(SphericalCoeffs(L, np.zeros((2, 25))), grid)
        psi = forward(model, sig)
        assert np.max(np.abs(psi.data)) < 1e-12

    def test_output_length_455_at_L6(self):
        model6 = init_toy_model(1, 6, in_channels=1, mid_channels=2,
                                hidden_channels=2, tap_count=6)
        grid = grids.healpix_s2(2)
        rng = np.random.default_rng(6)
        sig = synthesize(SphericalCoeffs(6, rng.normal(size=(1, 49))), grid)
        psi = forward(model6, sig)
        assert len(psi.data) == 455

    def test_eval_deterministic(self, model):
        grid = grids.healpix_s2(2)
        rng = np.random.default_rng(7)
        sig = synthesize(SphericalCoeffs(L, rng.normal(size=(2, 25))), grid)
        a = forward(model, sig, mode="eval", seed=1)
        b = forward(model, sig, mode="eval", seed=2)
        assert np.array_equal(a.data, b.data)

    def test_finite_output_for_finite_input(self, model):
        grid = grids.healpix_s2(2)
        rng = np.random.default_rng(8)
        sig = synthesize(SphericalCoeffs(L, 100.0 * rng.normal(size=(2, 25))), grid)
        psi = forward(model, sig)
        assert np.all(np.isfinite(psi.data))

    def test_image_path_runs(self, model):
        cfg = MapperConfig(grids.healpix_s2(2, "hemisphere"),
                           dropout_fraction=0.5)
        f = FeatureMap(np.random.default_rng(9).normal(size=(2, 16, 16)))
        psi_eval = forward(model, f, cfg, mode="eval")
        psi_train = forward(model, f, cfg, mode="train", seed=3)
        assert len(psi_eval.data) == wigner.m_total(L)
        assert not np.array_equal(psi_eval.data, psi_train.data)

    def test_end_to_end_z_spin_equivariance(self, model):
        # full-sphere spherical path: spinning the input about z rotates
        # the output harmonic vector blockwise
        grid = grids.healpix_s2(2)
        rng = np.random.default_rng(10)
        base = SphericalCoeffs(L, rng.normal(size=(2, 25)))
        angle = 0.9
        rz = np.array([[np.cos(angle), -np.sin(angle), 0],
                       [np.sin(angle), np.cos(angle), 0], [0, 0, 1]])
        psi0 = forward(model, synthesize(base, grid))
        psi1 = forward(model, synthesize(wigner.rotate_coeffs(base, rz), grid))
        e = matrix_to_euler(RotationMatrix(rz))
        rotated = np.concatenate(
            [(wigner.wigner_D_real(l, e).entries @ psi0.block(l)).ravel()
             for l in range(L + 1)])
        rel = np.linalg.norm(psi1.data - rotated) / np.linalg.norm(rotated)
        assert rel < 0.05


class TestBackward:
    def test_zero_loss_zero_gradients(self, model):
        grid = grids.healpix_s2(2)
        rng = np.random.default_rng(11)
        sig = synthesize(SphericalCoeffs(L, rng.normal(size=(2, 25))), grid)
        target = forward(model, sig)
        value, g = backward(model, sig, None, target, LossConfig(L))
        assert value == pytest.approx(0.0, abs=1e-18)
        assert np.max(np.abs(g.mixer)) < 1e-12
        assert np.max(np.abs(g.so3_weights)) < 1e-12

    def test_gradcheck_50_random_coordinates(self, model):
        grid = grids.healpix_s2(2)
        rng = np.random.default_rng(12)
        sig = synthesize(SphericalCoeffs(L, rng.normal(size=(2, 25))), grid)
        gt = wigner.rotation_to_psi(
            RotationMatrix(sample_uniform_matrices(12, 1)[0]), L)
        cfg = LossConfig(L)
        _, grads = backward(model, sig, None, gt, cfg)

        flats = {"mixer": model.mixer, "s2_2": model.s2.spectra[2],
                 "so3": model.so3.weights}
        grad_map = {"mixer": grads.mixer, "s2_2": grads.s2_spectra[2],
                    "so3": grads.so3_weights}
        h = 1e-5
        checked = 0
        worst = 0.0
        while checked < 50:
            name = ("mixer", "s2_2", "so3")[checked % 3]
            arr = flats[name]
            idx = tuple(rng.integers(0, s) for s in arr.shape)
            orig = arr[idx]
            arr[idx] = orig + h
            up, _ = backward(model, sig, None, gt, cfg)
            arr[idx] = orig - h
            dn, _ = backward(model, sig, None, gt, cfg)
            arr[idx] = orig
            fd = (up - dn) / (2 * h)
            scale = max(abs(fd), abs(grad_map[name][idx]), 1e-6)
            worst = max(worst, abs(fd - grad_map[name][idx]) / scale)
            checked += 1
        assert worst < 1e-4

    def test_descent_reduces_loss(self, model):
        grid = grids.healpix_s2(2)
        rng = np.random.default_rng(13)
        sig = synthesize(SphericalCoeffs(L, rng.normal(size=(2, 25))), grid)
        gt = wigner.rotation_to_psi(
            RotationMatrix(sample_uniform_matrices(13, 1)[0]), L)
        cfg = LossConfig(L)
        m = ToyModel(L, model.mixer.copy(),
                     S2FilterBank(L, tuple(s.copy() for s in model.s2.spectra)),
                     LocalSO3Filter(L, model.so3.support_angle,
                                    model.so3.taps.copy(),
                                    model.so3.weights.copy()),
                     model.nonlin_level)
        losses = []
        for _ in range(200):
            value, g = backward(m, sig, None, gt, cfg)
            losses.append(value)
            m.mixer -= 2e-3 * g.mixer
            for s, ds in zip(m.s2.spectra, g.s2_spectra):
                s -= 2e-3 * ds
            m.so3.weights -= 2e-3 * g.so3_weights
        assert losses[-1] < losses[0]
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


class TestCheckpoint:
    def test_round_trip(self, model, tmp_path):
        path = str(tmp_path / "ckpt.bin")
        save_model(path, model, {"note": 1})
        back, meta = load_model(path)
        assert meta["note"] == 1
        assert np.array_equal(back.mixer, model.mixer)
        assert np.array_equal(back.so3.weights, model.so3.weights)
        for a, b in zip(back.s2.spectra, model.s2.spectra):
            assert np.array_equal(a, b)
