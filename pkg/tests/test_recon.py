import numpy as np
import pytest

from sdrmri.errors import NumericFailure
from sdrmri.mri import (_dft2_stack, make_coil_sensitivities, make_phantom,
                        make_sampling_mask, random_phantom_spec, simulate_acquisition)
from sdrmri.recon import (BallConstraint, DcConfig, cg_least_squares,
                          conjugate_gradient, consistency_residual, data_consistency,
                          normal_operator, project_ball, zero_filled_recon)


def _instance(size=64, accel=8, seed=0, n_coils=4):
    mask = make_sampling_mask(size, accel, 0.08, "equispaced", seed=seed)
    sens = make_coil_sensitivities(size, size, n_coils, seed=100 + seed)
    phantom, _ = make_phantom(random_phantom_spec(size, size, seed=seed,
                                                  lesion_contrast=0.3))
    return phantom, simulate_acquisition(phantom, sens, mask, 0.0, seed=seed)


class TestZeroFilled:
    def test_exact_when_fully_sampled_single_coil(self, rng):
        size = 32
        x = rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))
        acq = simulate_acquisition(x, make_coil_sensitivities(size, size, 1),
                                   make_sampling_mask(size, 1, 0.1))
        zf = zero_filled_recon(acq)
        assert np.linalg.norm(zf - x) / np.linalg.norm(x) < 1e-10

    def test_aliasing_when_undersampled(self):
        phantom, acq = _instance(accel=4)
        assert np.linalg.norm(zero_filled_recon(acq) - phantom) > 0

    def test_linearity(self):
        _, acq = _instance()
        zf = zero_filled_recon(acq)
        from dataclasses import replace

        acq2 = replace(acq, y=2.5 * acq.y)
        assert np.allclose(zero_filled_recon(acq2), 2.5 * zf, atol=1e-12)


class TestConjugateGradient:
    def test_exact_start_returns_unchanged(self):
        phantom, acq = _instance(size=32, accel=1, n_coils=1)
        out = cg_least_squares(acq, phantom, DcConfig(cg_iters=10, cg_tol=1e-9))
        assert np.array_equal(out, phantom.astype(complex))

    def test_identity_system_converges_in_two_iters(self, rng):
        # fully sampled single coil: A^H A = I
        size = 32
        x = rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))
        acq = simulate_acquisition(x, make_coil_sensitivities(size, size, 1),
                                   make_sampling_mask(size, 1, 0.1))
        iters = []
        out = cg_least_squares(acq, np.zeros_like(x), DcConfig(cg_iters=10, cg_tol=1e-10),
                               callback=lambda k, _: iters.append(k))
        assert len(iters) <= 2
        assert np.linalg.norm(out - zero_filled_recon(acq)) < 1e-8

    def test_measurement_misfit_strictly_decreases(self):
        from sdrmri.mri import forward_op

        for seed in range(10):
            phantom, acq = _instance(size=64, accel=8, seed=seed)
            misfits = []

            def track(k, xk):
                misfits.append(np.linalg.norm(forward_op(xk, acq) - acq.y))

            cg_least_squares(acq, zero_filled_recon(acq),
                             DcConfig(cg_iters=20, cg_tol=1e-15), callback=track)
            diffs = np.diff(misfits)
            assert np.all(diffs < 0), f"seed {seed}: misfit not strictly decreasing"

    def test_spd_system_terminates_exactly(self, rng):
        # n-dimensional SPD system: exact solution within n iterations
        for n in (3, 5, 8):
            m = rng.standard_normal((n, n))
            h = m @ m.T + n * np.eye(n)
            x_true = rng.standard_normal(n)
            b = h @ x_true
            x = conjugate_gradient(lambda v: h @ v, b.astype(complex),
                                   np.zeros(n, dtype=complex), n, 0.0)
            assert np.linalg.norm(x - x_true) < 1e-8

    def test_nan_raises_numeric_failure(self):
        b = np.ones(4, dtype=complex)

        def bad(v):
            return v * np.nan

        with pytest.raises(NumericFailure) as err:
            conjugate_gradient(bad, b, np.zeros(4, dtype=complex), 5, 1e-12)
        assert err.value.step == 0


class TestDataConsistency:
    def test_single_coil_full_mask_replacement_total(self, rng):
        from sdrmri.mri import dft2

        size = 32
        truth = rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))
        acq = simulate_acquisition(truth, make_coil_sensitivities(size, size, 1),
                                   make_sampling_mask(size, 1, 0.1))
        x = rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))
        out = data_consistency(x, acq, DcConfig(cg_iters=0))
        assert np.allclose(dft2(out, "forward"), acq.y[0], atol=1e-10)
        assert consistency_residual(out, acq) < 1e-12

    def test_consistent_point_is_fixed_single_coil(self):
        # single-coil DC is an exact projection: re-applying it to its own
        # output must not move the image
        _, acq = _instance(size=64, accel=4, n_coils=1)
        x = data_consistency(zero_filled_recon(acq), acq)
        again = data_consistency(x, acq)
        assert np.linalg.norm(again - x) / np.linalg.norm(x) <= 1e-6

    def test_multicoil_fixed_point_residual_stable(self):
        # multicoil DC drifts along weakly observed directions when re-applied;
        # the contract is on the residual, which must stay within bound
        _, acq = _instance(size=64, accel=8)
        x = data_consistency(zero_filled_recon(acq), acq)
        again = data_consistency(x, acq)
        assert consistency_residual(again, acq) <= consistency_residual(x, acq)
        assert consistency_residual(again, acq) <= 1e-3

    def test_residual_contract_multicoil(self):
        # arbitrary inputs at 8x: relative residual within 1e-3 at default config
        worst = 0.0
        for seed in range(20):
            _, acq = _instance(size=64, accel=8, seed=seed)
            out = data_consistency(zero_filled_recon(acq), acq)
            worst = max(worst, consistency_residual(out, acq))
        assert worst <= 1e-3, f"worst residual {worst:.2e}"

    def test_matches_per_coil_replacement_reference(self):
        # the Landweber-step form must equal the per-coil replacement formulation
        _, acq = _instance(size=48, accel=4, seed=2)
        cfg = DcConfig(cg_iters=7, cg_tol=1e-9)
        x0 = zero_filled_recon(acq)
        fast = data_consistency(x0, acq, cfg)
        x_fit = cg_least_squares(acq, x0, cfg)
        k = _dft2_stack(acq.sens.maps * x_fit, "forward")
        k[:, :, acq.mask.columns] = acq.y[:, :, acq.mask.columns]
        ref = np.sum(np.conj(acq.sens.maps) * _dft2_stack(k, "inverse"), axis=0)
        assert np.linalg.norm(fast - ref) / np.linalg.norm(ref) < 1e-12

    def test_replacement_disabled_returns_cg_solution(self):
        _, acq = _instance(size=48, accel=4)
        cfg = DcConfig(cg_iters=5, cg_tol=1e-9, replacement=False)
        x0 = zero_filled_recon(acq)
        assert np.array_equal(data_consistency(x0, acq, cfg),
                              cg_least_squares(acq, x0, cfg))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DcConfig(cg_iters=-1)
        with pytest.raises(ValueError):
            DcConfig(cg_tol=0.0)


class TestConsistencyResidual:
    def test_truth_is_zero(self, small_world):
        assert consistency_residual(small_world["phantom"], small_world["acq"]) < 1e-12

    def test_zero_image_gives_one(self, small_world):
        size = small_world["size"]
        res = consistency_residual(np.zeros((size, size), dtype=complex),
                                   small_world["acq"])
        assert res == pytest.approx(1.0, abs=1e-12)

    def test_zero_measurement_rejected(self, small_world):
        from dataclasses import replace

        acq = replace(small_world["acq"], y=np.zeros_like(small_world["acq"].y))
        with pytest.raises(ValueError):
            consistency_residual(small_world["phantom"], acq)

    def test_zero_filled_reported(self, small_world):
        res = consistency_residual(zero_filled_recon(small_world["acq"]),
                                   small_world["acq"])
        print(f"\nzero-filled residual at 4x: {res:.4f}")
        assert res > 0


class TestProjectBall:
    def test_inside_returns_same_object(self, rng):
        c = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        ball = BallConstraint(c, 5.0)
        x = c + 0.1
        assert project_ball(x, ball) is x

    def test_radial_scaling(self, rng):
        c = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        d = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        d *= 6.0 / np.linalg.norm(d)
        out = project_ball(c + d, BallConstraint(c, 3.0))
        assert np.linalg.norm(out - c) == pytest.approx(3.0, abs=1e-9)
        # direction preserved: projected offset is exactly half the original
        assert np.allclose(out - c, d / 2, atol=1e-12)

    def test_idempotent(self, rng):
        c = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        ball = BallConstraint(c, 2.0)
        for _ in range(20):
            x = c + 3 * (rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8)))
            once = project_ball(x, ball)
            twice = project_ball(once, ball)
            assert np.linalg.norm(twice - once) < 1e-12

    def test_non_expansive(self, rng):
        c = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        ball = BallConstraint(c, 1.5)
        for _ in range(50):
            x = c + 4 * (rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8)))
            z = c + 4 * (rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8)))
            lhs = np.linalg.norm(project_ball(x, ball) - project_ball(z, ball))
            assert lhs <= np.linalg.norm(x - z) + 1e-9

    def test_positive_radius_required(self, rng):
        with pytest.raises(ValueError):
            BallConstraint(np.zeros((4, 4), dtype=complex), 0.0)


def test_normal_operator_matches_composition(small_world, rng):
    from sdrmri.mri import adjoint_op, forward_op

    acq = small_world["acq"]
    size = small_world["size"]
    v = rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))
    fast = normal_operator(acq)(v)
    ref = adjoint_op(forward_op(v, acq), acq)
    assert np.linalg.norm(fast - ref) / np.linalg.norm(ref) < 1e-13
