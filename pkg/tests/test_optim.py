import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vavopt import (
    ConfigError,
    DivergenceError,
    QuadraticProblem,
    RosenbrockProblem,
    SavState,
    VavState,
    init_state,
    make_sine_regression,
    relax_r,
    sav_step,
    sav_tilde_r,
    scheduler_effective_lr,
    sgd_step,
    vav_position_update,
    vav_step,
    vav_tilde_r,
)
from vavopt.core import RngStream, sample_batch
from vavopt.optim import identity_residual


def solve_coupled_system(x, g, r, fc, eta):
    """Independent oracle: solve the implicit (x', r') pair as one linear system.

    Unknowns [x' (n entries), r']:
        x' + (eta / sqrt(fc)) g r'            = x
        -(g / (2 sqrt(fc))) . x'  +  r'       = r - (g / (2 sqrt(fc))) . x
    """
    n = len(x)
    root = math.sqrt(fc)
    mat = np.zeros((n + 1, n + 1))
    mat[:n, :n] = np.eye(n)
    mat[:n, n] = eta / root * g
    mat[n, :n] = -g / (2.0 * root)
    mat[n, n] = 1.0
    rhs = np.concatenate([x, [r - float(g @ x) / (2.0 * root)]])
    sol = np.linalg.solve(mat, rhs)
    return sol[:n], sol[n]


class TestSgdStep:
    def test_zero_gradient_fixed_point(self):
        np.testing.assert_array_equal(
            sgd_step(np.zeros(2), np.zeros(2), 0.1), np.zeros(2)
        )

    def test_direct_arithmetic(self):
        out = sgd_step(np.array([1.0, 1.0]), np.array([2.0, -4.0]), 0.5)
        np.testing.assert_array_equal(out, [0.0, 3.0])

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            sgd_step(np.zeros(2), np.zeros(3), 0.1)

    def test_nonfinite_result_is_divergence(self):
        with pytest.raises(DivergenceError):
            sgd_step(np.array([1e308]), np.array([-1e308]), 2.0)


class TestSavTildeR:
    def test_zero_gradient_keeps_r(self):
        assert sav_tilde_r(2.5, np.zeros(3), 1.0, 0.0, 0.7) == 2.5

    def test_halving_instance(self):
        # r=1, eta=1, ||g||^2=2, f+c=1  ->  1 / (1 + 1*2/2) = 0.5
        g = np.array([1.0, 1.0])
        assert sav_tilde_r(1.0, g, 1.0, 0.0, 1.0) == 0.5

    def test_matches_linear_system_oracle(self):
        rng = np.random.Generator(np.random.Philox(31))
        for _ in range(50):
            n = int(rng.integers(1, 6))
            x = rng.normal(size=n)
            g = rng.normal(scale=3.0, size=n)
            r = float(rng.uniform(0.1, 5.0))
            fc = float(rng.uniform(0.05, 20.0))
            eta = float(rng.uniform(1e-3, 1.5))
            r_new = sav_tilde_r(r, g, fc, 0.0, eta)
            x_sys, r_sys = solve_coupled_system(x, g, r, fc, eta)
            assert abs(r_new - r_sys) <= 1e-12 * max(1.0, abs(r_sys))
            x_new = x - eta * (r_new / math.sqrt(fc)) * g
            np.testing.assert_allclose(x_new, x_sys, rtol=1e-12, atol=1e-12)

    def test_nonpositive_f_plus_c_instructs_raising_c(self):
        with pytest.raises(ConfigError, match="raise the offset c"):
            sav_tilde_r(1.0, np.ones(2), -1.0, 0.5, 0.1)


class TestVavTildeR:
    def test_zero_gradient_keeps_r(self):
        r = np.array([1.0, 2.0])
        np.testing.assert_array_equal(vav_tilde_r(r, np.zeros(2), 3.0, 0.0, 0.1), r)

    def test_per_coordinate_instance(self):
        # g = (sqrt(2), 0), eta=1, f+c=1: first coordinate halves, second unchanged
        out = vav_tilde_r(np.array([1.0, 1.0]), np.array([np.sqrt(2.0), 0.0]), 1.0, 0.0, 1.0)
        np.testing.assert_allclose(out, [0.5, 1.0], rtol=0, atol=1e-15)

    def test_matches_per_coordinate_system_oracle(self):
        rng = np.random.Generator(np.random.Philox(77))
        for _ in range(30):
            n = int(rng.integers(1, 7))
            g = rng.normal(scale=4.0, size=n)
            r = rng.uniform(0.0, 5.0, size=n)
            fc = float(rng.uniform(0.05, 30.0))
            eta = float(rng.uniform(1e-3, 1.0))
            out = vav_tilde_r(r, g, fc, 0.0, eta)
            for i in range(n):
                _, r_sys = solve_coupled_system(
                    np.zeros(1), g[i : i + 1], float(r[i]), fc, eta
                )
                assert abs(out[i] - r_sys) <= 1e-12 * max(1.0, abs(r_sys))

    @given(
        r=st.floats(0.0, 1e6),
        g=st.floats(-1e6, 1e6),
        f=st.floats(1e-8, 1e8),
        eta=st.floats(1e-8, 1e3),
    )
    def test_shrinks_but_never_flips_sign(self, r, g, f, eta):
        out = vav_tilde_r(np.array([r]), np.array([g]), f, 0.0, eta)
        assert 0.0 <= out[0] <= r


class TestVavPositionUpdate:
    def test_fully_damped_step_keeps_x(self):
        x = np.array([1.0, -2.0])
        out = vav_position_update(x, np.array([3.0, 4.0]), np.zeros(2), 2.0, 0.0, 0.1)
        np.testing.assert_array_equal(out, x)

    def test_r_tilde_at_sqrt_f_reduces_to_sgd(self):
        rng = np.random.Generator(np.random.Philox(5))
        x = rng.normal(size=8)
        g = rng.normal(size=8)
        fc = 2.75
        forced = np.full(8, math.sqrt(fc))
        vav_out = vav_position_update(x, g, forced, fc, 0.0, 0.3)
        sgd_out = sgd_step(x, g, 0.3)
        # bit-comparable within 1 ulp
        ulp = np.finfo(np.float64).eps * np.maximum(1.0, np.abs(sgd_out))
        assert np.all(np.abs(vav_out - sgd_out) <= ulp)

    def test_single_rosenbrock_step_hand_computed(self):
        # independent scripted evaluation in plain floats, no library calls
        eta, c = 0.04, 0.0
        f = 3609.0
        gx, gy = -4806.0, -1200.0
        r0 = math.sqrt(f + c)
        rtx = r0 / (1.0 + eta * gx * gx / (2.0 * (f + c)))
        rty = r0 / (1.0 + eta * gy * gy / (2.0 * (f + c)))
        ex = -2.0 - eta * (rtx / math.sqrt(f + c)) * gx
        ey = -2.0 - eta * (rty / math.sqrt(f + c)) * gy

        state = init_state(RosenbrockProblem(), [-2.0, -2.0], eta=eta, c=c, variant="vav")
        state, rec = vav_step(state, RosenbrockProblem())
        np.testing.assert_allclose(state.x, [ex, ey], rtol=1e-12)
        np.testing.assert_allclose(rec.detail.r_tilde, [rtx, rty], rtol=1e-12)


class TestRelaxR:
    def test_omega_one_keeps_r_tilde(self):
        rt = np.array([0.3, 0.6])
        np.testing.assert_array_equal(relax_r(rt, 4.0, 0.0, np.ones(2)), rt)

    def test_omega_zero_snaps_to_sqrt_loss(self):
        out = relax_r(np.array([0.3, 0.6]), 4.0, 0.0, np.zeros(2))
        np.testing.assert_array_equal(out, [2.0, 2.0])

    def test_midpoint(self):
        out = relax_r(np.array([0.4]), 1.0, 0.0, np.array([0.5]))
        assert out[0] == pytest.approx(0.7, abs=1e-15)

    def test_offset_goes_under_the_root(self):
        out = relax_r(np.array([0.0]), 3.0, 1.0, np.array([0.0]))
        assert out[0] == 2.0

    def test_omega_outside_unit_interval_rejected(self):
        with pytest.raises(ConfigError):
            relax_r(np.array([0.5]), 1.0, 0.0, np.array([1.5]))

    @given(
        rt=st.floats(0.0, 100.0),
        loss=st.floats(0.0, 1e4),
        c=st.floats(0.0, 10.0),
        w=st.floats(0.0, 1.0),
    )
    def test_stays_between_endpoints(self, rt, loss, c, w):
        out = relax_r(np.array([rt]), loss, c, np.array([w]))[0]
        lo = min(rt, math.sqrt(loss + c))
        hi = max(rt, math.sqrt(loss + c))
        assert lo - 1e-12 <= out <= hi + 1e-12


class TestSchedulerEffectiveLr:
    def test_inactive_when_r_is_large(self):
        assert scheduler_effective_lr(10.0, 0.0, 0.3) == 0.3

    def test_fully_annealed_at_r_squared_equals_c(self):
        assert scheduler_effective_lr(0.5, 0.25, 0.3) == 0.0

    def test_square_root_arithmetic(self):
        assert scheduler_effective_lr(0.1, 0.0, 0.3) == pytest.approx(0.1, abs=1e-15)

    @given(r=st.floats(0.0, 1e3), c=st.floats(0.0, 1e3), eta=st.floats(1e-6, 10.0))
    def test_ceiling_property(self, r, c, eta):
        out = scheduler_effective_lr(r, c, eta)
        assert out <= eta
        if r * r - c >= eta * eta:
            assert out == eta


class TestDissipationIdentity:
    @settings(max_examples=300)
    @given(
        r=st.floats(0.0, 10.0),
        g=st.floats(-100.0, 100.0),
        f=st.floats(1e-6, 1e4),
        c=st.floats(0.0, 10.0),
        eta=st.floats(1e-5, 2.0),
    )
    def test_unrelaxed_pair_satisfies_identity(self, r, g, f, c, eta):
        rv = np.array([r])
        gv = np.array([g])
        rt = vav_tilde_r(rv, gv, f, c, eta)
        dx = -eta * (rt / math.sqrt(f + c)) * gv
        res = identity_residual(rv, rt, dx * dx, eta)
        assert abs(res[0]) <= 1e-8 * max(1.0, r * r)


class TestInitState:
    def test_rosenbrock_start(self):
        state = init_state(RosenbrockProblem(), [-2.0, -2.0], eta=0.04, variant="vav")
        np.testing.assert_array_equal(state.r, np.full(2, math.sqrt(3609.0)))

    def test_zero_loss_with_unit_offset(self):
        state = init_state(
            QuadraticProblem.isotropic(3), np.zeros(3) + 0.0, eta=0.1, c=1.0, variant="vav"
        )
        np.testing.assert_array_equal(state.r, np.ones(3))

    def test_zero_loss_without_offset_is_config_error(self):
        with pytest.raises(ConfigError, match="raise the offset c"):
            init_state(QuadraticProblem.isotropic(2), np.zeros(2), eta=0.1, variant="vav")

    def test_stochastic_r0_is_deterministic(self):
        prob = make_sine_regression(64, 0.05, seed=3)
        x0 = prob.model.init_params(1)
        r0 = []
        for _ in range(2):
            batch = sample_batch(RngStream(9), 64, 16)
            state = init_state(prob, x0, eta=0.1, variant="vav", batch=batch)
            r0.append(state.r.copy())
        np.testing.assert_array_equal(r0[0], r0[1])

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            init_state(RosenbrockProblem(), [0.0, 0.0], eta=0.1, variant="adam")

    def test_sav_variant_is_scalar(self):
        state = init_state(RosenbrockProblem(), [-2.0, -2.0], eta=0.1, variant="sav")
        assert isinstance(state, SavState)
        assert state.r == math.sqrt(3609.0)


class TestStateValidation:
    def test_psi_range(self):
        with pytest.raises(ConfigError):
            VavState(x=np.zeros(2), r=np.zeros(2), eta=0.1, psi=1.0)

    def test_r_length(self):
        with pytest.raises(ConfigError):
            VavState(x=np.zeros(2), r=np.zeros(3), eta=0.1)

    def test_negative_c(self):
        with pytest.raises(ConfigError):
            SavState(x=np.zeros(1), r=1.0, eta=0.1, c=-1.0)


class TestVavStep:
    def test_fixed_point_at_minimum(self):
        prob = QuadraticProblem.isotropic(2)
        state = init_state(prob, np.zeros(2), eta=0.5, c=1.0, variant="vav")
        for _ in range(5):
            state, rec = vav_step(state, prob)
        np.testing.assert_array_equal(state.x, np.zeros(2))
        np.testing.assert_array_equal(state.r, np.ones(2))  # sqrt(0 + c)

    def test_identity_and_constraints_on_rosenbrock(self):
        prob = RosenbrockProblem()
        state = init_state(prob, [-2.0, -2.0], eta=0.005, variant="vav")
        for _ in range(300):
            r_prev = state.r.copy()
            state, rec = vav_step(state, prob)
            det = rec.detail
            assert rec.dissipation_residual <= 1e-8
            # relaxation feasibility: (r')^2 - r~^2 <= (psi/eta) dx^2 + tol
            gap = det.r_new**2 - det.r_tilde**2 - (det.psi / det.eta_eff) * det.dx**2
            assert np.max(gap) <= 1e-9
            # combined monotonicity on r^2
            mono = (
                det.r_new**2
                - r_prev**2
                + (det.r_tilde - r_prev) ** 2
                + ((1.0 - det.psi) / det.eta_eff) * det.dx**2
            )
            assert np.max(mono) <= 1e-8

    def test_descent_direction_preserved(self):
        prob = RosenbrockProblem()
        state = init_state(prob, [-2.0, -2.0], eta=0.005, variant="vav")
        for _ in range(100):
            state, rec = vav_step(state, prob)
            det = rec.detail
            moved = (det.r_prev > 0) & (det.grad != 0.0) & (det.dx != 0.0)
            assert np.all(np.sign(det.dx[moved]) == -np.sign(det.grad[moved]))

    def test_divergence_carries_step_index(self):
        class Hostile:
            dataset_size = 0

            def __init__(self):
                self.calls = 0

            def value(self, x, batch=None):
                self.calls += 1
                return float("nan") if self.calls > 4 else 1.0

            def gradient(self, x, batch=None):
                return np.ones_like(x)

        prob = Hostile()
        state = init_state(RosenbrockProblem(), [0.5, 0.5], eta=0.1, variant="vav")
        with pytest.raises(DivergenceError) as exc:
            for _ in range(10):
                state, _ = vav_step(state, prob)
        assert exc.value.step is not None

    def test_scheduler_keeps_identity_exact(self):
        prob = QuadraticProblem.diagonal([1.0, 8.0])
        state = init_state(
            prob, [2.0, 2.0], eta=0.2, c=0.01, scheduler_enabled=True, variant="vav"
        )
        lr_seen = []
        for _ in range(400):
            state, rec = vav_step(state, prob)
            assert rec.dissipation_residual <= 1e-8
            assert rec.lr_max <= 0.2 + 1e-15
            lr_seen.append(rec.lr_min)
        assert min(lr_seen) < 0.2  # annealing actually engaged


class TestSavStep:
    def test_zero_gradient_fixed_point(self):
        prob = QuadraticProblem.isotropic(2)
        state = init_state(prob, np.zeros(2), eta=0.3, c=1.0, variant="sav")
        state, rec = sav_step(state, prob)
        np.testing.assert_array_equal(state.x, np.zeros(2))
        assert state.r == 1.0

    def test_r_nonincreasing_and_identity_on_bowl(self):
        prob = QuadraticProblem.diagonal([1.0, 2.0, 4.0, 8.0])
        state = init_state(prob, [2.0, 2.0, 2.0, 2.0], eta=0.1, variant="sav")
        previous = state.r
        for _ in range(100):
            state, rec = sav_step(state, prob)
            assert rec.dissipation_residual <= 1e-8
            assert state.r <= previous + 1e-15
            previous = state.r

    def test_record_marks_unrelaxed_scheme_as_omega_one(self):
        prob = QuadraticProblem.isotropic(2)
        state = init_state(prob, [1.0, 1.0], eta=0.1, variant="sav")
        _, rec = sav_step(state, prob)
        assert rec.omega_min == rec.omega_max == 1.0
