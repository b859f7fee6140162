import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vavopt import ConfigError, InternalConsistencyError, OmegaInputs, solve_omega
from vavopt.optim import _solve_omega_core


def grid_minimal_feasible(inputs: OmegaInputs, resolution: int = 10_001):
    """Brute-force oracle: first grid point in [0, 1] with Q(w) <= 0."""
    a, b, const = inputs.coefficients()
    grid = np.linspace(0.0, 1.0, resolution)
    q = (a * grid + b) * grid + const
    feasible = grid[q <= 0.0]
    return float(feasible[0]) if feasible.size else None


def random_inputs(rng) -> OmegaInputs:
    f_next = float(rng.uniform(1e-6, 1e3))
    return OmegaInputs(
        f_next=f_next,
        r_tilde=float(rng.uniform(0.0, 2.0 * math.sqrt(f_next))),
        dx=float(rng.uniform(-1.0, 1.0)),
        psi=float(rng.uniform(0.05, 0.999)),
        eta=float(rng.uniform(1e-4, 1.0)),
    )


class TestClosedFormRules:
    def test_a_zero_rule_maps_to_omega_zero(self):
        # r_tilde equals sqrt(f_next) exactly
        inputs = OmegaInputs(f_next=4.0, r_tilde=2.0, dx=0.5, psi=0.95, eta=0.1)
        assert solve_omega(inputs) == 0.0

    def test_a_near_zero_threshold(self):
        inputs = OmegaInputs(f_next=4.0, r_tilde=2.0 + 1e-9, dx=0.5, psi=0.95, eta=0.1)
        assert solve_omega(inputs) == 0.0

    def test_zero_displacement_with_small_r_tilde_gives_one(self):
        # dx = 0 and r_tilde < sqrt(F): the root analysis collapses to 1
        inputs = OmegaInputs(f_next=4.0, r_tilde=0.5, dx=0.0, psi=0.95, eta=0.1)
        assert solve_omega(inputs) == pytest.approx(1.0, abs=1e-12)

    def test_r_tilde_above_root_snaps_to_zero(self):
        # relaxing down toward sqrt(F) never violates the constraint
        inputs = OmegaInputs(f_next=1.0, r_tilde=3.0, dx=0.0, psi=0.95, eta=0.1)
        assert solve_omega(inputs) == 0.0

    def test_validation(self):
        with pytest.raises(ConfigError):
            OmegaInputs(f_next=0.0, r_tilde=1.0, dx=0.1, psi=0.95, eta=0.1)
        with pytest.raises(ConfigError):
            OmegaInputs(f_next=1.0, r_tilde=1.0, dx=0.1, psi=0.95, eta=0.0)
        with pytest.raises(ConfigError):
            OmegaInputs(f_next=1.0, r_tilde=1.0, dx=0.1, psi=1.5, eta=0.1)


class TestGridOracle:
    def test_analytic_matches_grid_on_random_instances(self):
        rng = np.random.Generator(np.random.Philox(4242))
        for _ in range(250):
            inputs = random_inputs(rng)
            w = solve_omega(inputs)
            g = grid_minimal_feasible(inputs)
            assert g is not None, "omega = 1 must always be feasible"
            assert abs(w - g) <= 1e-3

    def test_minimality_no_feasible_point_below(self):
        rng = np.random.Generator(np.random.Philox(11))
        for _ in range(250):
            inputs = random_inputs(rng)
            w = solve_omega(inputs)
            if w <= 1e-3:
                continue
            a, b, const = inputs.coefficients()
            probe = np.linspace(0.0, w - 1e-3, 500)
            q = (a * probe + b) * probe + const
            assert np.all(q > 0.0), "found feasible omega more than 1e-3 below the root"


class TestAlgebraicGuarantees:
    @settings(max_examples=500)
    @given(
        f_next=st.floats(1e-6, 1e3),
        ratio=st.floats(0.0, 2.0),
        dx=st.floats(-1.0, 1.0),
        psi=st.floats(0.05, 0.999),
        eta=st.floats(1e-4, 1.0),
    )
    def test_omega_in_unit_interval_and_feasible(self, f_next, ratio, dx, psi, eta):
        inputs = OmegaInputs(
            f_next=f_next, r_tilde=ratio * math.sqrt(f_next), dx=dx, psi=psi, eta=eta
        )
        w = solve_omega(inputs)
        assert 0.0 <= w <= 1.0
        a, b, const = inputs.coefficients()
        scale = max(1.0, f_next, inputs.r_tilde**2)
        q_w = (a * w + b) * w + const
        assert q_w <= 1e-9 * scale
        # Q(1) = -(psi/eta) dx^2 <= 0, hence the discriminant is nonnegative
        assert a + b + const <= 1e-12 * scale
        assert b * b - 4.0 * a * const >= -1e-9 * scale**2

    def test_discriminant_guard_raises_on_inconsistent_inputs(self):
        # a negative slack cannot arise from the dynamics; the guard must fire
        with pytest.raises(InternalConsistencyError):
            _solve_omega_core(1.0, np.array([0.0]), np.array([-10.0]), 1.0)
