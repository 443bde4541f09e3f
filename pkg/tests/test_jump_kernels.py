from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lobsim.errors import ConstructionError, LobsimError, ValidationError
from lobsim.jump_kernels import (
    Measure,
    atom_tv_defect,
    discretize_theta,
    example_binomial_poisson,
    example_location_scale,
    kernel_from_config,
    partition_defect,
    small_atom_mass,
    theta_collisions,
    theta_n,
    verify_eqQ,
)
from lobsim.model import ScalingParams

P100 = ScalingParams.power_law(100, M=1.0)
STATES = [0.0, 0.25, 0.5, 0.75, 1.0]


def uniform(M):
    return lambda x: (x + M) / (2 * M)


def loc_scale(mu=0.3, sigma=1.5, M=1.0, **kw):
    return example_location_scale(uniform(M), mu, sigma, M, **kw)


def state_dependent():
    # Lipschitz, bounded, sigma >= 1
    return loc_scale(mu=lambda s: 0.4 * s - 0.1, sigma=lambda s: 1.0 + 0.5 * s, M=1.0, probe_states=STATES)


# ----------------------------------------------------------------------
# Measure


def test_measure_mass_and_point():
    m = Measure(np.array([1.0, 2.0, 3.0]), np.array([0.5, 0.25, 0.25]))
    assert m.total == 1.0
    assert m.mass_on(1.0, 2.0) == 0.5
    assert m.mass_on(1.0, 3.0) == 0.75
    assert m.point(2.0) == 0.25
    assert m.mass_on(2.0, 2.0) == 0.0


def test_measure_continuous_part():
    m = Measure(cdf=uniform(1.0), support=(-1.0, 1.0))
    assert math.isclose(m.total, 1.0)
    assert math.isclose(m.mass_on(-5.0, 0.0), 0.5)
    assert math.isclose(m.sample(0.25), -0.5, abs_tol=1e-12)


def test_measure_sample_atoms_inverse_cdf():
    m = Measure(np.array([1.0, 2.0]), np.array([1.0, 3.0]))
    assert m.sample(0.0) == 1.0
    assert m.sample(0.2499) == 1.0
    assert m.sample(0.25) == 2.0
    assert m.sample(0.999) == 2.0


def test_measure_rejects_bad_weights():
    with pytest.raises(ValidationError):
        Measure(np.array([1.0]), np.array([-1.0]))
    with pytest.raises(ValidationError):
        Measure(np.array([1.0, 2.0]), np.array([1.0]))
    with pytest.raises(ValidationError):
        Measure().sample(0.5)


# ----------------------------------------------------------------------
# grid transform


@pytest.mark.parametrize("mu,expected", [(0.123, 0.13), (0.12, 0.12), (-0.005, 0.0)])
def test_discretize_theta_ceils_to_grid(mu, expected):
    fam = loc_scale(mu=mu, sigma=1.0)
    assert discretize_theta(fam, 0.0, 0, P100) == pytest.approx(expected, abs=1e-15)


def test_discretize_theta_outside_range():
    with pytest.raises(ValidationError):
        discretize_theta(loc_scale(), 0.0, 101, P100)


@settings(max_examples=50, deadline=None)
@given(j=st.integers(-100, 100), s=st.sampled_from(STATES))
def test_theta_n_rounding_bracket(j, s):
    fam = state_dependent()
    t = fam.theta(s, j * P100.dx)
    tn = theta_n(fam, s, j * P100.dx, P100)
    assert t - 1e-12 <= tn < t + P100.dx


# ----------------------------------------------------------------------
# location-scale family


def test_location_scale_identity_transform_matches_Q():
    fam = loc_scale(mu=0.0, sigma=1.0)
    K = fam.K(0.3)
    for a, b in [(-1.0, -0.2), (-0.5, 0.5), (0.1, 1.0)]:
        assert math.isclose(K.mass_on(a, b), fam.Q.mass_on(a, b), abs_tol=1e-15)
        assert fam.theta(0.3, a) == a


def test_location_scale_shift_pushforward():
    fam = loc_scale(mu=2.0, sigma=1.0)
    assert fam.theta(0.0, -1.0) == 1.0 and fam.theta(0.0, 1.0) == 3.0
    assert math.isclose(fam.K(0.0).mass_on(1.0, 3.0), 1.0)


def test_location_scale_eqQ_exact():
    assert verify_eqQ(state_dependent(), STATES, P100) <= 1e-12
    assert verify_eqQ(loc_scale(), STATES, P100) <= 1e-12


def test_location_scale_scale_below_one_rejected():
    with pytest.raises(ConstructionError):
        loc_scale(sigma=lambda s: 0.9 + s, probe_states=STATES)
    fam = loc_scale(sigma=lambda s: 0.9 + s)
    with pytest.raises(ConstructionError):
        fam.theta(0.0, 0.5)


def test_location_scale_no_collisions_and_no_small_atoms():
    fam = state_dependent()
    for s in STATES:
        assert theta_collisions(fam, s, P100) == 0
        assert small_atom_mass(fam.K_n(s, P100), P100) == 0.0


def test_location_scale_prelimit_mass_is_Q_mass_away_from_zero():
    fam = loc_scale(mu=2.0, sigma=1.0)  # images avoid a neighbourhood of 0
    assert math.isclose(fam.K_n(0.0, P100).total, 1.0)
    assert partition_defect(fam, 0.0, P100) <= 1e-12


def test_location_scale_partition_defect_decreases():
    fam = state_dependent()
    for s in STATES:
        d = [partition_defect(fam, s, ScalingParams.power_law(n, M=1.0)) for n in (50, 100, 200)]
        assert d[1] <= 0.75 * d[0] and d[2] <= 0.75 * d[1], d


def test_corrupted_family_detected():
    fam = loc_scale()
    bad = dataclasses.replace(fam, Q=fam.Q.scaled(1.1))
    cell = fam.Q.mass_on(0.0, P100.dx)
    assert verify_eqQ(bad, [0.0], P100) >= 0.1 * cell * (1 - 1e-9)


def test_non_evaluable_kernel_raises_probe_error():
    fam = loc_scale()
    broken = dataclasses.replace(fam, K=lambda s: 1 / 0)
    with pytest.raises(LobsimError):
        verify_eqQ(broken, [0.0], P100)


# ----------------------------------------------------------------------
# binomial / Poisson family


def test_poisson_driving_atoms():
    fam = example_binomial_poisson(1.0, 1, 3, 3, 10_000)
    e = math.exp(-1.0)
    np.testing.assert_array_equal(fam.Q.atoms, [1.0, 2.0, 3.0])
    np.testing.assert_allclose(fam.Q.weights, [e, e / 2, e / 6], rtol=1e-14)


def test_binomial_limit_atoms_match_Q():
    # K(s, theta(s, {k})) = Q({k}) on the kept range, theta = 0 below it
    m0 = lambda s: 1 + int(s > 0.5)  # noqa: E731
    fam = example_binomial_poisson(1.0, m0, 3, 3, 10_000)
    for s in STATES:
        K = fam.K(s)
        lo = 3 - 3 + m0(s)
        for k in range(1, 4):
            t = fam.theta(s, float(k))
            if k >= lo:
                assert K.point(t) == pytest.approx(fam.Q.point(k), abs=1e-15)
            else:
                assert t == 0.0


def test_binomial_eqQ_defect():
    fam = example_binomial_poisson(1.0, lambda s: 1 + int(s > 0.5), lambda s: 2 + int(s > 0.2), 3, 10_000)
    p = ScalingParams.power_law(10, M=3.0)
    assert verify_eqQ(fam, STATES, p) <= 1e-12


def test_binomial_degenerate_range_is_shifted_identity():
    fam = example_binomial_poisson(1.0, 3, 3, 3, 10_000)
    assert fam.theta(0.0, 3.0) == 3.0
    assert fam.K(0.0).point(3.0) == pytest.approx(fam.Q.point(3.0))


def test_binomial_tv_defect_bound():
    n, lam = 10_000, 1.0
    fam = example_binomial_poisson(lam, 1, 3, 3, n)
    bound = 2 * n * (lam / n) ** 2
    assert bound == pytest.approx(2e-4)
    assert atom_tv_defect(fam, 0.0, ScalingParams.power_law(100, M=3.0)) <= bound


def test_binomial_defect_decreases_in_n():
    d = [atom_tv_defect(example_binomial_poisson(1.0, 1, 3, 3, n), 0.0, P100) for n in (1000, 2000, 4000)]
    assert d[1] <= 0.75 * d[0] and d[2] <= 0.75 * d[1]


def test_binomial_bad_ordering():
    fam = example_binomial_poisson(1.0, 3, 2, 3, 100)
    with pytest.raises(ValidationError):
        fam.K(0.0)
    with pytest.raises(ValidationError):
        example_binomial_poisson(1.0, 1, 2, 0, 100)


# ----------------------------------------------------------------------
# config blocks


def test_kernel_from_config_blocks():
    ls = kernel_from_config({"type": "location_scale", "mu": 0.3, "sigma": 1.5, "M": 1.0})
    assert verify_eqQ(ls, [0.0], P100) <= 1e-12
    tn = kernel_from_config({"type": "location_scale", "F": "truncnorm", "scale": 0.4, "M": 1.0})
    assert math.isclose(tn.Q.total, 1.0)
    bp = kernel_from_config({"type": "binomial_poisson", "lambda": 1, "m0": 1, "M0": 3, "M": 3})
    assert bp.name == "binomial_poisson"
    at = kernel_from_config({"type": "atoms", "atoms": [-1, 1], "weights": [0.5, 0.5], "sizes": [-0.02, 0.02]})
    assert at.K(0.0).total == 1.0
    with pytest.raises(ValidationError):
        kernel_from_config({"type": "nope"})
    with pytest.raises(ValidationError):
        kernel_from_config({"type": "location_scale", "F": "cauchy"})
