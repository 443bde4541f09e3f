from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lobsim.errors import ModelFaultError, ValidationError
from lobsim.gridfn import GridFunction
from lobsim.harness import (
    QUANTITIES,
    LimitSampler,
    PathSample,
    as_sampler,
    convergence_report,
    decreasing_to_floor,
    default_threads,
    failed,
    ks_distance,
    mc_floor,
    path_rng,
    run_ensemble,
    validate_assumptions,
    w1_distance,
)
from lobsim.jump_kernels import example_location_scale
from lobsim.model import Event, LOBState, ModelSpec, ScalingParams
from lobsim.sim_study import SimStudyLimit, SimStudyModel, SimStudyParams

# ----------------------------------------------------------------------
# distances


def test_distance_examples():
    assert ks_distance([0.0], [1.0]) == 1.0
    assert w1_distance([0.0], [1.0]) == 1.0
    assert w1_distance([0.0, 1.0], [0.0, 2.0]) == 0.5
    assert ks_distance([0.0, 1.0], [0.0, 2.0]) == 0.5
    xs = [3.0, 1.0, 2.0]
    assert ks_distance(xs, xs) == 0.0 and w1_distance(xs, xs) == 0.0


def test_distances_reject_empty():
    with pytest.raises(ValidationError):
        ks_distance([], [1.0])
    with pytest.raises(ValidationError):
        w1_distance([1.0], [np.nan])


def test_w1_matches_sorted_coupling_for_equal_sizes(rng):
    x, y = rng.normal(size=200), rng.exponential(size=200)
    assert w1_distance(x, y) == pytest.approx(np.mean(np.abs(np.sort(x) - np.sort(y))), rel=1e-12)


samples = st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=30)


@settings(max_examples=100, deadline=None)
@given(samples, samples, samples)
def test_distances_are_metrics(x, y, z):
    for d in (ks_distance, w1_distance):
        assert d(x, y) == pytest.approx(d(y, x), abs=1e-12)
        assert d(x, z) <= d(x, y) + d(y, z) + 1e-9
        assert d(x, y) >= 0
    assert ks_distance(x, y) <= 1.0


def test_mc_floor_scales_like_inverse_root(rng):
    small = mc_floor(rng.normal(size=100), n_boot=100)
    large = mc_floor(rng.normal(size=1600), n_boot=100)
    assert 2.5 <= small / large <= 6.0
    with pytest.raises(ValidationError):
        mc_floor([1.0, 2.0])


@pytest.mark.parametrize(
    "values,floor,ok",
    [
        ([0.3, 0.2, 0.1], 0.05, True),
        ([0.3, 0.1, 0.12], 0.07, True),
        ([0.3, 0.1, 0.2], 0.05, False),
        ([0.1, 0.2, 0.3], 0.5, False),
    ],
)
def test_decreasing_to_floor(values, floor, ok):
    assert decreasing_to_floor(values, floor) is ok


# ----------------------------------------------------------------------
# seeds and ensembles


def test_path_rng_independent_of_order():
    a = path_rng(7, 3).random(4)
    path_rng(7, 0).random(10)
    np.testing.assert_array_equal(a, path_rng(7, 3).random(4))
    assert not np.array_equal(a, path_rng(7, 4).random(4))
    assert not np.array_equal(a, path_rng(8, 3).random(4))


def test_default_threads(monkeypatch):
    monkeypatch.delenv("LOBSIM_THREADS", raising=False)
    assert default_threads() == 1
    monkeypatch.setenv("LOBSIM_THREADS", "3")
    assert default_threads() == 3
    monkeypatch.setenv("LOBSIM_THREADS", "x")
    with pytest.raises(ValidationError):
        default_threads()


@pytest.fixture(scope="module")
def micro():
    return SimStudyModel.from_n(16, T=1.0)


def test_single_path_reproduces_direct_simulation(micro):
    ens = run_ensemble(micro, 1, 5, [0.5, 1.0])
    tr = micro.simulate_fast(seed=path_rng(5, 0), probe_times=[0.5, 1.0])
    for t in (0.5, 1.0):
        s = tr.flags["probes"][t][1]
        assert ens[t, "bid"][0] == s.bid and ens[t, "ask"][0] == s.ask
        assert ens[t, "l2_vb"][0] == s.vb.l2_norm()
    assert set(ens.samples[1.0]) == set(QUANTITIES)


def test_path_ids_permutation_and_threads(micro):
    a = run_ensemble(micro, 6, 1, [1.0])
    b = run_ensemble(micro, 6, 1, [1.0], path_ids=[5, 3, 1, 0, 2, 4])
    c = run_ensemble(micro, 6, 1, [1.0], threads=3)
    order = np.argsort(b.paths)
    np.testing.assert_array_equal(a[1.0, "bid"], b[1.0, "bid"][order])
    np.testing.assert_array_equal(a[1.0, "bid"], c[1.0, "bid"])


def test_mean_spread_exceeds_tick(micro):
    ens = run_ensemble(micro, 30, 2, [micro.params.T])
    assert np.mean(ens[micro.params.T, "spread"]) > micro.params.dx
    assert np.all(ens[micro.params.T, "spread"] >= micro.params.dx)


@dataclass
class Flaky:
    bad: set

    def sample(self, rng, probes):
        i = int(rng.integers(1 << 30))
        if i in self.bad:
            raise ModelFaultError("boom")
        s = LOBState(1.0, GridFunction(0.1, 0, np.ones(2)), 2.0, GridFunction(0.1, 0, np.ones(2)))
        return PathSample({float(t): s for t in probes})


def test_failures_collected_then_abort():
    first = {int(path_rng(0, i).integers(1 << 30)) for i in range(1)}
    ens = run_ensemble(Flaky(first), 200, 0, [1.0])
    assert [i for i, _ in ens.failures] == [0]
    assert ens.paths.size == 199
    many = {int(path_rng(0, i).integers(1 << 30)) for i in range(5)}
    with pytest.raises(ModelFaultError):
        run_ensemble(Flaky(many), 200, 0, [1.0])


def test_as_sampler_dispatch(micro):
    lim = SimStudyLimit(SimStudyParams(dp=1.0), T=1.0)
    assert isinstance(as_sampler(lim), LimitSampler)
    with pytest.raises(ValidationError):
        as_sampler(lim.coefficients())
    with pytest.raises(ValidationError):
        as_sampler(3)
    with pytest.raises(ValidationError):
        run_ensemble(micro, 0, 0, [1.0])


# ----------------------------------------------------------------------
# convergence report


def test_self_distance_report_at_floor():
    lim = SimStudyLimit(SimStudyParams(dp=1.0), h=0.02, T=1.0)
    rep = convergence_report(lambda n: lim, lim, [1, 2], [1.0], 200, 3, n_boot=50)
    floor = rep.value("mc_floor_B", None, 1.0)
    assert 0.02 < floor < 0.15
    for n in (1, 2):
        assert rep.value("ks_B", n, 1.0) <= 4 * floor
        assert rep.value("failed_paths", n) == 0.0
    again = convergence_report(lambda n: lim, lim, [1, 2], [1.0], 200, 3, n_boot=50)
    assert again.to_csv() == rep.to_csv()
    assert json.loads(json.dumps(rep.to_json()))[0]["metric"] == "mc_floor_B"
    assert rep.to_csv().splitlines()[0] == "metric,n,t,value"
    assert set(rep.series("ks_A", 1.0)) == {1, 2}


def test_report_diagnostic_columns():
    lim = SimStudyLimit(SimStudyParams(dp=1.0), h=0.02, T=0.5)
    rep = convergence_report(lambda n: SimStudyModel.from_n(n, T=0.5), lim, [16], [0.5], 8, 0, diagnostics=True, n_boot=10)
    for m in ("E_sup_Rphi_sq", "E_sup_Rb_sq", "E_sup_Ra_sq", "mean_qv_b", "mean_cross_qv"):
        assert math.isfinite(rep.value(m, 16))


# ----------------------------------------------------------------------
# assumption validation


@dataclass
class Frozen(ModelSpec):
    params: ScalingParams
    r: float = 0.0

    def sample_event(self, state, aux, rng):
        return Event("B", omega=1.0, pi=0.0)

    def placement_mean(self, state, aux, side):
        return GridFunction(self.params.dx, 0, np.ones(1))

    def small_coefficients(self, state, aux):
        return 0.0, 0.0, self.r, 1.0


def test_validate_reports_volatility_floor_violation():
    p = ScalingParams.power_law(100)
    g = GridFunction(p.dx, 0, np.ones(4))
    rows = validate_assumptions(Frozen(p), p, [LOBState(1.0, g, 1.1, g)])
    bad = {r.id for r in failed(rows)}
    assert bad == {"price_changes.volatility_floor"}


def test_validate_sim_study_scaling_rows_and_kernel_defect():
    m = SimStudyModel.from_n(100)
    p = m.params
    fam = example_location_scale(lambda x: (x + 1) / 2, 0.3, 1.5, 1.0)
    states = [m.initial_state()] + [s for _, s in m.simulate_fast(seed=0, probe_times=[0.5, 1.0]).flags["probes"].values()]
    rows = {r.id: r for r in validate_assumptions(m, p, states, kernels=[fam], kernel_states=[0.0, 1.0])}
    assert rows["scaling.dt_over_dx"].value == pytest.approx(0.001, rel=1e-12)
    assert rows["scaling.dt_over_dv"].value == pytest.approx(1.0, rel=1e-12)
    assert rows["large_jumps.reparametrisation[location_scale]"].value <= 1e-12
    assert rows["large_jumps.reparametrisation[location_scale]"].ok
    assert rows["nonnegativity"].value == 0.0
    assert rows["price_changes.volatility_floor"].ok
    assert not failed(list(rows.values()))
