"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest
from scipy import stats

from lobsim.diagnostics import bns_statistic, build_integrators, remainder_norms
from lobsim.gridfn import GridFunction, add, l2_distance
from lobsim.harness import convergence_report, decreasing_to_floor, path_rng
from lobsim.jump_kernels import (
    Measure,
    atom_tv_defect,
    cell_defects,
    example_binomial_poisson,
    example_location_scale,
    verify_eqQ,
)
from lobsim.limit_sim import Drivers, constant_coefficients, simulate_eta, time_change
from lobsim.micro_sim import apply_event
from lobsim.model import Event, LOBState, ScalingParams
from lobsim.sim_study import SimStudyLimit, SimStudyModel, SimStudyParams

slow = pytest.mark.slow


def test_c01_shadow_book_oracle(criterion):
    m = SimStudyModel.from_n(100)
    p = m.params
    s0 = m.initial_state()
    omega = 2.5
    s1 = apply_event(s0, Event("B", omega=omega, pi=-p.dx), p)
    s2 = apply_event(s1, Event("A", xi=2), p)
    ok = s2.bid == s1.bid + 2 * p.dx == s0.bid + 2 * p.dx
    bump = p.dv / p.dx * omega
    checked = 0
    for j in range(s0.vb.lo - 2, s0.vb.hi + 2):
        x = (j + 0.5) * p.dx
        ok &= s2.vb(x) == s1.vb(x - 2 * p.dx)
        if p.dx <= x < 2 * p.dx:
            ok &= s2.vb(x) == s0.vb(x - 2 * p.dx) + bump
        else:
            ok &= s2.vb(x) == s0.vb(x - 2 * p.dx)
        checked += 1
    ok &= s2.va == s0.va
    criterion(bool(ok), f"bit-exact on {checked} cells, bump = {bump:.6g}")


@slow
def test_c02_nonnegativity(criterion):
    m = SimStudyModel.from_n(64)
    n_paths, bad = 500, []
    for i in range(n_paths):
        f = m.simulate_fast(seed=path_rng(2, i), keep_events=False).flags
        if f["min_spread_ticks"] < 1 or f["min_bid_ticks"] < 1 or f["min_touched_density"] < 0 or f["final_min_density"] < 0:
            bad.append(i)
    criterion(not bad, f"{len(bad)} violating paths out of {n_paths} at n = 64")


@slow
def test_c03_integrator_quadratic_variation(criterion):
    m = SimStudyModel.from_n(100)
    T = m.params.T
    qv, cross = [], []
    for i in range(200):
        ig = build_integrators(m.simulate_fast(seed=path_rng(3, i), keep_events=False), m)
        qv.append(ig.qv_b[-1])
        cross.append(ig.cross[-1])
    mq, mc = float(np.mean(qv)), float(np.mean(cross))
    ok = abs(mq - T) <= 0.05 * T and abs(mc) <= 0.05 * T
    criterion(ok, f"mean qv_b = {mq:.4f} (T = {T}), mean cross = {mc:.2e} over 200 paths")


@slow
def test_c04_remainder_decay(criterion):
    ns, n_paths = (32, 64, 128), 100
    rphi, rb = [], []
    for n in ns:
        m = SimStudyModel.from_n(n, interarrival="exponential")
        reps = [
            remainder_norms(m.simulate_fast(seed=path_rng(4, i), track_remainders=True, keep_events=False), m)
            for i in range(n_paths)
        ]
        rphi.append(float(np.mean([r.sup_Rphi**2 for r in reps])))
        rb.append(float(np.mean([r.sup_Rb_L2**2 for r in reps])))

    def decays(v):
        return v[0] > v[1] > v[2] and v[2] <= 0.5 * v[0]

    detail = f"E sup|R_phi|^2 = {[f'{v:.3g}' for v in rphi]}, E sup||R_b||^2 = {[f'{v:.3g}' for v in rb]} at n = {ns}"
    criterion(decays(rphi) and decays(rb), detail)


def test_c05_reparametrisation_identity(criterion):
    sp = SimStudyModel.from_n(100)
    states = [sp.initial_state()] + [s for _, s in sp.simulate_fast(seed=5, probe_times=[0.5, 1, 2]).flags["probes"].values()]
    p = ScalingParams.power_law(100, M=1.0)
    fam41 = example_location_scale(
        lambda x: (x + 1) / 2,
        lambda s: 0.2 * math.tanh(s.ask - s.bid),
        lambda s: 1.0 + 0.1 * math.tanh(s.bid),
        1.0,
        probe_states=states,
    )
    d41 = verify_eqQ(fam41, states, p)
    fam42 = example_binomial_poisson(1.0, lambda s: 1 + int(s.ask - s.bid > 0.1), 3, 3, 10_000)
    p3 = ScalingParams.power_law(100, M=3.0)
    # the cell holding atom k; the last cell is closed at M
    atom_cells = [min(round(k / p3.dx) + round(3 / p3.dx), round(6 / p3.dx) - 1) for k in (1, 2, 3)]
    d42 = max(float(np.max(np.abs(cell_defects(fam42, s, p3)[atom_cells]))) for s in states)
    n, lam = 10_000, 1.0
    tv = max(atom_tv_defect(fam42, s, p3) for s in states)
    bound = 2 * n * (lam / n) ** 2
    ok = d41 <= 1e-12 and d42 <= 1e-12 and tv <= bound
    criterion(ok, f"location-scale defect {d41:.2e}, Poisson atoms defect {d42:.2e}, binomial TV {tv:.3e} <= {bound:.1e}")


def test_c06_fluid_solver_consistency(criterion):
    dz, h, T = 1 / 64, 0.05, 1.0
    f0 = GridFunction.from_function(lambda x: np.maximum(0.0, 1 - x * x), dz, -2.0, 2.0)
    src = GridFunction.from_function(lambda x: np.exp(-x * x), dz, -3.0, 3.0)
    c = constant_coefficients(p_b=-dz / h, f_b=src, Q_b=Measure(np.array([1.0]), np.array([4.0])), theta_b=lambda y: 3 * dz)
    steps = round(T / h)
    path = simulate_eta(c, h, T, LOBState(1.0, f0, 1.5, f0), seed=6, frame_steps=range(steps + 1), record_sources=True)
    worst = 0.0
    for m in range(steps + 1):
        direct = f0.translate(path.B[m] - path.B[0])
        for j in range(m):
            direct = add(direct, path.sources[j][0].translate(path.B[m] - path.B[j]), h)
        worst = max(worst, l2_distance(direct, path.vb(m)))

    sp = SimStudyParams(dp=1.0)
    H = 0.04
    runs = {}
    for hh in (H, H / 2, H / 4):
        lim = SimStudyLimit(sp, h=hh, T=1.0)
        k = lim.steps
        zero = Drivers(np.zeros((k, 2)), np.zeros((k, 2), np.int64), np.zeros(0), np.zeros(k, np.int64))
        runs[hh] = lim.simulate(drivers=zero)

    def err(hh):
        s = round(hh / (H / 4))
        ref = runs[H / 4]
        return max(np.max(np.abs(runs[hh].B - ref.B[::s])), np.max(np.abs(runs[hh].A - ref.A[::s])))

    ratio = err(H) / err(H / 2)
    criterion(worst <= 1e-10 and ratio >= 1.7, f"incremental vs direct L2 {worst:.2e}; step-halving error ratio {ratio:.3f}")


@slow
def test_c07_time_change(criterion):
    worst, identity_ok = 0.0, True
    lim = SimStudyLimit(SimStudyParams(dp=1.0), h=0.01, T=2.0)
    for i in range(100):
        path = lim.simulate(path_rng(7, i))
        tc = time_change(path)
        worst = max(worst, tc.roundtrip_error() / lim.h)
        Bt, At = tc.prices(path.times)
        identity_ok &= bool(np.array_equal(Bt, path.B) and np.array_equal(At, path.A))
        identity_ok &= tc.S(path.times[-1]).bid == path.B[-1]
    f0 = GridFunction(1 / 64, -64, np.ones(128))
    base = constant_coefficients(r_b=0.4, r_a=0.4)
    c = dataclasses.replace(base, phi=lambda s, y: 0.3 + 0.6 / (1 + (s.ask - s.bid) ** 2))
    for i in range(100):
        h = 0.02
        path = simulate_eta(c, h, 2.0, LOBState(1.0, f0, 1.5, f0), seed=path_rng(70, i))
        worst = max(worst, time_change(path).roundtrip_error() / h)
    criterion(worst <= 1.0 and identity_ok, f"max roundtrip error / h = {worst:.3g} over 200 paths; identity clock exact: {identity_ok}")


@slow
def test_c08_bns_statistic(criterion):
    rng = np.random.default_rng(8)
    n_series, n_obs = 2000, 2000
    delta = 1.0 / n_obs
    z0, z1 = np.empty(n_series), np.empty(n_series)
    for i in range(n_series):
        x = np.concatenate([[0.0], np.cumsum(rng.normal(0.0, math.sqrt(delta), n_obs))])
        z0[i] = bns_statistic(x, delta).z
        j = rng.integers(1, n_obs)
        x[j:] += 50 * math.sqrt(delta)
        z1[i] = bns_statistic(x, delta).z
    crit = stats.norm.ppf(0.95)
    mean, rate, power = float(z0.mean()), float(np.mean(z0 > crit)), float(np.mean(z1 > 3))
    ok = -0.1 <= mean <= 0.1 and 0.02 <= rate <= 0.10 and power >= 0.95
    criterion(ok, f"null mean Z = {mean:.4f}, 5% rejection rate = {rate:.4f}, P(Z > 3 | jump) = {power:.4f}")


@slow
def test_c09_weak_convergence(criterion):
    ns = (16, 32, 64)
    lim = SimStudyLimit(SimStudyParams(dp=1.0), h=0.01, T=1.0)
    rep = convergence_report(lambda n: SimStudyModel.from_n(n, T=1.0), lim, ns, [1.0], 500, 9)
    ks = [rep.value("ks_B", n, 1.0) for n in ns]
    floor = rep.value("mc_floor_B", None, 1.0)
    ok = decreasing_to_floor(ks, floor)
    criterion(ok, f"KS(B(1)) = {[round(v, 4) for v in ks]} at n = {ns}, MC floor = {floor:.4f}")


@slow
def test_c10_jump_count_law(criterion):
    lim = SimStudyLimit(SimStudyParams(dp=1.0), h=0.01, T=2.0)
    assert lim.coefficients().Q_b.total == 1.0
    counts = np.array([lim.simulate(path_rng(10, i)).jump_counts()[0] for i in range(2000)])
    K = 6
    observed = np.array([np.sum(counts == k) for k in range(K)] + [np.sum(counts >= K)])
    probs = np.append(stats.poisson.pmf(np.arange(K), lim.T), stats.poisson.sf(K - 1, lim.T))
    chi2, pval = stats.chisquare(observed, probs * counts.size)
    criterion(pval > 0.01, f"chi-square = {chi2:.3f}, p = {pval:.4f}, mean count = {counts.mean():.4f} over 2000 paths")
