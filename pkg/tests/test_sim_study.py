from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import erf

from lobsim import _kernels as kern
from lobsim.errors import UndefinedJumpError, ValidationError
from lobsim.gridfn import GridFunction
from lobsim.model import LOBState, ScalingParams, imbalance, top_volumes
from lobsim.sim_study import (
    CATEGORIES,
    SimStudyModel,
    SimStudyParams,
    event_law,
    large_jump_sizes,
    rho,
    small_jump_probabilities,
    small_moves,
)

VOLBID0 = 1.04276549265625  # 0.0075 * (0.55**5/5 - 32*0.55**3/3 + 256*0.55)


@pytest.fixture(scope="module")
def m100():
    return SimStudyModel.from_n(100)


def test_initial_state(m100):
    s = m100.initial_state()
    assert s.bid == pytest.approx(6.9) and s.ask == pytest.approx(7.0)
    vb, va = top_volumes(s, 0.55)
    assert vb == pytest.approx(VOLBID0, abs=1e-12)
    assert va == pytest.approx(VOLBID0 / 3, abs=1e-12)
    assert imbalance(s, 0.55) == pytest.approx(0.75)


def test_small_move_probabilities_sum(m100):
    p, sp = m100.params, m100.sp
    for spread, im in [(0.1, 0.75), (0.5, 0.2), (3.0, 0.5)]:
        e = math.exp(-sp.gamma1 * (spread - p.dx))
        total = sum(small_moves(spread, im, sp, p))
        assert total == pytest.approx(4 * sp.dp * (1 - e) + p.dx * sp.dp, rel=1e-12)


def test_one_tick_spread_blocks_crossing_moves(m100):
    mv = small_moves(0.01, 0.6, m100.sp, m100.params)
    assert mv.bid_up == 0.0 and mv.ask_down == 0.0
    assert mv.bid_down > 0 and mv.ask_up > 0
    with pytest.raises(ValidationError):
        small_moves(0.005, 0.6, m100.sp, m100.params)


def test_feedback_coefficients_closed_form(m100):
    s = m100.initial_state()
    p_b, p_a, r_b, r_a = m100.small_coefficients(s, 0)
    im, dx = 0.75, 0.01
    e = math.exp(-(0.1 - dx))
    assert p_b == pytest.approx(im - e, abs=1e-12)
    assert p_a == pytest.approx(im - (1 - e), abs=1e-12)
    # exact second moment of the one-tick moves
    assert r_b**2 == pytest.approx(dx * (im * (1 - e) + (1 - im) * e) + 2 * (1 - e), rel=1e-12)
    assert r_a**2 == pytest.approx(dx * (im * e + (1 - im) * (1 - e)) + 2 * (1 - e), rel=1e-12)
    # leading term 2 (1 - e) = 0.17214 plus O(dx)
    assert abs(r_b**2 - 0.17214) < 2 * dx


def test_large_jump_sizes_initial_state(m100):
    s = m100.initial_state()
    j = large_jump_sizes(s, 0, m100.sp, m100.params)
    assert j.bid_up == pytest.approx(0.02)
    assert j.bid_down == pytest.approx(math.floor(100 * -0.02 / (VOLBID0 * 0.01)) * 0.01)
    assert j.bid_down == pytest.approx(-1.92)
    # 100 * 0.02 / (VOLBID0 / 3 * 0.01) ticks = 5.75 > M = 5
    assert j.ask_up == pytest.approx(5.0)
    assert j.ask_down == pytest.approx(-0.02)


def test_bid_up_jump_never_crosses(m100):
    p = m100.params
    s = m100.initial_state()
    s = LOBState(6.90, s.vb, 6.92, s.va)
    j = large_jump_sizes(s, 0, m100.sp, p)
    assert j.bid_up == pytest.approx(0.01)
    assert j.ask_down == pytest.approx(-0.01)


def test_rho_threshold():
    sp = SimStudyParams.second_run(100)
    assert rho(10, sp) == 1.0
    assert rho(11, sp) == 10.0


def test_zero_volume_jump_is_undefined(m100):
    s = m100.initial_state()
    empty = GridFunction(0.01, 0, [])
    with pytest.raises(UndefinedJumpError):
        large_jump_sizes(LOBState(s.bid, empty, s.ask, s.va), 0, m100.sp, m100.params)


def test_event_law_is_a_distribution(m100):
    p, sp = m100.params, SimStudyParams.second_run(100)
    rng = np.random.default_rng(1)
    bt = rng.integers(1, 900, 500)
    st = rng.integers(1, 200, 500)
    vb, va = rng.uniform(0.01, 3, 500), rng.uniform(0.01, 3, 500)
    y = rng.integers(0, 20, 500)
    P, J = event_law(sp, p, bt, st, vb, va, y)
    assert P.shape == (500, 12) and J.shape == (500, 4)
    assert np.all(P >= 0)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    # no crossing and positivity of the bid after any jump
    assert np.all(J[:, 0] <= st - 1) and np.all(J[:, 3] >= -(st - 1))
    assert np.all(bt + J[:, 1] >= 1)
    assert np.all(np.abs(J) <= 5 / p.dx + 1e-9)


def test_positivity_guard_blocks_last_tick(m100):
    P, J = event_law(m100.sp, m100.params, 1, 10, 0.5, 0.5, 0)
    assert P[1] == 0.0
    assert J[1] == 0


def test_compiled_law_matches_vectorised_law():
    sp = SimStudyParams.second_run(64)
    p = ScalingParams.power_law(64)
    c = SimStudyModel(sp, p)._c
    rng = np.random.default_rng(2)
    out_p, out_j = np.zeros(12), np.zeros(4, np.int64)
    for _ in range(300):
        bt, st = int(rng.integers(1, 500)), int(rng.integers(1, 100))
        vb, va, y = rng.uniform(1e-3, 3), rng.uniform(1e-3, 3), int(rng.integers(0, 20))
        im = kern.event_law(c, bt, st, vb, va, y, out_p, out_j)
        P, J = event_law(sp, p, bt, st, vb, va, y)
        np.testing.assert_allclose(out_p, P, rtol=1e-12, atol=1e-18)
        np.testing.assert_array_equal(out_j, J)
        assert im == pytest.approx(vb / (vb + va))


def test_passive_block_split(m100):
    s = m100.initial_state()
    pr = m100.event_probabilities(s, 0)
    rest = sum(pr[c] for c in CATEGORIES[8:])
    im = 0.75
    assert pr[CATEGORIES[8]] == pytest.approx(rest * (1 - im) / 2)
    assert pr[CATEGORIES[9]] == pytest.approx(rest * im / 2)
    assert pr[CATEGORIES[10]] == pytest.approx(rest * im / 2)
    assert pr[CATEGORIES[11]] == pytest.approx(rest * (1 - im) / 2)


def test_sampled_categories_follow_the_law():
    m = SimStudyModel.from_n(16, run=2)
    s = m.initial_state()
    P = np.array(list(m.event_probabilities(s, 0).values()))
    rng = np.random.default_rng(3)
    N = 20000
    counts = np.zeros(4)
    for _ in range(N):
        e = m.sample_event(s, 0, rng)
        if e.kind in ("A", "C"):
            counts[0 if e.kind == "A" else 1] += 1
        else:
            counts[2 if e.kind == "B" else 3] += 1
    expect = N * np.array([P[[0, 1, 4, 5]].sum(), P[[2, 3, 6, 7]].sum(), P[8:10].sum(), P[10:].sum()])
    keep = expect > 5
    chi2 = np.sum((counts[keep] - expect[keep]) ** 2 / expect[keep])
    assert stats.chi2.sf(chi2, keep.sum() - 1) > 1e-3


def test_placement_mean_matches_cell_integrals(m100):
    s = m100.initial_state()
    f = m100.placement_mean(s, 0, "b")
    pr = m100.event_probabilities(s, 0)
    rest = sum(pr[c] for c in CATEGORIES[8:])
    dx = 0.01
    j = 3
    g = (erf((j + 1) * dx) - erf(j * dx)) / (2 * dx)
    expect = rest * g * (5 * 0.25 - 0.25 * 0.75 * s.vb((j + 0.5) * dx))
    assert f((j + 0.5) * dx) == pytest.approx(expect, rel=1e-12)
    assert f.support()[1] <= 6.6
    with pytest.raises(ValidationError):
        m100.placement_mean(s, 0, "x")


def test_coefficient_series_matches_statewise_evaluation():
    m = SimStudyModel.from_n(16, run=2, T=0.5)
    tr = m.simulate_fast(seed=4, record_every=1)
    pb, pa, rb, ra = m.coefficient_series(tr)
    for k in (0, 7, 100, tr.n_events - 1):
        y = int(tr.series["y"][k])
        ref = m.small_coefficients(tr.state(k), y)
        np.testing.assert_allclose([pb[k], pa[k], rb[k], ra[k]], ref, rtol=1e-10)


def test_parameter_validation():
    with pytest.raises(ValidationError):
        SimStudyParams(dp=0.1, lambda_bm=0.5)
    with pytest.raises(ValidationError):
        SimStudyParams(dp=0.1, jbp=-0.02)
    with pytest.raises(ValidationError):
        SimStudyParams(dp=0.1, B0=7.0, A0=6.9)
    with pytest.raises(ValidationError):
        SimStudyParams(dp=0.1, interarrival="poisson")


def test_first_run_large_jump_count():
    # one large-jump event per unit of tick time on average
    m = SimStudyModel.from_n(32, T=2.0)
    counts = []
    for seed in range(500):
        tr = m.simulate_fast(seed=seed)
        counts.append(int(np.sum(np.abs(tr.log.xi) * m.params.dx > m.params.delta_n * (1 + 1e-9))))
    assert 0.7 * 2.0 <= np.mean(counts) <= 1.3 * 2.0
