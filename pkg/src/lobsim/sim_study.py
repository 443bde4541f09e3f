"""Spread- and imbalance-driven order-book model used in the simulation study.

Small price changes move the best quotes by one tick with probabilities that
depend on the spread and on the imbalance of the top-of-book volumes.
Large price changes happen with probability ``dt`` per event; their sizes
depend on standing volume and on an exogenous counter ``Y``. All other
events are limit-order placements and cancellations at Gaussian distances
from the best quotes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, NamedTuple

import numpy as np
from scipy.special import erf

from . import _kernels as kern
from .errors import DomainOverflowError, ModelFaultError, UndefinedJumpError, ValidationError
from .gridfn import GridFunction, is_tick_multiple
from .micro_sim import _seeded
from .model import Event, EventLog, LOBState, ModelSpec, ScalingParams, Trajectory, top_volumes

CATEGORIES = (
    "small_bid_up",
    "small_bid_down",
    "small_ask_up",
    "small_ask_down",
    "large_bid_up",
    "large_bid_down",
    "large_ask_up",
    "large_ask_down",
    "bid_placement",
    "bid_cancellation",
    "ask_placement",
    "ask_cancellation",
)
# gaussian location density is treated as zero beyond this distance
_G_CUTOFF = 6.5


@dataclass(frozen=True)
class SimStudyParams:
    """Parameters of the simulation-study model.

    The jump-size constants ``jbp, jbm, jap, jam`` are in price units; the
    direct-size jumps round them to the nearest tick.
    """

    dp: float
    h: float = 0.55
    gamma1: float = 1.0
    eta1: float = 0.0
    eta2: float = 100.0
    kappa: float = 10.0
    sigma: float = 10.0
    lambda_bp: float = 0.0
    lambda_bm: float = 1.0
    lambda_ap: float = 0.0
    lambda_am: float = 0.0
    jbp: float = 0.02
    jbm: float = -0.02
    jap: float = 0.02
    jam: float = -0.02
    placement_size: float = 10.0
    B0: float = 6.9
    A0: float = 7.0
    vb0_coef: float = 0.0075
    va0_coef: float = 0.0025
    interarrival: str = "deterministic"
    positivity_guard: bool = True
    x_extent: float = 8.0
    price_lo: float = 0.0
    price_hi: float = 30.0

    def __post_init__(self) -> None:
        lams = (self.lambda_bp, self.lambda_bm, self.lambda_ap, self.lambda_am)
        if any(not (0.0 <= v <= 1.0) for v in lams):
            raise ValidationError("jump weights must lie in [0, 1]")
        if not math.isclose(sum(lams), 1.0, abs_tol=1e-12):
            raise ValidationError(f"jump weights must sum to 1, got {sum(lams)}")
        if not (self.jbp > 0 and self.jap > 0 and self.jbm < 0 and self.jam < 0):
            raise ValidationError("need jbp, jap > 0 and jbm, jam < 0")
        for name in ("dp", "h", "eta2", "sigma", "placement_size", "x_extent"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.eta1 < 0 or self.gamma1 <= 0:
            raise ValidationError("need eta1 >= 0 and gamma1 > 0")
        if self.interarrival not in ("deterministic", "exponential"):
            raise ValidationError("interarrival must be 'deterministic' or 'exponential'")
        if not self.B0 < self.A0:
            raise ValidationError("initial bid must be below the initial ask")
        if not (self.price_lo <= self.B0 and self.A0 <= self.price_hi):
            raise ValidationError("initial prices outside the price range")
        if self.x_extent < _G_CUTOFF + 1.0:
            raise ValidationError(f"x_extent must be at least {_G_CUTOFF + 1.0}")

    @classmethod
    def first_run(cls, n: int, **kw) -> SimStudyParams:
        """Only downward jumps of the bid."""
        return cls(dp=n**-0.5, **kw)

    @classmethod
    def second_run(cls, n: int, **kw) -> SimStudyParams:
        """Jumps in all four directions, amplified once ``Y`` exceeds ``kappa``."""
        base = dict(
            lambda_bp=0.15, lambda_bm=0.35, lambda_ap=0.35, lambda_am=0.15, eta1=9.0, kappa=10.0
        )
        base.update(kw)
        return cls(dp=n**-0.5, **base)

    def check_ticks(self, p: ScalingParams) -> list[str]:
        """Human-readable list of tick-size conditions that fail at ``p``."""
        bad = []
        for name in ("jbp", "jap"):
            if not getattr(self, name) > p.dx:
                bad.append(f"{name} must exceed one tick")
        for name in ("jbm", "jam"):
            if not getattr(self, name) < -p.dx:
                bad.append(f"{name} must be below minus one tick")
        return bad


def gamma_n(x, sp: SimStudyParams, p: ScalingParams):
    return sp.gamma1 * (x - p.dx)


def rho(y, sp: SimStudyParams):
    return 1.0 + sp.eta1 * (np.asarray(y) > sp.kappa)


class SmallMoves(NamedTuple):
    bid_up: float
    bid_down: float
    ask_up: float
    ask_down: float


class LargeJumps(NamedTuple):
    bid_up: float
    bid_down: float
    ask_up: float
    ask_down: float


def _sp_im(s: LOBState, sp: SimStudyParams, p: ScalingParams) -> tuple[float, float]:
    spread = round((s.ask - s.bid) / p.dx) * p.dx
    vb, va = top_volumes(s, sp.h)
    if not vb + va > 0:
        raise ModelFaultError("no volume near the top of the book")
    return spread, vb / (vb + va)


def small_jump_probabilities(s: LOBState, sp: SimStudyParams, p: ScalingParams) -> SmallMoves:
    """One-tick move probabilities, before any guard or renormalisation."""
    spread, im = _sp_im(s, sp, p)
    return small_moves(spread, im, sp, p)


def small_moves(spread: float, im: float, sp: SimStudyParams, p: ScalingParams) -> SmallMoves:
    if spread < p.dx * (1 - 1e-9):
        raise ValidationError(f"spread {spread} below one tick")
    e = math.exp(-gamma_n(spread, sp, p))
    q = 1.0 - e
    dx, dp = p.dx, sp.dp
    return SmallMoves(
        bid_up=dp * (dx * im * q + q),
        bid_down=dp * (dx * (1 - im) * e + q),
        ask_up=dp * (dx * im * e + q),
        ask_down=dp * (dx * (1 - im) * q + q),
    )


def large_jump_sizes(s: LOBState, y: int, sp: SimStudyParams, p: ScalingParams) -> LargeJumps:
    """Sizes of the four large price changes at state ``s``.

    Sizes are tick multiples. Besides the no-crossing caps every size is
    bounded by ``p.M`` in absolute value, and with the positivity guard a
    downward bid jump never takes the bid below one tick.
    """
    vb, va = top_volumes(s, sp.h)
    if not (vb > 0 and va > 0):
        raise UndefinedJumpError("volume-driven jump size needs positive top-of-book volume")
    bt = round(s.bid / p.dx)
    st = round((s.ask - s.bid) / p.dx)
    _, jumps = event_law(sp, p, bt, st, vb, va, y)
    return LargeJumps(*(float(j) * p.dx for j in jumps))


def event_law(
    sp: SimStudyParams, p: ScalingParams, bt, st, volb, vola, y
) -> tuple[np.ndarray, np.ndarray]:
    """Category probabilities and large-jump sizes (in ticks), vectorised.

    ``bt`` is the bid in ticks and ``st`` the spread in ticks. Returns an
    array of shape ``(..., 12)`` ordered as :data:`CATEGORIES` and an integer
    array of shape ``(..., 4)`` with the bid-up, bid-down, ask-up and
    ask-down jump sizes.
    """
    bt = np.asarray(bt, dtype=np.int64)
    st = np.asarray(st, dtype=np.int64)
    volb = np.asarray(volb, dtype=float)
    vola = np.asarray(vola, dtype=float)
    y = np.asarray(y)
    dx, dt, dp = p.dx, p.dt, sp.dp
    im = volb / (volb + vola)
    spread = st * dx
    e = np.exp(-sp.gamma1 * (spread - dx))
    q = 1.0 - e
    a_up = dp * (dx * im * q + q)
    c_up = dp * (dx * im * e + q)
    a_dn = dp * (dx * (1.0 - im) * e + q)
    c_dn = dp * (dx * (1.0 - im) * q + q)
    if sp.positivity_guard:
        a_dn = np.where(bt <= 1, 0.0, a_dn)
    lam = np.array([sp.lambda_bp, sp.lambda_bm, sp.lambda_ap, sp.lambda_am])
    lam_tot = lam.sum()
    small = a_up + c_up + a_dn + c_dn
    over = small + dt * lam_tot > 1.0
    r = np.where(over, (1.0 - dt * lam_tot) / np.where(over, small, 1.0), 1.0)
    a_up, c_up, a_dn, c_dn = a_up * r, c_up * r, a_dn * r, c_dn * r
    small = np.where(over, a_up + c_up + a_dn + c_dn, small)
    rest = np.maximum(1.0 - small - dt * lam_tot, 0.0)
    shape = np.broadcast(bt, st, volb, vola, y).shape
    P = np.empty(shape + (12,))
    P[..., 0] = a_up
    P[..., 1] = a_dn
    P[..., 2] = c_up
    P[..., 3] = c_dn
    P[..., 4:8] = dt * lam
    P[..., 8] = 0.5 * rest * (1.0 - im)
    P[..., 9] = 0.5 * rest * im
    P[..., 10] = 0.5 * rest * im
    P[..., 11] = 0.5 * rest * (1.0 - im)

    rh = rho(y, sp)
    mt = int(round(p.M / dx))
    J = np.empty(shape + (4,), dtype=np.int64)
    jb = np.floor(rh * sp.jbp / dx + 0.5).astype(np.int64)
    J[..., 0] = np.minimum(np.minimum(jb, st - 1), mt)
    with np.errstate(divide="ignore", invalid="ignore"):
        qb = np.where(volb > 0, rh * sp.eta2 * sp.jbm / (volb * dx), -np.inf)
        qa = np.where(vola > 0, rh * sp.eta2 * sp.jap / (vola * dx), np.inf)
    jm = np.where(qb < -mt, -mt, np.floor(np.maximum(qb, -mt - 1.0))).astype(np.int64)
    jm = np.maximum(jm, -mt)
    if sp.positivity_guard:
        jm = np.maximum(jm, -(bt - 1))
    J[..., 1] = jm
    ja = np.where(qa > mt, mt, np.floor(np.minimum(qa, mt + 1.0))).astype(np.int64)
    J[..., 2] = np.minimum(ja, mt)
    jd = np.floor(rh * sp.jam / dx + 0.5).astype(np.int64)
    J[..., 3] = np.maximum(np.maximum(jd, -(st - 1)), -mt)
    return P, J


def _constants(sp: SimStudyParams, p: ScalingParams) -> np.ndarray:
    c = np.zeros(kern.N_CONST)
    c[kern.DX], c[kern.DT], c[kern.DV], c[kern.DP] = p.dx, p.dt, p.dv, sp.dp
    c[kern.H], c[kern.GAMMA1], c[kern.ETA1], c[kern.ETA2] = sp.h, sp.gamma1, sp.eta1, sp.eta2
    c[kern.KAPPA], c[kern.SIGMA] = sp.kappa, sp.sigma
    c[kern.LAM_BP], c[kern.LAM_BM] = sp.lambda_bp, sp.lambda_bm
    c[kern.LAM_AP], c[kern.LAM_AM] = sp.lambda_ap, sp.lambda_am
    c[kern.J_BP], c[kern.J_BM], c[kern.J_AP], c[kern.J_AM] = sp.jbp, sp.jbm, sp.jap, sp.jam
    c[kern.OMEGA] = sp.placement_size
    c[kern.PHI_MODE] = 1.0 if sp.interarrival == "exponential" else 0.0
    c[kern.MBOUND] = p.M
    c[kern.GUARD] = 1.0 if sp.positivity_guard else 0.0
    c[kern.DELTA_N] = p.delta_n
    return c


def location_cell_density(dx: float, lo: int, hi: int, shift: float = 0.0) -> np.ndarray:
    """Cell averages of the placement-location density ``exp(-y**2) / sqrt(pi)``.

    Cells are ``[shift + j*dx, shift + (j+1)*dx)`` for ``j = lo .. hi - 1``.
    """
    edges = shift + np.arange(lo, hi + 1) * dx
    return np.diff(erf(edges)) / (2.0 * dx)


def _quartic_antiderivative(coef: float):
    def F(x):
        x = np.clip(x, -4.0, 4.0)
        return coef * (x**5 / 5.0 - 32.0 * x**3 / 3.0 + 256.0 * x)

    return F


class SimStudyModel(ModelSpec):
    """Event law of the simulation-study model at resolution ``p``."""

    def __init__(self, sp: SimStudyParams, p: ScalingParams):
        if p.dp is not None and not math.isclose(p.dp, sp.dp, rel_tol=1e-12):
            raise ValidationError("model dp differs from the scaling dp")
        if p.dv / p.dx > 1.0:
            raise ValidationError("dv / dx must not exceed 1 for cancellations to keep volumes non-negative")
        self.sp = sp
        self.params = p
        self._c = _constants(sp, p)
        g_n = int(math.ceil(_G_CUTOFF / p.dx))
        self._g_lo = -g_n
        self._g = location_cell_density(p.dx, -g_n, g_n)

    @classmethod
    def from_n(cls, n: int, run: int = 1, T: float = 2.0, M: float = 5.0, **kw) -> SimStudyModel:
        ctor = SimStudyParams.first_run if run == 1 else SimStudyParams.second_run
        return cls(ctor(n, **kw), ScalingParams.power_law(n, T=T, M=M))

    def with_horizon(self, T: float) -> SimStudyModel:
        return SimStudyModel(self.sp, replace(self.params, T=T))

    # ------------------------------------------------------------------
    def initial_state(self) -> LOBState:
        sp, p = self.sp, self.params
        bt, at = round(sp.B0 / p.dx), round(sp.A0 / p.dx)
        if at <= bt:
            raise ValidationError("initial spread vanishes on this grid")
        ext = sp.x_extent
        vb = GridFunction.from_antiderivative(_quartic_antiderivative(sp.vb0_coef), p.dx, -ext, ext)
        va = GridFunction.from_antiderivative(_quartic_antiderivative(sp.va0_coef), p.dx, -ext, ext)
        return LOBState(bt * p.dx, vb, at * p.dx, va, 0.0)

    def initial_aux(self) -> int:
        return 0

    def _law_at(self, s: LOBState, aux: int):
        p = self.params
        bt = round(s.bid / p.dx)
        at = round(s.ask / p.dx)
        volb, vola = top_volumes(s, self.sp.h)
        if not volb + vola > 0:
            raise ModelFaultError("no volume near the top of the book")
        P, J = event_law(self.sp, p, bt, at - bt, volb, vola, aux)
        return P, J, volb / (volb + vola)

    def event_probabilities(self, s: LOBState, aux: int) -> dict[str, float]:
        P, _, _ = self._law_at(s, aux)
        return dict(zip(CATEGORIES, (float(v) for v in P)))

    def sample_event(self, s: LOBState, aux: int, rng: np.random.Generator) -> Event:
        p, sp = self.params, self.sp
        u = rng.random(5)
        P, J, _ = self._law_at(s, aux)
        cs = np.cumsum(P)
        cat = min(int(np.searchsorted(cs[:11], u[0], side="right")), 11)
        z = math.sqrt(-2.0 * math.log(1.0 - u[1])) * math.cos(2.0 * math.pi * u[2])
        pi = z / math.sqrt(2.0)
        if sp.interarrival == "exponential":
            phi = -math.log(1.0 - u[3])
            if not phi > 0.0:
                phi = 1e-300
        else:
            phi = 1.0
        if cat < 4:
            kind = "A" if cat < 2 else "C"
            return Event(kind, xi=1 if cat % 2 == 0 else -1, phi_dur=phi)
        if cat < 8:
            kind = "A" if cat < 6 else "C"
            return Event(kind, xi=int(J[cat - 4]), phi_dur=phi)
        side_b = cat <= 9
        if cat in (8, 10):
            omega = sp.placement_size
        else:
            v = (s.vb if side_b else s.va).eval(pi)
            omega = -u[4] * v
        return Event("B" if side_b else "D", omega=omega, pi=pi, phi_dur=phi)

    def update_aux(self, aux: int, event: Event, rng: np.random.Generator) -> int:
        return aux + int(rng.random() < self.sp.sigma * self.params.dt)

    def mean_interarrival(self, s: LOBState, aux: Any) -> float:
        return 1.0

    # ------------------------------------------------------------------
    def _coefficients_from_law(self, P, J):
        p = self.params
        dx, dt = p.dx, p.dt
        lim = p.delta_n / dx * (1 + 1e-9)
        p_b = dx / dt * (P[..., 0] - P[..., 1])
        p_a = dx / dt * (P[..., 2] - P[..., 3])
        r2_b = dx * dx / dt * (P[..., 0] + P[..., 1])
        r2_a = dx * dx / dt * (P[..., 2] + P[..., 3])
        for i, side in ((0, "b"), (1, "b"), (2, "a"), (3, "a")):
            j = J[..., i]
            small = (j != 0) & (np.abs(j) <= lim)
            w = P[..., 4 + i] * small
            if side == "b":
                p_b = p_b + dx / dt * w * j
                r2_b = r2_b + dx * dx / dt * w * j * j
            else:
                p_a = p_a + dx / dt * w * j
                r2_a = r2_a + dx * dx / dt * w * j * j
        return p_b, p_a, np.sqrt(r2_b), np.sqrt(r2_a)

    def small_coefficients(self, s: LOBState, aux: int) -> tuple[float, float, float, float]:
        """Exact drift and volatility of the price changes of size at most ``delta_n``."""
        P, J, _ = self._law_at(s, aux)
        return tuple(float(v) for v in self._coefficients_from_law(P, J))

    def coefficient_series(self, tr: Trajectory) -> tuple[np.ndarray, ...]:
        """``(p_b, p_a, r_b, r_a)`` at the states ``0 .. K - 1`` of a compiled trajectory."""
        p = self.params
        ser = tr.series
        if "volb" not in ser:
            raise ValidationError("trajectory lacks recorded top-of-book volumes")
        bt = np.rint(tr.bid[:-1] / p.dx).astype(np.int64)
        at = np.rint(tr.ask[:-1] / p.dx).astype(np.int64)
        P, J = event_law(self.sp, p, bt, at - bt, ser["volb"][:-1], ser["vola"][:-1], ser["y"][:-1])
        return self._coefficients_from_law(P, J)

    def placement_mean(self, s: LOBState, aux: int, side: str) -> GridFunction:
        """Conditional mean of the volume change density, per unit volume step."""
        P, _, im = self._law_at(s, aux)
        rest = float(P[8] + P[9] + P[10] + P[11])
        v = s.vb if side == "b" else s.va
        if v.origin != 0.0:
            raise ValidationError("placement means need a tick-aligned density")
        lo = self._g_lo
        vv = v.restrict(lo, lo + len(self._g)).values
        if side == "b":
            vals = rest * self._g * (5.0 * (1.0 - im) - 0.25 * im * vv)
        elif side == "a":
            vals = rest * self._g * (5.0 * im - 0.25 * (1.0 - im) * vv)
        else:
            raise ValidationError("side must be 'b' or 'a'")
        return GridFunction(self.params.dx, lo, vals)

    def feedback_coefficients(self, s: LOBState, aux: int = 0):
        """``(p_b, p_a, r_b, r_a, f_b, f_a)`` at state ``s``."""
        return self.small_coefficients(s, aux) + (
            self.placement_mean(s, aux, "b"),
            self.placement_mean(s, aux, "a"),
        )

    # ------------------------------------------------------------------
    def _frame(self, s0: LOBState):
        sp, p = self.sp, self.params
        if not (is_tick_multiple(s0.bid, p.dx) and is_tick_multiple(s0.ask, p.dx)):
            raise ValidationError("initial prices must lie on the tick grid")
        if s0.vb.origin != 0.0 or s0.va.origin != 0.0:
            raise ValidationError("initial densities must be tick aligned")
        bt0, at0 = round(s0.bid / p.dx), round(s0.ask / p.dx)
        ext = int(math.ceil(sp.x_extent / p.dx))
        up_b = int(math.ceil((sp.price_hi - s0.bid) / p.dx))
        dn_b = int(math.ceil((s0.bid - sp.price_lo) / p.dx))
        up_a = int(math.ceil((sp.price_hi - s0.ask) / p.dx))
        dn_a = int(math.ceil((s0.ask - sp.price_lo) / p.dx))
        zlo_b, zhi_b = -ext - up_b, ext + dn_b
        zlo_a, zhi_a = -ext - dn_a, ext + up_a
        for v, lo, hi in ((s0.vb, zlo_b, zhi_b), (s0.va, zlo_a, zhi_a)):
            sup = v.support()
            if sup is not None and (sup[0] < lo * p.dx or sup[1] > hi * p.dx):
                raise DomainOverflowError("initial density exceeds the simulation domain")
        Wb = s0.vb.restrict(zlo_b, zhi_b).values.copy()
        Wa = s0.va.restrict(zlo_a, zhi_a).values.copy()
        return bt0, at0, zlo_b, zlo_a, Wb, Wa

    def _state_from_frame(self, bt0, at0, zlo_b, zlo_a, Wb, Wa, bt, at, t) -> LOBState:
        p = self.params
        vb = GridFunction(p.dx, zlo_b + (bt - bt0), Wb)
        va = GridFunction(p.dx, zlo_a - (at - at0), Wa)
        return LOBState(bt * p.dx, vb, at * p.dx, va, float(t))

    def simulate_fast(
        self,
        s0: LOBState | None = None,
        aux0: int | None = 0,
        seed: Any = None,
        *,
        record_every: int | None = None,
        probe_times=(),
        track_remainders: bool = False,
        snapshot_ticks=None,
        keep_events: bool = True,
    ) -> Trajectory:
        """Compiled simulation with the same random stream as :meth:`sample_event`.

        ``probe_times`` request the states seen at physical times ``t``;
        ``track_remainders`` accumulates the martingale remainders of the
        interarrival times and volume densities on the fly.
        """
        p = self.params
        if s0 is None:
            s0 = self.initial_state()
        if aux0 not in (None, 0):
            raise ValidationError("the compiled simulator starts the counter at 0")
        rng = _seeded(seed)
        K = p.n_ticks
        bt0, at0, zlo_b, zlo_a, Wb, Wa = self._frame(s0)
        if abs(s0.time) > 0:
            raise ValidationError("the compiled simulator starts at time 0")
        U = rng.random((K, 6))

        if snapshot_ticks is None:
            every = K if record_every is None else int(record_every)
            snapshot_ticks = sorted(set(range(0, K + 1, max(every, 1))) | {K})
        snap_k = np.asarray(sorted(set(int(k) for k in snapshot_ticks)), dtype=np.int64)
        if snap_k.size and (snap_k[0] < 0 or snap_k[-1] > K):
            raise ValidationError("snapshot ticks outside the horizon")
        if snap_k.size * (Wb.size + Wa.size) * 8 > 400e6:
            raise ValidationError("too many snapshots requested; raise record_every")
        probes = np.asarray(sorted(float(t) for t in probe_times), dtype=float)
        if probes.size and (probes[0] < 0 or probes[-1] > p.T):
            raise ValidationError("probe times must lie in [0, T]")

        rec_bt = np.zeros(K + 1, np.int64)
        rec_at = np.zeros(K + 1, np.int64)
        rec_tau = np.zeros(K + 1)
        rec_vb = np.zeros(K + 1)
        rec_va = np.zeros(K + 1)
        rec_y = np.zeros(K + 1, np.int64)
        log = EventLog.empty(K)
        probe_k = np.full(probes.size, -1, np.int64)
        probe_b = np.zeros((probes.size, Wb.size))
        probe_a = np.zeros((probes.size, Wa.size))
        snap_b = np.zeros((snap_k.size, Wb.size))
        snap_a = np.zeros((snap_k.size, Wa.size))
        Rb = np.zeros(Wb.size if track_remainders else 1)
        Ra = np.zeros(Wa.size if track_remainders else 1)
        stats = np.zeros(7)
        Wb0, Wa0 = Wb.copy(), Wa.copy()
        status = kern.simulate_micro(
            self._c, bt0, at0, Wb, Wa, zlo_b, zlo_a, U,
            rec_bt, rec_at, rec_tau, rec_vb, rec_va, rec_y,
            log.kind, log.xi, log.omega, log.pi, log.phi,
            probes, probe_k, probe_b, probe_a,
            snap_k, snap_b, snap_a,
            bool(track_remainders), self._g, self._g_lo, Rb, Ra, stats,
        )  # fmt: skip
        if status == kern.OVERFLOW:
            raise DomainOverflowError(f"density or price left the simulation domain at event {int(stats[6])}")
        if status == kern.FAULT:
            raise ModelFaultError(f"no volume near the top of the book at event {int(stats[6])}")

        frame = (bt0, at0, zlo_b, zlo_a)
        snaps = {
            int(k): self._state_from_frame(*frame, snap_b[i], snap_a[i], rec_bt[k], rec_at[k], rec_tau[k])
            for i, k in enumerate(snap_k)
        }
        snaps[0] = s0
        probe_states = {}
        for i, t in enumerate(probes):
            k = int(probe_k[i])
            if k < 0:
                # the clock never passed t: the path rests in its final state
                k = K
                probe_b[i], probe_a[i] = Wb, Wa
            probe_states[float(t)] = (
                k,
                self._state_from_frame(*frame, probe_b[i], probe_a[i], rec_bt[k], rec_at[k], rec_tau[k]),
            )
        series = {"volb": rec_vb, "vola": rec_va, "y": rec_y}
        flags = {
            "min_spread_ticks": int(stats[0]),
            "min_bid_ticks": int(stats[1]),
            "min_touched_density": float(stats[2]),
            "final_min_density": float(min(Wb.min(), Wa.min())),
            "tau_exceeds_T": bool(rec_tau[-1] > p.T),
            "probes": probe_states,
        }
        if track_remainders:
            flags["sup_R_phi"] = float(stats[3])
            flags["sup_R_b_sq"] = float(stats[4])
            flags["sup_R_a_sq"] = float(stats[5])
            flags["final_R_b"] = GridFunction(p.dx, zlo_b + (rec_bt[-1] - bt0), Rb)
            flags["final_R_a"] = GridFunction(p.dx, zlo_a - (rec_at[-1] - at0), Ra)
        if not keep_events:
            log = EventLog.empty(0)
        tr = Trajectory(
            p, s0, log, rec_tau, rec_bt * p.dx, rec_at * p.dx, snaps, series, aux0=0, flags=flags
        )
        return tr


class SimStudyLimit:
    """High-frequency limit of :class:`SimStudyModel`.

    The prices are jump diffusions with drifts ``Im - e`` and ``Im - (1 - e)``
    where ``e = exp(-gamma1 * Sp)``, common volatility ``sqrt(2 (1 - e))`` and
    Poisson jumps with marks in ``{-1, +1}``. The densities are transported
    with the prices and fed by the placement/cancellation source.

    ``dxi`` is the spatial grid of the densities, ``h`` the Euler step.
    """

    def __init__(self, sp: SimStudyParams, dxi: float = 1 / 128, h: float = 0.01, T: float = 2.0, M: float = 5.0):
        if not (dxi > 0 and h > 0 and T > 0 and M > 0):
            raise ValidationError("dxi, h, T and M must be positive")
        self.sp, self.dxi, self.h, self.T, self.M = sp, float(dxi), float(h), float(T), float(M)

    @property
    def steps(self) -> int:
        from .gridfn import snap_floor

        return snap_floor(self.T / self.h)

    def initial_state(self) -> LOBState:
        sp, ext = self.sp, self.sp.x_extent
        vb = GridFunction.from_antiderivative(_quartic_antiderivative(sp.vb0_coef), self.dxi, -ext, ext)
        va = GridFunction.from_antiderivative(_quartic_antiderivative(sp.va0_coef), self.dxi, -ext, ext)
        return LOBState(sp.B0, vb, sp.A0, va, 0.0)

    # ------------------------------------------------------------------
    # coefficients as plain functions of the state
    def _im_e(self, s: LOBState) -> tuple[float, float]:
        vb, va = top_volumes(s, self.sp.h)
        if not vb + va > 0:
            raise ModelFaultError("imbalance undefined: no volume near the top of the book")
        e = math.exp(-self.sp.gamma1 * max(s.ask - s.bid, 0.0))
        return vb / (vb + va), e

    def _source(self, s: LOBState, side: str) -> GridFunction:
        v = s.vb if side == "b" else s.va
        im, _ = self._im_e(s)
        d, o = v.spacing, v.origin
        lo = int(math.floor((-_G_CUTOFF - o) / d))
        hi = int(math.ceil((_G_CUTOFF - o) / d))
        g = location_cell_density(d, lo, hi, o)
        w = v.restrict(lo, hi).values
        if side == "b":
            vals = g * (5.0 * (1.0 - im) - 0.25 * im * w)
        else:
            vals = g * (5.0 * im - 0.25 * (1.0 - im) * w)
        return GridFunction(d, lo, vals, o)

    def _theta_b(self, s: LOBState, y: int, mark: float) -> float:
        sp, M = self.sp, self.M
        r = rho(y, sp)
        if mark < 0:
            vol = s.vb.integrate(0.0, sp.h)
            size = r * sp.eta2 * sp.jbm / vol if vol > 0 else -M
            size = max(size, -M)
            if sp.positivity_guard:
                size = max(size, -max(s.bid, 0.0))
            return size
        return min(r * sp.jbp, max(s.ask - s.bid, 0.0), M)

    def _theta_a(self, s: LOBState, y: int, mark: float) -> float:
        sp, M = self.sp, self.M
        r = rho(y, sp)
        if mark > 0:
            vol = s.va.integrate(0.0, sp.h)
            size = r * sp.eta2 * sp.jap / vol if vol > 0 else M
            return min(size, M)
        return max(r * sp.jam, -max(s.ask - s.bid, 0.0), -M)

    def coefficients(self):
        from .jump_kernels import Measure
        from .limit_sim import LimitCoefficients

        sp = self.sp

        def p_b(s, y):
            im, e = self._im_e(s)
            return im - e

        def p_a(s, y):
            im, e = self._im_e(s)
            return im - (1.0 - e)

        def r(s, y):
            _, e = self._im_e(s)
            return math.sqrt(2.0 * (1.0 - e))

        return LimitCoefficients(
            p_b=p_b,
            p_a=p_a,
            r_b=r,
            r_a=r,
            f_b=lambda s, y: self._source(s, "b"),
            f_a=lambda s, y: self._source(s, "a"),
            phi=lambda s, y: 1.0,
            theta_b=self._theta_b,
            theta_a=self._theta_a,
            Q_b=Measure(np.array([-1.0, 1.0]), np.array([sp.lambda_bm, sp.lambda_bp])),
            Q_a=Measure(np.array([-1.0, 1.0]), np.array([sp.lambda_am, sp.lambda_ap])),
            aux_rate=sp.sigma,
        )

    def drivers(self, seed: Any = None):
        from .limit_sim import Drivers

        sp = self.sp
        rng = _seeded(seed)
        return Drivers.draw(
            rng, self.steps, self.h, sp.lambda_bm + sp.lambda_bp, sp.lambda_am + sp.lambda_ap, sp.sigma
        )

    # ------------------------------------------------------------------
    def simulate(self, seed: Any = None, *, probe_times=(), drivers=None, engine: str = "fast"):
        """One Euler path; densities are kept at ``probe_times`` and at both ends.

        ``engine="python"`` runs the generic solver on :meth:`coefficients`;
        both engines consume the same driver arrays.
        """
        from .gridfn import snap_floor
        from .limit_sim import EtaPath, simulate_eta

        if engine not in ("fast", "python"):
            raise ValidationError(f"unknown engine {engine!r}")
        if drivers is None:
            drivers = self.drivers(seed)
        steps = self.steps
        probe_m = np.array(sorted(snap_floor(t / self.h) for t in probe_times), dtype=np.int64)
        if probe_m.size and (probe_m[0] < 0 or probe_m[-1] > steps):
            raise ValidationError("probe time outside [0, T]")
        s0 = self.initial_state()
        if engine == "python":
            return simulate_eta(
                self.coefficients(), self.h, self.T, s0, drivers=drivers, frame_steps=list(probe_m) + [steps]
            )

        sp, dz = self.sp, self.dxi
        c = _constants(sp, ScalingParams(dz, self.h, self.h, dz, dz, self.T, self.M))
        ext = int(math.ceil((sp.x_extent + _G_CUTOFF) / dz))
        plo = sp.price_lo - self.M
        up_b = int(math.ceil((sp.price_hi - sp.B0) / dz))
        dn_b = int(math.ceil((sp.B0 - plo) / dz))
        up_a = int(math.ceil((sp.price_hi - sp.A0) / dz))
        dn_a = int(math.ceil((sp.A0 - plo) / dz))
        zlo_b, zhi_b = -ext - up_b, ext + dn_b
        zlo_a, zhi_a = -ext - dn_a, ext + up_a
        Wb = s0.vb.restrict(zlo_b, zhi_b).values.copy()
        Wa = s0.va.restrict(zlo_a, zhi_a).values.copy()
        n_probe = probe_m.size
        probe_b = np.zeros((n_probe, Wb.size))
        probe_a = np.zeros((n_probe, Wa.size))
        B = np.zeros(steps + 1)
        A = np.zeros(steps + 1)
        vb = np.full(steps + 1, np.nan)
        va = np.full(steps + 1, np.nan)
        ys = np.zeros(steps + 1, np.int64)
        nj = drivers.marks.size
        jl_step = np.zeros(nj, np.int64)
        jl_side = np.zeros(nj, np.int64)
        jl_mark = np.zeros(nj)
        jl_size = np.zeros(nj)
        status, at = kern.simulate_limit(
            c, self.h, sp.B0, sp.A0, Wb, Wa, zlo_b, zlo_a, dz, _G_CUTOFF,
            np.ascontiguousarray(drivers.G, float), np.ascontiguousarray(drivers.N, np.int64),
            np.ascontiguousarray(drivers.marks, float), np.ascontiguousarray(drivers.aux_inc, np.int64),
            probe_m, probe_b, probe_a, B, A, vb, va, ys, jl_step, jl_side, jl_mark, jl_size,
        )  # fmt: skip
        if status == kern.OVERFLOW:
            raise DomainOverflowError(f"limit path left the price domain at step {at}")
        if status == kern.FAULT:
            raise ModelFaultError(f"imbalance undefined at step {at}")
        frames = {0: (s0.vb.restrict(zlo_b, zhi_b), s0.va.restrict(zlo_a, zhi_a))}
        for i, m in enumerate(probe_m):
            frames[int(m)] = (GridFunction(dz, zlo_b, probe_b[i]), GridFunction(dz, zlo_a, probe_a[i]))
        frames[steps] = (GridFunction(dz, zlo_b, Wb), GridFunction(dz, zlo_a, Wa))
        times = self.h * np.arange(steps + 1)
        log = [
            (float(jl_step[i] * self.h), "ba"[jl_side[i]], float(jl_mark[i]), float(jl_size[i]))
            for i in range(nj)
        ]
        path = EtaPath(self.h, times, B, A, times.copy(), log, frames, ys)
        path.flags["volb"] = vb
        path.flags["vola"] = va
        return path
