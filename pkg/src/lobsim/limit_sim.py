"""Euler scheme for the high-frequency limit and its random time change.

Prices follow jump diffusions driven by independent Brownian motions and
Poisson random measures; the relative volume densities are transported with
the prices and fed by the source terms ``f``. The densities are kept in a
frame that moves with the price, so a price change never resamples the
accumulated density: for the bid side the stored function is
``W(z) = v_b(z + B - B0)`` and each step adds ``h * f(z + B - B0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .errors import DomainOverflowError, ModelFaultError, ValidationError
from .gridfn import GridFunction, add, aligned, shift_interp, snap_floor
from .jump_kernels import Measure
from .micro_sim import _seeded
from .model import LOBState

Coef = Callable[[LOBState, Any], float]


@dataclass(frozen=True)
class LimitCoefficients:
    """Coefficient functions of the limit system.

    Every callable receives the current state and the auxiliary counter;
    ``theta_b`` and ``theta_a`` also receive the mark ``y``. Source terms
    return densities in relative coordinates.
    """

    p_b: Coef
    p_a: Coef
    r_b: Coef
    r_a: Coef
    f_b: Callable[[LOBState, Any], GridFunction]
    f_a: Callable[[LOBState, Any], GridFunction]
    phi: Coef
    theta_b: Callable[[LOBState, Any, float], float]
    theta_a: Callable[[LOBState, Any, float], float]
    Q_b: Measure = field(default_factory=Measure)
    Q_a: Measure = field(default_factory=Measure)
    aux_rate: float = 0.0

    def __post_init__(self) -> None:
        for q in (self.Q_b, self.Q_a):
            if not math.isfinite(q.total):
                raise ValidationError("driving measures must be finite")
        if self.aux_rate < 0:
            raise ValidationError("aux_rate must be non-negative")


def constant_coefficients(
    p_b: float = 0.0,
    p_a: float = 0.0,
    r_b: float = 0.0,
    r_a: float = 0.0,
    phi: float = 1.0,
    f_b: GridFunction | None = None,
    f_a: GridFunction | None = None,
    Q_b: Measure | None = None,
    Q_a: Measure | None = None,
    theta_b: Callable[[float], float] = lambda y: y,
    theta_a: Callable[[float], float] = lambda y: y,
) -> LimitCoefficients:
    """State-independent coefficients, mostly for tests and examples."""

    def src(g):
        return lambda s, a: g if g is not None else GridFunction(s.vb.spacing, 0, np.zeros(0))

    return LimitCoefficients(
        p_b=lambda s, a: p_b,
        p_a=lambda s, a: p_a,
        r_b=lambda s, a: r_b,
        r_a=lambda s, a: r_a,
        f_b=src(f_b),
        f_a=src(f_a),
        phi=lambda s, a: phi,
        theta_b=lambda s, a, y: theta_b(y),
        theta_a=lambda s, a, y: theta_a(y),
        Q_b=Q_b if Q_b is not None else Measure(),
        Q_a=Q_a if Q_a is not None else Measure(),
    )


@dataclass
class Drivers:
    """Random inputs of one limit path, drawn in a fixed order."""

    G: np.ndarray
    N: np.ndarray
    marks: np.ndarray
    aux_inc: np.ndarray

    @classmethod
    def draw(cls, rng: np.random.Generator, steps: int, h: float, mass_b: float, mass_a: float, aux_rate: float):
        G = rng.standard_normal((steps, 2))
        N = rng.poisson([mass_b * h, mass_a * h], size=(steps, 2)).astype(np.int64)
        marks = rng.random(int(N.sum()))
        aux_inc = rng.poisson(aux_rate * h, size=steps).astype(np.int64)
        return cls(G, N, marks, aux_inc)


@dataclass
class EtaPath:
    """Simulated limit path on the step grid ``0, h, 2h, ...``.

    ``B``, ``A`` and ``tau_eta`` hold one value per grid point. Densities are
    stored at the steps in ``frames`` in the moving frame and converted to
    relative coordinates by :meth:`vb` and :meth:`va`.
    """

    step: float
    times: np.ndarray
    B: np.ndarray
    A: np.ndarray
    tau_eta: np.ndarray
    jump_log: list[tuple[float, str, float, float]]
    frames: dict[int, tuple[GridFunction, GridFunction]]
    aux: np.ndarray | None = None
    sources: list[tuple[GridFunction, GridFunction]] | None = None
    flags: dict[str, Any] = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def vb(self, m: int) -> GridFunction:
        Wb, _ = self._frame(m)
        return Wb.translate(self.B[m] - self.B[0])

    def va(self, m: int) -> GridFunction:
        _, Wa = self._frame(m)
        return Wa.translate(-(self.A[m] - self.A[0]))

    def _frame(self, m: int):
        if m not in self.frames:
            raise ValidationError(f"densities were not recorded at step {m}")
        return self.frames[m]

    def state(self, m: int) -> LOBState:
        return LOBState(float(self.B[m]), self.vb(m), float(self.A[m]), self.va(m), float(self.tau_eta[m]))

    def jump_counts(self) -> tuple[int, int]:
        nb = sum(1 for j in self.jump_log if j[1] == "b")
        return nb, len(self.jump_log) - nb


def _on_grid(g: GridFunction, like: GridFunction) -> GridFunction:
    """Express ``g`` on the cells of ``like`` (cell-average interpolation if needed)."""
    if aligned(g, like):
        return g
    if not math.isclose(g.spacing, like.spacing, rel_tol=1e-12):
        raise ValidationError("source and density use different spacings")
    base = GridFunction(g.spacing, g.lo, g.values, like.origin)
    return shift_interp(base, g.origin - like.origin)


def simulate_eta(
    c: LimitCoefficients,
    h: float,
    T: float,
    init: LOBState,
    seed: Any = None,
    *,
    frame_steps=None,
    record_sources: bool = False,
    domain: tuple[float, float] | None = None,
    drivers: Drivers | None = None,
    aux0: int = 0,
) -> EtaPath:
    """Euler scheme for the limit system.

    Per step: coefficients at the current state, ``Poisson(Q(I) * h)`` jumps
    per side whose sizes use the pre-step state, a Gaussian increment and the
    volume source ``h * f``. ``frame_steps`` selects the steps whose
    densities are kept (default: first and last). ``domain`` bounds the
    support of the relative densities.
    """
    if not (h > 0 and T > 0):
        raise ValidationError("need h > 0 and T > 0")
    if init.bid > init.ask:
        raise ValidationError("initial bid above initial ask")
    steps = snap_floor(T / h)
    rng = _seeded(seed)
    if drivers is None:
        drivers = Drivers.draw(rng, steps, h, c.Q_b.total, c.Q_a.total, c.aux_rate)
    keep = {0, steps} if frame_steps is None else set(int(m) for m in frame_steps) | {0}

    B = np.zeros(steps + 1)
    A = np.zeros(steps + 1)
    phis = np.zeros(steps + 1)
    aux = np.zeros(steps + 1, np.int64)
    B[0], A[0], aux[0] = init.bid, init.ask, aux0
    Wb, Wa = init.vb, init.va
    frames = {0: (Wb, Wa)}
    jumps: list[tuple[float, str, float, float]] = []
    sources = [] if record_sources else None
    mk = 0
    sqh = math.sqrt(h)
    for m in range(steps):
        ob, oa = B[m] - B[0], A[m] - A[0]
        s = LOBState(float(B[m]), Wb.translate(ob), float(A[m]), Wa.translate(-oa), float(h * phis[m]))
        y = int(aux[m])
        pb, pa = c.p_b(s, y), c.p_a(s, y)
        rb, ra = c.r_b(s, y), c.r_a(s, y)
        ph = c.phi(s, y)
        if not all(math.isfinite(v) for v in (pb, pa, rb, ra, ph)):
            raise ModelFaultError(f"non-finite coefficient at step {m}")
        if rb < 0 or ra < 0 or not (0 < ph <= 1):
            raise ModelFaultError(f"coefficient out of range at step {m}")
        fb, fa = c.f_b(s, y), c.f_a(s, y)
        if sources is not None:
            sources.append((fb, fa))
        jb = 0.0
        for _ in range(int(drivers.N[m, 0])):
            mark = c.Q_b.sample(drivers.marks[mk])
            mk += 1
            size = float(c.theta_b(s, y, mark))
            jumps.append(((m + 1) * h, "b", mark, size))
            jb += size
        ja = 0.0
        for _ in range(int(drivers.N[m, 1])):
            mark = c.Q_a.sample(drivers.marks[mk])
            mk += 1
            size = float(c.theta_a(s, y, mark))
            jumps.append(((m + 1) * h, "a", mark, size))
            ja += size
        if fb.values.size:
            Wb = add(Wb, _on_grid(fb.translate(-ob), Wb), h)
        if fa.values.size:
            Wa = add(Wa, _on_grid(fa.translate(oa), Wa), h)
        B[m + 1] = B[m] + pb * h + rb * sqh * drivers.G[m, 0] + jb
        A[m + 1] = A[m] + pa * h + ra * sqh * drivers.G[m, 1] + ja
        phis[m + 1] = phis[m] + ph
        aux[m + 1] = y + drivers.aux_inc[m]
        if not (math.isfinite(B[m + 1]) and math.isfinite(A[m + 1])):
            raise ModelFaultError(f"non-finite price at step {m + 1}")
        if domain is not None:
            for g, off in ((Wb, B[m + 1] - B[0]), (Wa, -(A[m + 1] - A[0]))):
                sup = g.support()
                if sup is not None and (sup[0] + off < domain[0] or sup[1] + off > domain[1]):
                    raise DomainOverflowError(f"density support left {domain} at step {m + 1}")
        if m + 1 in keep:
            frames[m + 1] = (Wb, Wa)
    times = h * np.arange(steps + 1)
    return EtaPath(h, times, B, A, h * phis, jumps, frames, aux, sources)


@dataclass(frozen=True)
class TimeChange:
    """Inverse clock ``zeta`` of a limit path and the composed path ``S``."""

    path: EtaPath

    def zeta(self, t):
        """``inf{s : tau(s) > t}`` for the piecewise-linear clock."""
        tau, times = self.path.tau_eta, self.path.times
        t = np.asarray(t, dtype=float)
        return np.interp(t, tau, times)

    def index(self, t: float) -> int:
        """Step whose state is seen at physical time ``t``."""
        m = int(np.searchsorted(self.path.tau_eta, t, side="right")) - 1
        return min(max(m, 0), self.path.n_steps)

    def S(self, t: float) -> LOBState:
        return self.path.state(self.index(t))

    def prices(self, t) -> tuple[np.ndarray, np.ndarray]:
        idx = np.searchsorted(self.path.tau_eta, np.asarray(t, float), side="right") - 1
        idx = np.clip(idx, 0, self.path.n_steps)
        return self.path.B[idx], self.path.A[idx]

    def roundtrip_error(self) -> float:
        return float(np.max(np.abs(self.zeta(self.path.tau_eta) - self.path.times)))


def time_change(path: EtaPath) -> TimeChange:
    """Random time change of ``path``; needs a strictly increasing clock."""
    if not np.all(np.diff(path.tau_eta) > 0):
        raise ModelFaultError("clock is not strictly increasing")
    return TimeChange(path)
