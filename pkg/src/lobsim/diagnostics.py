"""Jump test, integrator reconstruction and remainder processes."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    AssumptionViolationError,
    DegenerateStatisticError,
    InsufficientRecordError,
    ValidationError,
)
from .gridfn import GridFunction, add
from .model import ModelSpec, ScalingParams, Trajectory

VARTHETA = math.pi**2 / 4 + math.pi - 5
MU1 = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class BnsResult:
    rv: float
    bpv: float
    qpv: float
    vartheta: float
    delta: float
    z: float

    def rejects(self, level: float = 0.05) -> bool:
        """One-sided test: jumps inflate ``rv - bpv``."""
        from scipy.stats import norm

        return self.z > norm.ppf(1.0 - level)


def bns_statistic(x, delta: float) -> BnsResult:
    """Bi-power variation jump statistic of a price series sampled every ``delta``."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 5:
        raise ValidationError("need at least five observations")
    if not (delta > 0 and math.isfinite(delta)):
        raise ValidationError("delta must be positive")
    if not np.all(np.isfinite(x)):
        raise ValidationError("prices must be finite")
    a = np.abs(np.diff(x))
    rv = float(np.sum(a * a))
    bpv = float(np.sum(a[1:] * a[:-1])) / MU1**2
    qpv = float(np.sum(a[3:] * a[2:-1] * a[1:-2] * a[:-3])) / (delta * MU1**4)
    if not qpv > 0:
        raise DegenerateStatisticError("quad-power variation vanishes")
    z = math.sqrt(1.0 / (delta * VARTHETA * qpv)) * (rv - bpv)
    return BnsResult(rv, bpv, qpv, VARTHETA, float(delta), z)


def read_price_csv(source: str | Path, rtol: float = 1e-9) -> tuple[np.ndarray, np.ndarray, float]:
    """Read ``time, price`` rows and check that the times are equally spaced.

    ``source`` is a file path or the CSV text itself (any string with a newline).
    """
    text = str(source) if isinstance(source, str) and "\n" in source else Path(source).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0][:2]] != ["time", "price"]:
        raise ValidationError("expected a header 'time,price'")
    try:
        data = np.array([[float(r[0]), float(r[1])] for r in rows[1:] if r], dtype=float)
    except (ValueError, IndexError) as exc:
        raise ValidationError(f"malformed price row: {exc}") from None
    if data.shape[0] < 2:
        raise ValidationError("need at least two rows")
    dts = np.diff(data[:, 0])
    delta = float(dts.mean())
    if not delta > 0 or np.max(np.abs(dts - delta)) > rtol * delta:
        raise ValidationError("times are not equally spaced")
    return data[:, 0], data[:, 1], delta


# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Integrators:
    """Reconstructed driving noises on the tick grid with their realized (co)variations."""

    Zb: np.ndarray
    Za: np.ndarray
    qv_b: np.ndarray
    qv_a: np.ndarray
    cross: np.ndarray

    @property
    def qv(self) -> np.ndarray:
        return self.qv_b


def _coefficients(tr: Trajectory, spec: ModelSpec):
    series = getattr(spec, "coefficient_series", None)
    if series is not None and "volb" in tr.series:
        return tuple(np.asarray(v, float) for v in series(tr))
    K = tr.n_events
    if K == 0 and len(tr.bid) > 1:
        raise InsufficientRecordError("trajectory has no events to replay")
    out = np.zeros((4, K))
    aux = tr.aux0
    for k, (s, e) in enumerate(zip(tr.states, tr.log)):
        out[:, k] = spec.small_coefficients(s, aux)
        aux = spec.update_aux(aux, e, np.random.default_rng(0))
    return tuple(out)


def build_integrators(tr: Trajectory, spec: ModelSpec, p: ScalingParams | None = None) -> Integrators:
    """Normalised small-price-change martingales of the bid and the ask.

    Increments are ``(dB 1{0 < |dB| <= delta_n} - dt p_b) / r_b`` with the
    coefficients at the pre-event state. Aux updates in the generic route
    must not depend on the random generator.
    """
    p = tr.params if p is None else p
    pb, pa, rb, ra = _coefficients(tr, spec)
    low = np.minimum(rb, ra)
    if low.size and np.min(low) < p.eta_n:
        k = int(np.argmin(low))
        raise AssumptionViolationError(f"volatility {low[k]:.3g} below eta_n = {p.eta_n:.3g} at tick {k}")
    lim = p.delta_n * (1 + 1e-9)
    dB = np.diff(tr.bid)
    dA = np.diff(tr.ask)
    sb = np.where((dB != 0) & (np.abs(dB) <= lim), dB, 0.0)
    sa = np.where((dA != 0) & (np.abs(dA) <= lim), dA, 0.0)
    zb = (sb - p.dt * pb) / rb
    za = (sa - p.dt * pa) / ra

    def cum(v):
        return np.concatenate([[0.0], np.cumsum(v)])

    return Integrators(cum(zb), cum(za), cum(zb * zb), cum(za * za), cum(zb * za))


# ----------------------------------------------------------------------
@dataclass(frozen=True)
class RemainderReport:
    sup_Rphi: float
    sup_Rb_L2: float
    sup_Ra_L2: float
    n: int | None

    def __post_init__(self) -> None:
        if min(self.sup_Rphi, self.sup_Rb_L2, self.sup_Ra_L2) < 0:
            raise ValidationError("remainder norms are non-negative")


def remainder_norms(tr: Trajectory, spec: ModelSpec, p: ScalingParams | None = None) -> RemainderReport:
    """Suprema over the horizon of ``|R_phi|`` and of the L2 norms of ``R_b``, ``R_a``.

    ``R_phi`` sums ``dt (phi_k - phi_n(S_{k-1}))``; ``R_b`` sums the realized
    volume changes minus ``dv f_b(S_{k-1})`` and is transported with the bid
    like the density itself. Uses the compiled simulator's running totals
    when present.
    """
    p = tr.params if p is None else p
    f = tr.flags
    if "sup_R_b_sq" in f:
        return RemainderReport(
            float(f["sup_R_phi"]),
            math.sqrt(max(f["sup_R_b_sq"], 0.0)),
            math.sqrt(max(f["sup_R_a_sq"], 0.0)),
            p.n,
        )
    if tr.n_events == 0 and len(tr.bid) > 1:
        raise InsufficientRecordError("trajectory was stored without events")
    dx, dt, dv = p.dx, p.dt, p.dv
    empty = GridFunction(dx, 0, np.zeros(0))
    Rb, Ra = empty, empty
    rphi = sup_phi = sup_b = sup_a = 0.0
    aux = tr.aux0
    s = tr.initial
    from .micro_sim import apply_event

    rng = np.random.default_rng(0)
    for e in tr.log:
        rphi += dt * (e.phi_dur - spec.mean_interarrival(s, aux))
        Rb = add(Rb, spec.placement_mean(s, aux, "b"), -dv)
        Ra = add(Ra, spec.placement_mean(s, aux, "a"), -dv)
        if e.kind == "A":
            Rb = Rb.shift_ticks(e.xi)
        elif e.kind == "C":
            Ra = Ra.shift_ticks(-e.xi)
        elif e.kind == "B":
            Rb = Rb.add_at(e.pi, dv * e.omega / dx)
        else:
            Ra = Ra.add_at(e.pi, dv * e.omega / dx)
        s = apply_event(s, e, p)
        aux = spec.update_aux(aux, e, rng)
        sup_phi = max(sup_phi, abs(rphi))
        sup_b = max(sup_b, Rb.l2_norm())
        sup_a = max(sup_a, Ra.l2_norm())
    return RemainderReport(sup_phi, sup_b, sup_a, p.n)


