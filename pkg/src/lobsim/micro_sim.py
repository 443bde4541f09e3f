"""Discrete-event engine for the n-th order-book model."""

from __future__ import annotations

import math
from typing import Any

import numpy as np

from .errors import ModelFaultError, OutOfRangeError, ValidationError
from .gridfn import is_tick_multiple
from .model import Event, EventLog, LOBState, ModelSpec, ScalingParams, Trajectory


def _move(price: float, xi: int, dx: float) -> float:
    # stay exactly on the tick lattice when the price starts on it
    if is_tick_multiple(price, dx):
        return (round(price / dx) + xi) * dx
    return price + xi * dx


def apply_event(s: LOBState, e: Event, p: ScalingParams) -> LOBState:
    """State after one event.

    A bid price change by ``xi`` ticks moves the bid and shifts the relative
    bid density so that absolute positions of standing volume are kept; the
    ask side mirrors this with the opposite orientation. Volume events add
    ``dv * omega / dx`` on the cell containing ``pi``.
    """
    t = s.time + e.phi_dur * p.dt
    if e.kind == "A":
        return LOBState(_move(s.bid, e.xi, p.dx), s.vb.shift_ticks(e.xi), s.ask, s.va, t)
    if e.kind == "C":
        return LOBState(s.bid, s.vb, _move(s.ask, e.xi, p.dx), s.va.shift_ticks(-e.xi), t)
    amount = p.dv * e.omega / p.dx
    if e.kind == "B":
        return LOBState(s.bid, s.vb.add_at(e.pi, amount), s.ask, s.va, t)
    return LOBState(s.bid, s.vb, s.ask, s.va.add_at(e.pi, amount), t)


def _seeded(seed: Any) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def simulate_path(
    spec: ModelSpec,
    p: ScalingParams,
    s0: LOBState,
    aux0: Any = None,
    seed: Any = None,
    *,
    engine: str = "auto",
    record_every: int = 1,
    **fast_opts,
) -> Trajectory:
    """Simulate ``floor(T / dt)`` events starting from ``s0``.

    ``engine="auto"`` uses a compiled simulator when the model provides one
    (``spec.simulate_fast``); ``engine="python"`` forces the generic loop
    which calls :meth:`ModelSpec.sample_event` once per tick. Both consume
    the random stream in the same order, so for a given seed they produce
    the same events.
    """
    if engine not in ("auto", "python", "fast"):
        raise ValidationError(f"unknown engine {engine!r}")
    if record_every < 1:
        raise ValidationError("record_every must be >= 1")
    if aux0 is None:
        aux0 = spec.initial_aux()
    fast = getattr(spec, "simulate_fast", None)
    if engine == "fast" or (engine == "auto" and fast is not None):
        if fast is None:
            raise ValidationError("model has no compiled simulator")
        return fast(s0, aux0, seed, record_every=record_every, **fast_opts)
    if fast_opts:
        raise ValidationError(f"options {sorted(fast_opts)} need the compiled engine")

    rng = _seeded(seed)
    K = p.n_ticks
    log = EventLog.empty(K)
    tau = np.zeros(K + 1)
    bid = np.zeros(K + 1)
    ask = np.zeros(K + 1)
    tau[0], bid[0], ask[0] = s0.time, s0.bid, s0.ask
    snaps = {0: s0}
    s, aux = s0, aux0
    for k in range(1, K + 1):
        e = spec.sample_event(s, aux, rng)
        vals = [e.phi_dur] + [v for v in (e.omega, e.pi) if v is not None]
        if not all(math.isfinite(v) for v in vals):
            raise ModelFaultError(f"non-finite event sampled at index {k}")
        s = apply_event(s, e, p)
        aux = spec.update_aux(aux, e, rng)
        log.set(k - 1, e)
        tau[k], bid[k], ask[k] = s.time, s.bid, s.ask
        if k % record_every == 0:
            snaps[k] = s
    return Trajectory(p, s0, log, tau, bid, ask, snaps, aux0=aux0)


def tick_at_time(tr: Trajectory, t: float) -> int:
    """Largest ``k`` with ``tau_k <= t``."""
    if not math.isfinite(t) or t < 0:
        raise OutOfRangeError(f"time {t} outside the horizon")
    if t > tr.tau[-1] and t > tr.params.T:
        raise OutOfRangeError(f"time {t} beyond last event time {tr.tau[-1]} and horizon {tr.params.T}")
    return int(np.searchsorted(tr.tau, t, side="right")) - 1


def physical_time_view(tr: Trajectory, t: float) -> LOBState:
    """State of the right-continuous path at physical time ``t``."""
    return tr.state(tick_at_time(tr, t))


def zeta(tau: np.ndarray, dt: float, t: float) -> float:
    """Inverse of the piecewise-linear interpolation ``u -> tau(u)`` on the tick grid."""
    k = int(np.searchsorted(tau, t, side="right")) - 1
    k = min(max(k, 0), len(tau) - 1)
    if k == len(tau) - 1:
        return k * dt
    return (k + (t - tau[k]) / (tau[k + 1] - tau[k])) * dt
