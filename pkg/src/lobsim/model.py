"""Core data types: book states, scaling parameters, events and trajectories."""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Iterator, Sequence

import numpy as np

from .errors import InvalidEventError, ModelFaultError, OutOfRangeError, ValidationError
from .gridfn import GridFunction, snap_floor

KINDS = ("A", "B", "C", "D")
KIND_CODE = {k: i for i, k in enumerate(KINDS)}


@dataclass(frozen=True)
class LOBState:
    """Best bid and ask prices, relative volume densities and physical time.

    ``vb(x)`` is the bid volume density at distance ``x`` below the best bid,
    ``va(x)`` the ask density at distance ``x`` above the best ask. Negative
    distances form the shadow book.
    """

    bid: float
    vb: GridFunction
    ask: float
    va: GridFunction
    time: float = 0.0

    def __post_init__(self) -> None:
        for name in ("bid", "ask", "time"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")


def spread(s: LOBState) -> float:
    return s.ask - s.bid


def top_volumes(s: LOBState, h: float) -> tuple[float, float]:
    """Standing volume within distance ``h`` of the best bid and best ask."""
    if not h > 0:
        raise ValidationError("depth h must be positive")
    return s.vb.integrate(0.0, h), s.va.integrate(0.0, h)


def imbalance(s: LOBState, h: float) -> float:
    """Fraction of the top-of-book volume that sits on the bid side."""
    vb, va = top_volumes(s, h)
    tot = vb + va
    if not tot > 0:
        raise ModelFaultError("imbalance undefined: no volume near the top of the book")
    return vb / tot


@dataclass(frozen=True)
class ScalingParams:
    """Step sizes of the n-th model.

    ``dx`` is the tick size, ``dt`` the time step, ``dv`` the volume step.
    ``delta_n`` separates small from large price changes, ``eta_n`` is the
    lower bound imposed on the small-change volatility, ``M`` the bound on
    jump sizes and ``T`` the horizon.
    """

    dx: float
    dt: float
    dv: float
    delta_n: float
    eta_n: float
    T: float
    M: float
    n: int | None = None
    dp: float | None = None

    def __post_init__(self) -> None:
        for name in ("dx", "dt", "dv", "delta_n", "eta_n", "T", "M"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be positive and finite, got {v}")
        if self.delta_n < self.dx * (1 - 1e-12):
            raise ValidationError("delta_n must be at least one tick")
        if self.M <= self.delta_n:
            raise ValidationError("jump bound M must exceed delta_n")

    @classmethod
    def power_law(
        cls,
        n: int,
        T: float = 2.0,
        M: float = 5.0,
        eta_exponent: float = 0.9,
    ) -> ScalingParams:
        """Scaling with ``dx = 1/n``, ``dp = n**-0.5``, ``dt = dv = dx**2 * dp``."""
        if int(n) != n or n < 2:
            raise ValidationError("n must be an integer >= 2")
        n = int(n)
        dx = 1.0 / n
        dp = n ** -0.5
        dt = dx * dx * dp
        return cls(dx=dx, dt=dt, dv=dt, delta_n=dx, eta_n=dx**eta_exponent, T=T, M=M, n=n, dp=dp)

    @property
    def n_ticks(self) -> int:
        """Number of events simulated, ``floor(T / dt)``."""
        return snap_floor(self.T / self.dt)

    def snap_price(self, x: float) -> float:
        """Nearest point of the tick lattice."""
        return round(x / self.dx) * self.dx

    def ticks(self, x: float) -> int:
        return int(round(x / self.dx))


@dataclass(frozen=True)
class Event:
    """One order-book event.

    ``kind`` is ``"A"`` (bid price change), ``"B"`` (bid volume), ``"C"`` (ask
    price change) or ``"D"`` (ask volume). Price events carry ``xi`` in ticks,
    volume events the size ``omega`` and relative location ``pi``.
    """

    kind: str
    xi: int | None = None
    omega: float | None = None
    pi: float | None = None
    phi_dur: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise InvalidEventError(f"unknown event kind {self.kind!r}")
        if not (math.isfinite(self.phi_dur) and self.phi_dur > 0):
            raise InvalidEventError("duration must be positive")
        if self.kind in ("A", "C"):
            if self.xi is None or int(self.xi) != self.xi:
                raise InvalidEventError("price events need an integer xi")
        else:
            if self.omega is None or self.pi is None:
                raise InvalidEventError("volume events need omega and pi")
            if not (math.isfinite(self.omega) and math.isfinite(self.pi)):
                raise InvalidEventError("omega and pi must be finite")


@dataclass
class EventLog:
    """Struct-of-arrays storage for long event sequences."""

    kind: np.ndarray
    xi: np.ndarray
    omega: np.ndarray
    pi: np.ndarray
    phi: np.ndarray

    @classmethod
    def empty(cls, k: int) -> EventLog:
        return cls(
            np.zeros(k, np.int8),
            np.zeros(k, np.int64),
            np.zeros(k),
            np.zeros(k),
            np.ones(k),
        )

    @classmethod
    def from_events(cls, events: Sequence[Event]) -> EventLog:
        log = cls.empty(len(events))
        for i, e in enumerate(events):
            log.set(i, e)
        return log

    def set(self, i: int, e: Event) -> None:
        self.kind[i] = KIND_CODE[e.kind]
        self.xi[i] = e.xi if e.xi is not None else 0
        self.omega[i] = e.omega if e.omega is not None else 0.0
        self.pi[i] = e.pi if e.pi is not None else 0.0
        self.phi[i] = e.phi_dur

    def __len__(self) -> int:
        return len(self.kind)

    def __getitem__(self, i: int) -> Event:
        k = KINDS[int(self.kind[i])]
        if k in ("A", "C"):
            return Event(k, xi=int(self.xi[i]), phi_dur=float(self.phi[i]))
        return Event(k, omega=float(self.omega[i]), pi=float(self.pi[i]), phi_dur=float(self.phi[i]))

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]


@dataclass
class Trajectory:
    """Simulated path of the n-th model.

    Prices and physical times are kept for every tick; full book states are
    kept at the ticks listed in ``snapshots`` and any other state is rebuilt
    by replaying events from the nearest earlier snapshot.
    """

    params: ScalingParams
    initial: LOBState
    log: EventLog
    tau: np.ndarray
    bid: np.ndarray
    ask: np.ndarray
    snapshots: dict[int, LOBState] = field(default_factory=dict)
    series: dict[str, np.ndarray] = field(default_factory=dict)
    aux0: Any = None
    flags: dict[str, Any] = field(default_factory=dict)

    @property
    def n_events(self) -> int:
        return len(self.log)

    @property
    def events(self) -> EventLog:
        return self.log

    def state(self, k: int) -> LOBState:
        """Book state after ``k`` events."""
        from .micro_sim import apply_event

        if not 0 <= k <= self.n_events:
            raise OutOfRangeError(f"tick {k} outside 0..{self.n_events}")
        if k in self.snapshots:
            return self.snapshots[k]
        base, s = 0, self.initial
        for j in self.snapshots:
            if base < j <= k:
                base, s = j, self.snapshots[j]
        for i in range(base, k):
            s = apply_event(s, self.log[i], self.params)
        return s

    @property
    def states(self) -> list[LOBState]:
        from .micro_sim import apply_event

        out = [self.initial]
        s = self.initial
        for e in self.log:
            s = apply_event(s, e, self.params)
            out.append(s)
        return out


class ModelSpec(ABC):
    """Event law of an n-th order-book model.

    Subclasses implement :meth:`sample_event`; the remaining hooks have
    neutral defaults. ``aux`` is an opaque exogenous state threaded through
    the simulation.
    """

    params: ScalingParams

    def initial_aux(self) -> Any:
        return None

    @abstractmethod
    def sample_event(self, state: LOBState, aux: Any, rng: np.random.Generator) -> Event:
        ...

    def update_aux(self, aux: Any, event: Event, rng: np.random.Generator) -> Any:
        return aux

    def mean_interarrival(self, state: LOBState, aux: Any) -> float:
        """Conditional mean of the next event duration."""
        return 1.0

    def placement_mean(self, state: LOBState, aux: Any, side: str) -> GridFunction:
        """Conditional mean of the volume change density on ``side``."""
        raise NotImplementedError

    def small_coefficients(self, state: LOBState, aux: Any) -> tuple[float, float, float, float]:
        """Drift and volatility ``(p_b, p_a, r_b, r_a)`` of small price changes."""
        raise NotImplementedError
