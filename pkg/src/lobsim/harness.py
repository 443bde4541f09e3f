"""Ensembles, distributional distances, convergence experiments and assumption checks."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, Sequence

import numpy as np

from .diagnostics import RemainderReport, build_integrators, remainder_norms
from .errors import LobsimError, ModelFaultError, ValidationError
from .gridfn import l2_distance
from .model import LOBState, ModelSpec, ScalingParams, imbalance

QUANTITIES = ("bid", "ask", "spread", "imbalance", "l2_vb", "l2_va")


# ----------------------------------------------------------------------
# samplers
@dataclass
class PathSample:
    states: dict[float, LOBState]
    remainder: RemainderReport | None = None
    qv: tuple[float, float] | None = None


class Sampler(Protocol):
    def sample(self, rng: np.random.Generator, probes: Sequence[float]) -> PathSample: ...


@dataclass
class MicroSampler:
    """Physical-time marginals of the n-th model.

    ``diagnostics`` additionally records the remainder suprema and the
    realized quadratic and cross variation of the integrators at the end.
    """

    spec: ModelSpec
    diagnostics: bool = False

    def sample(self, rng, probes):
        from .micro_sim import physical_time_view, simulate_path

        spec, p = self.spec, self.spec.params
        fast = getattr(spec, "simulate_fast", None)
        if fast is not None:
            tr = fast(seed=rng, probe_times=probes, track_remainders=self.diagnostics, keep_events=False)
            states = {float(t): s for t, (_, s) in tr.flags["probes"].items()}
        else:
            tr = simulate_path(spec, p, spec.initial_state(), seed=rng, engine="python")
            states = {float(t): physical_time_view(tr, t) for t in probes}
        out = PathSample(states)
        if self.diagnostics:
            out.remainder = remainder_norms(tr, spec)
            ig = build_integrators(tr, spec)
            out.qv = (float(ig.qv_b[-1]), float(ig.cross[-1]))
        return out


@dataclass
class LimitSampler:
    """Physical-time marginals of a limit path, through the composed path ``S``."""

    limit: Any
    engine: str = "fast"

    def sample(self, rng, probes):
        from .limit_sim import time_change

        path = self.limit.simulate(rng, probe_times=probes, engine=self.engine)
        tc = time_change(path)
        return PathSample({float(t): tc.S(t) for t in probes})


@dataclass
class GenericLimitSampler:
    """Limit sampler for arbitrary coefficient functions."""

    coefficients: Any
    init: LOBState
    h: float
    T: float

    def sample(self, rng, probes):
        from .gridfn import snap_floor
        from .limit_sim import Drivers, simulate_eta, time_change

        c = self.coefficients
        steps = snap_floor(self.T / self.h)
        drivers = Drivers.draw(rng, steps, self.h, c.Q_b.total, c.Q_a.total, c.aux_rate)
        # a first pass finds the steps the clock maps the probes to
        path = simulate_eta(c, self.h, self.T, self.init, drivers=drivers, frame_steps=[])
        idx = sorted({time_change(path).index(t) for t in probes})
        path = simulate_eta(c, self.h, self.T, self.init, drivers=drivers, frame_steps=idx)
        tc = time_change(path)
        return PathSample({float(t): tc.S(t) for t in probes})


def as_sampler(obj) -> Sampler:
    from .limit_sim import LimitCoefficients
    from .sim_study import SimStudyLimit

    if hasattr(obj, "sample"):
        return obj
    if isinstance(obj, ModelSpec):
        return MicroSampler(obj)
    if isinstance(obj, SimStudyLimit):
        return LimitSampler(obj)
    if isinstance(obj, LimitCoefficients):
        raise ValidationError("wrap limit coefficients in GenericLimitSampler(coefficients, init, h, T)")
    raise ValidationError(f"cannot sample from {type(obj).__name__}")


# ----------------------------------------------------------------------
# ensembles
def path_rng(master_seed: int, i: int) -> np.random.Generator:
    """Generator of path ``i``; independent of how many paths are run or in what order."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(i,)))


def default_threads() -> int:
    v = os.environ.get("LOBSIM_THREADS")
    if v:
        try:
            n = int(v)
        except ValueError:
            raise ValidationError(f"LOBSIM_THREADS must be an integer, got {v!r}") from None
        if n < 1:
            raise ValidationError("LOBSIM_THREADS must be >= 1")
        return n
    return 1


def _quantities(s: LOBState, depth: float) -> list[float]:
    try:
        im = imbalance(s, depth)
    except ModelFaultError:
        im = math.nan
    return [s.bid, s.ask, s.ask - s.bid, im, s.vb.l2_norm(), s.va.l2_norm()]


@dataclass
class EnsembleSummary:
    """Per probe time, one sample per successful path of each quantity in :data:`QUANTITIES`."""

    probes: tuple[float, ...]
    samples: dict[float, dict[str, np.ndarray]]
    paths: np.ndarray
    failures: list[tuple[int, str]] = field(default_factory=list)
    remainders: list[RemainderReport] = field(default_factory=list)
    qv: np.ndarray | None = None

    def __getitem__(self, key: tuple[float, str]) -> np.ndarray:
        t, q = key
        return self.samples[float(t)][q]


def run_ensemble(
    model,
    n_paths: int,
    master_seed: int,
    probes: Sequence[float],
    *,
    threads: int | None = None,
    depth: float | None = None,
    path_ids: Sequence[int] | None = None,
    max_fail_frac: float = 0.01,
) -> EnsembleSummary:
    """Run independent paths and collect the marginals at the probe times.

    Path ``i`` uses ``SeedSequence(master_seed, spawn_key=(i,))``. Failing
    paths are recorded with their index; more than ``max_fail_frac`` of
    failures aborts the run.
    """
    if n_paths < 1:
        raise ValidationError("n_paths must be >= 1")
    probes = tuple(float(t) for t in probes)
    sampler = as_sampler(model)
    if depth is None:
        sp = getattr(getattr(sampler, "spec", None), "sp", None) or getattr(getattr(sampler, "limit", None), "sp", None)
        depth = sp.h if sp is not None else 1.0
    ids = list(range(n_paths)) if path_ids is None else [int(i) for i in path_ids]
    threads = default_threads() if threads is None else int(threads)

    def one(i):
        try:
            return i, sampler.sample(path_rng(master_seed, i), probes), None
        except (LobsimError, FloatingPointError) as exc:
            return i, None, f"{type(exc).__name__}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(one, ids))
    else:
        results = [one(i) for i in ids]

    failures = [(i, msg) for i, _, msg in results if msg is not None]
    if len(failures) > max_fail_frac * len(ids):
        raise ModelFaultError(f"{len(failures)} of {len(ids)} paths failed; first: {failures[0]}")
    ok = [(i, r) for i, r, msg in results if msg is None]
    samples = {}
    for t in probes:
        vals = np.array([_quantities(r.states[t], depth) for _, r in ok]).reshape(len(ok), len(QUANTITIES))
        samples[t] = {q: vals[:, j] for j, q in enumerate(QUANTITIES)}
    rem = [r.remainder for _, r in ok if r.remainder is not None]
    qv = np.array([r.qv for _, r in ok if r.qv is not None]) if any(r.qv for _, r in ok) else None
    return EnsembleSummary(probes, samples, np.array([i for i, _ in ok]), failures, rem, qv)


# ----------------------------------------------------------------------
# distances
def _clean(x) -> np.ndarray:
    x = np.sort(np.asarray(x, dtype=float).ravel())
    if x.size == 0:
        raise ValidationError("empty sample")
    if not np.all(np.isfinite(x)):
        raise ValidationError("samples must be finite")
    return x


def ks_distance(xs, ys) -> float:
    """Exact two-sample Kolmogorov-Smirnov distance of the empirical laws."""
    x, y = _clean(xs), _clean(ys)
    grid = np.concatenate([x, y])
    fx = np.searchsorted(x, grid, side="right") / x.size
    fy = np.searchsorted(y, grid, side="right") / y.size
    return float(np.max(np.abs(fx - fy)))


def w1_distance(xs, ys) -> float:
    """Exact 1-Wasserstein distance: integral of ``|F_x - F_y|``."""
    x, y = _clean(xs), _clean(ys)
    grid = np.concatenate([x, y])
    grid.sort()
    fx = np.searchsorted(x, grid[:-1], side="right") / x.size
    fy = np.searchsorted(y, grid[:-1], side="right") / y.size
    return float(np.sum(np.abs(fx - fy) * np.diff(grid)))


def mc_floor(ys, n_boot: int = 200, seed: int = 0) -> float:
    """Bootstrap estimate of the KS distance expected from sampling noise alone.

    Random half-splits of one ensemble give ``KS(half, half)``; dividing by
    ``sqrt(2)`` rescales to two full-size independent samples.
    """
    y = np.asarray(ys, dtype=float).ravel()
    if y.size < 4:
        raise ValidationError("need at least four samples for a split")
    rng = np.random.default_rng(seed)
    h = y.size // 2
    vals = []
    for _ in range(n_boot):
        perm = rng.permutation(y.size)
        vals.append(ks_distance(y[perm[:h]], y[perm[h : 2 * h]]))
    return float(np.mean(vals)) / math.sqrt(2.0)


# ----------------------------------------------------------------------
# convergence experiment
@dataclass
class ConvergenceReport:
    """Long-format rows ``(metric, n, t, value)``; ``n`` is ``None`` for limit-only rows."""

    rows: list[tuple[str, int | None, float | None, float]]

    def value(self, metric: str, n: int | None = None, t: float | None = None) -> float:
        for m, nn, tt, v in self.rows:
            if m == metric and nn == n and (t is None or tt == t):
                return v
        raise KeyError((metric, n, t))

    def series(self, metric: str, t: float | None = None) -> dict[int, float]:
        return {nn: v for m, nn, tt, v in self.rows if m == metric and (t is None or tt == t) and nn is not None}

    def to_csv(self) -> str:
        lines = ["metric,n,t,value"]
        for m, n, t, v in self.rows:
            lines.append(f"{m},{'' if n is None else n},{'' if t is None else repr(t)},{v!r}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> list[dict]:
        return [{"metric": m, "n": n, "t": t, "value": v} for m, n, t, v in self.rows]


def convergence_report(
    family: Callable[[int], Any],
    limit,
    ns: Sequence[int],
    probes: Sequence[float],
    n_paths: int,
    seed: int,
    *,
    diagnostics: bool = False,
    threads: int | None = None,
    n_boot: int = 200,
) -> ConvergenceReport:
    """Distances between micro and limit marginals of the prices per ``n`` and probe.

    ``family(n)`` returns a model or sampler. With ``diagnostics`` the
    micro paths also report mean squared remainder suprema and mean
    integrator quadratic/cross variation at the horizon.
    """
    probes = tuple(float(t) for t in probes)
    lim = run_ensemble(limit, n_paths, seed, probes, threads=threads)
    rows: list[tuple[str, int | None, float | None, float]] = []
    for t in probes:
        rows.append(("mc_floor_B", None, t, mc_floor(lim[t, "bid"], n_boot, seed)))
        rows.append(("mc_floor_A", None, t, mc_floor(lim[t, "ask"], n_boot, seed)))
    for n in ns:
        model = family(n)
        if diagnostics and isinstance(model, ModelSpec):
            model = MicroSampler(model, diagnostics=True)
        # micro ensembles use seeds disjoint from the limit ensemble
        mic = run_ensemble(model, n_paths, seed + 1 + int(n), probes, threads=threads)
        for t in probes:
            for q, tag in (("bid", "B"), ("ask", "A")):
                rows.append((f"ks_{tag}", int(n), t, ks_distance(mic[t, q], lim[t, q])))
                rows.append((f"w1_{tag}", int(n), t, w1_distance(mic[t, q], lim[t, q])))
        if mic.remainders:
            rows.append(("E_sup_Rphi_sq", int(n), None, float(np.mean([r.sup_Rphi**2 for r in mic.remainders]))))
            rows.append(("E_sup_Rb_sq", int(n), None, float(np.mean([r.sup_Rb_L2**2 for r in mic.remainders]))))
            rows.append(("E_sup_Ra_sq", int(n), None, float(np.mean([r.sup_Ra_L2**2 for r in mic.remainders]))))
        if mic.qv is not None:
            rows.append(("mean_qv_b", int(n), None, float(np.mean(mic.qv[:, 0]))))
            rows.append(("mean_cross_qv", int(n), None, float(np.mean(mic.qv[:, 1]))))
        rows.append(("failed_paths", int(n), None, float(len(mic.failures))))
    return ConvergenceReport(rows)


def decreasing_to_floor(values: Sequence[float], floor: float) -> bool:
    """Decay check: at most one inversion, and an inverted value stays within ``2 * floor``."""
    inv = [i for i in range(1, len(values)) if values[i] > values[i - 1]]
    if len(inv) > 1:
        return False
    return all(values[i] <= 2.0 * floor for i in inv)


# ----------------------------------------------------------------------
# assumption validation
@dataclass(frozen=True)
class CheckRow:
    id: str
    check: str
    value: float
    target: str
    ok: bool


def _state_distance(s: LOBState, t: LOBState) -> float:
    return abs(s.bid - t.bid) + abs(s.ask - t.ask) + l2_distance(s.vb, t.vb) + l2_distance(s.va, t.va)


def validate_assumptions(
    spec: ModelSpec,
    p: ScalingParams,
    probe_states: Sequence[LOBState],
    *,
    aux: Any = None,
    kernels: Sequence[Any] = (),
    kernel_states: Sequence[Any] | None = None,
    eq_tol: float = 1e-12,
) -> list[CheckRow]:
    """Numerical checks of the structural conditions at the probe states; never raises on a failed check."""
    from .jump_kernels import small_atom_mass, verify_eqQ

    rows: list[CheckRow] = []
    states = list(probe_states)
    if aux is None:
        aux = spec.initial_aux()

    def safe(fn, *a):
        try:
            return fn(*a), None
        except NotImplementedError:
            return None, "not provided"
        except (LobsimError, ArithmeticError, ValueError) as exc:
            return None, str(exc)

    # interarrival times
    phis = [safe(spec.mean_interarrival, s, aux)[0] for s in states]
    vals = [v for v in phis if v is not None]
    top = max(vals) if vals else math.nan
    rows.append(CheckRow("interarrival.bounded", "max mean interarrival", top, "finite, > 0",
                         bool(vals) and all(math.isfinite(v) and v > 0 for v in vals)))  # fmt: skip

    # small price changes
    coefs = [safe(spec.small_coefficients, s, aux) for s in states]
    got = [c for c, err in coefs if c is not None]
    if got:
        arr = np.array(got)
        bound = float(np.max(np.abs(arr)))
        rows.append(CheckRow("price_changes.bounded", "max |p|, |r|", bound, "finite", math.isfinite(bound)))
        rmin = float(np.min(arr[:, 2:]))
        rows.append(CheckRow("price_changes.volatility_floor", "min r over probes", rmin, f">= eta_n = {p.eta_n:.6g}",
                             rmin >= p.eta_n))  # fmt: skip
    else:
        err = coefs[0][1] if coefs else "no probe states"
        rows.append(CheckRow("price_changes.volatility_floor", f"coefficients unavailable: {err}", math.nan, "", False))

    # placements and cancellations
    fs = []
    for s in states:
        fb, _ = safe(spec.placement_mean, s, aux, "b")
        fa, _ = safe(spec.placement_mean, s, aux, "a")
        if fb is not None and fa is not None:
            fs.append((s, fb, fa))
    if fs:
        sup = max(max(np.max(np.abs(fb.values), initial=0.0), np.max(np.abs(fa.values), initial=0.0)) for _, fb, fa in fs)
        rows.append(CheckRow("placements.bounded", "max sup |f|", float(sup), "finite", math.isfinite(sup)))
        ratio = 0.0
        for (s, fb, fa), (t, gb, ga) in zip(fs, fs[1:]):
            d = _safe_distance(s, t)
            if d and d > 0:
                ratio = max(ratio, (l2_distance(fb, gb) + l2_distance(fa, ga)) / d)
        rows.append(CheckRow("placements.lipschitz", "max sampled-pair ratio for f", ratio, "finite", math.isfinite(ratio)))

    ratio = 0.0
    for (s, a), (t, b) in zip(zip(states, phis), zip(states[1:], phis[1:])):
        d = _safe_distance(s, t)
        if a is not None and b is not None and d:
            ratio = max(ratio, abs(a - b) / d)
    rows.append(CheckRow("interarrival.lipschitz", "max sampled-pair ratio for phi", ratio, "finite", math.isfinite(ratio)))

    # large jumps
    ks = list(kernel_states) if kernel_states is not None else states
    for fam in kernels:
        tag = fam.name or fam.side
        mass, err = safe(lambda: max((small_atom_mass(fam.K_n(s, p), p) for s in ks), default=0.0))
        rows.append(CheckRow(f"large_jumps.support[{tag}]", "kernel mass on |x| <= delta_n",
                             math.nan if mass is None else mass, "0", mass == 0.0))  # fmt: skip
        d, err = safe(verify_eqQ, fam, ks, p)
        rows.append(CheckRow(f"large_jumps.reparametrisation[{tag}]", "max cell defect" + (f" ({err})" if err else ""),
                             math.nan if d is None else d, f"<= {eq_tol:g}", d is not None and d <= eq_tol))  # fmt: skip
        ratio = 0.0
        ys = fam.Q.atoms if fam.Q.atoms.size else np.linspace(-fam.M, fam.M, 9)
        for s, t in zip(ks, ks[1:]):
            dd = _safe_distance(s, t)
            if dd:
                for y in ys:
                    ratio = max(ratio, abs(fam.theta(s, y) - fam.theta(t, y)) / dd)
        rows.append(CheckRow(f"large_jumps.lipschitz[{tag}]", "max sampled-pair ratio for theta", ratio, "finite",
                             math.isfinite(ratio)))  # fmt: skip

    # scaling relations
    rows.append(CheckRow("scaling.dt_over_dx", "dt / dx", p.dt / p.dx, "-> 0 (<= dx)", p.dt / p.dx <= p.dx))
    rows.append(CheckRow("scaling.dt_over_dv", "dt / dv", p.dt / p.dv, "-> 1", math.isclose(p.dt / p.dv, 1.0, rel_tol=1e-9)))

    # non-negativity
    bad = 0
    for s in states:
        bad += int(not s.bid > 0) + int(not s.ask > s.bid)
        bad += int(np.any(s.vb.values < 0)) + int(np.any(s.va.values < 0))
    rows.append(CheckRow("nonnegativity", "violations at probes", float(bad), "0", bad == 0))
    return rows


def _safe_distance(s, t) -> float | None:
    if not (isinstance(s, LOBState) and isinstance(t, LOBState)):
        return None
    try:
        return _state_distance(s, t)
    except LobsimError:
        return None


def failed(rows: Sequence[CheckRow]) -> list[CheckRow]:
    return [r for r in rows if not r.ok]
