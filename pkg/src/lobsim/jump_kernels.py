"""Large-jump kernels, their reparametrisation and grid discretisation.

A family bundles a finite driving measure ``Q`` on ``[-M, M]``, a transform
``theta(s, x)``, the limit kernel ``K(s, .)`` and the n-th kernel
``K_n(s, ., p)`` supported on the tick grid. The families of interest satisfy

    Q(A) = K(s, theta(s, A)) + Q({x in A : theta(s, x) = 0})

for every cell ``A`` of the tick partition; :func:`verify_eqQ` measures the
worst violation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy import stats

from .errors import ConstructionError, LobsimError, ValidationError
from .gridfn import snap_ceil
from .model import ScalingParams


@dataclass(frozen=True)
class Measure:
    """Finite measure: atoms plus an optional absolutely continuous part.

    The continuous part is given by a non-decreasing ``cdf``; its mass on
    ``[a, b)`` is ``cdf(b) - cdf(a)``.
    """

    atoms: np.ndarray = field(default_factory=lambda: np.zeros(0))
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cdf: Callable[[float], float] | None = None
    support: tuple[float, float] = (-math.inf, math.inf)

    def __post_init__(self) -> None:
        a = np.asarray(self.atoms, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if a.shape != w.shape:
            raise ValidationError("atoms and weights differ in length")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValidationError("weights must be finite and non-negative")
        order = np.argsort(a, kind="stable")
        object.__setattr__(self, "atoms", a[order])
        object.__setattr__(self, "weights", w[order])

    @property
    def total(self) -> float:
        t = float(self.weights.sum())
        if self.cdf is not None:
            lo, hi = self.support
            t += float(self.cdf(hi) - self.cdf(lo))
        return t

    def mass_on(self, a: float, b: float) -> float:
        """Mass of the half-open interval ``[a, b)``.

        Atoms within a relative ``1e-12`` of an endpoint are treated as sitting
        on it, matching :meth:`point`.
        """
        if b <= a:
            return 0.0
        ta, tb = 1e-12 * max(1.0, abs(a)), 1e-12 * max(1.0, abs(b))
        sel = (self.atoms >= a - ta) & (self.atoms < b - tb)
        m = float(self.weights[sel].sum())
        if self.cdf is not None:
            lo, hi = self.support
            a2, b2 = max(a, lo), min(b, hi)
            if b2 > a2:
                m += float(self.cdf(b2) - self.cdf(a2))
        return m

    def point(self, x: float, tol: float = 1e-12) -> float:
        sel = np.abs(self.atoms - x) <= tol * max(1.0, abs(x))
        return float(self.weights[sel].sum())

    def scaled(self, c: float) -> Measure:
        cdf = None if self.cdf is None else (lambda x, f=self.cdf: c * f(x))
        return Measure(self.atoms, self.weights * c, cdf, self.support)

    def sample(self, u: float) -> float:
        """Inverse-CDF draw from the normalised measure for ``u`` in ``[0, 1)``."""
        tot = self.total
        if not tot > 0:
            raise ValidationError("cannot sample from a null measure")
        target = u * tot
        if self.cdf is None:
            cs = np.cumsum(self.weights)
            i = int(np.searchsorted(cs, target, side="right"))
            return float(self.atoms[min(i, len(self.atoms) - 1)])
        lo, hi = self.support
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ValidationError("continuous part needs a bounded support to sample")
        a, b = lo, hi
        for _ in range(200):
            mid = 0.5 * (a + b)
            if self.mass_on(lo, mid) + self.point(mid) <= target:
                a = mid
            else:
                b = mid
        return 0.5 * (a + b)


@dataclass(frozen=True)
class JumpKernelFamily:
    """Driving measure, transform and kernels for one side of the book.

    ``K(s)`` returns the limit kernel and ``K_n(s, p)`` the kernel of the
    n-th model on the tick grid of ``p``.
    """

    Q: Measure
    theta: Callable[[Any, float], float]
    K: Callable[[Any], Measure]
    K_n: Callable[[Any, ScalingParams], Measure]
    M: float
    side: str = "b"
    name: str = ""

    def __post_init__(self) -> None:
        if self.side not in ("b", "a"):
            raise ValidationError("side must be 'b' or 'a'")
        if not self.M > 0:
            raise ValidationError("M must be positive")
        if self.Q.point(0.0) > 0:
            raise ValidationError("Q must not charge 0")


def _ceil_tick(theta: float, dx: float) -> float:
    return snap_ceil(theta / dx) * dx + 0.0


def discretize_theta(fam: JumpKernelFamily, s: Any, j: int, p: ScalingParams) -> float:
    """Least tick multiple not below ``theta(s, j * dx)``."""
    x = j * p.dx
    if abs(x) > fam.M * (1 + 1e-12):
        raise ValidationError(f"grid point {x} outside [-M, M]")
    return _ceil_tick(fam.theta(s, x), p.dx)


def theta_n(fam: JumpKernelFamily, s: Any, x: float, p: ScalingParams) -> float:
    """Grid transform at any ``x``: linear interpolation between grid points."""
    q = x / p.dx
    j = math.floor(q)
    if abs(q - round(q)) <= 1e-9 * max(1.0, abs(q)):
        return discretize_theta(fam, s, round(q), p)
    w = q - j
    return (1 - w) * discretize_theta(fam, s, j, p) + w * discretize_theta(fam, s, j + 1, p)


def _zero_set_mass(fam: JumpKernelFamily, s: Any, a: float, b: float) -> float:
    """``Q({x in [a, b) : theta(s, x) = 0})`` for a non-decreasing transform."""
    Q = fam.Q
    m = 0.0
    for x, w in zip(Q.atoms, Q.weights):
        if a <= x < b and fam.theta(s, float(x)) == 0.0:
            m += float(w)
    if Q.cdf is None:
        return m
    ta, tb = fam.theta(s, a), fam.theta(s, b)
    if ta > 0 or tb < 0:
        return m
    # bracket the zero set inside [a, b] by bisection
    lo, hi = a, b
    if ta < 0:
        l, r = a, b
        for _ in range(200):
            mid = 0.5 * (l + r)
            if fam.theta(s, mid) < 0:
                l = mid
            else:
                r = mid
        lo = r
    if tb > 0:
        l, r = lo, b
        for _ in range(200):
            mid = 0.5 * (l + r)
            if fam.theta(s, mid) > 0:
                r = mid
            else:
                l = mid
        hi = l
    if hi > lo:
        sub = Measure(cdf=Q.cdf, support=Q.support)
        m += sub.mass_on(lo, hi)
    return m


def _image_mass(K: Measure, ta: float, tb: float, closed: bool = False) -> float:
    if ta == tb:
        return K.point(ta)
    if tb < ta:
        raise LobsimError("transform decreases on a cell")
    return K.mass_on(ta, tb) + (K.point(tb) if closed else 0.0)


def cell_defects(
    fam: JumpKernelFamily, s: Any, p: ScalingParams, kernel: Measure | None = None
) -> np.ndarray:
    """Signed defects ``Q(A) - K(theta(A)) - Q(A and {theta = 0})`` per tick cell.

    Cells on which ``theta`` is constant and non-zero while ``Q(A) = 0`` are
    reported as 0: the set identity does not constrain them.
    """
    K = fam.K(s) if kernel is None else kernel
    dx = p.dx
    j0 = -int(round(fam.M / dx))
    n_cells = -2 * j0
    out = np.zeros(n_cells)
    for i in range(n_cells):
        a = (j0 + i) * dx
        b = (j0 + i + 1) * dx
        qa = fam.Q.mass_on(a, b)
        if i == n_cells - 1:
            qa += fam.Q.point(fam.M)
        ta = fam.theta(s, a)
        tb = fam.theta(s, b)
        if not (math.isfinite(ta) and math.isfinite(tb)):
            raise LobsimError(f"transform not evaluable on [{a}, {b})")
        if ta == tb and ta != 0.0 and qa == 0.0:
            continue
        last = i == n_cells - 1
        z = _zero_set_mass(fam, s, a, b)
        if last and fam.theta(s, b) == 0.0:
            z += fam.Q.point(b)
        out[i] = qa - _image_mass(K, ta, tb, last) - z
    return out


def verify_eqQ(fam: JumpKernelFamily, states: Sequence[Any], p: ScalingParams) -> float:
    """Largest absolute cell defect of the reparametrisation identity over ``states``."""
    worst = 0.0
    for s in states:
        try:
            d = cell_defects(fam, s, p)
        except LobsimError:
            raise
        except Exception as exc:  # kernel callbacks are user code
            raise LobsimError(f"kernel not evaluable at a probe state: {exc}") from exc
        if d.size:
            worst = max(worst, float(np.max(np.abs(d))))
    return worst


def partition_defect(fam: JumpKernelFamily, s: Any, p: ScalingParams) -> float:
    """``sum_j |K_n(theta(cell_j)) - K(theta(cell_j))|`` over the tick partition."""
    K = fam.K(s)
    Kn = fam.K_n(s, p)
    dx = p.dx
    j0 = -int(round(fam.M / dx))
    tot = 0.0
    for i in range(-2 * j0):
        last = i == -2 * j0 - 1
        ta, tb = fam.theta(s, (j0 + i) * dx), fam.theta(s, (j0 + i + 1) * dx)
        tot += abs(_image_mass(Kn, ta, tb, last) - _image_mass(K, ta, tb, last))
    return tot


def theta_collisions(fam: JumpKernelFamily, s: Any, p: ScalingParams) -> int:
    """Number of grid points whose non-zero grid transforms coincide with another's."""
    dx = p.dx
    j0 = -int(round(fam.M / dx))
    seen: dict[int, int] = {}
    for i in range(-2 * j0):
        a = (j0 + i) * dx
        if fam.Q.mass_on(a, a + dx) <= 0:
            continue
        t = snap_ceil(fam.theta(s, a) / dx)
        if t == 0:
            continue
        seen[t] = seen.get(t, 0) + 1
    return sum(c - 1 for c in seen.values() if c > 1)


def small_atom_mass(Kn: Measure, p: ScalingParams) -> float:
    """Mass the n-th kernel puts on ``|x| <= delta_n``; zero for admissible kernels."""
    return Kn.mass_on(-p.delta_n, p.delta_n) + Kn.point(p.delta_n)


# ----------------------------------------------------------------------
# example families


def _as_fn(v) -> Callable[[Any], float]:
    return v if callable(v) else (lambda s, v=v: v)


def example_location_scale(
    F: Callable[[float], float],
    mu,
    sigma,
    M: float,
    side: str = "b",
    probe_states: Sequence[Any] = (),
) -> JumpKernelFamily:
    """Location-scale family ``theta(s, x) = sigma(s) * x + mu(s)``.

    ``F`` is a continuous distribution function on ``[-M, M]``; ``mu`` and
    ``sigma`` are constants or functions of the state, with ``sigma >= 1``.
    """
    mu_f, sig_f = _as_fn(mu), _as_fn(sigma)

    def sig(s):
        v = float(sig_f(s))
        if not v >= 1.0:
            raise ConstructionError(f"scale {v} < 1 at a probed state")
        return v

    for s in probe_states:
        sig(s)
    Fc = lambda x: float(F(min(max(x, -M), M)))  # noqa: E731
    Q = Measure(cdf=Fc, support=(-M, M))

    def theta(s, x):
        return sig(s) * x + float(mu_f(s))

    def K(s):
        sg, m = sig(s), float(mu_f(s))
        return Measure(cdf=lambda y: Fc((y - m) / sg), support=(-sg * M + m, sg * M + m))

    def K_n(s, p: ScalingParams):
        sg, m = sig(s), float(mu_f(s))
        n_cells = int(round(2 * M / p.dx))
        atoms, weights = [], []
        for i in range(n_cells):
            a = -M + i * p.dx
            w = Fc(a + p.dx) - Fc(a)
            if w <= 0:
                continue
            t = _ceil_tick(sg * a + m, p.dx)
            if abs(t) <= p.delta_n * (1 + 1e-9):
                continue
            atoms.append(t)
            weights.append(w)
        return Measure(np.array(atoms), np.array(weights))

    return JumpKernelFamily(Q, theta, K, K_n, M, side, "location_scale")


def example_binomial_poisson(
    lam: float,
    m0,
    M0,
    M: int,
    n: int,
    p_n=None,
    side: str = "b",
) -> JumpKernelFamily:
    """Integer-valued family: binomial n-th kernels and Poisson limit.

    ``Q`` puts Poisson(``lam``) weights on ``1 .. M``; the limit kernel puts
    the weight of ``k + M - M0`` on ``k`` for ``m0 <= k <= M0``; the n-th
    kernel uses Binomial(``n``, ``p_n``) weights instead.
    """
    if int(M) != M or M < 1:
        raise ValidationError("M must be a positive integer")
    m0_f, M0_f = _as_fn(m0), _as_fn(M0)
    pn_f = _as_fn(lam / n if p_n is None else p_n)
    ks = np.arange(1, M + 1)
    Q = Measure(ks.astype(float), stats.poisson.pmf(ks, lam))

    def bounds(s):
        a, b = int(m0_f(s)), int(M0_f(s))
        if not 1 <= a <= b <= M:
            raise ValidationError(f"need 1 <= m0 <= M0 <= M, got m0={a}, M0={b}")
        return a, b

    def theta(s, x):
        a, b = bounds(s)
        lo = M - b + a
        if x >= lo:
            return x - M + b
        if x > lo - 1:
            return a * (x - lo + 1)
        return 0.0

    def K(s):
        a, b = bounds(s)
        k = np.arange(a, b + 1)
        return Measure(k.astype(float), stats.poisson.pmf(k + M - b, lam))

    def K_n(s, p: ScalingParams):
        a, b = bounds(s)
        k = np.arange(a, b + 1)
        w = stats.binom.pmf(k + M - b, n, float(pn_f(s)))
        keep = np.abs(k) > p.delta_n * (1 + 1e-9)
        return Measure(k[keep].astype(float), w[keep])

    return JumpKernelFamily(Q, theta, K, K_n, float(M), side, "binomial_poisson")


def atom_tv_defect(fam: JumpKernelFamily, s: Any, p: ScalingParams) -> float:
    """``sum_k |K(s, {k}) - K_n(s, {k})|`` over the atoms of both kernels."""
    K, Kn = fam.K(s), fam.K_n(s, p)
    pts = np.union1d(K.atoms, Kn.atoms)
    return float(sum(abs(K.point(x) - Kn.point(x)) for x in pts))


def kernel_from_config(block: dict) -> JumpKernelFamily:
    """Build a family from a declarative config block.

    ``{"type": "location_scale", "mu": 0.3, "sigma": 1.5, "M": 1.0,
    "F": "uniform"}`` or ``{"type": "binomial_poisson", "lambda": 1,
    "m0": 1, "M0": 3, "M": 3, "n": 10000}``.
    """
    kind = block.get("type")
    if kind == "location_scale":
        M = float(block.get("M", 1.0))
        dist = block.get("F", "uniform")
        if dist == "uniform":
            F = lambda x: (x + M) / (2 * M)  # noqa: E731
        elif dist == "truncnorm":
            sc = float(block.get("scale", 0.5))
            z = stats.norm.cdf(M / sc) - stats.norm.cdf(-M / sc)
            F = lambda x: (stats.norm.cdf(x / sc) - stats.norm.cdf(-M / sc)) / z  # noqa: E731
        else:
            raise ValidationError(f"unknown distribution {dist!r}")
        return example_location_scale(F, float(block.get("mu", 0.0)), float(block.get("sigma", 1.0)), M)
    if kind == "binomial_poisson":
        return example_binomial_poisson(
            float(block.get("lambda", 1.0)),
            int(block.get("m0", 1)),
            int(block.get("M0", 3)),
            int(block.get("M", 3)),
            int(block.get("n", 10_000)),
        )
    if kind == "atoms":
        atoms = np.asarray(block["atoms"], float)
        weights = np.asarray(block["weights"], float)
        sizes = np.asarray(block["sizes"], float)
        M = float(block.get("M", max(1.0, float(np.max(np.abs(atoms))))))
        Q = Measure(atoms, weights)

        def theta(s, x):
            return float(np.interp(x, atoms, sizes))

        K = lambda s: Measure(sizes, weights)  # noqa: E731

        def K_n(s, p):
            t = np.array([_ceil_tick(v, p.dx) for v in sizes])
            keep = np.abs(t) > p.delta_n * (1 + 1e-9)
            return Measure(t[keep], weights[keep])

        return JumpKernelFamily(Q, theta, K, K_n, M, block.get("side", "b"), "atoms")
    raise ValidationError(f"unknown kernel type {kind!r}")
