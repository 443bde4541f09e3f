"""Piecewise-constant functions on a uniform tick grid.

A :class:`GridFunction` stores the values of a step function on the cells
``[origin + j*spacing, origin + (j+1)*spacing)`` for ``j`` in a finite window
``lo, ..., lo + len(values) - 1``. Outside the window the function is zero.

Tick shifts only move ``lo`` and are exact. Real translations move
``origin`` and are exact as well; :func:`shift_interp` and
:func:`axpy_shifted` instead return a function on the original grid and
use cell-average (linear) interpolation for non-integer shifts.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DomainOverflowError, GridMismatchError, ValidationError

_SNAP = 1e-9


def snap_floor(q: float) -> int:
    """Floor that treats values within ``1e-9`` of an integer as that integer."""
    r = round(q)
    if abs(q - r) <= _SNAP * max(1.0, abs(q)):
        return int(r)
    return int(math.floor(q))


def snap_ceil(q: float) -> int:
    """Ceiling with the same integer snapping as :func:`snap_floor`."""
    r = round(q)
    if abs(q - r) <= _SNAP * max(1.0, abs(q)):
        return int(r)
    return int(math.ceil(q))


def is_tick_multiple(x: float, spacing: float) -> bool:
    q = x / spacing
    return abs(q - round(q)) <= _SNAP * max(1.0, abs(q))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Step function on a uniform grid.

    Parameters
    ----------
    spacing : float
        Cell width, strictly positive.
    lo : int
        Index of the first stored cell.
    values : ndarray
        Cell values; stored read-only.
    origin : float
        Left edge of cell 0. Defaults to 0 so that cells are tick aligned.
    domain : tuple of float, optional
        Interval the support must stay inside under :func:`axpy_shifted`.
    """

    spacing: float
    lo: int
    values: np.ndarray
    origin: float = 0.0
    domain: tuple[float, float] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not (self.spacing > 0 and math.isfinite(self.spacing)):
            raise ValidationError(f"spacing must be positive, got {self.spacing}")
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.ndim != 1:
            raise ValidationError("values must be one-dimensional")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "lo", int(self.lo))
        object.__setattr__(self, "origin", float(self.origin))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GridFunction):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.lo == other.lo
            and self.origin == other.origin
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None  # type: ignore[assignment]

    # ------------------------------------------------------------------
    # construction
    @classmethod
    def zeros(cls, spacing: float, x_lo: float, x_hi: float, **kw) -> GridFunction:
        lo = snap_floor(x_lo / spacing)
        hi = snap_ceil(x_hi / spacing)
        return cls(spacing, lo, np.zeros(max(hi - lo, 0)), **kw)

    @classmethod
    def from_antiderivative(
        cls,
        F: Callable[[np.ndarray], np.ndarray],
        spacing: float,
        x_lo: float,
        x_hi: float,
        **kw,
    ) -> GridFunction:
        """Cell averages of a density given through an antiderivative ``F``."""
        lo = snap_floor(x_lo / spacing)
        hi = snap_ceil(x_hi / spacing)
        edges = (np.arange(lo, hi + 1)) * spacing
        vals = np.diff(F(edges)) / spacing
        return cls(spacing, lo, vals, **kw)

    @classmethod
    def from_function(
        cls, fn: Callable[[np.ndarray], np.ndarray], spacing: float, x_lo: float, x_hi: float, **kw
    ) -> GridFunction:
        """Midpoint samples of ``fn`` on the cells covering ``[x_lo, x_hi)``."""
        lo = snap_floor(x_lo / spacing)
        hi = snap_ceil(x_hi / spacing)
        mids = (np.arange(lo, hi) + 0.5) * spacing
        return cls(spacing, lo, np.asarray(fn(mids), dtype=float), **kw)

    # ------------------------------------------------------------------
    @property
    def hi(self) -> int:
        """One past the last stored cell index."""
        return self.lo + len(self.values)

    def edges(self) -> np.ndarray:
        return self.origin + np.arange(self.lo, self.hi + 1) * self.spacing

    def left_edges(self) -> np.ndarray:
        return self.origin + np.arange(self.lo, self.hi) * self.spacing

    def cell_index(self, x: float) -> int:
        return snap_floor((x - self.origin) / self.spacing)

    def eval(self, x: float) -> float:
        """Value of the cell containing ``x``; zero outside the window."""
        if not math.isfinite(x):
            raise ValidationError("cannot evaluate at a non-finite point")
        j = self.cell_index(x) - self.lo
        if 0 <= j < len(self.values):
            return float(self.values[j])
        return 0.0

    def __call__(self, x):
        if np.ndim(x) == 0:
            return self.eval(float(x))
        return np.array([self.eval(float(t)) for t in np.ravel(x)]).reshape(np.shape(x))

    def support(self) -> tuple[float, float] | None:
        """Closed hull of the cells with non-zero value, or ``None``."""
        nz = np.flatnonzero(self.values)
        if nz.size == 0:
            return None
        a = self.origin + (self.lo + nz[0]) * self.spacing
        b = self.origin + (self.lo + nz[-1] + 1) * self.spacing
        return a, b

    # ------------------------------------------------------------------
    def with_values(self, values: np.ndarray, lo: int | None = None) -> GridFunction:
        return GridFunction(
            self.spacing, self.lo if lo is None else lo, values, self.origin, self.domain
        )

    def shift_ticks(self, m: int) -> GridFunction:
        """Return ``x -> f(x - m * spacing)``; exact for any integer ``m``."""
        if int(m) != m:
            raise ValidationError("tick shifts must be integers")
        return GridFunction(self.spacing, self.lo + int(m), self.values, self.origin, self.domain)

    def translate(self, d: float) -> GridFunction:
        """Return ``x -> f(x - d)`` exactly by moving the grid origin."""
        if is_tick_multiple(d, self.spacing):
            return self.shift_ticks(round(d / self.spacing))
        return GridFunction(self.spacing, self.lo, self.values, self.origin + d, self.domain)

    def scale(self, c: float) -> GridFunction:
        return self.with_values(self.values * c)

    def add_at(self, x: float, amount: float) -> GridFunction:
        """Add ``amount`` to the cell containing ``x``, growing the window if needed."""
        j = self.cell_index(x)
        lo, vals = self.lo, self.values
        if j < lo:
            vals = np.concatenate([np.zeros(lo - j), vals])
            lo = j
        elif j >= lo + len(vals):
            vals = np.concatenate([vals, np.zeros(j - lo - len(vals) + 1)])
        vals = np.array(vals, dtype=float)
        vals[j - lo] = vals[j - lo] + amount
        return GridFunction(self.spacing, lo, vals, self.origin, self.domain)

    def restrict(self, lo: int, hi: int) -> GridFunction:
        """Return the function re-windowed to cells ``lo .. hi - 1`` (zero padded)."""
        out = np.zeros(max(hi - lo, 0))
        a = max(lo, self.lo)
        b = min(hi, self.hi)
        if b > a:
            out[a - lo : b - lo] = self.values[a - self.lo : b - self.lo]
        return GridFunction(self.spacing, lo, out, self.origin, self.domain)

    # ------------------------------------------------------------------
    def l2_norm(self) -> float:
        return float(math.sqrt(float(np.dot(self.values, self.values)) * self.spacing))

    def integrate(self, a: float, b: float) -> float:
        """Exact integral over ``[a, b]`` (sign-reversed when ``b < a``)."""
        if b < a:
            return -self.integrate(b, a)
        if b == a or len(self.values) == 0:
            return 0.0
        s = self.spacing
        qa = (a - self.origin) / s
        qb = (b - self.origin) / s
        ja = snap_floor(qa)
        jb = snap_floor(qb)
        total = 0.0
        if ja == jb:
            return self._cell(ja) * (qb - qa) * s
        # partial first cell
        total += self._cell(ja) * (ja + 1 - qa) * s
        lo_full = max(ja + 1, self.lo)
        hi_full = min(jb, self.hi)
        if hi_full > lo_full:
            total += float(np.sum(self.values[lo_full - self.lo : hi_full - self.lo])) * s
        frac = qb - jb
        if frac > _SNAP:
            total += self._cell(jb) * frac * s
        return float(total)

    def _cell(self, j: int) -> float:
        k = j - self.lo
        if 0 <= k < len(self.values):
            return float(self.values[k])
        return 0.0

    def mass(self) -> float:
        return float(np.sum(self.values) * self.spacing)

    # ------------------------------------------------------------------
    def to_json(self) -> str:
        return json.dumps(
            {
                "spacing": self.spacing,
                "lo": self.lo,
                "origin": self.origin,
                "values": [float(v) for v in self.values],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> GridFunction:
        d = json.loads(text)
        return cls(float(d["spacing"]), int(d["lo"]), np.asarray(d["values"], float), float(d.get("origin", 0.0)))

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "value"])
        for x, v in zip(self.left_edges(), self.values):
            w.writerow([repr(float(x)), repr(float(v))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, text: str, spacing: float, origin: float = 0.0) -> GridFunction:
        rows = list(csv.reader(io.StringIO(text)))[1:]
        if not rows:
            return cls(spacing, 0, np.zeros(0), origin)
        xs = np.array([float(r[0]) for r in rows])
        vals = np.array([float(r[1]) for r in rows])
        lo = snap_floor((xs[0] - origin) / spacing)
        return cls(spacing, lo, vals, origin)


# ----------------------------------------------------------------------
# free functions mirroring the module-level operation names


def eval(f: GridFunction, x: float) -> float:  # noqa: A001 - public operation name
    return f.eval(x)


def shift_ticks(f: GridFunction, m: int) -> GridFunction:
    return f.shift_ticks(m)


def l2_norm(f: GridFunction) -> float:
    return f.l2_norm()


def integrate(f: GridFunction, a: float, b: float) -> float:
    return f.integrate(a, b)


def aligned(f: GridFunction, g: GridFunction) -> bool:
    """True when both functions share spacing and cell boundaries."""
    if not math.isclose(f.spacing, g.spacing, rel_tol=1e-12, abs_tol=0.0):
        return False
    q = (g.origin - f.origin) / f.spacing
    return abs(q - round(q)) <= _SNAP


def _common(f: GridFunction, g: GridFunction) -> tuple[int, np.ndarray, np.ndarray]:
    if not aligned(f, g):
        raise GridMismatchError(
            f"grids are not aligned (spacing {f.spacing} vs {g.spacing}, origin {f.origin} vs {g.origin})"
        )
    off = round((g.origin - f.origin) / f.spacing)
    glo, ghi = g.lo + off, g.hi + off
    lo = min(f.lo, glo)
    hi = max(f.hi, ghi)
    a = np.zeros(hi - lo)
    b = np.zeros(hi - lo)
    a[f.lo - lo : f.hi - lo] = f.values
    b[glo - lo : ghi - lo] = g.values
    return lo, a, b


def add(f: GridFunction, g: GridFunction, c: float = 1.0) -> GridFunction:
    """Return ``f + c * g`` on the grid of ``f``."""
    lo, a, b = _common(f, g)
    return GridFunction(f.spacing, lo, a + c * b, f.origin, f.domain)


def l2_distance(f: GridFunction, g: GridFunction) -> float:
    lo, a, b = _common(f, g)
    d = a - b
    return float(math.sqrt(float(np.dot(d, d)) * f.spacing))


def shift_interp(f: GridFunction, d: float) -> GridFunction:
    """Return ``x -> f(x - d)`` projected on the grid of ``f``.

    Integer tick shifts are exact. For ``d = (m + a) * spacing`` with
    ``0 < a < 1`` each output cell is the exact cell average
    ``(1 - a) f[j - m] + a f[j - m - 1]``, which preserves mass.
    """
    q = d / f.spacing
    m = snap_floor(q)
    a = q - m
    if a <= _SNAP:
        return f.shift_ticks(m)
    v = f.values
    out = np.zeros(len(v) + 1)
    out[:-1] += (1.0 - a) * v
    out[1:] += a * v
    return GridFunction(f.spacing, f.lo + m, out, f.origin, f.domain)


def _check_domain(r: GridFunction, domain: tuple[float, float] | None) -> None:
    if domain is None:
        return
    sup = r.support()
    if sup is None:
        return
    tol = _SNAP * r.spacing
    if sup[0] < domain[0] - tol or sup[1] > domain[1] + tol:
        raise DomainOverflowError(f"support {sup} leaves domain {domain}")


def axpy_shifted(f: GridFunction, g: GridFunction, c: float, dx: float) -> GridFunction:
    """Return ``x -> f(x - dx) + c * g(x - dx)`` on the grid of ``f``."""
    if not math.isfinite(c) or not math.isfinite(dx):
        raise ValidationError("coefficient and shift must be finite")
    r = shift_interp(add(f, g, c), dx)
    _check_domain(r, f.domain)
    return r
