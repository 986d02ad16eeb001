"""Grids, trapezoid quadrature, seeded random streams and cdf quantiles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientMassError, NumericalError, ValidationError

RNG_ALGORITHM = "numpy PCG64 seeded by SeedSequence(seed, spawn_key=(stream_id,))"

# cdf increments more negative than this are treated as real errors, not rounding
_NEGATIVE_INCREMENT_TOL = 1e-12


@dataclass(frozen=True)
class Grid:
    lo: float
    hi: float
    steps: int

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.lo < self.hi):
            raise ValidationError("grid", f"need finite lo < hi, got lo={self.lo}, hi={self.hi}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValidationError("grid", f"steps must be a positive integer, got {self.steps}")

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / self.steps

    @property
    def values(self) -> np.ndarray:
        v = np.linspace(self.lo, self.hi, self.steps + 1)
        v[-1] = self.hi
        return v

    def __len__(self):
        return self.steps + 1


@dataclass(frozen=True)
class GriddedFunction:
    grid: Grid
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.shape != (len(self.grid),):
            raise ValidationError(
                "samples", f"expected {len(self.grid)} values, got shape {s.shape}"
            )
        if not np.all(np.isfinite(s)):
            raise ValidationError("samples", "all samples must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @classmethod
    def from_callable(cls, grid: Grid, fn) -> "GriddedFunction":
        return cls(grid, fn(grid.values))

    def __call__(self, t):
        """Linear interpolation, zero outside the grid."""
        return np.interp(t, self.grid.values, self.samples, left=0.0, right=0.0)


@dataclass(frozen=True)
class RandomStream:
    """Value-type handle for an independent, reproducible random stream.

    Each call to :meth:`generator` returns a fresh generator positioned at the
    start of the stream, so copies never share a cursor.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))

    def substream(self, stream_id: int) -> "RandomStream":
        return RandomStream(self.seed, stream_id)


def trapezoid(f: GriddedFunction) -> float:
    return float(np.trapezoid(f.samples, dx=f.grid.spacing))


def cumulative_trapezoid(samples, dx) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    out = np.empty_like(samples)
    out[0] = 0.0
    np.cumsum(0.5 * dx * (samples[1:] + samples[:-1]), out=out[1:])
    return out


def cdf_from_pdf(f: GriddedFunction, atom_at_zero: float = 0.0) -> GriddedFunction:
    """Cumulative distribution of a gridded density plus a point mass at zero.

    The atom is assumed to sit at or below ``f.grid.lo``, so the returned cdf
    starts at ``atom_at_zero``.
    """
    if not 0.0 <= atom_at_zero <= 1.0:
        raise ValidationError("atom_at_zero", f"must be in [0, 1], got {atom_at_zero}")
    dx = f.grid.spacing
    incr = 0.5 * dx * (f.samples[1:] + f.samples[:-1])
    worst = incr.min(initial=0.0)
    if worst < -_NEGATIVE_INCREMENT_TOL:
        raise NumericalError(f"pdf has negative mass increment {worst:.3g}")
    incr = np.maximum(incr, 0.0)
    cdf = np.empty(len(f.grid))
    cdf[0] = atom_at_zero
    np.cumsum(incr, out=cdf[1:])
    cdf[1:] += atom_at_zero
    return GriddedFunction(f.grid, cdf)


def quantile(cdf: GriddedFunction, atom_at_zero: float, p: float) -> float:
    """Smallest t with cdf(t) >= p, linear between bracketing grid points.

    Values of ``p`` inside the atom return 0.
    """
    if not 0.0 < p < 1.0:
        raise ValidationError("p", f"probability must be in (0, 1), got {p}")
    if p <= atom_at_zero:
        return 0.0
    c = cdf.samples
    if c[-1] < p:
        raise InsufficientMassError([p], float(c[-1]))
    k = int(np.searchsorted(c, p, side="left"))
    t = cdf.grid.values
    if k == 0:
        return float(t[0])
    c0, c1 = c[k - 1], c[k]
    if c1 == c0:
        return float(t[k])
    return float(t[k - 1] + (p - c0) / (c1 - c0) * (t[k] - t[k - 1]))
