"""Waiting-time distribution as a truncated mixture of service-time convolutions.

An arrival that finds ``i`` trains in the system waits ``W_i``, the sum of
``i`` service times, so ``f_W = pi_0*delta_0 + sum_i pi_i * f_T^{*i}``.  Each
``i``-fold convolution is an ``(i-1)``-dimensional integral over the cube
``[t_min, t_max]^(i-1)`` estimated by plain Monte Carlo with uniform sampling.

For one component, the ``M`` sampled points are shared by every grid point:
a sample ``u`` contributes ``w(u) * f_T(t - sum(u))`` at abscissa ``t``, where
``w(u) = prod_j L*f_T(u_j)`` and ``L = t_max - t_min``.  The sample sums are
accumulated into cells ``_SUBCELLS`` times finer than the output grid and the
kernel ``f_T`` is applied by FFT convolution, so cost is linear in ``M``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .errors import (
    InsufficientMassError,
    MonteCarloBudgetError,
    UnstableQueueError,
    ValidationError,
)
from .numerics import Grid, GriddedFunction, RandomStream, cdf_from_pdf, quantile, trapezoid
from .occupancy import OccupancyDistribution
from .scenario import ServiceTimeModel

log = logging.getLogger(__name__)

_SUBCELLS = 8
_CHUNK_VALUES = 1 << 22  # uniforms drawn per block


@dataclass(frozen=True)
class MonteCarloConfig:
    tolerance_epsilon: float = 0.01
    initial_points: int = 1000
    grow_factor: int = 4
    shrink_factor: int = 2
    min_points: int = 1000
    max_points: int = 1 << 28
    wait_grid_steps: int = 5000

    def __post_init__(self):
        if not 0.0 < self.tolerance_epsilon <= 0.1:
            raise ValidationError("tolerance_epsilon", f"must be in (0, 0.1], got {self.tolerance_epsilon}")
        if self.initial_points < 100:
            raise ValidationError("initial_points", f"must be >= 100, got {self.initial_points}")
        if not 1 <= self.min_points <= self.initial_points:
            raise ValidationError("min_points", "must be in [1, initial_points]")
        if self.max_points < self.initial_points:
            raise ValidationError("max_points", "must be >= initial_points")
        if self.grow_factor < 2 or self.shrink_factor < 1:
            raise ValidationError("grow_factor", "grow_factor >= 2 and shrink_factor >= 1 required")
        if self.wait_grid_steps < 10:
            raise ValidationError("wait_grid_steps", f"must be >= 10, got {self.wait_grid_steps}")


@dataclass(frozen=True)
class ComponentDiagnostics:
    i: int
    points_used: int
    integral_value: float
    est_stddev: float
    attempts: int = 1
    exact: bool = False


@dataclass(frozen=True)
class ComponentResult:
    """Estimated density of ``W_i`` on its own grid, plus pointwise noise."""

    pdf: GriddedFunction
    stddev: GriddedFunction
    diagnostics: ComponentDiagnostics


def component_grid(model: ServiceTimeModel, i: int, steps: int = 5000) -> Grid:
    """Grid over the support ``[i*t_min, i*t_max]`` of the ``i``-fold sum."""
    return Grid(i * model.t_min, i * model.t_max, steps)


def _binned_samples(model, dim, points, rng, origin, width, nbins):
    """Draw ``points`` uniform samples in ``dim`` dimensions and bin them by sum.

    Returns per-bin sums of the weight ``w`` and of ``w**2``.
    """
    L = model.support_length
    hist = np.zeros(nbins)
    hist2 = np.zeros(nbins)
    rows = max(1, _CHUNK_VALUES // dim)
    remaining = points
    while remaining:
        n = min(rows, remaining)
        remaining -= n
        u = rng.random((n, dim))
        u *= L
        u += model.t_min
        s = u.sum(axis=1)
        model.scaled_pdf_in_support(u, L, out=u)
        w = np.prod(u, axis=1)
        idx = np.floor((s - origin) / width).astype(np.int64)
        np.clip(idx, 0, nbins - 1, out=idx)
        hist += np.bincount(idx, weights=w, minlength=nbins)
        hist2 += np.bincount(idx, weights=w * w, minlength=nbins)
    return hist, hist2


def _apply_kernel(hist, kernel, m0, grid_steps, sub):
    """``out[k] = sum_j hist[j] * g[k*sub - j]`` with ``kernel[q] = g[m0 + q]``."""
    conv = fftconvolve(hist, kernel)
    idx = np.arange(grid_steps + 1) * sub - m0
    out = np.zeros(grid_steps + 1)
    ok = (idx >= 0) & (idx < len(conv))
    out[ok] = conv[idx[ok]]
    # FFT round-off around exact zeros
    out[np.abs(out) < 1e-12 * max(np.abs(out).max(), 1e-300)] = 0.0
    return out


def convolution_component(
    model: ServiceTimeModel,
    i: int,
    grid: Grid,
    cfg: MonteCarloConfig,
    rng: np.random.Generator,
    points: int | None = None,
) -> ComponentResult:
    """Monte Carlo estimate of the ``i``-fold convolution of ``f_T`` on ``grid``.

    ``i = 1`` returns ``f_T`` itself, marked exact.
    """
    if i < 1:
        raise ValidationError("i", f"component index must be >= 1, got {i}")
    if model.rho >= 1.0:
        raise UnstableQueueError(model.rho)

    if i == 1:
        pdf = GriddedFunction.from_callable(grid, model.pdf)
        zero = GriddedFunction(grid, np.zeros(len(grid)))
        diag = ComponentDiagnostics(1, 0, trapezoid(pdf), 0.0, attempts=0, exact=True)
        return ComponentResult(pdf, zero, diag)

    points = int(points if points is not None else cfg.initial_points)
    dim = i - 1
    L = model.support_length
    width = grid.spacing / _SUBCELLS
    origin = dim * model.t_min
    nbins = max(1, math.ceil(dim * L / width))
    hist, hist2 = _binned_samples(model, dim, points, rng, origin, width, nbins)

    # kernel g[m] = f_T(offset + (m - 1/2) * width), nonzero only inside the support
    offset = grid.lo - origin
    m0 = math.floor((model.t_min - offset) / width)
    m1 = math.ceil((model.t_max - offset) / width) + 1
    m = np.arange(m0, m1 + 1)
    g = model.pdf(offset + (m - 0.5) * width)

    est = _apply_kernel(hist, g, m0, grid.steps, _SUBCELLS) / points
    second = _apply_kernel(hist2, g * g, m0, grid.steps, _SUBCELLS) / points
    var = np.maximum(second - est * est, 0.0) / points
    est = np.maximum(est, 0.0)

    mean_w = hist.sum() / points
    var_w = max(hist2.sum() / points - mean_w * mean_w, 0.0)
    pdf = GriddedFunction(grid, est)
    diag = ComponentDiagnostics(
        i=i,
        points_used=points,
        integral_value=trapezoid(pdf),
        est_stddev=math.sqrt(var_w / points),
    )
    return ComponentResult(pdf, GriddedFunction(grid, np.sqrt(var)), diag)


def adaptive_component(
    model: ServiceTimeModel,
    i: int,
    grid: Grid,
    cfg: MonteCarloConfig,
    rng: np.random.Generator,
    start_points: int | None = None,
) -> tuple[ComponentResult, int]:
    """Grow the sample until the component integrates to ``1 +- epsilon``.

    Returns the accepted component and the starting sample size for the next
    one (``M / shrink_factor``, never below ``cfg.min_points``).
    """
    M = int(start_points if start_points is not None else cfg.initial_points)
    if i == 1:
        return convolution_component(model, 1, grid, cfg, rng), M

    attempts = 0
    while True:
        attempts += 1
        res = convolution_component(model, i, grid, cfg, rng, M)
        d = res.diagnostics
        log.debug("component %d: M=%d integral=%.6f sd=%.2g", i, M, d.integral_value, d.est_stddev)
        if abs(d.integral_value - 1.0) <= cfg.tolerance_epsilon:
            diag = ComponentDiagnostics(
                i, M, d.integral_value, d.est_stddev, attempts=attempts
            )
            nxt = max(M // cfg.shrink_factor, cfg.min_points)
            return ComponentResult(res.pdf, res.stddev, diag), nxt
        if M >= cfg.max_points:
            raise MonteCarloBudgetError(i, M, d.integral_value, d.est_stddev)
        M = min(M * cfg.grow_factor, cfg.max_points)


def compute_components(
    model: ServiceTimeModel,
    i_max: int,
    cfg: MonteCarloConfig = MonteCarloConfig(),
    seed: int = 0,
) -> list[ComponentResult]:
    """Components ``1..i_max``; component ``i`` draws from stream id ``i``."""
    out = []
    M = cfg.initial_points
    for i in range(1, i_max + 1):
        rng = RandomStream(seed, i).generator()
        grid = component_grid(model, i, cfg.wait_grid_steps)
        res, M = adaptive_component(model, i, grid, cfg, rng, M)
        out.append(res)
    return out


@dataclass(frozen=True)
class WaitingTimeDistribution:
    atom_at_zero: float
    grid: Grid
    pdf: GriddedFunction = field(repr=False)
    cdf: GriddedFunction = field(repr=False)
    components: tuple[ComponentDiagnostics, ...]
    i_max: int

    @property
    def total_mass(self) -> float:
        return float(self.cdf.samples[-1])

    def cdf_at(self, t):
        """Right-continuous cdf at arbitrary times (0 below zero, flat past the grid)."""
        t = np.asarray(t, dtype=float)
        inner = np.interp(t, self.grid.values, self.cdf.samples)
        out = np.where(t < 0.0, 0.0, np.where(t < self.grid.lo, self.atom_at_zero, inner))
        return out if out.ndim else float(out)

    def normalized(self) -> "WaitingTimeDistribution":
        """Copy rescaled so the truncated distribution carries total mass one."""
        z = self.total_mass
        return WaitingTimeDistribution(
            atom_at_zero=self.atom_at_zero / z,
            grid=self.grid,
            pdf=GriddedFunction(self.grid, self.pdf.samples / z),
            cdf=GriddedFunction(self.grid, self.cdf.samples / z),
            components=self.components,
            i_max=self.i_max,
        )


def assemble(
    occ: OccupancyDistribution,
    components: list[ComponentResult],
    steps: int = 5000,
) -> WaitingTimeDistribution:
    """Mix the components with weights ``pi_i`` on one grid over ``[t_min, i_max*t_max]``."""
    if len(components) < occ.i_max:
        raise ValidationError(
            "components", f"need components 1..{occ.i_max}, got {len(components)}"
        )
    if occ.i_max >= 1:
        c1 = components[0].pdf.grid
        t_min, t_max = c1.lo, c1.hi
        grid = Grid(t_min, occ.i_max * t_max, steps)
    elif components:
        grid = Grid(components[0].pdf.grid.lo, components[0].pdf.grid.hi, steps)
    else:
        raise ValidationError("components", "at least component 1 is needed to place the grid")

    t = grid.values
    total = np.zeros(len(grid))
    for i in range(1, occ.i_max + 1):
        total += occ.pi[i] * components[i - 1].pdf(t)
    pdf = GriddedFunction(grid, total)
    atom = float(occ.pi[0])
    return WaitingTimeDistribution(
        atom_at_zero=atom,
        grid=grid,
        pdf=pdf,
        cdf=cdf_from_pdf(pdf, atom),
        components=tuple(c.diagnostics for c in components[: occ.i_max]),
        i_max=occ.i_max,
    )


def wait_quantiles(
    w: WaitingTimeDistribution, probs, normalize: bool = True
) -> list[float]:
    """Waiting-time quantiles in seconds.

    With ``normalize`` (the default) the truncated distribution is rescaled to
    unit mass first, so every ``p < 1`` is attainable.  Without it, any ``p``
    above the attained mass raises :class:`InsufficientMassError`.
    """
    probs = list(probs)
    dist = w.normalized() if normalize else w
    failed = [p for p in probs if p > dist.total_mass and p > dist.atom_at_zero]
    if failed:
        raise InsufficientMassError(failed, dist.total_mass)
    return [quantile(dist.cdf, dist.atom_at_zero, p) for p in probs]


def waiting_time_distribution(
    model: ServiceTimeModel,
    occ: OccupancyDistribution,
    cfg: MonteCarloConfig = MonteCarloConfig(),
    seed: int = 0,
) -> WaitingTimeDistribution:
    comps = compute_components(model, max(occ.i_max, 1), cfg, seed)
    return assemble(occ, comps, cfg.wait_grid_steps)
