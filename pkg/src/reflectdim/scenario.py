"""Measurement sessions and the aggregated service-time model of the out-queue.

All quantities are SI: seconds, bits, bits per second, trains per second.
A train of ``r`` packets of ``s`` bits sent at rate ``U`` occupies the
reflector for ``r*s/U`` seconds.  With ``U`` uniform on ``[u_min, u_max]``
the service time has density ``c/t**2`` on ``[r*s/u_max, r*s/u_min]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import UnstableQueueError, ValidationError
from .numerics import Grid, GriddedFunction


@dataclass(frozen=True)
class SessionSpec:
    intensity_lambda: float  # trains / s
    train_size: int  # packets / train
    packet_size: int  # bits / packet
    rate_min: float  # bits / s
    rate_max: float  # bits / s

    def __post_init__(self):
        if not (math.isfinite(self.intensity_lambda) and self.intensity_lambda > 0):
            raise ValidationError("intensity_lambda", f"must be > 0, got {self.intensity_lambda}")
        for name in ("train_size", "packet_size"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValidationError(name, f"must be an integer >= 1, got {v}")
        if not (math.isfinite(self.rate_min) and self.rate_min > 0):
            raise ValidationError("rate_min", f"must be > 0, got {self.rate_min}")
        if not (math.isfinite(self.rate_max) and self.rate_max > self.rate_min):
            raise ValidationError(
                "rate_max", f"must exceed rate_min={self.rate_min}, got {self.rate_max}"
            )

    @property
    def train_bits(self) -> int:
        return int(self.train_size) * int(self.packet_size)

    def scaled(self, rate_factor: float, intensity_factor: float | None = None) -> "SessionSpec":
        """Copy with rates (and intensity, by default the same factor) rescaled."""
        if intensity_factor is None:
            intensity_factor = rate_factor
        return replace(
            self,
            intensity_lambda=self.intensity_lambda * intensity_factor,
            rate_min=self.rate_min * rate_factor,
            rate_max=self.rate_max * rate_factor,
        )


@dataclass(frozen=True)
class Scenario:
    sessions: tuple[SessionSpec, ...]

    def __post_init__(self):
        sessions = tuple(self.sessions)
        if not sessions:
            raise ValidationError("sessions", "a scenario needs at least one session")
        for s in sessions:
            if not isinstance(s, SessionSpec):
                raise ValidationError("sessions", f"not a SessionSpec: {s!r}")
        object.__setattr__(self, "sessions", sessions)

    def __len__(self):
        return len(self.sessions)

    @property
    def total_lambda(self) -> float:
        return math.fsum(s.intensity_lambda for s in self.sessions)

    def scaled(self, rate_factor: float, intensity_factor: float | None = None) -> "Scenario":
        return Scenario(tuple(s.scaled(rate_factor, intensity_factor) for s in self.sessions))

    def with_total_lambda(self, total: float) -> "Scenario":
        """Rescale every session intensity so that they sum to ``total``."""
        f = total / self.total_lambda
        return Scenario(
            tuple(replace(s, intensity_lambda=s.intensity_lambda * f) for s in self.sessions)
        )

    def with_rho(self, rho: float) -> "Scenario":
        """Rescale intensities (keeping their ratios) to hit traffic intensity ``rho``."""
        mean = aggregate(self, check_stability=False).mean_service
        return self.with_total_lambda(rho / mean)


def session_service_bounds(spec: SessionSpec) -> tuple[float, float]:
    bits = spec.train_bits
    return bits / spec.rate_max, bits / spec.rate_min


def _session_constant(t_min: float, t_max: float) -> float:
    return t_min * t_max / (t_max - t_min)


def session_pdf(spec: SessionSpec, t):
    """Service-time density of one session, ``c/t**2`` on its bounds, else 0."""
    a, b = session_service_bounds(spec)
    return _bounded_inverse_square(a, b, _session_constant(a, b), t)


def _bounded_inverse_square(a, b, c, t):
    t = np.asarray(t, dtype=float)
    inside = (t >= a) & (t <= b)
    safe = np.where(inside, t, 1.0)
    out = np.where(inside, c / (safe * safe), 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ServiceTimeModel:
    """Mixture service-time distribution seen by the reflector out-queue."""

    t_min: float
    t_max: float
    per_session_bounds: tuple[tuple[float, float], ...]
    weights: tuple[float, ...]
    total_lambda: float
    mean_service: float
    second_moment: float
    departure_rate: float
    traffic_intensity: float
    session_constants: tuple[float, ...] = field(repr=False)

    @property
    def rho(self) -> float:
        return self.traffic_intensity

    @property
    def support_length(self) -> float:
        return self.t_max - self.t_min

    def session_densities(self, t) -> list:
        return [
            _bounded_inverse_square(a, b, c, t)
            for (a, b), c in zip(self.per_session_bounds, self.session_constants)
        ]

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape)
        for w, d in zip(self.weights, self.session_densities(t)):
            out += w * d
        return out if out.ndim else float(out)

    def scaled_pdf_in_support(self, t, scale: float = 1.0, out=None):
        """``scale * f_T(t)`` for ``t`` already known to lie in ``[t_min, t_max]``.

        Fast path for the Monte Carlo sampler; writes into ``out`` if given
        (which may be ``t`` itself).
        """
        t = np.asarray(t, dtype=float)
        full = 0.0
        partial = []
        for w, (a, b), c in zip(self.weights, self.per_session_bounds, self.session_constants):
            if a <= self.t_min and b >= self.t_max:
                full += w * c
            else:
                partial.append((w * c, a, b))
        if partial:
            coef = np.full(t.shape, full)
            for wc, a, b in partial:
                coef += wc * ((t >= a) & (t <= b))
            coef *= scale
        else:
            coef = full * scale
        if out is None:
            out = np.empty(t.shape)
        np.multiply(t, t, out=out)
        np.divide(coef, out, out=out)
        return out

    def working_grid(self, steps: int = 5000) -> Grid:
        return Grid(self.t_min, self.t_max, steps)

    def gridded_pdf(self, steps: int = 5000) -> GriddedFunction:
        return GriddedFunction.from_callable(self.working_grid(steps), self.pdf)

    def segments(self) -> list[tuple[float, float, tuple[int, ...]]]:
        """Maximal intervals on which the density is smooth.

        Returns ``(lo, hi, active_sessions)`` triples; segments with no active
        session (gaps between disjoint supports) are omitted.
        """
        cuts = sorted({x for ab in self.per_session_bounds for x in ab})
        out = []
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            mid = 0.5 * (lo + hi)
            active = tuple(
                n for n, (a, b) in enumerate(self.per_session_bounds) if a <= mid <= b
            )
            if active:
                out.append((lo, hi, active))
        return out

    def expect(self, g, steps: int = 5000) -> float:
        """Trapezoid estimate of E[g(T)] = integral of g(t) f_T(t) dt.

        Each smooth segment of the density gets its own uniform ``steps`` grid,
        so jumps at session bounds cost no accuracy.
        """
        total = 0.0
        for lo, hi, active in self.segments():
            t = np.linspace(lo, hi, steps + 1)
            dens = np.zeros_like(t)
            for n in active:
                dens += self.weights[n] * self.session_constants[n] / (t * t)
            total += float(np.trapezoid(np.asarray(g(t)) * dens, t))
        return total


def aggregate(scenario: Scenario, check_stability: bool = True) -> ServiceTimeModel:
    """Mix the sessions' service-time densities weighted by their intensities.

    Raises :class:`UnstableQueueError` when the resulting traffic intensity is
    at least one, unless ``check_stability`` is false.
    """
    lam = scenario.total_lambda
    bounds = tuple(session_service_bounds(s) for s in scenario.sessions)
    consts = tuple(_session_constant(a, b) for a, b in bounds)
    weights = tuple(s.intensity_lambda / lam for s in scenario.sessions)

    means = [c * math.log(b / a) for (a, b), c in zip(bounds, consts)]
    seconds = [a * b for a, b in bounds]
    mean = math.fsum(w * m for w, m in zip(weights, means))
    second = math.fsum(w * m2 for w, m2 in zip(weights, seconds))
    rho = lam * mean

    model = ServiceTimeModel(
        t_min=min(a for a, _ in bounds),
        t_max=max(b for _, b in bounds),
        per_session_bounds=bounds,
        weights=weights,
        total_lambda=lam,
        mean_service=mean,
        second_moment=second,
        departure_rate=1.0 / mean,
        traffic_intensity=rho,
        session_constants=consts,
    )
    if check_stability and rho >= 1.0:
        raise UnstableQueueError(rho)
    return model
