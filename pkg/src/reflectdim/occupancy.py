"""Steady-state queue-length distribution of the M/G/1 out-queue.

The embedded chain at departure epochs moves from state ``i`` to ``i-1+j``
with probability ``k_j`` (``j`` Poisson arrivals during one service), and the
balance equations are solved forward from ``pi_0 = 1 - rho``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientMassError, NumericalError, UnstableQueueError, ValidationError
from .scenario import ServiceTimeModel

log = logging.getLogger(__name__)

DEFAULT_K_STEPS = 10000
DEFAULT_MAX_STATES = 10000
_CLAMP_TOL = 1e-12
_K0_FLOOR = 1e-300


@dataclass(frozen=True)
class OccupancyDistribution:
    pi: np.ndarray = field(repr=False)
    Pi: np.ndarray = field(repr=False)
    k: np.ndarray = field(repr=False)
    i_max: int
    mass_threshold: float
    rho: float
    lam: float
    mu: float
    k_steps: int = DEFAULT_K_STEPS

    @property
    def attained_mass(self) -> float:
        return float(self.Pi[-1])

    def mean_length(self) -> float:
        return float(np.dot(np.arange(len(self.pi)), self.pi))


def _check_stable(model: ServiceTimeModel):
    if model.rho >= 1.0:
        raise UnstableQueueError(model.rho)


def arrival_probs(
    model: ServiceTimeModel, count: int, steps: int = DEFAULT_K_STEPS, start: int = 0
) -> np.ndarray:
    """``k_i`` for ``i = start .. start+count-1``: P(i arrivals in one service).

    The Poisson weights along the grid come from the recurrence
    ``p_{i+1}(t) = p_i(t) * lam*t/(i+1)``.  If every remaining ``k_i``
    underflows to zero the result is shortened.
    """
    _check_stable(model)
    if count < 1:
        raise ValidationError("count", f"must be >= 1, got {count}")
    lam = model.total_lambda
    k = np.zeros(start + count)
    for lo, hi, active in model.segments():
        t = np.linspace(lo, hi, steps + 1)
        dens = np.zeros_like(t)
        for n in active:
            dens += model.weights[n] * model.session_constants[n] / (t * t)
        lt = lam * t
        p = np.exp(-lt)
        for i in range(start + count):
            if i >= start:
                k[i] += np.trapezoid(p * dens, t)
            p = p * lt / (i + 1)
    k = k[start:]
    nz = np.nonzero(k)[0]
    if len(nz) and nz[-1] + 1 < len(k) and np.all(k[nz[-1] + 1:] == 0.0):
        log.info("arrival_probs: k_i underflow beyond i=%d", start + nz[-1])
        k = k[: nz[-1] + 1]
    return k


class _LazyK:
    """Arrival probabilities extended in blocks as the recursion needs them."""

    def __init__(self, model, steps, block=64):
        self.model = model
        self.steps = steps
        self.block = block
        self.values = np.empty(0)

    def upto(self, n):
        while len(self.values) <= n:
            more = arrival_probs(self.model, self.block, self.steps, start=len(self.values))
            if len(more) < self.block:
                more = np.concatenate([more, np.zeros(self.block - len(more))])
            self.values = np.concatenate([self.values, more])
        return self.values


def steady_state(
    model: ServiceTimeModel,
    mass_threshold: float = 0.99,
    k_steps: int = DEFAULT_K_STEPS,
    max_states: int = DEFAULT_MAX_STATES,
) -> OccupancyDistribution:
    """Queue-length pmf up to the first index whose cdf reaches ``mass_threshold``."""
    _check_stable(model)
    if not 0.0 < mass_threshold < 1.0:
        raise ValidationError("mass_threshold", f"must be in (0, 1), got {mass_threshold}")

    lazy = _LazyK(model, k_steps)
    k = lazy.upto(1)
    if k[0] < _K0_FLOOR:
        raise NumericalError(
            "service time too long relative to arrival rate for stable recursion "
            f"(k_0 = {k[0]:.3g})"
        )

    pi = [1.0 - model.rho]
    total = pi[0]
    while total < mass_threshold:
        i = len(pi) - 1
        if i + 1 >= max_states:
            raise NumericalError(
                f"state cap {max_states} reached with attained mass {total:.6g} "
                f"< {mass_threshold}"
            )
        k = lazy.upto(i + 1)
        # sum_{j=1..i} pi_j k_{i-j+1}
        inner = float(np.dot(pi[1 : i + 1], k[i:0:-1])) if i else 0.0
        nxt = (pi[i] - pi[0] * k[i] - inner) / k[0]
        if nxt < 0.0:
            if nxt < -_CLAMP_TOL:
                raise NumericalError(
                    f"recursion produced pi_{i + 1} = {nxt:.3g} < 0; refine the k grid"
                )
            nxt = 0.0
        pi.append(nxt)
        total += nxt

    pi = np.asarray(pi)
    Pi = np.cumsum(pi)
    i_max = len(pi) - 1
    return OccupancyDistribution(
        pi=pi,
        Pi=Pi,
        k=lazy.values[: i_max + 2].copy(),
        i_max=i_max,
        mass_threshold=mass_threshold,
        rho=model.rho,
        lam=model.total_lambda,
        mu=model.departure_rate,
        k_steps=k_steps,
    )


def pk_mean_wait(model: ServiceTimeModel) -> float:
    """Pollaczek-Khintchine mean wait ``lam*E(T^2) / (2*(1-rho))``."""
    _check_stable(model)
    return model.total_lambda * model.second_moment / (2.0 * (1.0 - model.rho))


def queue_length_quantile(occ: OccupancyDistribution, p: float) -> int:
    if not 0.0 < p < 1.0:
        raise ValidationError("p", f"probability must be in (0, 1), got {p}")
    if p > occ.Pi[-1]:
        raise InsufficientMassError([p], occ.attained_mass)
    return int(np.searchsorted(occ.Pi, p, side="left"))
