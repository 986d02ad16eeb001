import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from reflectdim.errors import UnstableQueueError, ValidationError
from reflectdim.scenario import Scenario, SessionSpec, aggregate, session_pdf

from conftest import mixed, pure, session


def quad_moment(model, power):
    """Independent oracle: adaptive quadrature of t**power * f_T over each smooth piece."""
    cuts = sorted({x for ab in model.per_session_bounds for x in ab})
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        val, _ = integrate.quad(lambda t: t**power * model.pdf(t), lo, hi, epsabs=0, epsrel=1e-12)
        total += val
    return total


@pytest.mark.parametrize(
    "kwargs, field",
    [
        (dict(intensity_lambda=0.0), "intensity_lambda"),
        (dict(intensity_lambda=float("nan")), "intensity_lambda"),
        (dict(train_size=0), "train_size"),
        (dict(packet_size=12.5), "packet_size"),
        (dict(rate_min=-1.0), "rate_min"),
        (dict(rate_max=0.5e9), "rate_max"),
    ],
)
def test_invalid_session_names_field(kwargs, field):
    base = dict(intensity_lambda=1.0, train_size=17, packet_size=12000, rate_min=0.5e9, rate_max=1.5e9)
    base.update(kwargs)
    with pytest.raises(ValidationError) as exc:
        SessionSpec(**base)
    assert exc.value.field == field


def test_empty_scenario_rejected():
    with pytest.raises(ValidationError):
        Scenario(())


def test_service_bounds_for_gbps_trains():
    m = aggregate(Scenario((session(),)))
    assert m.t_min == pytest.approx(17 * 12000 / 1.5e9, rel=1e-15)
    assert m.t_max == pytest.approx(17 * 12000 / 0.5e9, rel=1e-15)


@pytest.mark.parametrize("scenario", [pure(0.5), mixed(0.5)], ids=["pure", "mixed"])
def test_closed_form_moments_match_quadrature(scenario):
    m = aggregate(scenario)
    assert m.mean_service == pytest.approx(quad_moment(m, 1), rel=1e-4)
    assert m.second_moment == pytest.approx(quad_moment(m, 2), rel=1e-4)
    assert m.rho == pytest.approx(m.total_lambda * m.mean_service, rel=1e-15)
    assert m.departure_rate == pytest.approx(1.0 / m.mean_service)


@pytest.mark.parametrize("scenario", [pure(0.5), mixed(0.5)], ids=["pure", "mixed"])
def test_mixture_normalization_piecewise(scenario):
    m = aggregate(scenario)
    assert m.expect(lambda t: np.ones_like(t)) == pytest.approx(1.0, abs=1e-6)
    assert quad_moment(m, 0) == pytest.approx(1.0, abs=1e-9)


def test_mixture_normalization_uniform_grid_pure():
    f = aggregate(pure(0.5)).gridded_pdf(5000)
    assert np.trapezoid(f.samples, dx=f.grid.spacing) == pytest.approx(1.0, abs=1e-6)


def test_mixture_normalization_uniform_grid_mixed_is_looser():
    # interior jumps at session bounds cost first-order accuracy on one uniform grid
    f = aggregate(mixed(0.5)).gridded_pdf(5000)
    assert np.trapezoid(f.samples, dx=f.grid.spacing) == pytest.approx(1.0, abs=1e-3)


def test_session_pdf_zero_outside_support():
    s = session()
    t = np.array([0.0, 1e-4, 1.36e-4, 4.08e-4, 5e-4])
    d = session_pdf(s, t)
    assert d[0] == d[1] == d[-1] == 0.0
    assert d[2] > d[3] > 0


def test_unstable_rejected_unless_requested():
    sc = pure(1.2)
    with pytest.raises(UnstableQueueError) as exc:
        aggregate(sc)
    assert exc.value.exit_code == 2
    assert aggregate(sc, check_stability=False).rho == pytest.approx(1.2)


@pytest.mark.parametrize("rho", [0.33, 0.5, 0.66])
def test_with_rho_hits_target(rho):
    assert aggregate(mixed(rho)).rho == pytest.approx(rho, rel=1e-12)


def test_equal_split_keeps_ratio():
    sc = mixed(0.66)
    a, b = (s.intensity_lambda for s in sc.sessions)
    assert a == pytest.approx(b, rel=1e-15)


def test_rate_scaling_shrinks_times_keeps_rho():
    m = aggregate(pure(0.5))
    m10 = aggregate(pure(0.5).scaled(10.0))
    assert m10.t_min == pytest.approx(m.t_min / 10, rel=1e-14)
    assert m10.t_max == pytest.approx(m.t_max / 10, rel=1e-14)
    assert m10.rho == pytest.approx(m.rho, rel=1e-14)


def test_segments_skip_gap_between_disjoint_supports():
    m = aggregate(mixed(0.5))
    (fast_lo, fast_hi), (slow_lo, slow_hi) = sorted(m.per_session_bounds)
    assert fast_hi < slow_lo
    assert m.segments() == [(fast_lo, fast_hi, (1,)), (slow_lo, slow_hi, (0,))]


def test_segments_of_overlapping_supports():
    sc = Scenario((session((0.5e9, 1.5e9)), session((1.0e9, 3.0e9))))
    m = aggregate(sc, check_stability=False)
    segs = m.segments()
    assert [a for _, _, a in segs] == [(1,), (0, 1), (0,)]
    for (_, hi, _), (lo, _, _) in zip(segs[:-1], segs[1:]):
        assert hi == lo


rates = st.floats(1e6, 1e10)


@st.composite
def sessions(draw):
    lo = draw(rates)
    ratio = draw(st.floats(1.01, 20.0))
    return SessionSpec(
        draw(st.floats(0.1, 1e4)), draw(st.integers(1, 100)), draw(st.integers(64, 72000)), lo, lo * ratio
    )


@settings(max_examples=60, deadline=None)
@given(st.lists(sessions(), min_size=1, max_size=4))
def test_moment_properties(specs):
    m = aggregate(Scenario(tuple(specs)), check_stability=False)
    assert m.t_min <= m.mean_service <= m.t_max
    assert m.second_moment >= m.mean_service**2 * (1 - 1e-12)
    assert math.fsum(m.weights) == pytest.approx(1.0)
    # wide rate ranges need a finer grid for the same accuracy
    assert m.expect(lambda t: np.ones_like(t), steps=50_000) == pytest.approx(1.0, abs=1e-6)
    assert m.expect(lambda t: t) == pytest.approx(m.mean_service, rel=1e-4)
