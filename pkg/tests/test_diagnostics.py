import math

import numpy as np
import pytest

from scalarlab.diagnostics import (
    UnresolvedError,
    Verdict,
    epsilon_sweep,
    resolution_for,
    sphere_directions,
    sphere_measure,
    strong_convergence_check,
    structure_function_exponent,
    sweep_verdict,
    yaglom_average,
    yaglom_ratio_curve,
)
from scalarlab.fields import EstimatorError, cellular_flow, constant_flow, zero_flow
from scalarlab.grid import grid_coordinates
from scalarlab.solver import IndicatorHalfTorus, SingleMode, SolverConfig, initialize

from conftest import scalar, vector

TAU = 2 * np.pi


def yaglom_oracle(theta_fn, v_fns, n, r, q):
    """Direct double loop over grid points and directions using the closed forms."""
    x, y = (c * np.ones((n, n)) for c in grid_coordinates(n, 2))
    out = np.zeros((n, n))
    for xi in sphere_directions(2, q):
        xs, ys = x + r * xi[0], y + r * xi[1]
        dth = theta_fn(xs, ys) - theta_fn(x, y)
        dv = [f(xs, ys) - f(x, y) for f in v_fns]
        out += (xi[0] * dv[0] + xi[1] * dv[1]) * dth**2
    return out * sphere_measure(2) / q


ORACLE_CASES = [
    (lambda x, y: np.sin(TAU * x), [lambda x, y: np.cos(TAU * y), lambda x, y: 0 * x], 1 / 8),
    (lambda x, y: np.sin(TAU * (x + y)),
     [lambda x, y: np.sin(TAU * x) * np.cos(TAU * y), lambda x, y: -np.cos(TAU * x) * np.sin(TAU * y)], 1 / 16),
    (lambda x, y: np.cos(TAU * x) * np.cos(2 * TAU * y),
     [lambda x, y: np.cos(TAU * (x + y)), lambda x, y: -np.cos(TAU * (x + y))], 3 / 32),
]


@pytest.mark.parametrize("theta_fn,v_fns,r", ORACLE_CASES)
def test_yaglom_matches_real_space_oracle(theta_fn, v_fns, r):
    n, q = 32, 256
    theta, v = scalar(theta_fn, n), vector(v_fns, n)
    mean, field = yaglom_average(theta, v, r, q=q, pointwise=True)
    ref = yaglom_oracle(theta_fn, v_fns, n, r, q)
    scale = np.abs(ref).max()
    assert np.abs(field.real_values[0] - ref).max() <= 1e-6 * scale
    assert abs(mean - ref.mean()) <= 1e-6 * scale


def test_yaglom_constant_arguments_vanish():
    theta = scalar(lambda x, y: np.sin(TAU * x), 16)
    assert yaglom_average(scalar(lambda x, y: 2 + 0 * x, 16), cellular_flow(16), 0.1)[0] == 0.0
    assert yaglom_average(theta, constant_flow(2, 16, [1.0, 0.5]), 0.1)[0] == 0.0
    with pytest.raises(ValueError):
        yaglom_average(theta, cellular_flow(16), 0.5)


def test_yaglom_bilinear_bound():
    theta = scalar(lambda x, y: np.sin(TAU * (x + y)), 32)
    v = cellular_flow(32)
    for r in (0.05, 0.2):
        mean, _ = yaglom_average(theta, v, r)
        assert abs(mean) <= sphere_measure(2) * 2 * np.abs(v.real_values).max() * np.sqrt(2) * 4


def test_yaglom_ratio_scales_like_r_squared_for_smooth_fields():
    # the space mean vanishes for this non-resonant pair, so the pointwise field is compared
    theta = scalar(lambda x, y: np.sin(TAU * x), 32)
    v = cellular_flow(32)
    ratios = []
    for r in (1 / 64, 1 / 128):
        _, field = yaglom_average(theta, v, r, pointwise=True)
        ratios.append(np.abs(field.real_values).max() / r)
    assert ratios[0] / ratios[1] == pytest.approx(4.0, rel=0.05)


def test_resolution_rule():
    ns = [resolution_for(2.0**-j, 1.0) for j in range(6, 14)]
    assert ns == [32, 32, 64, 64, 128, 128, 256, 256]
    with pytest.raises(UnresolvedError):
        resolution_for(0.0, 1.0)


def test_sweep_verdict_rules():
    assert sweep_verdict([0.3] * 6, 1.0) is Verdict.ANOMALY
    assert sweep_verdict([1.0, 0.5, 0.25, 0.1], 1.0) is Verdict.NO_ANOMALY
    assert sweep_verdict([1.0, 0.9, 0.8, 0.7], 1.0) is Verdict.INCONCLUSIVE


@pytest.fixture(scope="module")
def heat_sweep():
    eps = [2.0**-j for j in range(6, 13)]
    return epsilon_sweep(zero_flow(2, 32), SingleMode((1, 0)), eps, SolverConfig(eps[0], 1.0), fit_tail=3)


def test_heat_sweep_closed_form(heat_sweep):
    for e, d in zip(heat_sweep.epsilons, heat_sweep.dissipation):
        assert d == pytest.approx((1 - math.exp(-8 * math.pi**2 * e)) / 4, rel=1e-10)
    assert heat_sweep.fit_slope == pytest.approx(1.0, abs=0.05)
    assert heat_sweep.verdict is Verdict.NO_ANOMALY


def test_heat_sweep_yaglom_ratio_is_zero(heat_sweep):
    ratio = yaglom_ratio_curve(heat_sweep, zero_flow(2, 32))
    assert ratio.ratios == [0.0] * len(ratio.ratios)


def test_heat_sweep_strong_convergence_closed_form(heat_sweep):
    dist = strong_convergence_check(heat_sweep.final_states)
    amp = [math.exp(-4 * math.pi**2 * e) for e in heat_sweep.epsilons]
    # sin(2 pi x1) has L2 norm 1/sqrt 2
    expect = [abs(a - amp[-1]) / math.sqrt(2) for a in amp]
    np.testing.assert_allclose(dist, expect, atol=1e-8)
    same = strong_convergence_check([heat_sweep.final_states[0]] * 3)
    assert same == [0.0, 0.0, 0.0]


def test_sweep_rejects_bad_epsilon_lists():
    v = zero_flow(2, 32)
    with pytest.raises(ValueError):
        epsilon_sweep(v, SingleMode((1, 0)), [0.1, 0.2, 0.01, 0.001], SolverConfig(0.1, 1.0))
    with pytest.raises(UnresolvedError):
        epsilon_sweep(v, SingleMode((1, 0)), [1e-3, 1e-4, 1e-5, 1e-6], SolverConfig(0.1, 1.0), max_resolution=64)


def test_structure_function_exponents():
    sin = initialize(SingleMode((1, 0)), 64).theta
    assert structure_function_exponent(sin)[0] == pytest.approx(1.0, abs=0.05)
    ind = initialize(IndicatorHalfTorus(), 256).theta
    assert structure_function_exponent(ind)[0] == pytest.approx(0.5, abs=0.1)
    with pytest.raises(EstimatorError):
        structure_function_exponent(scalar(lambda x, y: 1 + 0 * x, 32))
    with pytest.raises(ValueError):
        structure_function_exponent(sin, [0.1, 0.2, 0.3])
