import numpy as np
import pytest

from scalarlab.grid import (
    GridField,
    ShapeError,
    dealias_mask,
    evaluate,
    gradient,
    max_wavenumber,
    resample,
    stack,
)

from conftest import scalar


def test_round_trip_real_spectral():
    rng = np.random.default_rng(0)
    f = GridField.from_real(rng.standard_normal((1, 16, 16)))
    g = GridField.from_spectral(f.spectral_values)
    np.testing.assert_allclose(g.real_values, f.real_values, atol=1e-14)


def test_fields_are_read_only():
    f = GridField.zeros(2, 8)
    with pytest.raises(ValueError):
        f.real_values[0, 0, 0] = 1.0


def test_gradient_of_single_mode(tau):
    f = scalar(lambda x, y: np.cos(tau * x), 32)
    g = gradient(f)
    expect = scalar(lambda x, y: -tau * np.sin(tau * x), 32).real_values[0]
    np.testing.assert_allclose(g.real_values[0], expect, atol=1e-12)
    np.testing.assert_allclose(g.real_values[1], 0.0, atol=1e-12)


def test_resample_injection_then_truncation_is_identity(tau):
    f = scalar(lambda x, y: np.sin(tau * (2 * x + y)), 16)
    back = resample(resample(f, 64), 16)
    np.testing.assert_allclose(back.real_values, f.real_values, atol=1e-13)


def test_evaluate_matches_off_grid_closed_form(tau):
    f = scalar(lambda x, y: np.cos(tau * x) * np.sin(tau * 3 * y), 32)
    pts = np.array([[0.123, 0.456], [0.9, 0.01]])
    np.testing.assert_allclose(evaluate(f, pts)[:, 0], np.cos(tau * pts[:, 0]) * np.sin(3 * tau * pts[:, 1]), atol=1e-12)


def test_dealias_mask_and_band():
    mask = dealias_mask(12, 2)
    assert mask[3, 0] and not mask[4, 0]
    f = scalar(lambda x, y: np.cos(2 * np.pi * 5 * x), 32)
    assert max_wavenumber(f, 1e-12) == 5


def test_stack_rejects_mismatched_grids():
    with pytest.raises(ShapeError):
        stack([GridField.zeros(2, 8), GridField.zeros(2, 16)])
