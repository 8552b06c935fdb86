import itertools

import numpy as np
import pytest

from scalarlab.fields import ClebschPotentials, SpectrumConfig, sample_clebsch_3d, velocity_from_clebsch
from scalarlab.grid import GridField, ShapeError
from scalarlab.sard import (
    BoxCountCurve,
    RankVarietyProbe,
    box_count_curve,
    critical_cube_count,
    critical_value_measure,
    dimension_fit,
    distance_to_low_rank,
    image_dimension_estimate,
    jet_grid,
    orthogonality_residual,
    probe_for,
    rate_fit,
    weak_sard_proxy,
)

from conftest import scalar

TAU = 2 * np.pi


def truncation_oracle(M, k):
    """min over every choice of k retained singular triples of |M - truncation|_F."""
    u, s, vt = np.linalg.svd(M)
    best = np.inf
    for keep in itertools.combinations(range(len(s)), k):
        approx = sum(s[i] * np.outer(u[:, i], vt[i]) for i in keep) if keep else np.zeros_like(M)
        best = min(best, np.linalg.norm(M - approx))
    return best


def test_distance_examples():
    assert distance_to_low_rank(np.zeros((2, 3)), 0) == 0.0
    assert distance_to_low_rank(np.zeros((2, 3)), 1) == 0.0
    m = np.array([[3.0, 0, 0], [0, 4.0, 0]])
    assert distance_to_low_rank(m, 1) == pytest.approx(3.0, abs=1e-14)


def test_distance_matches_truncation_oracle():
    rng = np.random.default_rng(8)
    for _ in range(100):
        M = rng.standard_normal((2, 3))
        for k in (0, 1):
            assert abs(distance_to_low_rank(M, k) - truncation_oracle(M, k)) <= 1e-12
        assert distance_to_low_rank(M, 1) <= distance_to_low_rank(M, 0)
    rank1 = np.outer([1.0, 2.0], [0.5, -1.0, 3.0])
    assert distance_to_low_rank(rank1, 1) <= 1e-12


def test_jet_of_single_mode_and_constant():
    jet = jet_grid(scalar(lambda x, y: np.cos(TAU * x), 32))
    expect = scalar(lambda x, y: -TAU * np.sin(TAU * x), 32).real_values[0]
    assert np.abs(jet.jacobian[..., 0, 0] - expect).max() <= 1e-12
    assert np.abs(jet.jacobian[..., 0, 1]).max() <= 1e-12
    assert not jet_grid(scalar(lambda x, y: 2 + 0 * x, 16)).jacobian.any()
    with pytest.raises(ShapeError):
        jet_grid(GridField.zeros(3, 8, components=1))


def test_jet_matches_finite_differences():
    from scalarlab.fields import sample_stream_2d

    n = 256
    phi = sample_stream_2d(SpectrumConfig(2, 6, n, decay_exponent=2.0, seed=2))
    jet = jet_grid(phi)
    f = phi.real_values[0]
    fd = (np.roll(f, -1, axis=0) - np.roll(f, 1, axis=0)) * n / 2
    err = np.abs(fd - jet.jacobian[..., 0, 0]).max()
    # central differences err by h^2 f'''/6 and f''' <= (2 pi K)^2 max|f'| for a band-limited f
    assert err <= (TAU * 6) ** 2 / 6 * np.abs(jet.jacobian).max() / n**2


def test_empty_count_with_tiny_threshold():
    jet = jet_grid(scalar(lambda x, y: np.cos(TAU * x), 64))
    probe = RankVarietyProbe(2, 0, 100.0, 1.0, 1e-6)
    assert critical_cube_count(jet, probe, 3) == 0


def test_line_critical_set_dimension():
    jet = jet_grid(scalar(lambda x, y: np.cos(TAU * x), 512))
    curve = box_count_curve(jet, probe_for(jet, 0))
    assert curve.fitted_dim == pytest.approx(1.0, abs=0.15)
    counts = curve.counts
    assert all(b >= a for a, b in zip(counts, counts[1:]))


def test_isolated_points_dimension():
    jet = jet_grid(scalar(lambda x, y: np.cos(TAU * x) * np.cos(TAU * y), 512))
    assert box_count_curve(jet, probe_for(jet, 0)).fitted_dim <= 0.3


def test_synthetic_power_counts():
    levels = list(range(7))
    curve = dimension_fit(BoxCountCurve(levels, [2.0 ** (1.37 * lv) for lv in levels]))
    assert curve.fitted_dim == pytest.approx(1.37, abs=1e-6)
    empty = dimension_fit(BoxCountCurve(levels, [0] * 7))
    assert empty.empty and empty.fitted_dim == 0.0


def test_probe_codimension_and_bound():
    p = RankVarietyProbe(3, 0, 1.0, 0.25, 1.0)
    assert p.codimension == 6 and p.theory_bound == pytest.approx(1.5)
    with pytest.raises(ValueError):
        RankVarietyProbe(3, 2, 1.0, 0.25, 1.0)


def test_image_dimension_examples():
    jet = jet_grid(scalar(lambda x, y: np.cos(TAU * x), 256))
    assert image_dimension_estimate(jet, probe_for(jet, 0)).fitted <= 0.2
    const = jet_grid(scalar(lambda x, y: 1 + 0 * x, 64))
    img = image_dimension_estimate(const, RankVarietyProbe(2, 0, 0.0, 1.0, 0.0))
    assert img.fitted == 0.0 and img.domain.fitted_dim == pytest.approx(2.0)
    assert img.bound == pytest.approx(1.0)


def test_critical_value_measure_examples():
    jet = jet_grid(scalar(lambda x, y: np.cos(TAU * x), 256))
    probe = probe_for(jet, 0)
    for bw in (0.1, 0.05, 0.02):
        assert critical_value_measure(jet, bw, probe) <= 2 * bw * 1.5
    const = jet_grid(scalar(lambda x, y: 0.3 + 0 * x, 64))
    cprobe = RankVarietyProbe(2, 0, 0.0, 1.0, 0.0)
    assert critical_value_measure(const, 0.1, cprobe) == pytest.approx(0.1)
    for row in weak_sard_proxy(const, [0.2, 0.1, 0.05], cprobe):
        assert row.max_bin_mass == pytest.approx(1.0) and row.z_fraction == pytest.approx(1.0)
    with pytest.raises(ValueError):
        critical_value_measure(jet, 1.5, probe)


def test_weak_sard_empty_critical_set():
    # shifted by half a cell so that no grid point is critical
    jet = jet_grid(scalar(lambda x, y: np.cos(TAU * (x + 1 / 128)), 64))
    rows = weak_sard_proxy(jet, [0.1, 0.05], RankVarietyProbe(2, 0, 100.0, 1.0, 1e-9))
    assert all(r.total_mass == 0 and r.max_bin_mass == 0 for r in rows)


def test_rate_fit():
    w = [0.2, 0.1, 0.05]
    assert rate_fit(w, [0.4, 0.2, 0.1]) == pytest.approx(1.0)


def test_orthogonality_residual_examples():
    p1 = scalar(lambda x, y, z: np.sin(TAU * x) / TAU, 16, 3)
    p2 = scalar(lambda x, y, z: np.sin(TAU * y) / TAU, 16, 3)
    pots = ClebschPotentials(p1, p2)
    jet = jet_grid(pots.stacked())
    assert orthogonality_residual(jet, velocity_from_clebsch(pots)) <= 1e-12
    assert orthogonality_residual(jet, GridField.zeros(3, 16, components=3)) == 0.0
    a = sample_clebsch_3d(SpectrumConfig.for_holder(3, 0.25, 16, max_wavenumber=3, seed=1))
    b = sample_clebsch_3d(SpectrumConfig.for_holder(3, 0.25, 16, max_wavenumber=3, seed=2))
    assert orthogonality_residual(jet_grid(a.stacked()), velocity_from_clebsch(b)) > 1e-2
