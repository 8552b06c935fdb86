"""Critical-set geometry of a map phi: T^d -> R^{d-1}.

Covers the distance of Jacobians to the rank-k matrix variety, cube counts
over dyadic subdivisions with a Hölder-slack threshold, box-counting fits of
the critical set and of its image, and empirical (weak) Sard measures.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fields import EstimatorError, holder_estimate, holder_seminorm
from .grid import GridField, ShapeError, gradient_coefficients, inverse


@dataclass(frozen=True)
class GridJet:
    """phi stack (d-1 components) and its Jacobian, shape (N,)*d + (d-1, d)."""

    phi: GridField
    jacobian: np.ndarray

    @property
    def resolution(self) -> int:
        return self.phi.resolution

    @property
    def dimension(self) -> int:
        return self.phi.dimension


def jet_grid(phi: GridField) -> GridJet:
    d = phi.dimension
    if phi.components != d - 1:
        raise ShapeError(f"expected {d - 1} potentials on T^{d}, got {phi.components}")
    rows = [inverse(gradient_coefficients(c, d), d).real for c in phi.spectral_values]
    jac = np.stack(rows)  # (d-1, d, N, ..., N)
    jac = np.moveaxis(jac, (0, 1), (-2, -1))
    return GridJet(phi, np.ascontiguousarray(jac))


def distance_to_low_rank(M, k: int):
    """Frobenius distance from M (or a stack of matrices) to matrices of rank <= k.

    By Eckart-Young this is the root sum of squares of the singular values
    beyond the k-th.
    """
    M = np.asarray(M, dtype=float)
    if k < 0:
        raise ValueError("rank bound must be >= 0")
    if k == 0:
        return np.sqrt((M**2).sum(axis=(-2, -1)))
    s = np.linalg.svd(M, compute_uv=False)
    return np.sqrt((s[..., k:] ** 2).sum(axis=-1))


@dataclass(frozen=True)
class RankVarietyProbe:
    dimension: int
    rank_bound: int
    radius_bound: float
    holder_alpha: float
    holder_norm: float
    threshold_multiplier: float = 1.0

    def __post_init__(self):
        if not 0 <= self.rank_bound <= self.dimension - 2:
            raise ValueError(f"rank bound must lie in [0, {self.dimension - 2}]")

    @property
    def codimension(self) -> int:
        d, k = self.dimension, self.rank_bound
        return (d - k) * (d - 1 - k)

    @property
    def theory_bound(self) -> float:
        return self.dimension - self.codimension * self.holder_alpha

    def threshold(self, level: int) -> float:
        """N_reg (sqrt(d) 2^{-level-1})^alpha, scaled by the multiplier."""
        half_diag = math.sqrt(self.dimension) * 2.0 ** (-level - 1)
        return self.threshold_multiplier * self.holder_norm * half_diag**self.holder_alpha


def probe_for(jet: GridJet, rank_bound: int, *, alpha=None, holder_norm=None, multiplier=1.0):
    """Probe with Hölder data estimated from the jet unless given.

    alpha comes from the increment fit of D phi (worst component), N_reg
    from the largest grid quotient |delta D phi| / r^alpha, and the matrix
    ball radius is twice the largest grid |D phi|.
    """
    phi = jet.phi
    if alpha is None:
        alpha = min(holder_estimate(phi.component(i), 1) for i in range(phi.components))
    if holder_norm is None:
        holder_norm = max(holder_seminorm(phi.component(i), alpha, 1) for i in range(phi.components))
    radius = 2.0 * float(np.sqrt((jet.jacobian**2).sum(axis=(-2, -1))).max())
    return RankVarietyProbe(jet.dimension, rank_bound, radius, float(alpha), float(holder_norm), multiplier)


def finest_level(resolution: int) -> int:
    return int(math.log2(resolution // 4))


def _check_level(jet: GridJet, level: int):
    if level < 0 or 2**level > jet.resolution // 4:
        raise ValueError(f"level {level} needs 2^level <= N/4 = {jet.resolution // 4}")


def _centre_jacobians(jet: GridJet, level: int) -> np.ndarray:
    n, d = jet.resolution, jet.dimension
    step = n // 2**level
    idx = np.arange(2**level) * step + step // 2  # cube centres are grid points
    return jet.jacobian[np.ix_(*([idx] * d))]


def _critical(jacobians, probe: RankVarietyProbe, delta: float) -> np.ndarray:
    dist = distance_to_low_rank(jacobians, probe.rank_bound)
    norm = np.sqrt((jacobians**2).sum(axis=(-2, -1)))
    # within the ball B_N the Eckart-Young minimiser is admissible (its norm is <= |M|)
    return (dist <= delta) & (norm <= probe.radius_bound)


def critical_cube_count(jet: GridJet, probe: RankVarietyProbe, level: int) -> int:
    """Number of level-cubes whose centre Jacobian lies within the threshold of W."""
    _check_level(jet, level)
    return int(_critical(_centre_jacobians(jet, level), probe, probe.threshold(level)).sum())


@dataclass
class BoxCountCurve:
    levels: list
    counts: list
    fitted_dim: float = 0.0
    theory_bound: float = float("nan")
    flag: bool = False
    empty: bool = False
    window: tuple = ()
    slack: float = 0.2

    def rows(self):
        return list(zip(self.levels, self.counts))


def dimension_fit(curve: BoxCountCurve, dimension: int | None = None) -> BoxCountCurve:
    """Least-squares slope of log2 count against level.

    The window drops the two coarsest levels and the finest when at least
    two levels remain, and uses only nonzero counts.
    """
    levels = np.asarray(curve.levels, dtype=float)
    counts = np.asarray(curve.counts, dtype=float)
    if not np.any(counts > 0):
        curve.fitted_dim, curve.empty, curve.window = 0.0, True, ()
        curve.flag = False
        return curve
    sel = np.arange(len(levels))
    if len(levels) - 3 >= 2:
        sel = sel[2:-1]
    sel = sel[counts[sel] > 0]
    if len(sel) < 2:
        sel = np.nonzero(counts > 0)[0]
    if len(sel) < 2:
        slope = 0.0
    else:
        slope = float(np.polyfit(levels[sel], np.log2(counts[sel]), 1)[0])
    upper = dimension if dimension is not None else math.inf
    curve.fitted_dim = float(min(max(slope, 0.0), upper))
    curve.window = tuple(int(levels[i]) for i in sel)
    curve.empty = False
    curve.flag = bool(curve.fitted_dim > curve.theory_bound + curve.slack)
    return curve


def box_count_curve(jet: GridJet, probe: RankVarietyProbe, levels=None) -> BoxCountCurve:
    if levels is None:
        levels = list(range(0, finest_level(jet.resolution) + 1))
    counts = [critical_cube_count(jet, probe, lv) for lv in levels]
    curve = BoxCountCurve(list(levels), counts, theory_bound=probe.theory_bound)
    return dimension_fit(curve, jet.dimension)


def critical_points(jet: GridJet, probe: RankVarietyProbe, level: int | None = None) -> np.ndarray:
    """Mask of grid points within the threshold of W at the given (default finest) level."""
    level = finest_level(jet.resolution) if level is None else level
    _check_level(jet, level)
    return _critical(jet.jacobian, probe, probe.threshold(level))


def _range_values(jet: GridJet, mask: np.ndarray) -> np.ndarray:
    vals = jet.phi.real_values  # (d-1, N, ..., N)
    return np.stack([c[mask] for c in vals], axis=-1)


@dataclass
class ImageDimension:
    fitted: float
    bound: float
    empty: bool
    flag: bool
    levels: list = field(default_factory=list)
    counts: list = field(default_factory=list)
    domain: BoxCountCurve | None = None

    def rows(self):
        return list(zip(self.levels, self.counts))


def image_dimension_estimate(jet: GridJet, probe: RankVarietyProbe, levels=None, *, slack=0.2) -> ImageDimension:
    """Box-count phi(Y) in R^{d-1} over the critical grid points.

    Range boxes at level j have side 2^-j times the extent of phi over the
    whole torus.  The bound is (domain dimension + alpha k)/(1 + alpha)
    with the domain dimension fitted by box_count_curve.
    """
    domain = box_count_curve(jet, probe, levels)
    alpha, k = probe.holder_alpha, probe.rank_bound
    bound = (domain.fitted_dim + alpha * k) / (1 + alpha)
    image_levels = list(domain.levels)
    pts = _range_values(jet, critical_points(jet, probe))
    if len(pts) == 0:
        return ImageDimension(0.0, bound, True, False, image_levels, [0] * len(image_levels), domain)
    vals = jet.phi.real_values.reshape(jet.phi.components, -1)
    lo = vals.min(axis=1)
    extent = float((vals.max(axis=1) - lo).max())
    counts = []
    for j in image_levels:
        if extent == 0:
            counts.append(1)
            continue
        side = extent * 2.0**-j
        boxes = np.floor((pts - lo) / side).astype(np.int64)
        counts.append(len(np.unique(boxes, axis=0)))
    curve = dimension_fit(BoxCountCurve(image_levels, counts), jet.dimension - 1)
    fitted = curve.fitted_dim
    return ImageDimension(fitted, bound, False, bool(fitted > bound + slack), image_levels, counts, domain)


def _bin_ids(values: np.ndarray, bin_width: float) -> np.ndarray:
    return np.floor(values / bin_width).astype(np.int64)


def critical_value_measure(jet: GridJet, bin_width: float, probe: RankVarietyProbe) -> float:
    """Lebesgue measure of the union of range bins (side bin_width) hit by critical values.

    Criticality uses the threshold of the finest admissible cube level.
    """
    if not 0 < bin_width < 1:
        raise ValueError("bin_width must lie in (0, 1)")
    pts = _range_values(jet, critical_points(jet, probe))
    if len(pts) == 0:
        return 0.0
    bins = np.unique(_bin_ids(pts, bin_width), axis=0)
    return float(len(bins) * bin_width ** (jet.dimension - 1))


@dataclass
class WeakSardRow:
    bin_width: float
    total_mass: float
    max_bin_mass: float
    z_fraction: float


def weak_sard_proxy(jet: GridJet, bin_widths, probe: RankVarietyProbe) -> list[WeakSardRow]:
    """Binned pushforward of the critical grid points (weight N^-d each)."""
    n, d = jet.resolution, jet.dimension
    mask = critical_points(jet, probe)
    weight = 1.0 / n**d
    z_fraction = float(mask.sum()) * weight
    pts = _range_values(jet, mask)
    rows = []
    for bw in bin_widths:
        if len(pts) == 0:
            rows.append(WeakSardRow(float(bw), 0.0, 0.0, 0.0))
            continue
        _, counts = np.unique(_bin_ids(pts, bw), axis=0, return_counts=True)
        rows.append(WeakSardRow(float(bw), float(counts.sum() * weight), float(counts.max() * weight), z_fraction))
    return rows


def rate_fit(bin_widths, measures) -> float:
    """Slope of log measure against log bin width (positive when measure -> 0)."""
    x = np.log(np.asarray(bin_widths, dtype=float))
    y = np.asarray(measures, dtype=float)
    if np.any(y <= 0):
        raise EstimatorError("rate undefined for zero measure")
    return float(np.polyfit(x, np.log(y), 1)[0])


def orthogonality_residual(jet: GridJet, v: GridField) -> float:
    """max over grid and k of |grad phi_k . v| / (max |grad phi_k| max |v|)."""
    if v.dimension != jet.dimension or v.components != jet.dimension or v.resolution != jet.resolution:
        raise ShapeError("velocity does not match the jet")
    vv = np.moveaxis(v.real_values, 0, -1)
    vmax = float(np.sqrt((vv**2).sum(axis=-1)).max())
    if vmax == 0:
        return 0.0
    worst = 0.0
    for k in range(jet.phi.components):
        g = jet.jacobian[..., k, :]
        gmax = float(np.sqrt((g**2).sum(axis=-1)).max())
        if gmax == 0:
            continue
        worst = max(worst, float(np.abs((g * vv).sum(axis=-1)).max()) / (gmax * vmax))
    return worst
