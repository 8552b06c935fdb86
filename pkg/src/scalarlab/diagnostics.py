"""Vanishing-diffusivity diagnostics: dissipation sweeps, Yaglom averages,
structure-function exponents and strong-convergence distances."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .fields import EstimatorError, on_grid
from .grid import GridField, ShapeError, derivative_wavenumbers, inverse, resample, wavenumbers
from .solver import DissipationLedger, ScalarState, SolverConfig, initialize, solve


class UnresolvedError(ValueError):
    """An epsilon cannot be resolved within the allowed grid sizes."""

    def __init__(self, epsilon, minimal_resolution, message=None):
        self.epsilon = epsilon
        self.minimal_resolution = minimal_resolution
        super().__init__(
            message
            or f"epsilon={epsilon:g} needs N >= {minimal_resolution} so that 2/N < sqrt(epsilon T)"
        )


class Verdict(str, Enum):
    NO_ANOMALY = "no_anomaly_consistent"
    ANOMALY = "anomaly_suspected"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class SweepThresholds:
    decrease_factor: float = 0.2
    plateau_tolerance: float = 0.1
    plateau_floor: float = 1e-3  # relative to variance(0)
    plateau_points: int = 3


@dataclass
class SweepResult:
    epsilons: list
    dissipation: list
    variance_deficit: list
    fit_slope: float
    verdict: Verdict
    resolutions: list = field(default_factory=list)
    initial_variance: list = field(default_factory=list)
    final_states: list = field(default_factory=list)
    ledgers: list = field(default_factory=list)

    def rows(self):
        return list(zip(self.epsilons, self.dissipation, self.variance_deficit))


def resolution_for(epsilon: float, t_final: float, n_min: int = 32) -> int:
    """Smallest power of two N >= n_min with 2/N < sqrt(epsilon T)."""
    if epsilon <= 0:
        raise UnresolvedError(epsilon, math.inf, "epsilon = 0 has no diffusive scale")
    scale = math.sqrt(epsilon * t_final)
    n = max(2, n_min)
    n = 1 << (n - 1).bit_length()
    while not 2.0 / n < scale:
        n *= 2
    return n


def sweep_verdict(dissipation, variance0, thresholds: SweepThresholds = SweepThresholds()) -> Verdict:
    d = np.asarray(dissipation, dtype=float)
    if len(d) >= 2 and np.all(np.diff(d) < 0) and d[-1] < thresholds.decrease_factor * d[0]:
        return Verdict.NO_ANOMALY
    m = thresholds.plateau_points
    if len(d) >= m:
        tail = d[-m:]
        if tail.min() > thresholds.plateau_floor * variance0 and (
            tail.max() - tail.min() <= thresholds.plateau_tolerance * tail.max()
        ):
            return Verdict.ANOMALY
    return Verdict.INCONCLUSIVE


def log_slope(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    good = (x > 0) & (y > 0)
    if good.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[good]), np.log(y[good]), 1)[0])


def _sweep_cell(args):
    v, theta_in, eps, cfg, n = args
    state0 = initialize(theta_in, n, v.dimension)
    cfg_eps = SolverConfig(eps, cfg.t_final, cfg.dt, cfg.cfl_safety, cfg.dealias, cfg.output_cadence)
    return solve(state0, on_grid(v, n), cfg_eps)


def epsilon_sweep(
    v: GridField,
    theta_in,
    epsilons: Sequence[float],
    cfg: SolverConfig,
    *,
    n_min: int | None = None,
    max_resolution: int = 512,
    fit_tail: int | None = None,
    thresholds: SweepThresholds = SweepThresholds(),
    workers: int = 1,
) -> SweepResult:
    """Solve once per epsilon on a resolution chosen by the Batchelor-scale rule.

    ``fit_tail`` restricts the log-log fit to the smallest ``fit_tail``
    epsilons.  Runs are distributed over ``workers`` processes; results are
    reduced in epsilon order.
    """
    eps = [float(e) for e in epsilons]
    if len(eps) < 4:
        raise ValueError("a sweep needs at least 4 epsilons")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilons must be strictly decreasing")
    if any(b / a > 0.5 + 1e-12 for a, b in zip(eps, eps[1:])):
        raise ValueError("geometric ratio between epsilons must be <= 1/2")
    n_min = v.resolution if n_min is None else n_min
    ns = [resolution_for(e, cfg.t_final, n_min) for e in eps]
    for e, n in zip(eps, ns):
        if n > max_resolution:
            raise UnresolvedError(e, n)
    cells = [(v, theta_in, e, cfg, n) for e, n in zip(eps, ns)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(c) for c in cells]
    states = [r[0] for r in results]
    ledgers: list[DissipationLedger] = [r[1] for r in results]
    diss = [L.dissipation_cumulative[-1] for L in ledgers]
    deficit = [L.variance[0] - L.variance[-1] for L in ledgers]
    tail = slice(-fit_tail, None) if fit_tail else slice(None)
    slope = log_slope(eps[tail], diss[tail])
    var0 = ledgers[0].variance[0]
    return SweepResult(
        eps, diss, deficit, slope, sweep_verdict(diss, var0, thresholds),
        ns, [L.variance[0] for L in ledgers], states, ledgers,
    )


# --- Yaglom spherical averages --------------------------------------------------


def sphere_directions(dimension: int, q: int) -> np.ndarray:
    """Q quasi-uniform unit vectors: equal angles on the circle, Fibonacci on S^2."""
    if dimension == 2:
        a = 2 * np.pi * np.arange(q) / q
        return np.stack([np.cos(a), np.sin(a)], axis=1)
    if dimension == 3:
        i = np.arange(q) + 0.5
        z = 1 - 2 * i / q
        rho = np.sqrt(1 - z * z)
        golden = np.pi * (3 - np.sqrt(5))
        phi = golden * np.arange(q)
        return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    raise ShapeError("directions only for d = 2, 3")


def sphere_measure(dimension: int) -> float:
    return 2 * np.pi if dimension == 2 else 4 * np.pi


def _shift_symbol(n: int, d: int, h) -> np.ndarray:
    """Multiplier taking coefficients of f to those of f(. + h)."""
    ks = wavenumbers(n, d)
    out = np.ones((n,) * d, dtype=complex)
    for k, ha in zip(ks, h):
        axis = np.exp(2j * np.pi * k * ha)
        axis = np.where(np.abs(k) == n // 2, np.cos(np.pi * n * ha), axis)
        out = out * axis
    return out


def yaglom_average(
    theta: GridField, v: GridField, r: float, *, q: int | None = None, pointwise: bool = False
):
    """Space average of S(theta, v, r) = int_{S^{d-1}} xi . dv(r xi) |dtheta(r xi)|^2 dxi.

    Increments are exact shifts of the trigonometric interpolants.  The
    sphere integral is (surface measure / Q) times the sum over directions.
    Returns (mean_S, pointwise field or None).
    """
    if not 0 < r < 0.5:
        raise ValueError(f"r={r} outside (0, 1/2)")
    if theta.resolution != v.resolution or theta.dimension != v.dimension:
        raise ShapeError("theta and v must share grid")
    if theta.components != 1 or v.components != v.dimension:
        raise ShapeError("expected scalar theta and vector v")
    d, n = theta.dimension, theta.resolution
    q = q or (64 if d == 2 else 128)
    weight = sphere_measure(d) / q
    acc = np.zeros((n,) * d)
    th, vv = theta.spectral_values[0], v.spectral_values
    if np.all(th.flat[1:] == 0) or np.all(np.delete(vv.reshape(d, -1), 0, axis=1) == 0):
        # a constant argument has zero increments
        return 0.0, (GridField.from_real(acc[None]) if pointwise else None)
    for xi in sphere_directions(d, q):
        m = _shift_symbol(n, d, r * xi) - 1.0
        dth = inverse(th * m, d).real
        dv = inverse(vv * m, d).real
        acc += np.tensordot(xi, dv, axes=1) * dth * dth
    acc *= weight
    return float(acc.mean()), (GridField.from_real(acc[None]) if pointwise else None)


@dataclass
class YaglomCurve:
    radii: list
    mean_S: list
    pointwise_S: list | None = None

    def rows(self):
        return [(r, s, s / r) for r, s in zip(self.radii, self.mean_S)]


def yaglom_curve(theta: GridField, v: GridField, radii, *, q=None, pointwise=False) -> YaglomCurve:
    vals = [yaglom_average(theta, v, r, q=q, pointwise=pointwise) for r in radii]
    return YaglomCurve(list(radii), [m for m, _ in vals], [p for _, p in vals] if pointwise else None)


@dataclass
class YaglomRatio:
    epsilons: list
    ratios: list

    @property
    def decrease_factor(self) -> float:
        first, last = abs(self.ratios[0]), abs(self.ratios[-1])
        if last == 0:
            return math.inf if first > 0 else 1.0
        return first / last


def yaglom_ratio_curve(sweep: SweepResult, v: GridField, *, q=None) -> YaglomRatio:
    """mean_S(theta_eps(T), v, eps) / eps for every run of a sweep."""
    if not sweep.final_states:
        raise ValueError("sweep carries no final states")
    ratios = []
    for eps, state in zip(sweep.epsilons, sweep.final_states):
        vn = resample(v, state.resolution)
        s, _ = yaglom_average(state.theta, vn, eps, q=q)
        ratios.append(s / eps)
    return YaglomRatio(list(sweep.epsilons), ratios)


# --- structure functions ---------------------------------------------------------


def structure_function(theta: GridField, radii, *, q: int | None = None) -> np.ndarray:
    """Direction-averaged mean square increment via Parseval:
    S2(r) = (1/Q) sum_q sum_k |theta_k|^2 4 sin^2(pi r k.xi_q)."""
    d, n = theta.dimension, theta.resolution
    q = q or (64 if d == 2 else 128)
    ks = [k.astype(float) for k in derivative_wavenumbers(n, d)]  # Nyquist plane dropped
    power = np.abs(theta.spectral_values[0]) ** 2
    dirs = sphere_directions(d, q)
    out = []
    for r in radii:
        total = 0.0
        for xi in dirs:
            phase = np.pi * r * sum(k * x for k, x in zip(ks, xi))
            total += float((power * 4 * np.sin(phase) ** 2).sum())
        out.append(total / q)
    return np.array(out)


# increments of the trigonometric interpolant are exact at sub-grid r too
DEFAULT_RADII = tuple(2.0**-j for j in range(7, 2, -1))


def structure_function_exponent(theta: GridField, radii=None, *, q=None):
    """beta_hat = slope/2 of log S2 vs log r.  Returns (beta_hat, (radii, S2))."""
    if radii is None:
        radii = DEFAULT_RADII
    radii = sorted(float(r) for r in radii)
    if len(radii) < 4:
        raise ValueError("need at least 4 radii")
    s2 = structure_function(theta, radii, q=q)
    if not np.all(s2 > 0):
        raise EstimatorError("zero increments: structure-function exponent undefined")
    return log_slope(radii, s2) / 2, (radii, s2)


# --- strong convergence ----------------------------------------------------------


def strong_convergence_check(states: Sequence[ScalarState]) -> list[float]:
    """L2 distances of every state to the last one (the smallest-epsilon run),
    after spectral injection into the finest resolution present."""
    if len(states) < 2:
        raise ValueError("need at least 2 states")
    n = max(s.resolution for s in states)
    coeffs = [resample(s.theta, n).spectral_values[0] for s in states]
    ref = coeffs[-1]
    return [float(np.sqrt((np.abs(c - ref) ** 2).sum())) for c in coeffs]
