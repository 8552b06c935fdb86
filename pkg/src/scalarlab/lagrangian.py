"""Stochastic particle trajectories dX = v(X) dt + sqrt(2 eps) dB on the torus.

Positions are stored unwrapped (in R^d); distances use the torus metric.
Noise is counter-based: the normals used at step n come from a Philox
generator keyed by (seed, mode tag) with counter n, so an ensemble can be
advanced in pieces and still reproduce a single long run bit for bit.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .grid import GridField, ShapeError, evaluate
from .solver import (
    Checkerboard,
    IndicatorHalfTorus,
    SingleMode,
    SolverConfig,
    SpectralTable,
    initialize,
    solve,
)


class NoiseMode(str, Enum):
    SHARED = "shared"
    INDEPENDENT = "independent"


class StabilityWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SDEConfig:
    epsilon: float
    dt: float
    t_final: float
    n_particles: int = 1
    noise_mode: NoiseMode = NoiseMode.SHARED
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "noise_mode", NoiseMode(self.noise_mode))
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not 0 < self.dt <= self.t_final:
            raise ValueError("need 0 < dt <= t_final")
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def n_steps(self) -> int:
        return max(1, round(self.t_final / self.dt))


@dataclass(frozen=True)
class ParticleEnsemble:
    """Unwrapped positions plus the noise substream id of every particle.

    In shared mode particles with the same id receive the same increments
    (one stochastic flow per id); in independent mode every particle draws
    its own.
    """

    positions: np.ndarray
    initial_positions: np.ndarray
    rng_substream_ids: np.ndarray
    time: float = 0.0
    step_index: int = 0

    @classmethod
    def start(cls, points, substream_ids=None) -> ParticleEnsemble:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ids = np.zeros(len(pts), dtype=np.int64) if substream_ids is None else np.asarray(substream_ids, dtype=np.int64)
        if ids.shape != (len(pts),) or (ids < 0).any():
            raise ValueError("one nonnegative substream id per particle required")
        return cls(pts.copy(), pts.copy(), ids)

    @property
    def wrapped(self) -> np.ndarray:
        return np.mod(self.positions, 1.0)

    def __len__(self):
        return len(self.positions)


# --- off-grid velocity ---------------------------------------------------------


def _keys_weights(t: np.ndarray) -> np.ndarray:
    """Catmull-Rom (Keys, a = -1/2) weights for nodes -1, 0, 1, 2 at offset t in [0, 1)."""
    t2, t3 = t * t, t * t * t
    return np.stack([
        -0.5 * t3 + t2 - 0.5 * t,
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * t3 - 0.5 * t2,
    ], axis=-1)


def interpolate_cubic(f: GridField, points: np.ndarray) -> np.ndarray:
    """Periodic local cubic (C^1) interpolation; returns (n_points, components).

    Exact for constants and for polynomials up to degree 2 along each axis.
    """
    n, d = f.resolution, f.dimension
    s = np.mod(points, 1.0) * n
    base = np.floor(s).astype(np.int64)
    w = _keys_weights(s - base)  # (P, d, 4)
    nodes = (base[:, :, None] + np.arange(-1, 3)) % n  # (P, d, 4)
    # broadcast the per-axis stencils into a (P, 4, ..., 4) gather
    idx = tuple(
        nodes[:, a].reshape((-1,) + (1,) * a + (4,) + (1,) * (d - 1 - a)) for a in range(d)
    )
    block = f.real_values[(slice(None),) + idx]  # (C, P, 4, ..., 4)
    letters = "abc"[:d]
    spec = "cp" + letters + "," + ",".join("p" + l for l in letters) + "->pc"
    return np.einsum(spec, block, *(w[:, a] for a in range(d)))


class SparseSpectralField:
    """Exact evaluation of a trigonometric polynomial from its nonzero modes."""

    def __init__(self, f: GridField, tol: float = 1e-12):
        n, d = f.resolution, f.dimension
        c = f.spectral_values.reshape(f.components, -1)
        keep = np.abs(c).max(axis=0) > tol * max(np.abs(c).max(), np.finfo(float).tiny)
        idx = np.array(np.unravel_index(np.nonzero(keep)[0], (n,) * d)).T
        k = np.where(idx >= n // 2, idx - n, idx)
        if (np.abs(k) == n // 2).any():
            raise ShapeError("sparse evaluation does not support Nyquist modes")
        self.k = k.astype(float)
        self.c = c[:, keep]

    def __call__(self, points: np.ndarray) -> np.ndarray:
        phase = np.exp(2j * np.pi * (points @ self.k.T))
        return (phase @ self.c.T).real


def velocity_sampler(v: GridField, method: str = "cubic"):
    if method == "cubic":
        return lambda pts: interpolate_cubic(v, pts)
    if method == "spectral":
        return lambda pts: evaluate(v, pts)
    if method == "sparse":
        return SparseSpectralField(v)
    raise ValueError(f"unknown interpolation method {method!r}")


# --- stepping ---------------------------------------------------------------------

_MODE_TAG = {NoiseMode.SHARED: 0, NoiseMode.INDEPENDENT: 1}


def _step_normals(seed: int, mode: NoiseMode, step: int, rows: int, d: int) -> np.ndarray:
    bitgen = np.random.Philox(key=np.array([seed, _MODE_TAG[mode]], dtype=np.uint64),
                              counter=np.array([0, step, 0, 0], dtype=np.uint64))
    return np.random.Generator(bitgen).standard_normal((rows, d))


def evolve_ensemble(
    ens: ParticleEnsemble, v: GridField, cfg: SDEConfig, *, method: str = "cubic"
) -> ParticleEnsemble:
    """Euler-Maruyama steps X <- X + v(X) dt + sqrt(2 eps dt) xi up to cfg.t_final."""
    d = ens.positions.shape[1]
    if v.dimension != d or v.components != d:
        raise ShapeError("velocity and particles disagree on dimension")
    vel = velocity_sampler(v, method)
    vmax = float(np.sqrt((v.real_values**2).sum(axis=0)).max())
    if vmax * cfg.dt > 0.5 / v.resolution:
        warnings.warn(
            f"max|v| dt = {vmax * cfg.dt:.3g} exceeds half a grid cell (0.5/N = {0.5 / v.resolution:.3g})",
            StabilityWarning,
            stacklevel=2,
        )
    x = ens.positions.copy()
    ids = ens.rng_substream_ids
    n_ids = int(ids.max()) + 1 if len(ids) else 0
    scale = math.sqrt(2 * cfg.epsilon * cfg.dt)
    step0 = ens.step_index
    for i in range(cfg.n_steps):
        drift = vel(x) if vmax > 0 else 0.0
        x = x + drift * cfg.dt
        if scale > 0:
            if cfg.noise_mode is NoiseMode.SHARED:
                xi = _step_normals(cfg.seed, cfg.noise_mode, step0 + i, n_ids, d)[ids]
            else:
                xi = _step_normals(cfg.seed, cfg.noise_mode, step0 + i, len(x), d)
            x = x + scale * xi
    return replace(
        ens,
        positions=x,
        time=ens.time + cfg.n_steps * cfg.dt,
        step_index=step0 + cfg.n_steps,
    )


# --- pair statistics --------------------------------------------------------------


def torus_distance_squared(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    delta = np.asarray(a) - np.asarray(b)
    delta -= np.round(delta)
    return (delta**2).sum(axis=-1)


def pair_distances_squared(ens: ParticleEnsemble, pairing) -> np.ndarray:
    pairs = np.asarray(pairing, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        raise ValueError("empty pairing")
    if pairs.min() < 0 or pairs.max() >= len(ens):
        raise IndexError("pair index out of range")
    return torus_distance_squared(ens.positions[pairs[:, 0]], ens.positions[pairs[:, 1]])


def pair_dispersion(ens: ParticleEnsemble, pairing) -> float:
    """Mean squared geodesic torus distance over the given index pairs."""
    return float(pair_distances_squared(ens, pairing).mean())


def pair_dispersion_stats(ens: ParticleEnsemble, pairing) -> tuple[float, float]:
    d2 = pair_distances_squared(ens, pairing)
    sem = float(d2.std(ddof=1) / math.sqrt(len(d2))) if len(d2) > 1 else 0.0
    return float(d2.mean()), sem


def dispersion_curve(ens, v, cfg: SDEConfig, pairing, times, *, method="cubic"):
    """(t, mean_d2, sem) rows at the requested times, advancing one ensemble."""
    rows = []
    t_prev = ens.time
    for t in times:
        if t > t_prev:
            ens = evolve_ensemble(ens, v, replace(cfg, t_final=t - t_prev), method=method)
            t_prev = t
        m, s = pair_dispersion_stats(ens, pairing)
        rows.append((float(t), m, s))
    return rows, ens


# --- Richardson verdict ------------------------------------------------------------


class RichardsonVerdict(str, Enum):
    NO_DISPERSION = "no_dispersion_consistent"
    DISPERSION = "dispersion_suspected"
    INCONCLUSIVE = "inconclusive"


@dataclass
class DispersionSweep:
    """Per-cell mean and SEM of d^2 at t = 1 for each epsilon, and the eps = 0 value."""

    epsilons: list
    means: np.ndarray  # (n_eps, n_cells)
    sems: np.ndarray
    baseline: np.ndarray  # (n_cells,)
    cell_flags: list = field(default_factory=list)


def richardson_verdict(
    sweep: DispersionSweep,
    *,
    n_se: float = 3.0,
    floor: float = 1e-4,
    fraction: float = 0.1,
    tail: int = 3,
    shrink: float = 0.5,
    min_rate: float = 0.25,
) -> RichardsonVerdict:
    """Classify a dispersion sweep cell by cell.

    The gap |E[d^2] - d_0^2| to the eps = 0 separation is followed as eps
    decreases.  Under shared noise it can have either sign, hence the
    magnitude.  A cell is consistent with no dispersion when at the smallest
    eps the gap has vanished within n_se SEM, or when over the ``tail``
    smallest epsilons it does not grow (beyond n_se combined SEM), still
    shrinks at least like eps^min_rate (within n_se SEM), and has fallen to at most ``shrink``
    times its largest value (within n_se SEM).  A cell shows dispersion when
    the gap is not shrinking and the excess stays above ``floor`` (by n_se
    SEM) at every tail epsilon.
    """
    eps = np.asarray(sweep.epsilons, dtype=float)
    if len(eps) < 3:
        raise ValueError("need at least 3 epsilons")
    order = np.argsort(-eps)
    m = np.asarray(sweep.means, dtype=float)[order]
    s = np.asarray(sweep.sems, dtype=float)[order]
    excess = m - np.asarray(sweep.baseline, dtype=float)[None, :]
    gap = np.abs(excess)
    t = slice(-max(2, min(tail, len(eps))), None)
    flags, consistent, dispersive = [], [], []
    for c in range(m.shape[1]):
        g, e, se = gap[t, c], excess[t, c], s[t, c]
        combined = np.sqrt(se[:-1] ** 2 + se[1:] ** 2)
        settling = bool(np.all(g[1:] <= g[:-1] + n_se * combined + 1e-15))
        slack = n_se * se[-1] + 1e-15
        shrunk = bool(g[-1] - slack <= shrink * gap[:, c].max())
        et = eps[order][t]
        decaying = shrunk and bool(g[-1] - slack <= g[0] * (et[-1] / et[0]) ** min_rate)
        ok = bool(g[-1] <= slack) or (settling and decaying)
        dis = (not decaying) and bool(np.all(e - n_se * se > floor))
        consistent.append(ok)
        dispersive.append(dis)
        flags.append("consistent" if ok else ("dispersive" if dis else "unclear"))
    sweep.cell_flags = flags
    if all(consistent):
        return RichardsonVerdict.NO_DISPERSION
    if np.mean(dispersive) > fraction:
        return RichardsonVerdict.DISPERSION
    return RichardsonVerdict.INCONCLUSIVE


def pair_grid(dimension: int, cells_per_axis: int, rho0: float, realizations: int):
    """Starting points for a grid of pair cells, each replicated over noise realizations.

    Cell c has first particle at the cell's lower corner and second particle
    at distance rho0 along the first axis.  Returns (points, ids, pairing,
    cell_of_pair).
    """
    corners = np.array(list(np.ndindex(*(cells_per_axis,) * dimension)), dtype=float) / cells_per_axis
    offset = np.zeros(dimension)
    offset[0] = rho0
    pts, ids, pairs, cell = [], [], [], []
    for r in range(realizations):
        for c, x in enumerate(corners):
            i = len(pts)
            pts.extend([x, x + offset])
            ids.extend([r, r])
            pairs.append((i, i + 1))
            cell.append(c)
    return np.array(pts), np.array(ids), np.array(pairs), np.array(cell)


def dispersion_sweep(
    v: GridField,
    epsilons: Sequence[float],
    *,
    dt: float,
    t_final: float = 1.0,
    cells_per_axis: int = 4,
    rho0: float = 1 / 16,
    realizations: int = 64,
    noise_mode: NoiseMode = NoiseMode.SHARED,
    seed: int = 0,
    method: str = "cubic",
) -> DispersionSweep:
    """Pair-cell statistics at t_final for each epsilon plus the eps = 0 flow."""
    d = v.dimension
    pts, ids, pairs, cell = pair_grid(d, cells_per_axis, rho0, realizations)
    n_cells = cells_per_axis**d
    if NoiseMode(noise_mode) is NoiseMode.INDEPENDENT:
        ids = np.arange(len(pts))

    def cell_stats(ens):
        d2 = pair_distances_squared(ens, pairs)
        mean = np.array([d2[cell == c].mean() for c in range(n_cells)])
        sem = np.array([d2[cell == c].std(ddof=1) / math.sqrt((cell == c).sum()) for c in range(n_cells)])
        return mean, sem

    means, sems = [], []
    for eps in epsilons:
        cfg = SDEConfig(eps, dt, t_final, len(pts), noise_mode, seed)
        m, s = cell_stats(evolve_ensemble(ParticleEnsemble.start(pts, ids), v, cfg, method=method))
        means.append(m)
        sems.append(s)
    base_cfg = SDEConfig(0.0, dt, t_final, len(pts), noise_mode, seed)
    base, _ = cell_stats(evolve_ensemble(ParticleEnsemble.start(pts, ids), v, base_cfg, method=method))
    return DispersionSweep(list(epsilons), np.array(means), np.array(sems), base)


# --- Feynman-Kac -------------------------------------------------------------------


def evaluate_initial(kind, points: np.ndarray) -> np.ndarray:
    """Exact values of an initial-data description at arbitrary points."""
    x = np.mod(points, 1.0)
    if isinstance(kind, SingleMode):
        return np.sin(2 * np.pi * x @ np.asarray(kind.mode, dtype=float))
    if isinstance(kind, IndicatorHalfTorus):
        return (x[:, 0] < 0.5).astype(float)
    if isinstance(kind, Checkerboard):
        parity = np.floor(kind.cells * x).astype(int).sum(axis=1)
        return np.where(parity % 2 == 0, 1.0, -1.0)
    if isinstance(kind, SpectralTable):
        out = np.zeros(len(x), dtype=complex)
        for k, a in kind.coefficients.items():
            ph = np.exp(2j * np.pi * x @ np.asarray(k, dtype=float))
            out += a * ph
            kneg = tuple(-c for c in k)
            if kneg not in kind.coefficients and any(k):
                out += np.conj(a) * np.conj(ph)
        return out.real
    raise ValueError(f"cannot evaluate {kind!r}")


@dataclass
class FeynmanKacReport:
    max_error: float
    bound: float
    ok: bool
    rows: list  # (x, mc, spectral, sem)


def feynman_kac_check(
    v: GridField,
    f,
    cfg: SDEConfig,
    probe_points,
    *,
    tolerance: float = 0.0,
    n_se: float = 3.0,
    solver_cfl: float = 0.25,
    method: str = "cubic",
) -> FeynmanKacReport:
    """Compare E[f(Y_T(x))] by Monte Carlo with the spectral solution of the backward equation.

    The backward problem -d_t u = v.grad u + eps Lap u, u(T) = f, becomes a
    forward solve of the advection-diffusion equation with drift -v.  Probe
    points must be grid points.  A point passes when
    |mc - spectral| <= n_se SEM + tolerance; failures are reported, not raised.
    """
    n, d = v.resolution, v.dimension
    probes = np.atleast_2d(np.asarray(probe_points, dtype=float))
    idx = np.rint(np.mod(probes, 1.0) * n).astype(int) % n
    if not np.allclose(idx / n, np.mod(probes, 1.0), atol=1e-12):
        raise ValueError("probe points must lie on the grid")
    minus_v = GridField(-v.real_values, -v.spectral_values)
    state, _ = solve(initialize(f, n, d), minus_v,
                     SolverConfig(cfg.epsilon, cfg.t_final, cfl_safety=solver_cfl))
    spectral = state.theta.real_values[0][tuple(idx.T)]
    # one Brownian path per particle, all probes advanced together
    m = cfg.n_particles
    start = np.repeat(probes, m, axis=0)
    run_cfg = replace(cfg, noise_mode=NoiseMode.INDEPENDENT, n_particles=len(start))
    ens = evolve_ensemble(ParticleEnsemble.start(start), v, run_cfg, method=method)
    vals = evaluate_initial(f, ens.positions).reshape(len(probes), m)
    rows, errors, bounds, ok = [], [], [], True
    for x, u, sample in zip(probes, spectral, vals):
        mc = float(sample.mean())
        sem = float(sample.std(ddof=1) / math.sqrt(m)) if m > 1 else 0.0
        err = abs(mc - u)
        bound = n_se * sem + tolerance
        ok = ok and err <= bound
        errors.append(err)
        bounds.append(bound)
        rows.append((tuple(float(c) for c in x), mc, float(u), sem))
    worst = int(np.argmax(errors))
    return FeynmanKacReport(float(errors[worst]), float(bounds[worst]), bool(ok), rows)
