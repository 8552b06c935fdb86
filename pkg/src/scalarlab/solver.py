"""Pseudo-spectral advection-diffusion solver on the torus.

Solves d_t theta + v . grad theta = eps Laplacian theta for an autonomous
divergence-free v.  Each step is a Strang splitting: exact diffusion over
dt/2, classical RK4 on the dealiased advection term over dt, exact diffusion
over dt/2.  The dissipation eps int |grad theta|^2 released by each exact
diffusion substep is integrated in closed form mode by mode, so the discrete
energy identity var(t) = var(0) - 2 D(t) only carries the RK4 advection error.

Internally the scalar is kept as real-to-complex coefficients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.fft as sfft

from .grid import GridField, ShapeError, dealias_mask, grid_coordinates, wavenumbers


class ConfigurationError(ValueError):
    pass


class StabilityError(RuntimeError):
    pass


class DegenerateDataError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float
    t_final: float
    dt: float | str = "auto"
    cfl_safety: float = 0.5
    dealias: bool = True
    output_cadence: int = 1  # ledger sample every this many steps

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigurationError("epsilon must be >= 0")
        if self.t_final <= 0:
            raise ConfigurationError("t_final must be > 0")
        if not 0 < self.cfl_safety <= 1:
            raise ConfigurationError("cfl_safety must lie in (0, 1]")
        if self.dt != "auto" and not (isinstance(self.dt, (int, float)) and self.dt > 0):
            raise ConfigurationError("dt must be a positive number or 'auto'")
        if self.output_cadence < 1:
            raise ConfigurationError("output_cadence must be >= 1")


@dataclass(frozen=True)
class ScalarState:
    theta: GridField
    time: float = 0.0

    @property
    def resolution(self) -> int:
        return self.theta.resolution


@dataclass
class DissipationLedger:
    times: list = field(default_factory=list)
    variance: list = field(default_factory=list)
    dissipation_cumulative: list = field(default_factory=list)
    balance_residual: list = field(default_factory=list)
    states: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def record(self, t, var, diss, state=None):
        self.times.append(float(t))
        self.variance.append(float(var))
        self.dissipation_cumulative.append(float(diss))
        v0 = self.variance[0]
        self.balance_residual.append(abs(var - v0 + 2 * diss) / v0 if v0 > 0 else 0.0)
        if state is not None:
            self.states.append(state)

    def rows(self):
        return list(zip(self.times, self.variance, self.dissipation_cumulative, self.balance_residual))


# --- initial data --------------------------------------------------------------


@dataclass(frozen=True)
class SingleMode:
    """theta = sin(2 pi k.x)."""

    mode: tuple


@dataclass(frozen=True)
class Checkerboard:
    """Values +-1 on a cells^d checkerboard aligned with the grid."""

    cells: int = 2


@dataclass(frozen=True)
class IndicatorHalfTorus:
    """1 on {x_1 < 1/2}, 0 elsewhere."""


@dataclass(frozen=True)
class SpectralTable:
    """Explicit Fourier coefficients; missing conjugate partners are filled in."""

    coefficients: Mapping[tuple, complex]
    dimension: int = 2


def initial_data_from_dict(spec: Mapping) -> object:
    kind = spec.get("kind")
    if kind == "single_mode":
        return SingleMode(tuple(int(c) for c in spec["mode"]))
    if kind == "checkerboard":
        return Checkerboard(int(spec.get("cells", 2)))
    if kind == "indicator_halftorus":
        return IndicatorHalfTorus()
    if kind == "spectral_table":
        table = {tuple(int(c) for c in m): complex(*a) if isinstance(a, (list, tuple)) else complex(a)
                 for m, a in spec["coefficients"]}
        return SpectralTable(table, int(spec.get("dimension", 2)))
    raise ConfigurationError(f"unknown initial data kind {kind!r}")


def initialize(kind, resolution: int, dimension: int = 2) -> ScalarState:
    """Grid samples of the initial scalar.

    Discontinuous data is sampled pointwise; the solver works with its
    trigonometric interpolant and truncates it to the dealiased band.
    """
    xs = grid_coordinates(resolution, dimension)
    shape = (resolution,) * dimension
    if isinstance(kind, SingleMode):
        if len(kind.mode) != dimension:
            raise ConfigurationError("mode length does not match dimension")
        arg = sum(k * x for k, x in zip(kind.mode, xs))
        theta = np.sin(2 * np.pi * arg) * np.ones(shape)
    elif isinstance(kind, Checkerboard):
        if kind.cells < 1 or resolution % kind.cells:
            raise ConfigurationError("checkerboard cells must divide the resolution")
        parity = sum(np.floor(kind.cells * x).astype(int) for x in xs)
        theta = np.where(parity % 2 == 0, 1.0, -1.0) * np.ones(shape)
    elif isinstance(kind, IndicatorHalfTorus):
        theta = (xs[0] < 0.5).astype(float) * np.ones(shape)
    elif isinstance(kind, SpectralTable):
        if kind.dimension != dimension:
            raise ConfigurationError("spectral table dimension mismatch")
        coeffs = np.zeros(shape, dtype=complex)
        for k, a in kind.coefficients.items():
            if any(abs(c) >= resolution // 2 for c in k):
                raise ConfigurationError(f"mode {k} not representable at N={resolution}")
            idx = tuple(c % resolution for c in k)
            neg = tuple(-c % resolution for c in k)
            coeffs[idx] = a
            if tuple(-c for c in k) not in kind.coefficients:
                coeffs[neg] = np.conj(a)
        return ScalarState(GridField.from_spectral(coeffs[None]), 0.0)
    else:
        raise ConfigurationError(f"unknown initial data {kind!r}")
    return ScalarState(GridField.from_real(theta[None]), 0.0)


# --- spectral plumbing -----------------------------------------------------------


def _half_axes(d):
    return tuple(range(-d, 0))


def _to_half(f: GridField) -> np.ndarray:
    n = f.resolution
    return np.ascontiguousarray(f.spectral_values[0][..., : n // 2 + 1])


def _to_full(half: np.ndarray, n: int, d: int) -> np.ndarray:
    full = np.empty((n,) * d, dtype=complex)
    full[..., : n // 2 + 1] = half
    # theta_hat(-k) = conj(theta_hat(k)) fills the remaining columns
    mirror = half[..., 1 : n // 2][..., ::-1]
    for axis in range(d - 1):
        mirror = np.roll(np.flip(mirror, axis=axis), 1, axis=axis)
    full[..., n // 2 + 1 :] = np.conj(mirror)
    return full


def _state_from_half(half: np.ndarray, n: int, d: int, t: float) -> ScalarState:
    real = sfft.irfftn(half, s=(n,) * d, axes=_half_axes(d), norm="forward")
    return ScalarState(GridField(np.ascontiguousarray(real[None]), _to_full(half, n, d)[None]), t)


def _parseval_weights(n: int, d: int) -> np.ndarray:
    w = np.full(n // 2 + 1, 2.0)
    w[0] = 1.0
    w[n // 2] = 1.0
    return w.reshape((1,) * (d - 1) + (-1,))


class _Integrator:
    """Precomputed arrays for one (v, resolution, config) combination."""

    def __init__(self, v: GridField, cfg: SolverConfig, n: int, d: int):
        if v.dimension != d or v.components != d:
            raise ShapeError("velocity must be a d-component field on the scalar's torus")
        if v.resolution != n:
            raise ShapeError(f"velocity resolution {v.resolution} != scalar resolution {n}")
        self.n, self.d, self.cfg = n, d, cfg
        self.v = v.real_values
        self.vmax = float(np.sqrt((self.v**2).sum(axis=0)).max())
        self.advect = self.vmax > 0
        ks = wavenumbers(n, d)
        half_ks = [k[..., : n // 2 + 1] if k.shape[-1] == n else k for k in ks]
        # derivative symbols with the Nyquist plane zeroed
        self.ik = [
            np.where(np.abs(k) == n // 2, 0.0, 2j * np.pi * k) for k in half_ks
        ]
        k2 = sum((2 * np.pi * k.astype(float)) ** 2 for k in half_ks)
        self.lam = cfg.epsilon * k2
        if cfg.dealias:
            self.mask = dealias_mask(n, d)[..., : n // 2 + 1]
        else:
            self.mask = np.ones(self.lam.shape, dtype=bool)
        self.weights = _parseval_weights(n, d)
        self.dt, self.n_steps = self._time_grid()
        h = 0.5 * self.dt
        self.half_decay = np.exp(-self.lam * h)
        self.half_release = 0.5 * (1.0 - np.exp(-2.0 * self.lam * h)) * self.weights

    def _time_grid(self):
        cfg = self.cfg
        limit = cfg.cfl_safety / (self.n * self.vmax) if self.advect else math.inf
        if cfg.dt == "auto":
            dt = min(limit, cfg.t_final / 64)
        else:
            dt = float(cfg.dt)
            if self.advect and dt * self.vmax * self.n > cfg.cfl_safety * (1 + 1e-12):
                raise StabilityError(
                    f"dt={dt:g} violates CFL: max|v| dt N = {dt * self.vmax * self.n:.3g} "
                    f"> cfl_safety = {cfg.cfl_safety}; use dt <= {limit:.3g}"
                )
        n_steps = max(1, math.ceil(cfg.t_final / dt - 1e-9))
        return cfg.t_final / n_steps, n_steps

    def variance(self, half):
        return float((self.weights * np.abs(half) ** 2).sum())

    def rhs(self, half):
        d, n = self.d, self.n
        grads = sfft.irfftn(
            np.stack([ik * half for ik in self.ik]), s=(n,) * d, axes=_half_axes(d), norm="forward"
        )
        adv = (self.v * grads).sum(axis=0)
        out = -sfft.rfftn(adv, axes=_half_axes(d), norm="forward")
        out *= self.mask
        out.flat[0] = 0.0
        return out

    def diffuse(self, half):
        released = float((self.half_release * np.abs(half) ** 2).sum())
        return half * self.half_decay, released

    def step(self, half):
        """One Strang step; returns the new coefficients and the dissipation released."""
        half, r1 = self.diffuse(half)
        if self.advect:
            dt = self.dt
            k1 = self.rhs(half)
            k2 = self.rhs(half + 0.5 * dt * k1)
            k3 = self.rhs(half + 0.5 * dt * k2)
            k4 = self.rhs(half + dt * k3)
            mean = half.flat[0]
            half = half + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            half.flat[0] = mean
        half, r2 = self.diffuse(half)
        return half, r1 + r2


def step(state: ScalarState, v: GridField, cfg: SolverConfig) -> ScalarState:
    """Advance by one step of the time grid solve() would use for cfg."""
    theta = state.theta
    if theta.components != 1:
        raise ShapeError("scalar state expected")
    integ = _Integrator(v, cfg, theta.resolution, theta.dimension)
    half, _ = integ.step(_to_half(theta))
    return _state_from_half(half, integ.n, integ.d, state.time + integ.dt)


def project_to_band(state: ScalarState) -> ScalarState:
    """Truncate the scalar to the dealiased band (and drop the Nyquist plane)."""
    n, d = state.resolution, state.theta.dimension
    half = _to_half(state.theta) * dealias_mask(n, d)[..., : n // 2 + 1]
    return _state_from_half(half, n, d, state.time)


def solve(
    state0: ScalarState,
    v: GridField,
    cfg: SolverConfig,
    *,
    record_states: bool = False,
) -> tuple[ScalarState, DissipationLedger]:
    """Integrate to cfg.t_final; the ledger is sampled every output_cadence steps and at T.

    With dealiasing on, the initial scalar is first truncated to the dealiased
    band; variance(0) refers to the truncated data.
    """
    theta = state0.theta
    if theta.components != 1:
        raise ShapeError("scalar state expected")
    n, d = theta.resolution, theta.dimension
    integ = _Integrator(v, cfg, n, d)
    ledger = DissipationLedger()
    half = _to_half(theta)
    if cfg.dealias:
        dropped = float((integ.weights * np.abs(half * ~integ.mask) ** 2).sum())
        half = half * integ.mask
        if dropped > 0:
            ledger.notes.append(f"initial data truncated to dealiased band; variance removed {dropped:.6g}")
    t0 = state0.time

    def snapshot(t):
        return _state_from_half(half, n, d, t) if record_states else None

    diss = 0.0
    ledger.record(t0, integ.variance(half), 0.0, snapshot(t0))
    if ledger.variance[0] == 0:
        ledger.notes.append("zero initial variance")
    for i in range(1, integ.n_steps + 1):
        half, released = integ.step(half)
        diss += released
        if i % cfg.output_cadence == 0 or i == integ.n_steps:
            t = t0 + i * integ.dt
            ledger.record(t, integ.variance(half), diss, snapshot(t))
    final = _state_from_half(half, n, d, t0 + cfg.t_final)
    ledger.notes.append(f"dt={integ.dt:.6g} steps={integ.n_steps}")
    return final, ledger


def energy_balance_residual(ledger: DissipationLedger) -> float:
    """max_t |var(t) - var(0) + 2 D(t)| / var(0)."""
    if not ledger.variance:
        raise DegenerateDataError("empty ledger")
    v0 = ledger.variance[0]
    if v0 == 0:
        raise DegenerateDataError("variance(0) = 0: balance residual undefined")
    var = np.asarray(ledger.variance)
    diss = np.asarray(ledger.dissipation_cumulative)
    return float(np.abs(var - v0 + 2 * diss).max() / v0)


def _beta(tag):
    if tag == "identity":
        return lambda x: x
    if tag == "square":
        return lambda x: x * x
    if tag == "cubic":
        return lambda x: x**3
    if isinstance(tag, Sequence) and not isinstance(tag, str):
        coeffs = np.asarray(tag, dtype=float)
        return lambda x: np.polynomial.polynomial.polyval(x, coeffs)
    raise ConfigurationError(f"unknown beta {tag!r}")


def renormalization_defect(trajectory: Sequence[ScalarState], beta="square") -> list[float]:
    """|int beta(theta(t)) - int beta(theta(0))| for every state in the trajectory.

    ``beta`` is 'identity', 'square', 'cubic' or polynomial coefficients in
    increasing degree.  Integrals are grid averages (exact for the square by
    discrete Parseval).
    """
    if not trajectory:
        raise ValueError("empty trajectory")
    b = _beta(beta)
    ref = float(b(trajectory[0].theta.real_values[0]).mean())
    return [abs(float(b(s.theta.real_values[0]).mean()) - ref) for s in trajectory]


def write_ledger_csv(ledger: DissipationLedger, path):
    from .io import write_csv

    return write_csv(path, ["time", "variance", "dissipation_cumulative", "balance_residual"], ledger.rows())
