"""Random and deterministic divergence-free velocity fields on T^2 and T^3.

Two constructions are provided:

* 2D: a Gaussian stream function phi, velocity v = (d2 phi, -d1 phi);
* 3D: a pair of independent Gaussian potentials (phi1, phi2) and the
  Clebsch field v = grad phi1 x grad phi2.

The Gaussian series uses the Fourier basis.  For every retained lattice mode
k != 0 with |k|_inf <= K the coefficient is ``mu_k + sigma_k (a - i b)/sqrt(2)``
with a, b standard normal, and the coefficient of -k is its conjugate, so
E|c_k - mu_k|^2 = sigma_k^2 and the sampled field is real.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .grid import (
    GridField,
    ShapeError,
    derivative_wavenumbers,
    forward,
    gradient,
    gradient_coefficients,
    inverse,
    resample,
)

# gamma = d/2 + 1 + alpha + margin keeps the C^{1,alpha} threshold strict
REGULARITY_MARGIN = 0.05


class ConfigurationError(ValueError):
    pass


class EstimatorError(ValueError):
    """An estimator is undefined for the given input (e.g. constant field)."""


@dataclass(frozen=True)
class SpectrumConfig:
    """Mode-indexed means and standard deviations of a Gaussian potential.

    ``stddev`` overrides the power law ``amplitude * |k|^-decay_exponent``
    when given; modes missing from an explicit table get sigma = 0.
    """

    dimension: int
    max_wavenumber: int
    resolution: int
    decay_exponent: float | None = None
    amplitude: float = 1.0
    mean: Mapping[tuple, complex] = field(default_factory=dict)
    stddev: Mapping[tuple, float] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise ConfigurationError(f"dimension must be 2 or 3, got {self.dimension}")
        if self.max_wavenumber < 1:
            raise ConfigurationError("max_wavenumber must be >= 1")
        if 3 * self.max_wavenumber > self.resolution:
            raise ConfigurationError(
                f"max_wavenumber {self.max_wavenumber} exceeds N/3 for N={self.resolution}"
            )
        if self.decay_exponent is not None and self.decay_exponent <= 0:
            raise ConfigurationError("decay_exponent must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        for k, s in (self.stddev or {}).items():
            if s < 0:
                raise ConfigurationError(f"negative stddev at mode {k}")
        for k, mu in self.mean.items():
            kneg = tuple(-c for c in k)
            if kneg in self.mean and not np.isclose(self.mean[kneg], np.conj(mu)):
                raise ConfigurationError(f"means at {k} and {kneg} are not conjugate")

    @classmethod
    def for_holder(cls, dimension, alpha_target, resolution, max_wavenumber=None, **kw):
        """Power-law spectrum calibrated so the potential is C^{1, alpha_target}."""
        gamma = dimension / 2 + 1 + alpha_target + REGULARITY_MARGIN
        K = max_wavenumber if max_wavenumber is not None else resolution // 3
        return cls(dimension, K, resolution, decay_exponent=gamma, **kw)

    def modes(self) -> np.ndarray:
        """Half-lattice of retained modes (first nonzero component positive)."""
        K = self.max_wavenumber
        out = []
        for k in itertools.product(range(-K, K + 1), repeat=self.dimension):
            nz = [c for c in k if c != 0]
            if nz and nz[0] > 0:
                out.append(k)
        return np.array(out, dtype=np.int64)

    def sigma(self, modes: np.ndarray) -> np.ndarray:
        if self.stddev is not None:
            return np.array([float(self.stddev.get(tuple(int(c) for c in k), 0.0)) for k in modes])
        if self.decay_exponent is None:
            return np.zeros(len(modes))
        norm = np.sqrt((modes.astype(float) ** 2).sum(axis=1))
        return self.amplitude * norm ** (-self.decay_exponent)

    def mu(self, modes: np.ndarray) -> np.ndarray:
        out = np.zeros(len(modes), dtype=complex)
        for i, k in enumerate(modes):
            k = tuple(int(c) for c in k)
            if k in self.mean:
                out[i] = self.mean[k]
            else:
                kneg = tuple(-c for c in k)
                if kneg in self.mean:
                    out[i] = np.conj(self.mean[kneg])
        return out


def amplitude_for_rms(spec: SpectrumConfig, target_rms: float) -> float:
    """Amplitude that gives the sampled velocity the requested rms speed."""
    from dataclasses import replace

    unit = replace(spec, amplitude=1.0)
    if spec.dimension == 2:
        v = velocity_from_stream(sample_stream_2d(unit))
    else:
        v = velocity_from_clebsch(sample_clebsch_3d(unit))
    rms = float(np.sqrt((v.real_values**2).sum(axis=0).mean()))
    if rms == 0:
        raise ConfigurationError("zero velocity cannot be normalised")
    # v is linear in the amplitude for 2D and quadratic for 3D
    return target_rms / rms if spec.dimension == 2 else float(np.sqrt(target_rms / rms))


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))


def _draw_coefficients(spec: SpectrumConfig, rng: np.random.Generator, modes=None) -> np.ndarray:
    if modes is None:
        modes = spec.modes()
    z = rng.standard_normal((len(modes), 2))
    return spec.mu(modes) + spec.sigma(modes) * (z[:, 0] - 1j * z[:, 1]) / np.sqrt(2.0)


def _assemble(spec: SpectrumConfig, coeffs: np.ndarray, modes: np.ndarray) -> GridField:
    n = spec.resolution
    out = np.zeros((n,) * spec.dimension, dtype=complex)
    idx = tuple((modes % n).T)
    neg = tuple(((-modes) % n).T)
    out[idx] = coeffs
    out[neg] = np.conj(coeffs)
    return GridField.from_spectral(out[None])


def _sample_potential(spec: SpectrumConfig, stream: int) -> GridField:
    modes = spec.modes()
    return _assemble(spec, _draw_coefficients(spec, _rng(spec.seed, stream), modes), modes)


def sample_stream_2d(spec: SpectrumConfig) -> GridField:
    """Gaussian stream function on T^2 (zero mean, deterministic in the seed)."""
    if spec.dimension != 2:
        raise ConfigurationError("sample_stream_2d needs a 2D spectrum")
    return _sample_potential(spec, stream=0)


@dataclass(frozen=True)
class ClebschPotentials:
    phi1: GridField
    phi2: GridField

    def __post_init__(self):
        if self.phi1.resolution != self.phi2.resolution:
            raise ShapeError("Clebsch potentials must share a resolution")
        if self.phi1.dimension != 3 or self.phi2.dimension != 3:
            raise ShapeError("Clebsch potentials live on T^3")

    def stacked(self) -> GridField:
        return GridField(
            np.concatenate([self.phi1.real_values, self.phi2.real_values]),
            np.concatenate([self.phi1.spectral_values, self.phi2.spectral_values]),
        )


def sample_clebsch_3d(spec: SpectrumConfig) -> ClebschPotentials:
    """Two independent Gaussian potentials drawn from separate seed substreams."""
    if spec.dimension != 3:
        raise ConfigurationError("sample_clebsch_3d needs a 3D spectrum")
    return ClebschPotentials(_sample_potential(spec, stream=1), _sample_potential(spec, stream=2))


def velocity_from_stream(phi: GridField) -> GridField:
    if phi.dimension != 2 or phi.components != 1:
        raise ShapeError("velocity_from_stream needs a 2D scalar stream function")
    g = gradient_coefficients(phi.spectral_values[0], 2)
    return GridField.from_spectral(np.stack([g[1], -g[0]]))


def leray_project(coeffs: np.ndarray) -> np.ndarray:
    """Remove the gradient part of a vector field given by its coefficients."""
    d = coeffs.shape[0]
    n = coeffs.shape[-1]
    ks = derivative_wavenumbers(n, d)
    k2 = sum(k * k for k in ks)
    k2 = np.where(k2 == 0, 1.0, k2)
    kdotv = sum(k * c for k, c in zip(ks, coeffs))
    return np.stack([c - k * kdotv / k2 for k, c in zip(ks, coeffs)])


def velocity_from_clebsch(pots: ClebschPotentials, *, report: bool = False):
    """v = grad phi1 x grad phi2, formed on a 3/2-padded grid then projected.

    The product of two fields band-limited to |k| <= K has modes up to 2K;
    the padded grid holds it without aliasing.  Modes at or beyond N/2 are
    then dropped, so orthogonality to grad phi_k is exact to round-off only
    when K < N/4.  With ``report=True`` also returns the divergence residual
    measured before projection.
    """
    n = pots.phi1.resolution
    m = 3 * n // 2
    g1 = _padded_gradient(pots.phi1, m)
    g2 = _padded_gradient(pots.phi2, m)
    cross = np.stack([
        g1[1] * g2[2] - g1[2] * g2[1],
        g1[2] * g2[0] - g1[0] * g2[2],
        g1[0] * g2[1] - g1[1] * g2[0],
    ])
    coeffs = _truncate_coefficients(forward(cross, 3), n)
    pre = GridField.from_spectral(coeffs)
    v = GridField.from_spectral(leray_project(coeffs))
    if report:
        return v, divergence_residual(pre)
    return v


def _padded_gradient(phi: GridField, m: int) -> np.ndarray:
    n = phi.resolution
    d = phi.dimension
    src = phi.spectral_values[0]
    big = np.zeros((m,) * d, dtype=complex)
    k = np.fft.fftfreq(n, 1.0 / n).round().astype(int)
    sel = np.nonzero(np.abs(k) < n // 2)[0]
    big[np.ix_(*([k[sel] % m] * d))] = src[np.ix_(*([sel] * d))]
    return inverse(gradient_coefficients(big, d), d).real


def _truncate_coefficients(coeffs: np.ndarray, n: int) -> np.ndarray:
    m = coeffs.shape[-1]
    d = coeffs.ndim - 1
    out = np.zeros((coeffs.shape[0],) + (n,) * d, dtype=complex)
    k = np.fft.fftfreq(m, 1.0 / m).round().astype(int)
    sel = np.nonzero(np.abs(k) < n // 2)[0]
    for c in range(coeffs.shape[0]):
        out[c][np.ix_(*([k[sel] % n] * d))] = coeffs[c][np.ix_(*([sel] * d))]
    return out


def divergence_residual(v: GridField) -> float:
    """max_k |2 pi k . v_hat(k)| / (1 + |v_hat(k)| |2 pi k|), dimensionless."""
    if v.components != v.dimension:
        raise ShapeError("divergence_residual needs a vector field with d components")
    ks = derivative_wavenumbers(v.resolution, v.dimension)
    div = sum(2 * np.pi * k * c for k, c in zip(ks, v.spectral_values))
    knorm = 2 * np.pi * np.sqrt(sum(k * k for k in ks))
    vnorm = np.sqrt((np.abs(v.spectral_values) ** 2).sum(axis=0))
    return float((np.abs(div) / (1.0 + vnorm * knorm)).max())


@dataclass(frozen=True)
class CovarianceCheck:
    analytic: np.ndarray
    min_eigenvalue: float
    sample: np.ndarray
    standard_error: np.ndarray

    def within(self, n_se: float = 5.0) -> bool:
        diff = np.abs(self.sample - self.analytic)
        return bool(np.all(diff <= n_se * self.standard_error + 1e-15))


def pointwise_covariance_check(spec: SpectrumConfig, x, samples: int) -> CovarianceCheck:
    """Covariance of v(x) (2D) or of D phi(x) (3D, flattened 2x3) at one point.

    The analytic matrix is sum_k sigma_k^2 w_k w_k^T over all retained +-k,
    where w_k = 2 pi k_perp (2D) or the gradient symbol (3D, block-diagonal
    over the two independent potentials); it does not depend on x.  The
    sample covariance comes from ``samples`` independent coefficient draws
    evaluated at x by direct summation.
    """
    if samples < 100:
        raise ConfigurationError("need at least 100 samples")
    d = spec.dimension
    x = np.mod(np.asarray(x, dtype=float), 1.0)
    modes = spec.modes()
    sig2 = spec.sigma(modes) ** 2
    kf = 2 * np.pi * modes.astype(float)
    if d == 2:
        w = np.stack([kf[:, 1], -kf[:, 0]], axis=1)  # symbol of (d2, -d1)
        analytic = 2 * np.einsum("m,mi,mj->ij", sig2, w, w)
    else:
        g = 2 * np.einsum("m,mi,mj->ij", sig2, kf, kf)
        analytic = np.zeros((6, 6))
        analytic[:3, :3] = g
        analytic[3:, 3:] = g
    min_eig = float(np.linalg.eigvalsh(analytic).min()) if analytic.any() else 0.0

    rng = _rng(spec.seed, stream=99)
    phase = np.exp(2j * np.pi * modes @ x)
    sym = 1j * kf * phase[:, None]  # d/dx_i of exp(2 pi i k.x)

    def grad_at_x(c):
        # c: (samples, modes); the -k partner contributes the conjugate
        return 2 * np.real(c @ sym)

    draws = []
    for _ in range(1 if d == 2 else 2):
        c = np.stack([_draw_coefficients(spec, rng, modes) for _ in range(samples)])
        draws.append(grad_at_x(c))
    if d == 2:
        grad = draws[0]
        vals = np.stack([grad[:, 1], -grad[:, 0]], axis=1)
    else:
        vals = np.concatenate(draws, axis=1)
    sample = np.cov(vals, rowvar=False)
    diag = np.diag(analytic)
    se = np.sqrt((np.outer(diag, diag) + analytic**2) / samples)
    return CovarianceCheck(analytic, min_eig, np.atleast_2d(sample), se)


def _axis_increments(values: np.ndarray, shift: int, dimension: int) -> float:
    """max over grid points, axes of |f(x + shift e_a) - f(x)| (Euclidean over components)."""
    best = 0.0
    for axis in range(dimension):
        diff = np.roll(values, -shift, axis=axis + 1) - values
        best = max(best, float(np.sqrt((diff**2).sum(axis=0)).max()))
    return best


def _holder_data(f: GridField, derivative_order: int):
    if derivative_order not in (0, 1):
        raise ValueError("derivative_order must be 0 or 1")
    if derivative_order == 0:
        return f.real_values
    if f.components != 1:
        raise ShapeError("derivative_order=1 needs a scalar field")
    return gradient(f).real_values


def holder_fit(f: GridField, derivative_order: int = 0) -> tuple[float, float]:
    """Slope and prefactor of log max-increment against log r.

    Increments are exact grid shifts along the coordinate axes at dyadic
    r in [4/N, 1/8].  Returns (alpha, C) with alpha clamped to [0, 1].
    """
    n = f.resolution
    if n < 64:
        raise ConfigurationError("holder estimate needs resolution >= 64")
    data = _holder_data(f, derivative_order)
    shifts = []
    m = 4
    while m <= n // 8:
        shifts.append(m)
        m *= 2
    incs = np.array([_axis_increments(data, s, f.dimension) for s in shifts])
    if not np.all(incs > 0):
        raise EstimatorError("zero increments: Hölder exponent undefined for a constant field")
    r = np.array(shifts) / n
    slope, intercept = np.polyfit(np.log(r), np.log(incs), 1)
    return float(np.clip(slope, 0.0, 1.0)), float(np.exp(intercept))


def holder_estimate(f: GridField, derivative_order: int = 0) -> float:
    return holder_fit(f, derivative_order)[0]


def holder_seminorm(f: GridField, alpha: float, derivative_order: int = 1) -> float:
    """Largest grid quotient |delta f(r)| / r^alpha over dyadic r in [1/N, 1/4]."""
    n = f.resolution
    data = _holder_data(f, derivative_order)
    best = 0.0
    m = 1
    while m <= n // 4:
        best = max(best, _axis_increments(data, m, f.dimension) / (m / n) ** alpha)
        m *= 2
    return best


# --- named deterministic fields -------------------------------------------------


def shear_flow(resolution: int, amplitude: float = 1.0) -> GridField:
    """v = (amplitude cos 2 pi x2, 0) on T^2."""
    from .grid import grid_coordinates

    _, y = grid_coordinates(resolution, 2)
    vx = amplitude * np.cos(2 * np.pi * y) * np.ones((resolution, resolution))
    return GridField.from_real(np.stack([vx, np.zeros_like(vx)]))


def cellular_flow(resolution: int, amplitude: float = 1.0) -> GridField:
    """Stream function sin(2 pi x1) sin(2 pi x2) / (2 pi): v = grad_perp phi."""
    from .grid import grid_coordinates

    x, y = grid_coordinates(resolution, 2)
    phi = amplitude * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y) / (2 * np.pi)
    return velocity_from_stream(GridField.from_real(phi[None]))


def constant_flow(dimension: int, resolution: int, vector) -> GridField:
    vector = np.asarray(vector, dtype=float)
    shape = (resolution,) * dimension
    return GridField.from_real(np.stack([np.full(shape, c) for c in vector]))


def zero_flow(dimension: int, resolution: int) -> GridField:
    return GridField.zeros(dimension, resolution, components=dimension)


def on_grid(v: GridField, resolution: int) -> GridField:
    """Resample a velocity onto another grid; refuses to drop content."""
    if resolution < v.resolution:
        from .grid import max_wavenumber

        if 3 * max_wavenumber(v, 1e-14) > resolution:
            raise ConfigurationError(f"velocity band exceeds N/3 for N={resolution}")
    return resample(v, resolution)
