"""Sampled fields on the flat torus [0, 1)^d and their Fourier coefficients.

Coefficients are normalised so that f(x) = sum_k f_hat(k) exp(2 pi i k.x),
i.e. ``f_hat`` is the forward transform divided by N^d.  Spectral arrays use
the standard FFT ordering (wavenumbers ``fftfreq(N, 1/N)``), which covers the
integer range [-N/2, N/2) along every axis.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft


class ShapeError(ValueError):
    """Field has the wrong dimension, component count or resolution."""


def _is_power_of_two(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


@lru_cache(maxsize=64)
def wavenumbers(n: int, dimension: int) -> tuple[np.ndarray, ...]:
    """Integer wavenumber arrays, one per axis, broadcastable to (N,)*d."""
    k = np.fft.fftfreq(n, 1.0 / n).round().astype(np.int64)
    out = []
    for axis in range(dimension):
        shape = [1] * dimension
        shape[axis] = n
        arr = k.reshape(shape)
        arr.setflags(write=False)
        out.append(arr)
    return tuple(out)


@lru_cache(maxsize=64)
def derivative_wavenumbers(n: int, dimension: int) -> tuple[np.ndarray, ...]:
    """Wavenumbers for spectral differentiation: the Nyquist mode is zeroed."""
    out = []
    for k in wavenumbers(n, dimension):
        kd = k.astype(float)
        kd = np.where(np.abs(k) == n // 2, 0.0, kd)
        kd.setflags(write=False)
        out.append(kd)
    return tuple(out)


def grid_coordinates(n: int, dimension: int) -> tuple[np.ndarray, ...]:
    """Grid points j/N as broadcastable coordinate arrays."""
    x = np.arange(n) / n
    out = []
    for axis in range(dimension):
        shape = [1] * dimension
        shape[axis] = n
        out.append(x.reshape(shape))
    return tuple(out)


def forward(values: np.ndarray, dimension: int) -> np.ndarray:
    axes = tuple(range(-dimension, 0))
    return sfft.fftn(values, axes=axes, norm="forward")


def inverse(coeffs: np.ndarray, dimension: int) -> np.ndarray:
    axes = tuple(range(-dimension, 0))
    return sfft.ifftn(coeffs, axes=axes, norm="forward")


@dataclass(frozen=True, eq=False)
class GridField:
    """Real samples and Fourier coefficients of a (vector) field.

    Both arrays have shape ``(components, N, ..., N)``.  Instances are
    immutable; the arrays are flagged read-only.
    """

    real_values: np.ndarray
    spectral_values: np.ndarray

    def __post_init__(self):
        if self.real_values.shape != self.spectral_values.shape:
            raise ShapeError("real and spectral arrays differ in shape")
        if self.real_values.ndim < 2:
            raise ShapeError("expected (components, N, ..., N) arrays")
        n = self.real_values.shape[1]
        if any(s != n for s in self.real_values.shape[1:]):
            raise ShapeError(f"non-uniform grid {self.real_values.shape[1:]}")
        if not _is_power_of_two(n):
            raise ShapeError(f"resolution {n} is not a power of two")
        self.real_values.setflags(write=False)
        self.spectral_values.setflags(write=False)

    @classmethod
    def from_real(cls, values) -> GridField:
        values = np.ascontiguousarray(values, dtype=float)
        d = values.ndim - 1
        return cls(values, forward(values, d))

    @classmethod
    def from_spectral(cls, coeffs) -> GridField:
        coeffs = np.ascontiguousarray(coeffs, dtype=complex)
        d = coeffs.ndim - 1
        return cls(np.ascontiguousarray(inverse(coeffs, d).real), coeffs)

    @classmethod
    def zeros(cls, dimension: int, resolution: int, components: int = 1) -> GridField:
        shape = (components,) + (resolution,) * dimension
        return cls(np.zeros(shape), np.zeros(shape, dtype=complex))

    @property
    def dimension(self) -> int:
        return self.real_values.ndim - 1

    @property
    def components(self) -> int:
        return self.real_values.shape[0]

    @property
    def resolution(self) -> int:
        return self.real_values.shape[1]

    def component(self, i: int) -> GridField:
        return GridField(self.real_values[i : i + 1].copy(), self.spectral_values[i : i + 1].copy())

    def __repr__(self):
        return (
            f"GridField(dimension={self.dimension}, components={self.components}, "
            f"resolution={self.resolution})"
        )


def stack(fields) -> GridField:
    fields = list(fields)
    if len({(f.dimension, f.resolution) for f in fields}) != 1:
        raise ShapeError("cannot stack fields of different shapes")
    return GridField(
        np.concatenate([f.real_values for f in fields]),
        np.concatenate([f.spectral_values for f in fields]),
    )


def imaginary_residual(f: GridField) -> float:
    """Largest imaginary part of the inverse transform, relative to max |f|."""
    back = inverse(f.spectral_values, f.dimension)
    scale = max(np.abs(back.real).max(), np.finfo(float).tiny)
    return float(np.abs(back.imag).max() / scale)


def gradient_coefficients(coeffs: np.ndarray, dimension: int) -> np.ndarray:
    """Coefficients of the gradient of a scalar: shape (d, N, ..., N)."""
    n = coeffs.shape[-1]
    ks = derivative_wavenumbers(n, dimension)
    return np.stack([2j * np.pi * k * coeffs for k in ks])


def gradient(f: GridField) -> GridField:
    if f.components != 1:
        raise ShapeError(f"gradient needs a scalar field, got {f.components} components")
    return GridField.from_spectral(gradient_coefficients(f.spectral_values[0], f.dimension))


def resample(f: GridField, resolution: int) -> GridField:
    """Spectral injection (finer grid) or truncation (coarser grid).

    The Nyquist plane of the source is dropped so the result stays real.
    """
    n = f.resolution
    if resolution == n:
        return f
    d = f.dimension
    keep = min(n, resolution) // 2
    out = np.zeros((f.components,) + (resolution,) * d, dtype=complex)
    src_k = np.fft.fftfreq(n, 1.0 / n).round().astype(int)
    sel = np.nonzero(np.abs(src_k) < keep)[0]
    dst = src_k[sel] % resolution
    index_src = np.ix_(*([sel] * d))
    index_dst = np.ix_(*([dst] * d))
    for c in range(f.components):
        out[c][index_dst] = f.spectral_values[c][index_src]
    return GridField.from_spectral(out)


def evaluate(f: GridField, points) -> np.ndarray:
    """Evaluate the trigonometric interpolant at arbitrary points.

    Direct summation over all modes, O(N^d) per point; meant for checks and
    small probe sets.  Returns shape (n_points, components).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = f.dimension
    if points.shape[1] != d:
        raise ShapeError(f"points must have {d} coordinates")
    n = f.resolution
    k = np.fft.fftfreq(n, 1.0 / n)
    nyquist = np.abs(k) == n // 2
    coeffs = f.spectral_values.reshape(f.components, -1)
    out = np.empty((points.shape[0], f.components))
    for i, p in enumerate(points):
        phase = np.ones(1, dtype=complex)
        for a in range(d):
            axis = np.exp(2j * np.pi * k * p[a])
            # the real interpolant uses cos for the unpaired Nyquist mode
            axis[nyquist] = np.cos(np.pi * n * p[a])
            phase = np.multiply.outer(phase, axis).ravel()
        out[i] = (coeffs @ phase).real
    return out


def dealias_mask(n: int, dimension: int) -> np.ndarray:
    """Two-thirds rule: keep modes with |k_i| < N/3 on every axis."""
    mask = np.ones((n,) * dimension, dtype=bool)
    for k in wavenumbers(n, dimension):
        mask = mask & (3 * np.abs(k) < n)
    return mask


def max_wavenumber(f: GridField, tol: float = 0.0) -> int:
    """Largest |k|_inf carrying a coefficient above ``tol`` (relative)."""
    a = np.abs(f.spectral_values).max(axis=0)
    scale = a.max()
    if scale == 0:
        return 0
    kinf = np.zeros(a.shape, dtype=int)
    for k in wavenumbers(f.resolution, f.dimension):
        kinf = np.maximum(kinf, np.abs(k))
    return int(kinf[a > tol * scale].max())
