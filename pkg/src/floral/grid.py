"""Uniform tensor-product grids, discrete norms, and FFT utilities.

Every field in the library is carried by a :class:`GridFunction`: a real
array sampled on a uniform grid with a leading channel axis.  The FFT
convention is fixed throughout: forward transforms are unnormalized and
inverse transforms divide by the number of grid points (numpy's default).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import resample as _spectral_resample_axis


class GridError(ValueError):
    """Invalid grid, shape, or domain description."""


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box with per-axis periodicity flags.

    ``bounds`` holds one (lo, hi) interval per axis; ``periodic`` marks
    the axes on which fields wrap around.
    """

    bounds: tuple[tuple[float, float], ...]
    periodic: tuple[bool, ...]

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        periodic = tuple(bool(p) for p in self.periodic)
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "periodic", periodic)
        if not 1 <= len(bounds) <= 3:
            raise GridError(f"domain must have 1..3 axes, got {len(bounds)}")
        if len(periodic) != len(bounds):
            raise GridError("bounds and periodic flags must have equal length")
        for lo, hi in bounds:
            if not lo < hi:
                raise GridError(f"degenerate interval ({lo}, {hi})")

    @property
    def ndim(self) -> int:
        return len(self.bounds)

    def lengths(self) -> tuple[float, ...]:
        return tuple(hi - lo for lo, hi in self.bounds)


@dataclass
class GridFunction:
    """Real field on a uniform grid, stored channel-major then row-major.

    ``values`` has shape ``(channels, *shape)`` in float64.
    """

    domain: Domain
    shape: tuple[int, ...]
    channels: int
    values: np.ndarray

    def __post_init__(self):
        self.shape = tuple(int(n) for n in self.shape)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if len(self.shape) != self.domain.ndim:
            raise GridError("shape rank does not match domain rank")
        if any(n < 1 for n in self.shape):
            raise GridError(f"non-positive grid shape {self.shape}")
        expected = (self.channels,) + self.shape
        if self.values.shape != expected:
            if self.values.size == int(np.prod(expected)):
                self.values = self.values.reshape(expected)
            else:
                raise GridError(
                    f"values shape {self.values.shape} incompatible with {expected}"
                )
        if not np.all(np.isfinite(self.values)):
            raise GridError("non-finite values in grid function")

    @classmethod
    def from_values(cls, domain: Domain, values: np.ndarray) -> "GridFunction":
        """Wrap an array of shape (channels, *grid_shape)."""
        values = np.asarray(values, dtype=np.float64)
        return cls(domain, values.shape[1:], values.shape[0], values)

    @property
    def num_points(self) -> int:
        return int(np.prod(self.shape))

    def copy(self) -> "GridFunction":
        return GridFunction(self.domain, self.shape, self.channels, self.values.copy())


@dataclass
class Spectrum:
    """Real-FFT coefficients of a :class:`GridFunction` (same channel layout).

    ``coeffs`` has shape ``(channels, *spectral_shape)`` where the last
    spatial axis is halved per the real FFT; ``shape`` records the spatial
    shape of the originating field so the inverse is well defined.
    """

    domain: Domain
    shape: tuple[int, ...]
    channels: int
    coeffs: np.ndarray
    modes_per_axis: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        self.shape = tuple(int(n) for n in self.shape)
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        spectral = self.shape[:-1] + (self.shape[-1] // 2 + 1,)
        if self.coeffs.shape != (self.channels,) + spectral:
            raise GridError(
                f"spectrum shape {self.coeffs.shape} incompatible with field shape {self.shape}"
            )
        self.modes_per_axis = spectral


def uniform_grid(domain: Domain, shape) -> list[np.ndarray]:
    """Per-axis coordinate arrays of a uniform grid.

    Periodic axes exclude the right endpoint (lo + i*(hi-lo)/n); non-periodic
    axes include both endpoints.
    """
    shape = tuple(int(n) for n in shape)
    if len(shape) != domain.ndim:
        raise GridError("shape rank does not match domain rank")
    axes = []
    for (lo, hi), periodic, n in zip(domain.bounds, domain.periodic, shape):
        if n < 2:
            raise GridError(f"need at least 2 grid points per axis, got {n}")
        if periodic:
            axes.append(lo + (hi - lo) * np.arange(n) / n)
        else:
            axes.append(np.linspace(lo, hi, n))
    return axes


def mesh(domain: Domain, shape) -> list[np.ndarray]:
    """Full coordinate meshes (ij indexing), one array per axis."""
    return list(np.meshgrid(*uniform_grid(domain, shape), indexing="ij"))


def mean_square_norm(f: GridFunction | np.ndarray) -> float:
    """Root-mean-square of all entries: resolution-independent discrete norm."""
    values = f.values if isinstance(f, GridFunction) else np.asarray(f)
    if values.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(np.square(values))))


def rfft_nd(f: GridFunction) -> Spectrum:
    """Real FFT over all spatial axes (forward unnormalized)."""
    spatial_axes = tuple(range(1, f.domain.ndim + 1))
    coeffs = np.fft.rfftn(f.values, axes=spatial_axes)
    return Spectrum(f.domain, f.shape, f.channels, coeffs)


def irfft_nd(s: Spectrum, shape=None) -> GridFunction:
    """Inverse of :func:`rfft_nd` (divides by the number of grid points)."""
    shape = s.shape if shape is None else tuple(int(n) for n in shape)
    if shape[:-1] != s.shape[:-1] or shape[-1] // 2 + 1 != s.coeffs.shape[-1]:
        raise GridError(f"requested shape {shape} incompatible with spectrum")
    spatial_axes = tuple(range(1, s.domain.ndim + 1))
    values = np.fft.irfftn(s.coeffs, s=shape, axes=spatial_axes)
    return GridFunction(s.domain, shape, s.channels, values)


def _linear_resample_axis(values: np.ndarray, axis: int, new_n: int) -> np.ndarray:
    """Piecewise-linear resampling along one endpoint-inclusive axis."""
    old_n = values.shape[axis]
    if old_n == new_n:
        return values
    pos = np.arange(new_n) * (old_n - 1) / (new_n - 1)
    lo = np.minimum(pos.astype(int), old_n - 2)
    w = pos - lo
    left = np.take(values, lo, axis=axis)
    right = np.take(values, lo + 1, axis=axis)
    shape = [1] * values.ndim
    shape[axis] = new_n
    w = w.reshape(shape)
    return left * (1.0 - w) + right * w


def resample(f: GridFunction, new_shape) -> GridFunction:
    """Change grid resolution: spectral on periodic axes, linear otherwise."""
    new_shape = tuple(int(n) for n in new_shape)
    if len(new_shape) != f.domain.ndim:
        raise GridError("new shape rank does not match domain rank")
    if any(n < 2 for n in new_shape):
        raise GridError(f"resample target below 2 points per axis: {new_shape}")
    values = f.values
    for axis_idx, (periodic, new_n) in enumerate(zip(f.domain.periodic, new_shape)):
        axis = axis_idx + 1  # skip channel axis
        if values.shape[axis] == new_n:
            continue
        if periodic:
            values = _spectral_resample_axis(values, new_n, axis=axis)
        else:
            values = _linear_resample_axis(values, axis, new_n)
    return GridFunction(f.domain, new_shape, f.channels, values)
