"""Gaussian random field sampling and Kosambi-Karhunen-Loeve expansions.

Stationary GP draws on uniform grids back both the flow-matching prior and
the Darcy log-permeability inputs.  Small grids use a dense Cholesky
factorization; large grids use circulant embedding so a draw costs one FFT.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky
from scipy.sparse.linalg import LinearOperator, eigsh

from .grid import Domain, GridFunction, mesh

_CHOLESKY_MAX_POINTS = 4096
_CHOLESKY_JITTER = 1e-10
_EMBED_PAD = 2  # padding factor per axis for circulant embedding


class RandomFieldError(RuntimeError):
    """Sampling or decomposition failure."""


@dataclass(frozen=True)
class KernelSpec:
    """Stationary covariance kernel: family, smoothness, lengthscale, variance."""

    family: str = "matern"
    smoothness: float = 0.5
    lengthscale: float = 1.0
    variance: float = 1.0

    def __post_init__(self):
        if self.family not in ("matern", "exponential-darcy"):
            raise RandomFieldError(f"unknown kernel family {self.family!r}")
        if self.lengthscale <= 0 or self.variance <= 0:
            raise RandomFieldError("lengthscale and variance must be positive")

    def evaluate(self, dist: np.ndarray) -> np.ndarray:
        """Covariance as a function of Euclidean distance."""
        r = np.abs(dist) / self.lengthscale
        if self.family == "exponential-darcy" or self.smoothness == 0.5:
            k = np.exp(-r)
        elif self.smoothness == 1.5:
            s = np.sqrt(3.0) * r
            k = (1.0 + s) * np.exp(-s)
        elif self.smoothness == 2.5:
            s = np.sqrt(5.0) * r
            k = (1.0 + s + s * s / 3.0) * np.exp(-s)
        else:
            raise RandomFieldError(
                f"unsupported Matern smoothness {self.smoothness} (use 0.5, 1.5, 2.5)"
            )
        return self.variance * k


@dataclass
class KKLBasis:
    """Truncated eigen-expansion of a discrete covariance matrix.

    Eigenvalues are sorted descending; eigenfunctions are orthonormal in the
    Euclidean inner product on grid values.
    """

    domain: Domain
    shape: tuple[int, ...]
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray  # (q, *shape)
    mean: float = 0.0

    @property
    def q(self) -> int:
        return len(self.eigenvalues)


def _distance_mesh(spec: KernelSpec, domain: Domain, shape) -> np.ndarray:
    coords = mesh(domain, shape)
    pts = np.stack([c.ravel() for c in coords], axis=1)
    diff = pts[:, None, :] - pts[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


def kernel_matrix(spec: KernelSpec, domain: Domain, shape) -> np.ndarray:
    """Dense covariance matrix over the flattened grid."""
    return spec.evaluate(_distance_mesh(spec, domain, shape))


class _CholeskyFactor:
    def __init__(self, spec: KernelSpec, domain: Domain, shape):
        k = kernel_matrix(spec, domain, shape)
        k[np.diag_indices_from(k)] += _CHOLESKY_JITTER
        self.chol = cholesky(k, lower=True)
        self.shape = tuple(shape)

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        xi = rng.standard_normal(self.chol.shape[0])
        return (self.chol @ xi).reshape(self.shape)


class _CirculantFactor:
    """Circulant/block-circulant embedding of a stationary kernel on a uniform grid."""

    def __init__(self, spec: KernelSpec, domain: Domain, shape):
        self.shape = tuple(int(n) for n in shape)
        padded = tuple(_EMBED_PAD * n for n in self.shape)
        spacings = []
        for (lo, hi), periodic, n in zip(domain.bounds, domain.periodic, self.shape):
            spacings.append((hi - lo) / n if periodic else (hi - lo) / (n - 1))
        # Signed minimal lags on the periodic embedding torus.
        lags = []
        for m, h in zip(padded, spacings):
            idx = np.arange(m)
            idx = np.where(idx > m // 2, idx - m, idx)
            lags.append(idx * h)
        grids = np.meshgrid(*lags, indexing="ij")
        dist = np.sqrt(sum(g * g for g in grids))
        cov = spec.evaluate(dist)
        spectrum = np.fft.fftn(cov).real
        min_eig = spectrum.min()
        if min_eig < -1e-8 * max(spectrum.max(), 1.0):
            raise RandomFieldError(
                f"circulant embedding not positive definite (min eigenvalue {min_eig:.3e})"
            )
        self.spectrum = np.clip(spectrum, 0.0, None)
        self.padded = padded

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        noise = rng.standard_normal(self.padded) + 1j * rng.standard_normal(self.padded)
        field = np.fft.fftn(np.sqrt(self.spectrum / np.prod(self.padded)) * noise)
        sl = tuple(slice(0, n) for n in self.shape)
        return field.real[sl]


_factor_cache: dict[tuple, object] = {}


def _get_factor(spec: KernelSpec, domain: Domain, shape):
    key = (spec, domain.bounds, domain.periodic, tuple(shape))
    factor = _factor_cache.get(key)
    if factor is None:
        n_points = int(np.prod(shape))
        if n_points <= _CHOLESKY_MAX_POINTS:
            factor = _CholeskyFactor(spec, domain, shape)
        else:
            try:
                factor = _CirculantFactor(spec, domain, shape)
            except RandomFieldError:
                # Report and fall back to a dense factorization per axis-coarsened
                # grid is not needed for the kernels used here; a dense factor on
                # the full grid is the safe fallback when memory allows.
                factor = _CholeskyFactor(spec, domain, shape)
        _factor_cache[key] = factor
    return factor


def sample_gp(
    spec: KernelSpec, domain: Domain, shape, rng_seed, channels: int = 1
) -> GridFunction:
    """Zero-mean stationary GP draw on a uniform grid, deterministic in the seed."""
    shape = tuple(int(n) for n in shape)
    factor = _get_factor(spec, domain, shape)
    rng = np.random.default_rng(rng_seed)
    values = np.stack([factor.draw(rng) for _ in range(channels)])
    return GridFunction(domain, shape, channels, values)


class _ToeplitzOperator(LinearOperator):
    """Matvec with the grid kernel matrix via FFT on the circulant embedding."""

    def __init__(self, spec: KernelSpec, domain: Domain, shape):
        self.grid_shape = tuple(int(n) for n in shape)
        n = int(np.prod(self.grid_shape))
        super().__init__(dtype=np.float64, shape=(n, n))
        padded = tuple(2 * m for m in self.grid_shape)
        spacings = []
        for (lo, hi), periodic, m in zip(domain.bounds, domain.periodic, self.grid_shape):
            spacings.append((hi - lo) / m if periodic else (hi - lo) / (m - 1))
        lags = []
        for m, h in zip(padded, spacings):
            idx = np.arange(m)
            idx = np.where(idx > m // 2, idx - m, idx)
            lags.append(idx * h)
        grids = np.meshgrid(*lags, indexing="ij")
        dist = np.sqrt(sum(g * g for g in grids))
        self.padded = padded
        self.kernel_fft = np.fft.fftn(spec.evaluate(dist))

    def _matvec(self, x):
        xg = np.zeros(self.padded)
        sl = tuple(slice(0, n) for n in self.grid_shape)
        xg[sl] = np.asarray(x).reshape(self.grid_shape)
        y = np.fft.ifftn(self.kernel_fft * np.fft.fftn(xg)).real
        return y[sl].ravel()


def kkl_decompose(spec: KernelSpec, domain: Domain, shape, q: int) -> KKLBasis:
    """Top-q eigenpairs of the discrete kernel matrix on the grid."""
    shape = tuple(int(n) for n in shape)
    n_points = int(np.prod(shape))
    if not 1 <= q <= n_points:
        raise RandomFieldError(f"q={q} outside 1..{n_points}")
    if n_points <= 2048 or q > n_points - 2:
        k = kernel_matrix(spec, domain, shape)
        vals, vecs = np.linalg.eigh(k)
        vals, vecs = vals[::-1][:q], vecs[:, ::-1][:, :q]
    else:
        op = _ToeplitzOperator(spec, domain, shape)
        vals, vecs = eigsh(op, k=q, which="LA")
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
    negative = vals < 0
    if np.any(vals < -1e-10 * max(vals.max(), 1.0)):
        raise RandomFieldError(f"kernel eigenvalues below numerical slack: {vals.min():.3e}")
    vals = np.where(negative, 0.0, vals)
    funcs = vecs.T.reshape((q,) + shape)
    return KKLBasis(domain, shape, vals, funcs)


def sample_log_permeability(
    basis: KKLBasis, q_used: int, rng_seed, mean: float | None = None
) -> GridFunction:
    """Log-normal permeability K = exp(mean + sum sqrt(l_i) phi_i z_i).

    The standard-normal draws z_i are generated for the full basis so a
    truncated field (smaller ``q_used``) shares the leading draws of the
    full one for the same seed.
    """
    if q_used > basis.q:
        raise RandomFieldError(f"q_used={q_used} exceeds basis truncation {basis.q}")
    mean = basis.mean if mean is None else mean
    rng = np.random.default_rng(rng_seed)
    z = rng.standard_normal(basis.q)[:q_used]
    amp = np.sqrt(basis.eigenvalues[:q_used]) * z
    log_k = mean + np.tensordot(amp, basis.eigenfunctions[:q_used], axes=(0, 0))
    return GridFunction(basis.domain, basis.shape, 1, np.exp(log_k)[None])
