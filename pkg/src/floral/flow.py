"""Conditional flow matching: Gaussian path sampling, loss, and ODE sampling.

Training regresses the model field onto the per-coupling target w1 - w0
along linearly interpolated paths with sample-dependent noise; generation
integrates the learned field from a Gaussian-process prior draw at tau=0 to
tau=1. In residual mode the target is the high-minus-low-fidelity correction
and the low-fidelity baseline is added back after integration.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .grid import Domain, GridFunction, mean_square_norm, resample
from .random_fields import KernelSpec, sample_gp


DEFAULT_PRIOR = KernelSpec(family="matern", smoothness=0.5, lengthscale=1e-3, variance=1.0)


class FlowMode(str, Enum):
    FLORA = "flora"
    FLORAL = "floral"


class IntegrationError(RuntimeError):
    """Adaptive step-size failure inside the flow ODE solve."""


@dataclass(frozen=True)
class PathConfig:
    sigma_min: float = 1e-2
    gamma_weighting: bool = True

    def __post_init__(self):
        if self.sigma_min <= 0:
            raise ValueError("sigma_min must be positive")


@dataclass
class CouplingSample:
    """Latent pair z = (prior draw w0, target w1) with its conditioning input."""

    a: GridFunction
    w0: GridFunction
    w1: GridFunction

    def __post_init__(self):
        if self.w0.shape != self.w1.shape or self.w0.channels != self.w1.channels:
            raise ValueError("w0 and w1 must share grid and channels")


def make_target(w_hf: GridFunction, w_lf_on_hf_grid: GridFunction | None,
                mode: FlowMode) -> GridFunction:
    """Regression target: the HF field directly, or the HF-LF residual."""
    if mode == FlowMode.FLORA:
        return w_hf
    if w_lf_on_hf_grid is None:
        raise ValueError("residual mode requires a low-fidelity field")
    if w_lf_on_hf_grid.shape != w_hf.shape:
        raise ValueError("low-fidelity field must be aligned to the HF grid")
    values = w_hf.values - w_lf_on_hf_grid.values
    return GridFunction(w_hf.domain, w_hf.shape, w_hf.channels, values)


def gamma_weight(tau: np.ndarray) -> np.ndarray:
    """Time-dependent loss scaling emphasizing the data end of the path."""
    return 1.0 + 2.0 * tau * tau


def path_point_values(w0: np.ndarray, w1: np.ndarray, tau: float, sigma_min: float,
                      noise: np.ndarray) -> np.ndarray:
    """(1-tau) w0 + tau w1 + sigma_min ||w1 - w0|| * noise."""
    sigma = sigma_min * mean_square_norm(w1 - w0)
    return (1.0 - tau) * w0 + tau * w1 + sigma * noise


def sample_path_point(z: CouplingSample, tau: float, prior_spec: KernelSpec,
                      rng_seed, cfg: PathConfig) -> GridFunction:
    """Draw from the Gaussian path at time tau with fresh prior-shaped noise."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    noise = sample_gp(prior_spec, z.w0.domain, z.w0.shape, rng_seed,
                      channels=z.w0.channels)
    values = path_point_values(z.w0.values, z.w1.values, tau, cfg.sigma_min,
                               noise.values)
    return GridFunction(z.w0.domain, z.w0.shape, z.w0.channels, values)


def target_vector_field(z: CouplingSample) -> GridFunction:
    """Closed-form per-coupling regression target w1 - w0 (time-independent)."""
    return GridFunction(z.w0.domain, z.w0.shape, z.w0.channels,
                        z.w1.values - z.w0.values)


def cfm_loss(model, batch: list[CouplingSample], rng_seed, cfg: PathConfig,
             prior_spec: KernelSpec = DEFAULT_PRIOR) -> Tensor:
    """Monte-Carlo conditional flow-matching loss over a batch of couplings.

    One tau ~ U[0,1] and one fresh path noise draw per batch item; the squared
    residual of each item is scaled by gamma(tau)^2 when weighting is enabled.
    """
    if not batch:
        raise ValueError("empty batch")
    rng = np.random.default_rng(rng_seed)
    domain = batch[0].w0.domain
    taus = rng.uniform(0.0, 1.0, size=len(batch))
    w_points, targets, a_values = [], [], []
    for z, tau in zip(batch, taus):
        noise = sample_gp(prior_spec, z.w0.domain, z.w0.shape,
                          rng.integers(0, 2**63 - 1), channels=z.w0.channels)
        w_points.append(path_point_values(z.w0.values, z.w1.values, tau,
                                          cfg.sigma_min, noise.values))
        targets.append(z.w1.values - z.w0.values)
        a_values.append(z.a.values)
    w = np.stack(w_points)
    u = np.stack(targets)
    a = np.stack(a_values)
    pred = model.forward(taus, w, a, domain)
    if not np.all(np.isfinite(pred.values)):
        raise FloatingPointError("non-finite model output in loss evaluation")
    sq = ad.square(ad.add(pred, Tensor(-u)))
    per_item = ad.tmean(sq, axis=tuple(range(1, sq.values.ndim)))
    if cfg.gamma_weighting:
        per_item = ad.mul(per_item, Tensor(gamma_weight(taus) ** 2))
    return ad.tmean(per_item)


# ---------------------------------------------------------------------------
# Dormand-Prince 5(4) with PI step-size control.

_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                   187 / 2100, 1 / 40])


def integrate_ode(f, y0: np.ndarray, t0: float = 0.0, t1: float = 1.0,
                  atol: float = 1e-5, rtol: float = 1e-5,
                  first_step: float = 1e-3, max_steps: int = 100_000) -> np.ndarray:
    """Adaptive Dormand-Prince 5(4) from t0 to t1; returns y(t1)."""
    if atol <= 0 or rtol <= 0:
        raise ValueError("tolerances must be positive")
    y = np.array(y0, dtype=np.float64)
    t = t0
    dt = min(first_step, t1 - t0)
    err_prev = 1.0
    k1 = f(t, y)
    for _ in range(max_steps):
        if t >= t1:
            return y
        dt = min(dt, t1 - t)
        if dt < 1e-12:
            raise IntegrationError(f"step size underflow at t={t:.6g}")
        k = [k1]
        for i in range(1, 7):
            yi = y + dt * sum(aij * kj for aij, kj in zip(_DP_A[i], k))
            k.append(f(t + _DP_C[i] * dt, yi))
        y5 = y + dt * sum(b * kj for b, kj in zip(_DP_B5, k))
        err_vec = dt * sum((b5 - b4) * kj for b5, b4, kj in zip(_DP_B5, _DP_B4, k))
        tol = atol + rtol * np.maximum(np.abs(y), np.abs(y5))
        err = float(np.sqrt(np.mean(np.square(err_vec / tol))))
        if err <= 1.0:
            t += dt
            y = y5
            k1 = k[6]  # FSAL
            err_prev = max(err, 1e-10)
        factor = 0.9 * err_prev**0.08 / max(err, 1e-10) ** 0.18 if err > 0 else 5.0
        dt *= min(5.0, max(0.2, factor))
    raise IntegrationError(f"exceeded {max_steps} steps")


def integrate_flow(model, a: GridFunction, w0: GridFunction,
                   atol: float = 1e-5, rtol: float = 1e-5) -> GridFunction:
    """Solve dw/dtau = H(tau, w, a) from the prior draw to tau = 1."""
    out = integrate_flow_batch(model, a.values[None], w0.values[None],
                               w0.domain, atol=atol, rtol=rtol)
    return GridFunction(w0.domain, w0.shape, w0.channels, out[0])


def integrate_flow_batch(model, a_values: np.ndarray, w0_values: np.ndarray,
                         domain: Domain, atol: float = 1e-5,
                         rtol: float = 1e-5,
                         first_step: float = 1e-3) -> np.ndarray:
    """Integrate a stack of independent flow ODEs with a shared adaptive step."""
    shape = w0_values.shape

    def rhs(t, y):
        with ad.no_grad():
            out = model.forward(np.full(shape[0], t), y.reshape(shape), a_values,
                                domain)
        return out.values.reshape(-1)

    out = integrate_ode(rhs, w0_values.reshape(-1), atol=atol, rtol=rtol,
                        first_step=first_step)
    return out.reshape(shape)


def generate_ensemble(model, a: GridFunction, n_ensembles: int, mode: FlowMode,
                      w_lf_on_eval_grid: GridFunction | None,
                      eval_shape, w_domain: Domain, prior_spec: KernelSpec,
                      rng_seed, w_channels: int = 1,
                      atol: float = 1e-5, rtol: float = 1e-5,
                      first_step: float = 1e-3,
                      batch_size: int = 16) -> list[GridFunction]:
    """Independent flow samples on the evaluation grid, plus the LF baseline
    in residual mode.  Members are integrated in stacked batches for speed;
    trajectories stay independent because the dynamics do not couple them.
    """
    eval_shape = tuple(int(n) for n in eval_shape)
    if mode == FlowMode.FLORAL:
        if w_lf_on_eval_grid is None:
            raise ValueError("residual mode requires a low-fidelity baseline")
        baseline = resample(w_lf_on_eval_grid, eval_shape).values
    else:
        baseline = 0.0
    from .problems import lift_input  # local import avoids a cycle at import time

    a_on_grid = lift_input(a, w_domain, eval_shape)
    seed_seq = (rng_seed if isinstance(rng_seed, np.random.SeedSequence)
                else np.random.SeedSequence(entropy=rng_seed))
    member_seeds = seed_seq.spawn(n_ensembles)
    draws = [
        sample_gp(prior_spec, w_domain, eval_shape, s, channels=w_channels).values
        for s in member_seeds
    ]
    members: list[GridFunction] = []
    for lo in range(0, n_ensembles, batch_size):
        chunk = draws[lo:lo + batch_size]
        w0 = np.stack(chunk)
        a_batch = np.broadcast_to(a_on_grid.values[None],
                                  (len(chunk),) + a_on_grid.values.shape)
        out = integrate_flow_batch(model, a_batch, w0, w_domain, atol=atol,
                                   rtol=rtol, first_step=first_step)
        for row in out:
            members.append(GridFunction(w_domain, eval_shape, w_channels,
                                        row + baseline))
    return members
