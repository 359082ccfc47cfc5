"""Paired low-/high-fidelity dataset generation for four problem families.

Each problem produces triples (input a, low-fidelity solution, high-fidelity
solution).  Low fidelity comes from spectrally degraded initial conditions
(advection), a coarser grid on top of that (Burgers), a truncated
permeability expansion plus a coarser grid (Darcy), or a closed-form biased
operator (benchmark 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix, diags, identity, kron
from scipy.sparse import bmat as sparse_bmat
from scipy.sparse.linalg import splu

from .grid import Domain, GridFunction, mesh, resample, uniform_grid
from .random_fields import KernelSpec, KKLBasis, kkl_decompose, sample_log_permeability


class SolverError(RuntimeError):
    """Stability violation or non-convergence inside a PDE solve."""


@dataclass(frozen=True)
class ICSpec:
    """Random sine-superposition initial conditions with optional transforms."""

    n_max: int = 8
    n_waves: int = 2
    amplitude_range: tuple[float, float] = (0.0, 1.0)
    phase_range: tuple[float, float] = (0.0, 2.0 * np.pi)
    p_abs: float = 0.1
    p_sign_flip: float = 0.5
    p_window: float = 0.1

    def __post_init__(self):
        for p in (self.p_abs, self.p_sign_flip, self.p_window):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"transform probability {p} outside [0, 1]")


@dataclass(frozen=True)
class DegradeSpec:
    """Spectral low-pass degradation: keep fraction, damping, amplitude scale."""

    f_keep: float = 0.4
    damping: float = 4.0
    amplitude_scale: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.f_keep <= 1.0:
            raise ValueError(f"f_keep {self.f_keep} outside (0, 1]")
        if self.damping < 0.0 or self.amplitude_scale <= 0.0:
            raise ValueError("damping must be >= 0 and amplitude scale > 0")


@dataclass(frozen=True)
class ProblemConfig:
    """Physical and resolution parameters for one problem family."""

    problem: str
    nx_hf: int = 128
    nt_hf: int = 128
    nx_lf: int = 128
    nt_lf: int = 128
    final_time: float = 1.0
    beta: float = 0.05
    viscosity: float = 0.01
    darcy_lengthscale: float = 0.1
    well_rate: float = 50.0
    well_size: float = 0.125
    log_perm_mean: float = 0.0
    q_hf: int = 128
    q_lf: int = 64
    ic: ICSpec = field(default_factory=ICSpec)
    degrade: DegradeSpec = field(default_factory=DegradeSpec)


def default_problem_config(problem: str) -> ProblemConfig:
    """Per-problem resolutions and parameters used in the experiments."""
    if problem == "benchmark1":
        return ProblemConfig(problem="benchmark1", nx_hf=128, nx_lf=128)
    if problem == "advection":
        return ProblemConfig(problem="advection", final_time=1.0)
    if problem == "burgers":
        return ProblemConfig(
            problem="burgers", final_time=0.2, nx_lf=64, nt_lf=64,
            degrade=DegradeSpec(f_keep=0.6),
        )
    if problem == "darcy":
        return ProblemConfig(problem="darcy", nx_lf=32, nt_lf=32)
    raise ValueError(f"unknown problem {problem!r}")


UNIT_INTERVAL = Domain(((0.0, 1.0),), (False,))
PERIODIC_INTERVAL = Domain(((0.0, 1.0),), (True,))
UNIT_SQUARE = Domain(((0.0, 1.0), (0.0, 1.0)), (False, False))


def _sample_seed(root_seed: int, index: int) -> np.random.SeedSequence:
    # Per-sample seeds are order-independent so generation can parallelize.
    return np.random.SeedSequence(entropy=int(root_seed), spawn_key=(int(index),))


# ---------------------------------------------------------------------------
# Benchmark 1: closed-form operators with input-dependent correlation.

def benchmark1_input(nx: int, rng_seed) -> GridFunction:
    """a(x) = k x - 4 with k ~ U(10, 14) on the unit interval."""
    rng = np.random.default_rng(rng_seed)
    k = rng.uniform(10.0, 14.0)
    (x,) = uniform_grid(UNIT_INTERVAL, (nx,))
    return GridFunction(UNIT_INTERVAL, (nx,), 1, (k * x - 4.0)[None])


def benchmark1_hf(a: GridFunction) -> GridFunction:
    return GridFunction(a.domain, a.shape, 1, np.sin(a.values))


def benchmark1_lf(a: GridFunction) -> GridFunction:
    (x,) = uniform_grid(a.domain, a.shape)
    values = np.sin(a.values) + x[None] - 0.25 * a.values
    return GridFunction(a.domain, a.shape, 1, values)


# ---------------------------------------------------------------------------
# Random initial conditions and their spectral degradation.

def gen_initial_condition(spec: ICSpec, nx: int, rng_seed) -> GridFunction:
    """Superposition of sine waves with random abs/sign-flip/window transforms."""
    rng = np.random.default_rng(rng_seed)
    (x,) = uniform_grid(PERIODIC_INTERVAL, (nx,))
    n_i = rng.integers(1, spec.n_max + 1, size=spec.n_waves)
    amps = rng.uniform(*spec.amplitude_range, size=spec.n_waves)
    phases = rng.uniform(*spec.phase_range, size=spec.n_waves)
    u = np.zeros(nx)
    for n, amp, phase in zip(n_i, amps, phases):
        u += amp * np.sin(2.0 * np.pi * n * x + phase)
    if rng.uniform() < spec.p_abs:
        u = np.abs(u)
    if rng.uniform() < spec.p_sign_flip:
        u = -u
    if rng.uniform() < spec.p_window:
        xa = rng.uniform(0.05, 0.45)
        xb = rng.uniform(0.55, 0.95)
        u = np.where((x >= xa) & (x <= xb), u, 0.0)
    return GridFunction(PERIODIC_INTERVAL, (nx,), 1, u[None])


def spectral_degrade(u0: GridFunction, spec: DegradeSpec) -> GridFunction:
    """Low-fidelity IC: keep the lowest modes, damp, and rescale the spectrum."""
    if u0.domain.ndim != 1 or not u0.domain.periodic[0]:
        raise ValueError("spectral degradation requires a periodic 1D field")
    nx = u0.shape[0]
    coeffs = np.fft.rfft(u0.values, axis=-1)
    n_modes = coeffs.shape[-1]  # K + 1 coefficients for k = 0..K
    big_k = n_modes - 1
    k = np.arange(n_modes)
    keep = max(2, int(np.floor(spec.f_keep * big_k)))
    mask = (k < keep).astype(float)
    coeffs = spec.amplitude_scale * coeffs * mask * np.exp(-spec.damping * k / big_k)
    values = np.fft.irfft(coeffs, n=nx, axis=-1)
    return GridFunction(u0.domain, u0.shape, u0.channels, values)


# ---------------------------------------------------------------------------
# Time-dependent 1D solvers.  Both return the full space-time trajectory with
# nt uniformly spaced snapshots on [0, T] including t = 0, shape (nx, nt).

def _trajectory_domain(final_time: float) -> Domain:
    return Domain(((0.0, 1.0), (0.0, final_time)), (True, False))


def solve_advection(
    u0: np.ndarray, beta: float, nx: int, nt: int, final_time: float,
    cfl: float = 0.9,
) -> GridFunction:
    """First-order upwind / forward Euler for u_t + beta u_x = 0, periodic."""
    if beta < 0:
        raise SolverError("advection velocity must be nonnegative")
    u = np.asarray(u0, dtype=np.float64).reshape(nx).copy()
    dx = 1.0 / nx
    dt_snap = final_time / (nt - 1)
    if beta == 0.0:
        substeps, dt = 1, dt_snap
    else:
        substeps = max(1, int(np.ceil(dt_snap * beta / (cfl * dx))))
        dt = dt_snap / substeps
    if beta * dt / dx > 1.0 + 1e-12:
        raise SolverError(f"CFL violation: {beta * dt / dx:.3f} > 1")
    traj = np.empty((nx, nt))
    traj[:, 0] = u
    coef = beta * dt / dx
    for j in range(1, nt):
        for _ in range(substeps):
            u = u - coef * (u - np.roll(u, 1))
        traj[:, j] = u
    return GridFunction(_trajectory_domain(final_time), (nx, nt), 1, traj[None])


def _burgers_rhs(u: np.ndarray, nu: float, dx: float) -> np.ndarray:
    # Conservative flux form with second-order upwind-biased face extrapolation;
    # telescoping fluxes preserve the discrete spatial mean exactly.
    f = 0.5 * u * u
    fm1, fp1, fp2 = np.roll(f, 1), np.roll(f, -1), np.roll(f, -2)
    speed = 0.5 * (u + np.roll(u, -1))
    flux = np.where(speed >= 0.0, 1.5 * f - 0.5 * fm1, 1.5 * fp1 - 0.5 * fp2)
    dudt = -(flux - np.roll(flux, 1)) / dx
    dudt += nu * (np.roll(u, -1) - 2.0 * u + np.roll(u, 1)) / (dx * dx)
    return dudt


def solve_burgers(
    u0: np.ndarray, nu: float, nx: int, nt: int, final_time: float,
    cfl_adv: float = 0.4, cfl_diff: float = 0.4,
) -> GridFunction:
    """Viscous Burgers with 2nd-order upwind fluxes, central diffusion, SSP-RK3."""
    if nu < 0:
        raise SolverError("viscosity must be nonnegative")
    u = np.asarray(u0, dtype=np.float64).reshape(nx).copy()
    dx = 1.0 / nx
    umax = max(np.max(np.abs(u)), 1e-8)
    dt_max = cfl_adv * dx / umax
    if nu > 0:
        dt_max = min(dt_max, cfl_diff * dx * dx / nu)
    dt_snap = final_time / (nt - 1)
    substeps = max(1, int(np.ceil(dt_snap / dt_max)))
    dt = dt_snap / substeps
    traj = np.empty((nx, nt))
    traj[:, 0] = u
    for j in range(1, nt):
        for _ in range(substeps):
            u1 = u + dt * _burgers_rhs(u, nu, dx)
            u2 = 0.75 * u + 0.25 * (u1 + dt * _burgers_rhs(u1, nu, dx))
            u = u / 3.0 + 2.0 / 3.0 * (u2 + dt * _burgers_rhs(u2, nu, dx))
        if not np.all(np.isfinite(u)):
            raise SolverError(f"Burgers solve produced non-finite values at snapshot {j}")
        traj[:, j] = u
    return GridFunction(_trajectory_domain(final_time), (nx, nt), 1, traj[None])


# ---------------------------------------------------------------------------
# 2D Darcy flow.

def darcy_source(rate: float, size: float, shape) -> GridFunction:
    """Injection well where both coordinates lie in [0, s]; production mirrored."""
    x1, x2 = mesh(UNIT_SQUARE, shape)
    f = np.zeros(shape)
    f[(x1 <= size) & (x2 <= size)] = rate
    f[(x1 >= 1.0 - size) & (x2 >= 1.0 - size)] = -rate
    return GridFunction(UNIT_SQUARE, shape, 1, f[None])


def _forward_difference_matrix(n: int) -> csr_matrix:
    d = diags([-np.ones(n), np.ones(n - 1)], [0, 1], shape=(n - 1, n))
    return csr_matrix(d)


def darcy_operator(k_values: np.ndarray) -> tuple[csr_matrix, np.ndarray]:
    """Symmetric PSD stiffness matrix for -div(K grad p) with zero normal flux.

    Assembled from the discrete energy 1/2 sum_faces K_face (dp/h)^2 m_face on
    the endpoint-inclusive node grid; also returns the trapezoid node weights
    used for the load vector.
    """
    n1, n2 = k_values.shape
    h1, h2 = 1.0 / (n1 - 1), 1.0 / (n2 - 1)
    w1 = np.full(n1, h1); w1[[0, -1]] = 0.5 * h1
    w2 = np.full(n2, h2); w2[[0, -1]] = 0.5 * h2
    node_weights = np.outer(w1, w2)

    d1 = _forward_difference_matrix(n1)
    d2 = _forward_difference_matrix(n2)
    # Kronecker-structured difference operators over the flattened (n1*n2,) grid.
    g1 = kron(d1, identity(n2), format="csr") / h1
    g2 = kron(identity(n1), d2, format="csr") / h2
    k_face1 = 0.5 * (k_values[:-1, :] + k_values[1:, :])
    k_face2 = 0.5 * (k_values[:, :-1] + k_values[:, 1:])
    m_face1 = (h1 * np.outer(np.ones(n1 - 1), w2)) * k_face1
    m_face2 = (h2 * np.outer(w1, np.ones(n2 - 1))) * k_face2
    a = g1.T @ diags(m_face1.ravel()) @ g1 + g2.T @ diags(m_face2.ravel()) @ g2
    return csr_matrix(a), node_weights


def solve_darcy(
    perm: GridFunction, source: GridFunction
) -> tuple[GridFunction, GridFunction]:
    """Pressure and velocity of the Darcy problem with zero-mean pressure.

    The zero-mean constraint is enforced through a single Lagrange multiplier
    appended to the symmetric system; the sparse KKT system is solved with a
    direct factorization.
    """
    if perm.shape != source.shape:
        raise SolverError("permeability and source must share a grid")
    k_values = perm.values[0]
    if np.any(k_values <= 0):
        raise SolverError("permeability must be positive everywhere")
    n1, n2 = perm.shape
    a, node_weights = darcy_operator(k_values)
    b = (source.values[0] * node_weights).ravel()
    n = n1 * n2
    c = csr_matrix(np.full((n, 1), 1.0 / n))
    kkt = sparse_bmat([[a, c], [c.T, None]], format="csc")
    try:
        sol = splu(kkt).solve(np.concatenate([b, [0.0]]))
    except RuntimeError as exc:
        raise SolverError(f"Darcy KKT factorization failed: {exc}") from None
    p = sol[:n].reshape(n1, n2)
    residual = a @ sol[:n] + (c @ sol[n:]).ravel() - b
    rel = np.linalg.norm(residual) / max(np.linalg.norm(b), 1e-300)
    if rel > 1e-8:
        raise SolverError(f"Darcy solve residual {rel:.3e} above tolerance")
    h1, h2 = 1.0 / (n1 - 1), 1.0 / (n2 - 1)
    dp1, dp2 = np.gradient(p, h1, h2, edge_order=2)
    u = -k_values * np.stack([dp1, dp2])
    pressure = GridFunction(perm.domain, perm.shape, 1, p[None])
    velocity = GridFunction(perm.domain, perm.shape, 2, u)
    return pressure, velocity


def darcy_energy_identity(perm: GridFunction, source: GridFunction, p: GridFunction):
    """(dissipation, work) pair of the discrete energy balance for a solve."""
    a, node_weights = darcy_operator(perm.values[0])
    pv = p.values[0].ravel()
    dissipation = float(pv @ (a @ pv))
    work = float(np.sum(source.values[0] * node_weights * p.values[0]))
    return dissipation, work


# ---------------------------------------------------------------------------
# Dataset assembly.

@dataclass
class FieldSet:
    """A named stack of grid functions: (count, channels, *shape) values."""

    name: str
    role: str  # input | lf_solution | hf_solution
    domain: Domain
    shape: tuple[int, ...]
    channels: int
    values: np.ndarray

    def sample(self, i: int) -> GridFunction:
        return GridFunction(self.domain, self.shape, self.channels, self.values[i])


@dataclass
class Dataset:
    problem: str
    config: ProblemConfig
    count: int
    seed: int
    fields: dict[str, FieldSet]

    def sample(self, i: int) -> dict[str, GridFunction]:
        """All fields of one sample, keyed by field name."""
        return {name: f.sample(i) for name, f in self.fields.items()}

    def lf_on_hf_grid(self, i: int) -> GridFunction:
        name = "lf_solution_hf" if "lf_solution_hf" in self.fields else "lf_solution"
        return self.fields[name].sample(i)


_kkl_cache: dict[tuple, KKLBasis] = {}


def darcy_kkl_basis(config: ProblemConfig) -> KKLBasis:
    key = (config.darcy_lengthscale, config.nx_hf, config.q_hf, config.log_perm_mean)
    basis = _kkl_cache.get(key)
    if basis is None:
        spec = KernelSpec(family="exponential-darcy", lengthscale=config.darcy_lengthscale)
        basis = kkl_decompose(spec, UNIT_SQUARE, (config.nx_hf, config.nx_hf), config.q_hf)
        basis.mean = config.log_perm_mean
        _kkl_cache[key] = basis
    return basis


def _generate_sample(config: ProblemConfig, seed: np.random.SeedSequence):
    """One (input, lf, hf [, lf_on_hf]) triple for the configured problem."""
    p = config.problem
    if p == "benchmark1":
        a = benchmark1_input(config.nx_hf, seed)
        return a, benchmark1_lf(a), benchmark1_hf(a), None
    if p == "advection":
        u0 = gen_initial_condition(config.ic, config.nx_hf, seed)
        u0_lf = spectral_degrade(u0, config.degrade)
        hf = solve_advection(u0.values, config.beta, config.nx_hf, config.nt_hf,
                             config.final_time)
        lf = solve_advection(u0_lf.values, config.beta, config.nx_lf, config.nt_lf,
                             config.final_time)
        return u0, lf, hf, None
    if p == "burgers":
        u0 = gen_initial_condition(config.ic, config.nx_hf, seed)
        u0_lf = resample(spectral_degrade(u0, config.degrade), (config.nx_lf,))
        hf = solve_burgers(u0.values, config.viscosity, config.nx_hf, config.nt_hf,
                           config.final_time)
        lf = solve_burgers(u0_lf.values, config.viscosity, config.nx_lf, config.nt_lf,
                           config.final_time)
        return u0, lf, hf, resample(lf, hf.shape)
    if p == "darcy":
        basis = darcy_kkl_basis(config)
        k_hf = sample_log_permeability(basis, config.q_hf, seed)
        k_lf = resample(sample_log_permeability(basis, config.q_lf, seed),
                        (config.nx_lf, config.nx_lf))
        hf_src = darcy_source(config.well_rate, config.well_size, k_hf.shape)
        lf_src = darcy_source(config.well_rate, config.well_size, k_lf.shape)
        hf, _ = solve_darcy(k_hf, hf_src)
        lf, _ = solve_darcy(k_lf, lf_src)
        return k_hf, lf, hf, resample(lf, hf.shape)
    raise ValueError(f"unknown problem {p!r}")


def generate_dataset(config: ProblemConfig, count: int, rng_seed: int) -> Dataset:
    """Generate ``count`` paired samples; deterministic in (config, seed)."""
    fields: dict[str, list[GridFunction]] = {}
    for i in range(count):
        try:
            a, lf, hf, lf_hf = _generate_sample(config, _sample_seed(rng_seed, i))
        except SolverError as exc:
            raise SolverError(f"sample {i}: {exc}") from None
        fields.setdefault("input", []).append(a)
        fields.setdefault("lf_solution", []).append(lf)
        fields.setdefault("hf_solution", []).append(hf)
        if lf_hf is not None:
            fields.setdefault("lf_solution_hf", []).append(lf_hf)
    out: dict[str, FieldSet] = {}
    roles = {"input": "input", "lf_solution": "lf_solution",
             "lf_solution_hf": "lf_solution", "hf_solution": "hf_solution"}
    for name, items in fields.items():
        first = items[0]
        out[name] = FieldSet(
            name=name, role=roles[name], domain=first.domain, shape=first.shape,
            channels=first.channels,
            values=np.stack([g.values for g in items]),
        )
    return Dataset(config.problem, config, count, int(rng_seed), out)


def lift_input(a: GridFunction, w_domain: Domain, w_shape) -> GridFunction:
    """Evaluate/resample the conditioning input on a solution grid.

    Shared leading axes are resampled; extra trailing solution axes (e.g. the
    time axis of a trajectory) broadcast the input as a constant.
    """
    w_shape = tuple(int(n) for n in w_shape)
    shared = a.domain.ndim
    a_re = resample(a, w_shape[:shared])
    values = a_re.values.reshape(a_re.values.shape + (1,) * (len(w_shape) - shared))
    values = np.broadcast_to(values, (a.channels,) + w_shape)
    return GridFunction(w_domain, w_shape, a.channels, values)
