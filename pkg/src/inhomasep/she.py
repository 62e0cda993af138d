"""Mild-solution integrator for the limiting SPDE dZ = H Z dt + Z xi.

Scheme: semigroup splitting.  The linear flow is applied exactly through
the spectral semigroup; the multiplicative spacetime noise enters as an
Ito (left point) kick,

    Z(t_{k+1}) = S(dt) [ Z(t_k) (1 + xi_k dt) ],

with xi_k the cell-averaged white noise, i.i.d. N(0, M/dt) per cell so
that space-time integrals of test functions have the right variance.
Under this convention the ensemble mean evolves by the pure semigroup at
every step, exactly.

Noise streams are counter based (Philox keyed by the seed, counter set
from the step index), so trajectories are reproducible no matter how
trials are scheduled.  Positivity is not enforced; negative excursions at
coarse resolution are counted, not clipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import expm_multiply

from .asep import FieldPath
from .environment import ContinuumEnvironment
from .kernels import laplacian
from .semigroup import SpectralSemigroup

CFL_SAFETY = 10.0  # require dt * M^2 <= CFL_SAFETY


class NoiseField:
    """Cell-averaged spacetime white noise on an (dt, 1/m) grid."""

    def __init__(self, m: int, dt: float, seed: int = 0):
        self.m = m
        self.dt = dt
        self.seed = seed

    def block(self, k: int, n_trials: int = 1) -> np.ndarray:
        """Noise for step k, shape (m, n_trials); entries N(0, m/dt)."""
        bitgen = np.random.Philox(key=np.uint64(self.seed),
                                  counter=np.array([0, 0, 0, k], dtype=np.uint64))
        rng = np.random.Generator(bitgen)
        return rng.standard_normal((self.m, n_trials)) * math.sqrt(self.m / self.dt)

    def coarsen_block(self, fine: np.ndarray, factor: int) -> np.ndarray:
        """Block average in space: m -> m / factor cells, law preserved."""
        m, b = fine.shape
        if m % factor:
            raise ValueError("factor must divide the grid size")
        return fine.reshape(m // factor, factor, b).mean(axis=1)


def validate_resolution(m: int, dt: float):
    if dt * m * m > CFL_SAFETY + 1e-12:
        raise ValueError(
            f"time step too coarse for the grid: dt * M^2 = {dt * m * m:.3g} "
            f"exceeds {CFL_SAFETY}")


@dataclass
class MildSolution:
    """Ensemble output of the mild solver."""

    t_grid: np.ndarray             # (K,)
    x_grid: np.ndarray             # (m,)
    z: np.ndarray                  # (K, m, n_trials)
    mode_paths: np.ndarray | None  # (K, n_modes, n_trials) test pairings
    negative_fraction: float
    meta: dict = field(default_factory=dict)

    def trial_path(self, j: int) -> FieldPath:
        return FieldPath(t_macro=self.t_grid, x_macro=self.x_grid,
                         z=self.z[:, :, j], meta=dict(self.meta, trial=j))


def solve_mild(semigroup: SpectralSemigroup, z_ic: np.ndarray, horizon: float,
               dt: float, seed: int = 0, n_trials: int = 1,
               record_times=None, test_functions=None,
               noise: NoiseField | None = None,
               noise_off: bool = False) -> MildSolution:
    """Integrate the mild equation for an ensemble of independent trials.

    record_times defaults to ten uniformly spaced times up to the horizon;
    they are snapped onto the step grid.  test_functions rows are paired
    as (1/m) sum phi Z and recorded at every step for martingale
    diagnostics.
    """
    m = semigroup.m
    validate_resolution(m, dt)
    z_ic = np.asarray(z_ic, dtype=float)
    if z_ic.shape != (m,):
        raise ValueError("initial condition must live on the solver grid")
    n_steps = int(round(horizon / dt))
    if abs(n_steps * dt - horizon) > 1e-9 * max(horizon, 1.0):
        raise ValueError("horizon must be an integer number of steps")
    rec = np.linspace(0.0, horizon, 11)[1:] if record_times is None \
        else np.asarray(record_times, dtype=float)
    rec_steps = np.unique(np.clip(np.round(rec / dt).astype(int), 0, n_steps))
    noise = noise or NoiseField(m, dt, seed)
    phi = None if test_functions is None \
        else np.atleast_2d(np.asarray(test_functions, dtype=float))
    s_dt_lam = np.exp(dt * semigroup.lam)
    q = semigroup.q
    z = np.repeat(z_ic[:, None], n_trials, axis=1)
    out = np.empty((rec_steps.size, m, n_trials))
    modes = np.empty((rec_steps.size, phi.shape[0], n_trials)) \
        if phi is not None else None
    k_rec = 0
    neg = 0
    if rec_steps.size and rec_steps[0] == 0:
        out[0] = z
        if phi is not None:
            modes[0] = phi @ z / m
        k_rec = 1
    for k in range(n_steps):
        if not noise_off:
            z = z * (1.0 + noise.block(k, n_trials) * dt)
        z = (q * s_dt_lam) @ (q.T @ z)
        neg += int((z.min(axis=0) < 0).sum())
        if k_rec < rec_steps.size and rec_steps[k_rec] == k + 1:
            out[k_rec] = z
            if phi is not None:
                modes[k_rec] = phi @ z / m
            k_rec += 1
    return MildSolution(
        t_grid=rec_steps * dt,
        x_grid=np.arange(m) / m,
        z=out,
        mode_paths=modes,
        negative_fraction=neg / max(n_steps * n_trials, 1),
        meta={"seed": seed, "dt": dt, "m": m, "noise_off": noise_off},
    )


def picard_uniqueness_check(semigroup: SpectralSemigroup, z_ic: np.ndarray,
                            horizon: float, dt: float, seed: int = 0,
                            n_iterates: int = 20):
    """Iterate the mild fixed-point map from two different starting guesses.

    Both use the same frozen noise; the sup gap between the iterate pairs
    must contract geometrically and both limits agree with the one-pass
    solver (the solver recursion is the fixed point).
    """
    m = semigroup.m
    validate_resolution(m, dt)
    n_steps = int(round(horizon / dt))
    noise = NoiseField(m, dt, seed)
    xi = [noise.block(k, 1)[:, 0] for k in range(n_steps)]
    q = semigroup.q
    s_dt = (q * np.exp(dt * semigroup.lam)) @ q.T

    def picard_map(traj):
        new = np.empty_like(traj)
        new[0] = z_ic
        for k in range(n_steps):
            new[k + 1] = s_dt @ (new[k] + traj[k] * xi[k] * dt)
        return new

    traj_a = np.zeros((n_steps + 1, m))
    traj_b = np.tile(2.0 * z_ic, (n_steps + 1, 1))
    gaps = []
    for _ in range(n_iterates):
        traj_a = picard_map(traj_a)
        traj_b = picard_map(traj_b)
        gaps.append(float(np.abs(traj_a - traj_b).max()))
    return np.array(gaps), traj_a


def ito_isometry_check(m: int, dt: float, horizon: float, test_functions,
                       n_trials: int = 2000, seed: int = 0):
    """Var(int int f xi ds dx) / |f|^2_{L2} per test function, with SEs.

    test_functions maps (t_k, x_j) grids to values; entries are arrays of
    shape (n_steps, m) or callables f(t, x).
    """
    n_steps = int(round(horizon / dt))
    noise = NoiseField(m, dt, seed)
    xs = np.arange(m) / m
    fs = []
    for f in test_functions:
        if callable(f):
            tt = (np.arange(n_steps) * dt)[:, None]
            fs.append(np.asarray(f(tt, xs[None, :]), dtype=float)
                      * np.ones((n_steps, m)))
        else:
            fs.append(np.asarray(f, dtype=float))
    integrals = np.zeros((len(fs), n_trials))
    for k in range(n_steps):
        blk = noise.block(k, n_trials)
        for i, f in enumerate(fs):
            integrals[i] += (f[k] @ blk) * dt / m
    report = []
    for i, f in enumerate(fs):
        norm2 = float((f ** 2).sum()) * dt / m
        var = integrals[i].var(ddof=1)
        se = var * math.sqrt(2.0 / (n_trials - 1))
        report.append({"ratio": var / norm2, "se": se / norm2,
                       "norm2": norm2})
    return report


# -- second-moment oracle -------------------------------------------------------


def two_particle_generator(cenv: ContinuumEnvironment) -> sparse.csr_matrix:
    """Generator of the two-point function: H (x) I + I (x) H + M diag."""
    m = cenv.m
    h = sparse.csr_matrix(0.5 * m * m * laplacian(m) + np.diag(cenv.potential()))
    eye = sparse.identity(m, format="csr")
    a = sparse.kron(h, eye) + sparse.kron(eye, h)
    diag_mask = np.zeros(m * m)
    diag_mask[np.arange(m) * m + np.arange(m)] = float(m)
    return (a + sparse.diags(diag_mask)).tocsr()


def second_moment_oracle(cenv: ContinuumEnvironment, z_ic: np.ndarray,
                         t: float) -> np.ndarray:
    """E[Z(t, x) Z(t, y)] for the mild solution, by the two-particle flow.

    The Ito product rule closes the two-point function into a linear ODE
    with a delta interaction on the diagonal; this integrates it exactly
    (independent of the solver), returning the full (m, m) matrix.
    """
    m = cenv.m
    gen = two_particle_generator(cenv)
    m0 = np.outer(z_ic, z_ic).ravel()
    return expm_multiply(gen * t, m0).reshape(m, m)


def covariance_profile_oracle(cenv: ContinuumEnvironment, z_ic: np.ndarray,
                              times, lag_cells) -> np.ndarray:
    """Translation-averaged covariance on lag offsets, deterministically.

    Returns C[pair, lag] = (1/M) sum_x Cov(Z(t_i, x), Z(t_j, x + lag)) for
    time pairs (i <= j) in row-major order, via the two-particle flow with
    one-particle propagation bridging the time gap.
    """
    spect = SpectralSemigroup(cenv)
    m = cenv.m
    times = np.asarray(times, dtype=float)
    lag_cells = np.asarray(lag_cells, dtype=int)
    means = [spect.apply(t, z_ic) for t in times]
    gen = two_particle_generator(cenv)
    state = np.outer(z_ic, z_ic).ravel()
    seconds = []
    t_prev = 0.0
    for t in times:
        if t > t_prev:
            state = expm_multiply(gen * (t - t_prev), state)
        seconds.append(state.reshape(m, m).copy())
        t_prev = t
    rows = []
    for i in range(times.size):
        for j in range(i, times.size):
            m2 = seconds[i]
            if times[j] > times[i]:
                # propagate the second slot of E[Z(t_i) x Z(t_i)]
                m2 = spect.apply(times[j] - times[i], m2.T).T
            prof = np.empty(lag_cells.size)
            for k, d in enumerate(lag_cells):
                idx = (np.arange(m) + d) % m
                prof[k] = (m2[np.arange(m), idx]
                           - means[i] * means[j][idx]).mean()
            rows.append(prof)
    return np.stack(rows)


def covariance_oracle(cenv: ContinuumEnvironment, z_ic: np.ndarray,
                      times, positions) -> np.ndarray:
    """Cov(Z(t_i, x_j), Z(t_i', x_j')) on a coarse grid, deterministically.

    For t <= t' the cross moment is the two-particle state at t propagated
    by the one-particle semigroup in the second slot over t' - t.
    """
    spect = SpectralSemigroup(cenv)
    m = cenv.m
    idx = np.asarray(np.round(np.asarray(positions) * m), dtype=int) % m
    times = np.asarray(times, dtype=float)
    means = {float(t): spect.apply(t, z_ic) for t in times}
    gen = two_particle_generator(cenv)
    state = np.outer(z_ic, z_ic).ravel()
    second = {}
    t_prev = 0.0
    for t in np.sort(times):
        t = float(t)
        if t > t_prev:
            state = expm_multiply(gen * (t - t_prev), state)
        second[t] = state.reshape(m, m).copy()
        t_prev = t
    pairs = [(float(t), int(j)) for t in times for j in idx]
    k = len(pairs)
    cov = np.empty((k, k))
    for a_i, (ta, ja) in enumerate(pairs):
        for b_i in range(a_i, k):
            tb, jb = pairs[b_i]
            t0, t1 = (ta, tb) if ta <= tb else (tb, ta)
            j0, j1 = (ja, jb) if ta <= tb else (jb, ja)
            m2 = second[t0]
            # E[Z(t0, j0) Z(t1, j1)]: propagate the second slot over t1 - t0
            val = spect.apply(t1 - t0, m2[j0])[j1] if t1 > t0 else m2[j0, j1]
            cov[a_i, b_i] = val - means[ta][ja] * means[tb][jb]
            cov[b_i, a_i] = cov[a_i, b_i]
    return cov
