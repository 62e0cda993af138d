"""Discrete and continuum PAM semigroups.

Discrete: sg(t) = exp(t ham) with ham = sqrt(r ell) rtt(x) Lap - nu a(x),
the operator governing the drift of the transformed particle system.
Continuum: S(t) = exp(t H) with H = (1/2) dxx + (derivative of the limit
path), realized two independent ways: a spectral route through the
finite-difference operator with a centered-increment potential, and the
perturbation series in the potential with exact order-by-order Duhamel
terms over a band-limited grid Laplacian.

Sign conventions: the potential enters the discrete generator as -nu a(x),
so the Feynman-Kac weight is exp(-nu int a(X_s) ds) and the series factors
carry -nu a per order.  (Deriving the generator from the particle system
fixes these signs; the continuum potential is +dR with R the limit of the
partial sums, consistent because a(x) = -2 grad R pointwise.)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import linalg

from . import torus
from .asep import ScalingParams
from .environment import ContinuumEnvironment, Environment
from .kernels import hka_oracle, laplacian, _picard_cascade


def build_ham(env: Environment, scaling: ScalingParams) -> np.ndarray:
    """N x N generator: off-diagonals sqrt(rl) rtt(x), diagonal
    -2 sqrt(rl) rtt(x) - nu a(x); acts on the start variable."""
    return scaling.sqrt_rl * env.rtt[:, None] * laplacian(env.n) \
        - scaling.nu * np.diag(env.a)


class DiscreteSemigroup:
    """sg(t) = exp(t ham) with per-time kernel caching."""

    def __init__(self, env: Environment, scaling: ScalingParams):
        self.env = env
        self.scaling = scaling
        self.ham = build_ham(env, scaling)
        self._cache: dict[float, np.ndarray] = {}

    def kernel(self, t: float) -> np.ndarray:
        if t < 0:
            raise ValueError("time must be nonnegative")
        if t not in self._cache:
            self._cache[t] = linalg.expm(t * self.ham)
        return self._cache[t]

    def apply(self, t: float, f: np.ndarray) -> np.ndarray:
        return self.kernel(t) @ f


def sg_oracle(env: Environment, scaling: ScalingParams, t: float) -> np.ndarray:
    return DiscreteSemigroup(env, scaling).kernel(t)


def sg_scaled_kernel(env: Environment, scaling: ScalingParams,
                     t_macro: float) -> np.ndarray:
    """sg_N(t; x, x') = N sg(t N^2; Nx, Nx'), the kernel on the unit torus."""
    return env.n * sg_oracle(env, scaling, t_macro * env.n ** 2)


# -- Feynman-Kac sampling -----------------------------------------------------


@njit(cache=True)
def _fk_walks(rtt, a, x0, t, n_paths, seed, rate_pref, nu):
    """Bouchaud walks from x0 with side rates rate_pref * rtt(X); returns
    per-site sums of the exponential weight exp(-nu int a(X_s) ds) at time
    t and the sum of squared weights for error bars."""
    np.random.seed(seed)
    n = rtt.shape[0]
    wsum = np.zeros(n)
    w2sum = np.zeros(n)
    for _ in range(n_paths):
        x = x0
        s = 0.0
        ia = 0.0
        while True:
            rate = 2.0 * rate_pref * rtt[x]
            hold = np.random.exponential(1.0) / rate
            if s + hold >= t:
                ia += a[x] * (t - s)
                break
            ia += a[x] * hold
            s += hold
            if np.random.random() < 0.5:
                x = x + 1 if x < n - 1 else 0
            else:
                x = x - 1 if x > 0 else n - 1
        w = np.exp(-nu * ia)
        wsum[x] += w
        w2sum[x] += w * w
    return wsum, w2sum


def sg_feynman_kac(env: Environment, scaling: ScalingParams, t: float,
                   x0: int, n_paths: int = 10000, seed: int = 0):
    """Monte-Carlo row of sg(t; x0, .) with standard errors.

    Unbiased: sg(t; x0, x') = E_x0[ exp(-nu int_0^t a(X(s)) ds) 1{X(t)=x'} ]
    over the walk jumping each way at rate sqrt(r ell) rtt(X).
    """
    wsum, w2sum = _fk_walks(env.rtt, env.a, x0, t, n_paths, seed,
                            scaling.sqrt_rl, scaling.nu)
    est = wsum / n_paths
    var = w2sum / n_paths - est ** 2
    return est, np.sqrt(np.maximum(var, 0.0) / n_paths)


# -- discrete perturbation series ---------------------------------------------


def sgr_series(env: Environment, scaling: ScalingParams, t: float, n_max: int):
    """Potential expansion of sg(t) around the inhomogeneous walk kernel.

    Orders solve d/dt U_n = G U_n + B U_{n-1}, U_0 = hka, with G the walk
    generator and B = -nu diag(a); extracted exactly from one block
    exponential.  Returns (total, terms, sup_norms); terms[0] is hka.
    """
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    g = scaling.sqrt_rl * env.rtt[:, None] * laplacian(env.n)
    b = -scaling.nu * np.diag(env.a)
    terms = _picard_cascade(g, b, t, n_max)
    norms = np.array([np.abs(u).max() for u in terms])
    grew = norms[2:] > norms[1:-1]
    if grew.size >= 2 and grew[-1] and grew[-2]:
        raise ArithmeticError(
            f"series order norms grow ({norms[-3:]}); expansion diverges")
    return np.sum(terms, axis=0), terms, norms


# -- summation by parts -------------------------------------------------------


def _short_arc_prefix(env: Environment, basepoint: int) -> np.ndarray:
    """rho(x): partial sum from the basepoint along the shorter branch.

    rho(x) = R(basepoint, x) when (basepoint, x] is the arc not longer than
    half the torus, else -R(x, basepoint).  On any arc containing the
    basepoint in its interior this is a true primitive of the increments:
    rho(x) - rho(x-1) = -a(x)/2 with no seam correction.
    """
    n = env.n
    x = np.arange(n)
    fwd = (x - basepoint) % n
    ahead = fwd <= n // 2
    rho = np.where(ahead, env.partial_sum(basepoint, x),
                   -env.partial_sum(x, basepoint))
    return rho


def sgrI_direct(env: Environment, scaling: ScalingParams, s_vec) -> np.ndarray:
    """Order-n series integrand at fixed simplex times, by direct sums.

    sgrI_n(s; x, x') = sum over interior sites of
    hka(s_0) (-nu a) hka(s_1) ... (-nu a) hka(s_n), as a matrix product.
    """
    s_vec = np.asarray(s_vec, dtype=float)
    out = hka_oracle(env, s_vec[0], scaling, normalized=False)
    b = -scaling.nu * env.a
    for s in s_vec[1:]:
        out = (out * b[None, :]) @ hka_oracle(env, s, scaling, normalized=False)
    return out


def ips_matrix(env: Environment, scaling: ScalingParams, s: float,
               sp: float) -> np.ndarray:
    """The summed-by-parts junction J[y1, y2] = sum_x f (-nu a) g.

    f = hka(s; y1, .), g = hka(sp; ., y2).  Each half-torus arc of the
    midpoint partition of (y1, y2) is summed by parts against the
    short-arc partial sums from its own anchor, leaving boundary terms at
    the arc ends plus partial-sum-weighted sums of the gradient of f g.
    Exact identity; equals the direct sum up to roundoff.
    """
    n = env.n
    ka = hka_oracle(env, s, scaling, normalized=False)
    kb = hka_oracle(env, sp, scaling, normalized=False)
    nu = scaling.nu
    rho = np.stack([_short_arc_prefix(env, y) for y in range(n)])
    out = np.empty((n, n))
    for y1 in range(n):
        f = ka[y1]
        for y2 in range(n):
            g = kb[:, y2]
            big_f = f * g
            total = 0.0
            p1, p2, m1, m2 = torus.midpoint_partition(y1, y2, n)
            for arc, anchor, mstart, mend in ((p1, y1, m1, m2),
                                              (p2, y2, m2, m1)):
                if arc.size == 0:
                    continue
                e = (mend - 1) % n
                r = rho[anchor]
                inner = 0.0
                x = mstart
                while x != e:
                    xn = (x + 1) % n
                    inner += (big_f[xn] - big_f[x]) * r[x]
                    x = xn
                total += 2.0 * nu * (big_f[e] * r[e]
                                     - big_f[mstart] * r[(mstart - 1) % n]
                                     - inner)
            out[y1, y2] = total
    return out


def sgrI_by_parts(env: Environment, scaling: ScalingParams, s_vec) -> np.ndarray:
    """Order-n series integrand via half-time kernels and the junction.

    sgrI_n(s; x, x') = hka(s_0/2) J(s_0/2, s_1/2) ... J(s_{n-1}/2, s_n/2)
    hka(s_n/2); exact rearrangement of sgrI_direct.
    """
    s_vec = np.asarray(s_vec, dtype=float)
    out = hka_oracle(env, s_vec[0] / 2.0, scaling, normalized=False)
    for i in range(1, s_vec.size):
        out = out @ ips_matrix(env, scaling, s_vec[i - 1] / 2.0, s_vec[i] / 2.0)
    return out @ hka_oracle(env, s_vec[-1] / 2.0, scaling, normalized=False)


def summation_by_parts_check(env: Environment, scaling: ScalingParams,
                             s_vec) -> float:
    """Max residual between the direct and summed-by-parts evaluations."""
    direct = sgrI_direct(env, scaling, s_vec)
    parts = sgrI_by_parts(env, scaling, s_vec)
    return float(np.abs(direct - parts).max())


# -- continuum heat kernel and semigroups --------------------------------------


def continuum_heat_kernel(t: float, x, xt, wraps: int | None = None):
    """Wrapped Gaussian kernel on [0, 1); integrates to 1 in the end slot."""
    if t <= 0:
        raise ValueError("positive time required; t = 0 is a delta")
    if wraps is None:
        wraps = int(math.ceil(10.0 * math.sqrt(t))) + 2
    x = np.asarray(x, dtype=float)
    xt = np.asarray(xt, dtype=float)
    d = x[..., None] - xt[..., None] + np.arange(-wraps, wraps + 1)
    vals = np.exp(-d * d / (2.0 * t)) / math.sqrt(2.0 * math.pi * t)
    return vals.sum(axis=-1)


def hk_grid(t: float, m: int) -> np.ndarray:
    """Heat kernel matrix on the m-grid (kernel semantics: apply with 1/m)."""
    xs = np.arange(m) / m
    return continuum_heat_kernel(t, xs[:, None], xs[None, :])


@dataclass(frozen=True)
class EigenSystem:
    eigenvalues: np.ndarray      # descending
    eigenfunctions: np.ndarray   # (m, n_modes), L2([0,1)) normalized on grid
    residuals: np.ndarray

    def test_functions(self, indices) -> np.ndarray:
        """Rows phi_n(x_j) for the requested 1-based mode indices."""
        return self.eigenfunctions[:, np.asarray(indices) - 1].T


class SpectralSemigroup:
    """S(t) by full eigendecomposition of the finite-difference operator.

    The operator is (1/2) M^2 Lap + diag(V) with V the centered increment
    quotient of the limit path (the seam increment is never picked up).
    Kernels carry continuum semantics: apply with a 1/M spatial measure.
    """

    def __init__(self, cenv: ContinuumEnvironment):
        self.cenv = cenv
        m = cenv.m
        h = 0.5 * m * m * laplacian(m) + np.diag(cenv.potential())
        lam, q = linalg.eigh(h)
        order = np.argsort(lam)[::-1]
        self.lam = lam[order]
        self.q = q[:, order]
        self.m = m

    def eigensystem(self, n_modes: int | None = None) -> EigenSystem:
        k = n_modes or self.m
        phi = np.sqrt(self.m) * self.q[:, :k]
        h = 0.5 * self.m ** 2 * laplacian(self.m) + np.diag(self.cenv.potential())
        res = np.array([np.linalg.norm(h @ self.q[:, i] - self.lam[i] * self.q[:, i])
                        for i in range(k)])
        return EigenSystem(eigenvalues=self.lam[:k].copy(),
                           eigenfunctions=phi, residuals=res)

    def kernel(self, t: float) -> np.ndarray:
        return self.m * (self.q * np.exp(t * self.lam)) @ self.q.T

    def apply(self, t: float, f: np.ndarray) -> np.ndarray:
        return (self.q * np.exp(t * self.lam)) @ (self.q.T @ f)


def _fourier_modes(m: int) -> np.ndarray:
    return np.fft.fftfreq(m, d=1.0 / m)


def bandlimited_heat_operator(m: int, t: float) -> np.ndarray:
    """exp(t/2 dxx) restricted to the m lowest Fourier modes, as a real
    operator matrix on grid functions."""
    lam = -0.5 * (2.0 * np.pi * _fourier_modes(m)) ** 2
    return np.real(np.fft.ifft(np.exp(t * lam)[:, None] * np.fft.fft(np.eye(m), axis=0), axis=0))


def s_series(cenv: ContinuumEnvironment, t: float, n_max: int,
             tol_scale: float = 0.5):
    """Potential series of the continuum semigroup on the grid.

    Order n is the n-fold time-simplex Duhamel term with heat flows between
    potential insertions; computed exactly (no time quadrature) by scaling
    and convolution-squaring of the order family:

        U_k(2 tau) = sum_{i+j=k} U_i(tau) U_j(tau),

    seeded at a tau small enough that the block Taylor series converges in
    a few terms.  The kinetic part is the band-limited Fourier Laplacian,
    so the route shares nothing with the spectral oracle's
    finite-difference dispersion.  Returns (kernel, terms, sup_norms):
    kernel-normalized (apply with 1/M), terms[0] the heat part.
    """
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    m = cenv.m
    lam = -0.5 * (2.0 * np.pi * _fourier_modes(m)) ** 2
    v = cenv.potential()
    max_rate = max(np.abs(lam).max(), np.abs(v).max(), 1.0)
    n_half = max(0, int(math.ceil(math.log2(t * max_rate / tol_scale))))
    tau = t / 2 ** n_half
    ops = _taylor_cascade_seed(lam, v, tau, n_max)
    for _ in range(n_half):
        ops = [sum(ops[i] @ ops[k - i] for i in range(k + 1))
               for k in range(n_max + 1)]
    terms = [m * op for op in ops]  # operator -> kernel semantics
    norms = np.array([np.abs(u).max() for u in terms])
    return np.sum(terms, axis=0), terms, norms


def _taylor_cascade_seed(lam, v, tau: float, n_max: int):
    """First block column of exp(tau Big) by blockwise Taylor summation.

    Big has the Fourier heat generator on the diagonal and the potential
    below it.  Requires tau * max rate <= O(1); terms are accumulated to
    machine precision.
    """
    m = lam.shape[0]
    f_eye = np.fft.fft(np.eye(m), axis=0)
    a0 = np.real(np.fft.ifft(lam[:, None] * f_eye, axis=0))
    cur = [np.eye(m)] + [np.zeros((m, m)) for _ in range(n_max)]
    out = [c.copy() for c in cur]
    for k in range(1, 200):
        nxt = []
        for i in range(n_max + 1):
            blk = a0 @ cur[i]
            if i:
                blk = blk + v[:, None] * cur[i - 1]
            nxt.append(tau / k * blk)
        cur = nxt
        top = max(np.abs(c).max() for c in cur)
        for i in range(n_max + 1):
            out[i] = out[i] + cur[i]
        if top < 1e-17:
            break
    return out


def continuum_series_check(cenv: ContinuumEnvironment, t: float,
                           order: int = 10) -> float:
    """First-order term two ways: exact Fourier divided differences vs the
    squared cascade.  Returns the max abs gap (verification helper)."""
    m = cenv.m
    lam = -0.5 * (2.0 * np.pi * _fourier_modes(m)) ** 2
    v = cenv.potential()
    f = np.fft.fft(np.eye(m), axis=0) / math.sqrt(m)
    v_hat = f @ (v[:, None] * f.conj().T)
    dl = lam[:, None] - lam[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.where(np.abs(dl) > 1e-9,
                       (np.exp(t * lam[:, None]) - np.exp(t * lam[None, :])) / dl,
                       t * np.exp(t * lam[None, :]))
    u1 = np.real(f.conj().T @ (v_hat * phi) @ f) * m
    _, terms, _ = s_series(cenv, t, n_max=1)
    return float(np.abs(terms[1] - u1).max())


# -- scaled convergence ---------------------------------------------------------


def scaled_convergence(envs: list[Environment], cenv: ContinuumEnvironment,
                       f, horizon: float, n_times: int = 6):
    """sup over a (t, x) grid of |(S(t) f)(x) - (sg_N(t) f)(x)| per N.

    The environments must be the coupled family realizing the same limit
    path as cenv (couple_to_continuum); passing unrelated environments is
    an error the caller must avoid since the statement concerns the
    coupled gap.
    """
    spect = SpectralSemigroup(cenv)
    xs_ref = np.arange(cenv.m) / cenv.m
    f_ref = np.asarray(f(xs_ref), dtype=float)
    ts = np.linspace(horizon / n_times, horizon, n_times)
    gaps = []
    for env in envs:
        n = env.n
        sc = ScalingParams(n)
        sgd = DiscreteSemigroup(env, sc)
        xs = np.arange(n) / n
        f_n = np.asarray(f(xs), dtype=float)
        worst = 0.0
        for t in ts:
            target = spect.apply(t, f_ref)
            approx = sgd.kernel(t * n * n) @ f_n
            target_on_n = np.interp(xs, xs_ref, target, period=1.0)
            worst = max(worst, float(np.abs(target_on_n - approx).max()))
        gaps.append(worst)
    return np.array(gaps)
