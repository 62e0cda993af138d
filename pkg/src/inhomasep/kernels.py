"""Random-walk transition kernels on the torus and their perturbation series.

Kernel matrices are indexed [start, end]: row x holds the distribution of
the walk started at x, so transition kernels are row stochastic and solve
the backward equation d/dt K = prefactor * rtt(x) Lap_x K.

Two rate normalizations are exposed: "normalized" uses prefactor 1/2 (the
time change that absorbs sqrt(r ell)); the physical one uses sqrt(r ell)
and is what the PAM semigroup module consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, special

from . import torus
from .asep import ScalingParams
from .environment import Environment


def hk_fullline(t: float, k) -> np.ndarray:
    """Continuous-time simple random walk kernel on Z, total jump rate 1.

    P[X(t) = k | X(0) = 0] = e^{-t} I_k(t); evaluated via the scaled
    Bessel function, which is stable uniformly in t.
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    k = np.asarray(k)
    if t == 0.0:
        return (k == 0).astype(float)
    return special.ive(np.abs(k), t)


def wrap_terms(t: float, n: int) -> int:
    return int(math.ceil(10.0 * math.sqrt(max(t, 1.0)) / n)) + 2


def hk_profile(t: float, n: int) -> np.ndarray:
    """Wrapped kernel as a displacement profile p(d), d = 0..n-1."""
    m = wrap_terms(t, n)
    d = np.arange(n)
    shifts = d[None, :] + n * np.arange(-m, m + 1)[:, None]
    return hk_fullline(t, shifts).sum(axis=0)


def hk_torus(t: float, n: int) -> np.ndarray:
    """Heat kernel of (1/2) Lap on the n-torus via full-line wrapping."""
    prof = hk_profile(t, n)
    idx = (np.arange(n)[None, :] - np.arange(n)[:, None]) % n
    return prof[idx]


def laplacian(n: int) -> np.ndarray:
    lap = -2.0 * np.eye(n)
    idx = np.arange(n)
    lap[idx, (idx + 1) % n] = 1.0
    lap[idx, (idx - 1) % n] = 1.0
    return lap


def hk_torus_expm(t: float, n: int) -> np.ndarray:
    """Independent route for hk_torus: matrix exponential of (1/2) Lap."""
    return linalg.expm(0.5 * t * laplacian(n))


def walk_generator(env: Environment, scaling: ScalingParams | None = None,
                   normalized: bool = True) -> np.ndarray:
    """Generator of the site-rate walk: prefactor * diag(rtt) Lap."""
    pref = 0.5 if normalized else (scaling or ScalingParams(env.n)).sqrt_rl
    return pref * env.rtt[:, None] * laplacian(env.n)


def hka_oracle(env: Environment, t: float, scaling: ScalingParams | None = None,
               normalized: bool = True, method: str = "expm") -> np.ndarray:
    """Transition kernel of the inhomogeneous walk, exp(t G).

    method "expm" uses scaling-and-squaring; "eigh" goes through the
    symmetrized form diag(w) G diag(1/w) with w = rtt^{-1/2}, which is
    preferable for very large t.
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    g = walk_generator(env, scaling, normalized)
    if method == "expm":
        return linalg.expm(t * g)
    if method == "eigh":
        w = env.rtt ** -0.5
        sym = (w[:, None] * g) / w[None, :]
        lam, q = linalg.eigh(sym)
        core = (q * np.exp(t * lam)) @ q.T
        return (core / w[:, None]) * w[None, :]
    raise ValueError(f"unknown method {method!r}")


def hka_series(env: Environment, t: float, n_max: int,
               scaling: ScalingParams | None = None, normalized: bool = True):
    """Per-order terms of the perturbation expansion of the walk kernel.

    Orders solve the cascade d/dt U_n = pref Lap U_n + pref diag(a) Lap
    U_{n-1} with U_0 the homogeneous kernel, all orders extracted exactly
    from one block matrix exponential.  Returns (total, terms, sup_norms)
    where terms[0] is the homogeneous kernel and terms[n] the order-n
    correction; a divergence guard raises if the order norms grow for two
    consecutive orders.
    """
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    pref = 0.5 if normalized else (scaling or ScalingParams(env.n)).sqrt_rl
    a0 = pref * laplacian(env.n)
    b = pref * env.a[:, None] * laplacian(env.n)
    terms = _picard_cascade(a0, b, t, n_max)
    norms = np.array([np.abs(u).max() for u in terms])
    grew = norms[2:] > norms[1:-1]
    if grew.size >= 2 and grew[-1] and grew[-2]:
        raise ArithmeticError(
            f"series order norms grow ({norms[-3:]}); expansion diverges")
    total = np.sum(terms, axis=0)
    return total, terms, norms


def _picard_cascade(a0: np.ndarray, b: np.ndarray, t: float, n_max: int):
    """Exact order-by-order Duhamel terms via one block matrix exponential.

    big = [[a0, 0, ...], [b, a0, 0, ...], ...]; the first block column of
    exp(t big) stacks U_0 .. U_{n_max}.
    """
    n = a0.shape[0]
    k = n_max + 1
    big = np.zeros((k * n, k * n))
    for i in range(k):
        big[i * n:(i + 1) * n, i * n:(i + 1) * n] = a0
        if i:
            big[i * n:(i + 1) * n, (i - 1) * n:i * n] = b
    col = linalg.expm(t * big)[:, :n]
    return [col[i * n:(i + 1) * n, :] for i in range(k)]


# -- time-simplex quadrature -----------------------------------------------


def dirichlet_value(n: int, t: float, v) -> float:
    """Closed form of the pure-power simplex integral.

    integral over {s_0 + .. + s_n = t, s_i > 0} of prod s_i^{v_i - 1}
    equals t^{sum v - 1} prod Gamma(v_i) / Gamma(sum v).
    """
    v = np.asarray(v, dtype=float)
    if v.size != n + 1:
        raise ValueError("need n + 1 exponents")
    if np.any(v <= 0):
        raise ValueError("exponents must be positive")
    s = v.sum()
    return float(t ** (s - 1.0) * np.exp(np.sum(special.gammaln(v))
                                         - special.gammaln(s)))


def simplex_volume(n: int, t: float) -> float:
    return t ** n / math.gamma(n + 1)


def _jacobi_rule(alpha: float, beta: float, order: int):
    """Nodes/weights for int_0^1 (1-x)^alpha x^beta f(x) dx."""
    xs, ws = special.roots_jacobi(order, alpha, beta)
    return 0.5 * (xs + 1.0), ws * 0.5 ** (alpha + beta + 1.0)


def simplex_nodes_gauss(n: int, t: float, v, order: int = 12):
    """Tensor Gauss-Jacobi nodes for prod s_i^{v_i-1} weighted integration.

    Uses the stick-breaking map s_i = t x_i prod_{j<i}(1 - x_j); the
    endpoint powers are absorbed into Jacobi weights so singular exponents
    cost nothing.  Returns (nodes, weights) with nodes of shape
    (order^n, n+1); weights sum to the Dirichlet closed form.
    """
    v = np.asarray(v, dtype=float)
    rules = []
    for i in range(n):
        alpha = v[i + 1:].sum() - 1.0
        beta = v[i] - 1.0
        rules.append(_jacobi_rule(alpha, beta, order))
    grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wgrids = np.meshgrid(*[r[1] for r in rules], indexing="ij")
    xs = np.stack([g.ravel() for g in grids], axis=1) if n else np.empty((1, 0))
    ws = np.ones(xs.shape[0])
    for g in wgrids:
        ws = ws * g.ravel()
    nodes = np.empty((xs.shape[0], n + 1))
    remaining = np.full(xs.shape[0], t)
    for i in range(n):
        nodes[:, i] = remaining * xs[:, i]
        remaining = remaining * (1.0 - xs[:, i])
    nodes[:, n] = remaining
    ws = ws * t ** (v.sum() - 1.0)
    return nodes, ws


def simplex_quadrature(n: int, t: float, v, integrand=None,
                       scheme: str = "gauss", order: int = 12,
                       n_samples: int = 20000, seed: int = 0) -> float:
    """Integrate g over the time simplex against the weight prod s_i^{v_i-1}.

    integrand g receives an (m, n+1) array of simplex points and returns m
    values; g = None means g identically 1 (the Dirichlet closed form).
    scheme "gauss" (tensor Gauss-Jacobi, exact for smooth g, n <= 3) or
    "mc" (importance sampling from the Dirichlet distribution, any n).
    """
    v = np.asarray(v, dtype=float)
    if v.size != n + 1:
        raise ValueError("need n + 1 exponents")
    if np.any(v <= 0):
        raise ValueError("exponents must be positive")
    if integrand is None:
        return dirichlet_value(n, t, v)
    if scheme == "gauss":
        if n > 3:
            raise ValueError("tensor rule limited to n <= 3; use scheme='mc'")
        nodes, ws = simplex_nodes_gauss(n, t, v, order)
        return float(ws @ np.asarray(integrand(nodes), dtype=float))
    if scheme == "mc":
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
        w = rng.dirichlet(v, size=n_samples)
        vals = np.asarray(integrand(t * w), dtype=float)
        return dirichlet_value(n, t, v) * float(vals.mean())
    raise ValueError(f"unknown scheme {scheme!r}")


# -- bound certification ------------------------------------------------------


BOUND_IDS = ("a_sup", "b_grad_sup", "c_grad_sum", "d_dist_sup", "e_dist_sum",
             "f_grad_x_dist", "g_grad_xt_dist", "h_pert_sup", "i_pert_sum",
             "j_pert_grad_sum", "k_pert_grad_sup")


@dataclass(frozen=True)
class BoundReport:
    bound_id: str
    n: int
    measured_lambda: float


def certify_kernel_bounds(env: Environment, u: float = 0.75, v: float = 0.3,
                          horizon: float = 1.0, n_times: int = 10,
                          x_offsets=(1, 2, 4), normalized: bool = True,
                          scaling: ScalingParams | None = None):
    """Measure the smallest Lambda making each kernel bound hold on a grid.

    For each of the eleven bound shapes (sup decay, spatial Hoelder sup and
    sum, distance-weighted sup and sum, the two gradient-weighted sums, and
    the four smallness bounds on the perturbation part) the report records
    max over the (t, x, x') grid of  lhs / shape(t, dist).  Times run over
    a log-spaced grid in (0, N^2 * horizon].
    """
    n = env.n
    ts = np.exp(np.linspace(math.log(0.5), math.log(horizon * n * n), n_times))
    dist = torus.dist_torus(np.arange(n)[:, None], np.arange(n)[None, :], n)
    lam = {bid: 0.0 for bid in BOUND_IDS}
    for t in ts:
        hka = hka_oracle(env, t, scaling, normalized)
        hk = hk_torus(t if normalized else
                      2.0 * (scaling or ScalingParams(n)).sqrt_rl * t, n)
        pert = hka - hk
        tp = t + 1.0
        lam["a_sup"] = max(lam["a_sup"], np.abs(hka).max() * math.sqrt(tp))
        lam["d_dist_sup"] = max(lam["d_dist_sup"],
                                (hka * dist ** v).max() * tp ** ((1 - v) / 2))
        lam["e_dist_sum"] = max(lam["e_dist_sum"],
                                (hka * dist ** v).sum(axis=1).max() / tp ** (v / 2))
        gx = np.roll(hka, -1, axis=0) - hka       # forward gradient in start
        gxt = np.roll(hka, -1, axis=1) - hka      # forward gradient in end
        wgt = (dist / n) ** v
        lam["f_grad_x_dist"] = max(lam["f_grad_x_dist"],
                                   (np.abs(gx) * wgt).sum(axis=1).max())
        lam["g_grad_xt_dist"] = max(lam["g_grad_xt_dist"],
                                    (np.abs(gxt) * wgt).sum(axis=1).max())
        lam["h_pert_sup"] = max(lam["h_pert_sup"],
                                np.abs(pert).max() * math.sqrt(tp) * n ** v)
        lam["i_pert_sum"] = max(lam["i_pert_sum"],
                                np.abs(pert).sum(axis=1).max() * n ** v)
        for dx in x_offsets:
            dh = hka - np.roll(hka, -dx, axis=0)
            dp = pert - np.roll(pert, -dx, axis=0)
            du = float(torus.dist_torus(0, dx, n)) ** u
            lam["b_grad_sup"] = max(lam["b_grad_sup"],
                                    np.abs(dh).max() * tp ** ((1 + u) / 2) / du)
            lam["c_grad_sum"] = max(lam["c_grad_sum"],
                                    np.abs(dh).sum(axis=1).max() * tp ** (u / 2) / du)
            lam["j_pert_grad_sum"] = max(lam["j_pert_grad_sum"],
                                         np.abs(dp).sum(axis=1).max()
                                         * tp ** (u / 2) * n ** v / du)
            lam["k_pert_grad_sup"] = max(lam["k_pert_grad_sup"],
                                         np.abs(dp).max()
                                         * tp ** ((u + 1) / 2) * n ** v / du)
    return [BoundReport(bid, n, float(lam[bid])) for bid in BOUND_IDS]
