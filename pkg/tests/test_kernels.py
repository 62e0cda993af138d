import math

import numpy as np
import pytest

from inhomasep import kernels as K
from inhomasep.asep import ScalingParams
from inhomasep import environment as envm


def test_hk_fullline_examples():
    assert K.hk_fullline(0.0, 0) == 1.0
    assert K.hk_fullline(0.0, 3) == 0.0
    assert K.hk_fullline(1.0, 0) == pytest.approx(0.46576, abs=5e-6)
    with pytest.raises(ValueError):
        K.hk_fullline(-1.0, 0)


def test_hk_fullline_normalization():
    t = 10.0
    half = int(10 * math.sqrt(t)) + 50
    ks = np.arange(-half, half + 1)
    assert K.hk_fullline(t, ks).sum() == pytest.approx(1.0, abs=1e-12)


def test_hk_torus_identity_and_uniformization():
    n = 16
    assert np.array_equal(K.hk_torus(0.0, n), np.eye(n))
    late = K.hk_torus(10.0 * n * n, n)
    assert np.abs(late - 1.0 / n).max() < 1e-12


def test_hk_torus_wrap_vs_expm():
    for n in (16, 64):
        for t in (0.5, 5.0, 50.0):
            gap = np.abs(K.hk_torus(t, n) - K.hk_torus_expm(t, n)).max()
            assert gap < 1e-10


def test_hk_torus_symmetries():
    ker = K.hk_torus(3.0, 12)
    assert np.abs(ker - ker.T).max() < 1e-14
    assert np.abs(ker - np.roll(np.roll(ker, 1, axis=0), 1, axis=1)).max() < 1e-14


def test_hka_oracle_reduction_and_row_sums():
    n = 32
    sc = ScalingParams(n)
    e0 = envm.gen_homogeneous(n)
    assert np.abs(K.hka_oracle(e0, 7.0) - K.hk_torus(7.0, n)).max() < 1e-10
    env = envm.gen_iid(64, seed=1)
    ker = K.hka_oracle(env, 0.1 * 64 * 64)
    assert np.abs(ker.sum(axis=1) - 1.0).max() < 1e-9
    # physical normalization equals normalized kernel run at rescaled time
    t = 11.0
    phys = K.hka_oracle(env, t, ScalingParams(64), normalized=False)
    norm = K.hka_oracle(env, 2.0 * ScalingParams(64).sqrt_rl * t)
    assert np.abs(phys - norm).max() < 1e-11


def test_hka_eigh_route_and_reversibility():
    n = 32
    env = envm.gen_iid(n, seed=3)
    t = 30.0
    a = K.hka_oracle(env, t, method="expm")
    b = K.hka_oracle(env, t, method="eigh")
    assert np.abs(a - b).max() < 1e-11
    # Bouchaud reversibility: the generator is symmetrizable, spectrum real <= 0
    g = K.walk_generator(env)
    w = env.rtt ** -0.5
    sym = (w[:, None] * g) / w[None, :]
    assert np.abs(sym - sym.T).max() < 1e-12
    lam = np.linalg.eigvalsh(sym)
    assert lam.max() < 1e-12


def test_chapman_kolmogorov():
    n = 24
    env = envm.gen_iid(n, seed=9)
    k1 = K.hka_oracle(env, 3.0)
    k2 = K.hka_oracle(env, 5.0)
    k12 = K.hka_oracle(env, 8.0)
    assert np.abs(k1 @ k2 - k12).max() < 1e-9


def test_hka_series_matches_oracle():
    n = 32
    env = envm.gen_iid(n, seed=5)
    t = 0.02 * n * n
    total, terms, norms = K.hka_series(env, t, n_max=6)
    assert np.abs(total - K.hka_oracle(env, t)).max() < 1e-5
    # geometric control of order norms
    ratios = norms[2:] / norms[1:-1]
    assert ratios.max() < 0.5
    # homogeneous environment: all correction orders vanish
    _, terms0, norms0 = K.hka_series(envm.gen_homogeneous(n), t, n_max=3)
    assert max(np.abs(u).max() for u in terms0[1:]) < 1e-14


def test_hka_series_divergence_guard():
    # a strong heterogeneity keeps the order norms in their growth regime
    # at n_max = 6, which the guard must refuse to sum
    n = 16
    rng = np.random.default_rng(0)
    env = envm.Environment(n=n, a=9.0 * rng.integers(0, 2, n).astype(float))
    with pytest.raises(ArithmeticError):
        K.hka_series(env, 40.0, n_max=6)


def test_dirichlet_closed_forms():
    assert K.dirichlet_value(1, 1.0, [0.5, 0.5]) == pytest.approx(math.pi)
    assert K.dirichlet_value(2, 1.0, [0.5, 0.5, 0.5]) == pytest.approx(2 * math.pi)
    assert K.dirichlet_value(1, 2.0, [1.0, 1.0]) == pytest.approx(2.0)
    assert K.simplex_volume(3, 2.0) == pytest.approx(8.0 / 6.0)
    with pytest.raises(ValueError):
        K.dirichlet_value(1, 1.0, [0.5, -0.5])


def test_simplex_quadrature_matches_closed_form():
    for n, v in ((1, [0.5, 0.5]), (2, [0.5, 0.5, 0.5]), (3, [0.5, 1.0, 0.7, 0.5])):
        closed = K.dirichlet_value(n, 1.3, v)
        quad = K.simplex_quadrature(n, 1.3, v,
                                    integrand=lambda s: np.ones(s.shape[0]))
        assert quad == pytest.approx(closed, rel=1e-12)


def test_simplex_quadrature_polynomial_integrand():
    # int over s0+s1=t of s0^{-1/2} s1^{-1/2} s0 = Gamma(3/2)Gamma(1/2)/Gamma(2) t
    t = 2.0
    val = K.simplex_quadrature(1, t, [0.5, 0.5], integrand=lambda s: s[:, 0])
    expected = t ** 2 * math.gamma(1.5) * math.gamma(0.5) / math.gamma(2.0) / t
    assert val == pytest.approx(expected, rel=1e-10)


def test_simplex_quadrature_monte_carlo():
    val = K.simplex_quadrature(5, 1.0, [0.5] * 6,
                               integrand=lambda s: s[:, 0] + s[:, 3],
                               scheme="mc", n_samples=200000, seed=1)
    # symmetry: E[s0 + s3] = 2 t / 6 under Dirichlet(1/2,...)
    expected = K.dirichlet_value(5, 1.0, [0.5] * 6) * (2.0 / 6.0)
    assert val == pytest.approx(expected, rel=0.02)


def test_simplex_quadrature_validation():
    with pytest.raises(ValueError):
        K.simplex_quadrature(4, 1.0, [0.5] * 5, integrand=lambda s: 1.0,
                             scheme="gauss")
    with pytest.raises(ValueError):
        K.simplex_quadrature(1, 1.0, [0.5, 0.0], integrand=lambda s: 1.0)


def test_certify_kernel_bounds_shapes_and_homogeneous():
    env = envm.gen_homogeneous(32)
    reports = K.certify_kernel_bounds(env, horizon=0.5, n_times=6)
    assert len(reports) == 11
    ids = {r.bound_id for r in reports}
    assert ids == set(K.BOUND_IDS)
    by_id = {r.bound_id: r.measured_lambda for r in reports}
    # perturbation part vanishes identically for a == 0
    for bid in ("h_pert_sup", "i_pert_sum", "j_pert_grad_sum", "k_pert_grad_sup"):
        assert by_id[bid] < 1e-9
    assert by_id["a_sup"] > 0.5


def test_certify_kernel_bounds_stable_in_n():
    vals = {}
    for n in (32, 64, 128):
        env = envm.gen_iid(n, seed=6)
        reports = K.certify_kernel_bounds(env, u=0.75, v=0.3, horizon=0.3,
                                          n_times=6)
        vals[n] = {r.bound_id: r.measured_lambda for r in reports}
    for bid in K.BOUND_IDS:
        seq = [vals[n][bid] for n in (32, 64, 128)]
        assert max(seq) < 30.0
        # stability: no blow-up along the ladder
        assert seq[-1] < 4.0 * seq[0] + 1.0
