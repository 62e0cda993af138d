import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inhomasep import environment as envm


def test_iid_basic_and_determinism():
    env = envm.gen_iid(128, sigma=1.0, bound=1.0, seed=7)
    assert set(np.round(np.abs(env.a) * np.sqrt(128), 12)) == {1.0}
    env2 = envm.gen_iid(128, sigma=1.0, bound=1.0, seed=7)
    assert np.array_equal(env.a, env2.a)
    assert not np.array_equal(env.a, envm.gen_iid(128, seed=8).a)


def test_iid_rate_positivity_guard():
    with pytest.raises(ValueError):
        envm.gen_iid(4, sigma=1.0, bound=2.5, seed=0)  # 2.5 / 2 >= 1


def test_iid_moments_monte_carlo():
    n = 64
    samples = np.stack([envm.gen_iid(n, seed=s).a for s in range(400)])
    iota = samples * np.sqrt(n)
    mean = iota.mean()
    se = iota.std(ddof=1) / np.sqrt(iota.size)
    assert abs(mean) <= 3 * se
    # scaled partial sums: Var R(N) ~ sigma^2 / 4 (the -1/2 prefactor)
    r_end = np.array([envm.gen_iid(n, seed=s).r_prefix[-1] for s in range(400)])
    var = r_end.var(ddof=1)
    assert var == pytest.approx(0.25 * (n - 1) / n, rel=0.25)


def test_homogeneous_environment():
    env = envm.gen_homogeneous(16)
    assert np.all(env.a == 0)
    assert np.all(env.rtt == 1.0)


def test_alternating_values():
    env = envm.gen_alternating(4, 1.0)
    assert np.allclose(env.a, [-0.25, 0.25, -0.25, 0.25])
    assert np.allclose(env.r_prefix, [0.0, -0.125, 0.0, -0.125])
    assert np.abs(env.r_prefix).max() <= 4.0 ** -1.0 / 2
    assert env.partial_sum(0, 2) == 0.0


def test_alternating_seminorm_uniform_in_n():
    vals = [envm.gen_alternating(n, 1.0).holder_seminorm(1.0)
            for n in (64, 128, 256, 512, 1024)]
    assert max(vals) <= 2.0  # bounded uniformly in N at u = delta


def test_partial_sum_consistency():
    env = envm.gen_iid(64, seed=3)
    pairs = env.pair_matrix()
    for x in range(0, 64, 7):
        for xp in range(0, 64, 5):
            assert env.partial_sum(x, xp) == pytest.approx(pairs[x, xp],
                                                           abs=1e-12)
    assert env.partial_sum(5, 5) == 0.0


@given(st.integers(min_value=0, max_value=20), st.integers(min_value=0, max_value=20),
       st.integers(min_value=0, max_value=20))
@settings(max_examples=50, deadline=None)
def test_partial_sum_additivity_non_wrapping(x, y, z):
    env = envm.gen_iid(32, seed=11)
    xs = sorted((x % 32, y % 32, z % 32))
    a, b, c = xs
    assert env.partial_sum(a, c) == pytest.approx(
        env.partial_sum(a, b) + env.partial_sum(b, c), abs=1e-12)


def test_fbm_brownian_reduction_and_variance():
    # alpha = 1/2 gives independent increments of variance 1/N
    n = 1024
    env = envm.gen_fbm(n, 0.5, seed=0)
    assert env.params["n_truncated"] == 0
    samples = np.stack([envm.gen_fbm(256, 0.7, seed=s).fbm_path for s in range(300)])
    incs = np.diff(samples, axis=1)
    var = incs.var()
    assert var == pytest.approx(256.0 ** -1.4, rel=0.05)


def test_fbm_autocovariance_sign():
    # rough paths (alpha < 1/2) have negatively correlated increments
    incs = np.diff(np.stack([envm.gen_fbm(512, 0.3, seed=s).fbm_path
                             for s in range(200)]), axis=1)
    rho = (incs[:, :-1] * incs[:, 1:]).mean() / incs.var()
    assert rho < -0.1


def test_fbm_truncation_fraction_decays():
    fracs = []
    for n in (2 ** 8, 2 ** 10, 2 ** 12):
        trunc = [envm.gen_fbm(n, 0.3, seed=s).params["n_truncated"] / n
                 for s in range(20)]
        fracs.append(np.mean(trunc))
    assert fracs[0] >= fracs[-1]
    assert fracs[-1] < 0.01


def test_couple_alternating_is_zero():
    env = envm.gen_alternating(64, 0.75)
    cenv = envm.couple_to_continuum(env, 32)
    assert np.all(cenv.grid == 0.0)


def test_couple_iid_identity_at_sites():
    env = envm.gen_iid(64, seed=5)
    cenv = envm.couple_to_continuum(env, 64)
    assert np.allclose(cenv.grid[:-1], env.r_prefix)


def test_couple_fbm_gap_decays():
    sups = []
    for n in (128, 512, 2048):
        env = envm.gen_fbm(n, 0.7, seed=9)
        cenv = envm.couple_to_continuum(env, 64)
        # compare the coupled path against interpolated scaled partial sums
        xs = np.arange(65) / 64
        site_x = np.arange(n + 1) / n
        r_n = np.interp(xs, site_x, np.concatenate(
            [env.r_prefix, [env.r_prefix[-1] - 0.5 * env.a[0]]]))
        sups.append(np.abs(r_n - cenv.grid).max())
    assert sups[0] > sups[-1]
    assert sups[-1] < 0.05


def test_check_assumption():
    env = envm.gen_homogeneous(32)
    rep = envm.check_assumption(env, u=0.5, lam=1.0)
    assert rep.passed and rep.seminorm == 0.0
    env = envm.gen_iid(1024, seed=2)
    rep = envm.check_assumption(env, u=0.4, lam=10.0)
    assert rep.passed
    # fbm with exponent above the Hurst index fails for large N
    fails = sum(
        not envm.check_assumption(envm.gen_fbm(1024, 0.7, seed=s), 0.9, 2.0).passed
        for s in range(10))
    passes = sum(
        envm.check_assumption(envm.gen_fbm(1024, 0.7, seed=s), 0.6, 2.0).passed
        for s in range(10))
    assert fails >= 8
    assert passes >= 8


def test_env_csv_roundtrip_bit_exact(tmp_path):
    for env in (envm.gen_iid(32, seed=3), envm.gen_alternating(16, 0.5),
                envm.gen_fbm(64, 0.6, seed=1)):
        target = tmp_path / "env.csv"
        envm.save_env(env, target)
        back = envm.load_env(target)
        assert np.array_equal(env.a, back.a)
        assert back.kind == env.kind
        assert back.seed == env.seed


def test_custom_environment_from_array():
    env = envm.Environment(n=8, a=np.full(8, 0.1), kind="custom")
    assert np.allclose(env.rtt, 1.1)
    with pytest.raises(ValueError):
        envm.Environment(n=4, a=np.array([-1.5, 0, 0, 0]))
