"""Bond inhomogeneities and their partial-sum fields.

An environment is a quenched family of bond rates rtt(x) = 1 + a(x) on the
discrete torus.  Everything downstream (walk kernels, the PAM generator,
the scaled convergence experiments) consumes either the increments a(x) or
the partial sums

    R(x, x') = -1/2 * sum_{y in (x, x']} a(y),     R(x) := R(0, x),

so both are precomputed here.  The continuum side carries the coupled
limit path on a grid of [0, 1].
"""

from __future__ import annotations

import ast
import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import torus


@dataclass(frozen=True)
class Environment:
    """Quenched bond rates on an N-site torus."""

    n: int
    a: np.ndarray              # site increments, rtt - 1
    kind: str = "custom"
    params: dict = field(default_factory=dict)
    seed: int | None = None
    fbm_path: np.ndarray | None = None  # underlying Gaussian path, fbm only

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if a.shape != (self.n,):
            raise ValueError("increment array must have shape (n,)")
        if np.any(1.0 + a <= 0.0):
            raise ValueError("rates 1 + a(x) must stay positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "_prefix", _half_prefix(a))

    @property
    def rtt(self) -> np.ndarray:
        return 1.0 + self.a

    @property
    def r_prefix(self) -> np.ndarray:
        """R(x) = R(0, x) for x = 0..n-1."""
        return self._prefix

    def partial_sum(self, x, xp):
        """R(x, x') from the prefix array, O(1) per pair."""
        x = np.asarray(x)
        xp = np.asarray(xp)
        total = -0.5 * self.a.sum()
        return self._prefix[xp] - self._prefix[x] + total * (xp < x)

    def pair_matrix(self) -> np.ndarray:
        """Full matrix R(x, x') over all ordered pairs."""
        return torus.interval_pair_sums(-0.5 * self.a)

    def holder_seminorm(self, u: float) -> float:
        return torus.holder_seminorm(-0.5 * self.a, u)


def _half_prefix(a: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    p = np.empty(n)
    p[0] = 0.0
    np.cumsum(-0.5 * a[1:], out=p[1:])
    return p


def _rng(seed, kind: str) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(hash(kind) & 0x7FFFFFFF,))
    return np.random.Generator(np.random.Philox(ss))


def gen_iid(n: int, sigma: float = 1.0, bound: float = 1.0, seed: int = 0,
            dist: str = "rademacher") -> Environment:
    """i.i.d. increments a(x) = N^{-1/2} iota(x), mean zero, |iota| <= bound.

    dist "rademacher" draws iota = +-sigma; "uniform" draws iota uniform on
    [-sqrt(3) sigma, sqrt(3) sigma].  Either way Var(iota) = sigma^2.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if dist == "rademacher":
        amp = sigma
    elif dist == "uniform":
        amp = np.sqrt(3.0) * sigma
    else:
        raise ValueError(f"unknown iid distribution {dist!r}")
    if amp > bound:
        raise ValueError("requested sigma exceeds the bound on |iota|")
    if bound / np.sqrt(n) >= 1.0:
        raise ValueError("bound * n^(-1/2) must be < 1 to keep rates positive")
    rng = _rng(seed, "iid")
    if dist == "rademacher":
        iota = sigma * (2.0 * rng.integers(0, 2, size=n) - 1.0)
    else:
        iota = rng.uniform(-amp, amp, size=n)
    return Environment(n=n, a=iota / np.sqrt(n), kind="iid",
                       params={"sigma": sigma, "bound": bound, "dist": dist},
                       seed=seed)


def fractional_gaussian_noise(n: int, hurst: float, rng: np.random.Generator,
                              spacing: float) -> np.ndarray:
    """Exact fGn sample of length n via circulant embedding (Davies-Harte).

    Increment variance is spacing^(2*hurst).  The embedding eigenvalues are
    nonnegative for fGn; tiny negative values from roundoff are clipped.
    """
    if not 0.0 < hurst < 1.0:
        raise ValueError("hurst must lie in (0, 1)")
    k = np.arange(n + 1, dtype=float)
    gamma = 0.5 * ((k + 1) ** (2 * hurst) - 2 * k ** (2 * hurst)
                   + np.abs(k - 1) ** (2 * hurst))
    c = np.concatenate([gamma[:n], gamma[n:n + 1], gamma[n - 1:0:-1]])
    lam = np.fft.fft(c).real
    if lam.min() < -1e-10 * lam.max():
        raise ValueError("circulant embedding produced negative eigenvalues")
    lam = np.clip(lam, 0.0, None)
    m = 2 * n
    z = np.empty(m, dtype=complex)
    z[0] = rng.standard_normal() * np.sqrt(m)
    z[n] = rng.standard_normal() * np.sqrt(m)
    v = rng.standard_normal((n - 1, 2))
    z[1:n] = np.sqrt(m / 2.0) * (v[:, 0] + 1j * v[:, 1])
    z[n + 1:] = np.conj(z[1:n][::-1])
    fgn = np.fft.ifft(np.sqrt(lam) * z).real[:n]
    return fgn * spacing ** hurst


def gen_fbm(n: int, hurst: float, seed: int = 0) -> Environment:
    """fBM increment environment: a(x) = [B((x+1)/N) - B(x/N)] 1{|.| < 1/2}.

    The untruncated path B is kept on the environment for coupling to the
    continuum limit -B/2.  Truncation events are recorded in params; no
    re-centering is applied after truncation.
    """
    rng = _rng(seed, "fbm")
    a_hat = fractional_gaussian_noise(n, hurst, rng, spacing=1.0 / n)
    keep = np.abs(a_hat) < 0.5
    a = np.where(keep, a_hat, 0.0)
    path = np.concatenate(([0.0], np.cumsum(a_hat)))
    return Environment(n=n, a=a, kind="fbm",
                       params={"hurst": hurst,
                               "n_truncated": int((~keep).sum())},
                       seed=seed, fbm_path=path)


def gen_alternating(n: int, delta: float) -> Environment:
    """Deterministic alternating increments of size N^{-delta}.

    Sign convention fixes R(x) in {0, -N^{-delta}/2}: even sites carry
    -N^{-delta} and odd sites +N^{-delta}.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if n % 2:
        raise ValueError("alternating environment needs even n")
    a = float(n) ** (-delta) * np.where(np.arange(n) % 2 == 0, -1.0, 1.0)
    return Environment(n=n, a=a, kind="alternating", params={"delta": delta})


def gen_homogeneous(n: int) -> Environment:
    return Environment(n=n, a=np.zeros(n), kind="homogeneous")


@dataclass(frozen=True)
class ContinuumEnvironment:
    """Limit path of the scaled partial sums on a grid of [0, 1].

    grid holds M+1 values of the path at j/M, j = 0..M.  The path need not
    close up: the value at 1 may differ from the value at 0, and the seam
    increment is never used (derivative measures exclude the jump at 0).
    """

    m: int
    grid: np.ndarray
    holder_exponent: float
    provenance: str = "standalone"

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        if g.shape != (self.m + 1,):
            raise ValueError("grid must hold m + 1 values")
        object.__setattr__(self, "grid", g)

    @property
    def increments(self) -> np.ndarray:
        """Cell increments of the path; the seam jump at 0 is excluded."""
        return np.diff(self.grid)

    def potential(self) -> np.ndarray:
        """Centered increment quotient, the grid stand-in for the derivative."""
        d = self.increments
        return self.m * 0.5 * (d + np.roll(d, 1))

    def holder_norm(self) -> float:
        """Measured sup + Hoelder seminorm of the grid path (seam excluded)."""
        g = self.grid
        sup = float(np.abs(g).max())
        return sup + torus.holder_seminorm(np.concatenate(([0.0], np.diff(g))),
                                           self.holder_exponent)


def couple_to_continuum(env: Environment, m: int) -> ContinuumEnvironment:
    """Realize the environment's coupled continuum path on an m-grid.

    iid: linear interpolation of the scaled partial sums themselves (the
    identity coupling at finite N).  fbm: -B/2 from the same Gaussian path
    that generated the increments.  alternating/homogeneous: the zero path.
    """
    xs = np.arange(m + 1) / m
    if env.kind in ("alternating", "homogeneous"):
        grid = np.zeros(m + 1)
        u = env.params.get("delta", 1.0) if env.kind == "alternating" else 1.0
        return ContinuumEnvironment(m=m, grid=grid, holder_exponent=min(u, 1.0),
                                    provenance="coupled")
    if env.kind == "fbm":
        if env.fbm_path is None:
            raise ValueError("fbm environment lacks its underlying path; "
                             "regenerate with gen_fbm")
        site_x = np.arange(env.n + 1) / env.n
        grid = np.interp(xs, site_x, -0.5 * env.fbm_path)
        u = env.params["hurst"]
        return ContinuumEnvironment(m=m, grid=grid,
                                    holder_exponent=max(min(u - 0.05, 1.0), 0.01),
                                    provenance="coupled")
    if env.kind in ("iid", "custom"):
        if m > env.n:
            warnings.warn("continuum grid finer than the environment; "
                          "interpolating the partial sums")
        site_x = np.arange(env.n + 1) / env.n
        # R at site n means the full-circle sum, i.e. R(n-1) - a(0)/2
        r_ext = np.concatenate([env.r_prefix,
                                [env.r_prefix[-1] - 0.5 * env.a[0]]])
        grid = np.interp(xs, site_x, r_ext)
        return ContinuumEnvironment(m=m, grid=grid, holder_exponent=0.45,
                                    provenance="coupled")
    raise ValueError(f"unknown environment kind {env.kind!r}")


def smooth_continuum(m: int, amplitude: float = 0.05, mode: int = 1,
                     holder_exponent: float = 1.0) -> ContinuumEnvironment:
    """Standalone smooth path amplitude * sin(2 pi mode x), for benchmarks."""
    xs = np.arange(m + 1) / m
    return ContinuumEnvironment(m=m, grid=amplitude * np.sin(2 * np.pi * mode * xs),
                                holder_exponent=holder_exponent,
                                provenance="standalone")


@dataclass(frozen=True)
class AssumptionReport:
    bounded: bool
    rate_bound: float
    seminorm: float
    threshold: float
    passed: bool


def check_assumption(env: Environment, u: float, lam: float) -> AssumptionReport:
    """Measure the rate bound and the u-Hoelder seminorm of the partial sums."""
    rtt = env.rtt
    rate_bound = float(max(rtt.max(), 1.0 / rtt.min()))
    bounded = np.isfinite(rate_bound)
    seminorm = env.holder_seminorm(u)
    return AssumptionReport(bounded=bounded, rate_bound=rate_bound,
                            seminorm=seminorm, threshold=lam,
                            passed=bool(bounded and seminorm <= lam))


# -- serialization ----------------------------------------------------------

def env_to_csv(env: Environment) -> str:
    """Flat text format: one header line, then site,a,rtt,R rows.

    Floats are written with 17 significant digits so the round trip is
    bit exact.
    """
    buf = io.StringIO()
    par = ";".join(f"{k}={v!r}" for k, v in sorted(env.params.items()))
    buf.write(f"# kind={env.kind} seed={env.seed} params={par}\n")
    buf.write("site,a,rtt,R\n")
    rp = env.r_prefix
    for x in range(env.n):
        buf.write(f"{x},{env.a[x]:.17g},{env.rtt[x]:.17g},{rp[x]:.17g}\n")
    return buf.getvalue()


def env_from_csv(text: str) -> Environment:
    lines = text.strip().splitlines()
    header = lines[0]
    if not header.startswith("# kind="):
        raise ValueError("missing environment header line")
    kind = header.split("kind=", 1)[1].split(" seed=", 1)[0]
    seed_s = header.split(" seed=", 1)[1].split(" params=", 1)[0]
    seed = None if seed_s == "None" else int(seed_s)
    raw = header.split(" params=", 1)[1]
    params = {}
    if raw:
        for item in raw.split(";"):
            k, v = item.split("=", 1)
            params[k] = ast.literal_eval(v)
    rows = [ln.split(",") for ln in lines[2:]]
    a = np.array([float(r[1]) for r in rows])
    return Environment(n=len(rows), a=a, kind=kind, params=params, seed=seed)


def save_env(env: Environment, path) -> None:
    with open(path, "w") as fh:
        fh.write(env_to_csv(env))


def load_env(path) -> Environment:
    with open(path) as fh:
        return env_from_csv(fh.read())
