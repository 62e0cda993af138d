"""Geometry on the discrete torus Z/NZ and the continuum torus [0,1).

Conventions used everywhere in this package:

* sites are integers in [0, N); arithmetic is mod N,
* the half-open interval (x, x'] runs counterclockwise (increasing site
  index) from x to x' and has cardinality (x' - x) mod N,
* the geodesic distance is the shorter of the two arc cardinalities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def interval_cardinality(x, xp, n: int):
    """Number of sites in the counterclockwise interval (x, x']."""
    return (np.asarray(xp) - np.asarray(x)) % n


def dist_torus(x, y, n: int):
    """Geodesic distance min(|(x,y]|, |(y,x]|); symmetric, at most N/2."""
    d = (np.asarray(y) - np.asarray(x)) % n
    return np.minimum(d, n - d)


def midpoint_partition(y1: int, y2: int, n: int):
    """Split the torus into the sites nearer y1 and the sites nearer y2.

    Returns (parti1, parti2, m1, m2) where parti1/parti2 are sorted site
    arrays and m1, m2 are the arc boundaries with parti1 = [m1, m2) and
    parti2 = [m2, m1) counterclockwise.  Membership rule:

        parti1 = {x : dist(x, y1) <= dist(x, y2) and dist(x, y1) <= N/2}
        parti2 = complement

    Ties go to parti1.  For y1 == y2 the rule degenerates to parti1 being
    the whole torus; we then return m1 == m2 == antipode(y1) + 1 and an
    empty parti2.
    """
    if n <= 0:
        raise ValueError("torus size must be positive")
    x = np.arange(n)
    d1 = dist_torus(x, y1, n)
    d2 = dist_torus(x, y2, n)
    in1 = d1 <= np.minimum(d2, n / 2)
    parti1 = x[in1]
    parti2 = x[~in1]
    if parti2.size == 0:
        m = (y1 + n // 2 + 1) % n
        return parti1, parti2, m, m
    # boundary of the arc: the unique site of parti1 whose predecessor is not
    starts1 = parti1[~in1[(parti1 - 1) % n]]
    starts2 = parti2[in1[(parti2 - 1) % n]]
    if starts1.size != 1 or starts2.size != 1:
        raise AssertionError("partition is not a pair of arcs")
    m1 = int(starts1[0])
    m2 = int(starts2[0])
    return parti1, parti2, m1, m2


def interval_pair_sums(increments: np.ndarray) -> np.ndarray:
    """Matrix S[x, x'] = sum of increments over sites in (x, x'].

    S[x, x] = 0 (empty interval); wrapping intervals pick up the increment
    at site 0 like any other site.
    """
    inc = np.asarray(increments, dtype=float)
    n = inc.shape[0]
    if n == 0:
        raise ValueError("empty torus")
    c = np.concatenate(([0.0], np.cumsum(inc[1:])))  # c[x] = sum over (0, x]
    total = inc.sum()
    s = c[None, :] - c[:, None]
    s += total * (np.arange(n)[None, :] < np.arange(n)[:, None])
    return s


def holder_seminorm(increments: np.ndarray, u: float, pairs: np.ndarray | None = None) -> float:
    """Discrete Hoelder seminorm of the interval function built from increments.

    The value is the exact supremum over all N^2 ordered intervals of
    |f(x, x')| / (|(x,x']| / N)^u, where f(x, x') is the interval sum of the
    given site increments.  A precomputed pair matrix may be passed to skip
    rebuilding it.
    """
    if not 0.0 < u <= 1.0:
        raise ValueError("exponent u must lie in (0, 1]")
    inc = np.asarray(increments, dtype=float)
    n = inc.shape[0]
    if n == 0:
        raise ValueError("empty torus")
    s = interval_pair_sums(inc) if pairs is None else pairs
    card = (np.arange(n)[None, :] - np.arange(n)[:, None]) % n
    mask = card > 0
    ratios = np.abs(s[mask]) / (card[mask] / n) ** u
    return float(ratios.max(initial=0.0))


@dataclass(frozen=True)
class HolderSeminorm:
    """A measured seminorm value together with its exponent."""

    exponent: float
    value: float

    def __post_init__(self):
        if not 0.0 < self.exponent <= 1.0:
            raise ValueError("exponent must lie in (0, 1]")
        if self.value < 0.0:
            raise ValueError("seminorm value must be nonnegative")


def dist_cont(x, y):
    """Geodesic distance on the continuum torus [0, 1)."""
    d = (np.asarray(y) - np.asarray(x)) % 1.0
    return np.minimum(d, 1.0 - d)
