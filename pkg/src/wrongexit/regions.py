"""Exit-region geometry for the three stopping rules.

A problem instance fixes a family of disjoint open cones-after-dilation
``b * W^A`` indexed by subsets A of [d], plus one reference region.  Three
rules are supported:

* ``SiegmundRule(ell, u)``: stop once every coordinate of the walk lies
  outside (-b ell, b u); the exit set A collects the coordinates above b u.
  Reference region: A empty (all coordinates below).
* ``GapRule(m)``: stop once the m-th largest coordinate exceeds the
  (m+1)-th largest by more than b; A is the set of top-m coordinates.
  Reference region: A = {1, ..., m}.
* ``SumIntersectionRule(L)``: stop once the sum of the L smallest absolute
  coordinates exceeds b; the exit is rare when at least L coordinates are
  positive, with A the positive set.

Each rule also evaluates the support value

    inf_{x in closure(W^A)} theta . x

in closed form, which is -inf unless theta satisfies the sign pattern of A
(and, for the gap rule, sums to zero).  These closed forms are what turns
the rate computations of the solvers into finite-dimensional programs.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Optional, Tuple

import numpy as np

__all__ = [
    "Region",
    "ExitOutcome",
    "SiegmundRule",
    "GapRule",
    "SumIntersectionRule",
    "ProblemKind",
    "rearrangement_min",
]

SIGN_TOL = 1e-12  # |theta_k| below this satisfies either sign constraint
ZERO_SUM_TOL = 1e-9


@dataclass(frozen=True)
class Region:
    """Exit-region label: the reference region or a rare region Rare(A)."""

    rare: bool
    members: Tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(sorted(self.members)))

    @property
    def key(self) -> str:
        return "A=" + ",".join(map(str, self.members)) if self.rare else "reference"

    def __repr__(self):
        return f"Rare({set(self.members) or '{}'})" if self.rare else "Reference"


REFERENCE = Region(rare=False)


@dataclass
class ExitOutcome:
    """Terminal record of one simulated path.

    ``region`` is None exactly when the path was truncated at the step cap
    before stopping; truncation is data, not an error.
    """

    region: Optional[Region]
    steps: int
    terminal_state: np.ndarray
    truncated: bool = False

    @property
    def wrong(self) -> bool:
        return self.region is not None and self.region.rare


def rearrangement_min(theta, L: int) -> float:
    """min over 1 <= l <= L of (1/l) * sum of the (d - L + l) smallest |theta|.

    Equivalently, with |theta|_(1) >= ... >= |theta|_(d) the decreasing
    rearrangement, the minimum over l of (1/l) sum_{i=L-l+1}^{d} |theta|_(i).
    This is the exact value of the linear program

        min theta . x   s.t.  x >= 0,  sum_{k in B} x_k >= 1 for all |B| = L,

    for theta with nonnegative entries.
    """
    a = np.abs(np.asarray(theta, dtype=float))
    d = a.size
    if not 1 <= L <= d:
        raise ValueError(f"L={L} outside [1, {d}]")
    a = np.sort(a)[::-1]
    tail = a[L:].sum()
    best = math.inf
    running = tail
    for ell in range(1, L + 1):
        running += a[L - ell]
        best = min(best, running / ell)
    return float(best)


class SiegmundRule:
    """Two-sided exit rule with lower barrier -b ell and upper barrier b u."""

    kind = "siegmund"

    def __init__(self, ell: float, u: float):
        if ell <= 0 or u <= 0:
            raise ValueError("ell and u must be positive")
        self.ell = float(ell)
        self.u = float(u)

    def classify(self, x, b: float) -> Optional[Region]:
        x = np.asarray(x, dtype=float)
        above = x > b * self.u
        below = x < -b * self.ell
        if not np.all(above | below):
            return None
        if not above.any():
            return REFERENCE
        return Region(rare=True, members=tuple(np.flatnonzero(above)))

    def first_hit(self, states: np.ndarray, b: float):
        """First stopped row in a (n, d) block of states, or (-1, None)."""
        above = states > b * self.u
        stopped = (above | (states < -b * self.ell)).all(axis=1)
        i = int(stopped.argmax())
        if not stopped[i]:
            return -1, None
        row = above[i]
        if not row.any():
            return i, REFERENCE
        return i, Region(rare=True, members=tuple(np.flatnonzero(row)))

    def support_value(self, theta, region: Region) -> float:
        if not region.rare:
            raise ValueError("support value is defined for rare regions")
        theta = np.asarray(theta, dtype=float)
        in_A = np.zeros(theta.size, dtype=bool)
        in_A[list(region.members)] = True
        if np.any(theta[in_A] < -SIGN_TOL) or np.any(theta[~in_A] > SIGN_TOL):
            return -math.inf
        return float(self.u * theta[in_A].sum() - self.ell * theta[~in_A].sum())

    def __repr__(self):
        return f"SiegmundRule(ell={self.ell}, u={self.u})"


class GapRule:
    """Stop when the top m coordinates exceed all others by more than b."""

    kind = "gap"

    def __init__(self, m: int):
        if m < 1:
            raise ValueError("m must be at least 1")
        self.m = int(m)

    def reference_region(self) -> Region:
        return Region(rare=False, members=tuple(range(self.m)))

    def classify(self, x, b: float) -> Optional[Region]:
        x = np.asarray(x, dtype=float)
        d = x.size
        if not 1 <= self.m <= d - 1:
            raise ValueError("m must satisfy 1 <= m <= d-1")
        part = np.partition(x, (d - self.m - 1, d - self.m))
        gap = part[d - self.m] - part[d - self.m - 1]
        if gap <= b:
            return None
        # ties in selecting the top-m set are broken by lowest index; a tie
        # exactly at gap == b does not stop (regions are open)
        order = np.argsort(-x, kind="stable")
        top = np.sort(order[: self.m])
        if np.array_equal(top, np.arange(self.m)):
            return self.reference_region()
        return Region(rare=True, members=tuple(top))

    def first_hit(self, states: np.ndarray, b: float):
        d = states.shape[1]
        part = np.partition(states, (d - self.m - 1, d - self.m), axis=1)
        stopped = part[:, d - self.m] - part[:, d - self.m - 1] > b
        i = int(stopped.argmax())
        if not stopped[i]:
            return -1, None
        return i, self.classify(states[i], b)

    def support_value(self, theta, region: Region) -> float:
        if not region.rare:
            raise ValueError("support value is defined for rare regions")
        theta = np.asarray(theta, dtype=float)
        if abs(theta.sum()) > ZERO_SUM_TOL:
            return -math.inf
        in_A = np.zeros(theta.size, dtype=bool)
        in_A[list(region.members)] = True
        if np.any(theta[in_A] < -SIGN_TOL) or np.any(theta[~in_A] > SIGN_TOL):
            return -math.inf
        return float(theta[in_A].sum())

    def __repr__(self):
        return f"GapRule(m={self.m})"


class SumIntersectionRule:
    """Stop when the sum of the L smallest |coordinates| exceeds b."""

    kind = "sum_intersection"

    def __init__(self, L: int):
        if L < 1:
            raise ValueError("L must be at least 1")
        self.L = int(L)

    def classify(self, x, b: float) -> Optional[Region]:
        x = np.asarray(x, dtype=float)
        if self.L > x.size:
            raise ValueError("L exceeds dimension")
        a = np.abs(x)
        small = np.partition(a, self.L - 1)[: self.L].sum()
        if small <= b:
            return None
        positive = np.flatnonzero(x > 0)
        if positive.size < self.L:
            return REFERENCE
        return Region(rare=True, members=tuple(positive))

    def first_hit(self, states: np.ndarray, b: float):
        a = np.partition(np.abs(states), self.L - 1, axis=1)
        stopped = a[:, : self.L].sum(axis=1) > b
        i = int(stopped.argmax())
        if not stopped[i]:
            return -1, None
        return i, self.classify(states[i], b)

    def support_value(self, theta, region: Region) -> float:
        if not region.rare:
            raise ValueError("support value is defined for rare regions")
        theta = np.asarray(theta, dtype=float)
        in_A = np.zeros(theta.size, dtype=bool)
        in_A[list(region.members)] = True
        if np.any(theta[in_A] < -SIGN_TOL) or np.any(theta[~in_A] > SIGN_TOL):
            return -math.inf
        return rearrangement_min(theta, self.L)

    def __repr__(self):
        return f"SumIntersectionRule(L={self.L})"


ProblemKind = (SiegmundRule, GapRule, SumIntersectionRule)
