"""Rate/tilt solvers for the exit-region optimization problems.

Every quantity computed here is the optimal value and maximizer of a convex
program of the form

    maximize    <linear or concave positively-homogeneous objective>(theta)
    subject to  Lambda(theta - gamma) <= 0,  sign constraints,
                optionally  sum_i theta_i = 0,

where Lambda is the CGF of the increment distribution and gamma (default 0)
shifts the constraint when certifying second-moment decay bounds.  The CGF
constraint is active at every optimum of the shipped problems, so solutions
carry |Lambda(tilt - gamma)| <= 1e-10 and a KKT certificate.

Solver stack, cheapest applicable path first:

1. closed forms (Siegmund roots, two-index gap tilts, symmetric
   sum-intersection tilts);
2. symmetry reduction: when the model and the index set are invariant under
   a coordinate-permutation group, the program collapses to one unknown per
   orbit and is solved exactly in that tiny space;
3. nested scalar root finding on the KKT system for independent
   coordinates: the stationarity conditions invert the scalar CGF
   derivatives coordinate by coordinate, leaving one monotone scalar
   equation in the constraint multiplier (plus one inner equation for the
   zero-sum multiplier of gap problems);
4. an active-set method for general normal models, whose subproblem for a
   fixed active set has an explicit solution.

Paths agree to ~1e-9 wherever more than one applies; the test suite checks
this on small instances.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
import math
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .models import CgfModel, IndependentModel, MvNormalModel, siegmund_root
from .regions import (
    GapRule,
    Region,
    SiegmundRule,
    SumIntersectionRule,
    rearrangement_min,
)
from .rootfind import RootError, positive_root, refine_root

__all__ = [
    "TiltSolution",
    "VBound",
    "SolverError",
    "solve_beta",
    "solve_gamma_single",
    "solve_gamma_pair",
    "solve_gap_pair",
    "solve_gap_quad",
    "solve_si_z",
    "solve_si_s",
    "v_bound_program",
    "v_lower_bound",
    "rate_function",
    "homogeneous_profile",
    "validate_drifts",
]

CGF_TOL = 1e-10
KKT_TOL = 1e-8
ACTIVE_SET_MAX_ITER = 200
ACTIVE_SET_RESTARTS = 3


class SolverError(RuntimeError):
    pass


@dataclass
class TiltSolution:
    """Optimal value and tilt of one program, with its KKT certificate.

    ``multipliers`` holds [lambda_0, lambda_1, ..., lambda_d]: the CGF
    multiplier followed by one bound multiplier per coordinate (zero on free
    coordinates).  ``eq_multiplier`` is the zero-sum multiplier for gap
    programs.  Ray-search solutions carry no certificate.
    """

    value: float
    tilt: np.ndarray
    converged: bool
    residual: float
    method: str
    multipliers: Optional[np.ndarray] = None
    eq_multiplier: Optional[float] = None

    def as_dict(self) -> dict:
        return {
            "value": self.value,
            "tilt": self.tilt.tolist(),
            "converged": self.converged,
            "residual": self.residual,
            "method": self.method,
        }


@dataclass
class VBound:
    """Certified lower bound on the variance-decay exponent v_A(gamma)."""

    region: Region
    gamma: np.ndarray
    lower_bound: float
    witness: np.ndarray
    feasible: bool


# ---------------------------------------------------------------------------
# Drift validation
# ---------------------------------------------------------------------------

def validate_drifts(rule, model: CgfModel) -> None:
    """Reject models whose drift signs do not match the stopping rule."""
    mean = np.asarray(model.mean if isinstance(model, IndependentModel)
                      else model.mean)
    if isinstance(rule, GapRule):
        if not (np.all(mean[: rule.m] > 0) and np.all(mean[rule.m:] < 0)):
            raise ValueError(
                "gap rule requires positive drift on the first m coordinates "
                "and negative drift on the rest"
            )
    else:
        if not np.all(mean < 0):
            raise ValueError(f"{rule.kind} rule requires negative drift in "
                             "every coordinate")


# ---------------------------------------------------------------------------
# Quadratic-CGF programs (normal models): active set with exact subproblems
# ---------------------------------------------------------------------------

@dataclass
class _Quad:
    """q(x) = kappa + b.x + x' Sigma x / 2, Sigma positive definite."""

    kappa: float
    b: np.ndarray
    sigma: np.ndarray

    def value(self, x):
        return self.kappa + self.b @ x + 0.5 * x @ (self.sigma @ x)

    def grad(self, x):
        return self.b + self.sigma @ x


def _subsolve(c, quad, signs, eq, pinned):
    """Exact maximizer of c.x over {q(x) <= 0, x_pinned = 0, eq.x = 0}.

    Returns (x, s, t) with s = 1/lambda_0 and t = nu/lambda_0, or None when
    the pinned subspace misses the feasible set or the objective direction
    degenerates.
    """
    free = ~pinned
    n = c.size
    if not free.any():
        if quad.kappa <= CGF_TOL:
            return np.zeros(n), 0.0, 0.0
        return None
    sig = quad.sigma[np.ix_(free, free)]
    try:
        factor = cho_factor(sig, lower=True)
    except np.linalg.LinAlgError:
        return None
    bf = quad.b[free]
    cf = c[free]
    solve = lambda v: cho_solve(factor, v)
    if eq is not None:
        g = eq[free]
        Bg = solve(g)
        a2 = g @ Bg
        if a2 <= 1e-300:
            return None
        chat = cf - ((g @ solve(cf)) / a2) * g
        bhat = bf - ((g @ solve(bf)) / a2) * g
    else:
        chat = cf
        bhat = bf
    Bch = solve(chat)
    Bbh = solve(bhat)
    num = bhat @ Bbh - 2.0 * quad.kappa
    den = chat @ Bch
    if num < -1e-12 * max(1.0, abs(quad.kappa)):
        return None
    if den <= 1e-300:
        return None
    s = math.sqrt(max(num, 0.0) / den)
    if eq is not None:
        t = (s * (g @ solve(cf)) - (g @ solve(bf))) / a2
        xf = solve(s * cf - t * g - bf)
    else:
        t = 0.0
        xf = solve(s * cf - bf)
    x = np.zeros(n)
    x[free] = xf
    return x, s, t


def _qclp_active_set(c, quad, signs, eq=None, rng_seed=0):
    """Maximize c.x s.t. q(x) <= 0 and signs*x >= 0 (and optionally eq.x = 0).

    Active-set iteration: pin sign-violating coordinates at zero, release
    pinned coordinates with negative multipliers, re-solve the subproblem in
    closed form.  Restarts from perturbed initial active sets guard against
    cycling.
    """
    n = c.size
    rng = np.random.default_rng(rng_seed)
    starts = [np.zeros(n, dtype=bool)]
    for _ in range(ACTIVE_SET_RESTARTS):
        starts.append(rng.random(n) < 0.3)

    for pinned0 in starts:
        pinned = pinned0.copy()
        seen = set()
        for _ in range(ACTIVE_SET_MAX_ITER):
            key = pinned.tobytes()
            if key in seen:
                break
            seen.add(key)
            sol = _subsolve(c, quad, signs, eq, pinned)
            if sol is None:
                # pinned subspace infeasible; release everything not forced
                if pinned.any():
                    pinned = np.zeros(n, dtype=bool)
                    continue
                break
            x, s, t = sol
            scale = max(1.0, float(np.max(np.abs(x))))
            slack = signs * x
            viol = (~pinned) & (slack < -1e-12 * scale)
            if viol.any():
                cand = pinned | viol
                if _subsolve(c, quad, signs, eq, cand) is not None:
                    pinned = cand
                    continue
                worst = np.where(viol, slack, np.inf).argmin()
                pinned = pinned.copy()
                pinned[worst] = True
                continue
            grad = quad.grad(x)
            shift = t * eq if eq is not None else 0.0
            reduced = signs * (grad + shift - s * c)  # = s * lambda_k on pinned
            neg = pinned & (reduced < -1e-10 * max(1.0, s))
            if neg.any():
                k = np.where(neg, reduced, np.inf).argmin()
                pinned = pinned.copy()
                pinned[k] = False
                continue
            mults = np.zeros(n)
            if s > 0:
                mults[pinned] = reduced[pinned] / s
            lam0 = math.inf if s == 0 else 1.0 / s
            stat_resid = 0.0 if not (~pinned).any() else float(
                np.max(np.abs(reduced[~pinned]))
            )
            resid = max(
                abs(quad.value(x)),
                float(max(0.0, -slack.min())) if n else 0.0,
                abs(eq @ x) if eq is not None else 0.0,
                stat_resid,
            )
            nu = lam0 * t if s > 0 else None
            return x, float(c @ x), np.concatenate([[lam0], mults]), nu, resid
    raise SolverError("active-set iteration did not converge")


def _orbits_from_keys(*key_arrays) -> list:
    keys = list(zip(*[np.asarray(a).tolist() for a in key_arrays]))
    groups: dict = {}
    for i, k in enumerate(keys):
        groups.setdefault(k, []).append(i)
    return [np.array(v) for v in groups.values()]


def _try_reduce(c, quad, signs, eq, orbits, tol=1e-11):
    """Collapse the program onto orbit-constant vectors when valid.

    Requires c, b, signs (and eq) constant on each orbit and Sigma constant
    on orbit blocks; then a symmetric optimizer exists and the reduced
    program is exact.
    """
    if len(orbits) == c.size:
        return None
    d = c.size
    for arr in (c, quad.b, signs) + ((eq,) if eq is not None else ()):
        for orb in orbits:
            vals = np.asarray(arr)[orb]
            if np.max(np.abs(vals - vals[0])) > tol * max(1.0, np.max(np.abs(vals))):
                return None
    for p, op in enumerate(orbits):
        diag = np.diag(quad.sigma)[op]
        if np.ptp(diag) > tol:
            return None
        for oq in orbits[p:]:
            block = quad.sigma[np.ix_(op, oq)]
            if op is oq:
                off = block[~np.eye(len(op), dtype=bool)]
                if off.size and np.ptp(off) > tol:
                    return None
            elif np.ptp(block) > tol:
                return None
    E = np.zeros((d, len(orbits)))
    for p, orb in enumerate(orbits):
        E[orb, p] = 1.0
    quad_r = _Quad(quad.kappa, E.T @ quad.b, E.T @ quad.sigma @ E)
    c_r = E.T @ c
    signs_r = np.array([signs[orb[0]] for orb in orbits])
    eq_r = E.T @ eq if eq is not None else None
    return E, c_r, quad_r, signs_r, eq_r


def _solve_quadratic_program(c, quad, signs, eq, method_hint):
    """Dispatch: orbit reduction when valid, else full active set."""
    orbits = _orbits_from_keys(signs, c, quad.b)
    red = _try_reduce(c, quad, signs, eq, orbits)
    if red is not None:
        E, c_r, quad_r, signs_r, eq_r = red
        y, val, _, _, resid = _qclp_active_set(c_r, quad_r, signs_r, eq_r)
        x = E @ y
        s_cert = _certificate(c, quad, signs, eq, x)
        return x, val, s_cert, resid, method_hint + "/symmetry-reduced"
    x, val, mults, nu, resid = _qclp_active_set(c, quad, signs, eq)
    return x, val, (mults, nu), resid, method_hint + "/active-set"


def _certificate(c, quad, signs, eq, x):
    """Recover (lambda_0, bound multipliers, nu) from a solved point."""
    grad = quad.grad(x)
    free = np.abs(x) > 1e-12 * max(1.0, np.max(np.abs(x)))
    A = [grad[free]]
    rhs = c[free]
    if eq is not None:
        A.append(-eq[free])
    if not free.any():
        return np.full(c.size + 1, np.nan), None
    M = np.column_stack(A)
    coef, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    lam0 = coef[0]
    nu = coef[1] if eq is not None else None
    shift = (nu / lam0) * eq if eq is not None else 0.0
    s = 1.0 / lam0 if lam0 > 0 else math.inf
    reduced = signs * (grad + shift - s * c)
    mults = np.zeros(c.size)
    mults[~free] = reduced[~free] / s if s > 0 else np.nan
    return np.concatenate([[lam0], mults]), nu


def _mv_quad(model: MvNormalModel, gamma=None) -> _Quad:
    if gamma is None:
        return _Quad(0.0, model.mean.copy(), model.cov)
    gamma = np.asarray(gamma, dtype=float)
    kappa = model.cgf(-gamma)
    b = model.mean - model.cov @ gamma
    return _Quad(kappa, b, model.cov)


# ---------------------------------------------------------------------------
# Independent coordinates: nested scalar root finding on the KKT system
# ---------------------------------------------------------------------------

def _indep_theta(comp, sign, gamma_k, y):
    """Stationarity-consistent coordinate value, clamped to its sign."""
    raw = comp.prime_inverse(y)
    val = gamma_k + raw if math.isfinite(raw) else -math.inf
    if sign > 0:
        return max(0.0, val)
    return min(0.0, val)


def _indep_term(comp, gamma_k, theta_k):
    if not math.isfinite(theta_k):
        return math.inf
    return comp.cgf(theta_k - gamma_k)


def _independent_kkt(components, c, signs, gamma=None, with_eq=False):
    """Solve max c.theta s.t. sum_k Lambda_k(theta_k - gamma_k) <= 0 + signs
    (+ zero sum when ``with_eq``) by root finding on the KKT multipliers.

    With s = 1/lambda_0 and t = nu/lambda_0, stationarity pins
    (Lambda_k)'(theta_k - gamma_k) = s c_k - t on unclamped coordinates; the
    CGF sum is strictly increasing in s, and (for gap problems) the
    coordinate sum is strictly decreasing in t, so both levels of the nested
    search are monotone scalar root-finding problems.
    """
    n = len(components)
    gamma = np.zeros(n) if gamma is None else np.asarray(gamma, dtype=float)

    def theta_vec(s, t):
        return [
            _indep_theta(components[k], signs[k], gamma[k], s * c[k] - t)
            for k in range(n)
        ]

    def coord_sum(s, t):
        th = theta_vec(s, t)
        return -math.inf if any(not math.isfinite(v) for v in th) else sum(th)

    def solve_t(s):
        # bracket the zero-sum equation; coordinate sum decreases in t
        lo, hi = -1.0, 1.0
        for _ in range(200):
            if coord_sum(s, lo) > 0:
                break
            lo *= 2
        for _ in range(200):
            if coord_sum(s, hi) <= 0:
                break
            hi *= 2
        return refine_root(lambda t: -coord_sum(s, t), lo, hi)

    def cgf_sum(s):
        t = solve_t(s) if with_eq else 0.0
        th = theta_vec(s, t)
        return sum(_indep_term(components[k], gamma[k], th[k]) for k in range(n)), t

    g0, _ = cgf_sum(0.0)
    if g0 > CGF_TOL:
        return None  # no sign-feasible point satisfies the CGF constraint
    g = lambda s: cgf_sum(s)[0]

    def gprime(s):
        # envelope derivative: s [sum c^2/w - (sum c/w)^2 / sum 1/w] over
        # the unclamped coordinates, w_k the shifted CGF curvature
        t = solve_t(s) if with_eq else 0.0
        th = theta_vec(s, t)
        sum_c2w = sum_cw = sum_1w = 0.0
        for k in range(n):
            if not math.isfinite(th[k]) or th[k] == 0.0:
                continue
            w = components[k].cgf_second(th[k] - gamma[k])
            sum_c2w += c[k] * c[k] / w
            sum_cw += c[k] / w
            sum_1w += 1.0 / w
        val = sum_c2w
        if with_eq and sum_1w > 0:
            val -= sum_cw * sum_cw / sum_1w
        return s * val

    try:
        s_star = positive_root(g, gprime)
    except RootError as exc:
        raise SolverError(f"independent KKT root search failed: {exc}") from exc
    t_star = solve_t(s_star) if with_eq else 0.0
    th = np.array(theta_vec(s_star, t_star))
    resid = abs(g(s_star)) + (abs(th.sum()) if with_eq else 0.0)
    mults = np.zeros(n)
    for k in range(n):
        if th[k] == 0.0:
            mk = signs[k] * (
                components[k].cgf_prime(-gamma[k]) + t_star - s_star * c[k]
            )
            mults[k] = mk / s_star if s_star > 0 else math.nan
    lam0 = 1.0 / s_star
    nu = t_star * lam0 if with_eq else None
    return th, float(c @ th), np.concatenate([[lam0], mults]), nu, resid


def _homogeneous_size(component, d: int, ell: float, u: float, a: int):
    """(v+, v-, r_A) for one region size a in the i.i.d. case."""
    z1 = siegmund_root(component)
    kappa0 = -component.cgf_prime(0.0)
    kappa1 = component.cgf_prime(z1)
    if kappa0 / ell >= kappa1 / u:
        # the off-region bound binds for every size: v+ = z_1, v- = 0 exactly
        vm = -math.inf if a == d else 0.0
        return z1, vm, u * a * z1

    def g(s):
        vp = component.prime_inverse(u * s)
        val = a * component.cgf(vp)
        if a < d:
            vm = min(0.0, component.prime_inverse(-ell * s))
            term_m = component.cgf(vm) if math.isfinite(vm) else math.inf
            val += (d - a) * term_m
        return val

    def gprime(s):
        vp = component.prime_inverse(u * s)
        val = a * u * u * s / component.cgf_second(vp)
        if a < d:
            vm = component.prime_inverse(-ell * s)
            if math.isfinite(vm) and vm < 0.0:
                val += (d - a) * ell * ell * s / component.cgf_second(vm)
        return val

    s = positive_root(g, gprime)
    vp = component.prime_inverse(u * s)
    if a == d:
        return vp, -math.inf, u * d * vp
    vm = min(0.0, component.prime_inverse(-ell * s))
    return vp, vm, u * a * vp + ell * (d - a) * (-vm)


def homogeneous_profile(component, d: int, ell: float, u: float):
    """Per-size Siegmund tilt components for i.i.d. coordinates.

    For |A| = a the optimal tilt has value v_plus[a] on A and v_minus[a] off
    A, solving  a Lambda(v+) + (d-a) Lambda(v-) = 0  together with the
    multiplier condition -(1/ell) Lambda'(v-) = (1/u) Lambda'(v+) (with v- = 0
    when the corresponding bound binds).  Entry a = d has v_minus = -inf by
    convention.  Also returns r[a] = u a v+ + ell (d-a) (-v-).
    """
    v_plus = np.zeros(d + 1)
    v_minus = np.zeros(d + 1)
    r = np.zeros(d + 1)
    for a in range(1, d + 1):
        v_plus[a], v_minus[a], r[a] = _homogeneous_size(component, d, ell,
                                                        u, a)
    return v_plus, v_minus, r


# ---------------------------------------------------------------------------
# Ray search for symmetric sum-intersection programs
# ---------------------------------------------------------------------------

def _ray_radius(model, direction) -> float:
    """Largest r >= 0 with Lambda(r * direction) <= 0."""
    if isinstance(model, MvNormalModel):
        drift = float(model.mean @ direction)
        curv = float(direction @ (model.cov @ direction))
        return max(0.0, -2.0 * drift / curv)
    grad0 = float(model.cgf_grad(np.zeros(model.dim)) @ direction)
    if grad0 >= 0:
        return 0.0
    caps = [
        c.domain_sup / direction[k]
        for k, c in enumerate(model.components)
        if direction[k] > 0 and math.isfinite(c.domain_sup)
    ]
    upper = min(caps) if caps else math.inf
    return positive_root(lambda rr: model.cgf(rr * direction), upper=upper)


def _symmetric_si_beta(model, A, L):
    """max rearrangement_min(theta, L) over Lambda <= 0 with the sign pattern
    of A, for exchangeable models: reduces to theta = (p on A, -q off A) and
    a quasiconcave one-dimensional search over the ray angle.
    """
    d = model.dim
    in_A = np.zeros(d, dtype=bool)
    in_A[list(A)] = True

    def expand(p, q):
        th = np.where(in_A, p, -q)
        return th

    def value_at_angle(phi):
        p, q = math.cos(phi), math.sin(phi)
        direction = expand(p, q)
        R = _ray_radius(model, direction)
        if R <= 0:
            return 0.0, np.zeros(d)
        th = R * direction
        return rearrangement_min(th, L), th

    lo, hi = 0.0, math.pi / 2
    grid = np.linspace(lo, hi, 513)
    vals = [value_at_angle(p)[0] for p in grid]
    i = int(np.argmax(vals))
    a, b = grid[max(0, i - 1)], grid[min(len(grid) - 1, i + 1)]
    # golden-section polish on the quasiconcave profile
    invphi = (math.sqrt(5) - 1) / 2
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = value_at_angle(x1)[0], value_at_angle(x2)[0]
    for _ in range(80):
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = value_at_angle(x2)[0]
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = value_at_angle(x1)[0]
    phi = 0.5 * (a + b)
    val, th = value_at_angle(phi)
    resid = abs(model.cgf(th))
    return TiltSolution(
        value=float(val),
        tilt=th,
        converged=True,
        residual=resid,
        method="si/symmetric-ray-search",
    )


def _si_dual_program(model, signs, subsets, gamma=None, start=None):
    """Paper formulation of the sum-intersection programs: maximize
    sum_C lambda_C over (theta, lambda) with lambda >= 0,
    sum_{C: k in C} lambda_C <= signs_k * theta_k and Lambda(theta-gamma) <= 0.

    Solved with SLSQP (small instances only; the builders guard sizes), then
    polished radially onto the CGF boundary, which is exact because the
    objective is positively homogeneous.
    """
    from scipy.optimize import minimize

    d = model.dim
    subsets = [tuple(sorted(C)) for C in subsets]
    nC = len(subsets)
    member = np.zeros((nC, d))
    for i, C in enumerate(subsets):
        member[i, list(C)] = 1.0
    gamma_vec = np.zeros(d) if gamma is None else np.asarray(gamma, float)

    def split(z):
        return z[:d], z[d:]

    def neg_obj(z):
        return -z[d:].sum()

    def neg_obj_grad(z):
        g = np.zeros(d + nC)
        g[d:] = -1.0
        return g

    def cgf_con(z):
        th, _ = split(z)
        return -model.cgf(th - gamma_vec)

    def cgf_con_grad(z):
        th, _ = split(z)
        g = np.zeros(d + nC)
        g[:d] = -model.cgf_grad(th - gamma_vec)
        return g

    # sum_{C owns k} lambda_C <= signs_k theta_k   (rows indexed by k)
    lin = np.zeros((d, d + nC))
    lin[:, :d] = np.diag(signs.astype(float))
    lin[:, d:] = -member.T

    cons = [
        {"type": "ineq", "fun": cgf_con, "jac": cgf_con_grad},
        {"type": "ineq", "fun": lambda z: lin @ z, "jac": lambda z: lin},
    ]
    bounds = [(None, None)] * d + [(0.0, None)] * nC
    for k in range(d):
        bounds[k] = (0.0, None) if signs[k] > 0 else (None, 0.0)

    if start is None:
        t0 = 0.1
        start = np.concatenate([signs * t0, np.full(nC, t0 / max(1, nC))])
    res = minimize(
        neg_obj,
        start,
        jac=neg_obj_grad,
        constraints=cons,
        bounds=bounds,
        method="SLSQP",
        options={"maxiter": 400, "ftol": 1e-14},
    )
    th, lam = split(res.x)
    if gamma is None:
        # radial polish: scale to the CGF boundary (objective is homogeneous)
        cur = model.cgf(th)
        if cur < 0 and np.linalg.norm(th) > 0:
            rho = positive_root(lambda rr: model.cgf(rr * th), start=1.0)
            th = rho * th
            lam = rho * lam
        elif cur > 0:
            rho = positive_root(lambda rr: model.cgf(rr * th), start=0.5)
            th, lam = rho * th, rho * lam
    # re-derive the achievable objective from theta alone (lambda may be
    # slightly suboptimal after polishing)
    resid = abs(model.cgf(th - gamma_vec))
    return th, lam, resid, res.success


# ---------------------------------------------------------------------------
# Public solvers
# ---------------------------------------------------------------------------

def _siegmund_csigns(rule: SiegmundRule, d, A):
    in_A = np.zeros(d, dtype=bool)
    in_A[list(A)] = True
    c = np.where(in_A, rule.u, -rule.ell)
    signs = np.where(in_A, 1.0, -1.0)
    return c, signs


def _gap_csigns(rule: GapRule, d, A):
    in_A = np.zeros(d, dtype=bool)
    in_A[list(A)] = True
    c = np.where(in_A, 1.0, 0.0)
    signs = np.where(in_A, 1.0, -1.0)
    return c, signs


def _check_region(rule, d, A) -> Tuple[int, ...]:
    A = tuple(sorted(int(k) for k in A))
    if any(k < 0 or k >= d for k in A):
        raise ValueError("region indices out of range")
    if isinstance(rule, SiegmundRule):
        if not A:
            raise ValueError("Siegmund rare regions have nonempty A")
    elif isinstance(rule, GapRule):
        if len(A) != rule.m:
            raise ValueError(f"gap regions have |A| = m = {rule.m}")
        if A == tuple(range(rule.m)):
            raise ValueError("A = [m] is the reference region")
    elif isinstance(rule, SumIntersectionRule):
        if len(A) < rule.L:
            raise ValueError(f"sum-intersection rare regions have |A| >= {rule.L}")
    return A


def solve_beta(A, rule, model: CgfModel, gamma=None) -> TiltSolution:
    """Rate r_A and optimal tilt beta^A for the rare region W^A.

    With ``gamma`` given (and Lambda(gamma) <= 0), solves the shifted
    program whose optimal value is a certified lower bound on v_A(gamma).
    """
    d = model.dim
    A = _check_region(rule, d, A)
    validate_drifts(rule, model)

    if isinstance(rule, SumIntersectionRule):
        return _solve_si_beta(A, rule, model, gamma)

    if isinstance(rule, SiegmundRule):
        c, signs = _siegmund_csigns(rule, d, A)
        eq = None
    else:
        c, signs = _gap_csigns(rule, d, A)
        eq = np.ones(d)

    if isinstance(model, MvNormalModel):
        quad = _mv_quad(model, gamma)
        x, val, cert, resid, method = _solve_quadratic_program(
            c, quad, signs, eq, rule.kind
        )
        mults, nu = cert if isinstance(cert, tuple) else (cert, None)
        return TiltSolution(val, x, resid <= KKT_TOL, resid, method,
                            mults, nu)

    if (
        isinstance(rule, SiegmundRule)
        and model.is_iid()
        and gamma is None
    ):
        a = len(A)
        vp, vm, r = _homogeneous_size(model.components[0], d, rule.ell,
                                      rule.u, a)
        th = np.full(d, vm if a < d else 0.0)
        th[list(A)] = vp
        resid = abs(model.cgf(th))
        return TiltSolution(float(r), th, resid <= KKT_TOL, resid,
                            "siegmund/iid-profile")

    if isinstance(rule, SiegmundRule) and len(A) == 1 and gamma is None:
        # singleton shortcut: beta^{k} equals the single-root tilt gamma^k
        # exactly when (ell/u) kappa_k^(1) <= kappa_{k'}^(0) for all k' != k
        k = A[0]
        z_k = siegmund_root(model.components[k])
        kap1 = model.components[k].cgf_prime(z_k)
        kap0 = min(
            -model.components[j].cgf_prime(0.0)
            for j in range(d) if j != k
        ) if d > 1 else math.inf
        if (rule.ell / rule.u) * kap1 <= kap0:
            th = np.zeros(d)
            th[k] = z_k
            return TiltSolution(rule.u * z_k, th, True, abs(model.cgf(th)),
                                "siegmund/singleton-root")

    out = _independent_kkt(
        model.components, c, signs,
        gamma=gamma, with_eq=isinstance(rule, GapRule),
    )
    if out is None:
        return TiltSolution(-math.inf, np.zeros(d), True, 0.0,
                            f"{rule.kind}/independent-kkt(infeasible)")
    th, val, mults, nu, resid = out
    return TiltSolution(val, th, resid <= KKT_TOL, resid,
                        f"{rule.kind}/independent-kkt", mults, nu)


def _solve_si_beta(A, rule: SumIntersectionRule, model, gamma=None,
                   subset_cap: int = 40000) -> TiltSolution:
    d = model.dim
    L = rule.L
    exchangeable = (
        isinstance(model, MvNormalModel)
        and model.exchangeable_parameters() is not None
    ) or (isinstance(model, IndependentModel) and model.is_iid())
    if exchangeable and gamma is None:
        return _symmetric_si_beta(model, A, L)
    n_subsets = math.comb(d, L)
    if n_subsets > subset_cap:
        raise SolverError(
            f"general sum-intersection solve needs C({d},{L}) = {n_subsets} "
            f"dual variables, above the cap {subset_cap}"
        )
    in_A = np.zeros(d, dtype=bool)
    in_A[list(A)] = True
    signs = np.where(in_A, 1.0, -1.0)
    subsets = list(combinations(range(d), L))
    th, lam, resid, ok = _si_dual_program(model, signs, subsets, gamma=gamma)
    val = rearrangement_min(th, L) if _sign_ok(th, signs) else -math.inf
    return TiltSolution(float(val), th, ok and resid <= 1e-8, resid,
                        "sum_intersection/lp-dual-slsqp")


def _sign_ok(theta, signs, tol=1e-9):
    return bool(np.all(signs * theta >= -tol))


def solve_gamma_single(k: int, rule: SiegmundRule, model: CgfModel) -> TiltSolution:
    """Single-coordinate tilt gamma^k: k-th entry is the Siegmund root of the
    k-th marginal CGF restriction, other entries zero; value u z_k."""
    validate_drifts(rule, model)
    z = model.marginal_root(k)
    th = np.zeros(model.dim)
    th[k] = z
    resid = abs(model.cgf(th))
    return TiltSolution(rule.u * z, th, resid <= CGF_TOL, resid,
                        "siegmund/gamma-root")


def solve_gamma_pair(k: int, kp: int, rule: SiegmundRule,
                     model: CgfModel) -> TiltSolution:
    """Two-coordinate tilt gamma^{k,k'} maximizing u(theta_k + theta_k')."""
    if k == kp:
        raise ValueError("indices must differ")
    validate_drifts(rule, model)
    d = model.dim
    sup = sorted((k, kp))
    if isinstance(model, MvNormalModel):
        quad_full = _mv_quad(model)
        quad = _Quad(0.0, quad_full.b[sup], quad_full.sigma[np.ix_(sup, sup)])
        c = np.full(2, rule.u)
        signs = np.ones(2)
        x, val, mults, nu, resid = _qclp_active_set(c, quad, signs)
    else:
        comps = [model.components[i] for i in sup]
        out = _independent_kkt(comps, np.full(2, rule.u), np.ones(2))
        if out is None:
            raise SolverError("gamma pair program infeasible")
        x, val, mults, nu, resid = out
    th = np.zeros(d)
    th[sup] = x
    full_m = np.zeros(d + 1)
    full_m[0] = mults[0]
    full_m[1 + np.array(sup)] = mults[1:]
    return TiltSolution(float(val), th, resid <= KKT_TOL, resid,
                        "siegmund/gamma-pair", full_m, None)


def solve_gap_pair(l: int, lp: int, rule: GapRule, model: CgfModel) -> TiltSolution:
    """Two-index gap tilt: maximize theta_lp with theta_l = -theta_lp <= 0,
    reducing to the positive root of t -> Lambda(t (e_lp - e_l))."""
    if not (l < rule.m <= lp):
        raise ValueError("need l in [m] and lp outside [m]")
    validate_drifts(rule, model)
    d = model.dim
    v = np.zeros(d)
    v[lp] = 1.0
    v[l] = -1.0
    if isinstance(model, MvNormalModel):
        t = _ray_radius(model, v)
        if t <= 0:
            raise SolverError("no positive root along the gap direction")
    else:
        cl, clp = model.components[l], model.components[lp]
        f = lambda t: cl.cgf(-t) + clp.cgf(t)
        fp = lambda t: -cl.cgf_prime(-t) + clp.cgf_prime(t)
        t = positive_root(f, fp, upper=clp.domain_sup)
    th = t * v
    resid = abs(model.cgf(th))
    return TiltSolution(float(t), th, resid <= KKT_TOL, resid, "gap/pair-root")


def solve_gap_quad(l1: int, l2: int, lp1: int, lp2: int, rule: GapRule,
                   model: CgfModel) -> TiltSolution:
    """Four-index gap tilt: maximize theta_lp1 + theta_lp2 under the zero-sum
    and sign constraints with all other coordinates pinned to zero."""
    idx = (l1, l2, lp1, lp2)
    if len(set(idx)) != 4:
        raise ValueError("indices must be distinct")
    if not (l1 < rule.m and l2 < rule.m and lp1 >= rule.m and lp2 >= rule.m):
        raise ValueError("need l1,l2 in [m] and lp1,lp2 outside [m]")
    validate_drifts(rule, model)
    d = model.dim
    sup = list(idx)
    c = np.array([0.0, 0.0, 1.0, 1.0])
    signs = np.array([-1.0, -1.0, 1.0, 1.0])
    eq = np.ones(4)
    if isinstance(model, MvNormalModel):
        quad_full = _mv_quad(model)
        quad = _Quad(0.0, quad_full.b[sup], quad_full.sigma[np.ix_(sup, sup)])
        x, val, mults, nu, resid = _qclp_active_set(c, quad, signs, eq)
    else:
        comps = [model.components[i] for i in sup]
        out = _independent_kkt(comps, c, signs, with_eq=True)
        if out is None:
            raise SolverError("gap quad program infeasible")
        x, val, mults, nu, resid = out
    th = np.zeros(d)
    th[sup] = x
    full_m = np.zeros(d + 1)
    full_m[0] = mults[0]
    full_m[1 + np.array(sup)] = mults[1:]
    return TiltSolution(float(val), th, resid <= KKT_TOL, resid,
                        "gap/quad", full_m, nu)


def solve_si_z(A, rule: SumIntersectionRule, model: CgfModel) -> TiltSolution:
    """z_A and gamma^A: maximize |theta|_(L) over tilts supported and
    nonnegative on A with |A| = L."""
    validate_drifts(rule, model)
    d = model.dim
    A = tuple(sorted(A))
    if len(A) != rule.L:
        raise ValueError("solve_si_z needs |A| = L")
    ind = np.zeros(d)
    ind[list(A)] = 1.0
    if _is_exchangeable_on(model, A):
        t = _ray_radius(model, ind)
        th = t * ind
        resid = abs(model.cgf(th))
        return TiltSolution(float(t), th, resid <= CGF_TOL, resid,
                            "si/z-symmetric")
    t_star, th = _si_box_search(model, A)
    resid = abs(model.cgf(th))
    return TiltSolution(float(t_star), th, resid <= 1e-8, resid, "si/z-box")


def solve_si_s(B, rule: SumIntersectionRule, model: CgfModel) -> TiltSolution:
    """s_B and the auxiliary tilt on |B| = L + 1 coordinates."""
    validate_drifts(rule, model)
    d = model.dim
    L = rule.L
    B = tuple(sorted(B))
    if len(B) != L + 1:
        raise ValueError("solve_si_s needs |B| = L + 1")
    ind = np.zeros(d)
    ind[list(B)] = 1.0
    if _is_exchangeable_on(model, B):
        t = _ray_radius(model, ind)
        th = t * ind
        val = t * (L + 1) / L
        resid = abs(model.cgf(th))
        return TiltSolution(float(val), th, resid <= CGF_TOL, resid,
                            "si/s-symmetric")
    # general: LP-dual form over the support B with subsets of size L
    sub = _restrict_model(model, B)
    subsets = list(combinations(range(L + 1), L))
    th_b, lam, resid, ok = _si_dual_program(sub, np.ones(L + 1), subsets)
    th = np.zeros(d)
    th[list(B)] = th_b
    val = _si_support_objective(th_b, L)
    return TiltSolution(float(val), th, ok and resid <= 1e-8, resid,
                        "si/s-lp-dual")


def _si_support_objective(theta_b, L):
    a = np.sort(np.abs(theta_b))[::-1]  # length L+1
    vals = []
    running = a[L]
    for ell in range(1, L + 1):
        running += a[L - ell]
        vals.append(running / ell)
    return min(vals)


def _is_exchangeable_on(model, idx) -> bool:
    if isinstance(model, MvNormalModel):
        sub = _restrict_model(model, idx)
        return sub.exchangeable_parameters() is not None
    comps = [model.components[i] for i in idx]
    return all(c == comps[0] for c in comps)


def _restrict_model(model, idx):
    idx = list(idx)
    if isinstance(model, MvNormalModel):
        return MvNormalModel(model.mean[idx], model.cov[np.ix_(idx, idx)])
    return IndependentModel([model.components[i] for i in idx])


def _si_box_search(model, A):
    """max t with min{Lambda(theta): theta_A >= t, theta = 0 off A} <= 0."""
    A = list(A)
    L = len(A)
    sub = _restrict_model(model, A)

    if isinstance(sub, IndependentModel):
        def psi(t):
            tot = 0.0
            for comp in sub.components:
                m = comp.prime_inverse(0.0)  # unconstrained minimizer
                tot += comp.cgf(max(t, m))
            return tot
    else:
        if L > 12:
            raise SolverError("box search limited to |A| <= 12 for general "
                              "covariance")
        mean, cov = sub.mean, sub.cov

        def psi(t):
            best = math.inf
            for rbits in range(2 ** L):
                bound = np.array([(rbits >> i) & 1 for i in range(L)], bool)
                th = np.full(L, t)
                free = ~bound
                if free.any():
                    rhs = -(mean[free] + cov[np.ix_(free, bound)] @ th[bound])
                    try:
                        th[free] = np.linalg.solve(cov[np.ix_(free, free)], rhs)
                    except np.linalg.LinAlgError:
                        continue
                    if np.any(th[free] < t - 1e-12):
                        continue
                grad = mean + cov @ th
                if np.any(grad[bound] < -1e-10):
                    continue
                best = min(best, float(mean @ th + 0.5 * th @ cov @ th))
            return best

    hi = 1.0
    for _ in range(200):
        if psi(hi) > 0:
            break
        hi *= 2
    t_star = refine_root(psi, 0.0, hi)
    # recover the witness at the boundary
    if isinstance(sub, IndependentModel):
        th_a = np.array([max(t_star, c.prime_inverse(0.0)) for c in sub.components])
    else:
        th_a = None
        best = math.inf
        mean, cov = sub.mean, sub.cov
        for rbits in range(2 ** L):
            bound = np.array([(rbits >> i) & 1 for i in range(L)], bool)
            th = np.full(L, t_star)
            free = ~bound
            if free.any():
                rhs = -(mean[free] + cov[np.ix_(free, bound)] @ th[bound])
                try:
                    th[free] = np.linalg.solve(cov[np.ix_(free, free)], rhs)
                except np.linalg.LinAlgError:
                    continue
                if np.any(th[free] < t_star - 1e-12):
                    continue
            grad = mean + cov @ th
            if np.any(grad[bound] < -1e-10):
                continue
            val = float(mean @ th + 0.5 * th @ cov @ th)
            if val < best:
                best, th_a = val, th.copy()
    th_full = np.zeros(model.dim)
    th_full[A] = th_a
    return t_star, th_full


def v_bound_program(A, gamma, rule, model: CgfModel) -> TiltSolution:
    """Exact solution of the weak-duality program lower-bounding v_A(gamma):
    the same program as solve_beta with the constraint Lambda(theta - gamma).
    """
    gamma = np.asarray(gamma, dtype=float)
    if model.cgf(gamma) > CGF_TOL:
        raise ValueError("gamma must satisfy Lambda(gamma) <= 0")
    return solve_beta(A, rule, model, gamma=gamma)


def v_lower_bound(A, gamma, witness, rule, model: CgfModel) -> VBound:
    """Certify v_A(gamma) >= support_value(witness, A) by checking that the
    witness is feasible for the shifted program."""
    d = model.dim
    gamma = np.asarray(gamma, dtype=float)
    witness = np.asarray(witness, dtype=float)
    region = Region(rare=True, members=_check_region(rule, d, A))
    if model.cgf(gamma) > CGF_TOL:
        raise ValueError("gamma must satisfy Lambda(gamma) <= 0")
    feasible = model.cgf(witness - gamma) <= CGF_TOL
    bound = rule.support_value(witness, region) if feasible else -math.inf
    if not math.isfinite(bound):
        feasible = False
        bound = -math.inf
    return VBound(region, gamma, float(bound), witness, feasible)


def rate_function(x, model: MvNormalModel) -> float:
    """Large-deviations rate I(x) = sup{theta.x : Lambda(theta) <= 0} for a
    normal model: the zero level set of Lambda is the ellipsoid centered at
    -Sigma^{-1} mu, giving I(x) = x.theta_c + sqrt(mu'S^-1 mu * x'S^-1 x)."""
    if not isinstance(model, MvNormalModel):
        raise ValueError("closed-form rate function requires a normal model")
    x = np.asarray(x, dtype=float)
    factor = cho_factor(model.cov, lower=True)
    si_mu = cho_solve(factor, model.mean)
    si_x = cho_solve(factor, x)
    center = -(x @ si_mu)
    return float(center + math.sqrt((model.mean @ si_mu) * (x @ si_x)))
