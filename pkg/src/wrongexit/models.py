"""Increment-distribution families with exact cumulant generating functions.

Every family exposes the cumulant generating function (CGF)

    Lambda(theta) = log E[exp(theta . X_1)],

its gradient grad Lambda(theta) = E_theta[X_1], a domain test, and sampling
from the exponentially tilted law

    d mu_theta / d mu (x) = exp(theta . x - Lambda(theta)).

Two families are shipped:

* ``MvNormalModel``:  X_1 ~ N(mean, cov) with Lambda(theta) =
  mean.theta + theta' cov theta / 2 on all of R^d; tilting by theta shifts
  the mean to mean + cov theta and leaves the covariance unchanged.
* ``IndependentModel``: independent scalar coordinates, each Normal or
  shifted exponential, with Lambda(theta) = sum_k Lambda_k(theta_k).

Models are immutable after construction and safe to share across threads.
Random streams are always passed in by the caller and never stored.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Optional, Sequence, Union

import numpy as np

from .rootfind import positive_root

__all__ = [
    "TiltDomainError",
    "Normal",
    "ShiftedExponential",
    "MvNormalModel",
    "IndependentModel",
    "CgfModel",
    "siegmund_root",
]


class TiltDomainError(ValueError):
    """Tilt parameter outside the open domain of the CGF."""


def _check_dim(theta: np.ndarray, dim: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (dim,):
        raise ValueError(f"tilt has shape {theta.shape}, expected ({dim},)")
    if not np.all(np.isfinite(theta)):
        raise ValueError("tilt has non-finite entries")
    return theta


# ---------------------------------------------------------------------------
# Scalar components
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Normal:
    """Scalar normal component N(mu, sigma2)."""

    mu: float
    sigma2: float

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if self.mu == 0.0:
            raise ValueError("component drift must be strictly signed")

    @property
    def mean(self) -> float:
        return self.mu

    # open upper end of dom(Lambda); +inf for normal
    @property
    def domain_sup(self) -> float:
        return math.inf

    def cgf(self, t: float) -> float:
        return self.mu * t + 0.5 * self.sigma2 * t * t

    def cgf_prime(self, t: float) -> float:
        return self.mu + self.sigma2 * t

    def cgf_second(self, t: float) -> float:
        return self.sigma2

    # range of cgf_prime over the domain, used to invert the derivative
    @property
    def prime_range(self) -> tuple:
        return (-math.inf, math.inf)

    def prime_inverse(self, y: float) -> float:
        return (y - self.mu) / self.sigma2

    def sample(self, t: float, rng: np.random.Generator, size=None):
        return rng.normal(self.mu + self.sigma2 * t, math.sqrt(self.sigma2), size)


@dataclass(frozen=True)
class ShiftedExponential:
    """Scalar component distributed as Exponential(rate) + shift.

    Tilting by t < rate gives Exponential(rate - t) + shift.
    """

    rate: float
    shift: float

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        if self.mean == 0.0:
            raise ValueError("component drift must be strictly signed")

    @property
    def mean(self) -> float:
        return 1.0 / self.rate + self.shift

    @property
    def domain_sup(self) -> float:
        return self.rate

    def cgf(self, t: float) -> float:
        if t >= self.rate:
            return math.inf
        return math.log(self.rate / (self.rate - t)) + self.shift * t

    def cgf_prime(self, t: float) -> float:
        if t >= self.rate:
            raise TiltDomainError(f"tilt {t} outside domain (-inf, {self.rate})")
        return 1.0 / (self.rate - t) + self.shift

    def cgf_second(self, t: float) -> float:
        return (self.rate - t) ** -2

    @property
    def prime_range(self) -> tuple:
        return (self.shift, math.inf)

    def prime_inverse(self, y: float) -> float:
        if y <= self.shift:
            return -math.inf
        return self.rate - 1.0 / (y - self.shift)

    def sample(self, t: float, rng: np.random.Generator, size=None):
        if t >= self.rate:
            raise TiltDomainError(f"tilt {t} outside domain (-inf, {self.rate})")
        return rng.exponential(1.0 / (self.rate - t), size) + self.shift


ScalarFamily = Union[Normal, ShiftedExponential]


def siegmund_root(component: ScalarFamily) -> float:
    """Unique z > 0 with Lambda(z) = 0 for a scalar family with negative mean.

    Closed form -2 mu / sigma2 for normal components; bracketed bisection
    with Newton polish for shifted exponentials.
    """
    if component.mean >= 0:
        raise ValueError("Siegmund root requires negative mean")
    if isinstance(component, Normal):
        return -2.0 * component.mu / component.sigma2
    return positive_root(
        component.cgf, component.cgf_prime, upper=component.domain_sup
    )


# ---------------------------------------------------------------------------
# Multivariate models
# ---------------------------------------------------------------------------

class MvNormalModel:
    """Multivariate normal increments N(mean, cov), cov strictly PD."""

    def __init__(self, mean, cov):
        mean = np.asarray(mean, dtype=float).copy()
        cov = np.asarray(cov, dtype=float).copy()
        if mean.ndim != 1:
            raise ValueError("mean must be a vector")
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise ValueError(f"cov has shape {cov.shape}, expected ({d}, {d})")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ValueError("cov must be symmetric")
        if np.any(mean == 0.0):
            raise ValueError("all drift entries must be strictly signed")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("cov must be positive definite") from exc
        mean.flags.writeable = False
        cov.flags.writeable = False
        self.mean = mean
        self.cov = cov
        self._chol = chol

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def in_domain(self, theta) -> bool:
        return bool(np.all(np.isfinite(theta)))

    def cgf(self, theta) -> float:
        theta = _check_dim(theta, self.dim)
        return float(self.mean @ theta + 0.5 * theta @ (self.cov @ theta))

    def cgf_grad(self, theta) -> np.ndarray:
        theta = _check_dim(theta, self.dim)
        return self.mean + self.cov @ theta

    def sample(self, theta, rng: np.random.Generator, size: Optional[int] = None):
        """Draws from the tilted law N(mean + cov theta, cov)."""
        theta = _check_dim(theta, self.dim)
        draw = self.tilted_sampler(theta)
        out = draw(rng, 1 if size is None else size)
        return out[0] if size is None else out

    def tilted_sampler(self, theta):
        """Closure drawing (k, d) blocks from the tilted law; the tilt
        parameters are resolved once, outside the sampling loop."""
        if not self.in_domain(theta):
            raise TiltDomainError("tilt outside domain")
        loc = self.mean + self.cov @ theta
        chol_t = np.ascontiguousarray(self._chol.T)
        d = self.dim

        def draw(rng: np.random.Generator, k: int) -> np.ndarray:
            return loc + rng.standard_normal((k, d)) @ chol_t

        return draw

    def exchangeable_parameters(self, tol: float = 1e-12):
        """(m, sigma2, rho) when the model is exchangeable, else None."""
        m = self.mean[0]
        if not np.all(np.abs(self.mean - m) <= tol * max(1.0, abs(m))):
            return None
        diag = np.diag(self.cov)
        s2 = diag[0]
        if not np.all(np.abs(diag - s2) <= tol * max(1.0, abs(s2))):
            return None
        off = self.cov[~np.eye(self.dim, dtype=bool)]
        if off.size == 0:
            return float(m), float(s2), 0.0
        r = off[0]
        if not np.all(np.abs(off - r) <= tol * max(1.0, abs(s2))):
            return None
        return float(m), float(s2), float(r / s2)

    def marginal_root(self, k: int) -> float:
        """Positive zero of the k-th diagonal restriction t -> Lambda(t e_k)."""
        if self.mean[k] >= 0:
            raise ValueError("Siegmund root requires negative drift in coordinate")
        return -2.0 * self.mean[k] / self.cov[k, k]

    def __repr__(self):
        return f"MvNormalModel(dim={self.dim})"


class IndependentModel:
    """Independent scalar coordinates; Lambda(theta) = sum_k Lambda_k(theta_k)."""

    def __init__(self, components: Sequence[ScalarFamily]):
        components = tuple(components)
        if not components:
            raise ValueError("need at least one component")
        self.components = components

    @property
    def dim(self) -> int:
        return len(self.components)

    @property
    def mean(self) -> np.ndarray:
        return np.array([c.mean for c in self.components])

    def in_domain(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return all(t < c.domain_sup for t, c in zip(theta, self.components))

    def cgf(self, theta) -> float:
        theta = _check_dim(theta, self.dim)
        return sum(c.cgf(t) for c, t in zip(self.components, theta))

    def cgf_grad(self, theta) -> np.ndarray:
        theta = _check_dim(theta, self.dim)
        if not self.in_domain(theta):
            raise TiltDomainError("tilt outside domain")
        return np.array([c.cgf_prime(t) for c, t in zip(self.components, theta)])

    def sample(self, theta, rng: np.random.Generator, size: Optional[int] = None):
        theta = _check_dim(theta, self.dim)
        draw = self.tilted_sampler(theta)
        out = draw(rng, 1 if size is None else size)
        return out[0] if size is None else out

    def tilted_sampler(self, theta):
        """Closure drawing (k, d) blocks under the tilt; columns of the same
        family are drawn in one batched call."""
        theta = np.asarray(theta, dtype=float)
        if not self.in_domain(theta):
            raise TiltDomainError("tilt outside domain")
        d = self.dim
        norm_cols = [k for k, c in enumerate(self.components)
                     if isinstance(c, Normal)]
        exp_cols = [k for k in range(d) if k not in norm_cols]
        plans = []
        if norm_cols:
            loc = np.array([self.components[k].mu
                            + self.components[k].sigma2 * theta[k]
                            for k in norm_cols])
            scale = np.array([math.sqrt(self.components[k].sigma2)
                              for k in norm_cols])
            plans.append(("normal", np.array(norm_cols), loc, scale))
        if exp_cols:
            scale = np.array([1.0 / (self.components[k].rate - theta[k])
                              for k in exp_cols])
            shift = np.array([self.components[k].shift for k in exp_cols])
            plans.append(("exp", np.array(exp_cols), scale, shift))

        if len(plans) == 1:
            kind, cols, a, b = plans[0]
            if kind == "normal":
                def draw(rng, k):
                    return a + b * rng.standard_normal((k, d))
            else:
                def draw(rng, k):
                    return rng.exponential(a, (k, d)) + b
            return draw

        def draw(rng: np.random.Generator, k: int) -> np.ndarray:
            out = np.empty((k, d))
            for kind, cols, a, b in plans:
                if kind == "normal":
                    out[:, cols] = a + b * rng.standard_normal((k, cols.size))
                else:
                    out[:, cols] = rng.exponential(a, (k, cols.size)) + b
            return out

        return draw

    def is_iid(self) -> bool:
        return all(c == self.components[0] for c in self.components)

    def marginal_root(self, k: int) -> float:
        return siegmund_root(self.components[k])

    def __repr__(self):
        return f"IndependentModel(dim={self.dim})"


CgfModel = Union[MvNormalModel, IndependentModel]


def exchangeable_mvnormal(dim: int, mean: float = -0.5, rho: float = 0.0,
                          sigma2: float = 1.0) -> MvNormalModel:
    """Exchangeable normal model: common mean, unit-pattern covariance
    sigma2 * ((1 - rho) I + rho 11')."""
    if dim > 1:
        if not -1.0 / (dim - 1) < rho < 1.0:
            raise ValueError("rho outside the positive-definite range")
    elif rho != 0.0:
        raise ValueError("rho must be 0 for dim 1")
    cov = sigma2 * ((1.0 - rho) * np.eye(dim) + rho * np.ones((dim, dim)))
    return MvNormalModel(np.full(dim, mean), cov)
