"""Synthetic data-generating processes with exact samplers and densities.

Six processes back the benchmark harness: two unconditional bivariate
Gaussian mixtures, three univariate-response conditional families, and a
four-dimensional conditional truncated-normal model. Each knows its exact
conditional density, how to draw joint samples, and the response box used
for uniform test-point generation. Randomly structured pieces (the additive
model's mean-function assignment, the linear model's weight matrix) are
frozen at construction from a structure seed.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtr, ndtri

from .data import Dataset
from .rng import stream


@dataclass(frozen=True)
class TruncatedNormal:
    """Normal(mu, sigma^2) conditioned on [-bound, bound]."""

    mu: float
    sigma: float
    bound: float

    def density(self, y):
        return truncnorm_density(np.asarray(y, dtype=float), self.mu, self.sigma, self.bound)

    def sample(self, n, rng):
        mu = np.full(n, float(self.mu))
        return truncnorm_sample(mu, self.sigma, self.bound, rng)


def truncnorm_density(y, mu, sigma, bound):
    """Density of N(mu, sigma^2) renormalized to [-bound, bound]; 0 outside."""
    a = (-bound - mu) / sigma
    b = (bound - mu) / sigma
    mass = ndtr(b) - ndtr(a)
    z = (y - mu) / sigma
    pdf = np.exp(-0.5 * z * z) / (sigma * math.sqrt(2.0 * math.pi))
    return np.where(np.abs(y) <= bound, pdf / mass, 0.0)


def truncnorm_sample(mu, sigma, bound, rng):
    """Inverse-CDF draws, one per entry of mu (vectorized, fixed draw count)."""
    mu = np.asarray(mu, dtype=float)
    lo = ndtr((-bound - mu) / sigma)
    hi = ndtr((bound - mu) / sigma)
    u = rng.random(mu.shape)
    return mu + sigma * ndtri(lo + u * (hi - lo))


class Dgp:
    """Common interface: joint sampling, exact density, test-point boxes."""

    name = ""
    covariate_dim = 0
    response_dim = 1
    structure_seed = 0

    # response support box (test points are uniform over it)
    response_lo = None
    response_hi = None
    # covariate box, None when unconditional
    covariate_lo = None
    covariate_hi = None

    def sample_covariates(self, n, rng):
        if self.covariate_dim == 0:
            return np.empty((n, 0))
        return rng.uniform(self.covariate_lo, self.covariate_hi, size=(n, self.covariate_dim))

    def sample_responses(self, X, rng):
        raise NotImplementedError

    def density(self, Y, X=None):
        """Exact conditional density per row; 0 outside the support."""
        raise NotImplementedError

    def to_dict(self):
        return {"name": self.name, "structure_seed": self.structure_seed}


class SphericalMixture(Dgp):
    """Six equally weighted isotropic Gaussians on a ring of radius 1/2."""

    name = "spherical"
    response_dim = 2
    response_lo = np.array([-1.0, -1.0])
    response_hi = np.array([1.0, 1.0])

    def __init__(self, structure_seed=0):
        self.structure_seed = structure_seed
        angles = 2.0 * np.pi * np.arange(1, 7) / 6.0
        self.means = 0.5 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        self.var = 0.01

    def sample_responses(self, X, rng):
        n = X.shape[0]
        comp = rng.integers(0, 6, size=n)
        return self.means[comp] + math.sqrt(self.var) * rng.standard_normal((n, 2))

    def density(self, Y, X=None):
        Y = np.atleast_2d(Y)
        d2 = np.sum((Y[:, None, :] - self.means) ** 2, axis=2)
        return np.mean(np.exp(-0.5 * d2 / self.var), axis=1) / (2.0 * np.pi * self.var)


class EllipticalMixture(Dgp):
    """Eight radially elongated Gaussians on a ring of radius 3."""

    name = "elliptical"
    response_dim = 2
    response_lo = np.array([-6.0, -6.0])
    response_hi = np.array([6.0, 6.0])

    def __init__(self, structure_seed=0):
        self.structure_seed = structure_seed
        j = np.arange(1, 9)
        theta = np.pi * j / 4.0
        self.means = 3.0 * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        c, s, r2 = np.cos(theta), np.sin(theta), 0.16**2
        self.covs = np.empty((8, 2, 2))
        self.covs[:, 0, 0] = c**2 + r2 * s**2
        self.covs[:, 1, 1] = s**2 + r2 * c**2
        self.covs[:, 0, 1] = self.covs[:, 1, 0] = (1.0 - r2) * s * c
        self._chols = np.linalg.cholesky(self.covs)
        self._invs = np.linalg.inv(self.covs)
        self._log_norms = -0.5 * np.log(np.linalg.det(self.covs)) - np.log(2.0 * np.pi)

    def sample_responses(self, X, rng):
        n = X.shape[0]
        comp = rng.integers(0, 8, size=n)
        z = rng.standard_normal((n, 2))
        return self.means[comp] + np.einsum("nij,nj->ni", self._chols[comp], z)

    def density(self, Y, X=None):
        Y = np.atleast_2d(Y)
        diff = Y[:, None, :] - self.means  # (n, 8, 2)
        quad = np.einsum("nkd,kde,nke->nk", diff, self._invs, diff)
        return np.mean(np.exp(self._log_norms - 0.5 * quad), axis=1)


class NonlinearModel(Dgp):
    """Univariate response with density (1 - y*tanh(g(x)))/2 on [-1, 1]."""

    name = "nonlinear"
    covariate_dim = 4
    covariate_lo = -1.0
    covariate_hi = 1.0
    response_lo = np.array([-1.0])
    response_hi = np.array([1.0])

    def __init__(self, structure_seed=0):
        self.structure_seed = structure_seed

    @staticmethod
    def _slope(X):
        return np.tanh(np.sin(X[:, 0]) + X[:, 1] ** 2 - 0.5 * X[:, 2])

    def sample_responses(self, X, rng):
        # linear density in y; invert F(y) = (y+1)/2 - c(y^2-1)/4 in closed form
        c = self._slope(X)
        u = rng.random(X.shape[0])
        disc = (1.0 + c) ** 2 - 4.0 * c * u
        y = (4.0 * u - 2.0 - c) / (1.0 + np.sqrt(disc))
        return y[:, None]

    def density(self, Y, X=None):
        y = np.atleast_2d(Y)[:, 0]
        c = self._slope(np.atleast_2d(X))
        inside = np.abs(y) <= 1.0
        return np.where(inside, 0.5 * (1.0 - y * c), 0.0)


_ADDITIVE_COMPONENTS = (
    ("cos_pi_x", lambda x: np.cos(np.pi * x)),
    ("sin_x", np.sin),
    ("shrunk_square", lambda x: (1.0 - np.abs(x)) ** 2),
    ("logistic", expit),
    ("sqrt_ramp", lambda x: 2.0 * np.sqrt(np.abs(x)) - 1.0),
)


class AdditiveModel(Dgp):
    """Truncated normal around an additive mean of five univariate pieces."""

    name = "additive"
    covariate_dim = 20
    covariate_lo = 0.0
    covariate_hi = 1.0
    response_lo = np.array([-1.0])
    response_hi = np.array([1.0])
    sigma = 2.0
    bound = 1.0

    def __init__(self, structure_seed=0):
        self.structure_seed = structure_seed
        # one component function per active coordinate, assigned without
        # replacement from the frozen structure stream
        order = stream(structure_seed, "dgp", "additive", "assignment").permutation(5)
        self.assignment = [int(i) for i in order]

    def mean(self, X):
        X = np.atleast_2d(X)
        total = np.zeros(X.shape[0])
        for j, comp in enumerate(self.assignment):
            total += _ADDITIVE_COMPONENTS[comp][1](X[:, j])
        return total

    def sample_responses(self, X, rng):
        return truncnorm_sample(self.mean(X), self.sigma, self.bound, rng)[:, None]

    def density(self, Y, X=None):
        y = np.atleast_2d(Y)[:, 0]
        return truncnorm_density(y, self.mean(X), self.sigma, self.bound)

    def to_dict(self):
        return {
            "name": self.name,
            "structure_seed": self.structure_seed,
            "mean_components": [_ADDITIVE_COMPONENTS[c][0] for c in self.assignment],
        }


class CondGaussianMixture(Dgp):
    """Two truncated-normal components with covariate-driven weight and means."""

    name = "cond-mixture"
    covariate_dim = 4
    covariate_lo = 0.0
    covariate_hi = 1.0
    response_lo = np.array([-0.85])
    response_hi = np.array([0.85])
    bound = 0.85
    sigma1 = 0.15
    sigma2 = 0.12

    def __init__(self, structure_seed=0):
        self.structure_seed = structure_seed

    @staticmethod
    def weight(X):
        X = np.atleast_2d(X)
        return expit(0.2 + 1.2 * X[:, 0] - 0.8 * X[:, 1] + 0.6 * X[:, 2] - 0.4 * X[:, 3])

    @staticmethod
    def mean1(X):
        X = np.atleast_2d(X)
        return (
            0.6 * X[:, 0]
            - 0.3 * X[:, 1]
            + 0.2 * X[:, 2]
            + 0.4 * np.sin(2.0 * np.pi * X[:, 0])
            + 0.2 * np.cos(2.0 * np.pi * X[:, 1])
        )

    @staticmethod
    def mean2(X):
        X = np.atleast_2d(X)
        return (
            -0.5 * X[:, 0]
            + 0.2 * X[:, 1]
            - 0.25 * X[:, 2]
            + 0.1 * X[:, 3]
            - 0.35 * np.sin(2.0 * np.pi * X[:, 0])
            + 0.25 * np.cos(2.0 * np.pi * X[:, 2])
        )

    def sample_responses(self, X, rng):
        pi = self.weight(X)
        pick_second = rng.random(X.shape[0]) < pi
        y1 = truncnorm_sample(self.mean1(X), self.sigma1, self.bound, rng)
        y2 = truncnorm_sample(self.mean2(X), self.sigma2, self.bound, rng)
        return np.where(pick_second, y2, y1)[:, None]

    def density(self, Y, X=None):
        y = np.atleast_2d(Y)[:, 0]
        pi = self.weight(X)
        p1 = truncnorm_density(y, self.mean1(X), self.sigma1, self.bound)
        p2 = truncnorm_density(y, self.mean2(X), self.sigma2, self.bound)
        return (1.0 - pi) * p1 + pi * p2


class MultivariateLinear(Dgp):
    """4-dim response, coordinate-wise truncated normal around Wx."""

    name = "mv-linear"
    covariate_dim = 16
    response_dim = 4
    covariate_lo = 0.0
    covariate_hi = 1.0
    response_lo = np.full(4, -1.0)
    response_hi = np.full(4, 1.0)
    bound = 1.0

    def __init__(self, structure_seed=0):
        self.structure_seed = structure_seed
        rng = stream(structure_seed, "dgp", "mv-linear", "weights")
        self.W = rng.dirichlet(np.ones(self.covariate_dim), size=self.response_dim)

    def sample_responses(self, X, rng):
        mu = np.atleast_2d(X) @ self.W.T  # (n, 4)
        return truncnorm_sample(mu, 1.0, self.bound, rng)

    def density(self, Y, X=None):
        Y = np.atleast_2d(Y)
        mu = np.atleast_2d(X) @ self.W.T
        per_coord = truncnorm_density(Y, mu, 1.0, self.bound)
        return np.prod(per_coord, axis=1)

    def to_dict(self):
        return {
            "name": self.name,
            "structure_seed": self.structure_seed,
            "weights": self.W.tolist(),
        }


_VARIANTS = {
    "spherical": SphericalMixture,
    "elliptical": EllipticalMixture,
    "nonlinear": NonlinearModel,
    "additive": AdditiveModel,
    "cond-mixture": CondGaussianMixture,
    "mv-linear": MultivariateLinear,
}

# benchmark-table shorthand
_ALIASES = {
    "ia": "nonlinear",
    "ib": "additive",
    "ic": "cond-mixture",
    "ii": "mv-linear",
}


def dgp_names():
    return sorted(_VARIANTS)


def make_dgp(name, structure_seed=0):
    key = name.strip().lower().replace("(", "").replace(")", "")
    key = _ALIASES.get(key, key)
    if key not in _VARIANTS:
        raise ValueError(f"unknown DGP {name!r}; known: {', '.join(dgp_names())}")
    return _VARIANTS[key](structure_seed=structure_seed)


def sample_joint(spec, n, rng):
    """n i.i.d. covariate/response pairs from the process."""
    if n < 1:
        raise ValueError("n must be >= 1")
    X = spec.sample_covariates(n, rng)
    Y = spec.sample_responses(X, rng)
    return Dataset(X, Y)


def true_density(spec, y, x=None):
    """Exact conditional (or unconditional) density at a single point."""
    y = np.atleast_1d(np.asarray(y, dtype=float))[None, :]
    x = None if spec.covariate_dim == 0 else np.atleast_1d(np.asarray(x, dtype=float))[None, :]
    return float(spec.density(y, x)[0])


def true_sampler_reference(spec, x, n, rng):
    """n i.i.d. response draws at a fixed covariate, for sampler diagnostics."""
    if spec.covariate_dim == 0:
        X = np.empty((n, 0))
    else:
        X = np.broadcast_to(np.asarray(x, dtype=float), (n, spec.covariate_dim))
    return spec.sample_responses(X, rng)
