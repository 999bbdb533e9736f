"""Multivariate Student's t distribution.

Normalizing constant, log-density, moments, and reparameterized sampling.
``TDistParams`` stores the scale matrix either as a diagonal vector or as a
full symmetric positive-definite matrix; the diagonal path uses elementwise
formulas and the full path goes through a Cholesky factor.

Conventions: the matrix parameter is the *scale* matrix, not the covariance.
For dof nu > 2 the covariance is nu/(nu-2) times the scale.
"""

from __future__ import annotations

import math

import numpy as np


# -- low-level kernels (any nu > 0; used by the oracles as well) -------------

def log_norm_const_value(nu: float, d: int) -> float:
    """log of Gamma((nu+d)/2) / (Gamma(nu/2) (nu pi)^(d/2))."""
    if nu <= 0.0:
        raise ValueError(f"degrees of freedom must be positive, got {nu}")
    if d < 1:
        raise ValueError(f"dimension must be at least 1, got {d}")
    return math.lgamma(0.5 * (nu + d)) - math.lgamma(0.5 * nu) - 0.5 * d * math.log(nu * math.pi)


def t_log_density_diag(x, mean, scale_diag, nu):
    """Row-wise log-density with a diagonal scale; x may be (d,) or (N, d)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    mean = np.asarray(mean, dtype=np.float64)
    scale_diag = np.asarray(scale_diag, dtype=np.float64)
    d = mean.shape[0]
    quad = np.sum((x - mean) ** 2 / scale_diag, axis=1)
    out = (log_norm_const_value(nu, d)
           - 0.5 * np.sum(np.log(scale_diag))
           - 0.5 * (nu + d) * np.log1p(quad / nu))
    return out


def t_sample_diag(mean, scale_diag, nu, count, rng):
    """Reparameterized draws: mean + Z * sqrt(nu / V), Z gaussian, V chi2(nu)."""
    mean = np.asarray(mean, dtype=np.float64)
    scale_diag = np.asarray(scale_diag, dtype=np.float64)
    z = rng.standard_normal((count, mean.shape[0])) * np.sqrt(scale_diag)
    v = rng.chisquare(nu, size=count)
    return mean + z * np.sqrt(nu / v)[:, None]


class TDistParams:
    """Mean vector, scale matrix (diagonal fast path), degrees of freedom.

    dof must exceed 2 so the covariance nu/(nu-2) * scale is finite.
    """

    def __init__(self, mean, scale, dof):
        self.mean = np.asarray(mean, dtype=np.float64).reshape(-1)
        self.dof = float(dof)
        if self.dof <= 2.0:
            raise ValueError(f"dof must exceed 2 for finite covariance, got {dof}")
        scale = np.asarray(scale, dtype=np.float64)
        d = self.mean.shape[0]
        if scale.ndim == 1:
            if scale.shape[0] != d:
                raise ValueError("diagonal scale length does not match mean")
            if np.any(scale <= 0.0) or not np.isfinite(scale).all():
                raise ValueError("diagonal scale entries must be positive and finite")
            self.scale_diag = scale
            self.scale_full = None
        elif scale.ndim == 2:
            if scale.shape != (d, d):
                raise ValueError(f"scale shape {scale.shape} does not match dimension {d}")
            if np.max(np.abs(scale - scale.T)) > 1e-10:
                raise ValueError("scale matrix must be symmetric")
            self.scale_diag = None
            self.scale_full = scale
            # positive definiteness enforced by the factorization
            self._chol = np.linalg.cholesky(scale)
        else:
            raise ValueError("scale must be a vector (diagonal) or a matrix")

    @property
    def dim(self):
        return self.mean.shape[0]

    @property
    def diagonal(self):
        return self.scale_full is None

    def log_det_scale(self):
        if self.diagonal:
            return float(np.sum(np.log(self.scale_diag)))
        return float(2.0 * np.sum(np.log(np.diag(self._chol))))

    def scale_matrix(self):
        if self.diagonal:
            return np.diag(self.scale_diag)
        return self.scale_full

    def mahalanobis(self, x):
        """(x - mean)^T scale^{-1} (x - mean), row-wise for (N, d) input."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        delta = x - self.mean
        if self.diagonal:
            return np.sum(delta ** 2 / self.scale_diag, axis=1)
        w = np.linalg.solve(self._chol, delta.T)
        return np.sum(w ** 2, axis=0)


def log_norm_const(nu: float, d: int) -> float:
    return log_norm_const_value(nu, d)


def log_density(p: TDistParams, x) -> float:
    """Log-density of a single point (or row-wise for a matrix of points)."""
    x_arr = np.asarray(x, dtype=np.float64)
    single = x_arr.ndim == 1
    quad = p.mahalanobis(x_arr)
    out = (log_norm_const_value(p.dof, p.dim)
           - 0.5 * p.log_det_scale()
           - 0.5 * (p.dof + p.dim) * np.log1p(quad / p.dof))
    return float(out[0]) if single else out


def sample(p: TDistParams, count: int, rng) -> np.ndarray:
    """i.i.d. draws via the gaussian/chi-square reparameterization."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    if p.diagonal:
        z = rng.standard_normal((count, p.dim)) * np.sqrt(p.scale_diag)
    else:
        z = rng.standard_normal((count, p.dim)) @ p._chol.T
    v = rng.chisquare(p.dof, size=count)
    return p.mean + z * np.sqrt(p.dof / v)[:, None]


def moment_covariance(p: TDistParams) -> np.ndarray:
    """Covariance matrix nu/(nu-2) * scale (requires nu > 2 by construction)."""
    return p.dof / (p.dof - 2.0) * p.scale_matrix()


def t_power_log_integral(nu: float, d: int, log_det_scale: float, power: float) -> float:
    """log of the integral of t_d(x; mu, scale, nu)^power over R^d.

    Valid whenever power * (nu + d) > d.  Used by the oracles to handle
    power integrals of t densities at arbitrary exponents.
    """
    s = 0.5 * power * (nu + d)
    if 2.0 * s <= d:
        raise ValueError("power integral diverges: power*(nu+d) must exceed d")
    log_c = log_norm_const_value(nu, d)
    return (power * log_c
            + 0.5 * (1.0 - power) * log_det_scale
            + 0.5 * d * math.log(nu * math.pi)
            + math.lgamma(s - 0.5 * d) - math.lgamma(s))
