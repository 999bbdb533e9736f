"""Post-training latent samplers.

The heavy-tailed families generate by drawing latents from an equal-weight
mixture of t components, one per class, each with scale tau^2 I and dof
nu + n.  Three routes produce tau^2:

* ``tau_squared_original``: the historical formula, kept for A/B runs;
* ``tau_squared_corrected``: the revised formula, with an exact branch that
  uses a representative posterior log-determinant and an approximate branch
  for the gamma-near-zero regime of high-dimensional data;
* ``tau_star_numeric``: an independent numeric route that recovers tau by
  forcing the divergence between the posterior and the tau-scaled sampler
  to carry the same determinant-term weight (nu C1 / C2) as the training
  loss, using the divergence implementation as a black box.  It arbitrates
  the sign conventions of the closed forms.

The gaussian families sample from unit-covariance gaussians at the class
means.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericError
from .gammadiv import gamma_power_divergence
from .models import ClassPriors, ModelConfig, constants_c1_c2, approximate_posterior
from .studentt import TDistParams, log_norm_const_value, sample as t_sample


# -- closed-form scales ------------------------------------------------------


def _log_base(config: ModelConfig) -> float:
    """log of C_{nu,n} sigma^-n (nu-2)/(nu+n-2), the shared base of all forms."""
    n, nu, sigma = config.n, config.nu, config.sigma
    return (log_norm_const_value(nu, n) - n * math.log(sigma)
            + math.log((nu - 2.0) / (nu + n - 2.0)))


def tau_squared_original(config: ModelConfig) -> float:
    """Pre-correction sampler variance: base^(2/(nu+n-2)) over the shrink factor."""
    if config.nu <= 2.0:
        raise ValueError("nu must exceed 2")
    shrink = 1.0 + config.n / config.nu
    return math.exp(_log_base(config) * 2.0 / (config.nu + config.n - 2.0)) / shrink


def tau_squared_corrected(config: ModelConfig, log_det_sigma_phi: float | None = None) -> float:
    """Revised sampler variance.

    With a representative posterior log-determinant the exact branch is
    (1/shrink) * (sigma^n C^-1 |S_phi|^(g/2) (nu+n-2)/(nu-2))^(2g/((1+g)(2+g m)));
    without one, the approximate branch base^(-2g/(2+g m)) applies, which the
    exact branch reproduces as gamma tends to zero.
    """
    if config.nu <= 2.0:
        raise ValueError("nu must exceed 2")
    g = config.gamma
    m = config.m
    shrink = 1.0 + config.n / config.nu
    if log_det_sigma_phi is None:
        exponent = -2.0 * g / (2.0 + g * m)
        return math.exp(_log_base(config) * exponent) / shrink
    log_inv_base = -_log_base(config) + 0.5 * g * log_det_sigma_phi
    exponent = 2.0 * g / ((1.0 + g) * (2.0 + g * m))
    return math.exp(log_inv_base * exponent) / shrink


# -- numeric consistency route -------------------------------------------------


def _determinant_coefficient(config: ModelConfig, sigma_phi_diag, tau: float,
                             divergence_fn=gamma_power_divergence) -> float:
    """Weight of the |S_phi|^(-g/(2(1+g))) term carried by D(q || p*_tau).

    q is the approximate posterior at a representative diagonal S_phi with
    its mean pinned to the class center, p* the tau-scaled sampler
    component.  The divergence decomposes as

        D = P * [ -coeff * |S_phi|^(-g/(2(1+g))) + kappa + R ]

    with P a positive prefactor, kappa = nu tau^2 (1+n/nu) the sampler's
    own quadratic weight and R the trace/mean terms; this inverts that
    decomposition numerically around the supplied divergence callable.
    """
    n, m, nu = config.n, config.m, config.nu
    g = config.gamma
    dof = nu + n
    shrink = 1.0 + n / nu
    s = np.asarray(sigma_phi_diag, dtype=np.float64).reshape(-1)
    if s.shape[0] != m or np.any(s <= 0.0):
        raise ValueError("representative posterior scale must be a positive diagonal")

    mu = np.zeros(m)
    q = approximate_posterior(config, mu, s)
    p_star = TDistParams(mu, tau * tau * np.ones(m), dof)
    div = divergence_fn(q, p_star)

    log_c = log_norm_const_value(dof, m)
    log_det_q = float(np.sum(np.log(s))) - m * math.log(shrink)
    log_qq = g * log_c - 0.5 * g * log_det_q + math.log1p(m / (dof - 2.0))
    # positive prefactor pulled out of the two-term bracket
    log_p = (-g / (1.0 + g)) * log_qq + g * log_c - (g * m + 2.0) * math.log(tau) \
        - math.log(nu * shrink)
    prefactor = (-1.0 / g) * math.exp(log_p)
    bracket = div / prefactor

    kappa = nu * tau * tau * shrink
    r_term = nu * float(np.sum(s)) / (nu + n - 2.0)
    w_term = kappa + r_term - bracket
    # strip the determinant factor the loss keeps symbolic
    log_det_factor = (-g / (2.0 * (1.0 + g))) * float(np.sum(np.log(s)))
    return w_term / math.exp(log_det_factor)


def tau_match_objective(config: ModelConfig, sigma_phi_diag, tau: float,
                        divergence_fn=gamma_power_divergence) -> float:
    """Squared log-mismatch between the divergence coefficient and nu C1/C2."""
    c1, c2 = constants_c1_c2(config)
    target = config.nu * c1 / c2
    coeff = _determinant_coefficient(config, sigma_phi_diag, tau, divergence_fn)
    if coeff <= 0.0:
        # far from the root the extracted coefficient can cross zero
        return float("inf")
    return (math.log(coeff) - math.log(target)) ** 2


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_section(f, lo, hi, tol=1e-12, max_iter=200):
    a, b = math.log(lo), math.log(hi)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(math.exp(c)), f(math.exp(d))
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(math.exp(d))
    return math.exp(0.5 * (a + b))


def tau_star_numeric(config: ModelConfig, sigma_phi_representative,
                     divergence_fn=gamma_power_divergence) -> float:
    """Numeric tau consistent with the training loss, by golden-section search.

    Minimizes ``tau_match_objective`` over tau in (1e-3, 10); the bracket is
    widened once if the coarse scan puts the minimum on a boundary, and a
    boundary minimum after widening is an error.
    """
    s = np.asarray(sigma_phi_representative, dtype=np.float64).reshape(-1)
    if np.any(s <= 0.0) or not np.isfinite(s).all():
        raise ValueError("representative posterior scale must be positive and finite")

    def objective(tau):
        return tau_match_objective(config, s, tau, divergence_fn)

    for lo, hi in ((1e-3, 10.0), (1e-4, 100.0)):
        grid = np.exp(np.linspace(math.log(lo), math.log(hi), 80))
        values = np.array([objective(t) for t in grid])
        k = int(np.argmin(values))
        if 0 < k < len(grid) - 1 and math.isfinite(values[k]):
            return _golden_section(objective, grid[k - 1], grid[k + 1])
    raise NumericError("no interior minimum for the tau consistency objective")


# -- samplers ---------------------------------------------------------------------


class MixtureSampler:
    """Equal-weight (by default) mixture of t components, one per class."""

    def __init__(self, weights, components):
        self.weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        self.components = list(components)
        if len(self.components) != self.weights.shape[0]:
            raise ValueError("one weight per component required")
        if np.any(self.weights < 0.0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        dims = {c.dim for c in self.components}
        dofs = {c.dof for c in self.components}
        if len(dims) != 1 or len(dofs) != 1:
            raise ValueError("components must share dimension and dof")

    @property
    def K(self):
        return len(self.components)

    @property
    def m(self):
        return self.components[0].dim


def build_mixture_sampler(config: ModelConfig, class_means, tau2: float | None = None,
                          log_det_sigma_phi: float | None = None,
                          weights=None) -> MixtureSampler:
    """Sampler components t_m(mu_y, tau^2 I, nu+n) with uniform default weights."""
    class_means = np.atleast_2d(np.asarray(class_means, dtype=np.float64))
    K = class_means.shape[0]
    if tau2 is None:
        tau2 = tau_squared_corrected(config, log_det_sigma_phi)
    if weights is None:
        weights = np.full(K, 1.0 / K)
    components = [TDistParams(class_means[y], tau2 * np.ones(config.m), config.nu + config.n)
                  for y in range(K)]
    return MixtureSampler(weights, components)


def mixture_sample(sampler: MixtureSampler, count: int, rng):
    """Draw ``count`` latents; returns (latents, component labels)."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    labels = rng.choice(sampler.K, size=count, p=sampler.weights)
    latents = np.empty((count, sampler.m), dtype=np.float64)
    for y in range(sampler.K):
        rows = np.nonzero(labels == y)[0]
        if rows.size:
            latents[rows] = t_sample(sampler.components[y], rows.size, rng)
    return latents, labels.astype(np.int64)


def gaussian_class_sample(class_priors: ClassPriors, label: int, count: int, rng):
    """Unit-covariance gaussian draws at one class mean."""
    if label < 0 or label >= class_priors.K:
        raise ValueError(f"label {label} out of range [0, {class_priors.K})")
    mu = class_priors.mu_y.data[label]
    return mu + rng.standard_normal((count, mu.shape[0]))
