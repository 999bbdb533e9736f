"""Model objectives and the conditional heavy-tailed prior family.

Four training objectives share one scaffold:

* gaussian families (``vae``, ``cvae``): scaled squared-error reconstruction
  plus the analytic gaussian KL to a unit-covariance prior centered at zero
  (``vae``) or at a learnable per-class mean (``cvae``);
* heavy-tailed families (``t3vae``, ``ct3vae``): the same reconstruction
  term plus the regularizers that fall out of the power divergence between
  the t posterior and the per-class t joint prior, with the closed-form
  constant pair (C1, C2) weighting the determinant term.

Every loss returns a ``LossBreakdown`` whose total satisfies
``total = reconstruction + beta * (latent_mean + trace + logdet)``.
Conditional losses weight each class equally: every class present in a
batch contributes the mean loss over its own samples, so minority classes
are not drowned out by majority ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor
from .gammadiv import gamma_of
from .studentt import TDistParams, log_norm_const_value

FAMILIES = ("vae", "cvae", "t3vae", "ct3vae")
GAUSSIAN_FAMILIES = ("vae", "cvae")
CONDITIONAL_FAMILIES = ("cvae", "ct3vae")


@dataclass(frozen=True)
class ModelConfig:
    n: int                # data dimension
    m: int                # latent dimension
    K: int                # number of classes
    nu: float = 10.0      # tail weight of the t families
    sigma: float = 1.0    # decoder output scale (Sigma_x = sigma^2 I)
    beta: float = 1.0     # weight on the non-reconstruction terms
    family: str = "ct3vae"
    tau: float | None = None   # optional latent-sampler scale override

    def __post_init__(self):
        if self.n < 1 or self.m < 1 or self.K < 1:
            raise ValueError("dimensions and class count must be at least 1")
        if self.nu <= 2.0:
            raise ValueError(f"nu must exceed 2, got {self.nu}")
        if self.sigma <= 0.0 or self.beta <= 0.0:
            raise ValueError("sigma and beta must be positive")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")

    @property
    def gamma(self) -> float:
        """Divergence exponent of the joint (data, latent) space."""
        return gamma_of(self.nu, self.n + self.m).gamma


class EncoderOutput:
    """Posterior parameters for a batch: means and diagonal covariances.

    Built from the raw log-variance head so determinant terms reduce to a
    plain sum of outputs; ``sigma_phi_diag`` is its exponential.
    """

    def __init__(self, mu_phi: Tensor, log_var: Tensor):
        if not isinstance(mu_phi, Tensor):
            mu_phi = Tensor(mu_phi)
        if not isinstance(log_var, Tensor):
            log_var = Tensor(log_var)
        if mu_phi.shape != log_var.shape or mu_phi.data.ndim != 2:
            raise ValueError("mu_phi and log_var must be matching batch matrices")
        if not np.isfinite(mu_phi.data).all() or not np.isfinite(log_var.data).all():
            raise ValueError("encoder outputs must be finite")
        self.mu_phi = mu_phi
        self.log_var = log_var
        self.sigma_phi_diag = log_var.exp()

    @property
    def batch(self):
        return self.mu_phi.shape[0]

    @property
    def m(self):
        return self.mu_phi.shape[1]

    def rows(self, indices):
        out = object.__new__(EncoderOutput)
        out.mu_phi = self.mu_phi.gather_rows(indices)
        out.log_var = self.log_var.gather_rows(indices)
        out.sigma_phi_diag = self.sigma_phi_diag.gather_rows(indices)
        return out


class ClassPriors:
    """Learnable class means in latent space; the prior scale is fixed at I."""

    def __init__(self, mu_y: Tensor):
        if not isinstance(mu_y, Tensor):
            mu_y = Tensor(mu_y, requires_grad=True)
        if mu_y.data.ndim != 2:
            raise ValueError("mu_y must be a (K, m) matrix")
        if not np.isfinite(mu_y.data).all():
            raise ValueError("class means must be finite")
        self.mu_y = mu_y

    @property
    def K(self):
        return self.mu_y.shape[0]

    @property
    def m(self):
        return self.mu_y.shape[1]

    def parameters(self):
        return [self.mu_y]


def init_class_priors(K: int, m: int, rng) -> ClassPriors:
    # zero init would make all class priors identical and gradients symmetric
    return ClassPriors(Tensor(0.1 * rng.standard_normal((K, m)), requires_grad=True))


def zero_class_priors(m: int) -> ClassPriors:
    return ClassPriors(Tensor(np.zeros((1, m)), requires_grad=False))


@dataclass
class LossBreakdown:
    reconstruction: float
    latent_mean_term: float
    trace_term: float
    logdet_term: float
    total: float
    total_tensor: Tensor = None

    def __add__(self, other):
        return LossBreakdown(
            self.reconstruction + other.reconstruction,
            self.latent_mean_term + other.latent_mean_term,
            self.trace_term + other.trace_term,
            self.logdet_term + other.logdet_term,
            self.total + other.total,
            self.total_tensor + other.total_tensor,
        )


# -- the closed-form constant pair -------------------------------------------


def constants_c1_c2(config: ModelConfig) -> tuple[float, float]:
    """The determinant-term weights of the heavy-tailed losses.

    Both are products of t normalizing constants, the decoder scale, and
    dof ratios, raised to 1/(1+gamma); everything accumulates in log space
    because the normalizing constants underflow for realistic data
    dimensions.
    """
    if config.nu <= 2.0:
        raise ValueError("nu must exceed 2")
    n, m, nu, sigma = config.n, config.m, config.nu, config.sigma
    g = config.gamma
    log_c1 = (g * log_norm_const_value(nu + n, m)
              + 0.5 * g * m * math.log1p(n / nu)
              + math.log((nu + n + m - 2.0) / (nu + n - 2.0))) / (1.0 + g)
    # |Sigma_x| = sigma^(2n); |Sigma_y| = 1 so its (2*gamma+1)/2 exponent drops out
    log_c2 = (g * log_norm_const_value(nu, m + n)
              - g * n * math.log(sigma)
              - g * math.log1p((m + n) / (nu - 2.0))) / (1.0 + g)
    return math.exp(log_c1), math.exp(log_c2)


# -- per-class loss kernels ----------------------------------------------------


def _check_loss_inputs(config, enc, recon, x):
    if not isinstance(recon, Tensor):
        recon = Tensor(recon)
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if enc.m != config.m:
        raise ValueError(f"encoder latent dimension {enc.m} != config m {config.m}")
    if recon.shape != x.shape or recon.shape[0] != enc.batch or recon.shape[1] != config.n:
        raise ValueError("reconstruction / data shapes are inconsistent with the batch")
    if np.any(enc.sigma_phi_diag.data <= 0.0):
        raise ValueError("posterior variances must be positive")
    return recon, x


def _class_mean_row(class_priors: ClassPriors, label: int) -> Tensor:
    if label < 0 or label >= class_priors.K:
        raise ValueError(f"label {label} out of range [0, {class_priors.K})")
    return class_priors.mu_y.gather_rows([label])


def _gaussian_class_loss(config, enc, mu_ref, recon, x):
    recon_vec = ((x - recon) ** 2).sum(axis=1) * (1.0 / config.sigma ** 2)
    delta = enc.mu_phi - mu_ref
    lm_vec = (delta ** 2).sum(axis=1) * 0.5
    tr_vec = (enc.sigma_phi_diag.sum(axis=1) - float(config.m)) * 0.5
    ld_vec = enc.log_var.sum(axis=1) * (-0.5)
    return recon_vec.mean(), lm_vec.mean(), tr_vec.mean(), ld_vec.mean()


def _t_class_loss(config, enc, mu_ref, recon, x):
    g = config.gamma
    c1, c2 = constants_c1_c2(config)
    recon_vec = ((x - recon) ** 2).sum(axis=1) * (1.0 / config.sigma ** 2)
    delta = enc.mu_phi - mu_ref
    lm_vec = (delta ** 2).sum(axis=1)
    tr_vec = enc.sigma_phi_diag.sum(axis=1) * (config.nu / (config.nu + config.n - 2.0))
    # |Sigma_phi|^(-g/(2(1+g))) as exp of a scaled log-variance sum
    power = -g / (2.0 * (1.0 + g))
    ld_vec = (enc.log_var.sum(axis=1) * power).exp() * (-config.nu * c1 / c2)
    return recon_vec.mean(), lm_vec.mean(), tr_vec.mean(), ld_vec.mean()


def _assemble(config, parts) -> LossBreakdown:
    recon_t, lm_t, tr_t, ld_t = parts
    total_t = recon_t + (lm_t + tr_t + ld_t) * config.beta
    return LossBreakdown(
        reconstruction=recon_t.item(),
        latent_mean_term=lm_t.item(),
        trace_term=tr_t.item(),
        logdet_term=ld_t.item(),
        total=total_t.item(),
        total_tensor=total_t,
    )


# -- public objectives -----------------------------------------------------------


def elbo_loss(config: ModelConfig, enc: EncoderOutput, recon, x) -> LossBreakdown:
    """Negative evidence bound of the gaussian model, beta-weighted KL."""
    recon, x = _check_loss_inputs(config, enc, recon, x)
    zero = Tensor(np.zeros((1, config.m)))
    return _assemble(config, _gaussian_class_loss(config, enc, zero, recon, x))


def cvae_loss(config: ModelConfig, enc: EncoderOutput, class_priors: ClassPriors,
              labels, recon, x) -> LossBreakdown:
    """Class-conditional gaussian objective; classes weighted equally."""
    recon, x = _check_loss_inputs(config, enc, recon, x)
    return _sum_over_classes(config, enc, class_priors, labels, recon, x,
                             _gaussian_class_loss)


def t3vae_loss(config: ModelConfig, enc: EncoderOutput, recon, x) -> LossBreakdown:
    """Unconditional heavy-tailed objective (single prior centered at zero)."""
    recon, x = _check_loss_inputs(config, enc, recon, x)
    zero = Tensor(np.zeros((1, config.m)))
    return _assemble(config, _t_class_loss(config, enc, zero, recon, x))


def ct3vae_class_loss(config: ModelConfig, enc: EncoderOutput, class_priors: ClassPriors,
                      label: int, recon, x) -> LossBreakdown:
    """Heavy-tailed objective of one class: all rows are treated as class ``label``."""
    recon, x = _check_loss_inputs(config, enc, recon, x)
    mu_ref = _class_mean_row(class_priors, label)
    return _assemble(config, _t_class_loss(config, enc, mu_ref, recon, x))


def ct3vae_loss(config: ModelConfig, enc: EncoderOutput, class_priors: ClassPriors,
                labels, recon, x) -> LossBreakdown:
    """Batch heavy-tailed objective: sum of per-class losses over present classes."""
    recon, x = _check_loss_inputs(config, enc, recon, x)
    return _sum_over_classes(config, enc, class_priors, labels, recon, x, _t_class_loss)


def _sum_over_classes(config, enc, class_priors, labels, recon, x, kernel):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (enc.batch,):
        raise ValueError("need exactly one label per sample")
    if labels.min() < 0 or labels.max() >= class_priors.K:
        raise ValueError(f"label out of range [0, {class_priors.K})")
    breakdown = None
    for y in np.unique(labels):
        rows = np.nonzero(labels == y)[0]
        part = _assemble(config, kernel(
            config,
            enc.rows(rows),
            _class_mean_row(class_priors, int(y)),
            recon.gather_rows(rows),
            x.gather_rows(rows),
        ))
        breakdown = part if breakdown is None else breakdown + part
    return breakdown


def batch_loss(config: ModelConfig, enc: EncoderOutput, recon, x,
               labels=None, class_priors=None) -> LossBreakdown:
    """Dispatch on the configured family."""
    if config.family == "vae":
        return elbo_loss(config, enc, recon, x)
    if config.family == "t3vae":
        return t3vae_loss(config, enc, recon, x)
    if labels is None or class_priors is None:
        raise ValueError(f"family {config.family!r} requires labels and class priors")
    if config.family == "cvae":
        return cvae_loss(config, enc, class_priors, labels, recon, x)
    return ct3vae_loss(config, enc, class_priors, labels, recon, x)


# -- the conditional distribution family ----------------------------------------


def _priors_mean(class_priors: ClassPriors, label: int) -> np.ndarray:
    if label < 0 or label >= class_priors.K:
        raise ValueError(f"label {label} out of range [0, {class_priors.K})")
    return class_priors.mu_y.data[label].copy()


def conditional_latent_prior(config: ModelConfig, class_priors: ClassPriors,
                             label: int) -> TDistParams:
    """Latent prior of one class: a t distribution at the class mean, unit scale."""
    mu = _priors_mean(class_priors, label)
    return TDistParams(mu, np.ones(config.m), config.nu)


def decoder_distribution(config: ModelConfig, class_priors: ClassPriors, label: int,
                         z, mu_theta_z) -> TDistParams:
    """Output distribution given a latent: t with a latent-dependent scale blow-up."""
    mu = _priors_mean(class_priors, label)
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    mu_theta_z = np.asarray(mu_theta_z, dtype=np.float64).reshape(-1)
    if z.shape[0] != config.m or mu_theta_z.shape[0] != config.n:
        raise ValueError("latent / decoded shapes do not match the config")
    quad = float(np.sum((z - mu) ** 2))
    factor = (1.0 + quad / config.nu) / (1.0 + config.m / config.nu)
    scale = factor * config.sigma ** 2 * np.ones(config.n)
    return TDistParams(mu_theta_z, scale, config.nu + config.m)


def approximate_posterior(config: ModelConfig, mu_phi_row, sigma_phi_diag_row) -> TDistParams:
    """Posterior of one sample: shrunk scale, inflated dof."""
    mu = np.asarray(mu_phi_row, dtype=np.float64).reshape(-1)
    diag = np.asarray(sigma_phi_diag_row, dtype=np.float64).reshape(-1)
    if mu.shape[0] != config.m or diag.shape[0] != config.m:
        raise ValueError("posterior row does not match the latent dimension")
    if np.any(diag <= 0.0):
        raise ValueError("posterior variances must be positive")
    shrink = 1.0 + config.n / config.nu
    return TDistParams(mu, diag / shrink, config.nu + config.n)
