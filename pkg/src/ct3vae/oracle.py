"""Independent brute-force verification of every closed form.

Monte Carlo integration cross-checks the divergence closed forms, and
low-dimensional quadrature checks the marginalization and chain-rule
identities of the joint prior.  The estimators are built so their variance
is finite over the whole dof range under test:

* the power integrals of t densities have polynomially heavy integrands, so
  the divergence estimator importance-samples from a two-component t
  mixture whose dof is dropped below the target dof (clipped to 2*nu - 4.5)
  rather than sampling q or p directly;
* the joint-space integrals are estimated hierarchically (latent draw, then
  conditional draw) where dof > 4 keeps plain averaging square-integrable.

Each estimate travels with a delta-method or plain standard error so checks
can be phrased as "within 3 standard errors".
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .gammadiv import gamma_of, gamma_power_divergence
from .models import ClassPriors, ModelConfig, constants_c1_c2
from .studentt import (TDistParams, log_norm_const_value, t_log_density_diag,
                       t_sample_diag, t_power_log_integral)


# -- divergence oracle -----------------------------------------------------------


def _component_logpdf(x, dist: TDistParams):
    if dist.diagonal:
        return t_log_density_diag(x, dist.mean, dist.scale_diag, dist.dof)
    quad = dist.mahalanobis(x)
    return (log_norm_const_value(dist.dof, dist.dim) - 0.5 * dist.log_det_scale()
            - 0.5 * (dist.dof + dist.dim) * np.log1p(quad / dist.dof))


def mc_gamma_divergence(q: TDistParams, p: TDistParams, n_samples: int, seed: int,
                        gamma: float | None = None):
    """Monte Carlo estimate of the divergence and its standard error.

    Estimates the self integral of q^(1+gamma) and the cross integral of
    q p^gamma by importance sampling, then composes the same
    q-normalized bracket the closed form uses.  The proposal is a
    half/half t mixture sitting on the two means with heavier tails than
    either argument, which keeps both integrands square-integrable down to
    dof 2.5.
    """
    if q.dim != p.dim:
        raise ValueError("dimension mismatch")
    if n_samples < 10_000:
        raise ValueError("need at least 1e4 samples for a usable standard error")
    if gamma is None:
        if q.dof != p.dof:
            raise ValueError("pass gamma explicitly for cross-dof comparisons")
        gamma = gamma_of(q.dof, q.dim).gamma
    g = float(gamma)
    rng = np.random.default_rng(seed)

    nu_heavy = float(np.clip(2.0 * min(q.dof, p.dof) - 4.5, 0.4, min(q.dof, p.dof)))
    d = q.dim
    comps = []
    for dist in (q, p):
        diag = dist.scale_diag if dist.diagonal else np.diag(dist.scale_full)
        comps.append((dist.mean, 2.0 * diag))
    half = n_samples // 2
    counts = (half, n_samples - half)
    draws = np.vstack([t_sample_diag(mean, diag, nu_heavy, c, rng)
                       for (mean, diag), c in zip(comps, counts)])
    log_g = np.logaddexp(
        t_log_density_diag(draws, comps[0][0], comps[0][1], nu_heavy),
        t_log_density_diag(draws, comps[1][0], comps[1][1], nu_heavy),
    ) - math.log(2.0)

    log_q = _component_logpdf(draws, q)
    log_p = _component_logpdf(draws, p)
    u = np.exp((1.0 + g) * log_q - log_g)          # integrand of the self term
    w = np.exp(log_q + g * log_p - log_g)          # integrand of the cross term
    if not (np.isfinite(u).all() and np.isfinite(w).all()):
        bad = int(np.flatnonzero(~(np.isfinite(u) & np.isfinite(w)))[0])
        raise NumericError(f"non-finite importance weight at draw {bad}: x={draws[bad]}")

    i_qq = float(u.mean())
    i_qp = float(w.mean())
    # D = -(1/g) * i_qq^(-g/(1+g)) * (i_qp - i_qq)
    a = -g / (1.0 + g)
    estimate = -(1.0 / g) * i_qq ** a * (i_qp - i_qq)

    # delta method through f(a1, a2) = -(1/g) a1^(-g/(1+g)) (a2 - a1)
    d_qq = -(1.0 / g) * (a * i_qq ** (a - 1.0) * (i_qp - i_qq) - i_qq ** a)
    d_qp = -(1.0 / g) * i_qq ** a
    cov = np.cov(np.vstack([u, w])) / n_samples
    variance = float(np.array([d_qq, d_qp]) @ cov @ np.array([d_qq, d_qp]))
    return estimate, math.sqrt(max(variance, 0.0))


# -- joint-space fixtures ----------------------------------------------------------


@dataclass
class EncoderFixture:
    """A frozen 'trained model' for joint-integral checks.

    The encoder emits a constant posterior (mu_hat, diagonal sigma_hat), the
    decoder is affine z -> decoder_weight @ z + decoder_offset, and the data
    marginal is a diagonal t distribution, so every joint integral this
    fixture enters has a closed form to compare against.
    """

    mu_hat: np.ndarray
    sigma_hat: np.ndarray        # diagonal of the posterior covariance
    decoder_weight: np.ndarray   # (n, m)
    decoder_offset: np.ndarray   # (n,)
    data_mean: np.ndarray        # (n,)
    data_scale: np.ndarray       # diagonal scale of the data marginal
    data_dof: float

    def decode(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        return z @ self.decoder_weight.T + self.decoder_offset


def default_fixture(config: ModelConfig, seed: int = 0) -> EncoderFixture:
    rng = np.random.default_rng(seed)
    return EncoderFixture(
        mu_hat=0.5 * rng.standard_normal(config.m),
        sigma_hat=np.exp(0.3 * rng.standard_normal(config.m)),
        decoder_weight=rng.standard_normal((config.n, config.m)) / math.sqrt(config.m),
        decoder_offset=0.2 * rng.standard_normal(config.n),
        data_mean=0.3 * rng.standard_normal(config.n),
        data_scale=np.exp(0.2 * rng.standard_normal(config.n)),
        data_dof=config.nu,
    )


def joint_log_density(config: ModelConfig, mu_y, z, x, decode_fn, sigma_y=None):
    """log of the class-conditional joint prior over (x, z), rows vectorized."""
    n, m, nu = config.n, config.m, config.nu
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    sigma_y = np.ones(m) if sigma_y is None else np.asarray(sigma_y, dtype=np.float64)
    quad_z = np.sum((z - mu_y) ** 2 / sigma_y, axis=1)
    quad_x = np.sum((x - decode_fn(z)) ** 2, axis=1) / config.sigma ** 2
    log_det = n * 2.0 * math.log(config.sigma) + float(np.sum(np.log(sigma_y)))
    return (log_norm_const_value(nu, m + n) - 0.5 * log_det
            - 0.5 * (nu + m + n) * np.log1p((quad_z + quad_x) / nu))


def posterior_log_density(config: ModelConfig, fixture: EncoderFixture, z):
    shrink = 1.0 + config.n / config.nu
    return t_log_density_diag(z, fixture.mu_hat, fixture.sigma_hat / shrink,
                              config.nu + config.n)


def _sample_joint_p(config, mu_y, fixture, count, rng, sigma_y):
    """Hierarchical draw from the joint prior: latent first, then output."""
    nu, m = config.nu, config.m
    z = t_sample_diag(mu_y, sigma_y, nu, count, rng)
    quad = np.sum((z - mu_y) ** 2 / sigma_y, axis=1)
    factor = (1.0 + quad / nu) / (1.0 + m / nu)
    mean_x = fixture.decode(z)
    eps = rng.standard_normal((count, config.n))
    v = rng.chisquare(nu + m, size=count)
    x = mean_x + eps * (config.sigma * np.sqrt(factor * (nu + m) / v))[:, None]
    return z, x


def _sample_joint_q(config, fixture, count, rng):
    x = t_sample_diag(fixture.data_mean, fixture.data_scale, fixture.data_dof, count, rng)
    shrink = 1.0 + config.n / config.nu
    z = t_sample_diag(fixture.mu_hat, fixture.sigma_hat / shrink,
                      config.nu + config.n, count, rng)
    return z, x


def closed_form_double_integrals(config: ModelConfig, mu_y, fixture: EncoderFixture,
                                 sigma_y=None):
    """The three joint power integrals in closed form (affine decoder, t data)."""
    n, m, nu, sigma = config.n, config.m, config.nu, config.sigma
    g = config.gamma
    sigma_y = np.ones(m) if sigma_y is None else np.asarray(sigma_y, dtype=np.float64)
    log_c = log_norm_const_value(nu, m + n)
    log_det_xy = n * 2.0 * math.log(sigma) + float(np.sum(np.log(sigma_y)))

    pp = math.exp(g * log_c - 0.5 * g * log_det_xy + math.log1p((m + n) / (nu - 2.0)))

    # cross integral: posterior moments against the joint prior's quadratic form
    cov_z = nu / (nu + n - 2.0) * fixture.sigma_hat
    trace_term = float(np.sum(cov_z / sigma_y))
    mah_term = float(np.sum((fixture.mu_hat - mu_y) ** 2 / sigma_y))
    center = fixture.decode(fixture.mu_hat[None, :])[0]
    data_cov = fixture.data_dof / (fixture.data_dof - 2.0) * fixture.data_scale
    w = fixture.decoder_weight
    recon_quad = (float(np.sum(data_cov)) + float(np.sum((fixture.data_mean - center) ** 2))
                  + float(np.trace(w.T @ w @ np.diag(cov_z)))) / sigma ** 2
    bracket = 1.0 + (trace_term + mah_term + recon_quad) / nu
    qp = math.exp(g * log_c - 0.5 * g * log_det_xy) * bracket

    # self integral: latent factor in closed form times the data-power integral
    log_data_power = t_power_log_integral(fixture.data_dof, n,
                                          float(np.sum(np.log(fixture.data_scale))),
                                          1.0 + g)
    qq = math.exp(g * log_norm_const_value(nu + n, m)
                  + 0.5 * g * m * math.log1p(n / nu)
                  + math.log1p(m / (nu + n - 2.0))
                  - 0.5 * g * float(np.sum(np.log(fixture.sigma_hat)))
                  + log_data_power)
    return pp, qp, qq


def mc_double_integrals(config: ModelConfig, class_priors: ClassPriors, label: int,
                        fixture: EncoderFixture, n_samples: int, seed: int,
                        sigma_y=None):
    """MC estimates of the three joint power integrals, with standard errors.

    Returns a dict mapping name -> (estimate, std_error, closed_form).
    """
    if config.n > 2 or config.m > 2:
        raise ValueError("the joint-integral oracle is a low-dimensional check")
    g = config.gamma
    mu_y = class_priors.mu_y.data[label]
    sigma_y_arr = np.ones(config.m) if sigma_y is None else np.asarray(sigma_y, float)
    rng = np.random.default_rng(seed)

    z_p, x_p = _sample_joint_p(config, mu_y, fixture, n_samples, rng, sigma_y_arr)
    log_p_at_p = joint_log_density(config, mu_y, z_p, x_p, fixture.decode, sigma_y_arr)
    vals_pp = np.exp(g * log_p_at_p)

    z_q, x_q = _sample_joint_q(config, fixture, n_samples, rng)
    log_p_at_q = joint_log_density(config, mu_y, z_q, x_q, fixture.decode, sigma_y_arr)
    vals_qp = np.exp(g * log_p_at_q)
    log_q_at_q = (t_log_density_diag(x_q, fixture.data_mean, fixture.data_scale,
                                     fixture.data_dof)
                  + posterior_log_density(config, fixture, z_q))
    vals_qq = np.exp(g * log_q_at_q)

    pp_cf, qp_cf, qq_cf = closed_form_double_integrals(config, mu_y, fixture, sigma_y_arr)

    def packed(values, closed):
        est = float(values.mean())
        se = float(values.std(ddof=1) / math.sqrt(values.shape[0]))
        return est, se, closed

    return {
        "p_power": packed(vals_pp, pp_cf),
        "cross": packed(vals_qp, qp_cf),
        "q_power": packed(vals_qq, qq_cf),
    }


# -- quadrature oracle ---------------------------------------------------------------


def quadrature_joint_marginal(config: ModelConfig, class_priors: ClassPriors, label: int,
                              decode_fn, span: float = 40.0, n_z: int = 801,
                              n_x: int = 4001):
    """Integrate the 1-D/1-D joint over the output axis and compare to the
    closed-form latent prior; also check the chain-rule factorization.

    Returns a dict with the max marginalization error, the max absolute
    log-density gap of prior * conditional vs joint, and a halved-resolution
    self-check used to reject too-coarse grids.
    """
    if config.n != 1 or config.m != 1:
        raise ValueError("the quadrature oracle runs in one data / one latent dimension")
    from .models import conditional_latent_prior, decoder_distribution
    from .studentt import log_density

    mu_y = float(class_priors.mu_y.data[label, 0])
    prior = conditional_latent_prior(config, class_priors, label)

    z_grid = np.linspace(mu_y - span / 2.0, mu_y + span / 2.0, n_z)

    def marginal_errors(nx):
        errs = np.empty_like(z_grid)
        for i, z in enumerate(z_grid):
            mu_x = float(np.asarray(decode_fn(np.array([[z]]))).reshape(-1)[0])
            cond = decoder_distribution(config, class_priors, label,
                                        np.array([z]), np.array([mu_x]))
            half_width = span / 2.0 * math.sqrt(float(cond.scale_diag[0]))
            x_grid = np.linspace(mu_x - half_width, mu_x + half_width, nx)
            joint = np.exp(joint_log_density(
                config, np.array([mu_y]),
                np.full((nx, 1), z), x_grid[:, None], decode_fn))
            marginal = np.trapezoid(joint, x_grid)
            errs[i] = abs(marginal - math.exp(log_density(prior, np.array([z]))))
        return float(np.max(errs))

    max_err = marginal_errors(n_x)
    coarse_err = marginal_errors(n_x // 2 + 1)
    if not math.isfinite(max_err):
        raise NumericError("quadrature produced non-finite values")

    # chain rule: prior(z) * conditional(x|z) must reproduce the joint pointwise
    rng = np.random.default_rng(1234)
    z_pts = rng.uniform(mu_y - 5.0, mu_y + 5.0, size=64)
    gaps = []
    for z in z_pts:
        mu_x = float(np.asarray(decode_fn(np.array([[z]]))).reshape(-1)[0])
        cond = decoder_distribution(config, class_priors, label,
                                    np.array([z]), np.array([mu_x]))
        x_pts = mu_x + rng.uniform(-5.0, 5.0, size=8) * math.sqrt(float(cond.scale_diag[0]))
        lhs = (log_density(prior, np.array([z]))
               + t_log_density_diag(x_pts[:, None], cond.mean, cond.scale_diag, cond.dof))
        rhs = joint_log_density(config, np.array([mu_y]),
                                np.full((8, 1), z), x_pts[:, None], decode_fn)
        gaps.append(np.max(np.abs(lhs - rhs)))
    return {
        "max_marginal_error": max_err,
        "coarse_marginal_error": coarse_err,
        "max_chain_rule_gap": float(np.max(gaps)),
    }


# -- the check suite behind the verify command ------------------------------------------


def verify_suite(level: str = "quick", seed: int = 0,
                 divergence_fn=gamma_power_divergence):
    """Run every oracle check; returns a list of result rows.

    ``level`` 'quick' trims sample counts to finish within a minute; 'full'
    uses the acceptance-grade counts.  The divergence callable is injectable
    so a deliberately broken implementation can be shown to fail.
    """
    if level not in ("quick", "full"):
        raise ValueError("level must be 'quick' or 'full'")
    full = level == "full"
    rng = np.random.default_rng(seed)
    rows = []

    def record(name, ok, statistic, threshold, detail=""):
        rows.append({
            "check": name,
            "status": "pass" if ok else "fail",
            "statistic": float(statistic),
            "threshold": float(threshold),
            "detail": detail,
        })

    # closed-form divergence vs MC
    n_inst = 50 if full else 8
    n_samp = 1_000_000 if full else 100_000
    worst = 0.0
    for i in range(n_inst):
        d = int(rng.integers(1, 4))
        nu = float(rng.uniform(2.5, 50.0))
        q = TDistParams(rng.normal(0, 1, d), np.exp(rng.normal(0, 0.5, d)), nu)
        p = TDistParams(rng.normal(0, 1, d), np.exp(rng.normal(0, 0.5, d)), nu)
        closed = divergence_fn(q, p)
        est, se = mc_gamma_divergence(q, p, n_samp, seed=seed + 1000 + i)
        ratio = abs(closed - est) / max(se, 1e-300)
        worst = max(worst, ratio)
    record("divergence_closed_vs_mc", worst <= 3.0, worst, 3.0,
           f"{n_inst} instances at {n_samp} samples")

    # self-divergence exactly zero
    worst = 0.0
    for _ in range(20):
        d = int(rng.integers(1, 4))
        nu = float(rng.uniform(2.1, 100.0))
        q = TDistParams(rng.normal(0, 1, d), np.exp(rng.normal(0, 0.5, d)), nu)
        worst = max(worst, abs(divergence_fn(q, q)))
    record("self_divergence_zero", worst <= 1e-10, worst, 1e-10)

    # joint marginalization and chain rule
    config = ModelConfig(n=1, m=1, K=1, nu=5.0, sigma=1.0, family="ct3vae")
    priors = ClassPriors(np.zeros((1, 1)))
    res = quadrature_joint_marginal(config, priors, 0,
                                    lambda z: 0.8 * np.asarray(z) + 0.1,
                                    n_z=801 if full else 201,
                                    n_x=4001 if full else 2001)
    record("joint_marginalization", res["max_marginal_error"] < 1e-3,
           res["max_marginal_error"], 1e-3)
    record("chain_rule_identity", res["max_chain_rule_gap"] < 1e-8,
           res["max_chain_rule_gap"], 1e-8)

    # joint power integrals
    n_samp = 1_000_000 if full else 100_000
    worst = 0.0
    for cfg_args, sd in (((1, 1, 6.0), 11), ((2, 1, 10.0), 12)):
        n, m, nu = cfg_args
        config = ModelConfig(n=n, m=m, K=2, nu=nu, sigma=1.0, family="ct3vae")
        priors = ClassPriors(0.3 * np.ones((2, m)))
        fixture = default_fixture(config, seed=sd)
        results = mc_double_integrals(config, priors, 1, fixture, n_samp, seed=seed + sd)
        for name, (est, se, closed) in results.items():
            worst = max(worst, abs(est - closed) / max(se, 1e-300))
    record("joint_power_integrals", worst <= 3.0, worst, 3.0,
           "two configurations, three integrals each")

    # sampler-scale consistency
    from .sampling import tau_squared_corrected, tau_star_numeric
    config = ModelConfig(n=4, m=2, K=1, nu=10.0, sigma=1.0, family="ct3vae")
    tau_star = tau_star_numeric(config, np.ones(2), divergence_fn=divergence_fn)
    tau_exact = math.sqrt(tau_squared_corrected(config, log_det_sigma_phi=0.0))
    rel = abs(tau_star - tau_exact) / tau_exact
    record("tau_consistency", rel < 0.01, rel, 0.01,
           f"numeric {tau_star:.6f} vs closed form {tau_exact:.6f}")

    # balanced mixture sampling
    from .sampling import build_mixture_sampler, mixture_sample
    config = ModelConfig(n=4, m=2, K=10, nu=10.0, sigma=1.0, family="ct3vae")
    sampler = build_mixture_sampler(config, rng.normal(0, 1, (10, 2)), tau2=0.4)
    _, labels = mixture_sample(sampler, 100_000, np.random.default_rng(seed + 77))
    counts = np.bincount(labels, minlength=10)
    sigma_bin = math.sqrt(100_000 * 0.1 * 0.9)
    dev = float(np.max(np.abs(counts - 10_000.0)))
    record("mixture_class_balance", dev <= 3.0 * sigma_bin, dev, 3.0 * sigma_bin)

    return rows
