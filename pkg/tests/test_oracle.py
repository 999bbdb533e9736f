import math

import numpy as np
import pytest

from ct3vae.autograd import Tensor
from ct3vae.errors import NumericError
from ct3vae.gammadiv import gamma_power_divergence
from ct3vae.models import ClassPriors, ModelConfig
from ct3vae.oracle import (default_fixture, joint_log_density, mc_double_integrals,
                           mc_gamma_divergence, quadrature_joint_marginal,
                           verify_suite)
from ct3vae.studentt import TDistParams


# -- divergence oracle ------------------------------------------------------------


def test_mc_divergence_zero_at_identity():
    q = TDistParams([0.0], [1.3], 5.0)
    est, se = mc_gamma_divergence(q, q, 50_000, seed=0)
    assert abs(est) <= max(3.0 * se, 1e-12)


def test_mc_divergence_matches_closed_form():
    rng = np.random.default_rng(1)
    for i in range(10):
        d = int(rng.integers(1, 4))
        nu = float(rng.uniform(2.5, 50.0))
        q = TDistParams(rng.normal(0, 1, d), np.exp(rng.normal(0, 0.5, d)), nu)
        p = TDistParams(rng.normal(0, 1, d), np.exp(rng.normal(0, 0.5, d)), nu)
        est, se = mc_gamma_divergence(q, p, 150_000, seed=50 + i)
        closed = gamma_power_divergence(q, p)
        assert abs(closed - est) <= 3.0 * se


def test_mc_divergence_heavy_tail_dofs():
    # dof near the finite-covariance boundary is where naive estimators
    # lose square-integrability; the mixture proposal keeps errors honest
    q = TDistParams([0.0, 0.0], [1.0, 2.0], 2.5)
    p = TDistParams([0.8, -0.3], [1.5, 0.7], 2.5)
    closed = gamma_power_divergence(q, p)
    estimates = [mc_gamma_divergence(q, p, 200_000, seed=s) for s in range(5)]
    hits = sum(abs(closed - est) <= 3.0 * se for est, se in estimates)
    assert hits >= 4


def test_mc_divergence_error_shrinks_like_root_n():
    q = TDistParams([0.0], [1.0], 8.0)
    p = TDistParams([0.7], [1.6], 8.0)
    _, se_small = mc_gamma_divergence(q, p, 10_000, seed=3)
    _, se_big = mc_gamma_divergence(q, p, 1_000_000, seed=4)
    ratio = se_small / se_big
    assert 7.0 <= ratio <= 13.0


def test_mc_divergence_needs_enough_samples():
    q = TDistParams([0.0], [1.0], 5.0)
    with pytest.raises(ValueError, match="1e4"):
        mc_gamma_divergence(q, q, 100, seed=0)


def test_mc_divergence_cross_dof_requires_gamma():
    q = TDistParams([0.0], [1.0], 5.0)
    p = TDistParams([0.0], [1.0], 7.0)
    with pytest.raises(ValueError, match="gamma"):
        mc_gamma_divergence(q, p, 20_000, seed=0)
    est, se = mc_gamma_divergence(q, p, 20_000, seed=0, gamma=-0.25)
    assert math.isfinite(est) and se > 0.0


# -- quadrature oracle ----------------------------------------------------------------


def quad_setup(nu=5.0, mu=0.0):
    config = ModelConfig(n=1, m=1, K=1, nu=nu, sigma=1.0, family="ct3vae")
    priors = ClassPriors(Tensor(np.array([[mu]])))
    decode = lambda z: 0.8 * np.asarray(z) + 0.1
    return config, priors, decode


def test_quadrature_marginalization_accuracy():
    config, priors, decode = quad_setup()
    res = quadrature_joint_marginal(config, priors, 0, decode)
    assert res["max_marginal_error"] < 1e-3


def test_quadrature_chain_rule_identity():
    config, priors, decode = quad_setup(nu=6.0, mu=0.4)
    res = quadrature_joint_marginal(config, priors, 0, decode, n_z=101, n_x=501)
    assert res["max_chain_rule_gap"] < 1e-8


def test_quadrature_refinement_improves():
    # compare in the resolution range where discretization error dominates
    # the (tiny) domain-truncation floor
    config, priors, decode = quad_setup()
    coarse = quadrature_joint_marginal(config, priors, 0, decode, n_z=51, n_x=21)
    fine = quadrature_joint_marginal(config, priors, 0, decode, n_z=51, n_x=41)
    assert fine["max_marginal_error"] <= coarse["max_marginal_error"] / 2.0


def test_quadrature_rejects_higher_dims():
    config = ModelConfig(n=2, m=1, K=1, nu=5.0, family="ct3vae")
    priors = ClassPriors(Tensor(np.zeros((1, 1))))
    with pytest.raises(ValueError, match="one data"):
        quadrature_joint_marginal(config, priors, 0, lambda z: z)


# -- joint power integrals ---------------------------------------------------------------


@pytest.mark.parametrize("n,m,nu", [(1, 1, 6.0), (2, 1, 10.0)])
def test_double_integrals_match_closed_forms(n, m, nu):
    config = ModelConfig(n=n, m=m, K=2, nu=nu, sigma=1.0, family="ct3vae")
    priors = ClassPriors(Tensor(0.4 * np.ones((2, m))))
    fixture = default_fixture(config, seed=2)
    results = mc_double_integrals(config, priors, 0, fixture, 400_000, seed=9)
    for name, (est, se, closed) in results.items():
        assert abs(est - closed) <= 3.0 * se, (name, est, closed, se)


def test_double_integral_p_power_two_routes_agree():
    # the cross estimator with q set to p is the p-power estimator; two
    # independent seeds must agree within combined errors
    config = ModelConfig(n=1, m=1, K=1, nu=6.0, sigma=1.0, family="ct3vae")
    priors = ClassPriors(Tensor(np.zeros((1, 1))))
    fixture = default_fixture(config, seed=3)
    r1 = mc_double_integrals(config, priors, 0, fixture, 200_000, seed=21)["p_power"]
    r2 = mc_double_integrals(config, priors, 0, fixture, 200_000, seed=22)["p_power"]
    combined = math.hypot(r1[1], r2[1])
    assert abs(r1[0] - r2[0]) <= 3.0 * combined
    assert abs(r1[0] - r1[2]) <= 3.0 * r1[1]


def test_double_integral_latent_scale_exponent():
    # scaling the latent prior covariance moves the p-power integral by
    # |S_y|^(-g/2); an MC ratio test pins the exponent
    config = ModelConfig(n=1, m=1, K=1, nu=6.0, sigma=1.0, family="ct3vae")
    priors = ClassPriors(Tensor(np.zeros((1, 1))))
    fixture = default_fixture(config, seed=4)
    g = config.gamma
    scale = 2.0
    base = mc_double_integrals(config, priors, 0, fixture, 400_000, seed=31,
                               sigma_y=np.array([1.0]))["p_power"]
    wide = mc_double_integrals(config, priors, 0, fixture, 400_000, seed=32,
                               sigma_y=np.array([scale]))["p_power"]
    expected_ratio = scale ** (-g / 2.0)
    got_ratio = wide[0] / base[0]
    se_ratio = got_ratio * math.hypot(base[1] / base[0], wide[1] / wide[0])
    assert abs(got_ratio - expected_ratio) <= 3.0 * se_ratio
    # closed forms carry the same exponent
    assert math.isclose(wide[2] / base[2], expected_ratio, rel_tol=1e-12)


def test_double_integrals_reject_high_dims():
    config = ModelConfig(n=5, m=3, K=1, nu=8.0, family="ct3vae")
    priors = ClassPriors(Tensor(np.zeros((1, 3))))
    with pytest.raises(ValueError, match="low-dimensional"):
        mc_double_integrals(config, priors, 0, default_fixture(config), 10_000, seed=0)


def test_joint_log_density_vectorized_consistency():
    config = ModelConfig(n=2, m=1, K=1, nu=7.0, sigma=0.8, family="ct3vae")
    decode = lambda z: np.concatenate([0.5 * np.asarray(z), -np.asarray(z)], axis=1)
    rng = np.random.default_rng(5)
    z = rng.normal(0, 1, (6, 1))
    x = rng.normal(0, 1, (6, 2))
    batched = joint_log_density(config, np.array([0.2]), z, x, decode)
    single = [float(joint_log_density(config, np.array([0.2]), z[i:i + 1], x[i:i + 1],
                                      decode)[0]) for i in range(6)]
    assert np.allclose(batched, single)


# -- the verify suite -----------------------------------------------------------------------


def test_verify_suite_quick_passes():
    rows = verify_suite(level="quick", seed=0)
    failures = [r for r in rows if r["status"] != "pass"]
    assert not failures, failures


def test_verify_suite_catches_injected_sign_error():
    # flip the sign of the cross-entropy bracket's mean-gap contribution
    def broken(q, p):
        from ct3vae.gammadiv import (_log_cross_integral, _log_self_integral, gamma_of)
        g = gamma_of(q.dof, q.dim).gamma
        log_qq = _log_self_integral(q, g)
        log_qp = _log_cross_integral(q, p, g)
        return (1.0 / g) * math.exp(log_qq / (1.0 + g)) * math.expm1(log_qp - log_qq)

    rows = verify_suite(level="quick", seed=0, divergence_fn=broken)
    failed = {r["check"] for r in rows if r["status"] == "fail"}
    assert "divergence_closed_vs_mc" in failed


def test_verify_suite_rejects_unknown_level():
    with pytest.raises(ValueError):
        verify_suite(level="medium")
