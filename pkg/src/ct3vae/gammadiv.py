"""Power-divergence closed forms between Student's t distributions.

For q = t_d(mu0, S0, nu) and p = t_d(mu1, S1, nu) sharing the degrees of
freedom, with gamma = -2/(nu+d), the power entropy, cross-entropy, and
divergence all reduce to closed forms built from three integrals:

    I_qq = integral of q^(1+gamma) = C^g |S0|^(-g/2) (1 + d/(nu-2))
    I_qp = integral of q p^gamma  = C^g |S1|^(-g/2) (1 + tr(S1^-1 S0)/(nu-2)
                                                      + (mu0-mu1)' S1^-1 (mu0-mu1)/nu)

(writing g for gamma, C for the t normalizing constant).  The divergence
implemented here composes them as

    D(q||p) = (1/g) * I_qq^(-g/(1+g)) * (I_qq - I_qp),

equivalently the cross-entropy is normalized by the power norm of q, which
is where the |S0|^(g^2/(2(1+g))) |S1|^(-g/2) exponent pair in the
cross-entropy comes from.  A reference variant normalizing by the power
norm of p instead (the |S1|^(-g/(2(1+g))) form) is kept for regression
comparisons; the two coincide exactly when S0 = S1.

All determinant and gamma-function products accumulate in log space; the
bracket is evaluated with expm1 so that D(q||q) vanishes to rounding.
"""

from __future__ import annotations

import math

import numpy as np

from .studentt import TDistParams, log_norm_const_value


class GammaConfig:
    """The power-divergence exponent, always tied to (nu, d) as -2/(nu+d)."""

    def __init__(self, gamma: float):
        self.gamma = float(gamma)

    def __repr__(self):
        return f"GammaConfig(gamma={self.gamma})"


def gamma_of(nu: float, d: int) -> GammaConfig:
    if nu <= 0.0:
        raise ValueError(f"degrees of freedom must be positive, got {nu}")
    if d < 1:
        raise ValueError(f"dimension must be at least 1, got {d}")
    return GammaConfig(-2.0 / (nu + d))


def _check_pair(q: TDistParams, p: TDistParams):
    if q.dim != p.dim:
        raise ValueError(f"dimension mismatch: {q.dim} vs {p.dim}")
    if q.dof != p.dof:
        raise ValueError(
            f"the closed form requires a shared dof, got {q.dof} vs {p.dof}; "
            "use the Monte Carlo oracle for cross-dof comparisons")


def _trace_and_mahalanobis(q: TDistParams, p: TDistParams):
    """tr(S1^-1 S0) and (mu0-mu1)' S1^-1 (mu0-mu1) with S0 from q, S1 from p."""
    delta = q.mean - p.mean
    if p.diagonal:
        inv_diag = 1.0 / p.scale_diag
        if q.diagonal:
            trace = float(np.sum(inv_diag * q.scale_diag))
        else:
            trace = float(np.sum(inv_diag * np.diag(q.scale_full)))
        mah = float(np.sum(delta ** 2 * inv_diag))
    else:
        s1_inv = np.linalg.inv(p.scale_full)
        trace = float(np.trace(s1_inv @ q.scale_matrix()))
        mah = float(delta @ s1_inv @ delta)
    return trace, mah


def gamma_entropy(q: TDistParams) -> float:
    """Closed-form power entropy -(integral of q^(1+gamma))^(1/(1+gamma))."""
    g = gamma_of(q.dof, q.dim).gamma
    log_c = log_norm_const_value(q.dof, q.dim)
    log_qq = g * log_c - 0.5 * g * q.log_det_scale() + math.log1p(q.dim / (q.dof - 2.0))
    return -math.exp(log_qq / (1.0 + g))


def _log_self_integral(q: TDistParams, g: float) -> float:
    log_c = log_norm_const_value(q.dof, q.dim)
    return g * log_c - 0.5 * g * q.log_det_scale() + math.log1p(q.dim / (q.dof - 2.0))


def _log_cross_integral(q: TDistParams, p: TDistParams, g: float) -> float:
    log_c = log_norm_const_value(q.dof, q.dim)
    trace, mah = _trace_and_mahalanobis(q, p)
    bracket = 1.0 + trace / (q.dof - 2.0) + mah / q.dof
    return g * log_c - 0.5 * g * p.log_det_scale() + math.log(bracket)


def gamma_cross_entropy(q: TDistParams, p: TDistParams) -> float:
    """Cross-entropy with the q-norm prefactor |S0|^(g^2/(2(1+g))) |S1|^(-g/2)."""
    _check_pair(q, p)
    g = gamma_of(q.dof, q.dim).gamma
    log_qq = _log_self_integral(q, g)
    log_qp = _log_cross_integral(q, p, g)
    return -math.exp(log_qp - g / (1.0 + g) * log_qq)


def gamma_power_divergence(q: TDistParams, p: TDistParams) -> float:
    """(1/gamma) * (cross-entropy - entropy of q), in the q-normalized form.

    Exactly zero (to rounding) at q = p: the two bracket terms share the
    log-scale factor and the residual is evaluated through expm1.
    """
    _check_pair(q, p)
    g = gamma_of(q.dof, q.dim).gamma
    log_qq = _log_self_integral(q, g)
    log_qp = _log_cross_integral(q, p, g)
    # D = (1/g) * exp(-g/(1+g)*log_qq) * (exp(log_qq) - exp(log_qp))
    #   = -(1/g) * exp(log_qq/(1+g)) * expm1(log_qp - log_qq)
    return -(1.0 / g) * math.exp(log_qq / (1.0 + g)) * math.expm1(log_qp - log_qq)


def gamma_power_divergence_reference(q: TDistParams, p: TDistParams) -> float:
    """Pre-correction variant: cross-entropy normalized by the power norm of p.

    Coincides with ``gamma_power_divergence`` when the scale matrices are
    equal; differs otherwise.  Kept as a regression anchor and because it is
    provably nonnegative for every parameter pair.
    """
    _check_pair(q, p)
    g = gamma_of(q.dof, q.dim).gamma
    log_qq = _log_self_integral(q, g)
    log_pp = _log_self_integral(p, g)
    log_qp = _log_cross_integral(q, p, g)
    # D = -(1/g) * (I_qp * I_pp^(-g/(1+g)) - I_qq^(1/(1+g)))
    a = log_qp - g / (1.0 + g) * log_pp
    b = log_qq / (1.0 + g)
    return -(1.0 / g) * math.exp(b) * math.expm1(a - b)
