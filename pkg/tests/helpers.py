"""Shared data builders and independent oracles for the test suite.

Oracles deliberately take different code paths from the package (explicit
inverses, scipy fractional matrix powers, dense enumeration) so agreement is
evidence, not tautology.
"""

import numpy as np
from scipy.linalg import fractional_matrix_power

from ccamax import Moments, as_paired


def make_paired(seed, n=50, p=4, q=5, signal=0.0, s_active=2):
    """Random Gaussian paired data, optionally with a planted association."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    y = rng.standard_normal((n, q))
    if signal:
        k = min(s_active, p, q)
        y[:, :k] += signal * x[:, :k]
    return as_paired(x, y)


def joint_moments(data, rows=None):
    """Mean vector and joint covariance (divisor rows) of a prefix."""
    m = Moments.from_prefix(data, rows)
    mean = np.concatenate([m.mean_x, m.mean_y])
    cov = np.block([[m.sxx, m.sxy], [m.sxy.T, m.syy]])
    return mean, cov


def root_pillai_oracle(cov, p, k_set, j_set):
    """Root-Pillai via scipy fractional matrix powers (independent route)."""
    kk = list(k_set)
    jj = [p + int(i) for i in j_set]
    sx = cov[np.ix_(kk, kk)]
    sy = cov[np.ix_(jj, jj)]
    sxy = cov[np.ix_(kk, jj)]
    lam = fractional_matrix_power(sx, -0.5) @ sxy @ fractional_matrix_power(sy, -0.5)
    return float(np.linalg.norm(np.real(lam)))


def mixture_moments(mean, cov, o, eps):
    """Exact moments of the eps-contaminated mixture (1-eps)P + eps*delta_o."""
    mu = (1.0 - eps) * mean + eps * o
    m2 = (1.0 - eps) * (cov + np.outer(mean, mean)) + eps * np.outer(o, o)
    return mu, m2 - np.outer(mu, mu)


def finite_diff_gradient(data, d, o, rows=None, eps=1e-6):
    """Central finite difference of the root-Pillai value along the
    contamination path toward observation ``o``."""
    mean, cov = joint_moments(data, rows)
    _, cov_plus = mixture_moments(mean, cov, o, eps)
    _, cov_minus = mixture_moments(mean, cov, o, -eps)
    up = root_pillai_oracle(cov_plus, data.p, d.k_set, d.j_set)
    dn = root_pillai_oracle(cov_minus, data.p, d.k_set, d.j_set)
    return (up - dn) / (2.0 * eps)


def mallows_correlation_gradient(x, y, i):
    """Closed-form influence of one observation on the sample correlation."""
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt(np.mean(xc**2))
    sy = np.sqrt(np.mean(yc**2))
    r = float(np.mean(xc * yc) / (sx * sy))
    return (
        xc[i] * yc[i] / (sx * sy)
        - 0.5 * r * (xc[i] / sx) ** 2
        - 0.5 * r * (yc[i] / sy) ** 2
    ), r
