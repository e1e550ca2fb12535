"""Asymptotic-variance scalar and relative-efficiency calculators.

The Gaussian-approximation covariance of the corrected estimator factors
into Sigma^{-1} times the scalar

    E[ E{L_h'(e_i - e_j) | e_i} ]^2  /  { E L_h''(e_i - e_j) }^2,

whose pieces are computed here by (nested) adaptive quadrature for a given
error law and loss configuration. The relative-efficiency ratios against
least squares, Huber, smoothed-median and composite-quantile targets reuse
the same two quantities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.special import ndtr

from .kernels import KernelSpec, LossConfig, loss_prime, loss_second

__all__ = [
    "NormalLaw",
    "MixtureNormalLaw",
    "CauchyLaw",
    "CustomLaw",
    "AreReport",
    "validate_law",
    "variance_scalar",
    "are_vs_ols",
    "are_vs_huber",
    "are_vs_cqr",
    "are_vs_composite",
    "are_vs_ols_limit",
    "are_vs_huber_limit",
    "ols_limit_formula",
    "huber_limit_formula",
]

_LIMIT_H = 1e-3
_LIMIT_H_CHECK = 5e-4


@dataclass(frozen=True)
class NormalLaw:
    """Centered normal errors with standard deviation sigma."""

    sigma: float = 1.0

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-0.5 * (x / self.sigma) ** 2) / (self.sigma * math.sqrt(2 * math.pi))

    def cdf(self, x):
        return ndtr(np.asarray(x, dtype=float) / self.sigma)

    def sample(self, rng, size):
        return rng.normal(0.0, self.sigma, size)

    @property
    def second_moment(self):
        return self.sigma**2

    def diff_pdf(self, x):
        # difference of two independent copies: normal with variance 2 sigma^2
        s = self.sigma * math.sqrt(2.0)
        x = np.asarray(x, dtype=float)
        return np.exp(-0.5 * (x / s) ** 2) / (s * math.sqrt(2 * math.pi))

    def knots(self):
        return [-4.0 * self.sigma, 0.0, 4.0 * self.sigma]


@dataclass(frozen=True)
class MixtureNormalLaw:
    """Two-component normal scale mixture: w N(0, s1^2) + (1-w) N(0, s2^2)."""

    w: float = 0.95
    sigma1: float = 1.0
    sigma2: float = 100.0

    def __post_init__(self):
        if not 0.0 < self.w < 1.0:
            raise ValueError("mixture weight must lie in (0, 1)")

    def _components(self):
        return ((self.w, self.sigma1), (1.0 - self.w, self.sigma2))

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for w, s in self._components():
            out = out + w * np.exp(-0.5 * (x / s) ** 2) / (s * math.sqrt(2 * math.pi))
        return out

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for w, s in self._components():
            out = out + w * ndtr(x / s)
        return out

    def sample(self, rng, size):
        pick = rng.random(size) < self.w
        return np.where(
            pick,
            rng.normal(0.0, self.sigma1, size),
            rng.normal(0.0, self.sigma2, size),
        )

    @property
    def second_moment(self):
        return self.w * self.sigma1**2 + (1.0 - self.w) * self.sigma2**2

    def diff_pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for wa, sa in self._components():
            for wb, sb in self._components():
                s = math.sqrt(sa**2 + sb**2)
                out = out + wa * wb * np.exp(-0.5 * (x / s) ** 2) / (
                    s * math.sqrt(2 * math.pi)
                )
        return out

    def knots(self):
        return [
            -4.0 * self.sigma2,
            -4.0 * self.sigma1,
            0.0,
            4.0 * self.sigma1,
            4.0 * self.sigma2,
        ]


@dataclass(frozen=True)
class CauchyLaw:
    """Centered Cauchy errors; no finite moments."""

    scale: float = 1.0

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return self.scale / (math.pi * (self.scale**2 + x * x))

    def cdf(self, x):
        return 0.5 + np.arctan(np.asarray(x, dtype=float) / self.scale) / math.pi

    def sample(self, rng, size):
        return self.scale * rng.standard_cauchy(size)

    @property
    def second_moment(self):
        return math.inf

    def diff_pdf(self, x):
        # Cauchy is stable: the difference is Cauchy with doubled scale
        s = 2.0 * self.scale
        x = np.asarray(x, dtype=float)
        return s / (math.pi * (s**2 + x * x))

    def knots(self):
        return [-20.0 * self.scale, -4.0 * self.scale, 0.0, 4.0 * self.scale, 20.0 * self.scale]


@dataclass
class CustomLaw:
    """User-supplied error law.

    density : vectorized pdf.
    sampler : callable (rng, size) -> draws.
    cdf_fn : optional vectorized cdf; computed by quadrature when absent.
    second_moment_value : E eps^2, math.inf if it diverges; must be declared
        for efficiency ratios against least squares.
    """

    density: object
    sampler: object
    cdf_fn: object = None
    second_moment_value: float | None = None
    knot_scale: float = 10.0

    def pdf(self, x):
        return np.asarray(self.density(np.asarray(x, dtype=float)), dtype=float)

    def cdf(self, x):
        if self.cdf_fn is not None:
            return np.asarray(self.cdf_fn(np.asarray(x, dtype=float)), dtype=float)
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.array([_checked_quad(self.pdf, -np.inf, float(t))[0] for t in xs])
        return out[0] if np.isscalar(x) else out

    def sample(self, rng, size):
        return self.sampler(rng, size)

    @property
    def second_moment(self):
        return self.second_moment_value

    def diff_pdf(self, x):
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.array(
            [
                _piecewise_quad(lambda y, t=t: float(self.pdf(y) * self.pdf(y + t)), self.knots())
                for t in xs
            ]
        )
        return out[0] if np.isscalar(x) else out

    def knots(self):
        return [-self.knot_scale, 0.0, self.knot_scale]


@dataclass
class AreReport:
    """Variance-scalar pieces plus one relative-efficiency ratio."""

    numerator: float
    denominator_sq: float
    are_value: float
    target: str
    h_used: float
    tau: float | None = None
    extras: dict = field(default_factory=dict)


def _checked_quad(fn, lo, hi, tol=1e-9, limit=300, points=None):
    val, err = quad(fn, lo, hi, epsabs=tol, limit=limit, points=points)
    if err > max(100 * tol, 1e-7 * max(abs(val), 1.0)):
        raise RuntimeError(
            f"quadrature did not converge (achieved tolerance {err:g} on [{lo:g}, {hi:g}])"
        )
    return val, err


def _piecewise_quad(fn, knots, tol=1e-9):
    """Integrate fn over the whole line, split at the given interior knots."""
    edges = [-np.inf] + sorted(knots) + [np.inf]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if lo == hi:
            continue
        total += _checked_quad(fn, lo, hi, tol=tol)[0]
    return total


def validate_law(law, tol=1e-6):
    """Check nonnegativity on a grid and unit total mass by quadrature."""
    grid = np.linspace(-50.0, 50.0, 1001)
    if np.any(law.pdf(grid) < 0):
        raise ValueError("error density takes negative values")
    total = _piecewise_quad(lambda x: float(law.pdf(x)), law.knots(), tol=tol / 10)
    if abs(total - 1.0) > tol:
        raise ValueError(f"error density integrates to {total!r}, not 1")


def _conditional_mean_prime(law, cfg, e):
    """m(e) = E L_h'(e - eps); kernel-support integral plus CDF tails."""
    s = cfg.h * cfg.kernel.cutoff()
    inner, _ = _checked_quad(
        lambda y: float(loss_prime(cfg, e - y) * law.pdf(y)), e - s, e + s
    )
    lo = float(law.cdf(e - s))
    hi = float(law.cdf(e + s))
    return inner + lo - (1.0 - hi)


def variance_scalar(law, cfg: LossConfig):
    """Return (numerator, denominator) of the asymptotic covariance scalar.

    denominator = E L_h''(e_i - e_j) = 2 * integral of K_h against the
    density of e_i - e_j; numerator = E[m(e)^2] with m(e) = E L_h'(e - eps),
    both by adaptive quadrature with absolute tolerance 1e-8 per level.
    """
    s = cfg.h * cfg.kernel.cutoff()
    den, _ = _checked_quad(
        lambda v: float(loss_second(cfg, v) * law.diff_pdf(v)), -s, s, tol=1e-9
    )
    num = _piecewise_quad(
        lambda e: _conditional_mean_prime(law, cfg, e) ** 2 * float(law.pdf(e)),
        law.knots(),
        tol=1e-8,
    )
    return num, den


def _int_f_squared(law):
    # integral of f^2 equals the difference density at 0
    return float(law.diff_pdf(0.0))


def _report(num, den, are, target, h, tau=None, extras=None):
    return AreReport(
        numerator=num,
        denominator_sq=den * den,
        are_value=are,
        target=target,
        h_used=h,
        tau=tau,
        extras=extras or {},
    )


def are_vs_ols(law, cfg: LossConfig) -> AreReport:
    """Efficiency ratio against the least-squares-based corrected estimator.

    Returns +inf (as are_value) when the error law has no finite second
    moment; custom laws must declare their second moment.
    """
    num, den = variance_scalar(law, cfg)
    eps2 = law.second_moment
    if eps2 is None:
        raise ValueError("law must declare its second moment for the OLS ratio")
    are = math.inf if math.isinf(eps2) else eps2 * den * den / num
    return _report(num, den, are, "ols", cfg.h, extras={"eps_second_moment": eps2})


def _huber_moments(law, tau):
    sq, _ = _checked_quad(lambda e: e * e * float(law.pdf(e)), -tau, tau)
    p_in = float(law.cdf(tau) - law.cdf(-tau))
    psi_sq = sq + tau * tau * (1.0 - p_in)
    return psi_sq, p_in


def are_vs_huber(law, cfg: LossConfig, tau: float) -> AreReport:
    """Efficiency ratio against the Huber-loss-based estimator.

    Uses the odd Huber score sign(u) * min(|u|, tau); psi' = 1{|u| <= tau}.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    num, den = variance_scalar(law, cfg)
    psi_sq, psi_prime = _huber_moments(law, tau)
    are = psi_sq * den * den / (psi_prime**2 * num)
    return _report(
        num, den, are, "huber", cfg.h, tau=tau,
        extras={"psi_sq": psi_sq, "psi_prime": psi_prime},
    )


def are_vs_cqr(law, cfg: LossConfig | None = None) -> AreReport:
    """Small-bandwidth limit of the ratio against the smoothed median
    estimator: 3 (int f^2)^2 / f(0)^2 (the finite-bandwidth form couples two
    different smoothing scales and is not computed)."""
    f0 = float(law.pdf(0.0))
    if f0 <= 0:
        raise ValueError("error density must be positive at 0 for the cqr ratio")
    int_f2 = _int_f_squared(law)
    are = 3.0 * int_f2**2 / f0**2
    kernel = cfg.kernel if cfg is not None else KernelSpec()
    num, den = variance_scalar(law, LossConfig(kernel, _LIMIT_H))
    return _report(
        num, den, are, "cqr", 0.0, extras={"int_f_squared": int_f2, "f0": f0}
    )


def are_vs_composite(law, cfg: LossConfig) -> AreReport:
    """Ratio against the many-level composite-quantile estimator:
    {E L_h''}^2 / [12 (int f^2)^2 E m(e)^2]; tends to 1 as h -> 0."""
    num, den = variance_scalar(law, cfg)
    int_f2 = _int_f_squared(law)
    are = den * den / (12.0 * int_f2**2 * num)
    return _report(
        num, den, are, "composite", cfg.h,
        extras={"int_f_squared": int_f2, "h0_limit": 1.0},
    )


def _limit_pair(make_report):
    r1 = make_report(_LIMIT_H)
    r2 = make_report(_LIMIT_H_CHECK)
    a1, a2 = r1.are_value, r2.are_value
    if math.isinf(a1) and math.isinf(a2):
        return r1
    if abs(a1 - a2) > max(5e-3 * abs(a1), 1e-6):
        raise RuntimeError(
            f"small-bandwidth evaluations disagree: {a1!r} at h={_LIMIT_H} vs "
            f"{a2!r} at h={_LIMIT_H_CHECK}"
        )
    r1.extras["h_check"] = a2
    return r1


def are_vs_ols_limit(law, kernel: KernelSpec = KernelSpec()) -> AreReport:
    """OLS ratio in the small-bandwidth limit (evaluated at h = 1e-3 with a
    step-halving agreement check)."""
    return _limit_pair(lambda h: are_vs_ols(law, LossConfig(kernel, h)))


def are_vs_huber_limit(law, tau, kernel: KernelSpec = KernelSpec()) -> AreReport:
    """Huber ratio in the small-bandwidth limit."""
    return _limit_pair(lambda h: are_vs_huber(law, LossConfig(kernel, h), tau))


def ols_limit_formula(law) -> float:
    """Closed-form limit 12 (int f^2)^2 E eps^2."""
    eps2 = law.second_moment
    if eps2 is None:
        raise ValueError("law must declare its second moment")
    if math.isinf(eps2):
        return math.inf
    return 12.0 * _int_f_squared(law) ** 2 * eps2


def huber_limit_formula(law, tau) -> float:
    """Closed-form limit 12 (int f^2)^2 E psi^2 / (E psi')^2."""
    psi_sq, psi_prime = _huber_moments(law, tau)
    return 12.0 * _int_f_squared(law) ** 2 * psi_sq / psi_prime**2
