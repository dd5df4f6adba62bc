"""Claim families, the compound Poisson surplus model and its Laplace exponent.

The claim surplus process is ``X_t = sum of claims - premium * t + sigma * B_t``.
Its Laplace exponent is ``psi(theta) = log E exp(theta * X_1)``, finite for
``theta`` up to the exponential-moment boundary of the claim law.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from numbers import Real
from typing import ClassVar, Mapping

import numpy as np
from scipy import integrate, optimize, special

from .errors import AdmissibilityError, ConfigError, DomainError, NormalizationError, RuinLevyError

QUAD_EPSREL = 1e-13
NORMALIZATION_TOL = 1e-8
TILT_CHECK_TOL = 1e-10


def poly_exp_integral(x, k, j, rate):
    """Evaluate ``int_0^inf s**j (1+x+s)**(-k) exp(-rate*s) ds``.

    Vectorized over ``x >= 0``. The factor ``(1+x)**(-k)`` is pulled out so
    the adaptive rule controls relative error uniformly across the grid.
    """
    x_arr = np.asarray(x, dtype=float)
    scale = 1.0 + x_arr
    if rate == 0.0:
        if k - j <= 1:
            raise DomainError(f"integral diverges for k={k}, j={j} without exponential damping")
        out = scale ** (j + 1 - k) * special.beta(j + 1, k - j - 1)
        return float(out) if x_arr.ndim == 0 else out
    if rate < 0:
        raise DomainError("exponential damping rate must be nonnegative")
    if x_arr.ndim == 0:
        c = float(scale)

        def f(s):
            return s ** j * (1.0 + s / c) ** (-k) * math.exp(-rate * s)

        val, _ = integrate.quad(f, 0.0, np.inf, epsabs=0.0, epsrel=QUAD_EPSREL, limit=400)
        return val * c ** (-k)

    def fv(s):
        return s ** j * (1.0 + s / scale) ** (-k) * math.exp(-rate * s)

    val, _ = integrate.quad_vec(fv, 0.0, np.inf, epsabs=0.0, epsrel=QUAD_EPSREL, norm="max")
    return val * scale ** (-k)


@lru_cache(maxsize=4096)
def _poly_moment(alpha, p, norm_const, theta, power):
    # E[U**power * exp(theta*U)] for the PolyTiltedExp law
    rate = alpha - theta
    return norm_const * poly_exp_integral(0.0, p, power, rate)


@dataclass(frozen=True)
class PolyTiltedExp:
    """Claim density ``K (1+x)**(-p) exp(-alpha x)`` on ``x > 0``.

    With ``alpha > 0`` and ``p > 1`` the law is convolution equivalent with
    index ``alpha``. ``alpha == 0`` is the Lomax law reached by a full tilt.
    """

    alpha: float
    p: float
    norm_const: float

    variant: ClassVar[str] = "PolyTiltedExp"

    @property
    def convolution_equivalent(self):
        return self.alpha > 0

    @property
    def moment_boundary(self):
        return self.alpha

    def admits(self, theta):
        return theta <= self.alpha

    def density(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, self.norm_const * (1.0 + np.maximum(x, 0)) ** (-self.p)
                        * np.exp(-self.alpha * np.maximum(x, 0)), 0.0)

    def tail(self, x):
        return self.tilted_tail(x, 0.0)

    def cdf(self, x):
        return 1.0 - self.tail(np.maximum(x, 0.0))

    def mgf(self, theta):
        if theta == 0.0:
            return 1.0
        if theta > self.alpha:
            raise DomainError(f"theta={theta} beyond exponential-moment boundary {self.alpha}")
        return _poly_moment(self.alpha, self.p, self.norm_const, float(theta), 0)

    def mgf_derivative(self, theta):
        if theta > self.alpha or (theta == self.alpha and self.p <= 2):
            raise DomainError(f"E[U exp(theta U)] infinite at theta={theta}")
        return _poly_moment(self.alpha, self.p, self.norm_const, float(theta), 1)

    @property
    def mean(self):
        return self.mgf_derivative(0.0)

    @property
    def tilted_mass(self):
        """``E exp(alpha U) = K / (p - 1)``."""
        return self.norm_const / (self.p - 1.0)

    def tilted_tail(self, x, a):
        """``exp(a x) * P(U > x)``."""
        x = np.asarray(x, dtype=float)
        return self.norm_const * np.exp(-(self.alpha - a) * x) * poly_exp_integral(x, self.p, 0, self.alpha)

    def integrated_tail(self, x):
        """``int_x^inf P(U > z) dz``."""
        return self.tilted_integrated_tail(x, 0.0)

    def tilted_integrated_tail(self, x, a):
        """``exp(a x) * int_x^inf P(U > z) dz``."""
        x = np.asarray(x, dtype=float)
        return self.norm_const * np.exp(-(self.alpha - a) * x) * poly_exp_integral(x, self.p, 1, self.alpha)

    def tail_exp_integral(self, x, a):
        """``int_x^inf exp(a z) P(U > z) dz`` for ``a <= alpha``."""
        if a > self.alpha:
            raise DomainError("tilt beyond exponential-moment boundary")
        x = np.asarray(x, dtype=float)
        if a == self.alpha:
            return self.norm_const * poly_exp_integral(x, self.p - 1.0, 0, self.alpha) / (self.p - 1.0)
        if a == 0.0:
            return self.integrated_tail(x)
        partial = self.norm_const * np.exp(-(self.alpha - a) * x) * poly_exp_integral(x, self.p, 0, self.alpha - a)
        return (partial - self.tilted_tail(x, a)) / a

    def tilt(self, theta):
        return PolyTiltedExp(self.alpha - theta, self.p, self.norm_const / self.mgf(theta))

    def sample(self, rng, n):
        """Exact draws. Rejection from the better of an Exp(alpha) or Lomax proposal."""
        if self.alpha == 0.0:
            return rng.random(n) ** (-1.0 / (self.p - 1.0)) - 1.0
        exp_rate = self.alpha / self.norm_const
        lomax_rate = (self.p - 1.0) / self.norm_const
        out = np.empty(n)
        filled = 0
        while filled < n:
            need = n - filled
            if exp_rate >= lomax_rate:
                batch = int(need / exp_rate * 1.1) + 16
                x = rng.standard_exponential(batch) / self.alpha
                keep = rng.random(batch) < (1.0 + x) ** (-self.p)
            else:
                batch = int(need / lomax_rate * 1.1) + 16
                x = rng.random(batch) ** (-1.0 / (self.p - 1.0)) - 1.0
                keep = rng.random(batch) < np.exp(-self.alpha * x)
            got = x[keep][:need]
            out[filled:filled + got.size] = got
            filled += got.size
        return out

    def sample_excess(self, rng, y):
        """One exact draw of ``U`` given ``U > y``."""
        if self.alpha == 0.0:
            return (1.0 + y) * rng.random() ** (-1.0 / (self.p - 1.0)) - 1.0
        while True:
            cand = y + rng.standard_exponential() / self.alpha
            if rng.random() < ((1.0 + y) / (1.0 + cand)) ** self.p:
                return cand

    def to_config(self):
        return {"variant": self.variant, "alpha": self.alpha, "p": self.p}


@dataclass(frozen=True)
class Exponential:
    """Exponential claims with rate ``mu``. Light tailed: not convolution equivalent."""

    mu: float

    variant: ClassVar[str] = "Exponential"
    convolution_equivalent: ClassVar[bool] = False

    @property
    def moment_boundary(self):
        return self.mu

    def admits(self, theta):
        return theta < self.mu

    def density(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, self.mu * np.exp(-self.mu * np.maximum(x, 0)), 0.0)

    def tail(self, x):
        return np.exp(-self.mu * np.asarray(x, dtype=float))

    def cdf(self, x):
        return 1.0 - self.tail(np.maximum(x, 0.0))

    def mgf(self, theta):
        if theta == 0.0:
            return 1.0
        if theta >= self.mu:
            raise DomainError(f"theta={theta} must be below the claim rate {self.mu}")
        return self.mu / (self.mu - theta)

    def mgf_derivative(self, theta):
        if theta >= self.mu:
            raise DomainError(f"theta={theta} must be below the claim rate {self.mu}")
        return self.mu / (self.mu - theta) ** 2

    @property
    def mean(self):
        return 1.0 / self.mu

    def tilted_tail(self, x, a):
        return np.exp((a - self.mu) * np.asarray(x, dtype=float))

    def integrated_tail(self, x):
        return self.tail(x) / self.mu

    def tilted_integrated_tail(self, x, a):
        return self.tilted_tail(x, a) / self.mu

    def tail_exp_integral(self, x, a):
        if a >= self.mu:
            raise DomainError("tilt beyond the claim rate")
        return self.tilted_tail(x, a) / (self.mu - a)

    def tilt(self, theta):
        return Exponential(self.mu - theta)

    def quantile(self, u):
        """Inverse cdf; ``quantile(0.5) == log 2`` for unit rate."""
        return -np.log1p(-np.asarray(u, dtype=float)) / self.mu

    def sample(self, rng, n):
        return self.quantile(rng.random(n))

    def sample_excess(self, rng, y):
        return y + rng.standard_exponential() / self.mu

    def to_config(self):
        return {"variant": self.variant, "mu": self.mu}


ClaimFamily = PolyTiltedExp | Exponential


def make_poly_tilted_exp(alpha, p):
    """Build the PolyTiltedExp law and its normalizing constant.

    Raises:
        NormalizationError: if the two independent quadratures disagree.
    """
    if alpha == 0.0:
        return PolyTiltedExp(0.0, p, p - 1.0)
    mass = poly_exp_integral(0.0, p, 0, alpha)
    norm_const = 1.0 / mass
    # independent check on a finite window whose analytic tail bound is < 1e-12
    x_max = 1.0
    while math.exp(-alpha * x_max) * (1 + x_max) ** (-p) / alpha >= 1e-12:
        x_max *= 2.0
    window, err = integrate.quad(lambda x: (1 + x) ** (-p) * math.exp(-alpha * x), 0.0, x_max,
                                 epsabs=1e-10, epsrel=1e-12, limit=500)
    if err > 1e-10 or abs(norm_const * window - 1.0) > NORMALIZATION_TOL:
        raise NormalizationError(f"density integrates to {norm_const * window!r}, not 1")
    return PolyTiltedExp(float(alpha), float(p), norm_const)


@dataclass(frozen=True)
class ModelSpec:
    """Compound Poisson claims, linear premium and an optional Brownian part.

    Attributes:
        claim: claim size law.
        intensity: Poisson rate of claims.
        premium: premium income per unit time.
        sigma: Brownian coefficient.
        alpha: tilt index; the claim family's own alpha for PolyTiltedExp.
    """

    claim: ClaimFamily
    intensity: float
    premium: float
    sigma: float
    alpha: float

    def laplace_exponent(self, theta):
        theta = float(theta)
        if not self.claim.admits(theta):
            raise DomainError(f"theta={theta} beyond the finite-moment boundary {self.claim.moment_boundary}")
        if theta == 0.0:
            return 0.0
        return (0.5 * self.sigma ** 2 * theta ** 2 - self.premium * theta
                + self.intensity * (self.claim.mgf(theta) - 1.0))

    def laplace_exponent_derivative(self, theta):
        theta = float(theta)
        return self.sigma ** 2 * theta - self.premium + self.intensity * self.claim.mgf_derivative(theta)

    @property
    def mean_claim(self):
        return self.claim.mean

    @property
    def drift(self):
        """``E X_1 = intensity * E U - premium``."""
        return self.intensity * self.claim.mean - self.premium

    def to_config(self):
        claim = self.claim.to_config()
        if isinstance(self.claim, Exponential):
            claim["alpha"] = self.alpha
        return {"claim": claim, "lambda": self.intensity, "premium": self.premium, "sigma": self.sigma}

    def config_hash(self):
        return config_hash(self.to_config())


@dataclass(frozen=True)
class FluctConstants:
    """Constants governing the large-jump ruin asymptotics.

    Attributes:
        alpha: tilt index.
        killing_rate: ``q = -psi'(0)``.
        ladder_drift: ``sigma**2 / 2``.
        jump_rate: ``-psi(alpha)``, rate of the exponential time before the big jump.
        overshoot_prob: ``jump_rate / (alpha * q)``, limiting chance the big jump overshoots.
        tail_constant: ``jump_rate * overshoot_prob``.
        kappa_at_minus_alpha: ``kappa(0, -alpha) = jump_rate / alpha``.
    """

    alpha: float
    killing_rate: float
    ladder_drift: float
    jump_rate: float
    overshoot_prob: float
    tail_constant: float
    kappa_at_minus_alpha: float

    def as_dict(self):
        return {
            "alpha": self.alpha,
            "q": self.killing_rate,
            "d_H": self.ladder_drift,
            "A": self.jump_rate,
            "B": self.overshoot_prob,
            "C": self.tail_constant,
            "kappa_0_minus_alpha": self.kappa_at_minus_alpha,
        }


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


_TOP_KEYS = {"claim", "lambda", "premium", "sigma"}
_CLAIM_KEYS = {"PolyTiltedExp": {"variant", "alpha", "p"}, "Exponential": {"variant", "mu", "alpha"}}


def _number(cfg, key, where, positive=True, default=None):
    if key not in cfg:
        if default is not None:
            return default
        raise ConfigError(f"missing key '{where}{key}'")
    val = cfg[key]
    if isinstance(val, bool) or not isinstance(val, Real) or not math.isfinite(val):
        raise ConfigError(f"key '{where}{key}' must be a finite number, got {val!r}")
    val = float(val)
    if positive and val <= 0:
        raise ConfigError(f"key '{where}{key}' must be > 0, got {val!r}")
    if not positive and val < 0:
        raise ConfigError(f"key '{where}{key}' must be >= 0, got {val!r}")
    return val


def _parse_config(config):
    if not isinstance(config, Mapping):
        raise ConfigError("model config must be a JSON object")
    unknown = set(config) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown key '{sorted(unknown)[0]}'")
    claim_cfg = config.get("claim")
    if not isinstance(claim_cfg, Mapping):
        raise ConfigError("missing key 'claim' (object with 'variant')")
    variant = claim_cfg.get("variant")
    if variant not in _CLAIM_KEYS:
        raise ConfigError(f"key 'claim.variant' must be one of {sorted(_CLAIM_KEYS)}, got {variant!r}")
    unknown = set(claim_cfg) - _CLAIM_KEYS[variant]
    if unknown:
        raise ConfigError(f"unknown key 'claim.{sorted(unknown)[0]}' for variant {variant}")
    intensity = _number(config, "lambda", "")
    premium = _number(config, "premium", "")
    sigma = _number(config, "sigma", "", positive=False, default=0.0)
    if variant == "PolyTiltedExp":
        alpha = _number(claim_cfg, "alpha", "claim.")
        p = _number(claim_cfg, "p", "claim.")
        if p <= 1:
            raise ConfigError(f"key 'claim.p' must be > 1, got {p!r}")
        claim = make_poly_tilted_exp(alpha, p)
        declared_alpha = alpha
    else:
        claim = Exponential(_number(claim_cfg, "mu", "claim."))
        declared_alpha = _number(claim_cfg, "alpha", "claim.") if "alpha" in claim_cfg else None
    return claim, intensity, premium, sigma, declared_alpha


def adjustment_coefficient(claim, intensity, premium, sigma):
    """Positive root of ``psi`` for a light-tailed claim law."""
    probe = ModelSpec(claim, intensity, premium, sigma, 0.0)
    hi = claim.moment_boundary * (1.0 - 1e-12)
    return optimize.brentq(probe.laplace_exponent, 1e-12 * claim.moment_boundary, hi, xtol=1e-15)


def build_model(config):
    """Validate a parsed model description and return a ModelSpec.

    For Exponential claims ``claim.alpha`` is optional and defaults to half the
    adjustment coefficient, the deepest tilt at which a strict margin remains.

    Raises:
        ConfigError: malformed description.
        AdmissibilityError: non-positive loading or ``psi(alpha) >= 0``.
        NormalizationError: claim density fails to normalize.
    """
    claim, intensity, premium, sigma, alpha = _parse_config(config)
    if intensity * claim.mean >= premium:
        raise AdmissibilityError(
            f"premium {premium} does not exceed mean claim outflow {intensity * claim.mean:.6g}")
    if alpha is None:
        alpha = 0.5 * adjustment_coefficient(claim, intensity, premium, sigma)
    model = ModelSpec(claim, intensity, premium, sigma, alpha)
    if not claim.admits(alpha):
        raise AdmissibilityError(f"alpha={alpha} lies outside the claim law's moment range")
    psi_alpha = model.laplace_exponent(alpha)
    if not psi_alpha < 0:
        raise AdmissibilityError(f"psi(alpha) = {psi_alpha:.6g} is not negative")
    _check_invariants(model)
    return model


def _check_invariants(model):
    if model.laplace_exponent(0.0) != 0.0:
        raise RuinLevyError("psi(0) must vanish")
    grid = np.linspace(-5.0, model.alpha, 201)
    vals = np.array([model.laplace_exponent(t) for t in grid])
    second = vals[2:] - 2 * vals[1:-1] + vals[:-2]
    if np.min(second) < -1e-12 * (1 + np.max(np.abs(vals))):
        raise RuinLevyError("psi fails the convexity check")
    if not model.drift < 0:
        raise AdmissibilityError("E X_1 must be negative")


def laplace_exponent(m, theta):
    """``psi(theta)``; raises DomainError beyond the moment boundary."""
    return m.laplace_exponent(theta)


def constants(m):
    q = -m.drift
    a = m.alpha
    jump_rate = -m.laplace_exponent(a)
    overshoot_prob = jump_rate / (a * q)
    return FluctConstants(
        alpha=a,
        killing_rate=q,
        ladder_drift=0.5 * m.sigma ** 2,
        jump_rate=jump_rate,
        overshoot_prob=overshoot_prob,
        tail_constant=jump_rate * overshoot_prob,
        kappa_at_minus_alpha=jump_rate / a,
    )


def esscher_tilt(m, theta):
    """Exponentially tilted model with Laplace exponent ``psi(theta + s) - psi(theta)``.

    The result is not re-checked for admissibility: at ``theta == alpha`` the
    tilted process typically has its own exponential-moment boundary at zero.
    """
    theta = float(theta)
    if not 0 < theta <= m.alpha:
        raise DomainError(f"tilt theta={theta} must lie in (0, alpha={m.alpha}]")
    tilted = ModelSpec(
        claim=m.claim.tilt(theta),
        intensity=m.intensity * m.claim.mgf(theta),
        premium=m.premium - m.sigma ** 2 * theta,
        sigma=m.sigma,
        alpha=m.alpha - theta,
    )
    base = m.laplace_exponent(theta)
    lo = -3.0
    for s in np.linspace(lo, m.alpha - theta, 9):
        expected = m.laplace_exponent(theta + s) - base
        got = tilted.laplace_exponent(s)
        if abs(got - expected) > TILT_CHECK_TOL * (1 + abs(expected)):
            raise RuinLevyError(f"tilted exponent mismatch at s={s}: {got} vs {expected}")
    return tilted


def sample_claims(m, rng, n):
    return m.claim.sample(rng, n)


def sample_claim(m, rng):
    return float(m.claim.sample(rng, 1)[0])
