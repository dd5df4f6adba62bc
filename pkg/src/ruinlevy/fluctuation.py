"""Ladder exponents, the renewal function of the ladder height and ruin probabilities.

Local times are normalized so that ``kappa_hat(a, b) = phi_hat(a) + b``; the
ascending exponent ``kappa`` is then the Wiener-Hopf quotient
``(a - psi(-b)) / (phi_hat(a) - b)``. Under this normalization the killing
rate is ``q = -psi'(0)`` and, for ``sigma == 0``, the ladder height Levy
measure has density ``intensity * P(U > x)``.
"""
from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import fft, integrate, optimize

from .errors import ConvergenceError, DomainError, GridError, UnsupportedModel
from .model import constants

SINGULARITY_TOL = 1e-8
BRACKET_LIMIT = 1e3
DEFAULT_STEP = 0.005
DEFAULT_TOL = 1e-6
DEFAULT_TAIL_TOL = 1e-4
DEFAULT_X_CAP = 5000.0


class LadderExponents:
    """Memoized ``phi_hat`` together with ``kappa`` and ``kappa_hat``.

    ``phi_hat(a)`` is the root ``theta >= 0`` of ``psi(-theta) = a``. Results
    are cached under a lock so one instance can be shared between threads.
    """

    normalization = "kappa_hat(a, b) = phi_hat(a) + b"

    def __init__(self, model):
        self.model = model
        self._roots = {0.0: 0.0}
        self._lock = threading.Lock()

    def _solve(self, a):
        psi = self.model.laplace_exponent

        def excess(theta):
            return psi(-theta) - a

        hi = 1.0
        while excess(hi) < 0:
            hi *= 2.0
            if hi > BRACKET_LIMIT:
                raise ConvergenceError(f"no bracket for phi_hat({a}) below {BRACKET_LIMIT}")
        root = optimize.brentq(excess, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        best, best_res = root, abs(excess(root))
        for _ in range(2):
            slope = -self.model.laplace_exponent_derivative(-root)
            root = root - excess(root) / slope
            res = abs(excess(root))
            if res < best_res:
                best, best_res = root, res
        return best

    def phi_hat(self, a):
        a = float(a)
        if a < 0:
            raise DomainError(f"phi_hat needs a >= 0, got {a}")
        cached = self._roots.get(a)
        if cached is not None:
            return cached
        root = self._solve(a)
        with self._lock:
            self._roots[a] = root
        return root

    def kappa(self, a, b):
        a, b = float(a), float(b)
        if a < 0 or b < -self.model.alpha:
            raise DomainError(f"kappa defined for a >= 0 and b >= -alpha={-self.model.alpha}; got ({a}, {b})")
        gap = self.phi_hat(a) - b
        if abs(gap) < SINGULARITY_TOL:
            return -self.model.laplace_exponent_derivative(-b)
        return (a - self.model.laplace_exponent(-b)) / gap

    def kappa_hat(self, a, b):
        return self.phi_hat(a) + float(b)


@lru_cache(maxsize=64)
def ladder(m):
    return LadderExponents(m)


def phi_hat(m, a):
    return ladder(m).phi_hat(a)


def kappa(m, a, b):
    return ladder(m).kappa(a, b)


def kappa_hat(m, a, b):
    return ladder(m).kappa_hat(a, b)


def lundberg_root(m, zeta):
    """Nonnegative ``eta`` with ``kappa_hat(zeta, -eta) = 0``, i.e. ``psi(-eta) = zeta``."""
    return ladder(m).phi_hat(zeta)


def wiener_hopf_residual(m, a, z):
    """Relative residual of ``kappa(a,-z) kappa_hat(a,z) = a - psi(z)``."""
    lad = ladder(m)
    target = a - m.laplace_exponent(z)
    return abs(lad.kappa(a, -z) * lad.kappa_hat(a, z) - target) / (1.0 + abs(target))


@dataclass(frozen=True)
class LadderMeasure:
    """Ladder height Levy measure for ``sigma == 0``: density ``intensity * P(U > x)``."""

    model: object
    drift: float = 0.0

    def density(self, x):
        return self.model.intensity * self.model.claim.tail(x)

    def tail(self, x):
        return self.model.intensity * self.model.claim.integrated_tail(x)

    @property
    def total_mass(self):
        return self.model.intensity * self.model.mean_claim

    def exponent(self, b):
        """``q + int (1 - exp(-b x)) Pi_H(dx)`` by quadrature."""
        q = -self.model.drift
        val, _ = integrate.quad(lambda x: (1.0 - math.exp(-b * x)) * float(self.density(x)), 0.0, np.inf,
                                epsabs=1e-13, epsrel=1e-12, limit=400)
        return q + val


def ladder_levy_measure(m):
    if m.sigma > 0:
        raise UnsupportedModel("ladder height density only available for sigma == 0")
    return LadderMeasure(m)


def _tail_ratio(claim, x, a):
    # int_x^inf e^{a z} Fbar(z) dz / (e^{a x} Fbar(x)), the extrapolation factor
    return float(claim.tail_exp_integral(x, a) / claim.tilted_tail(x, a))


def _solve_scaled_ruin(m, h, x_max, max_iter=500):
    """Solve the scaled defective renewal equation by Neumann iteration.

    With ``S(x) = exp(alpha x) P(ruin from x)`` the equation reads
    ``S = forcing + kernel * S`` with kernel mass ``1 - A/(alpha r) < 1``.
    Convolutions use the trapezoid rule evaluated by FFT.
    """
    a = m.alpha
    n = int(round(x_max / h)) + 1
    x = np.arange(n) * h
    claim = m.claim
    forcing = m.intensity * claim.tilted_integrated_tail(x, a) / m.premium
    kernel = m.intensity * claim.tilted_tail(x, a) / m.premium
    weights = np.full(n, h)
    weights[0] = 0.5 * h
    size = fft.next_fast_len(2 * n, real=True)
    kernel_hat = fft.rfft(kernel * weights, size)
    s = forcing.copy()
    prev = math.inf
    stalled = 0
    for _ in range(max_iter):
        conv = fft.irfft(fft.rfft(s, size) * kernel_hat, size)[:n]
        conv -= 0.5 * h * kernel * s[0]
        new = forcing + conv
        change = float(np.max(np.abs(new - s))) / float(np.max(np.abs(new)))
        s = new
        if change < 1e-16:
            break
        # past the rounding floor the increments stop shrinking
        stalled = stalled + 1 if change >= 0.9 * prev else 0
        if stalled >= 3:
            break
        prev = change
    else:
        raise ConvergenceError("renewal iteration did not settle")
    return x, s


@dataclass(frozen=True, eq=False)
class RenewalTable:
    """Renewal function ``V`` on a uniform grid with ``q * Vbar`` the ruin probability.

    Attributes:
        x: grid ``0, h, ..., x_max``.
        step: grid step ``h``.
        V: renewal function values.
        ruin: ``q * (V(inf) - V(x))``.
        killing_rate: ``q``.
        ladder_prob: chance of a first ladder epoch, ``intensity * E U / premium``.
        alpha: tilt index.
        beyond_mass: extrapolated ``int_{x_max}^inf alpha e^{alpha z} q Vbar(z) dz``.
        tail_kind: ``"claim"`` extrapolates with the claim tail, ``"exponential"`` log-linearly.
    """

    x: np.ndarray
    step: float
    V: np.ndarray
    ruin: np.ndarray
    killing_rate: float
    ladder_prob: float
    alpha: float
    beyond_mass: float
    tail_kind: str
    model: object = field(default=None, repr=False)
    _scaled: np.ndarray = field(default=None, repr=False)
    _tilted_cum: np.ndarray = field(default=None, repr=False)
    _log_ruin: np.ndarray = field(default=None, repr=False)

    @property
    def x_max(self):
        return float(self.x[-1])

    @property
    def scaled(self):
        """``exp(alpha x) * q Vbar(x)`` on the grid."""
        return self._scaled

    def _check(self, u):
        u = np.asarray(u, dtype=float)
        if np.any(u < 0):
            raise DomainError("level must be >= 0")
        if np.any(u > self.x_max + 1e-12):
            raise GridError(f"level beyond tabulated range x_max={self.x_max}")
        return u

    def ruin_probability(self, u):
        u = self._check(u)
        out = np.interp(u, self.x, self.ruin)
        return float(out) if out.ndim == 0 else out

    def renewal(self, x):
        """``V(x)``, zero for ``x < 0``."""
        x = np.asarray(x, dtype=float)
        if np.any(x > self.x_max + 1e-12):
            raise GridError(f"x beyond tabulated range x_max={self.x_max}")
        out = np.where(x < 0, 0.0, np.interp(np.maximum(x, 0), self.x, self.V))
        return float(out) if out.ndim == 0 else out

    @property
    def log_ruin(self):
        return self._log_ruin

    def _terminal_slope(self):
        return self.alpha - (math.log(self._scaled[-1]) - math.log(self._scaled[-2])) / self.step

    def ruin_extended(self, y):
        """Ruin probability on ``[0, inf)``: log-linear on the grid, extrapolated past it."""
        return np.exp(self.log_ruin_extended(y))

    def log_ruin_extended(self, y):
        y = np.asarray(y, dtype=float)
        out = np.interp(np.minimum(y, self.x_max), self.x, self.log_ruin)
        beyond = y > self.x_max
        if np.any(beyond):
            out = np.array(out, dtype=float, copy=True)
            out[beyond] = self._log_extrapolate(y[beyond])
        return float(out) if out.ndim == 0 else out

    def _log_extrapolate(self, y):
        edge = self.log_ruin[-1]
        if self.tail_kind == "claim" and self.model is not None:
            claim, a = self.model.claim, self.alpha
            ratio = np.asarray(claim.tilted_tail(y, a)) / float(claim.tilted_tail(self.x_max, a))
            return edge - a * (y - self.x_max) + np.log(ratio)
        return edge - self._terminal_slope() * (y - self.x_max)

    def tilted_tail_mass(self, d):
        """``int_d^inf alpha e^{alpha z} q Vbar(z) dz`` for ``d >= 0``."""
        d = np.asarray(d, dtype=float)
        inside = np.interp(np.minimum(d, self.x_max), self.x, self._tilted_cum) + self.beyond_mass
        beyond = d > self.x_max
        if np.any(beyond):
            inside = np.array(inside, dtype=float, copy=True)
            inside[beyond] = self._beyond_from(d[beyond])
        return float(inside) if inside.ndim == 0 else inside

    def _beyond_from(self, d):
        a = self.alpha
        if self.tail_kind == "claim" and self.model is not None:
            claim = self.model.claim
            return a * self._scaled[-1] * claim.tail_exp_integral(d, a) / float(claim.tilted_tail(self.x_max, a))
        rate = self._terminal_slope() - a
        return a * self._scaled[-1] * np.exp(-rate * (d - self.x_max)) / rate

    @property
    def sup_mgf_limit(self):
        """``E exp(alpha * overall supremum) = 1 + int_0^inf alpha e^{alpha z} q Vbar(z) dz``."""
        return 1.0 + self.tilted_tail_mass(0.0)

    def to_csv(self, path, meta=None):
        with open(path, "w", newline="") as fh:
            header = {"step": self.step, "killing_rate": self.killing_rate, "ladder_prob": self.ladder_prob,
                      "alpha": self.alpha, "beyond_mass": self.beyond_mass, "tail_kind": self.tail_kind}
            header.update(meta or {})
            for key in sorted(header):
                val = header[key]
                fh.write(f"# {key}={format(val, '.17g') if isinstance(val, float) else val}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["x", "V", "qVbar"])
            for row in zip(self.x, self.V, self.ruin):
                writer.writerow([format(v, ".17g") for v in row])

    @classmethod
    def from_csv(cls, path):
        """Load a table written by ``to_csv``; raises OSError/ValueError on corrupt input."""
        meta = {}
        rows = []
        with open(path, newline="") as fh:
            lines = fh.read().splitlines()
        body = []
        for line in lines:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key] = val
            else:
                body.append(line)
        reader = csv.reader(body)
        header = next(reader, None)
        if header != ["x", "V", "qVbar"]:
            raise ValueError(f"renewal table header must be x,V,qVbar, got {header}")
        for rec in reader:
            if len(rec) != 3:
                raise ValueError(f"malformed renewal table row {rec}")
            rows.append([float(v) for v in rec])
        data = np.array(rows, dtype=float)
        if data.shape[0] < 3 or not np.all(np.isfinite(data)) or np.any(data[:, 2] <= 0):
            raise ValueError("renewal table is empty or contains invalid values")
        try:
            step = float(meta["step"])
            q = float(meta["killing_rate"])
            alpha = float(meta["alpha"])
            scaled = data[:, 2] * np.exp(alpha * data[:, 0])
            table = build_table(data[:, 0], step, scaled, q, float(meta["ladder_prob"]), alpha,
                                beyond_mass=float(meta["beyond_mass"]), tail_kind="exponential")
        except KeyError as exc:
            raise ValueError(f"renewal table missing metadata {exc}") from None
        if np.any(np.diff(data[:, 0]) <= 0) or np.any(np.diff(data[:, 2]) > 1e-15):
            raise ValueError("renewal table grid not increasing or ruin probability not monotone")
        return table


def build_table(x, step, scaled, q, ladder_prob, alpha, beyond_mass, tail_kind, model=None):
    ruin = scaled * np.exp(-alpha * x)
    tilted = alpha * scaled
    # reverse cumulative trapezoid: int_x^{x_max} alpha e^{alpha z} ruin(z) dz
    pieces = 0.5 * step * (tilted[1:] + tilted[:-1])
    cum = np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]])
    return RenewalTable(x=x, step=step, V=(1.0 - ruin) / q, ruin=ruin, killing_rate=q, ladder_prob=ladder_prob,
                        alpha=alpha, beyond_mass=beyond_mass, tail_kind=tail_kind, model=model,
                        _scaled=scaled, _tilted_cum=cum, _log_ruin=np.log(scaled) - alpha * x)


@lru_cache(maxsize=16)
def renewal_table(m, h=DEFAULT_STEP, tol=DEFAULT_TOL, tail_tol=DEFAULT_TAIL_TOL, x_max=50.0, x_cap=DEFAULT_X_CAP):
    """Tabulate ``V`` and the ruin probability ``q Vbar`` for ``sigma == 0``.

    The grid grows until the ruin probability at ``x_max`` is below ``tol``
    and the mass of ``alpha e^{alpha z} q Vbar(z)`` past ``x_max`` is below
    ``tail_tol``. Past the grid the ruin probability is extrapolated in
    proportion to the claim tail (its exact asymptotic shape for
    convolution-equivalent claims), or log-linearly for light tails.

    Raises:
        UnsupportedModel: ``sigma > 0``.
        GridError: the tolerances need ``x_max > x_cap``.
    """
    if m.sigma > 0:
        raise UnsupportedModel("renewal table needs sigma == 0")
    if h > 0.01:
        raise DomainError("grid step must be <= 0.01")
    a = m.alpha
    q = -m.drift
    tail_kind = "claim" if m.claim.convolution_equivalent else "exponential"
    while True:
        if x_max > x_cap:
            raise GridError(f"tolerances not met before x_cap={x_cap}")
        x, scaled = _solve_scaled_ruin(m, h, x_max)
        ruin = scaled * np.exp(-a * x)
        if tail_kind == "claim":
            beyond = a * scaled[-1] * _tail_ratio(m.claim, x[-1], a)
        else:
            rate = -(math.log(scaled[-1]) - math.log(scaled[-2])) / h
            beyond = a * scaled[-1] / rate
        if ruin[-1] < tol and beyond < tail_tol:
            break
        x_max *= 2.0
    return build_table(x, h, scaled, q, m.intensity * m.mean_claim / m.premium, a, beyond, tail_kind, model=m)


def ruin_probability(table, u):
    return table.ruin_probability(u)


def sup_normalization(m, table):
    """``B * (1 + int_0^inf alpha e^{alpha z} q Vbar(z) dz)``, equal to one in theory."""
    return constants(m).overshoot_prob * table.sup_mgf_limit


def renewal_transform(table, b):
    """``int e^{-b x} V(dx)`` from the table, including the atom ``V(0)``."""
    x = table.x
    vals = np.exp(-b * x) * table.V
    body = b * np.trapezoid(vals, x)
    return float(body + math.exp(-b * table.x_max) * table.V[-1])


@dataclass(frozen=True)
class AsymptoticCheck:
    levels: tuple
    ratios: tuple
    target: float

    @property
    def distances(self):
        return tuple(abs(r - self.target) for r in self.ratios)

    @property
    def monotone(self):
        d = self.distances
        return all(d[i + 1] <= d[i] for i in range(len(d) - 1))


def asymptotic_constant_check(m, table, levels):
    """Ratios ``intensity * P(U > u) / (q Vbar(u))`` against their limit ``C``."""
    if m.sigma > 0:
        raise UnsupportedModel("needs sigma == 0")
    levels = tuple(float(u) for u in levels)
    psi = table.ruin_probability(np.array(levels))
    tails = m.intensity * np.asarray(m.claim.tail(np.array(levels)))
    return AsymptoticCheck(levels, tuple(float(v) for v in tails / psi), constants(m).tail_constant)
