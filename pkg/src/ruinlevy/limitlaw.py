"""Limiting laws of ruin-time functionals as the initial reserve grows.

Marginal laws (overshoot, undershoots, the post-jump start ``W0``, ruin
time), closed-form transform limits of discounted penalty functionals, and a
sampler of the limiting path: the tilted process ``Z`` run to an independent
``Exp(A)`` time, one large jump landing at ``W0`` relative to the level, then
the surplus process conditioned to cross zero when ``W0 <= 0``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, stats

from .errors import BudgetError, DomainError, GridError, UnsupportedModel
from .fluctuation import kappa, kappa_hat, renewal_table
from .model import constants, esscher_tilt
from .simulate import HorizonPolicy, _jump_passage_block, conditioned_sampler, map_streams, stream_rng


@dataclass(frozen=True)
class LimitLaw:
    """An evaluable limiting distribution.

    ``tail(x)`` is the mass on ``(x, inf)``. Defective laws have
    ``total_mass < 1``; the missing mass sits at infinity.
    """

    provenance: str
    atom_at_zero: float
    density: Callable
    tail: Callable
    total_mass: float
    support: str = "positive"

    def cdf(self, x):
        """Mass on ``(-inf, x]``."""
        return self.total_mass - self.tail(x)

    def conditional_cdf(self, x):
        """Cdf of the law renormalized to a probability."""
        return self.cdf(x) / self.total_mass

    def evaluate(self, grid):
        """Rows ``(x, atom_flag, density, tail)``; the atom flag marks ``x == 0`` when an atom exists."""
        grid = np.asarray(grid, dtype=float)
        flags = (grid == 0) & (self.atom_at_zero > 0)
        return grid, flags.astype(int), np.asarray(self.density(grid), dtype=float), np.asarray(self.tail(grid), dtype=float)

    def to_csv(self, fh, grid, meta=None):
        for key, val in (meta or {}).items():
            fh.write(f"# {key}={val}\n")
        fh.write(f"# law={self.provenance}\n# total_mass={self.total_mass:.17g}\n")
        fh.write("x,atom_flag,density,tail\n")
        for x, flag, d, t in zip(*self.evaluate(grid)):
            fh.write(f"{x:.17g},{flag},{d:.17g},{t:.17g}\n")

    def mass_check(self):
        """Atom plus quadrature of the density."""
        lo = -np.inf if self.support == "real" else 0.0
        if lo == 0.0:
            body = _quad_pieces(lambda t: float(self.density(t)), 0.0)
        else:
            body = _quad_pieces(lambda t: float(self.density(-t)), 0.0) + _quad_pieces(
                lambda t: float(self.density(t)), 0.0)
        return self.atom_at_zero + body


def _quad_pieces(f, start):
    # break at a few scales so slowly decaying densities integrate cleanly
    edges = [start, start + 1.0, start + 10.0, start + 100.0, np.inf]
    total = 0.0
    with warnings.catch_warnings():
        # roundoff warnings near 1e-13 are irrelevant at the 1e-6 mass tolerance
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for a, b in zip(edges[:-1], edges[1:]):
            total += integrate.quad(f, a, b, epsabs=1e-13, epsrel=1e-11, limit=400)[0]
    return total


def _needs_jump_model(m):
    if m.sigma > 0:
        raise UnsupportedModel("density-level limit laws need sigma == 0")


def overshoot_limit(m):
    """Limit law of ``X_tau - u``: proper, no atom when ``sigma == 0``."""
    _needs_jump_model(m)
    c = constants(m)
    a, b, q, lam, claim = m.alpha, c.overshoot_prob, c.killing_rate, m.intensity, m.claim

    def density(x):
        x = np.asarray(x, dtype=float)
        return np.exp(-a * x) * (b * a + a * lam / q * claim.tail_exp_integral(x, a))

    def tail(x):
        x = np.asarray(x, dtype=float)
        return b * np.exp(-a * x) + lam / q * (np.exp(-a * x) * claim.tail_exp_integral(x, a)
                                               - claim.integrated_tail(x))

    return LimitLaw("overshoot", 0.0, density, tail, 1.0)


def undershoot_limits(m):
    """Limit laws of ``u - X_{tau-}`` and ``u - sup_{t<tau} X_t``.

    Both are defective with mass ``1 - B``: with probability ``B`` the large
    jump starts so far below the level that these distances escape to infinity.
    """
    _needs_jump_model(m)
    c = constants(m)
    a, q, lam, claim = m.alpha, c.killing_rate, m.intensity, m.claim
    mass = 1.0 - c.overshoot_prob

    def u_density(x):
        x = np.asarray(x, dtype=float)
        return lam / q * (claim.tilted_tail(x, a) - claim.tail(x))

    def u_tail(x):
        x = np.asarray(x, dtype=float)
        return lam / q * (claim.tail_exp_integral(x, a) - claim.integrated_tail(x))

    def m_density(y):
        y = np.asarray(y, dtype=float)
        return a * lam / q * claim.tilted_integrated_tail(y, a)

    def m_tail(y):
        y = np.asarray(y, dtype=float)
        return lam / q * (claim.tail_exp_integral(y, a) - claim.tilted_integrated_tail(y, a))

    return (LimitLaw("undershoot", 0.0, u_density, u_tail, mass),
            LimitLaw("max_undershoot", 0.0, m_density, m_tail, mass))


def w0_law(m, table=None):
    """Law of the post-jump start ``W0`` on the real line.

    Density ``B alpha e^{-alpha z}`` for ``z > 0`` and
    ``B alpha e^{alpha |z|} P(ruin from |z|)`` for ``z <= 0``.
    """
    _needs_jump_model(m)
    table = table if table is not None else renewal_table(m)
    c = constants(m)
    a, b = m.alpha, c.overshoot_prob
    neg_mass = b * table.tilted_tail_mass(0.0)

    def density(z):
        z = np.asarray(z, dtype=float)
        pos = b * a * np.exp(-a * np.maximum(z, 0))
        y = np.maximum(-z, 0)
        neg = b * a * np.exp(a * y + table.log_ruin_extended(y))
        return np.where(z > 0, pos, neg)

    def tail(z):
        z = np.asarray(z, dtype=float)
        pos = b * np.exp(-a * np.maximum(z, 0))
        neg = b + b * (table.tilted_tail_mass(0.0) - table.tilted_tail_mass(np.maximum(-z, 0)))
        return np.where(z >= 0, pos, neg)

    return LimitLaw("w0", 0.0, density, tail, b + neg_mass, support="real")


def ruin_time_limit_cdf(m, t, sup_mgf):
    """Limit cdf of the ruin time: ``B int_0^t A e^{-A s} M(t - s) ds``.

    ``sup_mgf`` is a :class:`RunningSupMGF`; ``M`` is linear between its grid
    points and the integral is exact for that interpolant.

    Raises:
        GridError: ``t`` beyond the grid of ``sup_mgf``.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("t must be >= 0")
    if np.any(t > sup_mgf.t[-1] + 1e-12):
        raise GridError(f"running-sup estimates only cover [0, {sup_mgf.t[-1]}]")
    c = constants(m)
    v, mv = sup_mgf.t, sup_mgf.value
    _, values = _ruin_time_nodes(m, sup_mgf)
    flat = np.atleast_1d(t)
    j = np.clip(np.searchsorted(v, flat, side="right") - 1, 0, v.size - 1)
    dv = flat - v[j]
    m_t = np.interp(flat, v, mv)
    out = values[j] * np.exp(-c.jump_rate * dv) + c.overshoot_prob * _segment(mv[j], m_t, dv, c.jump_rate)
    return float(out[0]) if t.ndim == 0 else out


def _segment(m0, m1, dv, rate):
    """``int_0^dv A e^{-A (dv - s)} M(s) ds`` for ``M`` linear from ``m0`` to ``m1``."""
    dv = np.asarray(dv, dtype=float)
    e0 = np.exp(-rate * dv)
    with np.errstate(invalid="ignore", divide="ignore"):
        slope = np.where(dv > 0, (m1 - m0) / np.where(dv > 0, dv, 1.0), 0.0)
    return m0 * (1.0 - e0) + slope * (dv - (1.0 - e0) / rate)


def _ruin_time_nodes(m, sup_mgf):
    c = constants(m)
    rate, b = c.jump_rate, c.overshoot_prob
    v, mv = sup_mgf.t, sup_mgf.value
    # cumulative int_0^{v_j} A e^{A (v - v_j)} M(v) dv, one node at a time
    out = np.zeros(v.size)
    acc = 0.0
    for j in range(1, v.size):
        dv = v[j] - v[j - 1]
        acc = acc * math.exp(-rate * dv) + float(_segment(mv[j - 1], mv[j], dv, rate))
        out[j] = b * acc
    return v, out


def ruin_time_limit(m, sup_mgf):
    """Ruin-time limit as a LimitLaw (tail = 1 - cdf) on the grid of ``sup_mgf``."""
    nodes, values = _ruin_time_nodes(m, sup_mgf)

    def tail(t):
        return 1.0 - np.asarray(ruin_time_limit_cdf(m, t, sup_mgf))

    def density(t):
        return np.interp(np.asarray(t, dtype=float), nodes[:-1], np.diff(values) / np.diff(nodes))

    return LimitLaw("ruin_time", 0.0, density, tail, 1.0)


@dataclass(frozen=True)
class TransformContext:
    """Constants and exponent callables the transform limits are built from.

    Fields may be numbers or symbols; the formulas only use arithmetic.
    """

    alpha: object
    q: object
    A: object
    B: object
    C: object
    kappa: Callable
    kappa_hat: Callable
    psi: Callable


def transform_context(m):
    c = constants(m)
    return TransformContext(m.alpha, c.killing_rate, c.jump_rate, c.overshoot_prob, c.tail_constant,
                            lambda a, b: kappa(m, a, b), lambda a, b: kappa_hat(m, a, b), m.laplace_exponent)


def prior_max_joint(ctx, nu, zeta, eta, lam):
    """Limit of ``E e^{-nu G - zeta (tau - G) - eta overshoot - lam sup_before}``."""
    a = ctx.alpha
    return ctx.C * a * ctx.kappa(zeta, -a) / ((a + eta) * (zeta + ctx.A) * ctx.kappa(nu, lam - a))


def max_undershoot_joint(ctx, nu, zeta, eta, lam):
    """Limit of ``E e^{-nu G - zeta (tau - G) - eta overshoot - lam (u - sup_before)}``."""
    a = ctx.alpha
    return (ctx.C * a * (ctx.kappa(zeta, lam - a) - ctx.kappa(zeta, eta))
            / ((ctx.A + nu) * (lam - a - eta) * ctx.kappa(nu, -a)))


def ladder_times_overshoot(ctx, nu, zeta, eta):
    """Limit of ``E e^{-nu G - zeta (tau - G) - eta overshoot}``."""
    a = ctx.alpha
    k_minus = ctx.kappa(zeta, -a)
    return (ctx.C * a / ((a + eta) * ctx.kappa(nu, -a))
            * (k_minus / (ctx.A + zeta) + (ctx.kappa(zeta, eta) - k_minus) / (ctx.A + nu)))


def ruin_time_overshoot(ctx, zeta, eta):
    """Limit of ``E e^{-zeta tau - eta overshoot}``."""
    a = ctx.alpha
    return ctx.C * a * ctx.kappa(zeta, eta) / ((a + eta) * (ctx.A + zeta) * ctx.kappa(zeta, -a))


def prior_max_transform(ctx, lam):
    """Limit of ``E e^{-lam sup_before}``; tends to ``B`` as ``lam -> 0``."""
    a = ctx.alpha
    return ctx.B * ctx.kappa(0, -a) / ctx.kappa(0, lam - a)


def prior_max_mgf_growth(ctx, lam):
    """Limit of ``e^{-lam u} E e^{lam sup_before}``."""
    a = ctx.alpha
    return a * (ctx.kappa(0, lam - a) - ctx.q) / ((lam - a) * ctx.q)


def pre_ruin_position(ctx, nu, zeta, eta, theta):
    """Limit of ``E e^{-nu G - zeta (tau - G) - eta overshoot - theta X_{tau-}}``."""
    a = ctx.alpha
    return ctx.C * a / ((a + eta) * ctx.kappa(nu, theta - a) * ctx.kappa_hat(zeta, a - theta))


def undershoot_mgf_growth(ctx, zeta, eta, theta):
    """Limit of ``e^{-theta u} E e^{-zeta tau - eta overshoot + theta (u - X_{tau-})}``."""
    a = ctx.alpha
    return ctx.C * a / ((a + eta) * (zeta - ctx.psi(a - theta)))


EDPF = {
    "prior_max_joint": (prior_max_joint, ("nu", "zeta", "eta", "lam")),
    "max_undershoot_joint": (max_undershoot_joint, ("nu", "zeta", "eta", "lam")),
    "ladder_times_overshoot": (ladder_times_overshoot, ("nu", "zeta", "eta")),
    "ruin_time_overshoot": (ruin_time_overshoot, ("zeta", "eta")),
    "prior_max_transform": (prior_max_transform, ("lam",)),
    "prior_max_mgf_growth": (prior_max_mgf_growth, ("lam",)),
    "pre_ruin_position": (pre_ruin_position, ("nu", "zeta", "eta", "theta")),
    "undershoot_mgf_growth": (undershoot_mgf_growth, ("zeta", "eta", "theta")),
}


def _check_domain(name, alpha, p):
    def need(cond, text):
        if not cond:
            raise DomainError(f"{name}: requires {text}")

    for key in ("nu", "zeta"):
        if key in p:
            need(p[key] >= 0, f"{key} >= 0")
    if "eta" in p:
        need(p["eta"] > -alpha, "eta > -alpha")
    if "lam" in p:
        need(p["lam"] > 0, "lam > 0")
    if name == "max_undershoot_joint":
        need(abs(p["lam"] - alpha - p["eta"]) > 1e-12, "lam != alpha + eta")
    if name == "prior_max_mgf_growth":
        need(abs(p["lam"] - alpha) > 1e-12, "lam != alpha")
    if "theta" in p:
        need(0 < p["theta"] < alpha, "0 < theta < alpha")
        need(p["theta"] - p["eta"] < alpha, "theta - eta < alpha")


def edpf_limit(m, name, **params):
    """Evaluate the named transform limit.

    Raises:
        DomainError: unknown name, missing parameter or excluded combination.
    """
    if name not in EDPF:
        raise DomainError(f"unknown transform {name!r}; choose from {sorted(EDPF)}")
    func, keys = EDPF[name]
    missing = [k for k in keys if k not in params]
    extra = sorted(set(params) - set(keys))
    if missing or extra:
        raise DomainError(f"{name} takes parameters {keys}; missing {missing}, unexpected {extra}")
    vals = {k: float(params[k]) for k in keys}
    _check_domain(name, m.alpha, vals)
    return float(func(transform_context(m), **vals))


def edpf_limits(m, name, **params):
    return edpf_limit(m, name, **params)


DECOMP_FIELDS = ("rho", "g_z", "z_pre", "z_bar", "w0", "tau_w", "g_w", "w_at_tau", "w_bar", "w_pre", "ruin_time")


@dataclass(eq=False)
class DecompositionSet:
    """Columnar samples of the limiting path decomposition."""

    stream_id: np.ndarray
    values: dict
    truncated_mass: float = 0.0

    def __len__(self):
        return int(self.stream_id.size)

    def __getitem__(self, key):
        return self.values[key]

    def to_csv(self, fh, meta=None):
        for key, val in (meta or {}).items():
            fh.write(f"# {key}={val}\n")
        fh.write(",".join(("stream_id",) + DECOMP_FIELDS) + "\n")
        cols = [self.values[k] for k in DECOMP_FIELDS]
        for i in range(len(self)):
            fh.write(",".join([str(int(self.stream_id[i]))] + [f"{c[i]:.17g}" for c in cols]) + "\n")


def _sample_w0(rng, n, b_mass, neg_total, table, m):
    """Inverse-cdf draws of ``W0``; beyond the grid the claim-tail extrapolation is sampled exactly."""
    a = m.alpha
    total = b_mass + neg_total
    out = np.empty(n)
    pick = rng.random(n) * total
    pos = pick < b_mass
    out[pos] = rng.standard_exponential(int(pos.sum())) / a
    neg = np.flatnonzero(~pos)
    # cumulative mass of alpha e^{alpha y} ruin(y) on [0, y] along the grid
    cum = table.tilted_tail_mass(0.0) - (table._tilted_cum + table.beyond_mass)
    cum_grid = cum * b_mass
    grid_top = cum_grid[-1]
    level = pick[neg] - b_mass
    inside = level <= grid_top
    ys = np.empty(neg.size)
    ys[inside] = np.interp(level[inside], cum_grid, table.x)
    far = np.flatnonzero(~inside)
    for i in far:
        ys[i] = _sample_beyond(rng, table, m)
    out[neg] = -ys
    return out


def _sample_beyond(rng, table, m):
    a, x0 = m.alpha, table.x_max
    if table.tail_kind == "claim" and getattr(m.claim, "p", None) is not None:
        p, alpha = m.claim.p, m.claim.alpha
        from .model import poly_exp_integral

        # target density proportional to J_p(y); envelope (1+y)^{-p}/alpha on (x0, inf)
        while True:
            y = (1.0 + x0) * rng.random() ** (-1.0 / (p - 1.0)) - 1.0
            if rng.random() < alpha * poly_exp_integral(y, p, 0, alpha) * (1.0 + y) ** p:
                return y
    rate = table._terminal_slope() - a
    return x0 + rng.standard_exponential() / rate


def _z_block(tilted, rng, rho):
    """Tilted path on ``[0, rho)``: (time of last sup, position, sup) just before ``rho``."""
    n = rho.size
    r, lam = tilted.premium, tilted.intensity
    pos = np.zeros(n)
    last = np.zeros(n)
    sup = np.zeros(n)
    g = np.zeros(n)
    due = rng.standard_exponential(n) / lam
    live = np.flatnonzero(due < rho)
    while live.size:
        post = pos[live] - r * (due[live] - last[live]) + tilted.claim.sample(rng, live.size)
        pos[live] = post
        last[live] = due[live]
        up = post > sup[live]
        sup[live[up]] = post[up]
        g[live[up]] = due[live[up]]
        due[live] += rng.standard_exponential(live.size) / lam
        live = live[due[live] < rho[live]]
    return g, pos - r * (rho - last), sup


def _decomp_task(args):
    m, table, seed, stream, n, method, max_attempts = args
    rng = stream_rng(seed, stream)
    c = constants(m)
    tilted = esscher_tilt(m, m.alpha)
    vals = {k: np.full(n, np.nan) for k in DECOMP_FIELDS}
    rho = rng.standard_exponential(n) / c.jump_rate
    vals["rho"] = rho
    vals["g_z"], vals["z_pre"], vals["z_bar"] = _z_block(tilted, rng, rho)
    b = c.overshoot_prob
    w0 = _sample_w0(rng, n, b, b * table.tilted_tail_mass(0.0), table, m)
    vals["w0"] = w0
    up = w0 > 0
    vals["tau_w"][up] = 0.0
    vals["g_w"][up] = 0.0
    vals["w_at_tau"][up] = w0[up]
    sampler = conditioned_sampler(m, table) if method == "exact" else None
    for i in np.flatnonzero(~up):
        if sampler is not None:
            tau, g, over, under, _, xbar = sampler.path(rng, 0.0, w0[i])
        else:
            tau, g, over, under, xbar = _rejection_w(m, rng, -w0[i], max_attempts)
        vals["tau_w"][i], vals["g_w"][i] = tau, g
        vals["w_at_tau"][i], vals["w_pre"][i], vals["w_bar"][i] = over, -under, xbar
    vals["ruin_time"] = rho + np.where(up, 0.0, vals["tau_w"])
    return np.full(n, stream, dtype=np.int64), vals


def _rejection_w(m, rng, depth, max_attempts):
    # X from -depth conditioned to cross 0, by repetition; shift so the level is depth
    policy = HorizonPolicy(cutoff=20.0 / m.alpha)
    tried = 0
    batch = 64
    while tried < max_attempts:
        ruined, out, _ = _jump_passage_block(m, depth, rng, batch, policy)
        tried += batch
        hit = np.flatnonzero(ruined)
        if hit.size:
            i = hit[0]
            return (out["tau"][i], out["g_prior"][i], out["overshoot"][i], out["undershoot"][i],
                    out["xbar_prior"][i] - depth)
        batch = min(batch * 2, 1 << 16)
    raise BudgetError(f"no crossing from depth {depth} in {max_attempts} attempts", achieved=0)


def decomposition_sampler(m, n, seed=0, table=None, method="exact", workers=1, block=1024,
                          max_attempts=10 ** 7):
    """Draw ``n`` samples of the limiting path decomposition.

    ``method="exact"`` runs the conditioned leg ``W`` with the exact
    conditioned sampler; ``"rejection"`` repeats unconditioned paths until one
    crosses (cost grows like the reciprocal ruin probability of ``|W0|``).
    """
    _needs_jump_model(m)
    table = table if table is not None else renewal_table(m)
    tasks = [(m, table, seed, s, min(block, n - start), method, max_attempts)
             for s, start in enumerate(range(0, n, block))]
    parts = map_streams(_decomp_task, tasks, workers)
    if not parts:
        return DecompositionSet(np.zeros(0, dtype=np.int64), {k: np.zeros(0) for k in DECOMP_FIELDS})
    ids = np.concatenate([p[0] for p in parts])
    vals = {k: np.concatenate([p[1][k] for p in parts]) for k in DECOMP_FIELDS}
    return DecompositionSet(ids, vals, truncated_mass=0.0)


def distance_correlation(x, y):
    """Bias-corrected squared distance correlation (near zero under independence)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    if n < 4:
        raise DomainError("distance correlation needs at least 4 points")

    def centred(v):
        d = np.abs(v[:, None] - v[None, :])
        row = d.sum(axis=1) / (n - 2)
        tot = d.sum() / ((n - 1) * (n - 2))
        out = d - row[:, None] - row[None, :] + tot
        np.fill_diagonal(out, 0.0)
        return out

    a, b = centred(x), centred(y)
    scale = n * (n - 3)
    xy = (a * b).sum() / scale
    xx = (a * a).sum() / scale
    yy = (b * b).sum() / scale
    if xx <= 0 or yy <= 0:
        return 0.0
    return float(xy / math.sqrt(xx * yy))


def joint_jump_law_check(samples, m, table=None, threshold=0.01, subsample=2000):
    """Check that ``W0`` is independent of ``(rho, Z_{rho-})`` and the marginal forms.

    Returns a dict with KS distances of ``rho`` against ``Exp(A)`` and ``W0``
    against its law, pairwise bias-corrected distance correlations, and the
    standardized error of the mean of ``Z_{rho-}`` against ``psi'(alpha)/A``.
    """
    from .validate import ks_two_sample

    c = constants(m)
    law = w0_law(m, table)
    rho, z, w0 = samples["rho"], samples["z_pre"], samples["w0"]
    k = min(subsample, len(samples))
    pairs = {"rho_z": (rho[:k], z[:k]), "rho_w0": (rho[:k], w0[:k]), "z_w0": (z[:k], w0[:k])}
    dcor = {name: distance_correlation(a, b) for name, (a, b) in pairs.items()}
    # rho and Z_{rho-} are dependent by construction; the jump target must be independent of both
    out = {
        "rho_ks": ks_two_sample(rho, stats.expon(scale=1.0 / c.jump_rate).cdf),
        "w0_ks": ks_two_sample(w0, lambda v: law.cdf(v) / law.total_mass),
        "dcor": dcor,
        "independent": abs(dcor["rho_w0"]) <= threshold and abs(dcor["z_w0"]) <= threshold,
        "threshold": threshold,
    }
    try:
        target = m.laplace_exponent_derivative(m.alpha) / c.jump_rate
        out["z_mean"] = float(np.mean(z))
        out["z_mean_target"] = target
        out["z_mean_z"] = float((np.mean(z) - target) / (np.std(z) / math.sqrt(z.size)))
    except DomainError:
        out["z_mean_target"] = math.nan
    return out
