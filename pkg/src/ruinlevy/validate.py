"""Statistical comparisons of simulation output against identities and limit laws.

Reports come in two kinds. ``identity`` reports check relations that hold
exactly, so a failure points at a bug. ``asymptotic`` reports compare
finite-``u`` simulation against a limit and carry explicit slack.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import stats

from . import __version__
from .errors import EmptyInput
from .fluctuation import lundberg_root, renewal_table, sup_normalization, wiener_hopf_residual
from .limitlaw import edpf_limit, overshoot_limit, ruin_time_limit_cdf, undershoot_limits
from .model import Exponential
from .simulate import conditioned_ensemble, running_sup_mgf, simulate_paths

# standard deviation of the Kolmogorov limit law of sqrt(n) * D_n
KS_SD = 0.2604


def ks_two_sample(a, b):
    """Sup distance between the empirical cdf of ``a`` and ``b``.

    ``b`` may be a second sample or a callable cdf. Both empirical cdfs are
    right-continuous, so tied values are handled exactly.

    Raises:
        EmptyInput: either sample is empty.
    """
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        raise EmptyInput("first sample is empty")
    if callable(b):
        return float(stats.kstest(a, b).statistic)
    b = np.asarray(b, dtype=float)
    if b.size == 0:
        raise EmptyInput("second sample is empty")
    return float(stats.ks_2samp(a, b).statistic)


def wasserstein_to_cdf(a, cdf, tail=None):
    """1-Wasserstein distance between a sample and a cdf on ``[0, inf)``.

    ``tail`` (complementary cdf) is integrated past the largest draw when given.
    """
    a = np.sort(np.asarray(a, dtype=float))
    if a.size == 0:
        raise EmptyInput("sample is empty")
    lo = min(0.0, a[0])
    grid = np.union1d(a, np.linspace(lo, a[-1], 20001))
    emp = np.searchsorted(a, grid, side="right") / a.size
    body = float(np.trapezoid(np.abs(emp - np.asarray(cdf(grid))), grid))
    if tail is not None:
        from scipy import integrate

        extra, _ = integrate.quad(lambda x: float(tail(x)), a[-1], np.inf, limit=200)
        body += extra
    return body


def wasserstein_two_sample(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise EmptyInput("empty sample")
    return float(stats.wasserstein_distance(a, b))


@dataclass(frozen=True)
class Thresholds:
    """Every pass/fail cut used by the suites; override from a JSON file."""

    wiener_hopf: float = 1e-10
    lundberg: float = 1e-10
    sup_normalization: float = 1e-4
    renewal_limit: float = 1e-6
    exponential_oracle: float = 1e-5
    pk_se: float = 3.0
    pk_bias: float = 1e-4
    transform_se: float = 3.0
    transform_slack: float = 0.1
    marginal_ks: float = 0.05
    undershoot_ks: float = 0.07
    trend_se: float = 2.0
    min_paths: int = 1000

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            raw = json.load(fh)
        names = {f.name for f in fields(cls)}
        bad = sorted(set(raw) - names)
        if bad:
            from .errors import ConfigError

            raise ConfigError(f"unknown threshold keys {bad}")
        return cls(**raw)


@dataclass
class ComparisonReport:
    """One named check; ``passed`` is exactly ``statistic <= threshold``."""

    name: str
    kind: str
    statistic: float
    threshold: float
    statistic_kind: str
    levels: tuple = ()
    sizes: tuple = ()
    bias_bound: float = 0.0
    seeds: tuple = ()
    config_hash: str = ""
    underpowered: bool = False
    details: dict = field(default_factory=dict)
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = bool(self.statistic <= self.threshold)

    def as_dict(self):
        out = asdict(self)
        out["levels"] = list(self.levels)
        out["sizes"] = list(self.sizes)
        out["seeds"] = list(self.seeds)
        return out


def _report(m, name, kind, statistic, threshold, statistic_kind, **extra):
    return ComparisonReport(name=name, kind=kind, statistic=float(statistic), threshold=float(threshold),
                            statistic_kind=statistic_kind, config_hash=m.config_hash(), **extra)


def identity_suite(m, thresholds=None, seed=0, pk_levels=(1.0, 2.0, 5.0), pk_n=10 ** 6, workers=1, table=None):
    """Exact identities: Wiener-Hopf, Lundberg roots, normalizations and the ruin formula against MC."""
    th = thresholds or Thresholds()
    a = m.alpha
    reports = []
    worst = max(wiener_hopf_residual(m, k, z) for k in (0.0, 0.5, 1.0) for z in (0.0, a / 4, a / 2, a))
    reports.append(_report(m, "wiener_hopf_grid", "identity", worst, th.wiener_hopf, "max relative residual"))
    lund = max(abs(m.laplace_exponent(-lundberg_root(m, z)) - z) for z in (0.1, 0.5, 1.0, 2.0))
    reports.append(_report(m, "lundberg_roots", "identity", lund, th.lundberg, "max abs residual"))
    if m.sigma > 0:
        return reports
    table = table or renewal_table(m)
    reports.append(_report(m, "sup_normalization", "identity", abs(sup_normalization(m, table) - 1.0),
                           th.sup_normalization, "abs error"))
    reports.append(_report(m, "renewal_limit", "identity", abs(table.killing_rate * table.V[-1] - 1.0),
                           th.renewal_limit, "abs error", details={"x_max": table.x_max}))
    for name, kwargs in (("ladder_times_overshoot", dict(nu=0, zeta=0, eta=0)),
                         ("ruin_time_overshoot", dict(zeta=0, eta=0))):
        reports.append(_report(m, f"{name}_at_zero", "identity", abs(edpf_limit(m, name, **kwargs) - 1.0),
                               1e-10, "abs error"))
    if isinstance(m.claim, Exponential):
        reports.append(_exponential_oracle(m, table, th))
    for u in pk_levels:
        reports.append(pk_compare(m, u, pk_n, seed, table, th, workers))
    return reports


def _exponential_oracle(m, table, th):
    mu, lam, r = m.claim.mu, m.intensity, m.premium
    rho = lam / (mu * r)
    u = table.x[table.x <= 20.0]
    exact = rho * np.exp(-(mu - lam / r) * u)
    err = float(np.max(np.abs(table.ruin_probability(u) - exact)))
    return _report(m, "exponential_closed_form", "identity", err, th.exponential_oracle, "max abs error",
                   details={"range": [0.0, 20.0]})


def pk_compare(m, u, n, seed, table, th, workers=1):
    """Monte Carlo ruin frequency against the tabulated ruin probability."""
    samples, _ = simulate_paths(m, u, n, seed, workers=workers)
    freq = float(np.mean(samples.ruined))
    exact = table.ruin_probability(u)
    se = math.sqrt(exact * (1 - exact) / n)
    bias = float(table.ruin_extended(u + 20.0 / m.alpha)) / exact
    return _report(m, f"ruin_formula_vs_mc_u{u:g}", "identity", abs(freq - exact) / se, th.pk_se, "|diff|/SE",
                   levels=(u,), sizes=(n,), seeds=(seed,), bias_bound=bias,
                   details={"frequency": freq, "exact": exact, "se": se, "bias_ok": bias <= th.pk_bias})


def transform_compare(m, u, zeta, eta, n, seed=0, thresholds=None, ensemble=None, workers=1):
    """Empirical ``E e^{-zeta tau - eta overshoot}`` over ruined paths against its limit."""
    th = thresholds or Thresholds()
    samples, rep = ensemble if ensemble is not None else conditioned_ensemble(m, u, n, seed=seed, workers=workers)
    tau, over = samples["tau"][samples.ruined], samples["overshoot"][samples.ruined]
    vals = np.exp(-zeta * tau - eta * over)
    mean = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else math.inf
    limit = edpf_limit(m, "ruin_time_overshoot", zeta=zeta, eta=eta)
    return _report(m, f"ruin_time_overshoot_transform_u{u:g}_zeta{zeta:g}_eta{eta:g}", "asymptotic",
                   abs(mean - limit), th.transform_se * se + th.transform_slack * abs(limit), "|diff|",
                   levels=(u,), sizes=(int(vals.size),), seeds=(rep.seed,), bias_bound=rep.bias_bound,
                   underpowered=vals.size < th.min_paths,
                   details={"empirical": mean, "se": se, "limit": limit})


def _bounded_cdf(law, cap):
    # limit law conditioned on the bounded event {value <= cap}
    mass = float(law.cdf(cap))
    return lambda x: np.clip(np.asarray(law.cdf(np.minimum(x, cap))) / mass, 0.0, 1.0)


def marginal_limit_suite(m, levels, n, seed=0, thresholds=None, sup_mgf=None, workers=1, ensembles=None,
                         sup_n=10 ** 5):
    """Finite-``u`` marginals against their limits, plus a trend check across ``levels``.

    Overshoot and ruin time are compared directly. Undershoots are compared on
    the event that they stay below ``u/2``, since the escaping mass drifts to
    infinity with ``u``.
    """
    th = thresholds or Thresholds()
    levels = tuple(float(u) for u in levels)
    over_law = overshoot_limit(m)
    under_law, maxu_law = undershoot_limits(m)
    ensembles = dict(ensembles or {})
    for u in levels:
        if u not in ensembles:
            ensembles[u] = conditioned_ensemble(m, u, n, seed=seed, workers=workers)
    if sup_mgf is None:
        horizon = max(float(np.max(s["tau"][s.ruined])) for s, _ in ensembles.values() if len(s)) if any(
            len(s) for s, _ in ensembles.values()) else 1.0
        grid = np.linspace(0.0, max(horizon, 1.0) * 1.01, int(max(horizon, 1.0) * 50) + 2)
        sup_mgf = running_sup_mgf(m, grid, sup_n, seed=seed, workers=workers)

    def ruin_cdf(t):
        return ruin_time_limit_cdf(m, np.minimum(t, sup_mgf.t[-1]), sup_mgf)

    reports = []
    dist = {}
    for u in levels:
        samples, rep = ensembles[u]
        keep = samples.ruined
        size = int(keep.sum())
        low = size < th.min_paths
        meta = dict(levels=(u,), sizes=(size,), seeds=(rep.seed,), bias_bound=rep.bias_bound, underpowered=low)
        if size == 0:
            continue
        over = samples["overshoot"][keep]
        d = ks_two_sample(over, over_law.cdf)
        w1 = wasserstein_to_cdf(over, over_law.cdf, over_law.tail)
        dist[("overshoot", u)] = (d, size)
        reports.append(_report(m, f"overshoot_u{u:g}", "asymptotic", d, th.marginal_ks, "KS",
                               details={"wasserstein1": w1}, **meta))
        tau = samples["tau"][keep]
        d = ks_two_sample(tau, ruin_cdf)
        dist[("ruin_time", u)] = (d, size)
        reports.append(_report(m, f"ruin_time_u{u:g}", "asymptotic", d, th.marginal_ks, "KS",
                               details={"wasserstein1": wasserstein_to_cdf(tau, ruin_cdf)}, **meta))
        for key, law in (("undershoot", under_law), ("max_undershoot", maxu_law)):
            vals = samples[key][keep]
            vals = vals[vals <= u / 2]
            if vals.size == 0:
                continue
            d = ks_two_sample(vals, _bounded_cdf(law, u / 2))
            dist[(key, u)] = (d, int(vals.size))
            reports.append(_report(m, f"{key}_bounded_u{u:g}", "asymptotic", d, th.undershoot_ks, "KS",
                                   levels=(u,), sizes=(int(vals.size),), seeds=(rep.seed,),
                                   bias_bound=rep.bias_bound, underpowered=vals.size < th.min_paths,
                                   details={"event": f"value <= {u / 2:g}",
                                            "escaping_fraction": 1.0 - vals.size / size}))
    if len(levels) > 1:
        first, last = levels[0], levels[-1]
        for key in ("overshoot", "ruin_time"):
            if (key, first) in dist and (key, last) in dist:
                (d0, n0), (d1, n1) = dist[(key, first)], dist[(key, last)]
                se = KS_SD * math.sqrt(1.0 / n0 + 1.0 / n1)
                reports.append(_report(m, f"{key}_trend_u{first:g}_to_u{last:g}", "asymptotic", d1 - d0,
                                       th.trend_se * se, "KS increase", levels=(first, last), sizes=(n0, n1),
                                       seeds=(seed,), underpowered=min(n0, n1) < th.min_paths,
                                       details={"distance_first": d0, "distance_last": d1, "se": se}))
    return reports


def summarize(reports):
    """``(identity_ok, asymptotic_ok, underpowered)`` over a list of reports."""
    ident = all(r.passed for r in reports if r.kind == "identity")
    asym = all(r.passed or r.underpowered for r in reports if r.kind == "asymptotic")
    return ident, asym, any(r.underpowered for r in reports)


def reports_to_json(reports, meta=None):
    payload = {"version": __version__, "meta": meta or {}, "reports": [r.as_dict() for r in reports]}
    return json.dumps(payload, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serializable: {type(v)}")


def reports_to_markdown(reports, meta=None):
    lines = ["# Validation report", ""]
    for key, val in sorted((meta or {}).items()):
        lines.append(f"- {key}: `{val}`")
    lines += ["", "| check | kind | statistic | threshold | result |", "|---|---|---|---|---|"]
    for r in reports:
        verdict = "pass" if r.passed else ("underpowered" if r.underpowered else "FAIL")
        lines.append(f"| {r.name} | {r.kind} | {r.statistic:.6g} | {r.threshold:.6g} | {verdict} |")
    return "\n".join(lines) + "\n"
