"""Path simulation, first-passage records and ruin-conditioned ensembles.

Random streams: stream ``i`` of master seed ``s`` is
``Generator(PCG64(SeedSequence(s, spawn_key=(i,))))``. Work is cut into
fixed-size blocks, one stream per block, so results do not depend on the
number of worker processes.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize

from .errors import BudgetError, DomainError, PolicyError, UnsupportedModel
from .fluctuation import renewal_table
from .model import esscher_tilt

COLUMNS = ("stream_id", "ruined", "tau", "g_prior", "tau_minus_g", "overshoot", "undershoot",
           "max_undershoot", "xbar_prior")
FLOAT_FIELDS = COLUMNS[2:]
DEFAULT_BLOCK = 4096
DEFAULT_EVENT_BUDGET = 10 ** 8
EULER_STEP = 1e-3
REJECTION_FLOOR = 1e-4
REJECTION_ATTEMPTS = 2 * 10 ** 6


def stream_rng(seed, stream):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))


def map_streams(func, tasks, workers=1):
    """Apply ``func`` to each task, in order. Uses processes when ``workers > 1``."""
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, tasks))


@dataclass(frozen=True)
class HorizonPolicy:
    """Stopping rule for unconditioned paths.

    Attributes:
        cutoff: abandon a path once its position drops below ``-cutoff``.
        max_events: per-path event cap; exceeding it raises PolicyError.
    """

    cutoff: float
    max_events: int = 10 ** 6


def default_policy(m):
    return HorizonPolicy(cutoff=20.0 / m.alpha)


@dataclass(frozen=True)
class RuinPathSample:
    """One first-passage record above level ``u``. Unruined paths carry NaN fields."""

    stream_id: int
    ruined: bool
    tau: float
    g_prior: float
    tau_minus_g: float
    overshoot: float
    undershoot: float
    max_undershoot: float
    xbar_prior: float
    seed: int | None = None


@dataclass(eq=False)
class SampleSet:
    """Columnar collection of first-passage records in stream order."""

    stream_id: np.ndarray
    ruined: np.ndarray
    values: dict
    seed: int | None = None

    def __len__(self):
        return int(self.stream_id.size)

    def __getitem__(self, name):
        return self.values[name]

    def __iter__(self):
        for i in range(len(self)):
            yield RuinPathSample(int(self.stream_id[i]), bool(self.ruined[i]),
                                 *(float(self.values[k][i]) for k in FLOAT_FIELDS), seed=self.seed)

    def select(self, mask):
        return SampleSet(self.stream_id[mask], self.ruined[mask],
                         {k: v[mask] for k, v in self.values.items()}, self.seed)

    @classmethod
    def empty(cls, seed=None):
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=bool),
                   {k: np.zeros(0) for k in FLOAT_FIELDS}, seed)

    @classmethod
    def concat(cls, parts, seed=None):
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty(seed)
        return cls(np.concatenate([p.stream_id for p in parts]), np.concatenate([p.ruined for p in parts]),
                   {k: np.concatenate([p.values[k] for p in parts]) for k in FLOAT_FIELDS}, seed)

    def to_csv(self, fh, meta=None):
        for key in sorted(meta or {}):
            fh.write(f"# {key}={meta[key]}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        cols = [self.values[k] for k in FLOAT_FIELDS]
        for i in range(len(self)):
            writer.writerow([int(self.stream_id[i]), int(self.ruined[i])] + [format(c[i], ".17g") for c in cols])

    def to_csv_string(self, meta=None):
        buf = io.StringIO()
        self.to_csv(buf, meta)
        return buf.getvalue()


def _blank(n):
    return {k: np.full(n, np.nan) for k in FLOAT_FIELDS}


def _record(out, idx, tau, g, pre, post, xbar, u):
    out["tau"][idx] = tau
    out["g_prior"][idx] = g
    out["tau_minus_g"][idx] = tau - g
    out["overshoot"][idx] = post - u
    out["undershoot"][idx] = u - pre
    out["max_undershoot"][idx] = u - xbar
    out["xbar_prior"][idx] = xbar


def _jump_passage_block(m, u, rng, n, policy):
    """Exact event-driven passage for ``sigma == 0``.

    Between claims the path falls linearly, so the supremum is only renewed at
    claim instants and the level can only be crossed by a jump.
    """
    r, lam = m.premium, m.intensity
    pos = np.zeros(n)
    clock = np.zeros(n)
    xbar = np.zeros(n)
    g = np.zeros(n)
    ruined = np.zeros(n, dtype=bool)
    out = _blank(n)
    stop = np.full(n, np.nan)
    live = np.arange(n)
    steps = events = 0
    while live.size:
        k = live.size
        gaps = rng.standard_exponential(k) / lam
        sizes = m.claim.sample(rng, k)
        events += k
        pre = pos[live] - r * gaps
        when = clock[live] + gaps
        lost = pre < -policy.cutoff
        if lost.any():
            idx = live[lost]
            stop[idx] = clock[idx] + (pos[idx] + policy.cutoff) / r
        post = pre + sizes
        hit = ~lost & (post > u)
        if hit.any():
            idx = live[hit]
            ruined[idx] = True
            _record(out, idx, when[hit], g[idx], pre[hit], post[hit], xbar[idx], u)
        go = ~lost & ~hit
        idx = live[go]
        pos[idx] = post[go]
        clock[idx] = when[go]
        up = post[go] > xbar[idx]
        xbar[idx[up]] = post[go][up]
        g[idx[up]] = when[go][up]
        live = idx
        steps += 1
        if live.size and steps >= policy.max_events:
            raise PolicyError(f"{live.size} paths undecided after {steps} events")
    out["stop_time"] = stop
    return ruined, out, events


def _diffusive_passage_block(m, u, rng, n, policy, step=EULER_STEP):
    """Euler skeleton with Brownian-bridge maxima for ``sigma > 0`` (approximate).

    Each step draws the bridge maximum exactly given its end points; crossing
    by the maximum is a creeping ruin (zero overshoot). At most one claim is
    applied per step, at its end.
    """
    r, lam, sig = m.premium, m.intensity, m.sigma
    pos = np.zeros(n)
    clock = np.zeros(n)
    xbar = np.zeros(n)
    g = np.zeros(n)
    due = rng.standard_exponential(n) / lam
    ruined = np.zeros(n, dtype=bool)
    out = _blank(n)
    live = np.arange(n)
    steps = events = 0
    var = sig * sig * step
    while live.size:
        k = live.size
        a = pos[live]
        b = a - r * step + math.sqrt(var) * rng.standard_normal(k)
        top = 0.5 * (a + b + np.sqrt((b - a) ** 2 - 2.0 * var * np.log(rng.random(k))))
        now = clock[live]
        creep = top > u
        if creep.any():
            idx = live[creep]
            ruined[idx] = True
            when = now[creep] + 0.5 * step
            _record(out, idx, when, when, np.full(idx.size, u), np.full(idx.size, u), np.full(idx.size, u), u)
        later = now + step
        jump = ~creep & (due[live] <= later)
        sizes = np.zeros(k)
        if jump.any():
            sizes[jump] = m.claim.sample(rng, int(jump.sum()))
            events += int(jump.sum())
        post = b + sizes
        renew = ~creep & (top > xbar[live])
        idx = live[renew]
        xbar[idx] = top[renew]
        g[idx] = now[renew] + 0.5 * step
        hit = jump & (post > u)
        if hit.any():
            idx = live[hit]
            ruined[idx] = True
            _record(out, idx, later[hit], g[idx], b[hit], post[hit], xbar[idx], u)
        lost = ~creep & ~hit & (np.minimum(b, post) < -policy.cutoff)
        go = ~creep & ~hit & ~lost
        idx = live[go]
        pos[idx] = post[go]
        clock[idx] = later[go]
        up = post[go] > xbar[idx]
        xbar[idx[up]] = post[go][up]
        g[idx[up]] = later[go][up]
        jumped = idx[jump[go]]
        due[jumped] = later[go][jump[go]] + rng.standard_exponential(jumped.size) / lam
        live = idx
        steps += 1
        if live.size and steps >= policy.max_events:
            raise PolicyError(f"{live.size} paths undecided after {steps} steps")
    return ruined, out, events


def passage_block(m, u, rng, n, policy=None):
    """Simulate ``n`` independent first passages above ``u`` from one stream."""
    if u <= 0:
        raise DomainError("level must be > 0")
    policy = policy or default_policy(m)
    engine = _jump_passage_block if m.sigma == 0 else _diffusive_passage_block
    return engine(m, u, rng, n, policy)


def first_passage(m, u, rng, policy=None):
    ruined, out, _ = passage_block(m, u, rng, 1, policy)
    return RuinPathSample(0, bool(ruined[0]), *(float(out[k][0]) for k in FLOAT_FIELDS))


def _unconditioned_task(args):
    m, u, seed, stream, n, policy = args
    ruined, out, events = passage_block(m, u, stream_rng(seed, stream), n, policy)
    return SampleSet(np.full(n, stream, dtype=np.int64), ruined, out, seed), events


def simulate_paths(m, u, n, seed, policy=None, workers=1, block=DEFAULT_BLOCK):
    """``n`` unconditioned first-passage records (ruined or not), in stream order."""
    if n < 0:
        raise DomainError("n must be >= 0")
    policy = policy or default_policy(m)
    tasks = []
    for stream, start in enumerate(range(0, n, block)):
        tasks.append((m, u, seed, stream, min(block, n - start), policy))
    results = map_streams(_unconditioned_task, tasks, workers)
    return SampleSet.concat([r[0] for r in results], seed), sum(r[1] for r in results)


class ConditionedSampler:
    """Exact sampler of the surplus path conditioned on ruin (``sigma == 0``).

    Writing ``y`` for the distance to the level, conditioning by the ruin
    probability ``h(y)`` turns the claim intensity into
    ``intensity + premium * hazard_h(y)``; the next event position solves
    ``c(y1) = c(y0) + Exp(1)`` with ``c(y) = intensity*y/premium - log h(y)``.
    At an event the claim size law is proportional to
    ``P(U > y) delta_cross + f(u) h(y - u) du`` on ``(0, y)``, drawn by
    rejection from a per-cell envelope. ``h`` is the tabulated ruin
    probability, log-linear between nodes and claim-tail extrapolated past
    the grid.
    """

    def __init__(self, m, table=None, max_events=10 ** 6):
        if m.sigma > 0:
            raise UnsupportedModel("exact conditioning needs sigma == 0")
        self.m = m
        self.table = table if table is not None else renewal_table(m)
        self.max_events = max_events
        t = self.table
        self.h = t.step
        self.grid = t.x
        self.rate_ratio = m.intensity / m.premium
        self.clock_grid = self.rate_ratio * t.x - t.log_ruin
        self.log_tail_grid = np.log(m.claim.tilted_tail(t.x, m.alpha)) - m.alpha * t.x

    def _clock(self, y):
        if y <= self.table.x_max:
            return float(np.interp(y, self.grid, self.clock_grid))
        return self.rate_ratio * y - float(self.table.log_ruin_extended(y))

    def advance(self, y0, e):
        """Distance at the next event, starting from distance ``y0``."""
        target = self._clock(y0) + e
        if target <= self.clock_grid[-1]:
            return max(float(np.interp(target, self.clock_grid, self.grid)), y0)
        lo = max(y0, self.table.x_max)
        hi = lo + (target - self._clock(lo)) / self.rate_ratio + 1e-9
        return optimize.brentq(lambda y: self._clock(y) - target, lo, hi, xtol=1e-13)

    def _log_tail(self, y):
        if y <= self.table.x_max:
            return float(np.interp(y, self.grid, self.log_tail_grid))
        a = self.m.alpha
        return math.log(float(self.m.claim.tilted_tail(y, a))) - a * y

    def jump(self, rng, y):
        """Claim size at an event occurring at distance ``y``."""
        claim = self.m.claim
        cells = int(math.floor(y / self.h)) + 1
        left = np.arange(cells) * self.h
        right = np.minimum(left + self.h, y)
        width = right - left
        f_left = claim.density(np.maximum(left, 1e-300))
        h_right = self.table.ruin_extended(y - right)
        weight = f_left * h_right * width
        cum = np.cumsum(weight)
        env = float(cum[-1])
        cross = math.exp(self._log_tail(y))
        total = cross + env
        while True:
            if rng.random() * total < cross:
                return claim.sample_excess(rng, y)
            j = min(int(np.searchsorted(cum, rng.random() * env, side="right")), cells - 1)
            cand = left[j] + rng.random() * width[j]
            ratio = float(claim.density(cand)) * float(self.table.ruin_extended(y - cand)) / (f_left[j] * h_right[j])
            if rng.random() < ratio:
                return cand

    def path(self, rng, level, start=0.0):
        """One path from ``start`` conditioned to exceed ``level``.

        Returns ``(tau, g_prior, overshoot, undershoot, max_undershoot, xbar_prior)``
        where the last four are measured as for a first passage of ``level``.
        """
        y = level - start
        if y < 0:
            raise DomainError("start must not exceed the level")
        xbar, g, t = start, 0.0, 0.0
        r = self.m.premium
        for _ in range(self.max_events):
            y1 = self.advance(y, rng.standard_exponential())
            t += (y1 - y) / r
            size = self.jump(rng, y1)
            if size > y1:
                return t, g, size - y1, y1, level - xbar, xbar
            y = y1 - size
            if level - y > xbar:
                xbar, g = level - y, t
        raise PolicyError(f"conditioned path undecided after {self.max_events} events")


@lru_cache(maxsize=8)
def conditioned_sampler(m, table):
    return ConditionedSampler(m, table)


def _exact_task(args):
    m, table, u, seed, stream, n = args
    rng = stream_rng(seed, stream)
    sampler = conditioned_sampler(m, table)
    out = _blank(n)
    for i in range(n):
        tau, g, over, under, maxu, xbar = sampler.path(rng, u)
        _record(out, i, tau, g, u - under, u + over, xbar, u)
        out["max_undershoot"][i] = maxu
    return SampleSet(np.full(n, stream, dtype=np.int64), np.ones(n, dtype=bool), out, seed), 0


@dataclass
class EnsembleReport:
    """Bookkeeping for a ruin-conditioned ensemble."""

    n_attempted: int
    n_ruined: int
    cutoff: float
    bias_bound: float
    method: str
    seed: int
    u: float
    ruin_probability: float
    events: int
    summaries: dict = field(default_factory=dict)
    config_hash: str = ""

    def as_dict(self):
        return dict(self.__dict__)


def _summaries(samples):
    out = {}
    for k in FLOAT_FIELDS:
        v = samples.values[k][samples.ruined]
        if v.size:
            out[k] = {"mean": float(np.mean(v)), "std": float(np.std(v)), "median": float(np.median(v)),
                      "min": float(np.min(v)), "max": float(np.max(v))}
    return out


def conditioned_ensemble(m, u, n_target, cutoff=None, seed=0, method="auto", table=None, workers=1,
                         block=DEFAULT_BLOCK, event_budget=DEFAULT_EVENT_BUDGET, exact_block=64):
    """Collect ``n_target`` paths that reach level ``u``.

    ``method="rejection"`` simulates unconditioned paths, abandoning those that
    fall below ``-cutoff``; the relative bias is at most
    ``qVbar(u + cutoff) / qVbar(u)``. ``method="exact"`` uses
    :class:`ConditionedSampler` and has no cutoff bias. ``"auto"`` picks
    rejection when the ruin probability is at least ``1e-4`` and the expected
    number of attempts stays below ``2e6``.

    Raises:
        BudgetError: rejection exceeded ``event_budget`` claim events.
    """
    if m.sigma > 0 and method != "rejection":
        method = "rejection"
    table = table if table is not None or m.sigma > 0 else renewal_table(m)
    cutoff = 20.0 / m.alpha if cutoff is None else float(cutoff)
    ruin_u = float(table.ruin_extended(u)) if table is not None else math.nan
    if method == "auto":
        cheap = ruin_u >= REJECTION_FLOOR and n_target <= REJECTION_ATTEMPTS * ruin_u
        method = "rejection" if cheap else "exact"
    if method not in ("rejection", "exact"):
        raise DomainError(f"unknown method {method!r}")
    policy = HorizonPolicy(cutoff=cutoff)
    if n_target == 0:
        samples = SampleSet.empty(seed)
        attempted = events = 0
    elif method == "exact":
        tasks = [(m, table, u, seed, s, min(exact_block, n_target - start))
                 for s, start in enumerate(range(0, n_target, exact_block))]
        samples = SampleSet.concat([r[0] for r in map_streams(_exact_task, tasks, workers)], seed)
        attempted, events = n_target, 0
    else:
        samples, attempted, events = _rejection(m, u, n_target, seed, policy, workers, block, event_budget)
    if method == "exact":
        bias = 0.0
    elif table is not None:
        bias = float(table.ruin_extended(u + cutoff)) / ruin_u
    else:
        bias = math.nan
    report = EnsembleReport(n_attempted=attempted, n_ruined=len(samples), cutoff=cutoff, bias_bound=bias,
                            method=method, seed=seed, u=float(u), ruin_probability=ruin_u, events=events,
                            summaries=_summaries(samples), config_hash=m.config_hash())
    return samples, report


def _rejection(m, u, n_target, seed, policy, workers, block, event_budget):
    kept = []
    have = 0
    events = 0
    stream = 0
    batch = max(1, workers)
    while True:
        tasks = [(m, u, seed, stream + i, block, policy) for i in range(batch)]
        for part, ev in map_streams(_unconditioned_task, tasks, workers):
            events += ev
            hits = part.select(part.ruined)
            need = n_target - have
            if len(hits) >= need:
                rows = np.flatnonzero(part.ruined)[need - 1]
                kept.append(hits.select(np.arange(len(hits)) < need))
                attempted = int(part.stream_id[0]) * block + int(rows) + 1
                return SampleSet.concat(kept, seed), attempted, events
            kept.append(hits)
            have += len(hits)
            if events > event_budget:
                raise BudgetError(f"event budget {event_budget} exhausted with {have} ruined paths", achieved=have)
        stream += batch


@dataclass(frozen=True)
class RunningSupMGF:
    """Estimates of ``M(t) = E exp(alpha * sup_{s<=t} X_s)`` on a time grid."""

    t: np.ndarray
    value: np.ndarray
    se: np.ndarray
    method: str
    n: int
    seed: int
    limit: float = math.nan

    def __call__(self, t):
        from .errors import GridError

        t = np.asarray(t, dtype=float)
        if np.any(t > self.t[-1] + 1e-12) or np.any(t < 0):
            raise GridError(f"running-sup grid covers [0, {self.t[-1]}]")
        return np.interp(t, self.t, self.value)

    def to_csv(self, fh, meta=None):
        header = {"method": self.method, "n": self.n, "seed": self.seed, "limit": format(self.limit, ".17g")}
        header.update(meta or {})
        for key in sorted(header):
            fh.write(f"# {key}={header[key]}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "M", "se"])
        for row in zip(self.t, self.value, self.se):
            writer.writerow([format(v, ".17g") for v in row])

    @classmethod
    def from_csv(cls, fh):
        meta, rows = {}, []
        lines = fh.read().splitlines()
        body = [ln for ln in lines if not ln.startswith("#")]
        for ln in lines:
            if ln.startswith("#"):
                k, _, v = ln[1:].strip().partition("=")
                meta[k] = v
        reader = csv.reader(body)
        if next(reader, None) != ["t", "M", "se"]:
            raise ValueError("running-sup file must have header t,M,se")
        for rec in reader:
            rows.append([float(v) for v in rec])
        data = np.array(rows, dtype=float)
        if data.ndim != 2 or data.shape[0] < 2 or data[0, 0] != 0.0:
            raise ValueError("running-sup grid must start at t=0 and have >= 2 points")
        return cls(data[:, 0], data[:, 1], data[:, 2], meta.get("method", "?"), int(meta.get("n", 0)),
                   int(meta.get("seed", 0)), float(meta.get("limit", "nan")))


def _grid_walk(m, t_grid, rng, n, visit):
    """Advance ``n`` paths of a ``sigma == 0`` model across ``t_grid``.

    Calls ``visit(j, sup, position)`` at each grid time with vectors over paths.
    """
    r, lam = m.premium, m.intensity
    pos = np.zeros(n)
    last = np.zeros(n)
    sup = np.zeros(n)
    due = rng.standard_exponential(n) / lam
    for j, tj in enumerate(t_grid):
        while True:
            idx = np.flatnonzero(due <= tj)
            if not idx.size:
                break
            post = pos[idx] - r * (due[idx] - last[idx]) + m.claim.sample(rng, idx.size)
            pos[idx] = post
            last[idx] = due[idx]
            np.maximum(sup[idx], post, out=post)
            sup[idx] = post
            due[idx] += rng.standard_exponential(idx.size) / lam
        visit(j, sup, pos - r * (tj - last))


def _sup_mgf_task(args):
    m, table, t_grid, seed, stream, n, method = args
    rng = stream_rng(seed, stream)
    k = len(t_grid)
    s1 = np.zeros(k)
    s2 = np.zeros(k)
    if method == "plain":
        a = m.alpha

        def visit(j, sup, cur):
            v = np.exp(a * sup)
            s1[j] += v.sum()
            s2[j] += (v * v).sum()

        _grid_walk(m, t_grid, rng, n, visit)
    else:
        tilted = esscher_tilt(m, m.alpha)

        def visit(j, sup, cur):
            v = table.tilted_tail_mass(sup - cur)
            s1[j] += v.sum()
            s2[j] += (v * v).sum()

        _grid_walk(tilted, t_grid, rng, n, visit)
    return s1, s2


def running_sup_mgf(m, t_grid, n, seed=0, method="tilted", table=None, workers=1, block=20000):
    """Monte Carlo estimates of ``M(t) = E exp(alpha sup_{s<=t} X_s)``.

    ``method="tilted"`` (default) uses the identity
    ``M(t) = M_inf - exp(t psi(alpha)) E_Z[g(D_t)]`` where ``Z`` is the
    alpha-tilted process, ``D_t`` its drawdown and
    ``g(d) = int_d^inf alpha e^{alpha z} P(ruin from z) dz``. The estimator is
    bounded, so its variance is finite, and ``M(0) = 1`` exactly.
    ``method="plain"`` averages ``exp(alpha sup X)`` directly; its variance is
    infinite for convolution-equivalent claims.
    """
    if m.sigma > 0:
        raise UnsupportedModel("running supremum estimator needs sigma == 0")
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid[0] != 0.0 or np.any(np.diff(t_grid) <= 0):
        raise DomainError("t grid must be increasing and start at 0")
    table = table if table is not None else renewal_table(m)
    tasks = [(m, table, t_grid, seed, s, min(block, n - start), method)
             for s, start in enumerate(range(0, n, block))]
    parts = map_streams(_sup_mgf_task, tasks, workers)
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    mean = s1 / n
    sd = np.sqrt(np.maximum(s2 / n - mean ** 2, 0.0) * n / max(n - 1, 1))
    limit = table.sup_mgf_limit
    if method == "plain":
        return RunningSupMGF(t_grid, mean, sd / math.sqrt(n), method, n, seed, limit)
    decay = np.exp(t_grid * m.laplace_exponent(m.alpha))
    value = limit - decay * mean
    value[0] = 1.0
    se = decay * sd / math.sqrt(n)
    se[0] = 0.0
    return RunningSupMGF(t_grid, value, se, method, n, seed, limit)


@dataclass(frozen=True)
class TiltedEstimate:
    mean: float
    se: float
    self_normalized: float
    n: int


def _position_at(m, rng, n, horizon):
    counts = rng.poisson(m.intensity * horizon, n)
    sizes = m.claim.sample(rng, int(counts.sum()))
    owner = np.repeat(np.arange(n), counts)
    total = np.bincount(owner, weights=sizes, minlength=n)
    return total - m.premium * horizon


def tilted_sample(m, theta, functional, n, seed=0):
    """Importance-sampling estimate under the ``theta``-tilted law.

    ``functional`` is a mapping with ``kind`` one of:
      * ``"constant"`` with ``horizon``: estimates 1.
      * ``"exp_position"`` with ``horizon`` and ``s``: estimates ``E exp(s X_t)``.
      * ``"ruin"`` with ``level`` and optional ``cutoff``: estimates ``P(ruin)``.

    Paths carry the likelihood ratio ``exp(-theta X_T + T psi(theta))``.
    """
    if m.sigma > 0:
        raise UnsupportedModel("tilted estimator needs sigma == 0")
    tilted = esscher_tilt(m, theta)
    psi_theta = m.laplace_exponent(theta)
    rng = stream_rng(seed, 0)
    kind = functional["kind"]
    if kind in ("constant", "exp_position"):
        t = float(functional["horizon"])
        x_t = _position_at(tilted, rng, n, t)
        log_w = -theta * x_t + t * psi_theta
        weight = np.exp(log_w)
        s = 0.0 if kind == "constant" else float(functional["s"])
        # combine in log space: exp(s X) alone overflows for heavy tilted claims
        prod = np.exp(log_w + s * x_t)
    elif kind == "ruin":
        u = float(functional["level"])
        cutoff = float(functional.get("cutoff", 20.0 / m.alpha))
        ruined, out, _ = _jump_passage_block(tilted, u, rng, n, HorizonPolicy(cutoff=cutoff))
        # abandoned paths stop exactly at -cutoff
        weight = np.exp(theta * cutoff + out["stop_time"] * psi_theta)
        x_tau = u + out["overshoot"][ruined]
        weight[ruined] = np.exp(-theta * x_tau + out["tau"][ruined] * psi_theta)
        prod = weight * ruined
    else:
        raise DomainError(f"unknown functional kind {kind!r}")
    mean = float(prod.mean())
    se = float(prod.std(ddof=1) / math.sqrt(n))
    return TiltedEstimate(mean, se, float(prod.sum() / weight.sum()), n)
