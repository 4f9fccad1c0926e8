"""Numerical checks of the process's structural results.

Each check pairs a Monte-Carlo estimate from the simulator with an
independent closed form: the generator against finite differences of the
semigroup, the coupled pair against the classical branching mean, restarts
against uninterrupted runs, conditioned no-event paths against the product
heat kernel, and dyadic BBM against the Yule mean.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from . import kernels
from .engine import _prepare, population_bound_C, simulate_batch
from .model import FullConfiguration, Params, SimplifiedState
from .movement import MovementSpec, Profile, generator_apply_movement, kernel_expectation
from .rngstats import BLOCK_SIZE, Purpose, StreamKey, mean_ci, replica_blocks

__all__ = [
    "TestFunction",
    "generator_apply_full",
    "mc_semigroup",
    "ResidualReport",
    "generator_residual",
    "coupled_simulate",
    "coupled_batch",
    "dominating_expectation",
    "RestartResult",
    "markov_restart_test",
    "pooled_chi2",
    "tensor_expectation",
    "tensor_conditioned_mc",
    "bbm_many_to_one",
    "non_feller_demo",
    "DBBM",
]


def DBBM(sigma: float = 1.0, dimension: int = 1) -> Params:
    """Dyadic branching Brownian motion as a special case."""
    return Params(mu_S=1.0, delta_S=math.inf, q={2: 1.0}, movement=MovementSpec.brownian(dimension, sigma))


@dataclass(frozen=True)
class TestFunction:
    """``f(x) = w(n_m, n_s) * prod_p phi(z_p)``.

    Count pairs missing from ``weights`` take the value ``outside``; with the
    default 0 the function is finitely supported.
    """

    __test__ = False  # not a pytest class

    weights: Mapping[tuple[int, int], float]
    profile: Profile = field(default_factory=Profile)
    outside: float = 0.0

    def __post_init__(self):
        w = {}
        for (nm, ns), v in dict(self.weights).items():
            if nm < 0 or ns < 0:
                raise ValueError("count pairs must be non-negative")
            w[(int(nm), int(ns))] = float(v)
        object.__setattr__(self, "weights", w)

    @classmethod
    def constant(cls, c: float = 1.0) -> "TestFunction":
        return cls({(0, 0): c}, Profile(None), outside=c)

    def weight(self, n_m: int, n_s: int) -> float:
        return self.weights.get((n_m, n_s), self.outside)

    def value(self, x: SimplifiedState, movement: MovementSpec) -> float:
        w = self.weight(x.n_m, x.n_s)
        if w == 0.0:
            return 0.0
        prod = 1.0
        for z in x.positions:
            prod *= self.profile(z, movement)
        return w * prod

    def pack(self):
        nm = max((k[0] for k in self.weights), default=0) + 1
        ns = max((k[1] for k in self.weights), default=0) + 1
        W = np.full((nm, ns), self.outside, dtype=np.float64)
        for (a, b), v in self.weights.items():
            W[a, b] = v
        pf, cv = self.profile.pack()
        return W, float(self.outside), pf, cv


def _require_generator_domain(params: Params):
    if params.instant_settled_death:
        raise ValueError("delta_S = inf is outside the generator assumptions (finite rates, conservative movement)")
    if not params.movement.conservative:
        raise ValueError("killed movement is outside the generator assumptions (finite rates, conservative movement)")
    if params.L is not None:
        raise ValueError("the count-based generator needs L = inf (offspring tallies are not part of the state)")


def generator_apply_full(f: TestFunction, x: SimplifiedState, params: Params) -> float:
    """Exact generator of the count-based process applied to a separable ``f``."""
    _require_generator_domain(params)
    if x.is_cemetery:
        return 0.0
    spec = params.movement
    f0 = f.value(x, spec)
    mov, sett = x.moving, x.settled
    n_m, n_s = x.n_m, x.n_s

    def val(nm, ns, pts):
        return f.value(SimplifiedState(nm, ns, np.asarray(pts).reshape(nm + ns, spec.point_dim)), spec)

    total = 0.0
    for i in range(n_m):
        rest = np.delete(mov, i, axis=0)
        if params.delta_M:
            total += params.delta_M * (val(n_m - 1, n_s, np.vstack([rest, sett])) - f0)
        for k, qk in params.q.items():
            z = mov[i : i + 1]
            pts = np.vstack([rest, np.repeat(z, k, axis=0), sett, z])
            total += params.mu_S * qk * (val(n_m - 1 + k, n_s + 1, pts) - f0)
    for j in range(n_s):
        if params.delta_S:
            pts = np.vstack([mov, np.delete(sett, j, axis=0)])
            total += params.delta_S * (val(n_m, n_s - 1, pts) - f0)
        for k, nuk in params.nu.items():
            pts = np.vstack([mov, np.repeat(sett[j : j + 1], k, axis=0), sett])
            total += nuk * (val(n_m + k, n_s, pts) - f0)
    # movement of each moving coordinate: product rule on the separable profile
    w = f.weight(n_m, n_s)
    if w != 0.0:
        phis = [f.profile(z, spec) for z in x.positions]
        for i in range(n_m):
            others = math.prod(phis[:i] + phis[i + 1 :])
            total += w * others * generator_apply_movement(spec, f.profile, mov[i])
    return total


def _run_fn(f, x, params, t, n, key, threads, block=BLOCK_SIZE):
    return simulate_batch(x, params, t, n, key, fn=f.pack(), threads=threads, block=block)


def mc_semigroup(f: TestFunction, x, params: Params, t: float, n: int, key: StreamKey,
                 threads: int = 1) -> tuple[float, float]:
    """Monte-Carlo estimate of ``E_x f(X_t)`` and its standard error."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if n < 2:
        raise ValueError("need at least two replicas")
    if t == 0:
        if isinstance(x, FullConfiguration):
            raise ValueError("t = 0 evaluation needs a SimplifiedState")
        return f.value(x, params.movement), 0.0
    vals = _run_fn(f, x, params, t, n, key, threads)[:, 2]
    mean, se, _ = mean_ci(vals)
    return mean, se


@dataclass(frozen=True)
class ResidualReport:
    times: tuple[float, ...]
    generator: float
    f0: float
    means: tuple[float, ...]
    stderrs: tuple[float, ...]
    residuals: tuple[float, ...]
    budgets: tuple[float, ...]
    K: float

    @property
    def passed(self) -> bool:
        return all(r <= b for r, b in zip(self.residuals, self.budgets))

    def to_dict(self) -> dict:
        return {
            "times": list(self.times),
            "generator": self.generator,
            "f0": self.f0,
            "means": list(self.means),
            "stderrs": list(self.stderrs),
            "residuals": list(self.residuals),
            "budgets": list(self.budgets),
            "K": self.K,
            "pass": self.passed,
        }


def generator_residual(f: TestFunction, x: SimplifiedState, params: Params, key: StreamKey,
                       times: Sequence[float] = (0.02, 0.01, 0.005), n: int = 10**6,
                       threads: int = 1) -> ResidualReport:
    """Finite-difference check ``|(P_t f(x) - f(x))/t - A f(x)|`` against ``3 SE/t + K t``.

    Each time point gets its own stream, so the estimates at different
    times are independent.
    """
    if len(times) < 2:
        raise ValueError("need at least two time points")
    A = generator_apply_full(f, x, params)
    f0 = f.value(x, params.movement)
    means, ses = [], []
    for i, t in enumerate(times):
        m, se = mc_semigroup(f, x, params, t, n, key.child(i), threads)
        means.append(m)
        ses.append(se)
    quot = [(m - f0) / t for m, t in zip(means, times)]
    order = sorted(range(len(times)), key=lambda i: -times[i])
    i1, i2 = order[0], order[1]
    K = abs(quot[i1] - quot[i2]) / abs(times[i1] - times[i2])
    res = tuple(abs(qv - A) for qv in quot)
    bud = tuple(3.0 * se / t + K * t for se, t in zip(ses, times))
    return ResidualReport(tuple(times), A, f0, tuple(means), tuple(ses), res, bud, K)


def _coupling_args(params: Params):
    if not params.movement.conservative:
        raise ValueError("coupling needs conservative movement (no killing)")
    if not params.mu_S > 0:
        raise ValueError("coupling needs mu_S > 0")
    return params.pack()


def coupled_simulate(params: Params, t: float, rng) -> tuple[int, int]:
    """One coupled draw of the metastatic population ``N(t)`` and the
    dominating branching population ``Nbar(t)``, from one moving particle."""
    if t < 0:
        raise ValueError("t must be non-negative")
    prm, qk, qcum, nk, ncum = _coupling_args(params)
    gen = rng.generator() if isinstance(rng, StreamKey) else rng
    N, Nbar = kernels.coupled_one(prm, qk, qcum, nk, ncum, float(t), gen)
    return int(N), int(Nbar)


def coupled_batch(params: Params, t: float, n: int, key: StreamKey, threads: int = 1,
                  block: int = BLOCK_SIZE) -> np.ndarray:
    if t < 0:
        raise ValueError("t must be non-negative")
    packed = _coupling_args(params)

    def one(job):
        _, count, bkey = job
        return kernels.run_coupled(count, *packed, float(t), bkey.generator())

    jobs = list(replica_blocks(key, n, block))
    if not jobs:
        return np.zeros((0, 2), dtype=np.int64)
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(one, jobs))
    else:
        parts = [one(j) for j in jobs]
    return np.concatenate(parts, axis=0)


def dominating_expectation(params: Params, t: float) -> tuple[float, float]:
    """``(E Nbar(t), exp(C t))``: the classical branching mean
    ``exp((mu_S+mu_B)(m-1)t)`` with ``m = E xi0 + E Y + 1``, and the bound."""
    per = params.batch_moment / params.mu_B if params.mu_B > 0 else 0.0
    m = params.mean_burst + per + 1.0
    return math.exp((params.mu_S + params.mu_B) * (m - 1.0) * t), math.exp(population_bound_C(params) * t)


# --- restart test ---------------------------------------------------------


@dataclass(frozen=True)
class RestartResult:
    p_value: float
    statistic: float
    n_bucket: int
    n_reference: int
    cells: int

    def to_dict(self) -> dict:
        return {
            "p_value": self.p_value,
            "statistic": self.statistic,
            "n_bucket": self.n_bucket,
            "n_reference": self.n_reference,
            "cells": self.cells,
        }


def pooled_chi2(a: Sequence[tuple[int, int]], b: Sequence[tuple[int, int]]) -> tuple[float, float, int]:
    """Two-sample chi-square on count-pair cells, pooling the rarest cells
    until every expected count is at least 5.  Returns (statistic, p, cells)."""
    from collections import Counter

    ca, cb = Counter(a), Counter(b)
    na, nb = len(a), len(b)
    if na == 0 or nb == 0:
        raise ValueError("both samples must be non-empty")
    keys = sorted(set(ca) | set(cb), key=lambda c: (-(ca[c] + cb[c]), c))
    cols = [[ca[c], cb[c]] for c in keys]
    need = 5.0 * (na + nb) / min(na, nb)
    big = [c for c in cols if c[0] + c[1] >= need]
    pool = [sum(c[0] for c in cols if c[0] + c[1] < need), sum(c[1] for c in cols if c[0] + c[1] < need)]
    if pool[0] + pool[1] > 0:
        if pool[0] + pool[1] >= need or not big:
            big.append(pool)
        else:
            last = big.pop()
            big.append([last[0] + pool[0], last[1] + pool[1]])
    if len(big) < 2:
        return 0.0, 1.0, len(big)
    table = np.array(big, dtype=np.float64).T
    stat, p, _, _ = stats.chi2_contingency(table, correction=False)
    return float(stat), float(p), len(big)


def _restart_runner(params: Params):
    prm, qk, qcum, nk, ncum = params.pack()
    mi, mf, lo, hi, q = params.movement.pack()

    def run(pos, tal, n_m, n_s, t0, t1, gen):
        return kernels.run_to(pos, tal, n_m, n_s, t0, t1, prm, qk, qcum, nk, ncum, mi, mf, lo, hi, q, gen, 10**8)

    return run


def markov_restart_test(params: Params, x, s: float, t: float, n: int, key: StreamKey,
                        bucket: tuple[int, int] | None = None, mode: str = "restart",
                        min_bucket: int = 100) -> RestartResult:
    """Compare counts at ``s + t`` of uninterrupted runs that sit in ``bucket``
    at time ``s`` with runs restarted from those time-``s`` states.

    ``mode``: ``"restart"`` uses fresh streams for the restarts; ``"self"``
    compares two independent uninterrupted samples (null calibration);
    ``"broken"`` restarts each run on its own phase-A stream from the start,
    a deliberately wrong restart used to check that the test has power.
    Each replica owns its stream.  The restart starts from the complete
    internal state, including offspring tallies, so a finite ``L`` is fine.
    """
    if not (s > 0 and t > 0):
        raise ValueError("s and t must be positive")
    if mode not in ("restart", "self", "broken"):
        raise ValueError(f"unknown mode {mode!r}")
    pos0, tal0, nm0, ns0, _, _ = _prepare(x, params)
    if bucket is None:
        bucket = (nm0 + 1, ns0)
    run = _restart_runner(params)
    key_a = key.child(Purpose.RESTART_A)
    key_b = key.child(Purpose.RESTART_B if mode != "self" else Purpose.RESTART_SELF)

    def conditioned(k):
        finals, snaps = [], []
        for i in range(n):
            gen = k.child(i).generator()
            p, tl, a, b = run(pos0, tal0, nm0, ns0, 0.0, s, gen)
            if (a, b) != tuple(bucket):
                continue
            snaps.append((i, p, tl))
            _, _, a2, b2 = run(p, tl, a, b, s, s + t, gen)
            finals.append((int(a2), int(b2)))
        return finals, snaps

    ref, snaps = conditioned(key_a)
    if len(snaps) < min_bucket:
        raise ValueError(f"insufficient conditioning mass: {len(snaps)} snapshots in bucket {bucket}")
    if mode == "self":
        other, _ = conditioned(key_b)
        if len(other) < min_bucket:
            raise ValueError(f"insufficient conditioning mass: {len(other)} snapshots in bucket {bucket}")
    else:
        other = []
        for i, p, tl in snaps:
            gen = (key_a if mode == "broken" else key_b).child(i).generator()
            _, _, a2, b2 = run(p, tl, bucket[0], bucket[1], 0.0, t, gen)
            other.append((int(a2), int(b2)))
    stat, p, cells = pooled_chi2(ref, other)
    return RestartResult(p, stat, len(other), len(ref), cells)


# --- product kernel and dyadic BBM ------------------------------------------


def tensor_expectation(spec: MovementSpec, times: Sequence[float], profile: Profile, points) -> float:
    """Product kernel ``prod_p E[phi(z_p + sigma B_{t_p})]`` applied to a separable bump."""
    pts = np.asarray(points, dtype=np.float64).reshape(len(times), -1)
    return math.prod(kernel_expectation(spec, profile, z, float(t)) for z, t in zip(pts, times))


def tensor_conditioned_mc(params: Params, profile: Profile, points, t: float, n: int, key: StreamKey,
                          threads: int = 1) -> tuple[float, float, int]:
    """Mean of ``prod_p phi(z_p(t))`` over runs with no clock ring in ``[0, t]``.

    Every particle starts moving.  Returns (mean, stderr, accepted runs).
    """
    if params.movement.kind != "brownian":
        raise ValueError("conditioned product-kernel check needs plain Brownian motion")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, params.movement.point_dim)
    x = SimplifiedState(len(pts), 0, pts)
    f = TestFunction({(len(pts), 0): 1.0}, profile)
    out = _run_fn(f, x, params, t, n, key, threads)
    keep = out[out[:, 4] == 0, 2]
    mean, se, _ = mean_ci(keep)
    return mean, se, int(keep.size)


def bbm_many_to_one(profile: Profile, sigma: float, t: float, dimension: int = 1) -> float:
    """``E sum_p phi(z_p(t))`` for dyadic BBM started from one particle at the origin."""
    spec = MovementSpec.brownian(dimension, sigma)
    return math.exp(t) * kernel_expectation(spec, profile, np.zeros(dimension), t)


# --- non-Feller demonstration -----------------------------------------------


@dataclass(frozen=True)
class NonFellerRow:
    k: int
    mean: float
    stderr: float

    def to_dict(self) -> dict:
        return {"k": self.k, "mean": self.mean, "stderr": self.stderr}


NON_FELLER_PROFILE = Profile(width=1.0 / math.sqrt(2.0))  # exp(-z^2)


def non_feller_demo(k_values: Sequence[int], params: Params, t: float, n: int, key: StreamKey,
                    threads: int = 1) -> list[NonFellerRow]:
    """Estimate ``P_t f(x_k)`` for ``x_k`` = two moving particles labeled (1)
    and (k) at the origin, where ``f`` is ``exp(-z^2)`` on configurations
    whose only living particle is (1), still moving with no offspring.

    Runs in labeled mode: the batch kernel reports which initial particle
    holds the first slot, which identifies particle (1) among the survivors.
    """
    if params.movement.point_dim != 1 or params.movement.kind != "brownian":
        raise ValueError("non-Feller demo uses one-dimensional Brownian motion")
    f = TestFunction({(1, 0): 1.0}, NON_FELLER_PROFILE)
    rows = []
    for k in k_values:
        if k < 2:
            raise ValueError("k must be >= 2 so that (1) and (k) differ")
        x = FullConfiguration.from_particles([(1,), (k,)], [[0.0], [0.0]])
        first = x.labels.index((1,))
        out = simulate_batch(x, params, t, n, key.child(int(k)), fn=f.pack(), threads=threads)
        vals = np.where(out[:, 5] == first, out[:, 2], 0.0)
        mean, se, _ = mean_ci(vals)
        rows.append(NonFellerRow(int(k), mean, se))
    return rows
