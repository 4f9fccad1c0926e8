"""Verification suites at acceptance scale.

Every suite returns a verdict dictionary that depends only on the master
seed and the replica counts, never on the worker count or wall-clock time,
so verdict files are byte-identical across reruns.
"""
from __future__ import annotations

import itertools
import json
import math
from typing import Callable

import numpy as np
from scipy import stats

from .engine import metric_simplified, population_bound_C, simulate_batch
from .model import Params, SimplifiedState
from .movement import MovementSpec, Profile, kernel_expectation
from .rngstats import Purpose, StreamKey, mean_ci
from .verify import (
    DBBM,
    TestFunction,
    bbm_many_to_one,
    coupled_batch,
    dominating_expectation,
    generator_residual,
    markov_restart_test,
    non_feller_demo,
    tensor_conditioned_mc,
    tensor_expectation,
)

__all__ = ["SUITES", "SUITE_NAMES", "run_suite", "verdict_bytes", "BOUND_GRID", "generator_battery", "MIXED"]

ORIGIN = SimplifiedState(1, 0, [[0.0]])

# (mu_S, mu_B, delta_M, delta_S) with nu({1}) = mu_B and q_1 = 1
BOUND_GRID = ((1.0, 1.0, 0.0, 0.0), (1.0, 1.0, 0.5, 0.5), (2.0, 0.0, 0.0, 1.0))
BOUND_TIMES = (0.25, 0.5, 1.0)

# parameter set with every mechanism switched on, used by the restart suite
MIXED = Params(mu_S=1.0, mu_B=1.0, nu={1: 0.5, 2: 0.5}, q={0: 0.3, 1: 0.4, 2: 0.3},
               delta_M=0.3, delta_S=0.2, L=3)

NON_FELLER = Params(mu_S=1.0, mu_B=1.0, nu={1: 1.0}, q={1: 1.0}, delta_M=0.5, delta_S=0.3)


def _grid_params(row) -> Params:
    mu_S, mu_B, d_M, d_S = row
    return Params(mu_S=mu_S, mu_B=mu_B, delta_M=d_M, delta_S=d_S, q={1: 1.0}, nu={1: mu_B} if mu_B else {})


def _check(name: str, ok: bool, **values) -> dict:
    return {"name": name, "pass": bool(ok), **values}


def suite_bound(key: StreamKey, n: int, threads: int) -> list[dict]:
    out = []
    for g, row in enumerate(BOUND_GRID):
        p = _grid_params(row)
        C = population_bound_C(p)
        for j, t in enumerate(BOUND_TIMES):
            res = simulate_batch(ORIGIN, p, t, n, key.child(g, j), threads=threads)
            mean, se, _ = mean_ci(res[:, 0] + res[:, 1])
            bound = math.exp(C * t)
            out.append(_check(f"grid{g}_t{t}", mean <= bound + 4 * se, params=list(row), t=t,
                              C=C, mean=mean, stderr=se, bound=bound))
    return out


def suite_coupling(key: StreamKey, n: int, threads: int) -> list[dict]:
    out = []
    for g, row in enumerate(BOUND_GRID):
        p = _grid_params(row)
        for j, t in enumerate(BOUND_TIMES):
            pair = coupled_batch(p, t, n, key.child(g, j), threads=threads)
            viol = int(np.count_nonzero(pair[:, 0] > pair[:, 1]))
            mN, seN, _ = mean_ci(pair[:, 0])
            mB, seB, _ = mean_ci(pair[:, 1])
            classical, bound = dominating_expectation(p, t)
            z = (mB - classical) / seB if seB > 0 else (0.0 if mB == classical else math.inf)
            ok = viol == 0 and abs(z) <= 4 and mN <= bound + 4 * seN
            out.append(_check(f"grid{g}_t{t}", ok, params=list(row), t=t, violations=viol,
                              mean_N=mN, stderr_N=seN, mean_Nbar=mB, stderr_Nbar=seB,
                              classical_mean=classical, z_Nbar=z, bound=bound))
    return out


def generator_battery() -> list[tuple[str, TestFunction, SimplifiedState, Params]]:
    """Fixed (name, f, x, params) triples covering n_m, n_s in {0,1,2}.

    Apart from the hand-computed case, rates, diffusivity and bump widths are
    kept small enough that the O(t) bias of the difference quotient at
    t = 0.02 stays within about 1.5 standard errors at 10^6 replicas; the
    budget's K t term then only has to absorb noise-level curvature.
    """
    bm = MovementSpec.brownian(1, 0.5)
    box = {(a, b): 1.0 / (1.0 + 0.5 * a + b) for a in range(6) for b in range(5)}
    chain = MovementSpec.chain([[0.0, 0.5], [0.3, 0.0]])
    bchain = MovementSpec.brownian_chain(1, 0.5, [[0.0, 0.4], [0.6, 0.0]])
    P, S, wide = Params, SimplifiedState, Profile(1.5)
    return [
        ("hand_value", TestFunction({(1, 0): 1.0}, Profile(1.0)), S(1, 0, [[0.0]]),
         P(mu_S=2.0, delta_M=1.0, q={1: 1.0}, movement=MovementSpec.brownian(1, 1.0))),
        ("moving_1_0", TestFunction(box, wide), S(1, 0, [[0.4]]),
         P(mu_S=0.5, delta_M=0.3, q={0: 0.3, 2: 0.7}, movement=bm)),
        ("moving_2_0", TestFunction(box, wide), S(2, 0, [[0.3], [-0.5]]),
         P(mu_S=0.4, delta_M=0.2, q={1: 0.5, 2: 0.5}, movement=bm)),
        ("settled_0_1", TestFunction(box, wide), S(0, 1, [[0.2]]),
         P(mu_S=0.5, mu_B=0.5, nu={2: 0.5}, delta_S=0.3, movement=bm)),
        ("settled_0_2", TestFunction(box, wide), S(0, 2, [[0.0], [0.6]]),
         P(mu_S=0.5, mu_B=0.4, nu={1: 0.2, 2: 0.2}, delta_S=0.3, movement=bm)),
        ("mixed_1_1", TestFunction(box, wide), S(1, 1, [[-0.3], [0.5]]),
         P(mu_S=0.5, mu_B=0.4, nu={1: 0.2, 2: 0.2}, q={1: 0.3, 2: 0.7}, delta_M=0.2, delta_S=0.3, movement=bm)),
        ("mixed_2_1", TestFunction(box, wide), S(2, 1, [[0.0], [0.5], [-0.1]]),
         P(mu_S=0.3, mu_B=0.4, nu={1: 0.2, 2: 0.2}, q={0: 0.4, 1: 0.2, 2: 0.4}, delta_M=0.2, delta_S=0.2,
           movement=bm)),
        ("mixed_1_2", TestFunction(box, wide), S(1, 2, [[0.2], [0.0], [-0.4]]),
         P(mu_S=0.4, mu_B=0.3, nu={2: 0.3}, q={1: 1.0}, delta_M=0.3, delta_S=0.1, movement=bm)),
        ("mixed_2_2", TestFunction(box, Profile(2.0)), S(2, 2, [[0.1], [-0.2], [0.3], [0.0]]),
         P(mu_S=0.3, mu_B=0.3, nu={2: 0.3}, q={0: 0.5, 2: 0.5}, delta_M=0.2, delta_S=0.2, movement=bm)),
        ("two_moving_separable", TestFunction({(2, 0): 1.0}, wide), S(2, 0, [[0.5], [-0.5]]),
         P(mu_S=0.3, delta_M=0.2, q={0: 0.5, 2: 0.5}, movement=bm)),
        ("planar", TestFunction(box, wide), S(1, 0, [[0.3, -0.2]]),
         P(mu_S=0.4, delta_M=0.3, q={2: 1.0}, movement=MovementSpec.brownian(2, 0.5))),
        ("settled_death_only", TestFunction({(0, 1): 1.0, (0, 0): 0.25}, wide), S(0, 1, [[0.5]]),
         P(mu_S=1.0, delta_S=0.5, movement=bm)),
        ("chain_types", TestFunction(box, Profile(None, (1.0, 0.6))), S(1, 1, [[0.0], [1.0]]),
         P(mu_S=0.4, mu_B=0.4, nu={1: 0.4}, q={1: 1.0}, delta_M=0.2, delta_S=0.2, movement=chain)),
        ("position_and_type", TestFunction(box, Profile(1.5, (1.0, 0.6))), S(1, 0, [[0.3, 1.0]]),
         P(mu_S=0.4, delta_M=0.3, q={0: 0.5, 2: 0.5}, movement=bchain)),
    ]


def suite_generator(key: StreamKey, n: int, threads: int) -> list[dict]:
    out = []
    for i, (name, f, x, p) in enumerate(generator_battery()):
        rep = generator_residual(f, x, p, key.child(i), n=n, threads=threads)
        out.append(_check(name, rep.passed, n_m=x.n_m, n_s=x.n_s, **rep.to_dict()))
    return out


def suite_restart(key: StreamKey, n: int, threads: int) -> list[dict]:
    reps = 20
    setups = (("dbbm", DBBM(), (2, 0), 0.3, 0.5), ("mixed", MIXED, (1, 1), 0.5, 0.5))
    out = []
    for si, (name, p, bucket, s, t) in enumerate(setups):
        for mode in ("restart", "broken"):
            pv = []
            for r in range(reps):
                res = markov_restart_test(p, ORIGIN, s, t, n, key.child(si, r), bucket=bucket, mode=mode)
                pv.append(res.p_value)
            if mode == "restart":
                ks = float(stats.kstest(pv, "uniform").pvalue)
                out.append(_check(f"{name}_null_uniform", ks > 0.01, p_values=pv, ks_p=ks))
            else:
                hits = sum(v < 0.01 for v in pv)
                out.append(_check(f"{name}_broken_detected", hits >= 19, p_values=pv, detected=hits))
    return out


def suite_metric(key: StreamKey, n: int, threads: int) -> list[dict]:
    rng = key.generator()

    def random_state():
        nm, ns = int(rng.integers(0, 3)), int(rng.integers(0, 3))
        if nm + ns == 0:
            return SimplifiedState.cemetery()
        return SimplifiedState(nm, ns, rng.normal(scale=rng.choice([0.05, 0.3, 2.0]), size=(nm + ns, 1)))

    def near(x):
        if x.is_cemetery or rng.random() < 0.3:
            return random_state()
        return SimplifiedState(x.n_m, x.n_s, x.positions + rng.normal(scale=0.1, size=x.positions.shape))

    sym = ident = tri = 0
    worst = 0.0
    for _ in range(n):
        x = random_state()
        y = near(x)
        z = near(y)
        dxy, dyx = metric_simplified(x, y), metric_simplified(y, x)
        if dxy != dyx:
            sym += 1
        if metric_simplified(x, x) != 0.0 or ((dxy == 0.0) != (x == y)):
            ident += 1
        gap = metric_simplified(x, z) - dxy - metric_simplified(y, z)
        worst = max(worst, gap)
        if gap > 1e-12:
            tri += 1
    return [
        _check("symmetry", sym == 0, violations=sym, pairs=n),
        _check("identity", ident == 0, violations=ident, pairs=n),
        _check("triangle", tri == 0, violations=tri, triples=n, worst_excess=worst),
    ]


def suite_tensor(key: StreamKey, n: int, threads: int) -> list[dict]:
    rng = key.child(0).generator()
    worst = 0.0
    for _ in range(200):
        d = int(rng.integers(1, 4))
        m = int(rng.integers(1, 5))
        sigma = float(rng.uniform(0.3, 2.0))
        prof = Profile(float(rng.uniform(0.3, 2.0)))
        spec = MovementSpec.brownian(d, sigma)
        times = rng.uniform(0.0, 2.0, size=m)
        pts = rng.normal(size=(m, d))
        prod = 1.0
        for z, t in zip(pts, times):
            a2 = prof.width**2 + sigma**2 * t
            prod *= (prof.width**2 / a2) ** (d / 2) * math.exp(-float(z @ z) / (2 * a2))
        worst = max(worst, abs(tensor_expectation(spec, times, prof, pts) - prod))
    checks = [_check("factorization", worst <= 1e-12, max_abs_error=worst, cases=200)]
    p = Params(mu_S=0.5, delta_M=0.5, q={1: 1.0}, movement=MovementSpec.brownian(1, 1.0))
    pts, t, prof = [[0.3], [-0.4]], 0.5, Profile(1.0)
    exact = tensor_expectation(p.movement, [t, t], prof, pts)
    mean, se, kept = tensor_conditioned_mc(p, prof, pts, t, n, key.child(1), threads)
    z = (mean - exact) / se
    checks.append(_check("conditioned_no_event_mc", abs(z) <= 4, exact=exact, mean=mean, stderr=se,
                         accepted=kept, replicas=n, z=z))
    return checks


def suite_bbm(key: StreamKey, n: int, threads: int) -> list[dict]:
    p = DBBM()
    f = TestFunction({}, Profile(1.0), outside=0.0)
    res = simulate_batch(ORIGIN, p, 1.0, n, key, fn=f.pack(), threads=threads)
    meanN, seN, _ = mean_ci(res[:, 0] + res[:, 1])
    rel = abs(meanN - math.e) / math.e
    meanS, seS, _ = mean_ci(res[:, 3])
    exact = bbm_many_to_one(Profile(1.0), 1.0, 1.0)
    z = (meanS - exact) / seS
    return [
        _check("yule_mean", rel <= 0.02, mean=meanN, stderr=seN, exact=math.e, rel_error=rel, replicas=n),
        _check("many_to_one", abs(z) <= 4, mean=meanS, stderr=seS, exact=exact, z=z, replicas=n),
    ]


def suite_nonfeller(key: StreamKey, n: int, threads: int) -> list[dict]:
    ks = (2, 5, 10, 50)
    rows = non_feller_demo(ks, NON_FELLER, 1.0, n, key.child(0), threads)
    zpos = [r.mean / r.stderr if r.stderr > 0 else 0.0 for r in rows]
    zpair = []
    for a, b in itertools.combinations(rows, 2):
        zpair.append((a.mean - b.mean) / math.hypot(a.stderr, b.stderr))
    zero = non_feller_demo(ks, NON_FELLER.replace(delta_M=0.0, delta_S=0.0), 1.0, max(n // 10, 2), key.child(1), threads)
    return [
        _check("positive", all(z > 4 for z in zpos), estimates=[r.to_dict() for r in rows], z_vs_zero=zpos),
        _check("label_exchangeable", all(abs(z) < 4 for z in zpair), pairwise_z=zpair),
        _check("no_moving_death_gives_zero", all(r.mean == 0.0 for r in zero),
               estimates=[r.to_dict() for r in zero]),
    ]


SUITES: dict[str, tuple[Callable, str]] = {
    "bound": (suite_bound, "population bound E|M(t)| <= exp(Ct) (finite-children lemma)"),
    "coupling": (suite_coupling, "pathwise domination by a Markov branching process (finite-children lemma proof)"),
    "generator": (suite_generator, "generator formula of the count-based process (finite differences)"),
    "restart": (suite_restart, "Markov property: restarting from the time-s state (Markov theorem)"),
    "tensor": (suite_tensor, "product heat kernel on separable functions (tensor-product lemma)"),
    "bbm": (suite_bbm, "dyadic branching Brownian motion: Yule mean and many-to-one identity"),
    "nonfeller": (suite_nonfeller, "labeled process is not Feller: P_t f does not vanish at infinity"),
    "metric": (suite_metric, "metric axioms on the count-based state space"),
}
SUITE_NAMES = tuple(SUITES)

# replicas per estimate (restart: runs per repetition; metric: random pairs)
DEFAULT_REPLICAS = {
    "bound": 10_000,
    "coupling": 10_000,
    "generator": 1_000_000,
    "restart": 5000,
    "tensor": 100_000,
    "bbm": 100_000,
    "nonfeller": 100_000,
    "metric": 1000,
}


def run_suite(name: str, seed: int, n: int | None = None, threads: int = 1) -> dict:
    if name not in SUITES:
        raise KeyError(name)
    fn, validates = SUITES[name]
    key = StreamKey(seed, (Purpose.SUITE, SUITE_NAMES.index(name)))
    n = int(n) if n else DEFAULT_REPLICAS[name]
    checks = fn(key, n, threads)
    return {
        "suite": name,
        "validates": validates,
        "seed": int(seed),
        "replicas": n,
        "pass": all(c["pass"] for c in checks),
        "checks": checks,
    }


def _plain(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def verdict_bytes(verdict: dict) -> bytes:
    return (json.dumps(verdict, indent=2, sort_keys=True, default=_plain, allow_nan=True) + "\n").encode()
