"""Event-driven simulation in the labeled and the count-based representation."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .labels import ROOT, Label
from .model import FullConfiguration, Params, ParticleRecord, SimplifiedState
from .movement import CEMETERY, MovementSpec, point_distance
from .rngstats import BLOCK_SIZE, StreamKey, replica_blocks

__all__ = [
    "Event",
    "EventLog",
    "step",
    "simulate",
    "simulate_batch",
    "simplify",
    "metric_simplified",
    "population_bound_C",
    "check_accounting",
    "MAX_EVENTS",
]

MAX_EVENTS = 10**8


@dataclass(frozen=True)
class Event:
    t: float
    kind: str
    k: int
    n_m: int
    n_s: int
    checksum: float
    record: int
    label: Label | None = None

    def to_json(self) -> dict:
        return {
            "t": self.t,
            "kind": self.kind,
            "label": None if self.label is None else self.label.to_json(),
            "k": self.k,
            "n_m": self.n_m,
            "n_s": self.n_s,
            "checksum": self.checksum.hex(),
        }


@dataclass
class EventLog:
    seed: int | None
    params_digest: str
    events: list[Event] = field(default_factory=list)
    stream: str | None = None
    records: tuple[ParticleRecord, ...] | None = None

    def header(self) -> dict:
        return {"seed": self.seed, "params_digest": self.params_digest, "stream": self.stream}

    def __len__(self):
        return len(self.events)


def _as_generator(rng):
    if isinstance(rng, np.random.Generator):
        return rng, None, None
    if isinstance(rng, StreamKey):
        return rng.generator(), rng.seed, str(rng)
    if isinstance(rng, (int, np.integer)):
        key = StreamKey(int(rng))
        return key.generator(), key.seed, str(key)
    raise TypeError("rng must be a numpy Generator, a StreamKey or an integer seed")


def _default_labels(n: int) -> list[Label]:
    if n == 1:
        return [ROOT]
    return [Label((i + 1,)) for i in range(n)]


def _prepare(initial, params: Params):
    """Kernel arrays plus initial labels for either representation."""
    D = params.movement.point_dim
    if isinstance(initial, FullConfiguration):
        moving = [r for r in initial.living if r.settle_time is None]
        settled = [r for r in initial.living if r.settle_time is not None]
        order = moving + settled
        for r in order:
            if r.position is CEMETERY or r.death_time is not None:
                raise ValueError("initial configuration may only contain living particles")
        pos = np.array([params.movement.check_point(r.position) for r in order], dtype=np.float64).reshape(-1, D)
        tal = np.array([r.offspring_count for r in order], dtype=np.int64)
        return pos, tal, len(moving), len(settled), [r.label for r in order], float(initial.time)
    if isinstance(initial, SimplifiedState):
        if initial.total and initial.point_dim != D:
            raise ValueError(f"state points have {initial.point_dim} coordinates, movement expects {D}")
        pos = np.array([params.movement.check_point(z) for z in initial.positions], dtype=np.float64).reshape(-1, D)
        tal = np.zeros(initial.total, dtype=np.int64)
        return pos, tal, initial.n_m, initial.n_s, _default_labels(initial.total), 0.0
    raise TypeError("initial state must be a SimplifiedState or a FullConfiguration")


def _buffers(pos, tal, n_init, track):
    n0 = pos.shape[0]
    cap = max(16, 4 * n0)
    D = pos.shape[1]
    P = np.empty((cap, D))
    P[:n0] = pos
    T = np.zeros(cap, dtype=np.int64)
    T[:n0] = tal
    rid = np.zeros(cap, dtype=np.int64)
    rid[:n0] = np.arange(n0)
    rcap = max(16, 4 * n0)
    rec_i = np.zeros((rcap, 3), dtype=np.int64)
    rec_f = np.full((rcap, 3), np.nan)
    if track:
        rec_i[:n0, 0] = -1
        rec_i[:n0, 1] = 0
        rec_i[:n0, 2] = tal
    return P, T, rid, rec_i, rec_f


def _run(pos, tal, n_m, n_s, t0, horizon, single, params, gen, track, log, max_events):
    P, T, rid, rec_i, rec_f = _buffers(pos, tal, n_m + n_s, track)
    prm, qk, qcum, nk, ncum = params.pack()
    mi, mf, lo, hi, q = params.movement.pack()
    ev_i = np.zeros((64, 5), dtype=np.int64)
    ev_f = np.zeros(64)
    ev_h = np.zeros(64)
    res = kernels.evolve(
        P, rid, T, n_m, n_s, t0, horizon, single,
        prm, qk, qcum, nk, ncum, mi, mf, lo, hi, q, gen,
        track, log, rec_i, rec_f, n_m + n_s, ev_i, ev_f, ev_h, 0, max_events,
    )
    if res[14] != kernels.STATUS_OK:
        raise RuntimeError(f"event budget of {max_events} exceeded; population is exploding")
    return res


def _records(res, init_labels, init_tal, n_settled0, t0):
    """Rebuild ParticleRecords from the kernel's record tables."""
    P, rid, n_m, n_s = res[0], res[1], res[3], res[4]
    rec_i, rec_f, n_rec = res[6], res[7], res[8]
    n0 = len(init_labels)
    labels: list[Label] = list(init_labels)
    children = np.zeros(n_rec, dtype=np.int64)
    for r in range(n0, n_rec):
        par = int(rec_i[r, 0])
        labels.append(Label(tuple(labels[par]) + (int(rec_i[r, 1]),)))
        children[par] += 1
    slot_of = {int(rid[s]): s for s in range(n_m + n_s)}
    out = []
    for r in range(n_rec):
        initial = r < n0
        settle = rec_f[r, 1]
        death = rec_f[r, 2]
        if not math.isnan(settle):
            settle_t = float(settle)
        elif initial and r >= n0 - n_settled0:
            settle_t = t0
        else:
            settle_t = None
        out.append(
            ParticleRecord(
                labels[r],
                t0 if initial else float(rec_f[r, 0]),
                settle_t,
                None if math.isnan(death) else float(death),
                (int(init_tal[r]) if initial else 0) + int(children[r]),
                P[slot_of[r]].copy() if r in slot_of else CEMETERY,
            )
        )
    return out


def simulate(initial, params: Params, horizon: float, rng, *, labeled: bool | None = None,
             log: bool = True, max_events: int = MAX_EVENTS):
    """Simulate up to ``horizon`` (measured from the initial state's time).

    ``initial`` is a :class:`SimplifiedState` or a :class:`FullConfiguration`;
    labeled mode (the default for a full configuration) also returns the
    genealogy of every particle ever alive on ``EventLog.records``.  Returns
    ``(EventLog, final_state)`` with the final state in the input's
    representation unless ``labeled`` says otherwise.
    """
    if not horizon >= 0:
        raise ValueError("horizon must be non-negative")
    gen, seed, stream = _as_generator(rng)
    if labeled is None:
        labeled = isinstance(initial, FullConfiguration)
    pos, tal, n_m, n_s, init_labels, t0 = _prepare(initial, params)
    n0 = n_m + n_s
    evlog = EventLog(seed, params.digest(), [], stream)
    if n0 == 0:
        final = initial if not labeled else FullConfiguration((), t0 + horizon)
        if labeled:
            evlog.records = ()
        elif isinstance(initial, FullConfiguration):
            final = SimplifiedState.cemetery(params.movement.point_dim)
        return evlog, final
    res = _run(pos, tal, n_m, n_s, t0, t0 + horizon, False, params, gen, labeled, log, max_events)
    records = None
    if labeled:
        records = _records(res, init_labels, tal, n_s, t0)
        evlog.records = tuple(records)
    if log:
        evlog.events = _events(res, records)
    P, rid, nm, ns = res[0], res[1], res[3], res[4]
    if labeled:
        living = tuple(records[int(rid[s])] for s in range(nm + ns))
        return evlog, FullConfiguration(living, t0 + horizon)
    return evlog, SimplifiedState(nm, ns, P[: nm + ns].copy().reshape(nm + ns, P.shape[1]))


def _events(res, records):
    ev_i, ev_f, ev_h, n_ev = res[9], res[10], res[11], res[12]
    out = []
    for e in range(n_ev):
        r = int(ev_i[e, 1])
        out.append(
            Event(
                float(ev_f[e]), kernels.EVENT_NAMES[int(ev_i[e, 0])], int(ev_i[e, 2]),
                int(ev_i[e, 3]), int(ev_i[e, 4]), float(ev_h[e]), r,
                None if records is None else records[r].label,
            )
        )
    return out


def step(state: SimplifiedState, params: Params, rng):
    """Advance to the next clock ring.

    Returns ``(dt, event, new_state)``; ``dt`` is ``inf`` and ``event`` is
    ``None`` when no clock is active.  Settled particles are taken to have no
    earlier offspring.
    """
    if not isinstance(state, SimplifiedState):
        raise TypeError("step works on SimplifiedState")
    if state.is_cemetery:
        raise ValueError("cemetery is absorbing; nothing to step")
    if params.instant_settled_death:
        raise ValueError("delta_S = inf is handled by simulate, not step")
    gen, _, _ = _as_generator(rng)
    pos, tal, n_m, n_s, _, _ = _prepare(state, params)
    res = _run(pos, tal, n_m, n_s, 0.0, math.inf, True, params, gen, False, True, MAX_EVENTS)
    events = [e for e in _events(res, None) if e.kind != "MovementKill"]
    P, nm, ns = res[0], res[3], res[4]
    new = SimplifiedState(nm, ns, P[: nm + ns].copy().reshape(nm + ns, -1)) if nm + ns else (
        SimplifiedState.cemetery(state.point_dim))
    if res[13] == 0:
        return math.inf, None, state
    return float(res[5]), (events[-1] if events else None), new


def _batch_block(args):
    (pos, tal, n_m, n_s, horizon, count, key, params, fn, max_events) = args
    prm, qk, qcum, nk, ncum = params.pack()
    mi, mf, lo, hi, q = params.movement.pack()
    W, outside, pf, cv = fn
    return kernels.run_batch(
        pos, tal, n_m, n_s, horizon, count, prm, qk, qcum, nk, ncum, mi, mf, lo, hi, q,
        W, outside, pf, cv, key.generator(), max_events,
    )


_NO_FN = (np.ones((1, 1)), 1.0, np.zeros(1), np.zeros(0))


def simulate_batch(initial, params: Params, horizon: float, n: int, key: StreamKey, *,
                   fn=None, threads: int = 1, block: int = BLOCK_SIZE, max_events: int = MAX_EVENTS) -> np.ndarray:
    """Run ``n`` independent replicas to ``horizon``.

    Returns an ``(n, 6)`` array with columns n_m, n_s, test-function value,
    summed particle profile, number of clock rings, and the initial index of
    the particle in the first slot (-1 when that is not an initial particle).  ``fn`` is the packed
    test function ``(W, outside, width, chain_values)``.  Replica ``i`` always
    draws from the stream of block ``i // block``, whatever ``threads`` is.
    """
    if not horizon >= 0:
        raise ValueError("horizon must be non-negative")
    pos, tal, n_m, n_s, _, _ = _prepare(initial, params)
    fn = _NO_FN if fn is None else fn
    jobs = [
        (pos, tal, n_m, n_s, float(horizon), count, bkey, params, fn, max_events)
        for _, count, bkey in replica_blocks(key, n, block)
    ]
    if not jobs:
        return np.zeros((0, 6))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(_batch_block, jobs))
    else:
        parts = [_batch_block(j) for j in jobs]
    return np.concatenate(parts, axis=0)


def simplify(full: FullConfiguration) -> SimplifiedState:
    """Project a labeled configuration onto counts and ordered positions."""
    moving = [r for r in full.living if r.settle_time is None]
    settled = [r for r in full.living if r.settle_time is not None]
    if not moving and not settled:
        return SimplifiedState.cemetery()
    pts = [np.asarray(r.position, dtype=float) for r in moving + settled]
    return SimplifiedState(len(moving), len(settled), np.vstack(pts))


def metric_simplified(x: SimplifiedState, y: SimplifiedState, movement: MovementSpec | None = None) -> float:
    """Distance on count-based states.

    Different counts are at distance 1; equal counts give
    ``min(sum_p d(z_p^x, z_p^y), 1)``.  The cemetery is an isolated point at
    distance 1 from every living state.
    """
    if x.is_cemetery or y.is_cemetery:
        return 0.0 if (x.is_cemetery and y.is_cemetery) else 1.0
    if x.n_m != y.n_m or x.n_s != y.n_s:
        return 1.0
    if x.positions.shape != y.positions.shape:
        raise ValueError("point dimension mismatch between states with equal counts")
    total = 0.0
    for zx, zy in zip(x.positions, y.positions):
        total += point_distance(movement, zx, zy)
    return min(total, 1.0)


def population_bound_C(params: Params) -> float:
    """Growth constant C of the bound E|M(t)| <= exp(C t)."""
    per_rate_batch = params.batch_moment / params.mu_B if params.mu_B > 0 else 0.0
    return (params.mu_S + params.mu_B) * (params.mean_burst + per_rate_batch + 1.0)


def check_accounting(log: EventLog, n_m: int, n_s: int, params: Params) -> bool:
    """Replay the count changes implied by each event against the stored counts."""
    # Clock rings are strictly increasing.  Euler kills of the approximate
    # killed movement sit on the sub-step grid and may tie with a ring.
    prev_clock = prev_any = -math.inf
    for e in log.events:
        if e.t < prev_any:
            return False
        if e.kind != "MovementKill":
            if not e.t > prev_clock:
                return False
            prev_clock = e.t
        prev_any = e.t
        if e.kind in ("MovingDeath", "MovementKill"):
            n_m -= 1
        elif e.kind == "SettledDeath":
            n_s -= 1
        elif e.kind == "Settlement":
            n_m += e.k - 1
            survive = not params.instant_settled_death and (params.L is None or e.k < params.L)
            n_s += 1 if survive else 0
        elif e.kind == "Birth":
            n_m += e.k
            if e.n_s == n_s - 1 and params.L is not None:
                n_s -= 1
        else:
            return False
        if (n_m, n_s) != (e.n_m, e.n_s):
            return False
    return True
