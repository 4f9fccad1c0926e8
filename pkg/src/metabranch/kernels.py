"""Compiled hot loops: the event-driven simulator and the coupled pair.

State layout used throughout: ``pos[:n_m]`` are moving particles and
``pos[n_m:n_m + n_s]`` settled ones.  ``rid`` holds a record id per slot and
``tal`` the offspring tally (only meaningful for settled slots).  Births go to
the end of the moving block, a settler goes to the end of the settled block,
removals keep the order of the remaining slots.
"""
import math

import numpy as np

from ._jit import njit
from .movement import advance_point
from .rngstats import categorical_draw, exp_draw, uniform_open

MOVING_DEATH = 0
SETTLEMENT = 1
SETTLED_DEATH = 2
BIRTH = 3
MOVEMENT_KILL = 4

EVENT_NAMES = ("MovingDeath", "Settlement", "SettledDeath", "Birth", "MovementKill")

# rows of the per-record integer table / float table
REC_PARENT, REC_ORDINAL, REC_TALLY0 = 0, 1, 2
REC_BIRTH, REC_SETTLE, REC_DEATH = 0, 1, 2

STATUS_OK = 0
STATUS_BUDGET = 1


@njit
def grow_f2(a, need):
    if need <= a.shape[0]:
        return a
    b = np.empty((max(need, 2 * a.shape[0]), a.shape[1]), dtype=np.float64)
    b[: a.shape[0]] = a
    return b


@njit
def grow_i2(a, need):
    if need <= a.shape[0]:
        return a
    b = np.empty((max(need, 2 * a.shape[0]), a.shape[1]), dtype=np.int64)
    b[: a.shape[0]] = a
    return b


@njit
def grow_f1(a, need):
    if need <= a.shape[0]:
        return a
    b = np.empty(max(need, 2 * a.shape[0]), dtype=np.float64)
    b[: a.shape[0]] = a
    return b


@njit
def grow_i1(a, need):
    if need <= a.shape[0]:
        return a
    b = np.empty(max(need, 2 * a.shape[0]), dtype=np.int64)
    b[: a.shape[0]] = a
    return b


@njit
def checksum(pos, n):
    """Order-sensitive float checksum of the first ``n`` rows."""
    s = float(n)
    w = 1.0
    for i in range(n):
        for c in range(pos.shape[1]):
            w += 0.6180339887498949
            s += pos[i, c] * w
    return s


@njit
def _remove_slot(pos, rid, tal, slot, n):
    for r in range(slot, n - 1):
        pos[r, :] = pos[r + 1, :]
        rid[r] = rid[r + 1]
        tal[r] = tal[r + 1]


@njit
def _shift_right(pos, rid, tal, start, stop, k):
    """Move rows [start, stop) to [start + k, stop + k)."""
    for r in range(stop - 1, start - 1, -1):
        pos[r + k, :] = pos[r, :]
        rid[r + k] = rid[r]
        tal[r + k] = tal[r]


@njit
def _new_record(rec_i, rec_f, n_rec, track, parent, ordinal, t):
    if track:
        rec_i = grow_i2(rec_i, n_rec + 1)
        rec_f = grow_f2(rec_f, n_rec + 1)
        rec_i[n_rec, 0] = parent
        rec_i[n_rec, 1] = ordinal
        rec_i[n_rec, 2] = 0
        rec_f[n_rec, 0] = t
        rec_f[n_rec, 1] = np.nan
        rec_f[n_rec, 2] = np.nan
    return rec_i, rec_f, n_rec + 1


@njit
def _log_event(ev_i, ev_f, ev_h, n_ev, t, kind, subject, k, n_m, n_s, pos):
    ev_i = grow_i2(ev_i, n_ev + 1)
    ev_f = grow_f1(ev_f, n_ev + 1)
    ev_h = grow_f1(ev_h, n_ev + 1)
    ev_f[n_ev] = t
    ev_i[n_ev, 0] = kind
    ev_i[n_ev, 1] = subject
    ev_i[n_ev, 2] = k
    ev_i[n_ev, 3] = n_m
    ev_i[n_ev, 4] = n_s
    ev_h[n_ev] = checksum(pos, n_m + n_s)
    return ev_i, ev_f, ev_h, n_ev + 1


@njit
def _select(u, n_m, n_s, rates):
    """Pick (category, index) from the stacked per-particle rates.

    Categories in tie-break order: moving death, settlement, settled death,
    birth.
    """
    last = -1
    acc = 0.0
    for cat in range(4):
        cnt = n_m if cat < 2 else n_s
        r = rates[cat]
        if cnt == 0 or r <= 0.0:
            continue
        last = cat
        block = cnt * r
        if u < acc + block:
            idx = int((u - acc) / r)
            if idx >= cnt:
                idx = cnt - 1
            return cat, idx
        acc += block
    # rounding pushed u past the total: take the last active slot
    cnt = n_m if last < 2 else n_s
    return last, cnt - 1


@njit
def _move_block(pos, rid, tal, n_m, n_s, t0, dt, mi, mf, lo, hi, Q, rng,
                track, log, rec_f, ev_i, ev_f, ev_h, n_ev):
    """Advance every moving particle by ``dt``; remove and log the killed ones."""
    if mi[0] != 1:
        for i in range(n_m):
            advance_point(pos, i, dt, mi, mf, lo, hi, Q, rng)
        return n_m, ev_i, ev_f, ev_h, n_ev
    killed_at = np.empty(n_m, dtype=np.float64)
    n_kill = 0
    for i in range(n_m):
        killed_at[i] = advance_point(pos, i, dt, mi, mf, lo, hi, Q, rng)
        if killed_at[i] >= 0.0:
            n_kill += 1
    if n_kill == 0:
        return n_m, ev_i, ev_f, ev_h, n_ev
    victims = np.empty(n_kill, dtype=np.int64)
    times = np.empty(n_kill, dtype=np.float64)
    j = 0
    for i in range(n_m):
        if killed_at[i] >= 0.0:
            victims[j] = rid[i]
            times[j] = killed_at[i]
            j += 1
    order = np.argsort(times, kind="mergesort")
    for oi in range(n_kill):
        v = victims[order[oi]]
        for slot in range(n_m):
            if rid[slot] == v:
                _remove_slot(pos, rid, tal, slot, n_m + n_s)
                n_m -= 1
                break
        tk = t0 + times[order[oi]]
        if track:
            rec_f[v, 2] = tk
        if log:
            ev_i, ev_f, ev_h, n_ev = _log_event(ev_i, ev_f, ev_h, n_ev, tk, MOVEMENT_KILL, v, 0, n_m, n_s, pos)
    return n_m, ev_i, ev_f, ev_h, n_ev


@njit
def evolve(pos, rid, tal, n_m, n_s, t, horizon, single,
           prm, qk, qcum, nk, ncum, mi, mf, lo, hi, Q, rng,
           track, log, rec_i, rec_f, n_rec, ev_i, ev_f, ev_h, n_ev, max_events):
    """Run the exact event loop from time ``t``.

    With ``single`` the loop stops after the first clock ring (no horizon);
    otherwise it stops at ``horizon`` with every moving particle advanced to
    exactly that time.  Buffers may be reallocated and are returned.
    """
    mu_S = prm[0]
    mu_B = prm[1]
    d_M = prm[2]
    d_S = prm[3]
    instant = prm[4] > 0.0
    cap = prm[5]
    rates = np.array([d_M, mu_S, d_S, mu_B])
    killing = mi[0] == 1
    n_events = 0
    status = STATUS_OK
    while True:
        R = n_m * (d_M + mu_S) + n_s * (d_S + mu_B)
        if R > 0.0:
            dt = exp_draw(rng, R)
        else:
            dt = np.inf
        if single and R <= 0.0:
            break
        if not single and t + dt > horizon:
            n_m, ev_i, ev_f, ev_h, n_ev = _move_block(
                pos, rid, tal, n_m, n_s, t, horizon - t, mi, mf, lo, hi, Q, rng,
                track, log, rec_f, ev_i, ev_f, ev_h, n_ev)
            t = horizon
            break
        u = rng.random() * R
        cat, idx = _select(u, n_m, n_s, rates)
        subject = rid[idx] if cat < 2 else rid[n_m + idx]
        n_m_before = n_m
        n_m, ev_i, ev_f, ev_h, n_ev = _move_block(
            pos, rid, tal, n_m, n_s, t, dt, mi, mf, lo, hi, Q, rng,
            track, log, rec_f, ev_i, ev_f, ev_h, n_ev)
        t = t + dt
        n_events += 1
        if killing and n_m != n_m_before:
            if cat < 2:
                idx = -1
                for slot in range(n_m):
                    if rid[slot] == subject:
                        idx = slot
                        break
                if idx < 0:
                    # the clock belonged to a particle that was already killed
                    if single:
                        break
                    continue
        n = n_m + n_s
        if cat == MOVING_DEATH:
            _remove_slot(pos, rid, tal, idx, n)
            n_m -= 1
            if track:
                rec_f[subject, 2] = t
            k = 0
        elif cat == SETTLEMENT:
            if qk.shape[0] == 1:
                k = qk[0]
            else:
                k = qk[categorical_draw(rng, qcum)]
            base = tal[idx]
            survive = (not instant) and (k < cap)
            need = n - 1 + k + (1 if survive else 0)
            if need > pos.shape[0]:
                pos = grow_f2(pos, need)
                rid = grow_i1(rid, need)
                tal = grow_i1(tal, need)
            z = pos[idx, :].copy()
            _remove_slot(pos, rid, tal, idx, n)
            _shift_right(pos, rid, tal, n_m - 1, n - 1, k)
            for j in range(k):
                r = n_m - 1 + j
                pos[r, :] = z
                rid[r] = n_rec
                tal[r] = 0
                rec_i, rec_f, n_rec = _new_record(rec_i, rec_f, n_rec, track, subject, base + j + 1, t)
            n_m = n_m - 1 + k
            if track:
                rec_f[subject, 1] = t
            if survive:
                r = n_m + n_s
                pos[r, :] = z
                rid[r] = subject
                tal[r] = base + k
                n_s += 1
            elif track:
                rec_f[subject, 2] = t
        elif cat == SETTLED_DEATH:
            _remove_slot(pos, rid, tal, n_m + idx, n)
            n_s -= 1
            if track:
                rec_f[subject, 2] = t
            k = 0
        else:
            if nk.shape[0] == 1:
                k = nk[0]
            else:
                k = nk[categorical_draw(rng, ncum)]
            slot = n_m + idx
            c = tal[slot]
            need = n + k
            if need > pos.shape[0]:
                pos = grow_f2(pos, need)
                rid = grow_i1(rid, need)
                tal = grow_i1(tal, need)
            z = pos[slot, :].copy()
            _shift_right(pos, rid, tal, n_m, n, k)
            for j in range(k):
                r = n_m + j
                pos[r, :] = z
                rid[r] = n_rec
                tal[r] = 0
                rec_i, rec_f, n_rec = _new_record(rec_i, rec_f, n_rec, track, subject, c + j + 1, t)
            n_m += k
            slot += k
            if c + k >= cap:
                _remove_slot(pos, rid, tal, slot, n + k)
                n_s -= 1
                if track:
                    rec_f[subject, 2] = t
            else:
                tal[slot] = c + k
        if log:
            ev_i, ev_f, ev_h, n_ev = _log_event(ev_i, ev_f, ev_h, n_ev, t, cat, subject, k, n_m, n_s, pos)
        if single:
            break
        if n_events >= max_events:
            status = STATUS_BUDGET
            break
    return pos, rid, tal, n_m, n_s, t, rec_i, rec_f, n_rec, ev_i, ev_f, ev_h, n_ev, n_events, status


@njit
def particle_value(pos, p, mi, pf, cv):
    nc = mi[1]
    v = 1.0
    a = pf[0]
    if a > 0.0 and nc > 0:
        r2 = 0.0
        for c in range(nc):
            r2 += pos[p, c] * pos[p, c]
        v = math.exp(-r2 / (2.0 * a * a))
    if cv.shape[0] > 0 and mi[2] > 0:
        v *= cv[int(pos[p, nc])]
    return v


@njit
def run_batch(init_pos, init_tal, n_m0, n_s0, horizon, n,
              prm, qk, qcum, nk, ncum, mi, mf, lo, hi, Q,
              W, outside, pf, cv, rng, max_events):
    """Independent replicas from one initial state, sharing one stream.

    Columns of the result: n_m, n_s, test-function value, sum of the particle
    profile over living particles, number of clock rings, index of the
    initial particle occupying the first slot (-1 if it is a descendant or
    the population is empty).
    """
    out = np.empty((n, 6), dtype=np.float64)
    D = init_pos.shape[1]
    n0 = n_m0 + n_s0
    cap0 = max(16, 4 * n0)
    pos = np.empty((cap0, D), dtype=np.float64)
    rid = np.empty(cap0, dtype=np.int64)
    tal = np.empty(cap0, dtype=np.int64)
    rec_i = np.empty((1, 3), dtype=np.int64)
    rec_f = np.empty((1, 3), dtype=np.float64)
    ev_i = np.empty((1, 5), dtype=np.int64)
    ev_f = np.empty(1, dtype=np.float64)
    ev_h = np.empty(1, dtype=np.float64)
    for r in range(n):
        for i in range(n0):
            pos[i, :] = init_pos[i, :]
            rid[i] = i
            tal[i] = init_tal[i]
        res = evolve(pos, rid, tal, n_m0, n_s0, 0.0, horizon, False,
                     prm, qk, qcum, nk, ncum, mi, mf, lo, hi, Q, rng,
                     False, False, rec_i, rec_f, n0, ev_i, ev_f, ev_h, 0, max_events)
        pos = res[0]
        rid = res[1]
        tal = res[2]
        nm = res[3]
        ns = res[4]
        if res[14] != STATUS_OK:
            raise RuntimeError("event budget exceeded")
        if nm < W.shape[0] and ns < W.shape[1]:
            w = W[nm, ns]
        else:
            w = outside
        prod = 1.0
        add = 0.0
        for p in range(nm + ns):
            v = particle_value(pos, p, mi, pf, cv)
            prod *= v
            add += v
        out[r, 0] = nm
        out[r, 1] = ns
        out[r, 2] = w * prod
        out[r, 3] = add
        out[r, 4] = res[13]
        out[r, 5] = rid[0] if (nm + ns > 0 and rid[0] < n0) else -1
    return out


@njit
def run_to(init_pos, init_tal, n_m0, n_s0, t0, horizon,
           prm, qk, qcum, nk, ncum, mi, mf, lo, hi, Q, rng, max_events):
    """One run from an arbitrary internal state; returns positions, tallies and counts."""
    D = init_pos.shape[1]
    n0 = n_m0 + n_s0
    cap0 = max(16, 4 * n0)
    pos = np.empty((cap0, D), dtype=np.float64)
    rid = np.empty(cap0, dtype=np.int64)
    tal = np.empty(cap0, dtype=np.int64)
    for i in range(n0):
        pos[i, :] = init_pos[i, :]
        rid[i] = i
        tal[i] = init_tal[i]
    res = evolve(pos, rid, tal, n_m0, n_s0, t0, horizon, False,
                 prm, qk, qcum, nk, ncum, mi, mf, lo, hi, Q, rng,
                 False, False, np.empty((1, 3), dtype=np.int64), np.empty((1, 3)), n0,
                 np.empty((1, 5), dtype=np.int64), np.empty(1), np.empty(1), 0, max_events)
    if res[14] != STATUS_OK:
        raise RuntimeError("event budget exceeded")
    n = res[3] + res[4]
    return res[0][:n].copy(), res[2][:n].copy(), res[3], res[4]


@njit
def _push(stk_i, stk_f, sp, kind, a, b, tally):
    if sp >= stk_i.shape[0]:
        stk_i = grow_i2(stk_i, sp + 1)
        stk_f = grow_f2(stk_f, sp + 1)
    stk_i[sp, 0] = kind
    stk_i[sp, 1] = tally
    stk_f[sp, 0] = a
    stk_f[sp, 1] = b
    return stk_i, stk_f, sp + 1


@njit
def coupled_one(prm, qk, qcum, nk, ncum, horizon, rng):
    """One coupled draw of (N(t), Nbar(t)).

    Each moving particle of the metastatic process born at ``a`` is paired
    with a particle of the one-type branching process born at ``b <= a``; the
    settlement clock ``-ln U / mu_S`` and the split clock
    ``-ln U / (mu_S + mu_B)`` share ``U``.  The burst size is shared with the
    split's first offspring, and the extra "+1" offspring continues the
    pairing with the settled particle, whose next birth clock
    ``-ln U' / mu_B`` shares ``U'`` with the continuation's split clock and
    whose batch size is shared with the continuation's extra offspring count.
    Entries of the work stack: 0 = paired moving, 1 = paired settled,
    2 = unpaired particle of the dominating process.
    """
    mu_S = prm[0]
    mu_B = prm[1]
    d_M = prm[2]
    d_S = prm[3]
    instant = prm[4] > 0.0
    cap = prm[5]
    split = mu_S + mu_B
    stk_i = np.empty((64, 2), dtype=np.int64)
    stk_f = np.empty((64, 2), dtype=np.float64)
    sp = 0
    stk_i, stk_f, sp = _push(stk_i, stk_f, sp, 0, 0.0, 0.0, 0)
    N = 0
    Nbar = 0
    while sp > 0:
        sp -= 1
        kind = stk_i[sp, 0]
        tally = stk_i[sp, 1]
        a = stk_f[sp, 0]
        b = stk_f[sp, 1]
        if kind == 2:
            s = b + exp_draw(rng, split)
            if s > horizon:
                Nbar += 1
                continue
            k = qk[categorical_draw(rng, qcum)]
            y = nk[categorical_draw(rng, ncum)] if mu_B > 0.0 else 0
            for j in range(k + y + 1):
                stk_i, stk_f, sp = _push(stk_i, stk_f, sp, 2, 0.0, s, 0)
            continue
        e = -math.log(uniform_open(rng))
        if kind == 0:
            settle = a + e / mu_S
            s = b + e / split
            death = a + exp_draw(rng, d_M) if d_M > 0.0 else np.inf
            if settle > horizon and death > horizon:
                N += 1
            x_event = settle <= horizon and settle < death
        else:
            settle = a + e / mu_B if mu_B > 0.0 else np.inf
            s = b + e / split
            death = a + exp_draw(rng, d_S) if d_S > 0.0 else np.inf
            if settle > horizon and death > horizon:
                N += 1
            x_event = settle <= horizon and settle < death
        if s > horizon:
            Nbar += 1
            continue
        k = qk[categorical_draw(rng, qcum)]
        y = nk[categorical_draw(rng, ncum)] if mu_B > 0.0 else 0
        if not x_event:
            for j in range(k + y + 1):
                stk_i, stk_f, sp = _push(stk_i, stk_f, sp, 2, 0.0, s, 0)
            continue
        if kind == 0:
            # settlement at `settle`: burst children paired with the first k offspring
            for j in range(k):
                stk_i, stk_f, sp = _push(stk_i, stk_f, sp, 0, settle, s, 0)
            for j in range(y):
                stk_i, stk_f, sp = _push(stk_i, stk_f, sp, 2, 0.0, s, 0)
            if (not instant) and k < cap:
                stk_i, stk_f, sp = _push(stk_i, stk_f, sp, 1, settle, s, k)
            else:
                stk_i, stk_f, sp = _push(stk_i, stk_f, sp, 2, 0.0, s, 0)
        else:
            # birth batch of size y at `settle`, paired with the continuation's y offspring
            for j in range(y):
                stk_i, stk_f, sp = _push(stk_i, stk_f, sp, 0, settle, s, 0)
            for j in range(k):
                stk_i, stk_f, sp = _push(stk_i, stk_f, sp, 2, 0.0, s, 0)
            if tally + y < cap:
                stk_i, stk_f, sp = _push(stk_i, stk_f, sp, 1, settle, s, tally + y)
            else:
                stk_i, stk_f, sp = _push(stk_i, stk_f, sp, 2, 0.0, s, 0)
    return N, Nbar


@njit
def run_coupled(n, prm, qk, qcum, nk, ncum, horizon, rng):
    out = np.empty((n, 2), dtype=np.int64)
    for r in range(n):
        N, Nbar = coupled_one(prm, qk, qcum, nk, ncum, horizon, rng)
        out[r, 0] = N
        out[r, 1] = Nbar
    return out
