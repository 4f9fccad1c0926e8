import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from metabranch import FullConfiguration, MovementSpec, Params, Profile, SimplifiedState, StreamKey, simulate
from metabranch import verify
from metabranch.movement import generator_apply_movement, kernel_expectation
from metabranch.verify import (
    DBBM, NON_FELLER_PROFILE, TestFunction, bbm_many_to_one, coupled_batch, coupled_simulate,
    dominating_expectation, generator_apply_full, generator_residual, markov_restart_test,
    mc_semigroup, non_feller_demo, pooled_chi2, tensor_conditioned_mc, tensor_expectation,
)

BM = MovementSpec.brownian(1, 1.0)
HAND = Params(mu_S=2.0, delta_M=1.0, q={1: 1.0}, movement=BM)
HAND_F = TestFunction({(1, 0): 1.0}, Profile(1.0))
ORIGIN = SimplifiedState(1, 0, [[0.0]])


# generator evaluation ---------------------------------------------------------

def test_hand_value():
    assert generator_apply_full(HAND_F, ORIGIN, HAND) == pytest.approx(-3.5, abs=1e-15)


def test_zero_function():
    p = Params(mu_S=1, mu_B=1, nu={2: 1}, q={0: 0.5, 2: 0.5}, delta_M=0.3, delta_S=0.2, movement=BM)
    x = SimplifiedState(1, 1, [[0.1], [0.4]])
    assert generator_apply_full(TestFunction({}), x, p) == 0.0
    assert generator_apply_full(HAND_F, SimplifiedState.cemetery(), HAND) == 0.0


@settings(max_examples=60, deadline=None)
@given(st.floats(-2, 2), st.floats(0, 3), st.floats(0, 3), st.floats(0.3, 2))
def test_single_moving_sector_matches_exact_semigroup(z, d, mu, a):
    # from (1,0) the sector (1,0) can only be kept by having no event, so
    # P_t f = exp(-(d+mu)t) T_t phi and A f = -(d+mu) phi + G phi
    p = Params(mu_S=mu, delta_M=d, q={1: 0.5, 3: 0.5}, movement=BM)
    f = TestFunction({(1, 0): 1.0}, Profile(a))
    phi = math.exp(-z * z / (2 * a * a))
    h = 1e-6
    exact = lambda t: math.exp(-(d + mu) * t) * kernel_expectation(BM, Profile(a), z, t)
    fd = (exact(h) - exact(0)) / h
    got = generator_apply_full(f, SimplifiedState(1, 0, [[z]]), p)
    assert got == pytest.approx(-(d + mu) * phi + generator_apply_movement(BM, Profile(a), z), abs=1e-12)
    assert got == pytest.approx(fd, abs=1e-4 * (1 + abs(fd)))


@settings(max_examples=60, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0, 2), st.floats(0, 2))
def test_two_moving_product_rule(z1, z2, d, mu):
    p = Params(mu_S=mu, delta_M=d, q={0: 0.5, 2: 0.5}, movement=BM)
    prof = Profile(1.0)
    f = TestFunction({(2, 0): 1.0}, prof)
    h = 1e-6
    exact = lambda t: math.exp(-2 * (d + mu) * t) * kernel_expectation(BM, prof, z1, t) * kernel_expectation(BM, prof, z2, t)
    fd = (exact(h) - exact(0)) / h
    got = generator_apply_full(f, SimplifiedState(2, 0, [[z1], [z2]]), p)
    assert got == pytest.approx(fd, abs=1e-4 * (1 + abs(fd)))


@settings(max_examples=40, deadline=None)
@given(st.floats(-2, 2), st.floats(0, 2), st.floats(0, 2), st.sampled_from([1, 2, 3]))
def test_settled_particle_sector(z, ds, mu_b, k):
    # a lone settled particle does not move; it leaves (0,1) at rate ds + mu_B
    p = Params(mu_S=1.0, mu_B=mu_b, nu={k: mu_b} if mu_b else {}, delta_S=ds, movement=BM)
    f = TestFunction({(0, 1): 1.0}, Profile(1.0))
    phi = math.exp(-z * z / 2)
    assert generator_apply_full(f, SimplifiedState(0, 1, [[z]]), p) == pytest.approx(-(ds + mu_b) * phi, abs=1e-12)


def test_birth_term_layout():
    # birth of k from the settled particle gives (k, 1) with every point at z
    p = Params(mu_S=1.0, mu_B=0.7, nu={2: 0.7}, movement=BM)
    f = TestFunction({(2, 1): 1.0}, Profile(1.0))
    z = 0.6
    phi = math.exp(-z * z / 2)
    assert generator_apply_full(f, SimplifiedState(0, 1, [[z]]), p) == pytest.approx(0.7 * phi**3, abs=1e-15)


def test_settlement_term_with_burst():
    p = Params(mu_S=1.5, q={2: 1.0}, movement=BM)
    f = TestFunction({(2, 1): 1.0}, Profile(1.0))
    z = -0.4
    phi = math.exp(-z * z / 2)
    assert generator_apply_full(f, SimplifiedState(1, 0, [[z]]), p) == pytest.approx(1.5 * phi**3, abs=1e-15)


def test_generator_domain_errors():
    with pytest.raises(ValueError, match="outside the generator assumptions"):
        generator_apply_full(HAND_F, ORIGIN, DBBM())
    killed = HAND.replace(movement=MovementSpec.killed_brownian([-1], [1]))
    with pytest.raises(ValueError, match="outside the generator assumptions"):
        generator_apply_full(HAND_F, ORIGIN, killed)


def test_chain_generator_in_full_operator():
    Q = [[0, 0.5], [0.7, 0]]
    spec = MovementSpec.chain(Q)
    p = Params(mu_S=0.0, movement=spec)
    f = TestFunction({(1, 0): 1.0}, Profile(None, (1.0, 3.0)))
    assert generator_apply_full(f, SimplifiedState(1, 0, [[0]]), p) == pytest.approx(0.5 * 2.0)
    assert generator_apply_full(f, SimplifiedState(1, 0, [[1]]), p) == pytest.approx(0.7 * -2.0)


# semigroup and residual ---------------------------------------------------

def test_mc_semigroup_trivial_cases():
    assert mc_semigroup(HAND_F, ORIGIN, HAND, 0.0, 10, StreamKey(1)) == (1.0, 0.0)
    p = Params(mu_S=1, mu_B=1, nu={1: 1}, q={0: 0.5, 2: 0.5}, delta_M=1, delta_S=1, movement=BM)
    m, se = mc_semigroup(TestFunction.constant(), ORIGIN, p, 2.0, 5000, StreamKey(2))
    assert (m, se) == (1.0, 0.0)


def test_mc_semigroup_dbbm_count():
    f = TestFunction({(n, 0): float(n) for n in range(1, 200)}, Profile(None))
    m, se = mc_semigroup(f, ORIGIN, DBBM(), 1.0, 40000, StreamKey(3))
    assert abs(m - math.e) <= 4 * se


def test_mc_semigroup_matches_exact_survival():
    t = 0.3
    m, se = mc_semigroup(HAND_F, ORIGIN, HAND, t, 10**5, StreamKey(4))
    exact = math.exp(-3 * t) * kernel_expectation(BM, Profile(1.0), 0.0, t)
    assert abs(m - exact) <= 4 * se


def test_residual_of_zero_function():
    rep = generator_residual(TestFunction({}), ORIGIN, HAND, StreamKey(5), n=100)
    assert rep.residuals == (0.0, 0.0, 0.0) and rep.passed


def test_wrong_generator_is_caught(monkeypatch):
    rep = generator_residual(HAND_F, ORIGIN, HAND, StreamKey(6), n=2 * 10**5)
    real = verify.generator_apply_full
    monkeypatch.setattr(verify, "generator_apply_full", lambda f, x, p: real(f, x, p) + 1.0)
    bad = generator_residual(HAND_F, ORIGIN, HAND, StreamKey(6), n=2 * 10**5)
    assert bad.means == rep.means
    assert not bad.passed


def test_residual_report_shape():
    rep = generator_residual(HAND_F, ORIGIN, HAND, StreamKey(7), n=20000)
    d = rep.to_dict()
    assert d["times"] == [0.02, 0.01, 0.005] and d["generator"] == pytest.approx(-3.5)
    assert len(d["budgets"]) == 3 and d["K"] >= 0
    with pytest.raises(ValueError):
        generator_residual(HAND_F, ORIGIN, HAND, StreamKey(7), times=(0.1,), n=10)


# coupling -------------------------------------------------------------------

COUPLE = Params(mu_S=1, mu_B=1, nu={1: 1}, q={1: 1}, delta_M=0.5, delta_S=0.5, movement=BM)


def test_dominating_expectation_examples():
    p = Params(mu_S=1, mu_B=1, nu={1: 1}, q={1: 1}, movement=BM)
    mean, bound = dominating_expectation(p, 0.5)
    assert mean == pytest.approx(math.exp(2.0)) and bound == pytest.approx(math.exp(3.0))
    assert dominating_expectation(p, 0.0) == (1.0, 1.0)
    assert dominating_expectation(Params(mu_S=1, q={0: 1}, movement=BM), 3.0)[0] == 1.0


def test_coupling_start_and_degenerate():
    assert coupled_simulate(COUPLE, 0.0, StreamKey(8)) == (1, 1)
    p = Params(mu_S=1.0, q={0: 1.0}, delta_M=0.3, movement=BM)
    out = coupled_batch(p, 2.0, 2000, StreamKey(9))
    assert np.all(out[:, 1] == 1) and np.all(out[:, 0] <= 1)


def test_coupling_dominance_and_mean():
    t = 0.5
    out = coupled_batch(COUPLE, t, 20000, StreamKey(10))
    assert np.all(out[:, 0] <= out[:, 1])
    nbar = out[:, 1].astype(float)
    mean, _ = dominating_expectation(COUPLE, t)
    assert abs(nbar.mean() - mean) <= 4 * nbar.std(ddof=1) / math.sqrt(nbar.size)


def test_coupling_marginal_matches_engine():
    # the metastatic side of the coupling is a valid draw of the count process
    from metabranch import simulate_batch
    t = 0.7
    a = coupled_batch(COUPLE, t, 20000, StreamKey(11))[:, 0].astype(float)
    b = simulate_batch(ORIGIN, COUPLE, t, 20000, StreamKey(12))
    b = b[:, 0] + b[:, 1]
    se = math.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
    assert abs(a.mean() - b.mean()) <= 4 * se


def test_coupling_rejects_killing():
    with pytest.raises(ValueError):
        coupled_simulate(COUPLE.replace(movement=MovementSpec.killed_brownian([-1], [1])), 1.0, StreamKey(1))


# restart test ------------------------------------------------------------------

def test_pooled_chi2():
    a = [(1, 0)] * 50 + [(2, 0)] * 50
    stat, p, cells = pooled_chi2(a, a)
    assert stat == 0.0 and p == 1.0 and cells == 2
    b = [(1, 0)] * 90 + [(2, 0)] * 10
    assert pooled_chi2(a, b)[1] < 1e-6
    assert pooled_chi2([(1, 0)] * 10, [(1, 0)] * 10) == (0.0, 1.0, 1)


def test_restart_insufficient_mass():
    with pytest.raises(ValueError, match="insufficient conditioning mass"):
        markov_restart_test(DBBM(), ORIGIN, 0.3, 0.5, 200, StreamKey(13), bucket=(6, 0))


def test_restart_modes():
    ok = markov_restart_test(DBBM(), ORIGIN, 0.3, 0.5, 3000, StreamKey(14), bucket=(2, 0))
    bad = markov_restart_test(DBBM(), ORIGIN, 0.3, 0.5, 3000, StreamKey(14), bucket=(2, 0), mode="broken")
    assert ok.n_bucket == bad.n_bucket >= 100
    assert bad.p_value < 0.01
    assert ok.p_value > 1e-4


def test_restart_self_calibration():
    ps = [markov_restart_test(DBBM(), ORIGIN, 0.3, 0.5, 800, StreamKey(15, (r,)), bucket=(2, 0), mode="self").p_value
          for r in range(8)]
    assert stats.kstest(ps, "uniform").pvalue > 0.01


# product kernel and dBBM ----------------------------------------------------------

def test_tensor_examples():
    prof = Profile(1.0)
    assert tensor_expectation(BM, (1.0, 1.0), prof, [[0.0], [0.0]]) == pytest.approx(0.5, abs=1e-15)
    pts = [[0.3], [-0.7], [1.1]]
    assert tensor_expectation(BM, (0, 0, 0), prof, pts) == pytest.approx(math.prod(math.exp(-z[0] ** 2 / 2) for z in pts))


@settings(max_examples=100)
@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(0, 2)), min_size=1, max_size=5), st.floats(0.3, 2))
def test_tensor_factorizes(pairs, a):
    prof = Profile(a)
    pts = [[z] for z, _ in pairs]
    times = [t for _, t in pairs]
    prod = math.prod(kernel_expectation(BM, prof, z, t) for (z, t) in pairs)
    assert abs(tensor_expectation(BM, times, prof, pts) - prod) <= 1e-12


def test_tensor_conditioned_mc():
    p = Params(mu_S=0.5, delta_M=0.5, q={1: 1.0}, movement=BM)
    pts = [[0.3], [-0.4]]
    m, se, acc = tensor_conditioned_mc(p, Profile(1.0), pts, 0.5, 40000, StreamKey(16))
    assert acc > 10000
    assert abs(m - tensor_expectation(BM, (0.5, 0.5), Profile(1.0), pts)) <= 4 * se


def test_bbm_many_to_one():
    assert bbm_many_to_one(Profile(1.0), 1.0, 0.0) == 1.0
    assert bbm_many_to_one(Profile(1.0), 1.0, 1.0) == pytest.approx(1.92212, abs=1e-5)
    from metabranch import simulate_batch
    out = simulate_batch(ORIGIN, DBBM(), 1.0, 40000, StreamKey(17), fn=TestFunction({}, Profile(1.0)).pack())
    s = out[:, 3]
    assert abs(s.mean() - bbm_many_to_one(Profile(1.0), 1.0, 1.0)) <= 4 * s.std(ddof=1) / math.sqrt(s.size)


# non-Feller demonstration -----------------------------------------------------

NF = Params(mu_S=1.0, mu_B=1.0, nu={1: 1.0}, q={1: 1.0}, delta_M=0.5, delta_S=0.3, movement=BM)


def test_non_feller_positive_and_exchangeable():
    rows = non_feller_demo([2, 7, 1000], NF, 1.0, 20000, StreamKey(18))
    for r in rows:
        assert r.mean / r.stderr > 4
    for a in rows:
        for b in rows:
            assert abs(a.mean - b.mean) <= 4 * math.hypot(a.stderr, b.stderr)


def test_non_feller_zero_without_deaths():
    p = NF.replace(delta_M=0.0, delta_S=0.0)
    rows = non_feller_demo([2, 3], p, 1.0, 5000, StreamKey(19))
    assert all(r.mean == 0.0 and r.stderr == 0.0 for r in rows)


def test_non_feller_matches_labeled_simulation():
    n, t = 4000, 1.0
    vals = []
    for i in range(n):
        x = FullConfiguration.from_particles([(1,), (2,)], [[0.0], [0.0]])
        _, final = simulate(x, NF, t, StreamKey(20, (i,)), log=False)
        alive = final.living
        if len(alive) == 1 and alive[0].label == (1,) and alive[0].settle_time is None:
            vals.append(math.exp(-float(alive[0].position[0]) ** 2))
        else:
            vals.append(0.0)
    vals = np.array(vals)
    (row,) = non_feller_demo([2], NF, t, 40000, StreamKey(21))
    se = math.hypot(vals.std(ddof=1) / math.sqrt(n), row.stderr)
    assert abs(vals.mean() - row.mean) <= 4 * se
    assert NON_FELLER_PROFILE(0.5, BM) == pytest.approx(math.exp(-0.25))
