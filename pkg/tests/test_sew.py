from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from auctionbid.core import AuctionTrace, reward
from auctionbid.environments import gen_iid
from auctionbid.sew import (
    HorizonExceeded,
    RoundScratch,
    SewConfig,
    SewGeometry,
    SewPolicy,
    SewState,
    StaleScratch,
    level_count,
    load_checkpoint,
    save_checkpoint,
    sew_init,
    sew_round,
    sew_run,
    sew_select_bid,
    sew_update,
    sew_weights,
)
from helpers import covering_check, random_lipschitz_units


def test_init_examples():
    geom, led = sew_init(SewConfig(100))
    assert geom.L == 3
    assert [geom.M(l) for l in geom.levels] == [4, 8, 16]
    assert [geom.U(l) for l in geom.levels] == [3, 7, 15]
    assert [geom.W(l) for l in geom.levels] == [1, 3, 7]
    geom, _ = sew_init(SewConfig(4))
    assert (geom.L, geom.M(1), geom.U(1), geom.W(1)) == (1, 4, 3, 1)
    assert all(float(np.abs(r).sum()) == 0 for r in led.R)
    with pytest.raises(ValueError, match="T >= 4"):
        SewConfig(3)


@pytest.mark.parametrize("T", [4, 5, 15, 16, 17, 1023, 1024, 2**20, 2**20 + 1])
def test_level_count_matches_float_formula(T):
    assert level_count(T) == int(np.floor(np.log2(np.sqrt(T)) + 1e-12))


@pytest.mark.parametrize("T", [2**10, 2**20, 5000])
def test_cell_count_closed_form(T):
    geom = SewGeometry(level_count(T))
    L = geom.L
    assert geom.cell_count() == 8 * 4**L - 8 * 2**L <= 8 * T
    assert geom.ew_evaluations_per_round() == 2 ** (L + 1) - L - 2


def test_fresh_weights_uniform_and_bins():
    geom, led = sew_init(SewConfig(16))
    sc = sew_weights(geom, led, 0.3)
    assert sc.bins == [2, 3]
    assert all(np.allclose(p, 0.25) for p in sc.probs)
    assert [p.shape for p in sc.probs] == [(1, 4), (3, 4)]


def _forced(L, draws):
    """Scratch whose probability vectors make the descent pick ``draws`` deterministically."""
    geom = SewGeometry(L)
    probs = [np.full((geom.W(l), 4), 0.0) for l in geom.levels]
    for p in probs:
        p[:, 0] = 1.0
    w = 1
    for l, s in zip(geom.levels, draws):
        probs[l - 1][w - 1] = np.eye(4)[s - 1]
        if s == 4:
            break
        w = 2 * (w - 1) + s
    return geom, RoundScratch(1, [1] * L, probs)


@pytest.mark.parametrize("L,draws,bid", [(2, (2, 4), 0.75), (2, (2, 1), 0.375), (1, (4,), 1.0)])
def test_descent_examples(L, draws, bid):
    geom, sc = _forced(L, draws)
    assert sew_select_bid(geom, sc, np.random.default_rng(0)) == bid


def test_update_leaf_and_mixture():
    cfg = SewConfig(16)
    geom, led = sew_init(cfg)
    v, m = 0.5, 0.3
    sc = sew_weights(geom, led, v)
    expected = sew_update(geom, led, sc, v, m)
    b1, b2 = sc.bins[0] - 1, sc.bins[1] - 1
    # level-L expert u = 3 bids 2^-3 * 3
    assert led.R[1][b2][2] == pytest.approx(reward(0.375, 0.5, 0.3)) == pytest.approx(0.125)
    leaf = np.array([reward(k / 8, v, m) for k in range(1, 8)])
    dummy2 = np.array([reward(0.25 * (w + 1), v, m) for w in range(1, 4)])
    mix = 0.25 * (leaf[0:-2:2] + leaf[1:-1:2] + leaf[2::2] + dummy2)
    assert np.allclose(led.R[0][b1], mix, atol=1e-15)
    assert led.R_dummy[0][b1][0] == reward(1.0, v, m)
    root = 0.25 * (mix.sum() + reward(1.0, v, m))
    assert expected == pytest.approx(root, abs=1e-15)


def test_mixture_arithmetic_example():
    p = np.full(4, 0.25)
    r = np.array([0.1, 0.2, 0.0, 0.05])
    assert p @ r == pytest.approx(0.0875, abs=1e-15)


def test_unwinnable_round_records_nonpositive():
    geom, led = sew_init(SewConfig(64))
    sc = sew_weights(geom, led, 0.2)
    sew_update(geom, led, sc, 0.2, 0.9)
    assert all(np.all(r <= 0) for r in led.R) and all(np.all(d <= 0) for d in led.R_dummy)
    # the top-price dummy still wins, at a loss
    assert led.R_dummy[0][0][0] == pytest.approx(0.2 - 1.0)


def test_locality_only_active_bins_change():
    geom, led = sew_init(SewConfig(256))
    rng = np.random.default_rng(3)
    for v, m in rng.random((20, 2)):
        sew_update(geom, led, sew_weights(geom, led, max(v, 1e-9)), max(v, 1e-9), m)
    before = [(r.copy(), d.copy(), vi.copy()) for r, d, vi in zip(led.R, led.R_dummy, led.visits)]
    sc = sew_weights(geom, led, 0.61)
    sew_update(geom, led, sc, 0.61, 0.2)
    for i, (r0, d0, v0) in enumerate(before):
        mask = np.ones(geom.M(i + 1), dtype=bool)
        mask[sc.bins[i] - 1] = False
        assert np.array_equal(r0[mask], led.R[i][mask])
        assert np.array_equal(d0[mask], led.R_dummy[i][mask])
        assert np.array_equal(v0[mask], led.visits[i][mask])
        assert led.visits[i][sc.bins[i] - 1] == v0[sc.bins[i] - 1] + 1


def test_first_round_group_departs_alone():
    geom, led = sew_init(SewConfig(16))
    sew_update(geom, led, sew_weights(geom, led, 0.3), 0.3, 0.1)
    sc = sew_weights(geom, led, 0.3)
    assert not np.allclose(sc.probs[0][0], 0.25)  # bin 2, group 1 at level 1
    sew_update(geom, led, sc, 0.3, 0.1)
    sc2 = sew_weights(geom, led, 0.9)
    assert all(np.allclose(p, 0.25) for p in sc2.probs)


def test_stale_scratch_rejected():
    geom, led = sew_init(SewConfig(16))
    sc = sew_weights(geom, led, 0.3)
    with pytest.raises(StaleScratch):
        sew_weights(geom, led, 0.4)
    sew_update(geom, led, sc, 0.3, 0.1)
    with pytest.raises(StaleScratch):
        sew_update(geom, led, sc, 0.3, 0.1)


def test_round_count_determinism_and_horizon():
    tr = gen_iid(64, "continuous", 5)
    runs = []
    for _ in range(2):
        st = SewState.new(SewConfig(64))
        rng = np.random.default_rng(11)
        runs.append([sew_round(st, v, m, rng) for v, m in tr])
    assert len(runs[0]) == 64
    assert [o.bid for o in runs[0]] == [o.bid for o in runs[1]]
    with pytest.raises(HorizonExceeded):
        sew_round(st, 0.5, 0.5, rng)


def test_compiled_run_matches_per_round_path():
    T = 2048
    tr = gen_iid(T, "correlated", 2)
    a, b = SewState.new(SewConfig(T)), SewState.new(SewConfig(T))
    r1, r2 = np.random.default_rng(4), np.random.default_rng(4)
    outs = [sew_round(a, v, m, r1) for v, m in tr]
    run = sew_run(b, tr, r2)
    assert np.array_equal([o.bid for o in outs], run.bids)
    assert np.allclose([o.expected_payoff for o in outs], run.expected, atol=1e-12)
    for x, y in zip(a.ledger.R, b.ledger.R):
        assert np.allclose(x, y, atol=1e-9)
    assert all(np.array_equal(x, y) for x, y in zip(a.ledger.visits, b.ledger.visits))
    assert a.ew_evaluations == run.ew_evaluations == T * a.geom.ew_evaluations_per_round()
    assert r1.random() == r2.random()


def test_bids_on_dyadic_grid():
    T = 4096
    st = SewState.new(SewConfig(T))
    run = sew_run(st, gen_iid(T, "discrete", 1), np.random.default_rng(0))
    L = st.geom.L
    assert np.all((run.bids > 0) & (run.bids <= 1))
    k = run.bids * 2 ** (L + 1)
    assert np.array_equal(k, np.round(k))


def test_clipping_flag():
    st = SewState.new(SewConfig(256, clip_bids=True))
    run = sew_run(st, gen_iid(256, "continuous", 2), np.random.default_rng(1))
    tr = gen_iid(256, "continuous", 2)
    assert np.all(run.bids <= tr.v)


def test_checkpoint_resume(tmp_path):
    T = 200
    tr = gen_iid(T, "continuous", 8)
    full = SewPolicy(SewConfig(T), np.random.default_rng(21))
    bids_full = []
    for v, m in tr:
        bids_full.append(full.next_bid(v))
        full.observe(v, m)
    part = SewPolicy(SewConfig(T), np.random.default_rng(21))
    bids = []
    for v, m in tr.head(120):
        bids.append(part.next_bid(v))
        part.observe(v, m)
    save_checkpoint(part, tmp_path / "ck.npz")
    resumed = load_checkpoint(tmp_path / "ck.npz")
    assert resumed.state.ledger.round == 120
    for v, m in list(tr)[120:]:
        bids.append(resumed.next_bid(v))
        resumed.observe(v, m)
    assert bids == bids_full


def test_policy_feedback_order():
    pol = SewPolicy(SewConfig(16), np.random.default_rng(0))
    with pytest.raises(StaleScratch):
        pol.observe(0.5, 0.1)


def test_dummy_supremum_identity_exact():
    for level in range(1, 21):
        h = Fraction(1, 2 ** (level + 1))
        for w in list(range(1, min(2**level - 1, 300) + 1)) + [2**level - 1]:
            lo = h * (2 * w - 2)
            hi = h * (2 * w + 2)
            b = Fraction(1, 2**level) * (w + 1)
            assert b == hi and hi - lo == Fraction(2, 2**level)
            assert Fraction(SewGeometry(level).dummy_bid(level, w)) == b
        for u in (1, 2**level):
            a, c = SewGeometry(level).expert_interval(level, u)
            assert Fraction(c) - Fraction(a) == Fraction(1, 2**level)


def test_three_employee_covering():
    L = 6
    kpu = 2 ** (L + 2)
    scale = 2 ** (L + 5)
    f = random_lipschitz_units(10_000, kpu + 1, scale, scale // kpu, np.random.default_rng(44))
    premises, violations = covering_check(f, L, scale, kpu)
    assert premises > 10_000 and violations == 0


def test_covering_checker_detects_non_lipschitz():
    L = 3
    kpu = 2 ** (L + 2)
    scale = 2 ** (L + 5)
    f = np.zeros((1, kpu + 1), dtype=np.int64)
    f[0, :] = scale // 4 + 1
    f[0, kpu // 8:] = scale // 2 + scale // 8  # a jump of 3/8 at x = 1/8
    premises, violations = covering_check(f, L, scale, kpu)
    assert violations > 0
