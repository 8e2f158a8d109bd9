from __future__ import annotations

import math

import numpy as np
import pytest

from auctionbid.core import TraceError
from auctionbid.environments import (
    EnvSpec,
    gen_goodexpert_lb,
    gen_iid,
    gen_monotone_killer,
    killer_oracle_reward,
    lb_branch_probabilities,
    lb_delta,
    lb_mean_rewards,
    make_trace,
    replay_csv,
)


def test_iid_determinism_and_presets():
    for preset in ("discrete", "continuous", "correlated"):
        a, b = gen_iid(500, preset, 3), gen_iid(500, preset, 3)
        assert np.array_equal(a.v, b.v) and np.array_equal(a.m, b.m)
        assert np.all((a.v > 0) & (a.v <= 1)) and np.all((a.m >= 0) & (a.m <= 1))
    assert len(np.unique(gen_iid(10_000, "discrete", 1).m)) <= 5


def test_correlated_preset_hits_target():
    t = gen_iid(100_000, "correlated", 7)
    assert abs(np.corrcoef(t.v, t.m)[0, 1] - 0.66) <= 0.05
    assert t.meta["correlation"] == "linear"


def test_iid_errors():
    with pytest.raises(ValueError):
        gen_iid(10, "weird")
    with pytest.raises(ValueError):
        gen_iid(10, "continuous", 0, bid=("cauchy",))
    with pytest.raises(ValueError):
        gen_iid(0)


def test_killer_examples():
    for seed in range(20):
        t = gen_monotone_killer(2, seed)
        assert t.v[0] == 0.5
        assert t.v[1] == (0.625 if t.m[0] == 0 else 0.375)


def test_killer_structure():
    t = gen_monotone_killer(2000, 11)
    assert set(np.unique(t.m)) <= {0.0, 0.125}
    assert np.all((t.v >= 0.25) & (t.v <= 0.75))
    r = t.value_rank
    assert len(np.unique(r)) == t.T
    for s in range(t.T - 1):
        later = r[s + 1:]
        if r[s + 1] > r[s]:
            assert np.all(later > r[s])
        else:
            assert np.all(later < r[s])
    # the float values agree with the exact order wherever they are distinct
    d = np.diff(t.v[np.argsort(r)])
    assert np.all(d >= 0)
    assert killer_oracle_reward(t) == pytest.approx(float(np.sum(t.v - t.m)), abs=1e-9)


def test_branch_probabilities_examples():
    assert lb_branch_probabilities(0.25) == (0.5, 0.0, 0.5)
    p = lb_branch_probabilities(0.1)
    assert p == pytest.approx((0.5, 0.375, 0.125), abs=1e-15) and sum(p) == pytest.approx(1.0)
    # (1/16) sqrt(ln 8 / 1000), mpmath
    assert lb_delta(10**4, 8, 0.1) == pytest.approx(0.002850055880537583, abs=1e-15)


def test_goodexpert_validation():
    with pytest.raises(ValueError):
        gen_goodexpert_lb(100, 4, 0.3)
    with pytest.raises(ValueError):
        gen_goodexpert_lb(10, 8, 0.01)  # delta above 1/4
    with pytest.raises(ValueError):
        EnvSpec("goodexpert_lb", {"gap": 0.5})
    with pytest.raises(ValueError):
        gen_goodexpert_lb(1000, 4, 0.1, scenario=5)


@pytest.mark.parametrize("gap", [0.05, 0.1, 0.25])
def test_goodexpert_definition_holds(gap):
    mat = gen_goodexpert_lb(5000, 6, gap, seed=2)
    assert mat.good_expert_holds()
    r = mat.rewards
    assert np.all(r[:, [0]] >= r - gap)
    assert np.all((r >= 0) & (r <= 1))


def test_mixture_frequencies_and_means():
    gap, K = 0.1, 5
    for j in (1, 3):
        mat = gen_goodexpert_lb(100_000, K, gap, scenario=j, seed=9)
        freq = np.bincount(mat.branch, minlength=3) / mat.T
        assert np.all(np.abs(freq - lb_branch_probabilities(gap)) <= 0.01)
        means = mat.rewards.mean(axis=0)
        assert np.all(np.abs(means - lb_mean_rewards(K, gap, mat.delta, j)) <= 0.01)


def test_scenario_drawn_from_seed():
    seen = {gen_goodexpert_lb(1000, 4, 0.1, seed=s).scenario for s in range(40)}
    assert seen == {1, 2, 3, 4}


def test_reward_matrix_csv(tmp_path):
    mat = gen_goodexpert_lb(20, 3, 0.2, seed=1)
    p = tmp_path / "r.csv"
    mat.write_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "t,r1,r2,r3" and len(lines) == 21
    back = np.loadtxt(p, delimiter=",", skiprows=1)[:, 1:]
    assert np.array_equal(back, mat.rewards)


def test_replay(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("v,m\n0.5,0.1\n0.9,0.95\n0.3,0.2\n")
    t = replay_csv(p)
    assert t.T == 3 and t.meta["env"] == "replay"
    assert replay_csv(p, prune_unwinnable=True).dropped == 1
    (tmp_path / "h.csv").write_text("v,m\n")
    with pytest.raises(TraceError, match="empty trace"):
        replay_csv(tmp_path / "h.csv")
    (tmp_path / "b.csv").write_text("v,m\n0.5,0.1\n0.5,abc\n")
    with pytest.raises(TraceError, match="line 3"):
        replay_csv(tmp_path / "b.csv")
    spec = EnvSpec("replay", {"path": str(p)})
    assert make_trace(spec, 2, 0).T == 2


def test_generators_are_pure():
    ss = np.random.SeedSequence([1, 2, 0])
    a = make_trace(EnvSpec("iid", {"preset": "correlated"}), 100, ss)
    b = make_trace(EnvSpec("iid", {"preset": "correlated"}), 100, np.random.SeedSequence([1, 2, 0]))
    assert np.array_equal(a.v, b.v)
    with pytest.raises(TraceError):
        make_trace(EnvSpec("goodexpert_lb", {"gap": 0.1}), 10, 0)
    with pytest.raises(ValueError):
        EnvSpec("nope")
