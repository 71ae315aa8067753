from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import single_server, two_state
from mdpn.examples import random_model
from mdpn.model import InfeasibleAction, build_model
from mdpn.solver import (
    MaxIterExceeded,
    NonUnichainOptimal,
    brute_force_gain,
    max_weight_action,
    policy_iteration,
    relative_value_iteration,
    reward,
)


@pytest.mark.parametrize("p", [1.0, 0.6, 0.25])
def test_single_server_gain(p):
    # [DERIVED] serving every slot earns q * p per slot
    sol = relative_value_iteration(single_server(0.3, p), [2.0])
    assert sol.gain == pytest.approx(2.0 * p, abs=1e-9)
    assert sol.actions.tolist() == [1]


@pytest.mark.parametrize("a,b", [(0.3, 0.7), (0.05, 0.9)])
def test_two_state_gain(a, b):
    # [DERIVED] reward q in state 1, which has stationary mass a / (a + b)
    for solve in (relative_value_iteration, policy_iteration):
        assert solve(two_state(a, b), [3.0]).gain == pytest.approx(3.0 * a / (a + b), abs=1e-9)


def test_reward_and_infeasible(rot):
    assert reward(rot, 0, 0, [1, 1, 1]) == 0.0
    with pytest.raises(InfeasibleAction):
        reward(rot, 0, rot.action_id("serve_r3"), [1, 1, 1])


def test_weights_validated(rot):
    with pytest.raises(ValueError):
        relative_value_iteration(rot, [1, 1])
    with pytest.raises(ValueError):
        relative_value_iteration(rot, [1, -1, 1])
    with pytest.raises(ValueError):
        relative_value_iteration(rot, [1, 1, 1], tol=0)


def _models():
    return st.integers(0, 2**32 - 1).map(
        lambda s: random_model(np.random.default_rng(s), n_states=4, n_actions=3, n_classes=2)
    )


@settings(max_examples=40, deadline=None)
@given(_models(), st.lists(st.floats(0, 10), min_size=2, max_size=2))
def test_rvi_pi_brute_agree(model, q):
    best = brute_force_gain(model, q).gain
    assert relative_value_iteration(model, q, tol=1e-10).gain == pytest.approx(best, abs=1e-7)
    assert policy_iteration(model, q).gain == pytest.approx(best, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(_models(), st.lists(st.floats(0.01, 10), min_size=2, max_size=2), st.sampled_from([10.0, 1e-3, 7.0]))
def test_scale_invariance(model, q, c):
    # the stopping tolerance is absolute, so it scales with the weights too
    a = relative_value_iteration(model, q, tol=1e-9)
    b = relative_value_iteration(model, np.asarray(q) * c, tol=1e-9 * c)
    assert a.actions.tolist() == b.actions.tolist()
    assert b.gain == pytest.approx(c * a.gain, rel=1e-12, abs=1e-15)
    assert np.allclose(b.bias, c * a.bias, rtol=1e-10, atol=1e-12 * c)
    loose = relative_value_iteration(model, np.asarray(q) * c, tol=1e-9)
    assert loose.gain == pytest.approx(b.gain, abs=2e-9 * max(c, 1.0))


def test_zero_weights_give_zero_gain(rot):
    sol = relative_value_iteration(rot, [0, 0, 0])
    assert sol.gain == 0.0 and np.all(sol.bias == 0)
    assert sol.actions.tolist() == [acts[0] for acts in rot.feasible]


def test_ties_pick_lowest_action():
    kernel = {(0, a): [(0, (1,), 1.0)] for a in range(3)}
    m = build_model(["on"], ["a", "b", "c"], [[0, 1, 2]], kernel, ["r"], [(0.5, 0.5)], 1)
    assert relative_value_iteration(m, [1.0]).actions.tolist() == [0]
    assert max_weight_action(m, 0, [1.0]) == 0


def test_max_iter_exceeded_carries_result(rot):
    with pytest.raises(MaxIterExceeded) as exc:
        relative_value_iteration(rot, [1, 2, 3], max_iter=2)
    assert exc.value.result.iterations == 2 and exc.value.result.residual > 0


def test_non_unichain_optimal():
    kernel = {
        (0, 0): [(0, (1,), 1.0)],
        (0, 1): [(1, (0,), 1.0)],
        (1, 0): [(1, (1,), 1.0)],
        (1, 1): [(0, (0,), 1.0)],
    }
    m = build_model(["s0", "s1"], ["stay", "move"], [[0, 1], [0, 1]], kernel, ["r"], [(0.5, 0.5)], 1)
    with pytest.raises(NonUnichainOptimal) as exc:
        relative_value_iteration(m, [1.0])
    assert len(exc.value.classes) == 2
    assert relative_value_iteration(m, [1.0], check_unichain=False).gain == pytest.approx(1.0)
    assert brute_force_gain(m, [1.0]).gain == pytest.approx(1.0)


def test_rotation3_gain_matches_enumeration(rot):
    best = brute_force_gain(rot, [1, 1, 1])
    sol = relative_value_iteration(rot, [1, 1, 1])
    assert sol.gain == pytest.approx(best.gain, abs=1e-9)
    assert not best.multichain


def test_warm_start_same_answer(rot):
    cold = relative_value_iteration(rot, [1, 2, 3])
    warm = relative_value_iteration(rot, [1, 2, 3.1], v0=cold.bias)
    again = relative_value_iteration(rot, [1, 2, 3.1])
    assert warm.gain == pytest.approx(again.gain, abs=1e-8)
    assert warm.iterations <= again.iterations
