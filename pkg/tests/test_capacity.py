from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import single_server, two_state
from mdpn.capacity import (
    achievable_rate,
    capacity_margin,
    check_occupation,
    classify,
    hull_oracle,
    occupation_to_policy,
)
from mdpn.examples import Rotation3Params, build_rotation3, random_model, rotation3_region
from mdpn.experiments import per_slot


@pytest.mark.parametrize("lam,cls", [(0.3, "interior"), (1.0, "boundary"), (1.2, "outside")])
def test_single_server(lam, cls):
    res = capacity_margin(single_server(0.3, 1.0), [lam])
    assert res.margin == pytest.approx(1.0 - lam, abs=1e-12)
    assert res.classification == cls


def test_two_state_margin():
    # [DERIVED] one action, so the only rate is the stationary mass of state 1
    res = capacity_margin(two_state(0.3, 0.7), [0.1])
    assert res.margin == pytest.approx(0.2, abs=1e-12)


def test_classify_tolerance():
    assert classify(5e-8) == "boundary"
    assert classify(2e-7) == "interior"
    assert classify(-2e-7) == "outside"


def test_lambda_checked(rot):
    with pytest.raises(ValueError):
        capacity_margin(rot, [0.1, 0.1])
    with pytest.raises(ValueError):
        capacity_margin(rot, [0.1, -0.1, 0.1])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.lists(st.floats(0, 0.6), min_size=2, max_size=2))
def test_lp_matches_hull_and_witness(seed, lam):
    model = random_model(np.random.default_rng(seed), n_states=3, n_actions=3, n_classes=2)
    res = capacity_margin(model, lam)
    assert res.margin == pytest.approx(hull_oracle(model, lam), abs=1e-8)
    check_occupation(model, res.measure)
    # every class gets at least lambda + margin under the witness
    rate = achievable_rate(model, res.witness)
    assert np.all(rate >= np.asarray(lam) + res.margin - 1e-8)


def test_check_occupation_rejects(rot):
    x = np.zeros((rot.n_states, rot.n_actions))
    with pytest.raises(ValueError, match="sums"):
        check_occupation(rot, x)
    x[0, rot.action_id("serve_r3")] = 1.0
    with pytest.raises(ValueError, match="infeasible"):
        check_occupation(rot, x)


def test_zero_mass_states_act_uniformly(rot):
    x = np.zeros((rot.n_states, rot.n_actions))
    x[0, 0] = 1.0
    pol = occupation_to_policy(rot, x)
    assert pol.probs[0, 0] == 1.0
    feas = rot.feasible[1]
    assert np.allclose(pol.probs[1, list(feas)], 1.0 / len(feas))


@pytest.mark.parametrize(
    "lam_c", [(0.4, 0.4, 0.4), (0.7, 0.7, 0.4), (0.1, 0.1, 0.2), (0.5, 0.5, 0.5), (0.2, 0.3, 0.9)]
)
def test_rotation3_region(lam_c):
    model = build_rotation3(Rotation3Params(d1=0.0, d2=0.0))
    res = capacity_margin(model, per_slot(lam_c))
    assert res.margin * 3 == pytest.approx(rotation3_region(lam_c), abs=1e-9)


def test_rotation3_region_formula():
    # [DERIVED] by hand: the best w balances both slacks, w = (1 - max(l1, l2) + l3) / 2
    assert rotation3_region((0.4, 0.4, 0.4)) == pytest.approx(0.1)
    assert rotation3_region((0.7, 0.7, 0.4)) == pytest.approx(-0.05)
    assert rotation3_region((0.5, 0.5, 0.5)) == pytest.approx(0.0)
