from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import GOLDEN, single_server
from mdpn.examples import build_decoherence_net, build_rotation3, random_model
from mdpn.model import (
    Branch,
    InfeasibleAction,
    ModelError,
    build_model,
    canonical,
    load_model,
    mean_schedule,
    save_model,
    validate,
)


def test_mean_schedule_single_server():
    m = single_server(p_serve=0.25)
    assert mean_schedule(m, 0, 1).tolist() == [0.25]
    assert mean_schedule(m, 0, 0).tolist() == [0.0]


def test_mean_schedule_infeasible_action(rot):
    with pytest.raises(InfeasibleAction):
        mean_schedule(rot, 8, 4)  # serve_r3 without both holds


def test_rotation3_hold_then_r3_means(rot):
    # p2h11 serve_r3 schedules r3 with certainty
    assert mean_schedule(rot, rot.state_id("p2h11"), 4).tolist() == [0.0, 0.0, 1.0]
    assert mean_schedule(rot, rot.state_id("p1h10"), 3).tolist() == [1.0, 1.0, 0.0]


def test_validate_reports_row_sum():
    kernel = {(0, 0): [(0, (0,), 0.9)]}
    m = build_model(["x"], ["a"], [[0]], kernel, ["r"], [(1.0,)], 1, check=False)
    report = validate(m)
    assert not report.ok
    assert report.violations[0].path == "kernel[z=0,a=0]"
    assert "0.9" in report.violations[0].message


def test_validate_sigma_bound():
    kernel = {(0, 0): [(0, (2,), 1.0)]}
    m = build_model(["x"], ["a"], [[0]], kernel, ["r"], [(1.0,)], 1, check=False)
    paths = [v.path for v in validate(m).violations]
    assert paths == ["kernel[z=0,a=0].branches[0].sigma"]


def test_build_model_raises_with_violations():
    with pytest.raises(ModelError) as exc:
        build_model(["x"], ["a"], [[0]], {(0, 0): [(0, (0,), 0.5)]}, ["r"], [(1.0,)], 1)
    assert exc.value.violations


def test_zero_schedule_warning():
    m = build_model(["x"], ["a"], [[0]], {(0, 0): [(0, (1,), 1.0)]}, ["r"], [(1.0,)], 1)
    assert validate(m).ok and validate(m).warnings


def test_round_trip_bit_identical(rot, dec):
    for m in (rot, dec):
        text = save_model(m)
        assert save_model(load_model(text)) == text
        assert load_model(text).digest == m.digest


def test_golden_documents():
    # frozen builder output; regenerate only on an intentional model change
    assert save_model(build_rotation3()) == (GOLDEN / "rotation3.json").read_text()
    assert save_model(build_decoherence_net()) == (GOLDEN / "decoherence_net.json").read_text()


def test_canonical_ignores_key_order(rot):
    doc = json.loads(save_model(rot))
    shuffled = json.dumps(dict(reversed(list(doc.items()))))
    assert canonical(shuffled) == save_model(rot)


def test_parse_error_has_position():
    with pytest.raises(ModelError, match="line 1, column"):
        load_model("{not json")


def test_schema_error_has_field_path(rot):
    doc = json.loads(save_model(rot))
    doc["kernel"][0]["branches"][0]["p"] = 1.5
    with pytest.raises(ModelError) as exc:
        load_model(json.dumps(doc))
    assert any(v.path == "kernel/0/branches/0/p" for v in exc.value.violations)


def test_corrupted_probability_fails_validation(rot):
    doc = json.loads(save_model(rot))
    doc["kernel"][3]["branches"][0]["p"] = 0.5
    with pytest.raises(ModelError) as exc:
        load_model(json.dumps(doc))
    assert any(v.path.startswith("kernel[") for v in exc.value.violations)


def test_duplicate_kernel_entry(rot):
    doc = json.loads(save_model(rot))
    doc["kernel"].append(doc["kernel"][0])
    with pytest.raises(ModelError, match="duplicate"):
        load_model(json.dumps(doc))


def test_branch_sampling_reproduces_probabilities(rot_s):
    z, a = rot_s.state_id("p1h10"), 0
    cum, _, _ = rot_s.sampling_tables[z][a]
    assert cum[-1] >= 1.0
    probs = np.diff([0.0] + cum)
    assert np.allclose(probs, [b.p for b in rot_s.kernel[(z, a)]])
    k, zn, sigma = rot_s.sample_branch(z, a, 0.0)
    assert (k, zn) == (0, rot_s.kernel[(z, a)][0].z_next)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_models_round_trip(seed):
    m = random_model(np.random.default_rng(seed), n_states=3, n_actions=2, n_classes=2)
    assert validate(m).ok
    assert save_model(load_model(save_model(m))) == save_model(m)
    assert np.allclose(m.transition.sum(axis=2)[m.mask], 1.0, atol=1e-12)


def test_branch_is_frozen():
    b = Branch(0, (1,), 1.0)
    with pytest.raises(Exception):
        b.p = 0.5
