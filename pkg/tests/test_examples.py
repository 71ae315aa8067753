from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from scipy import sparse
from scipy.sparse.linalg import spsolve

from mdpn.capacity import achievable_rate
from mdpn.examples import (
    BUILDERS,
    DEC_ACTIONS,
    DecoherenceNetParams,
    PriorityP0,
    Rotation3Params,
    build_decoherence_net,
    build_rotation3,
    check_decoherence_conditions,
    dec_state,
    greedy_match_policy,
    multi_event_mass,
    rot_decode,
    rot_state,
    rotation3_policies,
    two_event_bound,
)
from mdpn.markov import is_unichain_policy
from mdpn.model import validate
from mdpn.sim import FixedAgnostic, MaxWeight, run, stability_diagnostic


@pytest.mark.parametrize("name", sorted(BUILDERS))
def test_builders_validate(name):
    assert validate(BUILDERS[name]()).ok


def test_rotation3_layout(rot):
    assert rot.n_states == 12 and rot.n_classes == 3
    assert [len(a) for a in rot.feasible] == [2, 4, 2, 4, 2, 2, 4, 4, 1, 1, 1, 2]
    for z in range(12):
        assert rot_state(*rot_decode(z)) == z
        assert rot.state_labels[z] == "p{}h{}{}".format(*rot_decode(z))


def test_rotation3_options_change_model():
    base = build_rotation3()
    late = build_rotation3(Rotation3Params(late_service=True))
    carry = build_rotation3(Rotation3Params(carry_holds=True))
    assert len(late.feasible[rot_state(2, 1, 1)]) > len(base.feasible[rot_state(2, 1, 1)])
    assert carry.transition[rot_state(2, 1, 1), 0, rot_state(0, 1, 1)] == 1.0
    assert base.transition[rot_state(2, 1, 1), 0, rot_state(0, 0, 0)] == 1.0
    with pytest.raises(ValueError):
        Rotation3Params(lam=(1.5, 0.1, 0.1))


def test_bundled_policies_unichain(rot, rot_s, dec):
    for m in (rot, rot_s):
        for pol in rotation3_policies(m).values():
            assert is_unichain_policy(m, pol)
    assert is_unichain_policy(dec, greedy_match_policy(dec))


def test_conditions_exact_values():
    # [PAPER] exact values at rates (4, 150, 150) and (20, 200, 200)
    c = check_decoherence_conditions(4, 150, 150, 20, 200, 200)
    assert (c.A.lhs, c.A.rhs) == (Fraction(5, 4), Fraction(4))
    assert (c.B.lhs, c.B.rhs) == (Fraction(23, 400), Fraction(1, 4))
    assert c.C1.lhs == Fraction(308, 400) == Fraction(77, 100)
    assert c.C1.rhs == c.C2.rhs == Fraction(3, 4)
    assert c.holds and c.C[3]


def test_conditions_invariant_under_rescaling():
    p = DecoherenceNetParams.reference_rates()
    c = check_decoherence_conditions(*p.lam, *p.mu)
    ref = check_decoherence_conditions(4, 150, 150, 20, 200, 200)
    assert c.holds and c.C1.lhs == ref.C1.lhs and c.C1.rhs == ref.C1.rhs


def test_condition_a_is_strict():
    # A's left side is 5/4 here, so lambda0 = 5/4 sits on the boundary
    assert not check_decoherence_conditions(Fraction(5, 4), 150, 150, 20, 200, 200).A.holds
    assert check_decoherence_conditions(Fraction(13, 10), 150, 150, 20, 200, 200).A.holds


def test_condition_b_fails_for_large_lambda0():
    c = check_decoherence_conditions(100, 150, 150, 20, 200, 200)
    assert not c.B.holds and not c.holds


def test_conditions_reject_bad_rates():
    with pytest.raises(ValueError):
        check_decoherence_conditions(0, 1, 1, 1, 2, 2)
    with pytest.raises(ValueError):
        check_decoherence_conditions(1, 3, 1, 1, 2, 2)


def test_p0_controller_choices(dec):
    p0 = PriorityP0()
    p0.reset(dec)
    act = lambda flags, Q: DEC_ACTIONS[p0.act(0, dec_state(*flags), Q, 0.0)]
    assert act((1, 1, 1), (1, 5, 5)) == "serve_r0"
    assert act((0, 1, 1), (1, 5, 5)) == "hold"
    assert act((0, 1, 1), (0, 5, 5)) == "serve_r1r2"
    assert act((1, 1, 0), (0, 5, 5)) == "serve_r1"
    assert act((0, 0, 1), (0, 0, 5)) == "serve_r2"
    assert act((1, 1, 1), (0, 0, 0)) == "hold"
    with pytest.raises(ValueError):
        PriorityP0().reset(build_rotation3())


def test_two_event_bound():
    p = DecoherenceNetParams.reference_rates()
    # 36 pairs of events, h^2 = 1e-4 and a largest squared rate of 100
    assert two_event_bound(p) == pytest.approx(0.36)
    dec = build_decoherence_net(p)
    worst = max(multi_event_mass(p, z, a) for z in range(8) for a in dec.feasible[z])
    assert 0 < worst <= two_event_bound(p)


def test_decoherence_params_checked():
    with pytest.raises(ValueError):
        DecoherenceNetParams(h=0.2)
    with pytest.raises(ValueError):
        DecoherenceNetParams.reference_rates(time_scale=1.0)  # 150 * 0.01 > 1


def test_greedy_match_rate_monte_carlo(dec):
    pol = greedy_match_policy(dec)
    exact = achievable_rate(dec, pol)
    horizon = 200_000
    tr = run(dec, FixedAgnostic(pol), horizon, seed=8)
    batches = tr.sigma.reshape(20, -1, 3).mean(axis=1)
    se = batches.std(axis=0, ddof=1) / np.sqrt(20)
    assert np.all(np.abs(batches.mean(axis=0) - exact) <= 5 * se + 1e-12)


def _maxweight_r3_rate(model, n_trunc=40):
    """Per-slot r3 service rate of MaxWeight when Q3 is infinite.

    Exact stationary analysis of the (z, Q1, Q2) chain truncated at n_trunc.
    """
    S = model.mean_sigma
    lam = [pmf[1] for pmf in model.arrival_pmfs[:2]]
    N = n_trunc + 1
    idx = lambda z, q1, q2: (z * N + q1) * N + q2
    rows, cols, vals, r3 = [], [], [], np.zeros(12 * N * N)
    for z in range(12):
        for q1 in range(N):
            for q2 in range(N):
                # infinite Q3 dominates whenever serve_r3 is available
                acts = model.feasible[z]
                r3_acts = [a for a in acts if S[z, a, 2] > 0]
                if r3_acts:
                    a = r3_acts[0]
                else:
                    a = max(acts, key=lambda b: (q1 * S[z, b, 0] + q2 * S[z, b, 1], -b))
                s = idx(z, q1, q2)
                r3[s] = S[z, a, 2]
                for br in model.branches(z, a):
                    for a1, p1 in ((1, lam[0]), (0, 1 - lam[0])):
                        for a2, p2 in ((1, lam[1]), (0, 1 - lam[1])):
                            n1 = min(N - 1, max(q1 - br.sigma[0], 0) + a1)
                            n2 = min(N - 1, max(q2 - br.sigma[1], 0) + a2)
                            rows.append(s)
                            cols.append(idx(br.z_next, n1, n2))
                            vals.append(br.p * p1 * p2)
    n = 12 * N * N
    P = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    A = (P.T - sparse.eye(n)).tolil()
    A[0, :] = 1.0
    b = np.zeros(n)
    b[0] = 1.0
    pi = spsolve(A.tocsr(), b)
    return float(pi @ r3)


def test_maxweight_r3_rate_oracle(rot):
    # [DERIVED] truncated-chain oracle: r3 is served in a cycle only when both
    # pair queues were empty, which happens with probability 0.6 ** 2
    assert 3 * _maxweight_r3_rate(rot) == pytest.approx(0.36, abs=1e-9)
    late = build_rotation3(Rotation3Params(late_service=True))
    assert 3 * _maxweight_r3_rate(late) > 0.39


@pytest.mark.slow
@pytest.mark.parametrize("lam3,verdict", [(0.25, "bounded"), (0.3, "bounded"), (0.45, "growing"), (0.5, "growing")])
def test_maxweight_threshold_probes(lam3, verdict):
    m = build_rotation3(Rotation3Params(lam=(0.4, 0.4, lam3)))
    tr = run(m, MaxWeight(), 300_000, seed=1)
    assert stability_diagnostic(tr.Q[:, 2]).verdict == verdict
