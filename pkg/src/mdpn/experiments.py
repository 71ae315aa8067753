"""Canned experiments with their pass thresholds embedded.

Each function returns an ``Outcome``; ``mdpn reproduce`` and the acceptance
tests both call these, so the thresholds live in one place.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from mdpn import _enumerate
from mdpn.capacity import achievable_rate, capacity_margin, classify, hull_oracle
from mdpn.examples import (
    PriorityP0,
    Rotation3Params,
    build_decoherence_net,
    build_rotation3,
    check_decoherence_conditions,
    random_model,
    rotation3_region,
    rotation3_stochastic,
)
from mdpn.fluid import check_drift_inequality, empty_time_bound, integrate_fluid
from mdpn.markov import AgnosticPolicy
from mdpn.sim import FixedAgnostic, MaxWeight, Warp, run, stability_diagnostic, timescale_diagnostic
from mdpn.sim.diagnostics import mean_ci
from mdpn.solver import brute_force_gain, policy_iteration, relative_value_iteration


@dataclass
class Outcome:
    name: str
    passed: bool
    summary: str
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.summary} ({self.seconds:.1f}s)"


def _timed(fn):
    def wrapper(*args, **kw):
        t0 = time.perf_counter()
        out = fn(*args, **kw)
        out.seconds = time.perf_counter() - t0
        return out

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def split_evenly(total: int, parts: int) -> list[int]:
    return [total // parts + (1 if i < total % parts else 0) for i in range(parts)]


def per_slot(lam_cycle) -> np.ndarray:
    return np.asarray(lam_cycle, dtype=float) / 3.0


# -- 1 -------------------------------------------------------------------------


@_timed
def solver_oracle(n_models: int = 50, seed: int = 0, tol: float = 1e-8) -> Outcome:
    """Value iteration and policy iteration against exhaustive enumeration."""
    rng = np.random.default_rng(seed)
    worst_rvi = worst_pi = 0.0
    for _ in range(n_models):
        model = random_model(
            rng,
            n_states=int(rng.integers(1, 5)),
            n_actions=int(rng.integers(1, 4)),
            n_classes=int(rng.integers(1, 4)),
            schedule_bound=int(rng.integers(1, 3)),
        )
        q = rng.uniform(0, 10, model.n_classes)
        best = brute_force_gain(model, q).gain
        worst_rvi = max(worst_rvi, abs(relative_value_iteration(model, q, tol=1e-11).gain - best))
        worst_pi = max(worst_pi, abs(policy_iteration(model, q).gain - best))
    ok = worst_rvi <= tol and worst_pi <= tol
    return Outcome(
        "solver-oracle",
        ok,
        f"{n_models} random models, max |gain - brute| RVI {worst_rvi:.3g}, PI {worst_pi:.3g} (tol {tol:g})",
        {"rvi": worst_rvi, "pi": worst_pi},
    )


# -- 2 -------------------------------------------------------------------------

REGION_GRID = [
    (l1, l2, l3) for l1 in (0.1, 0.4, 0.7) for l2 in (0.1, 0.4, 0.7) for l3 in (0.2, 0.4)
] + [(0.5, 0.5, 0.5), (0.2, 0.3, 0.9)]


@_timed
def capacity_region(grid=REGION_GRID, tol: float = 1e-7) -> Outcome:
    """Capacity LP on deterministic rotation-3 against the analytic region and the hull oracle."""
    model = build_rotation3(Rotation3Params(d1=0.0, d2=0.0))
    table = _enumerate.policy_rates(model, 10**5)
    rows, ok = [], True
    for lam_c in grid:
        lam = per_slot(lam_c)
        res = capacity_margin(model, lam)
        analytic = rotation3_region(lam_c) / 3.0
        hull = hull_oracle(model, lam, table=table)
        agree = res.classification == classify(analytic) and abs(res.margin - hull) <= tol
        ok &= agree
        rows.append((lam_c, res.margin * 3, res.classification, classify(analytic), hull * 3))
    interior = capacity_margin(model, per_slot((0.4, 0.4, 0.4))).classification == "interior"
    outside = capacity_margin(model, per_slot((0.7, 0.7, 0.4))).classification == "outside"
    ok &= interior and outside
    return Outcome(
        "capacity-region",
        ok,
        f"{len(grid)} points agree with analytic region and hull oracle; (0.4,0.4,0.4) interior={interior}, "
        f"(0.7,0.7,0.4) outside={outside}",
        {"rows": rows},
    )


# -- 3 -------------------------------------------------------------------------


@_timed
def rotation3_maxweight_unstable(seeds=range(10), horizon: int = 300_000) -> Outcome:
    model = build_rotation3()
    slopes, verdicts, resid = [], [], 0
    for s in seeds:
        tr = run(model, MaxWeight(), horizon, s)
        resid = max(resid, tr.conservation_residual())
        st = stability_diagnostic(tr.Q[:, 2])
        slopes.append(3 * st.slope)
        verdicts.append(st.verdict)
    mean, lo, hi = mean_ci(slopes)
    ok = lo > 0 and 0.005 <= mean <= 0.08 and resid == 0
    return Outcome(
        "rotation3-maxweight-unstable",
        ok,
        f"Q3 slope {mean:.4f}/cycle, 95% CI [{lo:.4f}, {hi:.4f}] (need CI > 0, mean in [0.005, 0.08]); "
        f"verdicts {dict((v, verdicts.count(v)) for v in sorted(set(verdicts)))}",
        {"slopes": slopes, "ci": (lo, hi), "verdicts": verdicts},
    )


@_timed
def rotation3_warp_stable(seeds=range(10), horizon: int = 300_000) -> Outcome:
    model = build_rotation3()
    rows, ok = [], True
    for s in seeds:
        tr = run(model, Warp(), horizon, s)
        st = stability_diagnostic(tr)
        good = st.verdict == "bounded" and st.max_total < 500 and st.returns >= 10 and tr.conservation_residual() == 0
        ok &= good
        rows.append((s, st.verdict, st.max_total, st.returns))
    worst = max(r[2] for r in rows)
    return Outcome(
        "rotation3-warp-stable",
        ok,
        f"bounded on {sum(r[1] == 'bounded' for r in rows)}/{len(rows)} seeds, worst max |Q|_1 {worst} (< 500)",
        {"rows": rows},
    )


# -- 4 -------------------------------------------------------------------------


@_timed
def decoherence_conditions() -> Outcome:
    from fractions import Fraction

    c = check_decoherence_conditions(4, 150, 150, 20, 200, 200)
    exact = (
        c.A.lhs == Fraction(5, 4)
        and c.A.rhs == 4
        and c.B.lhs == Fraction(23, 400)
        and c.B.rhs == Fraction(1, 4)
        and c.C1.lhs == Fraction(308, 400)
        and c.C1.rhs == c.C2.rhs == Fraction(3, 4)
    )
    ok = exact and c.holds
    return Outcome(
        "appendixC-conditions",
        ok,
        f"A: {c.A}; B: {c.B}; C: {c.C1.lhs} > {c.C1.rhs} and {c.C2.rhs}: {'PASS' if c.C[3] else 'FAIL'}",
        {"conditions": c},
    )


# -- 5 -------------------------------------------------------------------------


@_timed
def decoherence_p0_vs_maxweight(seeds=range(10), horizon: int = 10**6) -> Outcome:
    model = build_decoherence_net()
    mw, p0, resid = [], [], 0
    for s in seeds:
        tr = run(model, MaxWeight(), horizon, s)
        resid = max(resid, tr.conservation_residual())
        mw.append(stability_diagnostic(tr.Q[:, 0]).verdict)
        tr = run(model, PriorityP0(), horizon, s)
        resid = max(resid, tr.conservation_residual())
        p0.append(tuple(stability_diagnostic(tr.Q[:, r]).verdict for r in range(3)))
    ok = all(v == "growing" for v in mw) and all(v == "bounded" for row in p0 for v in row) and resid == 0
    return Outcome(
        "appendixC-p0-vs-maxweight",
        ok,
        f"MaxWeight Q0 growing on {mw.count('growing')}/{len(mw)} seeds; "
        f"P0 bounded on all queues on {sum(all(v == 'bounded' for v in row) for row in p0)}/{len(p0)} seeds",
        {"maxweight": mw, "p0": p0},
    )


# -- 6 -------------------------------------------------------------------------

FLUID_POINTS = [(0.4, 0.4, 0.4), (0.2, 0.5, 0.3), (0.6, 0.3, 0.2), (0.1, 0.1, 0.7), (0.3, 0.6, 0.1)]


@_timed
def fluid_stability(points=FLUID_POINTS, q0=(0.5, 0.3, 0.8)) -> Outcome:
    model = build_rotation3()
    rows, ok = [], True
    for lam_c in points:
        lam = per_slot(lam_c)
        eps = capacity_margin(model, lam).margin
        bound = empty_time_bound(q0, eps)
        traj = integrate_fluid(model, lam, q0, t_max=bound + 1.0)
        drift = check_drift_inequality(traj, eps)
        tol = 5 * traj.dt * (lam.sum() + model.schedule_bound)
        good = traj.empty_time is not None and traj.empty_time <= bound + 2 * traj.dt and drift.passes(tol)
        ok &= good
        rows.append((lam_c, eps, traj.empty_time, bound, drift.slack, tol))
    return Outcome(
        "fluid-stability",
        ok,
        "; ".join(f"{r[0]}: empty {'never' if r[2] is None else f'{r[2]:.4g}'} <= {r[3]:.1f}, slack {r[4]:.2g}" for r in rows),
        {"rows": rows},
    )


# -- 7 -------------------------------------------------------------------------


@_timed
def timescale_separation(cs=(50, 200), seeds=range(10), epochs: int = 5, horizon: int = 2000) -> Outcome:
    """Mean TV over the first ``epochs`` WARP epochs, started at |Q|_1 = c."""
    model = rotation3_stochastic()
    means = {}
    for c in cs:
        per_seed = []
        for s in seeds:
            tr = run(model, Warp(), horizon, s, q0=split_evenly(c, model.n_classes))
            per_seed.append(np.mean([timescale_diagnostic(model, tr, i) for i in range(epochs)]))
        means[c] = float(np.mean(per_seed))
    lo, hi = min(cs), max(cs)
    ok = means[hi] < means[lo] and means[hi] < 0.1
    return Outcome(
        "timescale-separation",
        ok,
        ", ".join(f"c={c}: TV {means[c]:.4f}" for c in cs) + f" (need TV({hi}) < TV({lo}) and < 0.1)",
        {"means": means},
    )


# -- 8 -------------------------------------------------------------------------


@_timed
def property_suite(seed: int = 0, n_saturated: int = 10**6) -> Outcome:
    rng = np.random.default_rng(seed)
    checks = {}
    rot = build_rotation3()
    rot_s = rotation3_stochastic()

    resid = 0
    for s in range(3):
        for model, ctl in ((rot, MaxWeight()), (rot_s, Warp()), (build_decoherence_net(), PriorityP0())):
            resid = max(resid, run(model, ctl, 20_000, s, q0=split_evenly(30, 3)).conservation_residual())
    checks["conservation"] = resid == 0

    same = 0
    for _ in range(100):
        q = rng.integers(0, 50, 3)
        if q.sum() == 0:
            q[0] = 1
        a = relative_value_iteration(rot_s, q).actions
        b = relative_value_iteration(rot_s, 10 * q).actions
        same += bool(np.array_equal(a, b))
    checks["scale-invariance"] = same == 100

    mono = True
    for _ in range(50):
        q = rng.uniform(0, 5, 3)
        q2 = q + rng.uniform(0, 5, 3)
        mono &= relative_value_iteration(rot_s, q).gain <= relative_value_iteration(rot_s, q2).gain + 1e-9
    checks["gain-monotone"] = mono

    policy = AgnosticPolicy.uniform(rot_s)
    tr = run(rot_s, FixedAgnostic(policy), n_saturated, seed, q0=[10**6] * 3)
    emp = tr.departures.sum(axis=0) / n_saturated
    gap = float(np.abs(emp - achievable_rate(rot_s, policy)).max())
    checks["saturated-rate"] = gap <= 3 / np.sqrt(n_saturated)

    cap_ok = True
    for _ in range(10):
        lam = rng.uniform(0, 0.4, 3)
        lam2 = lam + rng.uniform(0, 0.1, 3)
        cap_ok &= capacity_margin(rot, lam2).margin <= capacity_margin(rot, lam).margin + 1e-9
    checks["capacity-monotone"] = cap_ok

    ok = all(checks.values())
    return Outcome(
        "property-suites",
        ok,
        ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in checks.items()) + f" (saturated gap {gap:.2g})",
        {"checks": checks, "saturated_gap": gap},
    )


REPRODUCE = {
    "rotation3-maxweight-unstable": rotation3_maxweight_unstable,
    "rotation3-warp-stable": rotation3_warp_stable,
    "appendixC-conditions": decoherence_conditions,
    "appendixC-p0-vs-maxweight": decoherence_p0_vs_maxweight,
    "timescale-separation": timescale_separation,
}

ACCEPTANCE = [
    solver_oracle,
    capacity_region,
    rotation3_maxweight_unstable,
    rotation3_warp_stable,
    decoherence_conditions,
    decoherence_p0_vs_maxweight,
    fluid_stability,
    timescale_separation,
    property_suite,
]
