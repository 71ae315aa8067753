"""Builders for the two counterexample networks and their analytic checks.

rotation-3
    Servers s1, s2, s3 show up in turn, one per slot. s1 and s2 can be held
    (at most one of each) and decohere at slot end with probabilities d1, d2;
    s3 is lost if not used in its slot, and by default so are any holds left
    when the cycle ends. Request r1 needs s1, r2 needs s2 and r3 needs all
    three at once. By default the s3 slot only offers serve_r3 or hold. Arrivals are Bernoulli(lambda / 3) per slot,
    so per-cycle rates convert to per-slot ones by dividing by 3.

decoherence net
    Three server types arrive independently (probability mu_i h per slot when
    none is held). A held type-0 server survives a slot with probability h^2,
    held type-1/2 servers with probability 1 - h^2. Request r0 needs one of
    each type, r1 and r2 need their own type.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from mdpn.markov import AgnosticPolicy
from mdpn.model import MdpnModel, bernoulli_pmf, build_model
from mdpn.sim.controllers import Controller

# -- rotation-3 ---------------------------------------------------------------

ROT_ACTIONS = ("hold", "serve_r1", "serve_r2", "serve_r1r2", "serve_r3")
HOLD, SERVE_R1, SERVE_R2, SERVE_R1R2, SERVE_R3 = range(5)


def _probability(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0 or math.isnan(value):
        raise ValueError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class Rotation3Params:
    lam: tuple[float, float, float] = (0.4, 0.4, 0.4)  # per cycle
    d1: float = 0.0
    d2: float = 0.0
    p_success: float = 1.0
    carry_holds: bool = False  # keep held servers across cycle boundaries
    late_service: bool = False  # allow held s1/s2 to serve r1/r2 in the s3 slot

    def __post_init__(self):
        if len(self.lam) != 3:
            raise ValueError("lam needs three per-cycle rates")
        for r, x in enumerate(self.lam):
            _probability(f"lam[{r}]", x)
        _probability("d1", self.d1)
        _probability("d2", self.d2)
        _probability("p_success", self.p_success)

    @property
    def per_slot(self) -> tuple[float, float, float]:
        return tuple(x / 3.0 for x in self.lam)


def rot_state(p: int, h1: int, h2: int) -> int:
    return 4 * p + 2 * h1 + h2


def rot_decode(z: int) -> tuple[int, int, int]:
    return z // 4, (z // 2) % 2, z % 2


def _rot_pools(p: int, h1: int, h2: int) -> tuple[int, int, int]:
    return h1 + (p == 0), h2 + (p == 1), int(p == 2)


_ROT_USES = {
    HOLD: ((0, 0, 0), (0, 0, 0)),
    SERVE_R1: ((1, 0, 0), (1, 0, 0)),
    SERVE_R2: ((0, 1, 0), (0, 1, 0)),
    SERVE_R1R2: ((1, 1, 0), (1, 1, 0)),
    SERVE_R3: ((1, 1, 1), (0, 0, 1)),
}


def _merge(outcomes) -> list[tuple[int, tuple[int, ...], float]]:
    acc: dict = {}
    for zn, sigma, p in outcomes:
        if p > 0:
            acc[(zn, sigma)] = acc.get((zn, sigma), 0.0) + p
    return sorted((zn, sigma, p) for (zn, sigma), p in acc.items())


def build_rotation3(params: Rotation3Params = Rotation3Params()) -> MdpnModel:
    labels = [f"p{p}h{h1}{h2}" for p in range(3) for h1 in (0, 1) for h2 in (0, 1)]
    feasible, kernel = [], {}
    for z in range(12):
        p, h1, h2 = rot_decode(z)
        pools = _rot_pools(p, h1, h2)
        acts = []
        for a, (need, sigma) in _ROT_USES.items():
            if any(n > c for n, c in zip(need, pools)):
                continue
            if p == 2 and a in (SERVE_R1, SERVE_R2, SERVE_R1R2) and not params.late_service:
                continue
            acts.append(a)
            keep1 = min(1, pools[0] - need[0])
            keep2 = min(1, pools[1] - need[1])
            nxt = (p + 1) % 3
            if nxt == 0 and not params.carry_holds:
                keep1 = keep2 = 0
            out = []
            succ = params.p_success if a == SERVE_R3 else 1.0
            for ok, p_ok in ((1, succ), (0, 1.0 - succ)):
                sig = tuple(s if (r < 2 or ok) else 0 for r, s in enumerate(sigma))
                for s1, p1 in ((1, 1.0 - params.d1), (0, params.d1)) if keep1 else ((0, 1.0),):
                    for s2, p2 in ((1, 1.0 - params.d2), (0, params.d2)) if keep2 else ((0, 1.0),):
                        out.append((rot_state(nxt, s1, s2), sig, p_ok * p1 * p2))
            kernel[(z, a)] = _merge(out)
        feasible.append(acts)
    return build_model(
        labels,
        ROT_ACTIONS,
        feasible,
        kernel,
        ["r1", "r2", "r3"],
        [bernoulli_pmf(x) for x in params.per_slot],
        schedule_bound=1,
    )


def rotation3_stochastic(lam=(0.4, 0.4, 0.4), d: float = 0.01) -> MdpnModel:
    """Rotation-3 with small hold decoherence; every agnostic policy is unichain."""
    return build_rotation3(Rotation3Params(tuple(lam), d1=d, d2=d))


def rotation3_region(lam: Sequence[float]) -> float:
    """Per-cycle margin of the analytic region {l1+l3<=1, l2+l3<=1, l3<=1}.

    A fraction ``w`` of cycles is spent serving r3 and the rest serving r1
    and r2 together, so the best uniform slack is
    ``max_w min(1 - w - max(l1, l2), w - l3)`` over ``w`` in [0, 1].
    """
    l1, l2, l3 = (float(x) for x in lam)
    m = max(l1, l2)
    w = min(1.0, max(0.0, (1.0 - m + l3) / 2.0))
    return min(1.0 - w - m, w - l3)


def _rot_policy(model: MdpnModel, rule) -> AgnosticPolicy:
    acts = []
    for z in range(model.n_states):
        a = rule(*rot_decode(z))
        if a not in model.feasible[z]:
            a = model.feasible[z][0]
        acts.append(a)
    return AgnosticPolicy.deterministic(model, acts)


def rotation3_policies(model: MdpnModel) -> dict[str, AgnosticPolicy]:
    """Bundled request-agnostic policies for rotation-3 style models."""

    def hold_then_r3(p, h1, h2):
        return SERVE_R3 if p == 2 and h1 and h2 else HOLD

    def serve_immediately(p, h1, h2):
        pools = _rot_pools(p, h1, h2)
        if pools[0] and pools[1]:
            return SERVE_R1R2
        if pools[0]:
            return SERVE_R1
        if pools[1]:
            return SERVE_R2
        return HOLD

    def always_hold(p, h1, h2):
        return HOLD

    return {
        "hold_then_r3": _rot_policy(model, hold_then_r3),
        "serve_immediately": _rot_policy(model, serve_immediately),
        "always_hold": _rot_policy(model, always_hold),
    }


# -- decoherence net ----------------------------------------------------------

DEC_ACTIONS = ("hold", "serve_r0", "serve_r1", "serve_r2", "serve_r1r2")
D_HOLD, D_R0, D_R1, D_R2, D_R1R2 = range(5)
_DEC_USES = {
    D_HOLD: ((0, 0, 0), (0, 0, 0)),
    D_R0: ((1, 1, 1), (1, 0, 0)),
    D_R1: ((0, 1, 0), (0, 1, 0)),
    D_R2: ((0, 0, 1), (0, 0, 1)),
    D_R1R2: ((0, 1, 1), (0, 1, 1)),
}


@dataclass(frozen=True)
class DecoherenceNetParams:
    h: float = 0.01
    lam: tuple[float, float, float] = (0.2, 7.5, 7.5)
    mu: tuple[float, float, float] = (1.0, 10.0, 10.0)

    def __post_init__(self):
        if not 0.0 < self.h <= 0.05:
            raise ValueError(f"h must lie in (0, 0.05], got {self.h}")
        if len(self.lam) != 3 or len(self.mu) != 3:
            raise ValueError("lam and mu need three entries each")
        for i in range(3):
            _probability(f"lam[{i}] * h", self.lam[i] * self.h)
            _probability(f"mu[{i}] * h", self.mu[i] * self.h)

    @property
    def survival(self) -> tuple[float, float, float]:
        return (self.h ** 2, 1.0 - self.h ** 2, 1.0 - self.h ** 2)

    @classmethod
    def reference_rates(cls, h: float = 0.01, time_scale: float = 20.0) -> "DecoherenceNetParams":
        """Rates (4, 150, 150) and (20, 200, 200) divided by ``time_scale``.

        At h = 0.01 the raw rates give per-slot probabilities above 1; a common
        rescaling of all rates leaves the three conditions unchanged.
        """
        lam = tuple(x / time_scale for x in (4.0, 150.0, 150.0))
        mu = tuple(x / time_scale for x in (20.0, 200.0, 200.0))
        return cls(h, lam, mu)


def dec_state(b0: int, b1: int, b2: int) -> int:
    return 4 * b0 + 2 * b1 + b2


def dec_decode(z: int) -> tuple[int, int, int]:
    return z // 4, (z // 2) % 2, z % 2


def _type_law(kept: int, survive: float, arrive: float) -> list[tuple[int, float, int]]:
    """(next flag, probability, rare-event count) for one server type."""
    if kept:
        # survival of a type-0 server is rare, loss of a type-1/2 server is rare
        rare_survive = int(survive < 0.5)
        return [
            (1, survive, rare_survive),
            (1, (1.0 - survive) * arrive, (1 - rare_survive) + 1),
            (0, (1.0 - survive) * (1.0 - arrive), 1 - rare_survive),
        ]
    return [(1, arrive, 1), (0, 1.0 - arrive, 0)]


def _dec_outcomes(params: DecoherenceNetParams, z: int, a: int):
    need, sigma = _DEC_USES[a]
    flags = dec_decode(z)
    kept = [f - n for f, n in zip(flags, need)]
    laws = [_type_law(kept[i], params.survival[i], params.mu[i] * params.h) for i in range(3)]
    for combo in itertools.product(*laws):
        zn = dec_state(*(c[0] for c in combo))
        yield zn, sigma, math.prod(c[1] for c in combo), sum(c[2] for c in combo)


def build_decoherence_net(params: DecoherenceNetParams = DecoherenceNetParams.reference_rates()) -> MdpnModel:
    labels = [f"b{b0}{b1}{b2}" for b0 in (0, 1) for b1 in (0, 1) for b2 in (0, 1)]
    feasible, kernel = [], {}
    for z in range(8):
        flags = dec_decode(z)
        acts = [a for a, (need, _) in _DEC_USES.items() if all(n <= f for n, f in zip(need, flags))]
        feasible.append(acts)
        for a in acts:
            kernel[(z, a)] = _merge((zn, s, p) for zn, s, p, _ in _dec_outcomes(params, z, a))
    return build_model(
        labels,
        DEC_ACTIONS,
        feasible,
        kernel,
        ["r0", "r1", "r2"],
        [bernoulli_pmf(x * params.h) for x in params.lam],
        schedule_bound=1,
    )


def multi_event_mass(params: DecoherenceNetParams, z: int, a: int) -> float:
    """Probability that two or more order-h events happen in one slot.

    Events are server arrivals, the rare decoherence outcomes and request
    arrivals, all independent within a slot.
    """
    kernel_counts = np.zeros(8)
    for _, _, p, n in _dec_outcomes(params, z, a):
        kernel_counts[n] += p
    dist = kernel_counts
    for x in params.lam:
        q = x * params.h
        nxt = np.zeros_like(dist)
        nxt[:-1] += dist[:-1] * (1 - q)
        nxt[1:] += dist[:-1] * q
        dist = nxt
    return float(dist[2:].sum())


def two_event_bound(params: DecoherenceNetParams) -> float:
    """Pairwise union bound ``C(n, 2) h^2 C0`` with C0 the largest squared rate."""
    c0 = max(1.0, max(params.lam) ** 2, max(params.mu) ** 2)
    return math.comb(9, 2) * params.h ** 2 * c0


class PriorityP0(Controller):
    """Serve r0 whenever possible; use type-1/2 servers only when Q0 is empty."""

    name = "p0"

    def reset(self, model: MdpnModel) -> None:
        if model.action_labels != DEC_ACTIONS or model.n_states != 8 or model.n_classes != 3:
            raise ValueError("PriorityP0 needs a model from build_decoherence_net")
        super().reset(model)
        self._flags = [dec_decode(z) for z in range(8)]

    def act(self, t, z, Q, u):
        b0, b1, b2 = self._flags[z]
        if Q[0] > 0:
            return D_R0 if b0 and b1 and b2 else D_HOLD
        s1 = b1 and Q[1] > 0
        s2 = b2 and Q[2] > 0
        if s1 and s2:
            return D_R1R2
        if s1:
            return D_R1
        if s2:
            return D_R2
        return D_HOLD


def p0_policy(model: MdpnModel) -> PriorityP0:
    ctl = PriorityP0()
    ctl.reset(model)
    return ctl


def greedy_match_policy(model: MdpnModel) -> AgnosticPolicy:
    """Request-agnostic rule: serve r0 when all three servers are held, else r1/r2."""
    acts = []
    for z in range(8):
        b0, b1, b2 = dec_decode(z)
        if b0 and b1 and b2:
            acts.append(D_R0)
        elif b1 and b2:
            acts.append(D_R1R2)
        elif b1:
            acts.append(D_R1)
        elif b2:
            acts.append(D_R2)
        else:
            acts.append(D_HOLD)
    return AgnosticPolicy.deterministic(model, acts)


# -- exact condition checks ---------------------------------------------------


def _exact(x) -> Fraction:
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


@dataclass(frozen=True)
class Inequality:
    lhs: Fraction
    rhs: Fraction
    relation: str  # "<" or ">"

    @property
    def holds(self) -> bool:
        return self.lhs < self.rhs if self.relation == "<" else self.lhs > self.rhs

    def __str__(self) -> str:
        return f"{self.lhs} {self.relation} {self.rhs}: {'PASS' if self.holds else 'FAIL'}"


@dataclass(frozen=True)
class DecoherenceConditions:
    A: Inequality
    B: Inequality
    C1: Inequality
    C2: Inequality
    mu0_tilde: Fraction

    @property
    def C(self) -> tuple[Fraction, Fraction, Fraction, bool]:
        """(lhs, rhs for class 1, rhs for class 2, holds)."""
        return self.C1.lhs, self.C1.rhs, self.C2.rhs, self.C1.holds and self.C2.holds

    @property
    def holds(self) -> bool:
        return self.A.holds and self.B.holds and self.C[3]


def check_decoherence_conditions(lam0, lam1, lam2, mu0, mu1, mu2) -> DecoherenceConditions:
    """Exact instability conditions for MaxWeight on the decoherence net.

    A: ``mu0 (1 - l1/mu1)(1 - l2/mu2) < l0``
    B: ``1/mu0~ = 1/mu1 + 1/mu2 - 1/(mu1 + mu2) + 1/mu0 < 1/l0``
    C: ``1 - l0/mu0~ > l1/mu1`` and ``> l2/mu2``
    """
    l0, l1, l2, m0, m1, m2 = (_exact(x) for x in (lam0, lam1, lam2, mu0, mu1, mu2))
    if min(l0, l1, l2, m0, m1, m2) <= 0:
        raise ValueError("all rates must be positive")
    if not (l1 < m1 and l2 < m2):
        raise ValueError("need lambda_i < mu_i for i = 1, 2")
    inv_tilde = 1 / m1 + 1 / m2 - 1 / (m1 + m2) + 1 / m0
    a = Inequality(m0 * (1 - l1 / m1) * (1 - l2 / m2), l0, "<")
    b = Inequality(inv_tilde, 1 / l0, "<")
    c_lhs = 1 - l0 * inv_tilde
    return DecoherenceConditions(a, b, Inequality(c_lhs, l1 / m1, ">"), Inequality(c_lhs, l2 / m2, ">"), 1 / inv_tilde)


BUILDERS = {
    "rotation3": lambda **kw: build_rotation3(Rotation3Params(**kw)),
    "rotation3-stochastic": rotation3_stochastic,
    "decoherence-net": lambda **kw: build_decoherence_net(
        DecoherenceNetParams.reference_rates(**kw) if set(kw) <= {"h", "time_scale"} else DecoherenceNetParams(**kw)
    ),
}


def random_model(
    rng: np.random.Generator,
    n_states: int = 4,
    n_actions: int = 3,
    n_classes: int = 2,
    schedule_bound: int = 1,
    max_branches: int = 3,
    anchor: float = 0.05,
) -> MdpnModel:
    """Random model for oracle checks.

    Every feasible pair keeps at least ``anchor`` probability of moving to
    state 0, so every agnostic policy is unichain.
    """
    feasible, kernel = [], {}
    for z in range(n_states):
        k = int(rng.integers(1, n_actions + 1))
        acts = sorted(rng.choice(n_actions, size=k, replace=False).tolist())
        feasible.append(acts)
        for a in acts:
            nb = int(rng.integers(1, max_branches + 1))
            w = rng.dirichlet(np.ones(nb)) * (1.0 - anchor)
            out = [(0, tuple(int(s) for s in rng.integers(0, schedule_bound + 1, n_classes)), anchor)]
            for j in range(nb):
                sigma = tuple(int(s) for s in rng.integers(0, schedule_bound + 1, n_classes))
                out.append((int(rng.integers(n_states)), sigma, float(w[j])))
            kernel[(z, a)] = _merge(out)
    pmfs = [bernoulli_pmf(float(rng.uniform(0, 0.5))) for _ in range(n_classes)]
    return build_model(
        [f"z{z}" for z in range(n_states)],
        [f"a{a}" for a in range(n_actions)],
        feasible,
        kernel,
        [f"r{r}" for r in range(n_classes)],
        pmfs,
        schedule_bound,
    )
