"""Average-reward MDP over server states with queue-weighted rewards.

The reward of action ``a`` in state ``z`` is ``q . sigma_bar(a, z)``. Solvers
work on ``q / sum(q)`` internally and rescale gain and bias on the way out, so
``q`` and ``alpha * q`` produce bit-identical policies for integer ``q``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from mdpn import _enumerate
from mdpn._enumerate import TooLarge
from mdpn.markov import AgnosticPolicy, closed_classes, is_unichain_policy
from mdpn.model import InfeasibleAction, MdpnModel

# Q-values within this distance (normalized scale) count as tied
TIE_TOL = 1e-9

__all__ = [
    "GainBias",
    "MaxIterExceeded",
    "NonUnichainOptimal",
    "TooLarge",
    "brute_force_gain",
    "max_weight_action",
    "policy_iteration",
    "relative_value_iteration",
    "reward",
]


@dataclass
class GainBias:
    gain: float
    bias: np.ndarray
    policy: AgnosticPolicy
    residual: float
    iterations: int
    multichain: bool = False
    info: dict = field(default_factory=dict)

    @property
    def actions(self) -> np.ndarray:
        return self.policy.actions


class MaxIterExceeded(RuntimeError):
    def __init__(self, result: GainBias):
        super().__init__(f"no convergence after {result.iterations} iterations (residual {result.residual:.3g})")
        self.result = result


class NonUnichainOptimal(RuntimeError):
    def __init__(self, result: GainBias, classes):
        super().__init__(f"greedy policy has {len(classes)} closed classes")
        self.result = result
        self.classes = classes


def _weights(model: MdpnModel, q: Sequence[float]) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (model.n_classes,):
        raise ValueError(f"weights must have length {model.n_classes}, got shape {q.shape}")
    if np.any(q < 0) or not np.all(np.isfinite(q)):
        raise ValueError("weights must be finite and nonnegative")
    return q


def reward(model: MdpnModel, z: int, a: int, q: Sequence[float]) -> float:
    """Expected weighted number of requests scheduled by ``a`` in ``z``."""
    q = _weights(model, q)
    if not model.is_feasible(z, a):
        raise InfeasibleAction(z, a)
    return float(model.mean_sigma[z, a] @ q)


def _rewards(model: MdpnModel, q_hat: np.ndarray) -> np.ndarray:
    return model.mean_sigma @ q_hat


def _greedy(qvals: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Best value per state and lowest-id action within TIE_TOL of it."""
    masked = np.where(mask, qvals, -np.inf)
    best = masked.max(axis=1)
    cand = masked >= (best - TIE_TOL)[:, None]
    return best, np.argmax(cand, axis=1)


def _lowest_feasible(model: MdpnModel) -> np.ndarray:
    return np.array([acts[0] for acts in model.feasible])


def _zero_result(model: MdpnModel) -> GainBias:
    policy = AgnosticPolicy.deterministic(model, _lowest_feasible(model))
    return GainBias(0.0, np.zeros(model.n_states), policy, 0.0, 0)


def relative_value_iteration(
    model: MdpnModel,
    q: Sequence[float],
    tol: float = 1e-9,
    max_iter: int = 10**6,
    damping: float = 0.9,
    check_unichain: bool = True,
    v0: np.ndarray | None = None,
) -> GainBias:
    """Relative value iteration with the aperiodicity transform.

    Iterates ``V <- (1 - damping) V + damping T V`` anchored at state 0 and
    stops once the undamped Bellman residual ``sp(T V - V)`` is within
    ``tol``. The damping leaves gain and bias unchanged but makes periodic
    optimal chains converge.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = _weights(model, q)
    scale = q.sum()
    if scale == 0:
        return _zero_result(model)
    q_hat = q / scale
    tol_hat = tol / scale

    nz, na = model.n_states, model.n_actions
    mask = model.mask
    u = np.where(mask, _rewards(model, q_hat), -np.inf).ravel()
    P = model.transition.reshape(nz * na, nz)
    V = np.zeros(nz) if v0 is None else np.asarray(v0, dtype=float) / scale
    V = V - V[0]

    span = np.inf
    diff = np.zeros(nz)
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        TV = (u + P @ V).reshape(nz, na).max(axis=1)
        diff = TV - V
        span = diff.max() - diff.min()
        # below this the update is pure rounding noise
        floor = 64 * np.finfo(float).eps * max(1.0, np.abs(TV).max())
        if span <= tol_hat or span <= floor:
            converged = True
            break
        V = V + damping * diff
        V -= V[0]

    qvals = (np.where(mask.ravel(), u, -np.inf) + P @ V).reshape(nz, na)
    _, actions = _greedy(qvals, mask)
    gain = 0.5 * (diff.max() + diff.min()) * scale
    result = GainBias(
        gain=float(gain),
        bias=V * scale,
        policy=AgnosticPolicy.deterministic(model, actions),
        residual=float(span * scale),
        iterations=it,
    )
    if not converged:
        raise MaxIterExceeded(result)
    if check_unichain:
        report = is_unichain_policy(model, result.policy)
        if not report.is_unichain:
            raise NonUnichainOptimal(result, report.classes)
    return result


def _evaluate(P_pi: np.ndarray, u_pi: np.ndarray) -> tuple[float, np.ndarray]:
    """Solve g + h = u + P h with h[0] = 0 for a unichain policy."""
    n = len(u_pi)
    M = np.empty((n, n))
    M[:, 0] = 1.0
    M[:, 1:] = np.eye(n)[:, 1:] - P_pi[:, 1:]
    x = np.linalg.solve(M, u_pi)
    h = np.concatenate([[0.0], x[1:]])
    return float(x[0]), h


def policy_iteration(
    model: MdpnModel,
    q: Sequence[float],
    tol: float = 1e-9,
    max_iter: int = 10_000,
) -> GainBias:
    """Howard policy iteration for unichain models, started from the myopic policy."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = _weights(model, q)
    scale = q.sum()
    if scale == 0:
        return _zero_result(model)
    q_hat = q / scale
    nz = model.n_states
    zs = np.arange(nz)
    mask = model.mask
    u = _rewards(model, q_hat)
    P = model.transition

    _, actions = _greedy(u, mask)
    seen = set()
    it = 0
    g, h = 0.0, np.zeros(nz)
    for it in range(1, max_iter + 1):
        P_pi = P[zs, actions]
        classes = closed_classes(P_pi)
        if len(classes) != 1:
            policy = AgnosticPolicy.deterministic(model, actions)
            partial = GainBias(float("nan"), np.full(nz, np.nan), policy, float("inf"), it)
            raise NonUnichainOptimal(partial, classes)
        g, h = _evaluate(P_pi, u[zs, actions])
        qvals = u + P @ h
        best, greedy = _greedy(qvals, mask)
        keep = qvals[zs, actions] >= best - TIE_TOL
        new = np.where(keep, actions, greedy)
        key = new.tobytes()
        if np.array_equal(new, actions) or key in seen:
            break
        seen.add(actions.tobytes())
        actions = new
    else:
        policy = AgnosticPolicy.deterministic(model, actions)
        raise MaxIterExceeded(GainBias(g * scale, h * scale, policy, float("inf"), it))

    qvals = u + P @ h
    best, canonical = _greedy(qvals, mask)
    diff = best - h
    residual = float((diff.max() - diff.min()) * scale)
    policy = AgnosticPolicy.deterministic(model, canonical)
    result = GainBias(g * scale, h * scale, policy, residual, it)
    report = is_unichain_policy(model, policy)
    if not report.is_unichain:
        raise NonUnichainOptimal(result, report.classes)
    return result


def brute_force_gain(model: MdpnModel, q: Sequence[float], limit: int = 10**6) -> GainBias:
    """Best average reward over all deterministic agnostic policies.

    Multichain policies are scored per closed class and the best class
    counts; ``multichain`` flags a maximizer of that kind.
    """
    q = _weights(model, q)
    table = _enumerate.policy_rates(model, limit)
    scores = table.rates @ q
    k = int(np.argmax(scores))
    actions = table.actions(model, k)
    policy = AgnosticPolicy.deterministic(model, actions)
    multichain = bool(table.multichain[k])
    bias = np.full(model.n_states, np.nan)
    if not multichain:
        zs = np.arange(model.n_states)
        _, bias = _evaluate(model.transition[zs, actions], model.mean_sigma[zs, actions] @ q)
    return GainBias(
        gain=float(scores[k]),
        bias=bias,
        policy=policy,
        residual=0.0,
        iterations=_enumerate.n_policies(model),
        multichain=multichain,
        info={"scores": scores, "table": table},
    )


def max_weight_action(model: MdpnModel, z: int, q_live: Sequence[float]) -> int:
    """Action maximizing sum_r Q_r sigma_bar_r(a, z); lowest id wins ties."""
    acts = model.feasible[z]
    obj = model.mean_sigma[z, list(acts)] @ np.asarray(q_live, dtype=float)
    best = obj.max()
    tie = 1e-12 * max(1.0, abs(best))
    return int(acts[int(np.argmax(obj >= best - tie))])
