"""Fluid model under the instantaneous average-reward optimal policy.

``dQ/dt = lambda - rate(pi*(Q))`` where ``pi*(Q)`` maximizes the stationary
queue-weighted service rate. Components sitting at zero are projected so the
queue never goes negative; cumulative departures absorb the difference, so
``Q(t) = Q(0) + lambda t - D(t)`` holds at every sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce
from pathlib import Path
from typing import Sequence

import numpy as np

from mdpn.capacity import achievable_rate
from mdpn.markov import AgnosticPolicy
from mdpn.model import MdpnModel
from mdpn.solver import TIE_TOL, relative_value_iteration

GRID = 1e-6


def direction_key(qbar: np.ndarray, grid: float = GRID) -> tuple[int, ...]:
    """Direction of ``qbar`` rounded to a ``grid`` lattice and reduced by the gcd."""
    qbar = np.asarray(qbar, dtype=float)
    top = qbar.max()
    if top <= 0:
        return tuple(0 for _ in qbar)
    ints = [int(round(x / top / grid)) for x in qbar]
    g = reduce(math.gcd, ints, 0)
    return tuple(i // g for i in ints)


@dataclass
class _Solved:
    policy: AgnosticPolicy
    rate: np.ndarray  # (R,) stationary service rates
    bias: np.ndarray  # (Z, R) per-class bias, so the bias for weights q is bias @ q


class FluidPolicy:
    """Optimal-policy oracle for the fluid RHS with two levels of reuse.

    Solutions are cached by queue direction. Before solving, the incumbent
    policy is tested for optimality at the new weights with a one-step policy
    improvement check; its per-class biases make that check linear in ``q``.
    """

    def __init__(self, model: MdpnModel, tol: float = 1e-9):
        self.model = model
        self.tol = tol
        self.policies: list[_Solved] = []
        self._ids: dict[bytes, int] = {}
        self._cache: dict[tuple[int, ...], int] = {}
        self._incumbent: int | None = None
        self.solves = 0

    def _register(self, policy: AgnosticPolicy) -> int:
        key = policy.probs.tobytes()
        if key in self._ids:
            return self._ids[key]
        model = self.model
        zs = np.arange(model.n_states)
        acts = policy.actions
        P = model.transition[zs, acts]
        S = model.mean_sigma[zs, acts]  # (Z, R)
        n = model.n_states
        M = np.empty((n, n))
        M[:, 0] = 1.0
        M[:, 1:] = np.eye(n)[:, 1:] - P[:, 1:]
        x = np.linalg.solve(M, S)  # row 0 holds gains, rows 1.. the biases
        bias = np.vstack([np.zeros((1, S.shape[1])), x[1:]])
        self.policies.append(_Solved(policy, achievable_rate(model, policy), bias))
        self._ids[key] = len(self.policies) - 1
        return len(self.policies) - 1

    def _still_optimal(self, k: int, q: np.ndarray) -> bool:
        sol = self.policies[k]
        model = self.model
        q_hat = q / q.sum()
        h = sol.bias @ q_hat
        qvals = np.where(model.mask, model.mean_sigma @ q_hat + model.transition @ h, -np.inf)
        current = qvals[np.arange(model.n_states), sol.policy.actions]
        return bool(np.all(qvals.max(axis=1) <= current + TIE_TOL))

    def __call__(self, qbar: Sequence[float]) -> int:
        q = np.asarray(qbar, dtype=float)
        if q.sum() <= 0:
            return self._incumbent if self._incumbent is not None else self._solve(np.zeros_like(q))
        key = direction_key(q)
        if key in self._cache:
            self._incumbent = self._cache[key]
        elif self._incumbent is not None and self._still_optimal(self._incumbent, q):
            self._cache[key] = self._incumbent
        else:
            self._incumbent = self._cache[key] = self._solve(np.asarray(key, dtype=float))
        return self._incumbent

    def _solve(self, q: np.ndarray) -> int:
        self.solves += 1
        sol = relative_value_iteration(self.model, q, tol=self.tol)
        return self._register(sol.policy)

    def rate(self, k: int) -> np.ndarray:
        return self.policies[k].rate


def fluid_rhs(model: MdpnModel, lam: Sequence[float], qbar: Sequence[float], oracle: FluidPolicy | None = None):
    """Projected ``lambda - rate(pi*(qbar))``; returns (derivative, policy id)."""
    lam = np.asarray(lam, dtype=float)
    qbar = np.asarray(qbar, dtype=float)
    if np.any(qbar < 0):
        raise ValueError("fluid queue must be nonnegative")
    oracle = oracle or FluidPolicy(model)
    k = oracle(qbar)
    d = lam - oracle.rate(k)
    d = np.where((qbar <= 0) & (d < 0), 0.0, d)
    return d, k


@dataclass
class FluidTrajectory:
    t: np.ndarray
    Q: np.ndarray  # (n, R)
    D: np.ndarray  # (n, R)
    policy_id: np.ndarray
    lam: np.ndarray
    dt: float
    empty_time: float | None
    policies: list[AgnosticPolicy] = field(default_factory=list)

    def lyapunov(self) -> np.ndarray:
        return 0.5 * (self.Q ** 2).sum(axis=1)

    def balance_residual(self) -> float:
        """Largest |Q(t) - Q(0) - lambda t + D(t)|."""
        gap = self.Q - self.Q[0] - np.outer(self.t, self.lam) + self.D
        return float(np.abs(gap).max())

    def write_csv(self, path) -> None:
        R = self.Q.shape[1]
        header = ["t"] + [f"Qbar_{r + 1}" for r in range(R)] + [f"Dbar_{r + 1}" for r in range(R)] + ["policy_id"]
        data = np.column_stack([self.t, self.Q, self.D, self.policy_id])
        fmt = ["%.17g"] * (1 + 2 * R) + ["%d"]
        with Path(path).open("w") as fh:
            fh.write(",".join(header) + "\n")
            np.savetxt(fh, data, fmt=fmt, delimiter=",")


def default_dt(lam: Sequence[float]) -> float:
    total = float(np.sum(lam))
    return 0.01 * min(1.0, 1.0 / total) if total > 0 else 0.01


def integrate_fluid(
    model: MdpnModel,
    lam: Sequence[float],
    q0: Sequence[float],
    dt: float | None = None,
    t_max: float = 100.0,
    tol: float | None = None,
    absorb: bool = True,
    oracle: FluidPolicy | None = None,
) -> FluidTrajectory:
    """Projected explicit Euler with cumulative departures tracked exactly.

    With ``absorb`` the state is pinned at zero once ``|Q|_1 <= tol``, which
    is the fluid behaviour at interior arrival rates. Near the origin the
    optimal policy switches every step and Euler chatters at amplitude
    ``O(dt)``, so the default ``tol`` is one step of maximal movement,
    ``dt (|lambda|_1 + B)``.
    """
    lam = np.asarray(lam, dtype=float)
    Q = np.asarray(q0, dtype=float).copy()
    if Q.shape != (model.n_classes,) or lam.shape != Q.shape:
        raise ValueError("lambda and q0 must have one entry per class")
    if np.any(Q < 0):
        raise ValueError("q0 must be nonnegative")
    dt = default_dt(lam) if dt is None else float(dt)
    if dt <= 0:
        raise ValueError("dt must be positive")
    if tol is None:
        tol = dt * (float(lam.sum()) + model.schedule_bound)
    oracle = oracle or FluidPolicy(model)
    n = int(math.ceil(t_max / dt))
    D = np.zeros_like(Q)
    ts, Qs, Ds, ids = [0.0], [Q.copy()], [D.copy()], []
    empty = 0.0 if Q.sum() <= tol else None
    pinned = absorb and empty is not None
    for i in range(n):
        if pinned:
            k = ids[-1] if ids else oracle(Q)
            step = np.zeros_like(Q)
        else:
            deriv, k = fluid_rhs(model, lam, Q, oracle)
            step = np.maximum(Q + dt * deriv, 0.0) - Q
        ids.append(k)
        D = D + lam * dt - step
        Q = Q + step
        t = (i + 1) * dt
        if empty is None and Q.sum() <= tol:
            empty = t
            pinned = absorb
        if pinned:
            Q = np.zeros_like(Q)
            D = Qs[0] + lam * t
        ts.append(t)
        Qs.append(Q.copy())
        Ds.append(D.copy())
    ids.append(ids[-1] if ids else oracle(Q))
    return FluidTrajectory(
        t=np.array(ts),
        Q=np.array(Qs),
        D=np.array(Ds),
        policy_id=np.array(ids),
        lam=lam,
        dt=dt,
        empty_time=empty,
        policies=[p.policy for p in oracle.policies],
    )


def empty_time_bound(q0: Sequence[float], eps: float) -> float:
    """``2 sqrt(R) sqrt(L(q0)) / eps`` with ``L = |q0|^2 / 2``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    q0 = np.asarray(q0, dtype=float)
    return 2.0 * math.sqrt(len(q0)) * math.sqrt(0.5 * float(q0 @ q0)) / eps


@dataclass
class DriftCheck:
    slack: float  # worst dL/dt + eps sqrt(2L) over checked steps
    index: int
    checked: int

    def passes(self, tol: float) -> bool:
        return self.slack <= tol


def check_drift_inequality(traj: FluidTrajectory, eps: float, l_tol: float = 1e-12) -> DriftCheck:
    """Finite-difference check of ``dL/dt <= -eps sqrt(2L)`` at steps with ``L > l_tol``."""
    L = traj.lyapunov()
    dLdt = np.diff(L) / np.diff(traj.t)
    slack = dLdt + eps * np.sqrt(2.0 * L[:-1])
    live = np.flatnonzero(L[:-1] > l_tol)
    if len(live) == 0:
        return DriftCheck(0.0, -1, 0)
    j = live[int(np.argmax(slack[live]))]
    return DriftCheck(float(slack[j]), int(j), len(live))
