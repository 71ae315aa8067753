"""Scheduling controllers: fixed agnostic policies, MaxWeight and WARP.

A controller maps ``(t, z, Q, u)`` to a feasible action, where ``u`` is a
uniform from the policy stream (ignored by deterministic rules). ``reset``
is called at the start of every run and clears run-local state.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from functools import reduce
from typing import Callable, Sequence

import numpy as np

from mdpn.markov import AgnosticPolicy
from mdpn.model import MdpnModel
from mdpn.solver import GainBias, relative_value_iteration


class Controller:
    name = "controller"

    def reset(self, model: MdpnModel) -> None:
        self.model = model

    def act(self, t: int, z: int, Q: Sequence[int], u: float) -> int:
        raise NotImplementedError

    def config(self) -> dict:
        return {"controller": self.name}

    @property
    def epochs(self) -> list:
        return []


class FixedAgnostic(Controller):
    name = "fixed"

    def __init__(self, policy: AgnosticPolicy, label: str = ""):
        self.policy = policy
        self.label = label

    def reset(self, model: MdpnModel) -> None:
        super().reset(model)
        self.policy.check(model)
        self._det = self.policy.is_deterministic
        self._actions = self.policy.actions.tolist()
        self._tables = []
        for z in range(model.n_states):
            acts = np.flatnonzero(self.policy.probs[z] > 0)
            cum = np.cumsum(self.policy.probs[z, acts]).tolist()
            self._tables.append((cum, acts.tolist()))

    def act(self, t, z, Q, u):
        if self._det:
            return self._actions[z]
        cum, acts = self._tables[z]
        k = bisect_right(cum, u)
        return acts[min(k, len(acts) - 1)]

    def config(self) -> dict:
        return {"controller": self.name, "label": self.label, "policy": self.policy.probs.tolist()}


class MaxWeight(Controller):
    """Myopic rule: maximize sum_r Q_r sigma_bar_r(a, z), lowest id on ties."""

    name = "maxweight"

    def reset(self, model: MdpnModel) -> None:
        super().reset(model)
        S = model.mean_sigma
        self._rows = [[(a, tuple(S[z, a].tolist())) for a in acts] for z, acts in enumerate(model.feasible)]

    def act(self, t, z, Q, u):
        rows = self._rows[z]
        best_a, best = rows[0][0], -1.0
        tie = 0.0
        for a, sb in rows:
            v = 0.0
            for qr, s in zip(Q, sb):
                v += qr * s
            if v > best + tie:
                best_a, best = a, v
                tie = 1e-12 * max(1.0, v)
        return best_a


def default_epoch_length(Q: Sequence[int]) -> int:
    """ceil(log(2 + |Q|_1)^2): nondecreasing in Q and of order (log |Q|)^2."""
    return max(1, math.ceil(math.log(2 + sum(Q)) ** 2))


@dataclass(frozen=True)
class Epoch:
    index: int
    start: int
    length: int
    q: tuple[int, ...]
    actions: tuple[int, ...]
    gain: float


def direction_key(Q: Sequence[int]) -> tuple[int, ...]:
    g = reduce(math.gcd, Q, 0)
    if g == 0:
        return tuple(Q)
    return tuple(q // g for q in Q)


class Warp(Controller):
    """Weighted average reward policy.

    At each epoch start the average-reward MDP is solved with weights equal
    to the current queue vector and its optimal agnostic policy is applied
    for ``epoch_fn(Q)`` slots. Solutions are memoized on the queue direction,
    which is exact because the solver normalizes the weights.
    """

    name = "warp"

    def __init__(
        self,
        epoch_fn: Callable[[Sequence[int]], int] = default_epoch_length,
        tol: float = 1e-9,
        damping: float = 0.9,
        check_unichain: bool = True,
    ):
        self.epoch_fn = epoch_fn
        self.tol = tol
        self.damping = damping
        self.check_unichain = check_unichain
        self._cache: dict[tuple[int, ...], GainBias] = {}
        self._cache_model: str | None = None

    def reset(self, model: MdpnModel) -> None:
        super().reset(model)
        if self._cache_model != model.digest:
            self._cache = {}
            self._cache_model = model.digest
        self._epochs: list[Epoch] = []
        self._end = 0
        self._actions: list[int] = []

    def solve(self, Q: Sequence[int]) -> GainBias:
        key = direction_key(Q)
        hit = self._cache.get(key)
        if hit is None:
            hit = relative_value_iteration(
                self.model, key, tol=self.tol, damping=self.damping, check_unichain=self.check_unichain
            )
            self._cache[key] = hit
        return hit

    def act(self, t, z, Q, u):
        if t >= self._end:
            q = tuple(Q)
            try:
                sol = self.solve(q)
            except Exception as exc:
                raise RuntimeError(f"WARP epoch {len(self._epochs)} solve failed at t={t}: {exc}") from exc
            length = int(self.epoch_fn(q))
            if length < 1:
                raise ValueError(f"epoch length must be >= 1, got {length}")
            self._actions = sol.actions.tolist()
            self._epochs.append(Epoch(len(self._epochs), t, length, q, tuple(self._actions), sol.gain))
            self._end = t + length
        return self._actions[z]

    @property
    def epochs(self) -> list[Epoch]:
        return list(self._epochs)

    def config(self) -> dict:
        name = getattr(self.epoch_fn, "__name__", repr(self.epoch_fn))
        return {"controller": self.name, "epoch_fn": name, "tol": self.tol, "damping": self.damping}
