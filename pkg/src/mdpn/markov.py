"""Stationary analysis of the server chain induced by a request-agnostic policy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from mdpn.model import MdpnModel

EDGE_TOL = 1e-15
POLICY_ROW_TOL = 1e-12


class ReducibleChain(ValueError):
    """The chain has more than one closed communicating class."""

    def __init__(self, classes: Sequence[np.ndarray]):
        super().__init__(f"chain has {len(classes)} closed classes: {[c.tolist() for c in classes]}")
        self.classes = list(classes)


class NonConvergence(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class AgnosticPolicy:
    """Randomized map from server state to actions, stored as a dense (Z, A) array."""

    probs: np.ndarray

    @classmethod
    def deterministic(cls, model: MdpnModel, actions: Sequence[int]) -> "AgnosticPolicy":
        probs = np.zeros((model.n_states, model.n_actions))
        probs[np.arange(model.n_states), np.asarray(actions, dtype=int)] = 1.0
        policy = cls(probs)
        policy.check(model)
        return policy

    @classmethod
    def uniform(cls, model: MdpnModel) -> "AgnosticPolicy":
        mask = model.mask.astype(float)
        return cls(mask / mask.sum(axis=1, keepdims=True))

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0.0) | (self.probs == 1.0)))

    @property
    def actions(self) -> np.ndarray:
        """Most likely action per state (lowest id on ties)."""
        return np.argmax(self.probs, axis=1)

    def check(self, model: MdpnModel) -> None:
        p = self.probs
        if p.shape != (model.n_states, model.n_actions):
            raise ValueError(f"policy shape {p.shape} does not match model {(model.n_states, model.n_actions)}")
        if np.any(p < 0):
            raise ValueError("policy has negative probabilities")
        if np.any(p[~model.mask] > 0):
            z, a = np.argwhere((p > 0) & ~model.mask)[0]
            raise ValueError(f"policy puts mass on infeasible action {a} in state {z}")
        bad = np.abs(p.sum(axis=1) - 1.0) > POLICY_ROW_TOL
        if np.any(bad):
            raise ValueError(f"policy rows {np.flatnonzero(bad).tolist()} do not sum to 1")

    def __eq__(self, other: object) -> bool:
        return isinstance(other, AgnosticPolicy) and np.array_equal(self.probs, other.probs)

    def __hash__(self) -> int:
        return hash(self.probs.tobytes())


@dataclass(frozen=True)
class UnichainReport:
    is_unichain: bool
    classes: list[np.ndarray]

    def __bool__(self) -> bool:
        return self.is_unichain


def induced_chain(model: MdpnModel, policy: AgnosticPolicy) -> np.ndarray:
    """Row-stochastic P[z, z'] = sum_a pi(a|z) P(z'|z, a)."""
    return np.einsum("za,zay->zy", policy.probs, model.transition)


def closed_classes(P: np.ndarray, edge_tol: float = EDGE_TOL) -> list[np.ndarray]:
    """Closed communicating classes of the positive-probability graph of ``P``."""
    adj = csr_matrix(P > edge_tol)
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    leaves = np.ones(n_comp, dtype=bool)
    rows, cols = adj.nonzero()
    cross = labels[rows] != labels[cols]
    leaves[labels[rows[cross]]] = False
    return [np.flatnonzero(labels == c) for c in range(n_comp) if leaves[c]]


def stationary_distribution(P: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Unique stationary law of a unichain ``P`` by a direct linear solve.

    One balance equation is replaced by the normalization row; LAPACK's LU
    with partial pivoting does the elimination.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    classes = closed_classes(P)
    if len(classes) != 1:
        raise ReducibleChain(classes)
    A = P.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        mu = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise NonConvergence(f"singular balance system: {exc}") from exc
    mu[np.abs(mu) < 1e-15] = 0.0
    if np.any(mu < -1e-12):
        raise NonConvergence(f"stationary solve produced negative mass {mu.min():.3g}")
    mu = np.clip(mu, 0.0, None)
    mu /= mu.sum()
    resid = np.abs(mu @ P - mu).sum()
    if resid > tol:
        raise NonConvergence(f"balance residual {resid:.3g} exceeds {tol:.3g}")
    return mu


def is_unichain_policy(model: MdpnModel, policy: AgnosticPolicy) -> UnichainReport:
    classes = closed_classes(induced_chain(model, policy))
    return UnichainReport(len(classes) == 1, classes)


def total_variation(mu1: Sequence[float], mu2: Sequence[float]) -> float:
    a = np.asarray(mu1, dtype=float)
    b = np.asarray(mu2, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return 0.5 * float(np.abs(a - b).sum())


def mixing_profile(P: np.ndarray, mu_target: Sequence[float], t_max: int) -> np.ndarray:
    """Worst-case TV distance to ``mu_target`` from point masses, for t = 0..t_max.

    Periodic chains give profiles that do not vanish; that is reported as is.
    """
    P = np.asarray(P, dtype=float)
    mu = np.asarray(mu_target, dtype=float)
    D = np.eye(P.shape[0])
    out = np.empty(t_max + 1)
    for t in range(t_max + 1):
        out[t] = 0.5 * np.abs(D - mu).sum(axis=1).max()
        D = D @ P
    return out
