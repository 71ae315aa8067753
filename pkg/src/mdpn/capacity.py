"""Capacity-region membership through state-action occupation measures.

``capacity_margin`` finds the largest uniform slack ``eps`` such that some
stationary occupation measure ``x(z, a)`` serves every class at rate at least
``lambda_r + eps``. Positive slack means the arrival vector is in the interior
of the region, negative means it is outside.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from mdpn import _enumerate
from mdpn._enumerate import TooLarge
from mdpn.markov import AgnosticPolicy, induced_chain, stationary_distribution
from mdpn.model import MdpnModel
from mdpn.simplex import SimplexError, SimplexResult, simplex_solve

BOUNDARY_TOL = 1e-7

__all__ = [
    "BOUNDARY_TOL",
    "CapacityResult",
    "TooLarge",
    "achievable_rate",
    "capacity_margin",
    "check_occupation",
    "classify",
    "hull_oracle",
    "occupation_to_policy",
]


@dataclass
class CapacityResult:
    margin: float
    measure: np.ndarray  # (Z, A) occupation measure
    witness: AgnosticPolicy
    rates: np.ndarray
    lam: np.ndarray
    lp: SimplexResult

    @property
    def classification(self) -> str:
        return classify(self.margin)


def classify(margin: float, tol: float = BOUNDARY_TOL) -> str:
    if margin > tol:
        return "interior"
    if margin < -tol:
        return "outside"
    return "boundary"


def _arrival_vector(model: MdpnModel, lam: Sequence[float]) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (model.n_classes,):
        raise ValueError(f"lambda must have length {model.n_classes}")
    if np.any(lam < 0):
        raise ValueError("lambda must be nonnegative")
    return lam


def capacity_margin(model: MdpnModel, lam: Sequence[float]) -> CapacityResult:
    lam = _arrival_vector(model, lam)
    pairs = [(z, a) for z, acts in enumerate(model.feasible) for a in acts]
    nx, nz, nr = len(pairs), model.n_states, model.n_classes
    zi = np.array([p[0] for p in pairs])
    ai = np.array([p[1] for p in pairs])
    P = model.transition[zi, ai]  # (nx, Z)
    S = model.mean_sigma[zi, ai]  # (nx, R)

    # columns: x (nx) | eps+ | eps- | rate slacks (nr)
    n = nx + 2 + nr
    rows, rhs = [], []
    row = np.zeros(n)
    row[:nx] = 1.0
    rows.append(row)
    rhs.append(1.0)
    # flow balance for z = 1..Z-1; the row for z = 0 is implied by the others
    for z in range(1, nz):
        row = np.zeros(n)
        row[:nx] = (zi == z).astype(float) - P[:, z]
        rows.append(row)
        rhs.append(0.0)
    for r in range(nr):
        row = np.zeros(n)
        row[:nx] = S[:, r]
        row[nx] = -1.0
        row[nx + 1] = 1.0
        row[nx + 2 + r] = -1.0
        rows.append(row)
        rhs.append(lam[r])
    c = np.zeros(n)
    c[nx] = 1.0
    c[nx + 1] = -1.0

    lp = simplex_solve(c, np.array(rows), np.array(rhs))
    if lp.status != "optimal":
        raise SimplexError(f"capacity LP ended {lp.status}", {"basis": lp.basis, "x": lp.x})
    measure = np.zeros((nz, model.n_actions))
    measure[zi, ai] = lp.x[:nx]
    witness = occupation_to_policy(model, measure)
    rates = lp.x[:nx] @ S
    return CapacityResult(float(lp.x[nx] - lp.x[nx + 1]), measure, witness, rates, lam, lp)


def check_occupation(model: MdpnModel, x: np.ndarray) -> None:
    """Raise ValueError unless ``x`` is a normalized, balanced occupation measure."""
    x = np.asarray(x, dtype=float)
    if np.any(x < -1e-12):
        raise ValueError("negative occupation mass")
    if np.any(x[~model.mask] > 1e-12):
        raise ValueError("occupation mass on infeasible pairs")
    if abs(x.sum() - 1.0) > 1e-9:
        raise ValueError(f"occupation mass sums to {x.sum():.12g}")
    inflow = np.einsum("za,zay->y", x, model.transition)
    gap = np.abs(x.sum(axis=1) - inflow).max()
    if gap > 1e-8:
        raise ValueError(f"flow balance violated by {gap:.3g}")


def occupation_to_policy(model: MdpnModel, x: np.ndarray) -> AgnosticPolicy:
    """Condition ``x`` on the state; zero-mass states act uniformly."""
    x = np.where(model.mask, np.clip(np.asarray(x, dtype=float), 0.0, None), 0.0)
    mass = x.sum(axis=1)
    probs = AgnosticPolicy.uniform(model).probs.copy()
    live = mass > 1e-12
    probs[live] = x[live] / mass[live, None]
    return AgnosticPolicy(probs)


def achievable_rate(model: MdpnModel, policy: AgnosticPolicy) -> np.ndarray:
    """Long-run mean schedule per class under a unichain agnostic policy."""
    mu = stationary_distribution(induced_chain(model, policy))
    return np.einsum("z,za,zar->r", mu, policy.probs, model.mean_sigma)


def hull_oracle(model: MdpnModel, lam: Sequence[float], limit: int = 10**5, table=None) -> float:
    """Margin from the convex hull of deterministic-policy rate vectors.

    Independent of ``capacity_margin``: rates come from exhaustive policy
    enumeration and the small hull LP goes to HiGHS rather than the in-repo
    simplex. Pass ``table`` to reuse an enumeration across queries.
    """
    lam = _arrival_vector(model, lam)
    if table is None:
        table = _enumerate.policy_rates(model, limit)
    V = np.unique(np.round(table.rates, 13), axis=0)
    k, nr = V.shape
    # variables: weights w (k) and eps; maximize eps
    c = np.zeros(k + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-V.T, np.ones((nr, 1))])  # lam + eps <= V^T w
    b_ub = -lam
    A_eq = np.zeros((1, k + 1))
    A_eq[0, :k] = 1.0
    bounds = [(0, None)] * k + [(None, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"hull LP failed: {res.message}")
    return float(res.x[-1])
