"""Exhaustive evaluation of deterministic agnostic policies (oracle support).

Used by the brute-force gain oracle and the capacity hull oracle. Deliberately
independent of ``mdpn.markov``: reachability comes from a boolean transitive
closure and stationary laws from a batched solve per recurrent class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mdpn.model import MdpnModel

CHUNK = 4096


class TooLarge(ValueError):
    pass


@dataclass
class PolicyRates:
    """One row per (deterministic policy, closed recurrent class)."""

    policy_index: np.ndarray  # (M,)
    rates: np.ndarray  # (M, R) stationary mean schedules
    multichain: np.ndarray  # (M,) bool
    class_masks: np.ndarray  # (M, Z) bool
    radices: tuple[int, ...]

    def actions(self, model: MdpnModel, k: int) -> np.ndarray:
        return decode(model, np.array([self.policy_index[k]]))[0]


def n_policies(model: MdpnModel) -> int:
    n = 1
    for acts in model.feasible:
        n *= len(acts)
    return n


def decode(model: MdpnModel, idx: np.ndarray) -> np.ndarray:
    """Mixed-radix decode of policy indices into (k, Z) action arrays."""
    out = np.empty((len(idx), model.n_states), dtype=int)
    rem = idx.copy()
    for z, acts in enumerate(model.feasible):
        base = len(acts)
        out[:, z] = np.asarray(acts)[rem % base]
        rem //= base
    return out


def _closure(P: np.ndarray) -> np.ndarray:
    k, n, _ = P.shape
    R = (P > 1e-15) | np.eye(n, dtype=bool)[None]
    steps = max(1, int(np.ceil(np.log2(max(n, 2)))))
    for _ in range(steps):
        Rf = R.astype(float)
        R = np.matmul(Rf, Rf) > 0
    return R


def _stationary_on(P: np.ndarray, members: np.ndarray) -> np.ndarray:
    sub = P[np.ix_(members, members)]
    m = len(members)
    A = sub.T - np.eye(m)
    A[-1, :] = 1.0
    b = np.zeros(m)
    b[-1] = 1.0
    mu = np.zeros(P.shape[0])
    mu[members] = np.linalg.solve(A, b)
    return mu


def policy_rates(model: MdpnModel, limit: int) -> PolicyRates:
    total = n_policies(model)
    if total > limit:
        raise TooLarge(f"{total} deterministic policies exceeds the limit {limit}")
    nz = model.n_states
    zs = np.arange(nz)
    rows_idx, rows_rate, rows_multi, rows_mask = [], [], [], []
    for start in range(0, total, CHUNK):
        idx = np.arange(start, min(total, start + CHUNK))
        acts = decode(model, idx)
        P = model.transition[zs[None, :], acts]  # (k, Z, Z)
        S = model.mean_sigma[zs[None, :], acts]  # (k, Z, R)
        R = _closure(P)
        recurrent = ~np.any(R & ~np.transpose(R, (0, 2, 1)), axis=2)
        pair = recurrent[:, :, None] & recurrent[:, None, :]
        unichain = ~np.any(pair & ~R, axis=(1, 2))

        uni = np.flatnonzero(unichain)
        if len(uni):
            A = np.transpose(P[uni], (0, 2, 1)) - np.eye(nz)[None]
            A[:, -1, :] = 1.0
            b = np.zeros((len(uni), nz))
            b[:, -1] = 1.0
            mu = np.linalg.solve(A, b[..., None])[..., 0]
            rows_idx.append(idx[uni])
            rows_rate.append(np.einsum("kz,kzr->kr", mu, S[uni]))
            rows_multi.append(np.zeros(len(uni), dtype=bool))
            rows_mask.append(recurrent[uni])

        for j in np.flatnonzero(~unichain):
            seen = np.zeros(nz, dtype=bool)
            for i in np.flatnonzero(recurrent[j]):
                if seen[i]:
                    continue
                members = np.flatnonzero(R[j, i] & recurrent[j])
                seen[members] = True
                mu = _stationary_on(P[j], members)
                rows_idx.append(idx[j:j + 1])
                rows_rate.append((mu @ S[j])[None])
                rows_multi.append(np.ones(1, dtype=bool))
                mask = np.zeros((1, nz), dtype=bool)
                mask[0, members] = True
                rows_mask.append(mask)

    return PolicyRates(
        policy_index=np.concatenate(rows_idx),
        rates=np.concatenate(rows_rate),
        multichain=np.concatenate(rows_multi),
        class_masks=np.concatenate(rows_mask),
        radices=tuple(len(a) for a in model.feasible),
    )
