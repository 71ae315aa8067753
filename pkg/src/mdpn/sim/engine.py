"""Slot-level simulation of an MDPN under a controller.

Order of events in a slot: observe ``z``, choose an action, sample a kernel
branch ``(z', sigma)``, serve ``min(Q, sigma)``, then add arrivals. The branch
is sampled whether or not requests are queued.
"""

from __future__ import annotations

import json
from array import array
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from mdpn.model import InfeasibleAction, MdpnModel
from mdpn.sim.controllers import Controller, Epoch
from mdpn.sim.rng import SlotStreams

CHUNK = 16384


@dataclass(frozen=True)
class SystemState:
    t: int
    z: int
    Q: tuple[int, ...]

    def __post_init__(self):
        if any(q < 0 for q in self.Q):
            raise ValueError("queue lengths must be nonnegative")


@dataclass(frozen=True)
class SlotRecord:
    t: int
    z: int
    action: int
    branch: int
    sigma: tuple[int, ...]
    arrivals: tuple[int, ...]
    departures: tuple[int, ...]
    Q: tuple[int, ...]  # at slot start


def _arrival_cdfs(model: MdpnModel) -> list[np.ndarray]:
    return [np.cumsum(pmf) for pmf in model.arrival_pmfs]


def _draw_arrivals(cdfs: list[np.ndarray], U: np.ndarray) -> np.ndarray:
    """Inverse-CDF arrivals; ``U`` has shape (n, R)."""
    out = np.empty(U.shape, dtype=np.int64)
    for r, cdf in enumerate(cdfs):
        out[:, r] = np.minimum(np.searchsorted(cdf, U[:, r], side="right"), len(cdf) - 1)
    return out


def _pick(cum: list[float], u: float) -> int:
    if len(cum) == 1:
        return 0
    k = bisect_right(cum, u)
    return k if k < len(cum) else len(cum) - 1


def step(model: MdpnModel, state: SystemState, action: int, rng: SlotStreams) -> tuple[SystemState, SlotRecord]:
    if not model.is_feasible(state.z, action):
        raise InfeasibleAction(state.z, action)
    cum, znext, sigmas = model.sampling_tables[state.z][action]
    k = _pick(cum, rng.kernel_uniform())
    sigma = sigmas[k]
    arrivals = tuple(int(x) for x in _draw_arrivals(_arrival_cdfs(model), rng.arrival_uniforms(model.n_classes)[None])[0])
    dep = tuple(min(q, s) for q, s in zip(state.Q, sigma))
    Q = tuple(q - d + a for q, d, a in zip(state.Q, dep, arrivals))
    rec = SlotRecord(state.t, state.z, action, k, tuple(sigma), arrivals, dep, state.Q)
    return SystemState(state.t + 1, znext[k], Q), rec


@dataclass
class Trace:
    z: np.ndarray  # (H,)
    action: np.ndarray  # (H,)
    branch: np.ndarray  # (H,)
    sigma: np.ndarray  # (H, R)
    arrivals: np.ndarray  # (H, R)
    Q: np.ndarray  # (H+1, R); row t is the queue at the start of slot t
    z_final: int
    epochs: list[Epoch] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return len(self.z)

    @property
    def departures(self) -> np.ndarray:
        return np.minimum(self.Q[:-1], self.sigma)

    @property
    def total(self) -> np.ndarray:
        return self.Q.sum(axis=1)

    @property
    def epoch_id(self) -> np.ndarray:
        ids = np.full(self.horizon, -1, dtype=np.int64)
        for ep in self.epochs:
            ids[ep.start:ep.start + ep.length] = ep.index
        return ids

    def conservation_residual(self) -> int:
        """Largest |Q(t+1) - Q(t) - A(t) + D(t)| over all slots and classes."""
        gap = self.Q[1:] - self.Q[:-1] - self.arrivals + self.departures
        return int(np.abs(gap).max()) if gap.size else 0

    def columns(self) -> list[str]:
        R = self.Q.shape[1]
        cols = ["t", "z", "action"]
        for name in ("sigma", "arrivals", "departures", "Q"):
            cols += [f"{name}_{r + 1}" for r in range(R)]
        return cols + ["epoch_id"]

    def table(self) -> np.ndarray:
        H = self.horizon
        return np.column_stack(
            [np.arange(H), self.z, self.action, self.sigma, self.arrivals, self.departures, self.Q[:-1], self.epoch_id]
        ).astype(np.int64)

    def write_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            fh.write(",".join(self.columns()) + "\n")
            np.savetxt(fh, self.table(), fmt="%d", delimiter=",")

    def write(self, out_dir, stem: str = "trace") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{stem}.csv"
        meta_path = out / f"{stem}.json"
        self.write_csv(csv_path)
        meta = dict(self.meta)
        meta["epochs"] = [
            {"index": e.index, "start": e.start, "length": e.length, "q": list(e.q), "actions": list(e.actions)}
            for e in self.epochs
        ]
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return csv_path, meta_path


def _version() -> str:
    from mdpn import __version__

    return __version__


def run(
    model: MdpnModel,
    controller: Controller,
    horizon: int,
    seed: int,
    q0: Sequence[int] | None = None,
    z0: int = 0,
) -> Trace:
    """Simulate ``horizon`` slots; a deterministic function of its arguments."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    R = model.n_classes
    Q = [0] * R if q0 is None else [int(x) for x in q0]
    if len(Q) != R or min(Q) < 0:
        raise ValueError(f"q0 must be {R} nonnegative integers")
    if not 0 <= z0 < model.n_states:
        raise ValueError(f"z0 out of range: {z0}")

    streams = SlotStreams(seed)
    controller.reset(model)
    tables = model.sampling_tables
    cdfs = _arrival_cdfs(model)
    mask = model.mask.tolist()
    act = controller.act

    z_log = array("q")
    a_log = array("q")
    k_log = array("q")
    q_log = array("q", Q)
    arrivals_all = np.empty((horizon, R), dtype=np.int64)
    z = z0
    for start in range(0, horizon, CHUNK):
        n = min(CHUNK, horizon - start)
        uk = streams.kernel.random(n).tolist()
        up = streams.policy.random(n).tolist()
        arr = _draw_arrivals(cdfs, streams.arrivals.random((n, R)))
        arrivals_all[start:start + n] = arr
        arr_rows = arr.tolist()
        for i in range(n):
            t = start + i
            a = act(t, z, Q, up[i])
            if not mask[z][a]:
                raise InfeasibleAction(z, a)
            cum, znext, sigmas = tables[z][a]
            k = _pick(cum, uk[i])
            sig = sigmas[k]
            ar = arr_rows[i]
            for r in range(R):
                left = Q[r] - sig[r]
                Q[r] = (left if left > 0 else 0) + ar[r]
            z_log.append(z)
            a_log.append(a)
            k_log.append(k)
            q_log.extend(Q)
            z = znext[k]

    z_arr = np.frombuffer(z_log, dtype=np.int64).copy()
    a_arr = np.frombuffer(a_log, dtype=np.int64).copy()
    k_arr = np.frombuffer(k_log, dtype=np.int64).copy()
    sigma = _sigma_lookup(model, z_arr, a_arr, k_arr)
    meta = {
        "seed": int(seed),
        "model_sha256": model.digest,
        "controller": controller.config(),
        "horizon": int(horizon),
        "q0": [int(x) for x in (q0 if q0 is not None else [0] * R)],
        "z0": int(z0),
        "version": _version(),
    }
    return Trace(
        z=z_arr,
        action=a_arr,
        branch=k_arr,
        sigma=sigma,
        arrivals=arrivals_all,
        Q=np.frombuffer(q_log, dtype=np.int64).reshape(horizon + 1, R).copy(),
        z_final=int(z),
        epochs=controller.epochs,
        meta=meta,
    )


def _sigma_lookup(model: MdpnModel, z: np.ndarray, a: np.ndarray, k: np.ndarray) -> np.ndarray:
    kmax = max(len(b) for b in model.kernel.values())
    table = np.zeros((model.n_states, model.n_actions, kmax, model.n_classes), dtype=np.int64)
    for (zz, aa), branches in model.kernel.items():
        for j, b in enumerate(branches):
            table[zz, aa, j] = b.sigma
    return table[z, a, k]
