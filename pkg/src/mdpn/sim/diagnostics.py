"""Finite-trace stability, drift and timescale diagnostics.

Positive recurrence is not decidable from a finite trace; the verdict rules
here are pragmatic thresholds that can be overridden by the caller.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from mdpn.markov import AgnosticPolicy, induced_chain, stationary_distribution, total_variation
from mdpn.model import MdpnModel
from mdpn.sim.engine import Trace, run

MIN_LENGTH = 10**4
N_BLOCKS = 20


class EpochIncomplete(ValueError):
    pass


@dataclass
class Stability:
    slope: float  # per slot
    stderr: float
    max_total: int
    burn_in_max: int
    returns: int
    verdict: str  # growing | bounded | inconclusive

    def as_dict(self) -> dict:
        return {
            "slope": self.slope,
            "stderr": self.stderr,
            "max": self.max_total,
            "burn_in_max": self.burn_in_max,
            "returns": self.returns,
            "verdict": self.verdict,
        }


def _ols_slope(y: np.ndarray) -> float:
    t = np.arange(len(y), dtype=float)
    t -= t.mean()
    return float(t @ (y - y.mean()) / (t @ t))


def slope_with_error(y: np.ndarray, n_blocks: int = N_BLOCKS) -> tuple[float, float]:
    """Least-squares slope and a batch-means standard error.

    The series is cut into ``n_blocks`` contiguous blocks and the spread of
    the per-block slopes gives the error bar. Queue paths are strongly
    autocorrelated, so the i.i.d. regression formula would be far too small.
    """
    y = np.asarray(y, dtype=float)
    slope = _ols_slope(y)
    blocks = np.array_split(y, n_blocks)
    per = np.array([_ols_slope(b) for b in blocks if len(b) >= 2])
    se = float(per.std(ddof=1) / math.sqrt(len(per))) if len(per) > 1 else float("inf")
    return slope, se


def stability_diagnostic(
    series,
    burn_in: float = 0.05,
    threshold: int = 50,
    min_returns: int = 10,
    sigmas: float = 3.0,
    growth_factor: float = 10.0,
) -> Stability:
    """Verdict on a queue-length path (a Trace uses the total ``|Q|_1``).

    growing: slope above ``sigmas`` standard errors and the post-burn-in max
    exceeds ``growth_factor`` times the burn-in max. bounded: slope not
    significantly positive and at least ``min_returns`` slots at or below
    ``threshold`` after burn-in.
    """
    y = series.total if isinstance(series, Trace) else np.asarray(series)
    if len(y) < MIN_LENGTH:
        raise ValueError(f"need at least {MIN_LENGTH} samples, got {len(y)}")
    if not 0 <= burn_in < 1:
        raise ValueError("burn_in must lie in [0, 1)")
    b = max(1, int(burn_in * len(y)))
    head, tail = y[:b], y[b:]
    slope, se = slope_with_error(tail)
    head_max, tail_max = int(head.max()), int(tail.max())
    returns = int(np.count_nonzero(tail <= threshold))
    if slope > sigmas * se and tail_max > growth_factor * max(head_max, 1):
        verdict = "growing"
    elif slope <= sigmas * se and returns >= min_returns:
        verdict = "bounded"
    else:
        verdict = "inconclusive"
    return Stability(slope, se, tail_max, head_max, returns, verdict)


def per_class_stability(trace: Trace, **kw) -> dict[str, Stability]:
    out = {"total": stability_diagnostic(trace.total, **kw)}
    for r in range(trace.Q.shape[1]):
        out[f"Q{r + 1}"] = stability_diagnostic(trace.Q[:, r], **kw)
    return out


def lyapunov_drift(Q: np.ndarray | Trace, window: int) -> np.ndarray:
    """``L(Q((k+1)w)) - L(Q(kw))`` with ``L = sum Q^2 / 2``.

    Computed on ``2L`` in integers, so the float results are exact halves.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    Q = Q.Q if isinstance(Q, Trace) else np.asarray(Q)
    if Q.ndim == 1:
        Q = Q[:, None]
    twoL = (Q[::window].astype(np.int64) ** 2).sum(axis=1)
    return np.diff(twoL) / 2.0


def epoch_policy(model: MdpnModel, epoch) -> AgnosticPolicy:
    return AgnosticPolicy.deterministic(model, np.asarray(epoch.actions))


def timescale_diagnostic(model: MdpnModel, trace: Trace, i: int) -> float:
    """TV between server-state occupancy over the second half of epoch ``i``
    and the stationary law of that epoch's policy."""
    if not trace.epochs:
        raise ValueError("trace has no epochs (not a WARP run)")
    if not 0 <= i < len(trace.epochs):
        raise IndexError(f"epoch {i} out of range")
    ep = trace.epochs[i]
    if ep.start + ep.length > trace.horizon:
        raise EpochIncomplete(f"epoch {i} ends at {ep.start + ep.length} past horizon {trace.horizon}")
    lo = ep.start + ep.length // 2
    tail = trace.z[lo:ep.start + ep.length]
    emp = np.bincount(tail, minlength=model.n_states) / len(tail)
    mu = stationary_distribution(induced_chain(model, epoch_policy(model, ep)))
    return total_variation(emp, mu)


@dataclass
class Replications:
    seeds: list[int]
    per_seed: dict[int, dict]
    errors: dict[int, str]
    aggregate: dict = field(default_factory=dict)


def mean_ci(values: Sequence[float], level: float = 0.95) -> tuple[float, float, float]:
    """Mean with a Student-t confidence interval; degenerate for one value."""
    v = np.sort(np.asarray(values, dtype=float))
    m = float(v.mean())
    if len(v) < 2:
        return m, m, m
    half = float(stats.t.ppf(0.5 + level / 2, len(v) - 1) * v.std(ddof=1) / math.sqrt(len(v)))
    return m, m - half, m + half


def default_metrics(trace: Trace) -> dict:
    return {k: s.as_dict() for k, s in per_class_stability(trace).items()}


def replications(
    model: MdpnModel,
    controller_factory: Callable[[], object],
    horizon: int,
    seeds: Sequence[int],
    metrics: Callable[[Trace], dict] = default_metrics,
    q0=None,
    workers: int = 1,
) -> Replications:
    """Run one independent simulation per seed and aggregate slope statistics.

    ``metrics`` maps a trace to ``{series: {"slope": ..., "verdict": ...}}``.
    Failures are recorded per seed and do not stop the others.
    """
    seeds = [int(s) for s in seeds]
    if len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be distinct")

    def one(seed):
        try:
            return seed, metrics(run(model, controller_factory(), horizon, seed, q0=q0)), None
        except Exception as exc:  # recorded, not raised
            return seed, None, f"{type(exc).__name__}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]

    per_seed = {s: m for s, m, e in results if e is None}
    errors = {s: e for s, m, e in results if e is not None}
    agg = {}
    done = sorted(per_seed)
    if done:
        for key in per_seed[done[0]]:
            slopes = [per_seed[s][key]["slope"] for s in done]
            mean, lo, hi = mean_ci(slopes)
            verdicts = [per_seed[s][key]["verdict"] for s in done]
            agg[key] = {
                "mean_slope": mean,
                "ci_low": lo,
                "ci_high": hi,
                "verdicts": {v: verdicts.count(v) for v in sorted(set(verdicts))},
            }
    return Replications(sorted(seeds), {s: per_seed[s] for s in done}, errors, agg)
