"""MDPN data model: server states, actions, joint kernel, arrivals, schedule bound.

A model is immutable once built. Dense derived arrays (marginal transition
tensor, mean schedules, sampling tables) are computed lazily and cached.
"""

from __future__ import annotations

import hashlib
import json
from bisect import bisect_right
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import jsonschema
import numpy as np

ROW_SUM_TOL = 1e-12


class ModelError(ValueError):
    """Raised when a model document cannot be parsed, fails the schema, or is invalid."""

    def __init__(self, message: str, violations: Sequence["Violation"] = ()):
        super().__init__(message)
        self.violations = list(violations)


class InfeasibleAction(ValueError):
    """An action was used in a server state where it is not feasible."""

    def __init__(self, z: int, a: int):
        super().__init__(f"action {a} is not feasible in server state {z}")
        self.z = z
        self.a = a


@dataclass(frozen=True)
class Branch:
    z_next: int
    sigma: tuple[int, ...]
    p: float


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)
    warnings: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        lines = [f"error   {v}" for v in self.violations]
        lines += [f"warning {w}" for w in self.warnings]
        return "\n".join(lines) if lines else "valid"


@dataclass(frozen=True, eq=False)
class MdpnModel:
    """Full MDPN description.

    ``kernel`` maps each feasible ``(z, a)`` pair to its branch list; actions
    are indexed globally and ``feasible[z]`` lists the ids allowed in ``z``.
    ``arrival_pmfs[r][k]`` is the probability of a batch of ``k`` class-``r``
    arrivals in one slot.
    """

    state_labels: tuple[str, ...]
    action_labels: tuple[str, ...]
    feasible: tuple[tuple[int, ...], ...]
    kernel: Mapping[tuple[int, int], tuple[Branch, ...]]
    request_labels: tuple[str, ...]
    arrival_pmfs: tuple[tuple[float, ...], ...]
    schedule_bound: int

    @property
    def n_states(self) -> int:
        return len(self.state_labels)

    @property
    def n_actions(self) -> int:
        return len(self.action_labels)

    @property
    def n_classes(self) -> int:
        return len(self.request_labels)

    def state_id(self, label: str) -> int:
        return self.state_labels.index(label)

    def action_id(self, label: str) -> int:
        return self.action_labels.index(label)

    def is_feasible(self, z: int, a: int) -> bool:
        return 0 <= z < self.n_states and a in self.feasible[z]

    def branches(self, z: int, a: int) -> tuple[Branch, ...]:
        if not self.is_feasible(z, a):
            raise InfeasibleAction(z, a)
        return self.kernel[(z, a)]

    @cached_property
    def mask(self) -> np.ndarray:
        """Boolean (Z, A) feasibility mask."""
        m = np.zeros((self.n_states, self.n_actions), dtype=bool)
        for z, acts in enumerate(self.feasible):
            m[z, list(acts)] = True
        return m

    @cached_property
    def transition(self) -> np.ndarray:
        """Marginal kernel P[z, a, z'] (zero rows for infeasible pairs)."""
        P = np.zeros((self.n_states, self.n_actions, self.n_states))
        for (z, a), branches in self.kernel.items():
            for b in branches:
                P[z, a, b.z_next] += b.p
        return P

    @cached_property
    def mean_sigma(self) -> np.ndarray:
        """Mean schedule tensor S[z, a, r]."""
        S = np.zeros((self.n_states, self.n_actions, self.n_classes))
        for (z, a), branches in self.kernel.items():
            for b in branches:
                S[z, a] += b.p * np.asarray(b.sigma, dtype=float)
        return S

    @cached_property
    def arrival_means(self) -> np.ndarray:
        return np.array([sum(k * p for k, p in enumerate(pmf)) for pmf in self.arrival_pmfs])

    @cached_property
    def sampling_tables(self) -> list[list[tuple[list[float], list[int], list[tuple[int, ...]]] | None]]:
        """Per (z, a): cumulative branch probabilities, next states, schedules."""
        tables: list[list] = [[None] * self.n_actions for _ in range(self.n_states)]
        for (z, a), branches in self.kernel.items():
            cum, acc = [], 0.0
            for b in branches:
                acc += b.p
                cum.append(acc)
            cum[-1] = max(cum[-1], 1.0)
            tables[z][a] = (cum, [b.z_next for b in branches], [tuple(b.sigma) for b in branches])
        return tables

    def sample_branch(self, z: int, a: int, u: float) -> tuple[int, int, tuple[int, ...]]:
        """Branch index, next state and schedule selected by the uniform ``u``."""
        cum, zn, sg = self.sampling_tables[z][a]
        k = bisect_right(cum, u)
        if k >= len(cum):
            k = len(cum) - 1
        return k, zn[k], sg[k]

    @cached_property
    def digest(self) -> str:
        return hashlib.sha256(save_model(self).encode("utf-8")).hexdigest()


def mean_schedule(model: MdpnModel, z: int, a: int) -> np.ndarray:
    """Average schedule vector under action ``a`` in state ``z``."""
    if not model.is_feasible(z, a):
        raise InfeasibleAction(z, a)
    return model.mean_sigma[z, a].copy()


def validate(model: MdpnModel) -> ValidationReport:
    report = ValidationReport()
    err = report.violations.append
    nz, na, nr = model.n_states, model.n_actions, model.n_classes
    B = model.schedule_bound

    if nr < 1:
        err(Violation("requests.count", "at least one request class is required"))
    if len(set(model.request_labels)) != nr:
        err(Violation("requests.labels", "labels must be unique"))
    if nz < 1:
        err(Violation("server_states", "at least one server state is required"))
    if not isinstance(B, (int, np.integer)) or B < 0:
        err(Violation("schedule_bound", f"must be a nonnegative integer, got {B!r}"))
    if len(model.feasible) != nz:
        err(Violation("feasible", f"expected {nz} entries, got {len(model.feasible)}"))

    for z, acts in enumerate(model.feasible):
        if not acts:
            err(Violation(f"feasible[{z}]", "no feasible action"))
        for a in acts:
            if not 0 <= a < na:
                err(Violation(f"feasible[{z}]", f"unknown action id {a}"))
            elif (z, a) not in model.kernel:
                err(Violation(f"kernel[z={z},a={a}]", "missing kernel entry for feasible pair"))

    feasible_pairs = {(z, a) for z, acts in enumerate(model.feasible) for a in acts}
    for (z, a), branches in sorted(model.kernel.items()):
        path = f"kernel[z={z},a={a}]"
        if (z, a) not in feasible_pairs:
            err(Violation(path, "kernel entry for infeasible pair"))
        if not branches:
            err(Violation(path, "empty branch list"))
            continue
        total = 0.0
        for i, b in enumerate(branches):
            bpath = f"{path}.branches[{i}]"
            if not b.p >= 0:
                err(Violation(f"{bpath}.p", f"negative probability {b.p}"))
            total += b.p
            if not 0 <= b.z_next < nz:
                err(Violation(f"{bpath}.z_next", f"unknown state id {b.z_next}"))
            if len(b.sigma) != nr:
                err(Violation(f"{bpath}.sigma", f"expected length {nr}, got {len(b.sigma)}"))
            elif any(s < 0 or s > B for s in b.sigma):
                err(Violation(f"{bpath}.sigma", f"schedule {list(b.sigma)} outside [0, {B}]"))
        if abs(total - 1.0) > ROW_SUM_TOL:
            err(Violation(path, f"kernel row sums to {total:.12g}"))

    if len(model.arrival_pmfs) != nr:
        err(Violation("arrivals", f"expected {nr} laws, got {len(model.arrival_pmfs)}"))
    for r, pmf in enumerate(model.arrival_pmfs):
        if not pmf:
            err(Violation(f"arrivals[{r}].pmf", "empty pmf"))
            continue
        if any(not p >= 0 for p in pmf):
            err(Violation(f"arrivals[{r}].pmf", "negative probability"))
        s = sum(pmf)
        if abs(s - 1.0) > ROW_SUM_TOL:
            err(Violation(f"arrivals[{r}].pmf", f"pmf sums to {s:.12g}"))

    if report.ok:
        for z, acts in enumerate(model.feasible):
            if not any(all(s == 0 for b in model.kernel[(z, a)] for s in b.sigma) for a in acts):
                report.warnings.append(Violation(f"feasible[{z}]", "no zero-schedule action"))
    return report


def build_model(
    state_labels: Sequence[str],
    action_labels: Sequence[str],
    feasible: Sequence[Sequence[int]],
    kernel: Mapping[tuple[int, int], Sequence[Branch | tuple]],
    request_labels: Sequence[str],
    arrival_pmfs: Sequence[Sequence[float]],
    schedule_bound: int,
    check: bool = True,
) -> MdpnModel:
    """Assemble a model from plain Python values; raises ModelError when ``check`` fails."""
    kern = {}
    for (z, a), branches in kernel.items():
        kern[(int(z), int(a))] = tuple(
            b if isinstance(b, Branch) else Branch(int(b[0]), tuple(int(s) for s in b[1]), float(b[2]))
            for b in branches
        )
    model = MdpnModel(
        state_labels=tuple(state_labels),
        action_labels=tuple(action_labels),
        feasible=tuple(tuple(sorted(int(a) for a in acts)) for acts in feasible),
        kernel=kern,
        request_labels=tuple(request_labels),
        arrival_pmfs=tuple(tuple(float(p) for p in pmf) for pmf in arrival_pmfs),
        schedule_bound=int(schedule_bound),
    )
    if check:
        report = validate(model)
        if not report.ok:
            raise ModelError("invalid model:\n" + str(report), report.violations)
    return model


def bernoulli_pmf(p: float) -> tuple[float, float]:
    return (1.0 - p, p)


# -- serialization -----------------------------------------------------------

MODEL_SCHEMA = {
    "type": "object",
    "required": ["server_states", "actions", "feasible", "kernel", "requests", "arrivals", "schedule_bound"],
    "additionalProperties": False,
    "properties": {
        "server_states": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "label"],
                "additionalProperties": False,
                "properties": {"id": {"type": "integer", "minimum": 0}, "label": {"type": "string"}},
            },
        },
        "actions": {"type": "array", "minItems": 1, "items": {"type": "string"}},
        "feasible": {
            "type": "object",
            "patternProperties": {
                "^[0-9]+$": {"type": "array", "items": {"type": "integer", "minimum": 0}},
            },
            "additionalProperties": False,
        },
        "kernel": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["z", "a", "branches"],
                "additionalProperties": False,
                "properties": {
                    "z": {"type": "integer", "minimum": 0},
                    "a": {"type": "integer", "minimum": 0},
                    "branches": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "required": ["z_next", "sigma", "p"],
                            "additionalProperties": False,
                            "properties": {
                                "z_next": {"type": "integer", "minimum": 0},
                                "sigma": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                                "p": {"type": "number", "minimum": 0, "maximum": 1},
                            },
                        },
                    },
                },
            },
        },
        "requests": {
            "type": "object",
            "required": ["count", "labels"],
            "additionalProperties": False,
            "properties": {
                "count": {"type": "integer", "minimum": 1},
                "labels": {"type": "array", "items": {"type": "string"}},
            },
        },
        "arrivals": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["pmf"],
                "additionalProperties": False,
                "properties": {"pmf": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0}}},
            },
        },
        "schedule_bound": {"type": "integer", "minimum": 0},
    },
}


def model_to_document(model: MdpnModel) -> dict:
    """Canonical JSON-ready dict (ids ascending, branches sorted)."""
    kernel = []
    for (z, a) in sorted(model.kernel):
        branches = sorted(model.kernel[(z, a)], key=lambda b: (b.z_next, b.sigma, b.p))
        kernel.append({
            "z": z,
            "a": a,
            "branches": [{"z_next": b.z_next, "sigma": list(b.sigma), "p": float(b.p)} for b in branches],
        })
    return {
        "server_states": [{"id": i, "label": lab} for i, lab in enumerate(model.state_labels)],
        "actions": list(model.action_labels),
        "feasible": {str(z): list(acts) for z, acts in enumerate(model.feasible)},
        "kernel": kernel,
        "requests": {"count": model.n_classes, "labels": list(model.request_labels)},
        "arrivals": [{"pmf": [float(p) for p in pmf]} for pmf in model.arrival_pmfs],
        "schedule_bound": model.schedule_bound,
    }


def save_model(model: MdpnModel) -> str:
    return json.dumps(model_to_document(model), sort_keys=True, indent=2) + "\n"


def canonical(text: str) -> str:
    """Canonical serialization of a model document."""
    return save_model(load_model(text))


def _schema_path(error: jsonschema.ValidationError) -> str:
    return "/".join(str(p) for p in error.absolute_path) or "<root>"


def load_model(text: str) -> MdpnModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc

    validator = jsonschema.Draft202012Validator(MODEL_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        violations = [Violation(_schema_path(e), e.message) for e in errors]
        raise ModelError("schema violation:\n" + "\n".join(map(str, violations)), violations)

    states = sorted(doc["server_states"], key=lambda s: s["id"])
    ids = [s["id"] for s in states]
    if ids != list(range(len(ids))):
        v = Violation("server_states", f"ids must be 0..{len(ids) - 1}, got {ids}")
        raise ModelError(f"schema violation:\n{v}", [v])
    nz = len(states)
    if doc["requests"]["count"] != len(doc["requests"]["labels"]):
        v = Violation("requests", "count does not match number of labels")
        raise ModelError(f"schema violation:\n{v}", [v])

    feasible: list[list[int]] = [[] for _ in range(nz)]
    for key, acts in doc["feasible"].items():
        z = int(key)
        if z >= nz:
            v = Violation(f"feasible/{key}", "unknown server state")
            raise ModelError(f"schema violation:\n{v}", [v])
        feasible[z] = list(acts)

    kernel: dict[tuple[int, int], list[Branch]] = {}
    for i, entry in enumerate(doc["kernel"]):
        key = (entry["z"], entry["a"])
        if key in kernel:
            v = Violation(f"kernel/{i}", f"duplicate entry for z={key[0]}, a={key[1]}")
            raise ModelError(f"schema violation:\n{v}", [v])
        kernel[key] = [Branch(b["z_next"], tuple(b["sigma"]), float(b["p"])) for b in entry["branches"]]

    return build_model(
        state_labels=[s["label"] for s in states],
        action_labels=doc["actions"],
        feasible=feasible,
        kernel=kernel,
        request_labels=doc["requests"]["labels"],
        arrival_pmfs=[a["pmf"] for a in doc["arrivals"]],
        schedule_bound=doc["schedule_bound"],
    )
