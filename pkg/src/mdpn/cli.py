"""Command-line front end: ``mdpn {validate,solve,capacity,simulate,fluid,reproduce}``.

Exit codes: 0 success or PASS, 1 invalid input or FAIL, 2 usage error.
Numbers are printed with 12 significant digits; CSV output is unrounded.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from mdpn import __version__
from mdpn.model import MdpnModel, ModelError, load_model, save_model, validate

log = logging.getLogger("mdpn")


def fmt(x) -> str:
    if isinstance(x, (list, tuple, np.ndarray)):
        return "(" + ", ".join(fmt(v) for v in x) + ")"
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return str(x)


def _vector(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _param_value(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if "," in text:
        return tuple(float(v) for v in text.split(","))
    try:
        return int(text)
    except ValueError:
        return float(text)


def _params(pairs: list[str]) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise argparse.ArgumentTypeError(f"--param expects k=v, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = _param_value(v.strip())
    return out


class Failure(Exception):
    """Input was understood but is invalid (exit 1)."""


def resolve_model(args) -> MdpnModel:
    from mdpn.examples import BUILDERS

    if args.model and args.builder:
        raise Failure("give either --model or --builder, not both")
    if args.model:
        try:
            return load_model(Path(args.model).read_text())
        except OSError as exc:
            raise Failure(f"cannot read {args.model}: {exc}")
    if args.builder:
        if args.builder not in BUILDERS:
            raise Failure(f"unknown builder {args.builder!r}; choose from {', '.join(sorted(BUILDERS))}")
        try:
            return BUILDERS[args.builder](**_params(args.param))
        except (TypeError, ValueError) as exc:
            raise Failure(f"bad builder parameters: {exc}")
    raise Failure("a model is required: --model PATH or --builder NAME")


class Report:
    def __init__(self, out: str | None):
        self.lines: list[str] = []
        self.out = Path(out) if out else None
        if self.out:
            self.out.mkdir(parents=True, exist_ok=True)

    def __call__(self, line: str = "") -> None:
        print(line)
        self.lines.append(line)

    def close(self) -> None:
        if self.out:
            (self.out / "report.txt").write_text("\n".join(self.lines) + "\n")


# -- commands ------------------------------------------------------------------


def cmd_validate(args, rep: Report) -> int:
    if args.path and not args.model:
        args.model = args.path
    try:
        model = resolve_model(args)
    except ModelError as exc:
        rep(f"INVALID: {exc.args[0].splitlines()[0]}")
        for v in exc.violations:
            rep(f"  {v}")
        return 1
    report = validate(model)
    rep(f"{'VALID' if report.ok else 'INVALID'}: {model.n_states} states, {model.n_actions} actions, "
        f"{model.n_classes} classes, B={model.schedule_bound}")
    for w in report.warnings:
        rep(f"  warning {w}")
    rep(f"sha256 {model.digest}")
    if rep.out:
        (rep.out / "model.json").write_text(save_model(model))
    return 0 if report.ok else 1


def cmd_solve(args, rep: Report) -> int:
    from mdpn.solver import policy_iteration, relative_value_iteration

    model = resolve_model(args)
    q = args.weights if args.weights is not None else [1.0] * model.n_classes
    if len(q) != model.n_classes:
        raise Failure(f"--weights needs {model.n_classes} entries")
    if args.method == "pi":
        sol = policy_iteration(model, q, tol=args.tol)
    else:
        sol = relative_value_iteration(model, q, tol=args.tol)
    rep(f"method {args.method}  weights {fmt(q)}")
    rep(f"gain {fmt(sol.gain)}  residual {fmt(sol.residual)}  iterations {sol.iterations}")
    rep("state,label,action,bias")
    for z in range(model.n_states):
        a = int(sol.actions[z])
        rep(f"{z},{model.state_labels[z]},{model.action_labels[a]},{fmt(sol.bias[z])}")
    if rep.out:
        doc = {
            "model_sha256": model.digest,
            "weights": list(map(float, q)),
            "method": args.method,
            "gain": sol.gain,
            "bias": sol.bias.tolist(),
            "policy": sol.actions.tolist(),
            "version": __version__,
        }
        (rep.out / "solve.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_capacity(args, rep: Report) -> int:
    from mdpn.capacity import capacity_margin

    model = resolve_model(args)
    if args.grid:
        return _capacity_grid(model, args, rep)
    if args.lam is None or len(args.lam) != model.n_classes:
        raise Failure(f"--lambda needs {model.n_classes} entries")
    lam = np.asarray(args.lam) / args.slots_per_unit
    res = capacity_margin(model, lam)
    rep(f"lambda per slot {fmt(lam)}")
    rep(f"margin {fmt(res.margin)}  ({fmt(res.margin * args.slots_per_unit)} per input unit)")
    rep(f"classification {res.classification}")
    rep(f"rates {fmt(res.rates)}")
    rep("witness policy (state: action=prob)")
    for z in range(model.n_states):
        parts = [f"{model.action_labels[a]}={fmt(res.witness.probs[z, a])}" for a in model.feasible[z]
                 if res.witness.probs[z, a] > 0]
        rep(f"  {model.state_labels[z]}: {' '.join(parts)}")
    return 0


def _capacity_grid(model, args, rep: Report) -> int:
    from mdpn.capacity import capacity_margin

    try:
        i, j, lo, hi, n = args.grid.split(":")
        i, j, n = int(i), int(j), int(n)
        lo, hi = float(lo), float(hi)
    except ValueError:
        raise Failure("--grid expects I:J:LO:HI:N")
    base = np.asarray(args.lam if args.lam is not None else [0.0] * model.n_classes, dtype=float)
    vals = np.linspace(lo, hi, n)
    rows = []
    for x in vals:
        for y in vals:
            lam = base.copy()
            lam[i], lam[j] = x, y
            res = capacity_margin(model, lam / args.slots_per_unit)
            rows.append((x, y, res.margin * args.slots_per_unit, res.classification))
    out = rep.out or Path(".")
    path = out / "capacity_grid.csv"
    with path.open("w") as fh:
        fh.write(f"lambda_{i + 1},lambda_{j + 1},margin,classification\n")
        for x, y, m, c in rows:
            fh.write(f"{float(x)!r},{float(y)!r},{float(m)!r},{c}\n")
    rep(f"wrote {len(rows)} grid points to {path}")
    return 0


def _controller(name: str, model: MdpnModel):
    from mdpn.examples import PriorityP0, rotation3_policies
    from mdpn.markov import AgnosticPolicy
    from mdpn.sim import FixedAgnostic, MaxWeight, Warp

    if name == "maxweight":
        return MaxWeight()
    if name == "warp":
        return Warp()
    if name == "p0":
        return PriorityP0()
    if name == "uniform":
        return FixedAgnostic(AgnosticPolicy.uniform(model), "uniform")
    if name.startswith("fixed:"):
        label = name.split(":", 1)[1]
        pols = rotation3_policies(model) if model.n_states == 12 else {}
        if label not in pols:
            raise Failure(f"unknown fixed policy {label!r}; known: {', '.join(sorted(pols)) or 'none'}")
        return FixedAgnostic(pols[label], label)
    raise Failure(f"unknown controller {name!r}")


def cmd_simulate(args, rep: Report) -> int:
    from mdpn.sim import lyapunov_drift, per_class_stability, run, timescale_diagnostic

    model = resolve_model(args)
    seeds = [args.seed + k for k in range(args.seeds)]
    q0 = [int(x) for x in args.q0] if args.q0 is not None else None
    rep(f"controller {args.controller}  horizon {args.horizon}  seeds {seeds}")
    rep("seed,series,slope_per_slot,stderr,max,returns,verdict")
    for seed in seeds:
        ctl = _controller(args.controller, model)
        log.info("seed %d: running %d slots", seed, args.horizon)
        tr = run(model, ctl, args.horizon, seed, q0=q0)
        if rep.out:
            tr.write(rep.out, f"trace_seed{seed}")
        if args.horizon >= 10**4:
            for key, st in per_class_stability(tr).items():
                rep(f"{seed},{key},{fmt(st.slope)},{fmt(st.stderr)},{st.max_total},{st.returns},{st.verdict}")
        else:
            rep(f"{seed},total,,,{int(tr.total.max())},,too short for a verdict")
        if args.drift_window and rep.out:
            drift = lyapunov_drift(tr, args.drift_window)
            np.savetxt(rep.out / f"drift_seed{seed}.csv", drift, fmt="%.17g", header="delta_L", comments="")
        if tr.epochs and args.epoch_tv:
            done = [i for i, e in enumerate(tr.epochs) if e.start + e.length <= tr.horizon][: args.epoch_tv]
            tvs = [timescale_diagnostic(model, tr, i) for i in done]
            rep(f"{seed},epoch_tv,{fmt(float(np.mean(tvs)))},,,,mean over {len(tvs)} epochs")
    return 0


def cmd_fluid(args, rep: Report) -> int:
    from mdpn.capacity import capacity_margin
    from mdpn.fluid import check_drift_inequality, empty_time_bound, integrate_fluid

    model = resolve_model(args)
    lam = np.asarray(args.lam, dtype=float) / args.slots_per_unit
    q0 = np.asarray(args.q0, dtype=float)
    if len(lam) != model.n_classes or len(q0) != model.n_classes:
        raise Failure(f"--lambda and --q0 need {model.n_classes} entries")
    traj = integrate_fluid(model, lam, q0, dt=args.dt, t_max=args.tmax)
    eps = capacity_margin(model, lam).margin
    rep(f"lambda per slot {fmt(lam)}  dt {fmt(traj.dt)}  margin {fmt(eps)}")
    rep(f"empty_time {fmt(traj.empty_time) if traj.empty_time is not None else 'not reached'}")
    status = 0
    if eps > 0 and q0.sum() > 0:
        bound = empty_time_bound(q0, eps)
        drift = check_drift_inequality(traj, eps)
        tol = 5 * traj.dt * (lam.sum() + model.schedule_bound)
        ok = traj.empty_time is not None and traj.empty_time <= bound + 2 * traj.dt
        rep(f"bound {fmt(bound)}  {'PASS' if ok else 'FAIL'}")
        rep(f"drift slack {fmt(drift.slack)}  tol {fmt(tol)}  {'PASS' if drift.passes(tol) else 'FAIL'}")
        status = 0 if ok and drift.passes(tol) else 1
    else:
        rep("arrival rates not in the interior: no emptying bound")
    if rep.out:
        traj.write_csv(rep.out / "fluid.csv")
    return status


def cmd_reproduce(args, rep: Report) -> int:
    from mdpn.experiments import REPRODUCE

    outcome = REPRODUCE[args.name]()
    rep(outcome.line())
    return 0 if outcome.passed else 1


# -- parser --------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", help="model document (JSON)")
    p.add_argument("--builder", help="built-in model: rotation3, rotation3-stochastic, decoherence-net")
    p.add_argument("--param", action="append", metavar="K=V", help="builder parameter; repeatable")
    p.add_argument("--out", help="output directory for CSV files and report.txt")


def build_parser() -> argparse.ArgumentParser:
    from mdpn.experiments import REPRODUCE

    parser = argparse.ArgumentParser(prog="mdpn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a model document or builder output")
    p.add_argument("path", nargs="?", help="model document (same as --model)")
    _common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="average-reward MDP for reward weights q")
    _common(p)
    p.add_argument("--weights", type=_vector, help="comma-separated weights q (default all ones)")
    p.add_argument("--tol", type=float, default=1e-9, help="stopping tolerance on the gain")
    p.add_argument("--method", choices=("rvi", "pi"), default="rvi", help="value or policy iteration")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("capacity", help="capacity margin of an arrival-rate vector")
    _common(p)
    p.add_argument("--lambda", dest="lam", type=_vector, help="comma-separated arrival rates")
    p.add_argument("--slots-per-unit", type=float, default=1.0,
                   help="divide rates by this before solving (3 turns per-cycle rotation-3 rates into per-slot)")
    p.add_argument("--grid", help="I:J:LO:HI:N sweep classes I and J (0-based) and write capacity_grid.csv")
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("simulate", help="simulate under a controller and report stability diagnostics")
    _common(p)
    p.add_argument("--controller", default="maxweight",
                   help="maxweight, warp, p0, uniform or fixed:NAME (rotation-3 bundled policies)")
    p.add_argument("--horizon", type=int, default=100_000, help="slots per run")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    p.add_argument("--q0", type=_vector, help="initial queue lengths")
    p.add_argument("--drift-window", type=int, default=0, help="write Lyapunov drift series with this window")
    p.add_argument("--epoch-tv", type=int, default=0, help="report mean timescale TV over this many epochs")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fluid", help="integrate the fluid model and check the emptying bound")
    _common(p)
    p.add_argument("--lambda", dest="lam", type=_vector, required=True, help="arrival rates")
    p.add_argument("--slots-per-unit", type=float, default=1.0, help="divide rates by this before integrating")
    p.add_argument("--q0", type=_vector, required=True, help="initial fluid queue")
    p.add_argument("--dt", type=float, default=None, help="Euler step (default 0.01 min(1, 1/|lambda|_1))")
    p.add_argument("--tmax", type=float, default=100.0, help="integration horizon")
    p.set_defaults(func=cmd_fluid)

    p = sub.add_parser("reproduce", help="run a canned experiment and print PASS or FAIL")
    p.add_argument("name", choices=sorted(REPRODUCE))
    p.add_argument("--out", help="directory for report.txt")
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("MDPN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    rep = Report(getattr(args, "out", None))
    try:
        return args.func(args, rep)
    except (Failure, ModelError) as exc:
        rep(f"error: {exc}")
        return 1
    finally:
        rep.close()


if __name__ == "__main__":
    sys.exit(main())
