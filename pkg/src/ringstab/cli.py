"""Command-line front end.

Every subcommand prints one JSON document (sorted keys, no timestamps) and
optionally writes CSV sidecars into ``--out``. Exit status: 0 success,
1 invalid input, 2 a check failed (coupling divergence, audit or fluid
violation, solver non-convergence).

Settings come from the ``run`` section of the JSON config, overridden by
flags. Replications use seeds ``seed, seed+1, ...``.
"""

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, fields
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np

from . import fluid as fluid_mod
from . import slotted as slotted_mod
from . import transient as transient_mod
from .analytics import (ParameterError, ParameterSetting, Verdict, load_profile,
                        marginal_distribution, stability_region, stability_verdict,
                        visit_matrix)
from .coupling import coupled_run, legacy_coupled_run
from .parallel import map_seeds, resolve_jobs
from .randomness import UniformField
from .sim_mcn import McnState, audit_trajectory, run_mcn
from .sim_ring import RingState, estimate_marginals, queue_growth_slopes, run

EXIT_OK, EXIT_INVALID, EXIT_CHECK = 0, 1, 2
COMMANDS = ("analyze", "region", "simulate", "couple", "fluid", "transient", "slotted-map")
MODELS = ("ring", "ring-legacy", "mcn")
AUDIT_LIMIT = 200_000   # longest network run recorded at every step


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunConfig:
    subcommand: str
    config: str
    model: str = "ring"
    seed: int = 0
    replications: int = 1
    horizon: int = 100_000
    burn_in: int | None = None
    record_every: int | None = None
    grid: float = fluid_mod.DEFAULT_GRID_STEP
    norm: int = 2000
    t_max: float | None = None
    epsilon: float = 0.05
    tol: float = 0.05
    slope_tol: float = 0.05
    drain_fraction: float = 0.95
    threshold: float | None = None
    resolution: int = 101
    restarts: int = 10
    max_iter: int = 10**6
    compare: bool = False
    general: bool = False
    initial: dict | None = None

    def validate(self):
        if self.model not in MODELS:
            raise ParameterError(f"unknown model {self.model!r}")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool) and v < 0:
                raise ParameterError(f"{f.name} must be non-negative")
        if self.replications < 1:
            raise ParameterError("replications must be >= 1")
        if self.resolution < 2:
            raise ParameterError("resolution must be >= 2")
        if self.record_every is not None and self.record_every < 1:
            raise ParameterError("record_every must be >= 1")
        if self.grid <= 0:
            raise ParameterError("grid must be positive")

    def seeds(self):
        return list(range(self.seed, self.seed + self.replications))

    def echo(self):
        d = asdict(self)
        d.pop("config")
        return d


def build_parser():
    ap = _Parser(prog="ringstab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON parameter file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--jobs", type=int, help="worker processes (env RINGSTAB_JOBS)")
        sp.add_argument("--horizon", type=int)
        sp.add_argument("--replications", type=int)
        sp.add_argument("--out", help="directory for CSV sidecars")
        sp.add_argument("--model", choices=MODELS)
        sp.add_argument("--burn-in", type=int)
        sp.add_argument("--record-every", type=int)
        sp.add_argument("--grid", type=float, help="scaled-time grid step")
        sp.add_argument("--norm", type=int, help="initial mass for fluid runs")
        sp.add_argument("--t-max", type=float)
        sp.add_argument("--epsilon", type=float)
        sp.add_argument("--tol", type=float)
        sp.add_argument("--slope-tol", type=float)
        sp.add_argument("--drain-fraction", type=float)
        sp.add_argument("--threshold", type=float)
        sp.add_argument("--resolution", type=int)
        sp.add_argument("--restarts", type=int)
        sp.add_argument("--max-iter", type=int)
        sp.add_argument("--compare", action="store_true", default=None,
                        help="transient: also simulate growth slopes")
        sp.add_argument("--general", action="store_true", default=None,
                        help="slotted-map: force the lcm construction")
    return ap


def _load_json(path):
    p = Path(path)
    if not p.is_file():
        raise ParameterError(f"config file not found: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ParameterError(f"malformed config: {exc}") from None


def resolve_config(args, raw):
    known = {f.name for f in fields(RunConfig)} - {"subcommand", "config"}
    run_section = raw.get("run", {}) if isinstance(raw, dict) else {}
    if not isinstance(run_section, dict):
        raise ParameterError("'run' must be an object")
    unknown = set(run_section) - known
    if unknown:
        raise ParameterError(f"unknown run settings: {sorted(unknown)}")
    cfg = RunConfig(args.subcommand, args.config, **run_section)
    for name in known:
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    cfg.validate()
    return cfg


def jsonable(obj):
    """Plain JSON types; non-finite floats become null."""
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(jsonable(v) for v in obj)
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _slopes(times, Y):
    """LSQ slopes of the columns of ``Y`` over the second half of the run."""
    sel = times >= times[0] + (times[-1] - times[0]) / 2
    t = times[sel].astype(float)
    if t.size < 2:
        return np.zeros(Y.shape[1])
    tc = t - t.mean()
    y = Y[sel].astype(float)
    return tc @ (y - y.mean(axis=0)) / (tc @ tc)


# --- subcommands ---------------------------------------------------------

def cmd_analyze(cfg, ps, out):
    report = stability_verdict(ps, cfg.threshold)
    vm = visit_matrix(ps)
    prof = load_profile(ps)
    result = {
        "parameters": ps.to_dict(),
        "stability": report.to_dict(),
        "visit_matrix": vm.b,
        "marginals": marginal_distribution(ps, vm),
        "traffic": {"lambda": prof.lam, "rho": prof.rho},
    }
    return result, True


def cmd_region(cfg, ps, out):
    reg = stability_region(ps, cfg.resolution, cfg.threshold)
    result = {"halfspaces": reg.halfspaces(), "rhs": reg.rhs,
              "intercepts": reg.intercepts, "boundary_csv": None,
              "boundary_points": 0 if reg.boundary is None else len(reg.boundary)}
    if reg.boundary is not None and out:
        name = "region_boundary.csv"
        _write_csv(out / name, ["p1", "p2"], [[f"{a:.12g}", f"{b:.12g}"] for a, b in reg.boundary])
        result["boundary_csv"] = name
    return result, True


def _initial_ring(cfg, L):
    if cfg.initial is None:
        return RingState.empty(L)
    try:
        return RingState(cfg.initial["cells"], cfg.initial["queues"])
    except (KeyError, TypeError) as exc:
        raise ParameterError(f"bad initial state: {exc}") from None


def _simulate_one(args):
    ps, cfg, seed, out = args
    field = UniformField(seed, ps.L)
    if cfg.model == "mcn":
        x0 = McnState.empty(ps.L) if cfg.initial is None else \
            McnState(np.asarray(cfg.initial["class_queues"]))
        stride = cfg.record_every or (1 if cfg.horizon <= AUDIT_LIMIT else cfg.horizon // 10_000)
        traj = run_mcn(x0, ps, field, cfg.horizon, stride)
        rec = {"seed": seed, "final_state": traj.state(-1).to_dict(),
               "entry_queue_slopes": _slopes(traj.times, traj.Q[:, :, 0]),
               "audit": audit_trajectory(traj).to_dict() if stride == 1 else None}
        if out:
            name = f"trajectory_seed{seed}.csv"
            L = ps.L
            _write_csv(out / name,
                       ["t"] + [f"Q_{i}_{j}" for i in range(1, L + 1) for j in range(L + 1)],
                       [[int(t)] + row.ravel().tolist() for t, row in zip(traj.times, traj.Q)])
            rec["trajectory_csv"] = name
        return rec
    stride = cfg.record_every or max(1, cfg.horizon // 10_000)
    traj = run(_initial_ring(cfg, ps.L), ps, field, cfg.horizon, stride,
               legacy=cfg.model == "ring-legacy")
    ev = traj.events[-1]
    rec = {"seed": seed, "final_state": traj.final.to_dict(),
           "marginals": estimate_marginals(traj, cfg.burn_in) if cfg.horizon > 0 else None,
           "queue_slopes": queue_growth_slopes(traj),
           "arrivals": ev[0], "entries": ev[1], "exits": ev[2]}
    if out:
        name = f"trajectory_seed{seed}.csv"
        traj.to_csv(out / name)
        rec["trajectory_csv"] = name
    return rec


def cmd_simulate(cfg, ps, out, jobs):
    recs = map_seeds(_simulate_one, [(ps, cfg, s, out) for s in cfg.seeds()], jobs)
    recs = jsonable(recs)
    result = {"model": cfg.model, "per_seed": recs}
    ok = True
    if cfg.model == "mcn":
        audits = [r["audit"] for r in recs if r["audit"] is not None]
        ok = all(a["ok"] for a in audits)
        result["audit_ok"] = ok if audits else None
    else:
        if recs[0]["marginals"] is not None:
            result["mean_marginals"] = np.mean([r["marginals"] for r in recs], axis=0)
        if stability_verdict(ps).verdict is Verdict.STABLE:
            result["predicted_marginals"] = marginal_distribution(ps)
    return result, ok


def _couple_one(args):
    ps, cfg, seed = args
    field = UniformField(seed, ps.L)
    x0 = _initial_ring(cfg, ps.L)
    if cfg.model == "ring-legacy":
        return legacy_coupled_run(x0, ps, field, cfg.horizon).to_dict()
    return coupled_run(x0, ps, field, cfg.horizon).to_dict()


def cmd_couple(cfg, ps, out, jobs):
    if cfg.model == "mcn":
        raise ParameterError("couple takes --model ring or ring-legacy")
    recs = jsonable(map_seeds(_couple_one, [(ps, cfg, s) for s in cfg.seeds()], jobs))
    ok = all(r["passed"] for r in recs)
    return {"model": cfg.model, "per_seed": recs, "passed": ok}, ok


def _fluid_one(args):
    ps, cfg, seed, out = args
    fr = fluid_mod.fluid_experiment(ps, cfg.norm, seed, cfg.t_max, cfg.grid,
                                    cfg.epsilon, cfg.tol)
    rec = fr.to_dict()
    rec["slope_errors"] = fr.slope_errors()
    rec["lipschitz_excess"] = fluid_mod.lipschitz_excess(fr.scaled)
    if out:
        name = f"fluid_seed{seed}.csv"
        fr.to_csv(out / name)
        rec["scaled_csv"] = name
    return rec


def cmd_fluid(cfg, ps, out, jobs):
    recs = jsonable(map_seeds(_fluid_one, [(ps, cfg, s, out) for s in cfg.seeds()], jobs))
    stable = stability_verdict(ps).verdict is Verdict.STABLE
    drained = float(np.mean([r["drained_before_delta"] for r in recs]))
    n_circ = sum(len(r["circularity_violations"]) for r in recs)
    worst = max((e for r in recs for e in r["slope_errors"]), default=0.0)
    checks = {
        "circularity": n_circ == 0,
        "drain_rate": worst <= cfg.slope_tol,
        "drain_bound": (drained >= cfg.drain_fraction) if stable else None,
    }
    ok = all(v is not False for v in checks.values())
    summary = {"drained_fraction": drained, "circularity_violations": n_circ,
               "max_slope_error": worst, "checks": checks}
    return {"per_seed": recs, "summary": summary}, ok


def cmd_transient(cfg, ps, out, jobs):
    try:
        prof = transient_mod.solve_fixed_point(ps, cfg.max_iter, restarts=cfg.restarts,
                                               seed=cfg.seed)
    except transient_mod.ConvergenceError as exc:
        return {"error": str(exc)}, False
    result = {"profile": prof.to_dict(), "comparison": None}
    if cfg.compare:
        cmp = transient_mod.compare_with_simulation(ps, prof, cfg.horizon, cfg.seeds(), jobs,
                                                    cfg.record_every)
        result["comparison"] = cmp.to_dict()
    return result, True


def cmd_slotted(cfg, raw, out):
    spec = slotted_mod.SlottedSpec.from_dict(raw)
    mapping = slotted_mod.map_general(spec) if cfg.general else slotted_mod.map_spec(spec)
    result = mapping.to_dict()
    result["tau_satisfied"] = slotted_mod.tau_satisfied(mapping)
    result["tau_verdict"] = slotted_mod.tau_verdict(mapping).to_dict()
    return result, True


def _dispatch(cfg, raw, out, jobs):
    if cfg.subcommand == "slotted-map":
        return cmd_slotted(cfg, raw, out)
    ps = ParameterSetting.from_dict(raw)
    if cfg.subcommand == "analyze":
        return cmd_analyze(cfg, ps, out)
    if cfg.subcommand == "region":
        return cmd_region(cfg, ps, out)
    handler = {"simulate": cmd_simulate, "couple": cmd_couple,
               "fluid": cmd_fluid, "transient": cmd_transient}[cfg.subcommand]
    return handler(cfg, ps, out, jobs)


def _emit(doc, stream):
    stream.write(json.dumps(jsonable(doc), sort_keys=True, indent=2, allow_nan=False))
    stream.write("\n")


def main(argv=None, stdout=None, stderr=None):
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    command = None
    try:
        args = build_parser().parse_args(argv)
        command = args.subcommand
        raw = _load_json(args.config)
        if not isinstance(raw, dict):
            raise ParameterError("config must be a JSON object")
        cfg = resolve_config(args, raw)
        jobs = resolve_jobs(args.jobs)
        out = None
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
        result, ok = _dispatch(cfg, raw, out, jobs)
    except (UsageError, ParameterError, ValueError, TypeError) as exc:
        _emit({"command": command, "status": "error", "error": str(exc)}, stdout)
        print(f"ringstab: error: {exc}", file=stderr)
        return EXIT_INVALID
    _emit({"command": command, "status": "ok" if ok else "check_failed",
           "settings": cfg.echo(), "result": result}, stdout)
    return EXIT_OK if ok else EXIT_CHECK


def schema():
    """The JSON schema all command outputs validate against."""
    text = resources.files("ringstab").joinpath("schemas/output.schema.json").read_text()
    return json.loads(text)


if __name__ == "__main__":
    sys.exit(main())
