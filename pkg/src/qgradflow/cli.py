"""Command-line experiment runner.

Every subcommand reads a JSON config (``--config``), applies flag overrides,
and writes its results as CSV/JSON files plus PNG figures into an output
directory. Failures print a JSON error record on stderr and exit with 1.
"""

import argparse
import copy
import json
import logging
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import formats
from .dynamics import ControlSignal, propagate
from .endpoint import EPS_WIT, classify_control, gramian, witness_candidate
from .flow import FlowConfig, cost_functional, grad_cost_functional, initial_control, run_flow
from .generate import random_problem
from .lie import build_splitting
from .objective import enumerate_critical_points, max_cost

log = logging.getLogger("qgradflow")

OUT_ENV = "QGRADFLOW_OUT"
DEFAULT_T = 10.0

DEFAULTS = {
    "problem": {"random": {"n": 2, "seed": 0}},
    "grid": {"T": None, "M": 64},
    "flow": {},
    "init": {"kind": "random", "seed": 0, "amplitude": 1.0},
    "checkgrad": {"samples": 10, "eps": 1e-5, "threshold": 1e-4, "corrupt_sign": False},
    "gramian": {"control": "random", "seed": 0, "amplitude": 1.0, "eps_wit": EPS_WIT},
    "plots": True,
}


class CLIError(Exception):
    """Config or validation failure reported as exit code 1."""

    def __init__(self, kind, message):
        super().__init__(message)
        self.kind = kind


# ---------------------------------------------------------------------------
# config handling


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "problem":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None):
    cfg = copy.deepcopy(DEFAULTS)
    base_dir = Path.cwd()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise CLIError("config", f"config file not found: {path}")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise CLIError("config", f"cannot parse {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise CLIError("config", "config must be a JSON object")
        unknown = set(user) - set(DEFAULTS) - {"output"}
        if unknown:
            raise CLIError("config", f"unknown config keys: {sorted(unknown)}")
        cfg = _merge(cfg, user)
        base_dir = p.resolve().parent
    cfg["_base_dir"] = str(base_dir)
    return cfg


def apply_overrides(cfg, args):
    if args.seed is not None:
        cfg["init"]["seed"] = args.seed
        cfg["gramian"]["seed"] = args.seed
        if "random" in cfg["problem"] and args.command == "generate":
            cfg["problem"]["random"]["seed"] = args.seed
    if args.grid is not None:
        cfg["grid"]["M"] = args.grid
    if args.horizon is not None:
        cfg["grid"]["T"] = args.horizon
    if getattr(args, "n", None) is not None:
        cfg["problem"] = {"random": {**cfg["problem"].get("random", {}), "n": args.n}}
    if getattr(args, "no_plots", False):
        cfg["plots"] = False
    return cfg


def resolve_problem(cfg):
    src = cfg["problem"]
    T = cfg["grid"].get("T")
    if not isinstance(src, dict) or len(src) != 1:
        raise CLIError("config", "problem must have exactly one of 'inline', 'file', 'random'")
    kind, spec = next(iter(src.items()))
    try:
        if kind == "random":
            extra = set(spec) - {"n", "seed", "rho_spectrum", "theta_spectrum", "T"}
            if extra:
                raise CLIError("config", f"unknown random-problem keys: {sorted(extra)}")
            T = T if T is not None else spec.get("T", DEFAULT_T)
            return random_problem(int(spec["n"]), int(spec.get("seed", 0)), T=float(T),
                                  rho_spectrum=spec.get("rho_spectrum"),
                                  theta_spectrum=spec.get("theta_spectrum"))
        if kind == "file":
            path = Path(cfg["_base_dir"]) / spec
            if not path.is_file():
                raise CLIError("config", f"problem file not found: {spec}")
            problem = formats.read_problem(path)
        elif kind == "inline":
            d = dict(spec)
            d.setdefault("T", T if T is not None else DEFAULT_T)
            problem = formats.problem_from_dict(d)
        else:
            raise CLIError("config", f"unknown problem source {kind!r}")
    except (ValueError, KeyError, TypeError, RuntimeError) as exc:
        raise CLIError("validation", str(exc)) from exc
    if T is not None:
        problem = problem.with_horizon(float(T))
    return problem


def require(problem, controllable=False):
    if not problem.h1_ok:
        raise CLIError("validation", "spectral condition failed: " + "; ".join(problem.notes))
    if controllable and not problem.controllable:
        raise CLIError("controllability", "H0 and H1 do not generate su(n)")


def output_dir(cfg, args):
    if args.out is not None:
        out = Path(args.out)
    elif cfg.get("output"):
        out = Path(cfg["_base_dir"]) / cfg["output"]
    else:
        out = Path(os.environ.get(OUT_ENV, "qgradflow_out")) / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def public_config(cfg):
    return {k: v for k, v in cfg.items() if not k.startswith("_") and k != "output"}


def provenance(cfg, command, seed):
    try:
        version = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        version = "unknown"
    return {
        "command": command,
        "config": public_config(cfg),
        "config_sha256": formats.config_hash(public_config(cfg)),
        "seed": seed,
        "versions": {
            "qgradflow": version,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }


def flow_config(cfg):
    try:
        return FlowConfig.from_dict(cfg["flow"])
    except (ValueError, TypeError) as exc:
        raise CLIError("config", f"flow config: {exc}") from exc


# ---------------------------------------------------------------------------
# commands


def _solve_one(cfg, out, seed):
    """One flow run writing the four run artifacts; returns a summary row."""
    problem = resolve_problem(cfg)
    require(problem, controllable=True)
    fc = flow_config(cfg)
    init = cfg["init"]
    try:
        u0 = initial_control(problem, int(cfg["grid"]["M"]), kind=init.get("kind", "random"),
                             seed=seed, amplitude=float(init.get("amplitude", 1.0)),
                             values=init.get("values"), grad_tol=fc.grad_tol)
    except ValueError as exc:
        raise CLIError("config", f"initial control: {exc}") from exc
    trace, report, u = run_flow(problem, u0, fc)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_trace(out / "trace.csv", trace)
    formats.write_control(out / "control.csv", u)
    formats.write_json(out / "report.json", report.to_dict())
    formats.write_json(out / "provenance.json", provenance(cfg, "solve", seed))
    if cfg.get("plots", True):
        from .plotting import plot_trace
        plot_trace(trace, out, J_max=report.J_max)
    return {"seed": seed, "status": report.label, "iterations": report.iterations,
            "final_J": report.final_J, "gap": report.gap, "exit_code": report.exit_code}


def _solve_worker(job):
    cfg, out, seed = job
    try:
        return _solve_one(cfg, Path(out), seed)
    except CLIError as exc:
        return {"seed": seed, "status": "error", "iterations": -1, "final_J": float("nan"),
                "gap": float("nan"), "exit_code": 1, "error": str(exc)}


def cmd_solve(cfg, args, out):
    seed0 = int(cfg["init"].get("seed", 0))
    runs = args.runs or 1
    if runs == 1:
        row = _solve_one(cfg, out, seed0)
        _say(args, f"{row['status']} iterations={row['iterations']} "
                   f"J={formats.fmt(row['final_J'])} gap={row['gap']:.3e} -> {out}")
        return row["exit_code"]
    # validate once up front so configuration errors surface as a single record
    require(resolve_problem(cfg), controllable=True)
    flow_config(cfg)
    jobs = [(cfg, str(out / f"run_{i:03d}"), seed0 + i) for i in range(runs)]
    workers = max(1, min(runs, os.cpu_count() or 1))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        rows = list(ex.map(_solve_worker, jobs))
    header = ("run", "seed", "status", "iterations", "final_J", "gap", "exit_code")
    formats.write_csv(out / "runs.csv", header,
                      ([i] + [r[h] for h in header[1:]] for i, r in enumerate(rows)))
    for i, r in enumerate(rows):
        _say(args, f"run {i:03d} seed={r['seed']}: {r['status']} gap={r['gap']:.3e}")
    return max(r["exit_code"] for r in rows)


def cmd_landscape(cfg, args, out):
    problem = resolve_problem(cfg)
    require(problem)
    points = enumerate_critical_points(problem)
    N = problem.N
    rows = []
    for rank, p in enumerate(points):
        comm = np.linalg.norm(p.rho @ problem.theta - problem.theta @ p.rho)
        rows.append((rank, "-".join(map(str, p.permutation)), p.value, p.morse_index,
                     float(p.hessian_spectrum.min()), float(p.hessian_spectrum.max()), comm))
    formats.write_csv(out / "landscape.csv",
                      ("rank", "permutation", "J", "morse_index", "hess_min", "hess_max",
                       "comm_norm"), rows)
    if cfg.get("plots", True):
        from .plotting import plot_landscape
        plot_landscape(points, out / "landscape.png")
    idx = [p.morse_index for p in points]
    jmax = max_cost(problem.rho0, problem.theta)
    ok = (idx.count(0) == 1 and idx.count(N) == 1 and all(0 <= i <= N for i in idx)
          and abs(points[-1].value - jmax) <= 1e-12 * max(1.0, abs(jmax))
          and points[-1].morse_index == N)
    summary = {"n": problem.n, "N": N, "count": len(points), "indices": idx,
               "max_J": points[-1].value, "sorted_pairing_J": jmax, "pattern_ok": ok}
    formats.write_json(out / "landscape.json", summary)
    formats.write_json(out / "provenance.json", provenance(cfg, "landscape", None))
    if not ok:
        raise CLIError("landscape", f"unexpected Morse index pattern {idx}")
    _say(args, f"{len(points)} critical points, indices {idx} -> {out}")
    return 0


def cmd_checkgrad(cfg, args, out):
    problem = resolve_problem(cfg)
    opts = cfg["checkgrad"]
    rng = np.random.default_rng(int(cfg["init"].get("seed", 0)))
    M = int(cfg["grid"]["M"])
    eps = float(opts["eps"])
    sign = -1.0 if opts.get("corrupt_sign") else 1.0
    rows = []
    for i in range(int(opts["samples"])):
        u = ControlSignal.random(problem.T, M, rng, float(cfg["init"].get("amplitude", 1.0)))
        v = ControlSignal(problem.T, rng.standard_normal(M))
        analytic = sign * grad_cost_functional(problem, u).inner(v)
        fd = (cost_functional(problem, u + eps * v) - cost_functional(problem, u - eps * v)) / (2 * eps)
        scale = max(abs(analytic), abs(fd))
        rel = 0.0 if scale < 1e-12 else abs(analytic - fd) / scale
        rows.append((i, analytic, fd, rel))
    worst = max(r[3] for r in rows) if rows else 0.0
    threshold = float(opts["threshold"])
    formats.write_csv(out / "checkgrad.csv", ("sample", "analytic", "finite_difference", "rel_error"), rows)
    formats.write_json(out / "checkgrad.json", {"max_rel_error": worst, "threshold": threshold,
                                                "passed": worst < threshold, "eps": eps})
    formats.write_json(out / "provenance.json", provenance(cfg, "checkgrad", cfg["init"].get("seed")))
    _say(args, f"max relative error {worst:.3e} (threshold {threshold:.1e})")
    return 0 if worst < threshold else 1


def cmd_gramian(cfg, args, out):
    problem = resolve_problem(cfg)
    opts = cfg["gramian"]
    M = int(cfg["grid"]["M"])
    ctrl = opts.get("control", "random")
    if ctrl == "random":
        u = ControlSignal.random(problem.T, M, np.random.default_rng(int(opts.get("seed", 0))),
                                 float(opts.get("amplitude", 1.0)))
    elif ctrl == "zero":
        u = ControlSignal.zeros(problem.T, M)
    elif isinstance(ctrl, list):
        u = ControlSignal(problem.T, ctrl)
    else:
        raise CLIError("config", f"unknown gramian control {ctrl!r}")
    try:
        split = build_splitting(problem.rho0)
    except ValueError as exc:
        raise CLIError("validation", str(exc)) from exc
    rec = propagate(problem, u)
    gram = gramian(problem, rec, split)
    eps_sing = flow_config(cfg).eps_sing
    cls = classify_control(gram, eps_sing)
    cand = witness_candidate(problem, rec, split)
    eps_wit = float(opts.get("eps_wit", EPS_WIT))
    has_witness = (not cls.regular) and cand.residual < eps_wit
    result = {
        "eigenvalues": gram.eigenvalues.tolist(),
        "classification": str(cls),
        "regular": cls.regular,
        "corank": cls.corank,
        "ratio": cls.ratio,
        "witness": {
            "present": has_witness,
            "residual": cand.residual,
            "max_trace_sample": float(np.max(np.abs(cand.trace_samples))),
            "coefficients": cand.coefficients.tolist(),
        },
        "controllable": problem.controllable,
    }
    formats.write_csv(out / "gramian.csv", ("index", "eigenvalue"), enumerate(gram.eigenvalues))
    formats.write_json(out / "gramian.json", result)
    formats.write_json(out / "provenance.json", provenance(cfg, "gramian", opts.get("seed")))
    if cfg.get("plots", True):
        from .plotting import plot_spectrum
        plot_spectrum(gram.eigenvalues, out / "gramian.png", eps_sing)
    _say(args, f"{cls} ratio={cls.ratio:.3e} witness_residual={cand.residual:.3e}")
    return 0


def cmd_generate(cfg, args, out):
    spec = cfg["problem"].get("random")
    if spec is None:
        raise CLIError("config", "generate needs a 'random' problem source")
    problem = resolve_problem({**cfg, "problem": {"random": spec}})
    path = out / "problem.json"
    formats.write_problem(path, problem)
    _say(args, f"wrote {path}")
    return 0


COMMANDS = {
    "solve": cmd_solve,
    "landscape": cmd_landscape,
    "checkgrad": cmd_checkgrad,
    "gramian": cmd_gramian,
    "generate": cmd_generate,
}


def _say(args, msg):
    if not args.quiet:
        print(msg)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="seed for initial controls / generation")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command>)")
    common.add_argument("--grid", type=int, metavar="M", help="number of control intervals")
    common.add_argument("--horizon", type=float, metavar="T", help="control horizon")
    common.add_argument("--quiet", action="store_true", help="suppress console output")
    common.add_argument("--no-plots", action="store_true", help="skip PNG rendering")

    parser = argparse.ArgumentParser(prog="qgradflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve", parents=[common], help="run the gradient flow")
    p.add_argument("--runs", type=int, default=1, help="independent seeds run concurrently")
    sub.add_parser("landscape", parents=[common], help="enumerate critical points of J")
    sub.add_parser("checkgrad", parents=[common], help="compare gradient with finite differences")
    sub.add_parser("gramian", parents=[common], help="Gramian spectrum and singularity test")
    p = sub.add_parser("generate", parents=[common], help="write a random problem file")
    p.add_argument("--n", type=int, help="system dimension")
    return parser


def run(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "runs"):
        args.runs = 1
    if args.runs < 1:
        parser.error("--runs must be positive")
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    out = None
    try:
        cfg = apply_overrides(load_config(args.config), args)
        out = output_dir(cfg, args)
        return COMMANDS[args.command](cfg, args, out)
    except CLIError as exc:
        return _fail(args, out, exc.kind, str(exc))
    except (ValueError, KeyError, TypeError) as exc:
        return _fail(args, out, "config", f"{type(exc).__name__}: {exc}")


def _fail(args, out, kind, message):
    record = {"status": "error", "command": args.command, "kind": kind, "message": message}
    text = formats.dumps(record)
    sys.stderr.write(text)
    if out is not None:
        (out / "error.json").write_text(text)
    return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
