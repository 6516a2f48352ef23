"""Command-line entry points.

Every command writes into one run directory: its outputs plus a
``manifest.json`` holding the resolved configuration, so a run can be
repeated with ``--config <dir>/manifest.json``.  Outputs are staged in a
sibling directory and moved into place only when the command succeeds, so a
failed run leaves nothing behind.

Exit codes: 0 success (geometric events such as blow-up or collapse are
reported in the summary, not treated as failures), 1 degenerate geometry or
numerical breakdown, 2 input/output failure, 3 invalid configuration.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import platform
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .coframe import DEFAULT_TOL, compute_invariants, structure_residuals
from .errors import (ConfigError, DegenerateFrame, DegenerateHypersurface, DomainExceeded,
                     FrameResidualExceeded, GridTooSmall, IdentityViolation, NonRealA,
                     SingularLocus, StepRejected, UnimodError, UnknownInvariants, ZeroB)
from .flow import FLOW_BOUNDARIES, SERIES_COLUMNS, FlowConfig, run
from .grid import Grid3, ScalarField, sample_at
from .homogeneous import (CohomOneState, HomogeneousState, ab_from_hq, classify_group,
                          collapse_time, integrate_ab, integrate_cohom1, integrate_h)
from .models import build, exact_solution, parse_complex, parse_model
from .snapshot import write_snapshot

ENV_OUT = "UNIMODCR_OUT"
EXIT_OK, EXIT_DEGENERATE, EXIT_IO, EXIT_CONFIG = 0, 1, 2, 3
MANIFEST = "manifest.json"
MANIFEST_FORMAT = "unimodcr-manifest"

DEGENERATE_ERRORS = (DegenerateHypersurface, DegenerateFrame, FrameResidualExceeded, NonRealA,
                     IdentityViolation, StepRejected, SingularLocus, ZeroB)
CONFIG_ERRORS = (ConfigError, DomainExceeded, GridTooSmall, UnknownInvariants, ValueError)

# defaults per command; the config file and then the flags override them
DEFAULTS = {
    "invariants": {"model": None, "grid": 48, "half_width": None},
    "flow-graph": {"model": None, "grid": 48, "half_width": None, "t_end": None, "dt": "auto",
                   "cfl": 0.1, "boundary": None, "sample_dt": None, "monitor": False,
                   "beta": 0.3, "snapshots": True},
    "flow-homogeneous": {"a0": None, "b0": "0", "t_end": None, "dt": 0.01},
    "flow-hq": {"h0": None, "q": "0", "t_end": None, "dt": 0.01},
    "classify": {"a": None, "b": "0", "eps": 1e-10},
    "cohom1": {"a": None, "v": 0.0, "s": 0.0, "phi": 0.0, "r": 0.0, "tau_end": None,
               "dtau": 0.01},
    "crflat": {"model": None, "grid": 48, "half_width": None},
}


# ---------------------------------------------------------------------------
# helpers


def _num(x) -> str:
    """Full-precision, locale-independent decimal."""
    return repr(float(x))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": _jsonable(float(x.real)), "im": _jsonable(float(x.imag))}
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else str(float(x))
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _write_json(path: Path, data):
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) for v in row])


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def default_half_width(spec) -> float:
    """Chart box used when ``--half-width`` is not given."""
    if spec.kind == "sphere-patch":
        return 0.3 * math.sqrt(spec.r0)
    if spec.kind == "normal-form":
        return 0.4
    return 1.0


def _model_grid(cfg):
    spec = parse_model(cfg["model"])
    if spec.kind == "custom-file":
        return spec, None
    w = cfg["half_width"] if cfg["half_width"] is not None else default_half_width(spec)
    n = int(cfg["grid"])
    return spec, Grid3.centered(n, float(w))


def _origin_value(field: ScalarField):
    try:
        idx = field.grid.nearest_index((0.0, 0.0, 0.0))
        if idx is not None and field.grid.contains_node((0.0, 0.0, 0.0)) and field.mask[idx]:
            return complex(field.values[idx])
        return complex(sample_at(field, (0.0, 0.0, 0.0)))
    except ValueError:
        return complex(math.nan, math.nan)


def _require(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise ConfigError("missing required setting(s): " + ", ".join(missing))


# ---------------------------------------------------------------------------
# commands


def cmd_invariants(cfg, out: Path):
    _require(cfg, "model")
    spec, grid = _model_grid(cfg)
    M = build(spec, grid)
    C, inv = compute_invariants(M, DEFAULT_TOL, flatness=True)
    fields = {"L0": inv.L0, "a": inv.a, "b": inv.b, "s": inv.s}
    write_snapshot(out / "invariants.ucs", fields, {"model": spec.name})
    summary = {
        "model": spec.name,
        "origin": {k: _origin_value(f) for k, f in fields.items()},
        "max_abs": {k: f.max_abs() for k, f in fields.items()},
        "residuals": dict(C.residuals, **inv.residuals),
    }
    return summary, ["invariants.ucs"]


def cmd_crflat(cfg, out: Path):
    _require(cfg, "model")
    spec, grid = _model_grid(cfg)
    M = build(spec, grid)
    C, inv = compute_invariants(M, DEFAULT_TOL, flatness=True)
    residuals, s_forms = structure_residuals(inv, C)
    write_snapshot(out / "crflat.ucs", {"s": inv.s, "s_forms": s_forms}, {"model": spec.name})
    summary = {
        "model": spec.name,
        "s_origin": _origin_value(inv.s),
        "max_abs_s": inv.s.max_abs(),
        "max_abs_s_minus_s_forms": (inv.s - s_forms).max_abs(),
        "structure_residuals": residuals,
    }
    return summary, ["crflat.ucs"]


def cmd_flow_graph(cfg, out: Path):
    _require(cfg, "model", "t_end")
    spec, grid = _model_grid(cfg)
    M = build(spec, grid)
    has_exact = spec.kind in ("heisenberg", "sphere-patch")
    boundary = cfg["boundary"] or ("dirichlet-exact" if has_exact else "trim")
    if boundary not in FLOW_BOUNDARIES:
        raise ConfigError(f"boundary must be one of {FLOW_BOUNDARIES}")
    exact = None
    if boundary == "dirichlet-exact":
        kw = {"beta": float(cfg["beta"])} if spec.kind == "sphere-patch" else {}
        exact = exact_solution(spec, **kw)
    dt = cfg["dt"] if cfg["dt"] == "auto" else float(cfg["dt"])
    config = FlowConfig(t_end=float(cfg["t_end"]), dt=dt, cfl=float(cfg["cfl"]),
                        boundary=boundary, exact=exact,
                        sample_dt=None if cfg["sample_dt"] is None else float(cfg["sample_dt"]),
                        monitor_invariants=bool(cfg["monitor"]),
                        keep_snapshots=bool(cfg["snapshots"]))
    res = run(M, config)
    files = []
    for i, (t, S) in enumerate(res.snapshots):
        name = f"snapshot_{i:04d}.ucs"
        write_snapshot(out / name, {"F": S.F}, {"t": t, "model": spec.name})
        files.append(name)
    _write_csv(out / "series.csv", SERIES_COLUMNS,
               zip(*(res.series[k] for k in SERIES_COLUMNS)))
    files.append("series.csv")
    ev = res.event
    summary = {
        "model": spec.name, "boundary": boundary, "steps": res.steps,
        "dt_min": res.dt_min, "dt_max": res.dt_max, "t_final": res.t_final,
        "center_height_final": res.series["center_height"][-1],
        "event": None if ev is None else {"type": type(ev).__name__, "t": ev.t,
                                          "reason": getattr(ev, "reason", ""),
                                          "location": ev.location, "message": str(ev)},
    }
    return summary, files


def cmd_flow_homogeneous(cfg, out: Path):
    _require(cfg, "a0", "t_end")
    a0, b0 = float(cfg["a0"]), parse_complex(str(cfg["b0"]))
    traj = integrate_ab(HomogeneousState(a0, b0), float(cfg["t_end"]), float(cfg["dt"]))
    fi = traj.first_integral()
    det = traj.det_F
    _write_csv(out / "trajectory.csv",
               ("t", "a", "Re b", "Im b", "detF_re", "detF_im", "first_integral"),
               zip(traj.t, traj.a, traj.b.real, traj.b.imag, det.real, det.imag, fi))
    finite = fi[np.isfinite(fi)]
    drift = float(np.max(np.abs(finite / finite[0] - 1.0))) if finite.size else math.nan
    ev = traj.event
    summary = {
        "a0": a0, "b0": b0, "final": {"t": traj.t[-1], "a": traj.a[-1], "b": traj.b[-1]},
        "first_integral_drift": drift,
        "blowup": None if ev is None else {"t": ev.t, "bracket": getattr(ev, "bracket", None),
                                           "message": str(ev)},
    }
    return summary, ["trajectory.csv"]


def cmd_flow_hq(cfg, out: Path):
    _require(cfg, "h0", "t_end")
    h0, q = float(cfg["h0"]), parse_complex(str(cfg["q"]))
    path = integrate_h(h0, q, float(cfg["t_end"]), float(cfg["dt"]))
    rows = []
    for t, h in zip(path.t, path.h):
        try:
            a, b = ab_from_hq(h, q)
        except SingularLocus:
            a, b = math.nan, complex(math.nan, math.nan)
        rows.append((t, h, a, complex(b).real, complex(b).imag))
    _write_csv(out / "hpath.csv", ("t", "h", "a", "Re b", "Im b"), rows)
    ev = path.event
    try:
        t_quad = collapse_time(h0, q)
    except UnimodError:
        t_quad = math.inf
    summary = {
        "h0": h0, "q": q, "t_final": path.t[-1], "h_final": path.h[-1],
        "collapse": None if ev is None else {"t": ev.t, "message": str(ev)},
        "collapse_time_quadrature": t_quad,
    }
    return summary, ["hpath.csv"]


def cmd_classify(cfg, out: Path):
    _require(cfg, "a")
    a, b = float(cfg["a"]), parse_complex(str(cfg["b"]))
    c = classify_group(a, b, float(cfg["eps"]))
    summary = {"a": a, "b": b, "group": c.group.value, "cr_flat": c.cr_flat}
    _write_json(out / "classification.json", summary)
    return summary, ["classification.json"]


def cmd_cohom1(cfg, out: Path):
    _require(cfg, "a", "tau_end")
    s0 = CohomOneState(float(cfg["a"]), float(cfg["v"]), float(cfg["s"]), float(cfg["phi"]))
    r = float(cfg["r"])
    path = integrate_cohom1(s0, lambda tau: r, float(cfg["tau_end"]), float(cfg["dtau"]))
    b = path.b
    _write_csv(out / "cohom1.csv", ("tau", "a", "v", "s", "phi", "Re b", "Im b"),
               zip(path.tau, path.a, path.v, path.s, path.phi, b.real, b.imag))
    cons = path.conserved()
    summary = {
        "initial": {"a": s0.a, "v": s0.v, "s": s0.s, "phi": s0.phi, "r": r},
        "conserved_drift": float(np.max(np.abs(cons - cons[0]))),
        "max_second_singular_value": float(np.max(path.second_singular_values())),
    }
    return summary, ["cohom1.csv"]


COMMANDS = {
    "invariants": cmd_invariants,
    "flow-graph": cmd_flow_graph,
    "flow-homogeneous": cmd_flow_homogeneous,
    "flow-hq": cmd_flow_hq,
    "classify": cmd_classify,
    "cohom1": cmd_cohom1,
    "crflat": cmd_crflat,
}


# ---------------------------------------------------------------------------
# argument handling


def _auto_or_float(text):
    return "auto" if text == "auto" else float(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="unimodcr", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with settings (or a previous manifest)")
        sp.add_argument("--out", help=f"run directory (default: under ${ENV_OUT} or ./runs)")
        sp.add_argument("--force", action="store_true", help="replace an existing run directory")
        return sp

    def model_opts(sp):
        sp.add_argument("--model", help="heisenberg | normalform:a=..,b=.. | sphere:r=.. | "
                                         "random:seed=..,amp=.. | file:<path>")
        sp.add_argument("--grid", type=int, help="points per axis")
        sp.add_argument("--half-width", type=float, help="half width of the chart box")

    sp = common(sub.add_parser("invariants", help="canonical coframe and invariant fields"))
    model_opts(sp)
    sp = common(sub.add_parser("crflat", help="CR-flatness scalar by two routes"))
    model_opts(sp)

    sp = common(sub.add_parser("flow-graph", help="graph-level normal flow"))
    model_opts(sp)
    sp.add_argument("--t-end", type=float)
    sp.add_argument("--dt", type=_auto_or_float)
    sp.add_argument("--cfl", type=float)
    sp.add_argument("--boundary", choices=FLOW_BOUNDARIES)
    sp.add_argument("--sample-dt", type=float)
    sp.add_argument("--beta", type=float, help="evolved-core fraction for sphere dirichlet-exact")
    sp.add_argument("--monitor", action=argparse.BooleanOptionalAction, default=None)
    sp.add_argument("--snapshots", action=argparse.BooleanOptionalAction, default=None)

    sp = common(sub.add_parser("flow-homogeneous", help="(a, b) ODE of homogeneous models"))
    sp.add_argument("--a0", type=float)
    sp.add_argument("--b0")
    sp.add_argument("--t-end", type=float)
    sp.add_argument("--dt", type=float)

    sp = common(sub.add_parser("flow-hq", help="h-ODE of the quadric level sets"))
    sp.add_argument("--h0", type=float)
    sp.add_argument("--q")
    sp.add_argument("--t-end", type=float)
    sp.add_argument("--dt", type=float)

    sp = common(sub.add_parser("classify", help="symmetry group of constant invariants"))
    sp.add_argument("--a", type=float)
    sp.add_argument("--b")
    sp.add_argument("--eps", type=float)

    sp = common(sub.add_parser("cohom1", help="cohomogeneity-one invariant system"))
    for name in ("a", "v", "s", "phi", "r"):
        sp.add_argument(f"--{name}", type=float)
    sp.add_argument("--tau-end", type=float)
    sp.add_argument("--dtau", type=float)
    return p


def load_config_file(path, command):
    """Settings from a JSON file: a plain mapping or a manifest of the same command."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError:
        raise
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    if data.get("format") == MANIFEST_FORMAT:
        if data.get("command") != command:
            raise ConfigError(f"{path} is a manifest of {data.get('command')!r}, not {command!r}")
        data = data["config"]
    unknown = set(data) - set(DEFAULTS[command])
    if unknown:
        raise ConfigError(f"{path}: unknown setting(s) for {command}: {sorted(unknown)}")
    return data


def resolve_config(args) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS[args.command])
    if args.config:
        cfg.update(load_config_file(args.config, args.command))
    for key in DEFAULTS[args.command]:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    return cfg


def _out_dir(args, cfg) -> Path:
    if args.out:
        return Path(args.out)
    root = Path(os.environ.get(ENV_OUT, "runs"))
    tag = hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:10]
    return root / f"{args.command}-{tag}"


def _inputs(cfg) -> dict:
    out = {}
    model = cfg.get("model")
    if isinstance(model, str) and model.startswith("file:"):
        out[model[5:]] = _sha256(model[5:])
    return out


def execute(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    staging = None
    try:
        cfg = resolve_config(args)
        out = _out_dir(args, cfg)
        if out.exists() and any(out.iterdir()) and not args.force:
            raise ConfigError(f"{out} is not empty (use --force to replace it)")
        out.parent.mkdir(parents=True, exist_ok=True)
        staging = out.parent / f".{out.name}.partial-{os.getpid()}"
        shutil.rmtree(staging, ignore_errors=True)
        staging.mkdir()
        inputs = _inputs(cfg)
        summary, files = COMMANDS[args.command](cfg, staging)
        seed = None
        if isinstance(cfg.get("model"), str) and cfg["model"].startswith("random"):
            seed = parse_model(cfg["model"]).seed
        manifest = {
            "format": MANIFEST_FORMAT, "command": args.command, "config": cfg,
            "version": __version__, "seed": seed, "inputs": inputs,
            "outputs": sorted(files), "summary": summary,
            "environment": {"python": platform.python_version(), "numpy": np.__version__},
        }
        _write_json(staging / MANIFEST, manifest)
        if out.exists():
            shutil.rmtree(out)
        os.replace(staging, out)
        staging = None
        print(json.dumps(_jsonable({"out": str(out), "summary": summary}), indent=2))
        return EXIT_OK
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DEGENERATE_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except CONFIG_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UnimodError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    finally:
        if staging is not None:
            shutil.rmtree(staging, ignore_errors=True)


def main():
    sys.exit(execute())


if __name__ == "__main__":
    main()
