"""Command-line front end.

Usage::

    fbsurf COMMAND [--config FILE] [--set key=value ...] [flags]

Commands: validate, eig, sweep, solve-prism, solve-product, export.  The
config file is flat ``key = value`` text; flags and ``--set`` override file
values and unknown keys are rejected.  ``FBSURF_OUTPUT_DIR`` overrides the
output directory.  Exit codes: 0 success, 2 configuration or validation
error, 3 solver failure, 4 residual gate failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import os
import sys
import time
import warnings
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import FBSurfError, ResidualGateError, SolverError, ValidationError
from .harmonic import BasisSpec
from .moduli import ModuliPoint, annulus_domain, build_planar_model, cap_domain, validate

COMMANDS = ("validate", "eig", "sweep", "solve-prism", "solve-product", "export")
OUTPUT_ENV = "FBSURF_OUTPUT_DIR"
GATE_TOL = 1e-4
CONSTRAINT_TOL = 1e-6

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_GATE = 0, 2, 3, 4


class ConfigError(ValidationError):
    pass


def _triple(text):
    vals = [float(v) for v in str(text).replace(",", " ").split()]
    if len(vals) != 3:
        raise ConfigError(f"expected three numbers, got {text!r}")
    return tuple(vals)


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


@dataclass
class RunConfig:
    command: str = "validate"
    r: tuple | None = None
    a: tuple = (1.0, 1.0, 1.0)
    order: int = 32
    modes: int = 24
    tol: float = 1e-9
    gtol: float = 1e-6
    output: str = "fbsurf-out"
    scale_half: bool = False
    seed: int = 0
    domain: str = "model"
    eps: float = 0.3
    cap_radius: float = 0.5
    group: int = 1
    sector: str = "all"
    k: int = 3
    metric: str = "sphere"
    grid: int = 11
    grid_lo: float = 0.02
    grid_hi: float = math.pi / 4 - 0.02
    sweep_kind: str = "cube"
    sweep_value: str = "E"
    strategy: str = "diagonal"
    start: tuple | None = None
    mesh_h: float = 0.04
    starts: int = 8
    result: str = ""
    kind: str = "prism"
    gate: bool = True

    _types = {
        "r": _triple, "a": _triple, "start": _triple, "order": int, "modes": int, "tol": float,
        "gtol": float, "output": str, "scale_half": _bool, "seed": int, "domain": str,
        "eps": float, "cap_radius": float, "group": int, "sector": str, "k": int, "metric": str,
        "grid": int, "grid_lo": float, "grid_hi": float, "sweep_kind": str, "sweep_value": str,
        "strategy": str, "mesh_h": float, "starts": int, "result": str, "command": str,
        "kind": str, "gate": _bool,
    }

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    def update(self, mapping: dict) -> None:
        for key, value in mapping.items():
            key = key.strip().replace("-", "_")
            if key not in self.keys():
                raise ConfigError(f"unknown configuration key {key!r}")
            try:
                setattr(self, key, self._types[key](value) if isinstance(value, str) else value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None

    def check(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if any(not (x > 0 and math.isfinite(x)) for x in self.a):
            raise ConfigError("prism half-sides must be positive")
        if self.order < 4 or self.modes < 2 or self.modes > self.order:
            raise ConfigError("need 2 <= modes <= order and order >= 4")
        if self.domain not in ("model", "annulus", "cap"):
            raise ConfigError(f"unknown domain {self.domain!r}")
        if self.strategy not in ("diagonal", "newton", "minmax"):
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.sweep_kind not in ("cube", "diagonal"):
            raise ConfigError(f"unknown sweep_kind {self.sweep_kind!r}")
        if self.kind not in ("prism", "product"):
            raise ConfigError(f"unknown kind {self.kind!r}")
        if self.sweep_value not in ("E", "Ehat"):
            raise ConfigError(f"unknown sweep_value {self.sweep_value!r}")
        if self.r is not None:
            validate(ModuliPoint(*self.r))

    @property
    def cfg(self):
        from .prism import PrismConfig
        return PrismConfig(*self.a)

    @property
    def basis(self) -> BasisSpec:
        return BasisSpec(self.order)

    def out_dir(self) -> Path:
        d = Path(os.environ.get(OUTPUT_ENV) or self.output)
        d.mkdir(parents=True, exist_ok=True)
        return d


def read_config(path) -> dict:
    """Flat ``key = value`` file (``#`` comments) as a dict of strings."""
    text = Path(path).read_text()
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return dict(cp["run"])


# ---------------------------------------------------------------------------
# output helpers


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    """JSON with every float written to 17 significant digits."""
    def enc(o):
        if isinstance(o, bool) or o is None:
            return json.dumps(o)
        if isinstance(o, float):
            return fmt(o) if math.isfinite(o) else "null"
        if isinstance(o, int):
            return str(o)
        if isinstance(o, str):
            return json.dumps(o)
        if isinstance(o, dict):
            return "{" + ", ".join(f"{json.dumps(k)}: {enc(v)}" for k, v in o.items()) + "}"
        if isinstance(o, list):
            return "[" + ", ".join(enc(v) for v in o) + "]"
        raise TypeError(f"cannot serialize {type(o).__name__}")
    return enc(_jsonable(obj))


def write_csv(path, header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    text = buf.getvalue()
    Path(path).write_text(text)
    return text


# ---------------------------------------------------------------------------
# commands


def cmd_validate(rc: RunConfig, out) -> int:
    if rc.r is None:
        raise ConfigError("validate needs r = r1, r2, r3")
    p = ModuliPoint(*rc.r)
    model = build_planar_model(p)
    out.write(dumps({"r": list(p.r), "valid": True, "margin": p.boundary_margin(),
                     "circles": model.circle_list()}) + "\n")
    return EXIT_OK


def eig_rows(rc: RunConfig):
    """(i, sector, k, sigma, sigma_L) rows for the configured problem."""
    from .steklov import ALL_SECTORS, BoundaryMetric, dtn_matrix, sn_eigen
    if rc.domain == "model":
        if rc.r is None:
            raise ConfigError("eig on the canonical model needs r")
        dom = build_planar_model(ModuliPoint(*rc.r))
        i = rc.group
        circles = tuple(dom.group_indices(i))
    else:
        dom = annulus_domain(rc.eps) if rc.domain == "annulus" else cap_domain(rc.cap_radius)
        i = 0
        circles = (0,)
    if rc.metric == "sphere":
        metric = BoundaryMetric.sphere(dom, circles)
    elif rc.metric == "plane":
        metric = BoundaryMetric.plane(dom, circles)
    else:
        raise ConfigError(f"unknown metric {rc.metric!r}")
    full = dtn_matrix(dom, circles, "full", rc.modes, rc.basis, rc.tol)
    if rc.sector == "all":
        sectors = ["full"] + ([str(s) for s in ALL_SECTORS] if rc.domain == "model" else [])
    else:
        sectors = [rc.sector]
    rows = []
    for s in sectors:
        for res in sn_eigen(dom, circles, metric, s, rc.k, rc.modes, rc.basis, dtn=full):
            rows.append((i, s, res.index, res.sigma, res.sigma_L))
    return rows


def cmd_eig(rc: RunConfig, out) -> int:
    rows = eig_rows(rc)
    text = write_csv(rc.out_dir() / "eig.csv", ("i", "sector", "k", "sigma", "sigma_L"), rows)
    out.write(text)
    return EXIT_OK


def sweep_points(rc: RunConfig):
    vals = np.linspace(rc.grid_lo, rc.grid_hi, rc.grid)
    if rc.sweep_kind == "diagonal":
        return [(float(t), float(t), float(t)) for t in vals]
    return [(float(x), float(y), float(z)) for x in vals for y in vals for z in vals]


def sweep_rows(rc: RunConfig):
    from .prism import energy_and_gradient
    from .ballprod import conformal_max_value
    rows = []
    for r in sweep_points(rc):
        try:
            p = ModuliPoint(*r)
            if rc.sweep_value == "E":
                E, g = energy_and_gradient(p, rc.cfg, rc.basis)
                rows.append((*r, E, *g, ""))
            else:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    v = conformal_max_value(p, rc.cfg, rc.modes, rc.seed, rc.basis, rc.starts)
                rows.append((*r, v, ""))
        except FBSurfError as exc:
            nan = [math.nan] * (4 if rc.sweep_value == "E" else 1)
            rows.append((*r, *nan, type(exc).__name__ + ": " + str(exc).replace("\n", " ")))
    return rows


def cmd_sweep(rc: RunConfig, out) -> int:
    rows = sweep_rows(rc)
    if rc.sweep_value == "E":
        header = ("r1", "r2", "r3", "E", "dE1", "dE2", "dE3", "error")
    else:
        header = ("r1", "r2", "r3", "E_hat", "error")
    write_csv(rc.out_dir() / "sweep.csv", header, rows)
    out.write(f"wrote {len(rows)} rows to {rc.out_dir() / 'sweep.csv'}\n")
    return EXIT_OK


def prism_gates(res: dict) -> list[str]:
    failed = []
    for key in ("hopf", "orthogonality", "eigenfunction", "g_symmetry", "permutation"):
        if not res[key] < GATE_TOL:
            failed.append(f"{key} = {res[key]:.3e}")
    if res["distinct_faces"] != 6:
        failed.append(f"boundary loops meet {res['distinct_faces']} faces")
    if not res["face_margin"] > 0:
        failed.append(f"face margin {res['face_margin']:.3e}")
    return failed


def _write_surface(surf, stem: Path, scale_half: bool):
    s = surf.scaled(0.5) if scale_half else surf
    s.to_obj(stem.with_suffix(".obj"))
    s.to_ply(stem.with_suffix(".ply"))
    return [str(stem.with_suffix(".obj")), str(stem.with_suffix(".ply"))]


def run_prism(rc: RunConfig, out, search: bool = True) -> int:
    from .prism import assemble_surface, find_critical_point, write_log
    d = rc.out_dir()
    if search:
        cp = find_critical_point(rc.cfg, rc.strategy, rc.start, rc.basis, rc.gtol)
        write_log(d / "search.jsonl", cp.log)
        p, info = cp.p, cp.to_dict()
    else:
        if rc.r is None:
            raise ConfigError("export needs r or result")
        p, info = ModuliPoint(*rc.r), {"p": list(rc.r)}
    surf = assemble_surface(p, rc.cfg, rc.mesh_h, order=rc.order,
                            gtol=rc.gtol if rc.gate else math.inf)
    files = _write_surface(surf, d / "prism_surface", rc.scale_half)
    result = {"command": rc.command, "a": list(rc.a), **info, "order": rc.order,
              "residuals": surf.residuals, "topology": {"genus": surf.topology.genus,
                                                        "boundary_loops": surf.topology.boundary_loops,
                                                        "euler": surf.topology.euler},
              "scale_half": rc.scale_half, "files": files}
    failed = prism_gates(surf.residuals) if rc.gate else []
    result["gates_passed"] = not failed
    (d / "result.json").write_text(dumps(result) + "\n")
    out.write(dumps(result) + "\n")
    if failed:
        raise ResidualGateError("; ".join(failed))
    return EXIT_OK


def run_product(rc: RunConfig, out, search: bool = True) -> int:
    from .ballprod import assemble_product_surface, maximize_over_moduli, write_log
    d = rc.out_dir()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if search:
            log = []
            grid = None if rc.start is None else [rc.start]
            mx = maximize_over_moduli(rc.cfg, grid, rc.modes, seed=rc.seed, starts=rc.starts, log=log)
            write_log(d / "search.jsonl", log)
            p, info = mx.p, mx.to_dict()
        else:
            if rc.r is None:
                raise ConfigError("export needs r or result")
            p, info = ModuliPoint(*rc.r), {"p": list(rc.r)}
        ps = assemble_product_surface(p, rc.cfg, rc.mesh_h, rc.modes, rc.seed, gate=rc.gate)
    stem = d / "product_surface"
    sample = ps.sample.scaled(0.5) if rc.scale_half else ps.sample
    sample.to_ply(stem.with_suffix(".ply"))
    result = {"command": rc.command, "a": list(rc.a), **info, **ps.to_dict(),
              "files": [str(stem.with_suffix(".ply"))]}
    failed = []
    if rc.gate and not ps.residuals["sphere_constraint"] < CONSTRAINT_TOL:
        failed.append(f"sphere constraint {ps.residuals['sphere_constraint']:.3e}")
    result["gates_passed"] = not failed
    (d / "result.json").write_text(dumps(result) + "\n")
    out.write(dumps(result) + "\n")
    if failed:
        raise ResidualGateError("; ".join(failed))
    return EXIT_OK


def cmd_export(rc: RunConfig, out) -> int:
    """Re-assemble meshes from a result file (``result``) or a given point ``r``."""
    kind = rc.kind
    if rc.result:
        data = json.loads(Path(rc.result).read_text())
        rc.r = tuple(data["p"])
        rc.a = tuple(data.get("a", rc.a))
        kind = "product" if "E_hat" in data or "ranks" in data else "prism"
    if kind == "prism":
        return run_prism(rc, out, search=False)
    return run_product(rc, out, search=False)


HANDLERS = {
    "validate": cmd_validate,
    "eig": cmd_eig,
    "sweep": cmd_sweep,
    "solve-prism": lambda rc, out: run_prism(rc, out),
    "solve-product": lambda rc, out: run_product(rc, out),
    "export": cmd_export,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fbsurf", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="flat key = value configuration file")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override any configuration key (repeatable)")
    for key in ("r", "a", "start"):
        ap.add_argument(f"--{key}", help="three numbers, comma separated")
    for key in ("order", "modes", "seed", "group", "k", "grid", "starts"):
        ap.add_argument(f"--{key}", type=int)
    for key in ("tol", "gtol", "eps", "cap-radius", "mesh-h"):
        ap.add_argument(f"--{key}", type=float)
    for key in ("output", "domain", "sector", "metric", "strategy", "sweep-kind", "sweep-value",
                "result", "kind"):
        ap.add_argument(f"--{key}")
    ap.add_argument("--scale-half", action="store_true", default=None,
                    help="emit the prism scaled by 1/2")
    ap.add_argument("--no-gate", dest="gate", action="store_false", default=None,
                    help="report residual gates without enforcing them")
    return ap


def make_config(argv) -> RunConfig:
    args = build_parser().parse_args(argv)
    rc = RunConfig()
    if args.config:
        rc.update(read_config(args.config))
    rc.command = args.command
    flags = {k: v for k, v in vars(args).items()
             if k not in ("command", "config", "set") and v is not None}
    rc.update({k: (str(v) if k in ("r", "a", "start") else v) for k, v in flags.items()})
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        rc.update({k: v})
    rc.check()
    return rc


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    t0 = time.time()
    try:
        rc = make_config(argv)
        code = HANDLERS[rc.command](rc, out)
    except SystemExit as exc:       # argparse usage errors
        return EXIT_CONFIG if exc.code else EXIT_OK
    except ValidationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResidualGateError as exc:
        print(f"residual gate failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_GATE
    except (SolverError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"done in {time.time() - t0:.1f} s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
