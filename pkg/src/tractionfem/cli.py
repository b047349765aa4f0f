"""Command line entry point.

Usage::

    tractionfem run CONFIG.toml
    tractionfem convergence CONFIG.toml
    tractionfem validate-config CONFIG.toml

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 mesh error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import re
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tomli

from . import benchmarks, elasticity, homogenization, mesh as meshmod, rigidbody, solvers
from .elasticity import Material

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_MESH = 0, 2, 3, 4

KINDS = ("sphere", "brick", "rve", "thermal_cube", "spring", "custom")
METHODS = ("regularized", "iterative", "predictor_corrector", "constrained")
_METHOD_CASE = {"regularized": "regularized", "iterative": "iterative",
                "predictor_corrector": "two-step", "constrained": "constrained"}


class ConfigError(ValueError):
    def __init__(self, message, lineno=None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno else message)


# Each entry: key -> (types, default). A default of REQUIRED must be supplied.
REQUIRED = object()
_NUM = (int, float)

_SOLVER = {
    "method": (str, "regularized"),
    "eta_bar": (_NUM, 1.0),
    "eta_schedule": (str, "fixed"),
    "eta_exponent": (_NUM, 0.0),
    "characteristic_length": (_NUM, 1.0),
    "tolerance": (_NUM, 1e-10),
    "max_iterations": (int, 1000),
    "linear_solver": (str, "auto"),
}
_OUTPUT = {"directory": (str, "results"), "prefix": (str, "")}
_MAT_EP = {"young": (_NUM, 1.0), "poisson": (_NUM, 0.3)}

SCHEMAS = {
    "sphere": {
        "mesh": {"radius": (_NUM, 0.5), "levels": (list, [0, 1, 2])},
        "material": _MAT_EP,
        "load": {"C": (_NUM, 2.0), "perturbation": (bool, False)},
        "solver": {**_SOLVER, "eta_schedule": (str, "power"), "eta_exponent": (_NUM, 1.2),
                   "characteristic_length": (_NUM, 0.5)},
    },
    "brick": {
        "mesh": {"element": (str, "hex"), "lengths": (list, [4.0, 1.0, 1.0]),
                 "levels": (list, [0, 1, 2])},
        "material": {"young": (_NUM, 1.0), "poisson": (_NUM, 0.0)},
        "solver": {**_SOLVER, "method": (str, "constrained"), "eta_schedule": (str, "power"),
                   "eta_exponent": (_NUM, 1.2)},
    },
    "rve": {
        "mesh": {"side": (_NUM, 1.0), "k": (list, [1, 2, 3, 4]), "inclusion_radius": (_NUM, 0.2)},
        "material": {"lam": (_NUM, 1.0), "mu": (_NUM, 1.0)},
        "inclusion": {"lam": (_NUM, 1e-4), "mu": (_NUM, 1e-4)},
        "solver": {**_SOLVER, "eta_bar": (_NUM, 1e-2), "eta_schedule": (str, "power"),
                   "eta_exponent": (_NUM, 1.5)},
    },
    "thermal_cube": {
        "mesh": {"side": (_NUM, 1.0), "divisions": (list, [2, 8, 24])},
        "material": {"young": (_NUM, 1.0), "poisson": (_NUM, 0.3), "alpha": (_NUM, 1.0)},
        "solver": {**_SOLVER, "eta_bars": (list, [1.0, 0.1, 0.01])},
    },
    "spring": {
        "spring": {"kappa": (_NUM, 1.0), "f": (_NUM, 1.0), "eta": (_NUM, 0.1)},
    },
    "custom": {
        "mesh": {"path": (str, REQUIRED)},
        "material": _MAT_EP,
        "load": {"body_force": (list, [0.0, 0.0, 0.0]), "pressure": (_NUM, 0.0)},
        "solver": _SOLVER,
    },
}


@dataclass
class RunConfig:
    kind: str
    sections: dict
    source: str = ""

    def __getitem__(self, section):
        return self.sections[section]

    def echo(self) -> str:
        """Fully resolved configuration as TOML."""
        lines = ["[problem]", f"kind = {_toml_value(self.kind)}"]
        for name, values in self.sections.items():
            lines += ["", f"[{name}]"]
            lines += [f"{k} = {_toml_value(v)}" for k, v in values.items()]
        return "\n".join(lines) + "\n"


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return str(v)


def _locate(text):
    """Map ``(section, key)`` and ``section`` to 1-based line numbers."""
    where = {}
    section = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        m = re.match(r"^\[([^\[\]]+)\]$", s)
        if m:
            section = m.group(1).strip()
            where.setdefault(section, n)
            continue
        m = re.match(r"^([A-Za-z0-9_\-]+)\s*=", s)
        if m:
            where.setdefault((section, m.group(1)), n)
    return where


def _type_ok(value, types):
    if types is bool:
        return isinstance(value, bool)
    if isinstance(value, bool):
        return False
    return isinstance(value, types)


def _type_name(types):
    if types is _NUM:
        return "number"
    return types.__name__


def parse_config(text: str) -> RunConfig:
    """Parse and validate a TOML run configuration, materializing defaults."""
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"invalid TOML: {exc}", int(m.group(1)) if m else None) from None
    where = _locate(text)
    problem = data.pop("problem", None)
    if not isinstance(problem, dict) or "kind" not in problem:
        raise ConfigError("missing required key 'kind' in [problem]", where.get("problem"))
    kind = problem["kind"]
    extra = set(problem) - {"kind"}
    if extra:
        key = sorted(extra)[0]
        raise ConfigError(f"unknown key '{key}' in [problem]", where.get(("problem", key)))
    if kind not in KINDS:
        raise ConfigError(f"unknown problem kind {kind!r}; allowed: {', '.join(KINDS)}",
                          where.get(("problem", "kind")))
    schema = SCHEMAS[kind]
    full = {**schema, "output": _OUTPUT}
    sections = {}
    for name in data:
        if name not in full:
            raise ConfigError(f"unknown section [{name}] for kind {kind!r}", where.get(name))
    for name, keys in full.items():
        given = data.get(name, {})
        if not isinstance(given, dict):
            raise ConfigError(f"[{name}] must be a table", where.get((None, name)))
        for key in given:
            if key not in keys:
                raise ConfigError(f"unknown key '{key}' in [{name}]", where.get((name, key)))
        resolved = {}
        for key, (types, default) in keys.items():
            if key in given:
                value = given[key]
                if not _type_ok(value, types):
                    raise ConfigError(
                        f"'{key}' in [{name}] must be a {_type_name(types)}, got {type(value).__name__}",
                        where.get((name, key)))
                if types is _NUM:
                    value = float(value)
            elif default is REQUIRED:
                raise ConfigError(f"missing required key '{key}' in [{name}]", where.get(name))
            else:
                value = list(default) if isinstance(default, list) else default
            resolved[key] = value
        sections[name] = resolved
    cfg = RunConfig(kind, sections, text)
    _check_values(cfg, where)
    return cfg


def _check_values(cfg: RunConfig, where):
    s = cfg.sections
    if "solver" in s:
        sv = s["solver"]
        if sv["method"] not in METHODS:
            raise ConfigError(f"unknown method {sv['method']!r}; allowed: {', '.join(METHODS)}",
                              where.get(("solver", "method")))
        if sv["eta_schedule"] not in solvers.SCHEDULES:
            raise ConfigError(f"eta_schedule must be one of {solvers.SCHEDULES}",
                              where.get(("solver", "eta_schedule")))
        if sv["linear_solver"] not in solvers.LINEAR_SOLVERS:
            raise ConfigError(f"linear_solver must be one of {solvers.LINEAR_SOLVERS}",
                              where.get(("solver", "linear_solver")))
        try:
            _solver_config(cfg)
        except ValueError as exc:
            raise ConfigError(str(exc), where.get("solver")) from None
    if cfg.kind in ("rve", "thermal_cube") and s["solver"]["method"] != "regularized":
        raise ConfigError(f"kind {cfg.kind!r} supports only the regularized method",
                          where.get(("solver", "method")))
    if cfg.kind == "brick" and s["mesh"]["element"] not in ("hex", "tet"):
        raise ConfigError("element must be 'hex' or 'tet'", where.get(("mesh", "element")))
    if cfg.kind == "sphere" and s["load"]["perturbation"] and s["solver"]["method"] == "iterative":
        raise ConfigError("the iterative method requires an equilibrated load",
                          where.get(("load", "perturbation")))
    for sec, key in (("mesh", "levels"), ("mesh", "k"), ("mesh", "divisions")):
        if sec in s and key in s[sec]:
            v = s[sec][key]
            if not v or not all(isinstance(x, int) and not isinstance(x, bool) for x in v):
                raise ConfigError(f"'{key}' must be a non-empty list of integers", where.get((sec, key)))
    for sec, key, n in (("mesh", "lengths", 3), ("load", "body_force", 3)):
        if sec in s and key in s[sec]:
            v = s[sec][key]
            if len(v) != n or not all(_type_ok(x, _NUM) for x in v):
                raise ConfigError(f"'{key}' must be a list of {n} numbers", where.get((sec, key)))


def _solver_config(cfg: RunConfig) -> solvers.SolverConfig:
    sv = cfg["solver"]
    return solvers.SolverConfig(
        eta_bar=float(sv["eta_bar"]), eta_schedule=sv["eta_schedule"],
        eta_exponent=float(sv["eta_exponent"]),
        characteristic_length=float(sv["characteristic_length"]),
        tolerance=float(sv["tolerance"]), max_iterations=int(sv["max_iterations"]),
        linear_solver=sv["linear_solver"])


def _material(section) -> Material:
    if "lam" in section:
        return Material(float(section["lam"]), float(section["mu"]))
    return Material.from_young(float(section["young"]), float(section["poisson"]),
                               float(section.get("alpha", 0.0)))


# --------------------------------------------------------------------------- runners


def _study_case(cfg: RunConfig) -> str:
    method = _METHOD_CASE[cfg["solver"]["method"]]
    if cfg.kind == "sphere":
        prefix = "sphere-perturbed" if cfg["load"]["perturbation"] else "sphere"
        return f"{prefix}-{method}"
    return f"brick-{cfg['mesh']['element']}-{method}"


def _iteration_csv(study: benchmarks.StudyResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["h", "iteration", "residual"])
    for row, rep in zip(study.rows, study.reports):
        for i, r in enumerate(rep.residual_history):
            w.writerow([f"{row['h']:.10e}", i, f"{r:.10e}"])
    return buf.getvalue()


def _run_study(cfg: RunConfig):
    sv = _solver_config(cfg)
    case = _study_case(cfg)
    levels = tuple(cfg["mesh"]["levels"])
    if cfg.kind == "sphere":
        params = benchmarks.SphereParams(float(cfg["mesh"]["radius"]), float(cfg["load"]["C"]),
                                         _material(cfg["material"]))
        study = benchmarks.convergence_study(case, levels, sv, sphere=params, fit=len(levels) > 1)
    else:
        params = benchmarks.BrickParams(tuple(float(v) for v in cfg["mesh"]["lengths"]),
                                        _material(cfg["material"]))
        study = benchmarks.convergence_study(case, levels, sv, brick=params, fit=len(levels) > 1)
    files = {"": study.to_csv()}
    if cfg["solver"]["method"] == "iterative":
        files["_iterations"] = _iteration_csv(study)
    summary = f"{case}: H1 rate {study.rate:.4f}" if study.rate is not None else case
    return files, summary, study


def _rows_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(benchmarks.SOLVER_COLUMNS)
    for r in rows:
        w.writerow([benchmarks._fmt(r[c]) for c in benchmarks.SOLVER_COLUMNS])
    return buf.getvalue()


def _run_rve(cfg: RunConfig):
    m = cfg["mesh"]
    rows = homogenization.rve_table(
        ks=tuple(m["k"]), side=float(m["side"]), radius=float(m["inclusion_radius"]),
        matrix=_material(cfg["material"]), inclusion=_material(cfg["inclusion"]),
        config=_solver_config(cfg))
    worst = max(r[5] for r in rows)
    return {"": homogenization.rve_csv(rows)}, f"rve: max deviation {worst:.3f}%", rows


def _run_thermal(cfg: RunConfig):
    m = cfg["mesh"]
    sv = cfg["solver"]
    rows = benchmarks.thermal_zero_stress_case(
        divisions=tuple(m["divisions"]), eta_bars=tuple(float(v) for v in sv["eta_bars"]),
        side=float(m["side"]), material=_material(cfg["material"]),
        linear_solver=sv["linear_solver"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["divisions", "h", "eta_bar", "normalized_energy"])
    for n, h, eb, e in rows:
        w.writerow([n, f"{h:.10e}", f"{eb:.10e}", f"{e:.10e}"])
    return {"": buf.getvalue()}, f"thermal_cube: finest/coarsest {rows[-1][3] / rows[0][3]:.4e}", rows


def _run_spring(cfg: RunConfig):
    s = cfg["spring"]
    chain = benchmarks.SpringChain(float(s["kappa"]), float(s["f"]))
    eta = float(s["eta"])
    res = benchmarks.spring_chain_suite(chain, eta)
    num = np.linalg.solve(res.K + eta * np.eye(4), chain.load())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node", "u_lambda", "u_eta_closed", "u_eta_solved"])
    for i in range(4):
        w.writerow([i + 1, f"{res.u_lambda[i]:.17g}", f"{res.u_eta[i]:.17g}", f"{num[i]:.17g}"])
    w.writerow(["error_norm", "", f"{res.error_norm:.17g}",
                f"{np.linalg.norm(num - res.u_lambda):.17g}"])
    return {"": buf.getvalue()}, f"spring: error norm {res.error_norm:.6e}", res


def _run_custom(cfg: RunConfig):
    m = meshmod.read_mesh(cfg["mesh"]["path"])
    mat = _material(cfg["material"])
    system = elasticity.assemble_system(m, mat)
    bf = np.asarray(cfg["load"]["body_force"], dtype=float)
    F = elasticity.assemble_body_load(m, lambda x: np.broadcast_to(bf, x.shape).copy())
    p = float(cfg["load"]["pressure"])
    if p:
        F += elasticity.assemble_traction_load(m, [(None, lambda x, n: -p * n)])
    basis = rigidbody.build_rigid_basis(m, system.M)
    sv = _solver_config(cfg)
    method = cfg["solver"]["method"]
    if method == "constrained":
        raise ConfigError("custom meshes support the regularized, iterative and "
                          "predictor_corrector methods")
    solve = {"regularized": solvers.solve_regularized, "iterative": solvers.solve_iterative,
             "predictor_corrector": solvers.solve_predictor_corrector}[method]
    rep = solve(system.K, system.M, F, sv, h=m.h, mu=mat.mu, basis=basis)
    row = {"case": f"custom-{method}", "h": m.h, "eta_bar": sv.effective_eta_bar(m.h),
           "dofs": m.n_dofs, "iters": rep.iterations, "resid": rep.residual,
           "mean_u": rep.mean_u, "mom_u": rep.mom_u, "energy": rep.energies.stored,
           "h1_err": float("nan"), "l2_err": float("nan")}
    return {"": _rows_csv([row])}, f"custom: {rep.iterations} iterations", rep


RUNNERS = {"sphere": _run_study, "brick": _run_study, "rve": _run_rve,
           "thermal_cube": _run_thermal, "spring": _run_spring, "custom": _run_custom}


def run(cfg: RunConfig, out_dir=None, stream=None):
    """Execute ``cfg`` and write ``<prefix>.csv`` plus the resolved-config echo."""
    stream = sys.stdout if stream is None else stream
    files, summary, result = RUNNERS[cfg.kind](cfg)
    out = Path(out_dir if out_dir is not None else cfg["output"]["directory"])
    out.mkdir(parents=True, exist_ok=True)
    prefix = cfg["output"]["prefix"] or cfg.kind
    written = []
    for suffix, content in files.items():
        path = out / f"{prefix}{suffix}.csv"
        path.write_text(content)
        written.append(path)
    echo = out / f"{prefix}_config.toml"
    echo.write_text(cfg.echo())
    print(summary, file=stream)
    for p in written + [echo]:
        print(f"wrote {p}", file=stream)
    return result


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tractionfem",
                                     description="Finite elements for pure traction problems")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "run a configured problem"),
                        ("convergence", "run a refinement study and report the H1 rate"),
                        ("validate-config", "check a configuration and echo it resolved")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", type=Path)
        if name != "validate-config":
            p.add_argument("-o", "--output", type=Path, default=None,
                           help="output directory (overrides [output] directory)")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        text = args.config.read_text()
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(text)
        if args.command == "validate-config":
            sys.stdout.write(cfg.echo())
            return EXIT_OK
        if args.command == "convergence":
            if cfg.kind not in ("sphere", "brick"):
                raise ConfigError(f"convergence studies need kind sphere or brick, got {cfg.kind!r}")
            if len(cfg["mesh"]["levels"]) < 2:
                raise ConfigError("convergence studies need at least two levels",
                                  _locate(text).get(("mesh", "levels")))
        run(cfg, args.output)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (meshmod.MeshError, OSError) as exc:
        print(f"mesh error: {exc}", file=sys.stderr)
        return EXIT_MESH
    except (solvers.SolverError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
