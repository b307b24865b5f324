"""Batch front end: JSON-configured scenarios and experiment drivers.

Subcommands:

* ``simulate``       one scenario -> CSV ledger, VTK snapshots, JSON summary
* ``convergence``    tau sweep over one or more meshes -> energy-balance
                     errors per run and a log-log slope per mesh
* ``oracle-compare`` linearized explicit vs implicit minimizing-movement
                     trajectories on a desk mesh -> deviation table and order

Configs are JSON and validated against a published schema; named presets
("jello", "convergence", "uniaxial") provide complete parameter blocks that
user keys override.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import oracle
from .assembly import LoadSpec, assemble_mass, constrained_dofs
from .fem import DeformationField, P2Space
from .linsolve import SolverConfig
from .material import MaterialParams
from .mesh import BoxSpec, build_box_mesh
from .stepper import (EnergyLedger, Scenario, ZeroDissipationError,
                      energy_dissipation_error, fit_convergence_slope, run)

_NUMBER = {"type": "number"}
_VEC3 = {"type": "array", "items": _NUMBER, "minItems": 3, "maxItems": 3}
_MAT3 = {"type": "array", "minItems": 3, "maxItems": 3,
         "items": _VEC3}
_DIV3 = {"type": "array", "items": {"type": "integer", "minimum": 1},
         "minItems": 3, "maxItems": 3}

_MESH_SCHEMA = {
    "type": "object",
    "properties": {"lower": _VEC3, "upper": _VEC3, "divisions": _DIV3},
    "required": ["lower", "upper", "divisions"],
    "additionalProperties": False,
}
_MATERIAL_SCHEMA = {
    "type": "object",
    "properties": {
        "mu": {"type": "number", "exclusiveMinimum": 0},
        "lambda": {"type": "number", "minimum": 0},
        "c": {"type": "number", "exclusiveMinimum": 0},
    },
    "required": ["mu", "lambda", "c"],
    "additionalProperties": False,
}
_LOADS_SCHEMA = {
    "type": "object",
    "properties": {
        "body_force": _VEC3,
        "traction": {"type": "object", "additionalProperties": _VEC3},
        "dirichlet": {"type": "object",
                      "additionalProperties": {
                          "anyOf": [{"const": "reference"}, _VEC3]}},
    },
    "additionalProperties": False,
}
_SOLVER_SCHEMA = {
    "type": "object",
    "properties": {
        "shift_delta": {"type": "number", "exclusiveMinimum": 0},
        "tolerance": {"type": "number", "exclusiveMinimum": 0},
        "max_iterations": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}
_INITIAL_SCHEMA = {
    "anyOf": [
        {"enum": ["identity", "uniaxial"]},
        {"type": "object", "properties": {"affine": _MAT3},
         "required": ["affine"], "additionalProperties": False},
    ]
}

SCENARIO_SCHEMA = {
    "type": "object",
    "properties": {
        "preset": {"enum": ["jello", "convergence", "uniaxial"]},
        "mesh": _MESH_SCHEMA,
        "material": _MATERIAL_SCHEMA,
        "loads": _LOADS_SCHEMA,
        "initial_condition": _INITIAL_SCHEMA,
        "tau": {"type": "number", "exclusiveMinimum": 0},
        "T": {"type": "number", "exclusiveMinimum": 0},
        "snapshot_every": {"type": "integer", "minimum": 0},
        "solver": _SOLVER_SCHEMA,
        "outputs": {"type": "string"},
    },
    "required": ["mesh", "material", "tau", "T"],
    "additionalProperties": False,
}

CONVERGENCE_SCHEMA = {
    "type": "object",
    "properties": {
        "preset": {"enum": ["convergence", "uniaxial"]},
        "mesh": _MESH_SCHEMA,
        "meshes": {"type": "array", "items": _DIV3, "minItems": 1},
        "material": _MATERIAL_SCHEMA,
        "initial_condition": _INITIAL_SCHEMA,
        "taus": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                 "minItems": 1},
        "T": {"type": "number", "exclusiveMinimum": 0},
        "solver": _SOLVER_SCHEMA,
        "outputs": {"type": "string"},
    },
    "required": ["taus"],
    "additionalProperties": False,
}

ORACLE_SCHEMA = {
    "type": "object",
    "properties": {
        "mesh": _MESH_SCHEMA,
        "material": _MATERIAL_SCHEMA,
        "loads": _LOADS_SCHEMA,
        "initial_condition": _INITIAL_SCHEMA,
        "taus": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                 "minItems": 1},
        "T": {"type": "number", "exclusiveMinimum": 0},
        "schemes": {"type": "array", "minItems": 2, "maxItems": 2,
                    "items": {"enum": ["linearized_explicit", "nonlinear_implicit"]}},
        "newton": {
            "type": "object",
            "properties": {
                "max_iterations": {"type": "integer", "minimum": 1},
                "gradient_tolerance": {"type": "number", "exclusiveMinimum": 0},
                "backtrack_factor": {"type": "number", "exclusiveMinimum": 0,
                                     "exclusiveMaximum": 1},
                "armijo": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "solver": _SOLVER_SCHEMA,
        "outputs": {"type": "string"},
    },
    "required": ["taus"],
    "additionalProperties": False,
}

_UNIAXIAL_STRETCH = [[1.2, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]

PRESETS = {
    "jello": {
        "mesh": {"lower": [-1.0, -1.0, -0.5], "upper": [1.0, 1.0, 0.5],
                 "divisions": [6, 6, 3]},
        "material": {"mu": 1.0e3, "lambda": 1.5e3, "c": 3.0e3},
        "loads": {"body_force": [0.0, 0.0, -2.0e3],
                  "dirichlet": {"z+": "reference"}},
        "initial_condition": "identity",
        "tau": 0.01,
        "T": 3.0,
    },
    "convergence": {
        "mesh": {"lower": [-1.0, -1.0, -1.0], "upper": [1.0, 1.0, 1.0],
                 "divisions": [6, 6, 6]},
        "material": {"mu": 1.0e3, "lambda": 1.5e3, "c": 3.0e3},
        "loads": {},
        "initial_condition": "uniaxial",
        "tau": 0.01,
        "T": 1.0,
    },
    "uniaxial": {
        "mesh": {"lower": [-1.0, -1.0, -1.0], "upper": [1.0, 1.0, 1.0],
                 "divisions": [6, 6, 6]},
        "material": {"mu": 1.0e3, "lambda": 1.5e3, "c": 3.0e3},
        "loads": {},
        "initial_condition": "uniaxial",
        "tau": 0.01,
        "T": 1.0,
    },
}


class ConfigError(ValueError):
    """Schema violations, one message per offending field path."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config:\n" + "\n".join(self.problems))


def load_config(path, schema) -> dict:
    """Read JSON, merge a preset if named, and validate against the schema."""
    import jsonschema

    try:
        with open(path) as f:
            cfg = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError([f"$: cannot read config: {e}"])
    if not isinstance(cfg, dict):
        raise ConfigError(["$: config must be a JSON object"])
    preset = cfg.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError([f"$.preset: unknown preset {preset!r}"])
        merged = json.loads(json.dumps(PRESETS[preset]))
        merged.update({k: v for k, v in cfg.items()})
        cfg = merged
    validator = jsonschema.Draft202012Validator(schema)
    problems = [f"$.{'.'.join(str(p) for p in err.absolute_path) or ''}: {err.message}"
                for err in sorted(validator.iter_errors(cfg), key=str)]
    if problems:
        raise ConfigError(problems)
    return cfg


def _initial_matrix(spec) -> np.ndarray | None:
    if spec is None or spec == "identity":
        return None
    if spec == "uniaxial":
        return np.array(_UNIAXIAL_STRETCH)
    return np.array(spec["affine"], dtype=float)


def _material(cfg) -> MaterialParams:
    m = cfg["material"]
    return MaterialParams(mu=m["mu"], lam=m["lambda"], c=m["c"])


def _loads(cfg) -> LoadSpec:
    l = cfg.get("loads", {})
    return LoadSpec(
        body_force=tuple(l.get("body_force", (0.0, 0.0, 0.0))),
        traction={k: tuple(v) for k, v in l.get("traction", {}).items()},
        dirichlet=dict(l.get("dirichlet", {})),
    )


def _solver(cfg) -> SolverConfig:
    s = cfg.get("solver", {})
    return SolverConfig(**s)


def build_scenario(cfg: dict, output_dir: str | None = None) -> Scenario:
    mesh = cfg["mesh"]
    return Scenario(
        box=BoxSpec(lower=tuple(mesh["lower"]), upper=tuple(mesh["upper"]),
                    divisions=tuple(mesh["divisions"])),
        material=_material(cfg),
        loads=_loads(cfg),
        initial_matrix=_initial_matrix(cfg.get("initial_condition")),
        tau=cfg["tau"],
        T=cfg["T"],
        snapshot_every=cfg.get("snapshot_every", 0),
        solver=_solver(cfg),
        output_dir=output_dir if output_dir is not None else cfg.get("outputs"),
    )


def _write_summary(out_dir, summary: dict) -> None:
    if out_dir:
        import os
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "summary.json"), "w") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
            f.write("\n")


def run_scenario(config_path, output_dir=None, threads=1, seed=0) -> int:
    """Execute one scenario config; returns a process exit status."""
    del threads  # a single scenario runs serially for bit-reproducible output
    try:
        cfg = load_config(config_path, SCENARIO_SCHEMA)
        scenario = build_scenario(cfg, output_dir)
        scenario.step_count()
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    summary, ledger = run(scenario)
    summary["seed"] = seed
    _write_summary(scenario.output_dir, summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _convergence_runs(cfg, output_dir):
    base = dict(PRESETS["convergence"])
    base.update(cfg)
    meshes = cfg.get("meshes")
    if meshes is None:
        meshes = [base["mesh"]["divisions"]]
    scenarios = []
    for divisions in meshes:
        for tau in cfg["taus"]:
            scfg = json.loads(json.dumps(base))
            scfg["mesh"]["divisions"] = list(divisions)
            scfg["tau"] = tau
            scfg.pop("taus", None)
            scfg.pop("meshes", None)
            scfg.pop("preset", None)
            scfg.pop("outputs", None)
            scenario = build_scenario(scfg, output_dir=None)
            scenario.step_count()
            scenarios.append((tuple(divisions), tau, scenario))
    return scenarios


def run_convergence_study(config_path, output_dir=None, threads=1, seed=0) -> int:
    """Sweep taus (and meshes); report e_quadratic, e_printed, and slopes."""
    try:
        cfg = load_config(config_path, CONVERGENCE_SCHEMA)
        out = output_dir if output_dir is not None else cfg.get("outputs")
        runs = _convergence_runs(cfg, out)
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    def one(job):
        divisions, tau, scenario = job
        _, ledger = run(scenario)
        try:
            e_quad, e_printed = energy_dissipation_error(ledger)
        except ZeroDissipationError:
            e_quad = e_printed = float("nan")
        return divisions, tau, e_quad, e_printed, ledger

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, runs))
    else:
        results = [one(job) for job in runs]

    rows = []
    by_mesh: dict[tuple, list] = {}
    last_ledger = None
    for divisions, tau, e_quad, e_printed, ledger in results:
        rows.append((divisions, tau, e_quad, e_printed))
        by_mesh.setdefault(divisions, []).append((tau, e_quad))
        last_ledger = ledger

    slopes = {}
    for divisions, pts in by_mesh.items():
        usable = [(t, e) for t, e in pts if np.isfinite(e) and e > 0]
        if len(usable) >= 2:
            slopes["x".join(str(d) for d in divisions)] = fit_convergence_slope(usable)
        else:
            slopes["x".join(str(d) for d in divisions)] = None

    report_lines = ["mesh,tau,e_quadratic,e_printed"]
    for divisions, tau, e_quad, e_printed in rows:
        name = "x".join(str(d) for d in divisions)
        report_lines.append(f"{name},{tau:.17g},{e_quad:.17g},{e_printed:.17g}")

    summary = {
        "slopes": slopes,
        "slope": next((s for s in reversed(list(slopes.values())) if s is not None), None),
        "final_elastic_energy": last_ledger.elastic_energy[-1] if last_ledger else None,
        "cumulative_dissipation_quad": last_ledger.diss_cum_quad[-1] if last_ledger else None,
        "seed": seed,
    }
    if out:
        import os
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "convergence.csv"), "w") as f:
            f.write("\n".join(report_lines) + "\n")
        _write_summary(out, summary)
    print("\n".join(report_lines))
    print(json.dumps(summary, sort_keys=True))
    return 0


def _oracle_base(cfg) -> dict:
    base = {
        "mesh": {"lower": [-1.0, -1.0, -1.0], "upper": [1.0, 1.0, 1.0],
                 "divisions": [2, 2, 2]},
        "material": {"mu": 1.0e3, "lambda": 1.5e3, "c": 3.0e3},
        "loads": {},
        "initial_condition": "uniaxial",
        "T": 0.5,
        "schemes": ["linearized_explicit", "nonlinear_implicit"],
    }
    base.update(cfg)
    return base


def run_oracle_comparison(config_path, output_dir=None, threads=1, seed=0) -> int:
    """Compare trajectories of two schemes across a tau sweep."""
    try:
        cfg = load_config(config_path, ORACLE_SCHEMA)
        base = _oracle_base(cfg)
        out = output_dir if output_dir is not None else cfg.get("outputs")
        mesh = build_box_mesh(BoxSpec(lower=tuple(base["mesh"]["lower"]),
                                      upper=tuple(base["mesh"]["upper"]),
                                      divisions=tuple(base["mesh"]["divisions"])))
        params = _material(base)
        loads = _loads(base)
        loads.validate_tags(mesh)
        newton = oracle.NewtonConfig(**base.get("newton", {}))
        solver = _solver(base)
        A = _initial_matrix(base.get("initial_condition"))
        taus = base["taus"]
        T = base["T"]
        schemes = base["schemes"]
        for tau in taus:
            if abs(T / tau - round(T / tau)) > 1e-9 * max(1.0, T / tau):
                raise ValueError(f"T/tau not an integer for tau={tau}")
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    space = P2Space(mesh)
    constrained = constrained_dofs(space, loads)
    y0 = (DeformationField.identity(space) if A is None
          else DeformationField.affine(space, A))
    M = assemble_mass(space)

    def trajectory(scheme, tau):
        if scheme == "linearized_explicit":
            return oracle.run_linearized_explicit(y0, tau, T, params, loads,
                                                  constrained, space, solver)
        return oracle.run_nonlinear_implicit(y0, tau, T, params, loads,
                                             constrained, space, newton)

    def one(tau):
        try:
            ya = trajectory(schemes[0], tau)
            yb = trajectory(schemes[1], tau)
        except oracle.NewtonError:
            return tau, float("nan"), float("nan")
        d = ya.dofs - yb.dofs
        linf = float(np.linalg.norm(d, np.inf))
        l2 = float(np.sqrt(d @ (M.mat @ d)))
        return tau, linf, l2

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, taus))
    else:
        results = [one(tau) for tau in taus]

    lines = ["tau,scheme_a,scheme_b,linf_deviation,l2_deviation"]
    for tau, linf, l2 in results:
        lines.append(f"{tau:.17g},{schemes[0]},{schemes[1]},{linf:.17g},{l2:.17g}")

    usable = [(t, d) for t, d, _ in results if np.isfinite(d) and d > 0]
    order = fit_convergence_slope(usable) if len(usable) >= 2 else None
    summary = {"order": order, "slope": order, "seed": seed}
    if out:
        import os
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "oracle_compare.csv"), "w") as f:
            f.write("\n".join(lines) + "\n")
        _write_summary(out, summary)
    print("\n".join(lines))
    print(json.dumps(summary, sort_keys=True))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="viscofem",
                                     description="Kelvin-Voigt viscoelasticity simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("simulate", "run one scenario"),
                            ("convergence", "energy-balance tau sweep"),
                            ("oracle-compare", "explicit vs implicit trajectories")):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="path to a JSON config")
        sp.add_argument("--output-dir", default=None, help="overrides config 'outputs'")
        sp.add_argument("--threads", type=int, default=1,
                        help="parallel runs in sweep drivers (relaxes reproducibility)")
        sp.add_argument("--seed", type=int, default=0,
                        help="seed recorded in summaries; reserved for randomized validators")
    args = parser.parse_args(argv)
    dispatch = {
        "simulate": run_scenario,
        "convergence": run_convergence_study,
        "oracle-compare": run_oracle_comparison,
    }
    try:
        return dispatch[args.command](args.config, args.output_dir, args.threads, args.seed)
    except Exception as e:  # runtime failures: report and signal via exit code
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
