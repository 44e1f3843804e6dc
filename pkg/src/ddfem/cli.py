"""Command-line front end: config files, subcommands, exit codes.

Configs are INI files (see docs/config.md).  Exit codes: 0 for a
converged solve with outputs written, 2 for a nonconverged solve
(outputs are still written and flagged NONCONVERGED in their headers),
1 for any input error, reported with a file and line number where one
exists.  The thread count is a command-line flag rather than a config
key so that the config hash echoed in output headers is identical for
every thread count; outputs are bit-identical regardless.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data_gen import Family, GeneratorSpec, convert_pairing, generate
from .fem import BoundaryConditions, Mesh, gradient_field, load_mesh
from .multilevel import run_multilevel, write_level_table
from .phase_space import DataSet, PairingKind, load_dataset, save_dataset
from .reference import LinearElasticLaw, solve_linear_elastic
from .report import SolveReport, emit_report
from .solver_cs import CsConfig, NewtonError, solve_cs
from .solver_fp import FpConfig, solve_fp
from .tensors import sym

_COMP_NAMES = {"x": 0, "y": 1, "z": 2}
_COMP_LABELS = {v: k for k, v in _COMP_NAMES.items()}

_RUN_KEYS = {"formulation", "mesh", "dataset", "output", "area",
             "emit_fields", "emit_states", "emit_history", "emit_vtk",
             "emit_level_table"}
_FP_KEYS = ("mu0", "max_data_iterations", "penalty_tol", "linear_solver",
            "cg_tol", "cg_maxit")
_CS_KEYS = ("mu0", "max_data_iterations", "penalty_tol", "newton_tol",
            "newton_maxit", "line_search", "ls_factor", "ls_maxsteps",
            "load_steps")
_GEN_KEYS = {"family", "c1", "c3", "n", "stretch_min", "stretch_max",
             "pairing", "log_spacing"}
_ML_KEYS = {"source", "max_levels", "stop_delta", "keep_all", "radius",
            "penalty_floor"}
_REF_KEYS = {"e_mod", "nu"}


@dataclass
class MultilevelOptions:
    """[multilevel] section: refinement source and stopping rule."""

    source: str
    max_levels: int = 5
    stop_delta: float = 0.02
    keep_all: bool = False
    radius: float | None = None
    penalty_floor: float = 1e-16


@dataclass
class RunConfig:
    """Parsed configuration for the solve-like subcommands."""

    formulation: str
    mesh: str
    output: str
    dataset: str | None = None
    generator: GeneratorSpec | None = None
    area: float = 1.0
    dirichlet: tuple = ()       # (nodeset, component, value) triples
    traction: tuple = ()        # (faceset, vector) pairs
    body_force: tuple | None = None
    emit_fields: bool = True
    emit_states: bool = True
    emit_history: bool = True
    emit_vtk: bool = False
    emit_level_table: bool = True
    solver: object = None       # FpConfig or CsConfig
    multilevel: MultilevelOptions | None = None
    reference: LinearElasticLaw | None = None


def _fail(section: str, key: str, msg: str):
    raise ValueError(f"config [{section}] {key}: {msg}")


def _get_float(sec: str, key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        _fail(sec, key, f"cannot parse '{raw}' as a number")


def _get_int(sec: str, key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        _fail(sec, key, f"cannot parse '{raw}' as an integer")


def _get_bool(sec: str, key: str, raw: str) -> bool:
    states = configparser.ConfigParser.BOOLEAN_STATES
    if raw.lower() not in states:
        _fail(sec, key, f"cannot parse '{raw}' as a boolean")
    return states[raw.lower()]


def _parse_dirichlet(name: str, raw: str) -> list:
    """'x=0, y=1.5e-3' -> [(name, 0, 0.0), (name, 1, 0.0015)]."""
    triples = []
    for part in raw.split(","):
        part = part.strip()
        if "=" not in part:
            _fail("bc", f"dirichlet.{name}", f"expected comp=value, got '{part}'")
        comp_s, _, val_s = part.partition("=")
        comp_s = comp_s.strip().lower()
        if comp_s in _COMP_NAMES:
            comp = _COMP_NAMES[comp_s]
        elif comp_s.isdigit():
            comp = int(comp_s)
        else:
            _fail("bc", f"dirichlet.{name}", f"unknown component '{comp_s}'")
        triples.append((name, comp, _get_float("bc", f"dirichlet.{name}", val_s.strip())))
    return triples


def _solver_config(cp: configparser.ConfigParser, formulation: str):
    keys = _FP_KEYS if formulation == "FP" else _CS_KEYS
    kwargs = {}
    if cp.has_section("solver"):
        for key, raw in cp.items("solver"):
            if key == "threads":
                _fail("solver", key, "threads is a command-line flag, not a config key")
            if key not in keys:
                _fail("solver", key, f"unknown key for formulation {formulation}")
            if key == "mu0":
                kwargs[key] = None if raw.strip().lower() == "auto" \
                    else _get_float("solver", key, raw)
            elif key in ("linear_solver", "line_search"):
                kwargs[key] = raw.strip()
            elif key in ("max_data_iterations", "cg_maxit", "newton_maxit",
                         "ls_maxsteps", "load_steps"):
                kwargs[key] = _get_int("solver", key, raw)
            else:
                kwargs[key] = _get_float("solver", key, raw)
    cls = FpConfig if formulation == "FP" else CsConfig
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ValueError(f"config [solver]: {exc}") from None


def _generator_spec(cp: configparser.ConfigParser, formulation: str) -> GeneratorSpec:
    raw = dict(cp.items("generator"))
    for key in raw:
        if key not in _GEN_KEYS:
            _fail("generator", key, "unknown key")
    if "family" not in raw or "c1" not in raw:
        raise ValueError("config [generator]: family and c1 are required")
    try:
        family = Family[raw["family"].strip().upper()]
    except KeyError:
        _fail("generator", "family", f"unknown family '{raw['family']}'")
    pairing_s = raw.get("pairing", formulation).strip().upper()
    try:
        pairing = PairingKind(pairing_s)
    except ValueError:
        _fail("generator", "pairing", f"unknown pairing '{pairing_s}'")
    if pairing.value != formulation:
        _fail("generator", "pairing",
              f"pairing {pairing.value} does not match formulation {formulation}")
    lo = _get_float("generator", "stretch_min", raw.get("stretch_min", "1.0"))
    hi = _get_float("generator", "stretch_max", raw.get("stretch_max", "3.2"))
    try:
        return GeneratorSpec(
            family=family,
            c1=_get_float("generator", "c1", raw["c1"]),
            c3=_get_float("generator", "c3", raw.get("c3", "0.0")),
            n=_get_int("generator", "n", raw.get("n", "10000")),
            stretch_range=(lo, hi),
            pairing=pairing,
            log_spacing=_get_bool("generator", "log_spacing",
                                  raw.get("log_spacing", "false")),
        )
    except ValueError as exc:
        raise ValueError(f"config [generator]: {exc}") from None


def parse_config(text: str, name: str = "<config>") -> RunConfig:
    """Parse INI text into a validated RunConfig."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=name)
    except configparser.Error as exc:
        raise ValueError(f"config parse error: {exc}") from None

    if not cp.has_section("run"):
        raise ValueError("config: missing required [run] section")
    run = dict(cp.items("run"))
    for key in run:
        if key not in _RUN_KEYS:
            _fail("run", key, "unknown key")
    for key in ("formulation", "mesh", "output"):
        if key not in run:
            _fail("run", key, "required key is missing")
    formulation = run["formulation"].strip().upper()
    if formulation not in ("FP", "CS"):
        _fail("run", "formulation", f"must be FP or CS, got '{run['formulation']}'")

    generator = _generator_spec(cp, formulation) if cp.has_section("generator") else None
    dataset = run.get("dataset")
    if (dataset is None) == (generator is None):
        raise ValueError("config: exactly one of [run] dataset and a "
                         "[generator] section must be present")

    dirichlet: list = []
    traction: list = []
    body_force = None
    if cp.has_section("bc"):
        for key, raw in cp.items("bc"):
            if key.startswith("dirichlet."):
                dirichlet.extend(_parse_dirichlet(key[len("dirichlet."):], raw))
            elif key.startswith("traction."):
                vec = tuple(_get_float("bc", key, tok) for tok in raw.split())
                if not vec:
                    _fail("bc", key, "empty traction vector")
                traction.append((key[len("traction."):], vec))
            elif key == "body_force":
                body_force = tuple(_get_float("bc", key, tok) for tok in raw.split())
            else:
                _fail("bc", key, "unknown key")

    multilevel = None
    if cp.has_section("multilevel"):
        ml = dict(cp.items("multilevel"))
        for key in ml:
            if key not in _ML_KEYS:
                _fail("multilevel", key, "unknown key")
        if "source" not in ml:
            _fail("multilevel", "source", "required key is missing")
        multilevel = MultilevelOptions(
            source=ml["source"],
            max_levels=_get_int("multilevel", "max_levels", ml.get("max_levels", "5")),
            stop_delta=_get_float("multilevel", "stop_delta", ml.get("stop_delta", "0.02")),
            keep_all=_get_bool("multilevel", "keep_all", ml.get("keep_all", "false")),
            radius=(None if ml.get("radius", "auto").strip().lower() == "auto"
                    else _get_float("multilevel", "radius", ml["radius"])),
            penalty_floor=_get_float("multilevel", "penalty_floor",
                                     ml.get("penalty_floor", "1e-16")),
        )

    reference = None
    if cp.has_section("reference"):
        ref = dict(cp.items("reference"))
        for key in ref:
            if key not in _REF_KEYS:
                _fail("reference", key, "unknown key")
        for key in ("e_mod", "nu"):
            if key not in ref:
                _fail("reference", key, "required key is missing")
        try:
            reference = LinearElasticLaw(_get_float("reference", "e_mod", ref["e_mod"]),
                                         _get_float("reference", "nu", ref["nu"]))
        except ValueError as exc:
            raise ValueError(f"config [reference]: {exc}") from None

    def flag(key, default):
        return _get_bool("run", key, run[key]) if key in run else default

    return RunConfig(
        formulation=formulation,
        mesh=run["mesh"],
        output=run["output"],
        dataset=dataset,
        generator=generator,
        area=_get_float("run", "area", run.get("area", "1.0")),
        dirichlet=tuple(dirichlet),
        traction=tuple(traction),
        body_force=body_force,
        emit_fields=flag("emit_fields", True),
        emit_states=flag("emit_states", True),
        emit_history=flag("emit_history", True),
        emit_vtk=flag("emit_vtk", False),
        emit_level_table=flag("emit_level_table", True),
        solver=_solver_config(cp, formulation),
        multilevel=multilevel,
        reference=reference,
    )


def serialize_config(cfg: RunConfig) -> str:
    """Render a RunConfig back to INI text; parse(serialize(c)) == c."""
    out = ["[run]",
           f"formulation = {cfg.formulation}",
           f"mesh = {cfg.mesh}",
           f"output = {cfg.output}"]
    if cfg.dataset is not None:
        out.append(f"dataset = {cfg.dataset}")
    out.append(f"area = {cfg.area!r}")
    for key in ("emit_fields", "emit_states", "emit_history", "emit_vtk",
                "emit_level_table"):
        out.append(f"{key} = {'true' if getattr(cfg, key) else 'false'}")

    if cfg.dirichlet or cfg.traction or cfg.body_force is not None:
        out.extend(["", "[bc]"])
        by_set: dict[str, list] = {}
        for name, comp, value in cfg.dirichlet:
            by_set.setdefault(name, []).append(f"{_COMP_LABELS[comp]}={value!r}")
        for name, parts in by_set.items():
            out.append(f"dirichlet.{name} = {', '.join(parts)}")
        for name, vec in cfg.traction:
            out.append(f"traction.{name} = {' '.join(repr(v) for v in vec)}")
        if cfg.body_force is not None:
            out.append(f"body_force = {' '.join(repr(v) for v in cfg.body_force)}")

    out.extend(["", "[solver]"])
    keys = _FP_KEYS if cfg.formulation == "FP" else _CS_KEYS
    for key in keys:
        value = getattr(cfg.solver, key)
        if key == "mu0":
            out.append(f"mu0 = {'auto' if value is None else repr(value)}")
        elif isinstance(value, (int, str)):
            out.append(f"{key} = {value}")
        else:
            out.append(f"{key} = {value!r}")

    if cfg.generator is not None:
        g = cfg.generator
        out.extend(["", "[generator]",
                    f"family = {g.family.name.lower()}",
                    f"c1 = {g.c1!r}",
                    f"c3 = {g.c3!r}",
                    f"n = {g.n}",
                    f"stretch_min = {g.stretch_range[0]!r}",
                    f"stretch_max = {g.stretch_range[1]!r}",
                    f"pairing = {g.pairing.value}",
                    f"log_spacing = {'true' if g.log_spacing else 'false'}"])

    if cfg.multilevel is not None:
        ml = cfg.multilevel
        out.extend(["", "[multilevel]",
                    f"source = {ml.source}",
                    f"max_levels = {ml.max_levels}",
                    f"stop_delta = {ml.stop_delta!r}",
                    f"keep_all = {'true' if ml.keep_all else 'false'}",
                    f"radius = {'auto' if ml.radius is None else repr(ml.radius)}",
                    f"penalty_floor = {ml.penalty_floor!r}"])

    if cfg.reference is not None:
        out.extend(["", "[reference]",
                    f"e_mod = {cfg.reference.e_mod!r}",
                    f"nu = {cfg.reference.nu!r}"])
    return "\n".join(out) + "\n"


def load_config(path) -> tuple[RunConfig, str]:
    """Read a config file; returns (config, 12-hex hash of the file bytes)."""
    raw = Path(path).read_bytes()
    cfg = parse_config(raw.decode("utf-8"), name=str(path))
    return cfg, hashlib.sha256(raw).hexdigest()[:12]


def build_bcs(cfg: RunConfig, mesh: Mesh) -> BoundaryConditions:
    """Resolve named node/face sets against the mesh."""
    dirichlet = []
    for name, comp, value in cfg.dirichlet:
        if name not in mesh.nodesets:
            _fail("bc", f"dirichlet.{name}",
                  f"nodeset '{name}' not found in mesh "
                  f"(available: {sorted(mesh.nodesets) or 'none'})")
        if comp >= mesh.dim:
            _fail("bc", f"dirichlet.{name}",
                  f"component {comp} out of range for a {mesh.dim}D mesh")
        for node in mesh.nodesets[name]:
            dirichlet.append((int(node), comp, value))
    tractions = []
    for name, vec in cfg.traction:
        if name not in mesh.facesets:
            _fail("bc", f"traction.{name}",
                  f"faceset '{name}' not found in mesh "
                  f"(available: {sorted(mesh.facesets) or 'none'})")
        if len(vec) != mesh.dim:
            _fail("bc", f"traction.{name}",
                  f"traction vector has {len(vec)} components, mesh is {mesh.dim}D")
        for face in mesh.facesets[name]:
            tractions.append((face, np.asarray(vec, dtype=float)))
    body_force = None
    if cfg.body_force is not None:
        if len(cfg.body_force) != mesh.dim:
            _fail("bc", "body_force",
                  f"vector has {len(cfg.body_force)} components, mesh is {mesh.dim}D")
        body_force = np.asarray(cfg.body_force, dtype=float)
    return BoundaryConditions(dirichlet=dirichlet, tractions=tractions,
                              body_force=body_force)


def _prepare(cfg: RunConfig, threads: int):
    mesh = load_mesh(cfg.mesh)
    if cfg.area != mesh.area:
        mesh = replace(mesh, area=cfg.area)
    dataset = (load_dataset(cfg.dataset) if cfg.dataset is not None
               else generate(cfg.generator))
    bcs = build_bcs(cfg, mesh)
    solver_cfg = replace(cfg.solver, threads=threads)
    return mesh, dataset, bcs, solver_cfg


def _emit(report: SolveReport, cfg: RunConfig, chash: str) -> list:
    return emit_report(report, cfg.output, config_hash=chash,
                       fields=cfg.emit_fields, states=cfg.emit_states,
                       history=cfg.emit_history, vtk=cfg.emit_vtk)


def _finish(report: SolveReport, paths: list) -> int:
    status = "CONVERGED" if report.converged else "NONCONVERGED"
    print(f"{report.formulation} solve {status} ({report.termination}): "
          f"{report.data_iterations} data iterations, "
          f"global penalty {report.global_penalty:.6e}")
    for p in paths:
        print(f"wrote {p}")
    return 0 if report.converged else 2


def cmd_solve(args) -> int:
    cfg, chash = load_config(args.config)
    mesh, dataset, bcs, solver_cfg = _prepare(cfg, args.threads)
    solve = solve_fp if cfg.formulation == "FP" else solve_cs
    report = solve(mesh, bcs, dataset, config=solver_cfg)
    return _finish(report, _emit(report, cfg, chash))


def cmd_multilevel(args) -> int:
    cfg, chash = load_config(args.config)
    if cfg.multilevel is None:
        raise ValueError("config: the multilevel subcommand needs a "
                         "[multilevel] section")
    mesh, initial, bcs, solver_cfg = _prepare(cfg, args.threads)
    ml = cfg.multilevel
    source = load_dataset(ml.source)
    records, report = run_multilevel(
        mesh, bcs, source, solver_cfg,
        max_levels=ml.max_levels, stop_delta=ml.stop_delta, initial=initial,
        radius=ml.radius, keep_all=ml.keep_all or args.keep_all,
        penalty_floor=ml.penalty_floor)
    paths = _emit(report, cfg, chash)
    if cfg.emit_level_table:
        table = Path(cfg.output) / "levels.tsv"
        write_level_table(records, table)
        paths.append(table)
    for r in records:
        print(f"level {r.level}: |D|={r.n_data} |S|={r.n_support} "
              f"penalty {r.penalty:.6e} ({r.solver_iterations} iterations)")
    return _finish(report, paths)


def cmd_reference(args) -> int:
    cfg, chash = load_config(args.config)
    if cfg.reference is None:
        raise ValueError("config: the reference subcommand needs a "
                         "[reference] section with e_mod and nu")
    mesh = load_mesh(cfg.mesh)
    if cfg.area != mesh.area:
        mesh = replace(mesh, area=cfg.area)
    bcs = build_bcs(cfg, mesh)
    law = cfg.reference
    u = solve_linear_elastic(mesh, bcs, law)
    grad = gradient_field(mesh, u)
    eps = sym(grad)
    sigma = np.stack([[law.stress(eps[e, q]) for q in range(eps.shape[1])]
                      for e in range(eps.shape[0])])
    zeros = np.zeros_like(eps[..., 0, 0])
    report = SolveReport(
        formulation="reference", mesh=mesh, mu0=law.e_mod, u=u,
        lam=np.zeros_like(u), strains=eps, stresses=sigma,
        assigned=zeros.astype(np.int64) - 1, local_penalties=zeros,
        global_penalty=0.0, penalty_history=[], residual_history=[],
        data_iterations=0, converged=True, termination="direct",
    )
    return _finish(report, _emit(report, cfg, chash))


def cmd_generate(args) -> int:
    lo, _, hi = args.range.partition(":")
    try:
        stretch_range = (float(lo), float(hi))
    except ValueError:
        raise ValueError(f"--range expects MIN:MAX, got '{args.range}'") from None
    spec = GeneratorSpec(
        family=Family[args.family.upper()], c1=args.c1, c3=args.c3, n=args.n,
        stretch_range=stretch_range, pairing=PairingKind(args.pairing),
        log_spacing=args.log_spacing)
    dataset = generate(spec)
    save_dataset(dataset, args.out)
    print(f"wrote {args.out}: {len(dataset)} {dataset.kind.value} tuples, "
          f"mu0 {dataset.mu0:.6e}")
    return 0


def cmd_validate_dataset(args) -> int:
    dataset = load_dataset(args.path)
    print(f"{args.path}: OK, kind={dataset.kind.value} dim={dataset.dim} "
          f"n={len(dataset)} mu0={dataset.mu0:.6e}")
    return 0


def cmd_convert_dataset(args) -> int:
    dataset = load_dataset(args.path)
    converted = convert_pairing(dataset, PairingKind(args.to), mu0=args.mu0)
    save_dataset(converted, args.out)
    print(f"wrote {args.out}: {len(converted)} {converted.kind.value} tuples")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddfem",
        description="Data-driven finite element solver for hyperelastic solids.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_threads(p):
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="nearest-neighbour batch width; results are "
                            "bit-identical for every value (default: cores)")

    p = sub.add_parser("solve", help="run one data-driven solve from a config")
    p.add_argument("config")
    add_threads(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("multilevel", help="iterated solve with data refinement")
    p.add_argument("config")
    p.add_argument("--keep-all", action="store_true",
                   help="keep unassigned tuples when refining")
    add_threads(p)
    p.set_defaults(func=cmd_multilevel)

    p = sub.add_parser("reference", help="linear elastic comparison solve")
    p.add_argument("config")
    p.set_defaults(func=cmd_reference)

    p = sub.add_parser("generate", help="sample a 1D material family to a dataset file")
    p.add_argument("--family", required=True, choices=[f.name.lower() for f in Family])
    p.add_argument("--c1", type=float, required=True, help="shear-like modulus [Pa]")
    p.add_argument("--c3", type=float, default=0.0, help="third-order coefficient [Pa]")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--range", default="1.0:3.2", help="stretch range MIN:MAX")
    p.add_argument("--pairing", default="FP", choices=["FP", "CS"])
    p.add_argument("--log-spacing", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("validate-dataset", help="parse and check a dataset file")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate_dataset)

    p = sub.add_parser("convert-dataset", help="re-express a dataset in another pairing")
    p.add_argument("path")
    p.add_argument("out")
    p.add_argument("--to", required=True, choices=["FP", "CS", "EPS"])
    p.add_argument("--mu0", type=float, default=None)
    p.set_defaults(func=cmd_convert_dataset)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except NewtonError as exc:
        print(f"NONCONVERGED: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
