"""Command-line interface: one subcommand per stage plus a JSON pipeline runner.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

log = logging.getLogger("punit")

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS")
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class StageError(Exception):
    def __init__(self, stage: str, cause: BaseException, code: int):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.code = code


# -- argument helpers ------------------------------------------------------------------


def _triple(kind):
    def parse(text):
        parts = str(text).split(",")
        if len(parts) == 1:
            parts = parts * 3
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"expected 3 comma-separated values, got {text!r}")
        try:
            return tuple(kind(p) for p in parts)
        except ValueError:
            raise argparse.ArgumentTypeError(f"cannot parse {text!r}") from None

    return parse


def _ladder(text):
    """``lo:hi:count`` or a comma list."""
    try:
        if ":" in text:
            lo, hi, n = text.split(":")
            lo, hi, n = float(lo), float(hi), int(n)
            if n < 2:
                raise ValueError
            return [lo + (hi - lo) * i / (n - 1) for i in range(n)]
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad density ladder {text!r}") from None


def _material(text):
    out = {}
    for item in text.split(","):
        key, _, val = item.partition("=")
        if key not in ("E", "nu") or not val:
            raise argparse.ArgumentTypeError(f"bad material entry {item!r}; use E=...,nu=...")
        try:
            out[key] = float(val)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad material value {item!r}") from None
    return out


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


# -- atomic output -----------------------------------------------------------------------


def write_atomic(path, data: bytes | str) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    blob = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _csv(rows, columns) -> str:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(repr(float(row[c])) if isinstance(row[c], float) else str(row[c]) for c in columns))
    return "\n".join(lines) + "\n"


# -- stages ----------------------------------------------------------------------------


def cmd_voxel(args):
    from . import voxelgrid

    script = voxelgrid.load_csg(args.csg)
    grid = voxelgrid.run_csg(script, args.dims)
    if str(args.output).endswith(".txt"):
        write_atomic(args.output, voxelgrid.write_text(grid))
    else:
        write_atomic(args.output, voxelgrid.write_vgrid(grid))
    return {"dims": list(grid.dims), "solid_fraction": grid.solid_fraction()}


def cmd_dtm(args):
    from . import dtm, voxelgrid

    grid = voxelgrid.load(args.input)
    field = dtm.dtm_field(grid, args.m)
    write_atomic(args.output, dtm.write_sgrid(field))
    return {"dims": list(field.dims), "min": float(field.values.min()), "max": float(field.values.max())}


def cmd_fit(args):
    from . import dtm, spline
    from .fit import FitConfig, con_lspia

    cfg = FitConfig(n=args.n, p=args.p, r=args.r, tol=args.tol, max_iters=args.max_iters, accel=args.accel)
    data = dtm.load(args.input)
    s, report = con_lspia(data, cfg)
    write_atomic(args.output, dump_json(spline.to_dict(s)))
    if args.report:
        write_atomic(args.report, dump_json(report.to_dict()))
    return {"iterations": report.iterations, "mse": report.mse, "converged": report.converged}


def cmd_connect(args):
    from . import spline
    from .lattice import relative_density, threshold_for_density
    from .persist import ConnectivityConfig, optimize_connectivity

    cfg = ConnectivityConfig(grid=args.grid, step=args.step, max_iters=args.max_iters)
    s = spline.load(args.input)
    if args.density is not None:
        # shift so that the requested density is the zero sublevel set
        c = threshold_for_density(s, args.density, res=max(args.grid, 32))
        s = s.with_coeffs(s.coeffs - c)
    before = relative_density(s, 0.0, res=max(args.grid, 32))
    res = optimize_connectivity(s, cfg)
    after = relative_density(res.spline, 0.0, res=max(args.grid, 32))
    write_atomic(args.output, dump_json(spline.to_dict(res.spline)))
    if args.trace:
        write_atomic(args.trace, _csv(res.trace, ("iter", "L", "density")))
    return {
        "converged": res.converged,
        "iterations": res.iterations,
        "L": res.trace[-1]["L"],
        "density_before": before,
        "density_after": after,
    }


def cmd_homogenize(args):
    from . import spline
    from .mech import BaseMaterial, build_density_curves

    mat = BaseMaterial(**args.material)
    s = spline.load(args.input)
    curves = build_density_curves(s, mat, args.rho, res=args.res)
    write_atomic(args.output, curves.dumps() + "\n")
    return {"entries": len(curves.entries), "ladder": len(curves.ladder)}


def cmd_topopt(args):
    from . import spline
    from .mech import BaseMaterial, TopOptConfig, topopt
    from .mech.gibson import load as load_curves

    kw = {}
    if args.spline_shape:
        kw["spline_shape"] = args.spline_shape
    if args.degrees:
        kw["degrees"] = args.degrees
    cfg = TopOptConfig(
        elements=args.elements,
        volfrac=args.volfrac,
        case=args.case,
        max_iters=args.max_iters,
        tol=args.tol,
        **kw,
    )
    curves = load_curves(args.curves)
    mat = BaseMaterial(**args.material)
    res = topopt(cfg, curves, mat)
    write_atomic(args.output, dump_json(spline.to_dict(res.density)))
    if args.trace:
        write_atomic(args.trace, _csv(res.trace, ("iter", "compliance", "volume", "change")))
    c = res.compliance
    return {"converged": res.converged, "iterations": len(c) - 1, "compliance_initial": c[0], "compliance_final": c[-1]}


def _write_mesh(path, mesh):
    from .lattice import export_obj, export_stl

    if str(path).lower().endswith(".obj"):
        write_atomic(path, export_obj(mesh))
    else:
        write_atomic(path, export_stl(mesh))


def cmd_splice(args):
    from . import spline
    from .lattice import LatticeSpec, splice_mesh, threshold_field_from_density, threshold_for_density

    unit = spline.load(args.input)
    if args.density_field:
        rho = spline.load(args.density_field)
        threshold, _ = threshold_field_from_density(unit, rho, args.cells)
    else:
        threshold = threshold_for_density(unit, args.density)
    spec = LatticeSpec(args.cells, unit, threshold)
    mesh = splice_mesh(spec, args.res, args.size)
    _write_mesh(args.output, mesh)
    return {"triangles": int(len(mesh.faces)), "vertices": int(len(mesh.vertices))}


def cmd_mesh(args):
    from . import spline
    from .lattice import marching_cubes, threshold_for_density

    unit = spline.load(args.input)
    iso = args.iso if args.density is None else threshold_for_density(unit, args.density)
    grid = lambda x, y, z: unit.eval_grid(x, y, z)  # noqa: E731
    mesh = marching_cubes(grid, iso, args.res).scaled(args.size)
    _write_mesh(args.output, mesh)
    return {"triangles": int(len(mesh.faces)), "iso": float(iso)}


def cmd_spline_check(args):
    from . import spline

    s = spline.load(args.input)
    dev = spline.check_symmetry(s, samples=args.samples)
    return {
        "shape": list(s.shape),
        "degrees": list(s.degrees),
        "sym_degree": list(s.sym_degree),
        "max_mirror_deviation": [float(x) for x in dev],
    }


# -- pipeline ------------------------------------------------------------------------------

PATH_KEYS = ("input", "output", "report", "trace", "curves", "density_field")
# external inputs live next to the config, not in the working directory
CONFIG_KEYS = ("csg",)


def _stage_argv(stage: dict, base: Path, config_dir: Path) -> list[str]:
    argv = []
    for key, val in stage.items():
        if key in ("stage", "name"):
            continue
        if key in PATH_KEYS:
            val = str(base / val)
        elif key in CONFIG_KEYS:
            val = str(config_dir / val)
        flag = "--" + key.replace("_", "-")
        if isinstance(val, bool):
            if val:
                argv.append(flag)
            continue
        if isinstance(val, (list, tuple)):
            val = ",".join(str(v) for v in val)
        argv += [flag, str(val)]
    return argv


def cmd_pipeline(args):
    cfg_path = Path(args.config)
    try:
        doc = json.loads(cfg_path.read_text())
    except json.JSONDecodeError as exc:
        raise _validation(f"malformed pipeline config: {exc}")
    if not isinstance(doc, dict) or not isinstance(doc.get("stages"), list):
        raise _validation("pipeline config needs a 'stages' list")
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise _validation("pipeline seed must be a nonnegative integer")
    base = cfg_path.parent / doc.get("workdir", ".")
    if args.workdir:
        base = Path(args.workdir)
    base.mkdir(parents=True, exist_ok=True)
    # path sanity: outputs must be distinct
    outputs = [s.get("output") for s in doc["stages"] if s.get("output")]
    if len(set(outputs)) != len(outputs):
        raise _validation("pipeline stages write the same output path")
    parser = build_parser()
    summary = []
    for n, stage in enumerate(doc["stages"]):
        kind = stage.get("stage")
        name = stage.get("name", f"{n}:{kind}")
        if kind not in STAGES or kind == "pipeline":
            raise StageError(name, _validation(f"unknown stage kind {kind!r}"), EXIT_VALIDATION)
        try:
            sub = parser.parse_args(STAGES[kind] + _stage_argv(stage, base, cfg_path.parent))
        except SystemExit:
            raise StageError(name, _validation("invalid stage parameters"), EXIT_VALIDATION) from None
        log.info("pipeline stage %s", name)
        result = _run_guarded(name, sub.func, sub)
        summary.append({"stage": name, "result": result})
    if doc.get("summary"):
        # every stage is deterministic; the seed is recorded for provenance of the run
        write_atomic(base / doc["summary"], dump_json({"seed": seed, "stages": summary}))
    return {"stages": len(summary)}


def _validation(msg):
    from .errors import ValidationError

    return ValidationError(msg)


def _exit_code(exc: BaseException) -> int:
    from .errors import FormatError, PunitError

    if isinstance(exc, (FormatError, OSError)):
        return EXIT_IO
    if isinstance(exc, PunitError):
        return exc.exit_code
    if isinstance(exc, (ValueError, KeyError, TypeError)):
        return EXIT_VALIDATION
    if isinstance(exc, (ArithmeticError, FloatingPointError)):
        return EXIT_NUMERIC
    return EXIT_NUMERIC


def _run_guarded(stage, func, args):
    try:
        return func(args)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, exc, _exit_code(exc)) from exc


# -- parser ------------------------------------------------------------------------------

STAGES = {
    "voxel": ["voxel"],
    "dtm": ["dtm"],
    "fit": ["fit"],
    "connect": ["connect"],
    "homogenize": ["homogenize"],
    "topopt": ["topopt"],
    "splice": ["splice"],
    "mesh": ["mesh"],
    "spline-check": ["spline", "check"],
    "pipeline": ["pipeline"],
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="punit", description="Periodic implicit porous units from voxel samples.")
    p.add_argument("--threads", type=_positive_int, default=None, help="worker cap (default: $PUNIT_THREADS)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("voxel", help="rasterize a CSG script")
    s.add_argument("--csg", required=True)
    s.add_argument("--dims", type=_triple(int), required=True)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_voxel)

    s = sub.add_parser("dtm", help="distance-to-measure field of a voxel grid")
    s.add_argument("-i", "--input", required=True)
    s.add_argument("-m", "--m", type=float, default=5.0)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_dtm)

    s = sub.add_parser("fit", help="fit a symmetric B-spline unit to a scalar grid")
    s.add_argument("-i", "--input", required=True)
    s.add_argument("--n", type=_triple(int), default=(11, 11, 11))
    s.add_argument("--p", type=_triple(int), default=(3, 3, 3))
    s.add_argument("--r", type=_triple(int), default=(5, 5, 5))
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--max-iters", type=_positive_int, default=2000)
    s.add_argument("--accel", choices=("none", "cg"), default="cg")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("connect", help="merge isolated components of the zero sublevel set")
    s.add_argument("-i", "--input", required=True)
    s.add_argument("--grid", type=_positive_int, default=64)
    s.add_argument("--step", type=float, default=0.05)
    s.add_argument("--max-iters", type=_positive_int, default=500)
    s.add_argument("--density", type=float, help="first shift the unit so this density sits at level 0")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--trace")
    s.set_defaults(func=cmd_connect)

    s = sub.add_parser("homogenize", help="fit density laws of the homogenized tensor")
    s.add_argument("-i", "--input", required=True)
    s.add_argument("--rho", type=_ladder, default=_ladder("0.1:0.9:9"))
    s.add_argument("--res", type=_positive_int, default=16)
    s.add_argument("--material", type=_material, default={"E": 2e9, "nu": 0.35})
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_homogenize)

    s = sub.add_parser("topopt", help="minimum-compliance density optimization")
    s.add_argument("--case", default="three-point-bending", choices=("three-point-bending", "compression"))
    s.add_argument("--elements", type=_triple(int), default=(24, 8, 8))
    s.add_argument("--spline-shape", type=_triple(int))
    s.add_argument("--degrees", type=_triple(int))
    s.add_argument("--volfrac", type=float, default=0.4)
    s.add_argument("--max-iters", type=_positive_int, default=60)
    s.add_argument("--tol", type=float, default=1e-3)
    s.add_argument("--curves", required=True)
    s.add_argument("--material", type=_material, default={"E": 2e9, "nu": 0.35})
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--trace")
    s.set_defaults(func=cmd_topopt)

    s = sub.add_parser("splice", help="tile a unit into a lattice and export its surface")
    s.add_argument("-i", "--input", required=True)
    s.add_argument("--cells", type=_triple(int), default=(4, 4, 4))
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--density", type=float)
    g.add_argument("--density-field")
    s.add_argument("--res", type=_positive_int, default=128)
    s.add_argument("--size", type=_triple(float), default=(1.0, 1.0, 1.0))
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_splice)

    s = sub.add_parser("mesh", help="surface of a single unit")
    s.add_argument("-i", "--input", required=True)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--iso", type=float, default=0.0)
    g.add_argument("--density", type=float)
    s.add_argument("--res", type=_positive_int, default=64)
    s.add_argument("--size", type=_triple(float), default=(1.0, 1.0, 1.0))
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_mesh)

    s = sub.add_parser("spline", help="spline utilities")
    ss = s.add_subparsers(dest="spline_command", required=True)
    c = ss.add_parser("check", help="validate a unit and report its mirror deviation")
    c.add_argument("-i", "--input", required=True)
    c.add_argument("--samples", type=_positive_int, default=1000)
    c.set_defaults(func=cmd_spline_check)

    s = sub.add_parser("pipeline", help="run a JSON list of stages")
    s.add_argument("-c", "--config", required=True)
    s.add_argument("--workdir", help="override the directory that relative paths resolve against")
    s.set_defaults(func=cmd_pipeline)
    return p


def _apply_threads(n):
    if n is None:
        env = os.environ.get("PUNIT_THREADS")
        if env:
            try:
                n = int(env)
            except ValueError:
                n = None
    if n:
        for var in THREAD_VARS:
            os.environ[var] = str(n)
    return n


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # must run before numpy / numba are first imported to take full effect
    _apply_threads(args.threads)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    stage = args.command if args.command != "spline" else "spline check"
    try:
        result = _run_guarded(stage, args.func, args)
    except StageError as exc:
        print(f"punit: error: {exc}", file=sys.stderr)
        return exc.code
    print(dump_json(result), end="")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
