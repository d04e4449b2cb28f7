"""Configuration-driven command line front end.

One TOML file describes one experiment; there is no interactive mode.
Subcommands: criterion, construct, density, reconstruct, simulate,
selftest.  Exit codes: 0 success, 1 negative verdict (criterion violated,
atom detected / kernel degenerate, route mismatch, selftest failure),
2 configuration or runtime error.

Every command writes ``manifest.json`` (config hash, seeds, versions,
output list) next to its outputs; CSV outputs start with a comment line
carrying the config hash.  Outputs are byte-identical across repeated runs
and across ``--workers`` settings.  The default output directory comes from
the ``LINESIG_OUTDIR`` environment variable.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .driver import FbmSpec, sample_fbm, smooth_driver, uniform_mesh
from .expr import parse, to_source
from .geometry import OneForm, build_frame, one_form, vector_field
from .integrals import line_integral
from .lab import Box, ExperimentSpec, run_conditional_samples
from .nondeg import (
    Grid,
    construct_elliptic_bump,
    construct_step2,
    criterion_elliptic,
    criterion_general,
    criterion_step2,
    heisenberg_condition,
    sard_lambda_select,
)
from .rde import solve
from .reconstruct import (
    AmbiguousRoute,
    build_grid,
    clean_crossing,
    extended_signature,
    recover_route,
    true_route,
)

__all__ = ["main"]


class ConfigError(ValueError):
    pass


_NUM = (int, float)

_SCHEMA = {
    "system": {"fields": list, "x0": list},
    "driver": {
        "hurst": _NUM, "horizon": _NUM, "steps": int, "substeps": int,
        "seed": int, "smooth": list,
    },
    "form": {
        "components": list, "constructor": str, "cube": list,
        "c1": str, "c2": str, "f": str, "g": str,
        "lambda_candidates": list, "amplitude": _NUM,
    },
    "forms": list,
    "frame": {"base_point": list, "max_step": int, "rank_tol": _NUM},
    "criterion": {
        "regime": str, "grid_bounds": list, "grid_shape": list,
        "point_tol": _NUM, "zero_measure_tol": _NUM,
    },
    "mc": {
        "replicates": int, "event_regions": list, "atom_tol": _NUM,
        "kernel_tol": _NUM, "chunk": int,
    },
    "grid": {
        "bounds": list, "eps": _NUM, "delta": _NUM, "regime": str,
        "signif_tol": _NUM, "max_len": int, "min_dwell": int,
    },
    "output": {"directory": str, "include_det": bool},
}


def load_config(path: str) -> dict:
    with open(path, "rb") as fh:
        cfg = tomllib.load(fh)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    for section, content in cfg.items():
        if section not in _SCHEMA:
            raise ConfigError(f"[{section}]: unknown section")
        spec = _SCHEMA[section]
        if spec is list:
            if not isinstance(content, list):
                raise ConfigError(f"[{section}]: expected an array of tables")
            for i, entry in enumerate(content):
                for key in entry:
                    if key not in _SCHEMA["form"]:
                        raise ConfigError(f"[{section}][{i}].{key}: unknown key")
            continue
        if not isinstance(content, dict):
            raise ConfigError(f"[{section}]: expected a table")
        for key, value in content.items():
            if key not in spec:
                raise ConfigError(f"[{section}].{key}: unknown key")
            want = spec[key]
            if want is int and isinstance(value, bool):
                raise ConfigError(f"[{section}].{key}: expected an integer")
            if not isinstance(value, want):
                name = want.__name__ if isinstance(want, type) else "number"
                raise ConfigError(f"[{section}].{key}: expected {name}")


def _require(cfg: dict, section: str) -> dict:
    if section not in cfg:
        raise ConfigError(f"missing [{section}] section")
    return cfg[section]


def build_system(cfg: dict):
    sys_cfg = _require(cfg, "system")
    if "fields" not in sys_cfg or "x0" not in sys_cfg:
        raise ConfigError("[system] needs 'fields' and 'x0'")
    x0 = np.array([float(v) for v in sys_cfg["x0"]])
    fields = []
    for i, comps in enumerate(sys_cfg["fields"]):
        if not isinstance(comps, list) or len(comps) != x0.shape[0]:
            raise ConfigError(
                f"[system].fields[{i}]: expected {x0.shape[0]} component strings"
            )
        fields.append(vector_field(*comps))
    return tuple(fields), x0


def build_driver(cfg: dict, dim: int):
    drv = _require(cfg, "driver")
    steps = drv.get("steps", 1024)
    horizon = float(drv.get("horizon", 1.0))
    substeps = drv.get("substeps", 2)
    if "smooth" in drv:
        if len(drv["smooth"]) != dim:
            raise ConfigError(f"[driver].smooth: expected {dim} formulas")
        path = smooth_driver(drv["smooth"], uniform_mesh(horizon, steps))
        return path, substeps, None
    spec = FbmSpec(
        hurst=float(drv.get("hurst", 0.5)),
        horizon=horizon,
        steps=steps,
        seed=drv.get("seed", 0),
        dim=dim,
    )
    return sample_fbm(spec), substeps, spec


def build_form(form_cfg: dict, fields, n: int) -> OneForm:
    if "components" in form_cfg:
        comps = form_cfg["components"]
        if len(comps) != n:
            raise ConfigError(f"[form].components: expected {n} strings")
        return one_form(*comps)
    ctor = form_cfg.get("constructor")
    if ctor == "elliptic_bump":
        cube = form_cfg.get("cube")
        if cube is None:
            raise ConfigError("[form].cube required for elliptic_bump")
        return construct_elliptic_bump(
            cube, amplitude=float(form_cfg.get("amplitude", 1.0))
        )
    if ctor == "step2":
        if len(fields) != 2 or n != 3:
            raise ConfigError("step2 constructor needs two fields on R^3")
        return construct_step2(
            form_cfg.get("c1", "0"), form_cfg.get("c2", "0"), fields[0], fields[1]
        )
    if ctor == "sard_step2":
        if len(fields) != 2 or n != 3:
            raise ConfigError("sard_step2 constructor needs two fields on R^3")
        lambdas = form_cfg.get("lambda_candidates")
        sel = sard_lambda_select(
            form_cfg.get("f", "0"), form_cfg.get("g", "0"),
            lambdas=[float(v) for v in lambdas] if lambdas else None,
        )
        return construct_step2(sel.c1, sel.c2, fields[0], fields[1])
    raise ConfigError("[form]: need 'components' or a known 'constructor'")


def _config_hash(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _outdir(cfg: dict, args) -> Path:
    if args.output:
        base = args.output
    else:
        base = cfg.get("output", {}).get(
            "directory", os.environ.get("LINESIG_OUTDIR", "linesig-out")
        )
    out = Path(base)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _write_manifest(out: Path, command: str, config_path: str, cfg: dict, outputs):
    manifest = {
        "command": command,
        "config": Path(config_path).name,
        "config_sha256": _config_hash(config_path),
        "package_version": __version__,
        "numpy_version": np.__version__,
        "python_version": sys.version.split()[0],
        "seed": cfg.get("driver", {}).get("seed"),
        "outputs": sorted(Path(o).name for o in outputs),
    }
    _write_json(out / "manifest.json", manifest)


# ---------------------------------------------------------------------------
# subcommands

def cmd_criterion(args) -> int:
    cfg = load_config(args.config)
    fields, x0 = build_system(cfg)
    n = x0.shape[0]
    crit = _require(cfg, "criterion")
    regime = crit.get("regime")
    bounds = crit.get("grid_bounds")
    shape = crit.get("grid_shape")
    if regime is None or bounds is None or shape is None:
        raise ConfigError("[criterion] needs regime, grid_bounds and grid_shape")
    grid = Grid(tuple(tuple(float(v) for v in b) for b in bounds), tuple(shape))
    kwargs = {}
    if "point_tol" in crit:
        kwargs["point_tol"] = float(crit["point_tol"])
    if "zero_measure_tol" in crit:
        kwargs["zero_measure_tol"] = float(crit["zero_measure_tol"])
    if regime == "heisenberg":
        form_cfg = _require(cfg, "form")
        report = heisenberg_condition(
            form_cfg.get("c1", "0"), form_cfg.get("c2", "0"), grid, **kwargs
        )
    else:
        form = build_form(_require(cfg, "form"), fields, n)
        if regime == "elliptic":
            report = criterion_elliptic(form, grid, **kwargs)
        elif regime == "step2":
            report = criterion_step2(form, fields[0], fields[1], grid, **kwargs)
        elif regime == "general":
            fr_cfg = cfg.get("frame", {})
            frame = build_frame(
                fields,
                fr_cfg.get("base_point", [0.0] * n),
                max_step=fr_cfg.get("max_step", 4),
                rank_tol=float(fr_cfg.get("rank_tol", 1e-8)),
            )
            report = criterion_general(form, frame, grid, **kwargs)
        else:
            raise ConfigError(f"[criterion].regime: unknown regime '{regime}'")
    out = _outdir(cfg, args)
    _write_json(out / "criterion.json", report.to_json_dict())
    dump = out / "criterion_grid.csv"
    _dump_grid_csv(dump, grid, report, _config_hash(args.config))
    _write_manifest(out, "criterion", args.config, cfg,
                    [out / "criterion.json", dump, out / "manifest.json"])
    print(f"criterion {report.criterion}: {report.verdict} "
          f"(fraction_zero={report.fraction_zero!r})")
    return 0 if report.verdict == "satisfied" else 1


def _dump_grid_csv(path: Path, grid: Grid, report, config_hash: str) -> None:
    pts = grid.points()
    data = report.point_data or {}
    support = data.get("support")
    sups = data.get("sups", {})
    labels = sorted(sups)
    with open(path, "w") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        cols = [f"x{i + 1}" for i in range(pts.shape[1])] + ["support"] + [
            f"sup[{k}]" for k in labels
        ]
        fh.write(",".join(cols) + "\n")
        sup_idx = np.flatnonzero(support) if support is not None else []
        sup_pos = {int(g): i for i, g in enumerate(sup_idx)}
        for g in range(pts.shape[0]):
            row = [repr(float(v)) for v in pts[g]]
            inside = support is not None and bool(support[g])
            row.append("1" if inside else "0")
            for k in labels:
                row.append(repr(float(sups[k][sup_pos[g]])) if inside else "")
            fh.write(",".join(row) + "\n")


def cmd_construct(args) -> int:
    cfg = load_config(args.config)
    fields, x0 = build_system(cfg)
    form = build_form(_require(cfg, "form"), fields, x0.shape[0])
    out = _outdir(cfg, args)
    data = {
        "components": [to_source(c) for c in form.components],
        "dimension": form.n,
    }
    _write_json(out / "form.json", data)
    _write_manifest(out, "construct", args.config, cfg,
                    [out / "form.json", out / "manifest.json"])
    for i, c in enumerate(data["components"], start=1):
        print(f"phi_{i} = {c}")
    return 0


def cmd_density(args) -> int:
    cfg = load_config(args.config)
    fields, x0 = build_system(cfg)
    n = x0.shape[0]
    drv_cfg = _require(cfg, "driver")
    mc = _require(cfg, "mc")
    if "forms" in cfg:
        forms = tuple(build_form(fc, fields, n) for fc in cfg["forms"])
    else:
        forms = (build_form(_require(cfg, "form"), fields, n),)
    regions = tuple(
        Box(lo, hi) for lo, hi in (mc.get("event_regions") or [])
    )
    chunk = int(mc.get("chunk", 1024))
    if args.workers and args.workers > 1:
        chunk = max(1, math.ceil(chunk / args.workers))
    spec = ExperimentSpec(
        fields=fields,
        x0=tuple(x0),
        forms=forms,
        hurst=float(drv_cfg.get("hurst", 0.5)),
        horizon=float(drv_cfg.get("horizon", 1.0)),
        steps=drv_cfg.get("steps", 1024),
        substeps=drv_cfg.get("substeps", 2),
        event_regions=regions,
        replicates=mc.get("replicates", 10_000),
        master_seed=drv_cfg.get("seed", 0),
        atom_tol=float(mc["atom_tol"]) if "atom_tol" in mc else None,
        kernel_tol=float(mc.get("kernel_tol", 1e-7)),
        chunk=chunk,
    )
    samples = run_conditional_samples(spec)
    summary = samples.summary()
    out = _outdir(cfg, args)
    samples.to_csv(out / "samples.csv", comment=f"config_hash={_config_hash(args.config)}")
    _write_json(out / "summary.json", summary)
    _write_manifest(out, "density", args.config, cfg,
                    [out / "samples.csv", out / "summary.json", out / "manifest.json"])
    atoms = summary.get("atoms", [])
    rate = summary.get("kernel_vanishing_rate")
    print(f"density: {samples.n_conditional}/{samples.n} conditional samples, "
          f"{len(atoms)} atom(s), kernel vanishing rate {rate!r}")
    degenerate = bool(atoms) or (rate is not None and rate > 0.01)
    return 1 if degenerate else 0


def cmd_reconstruct(args) -> int:
    cfg = load_config(args.config)
    fields, x0 = build_system(cfg)
    path, substeps, _ = build_driver(cfg, len(fields))
    gcfg = _require(cfg, "grid")
    grid = build_grid(
        gcfg["bounds"], float(gcfg["eps"]), float(gcfg["delta"]),
        gcfg.get("regime", "elliptic"),
        fields=fields if gcfg.get("regime") == "step2" else None,
    )
    traj = solve(fields, x0, path, substeps, jacobian=False, inverse=False)
    truth = true_route(traj, grid)
    ambiguous = False
    try:
        recovered = recover_route(
            traj, grid,
            signif_tol=float(gcfg["signif_tol"]) if "signif_tol" in gcfg else None,
            max_len=gcfg.get("max_len", 16),
        )
    except AmbiguousRoute:
        ambiguous = True
        recovered = recover_route(
            traj, grid,
            signif_tol=float(gcfg["signif_tol"]) if "signif_tol" in gcfg else None,
            max_len=gcfg.get("max_len", 16),
            on_ambiguous="best",
        )
    match = recovered.labels == truth.labels
    report = {
        "recovered": [list(z) for z in recovered.labels],
        "true_route": [list(z) for z in truth.labels],
        "match": bool(match),
        "ambiguous": ambiguous,
        "clean_crossing": bool(
            clean_crossing(traj, grid, gcfg.get("min_dwell", 10))
        ),
        "recovered_signature": extended_signature(traj, recovered, grid),
        "true_signature": extended_signature(traj, truth, grid),
    }
    out = _outdir(cfg, args)
    _write_json(out / "route.json", report)
    _write_manifest(out, "reconstruct", args.config, cfg,
                    [out / "route.json", out / "manifest.json"])
    print(f"reconstruct: match={match} recovered={recovered} true={truth}")
    return 0 if match else 1


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    fields, x0 = build_system(cfg)
    path, substeps, _ = build_driver(cfg, len(fields))
    include_det = bool(cfg.get("output", {}).get("include_det", False))
    traj = solve(fields, x0, path, substeps)
    out = _outdir(cfg, args)
    target = out / "trajectory.csv"
    with open(target, "w") as fh:
        fh.write(f"# config_hash={_config_hash(args.config)}\n")
        traj.to_csv(fh, include_det=include_det)
    driver_target = out / "driver.csv"
    with open(driver_target, "w") as fh:
        fh.write(f"# config_hash={_config_hash(args.config)}\n")
        path.to_csv(fh)
    _write_manifest(out, "simulate", args.config, cfg,
                    [target, driver_target, out / "manifest.json"])
    print(f"simulate: {traj.steps} steps, final state {traj.x[-1].tolist()}")
    return 0


def cmd_selftest(args) -> int:
    """Fast invariant suite; nonzero exit on any failure."""
    failures = []

    def check(name, ok):
        print(f"  {'ok' if ok else 'FAIL'}  {name}")
        if not ok:
            failures.append(name)

    from .expr import evaluate
    from .geometry import (
        coframe_at, growth_vector, interior_product as ip,
        lie_bracket, two_form_expr,
    )
    from .systems import heisenberg_fields, identity_fields
    from .integrals import fd_directional_derivative, malliavin_kernel, signature
    from .driver import smooth_driver as smooth, uniform_mesh as umesh

    rng = np.random.default_rng(0)

    v1, v2 = heisenberg_fields()
    br = lie_bracket(v1, v2)
    check("bracket [V1,V2] = 2 dz", all(
        np.allclose(br(p), [0, 0, 2]) for p in rng.uniform(-2, 2, (5, 3))
    ))
    check("growth vector (2, 3)", growth_vector((v1, v2), [0.3, -0.1, 0.5]) == (2, 3))

    fr = build_frame((v1, v2), [0.0, 0.0, 0.0])
    p = [0.4, -0.7, 0.2]
    cf = coframe_at(fr, p)
    check("coframe duality", np.max(np.abs(cf @ fr.matrix_at(p) - np.eye(3))) < 1e-12)

    phi = one_form("y*z", "x^2", "x*y")
    worst = 0.0
    for q in rng.uniform(-1, 1, (20, 3)):
        lhs = np.array([evaluate(c, q) for c in ip(phi, v1).components])
        for j, ej in enumerate(np.eye(3)):
            ejf = vector_field(*[str(v) for v in ej])
            rhs = evaluate(two_form_expr(phi, v1, ejf), q)
            worst = max(worst, abs(lhs[j] - rhs))
    check("interior product vs two-form", worst < 1e-9)

    mesh = umesh(1.0, 256)
    circle = smooth(["cos(6.2831853071795865*t) - 1", "sin(6.2831853071795865*t)"], mesh)
    sig = signature(circle, 3)
    lvl2 = sig.levels[2]
    shoelace = 0.5 * float(
        np.sum(circle.values[:-1, 0] * np.diff(circle.values[:, 1])
               - circle.values[:-1, 1] * np.diff(circle.values[:, 0]))
    )
    check("level-2 area vs shoelace", abs(0.5 * (lvl2[0, 1] - lvl2[1, 0]) - shoelace) < 1e-10)
    s1 = signature(circle.values[:129], 3)
    s2 = signature(circle.values[128:], 3)
    check("multiplicative splitting", s1.product(s2).max_abs_diff(sig) < 1e-10)

    ids = identity_fields(2)
    f = parse("bump(x)*bump(y)")
    from .geometry import gradient_form
    phid = gradient_form(f, 2)
    w = smooth(["sin(3.1*t)*0.8", "t*0.9"], mesh)
    tr = solve(ids, [0.1, 0.0], w, substeps=2)
    h = smooth(["t*(1-t)", "sin(3.14159*t)*0.5"], mesh)
    k = malliavin_kernel(phid, tr)
    fd = fd_directional_derivative(lambda t: line_integral(phid, t), tr, h)
    rel = abs(k.pairing(h) - fd) / max(abs(fd), 1e-12)
    check("kernel vs finite difference", rel < 1e-3)

    grid = build_grid([(-2, 2), (-2, 2)], 1.0, 0.1)
    w2 = smooth(["3*t", "0"], mesh)
    tr2 = solve(ids, [-1.5, -1.5], w2, substeps=2, jacobian=False, inverse=False)
    check(
        "route recovery",
        recover_route(tr2, grid).labels == true_route(tr2, grid).labels,
    )

    if failures:
        print(f"selftest: {len(failures)} failure(s)")
        return 1
    print("selftest: all invariants hold")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="linesig",
        description="line integrals along rough systems: criteria, densities, routes",
    )
    parser.add_argument("--output", help="output directory (overrides config)")
    parser.add_argument(
        "--workers", type=int, default=0,
        help="worker hint; results are identical for any value",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, needs_config in (
        ("criterion", cmd_criterion, True),
        ("construct", cmd_construct, True),
        ("density", cmd_density, True),
        ("reconstruct", cmd_reconstruct, True),
        ("simulate", cmd_simulate, True),
        ("selftest", cmd_selftest, False),
    ):
        p = sub.add_parser(name)
        if needs_config:
            p.add_argument("config", help="path to the TOML configuration")
        p.set_defaults(func=fn)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
