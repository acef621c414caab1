"""Command-line entry point: ``hpinterp <subcommand> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
import time

import numpy as np

from . import __version__
from .config import ConfigError, SweepConfig, load_config
from .mesh import MeshError, check_admissibility, check_degree_compat, load_mesh, shape_regularity
from .sweeps import EQUIVALENCE_COLUMNS, INVERSE_COLUMNS, run_equivalence_sweep, run_inverse_sweep, write_csv

log = logging.getLogger("hpinterp")

LIFT_COLUMNS = ["draw", "degree", "edges", "trace", "face", "top", "division", "degree_ok"]
DECOMP_COLUMNS = ["mesh", "p", "dirichlet", "sample", "reconstruction", "v0_residual", "R"]
NORM_COLUMNS = ["mesh", "p", "sample", "theta", "discrete", "tquad", "oracle", "slobodeckij"]
MESH_COLUMNS = ["mesh", "vertices", "elements", "edges", "admissible", "degree_compatible", "shape_regularity"]
MATRIX_COLUMNS = ["matrix", "row", "col", "value"]

# tolerances for exit codes
LIFT_TOL = 1e-10
DECOMP_TOL = 1e-10


def _config(args, theta_range=(0.1, 0.9)) -> SweepConfig:
    cfg = load_config(args.config) if args.config else SweepConfig()
    cfg = cfg.with_overrides(seed=args.seed, out=args.out)
    if getattr(args, "mesh", None):
        from .config import MeshSpec
        cfg.meshes = [MeshSpec("file", path=args.mesh)]
    return cfg.validate(theta_range)


def _emit(rows, columns, out):
    text = write_csv(rows, columns, out)
    if out is None:
        sys.stdout.write(text)


def cmd_check_mesh(args):
    cfg = _config(args)
    rows, ok = [], True
    for spec in cfg.meshes:
        mesh = spec.build(cfg.degrees[0]) if spec.generator != "file" else load_mesh(spec.path)
        problems = check_admissibility(mesh)
        compat = check_degree_compat(mesh)
        for msg in problems:
            log.error("%s: %s", spec.label, msg)
        ok &= not problems and compat
        rows.append({"mesh": spec.label, "vertices": mesh.n_vertices, "elements": mesh.n_elements,
                     "edges": mesh.n_edges, "admissible": not problems, "degree_compatible": compat,
                     "shape_regularity": float(shape_regularity(mesh).max())})
    _emit(rows, MESH_COLUMNS, cfg.out)
    return 0 if ok else 1


def cmd_assemble(args):
    from .hpspace import HpSpace, assemble_mass, assemble_stiffness

    cfg = _config(args)
    spec = cfg.meshes[0]
    space = HpSpace(spec.build(cfg.degrees[0]), cfg.dirichlet)
    rows = []
    for name, form in (("M", assemble_mass(space)), ("S", assemble_stiffness(space))):
        A = form.matrix.tocoo()
        order = np.lexsort((A.col, A.row))
        for i in order:
            rows.append({"matrix": name, "row": int(A.row[i]), "col": int(A.col[i]), "value": float(A.data[i])})
    _emit(rows, MATRIX_COLUMNS, cfg.out)
    return 0


def cmd_norm(args):
    from .fracnorm import (NormOracle, SlobodeckijGram, ThetaParams, gen_eig, interp_norm_discrete,
                           interp_norm_tquad)
    from .hpspace import HpSpace, assemble_mass, assemble_stiffness

    cfg = _config(args)
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for spec in cfg.meshes:
        for p in cfg.degrees:
            space = HpSpace(spec.build(p), cfg.dirichlet)
            M = assemble_mass(space).toarray()
            S = assemble_stiffness(space).toarray()
            A = M + S if cfg.variant == "full" else S
            basis = gen_eig(M, A)
            oracle = NormOracle(space, cfg.oracle_levels, cfg.variant, max_dense=cfg.max_dense)
            U = rng.standard_normal((cfg.samples, space.ndof))
            for th in cfg.theta:
                par = ThetaParams(th, cfg.variant)
                G = SlobodeckijGram(space, th, 1).matrix
                for n, u in enumerate(U):
                    semi = float(np.sqrt(max(u @ G @ u, 0.0)))
                    slob = float(np.sqrt(semi ** 2 + u @ M @ u)) if cfg.variant == "full" else semi
                    rows.append({"mesh": spec.label, "p": p, "sample": n, "theta": th,
                                 "discrete": interp_norm_discrete(u, par, basis).value,
                                 "tquad": interp_norm_tquad(u, par, M, A).value,
                                 "oracle": oracle.norm_sequence(u, th)[-1],
                                 "slobodeckij": slob})
    _emit(rows, NORM_COLUMNS, cfg.out)
    return 0


def cmd_sweep_equivalence(args):
    cfg = _config(args)
    rows = run_equivalence_sweep(cfg, threads=args.threads, timing=args.timing)
    _emit(rows, EQUIVALENCE_COLUMNS, cfg.out)
    ok = all(r["C_low"] >= 1 - 1e-6 for r in rows)
    return 0 if ok else 1


def cmd_sweep_inverse(args):
    cfg = _config(args, theta_range=(0.0, 1.0))
    rows = run_inverse_sweep(cfg, threads=args.threads, timing=args.timing)
    _emit(rows, INVERSE_COLUMNS, cfg.out)
    ok = all(np.isfinite(r["constant"]) for r in rows)
    ok &= all(r["constant"] <= 1 + 1e-9 for r in rows if r["mode"] == "inverse" and r["theta"] == 1.0)
    return 0 if ok else 1


def cmd_lift_verify(args):
    from .lifting import verify_lift_identities

    cfg = _config(args)
    rows = verify_lift_identities(args.draws, args.max_degree, cfg.seed)
    _emit(rows, LIFT_COLUMNS, cfg.out)
    bad = [r for r in rows if not r["degree_ok"]
           or max(r["trace"], r["face"], r["top"], r["division"]) > LIFT_TOL]
    if bad:
        log.error("%d of %d draws exceed %.0e", len(bad), len(rows), LIFT_TOL)
    return 0 if not bad else 1


def cmd_decomp_verify(args):
    from .decomp import build_lift_trajectory, decompose, trace_integral
    from .fracnorm import gen_eig, interp_gram
    from .hpspace import HpSpace, assemble_mass, assemble_stiffness

    cfg = _config(args)
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for spec in cfg.meshes:
        for p in cfg.degrees:
            space = HpSpace(spec.build(p), cfg.dirichlet)
            M = assemble_mass(space).matrix
            S = assemble_stiffness(space).matrix
            G = interp_gram(gen_eig(M.toarray(), S.toarray()), 0.5)
            for n in range(cfg.samples):
                u = rng.standard_normal(space.ndof)
                d = decompose(u, space)
                traj = build_lift_trajectory(d, 0.5)
                v0 = traj([0.0])[0]
                target = u - d.u1
                ti = trace_integral(traj, 0.5, M, S)
                rows.append({"mesh": spec.label, "p": p, "dirichlet": cfg.dirichlet, "sample": n,
                             "reconstruction": d.residual(),
                             "v0_residual": float(np.linalg.norm(v0 - target) / max(np.linalg.norm(u), 1e-300)),
                             "R": float(target @ G @ target / ti) if ti > 0 else 0.0})
    _emit(rows, DECOMP_COLUMNS, cfg.out)
    ok = all(max(r["reconstruction"], r["v0_residual"]) <= DECOMP_TOL for r in rows)
    return 0 if ok else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="hpinterp", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, mesh=False):
        p.add_argument("--config", help="TOML sweep configuration")
        p.add_argument("--out", help="CSV output path (default: stdout)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for sweep points")
        p.add_argument("--timing", action="store_true", help="add a runtime_ms column")
        if mesh:
            p.add_argument("--mesh", help="JSON mesh file (overrides the config meshes)")
        return p

    common(sub.add_parser("check-mesh", help="validate meshes"), mesh=True).set_defaults(func=cmd_check_mesh)
    common(sub.add_parser("assemble", help="export mass and stiffness triplets"), mesh=True) \
        .set_defaults(func=cmd_assemble)
    common(sub.add_parser("norm", help="norms of random functions"), mesh=True).set_defaults(func=cmd_norm)
    common(sub.add_parser("sweep-equivalence", help="discrete vs oracle norm band")) \
        .set_defaults(func=cmd_sweep_equivalence)
    common(sub.add_parser("sweep-inverse", help="inverse-estimate constants")).set_defaults(func=cmd_sweep_inverse)
    p = common(sub.add_parser("lift-verify", help="exact identities of the lifting operators"))
    p.add_argument("--draws", type=int, default=500)
    p.add_argument("--max-degree", type=int, default=10)
    p.set_defaults(func=cmd_lift_verify)
    common(sub.add_parser("decomp-verify", help="decomposition and trajectory checks"), mesh=True) \
        .set_defaults(func=cmd_decomp_verify)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except (ConfigError, MeshError, OSError) as exc:
        log.error("%s", exc)
        return 2
    log.info("%s finished in %.2f s", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
