"""Experiment drivers: norm-equivalence and inverse-estimate sweeps."""
from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy import linalg

from .config import SweepConfig
from .fracnorm import NormOracle, equivalence_band, gen_eig
from .hpspace import HpSpace, assemble_mass, assemble_stiffness, assemble_weighted_stiffness

__all__ = [
    "EQUIVALENCE_COLUMNS",
    "INVERSE_COLUMNS",
    "normalized_gram",
    "inverse_constant",
    "corollary_constant",
    "run_equivalence_sweep",
    "run_inverse_sweep",
    "loglog_slope",
    "format_csv",
    "write_csv",
]

EQUIVALENCE_COLUMNS = ["mesh", "theta", "h_max", "p", "N", "C_low", "C_high", "oracle_levels"]
INVERSE_COLUMNS = ["mesh", "mode", "theta", "mu", "h_max", "p", "N", "constant"]


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def normalized_gram(basis, theta):
    """``Y diag(lam^theta) Y^T`` with ``Y = M Phi``: the interpolation Gram
    without the ``C_theta`` factor, equal to ``M`` at 0 and ``A`` at 1."""
    Y = basis.M @ basis.vectors
    lam = np.maximum(basis.eigenvalues, 0.0)
    B = (Y * lam ** theta) @ Y.T
    return 0.5 * (B + B.T)


def _lam_max(W, B):
    n = W.shape[0]
    return float(linalg.eigvalsh(W, B, subset_by_index=[n - 1, n - 1])[0])


def _full_basis(space):
    M = assemble_mass(space).toarray()
    S = assemble_stiffness(space).toarray()
    return gen_eig(M, M + S)


def inverse_constant(space: HpSpace, theta: float, basis=None) -> float:
    """``sqrt(lambda_max(W_theta, B_theta))`` for the weighted stiffness
    ``W_theta`` and the normalized interpolation Gram ``B_theta``."""
    basis = basis or _full_basis(space)
    W = assemble_weighted_stiffness(space, theta).toarray()
    return math.sqrt(max(_lam_max(W, normalized_gram(basis, theta)), 0.0))


def corollary_constant(space: HpSpace, theta: float, mu: float, basis=None) -> float:
    """Two-index constant: ``sup h^(mu - theta) p^(-2 (mu - theta)) ||u||_mu / ||u||_theta``.

    Uses the largest element diameter and the (uniform) degree, so it is
    meant for quasi-uniform meshes.
    """
    degrees = space.mesh.degrees
    if np.any(degrees != degrees[0]):
        raise ValueError("corollary constant needs a uniform polynomial degree")
    basis = basis or _full_basis(space)
    h = float(space.mesh.h.max())
    p = float(degrees[0])
    scale = h ** (2 * (mu - theta)) * p ** (-4 * (mu - theta))
    lam = _lam_max(normalized_gram(basis, mu), normalized_gram(basis, theta))
    return math.sqrt(max(scale * lam, 0.0))


def loglog_slope(ps, values):
    """Least-squares slope of ``log(values)`` against ``log(ps)``."""
    ps = np.asarray(ps, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(np.unique(ps)) < 2:
        return 0.0
    return float(np.polyfit(np.log(ps), np.log(v), 1)[0])


def run_equivalence_sweep(cfg: SweepConfig, threads: int = 1, timing: bool = False):
    """Equivalence band of discrete and oracle interpolation norms.

    One row per (mesh, p, theta) in config order.  ``runtime_ms`` is added
    when ``timing`` is set (it breaks byte-identical reruns).
    """
    cfg.validate()
    grid = [(m, p) for m in cfg.meshes for p in cfg.degrees]

    def point(item):
        spec, p = item
        t0 = time.perf_counter()
        space = HpSpace(spec.build(p), cfg.dirichlet)
        oracle = NormOracle(space, cfg.oracle_levels, cfg.variant, max_dense=cfg.max_dense)
        M = assemble_mass(space).toarray()
        S = assemble_stiffness(space).toarray()
        basis = gen_eig(M, M + S if cfg.variant == "full" else S)
        rows = []
        for th in cfg.theta:
            lo, hi = equivalence_band(space, th, oracle, variant=cfg.variant, basis=basis)
            rows.append({"mesh": spec.label, "theta": th, "h_max": float(space.mesh.h.max()), "p": p,
                         "N": space.ndof, "C_low": lo, "C_high": hi, "oracle_levels": cfg.oracle_levels})
        if timing:
            ms = (time.perf_counter() - t0) * 1e3 / len(rows)
            for r in rows:
                r["runtime_ms"] = ms
        return rows

    out = []
    for rows in _map(point, grid, threads):
        out.extend(rows)
    order = {th: i for i, th in enumerate(cfg.theta)}
    midx = {m.label: i for i, m in enumerate(cfg.meshes)}
    out.sort(key=lambda r: (midx[r["mesh"]], order[r["theta"]], r["p"]))
    return out


def run_inverse_sweep(cfg: SweepConfig, threads: int = 1, timing: bool = False):
    """Inverse-estimate constants, plus corollary rows for ``cfg.corollary`` pairs."""
    cfg.validate(theta_range=(0.0, 1.0))
    grid = [(m, p) for m in cfg.meshes for p in cfg.degrees]

    def point(item):
        spec, p = item
        t0 = time.perf_counter()
        space = HpSpace(spec.build(p), cfg.dirichlet)
        basis = _full_basis(space)
        base = {"mesh": spec.label, "h_max": float(space.mesh.h.max()), "p": p, "N": space.ndof}
        rows = [dict(base, mode="inverse", theta=th, mu="", constant=inverse_constant(space, th, basis))
                for th in cfg.theta]
        for th, mu in cfg.corollary:
            rows.append(dict(base, mode="corollary", theta=th, mu=mu,
                             constant=corollary_constant(space, th, mu, basis)))
        if timing:
            ms = (time.perf_counter() - t0) * 1e3 / len(rows)
            for r in rows:
                r["runtime_ms"] = ms
        return rows

    out = []
    for rows in _map(point, grid, threads):
        out.extend(rows)
    midx = {m.label: i for i, m in enumerate(cfg.meshes)}
    out.sort(key=lambda r: (midx[r["mesh"]], r["mode"] != "inverse", r["theta"], str(r["mu"]), r["p"]))
    return out


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def format_csv(rows, columns):
    """CSV text with a header row; floats use the shortest round-trip repr."""
    cols = list(columns)
    if rows and "runtime_ms" in rows[0] and "runtime_ms" not in cols:
        cols.append("runtime_ms")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in cols])
    return buf.getvalue()


def write_csv(rows, columns, path=None):
    text = format_csv(rows, columns)
    if path is None:
        return text
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return text
