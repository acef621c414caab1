"""Fractional norms: K-method interpolation norms and double-integral norms.

Discrete interpolation norms are exact through the generalized eigenpairs
of ``(A, M)``: with ``c = Phi^T M u``,

    K(t, u)^2 = sum_i c_i^2 lam_i t^2 / (1 + lam_i t^2)
    ||u||_theta^2 = C_theta * sum_i c_i^2 lam_i^theta,  C_theta = pi / (2 sin(pi theta)).

The t-quadrature routine evaluates the defining integral numerically from
direct solves and serves as an independent check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import legendre as npleg
from scipy import linalg

from . import reference as ref
from .hpspace import (
    HpSpace,
    assemble_mass,
    assemble_stiffness,
    build_space,
    integrated_legendre,
    project_local,
)
from .mesh import Mesh, check_admissibility, refine_uniform, single_element
from .polyalg import MultiPoly, gauss_jacobi, make_quadrature

__all__ = [
    "GenEigBasis",
    "ThetaParams",
    "NormReport",
    "QuadratureError",
    "gen_eig",
    "k_functional",
    "k_functional_direct",
    "c_theta",
    "interp_norm_discrete",
    "interp_norm_tquad",
    "interp_gram",
    "SlobodeckijGram",
    "slobodeckij_norm",
    "weighted_distance_norm",
    "NormOracle",
    "continuous_norm_oracle",
    "equivalence_band",
    "kvk_norm_compare",
]


class QuadratureError(RuntimeError):
    """Two quadrature refinement levels disagree beyond tolerance."""


def _dense(A):
    if sp.issparse(A):
        return A.toarray()
    if hasattr(A, "toarray"):
        return A.toarray()
    return np.asarray(A, dtype=float)


@dataclass
class GenEigBasis:
    """M-orthonormal eigenpairs of the pencil ``(A, M)``, eigenvalues ascending."""

    eigenvalues: np.ndarray
    vectors: np.ndarray
    M: np.ndarray
    A: np.ndarray

    def coordinates(self, u):
        """Expansion coefficients ``c = Phi^T M u`` (``u`` may hold columns)."""
        return self.vectors.T @ (self.M @ u)

    def residual(self):
        P, lam = self.vectors, self.eigenvalues
        return float(np.linalg.norm(self.A @ P - self.M @ P * lam) / max(np.linalg.norm(self.A), 1e-300))


@dataclass(frozen=True)
class ThetaParams:
    theta: float
    variant: str = "full"

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")
        if self.variant not in ("full", "seminorm"):
            raise ValueError("variant must be 'full' or 'seminorm'")


@dataclass
class NormReport:
    value: float
    method: str
    diagnostics: dict = field(default_factory=dict)

    @property
    def squared(self):
        return self.value ** 2


def _clean_kernel(lam, rtol=1e-12):
    """Set round-off eigenvalues of a semidefinite pencil to exactly zero.

    ``lam**theta`` amplifies noise of size 1e-15 to 1e-7 at theta = 1/2, so
    kernel modes have to be recognized explicitly.
    """
    lam = np.asarray(lam, dtype=float)
    scale = max(1.0, float(np.abs(lam).max())) if lam.size else 1.0
    return np.where(np.abs(lam) <= rtol * scale, 0.0, lam)


def gen_eig(M, A) -> GenEigBasis:
    """Solve ``A phi = lam M phi`` by Cholesky reduction ``M = L L^T``.

    Raises
    ------
    numpy.linalg.LinAlgError
        If ``M`` is not positive definite.
    """
    M = _dense(M)
    A = _dense(A)
    L = linalg.cholesky(M, lower=True)
    Linv_A = linalg.solve_triangular(L, A, lower=True)
    C = linalg.solve_triangular(L, Linv_A.T, lower=True)
    C = 0.5 * (C + C.T)
    lam, W = linalg.eigh(C)
    Phi = linalg.solve_triangular(L.T, W, lower=False)
    lam = _clean_kernel(lam)
    return GenEigBasis(lam, Phi, M, A)


def k_functional(u, t, basis: GenEigBasis) -> float:
    """``K(t, u)`` from the eigen expansion."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    c = basis.coordinates(np.asarray(u, dtype=float))
    lt = basis.eigenvalues * t * t
    return float(np.sqrt(np.sum(c ** 2 * lt / (1.0 + lt))))


def k_functional_direct(u, t, M, A):
    """``K(t, u)`` and its minimizer from ``(M + t^2 A) v = M u``."""
    if t <= 0:
        raise ValueError("t must be positive")
    M = _dense(M)
    A = _dense(A)
    u = np.asarray(u, dtype=float)
    v = linalg.solve(M + t * t * A, M @ u, assume_a="pos")
    d = u - v
    val = d @ M @ d + t * t * (v @ A @ v)
    return float(np.sqrt(max(val, 0.0))), v


def c_theta(theta: float) -> float:
    """``pi / (2 sin(pi theta))``, the single-mode value of the K-method integral."""
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    return math.pi / (2.0 * math.sin(math.pi * theta))


def interp_norm_discrete(u, params, basis: GenEigBasis) -> NormReport:
    """Exact discrete interpolation norm from the eigen expansion."""
    if not isinstance(params, ThetaParams):
        params = ThetaParams(float(params))
    c = basis.coordinates(np.asarray(u, dtype=float))
    val = c_theta(params.theta) * float(np.sum(c ** 2 * basis.eigenvalues ** params.theta))
    return NormReport(math.sqrt(max(val, 0.0)), "eigen-exact", {"modes": int(len(c)), "variant": params.variant})


def interp_gram(basis: GenEigBasis, theta: float) -> np.ndarray:
    """Gram matrix ``B`` with ``u^T B u = ||u||_theta^2``."""
    MP = basis.M @ basis.vectors
    B = (MP * (c_theta(theta) * basis.eigenvalues ** theta)) @ MP.T
    return 0.5 * (B + B.T)


def _tquad_value(theta, K2, tails, s_nodes, s_weights):
    t = np.exp(s_nodes)
    body = float(np.sum(s_weights * t ** (-2.0 * theta) * K2(t)))
    return body + tails


def interp_norm_tquad(u, params, M, A, t_min=1e-6, t_max=1e6, n_grid=200, points=5, rtol=1e-9) -> NormReport:
    """Evaluate the K-method integral by quadrature in ``log t``.

    ``K^2`` is obtained from direct solves at each node.  The grid points
    are panel breakpoints of a composite Gauss rule; contributions below
    ``t_min`` and above ``t_max`` come from the small-/large-``t``
    expansions of ``K^2``.

    Raises
    ------
    QuadratureError
        If the rule with ``points`` and ``points - 1`` nodes per panel disagree
        by more than ``rtol`` relative.
    """
    if not isinstance(params, ThetaParams):
        params = ThetaParams(float(params))
    th = params.theta
    M = _dense(M)
    A = _dense(A)
    u = np.asarray(u, dtype=float)
    Mu = M @ u
    if not np.any(u):
        return NormReport(0.0, "t-quadrature", {"tail": 0.0})
    # component of u in ker(A) contributes nothing
    Z = linalg.null_space(A, rcond=1e-12 * max(1.0, np.abs(A).max()) / max(1.0, np.abs(M).max()))
    if Z.shape[1]:
        G = Z.T @ M @ Z
        u_perp = u - Z @ linalg.solve(G, Z.T @ Mu)
        Zm = M @ Z @ linalg.cholesky(linalg.inv(G), lower=True)
        A_reg = A + Zm @ Zm.T
    else:
        u_perp = u
        A_reg = A
    Mup = M @ u_perp
    Au = A @ u_perp
    w1 = linalg.solve(M, Au, assume_a="pos")
    a1, a2, a3 = u_perp @ Au, Au @ w1, w1 @ A @ w1
    x1 = linalg.solve(A_reg, Mup, assume_a="pos")
    b0, b1, b2 = u_perp @ Mup, Mup @ x1, x1 @ M @ x1
    left = a1 * t_min ** (2 - 2 * th) / (2 - 2 * th) - a2 * t_min ** (4 - 2 * th) / (4 - 2 * th) \
        + a3 * t_min ** (6 - 2 * th) / (6 - 2 * th)
    right = b0 * t_max ** (-2 * th) / (2 * th) - b1 * t_max ** (-2 * th - 2) / (2 * th + 2) \
        + b2 * t_max ** (-2 * th - 4) / (2 * th + 4)
    tail_bound = abs(a3) * t_min ** (6 - 2 * th) + abs(b2) * t_max ** (-2 * th - 4)

    cache = {}

    def K2(ts):
        out = np.empty_like(ts)
        for i, t in enumerate(ts):
            if t not in cache:
                # v and u - v from separate right-hand sides to avoid cancellation
                fac = linalg.cho_factor(M + t * t * A_reg)
                v, d = linalg.cho_solve(fac, np.column_stack([Mup, t * t * Au])).T
                cache[t] = d @ M @ d + t * t * (v @ A @ v)
            out[i] = cache[t]
        return out

    edges = np.linspace(math.log(t_min), math.log(t_max), n_grid)

    def rule(npts):
        x, w = _leggauss(npts)
        a, b = edges[:-1, None], edges[1:, None]
        return (0.5 * (b - a) * x + 0.5 * (a + b)).ravel(), (0.5 * (b - a) * w).ravel()

    fine = _tquad_value(th, K2, left + right, *rule(points))
    coarse = _tquad_value(th, K2, left + right, *rule(points - 1))
    if abs(fine - coarse) > rtol * abs(fine):
        raise QuadratureError(f"t-grid too coarse: {fine} vs {coarse}")
    return NormReport(
        math.sqrt(max(fine, 0.0)),
        "t-quadrature",
        {"tail": left + right, "tail_bound": tail_bound, "refinement_gap": abs(fine - coarse), "nodes": len(cache)},
    )


# ------------------------------------------------------------ Slobodeckij norm

@lru_cache(maxsize=None)
def _leggauss(n):
    x, w = npleg.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _sigmoid(u, m=3):
    """Endpoint-clustering substitution on [0, 1] and its derivative."""
    a, b = u ** m, (1 - u) ** m
    g = a / (a + b)
    dg = m * u ** (m - 1) * (1 - u) ** (m - 1) / (a + b) ** 2
    return g, dg


def _clustered_gauss(n, m=3):
    x, w = _leggauss(n)
    u = 0.5 * (x + 1)
    g, dg = _sigmoid(u, m)
    return g, 0.5 * w * dg


class _Locator:
    """Point location and basis evaluation on a mesh."""

    def __init__(self, space: HpSpace):
        self.space = space
        mesh = space.mesh
        self.mesh = mesh
        polys = [mesh.vertices[list(e.vertex_ids)] for e in mesh.elements]
        # triangles padded with a repeated vertex; the degenerate edge never excludes
        self._A = np.stack([np.vstack([P, P[-1:]])[:4] if len(P) == 3 else P for P in polys])
        self._B = np.roll(self._A, -1, axis=1)
        self._len = np.hypot(*(self._B - self._A).transpose(2, 0, 1))

    def locate(self, pts, tol=1e-12):
        pts = np.asarray(pts, dtype=float)
        a, d = self._A, self._B - self._A
        cross = d[..., 0] * (pts[:, None, None, 1] - a[..., 1]) - d[..., 1] * (pts[:, None, None, 0] - a[..., 0])
        inside = np.all(cross >= -tol * self._len, axis=2)
        return np.where(inside.any(axis=1), inside.argmax(axis=1), -1)

    def basis_rows(self, pts, elems):
        """Sparse matrix ``(npts, ndof)`` of global basis values at points."""
        rows, cols, vals = [], [], []
        for k in np.unique(elems):
            if k < 0:
                continue
            sel = np.nonzero(elems == k)[0]
            shp, idx, sgn = self.space.local[k]
            xi = self.mesh.maps[k].inverse(pts[sel])
            V = shp.values(xi) * sgn[:, None]
            keep = idx >= 0
            V = V[keep]
            gi = idx[keep]
            rows.append(np.repeat(sel, len(gi)))
            cols.append(np.tile(gi, len(sel)))
            vals.append(V.T.ravel())
        n = self.space.ndof
        if not rows:
            return sp.csr_matrix((len(pts), n))
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(len(pts), n))


class SlobodeckijGram:
    """Gram matrix of the double-integral seminorm on an hp space.

    For every outer quadrature point ``x`` the inner integral over ``y`` is
    written in polar coordinates about ``x``.  Angles are split at the
    directions of mesh vertices, rays are split where they cross element
    edges, and the first ray segment uses a Gauss-Jacobi rule carrying the
    factor ``r^(1 - 2 theta)``.

    Parameters
    ----------
    space : HpSpace
    theta : float
    level : int
        Quadrature refinement level; node counts grow linearly with it.
    """

    BLOCK = 2 ** 22

    def __init__(self, space: HpSpace, theta: float, level: int = 0):
        if not 0.0 < theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        self.space = space
        self.theta = theta
        self.level = level
        pmax = int(space.mesh.degrees.max())
        # the outer integrand is least regular (near the boundary), so it gets most nodes
        self.n_outer = 12 + 2 * pmax + 4 * level
        self.n_phi = pmax + 5 + 2 * level
        self.n_r = pmax + 3 + 2 * level
        self.matrix = self._assemble()

    def _outer_rule(self, k):
        mesh = self.space.mesh
        g, w = _clustered_gauss(self.n_outer)
        if mesh.elements[k].kind == "quad":
            xi = ref.RECT_X[0] + (ref.RECT_X[1] - ref.RECT_X[0]) * g
            eta = ref.RECT_Y[0] + (ref.RECT_Y[1] - ref.RECT_Y[0]) * g
            wx = (ref.RECT_X[1] - ref.RECT_X[0]) * w
            wy = (ref.RECT_Y[1] - ref.RECT_Y[0]) * w
            X, Y = np.meshgrid(xi, eta, indexing="ij")
            pts = np.column_stack([X.ravel(), Y.ravel()])
            wts = np.outer(wx, wy).ravel()
        else:
            xi = ref.RECT_X[0] + (ref.RECT_X[1] - ref.RECT_X[0]) * g
            eta = ref.RECT_Y[0] + (ref.RECT_Y[1] - ref.RECT_Y[0]) * g
            wx = (ref.RECT_X[1] - ref.RECT_X[0]) * w
            wy = (ref.RECT_Y[1] - ref.RECT_Y[0]) * w
            X, Y = np.meshgrid(xi, eta, indexing="ij")
            px, py = ref.duffy(X, Y)
            pts = np.column_stack([px.ravel(), py.ravel()])
            wts = (np.outer(wx, wy) * ref.duffy_jacobian(Y)).ravel()
        m = mesh.maps[k]
        det = np.linalg.det(m.jacobian(pts))
        return m(pts), wts * det

    def _rays(self, x):
        """Inner quadrature about ``x``: points ``y``, weights and kernel values.

        On the first ray segment the Gauss-Jacobi weight carries
        ``r^(1 - 2 theta)`` and the kernel is ``1 / r^2``; elsewhere the kernel
        is ``r^(-2 - 2 theta)`` and the weight carries the polar factor ``r``.
        """
        th = self.theta
        V = self.space.mesh.vertices
        d = V - x
        dist = np.hypot(d[:, 0], d[:, 1])
        cuts = np.unique(np.mod(np.arctan2(d[:, 1], d[:, 0])[dist > 1e-12], 2 * np.pi))
        if cuts.size == 0:
            cuts = np.array([0.0])
        cuts = np.concatenate([cuts, [cuts[0] + 2 * np.pi]])
        gphi, wphi = _clustered_gauss(self.n_phi, m=2)
        xr, wr = _leggauss(self.n_r)
        xj, wj = gauss_jacobi(self.n_r, 0.0, 1.0 - 2.0 * th, 0.0, 1.0)
        E = self._edges
        e0 = E[:, 0] - x
        e1 = E[:, 1] - E[:, 0]
        cr = e0[:, 0] * e1[:, 1] - e0[:, 1] * e1[:, 0]
        ys, ws, ks, es = [], [], [], []
        for a, b in zip(cuts[:-1], cuts[1:]):
            if b - a < 1e-14:
                continue
            phis = a + (b - a) * gphi
            wp = (b - a) * wphi
            om = np.column_stack([np.cos(phis), np.sin(phis)])
            # crossings of x + r om with every edge, one row per ray
            den = om[:, :1] * e1[:, 1] - om[:, 1:] * e1[:, 0]
            ok = np.abs(den) > 1e-14
            safe = np.where(ok, den, 1.0)
            r = cr / safe
            s = (e0[:, 0] * om[:, 1:] - e0[:, 1] * om[:, :1]) / safe
            hit = ok & (r > 1e-13) & (s >= -1e-12) & (s <= 1 + 1e-12)
            # the hit pattern is constant inside a sector; use the middle ray
            mid = len(phis) // 2
            cols = np.nonzero(hit[mid])[0]
            if cols.size == 0:
                continue
            R = np.sort(r[:, cols], axis=1)
            keep = np.concatenate([[True], np.diff(R[mid]) > 1e-12])
            R = R[:, keep]
            knots = np.column_stack([np.zeros(len(phis)), R])
            mids = x + 0.5 * (knots[mid, :-1] + knots[mid, 1:])[:, None] * om[mid]
            owner = self._locator.locate(mids)
            for j in range(knots.shape[1] - 1):
                if owner[j] < 0:
                    continue
                r0, r1 = knots[:, j], knots[:, j + 1]
                if j == 0:
                    rn = r1[:, None] * xj
                    wn = r1[:, None] ** (2.0 - 2.0 * th) * wj * wp[:, None]
                    kn = 1.0 / rn ** 2
                    ys.append(x + rn[..., None] * om[:, None, :])
                    ws.append(wn)
                    ks.append(kn)
                    es.append(np.full(rn.size, owner[j]))
                    continue
                # geometric subdivision keeps r^(-1-2theta) well resolved
                nsub = max(1, int(math.ceil(np.max(np.log(r1 / r0)) / math.log(4.0))))
                frac = np.arange(nsub + 1) / nsub
                pts = r0[:, None] * (r1 / r0)[:, None] ** frac
                for c0, c1 in zip(pts[:, :-1].T, pts[:, 1:].T):
                    rn = 0.5 * (c1 - c0)[:, None] * xr + 0.5 * (c1 + c0)[:, None]
                    wn = 0.5 * (c1 - c0)[:, None] * wr * rn * wp[:, None]
                    ys.append(x + rn[..., None] * om[:, None, :])
                    ws.append(wn)
                    ks.append(rn ** (-2.0 - 2.0 * th))
                    es.append(np.full(rn.size, owner[j]))
        return (np.concatenate([y.reshape(-1, 2) for y in ys]), np.concatenate([w.ravel() for w in ws]),
                np.concatenate([k.ravel() for k in ks]), np.concatenate(es))

    def _assemble(self):
        space = self.space
        mesh = space.mesh
        self._edges = mesh.vertices[mesh.edges]
        self._locator = _Locator(space)
        n = space.ndof
        G = np.zeros((n, n))
        for k in range(mesh.n_elements):
            X, WX = self._outer_rule(k)
            Bx = self._locator.basis_rows(X, np.full(len(X), k)).toarray()
            batch_y, batch_w, batch_e, owner = [], [], [], []
            count = 0

            def flush():
                y = np.concatenate(batch_y)
                w = np.concatenate(batch_w)
                By = self._locator.basis_rows(y, np.concatenate(batch_e))
                D = By.toarray() - Bx[np.concatenate(owner)]
                return (D.T * w) @ D

            for q in range(len(X)):
                y, w, kern, el = self._rays(X[q])
                batch_y.append(y)
                batch_w.append(w * kern * WX[q])
                batch_e.append(el)
                owner.append(np.full(len(y), q))
                count += len(y)
                # bound the dense (points x ndof) block
                if count * n > self.BLOCK:
                    G += flush()
                    batch_y, batch_w, batch_e, owner = [], [], [], []
                    count = 0
            if count:
                G += flush()
        return 0.5 * (G + G.T)

    def seminorm(self, u):
        u = np.asarray(u, dtype=float)
        return math.sqrt(max(float(u @ self.matrix @ u), 0.0))


def slobodeckij_norm(u, space: HpSpace, theta: float, full: bool = False, level: int = 1, check: bool = True,
                     rtol: float = 1e-3) -> NormReport:
    """Double-integral (Aronstein-Slobodeckij) seminorm or full norm of ``u``.

    With ``check=True`` the value is recomputed at ``level + 1`` and a
    :class:`QuadratureError` is raised when the two differ by more than
    ``rtol`` relative.
    """
    u = np.asarray(u, dtype=float)
    G = SlobodeckijGram(space, theta, level)
    semi2 = float(u @ G.matrix @ u)
    diag = {"level": level, "seminorm_sq": semi2}
    if check:
        G2 = SlobodeckijGram(space, theta, level + 1)
        semi2b = float(u @ G2.matrix @ u)
        diag["seminorm_sq_refined"] = semi2b
        scale = max(abs(semi2b), 1e-300)
        if abs(semi2 - semi2b) > rtol * scale and abs(semi2 - semi2b) > 1e-14:
            raise QuadratureError(f"double integral not converged: {semi2} vs {semi2b}")
    val = semi2
    if full:
        M = assemble_mass(space).toarray()
        val += float(u @ M @ u)
    return NormReport(math.sqrt(max(val, 0.0)), "double-integral", diag)


# --------------------------------------------------------- weighted distance

def _clip(poly, a, c):
    """Clip a convex polygon to the half-plane ``a . x + c <= 0``."""
    out = []
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        fp, fq = a @ p + c, a @ q + c
        if fp <= 0:
            out.append(p)
        if fp * fq < 0:
            out.append(p + (q - p) * fp / (fp - fq))
    return out


def _polygon_area(P):
    x, y = P[:, 0], P[:, 1]
    return 0.5 * (x @ np.roll(y, -1) - y @ np.roll(x, -1))


def _weighted_distance_sq(f, domain_poly, lines, theta, n):
    """Integral of ``f^2 * dist^(-2 theta)`` where dist is the min over ``lines``."""
    total = 0.0
    xg, wg = _leggauss(n)
    sg, wsg = 0.5 * (xg + 1), 0.5 * wg
    # for theta >= 1/2 the weight (1-w)^(-2 theta) is not integrable; the
    # integral is then finite only if f vanishes on the edge, and the rule
    # absorbs (1-w)^(2-2 theta) with f^2 / (1-w)^2 left as integrand
    side_shift = 0.0 if theta < 0.5 else 2.0
    wj_side = gauss_jacobi(n, side_shift - 2.0 * theta, 0.0, 0.0, 1.0)
    wj_vert = gauss_jacobi(n, 0.0, 1.0 - 2.0 * theta, 0.0, 1.0)
    for i, (ai, ci) in enumerate(lines):
        region = [np.asarray(p, dtype=float) for p in domain_poly]
        for j, (aj, cj) in enumerate(lines):
            if j != i and region:
                # keep points with l_i <= l_j, l = a . x + c the distance
                region = _clip(region, ai - aj, ci - cj)
        if len(region) < 3:
            continue
        R = np.array(region)
        if abs(_polygon_area(R)) < 1e-15:
            continue
        ctr = R.mean(axis=0)
        for k in range(len(R)):
            P, Q = R[k], R[(k + 1) % len(R)]
            area2 = abs((P[0] - ctr[0]) * (Q[1] - ctr[1]) - (P[1] - ctr[1]) * (Q[0] - ctr[0]))
            if area2 < 1e-15:
                continue
            dP, dQ = ai @ P + ci, ai @ Q + ci
            tol = 1e-12
            if abs(dP) < tol and abs(dQ) < tol:
                # side on the singular line: x = ctr + w (B(s) - ctr), dist = (1 - w) dist(ctr)
                w, ww = wj_side
                W, S = np.meshgrid(w, sg, indexing="ij")
                B = P + S[..., None] * (Q - P)
                X = ctr + W[..., None] * (B - ctr)
                vals = f(X[..., 0], X[..., 1]) ** 2 / (1.0 - W) ** side_shift
                wt = np.outer(ww, wsg) * W * area2 * (ai @ ctr + ci) ** (-2.0 * theta)
                total += float(np.sum(vals * wt))
            elif abs(dP) < tol or abs(dQ) < tol:
                V0, V1 = (P, Q) if abs(dP) < tol else (Q, P)
                w, ww = wj_vert
                W, S = np.meshgrid(w, sg, indexing="ij")
                Bs = (1 - S[..., None]) * ctr + S[..., None] * V1
                X = V0 + W[..., None] * (Bs - V0)
                g = np.einsum("...k,k->...", Bs, ai) + ci
                vals = f(X[..., 0], X[..., 1]) ** 2
                wt = np.outer(ww, wsg) * area2 * g ** (-2.0 * theta)
                total += float(np.sum(vals * wt))
            else:
                W, S = np.meshgrid(sg, sg, indexing="ij")
                WW = np.outer(wsg, wsg)
                B = P + S[..., None] * (Q - P)
                X = ctr + W[..., None] * (B - ctr)
                d = np.einsum("...k,k->...", X, ai) + ci
                vals = f(X[..., 0], X[..., 1]) ** 2 * d ** (-2.0 * theta)
                total += float(np.sum(vals * WW * W * area2))
    return total


def reference_polygon(domain):
    if domain in ("triangle", "tri"):
        return [ref.TRI_VERTS[0], ref.TRI_VERTS[2], ref.TRI_VERTS[1]]
    if domain in ("box", "quad"):
        return list(ref.RECT_VERTS)
    raise ValueError(f"unknown domain {domain!r}")


def edge_lines(domain, edges):
    """Distance forms ``a . x + c`` (unit normal, positive inside) for reference edges.

    Triangle edges are named ``4, 5, 6`` (opposite v1, v2, v3); rectangle
    edges ``0..3`` counterclockwise from the bottom.
    """
    poly = reference_polygon(domain)
    ctr = np.mean(poly, axis=0)
    out = []
    for e in edges:
        if domain in ("triangle", "tri"):
            i, j = ref.BASE_EDGES[int(e)]
            P, Q = ref.TRI_VERTS[i], ref.TRI_VERTS[j]
        else:
            P, Q = poly[int(e)], poly[(int(e) + 1) % 4]
        t = (Q - P) / np.linalg.norm(Q - P)
        a = np.array([-t[1], t[0]])
        c = -a @ P
        if a @ ctr + c < 0:
            a, c = -a, -c
        out.append((a, c))
    return out


def weighted_distance_norm(f, edges, theta, domain="triangle", level=0, rtol=0.01):
    """``|| dist(., E)^(-theta) f ||_{L2}`` on a reference element.

    ``dist`` is the distance to the union of the given reference edges.  The
    reference elements have no obtuse angles, so the distance to an edge
    equals the distance to its supporting line inside the element and the
    element splits into convex regions where one edge is nearest.  Each
    region is fanned into triangles; triangles touching the nearest edge
    use collapsed Gauss-Jacobi rules that absorb the singular factor.

    Returns
    -------
    NormReport
        ``diagnostics["levels"]`` holds the two level values; a relative gap
        above ``rtol`` sets ``diagnostics["diverged"]``.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    lines = edge_lines(domain, edges)
    poly = reference_polygon(domain)
    if not lines:
        raise ValueError("edge set must not be empty")
    deg = f.degree if isinstance(f, MultiPoly) else 6
    n0 = deg + 4 + 4 * level
    v0 = _weighted_distance_sq(f, poly, lines, theta, n0)
    v1 = _weighted_distance_sq(f, poly, lines, theta, n0 + 6)
    gap = abs(v0 - v1) / max(abs(v1), 1e-300)
    diag = {"levels": (v0, v1), "diverged": bool(gap > rtol and abs(v0 - v1) > 1e-14)}
    return NormReport(math.sqrt(max(v1, 0.0)), "weighted-distance", diag)


# ---------------------------------------------------------- continuous oracle

def _enriched_mesh(mesh: Mesh, level: int, extra_degree: int = 2):
    """Refine ``level`` times, raising degrees by ``extra_degree`` per level.

    Returns the fine mesh and, per fine element, the coarse element and the
    fine-to-coarse reference map.
    """
    fine = mesh
    chain = [(k, None) for k in range(mesh.n_elements)]
    for _ in range(level):
        fine = refine_uniform(fine)
        chain = [(chain[p][0], g if chain[p][1] is None else g.then(chain[p][1])) for p, g in fine.parents]
        fine = fine.with_degrees(fine.degrees + extra_degree)
    return fine, chain


def _is_tensor_grid(mesh: Mesh):
    if any(e.kind != "quad" for e in mesh.elements):
        return None
    if len(set(mesh.degrees.tolist())) != 1:
        return None
    xs = np.unique(np.round(mesh.vertices[:, 0], 12))
    ys = np.unique(np.round(mesh.vertices[:, 1], 12))
    if len(xs) * len(ys) != mesh.n_vertices or (len(xs) - 1) * (len(ys) - 1) != mesh.n_elements:
        return None
    for e in mesh.elements:
        P = mesh.vertices[list(e.vertex_ids)]
        if not (np.isclose(P[0, 1], P[1, 1]) and np.isclose(P[2, 1], P[3, 1])
                and np.isclose(P[0, 0], P[3, 0]) and np.isclose(P[1, 0], P[2, 0])):
            return None
    return xs, ys


class _Space1D:
    """C0 hierarchical space of degree ``p`` on a 1D partition."""

    def __init__(self, nodes, p, dirichlet):
        self.nodes = np.asarray(nodes, dtype=float)
        self.p = p
        ncell = len(nodes) - 1
        nv = len(nodes)
        idx = []
        free_v = [i for i in range(nv) if not (dirichlet and i in (0, nv - 1))]
        vmap = {v: i for i, v in enumerate(free_v)}
        n = len(free_v)
        for c in range(ncell):
            loc = [vmap.get(c, -1), vmap.get(c + 1, -1)]
            for _ in range(2, p + 1):
                loc.append(n)
                n += 1
            idx.append(np.array(loc))
        self.idx = idx
        self.ndof = n
        self._polys = [np.array([0.5, -0.5]), np.array([0.5, 0.5])] + [integrated_legendre(k) for k in range(2, p + 1)]

    def local_values(self, s):
        from numpy.polynomial import polynomial as nppoly
        return np.array([nppoly.polyval(s, c) for c in self._polys])

    def local_derivs(self, s):
        from numpy.polynomial import polynomial as nppoly
        return np.array([nppoly.polyval(s, nppoly.polyder(c)) for c in self._polys])

    def matrices(self):
        x, w = _leggauss(self.p + 2)
        V = self.local_values(x)
        D = self.local_derivs(x)
        M = np.zeros((self.ndof, self.ndof))
        S = np.zeros((self.ndof, self.ndof))
        for c, loc in enumerate(self.idx):
            h = self.nodes[c + 1] - self.nodes[c]
            Ml = (V * w) @ V.T * (h / 2)
            Sl = (D * w) @ D.T * (2 / h)
            keep = loc >= 0
            ii = loc[keep]
            M[np.ix_(ii, ii)] += Ml[np.ix_(keep, keep)]
            S[np.ix_(ii, ii)] += Sl[np.ix_(keep, keep)]
        return M, S

    def eval_matrix(self, pts):
        """``(ndof, npts)`` values of the basis at physical points."""
        pts = np.asarray(pts, dtype=float)
        out = np.zeros((self.ndof, len(pts)))
        cell = np.clip(np.searchsorted(self.nodes, pts, side="right") - 1, 0, len(self.nodes) - 2)
        for c in np.unique(cell):
            sel = cell == c
            a, b = self.nodes[c], self.nodes[c + 1]
            s = 2 * (pts[sel] - a) / (b - a) - 1
            V = self.local_values(s)
            loc = self.idx[c]
            for i, g in enumerate(loc):
                if g >= 0:
                    out[g, sel] += V[i]
        return out


def _refine_nodes(nodes, level):
    for _ in range(level):
        mids = 0.5 * (nodes[:-1] + nodes[1:])
        nodes = np.sort(np.concatenate([nodes, mids]))
    return nodes


class NormOracle:
    """Interpolation norms on enriched superspaces of an hp space.

    Level ``l`` refines the mesh ``l`` times and raises every degree by
    ``2 l``; the enriched spaces contain the original one, so the norms
    decrease monotonically with the level.  Axis-aligned tensor grids of
    uniform degree use separable 1D eigenproblems; other meshes use a dense
    eigen-solve on the enriched space.

    Parameters
    ----------
    space : HpSpace
    levels : int
    variant : {"full", "seminorm"}
    method : {"auto", "dense", "tensor"}
    max_dense : int
        Largest enriched dimension handled by the dense path.
    """

    def __init__(self, space: HpSpace, levels: int = 2, variant: str = "full", method: str = "auto",
                 max_dense: int = 4000):
        self.space = space
        self.levels = int(levels)
        self.variant = variant
        grid = _is_tensor_grid(space.mesh)
        if method == "auto":
            method = "tensor" if grid is not None else "dense"
        if method == "tensor" and grid is None:
            raise ValueError("tensor path needs an axis-aligned grid of uniform degree")
        self.method = method
        self._grid = grid
        self._max_dense = max_dense
        self._data = {}

    def level_data(self, level):
        """Eigenvalues ``lam`` and projections ``Y = Phi^T M_fc`` at a level."""
        if level not in self._data:
            if level == 0:
                self._data[0] = self._coarse()
            elif self.method == "tensor":
                self._data[level] = self._tensor(level)
            else:
                self._data[level] = self._dense_level(level)
        return self._data[level]

    def _pencil(self, space):
        M = assemble_mass(space).toarray()
        S = assemble_stiffness(space).toarray()
        return M, (M + S if self.variant == "full" else S)

    def _coarse(self):
        M, A = self._pencil(self.space)
        b = gen_eig(M, A)
        return b.eigenvalues, b.vectors.T @ M

    def _dense_level(self, level):
        fine_mesh, chain = _enriched_mesh(self.space.mesh, level)
        fine = HpSpace(fine_mesh, self.space.dirichlet)
        if fine.ndof > self._max_dense:
            raise MemoryError(f"enriched space has {fine.ndof} dofs (limit {self._max_dense})")
        M, A = self._pencil(fine)
        b = gen_eig(M, A)
        Mfc = mixed_mass(fine, self.space, chain)
        return b.eigenvalues, b.vectors.T @ Mfc

    def _tensor(self, level):
        xs, ys = self._grid
        p = int(self.space.mesh.degrees[0]) + 2 * level
        fx = _Space1D(_refine_nodes(xs, level), p, self.space.dirichlet)
        fy = _Space1D(_refine_nodes(ys, level), p, self.space.dirichlet)
        out = []
        for f in (fx, fy):
            M, S = f.matrices()
            b = gen_eig(M, S)
            out.append(b)
        bx, by = out
        mu_x, mu_y = bx.eigenvalues, by.eigenvalues
        lam = (mu_x[:, None] + mu_y[None, :]).ravel()
        if self.variant == "full":
            lam = lam + 1.0
        else:
            lam = _clean_kernel(lam)
        Y = np.zeros((fx.ndof, fy.ndof, self.space.ndof))
        xg, wg = _leggauss(p + 1)
        mesh = self.space.mesh
        nsub = 2 ** level
        for k, e in enumerate(mesh.elements):
            P = mesh.vertices[list(e.vertex_ids)]
            x0, x1 = P[0, 0], P[1, 0]
            y0, y1 = P[0, 1], P[3, 1]
            sub_x = np.linspace(x0, x1, nsub + 1)
            sub_y = np.linspace(y0, y1, nsub + 1)
            px = np.concatenate([0.5 * (b - a) * xg + 0.5 * (a + b) for a, b in zip(sub_x[:-1], sub_x[1:])])
            wx = np.concatenate([0.5 * abs(b - a) * wg for a, b in zip(sub_x[:-1], sub_x[1:])])
            py = np.concatenate([0.5 * (b - a) * xg + 0.5 * (a + b) for a, b in zip(sub_y[:-1], sub_y[1:])])
            wy = np.concatenate([0.5 * abs(b - a) * wg for a, b in zip(sub_y[:-1], sub_y[1:])])
            # reference coordinates of the tensor grid inside element k
            rx = -1.0 + 2.0 * (px - x0) / (x1 - x0)
            ry = ref.RECT_Y[0] + ref.SQRT3 * (py - y0) / (y1 - y0)
            RX, RY = np.meshgrid(rx, ry, indexing="ij")
            shp, idx, sgn = self.space.local[k]
            vals = shp.values(np.column_stack([RX.ravel(), RY.ravel()])) * sgn[:, None]
            vals = vals.reshape(len(shp), len(px), len(py))
            keep = idx >= 0
            vals = vals[keep]
            Ex = bx.vectors.T @ fx.eval_matrix(px) * wx
            Ey = by.vectors.T @ fy.eval_matrix(py) * wy
            T1 = np.einsum("ia,lab->ilb", Ex, vals)
            Y[:, :, idx[keep]] += np.einsum("ilb,jb->ijl", T1, Ey)
        return lam, Y.reshape(fx.ndof * fy.ndof, self.space.ndof)

    def gram(self, theta, level=None):
        """Oracle Gram matrix on the original space at ``level`` (default: deepest)."""
        level = self.levels if level is None else level
        lam, Y = self.level_data(level)
        B = (Y.T * (c_theta(theta) * np.maximum(lam, 0.0) ** theta)) @ Y
        return 0.5 * (B + B.T)

    def norm_sequence(self, u, theta):
        u = np.asarray(u, dtype=float)
        out = []
        for level in range(self.levels + 1):
            lam, Y = self.level_data(level)
            c = Y @ u
            out.append(math.sqrt(max(c_theta(theta) * float(np.sum(c ** 2 * np.maximum(lam, 0.0) ** theta)), 0.0)))
        return out


def mixed_mass(fine: HpSpace, coarse: HpSpace, chain) -> np.ndarray:
    """``M_fc[i, j] = int phi_i^fine phi_j^coarse`` for nested spaces."""
    Mfc = np.zeros((fine.ndof, coarse.ndof))
    for k, (K, g) in enumerate(chain):
        shp_f, idx_f, sgn_f = fine.local[k]
        shp_c, idx_c, sgn_c = coarse.local[K]
        kind = shp_f.kind
        rule = make_quadrature("triangle" if kind == "tri" else "box", shp_f.degree + shp_c.degree + 3)
        det = np.linalg.det(fine.mesh.maps[k].jacobian(rule.nodes))
        w = rule.weights * det
        Vf = shp_f.values(rule.nodes) * sgn_f[:, None]
        cpts = rule.nodes if g is None else g(rule.nodes)
        Vc = shp_c.values(cpts) * sgn_c[:, None]
        loc = (Vf * w) @ Vc.T
        kf, kc = idx_f >= 0, idx_c >= 0
        Mfc[np.ix_(idx_f[kf], idx_c[kc])] += loc[np.ix_(kf, kc)]
    return Mfc


def continuous_norm_oracle(u, space: HpSpace, theta: float, levels: int = 2, variant: str = "full",
                           oracle: NormOracle | None = None) -> NormReport:
    """Approximate the continuous interpolation norm of ``u`` from above.

    Raises
    ------
    RuntimeError
        If the sequence over levels increases by more than ``1e-9`` relative,
        which would indicate a broken embedding.
    """
    oracle = oracle or NormOracle(space, levels, variant)
    seq = oracle.norm_sequence(u, theta)
    for a, b in zip(seq[:-1], seq[1:]):
        if b > a * (1 + 1e-9) + 1e-14:
            raise RuntimeError(f"oracle sequence not monotone: {seq}")
    decrements = [a - b for a, b in zip(seq[:-1], seq[1:])]
    return NormReport(seq[-1], "oracle", {"sequence": seq, "decrements": decrements, "method": oracle.method})


def equivalence_band(space: HpSpace, theta: float, oracle: NormOracle | None = None, levels: int = 2,
                     variant: str = "full", basis: GenEigBasis | None = None):
    """Extreme generalized eigenvalues of (discrete Gram, oracle Gram).

    Returns
    -------
    (C_low, C_high) : tuple of float
        Bounds for ``||u||_disc^2 / ||u||_oracle^2`` over the space.
    """
    oracle = oracle or NormOracle(space, levels, variant)
    if basis is None:
        M = assemble_mass(space).toarray()
        S = assemble_stiffness(space).toarray()
        basis = gen_eig(M, M + S if variant == "full" else S)
    Bd = interp_gram(basis, theta)
    Bo = oracle.gram(theta)
    ev = linalg.eigvalsh(Bd, Bo)
    return float(ev[0]), float(ev[-1])


def kvk_norm_compare(u, theta, H, M, S):
    """Compare the K-method norm for ``||.||_1^2 = H^-2 ||.||_0^2 + |.|_1^2``
    with ``H^(-2 theta) ||u||_0^2 + |u|_theta^2``.

    Returns
    -------
    (norm, tilde_norm, ratio) : ratio is ``nan`` for ``u = 0``.
    """
    M = _dense(M)
    S = _dense(S)
    u = np.asarray(u, dtype=float)
    full = interp_norm_discrete(u, ThetaParams(theta), gen_eig(M, M / H ** 2 + S)).value
    semi = interp_norm_discrete(u, ThetaParams(theta, "seminorm"), gen_eig(M, S)).value
    tilde = math.sqrt(H ** (-2 * theta) * float(u @ M @ u) + semi ** 2)
    ratio = full / tilde if tilde > 0 else float("nan")
    return full, tilde, ratio


def reference_space(kind, degree, dirichlet=False):
    """One-element space on the reference triangle or rectangle."""
    return HpSpace(single_element(kind, degree), dirichlet)


def poly_coefficients(space: HpSpace, f: MultiPoly, K: int = 0, tol: float = 1e-8):
    """Global coefficients of a polynomial on a one-element space."""
    if space.mesh.n_elements != 1:
        raise ValueError("only one-element spaces are supported")
    c, res = project_local(space, K, f)
    scale = max(1.0, f.norm())
    if res > tol * scale:
        raise ValueError(f"polynomial not in the space (residual {res:.2e})")
    _, idx, sgn = space.local[K]
    u = np.zeros(space.ndof)
    keep = idx >= 0
    u[idx[keep]] = (c * sgn)[keep]
    return u
