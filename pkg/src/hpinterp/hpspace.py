"""Continuous hp finite element spaces on triangle/quad meshes.

Shape functions are hierarchical: vertex hats, edge modes built from
integrated Legendre polynomials, and interior bubbles.  Edge modes use the
global edge orientation (lower vertex id first), so odd modes flip sign on
elements whose local orientation disagrees.  Shared edges carry the
minimum of the neighbouring degrees.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import legendre as npleg
from numpy.polynomial import polynomial as nppoly
from scipy import linalg

from . import reference as ref
from .mesh import Mesh, check_admissibility, check_degree_compat
from .polyalg import AffineMap, MultiPoly, barycentric_polys, compose_affine, gauss_lobatto_nodes, make_quadrature

__all__ = [
    "ShapeSet",
    "shape_set",
    "element_matrices",
    "project_local",
    "HpSpace",
    "SymForm",
    "build_space",
    "assemble_mass",
    "assemble_stiffness",
    "assemble_weighted_stiffness",
    "gl_interpolate",
    "nodal_lowest_order",
    "integrated_legendre",
]


# ------------------------------------------------------------------ 1D pieces

@lru_cache(maxsize=None)
def integrated_legendre(k):
    """Power-basis coefficients of ``(L_k - L_{k-2}) / sqrt(2(2k-1))`` for ``k >= 2``."""
    c = np.zeros(k + 1)
    c[k], c[k - 2] = 1.0, -1.0
    out = npleg.leg2poly(c) / np.sqrt(2.0 * (2 * k - 1))
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _kernel(k):
    """``4 phi_k(s) / (1 - s^2)``, a polynomial of degree ``k - 2``."""
    q, r = nppoly.polydiv(4.0 * integrated_legendre(k), np.array([1.0, 0.0, -1.0]))
    assert np.max(np.abs(r)) < 1e-12
    return q


def _poly1(c):
    return MultiPoly(np.asarray(c, dtype=float), 1)


# 1D polynomials in the unit-square coordinates s = xi, t = (2/sqrt3) eta - 1/3
def _in_s(c1d, sign=1.0):
    return compose_affine(_poly1(c1d), AffineMap([[sign, 0.0]], [0.0]))


def _in_t(c1d, sign=1.0):
    return compose_affine(_poly1(c1d), AffineMap([[0.0, sign * 2.0 / ref.SQRT3]], [-sign / 3.0]))


# ------------------------------------------------------------------ shape sets

@dataclass(frozen=True)
class ShapeSet:
    """Reference shape functions of one element type.

    ``funcs[i]`` is a MultiPoly in reference coordinates and ``tags[i]`` is
    ``("vertex", local_vertex)``, ``("edge", local_edge, mode)`` or
    ``("interior", index)``.  Edge modes follow the local counterclockwise
    edge orientation.
    """

    kind: str
    degree: int
    edge_degrees: tuple
    funcs: tuple
    tags: tuple

    def __len__(self):
        return len(self.funcs)

    @property
    def grads(self):
        return _grads(self)

    def values(self, pts):
        C, n = _stacked(self.funcs)
        return C @ _monomials(np.asarray(pts, dtype=float), n)

    def gradients(self, pts):
        gx, n = _stacked(tuple(g[0] for g in self.grads))
        gy, m = _stacked(tuple(g[1] for g in self.grads))
        pts = np.asarray(pts, dtype=float)
        return np.stack([gx @ _monomials(pts, n), gy @ _monomials(pts, m)], axis=1)


def _monomials(pts, n):
    """Rows ``x^i y^j`` (``i, j < n``, row-major) at the points."""
    px = pts[:, 0][None, :] ** np.arange(n)[:, None]
    py = pts[:, 1][None, :] ** np.arange(n)[:, None]
    return (px[:, None, :] * py[None, :, :]).reshape(n * n, -1)


@lru_cache(maxsize=None)
def _stacked(funcs):
    """Coefficient matrix of a tuple of 2D polynomials over a common ``n x n`` monomial block."""
    n = 1 + max(max(f.degree_in(0), f.degree_in(1)) for f in funcs)
    C = np.zeros((len(funcs), n, n))
    for i, f in enumerate(funcs):
        k = f.coef[:n, :n]
        C[i, : k.shape[0], : k.shape[1]] = k
    return C.reshape(len(funcs), n * n), n


@lru_cache(maxsize=None)
def _grads(shape):
    return tuple(tuple(f.grad()) for f in shape.funcs)


@lru_cache(maxsize=None)
def _tri_bubbles(p):
    if p < 3:
        return ()
    l1, l2, l3 = barycentric_polys()
    b = l1 * l2 * l3
    raw = [b * MultiPoly.monomial((i, j)) for i in range(p - 2) for j in range(p - 2 - i)]
    rule = make_quadrature("triangle", 2 * p)
    V = np.array([f(rule.nodes[:, 0], rule.nodes[:, 1]) for f in raw])
    G = (V * rule.weights) @ V.T
    L = linalg.cholesky(G, lower=True)
    T = linalg.solve_triangular(L, np.eye(len(raw)), lower=True)
    out = []
    for row in T:
        f = MultiPoly.zero(2)
        for c, g in zip(row, raw):
            if c != 0.0:
                f = f + g * c
        out.append(f)
    return tuple(out)


@lru_cache(maxsize=None)
def shape_set(kind, degree, edge_degrees=None):
    """Hierarchical shape functions for a triangle or quad.

    Parameters
    ----------
    kind : {"tri", "quad"}
    degree : int
        Element degree.
    edge_degrees : tuple of int, optional
        Trace degree per local edge (minimum rule); defaults to ``degree``.
    """
    nedge = 3 if kind == "tri" else 4
    edge_degrees = tuple([degree] * nedge) if edge_degrees is None else tuple(edge_degrees)
    funcs, tags = [], []
    if kind == "tri":
        l1, l2, l3 = barycentric_polys()
        # local vertex order (a, b, c) sits on reference vertices (v1, v3, v2)
        lam = [l1, l3, l2]
        for i in range(3):
            funcs.append(lam[i])
            tags.append(("vertex", i))
        for e in range(3):
            s, t = lam[e], lam[(e + 1) % 3]
            diff = t - s
            for k in range(2, edge_degrees[e] + 1):
                arg = AffineMap([[diff.coef[1, 0], diff.coef[0, 1]]], [diff.coef[0, 0]])
                funcs.append(s * t * compose_affine(_poly1(_kernel(k)), arg))
                tags.append(("edge", e, k))
        for i, f in enumerate(_tri_bubbles(degree)):
            funcs.append(f)
            tags.append(("interior", i))
    elif kind == "quad":
        lin = [np.array([0.5, -0.5]), np.array([0.5, 0.5])]  # (1 -+ u) / 2
        corners = [(0, 0), (1, 0), (1, 1), (0, 1)]
        for i, (a, b) in enumerate(corners):
            funcs.append(_in_s(lin[a]) * _in_t(lin[b]))
            tags.append(("vertex", i))
        for e in range(4):
            for k in range(2, edge_degrees[e] + 1):
                phi = integrated_legendre(k)
                if e == 0:
                    f = _in_s(phi) * _in_t(lin[0])
                elif e == 1:
                    f = _in_t(phi) * _in_s(lin[1])
                elif e == 2:
                    f = _in_s(phi, -1.0) * _in_t(lin[1])
                else:
                    f = _in_t(phi, -1.0) * _in_s(lin[0])
                funcs.append(f)
                tags.append(("edge", e, k))
        n = 0
        for i in range(2, degree + 1):
            for j in range(2, degree + 1):
                funcs.append(_in_s(integrated_legendre(i)) * _in_t(integrated_legendre(j)))
                tags.append(("interior", n))
                n += 1
    else:
        raise ValueError(f"unknown element kind {kind!r}")
    return ShapeSet(kind, degree, edge_degrees, tuple(funcs), tuple(tags))


# ------------------------------------------------------------------ the space

@dataclass
class SymForm:
    """Symmetric bilinear form on an hp space."""

    matrix: sp.csr_matrix
    role: str

    def toarray(self):
        return self.matrix.toarray()

    @property
    def shape(self):
        return self.matrix.shape


class HpSpace:
    """Global C0 hp space with optional homogeneous Dirichlet condition.

    Attributes
    ----------
    ndof : int
        Number of free degrees of freedom.
    local : list of (ShapeSet, ndarray, ndarray)
        Per element: shape set, global dof index per local function (``-1``
        for constrained dofs) and orientation sign.
    dof_entity : list of tuple
        ``("vertex", vid)``, ``("edge", eid, mode)`` or ``("interior", k, i)``.
    """

    def __init__(self, mesh: Mesh, dirichlet: bool = False):
        self.mesh = mesh
        self.dirichlet = bool(dirichlet)
        p = mesh.degrees
        self.edge_degree = np.array([min(p[k] for k in els) for els in mesh.edge_elements], dtype=int)
        bverts = set(mesh.boundary_vertices)
        full = {}
        entities = []

        def add(key, constrained):
            full[key] = -1 if constrained else len(entities)
            if not constrained:
                entities.append(key)

        for v in range(mesh.n_vertices):
            add(("vertex", v), self.dirichlet and v in bverts)
        for eid in range(mesh.n_edges):
            bnd = self.dirichlet and mesh.is_boundary_edge(eid)
            for k in range(2, self.edge_degree[eid] + 1):
                add(("edge", eid, k), bnd)
        self.local = []
        interior_keys = []
        for K, e in enumerate(mesh.elements):
            eds = tuple(int(self.edge_degree[g]) for g, _ in mesh.element_edges[K])
            shp = shape_set(e.kind, e.degree, eds)
            idx = np.empty(len(shp), dtype=int)
            sgn = np.ones(len(shp))
            for i, tag in enumerate(shp.tags):
                if tag[0] == "vertex":
                    idx[i] = full[("vertex", e.vertex_ids[tag[1]])]
                elif tag[0] == "edge":
                    g, o = mesh.element_edges[K][tag[1]]
                    idx[i] = full[("edge", g, tag[2])]
                    sgn[i] = 1.0 if (o > 0 or tag[2] % 2 == 0) else -1.0
                else:
                    interior_keys.append((K, i))
                    idx[i] = -2
            self.local.append((shp, idx, sgn))
        for K, i in interior_keys:
            self.local[K][1][i] = len(entities)
            entities.append(("interior", K, self.local[K][0].tags[i][1]))
        self.dof_entity = entities
        self.ndof = len(entities)
        self._full_index = full

    def __repr__(self):
        return f"HpSpace(elements={self.mesh.n_elements}, ndof={self.ndof}, dirichlet={self.dirichlet})"

    def dof_kind(self):
        return np.array([e[0] for e in self.dof_entity])

    def dof_mask(self, kind):
        return np.array([e[0] == kind for e in self.dof_entity], dtype=bool)

    def dof_index(self, key):
        """Global index of a dof key, or ``-1`` when constrained or absent."""
        if key[0] == "interior":
            K, i = key[1], key[2]
            shp, idx, _ = self.local[K]
            j = [n for n, t in enumerate(shp.tags) if t == ("interior", i)][0]
            return int(idx[j])
        return self._full_index.get(key, -1)

    def element_coefficients(self, u, K):
        """Local coefficients (with orientation signs) of ``u`` on element ``K``."""
        shp, idx, sgn = self.local[K]
        u = np.asarray(u, dtype=float)
        c = np.where(idx >= 0, u[np.maximum(idx, 0)], 0.0)
        return c * sgn

    def element_poly(self, u, K):
        """Restriction of ``u`` to element ``K`` as a polynomial in reference coordinates."""
        shp = self.local[K][0]
        c = self.element_coefficients(u, K)
        f = MultiPoly.zero(2)
        for ci, g in zip(c, shp.funcs):
            if ci != 0.0:
                f = f + g * ci
        return f

    def evaluate(self, u, K, ref_pts):
        shp = self.local[K][0]
        return self.element_coefficients(u, K) @ shp.values(ref_pts)

    def evaluate_grad(self, u, K, ref_pts):
        """Physical gradients at reference points of element ``K``, shape ``(n, 2)``."""
        shp = self.local[K][0]
        g = np.einsum("i,idn->nd", self.element_coefficients(u, K), shp.gradients(ref_pts))
        J = self.mesh.maps[K].jacobian(ref_pts)
        return np.linalg.solve(np.swapaxes(J, -1, -2), g[..., None])[..., 0]


def build_space(mesh: Mesh, dirichlet: bool = False) -> HpSpace:
    """Build the C0 hp space, optionally with homogeneous Dirichlet condition.

    Raises
    ------
    ValueError
        If the mesh is not admissible or violates triangle/quad degree rules.
    """
    problems = check_admissibility(mesh)
    if problems:
        raise ValueError("mesh not admissible: " + "; ".join(problems))
    if not check_degree_compat(mesh):
        raise ValueError("triangle/quad degree compatibility violated")
    return HpSpace(mesh, dirichlet)


# ------------------------------------------------------------------ assembly

def _element_rule(kind, degree):
    if kind == "tri":
        return make_quadrature("triangle", 2 * degree + 2)
    return make_quadrature("box", 2 * degree + 4)


def element_matrices(space: HpSpace, K: int):
    """Local mass and stiffness matrices (orientation signs applied)."""
    shp, idx, sgn = space.local[K]
    m = space.mesh.maps[K]
    rule = _element_rule(shp.kind, shp.degree)
    J = m.jacobian(rule.nodes)
    det = np.linalg.det(J)
    w = rule.weights * det
    phi = shp.values(rule.nodes) * sgn[:, None]
    dref = shp.gradients(rule.nodes) * sgn[:, None, None]
    Jinv_t = np.linalg.inv(np.swapaxes(J, -1, -2))
    dphys = np.einsum("nij,ajn->ain", Jinv_t, dref)
    M = (phi * w) @ phi.T
    S = np.einsum("ain,bin,n->ab", dphys, dphys, w)
    return M, S


def _assemble(space, weights, which):
    rows, cols, vals = [], [], []
    for K in range(space.mesh.n_elements):
        M, S = element_matrices(space, K)
        A = (M if which == "mass" else S) * weights[K]
        idx = space.local[K][1]
        keep = idx >= 0
        gi = idx[keep]
        A = A[np.ix_(keep, keep)]
        rows.append(np.repeat(gi, len(gi)))
        cols.append(np.tile(gi, len(gi)))
        vals.append(A.ravel())
    n = space.ndof
    if not rows:
        return sp.csr_matrix((n, n))
    mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsr()
    mat = 0.5 * (mat + mat.T)
    return mat


def assemble_mass(space: HpSpace) -> SymForm:
    return SymForm(_assemble(space, np.ones(space.mesh.n_elements), "mass"), "mass")


def assemble_stiffness(space: HpSpace) -> SymForm:
    return SymForm(_assemble(space, np.ones(space.mesh.n_elements), "stiffness"), "stiffness")


def assemble_weighted_stiffness(space: HpSpace, theta: float) -> SymForm:
    """Stiffness form weighted elementwise by ``h_K^{2(1-theta)} p_K^{-4(1-theta)}``."""
    mesh = space.mesh
    w = mesh.h ** (2 * (1 - theta)) * mesh.degrees.astype(float) ** (-4 * (1 - theta))
    return SymForm(_assemble(space, w, "stiffness"), "weighted-stiffness")


# ------------------------------------------------------------------ operators

def _lagrange_1d(nodes):
    out = []
    for i, xi in enumerate(nodes):
        others = np.delete(nodes, i)
        c = nppoly.polyfromroots(others)
        out.append(c / nppoly.polyval(xi, c))
    return out


def gl_interpolate(f, p: int) -> MultiPoly:
    """Tensor Gauss-Lobatto interpolant of ``f`` on the reference rectangle.

    ``f`` is called with arrays ``(xi, eta)`` of rectangle coordinates.
    """
    s, _ = gauss_lobatto_nodes(p)
    L = _lagrange_1d(np.asarray(s))
    S, T = np.meshgrid(s, s, indexing="ij")
    X, Y = ref.unit_to_rect(S, T)
    vals = np.asarray(f(X, Y), dtype=float)
    coef = np.zeros((p + 1, p + 1))
    for i in range(p + 1):
        for j in range(p + 1):
            coef += vals[i, j] * np.outer(L[i], L[j])
    unit_poly = MultiPoly(coef, 2)
    to_unit = AffineMap([[1.0, 0.0], [0.0, 2.0 / ref.SQRT3]], [0.0, -1.0 / 3.0])
    return compose_affine(unit_poly, to_unit)


def nodal_lowest_order(u, space: HpSpace):
    """Piecewise (bi)linear interpolant of ``u`` at the mesh vertices.

    In the hierarchical basis this keeps the vertex coefficients and drops
    all others, since edge and interior functions vanish at vertices.
    """
    u = np.asarray(u, dtype=float)
    return np.where(space.dof_mask("vertex"), u, 0.0)


@lru_cache(maxsize=256)
def _projection_data(shp, degree):
    rule = _element_rule(shp.kind, degree)
    phi = shp.values(rule.nodes)
    G = (phi * rule.weights) @ phi.T
    return rule, phi, linalg.cho_factor(G)


def project_local(space: HpSpace, K: int, f: MultiPoly, tol=1e-9):
    """Local coefficients of a polynomial ``f`` in the element basis of ``K``.

    Uses an L2 projection on the reference element; ``residual`` reports how
    far ``f`` is from the local space.
    """
    shp, _, sgn = space.local[K]
    rule, phi, chol = _projection_data(shp, max(shp.degree, f.degree))
    w = rule.weights
    b = (phi * w) @ f(rule.nodes[:, 0], rule.nodes[:, 1])
    c = linalg.cho_solve(chol, b)
    r = c @ phi - f(rule.nodes[:, 0], rule.nodes[:, 1])
    residual = float(np.sqrt(w @ r ** 2))
    return c * sgn, residual
