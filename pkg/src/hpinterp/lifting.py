"""Polynomial liftings from the reference triangle into a tetrahedron and a prism.

The tetrahedron has the reference triangle as base (``z = 0``) and apex
``v4 = (0, 0, H)`` above the centroid, with ``H = sqrt(2/3)`` so that the
three lateral edges meet at right angles.  The cross-section at height
``z`` is ``(1 - z/H) T``.

``lift_A`` averages ``u`` over shrunken copies of the triangle,

    (A u)(x, z) = int rho(xi) u(x + z xi / 2) dxi,

which for polynomials reduces to a contraction with the mollifier moments.
``lift_A_bc`` adds corrections that make the lift vanish on the lateral
faces above prescribed base edges, and ``lift_prism`` transports the result
to the prism ``T x (0, 1)`` by collapsing the top face onto the apex.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.special import comb

from . import reference as ref
from .polyalg import (
    AffineMap,
    LinearForm,
    MultiPoly,
    barycentric_polys,
    compose_affine,
    divide_by_linear,
    gauss_jacobi,
    integrate_ref,
    make_quadrature,
    mollifier_moments,
)

__all__ = [
    "LiftError",
    "LiftResult",
    "EdgeSet",
    "RefTet",
    "lift_A",
    "lift_A_bc",
    "lift_prism",
    "restrict_to_edge",
    "face_restriction",
    "verify_weighted_bounds",
    "verify_ort_identities",
    "lift_identity_residuals",
    "verify_lift_identities",
    "sample_vanishing",
    "PROPERTIES",
]

H = ref.TET_HEIGHT
V4 = np.array([0.0, 0.0, H])
BASE3 = np.column_stack([ref.TRI_VERTS, np.zeros(3)])


class LiftError(ValueError):
    """Input violates a lifting precondition or an internal division is inexact."""


class EdgeSet(frozenset):
    """Subset of the base edges ``{4, 5, 6}``; edge ``3 + k`` is opposite vertex ``k``."""

    def __new__(cls, edges=()):
        edges = frozenset(int(e) for e in edges)
        if not edges <= {4, 5, 6}:
            raise ValueError(f"edge set must be a subset of {{4, 5, 6}}, got {sorted(edges)}")
        return super().__new__(cls, edges)

    @property
    def faces(self):
        """Lateral faces ``f_k`` (k = e - 3) above the edges."""
        return sorted(e - 3 for e in self)

    @property
    def lateral_edges(self):
        """Lateral edges ``e_j`` (``v_j -> v4``) contained in the faces."""
        return sorted({j for k in self.faces for j in (1, 2, 3) if j != k})


class RefTet:
    """Reference tetrahedron geometry: projections and face parametrizations.

    Vertices are numbered 1..4 as in the edge naming; ``vertex(4)`` is the apex.
    """

    @staticmethod
    def vertex(j):
        return V4 if j == 4 else BASE3[j - 1]

    @staticmethod
    def face_vertices(k):
        """Face ``f_k`` (opposite ``v_k``) as (base start, base end, apex)."""
        i, j = ref.BASE_EDGES[3 + k]
        return BASE3[i], BASE3[j], V4

    @staticmethod
    def edge_form(j):
        """``p_j(X) = (X - v_j) . (v4 - v_j)``, zero on the plane through ``v_j``
        orthogonal to the lateral edge ``e_j``."""
        vj = BASE3[j - 1]
        d = V4 - vj
        return LinearForm(tuple(d), -float(vj @ d))

    @staticmethod
    def edge_projection(j):
        """Orthogonal projection onto the line of lateral edge ``e_j``."""
        vj = BASE3[j - 1]
        d = V4 - vj
        P = np.outer(d, d) / (d @ d)
        return AffineMap(P, vj - P @ vj)

    @staticmethod
    def face_projection(k):
        """Orthogonal projection onto the plane of face ``f_k``."""
        a, b, c = RefTet.face_vertices(k)
        n = np.cross(b - a, c - a)
        n /= np.linalg.norm(n)
        P = np.eye(3) - np.outer(n, n)
        return AffineMap(P, a - P @ a)

    @staticmethod
    def face_normal_form(k):
        """Affine form of the plane through base edge ``e_{3+k}`` orthogonal to
        face ``f_k``, oriented positive inside the tetrahedron."""
        a, b, c = RefTet.face_vertices(k)
        n = np.cross(b - a, c - a)
        t = (b - a) / np.linalg.norm(b - a)
        m = np.cross(n, t)
        m /= np.linalg.norm(m)
        if m @ (np.mean([a, b, c, BASE3[k - 1]], axis=0) - a) < 0:
            m = -m
        return LinearForm(tuple(m), -float(m @ a))

    @staticmethod
    def face_map(k):
        """Affine map ``(s, t) -> a + s (b - a) + t (c - a)`` onto face ``f_k``."""
        a, b, c = RefTet.face_vertices(k)
        return AffineMap(np.column_stack([b - a, c - a]), a)


@dataclass
class LiftResult:
    poly: MultiPoly
    degree: int
    edges: EdgeSet
    operator: str
    division_residuals: list = field(default_factory=list)

    def __call__(self, *xs):
        return self.poly(*xs)


def restrict_to_edge(u: MultiPoly, e: int) -> MultiPoly:
    """Restriction of a triangle polynomial to base edge ``e`` as a 1-variable polynomial."""
    i, j = ref.BASE_EDGES[int(e)]
    P, Q = ref.TRI_VERTS[i], ref.TRI_VERTS[j]
    return compose_affine(u, AffineMap((Q - P)[:, None], P))


def face_restriction(w: MultiPoly, k: int) -> MultiPoly:
    """Restriction of a tetrahedron polynomial to face ``f_k`` (2 variables)."""
    return compose_affine(w, RefTet.face_map(k))


def _moments(k, degree):
    return mollifier_moments(int(k), max(int(degree), 0))


def lift_A(u: MultiPoly, k: int = 2) -> LiftResult:
    """Mollified average lift of a triangle polynomial into the tetrahedron.

    Parameters
    ----------
    u : MultiPoly
        Polynomial in ``(x, y)``.
    k : int
        Mollifier exponent; ``rho ~ (l1 l2 l3)^k``.

    Returns
    -------
    LiftResult
        Polynomial in ``(x, y, z)`` of total degree at most ``deg u`` whose
        restriction to ``z = 0`` is ``u``.
    """
    if u.nvars != 2:
        raise ValueError("lift_A expects a polynomial in two variables")
    p = u.degree
    mu = _moments(k, p)
    n = p + 1
    out = np.zeros((n, n, n))
    for (i, j), c in u.terms.items():
        for a in range(i + 1):
            ca = c * comb(i, a, exact=True)
            for b in range(j + 1):
                out[i - a, j - b, a + b] += ca * comb(j, b, exact=True) * mu[a, b] * 0.5 ** (a + b)
    return LiftResult(MultiPoly(out, 3), p, EdgeSet(), "A")


def _check_vanishing(u: MultiPoly, edges, tol):
    scale = max(u.norm(), 1e-300)
    for e in edges:
        r = restrict_to_edge(u, e).norm()
        if r > tol * scale:
            raise LiftError(f"input does not vanish on edge e{e} (residual {r:.2e})")


def _divide(num: MultiPoly, form: LinearForm, tol, log, scale):
    """Exact quotient ``num / form``; the remainder is measured against
    ``max(|num|, scale)`` so that round-off-sized dividends do not count."""
    q, res = divide_by_linear(num, form)
    rel = res / max(num.norm(), scale, 1e-300)
    log.append(rel)
    if rel > tol:
        raise LiftError(f"inexact division (relative remainder {rel:.2e})")
    return q


def lift_A_bc(u: MultiPoly, edges=(), k: int = 2, tol: float = 1e-10) -> LiftResult:
    """Lift that additionally vanishes on the lateral faces above ``edges``.

    Steps: remove the apex value; subtract edge terms that cancel the values
    on the lateral edges of the affected faces; subtract face terms that
    cancel the remaining values on those faces.  Every correction carries a
    factor ``z`` and is an exact polynomial quotient.

    Raises
    ------
    LiftError
        If ``u`` does not vanish on the edges, its degree is below the number
        of edges, or a division leaves a remainder above ``tol``.
    """
    E = EdgeSet(edges)
    base = lift_A(u, k)
    if not E:
        return LiftResult(base.poly, base.degree, E, "A_E")
    _check_vanishing(u, E, tol)
    if u.degree < len(E) and u.norm() > 0:
        raise LiftError(f"degree {u.degree} is below the number of edges {len(E)}")
    log = []
    z = MultiPoly.variable(2, 3)
    w = base.poly
    # step 1: vanish at the apex
    u1 = w - z * (float(w(*V4)) / H)
    # step 2: vanish on the lateral edges of the affected faces
    u2 = u1
    for j in E.lateral_edges:
        form = RefTet.edge_form(j)
        d = V4 - BASE3[j - 1]
        cj = float(d @ d) / H
        g = compose_affine(u1, RefTet.edge_projection(j))
        u2 = u2 - (z * _divide(g, form, tol, log, u.norm())) * cj
    # step 3: vanish on the faces
    u3 = u2
    for f in E.faces:
        form = RefTet.face_normal_form(f)
        # on f_k the form is proportional to z; c_f fixes the ratio to one
        a, b, c = RefTet.face_vertices(f)
        cf = float(form(*c)) / H
        g = compose_affine(u2, RefTet.face_projection(f))
        u3 = u3 - (z * _divide(g, form, tol, log, u.norm())) * cf
    return LiftResult(u3.trimmed(), u.degree, E, "A_E", log)


@lru_cache(maxsize=None)
def _one_minus_z_powers(n):
    one_minus = MultiPoly.from_linear([0.0, 0.0, -1.0], 1.0)
    out = [MultiPoly.constant(1.0, 3)]
    for _ in range(n):
        out.append(out[-1] * one_minus)
    return tuple(out)


def lift_prism(u: MultiPoly, edges=(), k: int = 2, tol: float = 1e-10) -> LiftResult:
    """Prism lift ``(1 - z) (A_E u)((1 - z) x, (1 - z) y, H z)`` on ``T x (0, 1)``.

    The collapse sends the top face to the apex, so the result vanishes at
    ``z = 1``; faces ``e x (0, 1)`` over edges in ``edges`` map into the
    lateral faces where ``A_E u`` vanishes.
    """
    inner = lift_A_bc(u, edges, k, tol)
    q = inner.poly
    deg = q.degree
    pw = _one_minus_z_powers(deg + 1)
    out = MultiPoly.zero(3)
    # group terms by (a + b) so each power of (1 - z) multiplies once
    groups = {}
    for (a, b, c), v in q.terms.items():
        groups.setdefault(a + b, {})[(a, b, c)] = v * H ** c
    for s, terms in groups.items():
        part = MultiPoly.from_terms(terms, 3)
        out = out + part * pw[s + 1]
    return LiftResult(out.trimmed(), inner.degree, inner.edges, "A_P", inner.division_residuals)


# ------------------------------------------------------------ verification

def _barycentric_factor(E):
    lam = barycentric_polys()
    f = MultiPoly.constant(1.0, 2)
    for e in sorted(E):
        f = f * lam[e - 4]
    return f


def sample_vanishing(p, E, rng):
    """Random polynomial of degree ``p`` vanishing on the edges in ``E``."""
    E = EdgeSet(E)
    q = MultiPoly.random(max(p - len(E), 0), 2, rng)
    return _barycentric_factor(E) * q


def _tet_weighted_sq(w: MultiPoly, gamma):
    return integrate_ref(w * w, "tetrahedron", z_weight=2 * gamma)


def _grad_weighted_sq(w: MultiPoly, domain, exponent):
    return sum(integrate_ref(g * g, domain, z_weight=2 * exponent) for g in w.grad())


def _face_rule(k, gamma, n):
    """Nodes, weights on face ``f_k`` for the weight ``dist(., base edge)^(2 gamma)``."""
    a, b, c = RefTet.face_vertices(k)
    w, ww = gauss_jacobi(n, 0.0, 2 * gamma, 0.0, 1.0)
    x, wx = npleg.leggauss(n)
    s, ws = 0.5 * (x + 1), 0.5 * wx
    W, S = np.meshgrid(w, s, indexing="ij")
    P = (1 - W)[..., None] * (a + S[..., None] * (b - a)) + W[..., None] * c
    area2 = np.linalg.norm(np.cross(b - a, c - a))
    hf = area2 / np.linalg.norm(b - a)
    wts = np.outer(ww, ws) * (1 - W) * area2 * hf ** (2 * gamma)
    return P.reshape(-1, 3), wts.ravel()


def _tri_edge_rule(e, gamma, n):
    """Triangle rule for the weight ``dist(., edge e)^(2 gamma)``."""
    i, j = ref.BASE_EDGES[e]
    opp = ({0, 1, 2} - {i, j}).pop()
    P, Q, C = ref.TRI_VERTS[i], ref.TRI_VERTS[j], ref.TRI_VERTS[opp]
    w, ww = gauss_jacobi(n, 0.0, 2 * gamma, 0.0, 1.0)
    x, wx = npleg.leggauss(n)
    s, ws = 0.5 * (x + 1), 0.5 * wx
    W, S = np.meshgrid(w, s, indexing="ij")
    X = (1 - W)[..., None] * (P + S[..., None] * (Q - P)) + W[..., None] * C
    hgt = ref.SQRT3
    wts = np.outer(ww, ws) * (1 - W) * 2 * ref.TRI_AREA * hgt ** (2 * gamma)
    return X.reshape(-1, 2), wts.ravel()


def _tri_vertex_rule(vi, gamma, n):
    """Triangle rule for the weight ``dist(., vertex)^(2 gamma)``."""
    others = [ref.TRI_VERTS[m] for m in range(3) if m != vi]
    V = ref.TRI_VERTS[vi]
    w, ww = gauss_jacobi(n, 0.0, 2 * gamma + 1.0, 0.0, 1.0)
    x, wx = npleg.leggauss(n)
    s, ws = 0.5 * (x + 1), 0.5 * wx
    W, S = np.meshgrid(w, s, indexing="ij")
    B = (1 - S)[..., None] * others[0] + S[..., None] * others[1]
    X = V + W[..., None] * (B - V)
    g = np.linalg.norm(B - V, axis=-1)
    wts = np.outer(ww, ws) * 2 * ref.TRI_AREA * g ** (2 * gamma)
    return X.reshape(-1, 2), wts.ravel()


def _edge_rule(j, gamma, n):
    """Lateral edge ``v_j -> v4`` with weight ``dist(., v_j)^(2 gamma)``."""
    vj = BASE3[j - 1]
    L = np.linalg.norm(V4 - vj)
    t, wt = gauss_jacobi(n, 0.0, 2 * gamma, 0.0, 1.0)
    return vj + t[:, None] * (V4 - vj), wt * L ** (2 * gamma + 1)


def _eval(p: MultiPoly, pts):
    return p(*[pts[:, i] for i in range(pts.shape[1])])


def _in_scaled_tip(pts2, scale, eps):
    """Points of ``scale * T_eps`` where ``T_eps`` is the ``eps``-ball around ``v1`` in T."""
    tip = scale * ref.TRI_VERTS[0]
    return np.linalg.norm(pts2 - tip, axis=1) < scale * eps


def _sample_tri_tip(rng, n, eps):
    """Uniform samples of ``T_eps`` (points of T within ``eps`` of ``v1``)."""
    out = []
    v1 = ref.TRI_VERTS[0]
    while sum(len(o) for o in out) < n:
        r = eps * np.sqrt(rng.random(4 * n))
        phi = -np.pi / 2 + (rng.random(4 * n) - 0.5) * (np.pi / 3)
        P = v1 + np.column_stack([r * np.cos(phi), r * np.sin(phi)])
        out.append(P[ref.in_triangle(P[:, 0], P[:, 1])])
    return np.concatenate(out)[:n]


def _sample_tet(rng, n, zmin=0.0):
    out = []
    while sum(len(o) for o in out) < n:
        z = zmin + (H - zmin) * rng.random(4 * n)
        xy = np.column_stack([2 * rng.random(4 * n) - 1, ref.RECT_Y[0] + ref.SQRT3 * rng.random(4 * n)])
        s = 1 - z / H
        ok = ref.in_triangle(xy[:, 0] / s, xy[:, 1] / s)
        out.append(np.column_stack([xy, z])[ok])
    return np.concatenate(out)[:n]


class _SeminormCache:
    """Slobodeckij seminorms of triangle polynomials, one Gram matrix per (p, theta)."""

    def __init__(self, level=1):
        self.level = level
        self._g = {}

    def __call__(self, u: MultiPoly, theta):
        from .fracnorm import SlobodeckijGram, poly_coefficients, reference_space

        p = max(u.degree, 1)
        key = (p, theta)
        if key not in self._g:
            space = reference_space("tri", p)
            self._g[key] = (space, SlobodeckijGram(space, theta, self.level).matrix)
        space, G = self._g[key]
        c = poly_coefficients(space, u)
        return math.sqrt(max(float(c @ G @ c), 0.0))


def _ratio_A_iii(u, E, param, ctx):
    w = lift_A(u).poly
    return math.sqrt(_tet_weighted_sq(w, param)) / math.sqrt(integrate_ref(u * u, "triangle"))


def _ratio_Abc_ii(u, E, param, ctx):
    w = lift_A_bc(u, E).poly
    return math.sqrt(_tet_weighted_sq(w, param)) / math.sqrt(integrate_ref(u * u, "triangle"))


def _ratio_trace(u, E, param, ctx):
    w = lift_A_bc(u, E).poly
    tr = MultiPoly(w.restrict(2, 0.0).coef, 3).drop_axis(2)
    return (tr - u).norm() / max(u.norm(), 1e-300)


def _ratio_A_iv(u, E, param, ctx):
    w = lift_A(u).poly
    n = w.degree + 4 + 4 * ctx.get("level", 0)
    worst = 0.0
    for k in (1, 2, 3):
        P, W = _face_rule(k, param, n)
        lhs = float(np.sum(W * _eval(w, P) ** 2))
        X, Wt = _tri_edge_rule(3 + k, param, n)
        rhs = float(np.sum(Wt * _eval(u, X) ** 2))
        worst = max(worst, math.sqrt(lhs / rhs))
    return worst


def _ratio_A_v(u, E, param, ctx):
    w = lift_A(u).poly
    n = w.degree + 4 + 4 * ctx.get("level", 0)
    worst = 0.0
    for j in (1, 2, 3):
        P, W = _edge_rule(j, param, n)
        lhs = float(np.sum(W * _eval(w, P) ** 2))
        X, Wt = _tri_vertex_rule(j - 1, param - 0.5, n + 4)
        rhs = float(np.sum(Wt * _eval(u, X) ** 2))
        worst = max(worst, math.sqrt(lhs / rhs))
    return worst


def _ratio_A_vi(u, E, param, ctx):
    """First-order weighted gradient (volume term) against ``|u|_{H^theta}``."""
    w = lift_A(u).poly
    lhs = math.sqrt(_grad_weighted_sq(w, "tetrahedron", 0.5 - param))
    return lhs / ctx["seminorm"](u, param)


def _rhs_bc(u, E, theta, ctx):
    from .fracnorm import weighted_distance_norm

    semi = ctx["seminorm"](u, theta)
    dist = weighted_distance_norm(u, sorted(E), theta).value if E else 0.0
    return semi + dist


def _ratio_Abc_v(u, E, param, ctx):
    w = lift_A_bc(u, E).poly
    return math.sqrt(_grad_weighted_sq(w, "tetrahedron", 0.5 - param)) / _rhs_bc(u, E, param, ctx)


def _ratio_P_ii(u, E, param, ctx):
    w = lift_prism(u, E).poly
    return math.sqrt(integrate_ref(w * w, "prism")) / math.sqrt(integrate_ref(u * u, "triangle"))


def _ratio_P_vi(u, E, param, ctx):
    w = lift_prism(u, E).poly
    return math.sqrt(_grad_weighted_sq(w, "prism", 0.5 - param)) / _rhs_bc(u, E, param, ctx)


def _sup_derivs(w, pts, order):
    if order == 0:
        return float(np.max(np.abs(_eval(w, pts))))
    return float(max(np.max(np.abs(_eval(g, pts))) for g in w.grad()))


def _ratio_A_vii(u, E, param, ctx):
    """``||A u||_{W^{j,inf}(z > eps)} / ||u||_{L2}`` by sampling; ``param`` is ``j`` in {0, 1}."""
    eps = ctx.get("eps", 0.1)
    pts = _sample_tet(np.random.default_rng(ctx.get("seed", 0)), ctx.get("n_sup", 2000), zmin=eps)
    w = lift_A(u).poly
    j = int(param)
    val = max(_sup_derivs(w, pts, m) for m in range(j + 1))
    return val / math.sqrt(integrate_ref(u * u, "triangle"))


def _tip_ratio(w, u, j, ctx, prism):
    eps, delta = ctx.get("eps", 0.1), ctx.get("delta", 0.2)
    rng = np.random.default_rng(ctx.get("seed", 0))
    n = ctx.get("n_sup", 2000)
    base = _sample_tri_tip(rng, n, eps)
    z = rng.random(n)
    scale = np.ones(n) if prism else (1 - z)
    zz = z if prism else z * H
    pts = np.column_stack([base * scale[:, None], zz])
    lhs = _sup_derivs(w, pts, j)
    tip = _sample_tri_tip(rng, n, delta)
    rhs = math.sqrt(integrate_ref(u * u, "triangle")) + max(_sup_derivs(u, tip, m) for m in range(j + 1))
    return lhs / rhs


def _ratio_Abc_vii(u, E, param, ctx):
    return _tip_ratio(lift_A_bc(u, E).poly, u, int(param), ctx, prism=False)


def _ratio_P_vii(u, E, param, ctx):
    return _tip_ratio(lift_prism(u, E).poly, u, int(param), ctx, prism=True)


PROPERTIES = {
    "A.iii": (_ratio_A_iii, False),
    "A.trace": (_ratio_trace, False),
    "A.iv": (_ratio_A_iv, False),
    "A.v": (_ratio_A_v, False),
    "A.vi": (_ratio_A_vi, False),
    "A.vii": (_ratio_A_vii, False),
    "Abc.ii": (_ratio_Abc_ii, True),
    "Abc.v": (_ratio_Abc_v, True),
    "Abc.vii": (_ratio_Abc_vii, True),
    "P.ii": (_ratio_P_ii, True),
    "P.vi": (_ratio_P_vi, True),
    "P.vii": (_ratio_P_vii, True),
}


def verify_weighted_bounds(prop, param, degrees=range(1, 7), samples=10, edges=(5, 6), seed=0,
                           slobodeckij_level=1, **ctx):
    """Measure ``sup LHS/RHS`` of a lifting estimate over random polynomials.

    Parameters
    ----------
    prop : str
        Key of :data:`PROPERTIES`, e.g. ``"A.iii"`` (``param`` = gamma),
        ``"Abc.v"`` (``param`` = s) or ``"A.vii"`` (``param`` = derivative order).
    degrees : iterable of int
    samples : int
        Random polynomials per degree.
    edges : iterable of int
        Edge set for the boundary-condition variants; samples then vanish on it.

    Returns
    -------
    dict
        ``{"table": {p: max ratio}, "slope": fitted d log(ratio) / d log(p)}``.
    """
    if prop not in PROPERTIES:
        raise KeyError(f"unknown property {prop!r}; choose from {sorted(PROPERTIES)}")
    fn, uses_edges = PROPERTIES[prop]
    E = EdgeSet(edges) if uses_edges else EdgeSet()
    rng = np.random.default_rng(seed)
    ctx.setdefault("seminorm", _SeminormCache(slobodeckij_level))
    table = {}
    for p in degrees:
        p = max(int(p), len(E), 1)
        worst = 0.0
        for _ in range(samples):
            u = sample_vanishing(p, E, rng)
            worst = max(worst, fn(u, E, param, ctx))
        table[p] = worst
    ps = np.array(sorted(table))
    vals = np.array([table[p] for p in ps])
    slope = float(np.polyfit(np.log(ps), np.log(np.maximum(vals, 1e-300)), 1)[0]) if len(ps) > 1 else 0.0
    return {"property": prop, "param": param, "table": table, "slope": slope}


# ------------------------------------------------------ exact identities

def _prism_side_map(e):
    i, j = ref.BASE_EDGES[int(e)]
    P, Q = ref.TRI_VERTS[i], ref.TRI_VERTS[j]
    B = np.zeros((3, 2))
    B[:2, 0] = Q - P
    B[2, 1] = 1.0
    return AffineMap(B, np.array([P[0], P[1], 0.0]))


def lift_identity_residuals(u: MultiPoly, edges=(5, 6), k: int = 2, tol: float = 1e-10):
    """Relative coefficient residuals of the exact lifting identities.

    Checks, for the plain, boundary-condition and prism lifts: the trace at
    ``z = 0`` reproduces ``u``; the degree (in ``x, y`` for each fixed ``z``
    on the prism) does not grow; the lateral faces
    (tetrahedron) or sides (prism) above ``edges`` carry zero; the prism
    vanishes at ``z = 1``.

    Returns
    -------
    dict
        ``trace``, ``face``, ``top`` and ``division`` residuals (max over
        operators) and ``degree_ok``.
    """
    E = EdgeSet(edges)
    scale = max(u.norm(), 1e-300)
    out = {"trace": 0.0, "face": 0.0, "top": 0.0, "division": 0.0, "degree_ok": True}

    def trace_res(w):
        return (w.restrict(2, 0.0).drop_axis(2) - u).norm() / scale

    results = [lift_A(u, k), lift_A_bc(u, E, k, tol), lift_prism(u, E, k, tol)]
    for r in results:
        out["trace"] = max(out["trace"], trace_res(r.poly))
        w = r.poly
        xy = max((a + b for (a, b, _) in w.terms), default=0)
        out["degree_ok"] &= xy <= u.degree and (r.operator == "A_P" or w.degree <= u.degree)
        if r.division_residuals:
            out["division"] = max(out["division"], max(r.division_residuals))
    # vanishing residuals are relative to the lifted polynomial's own
    # coefficients; the (1 - z)^s expansion makes prism coefficients much
    # larger than those of u
    tet, prism = results[1].poly, results[2].poly
    for f in E.faces:
        out["face"] = max(out["face"], face_restriction(tet, f).norm() / max(tet.norm(), 1e-300))
    for e in E:
        side = compose_affine(prism, _prism_side_map(e))
        out["face"] = max(out["face"], side.norm() / max(prism.norm(), 1e-300))
    out["top"] = prism.restrict(2, 1.0).norm() / max(prism.norm(), 1e-300)
    return out


def verify_lift_identities(draws=500, max_degree=10, seed=0, k: int = 2):
    """Run :func:`lift_identity_residuals` on random inputs.

    Degrees cycle through ``1..max_degree`` and edge sets through all
    nonempty subsets of ``{4, 5, 6}``; each input vanishes on its edge set.

    Returns
    -------
    list of dict
        One row per draw with ``draw``, ``degree``, ``edges`` and the residuals.
    """
    rng = np.random.default_rng(seed)
    sets = [(4,), (5,), (6,), (4, 5), (4, 6), (5, 6), (4, 5, 6)]
    rows = []
    for n in range(draws):
        p = 1 + n % max_degree
        E = sets[(n // max_degree) % len(sets)]
        if p < len(E):
            E = E[:p]
        u = sample_vanishing(p, E, rng)
        row = {"draw": n, "degree": p, "edges": "".join(str(e) for e in E)}
        row.update(lift_identity_residuals(u, E, k))
        rows.append(row)
    return rows


# ------------------------------------------------------ orthogonality checks

def _tet_rule(beta, n):
    """Tetrahedron nodes/weights for the weight ``z^(2 beta)``."""
    s, ws = gauss_jacobi(n, 2.0, 2 * beta, 0.0, 1.0)
    tri = make_quadrature("triangle", 2 * n)
    S = np.repeat(s, len(tri.weights))
    W = np.repeat(ws, len(tri.weights)) * np.tile(tri.weights, len(s))
    XY = (1 - S)[:, None] * np.tile(tri.nodes, (len(s), 1))
    pts = np.column_stack([XY, H * S])
    return pts, W * H ** (2 * beta + 1)


def _face_frame(k):
    a, b, c = RefTet.face_vertices(k)
    t = (b - a) / np.linalg.norm(b - a)
    nrm = np.cross(b - a, c - a)
    m = np.cross(nrm / np.linalg.norm(nrm), t)
    if m @ (c - a) < 0:
        m = -m
    return a, t, m


def verify_ort_identities(alpha=0.0, beta=0.0, degrees=(0, 1, 2), n=12):
    """Ratios of both sides of the projection norm equivalences.

    Rows cover three families, each evaluated at ``n`` and ``n + 8`` nodes:

    * ``"edge"``: ``||d_vj^a d_T^b v o P_ej||_tet + ||d_vj^a d_T^(b+1/2) v o P_ej||_fk``
      against ``||d_vj^(1+a+b) v||_ej`` for ``v = t^m`` on the edge;
    * ``"face"``: ``||d_e^a d_T^b v o P_fk||_tet`` against
      ``||d_e^(1/2+a+b) v||_fk`` for face monomials;
    * ``"apex"``: ``||d_T^b v o P_ek||_fk / |v(v4)|``, a constant.

    The ``"cartesian"`` row compares the triple integral on the unit
    tetrahedron with its reduced one-dimensional form.
    """
    if beta <= -0.5:
        raise ValueError("beta must exceed -1/2")
    rows = []

    def both(fn):
        return fn(n), fn(n + 8)

    for j in (1, 2, 3):
        vj = BASE3[j - 1]
        d = V4 - vj
        L2 = d @ d
        k = 1 + (j % 3)
        for m in degrees:
            def edge_lhs(nn, m=m, j=j, k=k):
                P, W = _tet_rule(beta, nn)
                t = (P - vj) @ d / L2
                dv = np.linalg.norm(P - vj, axis=1)
                a1 = np.sum(W * dv ** (2 * alpha) * t ** (2 * m))
                F, Wf = _face_rule_z(k, beta + 0.5, nn)
                tf = (F - vj) @ d / L2
                dvf = np.linalg.norm(F - vj, axis=1)
                a2 = np.sum(Wf * dvf ** (2 * alpha) * tf ** (2 * m))
                Pe, We = _edge_rule(j, 1 + alpha + beta, nn)
                te = (Pe - vj) @ d / L2
                rhs = np.sum(We * te ** (2 * m))
                return (math.sqrt(a1) + math.sqrt(a2)) / math.sqrt(rhs)

            r = both(edge_lhs)
            rows.append({"family": "edge", "index": j, "monomial": m, "ratio": r[1], "ratio_coarse": r[0]})
    for k in (1, 2, 3):
        a, t, mvec = _face_frame(k)
        proj = RefTet.face_projection(k)
        for m in degrees:
            for e1 in range(m + 1):
                e2 = m - e1

                def face_lhs(nn, e1=e1, e2=e2):
                    P, W = _tet_rule(beta, nn)
                    Q = proj(P)
                    s1, s2 = (Q - a) @ t, (Q - a) @ mvec
                    rel = P - a
                    de = np.linalg.norm(rel - np.outer(rel @ t, t), axis=1)
                    lhs = np.sum(W * de ** (2 * alpha) * (s1 ** e1 * s2 ** e2) ** 2)
                    F, Wf = _face_rule(k, 0.5 + alpha + beta, nn)
                    f1, f2 = (F - a) @ t, (F - a) @ mvec
                    rhs = np.sum(Wf * (f1 ** e1 * f2 ** e2) ** 2)
                    return math.sqrt(lhs / rhs)

                r = both(face_lhs)
                rows.append({"family": "face", "index": k, "monomial": (e1, e2), "ratio": r[1], "ratio_coarse": r[0]})
    for k in (1, 2, 3):
        vk = BASE3[k - 1]
        d = V4 - vk
        proj = RefTet.edge_projection(k)
        for m in degrees:
            def apex(nn, m=m, k=k):
                F, Wf = _face_rule_z(k, beta, nn)
                t = (proj(F) - vk) @ d / (d @ d)
                return math.sqrt(np.sum(Wf * t ** (2 * m)))

            r = both(apex)
            rows.append({"family": "apex", "index": k, "monomial": m, "ratio": r[1], "ratio_coarse": r[0]})
    for m in degrees:
        def cart(nn, m=m):
            w, ww = gauss_jacobi(nn, 0.0, 2 * alpha + 2 * beta + 2, 0.0, 1.0)
            a_, wa = gauss_jacobi(nn, 2 * beta + 1, 0.0, 0.0, 1.0)
            b_, wb = gauss_jacobi(nn, 2 * beta, 0.0, 0.0, 1.0)
            v2 = (1 - w) ** (2 * m)
            lhs = np.sum(ww * v2) * np.sum(wa) * np.sum(wb)
            x, wx = gauss_jacobi(nn, 2 * alpha + 2 * beta + 2, 0.0, 0.0, 1.0)
            rhs = np.sum(wx * x ** (2 * m)) / ((2 * beta + 1) * (2 * beta + 2))
            return lhs / rhs

        r = both(cart)
        rows.append({"family": "cartesian", "index": 0, "monomial": m, "ratio": r[1], "ratio_coarse": r[0]})
    return rows


def _face_rule_z(k, beta, n):
    """Face ``f_k`` with the weight ``z^(2 beta)`` (distance to the base plane)."""
    P, W = _face_rule(k, beta, n)
    a, b, c = RefTet.face_vertices(k)
    area2 = np.linalg.norm(np.cross(b - a, c - a))
    hf = area2 / np.linalg.norm(b - a)
    # dist to base edge within f_k is z * hf / H
    return P, W * (H / hf) ** (2 * beta)
