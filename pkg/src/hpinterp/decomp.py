"""Splitting of hp functions into lowest-order, edge and interior parts,
and the lifting trajectory ``t -> v(t)`` built from those parts.

With the hierarchical basis, ``u_1`` (the nodal P1/Q1 interpolant) keeps the
vertex coefficients.  Every edge ``e`` contributes a reference function

    u_e = sum_k c_k l2 l3 psi_k(l2 - l3)

on the reference triangle, whose edge ``e4`` carries the edge from its
lower-numbered vertex (at ``v3``) to the higher one (at ``v2``).  Its push
forward to the edge patch equals the edge mode on triangle members and, on
quadrilateral members, the collapsed function ``u_e o T_D`` which adds
interior bubbles.  What remains after subtracting these parts consists of
element bubbles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy import linalg

from . import reference as ref
from .hpspace import (
    HpSpace,
    _kernel,
    assemble_mass,
    assemble_stiffness,
    element_matrices,
    gl_interpolate,
    nodal_lowest_order,
    project_local,
)
from .lifting import lift_prism, _sample_tri_tip
from .mesh import build_patch
from .polyalg import AffineMap, MultiPoly, barycentric_polys, compose_affine, gauss_jacobi

__all__ = [
    "TraceMismatchError",
    "Decomposition",
    "LiftTrajectory",
    "edge_reference_function",
    "reference_map",
    "pushforward",
    "decompose",
    "build_lift_trajectory",
    "trace_integral",
    "measure_decomp_stability",
]


class TraceMismatchError(ValueError):
    """Patch members disagree on a shared degree of freedom."""


@dataclass
class Decomposition:
    """``u = u1 + sum_e T_e u_e + sum_K u_K`` in global coefficients.

    Attributes
    ----------
    u1 : ndarray
        Nodal lowest-order part.
    vertex_parts : dict
        Vertex id -> reference function; all zero with the hierarchical basis.
    edge_parts : dict
        Edge id -> reference function on the triangle.
    edge_vectors : dict
        Edge id -> global coefficients of the pushed-forward edge part.
    interior_parts : dict
        Element id -> global coefficients supported on that element's bubbles.
    """

    space: HpSpace
    u: np.ndarray
    u1: np.ndarray
    vertex_parts: dict = field(default_factory=dict)
    edge_parts: dict = field(default_factory=dict)
    edge_vectors: dict = field(default_factory=dict)
    interior_parts: dict = field(default_factory=dict)

    def reconstruct(self):
        out = self.u1.copy()
        for w in self.edge_vectors.values():
            out += w
        for w in self.interior_parts.values():
            out += w
        return out

    def residual(self):
        scale = max(np.linalg.norm(self.u), 1e-300)
        return float(np.linalg.norm(self.reconstruct() - self.u) / scale)


def edge_reference_function(coeffs):
    """``sum_k c_k l2 l3 psi_k(l2 - l3)`` for ``coeffs = [c_2, c_3, ...]``."""
    l1, l2, l3 = barycentric_polys()
    diff = l2 - l3
    arg = AffineMap([[diff.coef[1, 0], diff.coef[0, 1]]], [diff.coef[0, 0]])
    f = MultiPoly.zero(2)
    for k, c in enumerate(coeffs, start=2):
        if c != 0.0:
            ker = MultiPoly(np.asarray(_kernel(k), dtype=float), 1)
            f = f + l2 * l3 * compose_affine(ker, arg) * c
    return f


# reference positions of the local vertices of a triangle element
_TRI_LOCAL = np.array([ref.TRI_VERTS[0], ref.TRI_VERTS[2], ref.TRI_VERTS[1]])
_UNIT_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
_TO_UNIT = AffineMap([[1.0, 0.0], [0.0, 2.0 / ref.SQRT3]], [0.0, -1.0 / 3.0])
_FROM_UNIT = AffineMap([[1.0, 0.0], [0.0, ref.SQRT3 / 2.0]], [0.0, 1.0 / (2.0 * ref.SQRT3)])


def _affine_from_points(src, dst):
    """Affine map of the plane taking three ``src`` points to ``dst``."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    A = np.column_stack([src, np.ones(3)])
    sol = np.linalg.solve(A, dst)
    return AffineMap(sol[:2].T, sol[2])


def reference_map(space: HpSpace, K: int, anchor):
    """Map from the reference element of ``K`` to the patch reference element.

    ``anchor`` lists global vertex ids ``(a, b)``: ``a`` goes to ``v3`` (or the
    bottom-left corner of the rectangle) and ``b`` to ``v2`` (bottom-right).

    Returns
    -------
    AffineMap
        Onto the reference triangle for triangles, onto the rectangle for quads.
    """
    el = space.mesh.elements[K]
    vids = list(el.vertex_ids)
    ia, ib = vids.index(anchor[0]), vids.index(anchor[1])
    if el.kind == "tri":
        ic = ({0, 1, 2} - {ia, ib}).pop()
        return _affine_from_points(_TRI_LOCAL[[ia, ib, ic]], [ref.TRI_VERTS[2], ref.TRI_VERTS[1], ref.TRI_VERTS[0]])
    # quad: b is adjacent to a; the corner after b (away from a) goes to top-right
    if (ib - ia) % 4 == 1:
        ic = (ib + 1) % 4
    elif (ia - ib) % 4 == 1:
        ic = (ib - 1) % 4
    else:
        raise ValueError("anchor vertices of a quad must be adjacent")
    unit = _affine_from_points(_UNIT_CORNERS[[ia, ib, ic]], _UNIT_CORNERS[[0, 1, 2]])
    return _TO_UNIT.then(unit).then(_FROM_UNIT)


def _collapse(f: MultiPoly) -> MultiPoly:
    """``f o T_D`` on the rectangle: exact polynomial substitution."""
    c = 1.0 / ref.SQRT3
    scale = MultiPoly.from_linear([0.0, -c], 2.0 / 3.0)  # (2/sqrt3 - eta)/sqrt3
    out = MultiPoly.zero(2)
    xi = MultiPoly.variable(0, 2)
    powers = [MultiPoly.constant(1.0, 2)]
    for (a, b), v in f.terms.items():
        while len(powers) <= a:
            powers.append(powers[-1] * scale)
        out = out + powers[a] * (xi ** a) * MultiPoly.monomial((0, b)) * v
    return out


def pushforward(u_ref: MultiPoly, space: HpSpace, kind: str, entity: int, anchors=None, gl_degree=None, tol=1e-9):
    """Global coefficients of the patch function built from a reference function.

    Parameters
    ----------
    u_ref : MultiPoly
        Function on the reference triangle; must vanish where the patch
        reference requires (``e5, e6`` for edge patches, ``e6`` for vertex patches).
    kind : {"edge", "vertex"}
    entity : int
        Edge or vertex id.
    anchors : dict, optional
        Element id -> ``(a, b)`` global vertex ids placed at ``v3``, ``v2``.
        Defaults: edge patches use the edge in ascending order; vertex patches
        use the patch vertex and its counterclockwise successor.
    gl_degree : int, optional
        Gauss-Lobatto interpolation degree on quad members (default: degree of
        ``u_ref``, where the interpolation is exact).

    Raises
    ------
    TraceMismatchError
        If two members assign different values to a shared dof, or a member
        cannot represent its piece.
    """
    mesh = space.mesh
    patch = build_patch(mesh, kind, entity)
    out = np.zeros(space.ndof)
    assigned = np.zeros(space.ndof, dtype=bool)
    if not u_ref.terms:
        return out
    q = u_ref.degree if gl_degree is None else int(gl_degree)
    scale = max(u_ref.norm(), 1e-300)
    for K in patch.elements:
        el = mesh.elements[K]
        if anchors is not None and K in anchors:
            anchor = anchors[K]
        elif kind == "edge":
            a, b = mesh.edges[entity]
            anchor = (int(a), int(b))
        else:
            vids = list(el.vertex_ids)
            i = vids.index(entity)
            anchor = (entity, vids[(i + 1) % len(vids)])
        G = reference_map(space, K, anchor)
        if el.kind == "tri":
            f = compose_affine(u_ref, G)
        else:
            collapsed = _collapse(u_ref)
            g = gl_interpolate(lambda x, y: collapsed(x, y), q) if q >= 1 else collapsed
            f = compose_affine(g, G)
        c, res = project_local(space, K, f)
        if res > tol * scale:
            raise TraceMismatchError(f"element {K} cannot represent the pushed-forward function (residual {res:.2e})")
        _, idx, _ = space.local[K]
        for ci, gi in zip(c, idx):
            if gi < 0:
                if abs(ci) > tol * scale:
                    raise TraceMismatchError(f"element {K}: nonzero value on a constrained dof")
                continue
            if assigned[gi]:
                if abs(out[gi] - ci) > tol * scale:
                    raise TraceMismatchError(
                        f"dof {space.dof_entity[gi]} differs across the patch: {out[gi]} vs {ci}")
            else:
                out[gi] = ci
                assigned[gi] = True
    if kind == "edge":
        # edge-patch functions vanish at every vertex; drop the interpolation round-off there
        vdofs = [g for g in np.nonzero(assigned)[0] if space.dof_entity[g][0] == "vertex"]
        if vdofs and np.abs(out[vdofs]).max() > tol * scale:
            raise TraceMismatchError("edge-patch function does not vanish at the mesh vertices")
        out[vdofs] = 0.0
    out[np.abs(out) < 1e-14 * scale] = 0.0
    return out


def decompose(u, space: HpSpace, tol=1e-10) -> Decomposition:
    """Split ``u`` into ``u1``, edge-patch parts and element bubbles.

    Raises
    ------
    TraceMismatchError
        If an edge part cannot be pushed forward consistently, or the
        remainder after subtracting the edge parts is not made of bubbles.
    """
    u = np.asarray(u, dtype=float)
    u1 = nodal_lowest_order(u, space)
    d = Decomposition(space, u, u1)
    scale = max(np.linalg.norm(u), 1e-300)
    for v in range(space.mesh.n_vertices):
        d.vertex_parts[v] = MultiPoly.zero(2)
    rest = u - u1
    for eid in range(space.mesh.n_edges):
        deg = int(space.edge_degree[eid])
        idx = [space.dof_index(("edge", eid, k)) for k in range(2, deg + 1)]
        if not idx or idx[0] < 0:
            continue
        coeffs = u[idx]
        if not np.any(coeffs):
            continue
        ue = edge_reference_function(coeffs)
        w = pushforward(ue, space, "edge", eid)
        if np.linalg.norm(w[idx] - coeffs) > tol * scale * 10:
            raise TraceMismatchError(f"edge {eid}: pushed-forward edge modes do not match")
        d.edge_parts[eid] = ue
        d.edge_vectors[eid] = w
        rest = rest - w
    interior = space.dof_mask("interior")
    if np.linalg.norm(rest[~interior]) > tol * scale * 10:
        raise TraceMismatchError("remainder is not a sum of element bubbles")
    for K in range(space.mesh.n_elements):
        _, idx, _ = space.local[K]
        mine = [g for g in idx if g >= 0 and space.dof_entity[g][0] == "interior"]
        if not mine:
            continue
        w = np.zeros(space.ndof)
        w[mine] = rest[mine]
        if np.any(w):
            d.interior_parts[K] = w
    return d


# ---------------------------------------------------------------- trajectory

@dataclass
class _PolyPart:
    """``v(t) = sum_j (t / h)^j W[j]`` for ``t < h``, zero afterwards."""

    W: np.ndarray
    h: float

    def breakpoints(self):
        return [self.h]

    def value(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        tau = t / self.h
        P = tau[:, None] ** np.arange(len(self.W))
        out = P @ self.W
        out[tau >= 1.0] = 0.0
        return out

    def derivative(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        tau = t / self.h
        j = np.arange(len(self.W))
        P = np.where(j > 0, j * tau[:, None] ** np.maximum(j - 1, 0), 0.0) / self.h
        out = P @ self.W
        out[tau >= 1.0] = 0.0
        return out


@dataclass
class _LinearPart:
    """Piecewise linear interpolation of ``V[n]`` at knots ``t[n]``; zero past the last knot."""

    knots: np.ndarray
    V: np.ndarray

    def breakpoints(self):
        return list(self.knots[1:])

    def _locate(self, t):
        i = np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, len(self.knots) - 2)
        return i

    def value(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        i = self._locate(t)
        a, b = self.knots[i], self.knots[i + 1]
        s = ((t - a) / (b - a))[:, None]
        out = (1 - s) * self.V[i] + s * self.V[i + 1]
        out[t >= self.knots[-1]] = 0.0
        return out

    def derivative(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        i = self._locate(t)
        a, b = self.knots[i], self.knots[i + 1]
        out = (self.V[i + 1] - self.V[i]) / (b - a)[:, None]
        out[t >= self.knots[-1]] = 0.0
        return out


@dataclass
class LiftTrajectory:
    """``v(t) = sum of part trajectories``, each supported on ``[0, h_part)``."""

    space: HpSpace
    parts: list
    labels: list

    def breakpoints(self):
        pts = sorted({float(b) for p in self.parts for b in p.breakpoints()})
        return np.array(pts)

    @property
    def support(self):
        bp = self.breakpoints()
        return float(bp[-1]) if bp.size else 0.0

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros((len(t), self.space.ndof))
        for p in self.parts:
            out += p.value(t)
        return out

    def derivative(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros((len(t), self.space.ndof))
        for p in self.parts:
            out += p.derivative(t)
        return out


def _tau_expansion(P: MultiPoly):
    """Split a prism polynomial into coefficients of ``z^j`` (2-variable polynomials)."""
    out = []
    for j in range(P.coef.shape[2]):
        out.append(MultiPoly(P.coef[:, :, j], 2))
    while len(out) > 1 and not np.any(out[-1].coef):
        out.pop()
    return out


def _element_bubble_vector(space, K, f):
    c, res = project_local(space, K, f)
    w = np.zeros(space.ndof)
    _, idx, _ = space.local[K]
    for ci, gi in zip(c, idx):
        if gi >= 0:
            w[gi] += ci
    return w, res


def quad_knots(n=40, lo=1e-4):
    """Knots ``0, lo, ..., 1`` (geometric between ``lo`` and 1) in units of ``h_K``."""
    return np.concatenate([[0.0], np.geomspace(lo, 1.0, n)])


def build_lift_trajectory(d: Decomposition, theta: float = 0.5, n_knots: int = 40) -> LiftTrajectory:
    """Trajectory with ``v(0) = u - u1`` assembled from part liftings.

    Edge parts are lifted to the prism with the ``e5, e6`` faces kept at
    zero and the height rescaled to the patch size; triangle bubbles use the
    prism lift with all three edges; quadrilateral bubbles interpolate the
    minimizers of ``||u - v||_0^2 + t^2 |v|_1^2`` over the element's bubble
    space at geometric knots.  ``theta`` is not needed for the construction
    and only recorded for reference.
    """
    space = d.space
    mesh = space.mesh
    parts, labels = [], []
    for eid, ue in d.edge_parts.items():
        patch = build_patch(mesh, "edge", eid)
        h = float(max(mesh.h[K] for K in patch.elements))
        P = lift_prism(ue, (5, 6)).poly
        W = np.array([pushforward(c, space, "edge", eid) for c in _tau_expansion(P)])
        parts.append(_PolyPart(W, h))
        labels.append(("edge", eid))
    for K, w in d.interior_parts.items():
        el = mesh.elements[K]
        h = float(mesh.h[K])
        _, idx, sgn = space.local[K]
        if el.kind == "tri":
            uhat = space.element_poly(w, K)
            P = lift_prism(uhat, (4, 5, 6)).poly
            W = np.array([_element_bubble_vector(space, K, c)[0] for c in _tau_expansion(P)])
            parts.append(_PolyPart(W, h))
        else:
            Mk, Sk = element_matrices(space, K)
            loc = [i for i, g in enumerate(idx) if g >= 0 and space.dof_entity[g][0] == "interior"]
            glob = idx[loc]
            Mb, Sb = Mk[np.ix_(loc, loc)], Sk[np.ix_(loc, loc)]
            ub = w[glob] * sgn[loc]
            knots = quad_knots(n_knots) * h
            V = np.zeros((len(knots), space.ndof))
            for n, t in enumerate(knots[:-1]):
                vb = linalg.solve(Mb + t * t * Sb, Mb @ ub, assume_a="pos")
                V[n, glob] = vb * sgn[loc]
            parts.append(_LinearPart(knots, V))
        labels.append(("interior", K))
    traj = LiftTrajectory(space, parts, labels)
    traj.theta = theta
    return traj


def trace_integral(traj: LiftTrajectory, theta: float, M=None, S=None, n_gauss=None):
    """``int_0^inf t^(1 - 2 theta) (|v(t)|_1^2 + ||v'(t)||_0^2) dt``.

    Each segment between breakpoints carries a polynomial (or linear)
    trajectory, so Gauss rules are exact apart from the weight; the first
    segment uses a Gauss-Jacobi rule for ``t^(1 - 2 theta)``.
    """
    if not traj.parts:
        return 0.0
    space = traj.space
    M = assemble_mass(space).matrix if M is None else M
    S = assemble_stiffness(space).matrix if S is None else S
    deg = max([len(p.W) for p in traj.parts if isinstance(p, _PolyPart)] + [2])
    n = n_gauss or deg + 3
    xg, wg = npleg.leggauss(n)
    knots = np.concatenate([[0.0], traj.breakpoints()])
    total = 0.0
    for j, (a, b) in enumerate(zip(knots[:-1], knots[1:])):
        if b <= a:
            continue
        if j == 0:
            t, w = gauss_jacobi(n, 0.0, 1.0 - 2.0 * theta, a, b)
        else:
            t = 0.5 * (b - a) * xg + 0.5 * (a + b)
            w = 0.5 * (b - a) * wg * t ** (1.0 - 2.0 * theta)
        V = traj(t)
        D = traj.derivative(t)
        vals = np.einsum("ij,ij->i", V @ S.T if not hasattr(S, "dot") else (S @ V.T).T, V)
        vals += np.einsum("ij,ij->i", (M @ D.T).T, D)
        total += float(w @ vals)
    return total


def _ref_diameter(kind):
    return 2.0 if kind == "tri" else math.hypot(2.0, ref.SQRT3)


def measure_decomp_stability(space: HpSpace, theta: float, samples: int = 5, seed: int = 0,
                             oracle_levels: int = 1, slobodeckij_level: int = 1, delta: float = 0.2):
    """Ratios of decomposition part norms and trace integrals to the oracle norm.

    For each random ``u`` the part sum is
    ``sum_e h_e^(2 - 2 theta) (|u_e|_theta^2 + ||d^-theta u_e||^2 + |u_e|_{W1,inf(T_delta)}^2)
    + sum_K (|u_K|_theta^2 + ||d^-theta u_K||^2)``, with element terms taken on
    the reference element and scaled by ``(h_K / h_ref)^(2 - 2 theta)``.

    Returns
    -------
    list of dict
        One row per sample: ``part_ratio``, ``trace_ratio``, ``oracle_sq``.
    """
    from .fracnorm import NormOracle, SlobodeckijGram, poly_coefficients, reference_space, weighted_distance_norm

    rng = np.random.default_rng(seed)
    oracle = NormOracle(space, oracle_levels, "full")
    M = assemble_mass(space).matrix
    S = assemble_stiffness(space).matrix
    grams = {}

    def semi_sq(kind, f):
        p = max(f.degree, 1 if kind == "tri" else 2)
        key = (kind, p)
        if key not in grams:
            sp_ = reference_space(kind, p)
            grams[key] = (sp_, SlobodeckijGram(sp_, theta, slobodeckij_level).matrix)
        sp_, G = grams[key]
        c = poly_coefficients(sp_, f)
        return float(c @ G @ c)

    rows = []
    for _ in range(samples):
        u = rng.standard_normal(space.ndof)
        d = decompose(u, space)
        total = 0.0
        for eid, ue in d.edge_parts.items():
            h = float(max(space.mesh.h[K] for K in build_patch(space.mesh, "edge", eid).elements))
            tip = _sample_tri_tip(np.random.default_rng(0), 400, delta)
            sup = max(np.max(np.abs(g(tip[:, 0], tip[:, 1]))) for g in [ue] + list(ue.grad()))
            val = semi_sq("tri", ue) + weighted_distance_norm(ue, [5, 6], theta).value ** 2 + sup ** 2
            total += h ** (2 - 2 * theta) * val
        for K, w in d.interior_parts.items():
            kind = space.mesh.elements[K].kind
            f = space.element_poly(w, K)
            edges = [4, 5, 6] if kind == "tri" else [0, 1, 2, 3]
            dom = "triangle" if kind == "tri" else "box"
            val = semi_sq(kind, f) + weighted_distance_norm(f, edges, theta, dom).value ** 2
            total += (space.mesh.h[K] / _ref_diameter(kind)) ** (2 - 2 * theta) * val
        oracle_sq = oracle.norm_sequence(u, theta)[-1] ** 2
        traj = build_lift_trajectory(d, theta)
        ti = trace_integral(traj, theta, M, S)
        rows.append({"part_ratio": float(total / oracle_sq), "trace_ratio": float(ti / oracle_sq),
                     "oracle_sq": float(oracle_sq)})
    return rows
