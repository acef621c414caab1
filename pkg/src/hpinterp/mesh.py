"""Triangle/quadrilateral meshes with affine and bilinear element maps."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import reference as ref
from .polyalg import AffineMap, make_quadrature

__all__ = [
    "MeshError",
    "Element",
    "ElementMap",
    "Mesh",
    "Patch",
    "load_mesh",
    "save_mesh",
    "check_admissibility",
    "shape_regularity",
    "check_degree_compat",
    "refine_uniform",
    "build_patch",
    "quad_grid",
    "criss_cross",
    "mixed_strip",
    "single_element",
]


class MeshError(ValueError):
    """Raised for unreadable or geometrically invalid mesh input."""


KINDS = {"tri": 3, "triangle": 3, "quad": 4}


@dataclass(frozen=True)
class Element:
    id: int
    kind: str
    vertex_ids: tuple
    degree: int

    def __post_init__(self):
        kind = "tri" if self.kind == "triangle" else self.kind
        if kind not in ("tri", "quad"):
            raise MeshError(f"element {self.id}: unknown kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "vertex_ids", tuple(int(v) for v in self.vertex_ids))
        if len(self.vertex_ids) != KINDS[kind]:
            raise MeshError(f"element {self.id}: {kind} needs {KINDS[kind]} vertices")
        if len(set(self.vertex_ids)) != len(self.vertex_ids):
            raise MeshError(f"element {self.id}: repeated vertex")
        if int(self.degree) < 1:
            raise MeshError(f"element {self.id}: degree must be >= 1")
        object.__setattr__(self, "degree", int(self.degree))

    @property
    def local_edges(self):
        """Local edges as vertex-id pairs following the counterclockwise order."""
        v = self.vertex_ids
        return [(v[i], v[(i + 1) % len(v)]) for i in range(len(v))]


class ElementMap:
    """Map from the reference triangle/rectangle onto a physical element.

    Triangles: local vertices ``(a, b, c)`` are the images of
    ``(v1, v3, v2)``.  Quads: local vertices are the images of the
    rectangle corners bottom-left, bottom-right, top-right, top-left.
    """

    def __init__(self, kind, corners):
        self.kind = kind
        self.corners = np.asarray(corners, dtype=float)
        if kind == "tri":
            a, b, c = self.corners
            R = np.column_stack([ref.TRI_VERTS[2] - ref.TRI_VERTS[0], ref.TRI_VERTS[1] - ref.TRI_VERTS[0]])
            P = np.column_stack([b - a, c - a])
            A = P @ np.linalg.inv(R)
            self.affine = AffineMap(A, a - A @ ref.TRI_VERTS[0])
            self._inv_affine = self.affine
        else:
            self.affine = None
            self._inv_affine = None
            c = self.corners
            if np.allclose(c[0] + c[2], c[1] + c[3], rtol=0, atol=1e-14 * np.abs(c).max()):
                # parallelogram: the bilinear map is affine
                x0 = np.zeros(2)
                B = self.jacobian(x0)
                self._inv_affine = AffineMap(B, self(x0))

    def _bilinear_parts(self, ref_pts):
        s, t = ref.rect_to_unit(ref_pts[..., 0], ref_pts[..., 1])
        N = np.stack([(1 - s) * (1 - t), (1 + s) * (1 - t), (1 + s) * (1 + t), (1 - s) * (1 + t)], -1) / 4
        dNs = np.stack([-(1 - t), (1 - t), (1 + t), -(1 + t)], -1) / 4
        dNt = np.stack([-(1 - s), -(1 + s), (1 + s), (1 - s)], -1) / 4
        return N, dNs, dNt * (2.0 / ref.SQRT3)

    def __call__(self, ref_pts):
        ref_pts = np.asarray(ref_pts, dtype=float)
        if self.affine is not None:
            return self.affine(ref_pts)
        N, _, _ = self._bilinear_parts(ref_pts)
        return N @ self.corners

    def jacobian(self, ref_pts):
        """Jacobian matrices ``dF/dxi`` with shape ``(..., 2, 2)``."""
        ref_pts = np.asarray(ref_pts, dtype=float)
        if self.affine is not None:
            return np.broadcast_to(self.affine.B, ref_pts.shape[:-1] + (2, 2)).copy()
        _, dNx, dNy = self._bilinear_parts(ref_pts)
        J = np.empty(ref_pts.shape[:-1] + (2, 2))
        J[..., :, 0] = dNx @ self.corners
        J[..., :, 1] = dNy @ self.corners
        return J

    def inverse(self, pts, tol=1e-13, maxiter=50):
        """Reference coordinates of physical points (Newton for quads)."""
        pts = np.asarray(pts, dtype=float)
        if self._inv_affine is not None:
            return np.linalg.solve(self._inv_affine.B, (pts - self._inv_affine.b).T).T
        xi = np.zeros_like(pts)
        xi[..., 1] = 0.5 / ref.SQRT3
        for _ in range(maxiter):
            r = self(xi) - pts
            step = np.linalg.solve(self.jacobian(xi), r[..., None])[..., 0]
            xi = xi - step
            if np.max(np.abs(step)) < tol:
                break
        return xi


@dataclass(frozen=True)
class Patch:
    kind: str
    center: int
    elements: tuple


@dataclass
class Mesh:
    """Conforming 2D mesh.

    Parameters
    ----------
    vertices : (nv, 2) array
    elements : list of Element
    boundary_edges : iterable of vertex pairs, optional
        Declared boundary; defaults to the edges with one adjacent element.
    parents : list of (int, AffineMap), optional
        For refined meshes, parent element and child-to-parent reference map.
    """

    vertices: np.ndarray
    elements: list
    boundary_edges: object = None
    parents: list = None
    edges: np.ndarray = field(init=False)
    edge_elements: list = field(init=False)
    element_edges: list = field(init=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        nv = len(self.vertices)
        for e in self.elements:
            if any(v < 0 or v >= nv for v in e.vertex_ids):
                raise MeshError(f"element {e.id} references a missing vertex")
        index = {}
        edge_elems = []
        elem_edges = []
        for k, e in enumerate(self.elements):
            row = []
            for a, b in e.local_edges:
                key = (min(a, b), max(a, b))
                if key not in index:
                    index[key] = len(index)
                    edge_elems.append([])
                eid = index[key]
                edge_elems[eid].append(k)
                row.append((eid, 1 if a < b else -1))
            elem_edges.append(row)
        self.edge_index = index
        self.edges = np.array(sorted(index, key=index.get), dtype=int).reshape(-1, 2)
        self.edge_elements = [tuple(x) for x in edge_elems]
        self.element_edges = elem_edges
        if self.boundary_edges is None:
            self.boundary_edges = {key for key, i in index.items() if len(edge_elems[i]) == 1}
        else:
            self.boundary_edges = {(min(a, b), max(a, b)) for a, b in self.boundary_edges}
        self.maps = [ElementMap(e.kind, self.vertices[list(e.vertex_ids)]) for e in self.elements]
        self.h = np.array([_diameter(self.vertices[list(e.vertex_ids)]) for e in self.elements])
        for k, m in enumerate(self.maps):
            rule = make_quadrature("box" if m.kind == "quad" else "triangle", 5)
            detJ = np.linalg.det(m.jacobian(rule.nodes))
            if np.any(detJ <= 0):
                raise MeshError(f"element {k} is inverted or degenerate (nonpositive Jacobian)")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_edges(self):
        return len(self.edges)

    def is_boundary_edge(self, eid):
        a, b = self.edges[eid]
        return (int(a), int(b)) in self.boundary_edges

    @property
    def boundary_vertices(self):
        return sorted({v for e in self.boundary_edges for v in e})

    @property
    def degrees(self):
        return np.array([e.degree for e in self.elements])

    def with_degrees(self, degrees):
        if np.isscalar(degrees):
            degrees = [degrees] * self.n_elements
        els = [Element(e.id, e.kind, e.vertex_ids, int(p)) for e, p in zip(self.elements, degrees)]
        return Mesh(self.vertices, els, self.boundary_edges, self.parents)

    def scaled(self, s):
        return Mesh(self.vertices * s, list(self.elements), self.boundary_edges, self.parents)

    def transformed(self, matrix, shift=(0.0, 0.0)):
        """Mesh moved by ``x -> matrix @ x + shift`` (must preserve orientation)."""
        v = self.vertices @ np.asarray(matrix, dtype=float).T + np.asarray(shift)
        return Mesh(v, list(self.elements), self.boundary_edges, None)

    def area(self):
        total = 0.0
        for m in self.maps:
            rule = make_quadrature("box" if m.kind == "quad" else "triangle", 4)
            total += float(rule.weights @ np.linalg.det(m.jacobian(rule.nodes)))
        return total

    def to_dict(self):
        return {
            "vertices": self.vertices.tolist(),
            "elements": [{"kind": e.kind, "verts": list(e.vertex_ids), "degree": e.degree} for e in self.elements],
            "boundary_edges": sorted([list(e) for e in self.boundary_edges]),
        }


def _diameter(pts):
    d = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((d ** 2).sum(-1)).max())


# --------------------------------------------------------------------- file IO

def _parse_mesh(data):
    try:
        raw_v = data["vertices"]
        raw_e = data["elements"]
    except (KeyError, TypeError) as exc:
        raise MeshError(f"mesh file missing field: {exc}") from None
    if raw_v and isinstance(raw_v[0], dict):
        ids = [int(v["id"]) for v in raw_v]
        if len(set(ids)) != len(ids):
            raise MeshError("duplicate vertex id")
        if sorted(ids) != list(range(len(ids))):
            raise MeshError("vertex ids must be dense in [0, #V)")
        verts = np.zeros((len(ids), 2))
        for v in raw_v:
            verts[int(v["id"])] = (float(v["x"]), float(v["y"]))
    else:
        try:
            verts = np.array(raw_v, dtype=float).reshape(-1, 2)
        except ValueError as exc:
            raise MeshError(f"bad vertex list: {exc}") from None
    try:
        elements = [Element(i, e["kind"], e["verts"], e.get("degree", 1)) for i, e in enumerate(raw_e)]
    except (KeyError, TypeError) as exc:
        raise MeshError(f"bad element entry: {exc}") from None
    bnd = data.get("boundary_edges")
    return Mesh(verts, elements, [tuple(b) for b in bnd] if bnd is not None else None)


def load_mesh(path) -> Mesh:
    """Read a mesh from a JSON file (format documented in the README)."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MeshError(f"{path}: parse error: {exc}") from None
    return _parse_mesh(data)


def mesh_from_dict(data) -> Mesh:
    return _parse_mesh(data)


def save_mesh(mesh: Mesh, path):
    Path(path).write_text(json.dumps(mesh.to_dict(), indent=1))


# ------------------------------------------------------------------ validation

def _point_on_segment(p, a, b, tol=1e-10):
    ab = b - a
    L2 = ab @ ab
    t = (p - a) @ ab / L2
    if t <= tol or t >= 1 - tol:
        return False
    return np.linalg.norm(a + t * ab - p) <= tol * np.sqrt(L2)


def check_admissibility(mesh: Mesh):
    """List violations of conformity, boundary tagging and orientation.

    Returns
    -------
    list of str
        Empty when the mesh is admissible.
    """
    report = []
    V = mesh.vertices
    for eid, elems in enumerate(mesh.edge_elements):
        if len(elems) > 2:
            report.append(f"edge {tuple(mesh.edges[eid])}: {len(elems)} adjacent elements")
    # hanging nodes: a vertex inside an edge it does not belong to
    for eid, (a, b) in enumerate(mesh.edges):
        for v in range(mesh.n_vertices):
            if v in (a, b):
                continue
            if _point_on_segment(V[v], V[a], V[b]):
                owners = [mesh.elements[k].id for k in mesh.edge_elements[eid]]
                report.append(
                    f"hanging node: vertex {v} lies inside edge ({a}, {b}) of element(s) {owners}"
                )
    for eid, (a, b) in enumerate(mesh.edges):
        n = len(mesh.edge_elements[eid])
        tagged = (int(a), int(b)) in mesh.boundary_edges
        if n == 1 and not tagged:
            report.append(f"edge ({a}, {b}) has one element but is not tagged boundary")
        if n == 2 and tagged:
            report.append(f"edge ({a}, {b}) is interior but tagged boundary")
    for key in mesh.boundary_edges:
        if key not in mesh.edge_index:
            report.append(f"declared boundary edge {key} is not an element edge")
    for k, e in enumerate(mesh.elements):
        P = V[list(e.vertex_ids)]
        x, y = P[:, 0], P[:, 1]
        area = 0.5 * (x @ np.roll(y, -1) - y @ np.roll(x, -1))
        if area <= 0:
            report.append(f"element {e.id}: clockwise or degenerate (signed area {area:.3g})")
    # both neighbours must parametrize a shared edge identically
    for eid, elems in enumerate(mesh.edge_elements):
        if len(elems) != 2:
            continue
        mids = []
        for k in elems:
            loc = [i for i, (g, _) in enumerate(mesh.element_edges[k]) if g == eid][0]
            mids.append(_mapped_edge_point(mesh, k, loc, 0.5))
        if np.linalg.norm(mids[0] - mids[1]) > 1e-10 * max(1.0, mesh.h[elems[0]]):
            report.append(f"edge {tuple(mesh.edges[eid])}: neighbour parametrizations disagree")
    return report


def reference_edge(kind, local_edge):
    """Start/end reference points of a local edge (counterclockwise order)."""
    if kind == "tri":
        order = [ref.TRI_VERTS[0], ref.TRI_VERTS[2], ref.TRI_VERTS[1]]
    else:
        order = list(ref.RECT_VERTS)
    n = len(order)
    return order[local_edge], order[(local_edge + 1) % n]


def _mapped_edge_point(mesh, k, local_edge, s):
    a, b = reference_edge(mesh.elements[k].kind, local_edge)
    return mesh.maps[k]((1 - s) * a + s * b)


def shape_regularity(mesh: Mesh):
    """Per-element ratio of squared diameter to Gramian eigenvalues (worst case)."""
    out = np.empty(mesh.n_elements)
    for k, m in enumerate(mesh.maps):
        rule = make_quadrature("box" if m.kind == "quad" else "triangle", 9)
        J = m.jacobian(rule.nodes)
        lam = np.linalg.eigvalsh(np.swapaxes(J, -1, -2) @ J)
        if np.any(lam <= 0):
            raise MeshError(f"element {k}: singular Gramian")
        h2 = mesh.h[k] ** 2
        out[k] = float(np.max(np.maximum(h2 / lam, lam / h2)))
    return out


def check_degree_compat(mesh: Mesh) -> bool:
    """Triangle/quad neighbours need ``p_T <= p_S`` or ``2 p_S <= p_T``."""
    for elems in mesh.edge_elements:
        if len(elems) != 2:
            continue
        e1, e2 = (mesh.elements[k] for k in elems)
        if e1.kind == e2.kind:
            continue
        T, S = (e1, e2) if e1.kind == "tri" else (e2, e1)
        if not (T.degree <= S.degree or 2 * S.degree <= T.degree):
            return False
    return True


# ------------------------------------------------------------------ refinement

_TRI_REF = [ref.TRI_VERTS[0], ref.TRI_VERTS[2], ref.TRI_VERTS[1]]


def _tri_child_map(pts):
    """Affine map from reference triangle to the child with reference corners ``pts``."""
    return ElementMap("tri", pts).affine


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every element into four children through edge midpoints."""
    V = [tuple(v) for v in mesh.vertices]
    mid = {}

    def midpoint(k, local_edge):
        eid, _ = mesh.element_edges[k][local_edge]
        if eid not in mid:
            mid[eid] = len(V)
            V.append(tuple(_mapped_edge_point(mesh, k, local_edge, 0.5)))
        return mid[eid]

    elements, parents, bnd = [], [], set()
    for k, e in enumerate(mesh.elements):
        vs = e.vertex_ids
        n = len(vs)
        m = [midpoint(k, i) for i in range(n)]
        if e.kind == "tri":
            a, b, c = vs
            R = _TRI_REF
            Rm = [(R[i] + R[(i + 1) % 3]) / 2 for i in range(3)]
            kids = [((a, m[0], m[2]), (R[0], Rm[0], Rm[2])),
                    ((m[0], b, m[1]), (Rm[0], R[1], Rm[1])),
                    ((m[2], m[1], c), (Rm[2], Rm[1], R[2])),
                    ((m[1], m[2], m[0]), (Rm[1], Rm[2], Rm[0]))]
        else:
            center = len(V)
            V.append(tuple(mesh.maps[k](np.array([0.0, 0.5 / ref.SQRT3]))))
            R = list(ref.RECT_VERTS)
            Rm = [(R[i] + R[(i + 1) % 4]) / 2 for i in range(4)]
            Rc = np.array([0.0, 0.5 / ref.SQRT3])
            kids = [((vs[0], m[0], center, m[3]), (R[0], Rm[0], Rc, Rm[3])),
                    ((m[0], vs[1], m[1], center), (Rm[0], R[1], Rm[1], Rc)),
                    ((center, m[1], vs[2], m[2]), (Rc, Rm[1], R[2], Rm[2])),
                    ((m[3], center, m[2], vs[3]), (Rm[3], Rc, Rm[2], R[3]))]
        for verts, rpts in kids:
            elements.append(Element(len(elements), e.kind, verts, e.degree))
            rpts = np.array(rpts)
            if e.kind == "tri":
                g = _tri_child_map(rpts)
            else:
                lo, hi = rpts.min(0), rpts.max(0)
                scale = np.array([(hi[0] - lo[0]) / 2.0, (hi[1] - lo[1]) / ref.SQRT3])
                shift = lo - scale * np.array([ref.RECT_X[0], ref.RECT_Y[0]])
                g = AffineMap(np.diag(scale), shift)
            parents.append((k, g))
    for a, b in mesh.boundary_edges:
        eid = mesh.edge_index[(a, b)]
        mm = mid[eid]
        bnd.add((min(a, mm), max(a, mm)))
        bnd.add((min(b, mm), max(b, mm)))
    return Mesh(np.array(V), elements, bnd, parents)


# --------------------------------------------------------------------- patches

def build_patch(mesh: Mesh, kind: str, entity_id: int) -> Patch:
    """Elements whose closure contains the given vertex or edge."""
    if kind == "vertex":
        if not 0 <= entity_id < mesh.n_vertices:
            raise KeyError(f"unknown vertex {entity_id}")
        members = tuple(k for k, e in enumerate(mesh.elements) if entity_id in e.vertex_ids)
    elif kind == "edge":
        if not 0 <= entity_id < mesh.n_edges:
            raise KeyError(f"unknown edge {entity_id}")
        members = tuple(mesh.edge_elements[entity_id])
    else:
        raise ValueError(f"patch kind must be 'vertex' or 'edge', got {kind!r}")
    return Patch(kind, int(entity_id), members)


# ------------------------------------------------------------------ generators

def quad_grid(n, degree=1, lo=(0.0, 0.0), hi=(1.0, 1.0)) -> Mesh:
    """``n x n`` grid of axis-aligned rectangles on the box ``[lo, hi]``."""
    xs = np.linspace(lo[0], hi[0], n + 1)
    ys = np.linspace(lo[1], hi[1], n + 1)
    V = np.array([[x, y] for y in ys for x in xs])
    vid = lambda i, j: j * (n + 1) + i  # noqa: E731
    els = []
    for j in range(n):
        for i in range(n):
            els.append(Element(len(els), "quad", (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)), degree))
    return Mesh(V, els)


def criss_cross(n, degree=1, lo=(0.0, 0.0), hi=(1.0, 1.0)) -> Mesh:
    """``n x n`` squares, each cut into four triangles through its center."""
    xs = np.linspace(lo[0], hi[0], n + 1)
    ys = np.linspace(lo[1], hi[1], n + 1)
    V = [[x, y] for y in ys for x in xs]
    vid = lambda i, j: j * (n + 1) + i  # noqa: E731
    els = []
    for j in range(n):
        for i in range(n):
            c = len(V)
            V.append([(xs[i] + xs[i + 1]) / 2, (ys[j] + ys[j + 1]) / 2])
            a, b, d, e = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            for p, q in ((a, b), (b, d), (d, e), (e, a)):
                els.append(Element(len(els), "tri", (p, q, c), degree))
    return Mesh(np.array(V), els)


def mixed_strip(degree_quad=1, degree_tri=None, length=2) -> Mesh:
    """Strip of unit cells alternating between one quad and two triangles.

    ``length=2`` gives ``[0, 2] x [0, 1]`` with a quad on the left cell and
    the right cell split along its diagonal.
    """
    degree_tri = degree_quad if degree_tri is None else degree_tri
    V = [[float(i), float(j)] for j in (0, 1) for i in range(length + 1)]
    top = length + 1
    els = []
    for i in range(length):
        a, b, c, d = i, i + 1, top + i + 1, top + i
        if i % 2 == 0:
            els.append(Element(len(els), "quad", (a, b, c, d), degree_quad))
        else:
            els.append(Element(len(els), "tri", (a, b, c), degree_tri))
            els.append(Element(len(els), "tri", (a, c, d), degree_tri))
    return Mesh(np.array(V), els)


def single_element(kind, degree=1) -> Mesh:
    """The reference triangle or rectangle as a one-element mesh."""
    if kind == "tri":
        V = np.array([ref.TRI_VERTS[0], ref.TRI_VERTS[2], ref.TRI_VERTS[1]])
        return Mesh(V, [Element(0, "tri", (0, 1, 2), degree)])
    return Mesh(ref.RECT_VERTS.copy(), [Element(0, "quad", (0, 1, 2, 3), degree)])
