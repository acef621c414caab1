"""Reference geometry: triangle, rectangle, tetrahedron and prism.

The reference triangle is equilateral with side 2 and centroid at the
origin; the reference rectangle is its bounding box, so that the collapse
map ``duffy`` sends the rectangle onto the triangle by shrinking the top
edge into the top vertex.
"""
import numpy as np

SQRT3 = np.sqrt(3.0)

# triangle vertices v1 (top), v2 (bottom right), v3 (bottom left)
TRI_VERTS = np.array([[0.0, 2.0 / SQRT3], [1.0, -1.0 / SQRT3], [-1.0, -1.0 / SQRT3]])
TRI_AREA = SQRT3

# rectangle (-1, 1) x (-1/sqrt3, 2/sqrt3)
RECT_X = (-1.0, 1.0)
RECT_Y = (-1.0 / SQRT3, 2.0 / SQRT3)
RECT_AREA = 2.0 * SQRT3
# counterclockwise corners, starting bottom-left
RECT_VERTS = np.array([[-1.0, RECT_Y[0]], [1.0, RECT_Y[0]], [1.0, RECT_Y[1]], [-1.0, RECT_Y[1]]])

# Apex height chosen so that the three lateral edges meet at right angles:
# (v_i - v4).(v_j - v4) = v_i.v_j + H^2 = -2/3 + H^2 = 0.
TET_HEIGHT = np.sqrt(2.0 / 3.0)
TET_VERTS = np.array(
    [[TRI_VERTS[0, 0], TRI_VERTS[0, 1], 0.0],
     [TRI_VERTS[1, 0], TRI_VERTS[1, 1], 0.0],
     [TRI_VERTS[2, 0], TRI_VERTS[2, 1], 0.0],
     [0.0, 0.0, TET_HEIGHT]]
)
TET_VOLUME = TRI_AREA * TET_HEIGHT / 3.0

# Base edges e4, e5, e6 as vertex index pairs (0-based); base edge 3+k is
# the edge opposite vertex k, shared by the base and lateral face f_k.
BASE_EDGES = {4: (1, 2), 5: (0, 2), 6: (0, 1)}


def barycentric(x, y):
    """Barycentric coordinates of points with respect to the reference triangle.

    Returns an array of shape ``(3,) + np.shape(x)``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    l1 = y / SQRT3 + 1.0 / 3.0
    l2 = 1.0 / 3.0 + x / 2.0 - y / (2.0 * SQRT3)
    l3 = 1.0 / 3.0 - x / 2.0 - y / (2.0 * SQRT3)
    return np.stack([l1, l2, l3])


# affine coefficients of the barycentrics: lambda_i = a_i . (x, y) + d_i
BARY_COEF = np.array([[0.0, 1.0 / SQRT3], [0.5, -0.5 / SQRT3], [-0.5, -0.5 / SQRT3]])
BARY_CONST = np.array([1.0, 1.0, 1.0]) / 3.0


def duffy(xi, eta):
    """Collapse map from the reference rectangle onto the reference triangle."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    return (2.0 / SQRT3 - eta) / SQRT3 * xi, eta


def duffy_jacobian(eta):
    """Absolute Jacobian determinant of :func:`duffy` (depends on ``eta`` only)."""
    return (2.0 / SQRT3 - np.asarray(eta, dtype=float)) / SQRT3


def rect_to_unit(xi, eta):
    """Map rectangle coordinates to the unit square ``[-1, 1]^2``."""
    return np.asarray(xi, dtype=float), (2.0 / SQRT3) * (np.asarray(eta, dtype=float) - 1.0 / (2.0 * SQRT3))


def unit_to_rect(s, t):
    return np.asarray(s, dtype=float), 0.5 * SQRT3 * np.asarray(t, dtype=float) + 1.0 / (2.0 * SQRT3)


def in_triangle(x, y, tol=1e-12):
    return np.all(barycentric(x, y) >= -tol, axis=0)
