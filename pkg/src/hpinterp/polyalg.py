"""Multivariate polynomial arithmetic on reference geometries.

Polynomials in two or three variables are stored as dense monomial
coefficient arrays, ``coef[i, j]`` multiplying ``x**i * y**j``.  Degrees in
this package stay around 20 or below, so dense storage is cheap and lets
products, derivatives and evaluation go through numpy/scipy kernels.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg
from numpy.polynomial import polynomial as nppoly
from scipy import special

from . import reference as ref

__all__ = [
    "MultiPoly",
    "LinearForm",
    "AffineMap",
    "QuadRule",
    "compose_affine",
    "divide_by_linear",
    "integrate_ref",
    "make_quadrature",
    "gauss_lobatto_nodes",
    "gauss_jacobi",
    "mollifier_moments",
    "barycentric_polys",
]

DOMAINS = ("triangle", "box", "tetrahedron", "prism")


def _as_coef(coef, nvars):
    coef = np.asarray(coef, dtype=float)
    if coef.ndim != nvars:
        raise ValueError(f"coefficient array must have {nvars} axes, got {coef.ndim}")
    n = max(coef.shape) if coef.size else 1
    if any(s != n for s in coef.shape):
        padded = np.zeros((n,) * nvars)
        padded[tuple(slice(0, s) for s in coef.shape)] = coef
        coef = padded
    return coef


def _convolve(a, b):
    """Full convolution of coefficient arrays, looping over the sparser operand.

    Coefficient arrays of total-degree polynomials are mostly zero, so shifted
    accumulation beats dense direct convolution and stays exact to round-off
    (no FFT noise in structurally zero entries).
    """
    if np.count_nonzero(a) < np.count_nonzero(b):
        a, b = b, a
    out = np.zeros(tuple(sa + sb - 1 for sa, sb in zip(a.shape, b.shape)))
    for idx in np.argwhere(b != 0.0):
        sl = tuple(slice(i, i + n) for i, n in zip(idx, a.shape))
        out[sl] += b[tuple(idx)] * a
    return out


class MultiPoly:
    """Polynomial in ``nvars`` (2 or 3) real variables.

    Parameters
    ----------
    coef : array_like
        Dense coefficient array with one axis per variable.
    nvars : int, optional
        Number of variables; inferred from ``coef`` when omitted.
    """

    __slots__ = ("coef", "nvars")

    def __init__(self, coef, nvars=None):
        coef = np.asarray(coef, dtype=float)
        nvars = coef.ndim if nvars is None else nvars
        if nvars not in (1, 2, 3):
            raise ValueError("nvars must be 1, 2 or 3")
        self.nvars = nvars
        self.coef = _as_coef(coef, nvars)
        self.coef.setflags(write=False)

    # construction helpers
    @classmethod
    def zero(cls, nvars):
        return cls(np.zeros((1,) * nvars), nvars)

    @classmethod
    def constant(cls, value, nvars):
        return cls(np.full((1,) * nvars, float(value)), nvars)

    @classmethod
    def monomial(cls, exponents, coefficient=1.0):
        exponents = tuple(int(e) for e in exponents)
        n = max(exponents) + 1
        c = np.zeros((n,) * len(exponents))
        c[exponents] = coefficient
        return cls(c)

    @classmethod
    def variable(cls, index, nvars):
        e = [0] * nvars
        e[index] = 1
        return cls.monomial(e)

    @classmethod
    def from_terms(cls, terms, nvars):
        if not terms:
            return cls.zero(nvars)
        n = max(max(k) for k in terms) + 1
        c = np.zeros((n,) * nvars)
        for k, v in terms.items():
            c[tuple(k)] += v
        return cls(c, nvars)

    @classmethod
    def from_linear(cls, a, d):
        """Affine polynomial ``a . x + d``."""
        a = np.asarray(a, dtype=float)
        c = np.zeros((2,) * a.size)
        c[(0,) * a.size] = d
        for i, ai in enumerate(a):
            e = [0] * a.size
            e[i] = 1
            c[tuple(e)] = ai
        return cls(c)

    @classmethod
    def random(cls, degree, nvars, rng):
        """Random polynomial of total degree ``degree`` with N(0,1) coefficients."""
        c = np.zeros((degree + 1,) * nvars)
        for e in _exponents(degree, nvars):
            c[e] = rng.standard_normal()
        return cls(c, nvars)

    # structure
    @property
    def terms(self):
        """Mapping exponent tuple -> coefficient, without zero entries."""
        idx = np.argwhere(self.coef != 0.0)
        return {tuple(int(i) for i in k): float(self.coef[tuple(k)]) for k in idx}

    @property
    def degree(self):
        idx = np.argwhere(self.coef != 0.0)
        if idx.size == 0:
            return 0
        return int(idx.sum(axis=1).max())

    def degree_in(self, axis):
        nz = np.argwhere(self.coef != 0.0)
        return int(nz[:, axis].max()) if nz.size else 0

    def norm(self):
        """Max-norm of the coefficients."""
        return float(np.max(np.abs(self.coef))) if self.coef.size else 0.0

    def trimmed(self, tol=0.0):
        c = np.where(np.abs(self.coef) > tol, self.coef, 0.0)
        d = MultiPoly(c, self.nvars).degree
        return MultiPoly(c[(slice(0, d + 1),) * self.nvars], self.nvars)

    def padded(self, n):
        if self.coef.shape[0] >= n:
            return self.coef
        c = np.zeros((n,) * self.nvars)
        c[tuple(slice(0, s) for s in self.coef.shape)] = self.coef
        return c

    # arithmetic
    def _binary(self, other, sign):
        if np.isscalar(other):
            other = MultiPoly.constant(other, self.nvars)
        if other.nvars != self.nvars:
            raise ValueError("variable count mismatch")
        n = max(self.coef.shape[0], other.coef.shape[0])
        return MultiPoly(self.padded(n) + sign * other.padded(n), self.nvars)

    def __add__(self, other):
        return self._binary(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, -1.0)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return MultiPoly(-self.coef, self.nvars)

    def __mul__(self, other):
        if np.isscalar(other):
            return MultiPoly(self.coef * float(other), self.nvars)
        if other.nvars != self.nvars:
            raise ValueError("variable count mismatch")
        return MultiPoly(_convolve(self.coef, other.coef), self.nvars)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return MultiPoly(self.coef / float(scalar), self.nvars)

    def __pow__(self, k):
        out = MultiPoly.constant(1.0, self.nvars)
        for _ in range(int(k)):
            out = out * self
        return out

    def __repr__(self):
        return f"MultiPoly(nvars={self.nvars}, degree={self.degree}, nterms={len(self.terms)})"

    # calculus and evaluation
    def __call__(self, *xs):
        if len(xs) != self.nvars:
            raise ValueError(f"expected {self.nvars} coordinates")
        xs = np.broadcast_arrays(*[np.asarray(x, dtype=float) for x in xs])
        if self.nvars == 1:
            return nppoly.polyval(xs[0], self.coef)
        if self.nvars == 2:
            return nppoly.polyval2d(xs[0], xs[1], self.coef)
        return nppoly.polyval3d(xs[0], xs[1], xs[2], self.coef)

    def deriv(self, axis):
        if self.coef.shape[axis] == 1:
            return MultiPoly.zero(self.nvars)
        return MultiPoly(nppoly.polyder(self.coef, axis=axis), self.nvars)

    def grad(self):
        return [self.deriv(i) for i in range(self.nvars)]

    def restrict(self, axis, value):
        """Fix variable ``axis`` to ``value``; result keeps ``nvars`` with that axis constant."""
        c = np.moveaxis(self.coef, axis, 0)
        powers = float(value) ** np.arange(c.shape[0])
        out = np.tensordot(powers, c, axes=(0, 0))
        out = np.expand_dims(out, 0)
        full = np.zeros(self.coef.shape)
        full_m = np.moveaxis(full, axis, 0)
        full_m[0:1] = out
        return MultiPoly(full, self.nvars)

    def drop_axis(self, axis):
        """Remove a variable the polynomial does not depend on."""
        c = np.take(self.coef, 0, axis=axis)
        return MultiPoly(c, self.nvars - 1)

    def as_poly_in(self, axis):
        """Coefficient list in variable ``axis``: ``self = sum_m P_m * x_axis**m``."""
        c = np.moveaxis(self.coef, axis, 0)
        out = []
        for m in range(c.shape[0]):
            cm = np.zeros(self.coef.shape)
            cmm = np.moveaxis(cm, axis, 0)
            cmm[0] = c[m]
            out.append(MultiPoly(cm, self.nvars))
        return out

    def integrate(self, domain, z_weight=0.0):
        return integrate_ref(self, domain, z_weight=z_weight)


def _exponents(degree, nvars):
    for e in itertools.product(range(degree + 1), repeat=nvars):
        if sum(e) <= degree:
            yield e


@dataclass(frozen=True)
class LinearForm:
    """Affine form ``l(x) = a . x + d`` with ``a != 0``."""

    a: tuple
    d: float

    def __post_init__(self):
        a = tuple(float(v) for v in self.a)
        if not any(v != 0.0 for v in a):
            raise ValueError("linear form needs a nonzero gradient")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "d", float(self.d))

    @property
    def nvars(self):
        return len(self.a)

    def __call__(self, *xs):
        return sum(ai * np.asarray(x, dtype=float) for ai, x in zip(self.a, xs)) + self.d

    def as_poly(self):
        return MultiPoly.from_linear(self.a, self.d)


@dataclass(frozen=True)
class AffineMap:
    """Affine map ``x -> B x + b`` from ``n_in`` to ``n_out`` dimensions."""

    B: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if B.shape[0] != b.size:
            raise ValueError("matrix rows and shift length differ")
        B.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "b", b)

    @property
    def n_in(self):
        return self.B.shape[1]

    @property
    def n_out(self):
        return self.B.shape[0]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.B.T + self.b

    def then(self, other):
        """Composite map ``other(self(x))``."""
        return AffineMap(other.B @ self.B, other.B @ self.b + other.b)

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n), np.zeros(n))


@lru_cache(maxsize=512)
def _transfer_matrix(map_key, degree, n_in, n_out):
    B, b = map_key
    B = np.frombuffer(B).reshape(n_out, n_in)
    b = np.frombuffer(b)
    lins = [MultiPoly.from_linear(B[i], b[i]).coef for i in range(n_out)]
    shape = (degree + 1,) * n_in
    exps = list(_exponents(degree, n_out))
    cols = {}
    one = np.zeros(shape)
    one[(0,) * n_in] = 1.0
    cols[(0,) * n_out] = one
    # ordering by total degree guarantees the predecessor column exists
    exps.sort(key=sum)
    for e in exps:
        if e in cols:
            continue
        i = next(k for k, v in enumerate(e) if v > 0)
        prev = list(e)
        prev[i] -= 1
        c = _convolve(cols[tuple(prev)], lins[i])
        cols[e] = c[tuple(slice(0, degree + 1) for _ in range(n_in))]
    mat = np.stack([cols[e].reshape(-1) for e in exps], axis=1)
    mat.setflags(write=False)
    return tuple(exps), mat


def compose_affine(p: MultiPoly, m: AffineMap) -> MultiPoly:
    """Return ``p o m`` as a polynomial in the input variables of ``m``.

    Raises
    ------
    ValueError
        If the map output dimension differs from the variable count of ``p``.
    """
    if m.n_out != p.nvars:
        raise ValueError(f"map outputs {m.n_out} coordinates but polynomial has {p.nvars} variables")
    deg = p.degree
    key = (np.ascontiguousarray(m.B).tobytes(), np.ascontiguousarray(m.b).tobytes())
    exps, mat = _transfer_matrix(key, deg, m.n_in, m.n_out)
    pc = p.padded(deg + 1)
    vec = np.array([pc[e] for e in exps])
    out = (mat @ vec).reshape((deg + 1,) * m.n_in)
    return MultiPoly(out, m.n_in)


def divide_by_linear(p: MultiPoly, form: LinearForm):
    """Divide ``p`` by an affine form.

    The variable with the largest coefficient magnitude in ``form`` is
    eliminated by synthetic division, so ``p = form * q + r`` with ``r``
    independent of that variable.

    Returns
    -------
    q : MultiPoly
    residual : float
        Max-norm of the coefficients of ``r``.
    """
    if form.nvars != p.nvars:
        raise ValueError("variable count mismatch")
    k = int(np.argmax(np.abs(form.a)))
    ak = form.a[k]
    rest = list(form.a)
    rest[k] = 0.0
    r = MultiPoly.from_linear(rest, form.d)
    parts = p.as_poly_in(k)
    n = len(parts) - 1
    if n == 0:
        return MultiPoly.zero(p.nvars), parts[0].norm()
    xk = MultiPoly.variable(k, p.nvars)
    work = list(parts)
    qparts = [None] * n
    for m in range(n, 0, -1):
        qm = work[m] / ak
        qparts[m - 1] = qm
        work[m - 1] = work[m - 1] - r * qm
    q = MultiPoly.zero(p.nvars)
    for m, qm in enumerate(qparts):
        q = q + qm * (xk ** m)
    return q.trimmed(), work[0].norm()


# ---------------------------------------------------------------- integration

@lru_cache(maxsize=None)
def _triangle_moments(degree):
    """Table m[a, b] = integral of x^a y^b over the reference triangle.

    Evaluated with the collapsed Gauss rule, which is exact for this degree
    and avoids the cancellation of expanding monomials about a vertex.
    """
    rule = _make_quadrature("triangle", max(degree, 1))
    x, y = rule.nodes.T
    px = x[None, :] ** np.arange(degree + 1)[:, None]
    py = y[None, :] ** np.arange(degree + 1)[:, None]
    table = (px * rule.weights) @ py.T
    a, b = np.indices(table.shape)
    table[a + b > degree] = 0.0
    table.setflags(write=False)
    return table


def _power_integral(lo, hi, k, weight=0.0):
    return (hi ** (k + weight + 1) - lo ** (k + weight + 1)) / (k + weight + 1)


def integrate_ref(p: MultiPoly, domain: str, z_weight: float = 0.0) -> float:
    """Exact integral of ``p`` over a reference domain.

    Parameters
    ----------
    domain : {"triangle", "box", "tetrahedron", "prism"}
    z_weight : float
        For the 3D domains, integrate ``p * z**z_weight`` instead; must exceed -1.
    """
    if domain not in DOMAINS:
        raise ValueError(f"unknown domain {domain!r}")
    want = 2 if domain in ("triangle", "box") else 3
    if p.nvars != want:
        raise ValueError(f"{domain} needs a {want}-variable polynomial")
    terms = p.terms
    if not terms:
        return 0.0
    deg = p.degree
    if domain == "box":
        x0, x1 = ref.RECT_X
        y0, y1 = ref.RECT_Y
        return float(sum(c * _power_integral(x0, x1, a) * _power_integral(y0, y1, b) for (a, b), c in terms.items()))
    tri = _triangle_moments(deg)
    if domain == "triangle":
        return float(sum(c * tri[a, b] for (a, b), c in terms.items()))
    if z_weight <= -1.0:
        raise ValueError("z weight exponent must exceed -1")
    if domain == "prism":
        return float(sum(c * tri[a, b] / (k + z_weight + 1.0) for (a, b, k), c in terms.items()))
    # tetrahedron: cross-section at height z is (1 - z/H) times the base
    H = ref.TET_HEIGHT
    total = 0.0
    for (a, b, k), c in terms.items():
        s = k + z_weight + 1.0
        total += c * tri[a, b] * H ** s * special.beta(s, a + b + 3.0)
    return float(total)


# ----------------------------------------------------------------- quadrature

@dataclass(frozen=True)
class QuadRule:
    nodes: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    def integrate(self, f):
        vals = f(*self.nodes.T)
        return float(np.dot(self.weights, vals))


def _gauss(n, lo=-1.0, hi=1.0):
    x, w = npleg.leggauss(n)
    return 0.5 * (hi - lo) * x + 0.5 * (hi + lo), 0.5 * (hi - lo) * w


def gauss_jacobi(n, alpha, beta=0.0, lo=0.0, hi=1.0):
    """Gauss rule on ``[lo, hi]`` for the weight ``(hi - x)**alpha * (x - lo)**beta``."""
    x, w = special.roots_jacobi(n, alpha, beta)
    half = 0.5 * (hi - lo)
    return lo + half * (x + 1.0), w * half ** (1.0 + alpha + beta)


@lru_cache(maxsize=None)
def _make_quadrature(domain, order):
    n = max(1, math.ceil((order + 1) / 2))
    if domain == "box":
        x, wx = _gauss(n, *ref.RECT_X)
        y, wy = _gauss(n, *ref.RECT_Y)
        X, Y = np.meshgrid(x, y, indexing="ij")
        return QuadRule(np.column_stack([X.ravel(), Y.ravel()]), np.outer(wx, wy).ravel(), 2 * n - 1)
    if domain == "triangle":
        ne = max(1, math.ceil((order + 2) / 2))
        xi, wx = _gauss(n, *ref.RECT_X)
        eta, we = _gauss(ne, *ref.RECT_Y)
        XI, ETA = np.meshgrid(xi, eta, indexing="ij")
        px, py = ref.duffy(XI, ETA)
        w = np.outer(wx, we) * ref.duffy_jacobian(ETA)
        return QuadRule(np.column_stack([px.ravel(), py.ravel()]), w.ravel(), min(2 * n - 1, 2 * ne - 2))
    tri = _make_quadrature("triangle", order)
    if domain == "prism":
        z, wz = _gauss(n, 0.0, 1.0)
        nodes = np.array([[x, y, zz] for (x, y) in tri.nodes for zz in z])
        w = np.outer(tri.weights, wz).ravel()
        return QuadRule(nodes, w, tri.exactness_degree)
    if domain == "tetrahedron":
        nz = max(1, math.ceil((order + 3) / 2))
        z, wz = _gauss(nz, 0.0, 1.0)
        H = ref.TET_HEIGHT
        nodes = np.array([[(1 - zz) * x, (1 - zz) * y, H * zz] for (x, y) in tri.nodes for zz in z])
        w = np.outer(tri.weights, wz * H * (1 - z) ** 2).ravel()
        return QuadRule(nodes, w, tri.exactness_degree)
    raise ValueError(f"unknown domain {domain!r}")


def make_quadrature(domain: str, order: int) -> QuadRule:
    """Quadrature rule exact for polynomials of total degree ``order``.

    Boxes use tensor Gauss-Legendre; triangles, prisms and tetrahedra use
    Gauss rules on the rectangle pulled through the collapse map.
    """
    if order < 1:
        raise ValueError("order must be at least 1")
    return _make_quadrature(domain, int(order))


@lru_cache(maxsize=None)
def gauss_lobatto_nodes(p: int):
    """Gauss-Lobatto nodes and weights on ``[-1, 1]`` with ``p + 1`` points."""
    if p < 1:
        raise ValueError("p must be at least 1")
    Lp = npleg.Legendre.basis(p)
    inner = np.sort(Lp.deriv().roots().real) if p > 1 else np.array([])
    x = np.concatenate([[-1.0], inner, [1.0]])
    w = 2.0 / (p * (p + 1) * Lp(x) ** 2)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


# ------------------------------------------------------------------ mollifier

def barycentric_polys():
    """The three barycentric coordinates of the reference triangle as polynomials."""
    return [MultiPoly.from_linear(ref.BARY_COEF[i], ref.BARY_CONST[i]) for i in range(3)]


@lru_cache(maxsize=None)
def _mollifier(k):
    l1, l2, l3 = barycentric_polys()
    bubble = (l1 * l2 * l3) ** k
    return bubble / integrate_ref(bubble, "triangle")


def mollifier(k=2):
    """Normalized bump ``c * (l1 l2 l3)**k`` on the reference triangle."""
    return _mollifier(int(k))


@lru_cache(maxsize=None)
def mollifier_moments(k: int, max_degree: int) -> np.ndarray:
    """Moments ``mu[a, b]`` of the mollifier against ``x**a y**b`` for ``a + b <= max_degree``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    rho = _mollifier(int(k))
    mu = np.zeros((max_degree + 1, max_degree + 1))
    for a, b in _exponents(max_degree, 2):
        mu[a, b] = integrate_ref(rho * MultiPoly.monomial((a, b)), "triangle")
    mu.setflags(write=False)
    return mu
