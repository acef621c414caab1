import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hpinterp import reference as ref
from hpinterp.polyalg import (
    AffineMap,
    LinearForm,
    MultiPoly,
    compose_affine,
    divide_by_linear,
    gauss_jacobi,
    gauss_lobatto_nodes,
    integrate_ref,
    make_quadrature,
    mollifier_moments,
)

SQ3 = math.sqrt(3.0)


def x_(n=2):
    return MultiPoly.variable(0, n)


def y_(n=2):
    return MultiPoly.variable(1, n)


def test_arithmetic_matches_pointwise(rng):
    p = MultiPoly.random(3, 2, rng)
    q = MultiPoly.random(2, 2, rng)
    pts = rng.uniform(-1, 1, (20, 2))
    X, Y = pts.T
    np.testing.assert_allclose((p * q)(X, Y), p(X, Y) * q(X, Y), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose((p - q)(X, Y), p(X, Y) - q(X, Y), atol=1e-12)
    np.testing.assert_allclose((p ** 3)(X, Y), p(X, Y) ** 3, rtol=1e-11, atol=1e-11)


def test_compose_shift():
    p = MultiPoly.monomial((2,))
    q = compose_affine(p, AffineMap([[1.0]], [1.0]))
    np.testing.assert_allclose(q.coef, [1.0, 2.0, 1.0])


def test_compose_identity(rng):
    p = MultiPoly.random(4, 3, rng)
    q = compose_affine(p, AffineMap.identity(3))
    np.testing.assert_allclose(q.padded(p.coef.shape[0]), p.coef, atol=1e-14)


def test_compose_against_evaluation(rng):
    # x*z composed with (x, z) -> (x + 0.15 z, z)
    p = MultiPoly.monomial((1, 1))
    m = AffineMap([[1.0, 0.15], [0.0, 1.0]], [0.0, 0.0])
    q = compose_affine(p, m)
    pts = rng.uniform(-1, 1, (50, 2))
    mapped = m(pts)
    np.testing.assert_allclose(q(*pts.T), p(*mapped.T), atol=1e-12)


@given(st.integers(0, 5), st.integers(0, 2**31 - 1))
def test_compose_random_maps(deg, seed):
    r = np.random.default_rng(seed)
    p = MultiPoly.random(deg, 2, r)
    m = AffineMap(r.normal(size=(2, 2)), r.normal(size=2))
    pts = r.uniform(-1, 1, (10, 2))
    q = compose_affine(p, m)
    np.testing.assert_allclose(q(*pts.T), p(*m(pts).T), rtol=1e-9, atol=1e-9)


def test_divide_simple_cases():
    q, r = divide_by_linear(x_(1) * x_(1) - 1.0, LinearForm((1.0,), -1.0))
    np.testing.assert_allclose(q.coef, [1.0, 1.0])
    assert r == 0.0
    z = MultiPoly.variable(2, 3)
    q, r = divide_by_linear(z * (x_(3) + y_(3)), LinearForm((0.0, 0.0, 1.0), 0.0))
    pts = np.random.default_rng(0).uniform(-1, 1, (10, 3))
    np.testing.assert_allclose(q(*pts.T), pts[:, 0] + pts[:, 1], atol=1e-14)
    assert r < 1e-15


@given(st.integers(0, 6), st.integers(0, 2**31 - 1))
def test_divide_exact_product(deg, seed):
    r = np.random.default_rng(seed)
    form = LinearForm(tuple(r.normal(size=3)), float(r.normal()))
    g = MultiPoly.random(deg, 3, r)
    q, res = divide_by_linear(form.as_poly() * g, form)
    assert res <= 1e-10 * max(1.0, g.norm())
    pts = r.uniform(-1, 1, (10, 3))
    np.testing.assert_allclose(q(*pts.T), g(*pts.T), rtol=1e-8, atol=1e-8)


def test_divide_reports_remainder():
    _, res = divide_by_linear(x_(1) * x_(1) + 1.0, LinearForm((1.0,), 0.0))
    assert res == pytest.approx(1.0)


def test_reference_measures():
    one = MultiPoly.constant(1.0, 2)
    assert integrate_ref(one, "triangle") == pytest.approx(SQ3, rel=1e-14)
    assert integrate_ref(one, "box") == pytest.approx(2 * SQ3, rel=1e-14)
    # shoelace on the reference vertices
    P = ref.TRI_VERTS
    a, b = P[1] - P[0], P[2] - P[0]
    shoelace = 0.5 * abs(a[0] * b[1] - a[1] * b[0])
    assert integrate_ref(one, "triangle") == pytest.approx(shoelace, rel=1e-14)
    one3 = MultiPoly.constant(1.0, 3)
    assert integrate_ref(one3, "tetrahedron") == pytest.approx(ref.TET_VOLUME, rel=1e-13)
    assert integrate_ref(one3, "prism") == pytest.approx(SQ3, rel=1e-13)


def test_tetrahedron_moment_against_quadrature():
    z = MultiPoly.variable(2, 3)
    rule = make_quadrature("tetrahedron", 10)
    assert integrate_ref(z, "tetrahedron") == pytest.approx(rule.integrate(lambda x, y, zz: zz), rel=1e-12)
    # centroid height is a quarter of the apex height
    assert integrate_ref(z, "tetrahedron") / ref.TET_VOLUME == pytest.approx(ref.TET_HEIGHT / 4, rel=1e-12)


@pytest.mark.parametrize("domain", ["triangle", "box", "tetrahedron", "prism"])
def test_quadrature_weights_sum_to_measure(domain):
    n = 2 if domain in ("triangle", "box") else 3
    rule = make_quadrature(domain, 5)
    assert rule.weights.sum() == pytest.approx(integrate_ref(MultiPoly.constant(1.0, n), domain), rel=1e-13)


def test_box_rule_tensor_exactness():
    rule = make_quadrature("box", 3)
    f = MultiPoly.monomial((3, 3))
    assert rule.integrate(lambda x, y: x ** 3 * y ** 3) == pytest.approx(integrate_ref(f, "box"), abs=1e-13)


def test_triangle_rule_exact_degree_4():
    rule = make_quadrature("triangle", 4)
    for a in range(5):
        for b in range(5 - a):
            exact = integrate_ref(MultiPoly.monomial((a, b)), "triangle")
            assert rule.integrate(lambda x, y: x ** a * y ** b) == pytest.approx(exact, abs=1e-12)


def test_gauss_lobatto_closed_forms():
    x, w = gauss_lobatto_nodes(1)
    np.testing.assert_allclose(x, [-1, 1])
    np.testing.assert_allclose(w, [1, 1])
    x, w = gauss_lobatto_nodes(2)
    np.testing.assert_allclose(x, [-1, 0, 1], atol=1e-15)
    np.testing.assert_allclose(w, [1 / 3, 4 / 3, 1 / 3])
    assert w @ x ** 2 == pytest.approx(2 / 3)


@given(st.integers(1, 20))
def test_gauss_lobatto_weights_sum(p):
    x, w = gauss_lobatto_nodes(p)
    assert w.sum() == pytest.approx(2.0, rel=1e-12)
    assert np.all(np.diff(x) > 0)


def test_gauss_jacobi_weight():
    x, w = gauss_jacobi(8, 0.0, -0.4, 0.0, 2.0)
    # int_0^2 x^-0.4 x^3 dx
    assert w @ x ** 3 == pytest.approx(2 ** 3.6 / 3.6, rel=1e-13)


def test_mollifier_moments():
    mu = mollifier_moments(2, 4)
    assert mu[0, 0] == pytest.approx(1.0, rel=1e-13)
    assert abs(mu[1, 0]) < 1e-14 and abs(mu[0, 1]) < 1e-14
    # second path: collapsed Gauss rule on the normalized bump
    from hpinterp.polyalg import mollifier
    rho = mollifier(2)
    rule = make_quadrature("triangle", 20)
    assert mu[2, 0] == pytest.approx(rule.integrate(lambda x, y: rho(x, y) * x * x), rel=1e-12)
    # rotational symmetry of the bump
    assert mu[2, 0] == pytest.approx(mu[0, 2], rel=1e-12)
