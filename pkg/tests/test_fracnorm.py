import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from hpinterp.fracnorm import (
    NormOracle,
    QuadratureError,
    SlobodeckijGram,
    ThetaParams,
    c_theta,
    continuous_norm_oracle,
    equivalence_band,
    gen_eig,
    interp_gram,
    interp_norm_discrete,
    interp_norm_tquad,
    k_functional,
    k_functional_direct,
    kvk_norm_compare,
    poly_coefficients,
    reference_space,
    slobodeckij_norm,
    weighted_distance_norm,
)
from hpinterp.hpspace import HpSpace, assemble_mass, assemble_stiffness
from hpinterp.mesh import Element, Mesh, criss_cross, mixed_strip, quad_grid
from hpinterp.polyalg import MultiPoly, barycentric_polys

# |x|_{theta}^2 on the unit square (double-integral seminorm); derived by the
# translation identity and polar integration in closed form along rays,
# leaving a 1D adaptive quadrature in the angle
SLOB_X_UNIT_SQUARE = {0.3: 0.8834556812126445, 0.5: 1.486604799123689, 0.7: 3.1319659009521263}

# ||dist(., e4)^(-0.4)||^2 on the reference triangle, closed form
WEIGHTED_ONE_E4_04 = 9.3010264502825


def random_pencil(r, n, semidefinite=False):
    B = r.normal(size=(n, n))
    M = B @ B.T + n * np.eye(n)
    C = r.normal(size=(n, n - 1 if semidefinite else n))
    A = C @ C.T + (0.0 if semidefinite else 0.1 * np.eye(n))
    return M, A


def test_gen_eig_trivial():
    b = gen_eig(np.eye(2), np.diag([1.0, 4.0]))
    np.testing.assert_allclose(b.eigenvalues, [1, 4])
    np.testing.assert_allclose(np.abs(b.vectors), np.eye(2), atol=1e-15)
    M, _ = random_pencil(np.random.default_rng(0), 5)
    np.testing.assert_allclose(gen_eig(M, M).eigenvalues, 1.0, rtol=1e-12)


@given(st.integers(2, 10), st.integers(0, 2**31 - 1))
def test_gen_eig_residual_and_orthonormality(n, seed):
    M, A = random_pencil(np.random.default_rng(seed), n)
    b = gen_eig(M, A)
    assert b.residual() <= 1e-9
    np.testing.assert_allclose(b.vectors.T @ M @ b.vectors, np.eye(n), atol=1e-10)
    assert np.all(np.diff(b.eigenvalues) >= -1e-12)


def test_gen_eig_rejects_indefinite_mass():
    with pytest.raises(np.linalg.LinAlgError):
        gen_eig(-np.eye(2), np.eye(2))


def test_k_functional_scalar_case():
    b = gen_eig(np.array([[1.0]]), np.array([[2.0]]))
    assert k_functional([1.0], 1.0, b) ** 2 == pytest.approx(2 / 3)
    val, v = k_functional_direct([1.0], 1.0, np.array([[1.0]]), np.array([[2.0]]))
    assert val ** 2 == pytest.approx(2 / 3)
    assert v[0] == pytest.approx(1 / 3)
    assert k_functional([1.0], 0.0, b) == 0.0


def test_k_functional_limits_and_kernel(rng):
    M, A = random_pencil(rng, 6)
    b = gen_eig(M, A)
    u = rng.normal(size=6)
    ts = np.geomspace(1e-3, 1e4, 30)
    K = np.array([k_functional(u, t, b) for t in ts])
    assert np.all(np.diff(K) >= -1e-14)
    assert K[-1] == pytest.approx(math.sqrt(u @ M @ u), rel=1e-6)
    # kernel direction of a semidefinite A
    A0 = np.diag([0.0, 1.0, 2.0])
    val, v = k_functional_direct(np.array([1.0, 0.0, 0.0]), 3.0, np.eye(3), A0)
    assert val == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(v, [1, 0, 0])


@given(st.integers(0, 2**31 - 1), st.floats(1e-2, 1e2))
def test_k_functional_two_paths(seed, t):
    r = np.random.default_rng(seed)
    M, A = random_pencil(r, 8)
    u = r.normal(size=8)
    assert k_functional(u, t, gen_eig(M, A)) == pytest.approx(k_functional_direct(u, t, M, A)[0], rel=1e-10)


def _c_theta_quadrature(theta):
    # int_0^inf t^(-2 theta) t^2 / (1 + t^2) dt / t, substituted t = e^s
    f = lambda s: math.exp((2 - 2 * theta) * s - np.logaddexp(0.0, 2 * s))  # noqa: E731
    return integrate.quad(f, -np.inf, np.inf, limit=400, epsabs=0, epsrel=1e-12)[0]


@pytest.mark.parametrize("theta", [0.1, 0.25, 0.5, 0.75, 0.9])
def test_c_theta_against_quadrature(theta):
    assert c_theta(theta) == pytest.approx(_c_theta_quadrature(theta), rel=1e-8)


def test_c_theta_values():
    assert c_theta(0.5) == pytest.approx(math.pi / 2)
    assert c_theta(0.25) == pytest.approx(c_theta(0.75))
    with pytest.raises(ValueError):
        c_theta(1.0)


def test_discrete_norm_single_modes():
    one = gen_eig(np.array([[1.0]]), np.array([[1.0]]))
    assert interp_norm_discrete([1.0], 0.3, one).squared == pytest.approx(c_theta(0.3))
    four = gen_eig(np.array([[1.0]]), np.array([[4.0]]))
    assert interp_norm_discrete([1.0], 0.5, four).squared == pytest.approx(math.pi)
    tq = interp_norm_tquad([1.0], ThetaParams(0.5), np.array([[1.0]]), np.array([[4.0]]))
    assert tq.squared == pytest.approx(math.pi, rel=1e-10)
    tq1 = interp_norm_tquad([1.0], ThetaParams(0.5), np.array([[1.0]]), np.array([[1.0]]))
    assert tq1.squared == pytest.approx(math.pi / 2, rel=1e-8)


@given(st.integers(0, 2**31 - 1), st.floats(-5, 5))
def test_discrete_norm_homogeneous(seed, alpha):
    r = np.random.default_rng(seed)
    M, A = random_pencil(r, 5)
    b = gen_eig(M, A)
    u = r.normal(size=5)
    assert interp_norm_discrete(alpha * u, 0.4, b).value == pytest.approx(
        abs(alpha) * interp_norm_discrete(u, 0.4, b).value, rel=1e-12, abs=1e-14)


@given(st.integers(0, 2**31 - 1), st.sampled_from([0.2, 0.5, 0.8]), st.booleans())
def test_eigen_and_t_quadrature_agree(seed, theta, semi):
    r = np.random.default_rng(seed)
    M, A = random_pencil(r, 10, semidefinite=semi)
    u = r.normal(size=10)
    par = ThetaParams(theta, "seminorm" if semi else "full")
    a = interp_norm_discrete(u, par, gen_eig(M, A)).value
    b = interp_norm_tquad(u, par, M, A).value
    assert b == pytest.approx(a, rel=1e-8)


def test_tquad_zero():
    assert interp_norm_tquad(np.zeros(3), ThetaParams(0.5), np.eye(3), np.eye(3)).value == 0.0


def test_gram_matches_norm(rng):
    M, A = random_pencil(rng, 6)
    b = gen_eig(M, A)
    u = rng.normal(size=6)
    assert u @ interp_gram(b, 0.6) @ u == pytest.approx(interp_norm_discrete(u, 0.6, b).squared, rel=1e-12)


# ------------------------------------------------------------- double integral

def _two_triangle_square():
    m = Mesh(np.array([[0, 0], [1, 0], [1, 1], [0, 1.0]]),
             [Element(0, "tri", (0, 1, 2), 1), Element(1, "tri", (0, 2, 3), 1)])
    sp = HpSpace(m)
    u = np.zeros(sp.ndof)
    for v in range(4):
        u[sp.dof_index(("vertex", v))] = m.vertices[v, 0]
    return sp, u


@pytest.mark.parametrize("theta", [0.3, 0.5, 0.7])
def test_slobodeckij_linear_function(theta):
    sp, u = _two_triangle_square()
    val = slobodeckij_norm(u, sp, theta).squared
    assert val == pytest.approx(SLOB_X_UNIT_SQUARE[theta], rel=1e-3)


def test_slobodeckij_quad_element_agrees():
    sp = HpSpace(quad_grid(1, 1))
    u = np.array([sp.mesh.vertices[v, 0] for v in range(4)])
    u = u[[sp.dof_index(("vertex", v)) for v in range(4)]]
    assert slobodeckij_norm(u, sp, 0.5).squared == pytest.approx(SLOB_X_UNIT_SQUARE[0.5], rel=1e-3)


def test_slobodeckij_constants_and_symmetry():
    sp = HpSpace(criss_cross(1, 2))
    G = SlobodeckijGram(sp, 0.4, 0).matrix
    one = np.where(sp.dof_mask("vertex"), 1.0, 0.0)
    assert abs(one @ G @ one) < 1e-10
    np.testing.assert_allclose(G, G.T, atol=1e-12)
    assert np.linalg.eigvalsh(G).min() > -1e-10


def test_slobodeckij_full_norm_adds_mass():
    sp, u = _two_triangle_square()
    semi = slobodeckij_norm(u, sp, 0.5).squared
    full = slobodeckij_norm(u, sp, 0.5, full=True).squared
    assert full - semi == pytest.approx(1 / 3, rel=1e-10)


def test_slobodeckij_convergence_check():
    sp = HpSpace(quad_grid(1, 3))
    u = np.random.default_rng(0).normal(size=sp.ndof)
    with pytest.raises(QuadratureError):
        slobodeckij_norm(u, sp, 0.7, level=0, rtol=1e-9)


# ------------------------------------------------------------ weighted distance

def test_weighted_distance_closed_form():
    r = weighted_distance_norm(MultiPoly.constant(1.0, 2), [4], 0.4)
    assert r.squared == pytest.approx(WEIGHTED_ONE_E4_04, rel=1e-10)
    assert not r.diagnostics["diverged"]


def test_weighted_distance_zero_and_monotone():
    assert weighted_distance_norm(MultiPoly.zero(2), [4, 5], 0.3).value == 0.0
    f = MultiPoly.constant(1.0, 2) + MultiPoly.variable(0, 2) * 0.3
    vals = [weighted_distance_norm(f, [5], th).value for th in (0.1, 0.2, 0.3, 0.4)]
    assert np.all(np.diff(vals) > 0)


def test_weighted_distance_box_edge():
    # distance to the bottom edge of the rectangle is eta + 1/sqrt3
    th = 0.3
    H = math.sqrt(3.0)
    exact = 2.0 * H ** (1 - 2 * th) / (1 - 2 * th)
    r = weighted_distance_norm(MultiPoly.constant(1.0, 2), [0], th, domain="box")
    assert r.squared == pytest.approx(exact, rel=1e-10)


@pytest.mark.parametrize("p", [2, 4, 6, 8])
def test_weighted_distance_hardy_ratio(p):
    l1, l2, l3 = barycentric_polys()
    r = np.random.default_rng(p)
    b = l1 * l2 * l3 * MultiPoly.random(p - 2, 2, r) if p > 2 else l1 * l2 * l3
    sp = reference_space("tri", p + 1)
    u = poly_coefficients(sp, b)
    M = assemble_mass(sp).toarray()
    S = assemble_stiffness(sp).toarray()
    h1 = math.sqrt(u @ (M + S) @ u)
    ratio = weighted_distance_norm(b, [4, 5, 6], 0.7).value / h1
    assert 0 < ratio < 5


# ------------------------------------------------------------------- oracle

def test_oracle_level_zero_is_discrete():
    sp = HpSpace(mixed_strip(2))
    u = np.random.default_rng(1).normal(size=sp.ndof)
    M = assemble_mass(sp).toarray()
    S = assemble_stiffness(sp).toarray()
    disc = interp_norm_discrete(u, 0.5, gen_eig(M, M + S)).value
    seq = continuous_norm_oracle(u, sp, 0.5, levels=1).diagnostics["sequence"]
    assert seq[0] == pytest.approx(disc, rel=1e-12)
    assert seq[1] <= seq[0] + 1e-9


def test_oracle_tensor_and_dense_agree():
    sp = HpSpace(quad_grid(2, 2))
    dense = NormOracle(sp, 1, method="dense").gram(0.4)
    tensor = NormOracle(sp, 1, method="tensor").gram(0.4)
    np.testing.assert_allclose(tensor, dense, rtol=1e-10, atol=1e-10)


def test_oracle_converges():
    sp = HpSpace(criss_cross(1, 3))
    u = np.random.default_rng(2).normal(size=sp.ndof)
    seq = NormOracle(sp, 2).norm_sequence(u, 0.5)
    assert np.all(np.diff(seq) <= 1e-9)
    # increments shrink geometrically
    assert abs(seq[2] - seq[1]) < 0.2 * abs(seq[1] - seq[0])


def test_band_same_space():
    sp = HpSpace(quad_grid(1, 2))
    lo, hi = equivalence_band(sp, 0.5, NormOracle(sp, 0))
    assert lo == pytest.approx(1.0, rel=1e-10)
    assert hi == pytest.approx(1.0, rel=1e-10)


@pytest.mark.parametrize("p", [1, 2, 3, 4, 5, 6])
def test_band_single_quad(p):
    lo, hi = equivalence_band(HpSpace(quad_grid(1, p)), 0.5)
    assert lo >= 1 - 1e-6
    assert hi < 2.0


def test_band_scale_invariant_seminorm():
    a = HpSpace(quad_grid(2, 2), dirichlet=True)
    b = HpSpace(quad_grid(2, 2, hi=(0.25, 0.25)), dirichlet=True)
    ba = equivalence_band(a, 0.5, variant="seminorm", levels=1)
    bb = equivalence_band(b, 0.5, variant="seminorm", levels=1)
    np.testing.assert_allclose(ba, bb, rtol=1e-6)


def test_kvk_compare():
    sp = HpSpace(quad_grid(2, 2))
    M = assemble_mass(sp).toarray()
    S = assemble_stiffness(sp).toarray()
    b = gen_eig(M, S)
    u = b.vectors[:, 3]
    _, _, ratio = kvk_norm_compare(u, 0.5, 1.0, M, S)
    assert 0.1 <= ratio <= 10
    ratios = []
    for H in (1.0, 1 / 8, 1 / 64):
        sc = HpSpace(quad_grid(2, 2, hi=(H, H)))
        Ms = assemble_mass(sc).toarray()
        Ss = assemble_stiffness(sc).toarray()
        ratios.append(kvk_norm_compare(u, 0.5, H, Ms, Ss)[2])
    assert max(ratios) / min(ratios) <= 2
    full, tilde, r0 = kvk_norm_compare(np.zeros(sp.ndof), 0.5, 1.0, M, S)
    assert full == 0 and tilde == 0 and math.isnan(r0)


@given(st.integers(0, 2**31 - 1), st.floats(1e-2, 1e2), st.floats(1e-2, 1e2))
def test_k_functional_bounds(seed, t, lam):
    r = np.random.default_rng(seed)
    M, A = random_pencil(r, 6)
    b = gen_eig(M, A)
    u = r.normal(size=6)
    K = k_functional(u, t, b)
    assert K <= min(math.sqrt(u @ M @ u), t * math.sqrt(u @ A @ u)) * (1 + 1e-12)
    assert k_functional(u, lam * t, b) <= max(1.0, lam) * K * (1 + 1e-12)


def test_dirichlet_pair_dominates():
    mesh = criss_cross(2, 2)
    full, zero = HpSpace(mesh), HpSpace(mesh, dirichlet=True)
    emb = np.array([full.dof_index(e) for e in zero.dof_entity])
    r = np.random.default_rng(8)

    def basis(sp):
        M = assemble_mass(sp).toarray()
        return gen_eig(M, M + assemble_stiffness(sp).toarray())

    bf, bz = basis(full), basis(zero)
    for _ in range(5):
        u = r.normal(size=zero.ndof)
        U = np.zeros(full.ndof)
        U[emb] = u
        for th in (0.3, 0.5, 0.7):
            assert interp_norm_discrete(u, th, bz).value >= interp_norm_discrete(U, th, bf).value * (1 - 1e-12)
