import numpy as np
import pytest

from hpinterp import reference as ref
from hpinterp.decomp import (
    TraceMismatchError,
    build_lift_trajectory,
    decompose,
    edge_reference_function,
    measure_decomp_stability,
    pushforward,
    quad_knots,
    trace_integral,
)
from hpinterp.hpspace import HpSpace
from hpinterp.mesh import build_patch, criss_cross, mixed_strip, quad_grid
from hpinterp.polyalg import MultiPoly, barycentric_polys

MESHES = {
    "quad": lambda: quad_grid(2, 3),
    "criss_cross": lambda: criss_cross(1, 3),
    "mixed": lambda: mixed_strip(3, 3),
}


def _random(space, seed):
    return np.random.default_rng(seed).normal(size=space.ndof)


@pytest.mark.parametrize("dirichlet", [False, True])
@pytest.mark.parametrize("name", sorted(MESHES))
def test_reconstruction(name, dirichlet):
    sp = HpSpace(MESHES[name](), dirichlet=dirichlet)
    for seed in range(3):
        d = decompose(_random(sp, seed), sp)
        assert d.residual() < 1e-12


def test_lowest_order_space_has_no_parts():
    sp = HpSpace(criss_cross(2, 1))
    u = _random(sp, 0)
    d = decompose(u, sp)
    np.testing.assert_array_equal(d.u1, u)
    assert not d.edge_parts and not d.interior_parts
    assert all(not f.terms for f in d.vertex_parts.values())
    assert trace_integral(build_lift_trajectory(d), 0.5) == 0.0


def test_single_bubble():
    sp = HpSpace(quad_grid(2, 3))
    u = np.zeros(sp.ndof)
    g = next(i for i, e in enumerate(sp.dof_entity) if e[0] == "interior")
    u[g] = 1.7
    d = decompose(u, sp)
    assert not d.edge_parts
    assert len(d.interior_parts) == 1
    np.testing.assert_allclose(next(iter(d.interior_parts.values())), u)


def test_edge_part_matches_edge_modes():
    sp = HpSpace(mixed_strip(3, 3))
    u = _random(sp, 4)
    d = decompose(u, sp)
    for eid, w in d.edge_vectors.items():
        for k in range(2, int(sp.edge_degree[eid]) + 1):
            i = sp.dof_index(("edge", eid, k))
            assert w[i] == pytest.approx(u[i], abs=1e-12)
        # nothing on vertices or other edges
        for i, ent in enumerate(sp.dof_entity):
            if ent[0] == "vertex" or (ent[0] == "edge" and ent[1] != eid):
                assert w[i] == 0.0


def test_edge_reference_function_vanishes_on_other_edges():
    f = edge_reference_function([0.3, -1.1, 0.4])
    s = np.linspace(0, 1, 9)
    for e, (i, j) in ref.BASE_EDGES.items():
        P = ref.TRI_VERTS[i] + s[:, None] * (ref.TRI_VERTS[j] - ref.TRI_VERTS[i])
        vals = f(*P.T)
        if e == 4:
            assert np.abs(vals).max() > 0.01
        else:
            np.testing.assert_allclose(vals, 0.0, atol=1e-13)
    assert f.degree == 4


def test_vertex_patch_pushforward_continuity():
    mesh = mixed_strip(3, 3)
    sp = HpSpace(mesh)
    lam = barycentric_polys()
    r = np.random.default_rng(5)
    V = next(v for v in range(mesh.n_vertices) if len(build_patch(mesh, "vertex", v).elements) >= 3)
    for _ in range(20):
        # a function of l3 alone has the same trace on both edges through v3,
        # so neighbouring members agree; it vanishes on e6 = {l3 = 0}
        c = r.normal(size=3)
        u_ref = lam[2] * (lam[2] * (lam[2] * c[2] + c[1]) + c[0])
        w = pushforward(u_ref, sp, "vertex", V)
        expected = u_ref(*ref.TRI_VERTS[2])
        assert w[sp.dof_index(("vertex", V))] == pytest.approx(expected, abs=1e-10)
        assert np.all(np.isfinite(w))


def test_pushforward_orientation_conflict():
    mesh = quad_grid(2, 3)
    sp = HpSpace(mesh)
    eid = next(e for e in range(mesh.n_edges) if len(mesh.edge_elements[e]) == 2)
    a, b = (int(v) for v in mesh.edges[eid])
    K = mesh.edge_elements[eid][0]
    ue = edge_reference_function([0.0, 1.0])  # odd mode along the edge
    with pytest.raises(TraceMismatchError):
        pushforward(ue, sp, "edge", eid, anchors={K: (b, a)})
    assert not pushforward(MultiPoly.zero(2), sp, "edge", eid).any()


@pytest.mark.parametrize("name", sorted(MESHES))
def test_trajectory_start_and_support(name):
    sp = HpSpace(MESHES[name]())
    u = _random(sp, 1)
    d = decompose(u, sp)
    traj = build_lift_trajectory(d)
    np.testing.assert_allclose(traj([0.0])[0], u - d.u1, atol=1e-11 * np.linalg.norm(u))
    after = traj([traj.support * (1 + 1e-9), 2 * traj.support, 1e3])
    assert not np.any(after)


def test_trajectory_continuous_at_knots():
    sp = HpSpace(mixed_strip(3, 3))
    traj = build_lift_trajectory(decompose(_random(sp, 2), sp))
    bp = traj.breakpoints()
    eps = 1e-10 * bp.max()
    left, right = traj(bp - eps), traj(bp + eps)
    np.testing.assert_allclose(left, right, atol=1e-6)


def test_trajectory_derivative():
    sp = HpSpace(mixed_strip(3, 3))
    traj = build_lift_trajectory(decompose(_random(sp, 3), sp))
    bp = traj.breakpoints()
    t = np.array([0.5 * bp[0], 0.5 * (bp[-2] + bp[-1])])
    hstep = 1e-7 * bp[-1]
    fd = (traj(t + hstep) - traj(t - hstep)) / (2 * hstep)
    np.testing.assert_allclose(traj.derivative(t), fd, rtol=1e-5, atol=1e-5 * np.abs(fd).max())


def test_quad_knots():
    k = quad_knots(5, 1e-2)
    np.testing.assert_allclose(k, [0, 1e-2, 10 ** -1.5, 1e-1, 10 ** -0.5, 1])


@pytest.mark.parametrize("theta", [0.3, 0.5, 0.7])
def test_trace_integral_h_scaling(theta):
    u = _random(HpSpace(mixed_strip(3, 3)), 6)
    vals = []
    for s in (1.0, 0.1):
        sp = HpSpace(mixed_strip(3, 3).scaled(s))
        vals.append(trace_integral(build_lift_trajectory(decompose(u, sp)), theta))
    assert vals[1] / vals[0] == pytest.approx(0.1 ** (2 - 2 * theta), rel=1e-8)


def test_trace_integral_gauss_order_converged():
    sp = HpSpace(quad_grid(2, 3))
    traj = build_lift_trajectory(decompose(_random(sp, 7), sp))
    a = trace_integral(traj, 0.4)
    b = trace_integral(traj, 0.4, n_gauss=20)
    assert a == pytest.approx(b, rel=1e-10)


def test_stability_rows():
    rows = measure_decomp_stability(HpSpace(quad_grid(2, 2)), 0.5, samples=2, oracle_levels=1)
    assert len(rows) == 2
    for r in rows:
        assert isinstance(r["part_ratio"], float)
        assert 0 < r["part_ratio"] < 50
        assert 0 < r["trace_ratio"] < 50
    zero = measure_decomp_stability(HpSpace(quad_grid(2, 1)), 0.5, samples=1, oracle_levels=1)
    assert zero[0]["part_ratio"] == 0.0 and zero[0]["trace_ratio"] == 0.0


@pytest.mark.parametrize("theta", [0.3, 0.5, 0.7])
def test_single_mode_trace_integral_closed_form(theta):
    from scipy import linalg
    from scipy.special import beta

    from hpinterp.hpspace import assemble_mass, assemble_stiffness

    # lowest bubble eigenmode on a square scaled so that its eigenvalue is 1
    sp0 = HpSpace(quad_grid(1, 4))
    bub = sp0.dof_mask("interior")
    M0 = assemble_mass(sp0).toarray()[np.ix_(bub, bub)]
    S0 = assemble_stiffness(sp0).toarray()[np.ix_(bub, bub)]
    L = np.sqrt(linalg.eigvalsh(S0, M0)[0])
    sp = HpSpace(quad_grid(1, 4, hi=(L, L)))
    M = assemble_mass(sp).toarray()
    S = assemble_stiffness(sp).toarray()
    lam, vec = linalg.eigh(S[np.ix_(bub, bub)], M[np.ix_(bub, bub)])
    assert lam[0] == pytest.approx(1.0, rel=1e-10)
    u = np.zeros(sp.ndof)
    u[bub] = vec[:, 0]
    d = decompose(u, sp)
    assert list(d.interior_parts) == [0]
    val = trace_integral(build_lift_trajectory(d), theta, M, S)
    # v(t) = u / (1 + t^2): int t^(1-2theta) ((1+t^2)^-2 + 4 t^2 (1+t^2)^-4) dt
    exact = 0.5 * beta(1 - theta, 1 + theta) + 2.0 * beta(2 - theta, 2 + theta)
    assert val == pytest.approx(exact, rel=0.1)


def test_stability_p_sweep():
    part, trace = [], []
    for p in range(2, 7):
        rows = measure_decomp_stability(HpSpace(quad_grid(2, p)), 0.5, samples=2, oracle_levels=1)
        part += [r["part_ratio"] for r in rows]
        trace += [r["trace_ratio"] for r in rows]
    assert min(part) > 0 and min(trace) > 0
    assert max(part) / min(part) <= 10
    assert max(trace) / min(trace) <= 10


def test_stability_h_sweep():
    part, trace = [], []
    for n in (1, 2, 4):
        rows = measure_decomp_stability(HpSpace(quad_grid(n, 3)), 0.5, samples=2, oracle_levels=1)
        part += [r["part_ratio"] for r in rows]
        trace += [r["trace_ratio"] for r in rows]
    assert max(part) / min(part) <= 10
    assert max(trace) / min(trace) <= 10
