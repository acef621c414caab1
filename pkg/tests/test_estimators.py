import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import FunctionTransformer

from hpinterp.estimators import ContinuousNormOracle, EquivalenceBand, InterpolationNorm, SlobodeckijNorm
from hpinterp.fracnorm import gen_eig, interp_norm_discrete, slobodeckij_norm
from hpinterp.hpspace import HpSpace, assemble_mass, assemble_stiffness
from hpinterp.mesh import quad_grid


@pytest.fixture(scope="module")
def space():
    return HpSpace(quad_grid(2, 2))


def test_interpolation_norm_matches_function(space, rng):
    X = rng.normal(size=(4, space.ndof))
    est = InterpolationNorm(space, theta=0.4).fit()
    M = assemble_mass(space).toarray()
    S = assemble_stiffness(space).toarray()
    b = gen_eig(M, M + S)
    expected = [interp_norm_discrete(x, 0.4, b).value for x in X]
    out = est.transform(X)
    assert out.shape == (4, 1)
    np.testing.assert_allclose(out[:, 0], expected, rtol=1e-10)


def test_slobodeckij_estimator(rng):
    small = HpSpace(quad_grid(1, 2))
    x = rng.normal(size=small.ndof)
    est = SlobodeckijNorm(small, 0.5, full=True).fit()
    assert est.transform(x)[0, 0] == pytest.approx(slobodeckij_norm(x, small, 0.5, full=True, check=False).value,
                                                   rel=1e-10)


def test_oracle_dominated_by_discrete(space, rng):
    X = rng.normal(size=(3, space.ndof))
    disc = InterpolationNorm(space, 0.5).fit_transform(X)
    orc = ContinuousNormOracle(space, 0.5, levels=1).fit_transform(X)
    assert np.all(orc <= disc * (1 + 1e-9))


def test_clone_and_params(space):
    est = InterpolationNorm(space, theta=0.3, variant="full")
    c = clone(est)
    assert c.get_params()["theta"] == 0.3
    assert c.space.ndof == space.ndof
    with pytest.raises(NotFittedError):
        c.transform(np.zeros(space.ndof))


def test_wrong_width(space):
    with pytest.raises(ValueError, match="dofs"):
        InterpolationNorm(space).fit().transform(np.zeros(space.ndof + 1))


def test_pipeline(space, rng):
    pipe = make_pipeline(FunctionTransformer(lambda X: 2 * X), InterpolationNorm(space, 0.5))
    X = rng.normal(size=(2, space.ndof))
    np.testing.assert_allclose(pipe.fit_transform(X), 2 * InterpolationNorm(space, 0.5).fit_transform(X))


def test_band(space):
    band = EquivalenceBand(space, 0.5, levels=1).fit()
    assert band.c_low_ >= 1 - 1e-8
    assert band.score() == pytest.approx(band.c_high_ / band.c_low_)
    assert 1.0 <= band.score() < 2.0
