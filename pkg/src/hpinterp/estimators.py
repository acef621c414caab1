"""scikit-learn style wrappers around the norm computations.

Each transformer is bound to an :class:`HpSpace`; ``fit`` prepares the
space-dependent data (eigenbasis, quadrature Gram matrix, oracle levels) and
``transform`` maps coefficient vectors (rows of ``X``) to norms.  There is no
``partial_fit``: everything learned depends on the space only, never on
the rows of ``X``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .fracnorm import NormOracle, SlobodeckijGram, ThetaParams, equivalence_band, gen_eig, interp_gram
from .hpspace import HpSpace, assemble_mass, assemble_stiffness

__all__ = ["InterpolationNorm", "SlobodeckijNorm", "ContinuousNormOracle", "EquivalenceBand"]


def _rows(X, space):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != space.ndof:
        raise ValueError(f"X has {X.shape[1]} columns, the space has {space.ndof} dofs")
    return X


def _quadratic_norms(X, G):
    return np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", X, G, X), 0.0))[:, None]


class InterpolationNorm(TransformerMixin, BaseEstimator):
    """Discrete K-method norm of coefficient vectors.

    Parameters
    ----------
    space : HpSpace
    theta : float
    variant : {"full", "seminorm"}
    """

    def __init__(self, space: HpSpace | None = None, theta=0.5, variant="full"):
        self.space = space
        self.theta = theta
        self.variant = variant

    def fit(self, X=None, y=None):
        ThetaParams(self.theta, self.variant)
        M = assemble_mass(self.space).toarray()
        S = assemble_stiffness(self.space).toarray()
        self.basis_ = gen_eig(M, M + S if self.variant == "full" else S)
        self.gram_ = interp_gram(self.basis_, self.theta)
        self.n_features_in_ = self.space.ndof
        return self

    def transform(self, X):
        check_is_fitted(self, "gram_")
        return _quadratic_norms(_rows(X, self.space), self.gram_)


class SlobodeckijNorm(TransformerMixin, BaseEstimator):
    """Double-integral (Slobodeckij) seminorm, or full norm with ``full=True``."""

    def __init__(self, space: HpSpace | None = None, theta=0.5, full=False, level=1):
        self.space = space
        self.theta = theta
        self.full = full
        self.level = level

    def fit(self, X=None, y=None):
        G = SlobodeckijGram(self.space, self.theta, self.level).matrix
        if self.full:
            G = G + assemble_mass(self.space).toarray()
        self.gram_ = G
        self.n_features_in_ = self.space.ndof
        return self

    def transform(self, X):
        check_is_fitted(self, "gram_")
        return _quadratic_norms(_rows(X, self.space), self.gram_)


class ContinuousNormOracle(TransformerMixin, BaseEstimator):
    """Interpolation norm computed on enriched superspaces (upper approximation
    of the continuous norm)."""

    def __init__(self, space: HpSpace | None = None, theta=0.5, levels=2, variant="full"):
        self.space = space
        self.theta = theta
        self.levels = levels
        self.variant = variant

    def fit(self, X=None, y=None):
        ThetaParams(self.theta, self.variant)
        self.oracle_ = NormOracle(self.space, self.levels, self.variant)
        self.gram_ = self.oracle_.gram(self.theta)
        self.n_features_in_ = self.space.ndof
        return self

    def transform(self, X):
        check_is_fitted(self, "gram_")
        return _quadratic_norms(_rows(X, self.space), self.gram_)


class EquivalenceBand(BaseEstimator):
    """Extreme ratios ``||u||_disc^2 / ||u||_oracle^2`` over the space.

    Attributes
    ----------
    c_low_, c_high_ : float
    """

    def __init__(self, space: HpSpace | None = None, theta=0.5, levels=2, variant="full"):
        self.space = space
        self.theta = theta
        self.levels = levels
        self.variant = variant

    def fit(self, X=None, y=None):
        self.c_low_, self.c_high_ = equivalence_band(self.space, self.theta, levels=self.levels,
                                                     variant=self.variant)
        return self

    def score(self, X=None, y=None):
        """Band width ``c_high / c_low`` (1 means the norms coincide)."""
        check_is_fitted(self, "c_high_")
        return self.c_high_ / self.c_low_
