"""scikit-learn style wrappers around the invariant-field solver and the automorphism checker."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from detvec import autcheck, dsl
from detvec.lie import GroupSpec


class InvariantFieldSpace(TransformerMixin, BaseEstimator):
    """Polynomial vector fields of degree ``<= degree`` invariant under a group.

    ``fit`` solves the linear equivariance system; ``transform`` evaluates the
    basis fields at points and returns an ``(N, dimension * rep_dim)`` array.

    >>> est = InvariantFieldSpace("SO", 3, degree=3).fit()
    >>> est.dimension_
    2
    """

    def __init__(self, family: str = "SO", param: int = 3, degree: int = 3):
        self.family = family
        self.param = param
        self.degree = degree

    def fit(self, X=None, y=None):
        spec = GroupSpec(self.family, int(self.param))
        space = autcheck.invariant_field_space(spec, int(self.degree))
        self.spec_ = spec
        self.basis_ = space.basis
        self.coefficients_ = space.coefficients
        self.dimension_ = space.dimension
        self.n_features_in_ = spec.rep_dim
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        P = np.atleast_2d(np.asarray(X, dtype=float))
        if P.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} coordinates, got {P.shape[1]}")
        if not self.basis_:
            return np.zeros((P.shape[0], 0))
        return np.hstack([b.evaluate(P) for b in self.basis_])

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "basis_")
        d = self.n_features_in_
        return np.array([f"field{i}_c{j + 1}" for i in range(self.dimension_) for j in range(d)], dtype=object)


class AutomorphismClassifier(ClassifierMixin, BaseEstimator):
    """Label maps as ``Preserves`` / ``Violates`` / ``Inconclusive`` for a fixed family of fields.

    ``fields`` are DSL strings on ``chart``; ``predict`` takes a sequence of
    :class:`~detvec.dsl.MapExpr` objects or square matrices.  A map is labelled
    ``Violates`` when it breaks at least one field.
    """

    def __init__(self, fields=("radial()",), chart: str = "Euclidean(2)", n_points: int = 100,
                 domain: str = "Ball", radii=(1.0,), seed: int = 0,
                 preserve_tol: float = autcheck.PRESERVE_TOL, violate_floor: float = autcheck.VIOLATE_FLOOR):
        self.fields = fields
        self.chart = chart
        self.n_points = n_points
        self.domain = domain
        self.radii = radii
        self.seed = seed
        self.preserve_tol = preserve_tol
        self.violate_floor = violate_floor

    def fit(self, X=None, y=None):
        chart = dsl.Chart.parse(self.chart)
        self.fields_ = [dsl.parse_field(f, chart) for f in self.fields]
        self.plan_ = autcheck.SamplePlan(int(self.n_points), self.domain, tuple(self.radii), int(self.seed))
        self.classes_ = np.array([v.value for v in autcheck.Verdict])
        return self

    def _as_map(self, m):
        if isinstance(m, dsl.MapExpr):
            return m
        return dsl.linear_map(np.asarray(m, float), self.fields_[0].chart)

    def residuals(self, maps) -> np.ndarray:
        """Largest raw residual per map."""
        check_is_fitted(self, "fields_")
        return np.array([autcheck.check_automorphism(self._as_map(m), self.fields_, self.plan_).max for m in maps])

    def predict(self, maps) -> np.ndarray:
        check_is_fitted(self, "fields_")
        out = []
        for m in maps:
            rep = autcheck.check_automorphism(self._as_map(m), self.fields_, self.plan_,
                                              self.preserve_tol, self.violate_floor)
            # one map per report: Violates as soon as any field is broken
            out.append(str(next(iter(rep.map_verdicts().values()))))
        return np.array(out, dtype=object)
