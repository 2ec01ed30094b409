import numpy as np
import pytest
from numpy.testing import assert_allclose
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from detvec import lie
from detvec.estimators import AutomorphismClassifier, InvariantFieldSpace


def test_invariant_space_fit_transform():
    est = InvariantFieldSpace("U", 2, degree=5).fit()
    assert est.dimension_ == 6
    x = np.random.default_rng(0).standard_normal((7, 4))
    Z = est.transform(x)
    assert Z.shape == (7, 6 * 4)
    assert len(est.get_feature_names_out()) == 24


def test_invariant_features_are_equivariant():
    est = InvariantFieldSpace("SO", 3, degree=3).fit()
    x = np.random.default_rng(1).standard_normal((10, 3))
    g = lie.haar_sample(lie.GroupSpec("SO", 3), 0).matrix
    a = est.transform(x @ g.T).reshape(10, est.dimension_, 3)
    b = est.transform(x).reshape(10, est.dimension_, 3) @ g.T
    assert_allclose(a, b, atol=1e-12)


def test_transform_checks():
    with pytest.raises(NotFittedError):
        InvariantFieldSpace().transform(np.zeros((1, 3)))
    est = InvariantFieldSpace("SO", 3, degree=1).fit()
    with pytest.raises(ValueError):
        est.transform(np.zeros((1, 4)))


def test_params_and_clone():
    est = InvariantFieldSpace("Sp", 1, degree=1)
    assert est.get_params() == {"family": "Sp", "param": 1, "degree": 1}
    assert clone(est).fit().dimension_ == 4


def test_classifier_labels():
    clf = AutomorphismClassifier(
        fields=("radial()", "(norm2(x) - 1) * Jfield()"), chart="Euclidean(4)", domain="Sphere", radii=(2.0,)
    ).fit()
    u = lie.haar_sample(lie.GroupSpec("U", 2), 0).real()
    labels = clf.predict([u, np.diag([2.0, 1.0, 1.0, 1.0])])
    assert list(labels) == ["Preserves", "Violates"]
    r = clf.residuals([u, np.eye(4)])
    assert r[0] < 1e-9 and r[1] == 0.0
    assert set(clf.classes_) == {"Preserves", "Violates", "Inconclusive"}
