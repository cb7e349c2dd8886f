import numpy as np
import pytest
from sklearn.base import BaseEstimator
from sklearn.linear_model import LogisticRegression

from adaptive_sets.calibrate import (
    CVPlusClassifier,
    HomogeneousConformalClassifier,
    JackknifePlusClassifier,
    SplitConformalClassifier,
    conformal_quantile,
    cv_calibrate,
    hcc_calibrate,
    predict_cvplus,
    predict_hcc,
    predict_split,
    split_calibrate,
)
from adaptive_sets.core import LabeledDataset, RandomSource
from adaptive_sets.models import KNNProbaClassifier, LogisticRegressionGD, OracleClassifier, full_proba
from adaptive_sets.scores import score_matrix
from adaptive_sets.synthdata import generate_multinomial_inhomogeneous


class FixedProba(BaseEstimator):
    """Same probability vector for every input."""

    def __init__(self, probs=(0.3, 0.6, 0.1)):
        self.probs = probs

    def fit(self, X, y):
        self.classes_ = np.arange(len(self.probs))
        return self

    def predict_proba(self, X):
        return np.tile(np.asarray(self.probs, float), (np.atleast_2d(X).shape[0], 1))


def test_quantile_examples():
    s9 = np.random.default_rng(0).random(9)
    assert conformal_quantile(s9, 0.1) == s9.max()
    assert conformal_quantile(np.random.default_rng(1).random(4), 0.1) == 1.0
    assert conformal_quantile(np.arange(1, 11) / 10, 0.5) == pytest.approx(0.6)


def test_quantile_float_guard():
    # (1 - 0.1) * 10 = 9.000000000000002 in floating point; k must still be 9
    s = np.arange(1, 10) / 10
    assert conformal_quantile(s, 0.1) == pytest.approx(0.9)


def test_quantile_empty():
    with pytest.raises(ValueError):
        conformal_quantile([], 0.1)


@pytest.fixture(scope="module")
def synth():
    return generate_multinomial_inhomogeneous(10_000, rng=RandomSource(31))


def test_split_oracle_threshold_near_level(synth):
    d = synth.dataset
    cal = split_calibrate(d, OracleClassifier.from_spec(synth.spec), alpha=0.1, rng=RandomSource(1))
    assert cal.calib_index_.size == 5000
    assert abs(cal.threshold_ - 0.9) < 0.02


def test_split_deterministic(synth):
    d = synth.dataset.subset(np.arange(400))
    box = OracleClassifier.from_spec(synth.spec)
    a = split_calibrate(d, box, rng=RandomSource(3))
    b = split_calibrate(d, box, rng=RandomSource(3))
    np.testing.assert_array_equal(a.calib_scores_, b.calib_scores_)
    np.testing.assert_array_equal(a.train_index_, b.train_index_)
    assert a.threshold_ == b.threshold_


def test_split_tiny_alpha_caps(synth):
    d = synth.dataset.subset(np.arange(200))
    cal = split_calibrate(d, OracleClassifier.from_spec(synth.spec), alpha=1 / 102, rng=RandomSource(0))
    assert cal.threshold_ == 1.0


def _fixed_split(probs=(0.3, 0.6, 0.1)):
    X = np.zeros((10, 1))
    y = np.array([0, 1, 2, 1, 1, 0, 1, 0, 1, 1])
    return SplitConformalClassifier(FixedProba(probs), n_classes=len(probs), random_state=0).fit(X, y)


def test_predict_split_threshold_cases():
    cal = _fixed_split((0.3, 0.0, 0.7))
    cal.threshold_ = 1.0
    assert predict_split(cal, [0.0], 0.2) == {0, 2}
    cal.threshold_ = 0.0
    assert predict_split(cal, [0.0], 0.5) == frozenset()
    assert predict_split(cal, [0.0], 1.0) == {2}


def test_predict_split_worked_example():
    cal = _fixed_split()
    cal.threshold_ = 0.9
    # u above V = 0 at tau = 0.9
    assert predict_split(cal, [0.0], 0.5) == {0, 1}


def test_split_sets_grow_as_alpha_shrinks(synth):
    d = synth.dataset.subset(np.arange(2000))
    cal = SplitConformalClassifier(OracleClassifier.from_spec(synth.spec), random_state=0)
    cal.fit(d.features, d.labels)
    Xt = synth.dataset.features[5000:5500]
    u = np.random.default_rng(0).random(500)
    prev = None
    for a in (0.5, 0.3, 0.1, 0.05, 0.01):
        m = cal.predict(Xt, u=u, alpha=a)
        if prev is not None:
            assert (m >= prev).all()
        prev = m


def test_cvplus_two_points_include():
    X, y = np.zeros((2, 1)), np.array([2, 2])
    cal = CVPlusClassifier(FixedProba(), n_folds=2, alpha=0.5, n_classes=3, random_state=0)
    cal.fit(X, y, u=[0.0, 0.0])
    np.testing.assert_allclose(cal.holdout_scores_, 1.0)
    assert predict_cvplus(cal, [0.0], 0.3) == {0, 1, 2}


def test_cvplus_large_alpha_can_be_empty():
    X, y = np.zeros((2, 1)), np.array([1, 1])
    cal = CVPlusClassifier(FixedProba(), n_folds=2, alpha=0.7, n_classes=3, random_state=0)
    cal.fit(X, y, u=[1.0, 1.0])
    np.testing.assert_allclose(cal.holdout_scores_, 0.0)
    assert predict_cvplus(cal, [0.0], 0.5) == frozenset()


def test_jackknife_structure(synth):
    d = synth.dataset.subset(np.arange(10))
    cal = JackknifePlusClassifier(KNNProbaClassifier(n_neighbors=3), n_classes=10, random_state=0)
    cal.fit(d.features, d.labels)
    assert len(cal.estimators_) == 10
    assert all(m.X_train_.shape[0] == 9 for m in cal.estimators_)
    assert sorted(np.concatenate(cal.folds_).tolist()) == list(range(10))


def test_cvplus_matches_direct_count(synth):
    d = synth.dataset.subset(np.arange(120))
    # logistic probabilities have no exact ties, so tie-breaking cannot differ
    cal = cv_calibrate(d, LogisticRegressionGD(max_iter=300), K=6, alpha=0.2, rng=RandomSource(2))
    Xt = synth.dataset.features[6000:6040]
    u = np.random.default_rng(3).random(40)
    mask = cal.predict(Xt, u=u)
    # direct evaluation of the counting rule, one hold-out point at a time
    E = [score_matrix(full_proba(m, Xt, 10), u) for m in cal.estimators_]
    n = d.n
    for j in range(40):
        for lab in range(10):
            count = sum(cal.holdout_scores_[i] < E[cal.fold_of_[i]][j, lab] for i in range(n))
            assert mask[j, lab] == (count < 0.8 * (n + 1))


def test_cvplus_generic_estimator_path(synth):
    d = synth.dataset.subset(np.arange(200))
    cal = CVPlusClassifier(LogisticRegression(max_iter=500), n_folds=4, n_classes=10,
                           random_state=0, n_jobs=1).fit(d.features, d.labels)
    assert len(cal.estimators_) == 4
    assert cal.predict(synth.dataset.features[:5]).shape == (5, 10)


def test_cvplus_bad_folds():
    with pytest.raises(ValueError):
        CVPlusClassifier(FixedProba(), n_folds=5).fit(np.zeros((3, 1)), [0, 1, 2])


def test_hcc_cases():
    X = np.zeros((6, 1))
    y = np.array([0, 0, 1, 0, 0, 0])
    cal = hcc_calibrate(LabeledDataset(X, y), FixedProba((0.9, 0.1)), rng=RandomSource(0))
    cal.threshold_ = 0.5
    assert predict_hcc(cal, [0.0]) == {0}
    cal.threshold_ = 1.0
    assert predict_hcc(cal, [0.0]) == {0, 1}


def test_hcc_scores_are_one_minus_prob():
    X = np.zeros((6, 1))
    y = np.array([0, 1, 1, 0, 0, 0])
    cal = HomogeneousConformalClassifier(FixedProba((0.9, 0.1)), random_state=0).fit(X, y)
    want = np.where(y[cal.calib_index_] == 0, 0.1, 0.9)
    np.testing.assert_allclose(cal.calib_scores_, want)


def test_params_round_trip():
    est = SplitConformalClassifier(alpha=0.2, train_size=0.7)
    assert est.get_params()["alpha"] == 0.2
    assert JackknifePlusClassifier(alpha=0.3).get_params()["alpha"] == 0.3
    assert JackknifePlusClassifier().n_folds is None
