from __future__ import annotations

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from pesentinel.classifiers._base import (
    Prediction,
    SingleClassCorpus,
    as_bitset,
    bind_vocabulary,
    check_binary_X,
    check_features,
    check_X_y_binary,
    label_for,
)


class BernoulliNaiveBayes(ClassifierMixin, BaseEstimator):
    """Bernoulli naive Bayes with add-``alpha`` smoothing on the selected columns.

    Fitted arrays are indexed ``[class, feature]`` with class 0 benign and
    class 1 malware; ``log_priors_`` is unsmoothed.
    """

    def __init__(self, alpha=1.0):
        self.alpha = alpha

    def fit(self, X, y, features=None):
        X, y = check_X_y_binary(X, y)
        if y.min() == y.max():
            raise SingleClassCorpus("naive Bayes needs both malware and benign samples")
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        self.features_ = check_features(features, X.shape[1])
        Xf = X[:, self.features_].astype(np.float64)
        counts = np.array([(y == c).sum() for c in (0, 1)], dtype=np.float64)
        present = np.vstack([Xf[y == c].sum(axis=0) for c in (0, 1)])
        p = (present + self.alpha) / (counts[:, None] + 2 * self.alpha)
        self.log_priors_ = np.log(counts / counts.sum())
        self.log_likelihood_present_ = np.log(p)
        self.log_likelihood_absent_ = np.log1p(-p)
        return self

    def joint_log_likelihood(self, X):
        check_is_fitted(self, "log_priors_")
        X = check_binary_X(X, self.n_features_in_)
        Xf = X[:, self.features_].astype(np.float64)
        return (self.log_priors_
                + Xf @ self.log_likelihood_present_.T
                + (1.0 - Xf) @ self.log_likelihood_absent_.T)

    def predict_proba(self, X):
        jll = self.joint_log_likelihood(X)
        return np.exp(jll - logsumexp(jll, axis=1, keepdims=True))

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)

    def predict_one(self, bitset):
        risk = float(self.predict_proba(as_bitset(bitset, self.n_features_in_))[0, 1])
        return Prediction(label_for(risk), risk)


def train_nb(matrix, features=None, alpha=1.0):
    return bind_vocabulary(BernoulliNaiveBayes(alpha=alpha).fit(matrix.X, matrix.y, features), matrix)


def predict_nb(model, bitset):
    return model.predict_one(bitset)
