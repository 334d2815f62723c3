"""Random forest of information-gain trees with SplitMix64 per-tree streams."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from pesentinel.classifiers._base import (
    BadConfig,
    Prediction,
    SingleClassCorpus,
    as_bitset,
    bind_vocabulary,
    check_binary_X,
    check_features,
    check_X_y_binary,
    label_for,
)
from pesentinel.classifiers.tree import grow_tree, leaf_for, predict_leaves_malware
from pesentinel.datamine import MALWARE
from pesentinel.rng import SplitMix64


def resolve_features_per_split(setting, n_features):
    if setting in (None, "sqrt"):
        return max(1, math.ceil(math.sqrt(n_features)))
    if setting == "all":
        return n_features
    k = int(setting)
    if k < 1:
        raise BadConfig(f"features_per_split must be positive, got {setting}")
    return min(k, n_features)


def draw_rows(rng, n_rows, sample_fraction, bootstrap):
    size = math.ceil(sample_fraction * n_rows)
    if bootstrap:
        return np.array([rng.below(n_rows) for _ in range(size)], dtype=np.int64)
    if size >= n_rows:
        return np.arange(n_rows)
    return np.array(sorted(rng.sample(range(n_rows), size)), dtype=np.int64)


class RandomForestClassifier(ClassifierMixin, BaseEstimator):
    """Majority-vote ensemble of information-gain trees.

    Tree ``t`` draws everything it needs (its row sample, then its per-node
    candidate features) from ``SplitMix64.stream(seed, t)``, so a fit is
    bit-reproducible regardless of ``n_jobs``.

    Parameters
    ----------
    n_trees : int
    sample_fraction : float in (0, 1]
        Each tree sees ``ceil(sample_fraction * n_rows)`` rows, drawn with
        replacement when ``bootstrap`` is true.
    features_per_split : "sqrt", "all" or int
        Candidate features per node, drawn from ``features`` passed to fit.
    max_depth : int or None
    bootstrap : bool
    seed : int, taken modulo 2**64
    n_jobs : int
        Worker threads for training.
    """

    def __init__(self, n_trees=100, sample_fraction=0.632, features_per_split="sqrt",
                 max_depth=None, bootstrap=True, seed=0, n_jobs=1):
        self.n_trees = n_trees
        self.sample_fraction = sample_fraction
        self.features_per_split = features_per_split
        self.max_depth = max_depth
        self.bootstrap = bootstrap
        self.seed = seed
        self.n_jobs = n_jobs

    def _validate_params(self):
        if not isinstance(self.n_trees, (int, np.integer)) or self.n_trees < 1:
            raise BadConfig(f"n_trees must be a positive integer, got {self.n_trees!r}")
        if not 0 < self.sample_fraction <= 1:
            raise BadConfig(f"sample_fraction must be in (0, 1], got {self.sample_fraction!r}")
        if self.max_depth is not None and self.max_depth < 0:
            raise BadConfig("max_depth must be non-negative")

    def fit(self, X, y, features=None):
        self._validate_params()
        X, y = check_X_y_binary(X, y)
        if y.min() == y.max():
            raise SingleClassCorpus("a forest needs both malware and benign samples")
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        self.features_ = check_features(features, X.shape[1])
        if not self.features_:
            raise BadConfig("no candidate features")
        self.features_per_split_ = resolve_features_per_split(self.features_per_split, len(self.features_))

        def build(t):
            rng = SplitMix64.stream(self.seed, t)
            rows = draw_rows(rng, len(y), self.sample_fraction, self.bootstrap)
            return grow_tree(X, y, self.features_, rows=rows, rng=rng,
                             features_per_split=self.features_per_split_, max_depth=self.max_depth)

        if self.n_jobs and self.n_jobs > 1:
            with ThreadPoolExecutor(max_workers=self.n_jobs) as pool:
                self.trees_ = list(pool.map(build, range(self.n_trees)))
        else:
            self.trees_ = [build(t) for t in range(self.n_trees)]
        return self

    def malware_votes(self, X):
        check_is_fitted(self, "trees_")
        X = check_binary_X(X, self.n_features_in_)
        votes = np.zeros(X.shape[0], dtype=np.int64)
        for tree in self.trees_:
            votes += predict_leaves_malware(tree, X)
        return votes

    def predict_proba(self, X):
        risk = self.malware_votes(X) / len(self.trees_)
        return np.column_stack([1.0 - risk, risk])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)

    def predict_one(self, bitset):
        check_is_fitted(self, "trees_")
        row = as_bitset(bitset, self.n_features_in_)[0]
        mal = sum(leaf_for(tree, row).label == MALWARE for tree in self.trees_)
        risk = mal / len(self.trees_)
        return Prediction(label_for(risk), risk, (mal, len(self.trees_) - mal))


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    sample_fraction: float = 0.632
    features_per_split: Union[str, int] = "sqrt"
    max_depth: Optional[int] = None
    seed: int = 0
    bootstrap: bool = True

    def estimator(self, n_jobs=1):
        return RandomForestClassifier(
            n_trees=self.n_trees, sample_fraction=self.sample_fraction,
            features_per_split=self.features_per_split, max_depth=self.max_depth,
            bootstrap=self.bootstrap, seed=self.seed, n_jobs=n_jobs,
        )


def train_forest(matrix, config=ForestConfig(), features=None, n_jobs=1):
    model = config.estimator(n_jobs=n_jobs).fit(matrix.X, matrix.y, features=features)
    return bind_vocabulary(model, matrix)


def predict_forest(model, bitset):
    return model.predict_one(bitset)
