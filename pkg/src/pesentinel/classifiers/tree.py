"""Greedy information-gain decision trees over binary presence features."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from pesentinel.classifiers._base import (
    EmptyTrainingSet,
    Prediction,
    as_bitset,
    check_binary_X,
    check_features,
    check_X_y_binary,
)
from pesentinel.datamine import BENIGN, MALWARE
from pesentinel.selection import info_gain_columns


@dataclass
class Leaf:
    label: str
    n_malware: int
    n_benign: int

    @property
    def risk(self):
        return self.n_malware / (self.n_malware + self.n_benign)


@dataclass
class Split:
    feature: int
    present_child: "TreeNode"
    absent_child: "TreeNode"


TreeNode = Union[Leaf, Split]


def _make_leaf(y_node):
    n_mal = int(y_node.sum())
    n_ben = len(y_node) - n_mal
    return Leaf(MALWARE if n_mal >= n_ben else BENIGN, n_mal, n_ben)


def grow_tree(X, y, features, rows=None, rng=None, features_per_split=None, max_depth=None):
    """Induce a tree on ``X[rows]`` (rows may repeat, as in a bootstrap draw).

    At each node the candidates are the path-unused ``features``; with ``rng``
    and ``features_per_split`` set, ``features_per_split`` of them are drawn
    without replacement.  The split is the candidate of maximal information
    gain, lowest id on ties.  A node becomes a leaf when it is pure, when no
    candidate remains, at ``max_depth``, or when the best gain is zero and no
    candidate partitions its rows.  A zero-gain node that can still be
    partitioned splits on the lowest-id partitioning candidate, so an
    unlimited tree always fits a consistent training set (XOR included).
    """
    rows = np.arange(len(y)) if rows is None else np.asarray(rows)
    if len(rows) == 0:
        raise EmptyTrainingSet("cannot grow a tree on zero samples")
    features = sorted(features)

    root = [None]
    # (rows, used feature ids, depth, parent, attribute name on parent)
    stack = [(rows, frozenset(), 0, root, 0)]
    while stack:
        node_rows, used, depth, parent, slot = stack.pop()
        y_node = y[node_rows]
        node = None
        n_mal = int(y_node.sum())
        if 0 < n_mal < len(y_node) and (max_depth is None or depth < max_depth):
            available = [f for f in features if f not in used]
            if rng is not None and features_per_split is not None and features_per_split < len(available):
                candidates = sorted(rng.sample(available, features_per_split))
            else:
                candidates = available
            if candidates:
                sub = X[np.ix_(node_rows, candidates)]
                gains = info_gain_columns(sub, y_node)
                best = max(range(len(candidates)), key=lambda i: (gains[i], -candidates[i]))
                if gains[best] <= 0:
                    # XOR-like nodes: no single feature helps yet, but a partitioning one
                    # still lets deeper splits separate the classes
                    splitting = np.flatnonzero(sub.min(axis=0) != sub.max(axis=0))
                    best = int(splitting[0]) if len(splitting) else None
                if best is not None:
                    feature = candidates[best]
                    mask = X[node_rows, feature] == 1
                    node = Split(feature, None, None)
                    used = used | {feature}
                    # absent pushed first so the present subtree is grown first
                    stack.append((node_rows[~mask], used, depth + 1, node, "absent_child"))
                    stack.append((node_rows[mask], used, depth + 1, node, "present_child"))
        if node is None:
            node = _make_leaf(y_node)
        if parent is root:
            root[0] = node
        else:
            setattr(parent, slot, node)
    return root[0]


def leaf_for(node, bitset):
    while isinstance(node, Split):
        node = node.present_child if bitset[node.feature] else node.absent_child
    return node


def predict_leaves_malware(node, X):
    """Boolean array: does each row of X land in a malware leaf?"""
    out = np.zeros(X.shape[0], dtype=bool)
    stack = [(node, np.arange(X.shape[0]))]
    while stack:
        node, rows = stack.pop()
        if not len(rows):
            continue
        if isinstance(node, Leaf):
            out[rows] = node.label == MALWARE
            continue
        mask = X[rows, node.feature] == 1
        stack.append((node.present_child, rows[mask]))
        stack.append((node.absent_child, rows[~mask]))
    return out


def iter_nodes(node):
    stack = [(node, 0)]
    while stack:
        node, depth = stack.pop()
        yield node, depth
        if isinstance(node, Split):
            stack.append((node.absent_child, depth + 1))
            stack.append((node.present_child, depth + 1))


def tree_depth(node):
    return max(d for _, d in iter_nodes(node))


class DecisionTreeClassifier(ClassifierMixin, BaseEstimator):
    """Single information-gain tree; ``fit(X, y, features=None)``.

    ``features`` limits the candidate columns (all columns by default).
    Fitted attributes: ``tree_``, ``features_``, ``n_features_in_``,
    ``classes_`` (0 benign, 1 malware).
    """

    def __init__(self, max_depth=None):
        self.max_depth = max_depth

    def fit(self, X, y, features=None):
        X, y = check_X_y_binary(X, y)
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        self.features_ = check_features(features, X.shape[1])
        self.tree_ = grow_tree(X, y, self.features_, max_depth=self.max_depth)
        return self

    def predict(self, X):
        check_is_fitted(self, "tree_")
        X = check_binary_X(X, self.n_features_in_)
        return predict_leaves_malware(self.tree_, X).astype(np.int64)

    def predict_proba(self, X):
        check_is_fitted(self, "tree_")
        X = check_binary_X(X, self.n_features_in_)
        risk = np.array([leaf_for(self.tree_, row).risk for row in X])
        return np.column_stack([1.0 - risk, risk])

    def predict_one(self, bitset):
        check_is_fitted(self, "tree_")
        row = as_bitset(bitset, self.n_features_in_)[0]
        leaf = leaf_for(self.tree_, row)
        return Prediction(leaf.label, leaf.risk)
