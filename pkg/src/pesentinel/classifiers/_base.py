from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from sklearn.utils.validation import check_array

from pesentinel.datamine import BENIGN, MALWARE, normalize_label
from pesentinel.selection import SingleClassCorpus  # noqa: F401  re-exported


class ClassifierError(ValueError):
    pass


class EmptyTrainingSet(ClassifierError):
    pass


class BadConfig(ClassifierError):
    pass


class VocabularyMismatch(ClassifierError):
    pass


@dataclass(frozen=True)
class Prediction:
    label: str
    risk_score: float
    per_tree_votes: Optional[Tuple[int, int]] = None  # (malware, benign), forests only


def label_for(risk):
    """Risk at or above one half is malware; the tie goes to the cautious side."""
    return MALWARE if risk >= 0.5 else BENIGN


def check_binary_X(X, n_features=None):
    X = check_array(X, dtype=None, ensure_min_samples=0, ensure_all_finite=True)
    if X.size and not np.isin(X, (0, 1)).all():
        raise ValueError("features must be 0/1 presence indicators")
    X = X.astype(np.uint8, copy=False)
    if n_features is not None and X.shape[1] != n_features:
        raise VocabularyMismatch(f"model expects {n_features} features, got {X.shape[1]}")
    return X


def check_labels(y):
    y = np.asarray(y)
    if y.dtype.kind in "iub":
        if y.size and not np.isin(y, (0, 1)).all():
            raise ValueError("integer labels must be 0 (benign) or 1 (malware)")
        return y.astype(np.int64)
    return np.array([normalize_label(v) == MALWARE for v in y], dtype=np.int64)


def check_X_y_binary(X, y):
    X = check_binary_X(X)
    y = check_labels(y)
    if len(y) != X.shape[0]:
        raise ValueError(f"{X.shape[0]} rows but {len(y)} labels")
    if len(y) == 0:
        raise EmptyTrainingSet("no training samples")
    return X, y


def check_features(features, n_features):
    if features is None:
        return list(range(n_features))
    features = sorted({int(f) for f in features})
    if any(not 0 <= f < n_features for f in features):
        raise ValueError("feature ids out of range")
    return features


def as_bitset(bitset, n_features):
    row = np.asarray(bitset, dtype=np.uint8).reshape(1, -1)
    return check_binary_X(row, n_features)


def bind_vocabulary(model, matrix):
    """Attach the training vocabulary so later bitsets can be checked against it."""
    model.vocabulary_ = list(matrix.vocabulary.names)
    model.vocabulary_hash_ = matrix.vocabulary.digest
    return model


def check_vocabulary(model, vocabulary):
    expected = getattr(model, "vocabulary_hash_", None)
    if expected is not None and expected != vocabulary.digest:
        raise VocabularyMismatch("model was trained on a different vocabulary")
