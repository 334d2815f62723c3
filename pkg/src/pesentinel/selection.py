"""Information-gain scoring of binary features against the malware label.

All entropies are in bits.  ``info_gain`` is label entropy minus the
label entropy remaining once the feature's value is known.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from pesentinel.datamine import MALWARE, normalize_label

CLAMP_EPS = 1e-12


class SelectionError(ValueError):
    pass


class AllZeroCounts(SelectionError):
    pass


class LengthMismatch(SelectionError):
    pass


class EmptyScores(SelectionError):
    pass


class SingleClassCorpus(SelectionError):
    pass


def entropy(class_counts):
    counts = [int(c) for c in class_counts]
    if any(c < 0 for c in counts):
        raise ValueError("class counts must be non-negative")
    total = sum(counts)
    if total == 0:
        raise AllZeroCounts("entropy of an all-zero count vector is undefined")
    h = 0.0
    for c in counts:
        if c:
            p = c / total
            h -= p * math.log2(p)
    return h


def _as_binary_labels(labels):
    out = []
    for label in labels:
        if isinstance(label, (int, np.integer)) and label in (0, 1):
            out.append(int(label))
        else:
            out.append(int(normalize_label(label) == MALWARE))
    return out


def _contingency(feature_column, labels):
    feature = [int(bool(v)) for v in feature_column]
    y = _as_binary_labels(labels)
    if len(feature) != len(y):
        raise LengthMismatch(f"{len(feature)} feature values vs {len(y)} labels")
    if not y:
        raise LengthMismatch("need at least one sample")
    # table[f][c]: samples with feature value f and class c (1 = malware)
    table = [[0, 0], [0, 0]]
    for f, c in zip(feature, y):
        table[f][c] += 1
    return table


def conditional_entropy(feature_column, labels):
    table = _contingency(feature_column, labels)
    n = sum(map(sum, table))
    return sum(sum(row) / n * entropy(row) for row in table if sum(row))


def info_gain(feature_column, labels):
    table = _contingency(feature_column, labels)
    class_counts = [table[0][0] + table[1][0], table[0][1] + table[1][1]]
    n = sum(class_counts)
    ig = entropy(class_counts) - sum(sum(row) / n * entropy(row) for row in table if sum(row))
    if -CLAMP_EPS < ig < 0:
        ig = 0.0
    return ig


def _xlog2x(p):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0)), 0.0)


def _binary_entropy(pos, total):
    """Vectorised entropy of two-class counts ``(pos, total - pos)``; 0 where total is 0."""
    pos = np.asarray(pos, dtype=np.float64)
    total = np.asarray(total, dtype=np.float64)
    safe = np.where(total > 0, total, 1.0)
    p = pos / safe
    return np.where(total > 0, -(_xlog2x(p) + _xlog2x(1.0 - p)), 0.0)


def info_gain_columns(X, y, weights=None):
    """Information gain of every column of a 0/1 matrix, in one pass.

    ``weights`` gives per-row multiplicities (bootstrap counts).
    """
    X = np.asarray(X)
    y = np.asarray(y)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=np.float64)
    wy = w * (y == 1)
    n = w.sum()
    n_pos = wy.sum()
    present = w @ X
    present_pos = wy @ X
    absent = n - present
    absent_pos = n_pos - present_pos
    h_label = _binary_entropy(n_pos, n)
    h_cond = (present * _binary_entropy(present_pos, present) + absent * _binary_entropy(absent_pos, absent)) / n
    ig = h_label - h_cond
    return np.where((ig < 0) & (ig > -CLAMP_EPS), 0.0, ig)


@dataclass(frozen=True)
class IGScore:
    function_id: int
    function_name: str
    ig: float
    ig_corrected: float = float("nan")


def _order(values, ids):
    return sorted(range(len(values)), key=lambda i: (-values[i], ids[i]))


def corrected_scores(scores):
    """Subtract the mean ig from every score.

    Ranking stays keyed on the raw ig.  Centering is monotone, but in floating
    point two nearly equal scores may collapse into a tie, so only weak
    monotonicity is checked.
    """
    scores = list(scores)
    if not scores:
        raise EmptyScores("no scores to correct")
    mean = sum(s.ig for s in scores) / len(scores)
    out = [IGScore(s.function_id, s.function_name, s.ig, s.ig - mean) for s in scores]
    ids = [s.function_id for s in out]
    ranked = [out[i].ig_corrected for i in _order([s.ig for s in out], ids)]
    if any(a < b for a, b in zip(ranked, ranked[1:])):
        raise AssertionError("mean-centering changed the ig ranking")
    return out


@dataclass(frozen=True)
class SelectionReport:
    scores: tuple
    retained: tuple
    fraction: float
    label_entropy: float

    def retained_names(self):
        by_id = {s.function_id: s.function_name for s in self.scores}
        return [by_id[f] for f in self.retained]

    def rank_of(self, function_id):
        for rank, s in enumerate(self.scores):
            if s.function_id == function_id:
                return rank
        raise KeyError(function_id)

    def write_csv(self, path_or_file):
        if hasattr(path_or_file, "write"):
            _write_report(self, path_or_file)
        else:
            with open(path_or_file, "w", newline="", encoding="utf-8") as fh:
                _write_report(self, fh)


def _write_report(report, fh):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["FunctionID", "FunctionName", "InfoGain", "InfoGainCorrected"])
    for s in report.scores:
        writer.writerow([s.function_id, s.function_name, repr(s.ig), repr(s.ig_corrected)])


def _check_fraction(fraction):
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")


def score_features(X, y, names=None):
    X = np.asarray(X)
    y = np.asarray(y)
    if len(y) == 0 or y.min() == y.max():
        raise SingleClassCorpus("information gain needs both malware and benign samples")
    names = names if names is not None else [str(i) for i in range(X.shape[1])]
    igs = info_gain_columns(X, y)
    return [IGScore(i, names[i], float(igs[i])) for i in range(X.shape[1])]


def select_top(matrix, fraction=0.8):
    """Rank every vocabulary function by ig and keep the top ``ceil(fraction * n)``."""
    _check_fraction(fraction)
    return _select(matrix.X, matrix.y, list(matrix.vocabulary.names), fraction)


def _select(X, y, names, fraction):
    raw = score_features(X, y, names)
    n_pos = int(np.sum(y))
    h_label = entropy([n_pos, len(y) - n_pos])
    if not raw:
        return SelectionReport((), (), fraction, h_label)
    scored = corrected_scores(raw)
    order = _order([s.ig for s in scored], [s.function_id for s in scored])
    ranked = tuple(scored[i] for i in order)
    keep = math.ceil(fraction * len(ranked))
    return SelectionReport(ranked, tuple(s.function_id for s in ranked[:keep]), fraction, h_label)


class InfoGainSelector(TransformerMixin, BaseEstimator):
    """Keep the top ``fraction`` of binary columns by information gain.

    Fitted attributes: ``report_`` (the full SelectionReport),
    ``retained_`` (column ids, best first) and ``n_features_in_``.
    """

    def __init__(self, fraction=0.8):
        self.fraction = fraction

    def fit(self, X, y):
        _check_fraction(self.fraction)
        X = np.asarray(X)
        self.n_features_in_ = X.shape[1]
        self.report_ = _select(X, np.asarray(y), None, self.fraction)
        self.retained_ = np.array(self.report_.retained, dtype=np.int64)
        return self

    def get_support(self, indices=False):
        check_is_fitted(self, "retained_")
        if indices:
            return np.sort(self.retained_)
        mask = np.zeros(self.n_features_in_, dtype=bool)
        mask[self.retained_] = True
        return mask

    def transform(self, X):
        check_is_fitted(self, "retained_")
        X = np.asarray(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return X[:, self.get_support(indices=True)]
