"""Stratified splits, confusion metrics and the classifier comparison table."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from pesentinel.classifiers import (
    ForestConfig,
    check_vocabulary,
    train_decision_tree,
    train_forest,
    train_nb,
)
from pesentinel.rng import SplitMix64
from pesentinel.selection import select_top


class EvaluationError(ValueError):
    pass


class ClassTooSmall(EvaluationError):
    pass


class EmptyTestSet(EvaluationError):
    pass


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def split(matrix, test_fraction=0.1, seed=0):
    """Stratified train/test partition; each class is shuffled with one shared stream.

    Each class contributes ``round(test_fraction * n_class)`` test rows,
    clamped so both sides keep at least one row of that class.  Both
    halves preserve the original sample order.
    """
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = SplitMix64(seed)
    y = matrix.y
    test_idx = []
    for cls in (1, 0):
        members = [i for i in range(len(y)) if y[i] == cls]
        if len(members) < 2:
            name = "malware" if cls else "benign"
            raise ClassTooSmall(f"need at least 2 {name} samples to split, have {len(members)}")
        rng.shuffle(members)
        n_test = min(max(_round_half_up(test_fraction * len(members)), 1), len(members) - 1)
        test_idx.extend(members[:n_test])
    test_set = set(test_idx)
    train_idx = [i for i in range(len(y)) if i not in test_set]
    return (
        matrix.take(train_idx, note=f"train split seed={seed} test_fraction={test_fraction}"),
        matrix.take(sorted(test_set), note=f"test split seed={seed} test_fraction={test_fraction}"),
    )


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, y_true, y_pred):
        y_true = np.asarray(y_true).astype(bool)
        y_pred = np.asarray(y_pred).astype(bool)
        return cls(
            tp=int(np.sum(y_true & y_pred)),
            fp=int(np.sum(~y_true & y_pred)),
            tn=int(np.sum(~y_true & ~y_pred)),
            fn=int(np.sum(y_true & ~y_pred)),
        )


def _ratio(num, den):
    return num / den if den else 0.0


def _trim(value, places, keep_point=False):
    text = f"{value:.{places}f}".rstrip("0")
    return text + "0" if text.endswith(".") and keep_point else text.rstrip(".")


@dataclass(frozen=True)
class MetricsReport:
    counts: ConfusionCounts

    @property
    def tp_rate(self):
        return _ratio(self.counts.tp, self.counts.tp + self.counts.fn)

    @property
    def fp_rate(self):
        return _ratio(self.counts.fp, self.counts.fp + self.counts.tn)

    @property
    def dr(self):
        """Detection rate in percent."""
        return 100.0 * self.tp_rate

    @property
    def acy(self):
        """Accuracy in percent."""
        return 100.0 * _ratio(self.correct, self.counts.total)

    @property
    def correct(self):
        return self.counts.tp + self.counts.tn

    @property
    def incorrect(self):
        return self.counts.fp + self.counts.fn

    def summary_lines(self):
        total = self.counts.total
        pct = lambda n: f"{100.0 * _ratio(n, total):.4f} %"  # noqa: E731
        return [
            f"{'Total Instances':<34}{total:>8}",
            f"{'Correctly Classified Instances':<34}{self.correct:>8}  {pct(self.correct):>10}",
            f"{'Incorrectly Classified Instances':<34}{self.incorrect:>8}  {pct(self.incorrect):>10}",
        ]

    def render_summary(self):
        return "\n".join(self.summary_lines()) + "\n"

    def row_cells(self):
        """TP rate, FP rate, DR and ACY formatted for the comparison table."""
        return [
            _trim(self.tp_rate, 3, keep_point=True),
            _trim(self.fp_rate, 3, keep_point=True),
            _trim(self.dr, 2) + "%",
            _trim(self.acy, 2) + "%",
        ]

    def as_dict(self):
        c = self.counts
        return {
            "tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn,
            "tp_rate": self.tp_rate, "fp_rate": self.fp_rate, "dr": self.dr, "acy": self.acy,
        }


def metrics(y_true, y_pred):
    return MetricsReport(ConfusionCounts.from_predictions(y_true, y_pred))


def evaluate(model, test):
    if len(test) == 0:
        raise EmptyTestSet("test set is empty")
    check_vocabulary(model, test.vocabulary)
    return metrics(test.y, model.predict(test.X))


ROW_NAMES = ("Decision Tree", "Naive Bayes", "Random Forest", "IG-Selected Forest")


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple  # ((name, MetricsReport), ...)
    n_train: int
    n_test: int
    retained: int

    def render_text(self):
        header = ["Algorithm", "TP", "FP", "DR", "ACY"]
        body = [[name, *report.row_cells()] for name, report in self.rows]
        widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
        lines = []
        for row in [header, *body]:
            cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
            lines.append("  ".join(cells).rstrip())
        return "\n".join(lines) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["Algorithm", "TP", "FP", "DR", "ACY"])
        for name, report in self.rows:
            writer.writerow([name, *report.row_cells()])
        return buf.getvalue()

    def as_records(self):
        return [{"algorithm": name, **report.as_dict()} for name, report in self.rows]


def proposed_pipeline(train, forest_config=ForestConfig(), fraction=0.8, n_jobs=1):
    """IG selection on the training split, then a forest over the retained functions."""
    report = select_top(train, fraction)
    model = train_forest(train, forest_config, features=report.retained, n_jobs=n_jobs)
    return model, report


def comparison_table(matrix, forest_config=ForestConfig(), fraction=0.8, test_fraction=0.1,
                     seed=42, n_jobs=1):
    """Evaluate the three baselines and the IG-selected forest on one shared split."""
    train, test = split(matrix, test_fraction, seed)
    proposed, report = proposed_pipeline(train, forest_config, fraction, n_jobs)
    models = [
        train_decision_tree(train),
        train_nb(train),
        train_forest(train, forest_config, n_jobs=n_jobs),
        proposed,
    ]
    rows = tuple((name, evaluate(m, test)) for name, m in zip(ROW_NAMES, models))
    return ComparisonTable(rows, len(train), len(test), len(report.retained))
