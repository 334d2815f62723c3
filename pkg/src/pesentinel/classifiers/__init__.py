"""From-scratch classifiers over binary import-presence vectors."""

from pesentinel.classifiers._base import (
    BadConfig,
    ClassifierError,
    EmptyTrainingSet,
    Prediction,
    SingleClassCorpus,
    VocabularyMismatch,
    bind_vocabulary,
    check_vocabulary,
)
from pesentinel.classifiers.forest import (
    ForestConfig,
    RandomForestClassifier,
    predict_forest,
    train_forest,
)
from pesentinel.classifiers.naive_bayes import BernoulliNaiveBayes, predict_nb, train_nb
from pesentinel.classifiers.persistence import (
    CorruptModelFile,
    dumps_model,
    load_model,
    loads_model,
    save_model,
)
from pesentinel.classifiers.tree import DecisionTreeClassifier, Leaf, Split, TreeNode, grow_tree


def train_tree(matrix, features=None, max_depth=None):
    """Grow one tree over the whole matrix and return its root node."""
    if len(matrix) == 0:
        raise EmptyTrainingSet("cannot grow a tree on zero samples")
    features = range(len(matrix.vocabulary)) if features is None else features
    return grow_tree(matrix.X, matrix.y, list(features), max_depth=max_depth)


def train_decision_tree(matrix, features=None, max_depth=None):
    """Estimator form of :func:`train_tree`, bound to the matrix vocabulary."""
    return bind_vocabulary(DecisionTreeClassifier(max_depth=max_depth).fit(matrix.X, matrix.y, features), matrix)


__all__ = [
    "BadConfig",
    "BernoulliNaiveBayes",
    "ClassifierError",
    "CorruptModelFile",
    "DecisionTreeClassifier",
    "EmptyTrainingSet",
    "ForestConfig",
    "Leaf",
    "Prediction",
    "RandomForestClassifier",
    "SingleClassCorpus",
    "Split",
    "TreeNode",
    "VocabularyMismatch",
    "bind_vocabulary",
    "check_vocabulary",
    "dumps_model",
    "grow_tree",
    "load_model",
    "loads_model",
    "predict_forest",
    "predict_nb",
    "save_model",
    "train_decision_tree",
    "train_forest",
    "train_nb",
    "train_tree",
]
