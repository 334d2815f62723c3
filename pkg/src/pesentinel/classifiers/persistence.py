"""Versioned, checksummed JSON model files.

Layout::

    {"format": "pesentinel-model", "version": 1,
     "checksum": "<sha256 of the canonical payload>",
     "payload": {"kind": ..., "params": ..., "vocabulary": [...], ...}}

The canonical form is ``json.dumps(payload, sort_keys=True,
separators=(",", ":"))``.  Trees are stored as flat preorder node lists:
``[feature, present_index, absent_index]`` for splits and
``[label, n_malware, n_benign]`` for leaves.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from pesentinel.classifiers._base import BadConfig, ClassifierError
from pesentinel.classifiers.forest import RandomForestClassifier
from pesentinel.classifiers.naive_bayes import BernoulliNaiveBayes
from pesentinel.classifiers.tree import DecisionTreeClassifier, Leaf, Split
from pesentinel.datamine import BENIGN, MALWARE, FormatVersionMismatch

MODEL_FORMAT = "pesentinel-model"
MODEL_VERSION = 1

KINDS = {
    "random_forest": RandomForestClassifier,
    "decision_tree": DecisionTreeClassifier,
    "naive_bayes": BernoulliNaiveBayes,
}


class CorruptModelFile(ClassifierError):
    pass


def _canonical(payload):
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def _kind_of(model):
    for kind, cls in KINDS.items():
        if type(model) is cls:
            return kind
    raise TypeError(f"cannot serialize {type(model).__name__}")


def tree_to_list(root):
    nodes = []
    stack = [(root, None, None)]
    while stack:
        node, parent, slot = stack.pop()
        index = len(nodes)
        if parent is not None:
            nodes[parent][slot] = index
        if isinstance(node, Leaf):
            nodes.append([node.label, node.n_malware, node.n_benign])
        else:
            nodes.append([node.feature, None, None])
            stack.append((node.absent_child, index, 2))
            stack.append((node.present_child, index, 1))
    return nodes


def tree_from_list(nodes, allowed_features):
    if not isinstance(nodes, list) or not nodes:
        raise CorruptModelFile("empty tree")
    built = [None] * len(nodes)
    for i in range(len(nodes) - 1, -1, -1):
        entry = nodes[i]
        if not isinstance(entry, list) or len(entry) != 3:
            raise CorruptModelFile(f"bad tree node {entry!r}")
        head, a, b = entry
        if head in (MALWARE, BENIGN):
            if not (isinstance(a, int) and isinstance(b, int) and a >= 0 and b >= 0 and a + b > 0):
                raise CorruptModelFile(f"bad leaf counts {entry!r}")
            built[i] = Leaf(head, a, b)
        else:
            if head not in allowed_features:
                raise CorruptModelFile(f"split on feature {head!r} outside the retained set")
            if not (isinstance(a, int) and isinstance(b, int) and i < a < len(nodes) and i < b < len(nodes)):
                raise CorruptModelFile(f"bad child indices in {entry!r}")
            if built[a] is None or built[b] is None:
                raise CorruptModelFile("tree node referenced twice")
            built[i] = Split(head, built[a], built[b])
            built[a] = built[b] = None  # each child has exactly one parent
    return built[0]


def model_to_payload(model, provenance=None):
    kind = _kind_of(model)
    params = model.get_params()
    params.pop("n_jobs", None)
    payload = {
        "kind": kind,
        "params": params,
        "n_features": int(model.n_features_in_),
        "features": [int(f) for f in model.features_],
        "vocabulary": list(getattr(model, "vocabulary_", [])),
        "vocabulary_hash": getattr(model, "vocabulary_hash_", None),
        "provenance": provenance if provenance is not None else getattr(model, "provenance_", {}),
    }
    if kind == "random_forest":
        payload["features_per_split"] = int(model.features_per_split_)
        payload["trees"] = [tree_to_list(t) for t in model.trees_]
    elif kind == "decision_tree":
        payload["trees"] = [tree_to_list(model.tree_)]
    else:
        payload["log_priors"] = model.log_priors_.tolist()
        payload["log_likelihood_present"] = model.log_likelihood_present_.tolist()
        payload["log_likelihood_absent"] = model.log_likelihood_absent_.tolist()
    return payload


def dumps_model(model, provenance=None):
    payload = model_to_payload(model, provenance)
    body = _canonical(payload)
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "checksum": hashlib.sha256(body.encode("utf-8")).hexdigest(),
        "payload": payload,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def save_model(model, path, provenance=None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_model(model, provenance))


def loads_model(text):
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptModelFile(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise CorruptModelFile(f"not a {MODEL_FORMAT} document")
    if doc.get("version") != MODEL_VERSION:
        raise FormatVersionMismatch(f"model version {doc.get('version')!r}, expected {MODEL_VERSION}")
    payload = doc.get("payload")
    if not isinstance(payload, dict):
        raise CorruptModelFile("missing payload")
    checksum = hashlib.sha256(_canonical(payload).encode("utf-8")).hexdigest()
    if checksum != doc.get("checksum"):
        raise CorruptModelFile("checksum mismatch")
    try:
        model = _build(payload)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ClassifierError):
            raise
        raise CorruptModelFile(f"malformed payload: {exc}") from exc
    model.model_version_ = checksum[:12]
    return model


def load_model(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorruptModelFile(f"{path}: not UTF-8") from exc
    return loads_model(text)


def _build(payload):
    kind = payload["kind"]
    if kind not in KINDS:
        raise CorruptModelFile(f"unknown model kind {kind!r}")
    model = KINDS[kind](**payload["params"])
    n_features = payload["n_features"]
    features = payload["features"]
    model.n_features_in_ = int(n_features)
    model.classes_ = np.array([0, 1])
    model.features_ = [int(f) for f in features]
    model.vocabulary_ = list(payload.get("vocabulary", []))
    model.vocabulary_hash_ = payload.get("vocabulary_hash")
    model.provenance_ = payload.get("provenance", {})
    if model.vocabulary_ and len(model.vocabulary_) != model.n_features_in_:
        raise CorruptModelFile("vocabulary size disagrees with n_features")
    allowed = set(model.features_)
    if kind == "random_forest":
        trees = payload["trees"]
        if not trees or len(trees) != model.n_trees:
            raise BadConfig(f"model declares {model.n_trees} trees but stores {len(trees)}")
        model.features_per_split_ = int(payload["features_per_split"])
        model.trees_ = [tree_from_list(t, allowed) for t in trees]
    elif kind == "decision_tree":
        (tree,) = payload["trees"]
        model.tree_ = tree_from_list(tree, allowed)
    else:
        model.log_priors_ = np.array(payload["log_priors"], dtype=np.float64)
        model.log_likelihood_present_ = np.array(payload["log_likelihood_present"], dtype=np.float64)
        model.log_likelihood_absent_ = np.array(payload["log_likelihood_absent"], dtype=np.float64)
        shape = (2, len(model.features_))
        if (model.log_priors_.shape != (2,) or model.log_likelihood_present_.shape != shape
                or model.log_likelihood_absent_.shape != shape):
            raise CorruptModelFile("naive Bayes tables have the wrong shape")
    return model
