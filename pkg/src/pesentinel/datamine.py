"""The binaries-by-functions presence matrix, its ingestion and persistence."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from pesentinel import __version__
from pesentinel.pe import PEError, parse_imports

log = logging.getLogger(__name__)

MALWARE = "malware"
BENIGN = "benign"
LABELS = (MALWARE, BENIGN)

MATRIX_FORMAT = "pesentinel-matrix"
MATRIX_VERSION = 1


class DatamineError(Exception):
    pass


class EmptyCorpus(DatamineError):
    pass


class LabelConflict(DatamineError):
    pass


class CorruptMatrixFile(DatamineError):
    pass


class FormatVersionMismatch(DatamineError):
    pass


def normalize_label(label):
    if isinstance(label, str):
        low = label.strip().lower()
        if low in ("malware", "m", "1", "yes", "virus"):
            return MALWARE
        if low in ("benign", "b", "0", "no", "clean"):
            return BENIGN
    elif label in (0, 1):
        return MALWARE if label else BENIGN
    raise ValueError(f"unknown label {label!r}; expected 'malware' or 'benign'")


class Vocabulary:
    """Ordered function names with a dense 0-based id for each."""

    def __init__(self, names=()):
        self.names = []
        self.index = {}
        for name in names:
            if name in self.index:
                raise ValueError(f"duplicate vocabulary entry {name!r}")
            self.add(name)

    def add(self, name):
        fid = self.index.get(name)
        if fid is None:
            fid = self.index[name] = len(self.names)
            self.names.append(name)
        return fid

    def __len__(self):
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.names == other.names

    def __repr__(self):
        return f"Vocabulary({len(self.names)} names)"

    @property
    def digest(self):
        """sha256 over the newline-joined names; binds models to a vocabulary."""
        return hashlib.sha256("\n".join(self.names).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Sample:
    content_hash: str
    source_name: str
    label: str
    features: frozenset  # set bit ids

    @property
    def is_malware(self):
        return self.label == MALWARE


@dataclass(frozen=True)
class FeatureMatrix:
    vocabulary: Vocabulary
    samples: tuple
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        n = len(self.vocabulary)
        seen = set()
        for s in self.samples:
            if s.content_hash in seen:
                raise ValueError(f"duplicate sample {s.content_hash}")
            seen.add(s.content_hash)
            if s.label not in LABELS:
                raise ValueError(f"bad label {s.label!r}")
            if any(not 0 <= f < n for f in s.features):
                raise ValueError(f"sample {s.content_hash} sets a bit outside the vocabulary")

    def __len__(self):
        return len(self.samples)

    @cached_property
    def X(self):
        out = np.zeros((len(self.samples), len(self.vocabulary)), dtype=np.uint8)
        for i, s in enumerate(self.samples):
            if s.features:
                out[i, sorted(s.features)] = 1
        return out

    @cached_property
    def y(self):
        return np.array([s.is_malware for s in self.samples], dtype=np.int64)

    def label_counts(self):
        n_mal = int(self.y.sum())
        return {MALWARE: n_mal, BENIGN: len(self.samples) - n_mal}

    def take(self, indices, note=None):
        provenance = dict(self.provenance)
        if note:
            provenance["subset"] = note
        return FeatureMatrix(self.vocabulary, [self.samples[i] for i in indices], provenance)

    @classmethod
    def from_profiles(cls, labeled_profiles, provenance=None):
        """Assemble a matrix from ``(ImportProfile, label)`` pairs, in order."""
        vocab = Vocabulary()
        samples = []
        by_hash = {}
        duplicates = []
        for profile, label in labeled_profiles:
            label = normalize_label(label)
            prior = by_hash.get(profile.content_hash)
            if prior is not None:
                if prior != label:
                    raise LabelConflict(
                        f"{profile.source_name} ({profile.content_hash}) labeled both {prior} and {label}"
                    )
                log.warning("dropping duplicate binary %s (%s)", profile.source_name, profile.content_hash)
                duplicates.append(profile.source_name)
                continue
            by_hash[profile.content_hash] = label
            ids = frozenset(vocab.add(name) for name in profile.feature_names())
            samples.append(Sample(profile.content_hash, profile.source_name, label, ids))
        provenance = dict(provenance or {})
        if duplicates:
            provenance["duplicates"] = duplicates
        return cls(vocab, samples, provenance)


def vectorize(profile, vocabulary):
    """Presence vector of ``profile`` over ``vocabulary`` plus the count of unknown names."""
    vec = np.zeros(len(vocabulary), dtype=np.uint8)
    unknown = 0
    for name in profile.feature_names():
        fid = vocabulary.index.get(name)
        if fid is None:
            unknown += 1
        else:
            vec[fid] = 1
    return vec, unknown


def _list_files(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {directory}")
    return sorted(str(p) for p in directory.rglob("*") if p.is_file())


def read_manifest(path):
    """``path,label`` lines; relative paths resolve against the manifest's folder."""
    base = Path(path).parent
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'path,label'")
            if lineno == 1 and row[1].strip().lower() == "label":
                continue
            file_path = Path(row[0].strip())
            if not file_path.is_absolute():
                file_path = base / file_path
            entries.append((str(file_path), normalize_label(row[1])))
    return entries


def ingest(sources=(), parser=parse_imports, manifest=None, threads=1):
    """Parse labeled corpora into a FeatureMatrix.

    ``sources`` is a list of ``(directory, label)``; ``manifest`` names a
    ``path,label`` file.  Files are processed in sorted path order (manifest
    entries after directories, in file order); parse failures are skipped
    and listed in the provenance.
    """
    entries = []
    for directory, label in sources:
        label = normalize_label(label)
        entries.extend((p, label) for p in _list_files(directory))
    if manifest is not None:
        entries.extend(read_manifest(manifest))

    def work(entry):
        path, _ = entry
        try:
            data = Path(path).read_bytes()
            return parser(data, source_name=os.path.basename(path)), None
        except (PEError, OSError) as exc:
            return None, f"{type(exc).__name__}: {exc}"

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, entries))
    else:
        results = [work(e) for e in entries]

    parsed, skipped = [], []
    for (path, label), (profile, error) in zip(entries, results):
        if profile is None:
            skipped.append({"path": path, "error": error})
        else:
            parsed.append((profile, label))
    if not parsed:
        raise EmptyCorpus(f"no parseable PE files among {len(entries)} inputs")

    provenance = {
        "corpus": [{"path": str(d), "label": normalize_label(l)} for d, l in sources],
        "tool_version": __version__,
        "files_seen": len(entries),
        "skipped": skipped,
    }
    if manifest is not None:
        provenance["manifest"] = str(manifest)
    return FeatureMatrix.from_profiles(parsed, provenance)


def _encode_bits(features, width):
    value = 0
    for f in features:
        value |= 1 << f
    return value.to_bytes((width + 7) // 8, "little").hex()


def _decode_bits(text, width):
    raw = bytes.fromhex(text)
    if len(raw) != (width + 7) // 8:
        raise CorruptMatrixFile("bitset length does not match vocabulary size")
    value = int.from_bytes(raw, "little")
    if value >> width:
        raise CorruptMatrixFile("bitset sets bits beyond the vocabulary")
    return frozenset(i for i in range(width) if value >> i & 1)


def matrix_to_dict(m):
    width = len(m.vocabulary)
    return {
        "format": MATRIX_FORMAT,
        "version": MATRIX_VERSION,
        "vocabulary": list(m.vocabulary.names),
        "samples": [
            {
                "content_hash": s.content_hash,
                "source_name": s.source_name,
                "label": s.label,
                "bits": _encode_bits(s.features, width),
            }
            for s in m.samples
        ],
        "provenance": m.provenance,
    }


def save_matrix(m, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(matrix_to_dict(m), fh, indent=1)
        fh.write("\n")


def load_matrix(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptMatrixFile(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MATRIX_FORMAT:
        raise CorruptMatrixFile(f"{path}: not a {MATRIX_FORMAT} document")
    if doc.get("version") != MATRIX_VERSION:
        raise FormatVersionMismatch(f"{path}: version {doc.get('version')!r}, expected {MATRIX_VERSION}")
    try:
        vocab = Vocabulary(doc["vocabulary"])
        width = len(vocab)
        samples = [
            Sample(s["content_hash"], s["source_name"], s["label"], _decode_bits(s["bits"], width))
            for s in doc["samples"]
        ]
        return FeatureMatrix(vocab, samples, doc.get("provenance", {}))
    except CorruptMatrixFile:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptMatrixFile(f"{path}: {exc}") from exc


def export_hashmap_csv(m, path):
    """Write the matrix as ``sample,is_virus,<names...>`` with 0/1 cells."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample", "is_virus", *m.vocabulary.names])
        X = m.X
        for i, s in enumerate(m.samples):
            writer.writerow([s.content_hash, int(s.is_malware), *X[i].tolist()])


def read_hashmap_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["sample", "is_virus"]:
        raise CorruptMatrixFile(f"{path}: missing 'sample,is_virus' header")
    vocab = Vocabulary(rows[0][2:])
    samples = []
    for row in rows[1:]:
        cells = row[2:]
        if len(cells) != len(vocab):
            raise CorruptMatrixFile(f"{path}: row width mismatch for {row[0]}")
        feats = frozenset(i for i, c in enumerate(cells) if c == "1")
        samples.append(Sample(row[0], row[0], normalize_label(row[1]), feats))
    return FeatureMatrix(vocab, samples, {"source": str(path)})
