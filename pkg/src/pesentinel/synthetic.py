"""Seeded synthetic corpora of labeled PE binaries.

Function ``f`` is named ``fn_%04d``.  Every sample draws each function
independently: planted functions with their per-class probability, all
others with ``background_p``.  Draws consume one ``SplitMix64.random()``
per (sample, function) in sample-major order, malware samples first.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from pesentinel.datamine import BENIGN, MALWARE, FeatureMatrix, Sample, Vocabulary
from pesentinel.pe import PE32, PE32PLUS, build_minimal_pe, content_hash
from pesentinel.rng import SplitMix64

DLLS = ("kernel32.dll", "user32.dll", "advapi32.dll", "ws2_32.dll", "msvcrt.dll")


class BadSpec(ValueError):
    pass


def function_name(fid):
    return f"fn_{fid:04d}"


@dataclass(frozen=True)
class SyntheticSpec:
    n_benign: int = 500
    n_malware: int = 500
    vocab_size: int = 200
    planted: Optional[tuple] = None  # ((function_id, p_malware, p_benign), ...)
    background_p: float = 0.3
    seed: int = 42

    def __post_init__(self):
        if self.planted is None:
            n = min(20, self.vocab_size)
            step = self.vocab_size // n if n else 1
            object.__setattr__(self, "planted", tuple((i * step, 0.9, 0.1) for i in range(n)))
        else:
            object.__setattr__(self, "planted", tuple(tuple(p) for p in self.planted))
        self.validate()

    def validate(self):
        for name in ("n_benign", "n_malware", "vocab_size"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                raise BadSpec(f"{name} must be a positive integer")
        if not 0 <= self.background_p <= 1:
            raise BadSpec("background_p must be in [0, 1]")
        seen = set()
        for fid, p_mal, p_ben in self.planted:
            if not 0 <= fid < self.vocab_size:
                raise BadSpec(f"planted id {fid} outside vocabulary of {self.vocab_size}")
            if fid in seen:
                raise BadSpec(f"function {fid} planted twice")
            seen.add(fid)
            if not (0 <= p_mal <= 1 and 0 <= p_ben <= 1):
                raise BadSpec(f"planted probabilities for {fid} must be in [0, 1]")

    @property
    def planted_ids(self):
        return [p[0] for p in self.planted]


@dataclass
class SyntheticCorpus:
    spec: SyntheticSpec
    matrix: FeatureMatrix
    imports: List[List[str]]  # ground-truth function names per sample
    binaries: List[bytes] = field(repr=False)

    @property
    def source_names(self):
        return [s.source_name for s in self.matrix.samples]

    def write(self, directory):
        """Write ``malware/`` and ``benign/`` folders plus ``manifest.csv``; returns the manifest path."""
        root = Path(directory)
        for label in (MALWARE, BENIGN):
            (root / label).mkdir(parents=True, exist_ok=True)
        rows = []
        for sample, blob in zip(self.matrix.samples, self.binaries):
            rel = f"{sample.label}/{sample.source_name}"
            (root / rel).write_bytes(blob)
            rows.append((rel, sample.label))
        manifest = root / "manifest.csv"
        with open(manifest, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["path", "label"])
            writer.writerows(rows)
        return manifest


def generate_synthetic_corpus(spec=None):
    spec = spec or SyntheticSpec()
    spec.validate()
    rng = SplitMix64(spec.seed)
    probs = {fid: (p_mal, p_ben) for fid, p_mal, p_ben in spec.planted}
    vocab = Vocabulary(function_name(f) for f in range(spec.vocab_size))

    samples, imports, binaries = [], [], []
    labels = [MALWARE] * spec.n_malware + [BENIGN] * spec.n_benign
    counters = {MALWARE: 0, BENIGN: 0}
    for i, label in enumerate(labels):
        present = []
        for fid in range(spec.vocab_size):
            p_mal, p_ben = probs.get(fid, (spec.background_p, spec.background_p))
            p = p_mal if label == MALWARE else p_ben
            if rng.random() < p:
                present.append(fid)
        names = [function_name(f) for f in present]
        blob = build_minimal_pe(
            [(DLLS[f % len(DLLS)], function_name(f)) for f in present],
            flavor=PE32 if i % 2 == 0 else PE32PLUS,
            timestamp=i + 1,
        )
        source = f"{label}_{counters[label]:04d}.exe"
        counters[label] += 1
        samples.append(Sample(content_hash(blob), source, label, frozenset(present)))
        imports.append(names)
        binaries.append(blob)

    provenance = {
        "corpus": "synthetic",
        "spec": {
            "n_benign": spec.n_benign,
            "n_malware": spec.n_malware,
            "vocab_size": spec.vocab_size,
            "planted": [list(p) for p in spec.planted],
            "background_p": spec.background_p,
            "seed": spec.seed,
        },
    }
    return SyntheticCorpus(spec, FeatureMatrix(vocab, samples, provenance), imports, binaries)


def write_synthetic_corpus(spec, directory):
    corpus = generate_synthetic_corpus(spec)
    os.makedirs(directory, exist_ok=True)
    return corpus, corpus.write(directory)
