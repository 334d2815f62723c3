"""One verdict per binary, shared by ``pesentinel scan`` and the HTTP service."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from typing import Optional

from pesentinel.classifiers import dumps_model
from pesentinel.datamine import Vocabulary, vectorize
from pesentinel.pe import PEError, content_hash, parse_imports

log = logging.getLogger(__name__)

ERROR = "error"


@dataclass(frozen=True)
class ScanVerdict:
    content_hash: str
    label: str
    model_version: str
    duration_ms: int
    risk_score: Optional[float] = None
    error: Optional[str] = None
    source_name: str = ""
    unknown_imports: Optional[int] = None

    def as_dict(self):
        doc = {
            "content_hash": self.content_hash,
            "label": self.label,
            "model_version": self.model_version,
            "duration_ms": self.duration_ms,
            "source_name": self.source_name,
        }
        if self.error is None:
            doc["risk_score"] = self.risk_score
            doc["diagnostics"] = {"unknown_imports": self.unknown_imports}
        else:
            doc["error"] = self.error
        return doc

    def text_line(self):
        if self.error is not None:
            return f"{self.content_hash}  ERROR {self.error}  {self.source_name}".rstrip()
        return f"{self.content_hash}  {self.label.upper()}  {self.risk_score:.4f}  {self.source_name}".rstrip()


def rank_key(verdict):
    """Highest risk first, errors last, content hash as the tie-break."""
    if verdict.error is not None:
        return (1, 0.0, verdict.content_hash)
    return (0, -verdict.risk_score, verdict.content_hash)


class Scanner:
    """Wraps a fitted, vocabulary-bound model; safe to share between threads."""

    def __init__(self, model, limits=None):
        if not getattr(model, "vocabulary_", None):
            raise ValueError("model carries no vocabulary; train it through the pipeline helpers")
        self.model = model
        self.limits = limits
        self.vocabulary = Vocabulary(model.vocabulary_)
        version = getattr(model, "model_version_", None)
        if version is None:
            version = json.loads(dumps_model(model))["checksum"][:12]
        self.model_version = version

    def scan(self, data, source_name=""):
        start = time.perf_counter()
        digest = content_hash(bytes(data))
        try:
            profile = parse_imports(data, source_name=source_name, limits=self.limits)
        except PEError as exc:
            return self._verdict(start, digest, ERROR, source_name, error=exc.code)
        except Exception:  # parser is meant to be total; never let a sample take the scanner down
            log.exception("unexpected parser failure on %s", digest)
            return self._verdict(start, digest, ERROR, source_name, error="InternalError")
        vec, unknown = vectorize(profile, self.vocabulary)
        pred = self.model.predict_one(vec)
        return self._verdict(start, digest, pred.label, source_name,
                             risk=float(pred.risk_score), unknown=unknown)

    def _verdict(self, start, digest, label, source_name, risk=None, error=None, unknown=None):
        elapsed = int((time.perf_counter() - start) * 1000)
        return ScanVerdict(digest, label, self.model_version, elapsed, risk, error, source_name, unknown)
