"""Static PE import mining and random-forest malware triage."""

__version__ = "0.1.0"

from pesentinel.pe import (  # noqa: E402
    ImportProfile,
    ImportedSymbol,
    ParseNote,
    build_minimal_pe,
    parse_imports,
)

__all__ = [
    "__version__",
    "ImportProfile",
    "ImportedSymbol",
    "ParseNote",
    "build_minimal_pe",
    "parse_imports",
]
