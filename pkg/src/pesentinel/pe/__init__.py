from pesentinel.pe.builder import PE32, PE32PLUS, InvalidSymbolName, build_minimal_pe
from pesentinel.pe.parser import (
    ImportedSymbol,
    ImportProfile,
    Limits,
    MalformedHeader,
    NoPEHeader,
    NotExecutable,
    ParseNote,
    PEError,
    TooLarge,
    content_hash,
    parse_imports,
)

__all__ = [
    "PE32",
    "PE32PLUS",
    "InvalidSymbolName",
    "build_minimal_pe",
    "ImportedSymbol",
    "ImportProfile",
    "Limits",
    "MalformedHeader",
    "NoPEHeader",
    "NotExecutable",
    "ParseNote",
    "PEError",
    "TooLarge",
    "content_hash",
    "parse_imports",
]
