"""Hardened import-table reader for PE32 and PE32+ images.

Only the structures needed to enumerate imports are touched: DOS header,
PE signature, COFF header, optional header (magic and data directories),
section table, and the import descriptor / thunk / hint-name chain.  Every
read is bounds-checked and every loop is capped, so arbitrary input either
produces an :class:`ImportProfile` or raises a :class:`PEError` subclass.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field
from typing import Optional

MZ_MAGIC = b"MZ"
PE_SIGNATURE = b"PE\x00\x00"
E_LFANEW_OFFSET = 0x3C
COFF_HEADER_SIZE = 20
SECTION_HEADER_SIZE = 40
IMPORT_DESCRIPTOR_SIZE = 20

PE32_MAGIC = 0x10B
PE32PLUS_MAGIC = 0x20B

# (offset of NumberOfRvaAndSizes, offset of the data-directory array)
_OPTIONAL_LAYOUT = {
    PE32_MAGIC: (92, 96),
    PE32PLUS_MAGIC: (108, 112),
}

DIR_IMPORT = 1
DIR_BOUND_IMPORT = 11
DIR_DELAY_IMPORT = 13

ENV_MAX_FILE_SIZE = "PESENTINEL_MAX_FILE_SIZE"


class PEError(ValueError):
    """Base class for structured parse failures."""

    @property
    def code(self):
        return type(self).__name__


class NotExecutable(PEError):
    pass


class NoPEHeader(PEError):
    pass


class MalformedHeader(PEError):
    pass


class TooLarge(PEError):
    pass


@dataclass(frozen=True)
class Limits:
    max_descriptors: int = 4096
    max_symbols_per_dll: int = 16384
    max_file_size: int = 256 * 1024 * 1024
    max_name_length: int = 4096

    @classmethod
    def from_env(cls, environ=None):
        environ = os.environ if environ is None else environ
        raw = environ.get(ENV_MAX_FILE_SIZE)
        if not raw:
            return cls()
        try:
            size = int(raw)
        except ValueError:
            raise ValueError(f"{ENV_MAX_FILE_SIZE} must be an integer byte count, got {raw!r}")
        if size <= 0:
            raise ValueError(f"{ENV_MAX_FILE_SIZE} must be positive, got {size}")
        return cls(max_file_size=size)


@dataclass(frozen=True)
class ImportedSymbol:
    dll: str
    name: Optional[str] = None
    ordinal: Optional[int] = None

    def __post_init__(self):
        if not self.dll:
            raise ValueError("dll must be non-empty")
        if (self.name is None) == (self.ordinal is None):
            raise ValueError("exactly one of name and ordinal must be set")

    @property
    def feature_name(self):
        """Key used in the feature vocabulary: the bare name, or ``ord:<dll>#<n>``."""
        if self.name is not None:
            return self.name
        return f"ord:{self.dll}#{self.ordinal}"


@dataclass(frozen=True)
class ParseNote:
    severity: str  # "warning" | "info"
    message: str
    file_offset: Optional[int] = None


@dataclass(frozen=True)
class ImportProfile:
    content_hash: str
    source_name: str
    imports: frozenset = frozenset()
    diagnostics: tuple = field(default_factory=tuple)

    def feature_names(self):
        return sorted({sym.feature_name for sym in self.imports})


def content_hash(data):
    return hashlib.sha256(data).hexdigest()


@dataclass
class _Section:
    virtual_address: int
    raw_size: int
    raw_pointer: int


class _Reader:
    def __init__(self, data, sections, limits):
        self.data = data
        self.sections = sections
        self.limits = limits

    def u(self, offset, size):
        if offset < 0 or offset + size > len(self.data):
            return None
        return int.from_bytes(self.data[offset:offset + size], "little")

    def rva_to_offset(self, rva):
        for s in self.sections:
            if s.virtual_address <= rva < s.virtual_address + s.raw_size:
                offset = s.raw_pointer + (rva - s.virtual_address)
                if offset < len(self.data):
                    return offset
                return None
        return None

    def cstring(self, offset):
        """NUL-terminated printable ASCII at offset, or None."""
        end = self.data.find(b"\x00", offset, offset + self.limits.max_name_length + 1)
        if end < 0:
            return None
        raw = self.data[offset:end]
        if not raw or any(b < 0x20 or b > 0x7E for b in raw):
            return None
        return raw.decode("ascii")


def parse_imports(data, source_name="", limits=None):
    """Extract the imported symbols of a PE image.

    Raises NotExecutable, NoPEHeader, MalformedHeader or TooLarge; any
    recoverable damage below the headers becomes a warning ParseNote and
    the affected entry is skipped.
    """
    data = bytes(data)
    limits = limits or Limits.from_env()
    if len(data) > limits.max_file_size:
        raise TooLarge(f"{len(data)} bytes exceeds the {limits.max_file_size}-byte cap")
    if len(data) < 64 or data[:2] != MZ_MAGIC:
        raise NotExecutable("missing MZ header")

    (e_lfanew,) = struct.unpack_from("<I", data, E_LFANEW_OFFSET)
    if e_lfanew + 4 > len(data) or data[e_lfanew:e_lfanew + 4] != PE_SIGNATURE:
        raise NoPEHeader(f"no PE signature at e_lfanew=0x{e_lfanew:x}")

    coff = e_lfanew + 4
    if coff + COFF_HEADER_SIZE > len(data):
        raise MalformedHeader(f"COFF header truncated at 0x{coff:x}")
    n_sections, = struct.unpack_from("<H", data, coff + 2)
    opt_size, = struct.unpack_from("<H", data, coff + 16)

    opt = coff + COFF_HEADER_SIZE
    if opt + 2 > len(data) or opt_size < 2:
        raise MalformedHeader(f"optional header truncated at 0x{opt:x}")
    magic, = struct.unpack_from("<H", data, opt)
    if magic not in _OPTIONAL_LAYOUT:
        raise MalformedHeader(f"unknown optional header magic 0x{magic:x}")
    count_off, dirs_off = _OPTIONAL_LAYOUT[magic]
    if opt_size < dirs_off or opt + opt_size > len(data):
        raise MalformedHeader(f"optional header truncated ({opt_size} bytes declared)")

    sec_table = opt + opt_size
    if sec_table + n_sections * SECTION_HEADER_SIZE > len(data):
        raise MalformedHeader(f"section table truncated at 0x{sec_table:x}")
    sections = []
    for i in range(n_sections):
        va, raw_size, raw_ptr = struct.unpack_from("<III", data, sec_table + i * SECTION_HEADER_SIZE + 12)
        sections.append(_Section(va, raw_size, raw_ptr))

    reader = _Reader(data, sections, limits)
    notes = []
    n_dirs, = struct.unpack_from("<I", data, opt + count_off)
    n_dirs = min(n_dirs, (opt_size - dirs_off) // 8)

    def directory(index):
        if index >= n_dirs:
            return 0, 0
        return struct.unpack_from("<II", data, opt + dirs_off + index * 8)

    for index, what in ((DIR_BOUND_IMPORT, "bound import"), (DIR_DELAY_IMPORT, "delay-load import")):
        if directory(index)[0]:
            notes.append(ParseNote("info", f"{what} directory present; ignored", opt + dirs_off + index * 8))

    import_rva, _ = directory(DIR_IMPORT)
    imports = set()
    if import_rva == 0:
        notes.append(ParseNote("info", "import directory absent"))
    else:
        _walk_descriptors(reader, import_rva, magic == PE32PLUS_MAGIC, imports, notes)

    return ImportProfile(
        content_hash=content_hash(data),
        source_name=source_name,
        imports=frozenset(imports),
        diagnostics=tuple(notes),
    )


def _walk_descriptors(reader, import_rva, wide, imports, notes):
    limits = reader.limits
    for i in range(limits.max_descriptors):
        rva = import_rva + i * IMPORT_DESCRIPTOR_SIZE
        offset = reader.rva_to_offset(rva)
        if offset is None or offset + IMPORT_DESCRIPTOR_SIZE > len(reader.data):
            notes.append(ParseNote("warning", f"import descriptor {i} at RVA 0x{rva:x} is outside every section"))
            return
        if not any(reader.data[offset:offset + IMPORT_DESCRIPTOR_SIZE]):
            return
        oft, _, forwarder, name_rva, first_thunk = struct.unpack_from("<IIIII", reader.data, offset)
        if forwarder not in (0, 0xFFFFFFFF):
            notes.append(ParseNote("info", f"descriptor {i} forwarder chain ignored", offset + 8))

        name_off = reader.rva_to_offset(name_rva)
        dll = reader.cstring(name_off) if name_off is not None else None
        if dll is None:
            notes.append(ParseNote("warning", f"descriptor {i}: unreadable DLL name at RVA 0x{name_rva:x}", offset + 12))
            continue
        dll = dll.lower()

        thunk_rva = oft or first_thunk
        if not thunk_rva:
            notes.append(ParseNote("warning", f"descriptor {i} ({dll}) has no thunk array", offset))
            continue
        _walk_thunks(reader, dll, thunk_rva, wide, imports, notes)
    else:
        notes.append(ParseNote("warning", f"descriptor cap of {limits.max_descriptors} reached; rest ignored"))


def _walk_thunks(reader, dll, thunk_rva, wide, imports, notes):
    size = 8 if wide else 4
    ordinal_flag = 1 << (63 if wide else 31)
    limits = reader.limits
    for j in range(limits.max_symbols_per_dll):
        rva = thunk_rva + j * size
        offset = reader.rva_to_offset(rva)
        value = reader.u(offset, size) if offset is not None else None
        if value is None:
            notes.append(ParseNote("warning", f"{dll}: thunk {j} at RVA 0x{rva:x} is outside every section"))
            return
        if value == 0:
            return
        if value & ordinal_flag:
            imports.add(ImportedSymbol(dll, ordinal=value & 0xFFFF))
            continue
        hint_rva = value & 0x7FFFFFFF
        hint_off = reader.rva_to_offset(hint_rva)
        name = reader.cstring(hint_off + 2) if hint_off is not None else None
        if name is None:
            notes.append(ParseNote("warning", f"{dll}: unreadable hint/name entry at RVA 0x{hint_rva:x}", offset))
            continue
        imports.add(ImportedSymbol(dll, name=name))
    else:
        notes.append(ParseNote("warning", f"{dll}: symbol cap of {limits.max_symbols_per_dll} reached"))
