"""Emit small, structurally valid PE images with a chosen import table.

Used as the round-trip oracle for the parser and as the substrate for
synthetic corpora.  Layout: 64-byte DOS header, PE signature at 0x40, COFF
header, optional header with 16 data directories, and a single ``.idata``
section at RVA 0x1000 holding descriptors, lookup tables, address tables,
DLL names and hint/name entries, in that order.
"""

import struct

from pesentinel.pe.parser import (
    PE32_MAGIC,
    PE32PLUS_MAGIC,
    IMPORT_DESCRIPTOR_SIZE,
    SECTION_HEADER_SIZE,
)

PE32 = "PE32"
PE32PLUS = "PE32+"

FILE_ALIGNMENT = 0x200
SECTION_ALIGNMENT = 0x1000
SECTION_RVA = 0x1000
MAX_NAME_LENGTH = 4096


class InvalidSymbolName(ValueError):
    pass


def _align(value, alignment):
    return (value + alignment - 1) // alignment * alignment


def _check_name(text, what):
    if not isinstance(text, str) or not text:
        raise InvalidSymbolName(f"{what} must be a non-empty string")
    if len(text) > MAX_NAME_LENGTH:
        raise InvalidSymbolName(f"{what} longer than {MAX_NAME_LENGTH} characters")
    if any(not 0x20 <= ord(c) <= 0x7E for c in text):
        raise InvalidSymbolName(f"{what} {text!r} is not printable ASCII")
    return text.encode("ascii")


def build_minimal_pe(imports, flavor=PE32, timestamp=0):
    """Build a PE image importing ``imports`` (``(dll, name)`` pairs) by name.

    Duplicates are dropped; DLL groups and names keep first-seen order.
    ``timestamp`` lands in the COFF TimeDateStamp field and is the only way
    to make two images with identical imports hash differently.
    """
    if flavor not in (PE32, PE32PLUS):
        raise ValueError(f"flavor must be {PE32!r} or {PE32PLUS!r}")
    wide = flavor == PE32PLUS
    thunk_size = 8 if wide else 4

    groups = {}
    for dll, name in imports:
        dll_b = _check_name(dll, "dll")
        name_b = _check_name(name, "name")
        names = groups.setdefault(dll_b, [])
        if name_b not in names:
            names.append(name_b)

    # section-relative layout
    cursor = (len(groups) + 1) * IMPORT_DESCRIPTOR_SIZE
    ilt_at, iat_at = {}, {}
    for dll_b, names in groups.items():
        ilt_at[dll_b] = cursor
        cursor += (len(names) + 1) * thunk_size
    for dll_b, names in groups.items():
        iat_at[dll_b] = cursor
        cursor += (len(names) + 1) * thunk_size
    dllname_at = {}
    for dll_b in groups:
        dllname_at[dll_b] = cursor
        cursor += len(dll_b) + 1
    hint_at = {}
    for dll_b, names in groups.items():
        for name_b in names:
            cursor = _align(cursor, 2)
            hint_at[dll_b, name_b] = cursor
            cursor += 2 + len(name_b) + 1
    virtual_size = max(cursor, 1)

    body = bytearray(_align(virtual_size, FILE_ALIGNMENT))
    thunk_fmt = "<Q" if wide else "<I"
    for i, (dll_b, names) in enumerate(groups.items()):
        struct.pack_into(
            "<IIIII", body, i * IMPORT_DESCRIPTOR_SIZE,
            SECTION_RVA + ilt_at[dll_b], 0, 0,
            SECTION_RVA + dllname_at[dll_b], SECTION_RVA + iat_at[dll_b],
        )
        for j, name_b in enumerate(names):
            entry = SECTION_RVA + hint_at[dll_b, name_b]
            struct.pack_into(thunk_fmt, body, ilt_at[dll_b] + j * thunk_size, entry)
            struct.pack_into(thunk_fmt, body, iat_at[dll_b] + j * thunk_size, entry)
            start = hint_at[dll_b, name_b] + 2
            body[start:start + len(name_b)] = name_b
        start = dllname_at[dll_b]
        body[start:start + len(dll_b)] = dll_b

    opt_size = 240 if wide else 224
    e_lfanew = 0x40
    headers_end = e_lfanew + 4 + 20 + opt_size + SECTION_HEADER_SIZE
    size_of_headers = _align(headers_end, FILE_ALIGNMENT)
    size_of_image = SECTION_RVA + _align(virtual_size, SECTION_ALIGNMENT)

    dos = bytearray(64)
    dos[0:2] = b"MZ"
    struct.pack_into("<I", dos, 0x3C, e_lfanew)

    machine, characteristics = (0x8664, 0x0022) if wide else (0x14C, 0x0102)
    coff = struct.pack("<HHIIIHH", machine, 1, timestamp & 0xFFFFFFFF, 0, 0, opt_size, characteristics)

    opt = bytearray(opt_size)
    struct.pack_into("<H", opt, 0, PE32PLUS_MAGIC if wide else PE32_MAGIC)
    struct.pack_into("<I", opt, 16, SECTION_RVA)  # AddressOfEntryPoint
    struct.pack_into("<I", opt, 20, SECTION_RVA)  # BaseOfCode
    if wide:
        struct.pack_into("<Q", opt, 24, 0x140000000)
    else:
        struct.pack_into("<I", opt, 28, 0x400000)
    struct.pack_into("<II", opt, 32, SECTION_ALIGNMENT, FILE_ALIGNMENT)
    struct.pack_into("<HH", opt, 48, 6, 0)  # subsystem version
    struct.pack_into("<II", opt, 56, size_of_image, size_of_headers)
    struct.pack_into("<H", opt, 68, 3)  # console subsystem
    dirs = 112 if wide else 96
    struct.pack_into("<I", opt, dirs - 4, 16)
    if groups:
        struct.pack_into("<II", opt, dirs + 8, SECTION_RVA, (len(groups) + 1) * IMPORT_DESCRIPTOR_SIZE)

    section = bytearray(SECTION_HEADER_SIZE)
    section[0:8] = b".idata\x00\x00"
    struct.pack_into(
        "<IIII", section, 8, virtual_size, SECTION_RVA, len(body), size_of_headers,
    )
    struct.pack_into("<I", section, 36, 0xC0000040)

    image = bytearray(dos)
    image += b"PE\x00\x00" + coff + opt + section
    image += bytes(size_of_headers - len(image))
    image += body
    return bytes(image)
