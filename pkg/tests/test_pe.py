import hashlib
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pe_helpers import (
    COFF,
    E_LFANEW,
    OPT,
    data_dir_offset,
    descriptor,
    descriptor_offset,
    patch,
    rva_to_off,
    section_header_offset,
)
from pesentinel.pe import (
    PE32,
    PE32PLUS,
    ImportedSymbol,
    InvalidSymbolName,
    Limits,
    MalformedHeader,
    NoPEHeader,
    NotExecutable,
    TooLarge,
    build_minimal_pe,
    content_hash,
    parse_imports,
)


def pairs(profile):
    return {(s.dll, s.name) for s in profile.imports}


class TestBuilder:
    def test_format_constants(self):
        data = build_minimal_pe([("a.dll", "F")])
        assert data[:2] == b"\x4d\x5a"
        e_lfanew = struct.unpack_from("<I", data, 0x3C)[0]
        assert data[e_lfanew:e_lfanew + 4] == b"PE\x00\x00"

    @pytest.mark.parametrize("flavor,magic,machine", [(PE32, 0x10B, 0x14C), (PE32PLUS, 0x20B, 0x8664)])
    def test_optional_header_magic(self, flavor, magic, machine):
        data = build_minimal_pe([("k.dll", "X")], flavor)
        assert struct.unpack_from("<H", data, OPT)[0] == magic
        assert struct.unpack_from("<H", data, COFF)[0] == machine

    def test_deterministic(self):
        imports = [("kernel32.dll", "ExitProcess"), ("user32.dll", "MessageBoxA")]
        assert build_minimal_pe(imports) == build_minimal_pe(imports)

    def test_timestamp_changes_hash_only(self):
        a = build_minimal_pe([("k.dll", "F")], timestamp=1)
        b = build_minimal_pe([("k.dll", "F")], timestamp=2)
        assert content_hash(a) != content_hash(b)
        assert parse_imports(a).imports == parse_imports(b).imports

    @pytest.mark.parametrize("dll,name", [
        ("k.dll", "café"),
        ("k.dll", "a\x00b"),
        ("k.dll", ""),
        ("", "F"),
        ("ké.dll", "F"),
        ("k.dll", "tab\tname"),
    ])
    def test_invalid_names(self, dll, name):
        with pytest.raises(InvalidSymbolName):
            build_minimal_pe([(dll, name)])

    def test_empty_import_list(self):
        profile = parse_imports(build_minimal_pe([]))
        assert profile.imports == frozenset()
        assert [n.severity for n in profile.diagnostics] == ["info"]


class TestParseImports:
    def test_two_symbols(self):
        data = build_minimal_pe([("kernel32.dll", "ExitProcess"), ("kernel32.dll", "WriteFile")])
        profile = parse_imports(data, "two.exe")
        assert profile.imports == {
            ImportedSymbol("kernel32.dll", name="ExitProcess"),
            ImportedSymbol("kernel32.dll", name="WriteFile"),
        }
        assert profile.source_name == "two.exe"
        assert profile.diagnostics == ()

    def test_dll_names_lowercased(self):
        profile = parse_imports(build_minimal_pe([("KERNEL32.dll", "ExitProcess")]))
        assert pairs(profile) == {("kernel32.dll", "ExitProcess")}

    def test_not_mz(self):
        with pytest.raises(NotExecutable):
            parse_imports(b"ZZZZ" + bytes(60))

    @pytest.mark.parametrize("data", [b"", b"MZ", b"MZ" + bytes(61)])
    def test_too_short(self, data):
        with pytest.raises(NotExecutable):
            parse_imports(data)

    def test_e_lfanew_out_of_range(self):
        data = patch(build_minimal_pe([("k.dll", "F")]), 0x3C, "<I", 0xFFFFFF00)
        with pytest.raises(NoPEHeader):
            parse_imports(data)

    def test_bad_signature(self):
        data = patch(build_minimal_pe([("k.dll", "F")]), E_LFANEW, "<4s", b"PX\x00\x00")
        with pytest.raises(NoPEHeader):
            parse_imports(data)

    def test_unknown_magic(self):
        data = patch(build_minimal_pe([("k.dll", "F")]), OPT, "<H", 0x107)
        with pytest.raises(MalformedHeader):
            parse_imports(data)

    def test_truncated_coff(self):
        data = build_minimal_pe([("k.dll", "F")])[:COFF + 10]
        with pytest.raises(MalformedHeader):
            parse_imports(data)

    def test_truncated_section_table(self):
        data = patch(build_minimal_pe([("k.dll", "F")]), COFF + 2, "<H", 0xFFFF)
        with pytest.raises(MalformedHeader):
            parse_imports(data)

    def test_optional_header_shorter_than_fixed_fields(self):
        data = patch(build_minimal_pe([("k.dll", "F")]), COFF + 16, "<H", 40)
        with pytest.raises(MalformedHeader):
            parse_imports(data)

    def test_too_large(self):
        data = build_minimal_pe([("k.dll", "F")])
        with pytest.raises(TooLarge):
            parse_imports(data, limits=Limits(max_file_size=len(data) - 1))

    def test_size_cap_from_environment(self, monkeypatch):
        data = build_minimal_pe([("k.dll", "F")])
        monkeypatch.setenv("PESENTINEL_MAX_FILE_SIZE", str(len(data) - 1))
        with pytest.raises(TooLarge):
            parse_imports(data)

    def test_absent_import_directory(self):
        data = build_minimal_pe([("k.dll", "F")])
        data = patch(data, data_dir_offset(data, 1), "<II", 0, 0)
        profile = parse_imports(data)
        assert profile.imports == frozenset()
        assert len(profile.diagnostics) == 1
        assert profile.diagnostics[0].severity == "info"

    def test_fewer_than_two_data_directories(self):
        data = build_minimal_pe([("k.dll", "F")])
        data = patch(data, data_dir_offset(data, 0) - 4, "<I", 1)
        profile = parse_imports(data)
        assert profile.imports == frozenset()
        assert profile.diagnostics[0].severity == "info"

    def test_import_rva_outside_sections(self):
        data = build_minimal_pe([("k.dll", "F")])
        data = patch(data, data_dir_offset(data, 1), "<I", 0x900000)
        profile = parse_imports(data)
        assert profile.imports == frozenset()
        assert [n.severity for n in profile.diagnostics] == ["warning"]

    def test_dll_name_outside_sections_skips_descriptor(self):
        data = build_minimal_pe([("a.dll", "F"), ("b.dll", "G")])
        data = patch(data, descriptor_offset(0) + 12, "<I", 0x7FFF0000)
        profile = parse_imports(data)
        assert pairs(profile) == {("b.dll", "G")}
        assert any(n.severity == "warning" for n in profile.diagnostics)

    def test_hint_name_outside_sections_skips_symbol(self):
        data = build_minimal_pe([("a.dll", "F"), ("a.dll", "G")])
        ilt = descriptor(data, 0)[0]
        data = patch(data, rva_to_off(ilt), "<I", 0x00123456)
        profile = parse_imports(data)
        assert pairs(profile) == {("a.dll", "G")}
        assert profile.diagnostics[0].severity == "warning"

    @pytest.mark.parametrize("flavor", [PE32, PE32PLUS])
    def test_ordinal_import(self, flavor):
        data = build_minimal_pe([("ws2_32.dll", "F"), ("ws2_32.dll", "G")], flavor)
        ilt = descriptor(data, 0)[0]
        if flavor == PE32:
            data = patch(data, rva_to_off(ilt), "<I", 0x80000000 | 23)
        else:
            data = patch(data, rva_to_off(ilt), "<Q", (1 << 63) | 23)
        profile = parse_imports(data)
        assert ImportedSymbol("ws2_32.dll", ordinal=23) in profile.imports
        assert profile.feature_names() == ["G", "ord:ws2_32.dll#23"]

    def test_pe32plus_bit31_is_not_an_ordinal_flag(self):
        data = build_minimal_pe([("k.dll", "F")], PE32PLUS)
        ilt = descriptor(data, 0)[0]
        entry = struct.unpack_from("<Q", data, rva_to_off(ilt))[0]
        # bit 31 set but bit 63 clear: still a hint/name RVA after masking
        data = patch(data, rva_to_off(ilt), "<Q", entry | 0x80000000)
        assert pairs(parse_imports(data)) == {("k.dll", "F")}

    def test_falls_back_to_first_thunk(self):
        data = build_minimal_pe([("k.dll", "F"), ("k.dll", "G")])
        data = patch(data, descriptor_offset(0), "<I", 0)
        assert pairs(parse_imports(data)) == {("k.dll", "F"), ("k.dll", "G")}

    def test_prefers_original_first_thunk(self):
        data = build_minimal_pe([("k.dll", "F"), ("k.dll", "G")])
        iat = descriptor(data, 0)[4]
        data = patch(data, rva_to_off(iat), "<I", 0)  # IAT empty, ILT intact
        assert pairs(parse_imports(data)) == {("k.dll", "F"), ("k.dll", "G")}

    def test_no_thunks_at_all(self):
        data = build_minimal_pe([("k.dll", "F")])
        data = patch(data, descriptor_offset(0), "<I", 0)
        data = patch(data, descriptor_offset(0) + 16, "<I", 0)
        profile = parse_imports(data)
        assert profile.imports == frozenset()
        assert profile.diagnostics[0].severity == "warning"

    def test_self_referencing_thunk_array_terminates(self):
        data = build_minimal_pe([("k.dll", "F")])
        # point the lookup table at the descriptor array itself
        data = patch(data, descriptor_offset(0), "<I", 0x1000)
        profile = parse_imports(data, limits=Limits(max_symbols_per_dll=64))
        assert isinstance(profile.imports, frozenset)

    def test_descriptor_cap(self):
        imports = [(f"d{i}.dll", "F") for i in range(10)]
        profile = parse_imports(build_minimal_pe(imports), limits=Limits(max_descriptors=4))
        assert len(profile.imports) == 4
        assert "cap" in profile.diagnostics[-1].message

    def test_symbol_cap(self):
        imports = [("k.dll", f"F{i}") for i in range(10)]
        profile = parse_imports(build_minimal_pe(imports), limits=Limits(max_symbols_per_dll=3))
        assert len(profile.imports) == 3

    def test_name_length_cap(self):
        data = build_minimal_pe([("k.dll", "A" * 100)])
        profile = parse_imports(data, limits=Limits(max_name_length=50))
        assert profile.imports == frozenset()

    def test_non_printable_name_skipped(self):
        data = build_minimal_pe([("k.dll", "Fx"), ("k.dll", "G")])
        ilt = descriptor(data, 0)[0]
        hint = struct.unpack_from("<I", data, rva_to_off(ilt))[0]
        data = patch(data, rva_to_off(hint) + 2, "<B", 0x07)
        assert pairs(parse_imports(data)) == {("k.dll", "G")}

    def test_delay_and_bound_directories_noted(self):
        data = build_minimal_pe([("k.dll", "F")])
        data = patch(data, data_dir_offset(data, 13), "<II", 0x1000, 32)
        data = patch(data, data_dir_offset(data, 11), "<II", 0x1000, 32)
        profile = parse_imports(data)
        assert pairs(profile) == {("k.dll", "F")}
        assert sum(n.severity == "info" for n in profile.diagnostics) == 2

    def test_section_beyond_file_end(self):
        data = build_minimal_pe([("k.dll", "F")])
        data = patch(data, section_header_offset(data) + 20, "<I", 0x10000000)
        profile = parse_imports(data)
        assert profile.imports == frozenset()
        assert profile.diagnostics[0].severity == "warning"

    def test_determinism(self):
        data = build_minimal_pe([("a.dll", "F"), ("b.dll", "G")])
        data = patch(data, descriptor_offset(0) + 12, "<I", 0x7FFF0000)
        assert parse_imports(data) == parse_imports(bytes(data))

    def test_content_hash_known_vectors(self):
        assert content_hash(b"") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        assert content_hash(b"abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        data = build_minimal_pe([("k.dll", "F")])
        assert parse_imports(data).content_hash == hashlib.sha256(data).hexdigest()


names = st.text(alphabet=st.characters(min_codepoint=0x20, max_codepoint=0x7E), min_size=1, max_size=40)
import_sets = st.lists(st.tuples(names.map(str.lower), names), max_size=60)


@settings(max_examples=200, deadline=None)
@given(imports=import_sets, flavor=st.sampled_from([PE32, PE32PLUS]))
def test_round_trip_property(imports, flavor):
    profile = parse_imports(build_minimal_pe(imports, flavor))
    assert pairs(profile) == set(imports)
    assert all(n.severity == "info" for n in profile.diagnostics)


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=2048))
def test_arbitrary_bytes_are_total(blob):
    try:
        profile = parse_imports(blob)
    except (NotExecutable, NoPEHeader, MalformedHeader):
        return
    assert isinstance(profile.imports, frozenset)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2047), st.integers(0, 255)), max_size=16))
def test_byte_patches_are_total(edits):
    data = bytearray(build_minimal_pe([("k.dll", "F"), ("u.dll", "G"), ("u.dll", "H")]))
    for pos, value in edits:
        if pos < len(data):
            data[pos] = value
    try:
        parse_imports(bytes(data))
    except (NotExecutable, NoPEHeader, MalformedHeader):
        pass
