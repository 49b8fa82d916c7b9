import struct

import pytest

from sit.source.mft import (
    BadSignature,
    FixupError,
    TornWrite,
    TruncatedAttribute,
    apply_fixups,
    parse_mft_record,
    resolve_paths,
)

from ntfsbuild import (
    NS_DOS,
    NS_WIN32,
    build_record,
    file_name_value,
    nonresident_attr,
    resident_attr,
    std_info_value,
)

TIMES = (132_000_000_000_000_000, 132_000_000_000_000_001, 132_000_000_000_000_002, 132_000_000_000_000_003)


def crafted_record():
    rec = bytearray(1024)
    rec[0:4] = b"FILE"
    struct.pack_into("<HH", rec, 4, 0x30, 3)
    struct.pack_into("<HHH", rec, 0x30, 0xAAAA, 0x0102, 0x0304)
    rec[510:512] = b"\xaa\xaa"
    rec[1022:1024] = b"\xaa\xaa"
    return rec


def test_fixup_example():
    fixed = apply_fixups(bytes(crafted_record()), 512)
    assert fixed[510:512] == struct.pack("<H", 0x0102)
    assert fixed[1022:1024] == struct.pack("<H", 0x0304)


def test_fixup_leaves_input_untouched():
    rec = bytes(crafted_record())
    apply_fixups(rec, 512)
    assert rec[510:512] == b"\xaa\xaa"


def test_torn_write():
    rec = crafted_record()
    rec[1022:1024] = b"\xbb\xbb"
    with pytest.raises(TornWrite):
        apply_fixups(bytes(rec), 512)


@pytest.mark.parametrize("usa_offset, usa_count", [(0x30, 600), (1020, 3), (0x30, 0), (0x30, 4)])
def test_fixup_bounds(usa_offset, usa_count):
    rec = crafted_record()
    struct.pack_into("<HH", rec, 4, usa_offset, usa_count)
    with pytest.raises(FixupError):
        apply_fixups(bytes(rec), 512)


def test_fixup_length_not_multiple():
    with pytest.raises(FixupError):
        apply_fixups(bytes(crafted_record())[:1000], 512)


def file_record(rn, data_attr, names=(("abc.txt", NS_WIN32),), flags=1, parent=5):
    attrs = [resident_attr(0x10, std_info_value(TIMES))]
    for i, (name, ns) in enumerate(names):
        attrs.append(resident_attr(0x30, file_name_value(name, parent, 5, TIMES, ns), instance=1 + i))
    attrs.append(data_attr)
    return apply_fixups(build_record(rn, attrs, flags=flags), 512)


def test_resident_data():
    rec = parse_mft_record(file_record(40, resident_attr(0x80, b"abc", instance=4)), 40)
    assert rec.in_use and not rec.is_directory
    assert rec.file_name.name == "abc.txt"
    assert rec.file_name.parent_record == 5
    (data,) = rec.unnamed_data
    assert data.resident and data.content == b"abc" and data.real_size == 3
    assert rec.std_info.created == TIMES[0]
    assert rec.std_info.accessed == TIMES[3]


def test_nonresident_sizes_from_header():
    attr = nonresident_attr(0x80, [(2, 100)], 5000, 4096, instance=4)
    rec = parse_mft_record(file_record(41, attr), 41)
    (data,) = rec.unnamed_data
    assert not data.resident
    assert data.real_size == 5000 and data.allocated_size == 8192
    assert [(r.cluster_count, r.lcn) for r in data.runs] == [(2, 100)]


def test_bad_signature():
    raw = bytearray(file_record(42, resident_attr(0x80, b"abc")))
    raw[0:4] = b"BAAD"
    with pytest.raises(BadSignature):
        parse_mft_record(bytes(raw), 42)


def test_deleted_record_is_parsed():
    rec = parse_mft_record(file_record(43, resident_attr(0x80, b"x"), flags=0), 43)
    assert not rec.in_use
    assert rec.file_name.name == "abc.txt"


def test_win32_name_preferred_over_dos():
    names = (("LONGFI~1.TXT", NS_DOS), ("long file name.txt", NS_WIN32))
    rec = parse_mft_record(file_record(44, resident_attr(0x80, b""), names=names), 44)
    assert rec.file_name.name == "long file name.txt"


def test_dos_only_name_used():
    rec = parse_mft_record(file_record(45, resident_attr(0x80, b""), names=(("PROGRA~1", NS_DOS),)), 45)
    assert rec.file_name.name == "PROGRA~1"


def test_named_stream_reported():
    attrs = [resident_attr(0x10, std_info_value(TIMES)),
             resident_attr(0x30, file_name_value("f", 5, 5, TIMES), instance=1),
             resident_attr(0x80, b"main", instance=2),
             resident_attr(0x80, b"side", name="Zone.Identifier", instance=3)]
    rec = parse_mft_record(apply_fixups(build_record(46, attrs), 512), 46)
    assert [d.content for d in rec.unnamed_data] == [b"main"]
    assert rec.named_streams == ["Zone.Identifier"]


def test_truncated_attribute():
    raw = bytearray(file_record(47, resident_attr(0x80, b"abc")))
    first = struct.unpack_from("<H", raw, 20)[0]
    struct.pack_into("<I", raw, first + 4, 4000)  # attribute length beyond the record
    with pytest.raises(TruncatedAttribute):
        parse_mft_record(bytes(raw), 47)


# -- path resolution ---------------------------------------------------------------

def rec_of(rn, name, parent, flags=1, parent_seq=1, seq=1):
    attrs = [resident_attr(0x10, std_info_value(TIMES)),
             resident_attr(0x30, file_name_value(name, parent, parent_seq, TIMES), instance=1)]
    return parse_mft_record(apply_fixups(build_record(rn, attrs, flags=flags, seq=seq), 512), rn)


def test_paths():
    records = {
        5: rec_of(5, ".", 5, flags=3, seq=5, parent_seq=5),
        20: rec_of(20, "a.txt", 5, parent_seq=5),
        21: rec_of(21, "Users", 5, flags=3, parent_seq=5),
        22: rec_of(22, "b.txt", 21),
    }
    paths = resolve_paths(records)
    assert paths[5] == "\\"
    assert paths[20] == "\\a.txt"
    assert paths[22] == "\\Users\\b.txt"


def test_orphans():
    orphaned = []
    records = {
        5: rec_of(5, ".", 5, flags=3, seq=5, parent_seq=5),
        30: rec_of(30, "old", 5, flags=2, parent_seq=5),  # deleted directory
        31: rec_of(31, "a.txt", 30),
        32: rec_of(32, "nowhere.txt", 999),
        33: rec_of(33, "x", 34, flags=3),
        34: rec_of(34, "y", 33, flags=3),
        35: rec_of(35, "reused.txt", 36, parent_seq=7),
        36: rec_of(36, "dir", 5, flags=3, parent_seq=5, seq=8),
        37: rec_of(37, "file_parent.txt", 20),
        20: rec_of(20, "plain", 5, parent_seq=5),
    }
    paths = resolve_paths(records, on_orphan=orphaned.append)
    assert paths[31] == "\\$Orphan\\a.txt"
    assert paths[32] == "\\$Orphan\\nowhere.txt"
    assert paths[33].startswith("\\$Orphan\\") and paths[33].endswith("\\x")
    assert paths[35] == "\\$Orphan\\reused.txt"
    assert paths[37] == "\\$Orphan\\file_parent.txt"
    assert paths[36] == "\\dir"
    assert {31, 32, 35, 37} <= set(orphaned)
