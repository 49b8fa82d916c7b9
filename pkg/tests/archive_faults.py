"""Copy-and-modify helpers for inducing faults in backup archives and containers."""

import csv
import io
import os
import zipfile

from sit.artifact import CSV_COLUMNS, METADATA_NAME


def rewrite_zip(src, dst, drop=(), replace=None):
    """Copy ZIP *src* to *dst*, leaving out names in *drop* and substituting bytes from *replace*."""
    replace = replace or {}
    with zipfile.ZipFile(src) as zin, zipfile.ZipFile(dst, "w") as zout:
        for info in zin.infolist():
            if info.filename in drop:
                continue
            data = replace.get(info.filename)
            zout.writestr(info, zin.read(info) if data is None else data)
    return dst


def read_rows(path):
    with zipfile.ZipFile(path) as zf:
        rows = list(csv.reader(io.StringIO(zf.read(METADATA_NAME).decode("utf-8"), newline="")))
    return rows[0], rows[1:]


def with_rows(src, dst, edit):
    """Rewrite metadata.csv of *src* into *dst*; *edit* receives and returns the data rows as dicts."""
    header, rows = read_rows(src)
    dict_rows = edit([dict(zip(header, r)) for r in rows])
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for r in dict_rows:
        writer.writerow([r[c] for c in CSV_COLUMNS])
    return rewrite_zip(src, dst, replace={METADATA_NAME: buf.getvalue().encode("utf-8")})


def flip_segment_byte(container, segment, offset=0):
    """Rewrite *container* in place with one byte of *segment*'s payload inverted."""
    tmp = str(container) + ".tmp"
    with zipfile.ZipFile(container) as zf:
        data = bytearray(zf.read(segment))
    data[offset] ^= 0xFF
    rewrite_zip(container, tmp, replace={segment: bytes(data)})
    os.replace(tmp, container)
