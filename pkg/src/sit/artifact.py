"""Acquisition of selected entries into the backup archive.

Each entry's content is read from the source exactly once; the same chunks
feed MD5, SHA1 and SHA256 and the ZIP payload. The archive's central
directory is rewritten after every artifact, so an interrupted run still
leaves a readable ZIP holding every artifact completed so far.
"""

import csv
import hashlib
import io
import time
import zipfile
from dataclasses import dataclass, field, fields
from typing import List, Optional

from sit.errors import SitError, SitIOError
from sit.obslog import sink_or_null
from sit.source import DIRECTORY, NTFS_IMAGE, read_file_content
from sit.timeutil import datetime_to_iso, filetime_to_iso
from sit.ziputil import CheckpointZip, make_info

DEFAULT_CHUNK_SIZE = 1 << 20
MIN_CHUNK_SIZE = 4096

PAYLOAD_DIR = "artifacts/"
METADATA_NAME = "metadata.csv"
LOG_NAME = "artifact.log"

STATUS_OK = "ok"
STATUS_FAILED = "failed"

CSV_COLUMNS = (
    "artifact_id", "source_kind", "source_path", "name", "size_bytes", "record_no",
    "created_utc", "modified_utc", "mft_changed_utc", "accessed_utc", "attr_flags_hex",
    "md5", "sha1", "sha256", "acquired_utc", "status",
)


class FatalArchiveError(SitError):
    """Writing the backup archive failed; it is left at its last checkpoint."""


class _SourceReadError(Exception):
    def __init__(self, cause):
        super().__init__(str(cause))
        self.cause = cause


def payload_name(artifact_id):
    return "%s%06d" % (PAYLOAD_DIR, artifact_id)


@dataclass
class ArtifactRecord:
    artifact_id: int
    source_kind: str
    source_path: str
    name: str
    size_bytes: int
    record_no: Optional[int] = None
    created_utc: Optional[str] = None
    modified_utc: Optional[str] = None
    mft_changed_utc: Optional[str] = None
    accessed_utc: Optional[str] = None
    attr_flags_hex: str = "0x00000000"
    md5: str = ""
    sha1: str = ""
    sha256: str = ""
    acquired_utc: str = ""
    status: str = STATUS_OK

    @property
    def ok(self):
        return self.status == STATUS_OK

    def to_row(self):
        row = []
        for f in fields(self):
            value = getattr(self, f.name)
            row.append("" if value is None else str(value))
        return row

    @classmethod
    def from_row(cls, row):
        """Build a record from CSV strings. Raises ValueError on ill-typed integers."""
        values = dict(zip(CSV_COLUMNS, row))
        opt = lambda key: values[key] or None  # noqa: E731
        return cls(
            artifact_id=int(values["artifact_id"]),
            source_kind=values["source_kind"],
            source_path=values["source_path"],
            name=values["name"],
            size_bytes=int(values["size_bytes"]),
            record_no=int(values["record_no"]) if values["record_no"] else None,
            created_utc=opt("created_utc"),
            modified_utc=opt("modified_utc"),
            mft_changed_utc=opt("mft_changed_utc"),
            accessed_utc=opt("accessed_utc"),
            attr_flags_hex=values["attr_flags_hex"],
            md5=values["md5"],
            sha1=values["sha1"],
            sha256=values["sha256"],
            acquired_utc=values["acquired_utc"],
            status=values["status"],
        )


def write_metadata_csv(records):
    """RFC 4180 CSV (CRLF line ends, minimal quoting) as UTF-8 bytes."""
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
    writer.writerow(CSV_COLUMNS)
    for rec in records:
        writer.writerow(rec.to_row())
    return buf.getvalue().encode("utf-8")


def read_metadata_csv(data):
    """Parse metadata CSV bytes into ``(header, rows)`` of raw strings."""
    reader = csv.reader(io.StringIO(data.decode("utf-8"), newline=""))
    rows = list(reader)
    if not rows:
        return [], []
    return rows[0], rows[1:]


@dataclass
class AcquisitionLimits:
    max_memory_bytes: Optional[int] = None
    max_runtime: Optional[float] = None  # seconds
    chunk_size: int = DEFAULT_CHUNK_SIZE

    def __post_init__(self):
        if self.chunk_size < MIN_CHUNK_SIZE:
            raise ValueError("chunk_size must be at least %d bytes" % MIN_CHUNK_SIZE)
        if self.max_memory_bytes is not None and self.chunk_size > self.max_memory_bytes:
            raise ValueError("chunk_size %d exceeds max_memory_bytes %d"
                             % (self.chunk_size, self.max_memory_bytes))
        if self.max_runtime is not None and self.max_runtime < 0:
            raise ValueError("max_runtime must be non-negative")

    @classmethod
    def for_memory(cls, max_memory_bytes=None, max_runtime=None):
        """Pick the largest default-capped chunk size that keeps two buffers within the memory limit."""
        chunk = DEFAULT_CHUNK_SIZE
        if max_memory_bytes is not None:
            if max_memory_bytes < MIN_CHUNK_SIZE:
                raise ValueError("max_memory_bytes must be at least %d" % MIN_CHUNK_SIZE)
            chunk = max(MIN_CHUNK_SIZE, min(chunk, max_memory_bytes // 2))
        return cls(max_memory_bytes, max_runtime, chunk)


class BufferAccount:
    """Counts bytes held in acquisition buffers and remembers the peak."""

    def __init__(self):
        self.current = 0
        self.peak = 0

    def allocate(self, n):
        self.current += n
        self.peak = max(self.peak, self.current)

    def release(self, n):
        self.current -= n


@dataclass
class AcquisitionSummary:
    ok: int = 0
    failed: int = 0
    skipped: int = 0
    elapsed: float = 0.0
    limit_hit: bool = False
    peak_buffer_bytes: int = 0
    records: List[ArtifactRecord] = field(default_factory=list)


class BackupArchive:
    """The ZIP backup written during acquisition.

    Layout: ``artifacts/<6-digit id>`` payloads (deflate), then
    ``metadata.csv`` (stored) and ``artifact.log`` at finalization.
    """

    def __init__(self, path):
        self.path = path
        self.records = []
        try:
            self._zip = CheckpointZip(path, "w")
            self._zip.checkpoint()
        except OSError as exc:
            raise FatalArchiveError("cannot create backup archive %s: %s" % (path, exc)) from exc
        self.finalized = False

    @property
    def next_id(self):
        return len(self.records) + 1

    def write_payload(self, artifact_id, size, chunks, on_chunk):
        info = make_info(payload_name(artifact_id), zipfile.ZIP_DEFLATED, size)
        written = self._zip.write_stream(info, chunks, on_chunk)
        self._zip.checkpoint()
        return written

    def finalize(self, log_text=b""):
        if self.finalized:
            return
        try:
            info = make_info(METADATA_NAME, zipfile.ZIP_STORED)
            self._zip.writestr(info, write_metadata_csv(self.records))
            self._zip.writestr(make_info(LOG_NAME), log_text)
            self._zip.close()
        except OSError as exc:
            raise FatalArchiveError("cannot finalize backup archive: %s" % exc) from exc
        self.finalized = True

    def abort(self):
        """Close without metadata; the archive stays at its last checkpoint."""
        if not self.finalized:
            try:
                self._zip.fp.close()
            except OSError:
                pass
            self._zip.fp = None
            self.finalized = True


def _iso_or_none(filetime, log, entry, label):
    if filetime is None:
        return None
    try:
        return filetime_to_iso(filetime)
    except ValueError:
        log.warn("bad_timestamp", path=entry.full_path, field=label, value=filetime)
        return None


def _record_for(entry, handle, artifact_id, log):
    return ArtifactRecord(
        artifact_id=artifact_id,
        source_kind=NTFS_IMAGE if handle.kind == NTFS_IMAGE else DIRECTORY,
        source_path=entry.full_path,
        name=entry.name,
        size_bytes=entry.size_bytes,
        record_no=entry.record_no,
        created_utc=_iso_or_none(entry.created_utc, log, entry, "created"),
        modified_utc=_iso_or_none(entry.modified_utc, log, entry, "modified"),
        mft_changed_utc=_iso_or_none(entry.mft_changed_utc, log, entry, "mft_changed"),
        accessed_utc=_iso_or_none(entry.accessed_utc, log, entry, "accessed"),
        attr_flags_hex="0x%08x" % entry.attr_flags,
    )


def acquire_one(handle, entry, archive, limits, clock, log=None, account=None):
    """Acquire *entry* as the archive's next artifact and return its record."""
    log = sink_or_null(log, "artifact")
    account = account if account is not None else BufferAccount()
    artifact_id = archive.next_id
    record = _record_for(entry, handle, artifact_id, log)
    hashers = (hashlib.md5(), hashlib.sha1(), hashlib.sha256())

    def source_chunks():
        stream = read_file_content(handle, entry, limits.chunk_size)
        while True:
            try:
                chunk = next(stream)
            except StopIteration:
                return
            except (OSError, SitError) as exc:
                raise _SourceReadError(exc) from exc
            account.allocate(len(chunk))
            try:
                yield chunk
            finally:
                account.release(len(chunk))

    def feed(chunk):
        for h in hashers:
            h.update(chunk)

    try:
        written = archive.write_payload(artifact_id, entry.size_bytes, source_chunks(), feed)
        if written != entry.size_bytes:
            raise _SourceReadError(SitIOError("read %d bytes, expected %d" % (written, entry.size_bytes)))
    except _SourceReadError as exc:
        record.acquired_utc = datetime_to_iso(clock())
        record.status = STATUS_FAILED
        archive.records.append(record)
        log.error("failed", id="%06d" % artifact_id, path=entry.full_path, error=str(exc))
        return record
    except OSError as exc:
        raise FatalArchiveError("writing artifact %06d failed: %s" % (artifact_id, exc)) from exc

    record.acquired_utc = datetime_to_iso(clock())
    record.md5, record.sha1, record.sha256 = (h.hexdigest() for h in hashers)
    archive.records.append(record)
    log.info("acquired", id="%06d" % artifact_id, size=record.size_bytes, sha256=record.sha256,
             md5=record.md5, sha1=record.sha1, path=entry.full_path)
    return record


def acquire_all(handle, matches, archive, limits, clock, log=None):
    """Acquire *matches* in order, stopping early once ``limits.max_runtime`` has elapsed."""
    log = sink_or_null(log, "artifact")
    account = BufferAccount()
    summary = AcquisitionSummary()
    started = time.monotonic()
    log.info("start", matches=len(matches), chunk_size=limits.chunk_size,
             max_memory_bytes=limits.max_memory_bytes, max_runtime_sec=limits.max_runtime)
    for index, entry in enumerate(matches):
        elapsed = time.monotonic() - started
        if limits.max_runtime is not None and elapsed >= limits.max_runtime:
            summary.limit_hit = True
            summary.skipped = len(matches) - index
            log.warn("limit_hit", limit="max_runtime", elapsed_sec="%.3f" % elapsed,
                     skipped=summary.skipped)
            for skipped in matches[index:]:
                log.warn("skipped", path=skipped.full_path, reason="max_runtime")
            break
        try:
            record = acquire_one(handle, entry, archive, limits, clock, log, account)
        except FatalArchiveError as exc:
            log.error("fatal_archive_error", error=str(exc))
            archive.abort()
            raise
        summary.records.append(record)
        if record.ok:
            summary.ok += 1
        else:
            summary.failed += 1
    summary.elapsed = time.monotonic() - started
    summary.peak_buffer_bytes = account.peak
    log.info("summary", ok=summary.ok, failed=summary.failed, skipped=summary.skipped,
             limit_hit=summary.limit_hit, elapsed_sec="%.3f" % summary.elapsed,
             peak_buffer_bytes=summary.peak_buffer_bytes)
    log.info("end", artifacts=len(summary.records))
    return summary
