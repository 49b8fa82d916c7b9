"""Consistency checks over the backup archive and metadata-to-triples conversion."""

import json
import re
import zipfile
from dataclasses import dataclass, field
from typing import List, Optional

from sit.artifact import (
    CSV_COLUMNS,
    METADATA_NAME,
    PAYLOAD_DIR,
    STATUS_FAILED,
    STATUS_OK,
    ArtifactRecord,
    read_metadata_csv,
)
from sit.errors import SitError
from sit.obslog import sink_or_null
from sit.source import DIRECTORY, NTFS_IMAGE
from sit.timeutil import is_iso
from sit.turtle import AFF4, RDF_TYPE, XSD_DATETIME, XSD_LONG, XSD_STRING, IRI, Literal, Triple

MISSING_METADATA = "MissingMetadata"
MISSING_ARTIFACT = "MissingArtifact"
BAD_FIELD_TYPE = "BadFieldType"
DUPLICATE_ID = "DuplicateId"
SIZE_MISMATCH = "SizeMismatch"
CSV_MALFORMED = "CsvMalformed"
FINDING_CLASSES = (MISSING_METADATA, MISSING_ARTIFACT, BAD_FIELD_TYPE, DUPLICATE_ID,
                   SIZE_MISMATCH, CSV_MALFORMED)

AFF4_IMAGE = AFF4 + "Image"
_PAYLOAD_RE = re.compile(r"^%s(\d{6})$" % re.escape(PAYLOAD_DIR))
_HEX = {"md5": 32, "sha1": 40, "sha256": 64}


class ValidationError(SitError):
    pass


class ArchiveUnreadable(ValidationError):
    pass


class CsvMalformed(ValidationError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class RecordIncomplete(ValidationError):
    """A failed acquisition has no content or hashes to describe."""


@dataclass
class Finding:
    cls: str
    artifact_id: Optional[int]
    detail: str

    def to_json(self):
        return {"class": self.cls, "artifact_id": self.artifact_id, "detail": self.detail}


@dataclass
class ValidationReport:
    checked_artifacts: int = 0
    findings: List[Finding] = field(default_factory=list)

    @property
    def passed(self):
        return not self.findings

    def to_json(self):
        return {
            "passed": self.passed,
            "checked_artifacts": self.checked_artifacts,
            "findings": [f.to_json() for f in self.findings],
        }

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fp:
            json.dump(self.to_json(), fp, indent=2)
            fp.write("\n")


def _type_problems(values):
    """Return a list of field-level type problems in one CSV row (dict of strings)."""
    problems = []
    if not re.fullmatch(r"[1-9]\d*", values["artifact_id"]):
        problems.append("artifact_id %r is not a positive integer" % values["artifact_id"])
    if values["source_kind"] not in (NTFS_IMAGE, DIRECTORY):
        problems.append("source_kind %r is unknown" % values["source_kind"])
    if not values["source_path"].startswith("\\"):
        problems.append("source_path %r is not rooted" % values["source_path"])
    if not values["name"]:
        problems.append("name is empty")
    if not re.fullmatch(r"\d+", values["size_bytes"]):
        problems.append("size_bytes %r is not a non-negative integer" % values["size_bytes"])
    if values["record_no"] and not re.fullmatch(r"\d+", values["record_no"]):
        problems.append("record_no %r is not an integer" % values["record_no"])
    for key in ("created_utc", "modified_utc", "mft_changed_utc", "accessed_utc"):
        if values[key] and not is_iso(values[key]):
            problems.append("%s %r is not an ISO-8601 timestamp" % (key, values[key]))
    if not re.fullmatch(r"0x[0-9a-fA-F]+", values["attr_flags_hex"]):
        problems.append("attr_flags_hex %r is not hex" % values["attr_flags_hex"])
    if not is_iso(values["acquired_utc"]):
        problems.append("acquired_utc %r is not an ISO-8601 timestamp" % values["acquired_utc"])
    status = values["status"]
    if status not in (STATUS_OK, STATUS_FAILED):
        problems.append("status %r is unknown" % status)
    for key, width in _HEX.items():
        value = values[key]
        if status == STATUS_OK and not re.fullmatch(r"[0-9a-f]{%d}" % width, value):
            problems.append("%s %r is not %d lowercase hex digits" % (key, value, width))
        elif status == STATUS_FAILED and value and not re.fullmatch(r"[0-9a-f]{%d}" % width, value):
            problems.append("%s %r is not %d lowercase hex digits" % (key, value, width))
    return problems


def validate(archive_path, report_path=None, log=None):
    """Cross-check payload entries against metadata rows.

    Writes the JSON report to *report_path* when given. Raises
    ArchiveUnreadable or CsvMalformed (after writing a report carrying a
    CsvMalformed finding) on fatal problems.
    """
    log = sink_or_null(log, "validation")
    log.info("start", archive=str(archive_path))
    report = ValidationReport()
    try:
        zf = zipfile.ZipFile(archive_path)
    except (OSError, zipfile.BadZipFile) as exc:
        log.error("archive_unreadable", archive=str(archive_path), error=str(exc))
        raise ArchiveUnreadable("cannot read %s: %s" % (archive_path, exc)) from exc

    with zf:
        names = zf.namelist()
        payloads = {}
        for info in zf.infolist():
            m = _PAYLOAD_RE.match(info.filename)
            if m:
                payloads[int(m.group(1))] = info
        try:
            raw = zf.read(METADATA_NAME)
        except KeyError:
            raw = None
        except (OSError, zipfile.BadZipFile) as exc:
            log.error("archive_unreadable", error=str(exc))
            raise ArchiveUnreadable("cannot read %s: %s" % (METADATA_NAME, exc)) from exc

    problem = None
    rows = []
    if raw is None:
        problem = "%s is missing (archive entries: %d)" % (METADATA_NAME, len(names))
    else:
        try:
            header, rows = read_metadata_csv(raw)
        except (UnicodeDecodeError, ValueError) as exc:
            problem = "cannot parse %s: %s" % (METADATA_NAME, exc)
        else:
            if tuple(header) != CSV_COLUMNS:
                problem = "header does not match the expected %d columns" % len(CSV_COLUMNS)
            else:
                bad = [i + 2 for i, r in enumerate(rows) if len(r) != len(CSV_COLUMNS)]
                if bad:
                    problem = "rows with wrong column count at lines %s" % bad[:10]
    if problem is not None:
        report.findings.append(Finding(CSV_MALFORMED, None, problem))
        log.error("finding", cls=CSV_MALFORMED, detail=problem)
        if report_path is not None:
            report.write(report_path)
        raise CsvMalformed(problem, report)

    seen = {}
    ok_rows = {}
    for line_no, row in enumerate(rows, start=2):
        values = dict(zip(CSV_COLUMNS, row))
        aid_text = values["artifact_id"]
        aid = int(aid_text) if re.fullmatch(r"\d+", aid_text) else None
        if aid is not None and aid in seen:
            report.findings.append(Finding(DUPLICATE_ID, aid, "artifact_id %d appears on lines %d and %d"
                                           % (aid, seen[aid], line_no)))
            continue
        if aid is not None:
            seen[aid] = line_no
        problems = _type_problems(values)
        if problems:
            report.findings.append(Finding(BAD_FIELD_TYPE, aid, "line %d: %s" % (line_no, "; ".join(problems))))
        if aid is None:
            continue
        if values["status"] == STATUS_OK:
            ok_rows[aid] = values
        elif aid in payloads:
            report.findings.append(Finding(MISSING_METADATA, aid,
                                           "payload present but metadata records status %r" % values["status"]))

    for aid in sorted(payloads):
        if aid not in seen:
            report.findings.append(Finding(MISSING_METADATA, aid,
                                           "payload %s has no metadata row" % payloads[aid].filename))
    for aid, values in sorted(ok_rows.items()):
        info = payloads.get(aid)
        if info is None:
            report.findings.append(Finding(MISSING_ARTIFACT, aid, "metadata row has no payload entry"))
            continue
        if re.fullmatch(r"\d+", values["size_bytes"]) and int(values["size_bytes"]) != info.file_size:
            report.findings.append(Finding(SIZE_MISMATCH, aid, "size_bytes %s but payload holds %d bytes"
                                           % (values["size_bytes"], info.file_size)))

    report.checked_artifacts = len(set(seen) | set(payloads))
    report.findings.sort(key=lambda f: (f.artifact_id or 0, f.cls))
    for f in report.findings:
        log.warn("finding", cls=f.cls, id="%06d" % f.artifact_id if f.artifact_id else "", detail=f.detail)
    if report_path is not None:
        report.write(report_path)
    log.info("summary", passed=report.passed, checked=report.checked_artifacts,
             findings=len(report.findings))
    log.info("end")
    return report


def artifact_urn(container_urn, artifact_id):
    return "%s/artifact/%06d" % (container_urn, artifact_id)


def record_to_triples(record, container_urn):
    """Describe an acquired artifact as triples; failed records have none."""
    if record.status != STATUS_OK:
        raise RecordIncomplete("artifact %d has status %r" % (record.artifact_id, record.status))
    subject = artifact_urn(container_urn, record.artifact_id)

    def lit(pred, value, dtype=XSD_STRING):
        return Triple(subject, AFF4 + pred, Literal(value, dtype))

    triples = [
        Triple(subject, RDF_TYPE, IRI(AFF4_IMAGE)),
        lit("originalFileName", record.source_path),
        lit("size", str(record.size_bytes), XSD_LONG),
        lit("MD5", record.md5.lower()),
        lit("SHA1", record.sha1.lower()),
        lit("SHA256", record.sha256.lower()),
    ]
    for pred, value in (("birthTime", record.created_utc), ("lastWritten", record.modified_utc),
                        ("mftChanged", record.mft_changed_utc), ("lastAccessed", record.accessed_utc)):
        if value:
            triples.append(lit(pred, value, XSD_DATETIME))
    triples.append(lit("acquisitionTime", record.acquired_utc, XSD_DATETIME))
    triples.append(Triple(subject, AFF4 + "storedIn", IRI(container_urn)))
    return triples


def load_records(archive_path, log=None):
    """Read ok and failed records from a backup archive's metadata; ill-typed rows are skipped."""
    log = sink_or_null(log, "validation")
    with zipfile.ZipFile(archive_path) as zf:
        header, rows = read_metadata_csv(zf.read(METADATA_NAME))
    if tuple(header) != CSV_COLUMNS:
        raise CsvMalformed("unexpected metadata header")
    records = []
    for row in rows:
        try:
            records.append(ArtifactRecord.from_row(row))
        except (ValueError, TypeError) as exc:
            log.warn("row_skipped", error=str(exc))
    return records
