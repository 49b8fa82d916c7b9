"""Command-line pipeline: acquire, validate, pack and verify.

Each stage reads and writes fixed file names inside ``--out-dir`` so any
stage can be rerun on its own from the previous stage's output:

    backup.zip                 written by acquire, read by validate and pack
    validation_report.json     written by validate
    evidence.aff4              written by pack, read by verify
    verification_report.json   written by verify
    sit_<module>.log           one log per module

Exit codes: 0 success, 1 usage or configuration error, 2 validation
findings, failed artifacts or verification failure, 3 resource limit hit
(outputs up to the limit are kept), 4 fatal I/O error.
"""

import argparse
import os
import sys
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from sit import __version__
from sit.aff4 import LengthMismatch, NotAff4, check_container_urn, create_container, open_container
from sit.artifact import (
    AcquisitionLimits,
    BackupArchive,
    FatalArchiveError,
    acquire_all,
    payload_name,
)
from sit.errors import SitError
from sit.obslog import Logbook
from sit.selection import ConfigError, enumerate_matches, load_config
from sit.source import DIRECTORY, NTFS_IMAGE, NotFound, NotNtfs, PermissionDenied, open_source
from sit.timeutil import FixedClock, parse_iso, system_clock
from sit.turtle import serialize_turtle
from sit.validation import (
    ArchiveUnreadable,
    CsvMalformed,
    load_records,
    record_to_triples,
    validate,
)
from sit.verify import verify_container

STAGES = ("acquire", "validate", "pack", "verify")
SUBCOMMANDS = ("all",) + STAGES

BACKUP_NAME = "backup.zip"
VALIDATION_REPORT_NAME = "validation_report.json"
CONTAINER_NAME = "evidence.aff4"
VERIFICATION_REPORT_NAME = "verification_report.json"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FINDINGS = 2
EXIT_PARTIAL = 3
EXIT_FATAL = 4

_KIND_FLAGS = {"ntfs-image": NTFS_IMAGE, "dir": DIRECTORY}


class UsageError(SitError):
    pass


class _StageStop(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunPlan:
    stages: List[str]
    out_dir: Path
    temp_dir: Path
    source: Optional[str] = None
    source_kind: str = NTFS_IMAGE
    config: Optional[str] = None
    limits: AcquisitionLimits = field(default_factory=AcquisitionLimits)
    urn: Optional[str] = None
    fixed_time: Optional[object] = None
    include_deleted: bool = False
    include_system: bool = False
    quiet: bool = False
    in_stream: bool = False
    workers: int = 1
    argv: List[str] = field(default_factory=list)

    @property
    def backup_path(self):
        return self.out_dir / BACKUP_NAME

    @property
    def container_path(self):
        return self.out_dir / CONTAINER_NAME


def build_parser():
    parser = _ArgumentParser(prog="sit", description="Selective imaging into AFF4-subset containers.")
    parser.add_argument("--version", action="version", version="%(prog)s " + __version__)
    parser.add_argument("command", choices=SUBCOMMANDS, help="pipeline stage to run, or all of them")
    parser.add_argument("--source", help="NTFS volume image or directory to acquire from")
    parser.add_argument("--source-kind", choices=sorted(_KIND_FLAGS), default="ntfs-image")
    parser.add_argument("--config", help="JSON selection config")
    parser.add_argument("--out-dir", required=True, help="output directory (on the evidence drive)")
    parser.add_argument("--temp-dir", help="temporary directory (default: <out-dir>/tmp)")
    parser.add_argument("--max-memory-mb", type=float, help="upper bound for acquisition buffers")
    parser.add_argument("--max-runtime-sec", type=float, help="stop acquiring after this many seconds")
    parser.add_argument("--skip-validation", action="store_true", help="with 'all': leave out validate")
    parser.add_argument("--skip-verification", action="store_true", help="with 'all': leave out verify")
    parser.add_argument("--urn", help="container URN aff4://<uuid> (default: random)")
    parser.add_argument("--fixed-time", help="ISO-8601 instant used for every acquisition timestamp")
    parser.add_argument("--include-deleted", action="store_true", help="expose deleted MFT records")
    parser.add_argument("--include-system", action="store_true", help="expose NTFS metadata files ($MFT, ...)")
    parser.add_argument("--in-stream", action="store_true", help="verify by hashing segments without extraction")
    parser.add_argument("--workers", type=int, default=1, help="parallel verification workers")
    parser.add_argument("--quiet", action="store_true", help="log to files only")
    return parser


def parse_args(argv):
    args = build_parser().parse_args(argv)
    if args.command == "all":
        stages = [s for s in STAGES
                  if not (s == "validate" and args.skip_validation)
                  and not (s == "verify" and args.skip_verification)]
    else:
        stages = [args.command]

    out_dir = Path(args.out_dir)
    temp_dir = Path(args.temp_dir) if args.temp_dir else out_dir / "tmp"
    if "acquire" in stages:
        if not args.source:
            raise UsageError("--source is required for acquire")
        if not args.config:
            raise UsageError("--config is required for acquire")
    else:
        needs_backup = "validate" in stages or "pack" in stages
        if needs_backup and not (out_dir / BACKUP_NAME).is_file():
            raise UsageError("%s: missing prerequisite %s (run acquire first)"
                             % (stages[0], out_dir / BACKUP_NAME))
        if "verify" in stages and "pack" not in stages and not (out_dir / CONTAINER_NAME).is_file():
            raise UsageError("verify: missing prerequisite %s (run pack first)" % (out_dir / CONTAINER_NAME))

    max_memory = None
    if args.max_memory_mb is not None:
        if args.max_memory_mb <= 0:
            raise UsageError("--max-memory-mb must be positive")
        max_memory = int(args.max_memory_mb * 1024 * 1024)
    if args.max_runtime_sec is not None and args.max_runtime_sec < 0:
        raise UsageError("--max-runtime-sec must not be negative")
    try:
        limits = AcquisitionLimits.for_memory(max_memory, args.max_runtime_sec)
    except ValueError as exc:
        raise UsageError("--max-memory-mb: %s" % exc) from None

    if args.urn is not None:
        try:
            check_container_urn(args.urn)
        except ValueError as exc:
            raise UsageError("--urn: %s" % exc) from None
    fixed_time = None
    if args.fixed_time is not None:
        try:
            fixed_time = parse_iso(args.fixed_time)
        except ValueError as exc:
            raise UsageError("--fixed-time: %s" % exc) from None
    if args.workers < 1:
        raise UsageError("--workers must be at least 1")

    return RunPlan(
        stages=stages, out_dir=out_dir, temp_dir=temp_dir, source=args.source,
        source_kind=_KIND_FLAGS[args.source_kind], config=args.config, limits=limits,
        urn=args.urn, fixed_time=fixed_time, include_deleted=args.include_deleted,
        include_system=args.include_system, quiet=args.quiet, in_stream=args.in_stream,
        workers=args.workers, argv=list(argv),
    )


# -- stages -----------------------------------------------------------------------

def _stage_acquire(plan, book):
    log = book["artifact"]
    try:
        config = load_config(plan.config)
    except ConfigError as exc:
        raise _StageStop(EXIT_USAGE, "config %s: %s" % (plan.config, exc))
    except OSError as exc:
        raise _StageStop(EXIT_USAGE, "cannot read config %s: %s" % (plan.config, exc))
    try:
        handle = open_source(plan.source, plan.source_kind, log=book["source"],
                             include_deleted=plan.include_deleted, include_system=plan.include_system)
    except (NotFound, NotNtfs) as exc:
        raise _StageStop(EXIT_USAGE, "source: %s" % exc)
    except (PermissionDenied, OSError) as exc:
        raise _StageStop(EXIT_FATAL, "source: %s" % exc)

    clock = FixedClock(plan.fixed_time) if plan.fixed_time is not None else system_clock
    with handle:
        try:
            matches = enumerate_matches(handle, config, book["selection"])
        except (OSError, SitError) as exc:
            raise _StageStop(EXIT_FATAL, "enumerating source failed: %s" % exc)
        try:
            archive = BackupArchive(plan.backup_path)
            summary = acquire_all(handle, matches, archive, plan.limits, clock, log)
            log_text = Path(log.path).read_bytes() if log.path else b""
            archive.finalize(log_text)
        except FatalArchiveError as exc:
            raise _StageStop(EXIT_FATAL, str(exc))
    code = EXIT_OK
    if summary.failed:
        code = EXIT_FINDINGS
    if summary.limit_hit:
        code = EXIT_PARTIAL
    return code, "acquired=%d failed=%d skipped=%d" % (summary.ok, summary.failed, summary.skipped)


def _stage_validate(plan, book):
    try:
        report = validate(plan.backup_path, plan.out_dir / VALIDATION_REPORT_NAME, book["validation"])
    except ArchiveUnreadable as exc:
        raise _StageStop(EXIT_FATAL, str(exc))
    except CsvMalformed as exc:
        raise _StageStop(EXIT_FINDINGS, "metadata.csv malformed: %s" % exc)
    code = EXIT_OK if report.passed else EXIT_FINDINGS
    return code, "findings=%d" % len(report.findings)


def _stage_pack(plan, book):
    log = book["aff4"]
    log.info("start", backup=str(plan.backup_path), container=str(plan.container_path))
    try:
        records = load_records(plan.backup_path, log)
    except (OSError, zipfile.BadZipFile, KeyError) as exc:
        raise _StageStop(EXIT_FATAL, "cannot read backup archive: %s" % exc)
    except CsvMalformed as exc:
        raise _StageStop(EXIT_FINDINGS, "metadata.csv malformed: %s" % exc)

    problems = 0
    triples = []
    try:
        writer = create_container(plan.container_path, plan.urn, log)
        with writer, zipfile.ZipFile(plan.backup_path) as backup:
            for rec in sorted(records, key=lambda r: r.artifact_id):
                if not rec.ok:
                    log.warn("not_packed", id="%06d" % rec.artifact_id, reason="status_" + rec.status)
                    continue
                try:
                    with backup.open(payload_name(rec.artifact_id)) as src:
                        writer.add_artifact(rec, src)
                except KeyError:
                    problems += 1
                    log.error("not_packed", id="%06d" % rec.artifact_id, reason="payload_missing")
                    continue
                except (LengthMismatch, zipfile.BadZipFile) as exc:
                    problems += 1
                    log.error("not_packed", id="%06d" % rec.artifact_id, reason="unreadable", error=str(exc))
                    continue
                triples.extend(record_to_triples(rec, writer.urn))
            writer.write_information_turtle(serialize_turtle(triples))
    except OSError as exc:
        raise _StageStop(EXIT_FATAL, "writing container failed: %s" % exc)
    packed = len(writer.segments)
    log.info("summary", urn=writer.urn, packed=packed, problems=problems)
    log.info("end")
    return (EXIT_FINDINGS if problems else EXIT_OK), "packed=%d problems=%d" % (packed, problems)


def _stage_verify(plan, book):
    try:
        reader = open_container(plan.container_path)
    except NotAff4 as exc:
        raise _StageStop(EXIT_FATAL, str(exc))
    try:
        with reader:
            report = verify_container(reader, plan.temp_dir, plan.out_dir / VERIFICATION_REPORT_NAME,
                                      book["verify"], in_stream=plan.in_stream, workers=plan.workers)
    except SitError as exc:
        raise _StageStop(EXIT_FATAL, "verification failed: %s" % exc)
    except OSError as exc:
        raise _StageStop(EXIT_FATAL, "verification I/O error: %s" % exc)
    failed = sum(1 for v in report.verdicts if not v.passed)
    return (EXIT_OK if report.all_passed else EXIT_FINDINGS), "verified=%d failed=%d" % (len(report.verdicts), failed)


_STAGE_FUNCS = {
    "acquire": _stage_acquire,
    "validate": _stage_validate,
    "pack": _stage_pack,
    "verify": _stage_verify,
}


def run(plan):
    """Execute the stages of *plan* in order and return the process exit code."""
    try:
        plan.out_dir.mkdir(parents=True, exist_ok=True)
        book = Logbook(plan.out_dir, quiet=plan.quiet)
        cli_log = book["cli"]
    except (OSError, SitError) as exc:
        print("sit: fatal: cannot open logs in %s: %s" % (plan.out_dir, exc), file=sys.stderr)
        return EXIT_FATAL

    with book:
        cli_log.info("start", version=__version__, stages=",".join(plan.stages),
                     argv=" ".join(plan.argv), pid=os.getpid())
        exit_code = EXIT_OK
        for stage in plan.stages:
            cli_log.info("stage_start", stage=stage)
            try:
                code, detail = _STAGE_FUNCS[stage](plan, book)
            except _StageStop as stop:
                cli_log.error("stage_failed", stage=stage, exit_code=stop.code, error=str(stop))
                exit_code = stop.code
                break
            except SitError as exc:
                cli_log.error("stage_failed", stage=stage, exit_code=EXIT_FATAL, error=str(exc))
                exit_code = EXIT_FATAL
                break
            cli_log.info("stage_end", stage=stage, exit_code=code, result=detail)
            if code == EXIT_PARTIAL:
                cli_log.error("limit_hit", stage=stage, note="later stages not run")
                exit_code = EXIT_PARTIAL
                break
            if code != EXIT_OK:
                exit_code = max(exit_code, code)
        if exit_code == EXIT_FINDINGS:
            cli_log.error("integrity_problems", note="see validation/verification reports and module logs")
        cli_log.info("summary", exit_code=exit_code, stages=",".join(plan.stages))
        cli_log.info("end")
    return exit_code


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        plan = parse_args(argv)
    except UsageError as exc:
        print("sit: usage error: %s" % exc, file=sys.stderr)
        sys.exit(EXIT_USAGE)
    sys.exit(run(plan))
