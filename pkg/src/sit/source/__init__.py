"""Read-only access to evidence sources.

Two kinds are supported: raw NTFS volume images (no partition table, the
image starts with the boot sector), parsed directly from the MFT, and plain
directory trees. Nothing in this package ever opens a source for writing.
"""

import os
from dataclasses import dataclass
from typing import Optional

from sit.errors import SitError, SitIOError
from sit.obslog import sink_or_null
from sit.source.boot import BadGeometry, NotNtfs, VolumeGeometry, parse_boot_sector
from sit.source.directory import DirectoryTree
from sit.source.entries import (
    FileEntry,
    HostFileContent,
    ResidentContent,
    RunlistContent,
)
from sit.source.mft import (
    BadSignature,
    FixupError,
    TornWrite,
    TruncatedAttribute,
    apply_fixups,
    parse_mft_record,
    resolve_paths,
)
from sit.source.ntfs import NtfsVolume
from sit.source.runlist import DataRun, Overflow, RunlistError, decode_data_runs

NTFS_IMAGE = "ntfs_image"
DIRECTORY = "directory"
SOURCE_KINDS = (NTFS_IMAGE, DIRECTORY)
MIN_CHUNK_SIZE = 4096


class NotFound(SitError, FileNotFoundError):
    """The source path does not exist."""


class PermissionDenied(SitError, PermissionError):
    """The source exists but cannot be read."""


@dataclass
class SourceHandle:
    kind: str
    root: str
    geometry: Optional[VolumeGeometry]
    _backend: object
    _fp: object = None

    def close(self):
        if self._fp is not None:
            self._fp.close()
            self._fp = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_source(path, kind, log=None, include_deleted=False, include_system=False):
    """Open *path* as a read-only source of *kind* (``ntfs_image`` or ``directory``)."""
    log = sink_or_null(log, "source")
    if kind not in SOURCE_KINDS:
        raise ValueError("unknown source kind %r" % kind)
    if not os.path.exists(path):
        raise NotFound("source %s does not exist" % path)

    if kind == DIRECTORY:
        if not os.path.isdir(path):
            raise NotFound("source %s is not a directory" % path)
        if not os.access(path, os.R_OK | os.X_OK):
            raise PermissionDenied("source %s is not readable" % path)
        log.info("opened", kind=kind, path=path)
        return SourceHandle(kind, os.path.abspath(path), None, DirectoryTree(path, log))

    try:
        fp = open(path, "rb")
    except PermissionError as exc:
        raise PermissionDenied("source %s is not readable: %s" % (path, exc)) from exc
    except IsADirectoryError as exc:
        raise NotNtfs("source %s is a directory, not a volume image" % path) from exc
    try:
        size = os.fstat(fp.fileno()).st_size
        sector = fp.read(512)
        if len(sector) < 512:
            raise NotNtfs("%s is smaller than one sector" % path)
        geometry = parse_boot_sector(sector)
        image_sectors = size // geometry.bytes_per_sector
        if geometry.total_sectors == 0 or geometry.total_sectors > image_sectors + 1:
            raise BadGeometry("boot sector declares %d sectors, image holds %d"
                              % (geometry.total_sectors, image_sectors))
        if geometry.mft_lcn >= geometry.total_clusters:
            raise BadGeometry("MFT LCN %d lies outside the volume" % geometry.mft_lcn)
    except BaseException:
        fp.close()
        raise
    log.info("opened", kind=kind, path=path, bytes_per_sector=geometry.bytes_per_sector,
             cluster_size=geometry.cluster_size, mft_lcn=geometry.mft_lcn,
             mft_record_size=geometry.mft_record_size)
    volume = NtfsVolume(fp, geometry, log, include_deleted=include_deleted,
                        include_system=include_system)
    return SourceHandle(kind, os.path.abspath(path), geometry, volume, fp)


def list_entries(handle):
    """Iterate selectable file entries in the source's canonical order.

    NTFS images yield in-use, non-directory records by ascending record
    number; directory trees yield regular files by full path.
    """
    return handle._backend.entries()


def read_file_content(handle, entry, chunk_size=1 << 20):
    """Return a fresh iterator over exactly ``entry.size_bytes`` bytes of content.

    Each call restarts from the beginning. Chunks never exceed *chunk_size*.
    """
    if chunk_size < MIN_CHUNK_SIZE:
        raise ValueError("chunk_size must be at least %d" % MIN_CHUNK_SIZE)
    return handle._backend.read(entry, chunk_size)


__all__ = [
    "BadGeometry", "BadSignature", "DataRun", "DIRECTORY", "FileEntry", "FixupError",
    "HostFileContent", "NTFS_IMAGE", "NotFound", "NotNtfs", "Overflow", "PermissionDenied",
    "ResidentContent", "RunlistContent", "RunlistError", "SourceHandle", "SitIOError",
    "TornWrite", "TruncatedAttribute", "VolumeGeometry", "apply_fixups", "decode_data_runs",
    "list_entries", "open_source", "parse_boot_sector", "parse_mft_record", "read_file_content",
    "resolve_paths",
]
