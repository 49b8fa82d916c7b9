"""Plain directory trees as a portable evidence source."""

import os
import stat

from sit.errors import SitIOError
from sit.obslog import sink_or_null
from sit.source.entries import (
    FILE_ATTRIBUTE_HIDDEN,
    FILE_ATTRIBUTE_NORMAL,
    FILE_ATTRIBUTE_READONLY,
    FileEntry,
    HostFileContent,
)
from sit.timeutil import unix_ns_to_filetime

_O_NOATIME = getattr(os, "O_NOATIME", 0)
_O_BINARY = getattr(os, "O_BINARY", 0)


def open_readonly(path):
    """Open *path* for reading without touching its access time where the OS allows it."""
    flags = os.O_RDONLY | _O_BINARY
    if _O_NOATIME:
        try:
            return os.open(path, flags | _O_NOATIME)
        except PermissionError:
            # O_NOATIME needs file ownership.
            pass
    return os.open(path, flags)


def _attr_flags(name, st):
    flags = 0
    if not st.st_mode & (stat.S_IWUSR | stat.S_IWGRP | stat.S_IWOTH):
        flags |= FILE_ATTRIBUTE_READONLY
    if name.startswith("."):
        flags |= FILE_ATTRIBUTE_HIDDEN
    return flags or FILE_ATTRIBUTE_NORMAL


class DirectoryTree:
    def __init__(self, root, log=None):
        self.root = os.path.abspath(root)
        self.log = sink_or_null(log, "source")

    def _walk(self, host_dir, rel_parts):
        try:
            with os.scandir(host_dir) as it:
                items = list(it)
        except OSError as exc:
            self.log.error("io_error", path=host_dir, error=str(exc))
            return
        for item in items:
            parts = rel_parts + [item.name]
            try:
                st = item.stat(follow_symlinks=False)
            except OSError as exc:
                self.log.error("io_error", path=item.path, error=str(exc))
                continue
            if stat.S_ISDIR(st.st_mode):
                yield from self._walk(item.path, parts)
            elif stat.S_ISREG(st.st_mode):
                yield self._to_entry(item.path, parts, st)
            else:
                self.log.warn("skip", path="\\" + "\\".join(parts), reason="not_regular_file")

    def _to_entry(self, host_path, parts, st):
        birth = getattr(st, "st_birthtime", None)
        return FileEntry(
            full_path="\\" + "\\".join(parts),
            name=parts[-1],
            size_bytes=st.st_size,
            content=HostFileContent(host_path),
            created_utc=unix_ns_to_filetime(int(birth * 1_000_000_000)) if birth is not None else None,
            modified_utc=unix_ns_to_filetime(st.st_mtime_ns),
            accessed_utc=unix_ns_to_filetime(st.st_atime_ns),
            attr_flags=_attr_flags(parts[-1], st),
        )

    def entries(self):
        return iter(sorted(self._walk(self.root, []), key=lambda e: e.full_path))

    def read(self, entry, chunk_size):
        path = entry.content.path
        try:
            fd = open_readonly(path)
        except OSError as exc:
            raise SitIOError("cannot open %s: %s" % (path, exc)) from exc
        try:
            remaining = entry.size_bytes
            while remaining > 0:
                chunk = os.read(fd, min(chunk_size, remaining))
                if not chunk:
                    raise SitIOError("%s shrank: %d bytes missing" % (path, remaining))
                remaining -= len(chunk)
                yield chunk
            if os.read(fd, 1):
                self.log.warn("size_changed", path=entry.full_path, recorded=entry.size_bytes,
                              note="content beyond the enumerated size was not acquired")
        except OSError as exc:
            raise SitIOError("read failed for %s: %s" % (path, exc)) from exc
        finally:
            os.close(fd)
