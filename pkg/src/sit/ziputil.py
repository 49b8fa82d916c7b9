"""ZIP writer that keeps the archive readable after every entry."""

import os
import zipfile

# Normalized entry metadata so identical inputs give identical archives.
FIXED_DATE_TIME = (1980, 1, 1, 0, 0, 0)


def make_info(name, compress_type=zipfile.ZIP_DEFLATED, file_size=0):
    info = zipfile.ZipInfo(name, date_time=FIXED_DATE_TIME)
    info.compress_type = compress_type
    info.create_system = 3
    info.external_attr = 0o644 << 16
    info.file_size = file_size
    return info


class CheckpointZip(zipfile.ZipFile):
    """A ``ZipFile`` opened for writing whose central directory can be
    committed after each entry (``checkpoint``) and whose last entry can be
    rolled back when streaming it failed part-way (``write_stream``).

    ZIP64 structures are emitted automatically by ``zipfile`` past the 4 GiB
    thresholds.
    """

    def __init__(self, path, mode="w"):
        super().__init__(path, mode, compression=zipfile.ZIP_DEFLATED, allowZip64=True)

    def checkpoint(self):
        """Write the central directory at the current end and sync it to disk."""
        with self._lock:
            self.fp.seek(self.start_dir)
            self._write_end_record()
            self.fp.truncate()
            self.fp.flush()
            try:
                os.fsync(self.fp.fileno())
            except OSError:
                pass

    def write_stream(self, info, chunks, on_chunk=None):
        """Stream *chunks* into entry *info*; returns the byte count.

        If iterating *chunks* raises, the partial entry is removed from the
        archive, the archive is checkpointed at its previous state and the
        exception propagates.
        """
        start = self.start_dir
        force_zip64 = info.file_size > zipfile.ZIP64_LIMIT
        dst = self.open(info, "w", force_zip64=force_zip64)
        written = 0
        try:
            for chunk in chunks:
                dst.write(chunk)
                written += len(chunk)
                if on_chunk is not None:
                    on_chunk(chunk)
        except BaseException:
            dst.close()
            self._discard(info, start)
            raise
        dst.close()
        return written

    def _discard(self, info, start):
        if self.filelist and self.filelist[-1] is info:
            self.filelist.pop()
        self.NameToInfo.pop(info.filename, None)
        self.start_dir = start
        self.checkpoint()
