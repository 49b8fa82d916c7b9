"""NTFS runlist (mapping pairs) decoding."""

from dataclasses import dataclass
from typing import Optional

from sit.errors import SitError


class RunlistError(SitError):
    """A runlist is structurally invalid."""


class Overflow(RunlistError):
    """A run header announces more field bytes than remain in the buffer."""


@dataclass(frozen=True)
class DataRun:
    cluster_count: int
    lcn: Optional[int] = None  # None marks a sparse run

    @property
    def sparse(self):
        return self.lcn is None


def decode_data_runs(runlist, start=0):
    """Decode mapping pairs starting at *start* until the 0x00 terminator.

    Each header byte holds the byte width of the length field in its low
    nibble and of the signed LCN delta in its high nibble. A zero-width
    delta denotes a sparse run.
    """
    runs = []
    buf = bytes(runlist)
    pos = start
    lcn = 0
    while True:
        if pos >= len(buf):
            raise Overflow("runlist not terminated at offset %d" % pos)
        header = buf[pos]
        if header == 0:
            return runs
        len_size = header & 0x0F
        off_size = header >> 4
        if len_size == 0 or len_size > 8 or off_size > 8:
            raise RunlistError("bad run header 0x%02x at offset %d" % (header, pos))
        pos += 1
        if pos + len_size + off_size > len(buf):
            raise Overflow(
                "run at offset %d needs %d bytes, %d remain"
                % (pos - 1, len_size + off_size, len(buf) - pos)
            )
        count = int.from_bytes(buf[pos:pos + len_size], "little")
        pos += len_size
        if count == 0:
            raise RunlistError("zero-length run at offset %d" % (pos - len_size - 1))
        if off_size == 0:
            runs.append(DataRun(count, None))
            continue
        delta = int.from_bytes(buf[pos:pos + off_size], "little", signed=True)
        pos += off_size
        lcn += delta
        if lcn < 0:
            raise RunlistError("negative LCN %d" % lcn)
        runs.append(DataRun(count, lcn))
