"""Timestamp conversions shared by acquisition, validation and the CLI."""

import re
from datetime import datetime, timedelta, timezone

FILETIME_TICKS_PER_SECOND = 10_000_000
_FILETIME_EPOCH = datetime(1601, 1, 1)
# Seconds between 1601-01-01 and 1970-01-01.
UNIX_EPOCH_AS_FILETIME = 116_444_736_000_000_000

_ISO_RE = re.compile(
    r"^(\d{4})-(\d{2})-(\d{2})T(\d{2}):(\d{2}):(\d{2})(?:\.(\d{1,9}))?(Z|[+-]\d{2}:\d{2})$"
)


def filetime_to_iso(filetime):
    """Render a FILETIME (100 ns ticks since 1601-01-01 UTC) as ISO-8601 with 7 fraction digits."""
    if filetime < 0:
        raise ValueError("FILETIME must be non-negative")
    seconds, ticks = divmod(filetime, FILETIME_TICKS_PER_SECOND)
    try:
        moment = _FILETIME_EPOCH + timedelta(seconds=seconds)
    except OverflowError as exc:
        raise ValueError("FILETIME %d is beyond year 9999" % filetime) from exc
    return moment.strftime("%Y-%m-%dT%H:%M:%S") + ".%07dZ" % ticks


def unix_ns_to_filetime(ns):
    return UNIX_EPOCH_AS_FILETIME + ns // 100


def datetime_to_iso(moment):
    """UTC ISO-8601 with 7 fraction digits and a ``Z`` suffix."""
    if moment.tzinfo is not None:
        moment = moment.astimezone(timezone.utc).replace(tzinfo=None)
    return moment.strftime("%Y-%m-%dT%H:%M:%S") + ".%07dZ" % (moment.microsecond * 10)


def parse_iso(text):
    """Parse an ISO-8601 timestamp with an explicit offset into an aware UTC datetime.

    Up to 9 fraction digits are accepted (anything past microseconds is
    truncated). Raises ValueError on anything else.
    """
    m = _ISO_RE.match(text)
    if m is None:
        raise ValueError("not an ISO-8601 timestamp: %r" % text)
    year, month, day, hour, minute, second = (int(g) for g in m.groups()[:6])
    frac = (m.group(7) or "").ljust(6, "0")[:6]
    tz = m.group(8)
    if tz == "Z":
        offset = timezone.utc
    else:
        sign = 1 if tz[0] == "+" else -1
        offset = timezone(sign * timedelta(hours=int(tz[1:3]), minutes=int(tz[4:6])))
    moment = datetime(year, month, day, hour, minute, second, int(frac), tzinfo=offset)
    return moment.astimezone(timezone.utc)


def is_iso(text):
    try:
        parse_iso(text)
    except ValueError:
        return False
    return True


class FixedClock:
    """Clock that always reports the same instant."""

    def __init__(self, moment):
        self.moment = moment

    def __call__(self):
        return self.moment


def system_clock():
    return datetime.now(timezone.utc)
