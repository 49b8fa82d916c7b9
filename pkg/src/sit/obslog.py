"""Per-module plain-text log files with console mirroring of key steps.

Every line has the form ``<ts> <LEVEL> <module> <event> k1=v1 k2=v2`` and is
flushed as soon as it is written, so a killed process loses at most the event
in flight.
"""

import re
import sys
import threading
from datetime import datetime, timezone
from pathlib import Path

from sit.errors import SitIOError

INFO = "INFO"
WARN = "WARN"
ERROR = "ERROR"
LEVELS = (INFO, WARN, ERROR)

# Events mirrored to the console (the "key steps" users must see).
CONSOLE_EVENTS = frozenset({
    "start", "end",
    "acquired", "failed", "limit_hit",
    "finding", "summary", "verdict",
})

_NEEDS_QUOTES = re.compile(r'[\s"]')
_LINE_RE = re.compile(
    r"^(?P<ts>\S+) (?P<level>INFO|WARN|ERROR) (?P<module>\S+) (?P<event>\S+)(?P<rest>.*)$"
)
_KV_RE = re.compile(r'\s+([^=\s]+)=("(?:[^"\\]|\\.)*"|\S*)')


def _utc_now_ms():
    now = datetime.now(timezone.utc)
    return now.strftime("%Y-%m-%dT%H:%M:%S.") + "%03dZ" % (now.microsecond // 1000)


def format_value(value):
    if value is None:
        text = ""
    elif isinstance(value, bool):
        text = "true" if value else "false"
    else:
        text = str(value)
    if text == "" or _NEEDS_QUOTES.search(text):
        return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'
    return text


def format_line(timestamp, level, module, event, kv):
    parts = [timestamp, level, module, event]
    parts.extend("%s=%s" % (k, format_value(v)) for k, v in kv.items())
    return " ".join(parts)


def parse_line(line):
    """Split a log line into ``(ts, level, module, event, kv)``; None if it is not one."""
    m = _LINE_RE.match(line.rstrip("\r\n"))
    if m is None:
        return None
    kv = {}
    for key, raw in _KV_RE.findall(m.group("rest")):
        if raw.startswith('"'):
            raw = re.sub(r"\\(.)", r"\1", raw[1:-1])
        kv[key] = raw
    return m.group("ts"), m.group("level"), m.group("module"), m.group("event"), kv


class LogSink:
    """Append-only, line-flushed log channel for one module.

    Safe to share between threads: each line is written under a lock, so
    concurrent writers never tear lines.
    """

    def __init__(self, module, fp=None, path=None, quiet=False, stdout=None, stderr=None,
                 console=True):
        self.module = module
        self.console = console
        self.path = path
        self.quiet = quiet
        self._fp = fp
        self._stdout = stdout
        self._stderr = stderr
        self._lock = threading.Lock()
        self._last_ts = ""

    def emit(self, level, event, **kv):
        if level not in LEVELS:
            raise ValueError("unknown log level %r" % level)
        if not event:
            raise ValueError("event must be non-empty")
        with self._lock:
            ts = max(_utc_now_ms(), self._last_ts)
            self._last_ts = ts
            line = format_line(ts, level, self.module, event, kv)
            if self._fp is not None:
                try:
                    self._fp.write(line + "\n")
                    self._fp.flush()
                except OSError as exc:
                    # The console is the fallback channel.
                    self._console(ERROR, "%s [log write failed: %s]" % (line, exc), force=True)
            self._mirror(level, event, line)
        return line

    def info(self, event, **kv):
        return self.emit(INFO, event, **kv)

    def warn(self, event, **kv):
        return self.emit(WARN, event, **kv)

    def error(self, event, **kv):
        return self.emit(ERROR, event, **kv)

    def _mirror(self, level, event, line):
        if level == ERROR:
            self._console(level, line, force=True)
        elif event in CONSOLE_EVENTS and not self.quiet:
            self._console(level, line)

    def _console(self, level, line, force=False):
        if not self.console or (self.quiet and not force):
            return
        stream = (self._stderr or sys.stderr) if level == ERROR else (self._stdout or sys.stdout)
        try:
            stream.write(line + "\n")
            stream.flush()
        except (OSError, ValueError):
            pass

    def close(self):
        with self._lock:
            if self._fp is not None:
                self._fp.close()
                self._fp = None


def open_module_log(out_dir, module, quiet=False):
    """Open ``sit_<module>.log`` in *out_dir* for appending.

    Raises SitIOError when the directory is not writable; the pipeline
    refuses to run unlogged.
    """
    path = Path(out_dir) / ("sit_%s.log" % module)
    try:
        fp = open(path, "a", encoding="utf-8", newline="\n")
    except OSError as exc:
        raise SitIOError("cannot open log %s: %s" % (path, exc)) from exc
    return LogSink(module, fp=fp, path=path, quiet=quiet)


def null_sink(module="null"):
    """A sink that writes nowhere and never mirrors to the console."""
    return LogSink(module, quiet=True, console=False)


class Logbook:
    """Lazily opens one sink per module inside an output directory."""

    def __init__(self, out_dir, quiet=False):
        self.out_dir = Path(out_dir)
        self.quiet = quiet
        self._sinks = {}

    def __getitem__(self, module):
        sink = self._sinks.get(module)
        if sink is None:
            sink = open_module_log(self.out_dir, module, quiet=self.quiet)
            self._sinks[module] = sink
        return sink

    def close(self):
        for sink in self._sinks.values():
            sink.close()
        self._sinks.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def sink_or_null(log, module):
    return log if log is not None else null_sink(module)

