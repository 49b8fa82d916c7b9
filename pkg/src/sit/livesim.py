"""Live-system harness: mutate a directory source while ``sit`` acquires it.

A scenario file looks like::

    {
      "staging": "path/to/tree",
      "config": "optional selection.json",
      "mutations": [
        {"trigger": "after_acquire", "target": "docs/f.txt", "action": "overwrite",
         "data_b64": "bmV3"},
        {"trigger": "after_pipeline", "target": "docs/f.txt", "action": "overwrite"}
      ]
    }

``at_start`` mutations change the staging tree before the initial hashes
are taken. ``after_acquire`` mutations fire as soon as the pipeline's
artifact log reports the target as acquired. ``after_pipeline`` mutations
tamper with the target's segment in the finished container, after which
``sit verify`` is run. Targets are paths relative to the staging root.

The pipeline only ever runs as a child process through its command line.
The harness reads the outputs (logs, container) afterwards to judge them.
"""

import argparse
import base64
import binascii
import hashlib
import json
import os
import shutil
import subprocess
import sys
import time
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from sit.aff4 import open_container, segment_name
from sit.errors import SitError
from sit.obslog import parse_line
from sit.turtle import AFF4

AT_START = "at_start"
AFTER_ACQUIRE = "after_acquire"
AFTER_PIPELINE = "after_pipeline"
TRIGGERS = (AT_START, AFTER_ACQUIRE, AFTER_PIPELINE)
ACTIONS = ("overwrite", "append", "delete")

MATCH_ALL_CONFIG = b'{"rules": [{"name_glob": "*"}]}\n'
POLL_INTERVAL = 0.02


class ScenarioInvalid(SitError):
    pass


class PipelineCrashed(SitError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass
class Mutation:
    trigger: str
    target: str
    action: str
    data: bytes = b""
    offset: Optional[int] = None
    fired: bool = False

    @property
    def source_path(self):
        """The target as the pipeline names it: rooted, backslash separated."""
        return "\\" + "\\".join(p for p in self.target.replace("\\", "/").split("/") if p)


@dataclass
class Scenario:
    staging: Path
    mutations: List[Mutation]
    config: Optional[Path] = None


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class HarnessReport:
    expected_hashes: Dict[str, str] = field(default_factory=dict)
    observed: Dict[str, str] = field(default_factory=dict)
    conclusions: List[Check] = field(default_factory=list)
    pipeline_exit: Optional[int] = None
    verify_exit: Optional[int] = None

    @property
    def passed(self):
        return bool(self.conclusions) and all(c.passed for c in self.conclusions)

    def check(self, name, passed, detail=""):
        self.conclusions.append(Check(name, bool(passed), detail))

    def to_json(self):
        return {
            "passed": self.passed,
            "pipeline_exit": self.pipeline_exit,
            "verify_exit": self.verify_exit,
            "expected_hashes": self.expected_hashes,
            "observed": self.observed,
            "conclusions": [{"name": c.name, "passed": c.passed, "detail": c.detail}
                            for c in self.conclusions],
        }


def _parse_mutation(i, obj):
    if not isinstance(obj, dict):
        raise ScenarioInvalid("mutation %d is not an object" % i)
    unknown = set(obj) - {"trigger", "target", "action", "data_b64", "offset"}
    if unknown:
        raise ScenarioInvalid("mutation %d has unknown keys: %s" % (i, ", ".join(sorted(unknown))))
    trigger, target, action = obj.get("trigger"), obj.get("target"), obj.get("action")
    if trigger not in TRIGGERS:
        raise ScenarioInvalid("mutation %d: trigger must be one of %s" % (i, ", ".join(TRIGGERS)))
    if action not in ACTIONS:
        raise ScenarioInvalid("mutation %d: action must be one of %s" % (i, ", ".join(ACTIONS)))
    if not isinstance(target, str) or not target.strip("/\\"):
        raise ScenarioInvalid("mutation %d: target must be a relative path" % i)
    if Path(target).is_absolute() or ".." in Path(target).parts:
        raise ScenarioInvalid("mutation %d: target %r escapes the staging tree" % (i, target))
    try:
        data = base64.b64decode(obj.get("data_b64", ""), validate=True)
    except (binascii.Error, TypeError) as exc:
        raise ScenarioInvalid("mutation %d: bad data_b64: %s" % (i, exc)) from None
    offset = obj.get("offset")
    if offset is not None and (not isinstance(offset, int) or isinstance(offset, bool) or offset < 0):
        raise ScenarioInvalid("mutation %d: offset must be a non-negative integer" % i)
    if action == "append" and not data:
        raise ScenarioInvalid("mutation %d: append needs data_b64" % i)
    return Mutation(trigger, target, action, data, offset)


def load_scenario(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ScenarioInvalid("cannot read scenario %s: %s" % (path, exc)) from None
    if not isinstance(doc, dict) or "staging" not in doc:
        raise ScenarioInvalid('scenario must be an object with "staging"')
    staging = (path.parent / doc["staging"]).resolve()
    if not staging.is_dir():
        raise ScenarioInvalid("staging %s is not a directory" % staging)
    mutations = doc.get("mutations", [])
    if not isinstance(mutations, list):
        raise ScenarioInvalid("mutations must be a list")
    config = doc.get("config")
    if config is not None:
        config = (path.parent / config).resolve()
    return Scenario(staging, [_parse_mutation(i, m) for i, m in enumerate(mutations)], config)


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fp:
        for chunk in iter(lambda: fp.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def snapshot(staging):
    """sha256 of every regular file under *staging*, keyed by rooted backslash path."""
    out = {}
    for dirpath, dirnames, filenames in os.walk(staging):
        dirnames.sort()
        for name in sorted(filenames):
            full = Path(dirpath) / name
            if full.is_symlink() or not full.is_file():
                continue
            rel = full.relative_to(staging)
            out["\\" + "\\".join(rel.parts)] = _sha256_file(full)
    return out


def _apply_bytes(old, mutation):
    if mutation.action == "append":
        return old + mutation.data
    if mutation.data:
        if mutation.offset is None:
            return mutation.data
        buf = bytearray(old)
        end = mutation.offset + len(mutation.data)
        if end > len(buf):
            buf.extend(b"\0" * (end - len(buf)))
        buf[mutation.offset:end] = mutation.data
        return bytes(buf)
    # no data: flip one byte
    buf = bytearray(old)
    pos = mutation.offset or 0
    if pos >= len(buf):
        buf.extend(b"\0" * (pos + 1 - len(buf)))
    buf[pos] ^= 0xFF
    return bytes(buf)


def mutate_file(staging, mutation):
    path = Path(staging) / mutation.target
    if mutation.action == "delete":
        path.unlink()
        return
    old = path.read_bytes() if path.exists() else b""
    path.write_bytes(_apply_bytes(old, mutation))


def tamper_container(container_path, segment, mutation):
    """Rewrite the container with *segment* changed, appended to or removed."""
    tmp = Path(str(container_path) + ".tamper")
    with zipfile.ZipFile(container_path) as src, zipfile.ZipFile(tmp, "w") as dst:
        if segment not in src.namelist():
            raise ScenarioInvalid("container has no segment %s" % segment)
        for info in src.infolist():
            if info.filename == segment:
                if mutation.action == "delete":
                    continue
                dst.writestr(info, _apply_bytes(src.read(info), mutation))
            else:
                dst.writestr(info, src.read(info))
    os.replace(tmp, container_path)


class LogTail:
    """Incrementally read complete lines appended to a file after a starting offset."""

    def __init__(self, path):
        self.path = Path(path)
        self.offset = self.path.stat().st_size if self.path.exists() else 0
        self._partial = b""

    def lines(self):
        if not self.path.exists():
            return []
        with open(self.path, "rb") as fp:
            fp.seek(self.offset)
            data = fp.read()
        self.offset += len(data)
        data = self._partial + data
        *complete, self._partial = data.split(b"\n")
        return [c.decode("utf-8", "replace") for c in complete]


def _sit_command(*args):
    return [sys.executable, "-m", "sit", *args]


def _recorded(container_path):
    """Map originalFileName → (urn, sha256) from the container metadata."""
    out = {}
    with open_container(container_path) as reader:
        names, hashes = {}, {}
        for t in reader.read_metadata():
            if t.predicate == AFF4 + "originalFileName":
                names[t.subject] = t.object.lexical
            elif t.predicate == AFF4 + "SHA256":
                hashes[t.subject] = t.object.lexical
        for urn, name in names.items():
            out[name] = (urn, hashes.get(urn))
    return out


def _segment_sha256(container_path, urn):
    with zipfile.ZipFile(container_path) as zf:
        return hashlib.sha256(zf.read(segment_name(urn))).hexdigest()


def run_scenario(scenario, out_dir, urn=None, fixed_time=None, timeout=600.0):
    """Run *scenario* against the pipeline and return a HarnessReport.

    Raises PipelineCrashed (carrying the partial report) when the pipeline
    does not finish with a defined exit code.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = HarnessReport()
    staging = scenario.staging

    for m in scenario.mutations:
        if m.trigger == AT_START:
            mutate_file(staging, m)
            m.fired = True
    report.expected_hashes = snapshot(staging)
    for m in scenario.mutations:
        if m.trigger != AT_START and m.source_path not in report.expected_hashes:
            raise ScenarioInvalid("target %s does not exist in the staging tree" % m.target)

    config = scenario.config
    if config is None:
        config = out_dir / "livesim_selection.json"
        config.write_bytes(MATCH_ALL_CONFIG)
    args = ["all", "--source", str(staging), "--source-kind", "dir", "--config", str(config),
            "--out-dir", str(out_dir), "--skip-verification", "--quiet"]
    if urn:
        args += ["--urn", urn]
    if fixed_time:
        args += ["--fixed-time", fixed_time]

    pending = {}
    for m in scenario.mutations:
        if m.trigger == AFTER_ACQUIRE:
            pending.setdefault(m.source_path, []).append(m)
    acquired = set()
    tail = LogTail(out_dir / "sit_artifact.log")

    def handle(lines):
        for line in lines:
            parsed = parse_line(line)
            if parsed is None or parsed[3] != "acquired":
                continue
            path = parsed[4].get("path")
            acquired.add(path)
            for m in pending.pop(path, []):
                mutate_file(staging, m)
                m.fired = True

    proc = subprocess.Popen(_sit_command(*args), stdout=subprocess.DEVNULL, stderr=subprocess.PIPE)
    deadline = time.monotonic() + timeout
    while proc.poll() is None:
        handle(tail.lines())
        if time.monotonic() > deadline:
            proc.kill()
            proc.wait()
            break
        time.sleep(POLL_INTERVAL)
    handle(tail.lines())
    stderr = proc.stderr.read().decode("utf-8", "replace")
    proc.stderr.close()
    report.pipeline_exit = proc.returncode

    if proc.returncode not in (0, 2, 3):
        report.check("pipeline_completed", False, "exit %s: %s" % (proc.returncode, stderr.strip()[-500:]))
        raise PipelineCrashed("pipeline exited with %s" % proc.returncode, report)
    report.check("pipeline_completed", proc.returncode == 0, "exit %d" % proc.returncode)

    container = out_dir / "evidence.aff4"
    recorded = _recorded(container)
    report.observed = {u: h for u, h in recorded.values()}

    for m in scenario.mutations:
        if m.trigger != AFTER_ACQUIRE:
            continue
        name = "acquisition_time_hash:%s" % m.target
        if not m.fired:
            report.check(name, False, "no acquired event for %s" % m.source_path)
            continue
        expected = report.expected_hashes[m.source_path]
        got = recorded.get(m.source_path, (None, None))
        report.check(name, got[1] == expected, "recorded %s, initial %s" % (got[1], expected))
        if m.action == "delete" and got[0] is not None:
            content = _segment_sha256(container, got[0])
            report.check("deleted_file_present:%s" % m.target, content == expected,
                         "payload sha256 %s" % content)

    missing = sorted(set(acquired) - set(recorded))
    report.check("acquired_paths_in_container", not missing, "missing: %s" % missing if missing else "")

    tampered = {}
    for m in scenario.mutations:
        if m.trigger != AFTER_PIPELINE:
            continue
        target_urn = recorded.get(m.source_path, (None, None))[0]
        if target_urn is None:
            raise ScenarioInvalid("after_pipeline target %s was not packed" % m.target)
        tamper_container(container, segment_name(target_urn), m)
        m.fired = True
        tampered[target_urn] = m.action

    verify = subprocess.run(_sit_command("verify", "--out-dir", str(out_dir), "--quiet"),
                            stdout=subprocess.DEVNULL, stderr=subprocess.PIPE, timeout=timeout)
    report.verify_exit = verify.returncode
    try:
        verdicts = json.loads((out_dir / "verification_report.json").read_text(encoding="utf-8"))["verdicts"]
    except (OSError, ValueError, KeyError):
        verdicts = []
    failing = {v["urn"]: v["result"] for v in verdicts if v["result"] != "pass"}
    if tampered:
        expected_fail = {u: ("fail_unreadable" if a == "delete" else "fail_mismatch")
                         for u, a in tampered.items()}
        report.check("verify_exit", verify.returncode == 2, "exit %d" % verify.returncode)
        report.check("tamper_detected", failing == expected_fail,
                     "failing %s, expected %s" % (failing, expected_fail))
    else:
        report.check("verify_exit", verify.returncode == 0, "exit %d" % verify.returncode)
        report.check("all_verdicts_pass", not failing and bool(verdicts) == bool(recorded),
                     "failing %s" % failing if failing else "")
    return report


def prepare_staging(src, dest):
    """Copy a pristine tree into a scratch staging directory that may be mutated."""
    if Path(dest).exists():
        shutil.rmtree(dest)
    shutil.copytree(src, dest)
    return Path(dest)


def main(argv=None):
    parser = argparse.ArgumentParser(prog="sit-livesim", description="Run a live-mutation scenario against sit.")
    parser.add_argument("scenario", help="scenario JSON file")
    parser.add_argument("--out-dir", required=True, help="output directory for the pipeline run")
    parser.add_argument("--urn", help="passed through to sit")
    parser.add_argument("--fixed-time", help="passed through to sit")
    parser.add_argument("--report", help="write the harness report as JSON here")
    args = parser.parse_args(argv)

    try:
        scenario = load_scenario(args.scenario)
        report = run_scenario(scenario, args.out_dir, args.urn, args.fixed_time)
    except ScenarioInvalid as exc:
        print("sit-livesim: invalid scenario: %s" % exc, file=sys.stderr)
        sys.exit(1)
    except PipelineCrashed as exc:
        report = exc.report
        print("sit-livesim: %s" % exc, file=sys.stderr)

    text = json.dumps(report.to_json(), indent=2)
    if args.report:
        Path(args.report).write_text(text + "\n", encoding="utf-8")
    print(text)
    for c in report.conclusions:
        print("%s %s %s" % ("PASS" if c.passed else "FAIL", c.name, c.detail), file=sys.stderr)
    sys.exit(0 if report.passed else 2)


if __name__ == "__main__":
    main()
