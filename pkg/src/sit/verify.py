"""Integrity verification of container segments against their recorded hashes."""

import hashlib
import json
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from sit.aff4 import artifact_index
from sit.obslog import sink_or_null
from sit.turtle import AFF4

PASS = "pass"
FAIL_MISMATCH = "fail_mismatch"
FAIL_MISSING_HASH = "fail_missing_hash"
FAIL_UNREADABLE = "fail_unreadable"

ALGORITHMS = ("md5", "sha1", "sha256")
_HASH_PREDICATES = {"md5": AFF4 + "MD5", "sha1": AFF4 + "SHA1", "sha256": AFF4 + "SHA256"}
READ_CHUNK = 1 << 20


@dataclass
class HashComparison:
    expected: Optional[str]
    actual: Optional[str]

    @property
    def equal(self):
        return (self.expected is not None and self.actual is not None
                and self.expected.lower() == self.actual.lower())


@dataclass
class VerificationVerdict:
    urn: str
    result: str
    per_algorithm: Dict[str, HashComparison]
    error: Optional[str] = None

    @property
    def passed(self):
        return self.result == PASS

    def to_json(self):
        out = {"urn": self.urn, "result": self.result}
        for alg in ALGORITHMS:
            cmp = self.per_algorithm[alg]
            out[alg] = {"expected": cmp.expected, "actual": cmp.actual}
        return out


@dataclass
class VerificationReport:
    container_urn: str
    verdicts: List[VerificationVerdict] = field(default_factory=list)

    @property
    def all_passed(self):
        return all(v.passed for v in self.verdicts)

    def to_json(self):
        return {
            "container_urn": self.container_urn,
            "all_passed": self.all_passed,
            "verdicts": [v.to_json() for v in self.verdicts],
        }

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fp:
            json.dump(self.to_json(), fp, indent=2)
            fp.write("\n")


def expected_hashes(triples, urn):
    """Recorded hex digests for *urn*, None where a hash triple is absent."""
    found = {alg: None for alg in ALGORITHMS}
    by_predicate = {p: alg for alg, p in _HASH_PREDICATES.items()}
    for t in triples:
        if t.subject == urn and t.predicate in by_predicate:
            found[by_predicate[t.predicate]] = t.object.lexical if hasattr(t.object, "lexical") else None
    return found


def _hash_stream(fp):
    hashers = {alg: hashlib.new(alg) for alg in ALGORITHMS}
    while True:
        chunk = fp.read(READ_CHUNK)
        if not chunk:
            break
        for h in hashers.values():
            h.update(chunk)
    return {alg: h.hexdigest() for alg, h in hashers.items()}


def verify_artifact(reader, urn, temp_dir, in_stream=False, triples=None):
    """Re-hash one artifact and compare with its metadata.

    By default the segment is first extracted to a uniquely named file in
    *temp_dir*, which is removed afterwards. Problems become verdicts, not
    exceptions.
    """
    triples = reader.read_metadata() if triples is None else triples
    expected = expected_hashes(triples, urn)
    actual = {alg: None for alg in ALGORITHMS}
    error = None
    try:
        if in_stream:
            with reader.open_segment(urn) as src:
                actual = _hash_stream(src)
        else:
            fd, tmp = tempfile.mkstemp(prefix="verify_", suffix=".bin", dir=temp_dir)
            os.close(fd)
            try:
                reader.extract_artifact(urn, tmp)
                with open(tmp, "rb") as fp:
                    actual = _hash_stream(fp)
            finally:
                os.unlink(tmp)
    except Exception as exc:  # any extraction failure is a verdict
        error = "%s: %s" % (type(exc).__name__, exc)

    per_alg = {alg: HashComparison(expected[alg], actual[alg]) for alg in ALGORITHMS}
    if error is not None:
        result = FAIL_UNREADABLE
    elif any(expected[alg] is None for alg in ALGORITHMS):
        result = FAIL_MISSING_HASH
    elif all(c.equal for c in per_alg.values()):
        result = PASS
    else:
        result = FAIL_MISMATCH
    return VerificationVerdict(urn, result, per_alg, error)


def verify_container(reader, temp_dir, report_path=None, log=None, in_stream=False, workers=1):
    """Verify every aff4:Image artifact; verdicts come back in ascending artifact order."""
    log = sink_or_null(log, "verify")
    os.makedirs(temp_dir, exist_ok=True)
    log.info("start", container=reader.urn, temp_dir=str(temp_dir), in_stream=in_stream)
    triples = reader.read_metadata()
    urns = reader.image_urns()
    report = VerificationReport(reader.urn)
    if not urns:
        log.warn("empty_container", container=reader.urn)

    known = {u[len("aff4://"):] for u in urns}
    for name in reader.segment_names():
        if name not in known:
            log.warn("segment_without_metadata", segment=name)

    def one(urn):
        return verify_artifact(reader, urn, temp_dir, in_stream=in_stream, triples=triples)

    if workers > 1 and len(urns) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            verdicts = list(pool.map(one, urns))
    else:
        verdicts = [one(u) for u in urns]

    for verdict in verdicts:
        report.verdicts.append(verdict)
        idx = artifact_index(verdict.urn)
        kv = {"id": "%06d" % idx if idx is not None else "", "urn": verdict.urn, "result": verdict.result}
        for alg in ALGORITHMS:
            kv[alg] = "equal" if verdict.per_algorithm[alg].equal else "differs"
        if verdict.error:
            kv["error"] = verdict.error
        if verdict.passed:
            log.info("verdict", **kv)
        else:
            log.error("verdict", **kv)

    if report_path is not None:
        report.write(report_path)
    failed = sum(1 for v in report.verdicts if not v.passed)
    log.info("summary", all_passed=report.all_passed, verified=len(report.verdicts), failed=failed)
    log.info("end")
    return report
