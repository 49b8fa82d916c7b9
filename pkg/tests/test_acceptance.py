"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The lines are printed as the tests run (visible with ``-s``) and repeated
in a summary section at the end of the pytest session.
"""

import base64
import hashlib
import json
import random
import shutil
import subprocess
import sys
import time
import zipfile
from contextlib import contextmanager
from pathlib import Path

import pytest

from sit.aff4 import TURTLE_NAME
from sit.artifact import METADATA_NAME, ArtifactRecord, payload_name, read_metadata_csv
from sit.livesim import load_scenario, run_scenario
from sit.obslog import parse_line
from sit.source.runlist import RunlistError, decode_data_runs
from sit.turtle import parse_turtle, serialize_turtle
from sit.validation import record_to_triples, validate

from archive_faults import flip_segment_byte, rewrite_zip, with_rows
from conftest import FIXED_TIME, FIXED_URN
from ntfsbuild import standard_fixture
from runlist_oracle import brute_force_decode

RESULTS = []

# Reference vectors, produced with coreutils md5sum/sha1sum/sha256sum.
VECTORS = {
    b"": ("d41d8cd98f00b204e9800998ecf8427e",
          "da39a3ee5e6b4b0d3255bfef95601890afd80709",
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"),
    b"abc": ("900150983cd24fb0d6963f7d28e17f72",
             "a9993e364706816aba3e25717850c26c9cd0d89d",
             "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"),
}


@contextmanager
def criterion(number, title):
    try:
        yield
    except BaseException as exc:
        line = "FAIL criterion %2d: %s (%s)" % (number, title, str(exc).splitlines()[0] if str(exc) else
                                               type(exc).__name__)
        RESULTS.append(line)
        print(line)
        raise
    line = "PASS criterion %2d: %s" % (number, title)
    RESULTS.append(line)
    print(line)


def sit(*argv, timeout=300):
    """Run the CLI as a separate process; returns (exit_code, seconds)."""
    t0 = time.monotonic()
    proc = subprocess.run([sys.executable, "-m", "sit", *map(str, argv)], stdout=subprocess.DEVNULL,
                          stderr=subprocess.PIPE, timeout=timeout)
    return proc.returncode, time.monotonic() - t0


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fp:
        for chunk in iter(lambda: fp.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def metadata_rows(backup):
    with zipfile.ZipFile(backup) as zf:
        header, rows = read_metadata_csv(zf.read(METADATA_NAME))
    return [dict(zip(header, r)) for r in rows]


def log_events(out_dir, module):
    lines = (Path(out_dir) / ("sit_%s.log" % module)).read_text().splitlines()
    return [parse_line(l) for l in lines]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def config(workdir):
    path = workdir / "select_all.json"
    path.write_text(json.dumps({"rules": [{"name_glob": "*"}]}))
    return path


@pytest.fixture(scope="module")
def fixture_run(workdir, config):
    """The end-to-end run on the standard fixture that several criteria inspect."""
    builder, image_bytes = standard_fixture()
    image = workdir / "fixture.raw"
    image.write_bytes(image_bytes)
    before = sha256_file(image)
    out = workdir / "all"
    code, seconds = sit("all", "--source", image, "--source-kind", "ntfs-image", "--config", config,
                        "--out-dir", out, "--urn", FIXED_URN, "--fixed-time", FIXED_TIME, "--quiet")
    return {"builder": builder, "image": image, "size": len(image_bytes), "out": out, "code": code,
            "seconds": seconds, "before": before, "after": sha256_file(image)}


def test_c01_end_to_end(fixture_run):
    with criterion(1, "end-to-end soundness on the NTFS fixture"):
        assert 15 << 20 <= fixture_run["size"] <= 17 << 20
        assert len(fixture_run["builder"].expected) >= 20
        out = fixture_run["out"]
        assert fixture_run["code"] == 0, "exit %s" % fixture_run["code"]
        names = {r["name"]: r for r in metadata_rows(out / "backup.zip")}
        # resident, sparse and fragmented layouts are all present
        assert {"readme.txt", "sparse.vhd", "frag.db"} <= set(names)
        validation = json.loads((out / "validation_report.json").read_text())
        assert validation["findings"] == [] and validation["passed"]
        verification = json.loads((out / "verification_report.json").read_text())
        assert verification["all_passed"] is True
        assert len(verification["verdicts"]) == len(fixture_run["builder"].expected)
        assert fixture_run["seconds"] < 10, "took %.2f s" % fixture_run["seconds"]


def test_c02_read_only(fixture_run):
    with criterion(2, "source image SHA256 unchanged by the run"):
        assert fixture_run["code"] == 0
        assert fixture_run["before"] == fixture_run["after"]


def test_c03_hash_vectors(fixture_run, workdir, config):
    with criterion(3, "reference hash vectors for empty and abc"):
        staging = workdir / "vectors"
        staging.mkdir()
        (staging / "empty.txt").write_bytes(b"")
        (staging / "abc.txt").write_bytes(b"abc")
        out = workdir / "vectors_out"
        code, _ = sit("acquire", "--source", staging, "--source-kind", "dir", "--config", config,
                      "--out-dir", out, "--quiet")
        assert code == 0
        runs = [metadata_rows(out / "backup.zip"), metadata_rows(fixture_run["out"] / "backup.zip")]
        for rows in runs:
            by_name = {r["name"]: r for r in rows}
            for name, content in (("empty.txt", b""), ("abc.txt", b"abc"), ("readme.txt", b"abc")):
                if name not in by_name:
                    continue
                row = by_name[name]
                assert (row["md5"], row["sha1"], row["sha256"]) == VECTORS[content], name
        assert {"empty.txt", "abc.txt"} <= {r["name"] for r in runs[0]}


def test_c04_tamper_detection(fixture_run, workdir):
    with criterion(4, "one flipped payload byte gives exactly one fail_mismatch"):
        out = workdir / "tamper"
        shutil.copytree(fixture_run["out"], out)
        urn = FIXED_URN + "/artifact/000004"
        flip_segment_byte(out / "evidence.aff4", urn[len("aff4://"):], offset=0)
        code, _ = sit("verify", "--out-dir", out, "--quiet")
        assert code == 2, "exit %s" % code
        verdicts = json.loads((out / "verification_report.json").read_text())["verdicts"]
        failing = [(v["urn"], v["result"]) for v in verdicts if v["result"] != "pass"]
        assert failing == [(urn, "fail_mismatch")]
        assert len(verdicts) == len(fixture_run["builder"].expected)


def test_c05_fault_matrix(fixture_run, workdir):
    with criterion(5, "validation fault matrix and clean archive"):
        clean = fixture_run["out"] / "backup.zip"
        assert validate(clean).findings == []
        ids = [r["artifact_id"] for r in metadata_rows(clean)]
        target = ids[3]

        def drop_row(rows):
            return [r for r in rows if r["artifact_id"] != target]

        def short_md5(rows):
            rows[3]["md5"] = rows[3]["md5"][:-1]
            return rows

        def duplicate(rows):
            return rows + [dict(rows[3])]

        def bigger(rows):
            rows[3]["size_bytes"] = str(int(rows[3]["size_bytes"]) + 1)
            return rows

        for n, (fault, cls) in enumerate([("payload", "MissingArtifact"), (drop_row, "MissingMetadata"),
                                          (short_md5, "BadFieldType"), (duplicate, "DuplicateId"),
                                          (bigger, "SizeMismatch")]):
            faulty = workdir / ("fault%d.zip" % n)
            if fault == "payload":
                rewrite_zip(clean, faulty, drop={payload_name(int(target))})
            else:
                with_rows(clean, faulty, fault)
            found = [(f.cls, f.artifact_id) for f in validate(faulty).findings]
            assert found == [(cls, int(target))], "%s: %s" % (cls, found)


def test_c06_determinism_and_resume(fixture_run, workdir, config):
    with criterion(6, "staged run matches all; pack and verify work without the source"):
        source = workdir / "staged_source.raw"
        shutil.copyfile(fixture_run["image"], source)
        out = workdir / "staged"
        common = ["--out-dir", out, "--urn", FIXED_URN, "--fixed-time", FIXED_TIME, "--quiet"]
        assert sit("acquire", "--source", source, "--config", config, *common)[0] == 0
        for stage in ("validate", "pack", "verify"):
            assert sit(stage, *common)[0] == 0, stage

        def turtle(path):
            with zipfile.ZipFile(path) as zf:
                return zf.read(TURTLE_NAME)

        expected = turtle(fixture_run["out"] / "evidence.aff4")
        assert turtle(out / "evidence.aff4") == expected

        source.unlink()
        (out / "evidence.aff4").unlink()
        assert sit("pack", *common)[0] == 0
        assert sit("verify", *common)[0] == 0
        assert turtle(out / "evidence.aff4") == expected
        assert json.loads((out / "verification_report.json").read_text())["all_passed"] is True


def random_record(rng, aid):
    def text():
        alphabet = "abcXYZ019 _-.,;'\"\\\t\n\ré中\U0001f600<>{}@#"
        return "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 24)))

    def stamp():
        if rng.random() < 0.2:
            return None
        return "%04d-%02d-%02dT%02d:%02d:%02d.%07dZ" % (rng.randint(1601, 2100), rng.randint(1, 12),
                                                         rng.randint(1, 28), rng.randint(0, 23),
                                                         rng.randint(0, 59), rng.randint(0, 59),
                                                         rng.randint(0, 9999999))

    hexs = lambda n: "".join(rng.choice("0123456789abcdef") for _ in range(n))  # noqa: E731
    name = text()
    return ArtifactRecord(
        artifact_id=aid, source_kind=rng.choice(["ntfs-image", "dir"]), source_path="\\" + text() + "\\" + name,
        name=name, size_bytes=rng.randint(0, 2 ** 63 - 1), record_no=rng.choice([None, rng.randint(0, 2 ** 48)]),
        created_utc=stamp(), modified_utc=stamp(), mft_changed_utc=stamp(), accessed_utc=stamp(),
        attr_flags_hex="0x%08x" % rng.getrandbits(32), md5=hexs(32), sha1=hexs(40), sha256=hexs(64),
        acquired_utc=stamp() or "2024-01-01T00:00:00.0000000Z")


def test_c07_turtle_round_trip():
    with criterion(7, "1000 random records survive a Turtle round trip"):
        rng = random.Random(20240301)
        for aid in range(1, 1001):
            triples = record_to_triples(random_record(rng, aid), FIXED_URN)
            parsed = parse_turtle(serialize_turtle(triples))
            assert set(parsed) == set(triples), "record %d" % aid
            assert len(parsed) == len(triples)


def test_c08_live_mutation(workdir):
    with criterion(8, "live overwrite and delete keep acquisition-time hashes"):
        rng = random.Random(8)
        staging = workdir / "live"
        (staging / "sub").mkdir(parents=True)
        for i in range(12):
            folder = staging / "sub" if i % 2 else staging
            (folder / ("f%02d.bin" % i)).write_bytes(rng.randbytes(rng.randint(0, 200000)))
        targets = ["f00.bin", "sub/f01.bin", "f02.bin", "sub/f03.bin", "f04.bin", "sub/f05.bin"]
        mutations = []
        for i, target in enumerate(targets):
            if i % 2:
                mutations.append({"trigger": "after_acquire", "target": target, "action": "delete"})
            else:
                mutations.append({"trigger": "after_acquire", "target": target, "action": "overwrite",
                                  "data_b64": base64.b64encode(b"changed %d" % i).decode()})
        scenario = workdir / "live.json"
        scenario.write_text(json.dumps({"staging": str(staging), "mutations": mutations}))
        report = run_scenario(load_scenario(scenario), workdir / "live_out")
        checks = {c.name: c for c in report.conclusions}
        hashed = [checks["acquisition_time_hash:%s" % t] for t in targets]
        assert all(c.passed for c in hashed), [c.detail for c in hashed if not c.passed]
        assert report.passed, report.to_json()


def random_runlist(rng):
    """Encode random runs with random (not necessarily minimal) field widths."""
    out = bytearray()
    lcn = 0
    for _ in range(rng.randint(0, 10)):
        count = rng.randint(1, 2 ** rng.choice([8, 16, 32, 40]))
        len_w = max(1, (count.bit_length() + 7) // 8) + rng.choice([0, 0, 0, 1])
        if rng.random() < 0.2:
            out.append(len_w)
            out += count.to_bytes(len_w, "little")
            continue
        new = rng.randint(0, 2 ** rng.choice([12, 24, 40]))
        delta = new - lcn
        off_w = 1
        while not -(1 << (8 * off_w - 1)) <= delta < (1 << (8 * off_w - 1)):
            off_w += 1
        off_w = min(8, off_w + rng.choice([0, 0, 1]))
        out.append((off_w << 4) | len_w)
        out += count.to_bytes(len_w, "little") + delta.to_bytes(off_w, "little", signed=True)
        lcn = new
    out.append(0)
    if rng.random() < 0.1:
        # corrupt: truncate or garble a byte
        if rng.random() < 0.5 and len(out) > 1:
            del out[rng.randrange(len(out)):]
        else:
            out[rng.randrange(len(out))] = rng.randrange(256)
    return bytes(out)


def test_c09_runlist_oracle():
    with criterion(9, "500 random runlists agree with the brute-force decoder"):
        rng = random.Random(9)
        decoded = 0
        for _ in range(500):
            raw = random_runlist(rng)
            try:
                expected = brute_force_decode(raw)
            except ValueError:
                with pytest.raises(RunlistError):
                    decode_data_runs(raw)
                continue
            assert [(r.cluster_count, r.lcn) for r in decode_data_runs(raw)] == expected, raw.hex()
            decoded += 1
        assert decoded >= 400


def test_c10_scale(workdir, config):
    with criterion(10, "200 files totalling 30 MB from a directory in under 30 s"):
        rng = random.Random(10)
        staging = workdir / "scale"
        total = 30 * 1000 * 1000
        cuts = sorted(rng.sample(range(1, total), 199))
        sizes = [b - a for a, b in zip([0] + cuts, cuts + [total])]
        block = rng.randbytes(1 << 20)
        for i, size in enumerate(sizes):
            folder = staging / ("d%02d" % (i % 10))
            folder.mkdir(parents=True, exist_ok=True)
            data = (block * (size // len(block) + 1))[:size]
            (folder / ("file%03d.dat" % i)).write_bytes(bytes([i]) + data[1:] if size else b"")
        out = workdir / "scale_out"
        code, seconds = sit("all", "--source", staging, "--source-kind", "dir", "--config", config,
                            "--out-dir", out, "--quiet")
        assert code == 0, "exit %s" % code
        rows = metadata_rows(out / "backup.zip")
        assert len(rows) == 200 and sum(int(r["size_bytes"]) for r in rows) == total
        assert seconds < 30, "took %.2f s" % seconds


def test_c11_limits(fixture_run, workdir, config):
    with criterion(11, "zero runtime exits 3 with an empty archive; buffers stay within 2x chunk"):
        out = workdir / "limit0"
        code, _ = sit("all", "--source", fixture_run["image"], "--config", config, "--out-dir", out,
                      "--max-runtime-sec", "0", "--quiet")
        assert code == 3, "exit %s" % code
        with zipfile.ZipFile(out / "backup.zip") as zf:
            assert zf.testzip() is None
            assert METADATA_NAME in zf.namelist()
            assert not [n for n in zf.namelist() if n.startswith("artifacts/")]
        assert metadata_rows(out / "backup.zip") == []
        assert not (out / "evidence.aff4").exists()

        staging = workdir / "membig"
        staging.mkdir()
        (staging / "big.bin").write_bytes(random.Random(11).randbytes(6 << 20))
        for mb in ("1", "4"):
            out = workdir / ("mem" + mb)
            code, _ = sit("acquire", "--source", staging, "--source-kind", "dir", "--config", config,
                          "--out-dir", out, "--max-memory-mb", mb, "--quiet")
            assert code == 0
            kv = {e[3]: e[4] for e in log_events(out, "artifact") if e}
            chunk = int(kv["start"]["chunk_size"])
            peak = int(kv["summary"]["peak_buffer_bytes"])
            assert 0 < peak <= 2 * chunk, (peak, chunk)
            assert peak <= float(mb) * (1 << 20)


REQUIRED_EVENTS = {
    "cli": ["start", "stage_start", "stage_end", "summary", "end"],
    "selection": ["start", "matched", "end"],
    "artifact": ["start", "acquired", "summary", "end"],
    "validation": ["start", "summary", "end"],
    "aff4": ["start", "container_created", "segment_written", "container_finalized", "end"],
    "verify": ["start", "verdict", "summary", "end"],
    "source": ["opened"],
}


def test_c12_log_completeness(fixture_run):
    with criterion(12, "fixture run logs hold every required event"):
        out = fixture_run["out"]
        missing = []
        events = {}
        for module, required in REQUIRED_EVENTS.items():
            parsed = log_events(out, module)
            assert all(p is not None for p in parsed), module
            events[module] = [p[3] for p in parsed]
            missing += ["%s/%s" % (module, e) for e in required if e not in events[module]]
        assert not missing, missing
        n = len(fixture_run["builder"].expected)
        assert events["artifact"].count("acquired") == n
        assert events["verify"].count("verdict") == n
        assert events["cli"][0] == "start" and events["cli"][-1] == "end"


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
