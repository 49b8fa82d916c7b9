"""AFF4-subset evidence container.

Layout of the ZIP file::

    container.description        container URN, stored uncompressed, first entry
    <uuid>/artifact/<6 digits>   one deflated segment per artifact
    information.turtle           RDF metadata, last entry

Segments are plain ZIP members rather than chunked image streams. A
segment name is its URN with the ``aff4://`` scheme stripped.
"""

import re
import shutil
import uuid
import zipfile

from sit.errors import SitError, SitIOError
from sit.obslog import sink_or_null
from sit.turtle import RDF_TYPE, IRI, parse_turtle
from sit.validation import AFF4_IMAGE, artifact_urn
from sit.ziputil import CheckpointZip, make_info

SCHEME = "aff4://"
DESCRIPTION_NAME = "container.description"
TURTLE_NAME = "information.turtle"
COPY_CHUNK = 1 << 20

_UUID = r"[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}"
CONTAINER_URN_RE = re.compile(r"^aff4://(%s)$" % _UUID)
ARTIFACT_URN_RE = re.compile(r"^aff4://(%s)/artifact/(\d{6})$" % _UUID)


class Aff4Error(SitError):
    pass


class NotAff4(Aff4Error):
    pass


class UnknownUrn(Aff4Error):
    pass


class LengthMismatch(Aff4Error):
    pass


class AlreadyFinalized(Aff4Error):
    pass


def new_container_urn():
    return SCHEME + str(uuid.uuid4())


def check_container_urn(urn):
    if not CONTAINER_URN_RE.match(urn):
        raise ValueError("not a container URN (aff4://<lowercase uuid>): %r" % urn)
    return urn


def segment_name(urn):
    if not urn.startswith(SCHEME):
        raise ValueError("not an aff4 URN: %r" % urn)
    return urn[len(SCHEME):]


def artifact_index(urn):
    m = ARTIFACT_URN_RE.match(urn)
    return int(m.group(2)) if m else None


class ContainerWriter:
    def __init__(self, path, urn, log=None):
        self.path = path
        self.urn = urn
        self.log = sink_or_null(log, "aff4")
        self.segments = []
        self.finalized = False
        try:
            self._zip = CheckpointZip(path, "w")
            self._zip.writestr(make_info(DESCRIPTION_NAME, zipfile.ZIP_STORED), urn.encode("utf-8"))
            self._zip.checkpoint()
        except OSError as exc:
            raise SitIOError("cannot create container %s: %s" % (path, exc)) from exc
        self.log.info("container_created", path=str(path), urn=urn)

    def add_artifact(self, record, content):
        """Copy *content* (a binary file object) into the record's segment; returns the segment name."""
        if self.finalized:
            raise AlreadyFinalized("container is closed")
        if not record.ok:
            raise ValueError("artifact %d has status %s" % (record.artifact_id, record.status))
        name = segment_name(artifact_urn(self.urn, record.artifact_id))
        expected = record.size_bytes

        def chunks():
            copied = 0
            while True:
                chunk = content.read(COPY_CHUNK)
                if not chunk:
                    break
                copied += len(chunk)
                if copied > expected:
                    raise LengthMismatch("segment %s: stream exceeds %d bytes" % (name, expected))
                yield chunk
            if copied != expected:
                raise LengthMismatch("segment %s: stream has %d bytes, expected %d" % (name, copied, expected))

        try:
            self._zip.write_stream(make_info(name, zipfile.ZIP_DEFLATED, expected), chunks())
            self._zip.checkpoint()
        except LengthMismatch as exc:
            self.log.error("length_mismatch", id="%06d" % record.artifact_id, error=str(exc))
            raise
        except OSError as exc:
            raise SitIOError("writing segment %s failed: %s" % (name, exc)) from exc
        self.segments.append(name)
        self.log.info("segment_written", id="%06d" % record.artifact_id, segment=name, size=expected)
        return name

    def write_information_turtle(self, text):
        if self.finalized:
            raise AlreadyFinalized("information.turtle was already written")
        try:
            self._zip.writestr(make_info(TURTLE_NAME), text.encode("utf-8"))
            self._zip.close()
        except OSError as exc:
            raise SitIOError("finalizing container failed: %s" % exc) from exc
        self.finalized = True
        self.log.info("container_finalized", segments=len(self.segments), path=str(self.path))

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if not self.finalized:
            self._zip.close()
            self.finalized = True


def create_container(path, urn=None, log=None):
    urn = check_container_urn(urn) if urn is not None else new_container_urn()
    return ContainerWriter(path, urn, log)


class ContainerReader:
    def __init__(self, path):
        self.path = path
        try:
            self._zip = zipfile.ZipFile(path)
        except (OSError, zipfile.BadZipFile) as exc:
            raise NotAff4("%s is not a readable ZIP: %s" % (path, exc)) from exc
        names = set(self._zip.namelist())
        missing = [n for n in (DESCRIPTION_NAME, TURTLE_NAME) if n not in names]
        if missing:
            self._zip.close()
            raise NotAff4("%s lacks %s" % (path, ", ".join(missing)))
        self.urn = self._zip.read(DESCRIPTION_NAME).decode("utf-8").strip()
        self._metadata = None

    def segment_names(self):
        return [n for n in self._zip.namelist() if n not in (DESCRIPTION_NAME, TURTLE_NAME)]

    def read_metadata(self):
        if self._metadata is None:
            self._metadata = parse_turtle(self._zip.read(TURTLE_NAME).decode("utf-8"))
        return self._metadata

    def image_urns(self):
        """URNs typed aff4:Image, in ascending artifact order."""
        urns = {t.subject for t in self.read_metadata()
                if t.predicate == RDF_TYPE and t.object == IRI(AFF4_IMAGE)}
        return sorted(urns, key=lambda u: (artifact_index(u) is None, artifact_index(u) or 0, u))

    def open_segment(self, urn):
        name = segment_name(urn)
        try:
            return self._zip.open(name)
        except KeyError:
            raise UnknownUrn("no segment for %s" % urn) from None

    def extract_artifact(self, urn, dest):
        """Write the segment for *urn* to the path *dest*; returns the byte count."""
        with self.open_segment(urn) as src, open(dest, "wb") as out:
            shutil.copyfileobj(src, out, COPY_CHUNK)
            return out.tell()

    def close(self):
        self._zip.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_container(path):
    return ContainerReader(path)


def read_metadata(reader):
    return reader.read_metadata()


def extract_artifact(reader, urn, dest):
    return reader.extract_artifact(urn, dest)
