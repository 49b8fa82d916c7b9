"""Direct reading of a raw NTFS volume image through its MFT."""

from sit.errors import SitIOError
from sit.obslog import sink_or_null
from sit.source.entries import FileEntry, ResidentContent, RunlistContent
from sit.source.mft import (
    ATTR_DATA,
    FIRST_USER_RECORD,
    UPDATE_SEQUENCE_STRIDE,
    MftError,
    TornWrite,
    apply_fixups,
    parse_attribute_list,
    parse_mft_record,
    resolve_paths,
)


def iter_runs(fp, geometry, runs, real_size, initialized_size, chunk_size):
    """Yield the bytes of a non-resident stream in chunks of at most *chunk_size*.

    Sparse runs and the region past the initialized size read as zeros; the
    last cluster is cut at *real_size*.
    """
    cluster = geometry.cluster_size
    total_clusters = geometry.total_clusters
    remaining = real_size
    vpos = 0
    for run in runs:
        if remaining <= 0:
            break
        run_bytes = min(run.cluster_count * cluster, remaining)
        if run.lcn is not None and run.lcn + run.cluster_count > total_clusters:
            raise SitIOError("run at LCN %d (+%d clusters) lies beyond the volume (%d clusters)"
                             % (run.lcn, run.cluster_count, total_clusters))
        done = 0
        while done < run_bytes:
            n = min(chunk_size, run_bytes - done)
            valid = max(0, min(n, initialized_size - (vpos + done)))
            if run.lcn is None or valid == 0:
                chunk = bytes(n)
            else:
                fp.seek(run.lcn * cluster + done)
                chunk = fp.read(valid)
                if len(chunk) != valid:
                    raise SitIOError("short read at LCN %d: wanted %d bytes, got %d"
                                     % (run.lcn, valid, len(chunk)))
                if valid < n:
                    chunk += bytes(n - valid)
            done += n
            yield chunk
        vpos += run_bytes
        remaining -= run_bytes
    if remaining > 0:
        raise SitIOError("runlist covers %d bytes less than the stream size" % remaining)


class NtfsVolume:
    def __init__(self, fp, geometry, log=None, include_deleted=False, include_system=False):
        self.fp = fp
        self.geometry = geometry
        self.log = sink_or_null(log, "source")
        self.include_deleted = include_deleted
        self.include_system = include_system
        self._records = None
        self.skipped = []

    def _read_at(self, offset, size):
        self.fp.seek(offset)
        data = self.fp.read(size)
        if len(data) != size:
            raise SitIOError("short read of %d bytes at offset %d" % (size, offset))
        return data

    def _load_record(self, raw, record_no):
        fixed = apply_fixups(raw, UPDATE_SEQUENCE_STRIDE)
        return parse_mft_record(fixed, record_no)

    def records(self):
        if self._records is None:
            self._records = self._load_mft()
        return self._records

    def _load_mft(self):
        g = self.geometry
        size = g.mft_record_size
        mft0 = self._load_record(self._read_at(g.mft_lcn * g.cluster_size, size), 0)
        streams = mft0.unnamed_data
        if not streams or streams[0].resident:
            raise SitIOError("$MFT record carries no non-resident $DATA")
        mft_data = streams[0]
        count = mft_data.real_size // size
        self.log.info("mft_located", lcn=g.mft_lcn, records=count, runs=len(mft_data.runs))

        records = {}
        buf = b""
        record_no = 0
        stream = iter_runs(self.fp, g, mft_data.runs, mft_data.real_size,
                           mft_data.initialized_size, max(size, 1 << 16))
        while record_no < count:
            try:
                chunk = next(stream)
            except StopIteration:
                break
            except SitIOError as exc:
                self.log.error("mft_read_failed", record=record_no, error=str(exc))
                break
            buf += chunk
            while len(buf) >= size and record_no < count:
                raw, buf = buf[:size], buf[size:]
                self._ingest(records, raw, record_no)
                record_no += 1
        self._merge_extensions(records)
        return records

    def _ingest(self, records, raw, record_no):
        if raw[:4] == b"\0\0\0\0":
            return
        try:
            records[record_no] = self._load_record(raw, record_no)
        except TornWrite as exc:
            self.skipped.append(record_no)
            self.log.warn("torn_record", record=record_no, error=str(exc))
        except MftError as exc:
            self.skipped.append(record_no)
            self.log.warn("bad_record", record=record_no, error=str(exc))

    def _merge_extensions(self, records):
        """Fold $DATA fragments held in extension records back into their base record."""
        for rec in records.values():
            if rec.attribute_list is None or rec.is_extension:
                continue
            al = rec.attribute_list
            try:
                if al.resident:
                    raw = al.content
                else:
                    raw = b"".join(iter_runs(self.fp, self.geometry, al.runs, al.real_size,
                                             al.initialized_size, 1 << 16))
                entries = parse_attribute_list(raw)
            except (MftError, SitIOError) as exc:
                self.log.warn("attribute_list_skipped", record=rec.record_no, error=str(exc))
                continue
            fragments = {id(d): d for d in rec.unnamed_data}
            for ent in entries:
                if ent.record_no == rec.record_no:
                    continue
                if ent.type != ATTR_DATA or ent.name:
                    self.log.warn("spanning_attribute_skipped", record=rec.record_no,
                                  type="0x%x" % ent.type, ext=ent.record_no)
                    continue
                ext = records.get(ent.record_no)
                if ext is None or ext.base_record != rec.record_no:
                    self.log.warn("extension_missing", record=rec.record_no, ext=ent.record_no)
                    continue
                for d in ext.unnamed_data:
                    if d.instance == ent.instance and d.start_vcn == ent.start_vcn:
                        fragments[id(d)] = d
            if len(fragments) <= 1:
                continue
            parts = sorted(fragments.values(), key=lambda d: d.start_vcn)
            head = parts[0]
            if head.resident or head.start_vcn != 0:
                self.log.warn("data_fragments_inconsistent", record=rec.record_no)
                continue
            runs = []
            expected_vcn = 0
            ok = True
            for part in parts:
                if part.resident or part.start_vcn != expected_vcn:
                    ok = False
                    break
                runs.extend(part.runs)
                expected_vcn = part.last_vcn + 1
            if not ok:
                self.log.warn("data_fragments_inconsistent", record=rec.record_no)
                continue
            head.runs = runs
            head.last_vcn = expected_vcn - 1
            rec.data = [head] + [d for d in rec.data if d.name]
            self.log.info("data_fragments_merged", record=rec.record_no, fragments=len(parts))

    def entries(self):
        records = self.records()
        orphans = []
        paths = resolve_paths(records, on_orphan=orphans.append)
        for rn in orphans:
            self.log.warn("orphan", record=rn, path=paths.get(rn))
        for rn in sorted(records):
            rec = records[rn]
            if rec.is_extension or rec.is_directory:
                continue
            if not rec.in_use and not self.include_deleted:
                continue
            if rn < FIRST_USER_RECORD and not self.include_system:
                continue
            entry = self._to_entry(rec, paths.get(rn))
            if entry is not None:
                yield entry

    def _to_entry(self, rec, path):
        rn = rec.record_no
        if path is None or rec.file_name is None:
            self.log.warn("skip", record=rn, reason="no_name")
            return None
        for stream in rec.named_streams:
            self.log.warn("skip_stream", record=rn, path=path, stream=stream, reason="alternate_data_stream")
        streams = rec.unnamed_data
        if not streams:
            self.log.warn("skip", record=rn, path=path, reason="no_data_attribute")
            return None
        data = streams[0]
        if data.compressed or data.encrypted:
            self.log.warn("skip", record=rn, path=path,
                          reason="compressed" if data.compressed else "encrypted")
            return None
        if data.resident:
            content = ResidentContent(data.content)
        else:
            content = RunlistContent(tuple(data.runs), data.real_size, data.initialized_size)
        si = rec.std_info
        return FileEntry(
            full_path=path,
            name=rec.file_name.name,
            size_bytes=data.real_size,
            content=content,
            record_no=rn,
            created_utc=si.created if si else None,
            modified_utc=si.modified if si else None,
            mft_changed_utc=si.mft_changed if si else None,
            accessed_utc=si.accessed if si else None,
            attr_flags=si.attr_flags if si else 0,
            in_use=rec.in_use,
        )

    def read(self, entry, chunk_size):
        content = entry.content
        if isinstance(content, ResidentContent):
            for i in range(0, len(content.data), chunk_size):
                yield content.data[i:i + chunk_size]
            return
        yield from iter_runs(self.fp, self.geometry, content.runs, content.real_size,
                             content.initialized_size, chunk_size)
