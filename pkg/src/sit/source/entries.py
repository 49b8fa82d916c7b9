from dataclasses import dataclass
from typing import Optional, Tuple, Union

from sit.source.runlist import DataRun

# NTFS file attribute bits used for directory sources.
FILE_ATTRIBUTE_READONLY = 0x0001
FILE_ATTRIBUTE_HIDDEN = 0x0002
FILE_ATTRIBUTE_NORMAL = 0x0080


@dataclass(frozen=True)
class ResidentContent:
    data: bytes


@dataclass(frozen=True)
class RunlistContent:
    runs: Tuple[DataRun, ...]
    real_size: int
    initialized_size: int


@dataclass(frozen=True)
class HostFileContent:
    path: str


ContentLocator = Union[ResidentContent, RunlistContent, HostFileContent]


@dataclass(frozen=True)
class FileEntry:
    """One selectable file-system object.

    Timestamps are FILETIME values (100 ns ticks since 1601-01-01 UTC) or
    None when the source does not provide them.
    """

    full_path: str
    name: str
    size_bytes: int
    content: ContentLocator
    record_no: Optional[int] = None
    created_utc: Optional[int] = None
    modified_utc: Optional[int] = None
    mft_changed_utc: Optional[int] = None
    accessed_utc: Optional[int] = None
    attr_flags: int = 0
    in_use: bool = True

    def __post_init__(self):
        if self.size_bytes < 0:
            raise ValueError("size_bytes must be non-negative")
        if not self.full_path.startswith("\\"):
            raise ValueError("full_path must start with a backslash: %r" % self.full_path)
        if isinstance(self.content, ResidentContent) and len(self.content.data) != self.size_bytes:
            raise ValueError("resident content length differs from size_bytes")

    @property
    def identity(self):
        return self.full_path, self.record_no
