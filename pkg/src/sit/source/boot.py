"""NTFS boot sector decoding."""

import struct
from dataclasses import dataclass

from sit.errors import SitError

NTFS_OEM_ID = b"NTFS    "
VALID_SECTOR_SIZES = (256, 512, 1024, 2048, 4096)


class NotNtfs(SitError):
    """The data does not start with an NTFS boot sector."""


class BadGeometry(NotNtfs):
    """The boot sector carries zero, odd or inconsistent geometry values."""


@dataclass(frozen=True)
class VolumeGeometry:
    bytes_per_sector: int
    sectors_per_cluster: int
    mft_lcn: int
    mft_record_size: int
    total_sectors: int

    @property
    def cluster_size(self):
        return self.bytes_per_sector * self.sectors_per_cluster

    @property
    def total_clusters(self):
        return self.total_sectors // self.sectors_per_cluster


def decode_size_code(code, cluster_size):
    """Decode the signed record-size byte: positive counts clusters, negative n means 2**-n bytes."""
    if code >= 0x80:
        code -= 0x100
    if code > 0:
        return code * cluster_size
    if code < 0:
        if -code > 31:
            raise BadGeometry("record size exponent %d out of range" % -code)
        return 1 << -code
    raise BadGeometry("record size code is zero")


def parse_boot_sector(sector):
    if len(sector) < 512:
        raise NotNtfs("boot sector needs 512 bytes, got %d" % len(sector))
    if sector[3:11] != NTFS_OEM_ID:
        raise NotNtfs("OEM id is %r, expected %r" % (bytes(sector[3:11]), NTFS_OEM_ID))
    bytes_per_sector, = struct.unpack_from("<H", sector, 0x0B)
    sectors_per_cluster = sector[0x0D]
    if sectors_per_cluster > 0x80:
        # Large clusters are stored as a negative power of two.
        sectors_per_cluster = 1 << (0x100 - sectors_per_cluster)
    total_sectors, mft_lcn = struct.unpack_from("<QQ", sector, 0x28)
    if bytes_per_sector not in VALID_SECTOR_SIZES:
        raise BadGeometry("bytes per sector is %d" % bytes_per_sector)
    if sectors_per_cluster == 0 or sectors_per_cluster & (sectors_per_cluster - 1):
        raise BadGeometry("sectors per cluster is %d" % sectors_per_cluster)
    cluster_size = bytes_per_sector * sectors_per_cluster
    record_size = decode_size_code(sector[0x40], cluster_size)
    if record_size < bytes_per_sector or record_size % bytes_per_sector:
        raise BadGeometry("MFT record size %d is not a multiple of the sector size" % record_size)
    if mft_lcn == 0:
        raise BadGeometry("MFT LCN is zero")
    return VolumeGeometry(
        bytes_per_sector=bytes_per_sector,
        sectors_per_cluster=sectors_per_cluster,
        mft_lcn=mft_lcn,
        mft_record_size=record_size,
        total_sectors=total_sectors,
    )
