"""Classic PCAP file writing and reading.

Files use the original (non-ng) format: a 24-byte global header followed by
16-byte record headers, each with second/microsecond timestamps.  Captures
are written with the raw-IP link type in little-endian byte order; the
reader also accepts files whose magic indicates the opposite byte order.
"""

import os
import struct
from dataclasses import dataclass

from . import packets

PCAP_MAGIC = 0xA1B2C3D4
PCAP_MAGIC_SWAPPED = 0xD4C3B2A1
PCAP_VERSION_MAJOR = 2
PCAP_VERSION_MINOR = 4
SNAPLEN = 65535
LINKTYPE_RAW_IP = 101

GLOBAL_HEADER = struct.Struct('<IHHiIII')
RECORD_HEADER = struct.Struct('<IIII')

US_PER_SEC = 10 ** 6


class CaptureFormatError(ValueError):
    """Raised for malformed or unsupported capture files."""


@dataclass
class PacketRecord:
    """One captured packet: microsecond timestamp plus raw IPv4 bytes."""

    ts_us: int
    data: bytes

    @property
    def size(self):
        return len(self.data)

    def parse(self):
        return packets.parse_ipv4(self.data)


class CaptureWriter:
    """Streams packet records into a PCAP file."""

    def __init__(self, path):
        self.path = path
        self._sink = open(path, 'wb', buffering=1 << 16)
        self._sink.write(GLOBAL_HEADER.pack(PCAP_MAGIC, PCAP_VERSION_MAJOR,
                                            PCAP_VERSION_MINOR, 0, 0, SNAPLEN,
                                            LINKTYPE_RAW_IP))

    def write(self, ts_us, data):
        length = len(data)
        self._sink.write(RECORD_HEADER.pack(ts_us // US_PER_SEC,
                                            ts_us % US_PER_SEC,
                                            length, length))
        self._sink.write(data)

    def close(self):
        if self._sink is not None:
            self._sink.close()
            self._sink = None

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


def write_capture(path, records):
    """Write an iterable of (ts_us, data) pairs as one capture file."""
    with CaptureWriter(path) as writer:
        for ts_us, data in records:
            writer.write(ts_us, data)


def read_capture(path):
    """Yield PacketRecord items from a capture file, validating structure."""
    with open(path, 'rb', buffering=1 << 16) as source:
        header = source.read(GLOBAL_HEADER.size)
        if len(header) < GLOBAL_HEADER.size:
            raise CaptureFormatError('%s: truncated global header at offset 0' % path)
        magic = struct.unpack('<I', header[:4])[0]
        if magic == PCAP_MAGIC:
            order = '<'
        elif magic == PCAP_MAGIC_SWAPPED:
            order = '>'
        else:
            raise CaptureFormatError('%s: bad magic 0x%08x' % (path, magic))
        record_header = struct.Struct(order + 'IIII')
        _, _, _, _, _, _, linktype = struct.unpack(order + 'IHHiIII', header)
        if linktype != LINKTYPE_RAW_IP:
            raise CaptureFormatError('%s: unsupported link type %d' % (path, linktype))

        offset = GLOBAL_HEADER.size
        while True:
            head = source.read(record_header.size)
            if not head:
                return
            if len(head) < record_header.size:
                raise CaptureFormatError('%s: truncated record header at offset %d'
                                         % (path, offset))
            ts_sec, ts_usec, caplen, origlen = record_header.unpack(head)
            if caplen > SNAPLEN or caplen > origlen:
                raise CaptureFormatError('%s: corrupt record length at offset %d'
                                         % (path, offset))
            data = source.read(caplen)
            if len(data) < caplen:
                raise CaptureFormatError('%s: truncated record body at offset %d'
                                         % (path, offset + record_header.size))
            yield PacketRecord(ts_sec * US_PER_SEC + ts_usec, data)
            offset += record_header.size + caplen


def first_timestamp(path):
    """Timestamp of the first record, or None for an empty capture."""
    for record in read_capture(path):
        return record.ts_us
    return None


def capture_name(flow_number, scheme, role):
    return '%d-%s-%s.pcap' % (flow_number, scheme, role)


class DirectoryCaptureSink:
    """Opens per-flow sender/receiver capture writers inside a directory."""

    def __init__(self, directory):
        self.directory = directory
        os.makedirs(directory, exist_ok=True)
        self._writers = []

    def open(self, flow_number, scheme, role):
        writer = CaptureWriter(os.path.join(
            self.directory, capture_name(flow_number, scheme, role)))
        self._writers.append(writer)
        return writer

    def close(self):
        for writer in self._writers:
            writer.close()
