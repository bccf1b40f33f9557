"""Raw IPv4/TCP packet synthesis and parsing.

Captures use the raw-IP link type, so a packet is an IPv4 header followed by
the transport header and payload; there is no Ethernet framing.  Payload
bytes are zeros: packet identity comes from the IP Identification field and
the transport header (sequence numbers never repeat within a flow).
"""

import struct

IP_HEADER_LEN = 20
TCP_HEADER_LEN = 20
MTU = 1500
MAX_PAYLOAD = MTU - IP_HEADER_LEN - TCP_HEADER_LEN

PROTO_TCP = 6
PROTO_UDP = 17

_TTL = 64
_FLAGS_DF = 0x4000
_WINDOW = 65535

_IP_HEADER = struct.Struct('!BBHHHBBHII')
_TCP_HEADER = struct.Struct('!HHIIBBHHH')
_PSEUDO_HEADER = struct.Struct('!IIBBH')
_TEN_WORDS = struct.Struct('!10H')
_SIXTEEN_WORDS = struct.Struct('!16H')

ACK_PACKET_LEN = IP_HEADER_LEN + TCP_HEADER_LEN

FLAG_ACK = 0x10
FLAG_PSH_ACK = 0x18


def _fold(total):
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def build_tcp_packet(src, dst, ip_id, seq, ack, flags, payload_len,
                     sport, dport):
    """Build a checksummed IPv4/TCP packet with a zero-filled payload."""
    total_len = IP_HEADER_LEN + TCP_HEADER_LEN + payload_len
    header = bytearray(_IP_HEADER.pack(0x45, 0, total_len, ip_id, _FLAGS_DF,
                                       _TTL, PROTO_TCP, 0, src, dst))
    ip_sum = _fold(sum(_TEN_WORDS.unpack(bytes(header))))
    header[10:12] = ip_sum.to_bytes(2, 'big')

    tcp = bytearray(_TCP_HEADER.pack(sport, dport, seq, ack, 0x50, flags,
                                     _WINDOW, 0, 0))
    pseudo = _PSEUDO_HEADER.pack(src, dst, 0, PROTO_TCP,
                                 TCP_HEADER_LEN + payload_len)
    # A zero-filled payload contributes nothing to the ones' complement sum.
    tcp_sum = _fold(sum(_SIXTEEN_WORDS.unpack(pseudo + bytes(tcp))))
    tcp[16:18] = tcp_sum.to_bytes(2, 'big')

    return bytes(header) + bytes(tcp) + b'\x00' * payload_len


class PacketParseError(ValueError):
    """Raised when bytes do not form a parseable IPv4 packet."""


def parse_ipv4(data):
    """Extract (src, dst, protocol, ip_id bytes, payload) from raw IP bytes."""
    if len(data) < IP_HEADER_LEN:
        raise PacketParseError('packet shorter than an IPv4 header')
    first = data[0]
    if first >> 4 != 4:
        raise PacketParseError('not an IPv4 packet')
    header_len = (first & 0x0F) * 4
    if header_len < IP_HEADER_LEN or len(data) < header_len:
        raise PacketParseError('corrupt IPv4 header length')
    total_length = int.from_bytes(data[2:4], 'big')
    if total_length < header_len or len(data) < total_length:
        raise PacketParseError('truncated IPv4 packet')
    protocol = data[9]
    src = int.from_bytes(data[12:16], 'big')
    dst = int.from_bytes(data[16:20], 'big')
    return src, dst, protocol, data[4:6], data[header_len:total_length]


def ip_to_text(address):
    return '.'.join(str((address >> shift) & 0xFF) for shift in (24, 16, 8, 0))


def text_to_ip(text):
    parts = text.split('.')
    if len(parts) != 4:
        raise PacketParseError('bad IPv4 address: %r' % text)
    value = 0
    for part in parts:
        octet = int(part)
        if not 0 <= octet <= 255:
            raise PacketParseError('bad IPv4 address: %r' % text)
        value = (value << 8) | octet
    return value
