"""Capture pair analysis: per-flow digest matching and data log files.

For each flow the sender dump is scanned first, building a dictionary that
maps a packet digest (SHA-1 over the IP Identification bytes followed by
the IP payload) to the departure timestamp.  The receiver dump is then
scanned: a hit yields one matched packet with its arrival, size, and
one-way delay; entries left over are the lost bytes, receiver-only packets
are "phantoms" that count toward bytes sent but never toward delays.
"""

import hashlib
import json
import os
import shutil
import time
from dataclasses import dataclass, field

from .config import METADATA_FILE, load_metadata, sorted_groups, expand_flows
from .packets import parse_ipv4
from .pcap import capture_name, first_timestamp, read_capture

US_PER_SEC = 1000 * 1000


class AnalysisError(Exception):
    """Raised for malformed inputs or digest collisions."""


@dataclass
class FlowLog:
    """Per-flow analysis result, serialized as five JSON lines."""

    first_arrival: object = None
    last_arrival: object = None
    bytes_lost: int = 0
    bytes_sent: int = 0
    arrivals: list = field(default_factory=list)
    delays: list = field(default_factory=list)
    sizes: list = field(default_factory=list)


def loss_percent(log):
    """float(bytes_lost) / bytes_sent * 100, or None for an idle flow."""
    if log.bytes_sent == 0:
        return None
    return float(log.bytes_lost) / log.bytes_sent * 100


def data_log_name(flow_number):
    return 'data-%d.log' % flow_number


def write_flow_log(log, path):
    with open(path, 'w') as handle:
        handle.write(json.dumps([log.first_arrival, log.last_arrival]) + '\n')
        handle.write(json.dumps([log.bytes_lost, log.bytes_sent]) + '\n')
        handle.write(json.dumps(log.arrivals) + '\n')
        handle.write(json.dumps(log.delays) + '\n')
        handle.write(json.dumps(log.sizes) + '\n')


def load_flow_log(path):
    with open(path) as handle:
        lines = [json.loads(line) for line in handle]
    if len(lines) != 5:
        raise AnalysisError('%s: expected 5 JSON lines, got %d' % (path, len(lines)))
    first, last = lines[0]
    lost, sent = lines[1]
    return FlowLog(first_arrival=first, last_arrival=last, bytes_lost=lost,
                   bytes_sent=sent, arrivals=lines[2], delays=lines[3],
                   sizes=lines[4])


def base_time_us(paths):
    """Minimum first-record timestamp across all dumps; 0 if all are empty."""
    stamps = [ts for ts in (first_timestamp(p) for p in paths) if ts is not None]
    return min(stamps) if stamps else 0


def _sender_address(src, dst, direction):
    # The left half of the topology is assigned addresses first, so a
    # rightward flow sends from the numerically lower address.
    lower, higher = (src, dst) if src < dst else (dst, src)
    return lower if direction == '->' else higher


@dataclass
class PairCounts:
    """Console-summary material for one dump pair."""

    sender_records: int = 0
    sender_bytes: int = 0
    sender_from: int = 0
    sender_from_bytes: int = 0
    receiver_records: int = 0
    receiver_bytes: int = 0
    receiver_from: int = 0
    receiver_from_bytes: int = 0
    phantoms: int = 0
    matched: int = 0


def _digest(ip_id, payload):
    return hashlib.sha1(ip_id + payload).digest()


def _analyze_pair(sender_path, receiver_path, direction, base_us):
    counts = PairCounts()
    departures = {}
    index_of = {}
    for number, record in enumerate(read_capture(sender_path)):
        src, dst, _proto, ip_id, payload = parse_ipv4(record.data)
        counts.sender_records += 1
        counts.sender_bytes += record.size
        if src != _sender_address(src, dst, direction):
            continue
        counts.sender_from += 1
        counts.sender_from_bytes += record.size
        digest = _digest(ip_id, payload)
        if digest in departures:
            other = index_of[digest]
            raise AnalysisError(
                'digest collision in %s: record #%d and record #%d '
                '(ip id %s) hash identically' %
                (sender_path, other, number, ip_id.hex()))
        departures[digest] = (record.ts_us, record.size)
        index_of[digest] = number

    log = FlowLog()
    phantom_bytes = 0
    for record in read_capture(receiver_path):
        src, dst, _proto, ip_id, payload = parse_ipv4(record.data)
        counts.receiver_records += 1
        counts.receiver_bytes += record.size
        if src != _sender_address(src, dst, direction):
            continue
        counts.receiver_from += 1
        counts.receiver_from_bytes += record.size
        entry = departures.pop(_digest(ip_id, payload), None)
        if entry is None:
            counts.phantoms += 1
            phantom_bytes += record.size
            continue
        departure_us, _size = entry
        counts.matched += 1
        log.arrivals.append((record.ts_us - base_us) / US_PER_SEC)
        log.delays.append((record.ts_us - departure_us) / US_PER_SEC)
        log.sizes.append(record.size)

    log.bytes_lost = sum(size for _ts, size in departures.values())
    log.bytes_sent = counts.sender_from_bytes + phantom_bytes
    if log.arrivals:
        log.first_arrival = log.arrivals[0]
        log.last_arrival = log.arrivals[-1]
    return log, counts


def analyze_flow(sender_path, receiver_path, direction, base_us=0):
    """FlowLog for one sender/receiver capture pair."""
    log, _counts = _analyze_pair(sender_path, receiver_path, direction, base_us)
    return log


def analyze_experiment(dumps_dir, out_dir, log=None, progress=None):
    """Processes every flow of a recorded experiment.

    Writes one data-<flow#>.log per flow into out_dir and copies the
    metadata file alongside.  `log` is called with console summary lines;
    `progress` with (fraction, elapsed seconds) at percent granularity.
    """
    say = log if log is not None else lambda line: None
    metadata_path = os.path.join(dumps_dir, METADATA_FILE)
    if not os.path.exists(metadata_path):
        raise AnalysisError('no %s in %s' % (METADATA_FILE, dumps_dir))
    _params, groups = load_metadata(metadata_path)

    flows = []
    for number, (scheme, direction, _group) in enumerate(
            expand_flows(sorted_groups(groups)), start=1):
        sender = os.path.join(dumps_dir, capture_name(number, scheme, 'sender'))
        receiver = os.path.join(dumps_dir, capture_name(number, scheme, 'receiver'))
        for role, path in (('sender', sender), ('receiver', receiver)):
            if not os.path.exists(path):
                raise AnalysisError('flow %d (%s): missing %s capture %s' %
                                    (number, scheme, role, path))
        flows.append((number, scheme, direction, sender, receiver))

    base_us = base_time_us([p for f in flows for p in (f[3], f[4])])

    os.makedirs(out_dir, exist_ok=True)
    total_bytes = sum(os.path.getsize(f[3]) + os.path.getsize(f[4]) for f in flows)
    done_bytes = 0
    last_percent = -1
    started = time.monotonic()

    for number, scheme, direction, sender, receiver in flows:
        flow_log, counts = _analyze_pair(sender, receiver, direction, base_us)
        write_flow_log(flow_log, os.path.join(out_dir, data_log_name(number)))

        say('Flow %d (%s, %s):' % (number, scheme, direction))
        say('  sender dump   : %d packets / %d bytes total, %d packets / %d bytes from sender'
            % (counts.sender_records, counts.sender_bytes,
               counts.sender_from, counts.sender_from_bytes))
        say('  receiver dump : %d packets / %d bytes total, %d packets / %d bytes from sender'
            % (counts.receiver_records, counts.receiver_bytes,
               counts.receiver_from, counts.receiver_from_bytes))
        percent = loss_percent(flow_log)
        loss_text = 'skipped (no bytes sent)' if percent is None else '%f %%' % percent
        say('  matched %d packets, %d phantom; bytes sent %d, bytes lost %d, loss %s'
            % (counts.matched, counts.phantoms, flow_log.bytes_sent,
               flow_log.bytes_lost, loss_text))

        done_bytes += os.path.getsize(sender) + os.path.getsize(receiver)
        if progress is not None and total_bytes:
            percent_done = int(100 * done_bytes / total_bytes)
            if percent_done > last_percent:
                last_percent = percent_done
                progress(done_bytes / total_bytes, time.monotonic() - started)

    shutil.copyfile(metadata_path, os.path.join(out_dir, METADATA_FILE))
