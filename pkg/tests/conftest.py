"""Shared builders: synthetic capture pairs and a brute-force matcher."""

import os

from dumbbell.analysis import FlowLog
from dumbbell.packets import (FLAG_ACK, FLAG_PSH_ACK, build_tcp_packet,
                              parse_ipv4, text_to_ip)
from dumbbell.pcap import write_capture

SENDER_IP = text_to_ip('10.0.0.1')
RECEIVER_IP = text_to_ip('10.0.3.2')


def data_record(ip_id, seq, payload_len=1460):
    return build_tcp_packet(SENDER_IP, RECEIVER_IP, ip_id, seq, 0,
                            FLAG_PSH_ACK, payload_len, 49153, 9001)


def ack_record(ip_id, ack_no):
    return build_tcp_packet(RECEIVER_IP, SENDER_IP, ip_id, 0, ack_no,
                            FLAG_ACK, 0, 9001, 49153)


def synthetic_pair(rng, max_packets=200):
    """One randomized sender/receiver dump pair with known ground truth.

    Returns (sender_records, receiver_records); records are (ts_us, bytes).
    Drops, phantoms and reverse-direction ack noise are all mixed in.
    """
    count = rng.randrange(0, max_packets + 1)
    sender = []
    receiver = []
    ts = rng.randrange(0, 1000)
    for index in range(count):
        ts += rng.randrange(1, 500)
        payload_len = rng.choice((0, 1, 100, 1460))
        record = data_record(index, seq=index * 1460, payload_len=payload_len)
        sender.append((ts, record))
        if rng.random() < 0.75:      # the rest are lost on the way
            receiver.append((ts + rng.randrange(1, 100_000), record))
        if rng.random() < 0.3:       # ack noise flows the other way
            noise = ack_record(index, (index + 1) * 1460)
            sender.append((ts + rng.randrange(1, 50), noise))
            receiver.append((ts + rng.randrange(1, 50), noise))
    for extra in range(rng.randrange(0, 8)):
        # phantoms: receiver-only data packets the sender dump never saw
        record = data_record(30_000 + extra, seq=7, payload_len=17)
        receiver.append((ts + rng.randrange(1, 1000), record))
    receiver.sort(key=lambda r: r[0])
    return sender, receiver


def brute_force_log(sender_records, receiver_records, base_us=0):
    """Quadratic reference matcher restating the analysis contract."""
    remaining = []
    for ts, data in sender_records:
        src, _dst, _proto, ip_id, payload = parse_ipv4(data)
        if src != SENDER_IP:
            continue
        remaining.append([ip_id, payload, ts, len(data)])
    log = FlowLog()
    sent = sum(size for _, _, _, size in remaining)
    for ts, data in receiver_records:
        src, _dst, _proto, ip_id, payload = parse_ipv4(data)
        if src != SENDER_IP:
            continue
        for i, (sid, spayload, sts, _size) in enumerate(remaining):
            if sid == ip_id and spayload == payload:
                log.arrivals.append((ts - base_us) / 1e6)
                log.delays.append((ts - sts) / 1e6)
                log.sizes.append(len(data))
                del remaining[i]
                break
        else:
            sent += len(data)
    log.bytes_sent = sent
    log.bytes_lost = sum(size for _, _, _, size in remaining)
    if log.arrivals:
        log.first_arrival = log.arrivals[0]
        log.last_arrival = log.arrivals[-1]
    return log


def write_pair(directory, sender_records, receiver_records,
               sender_name='1-cubic-sender.pcap',
               receiver_name='1-cubic-receiver.pcap'):
    sender_path = os.path.join(str(directory), sender_name)
    receiver_path = os.path.join(str(directory), receiver_name)
    write_capture(sender_path, sender_records)
    write_capture(receiver_path, receiver_records)
    return sender_path, receiver_path
