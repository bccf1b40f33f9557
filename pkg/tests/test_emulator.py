"""Discipline mechanics, topology wiring, and whole-run invariants."""

import json

import pytest

from dumbbell.config import Duration, FlowGroup, RunParams
from dumbbell.emulator import (Discipline, Packet, Simulator,
                               build_topology, generate_delay_schedule,
                               install_central_delay, run)
from dumbbell.packets import ip_to_text, parse_ipv4
from dumbbell.pcap import DirectoryCaptureSink, read_capture
from dumbbell.rng import SplitMix64

MS = 1_000_000


def make_packet(size=1500):
    pkt = Packet()
    pkt.size = size
    pkt.hop = 0
    return pkt


def wire(disc, sink):
    """Gives packets the two-hop path: discipline, then the sink callable."""
    def inject(pkt, at, sim):
        pkt.path = (disc.send, sink)
        sim.schedule(at, 3, pkt.path[0], pkt)
    return inject


class TestDiscipline:

    def setup_method(self):
        self.sim = Simulator()
        self.out = []

    def sink(self, pkt):
        self.out.append((self.sim.now, pkt))

    def test_serialization_spacing(self):
        disc = Discipline(self.sim, 'q', 100.0, 0, 100)
        inject = wire(disc, self.sink)
        for _ in range(3):
            inject(make_packet(1500), 0, self.sim)
        self.sim.run()
        # 1500 B at 100 Mbit/s serializes in 120 us
        assert [t for t, _ in self.out] == [120_000, 240_000, 360_000]

    def test_service_time_rounds_to_nearest(self):
        disc = Discipline(self.sim, 'q', 3.0, 0, 10)
        inject = wire(disc, self.sink)
        inject(make_packet(40), 0, self.sim)
        self.sim.run()
        # 40 * 8000 / 3 = 106666.67 ns, rounded
        assert self.out[0][0] == 106_667

    def test_fifo_order(self):
        disc = Discipline(self.sim, 'q', 50.0, 0, 100)
        inject = wire(disc, self.sink)
        packets = [make_packet(1500) for _ in range(5)]
        for pkt in packets:
            inject(pkt, 0, self.sim)
        self.sim.run()
        assert [p for _, p in self.out] == packets

    def test_tail_drop_beyond_limit(self):
        disc = Discipline(self.sim, 'q', 100.0, 0, 2)
        dropped = []
        disc.drop_hook = dropped.append
        inject = wire(disc, self.sink)
        packets = [make_packet() for _ in range(4)]
        for pkt in packets:
            inject(pkt, 0, self.sim)
        self.sim.run()
        assert len(self.out) == 2
        assert disc.drops == 2
        assert dropped == packets[2:]

    def test_limit_counts_delay_held_packets(self):
        # pass-through shaper, pure delay: held packets still occupy the queue
        disc = Discipline(self.sim, 'q', 0.0, 1 * MS, 2)
        inject = wire(disc, self.sink)
        for _ in range(3):
            inject(make_packet(), 0, self.sim)
        self.sim.run()
        assert len(self.out) == 2
        assert disc.drops == 1

    def test_delay_sampled_at_enqueue(self):
        disc = Discipline(self.sim, 'q', 0.0, 1 * MS, 10)
        inject = wire(disc, self.sink)
        inject(make_packet(), 0, self.sim)

        def reconfigure():
            disc.delay_ns = 5 * MS
            inject(make_packet(), self.sim.now, self.sim)

        self.sim.schedule(100, 0, reconfigure)
        self.sim.run()
        times = [t for t, _ in self.out]
        assert times == [1 * MS, 100 + 5 * MS]

    def test_zero_rate_zero_delay_is_synchronous(self):
        disc = Discipline(self.sim, 'q', 0.0, 0, 10)
        pkt = make_packet()
        pkt.path = (disc.send, self.sink)
        pkt.path[0](pkt)
        assert self.out == [(0, pkt)]

    def test_shaper_applies_delay_after_service(self):
        disc = Discipline(self.sim, 'q', 100.0, 2 * MS, 10)
        inject = wire(disc, self.sink)
        inject(make_packet(1500), 0, self.sim)
        self.sim.run()
        assert self.out[0][0] == 120_000 + 2 * MS

    def test_jitter_bounds_and_clamp(self):
        rng = SplitMix64(1)
        disc = Discipline(self.sim, 'q', 0.0, 1 * MS, 1000, jitter_ns=2 * MS, rng=rng)
        inject = wire(disc, self.sink)
        for _ in range(200):
            inject(make_packet(), 0, self.sim)
        self.sim.run()
        delays = [t for t, _ in self.out]
        assert min(delays) >= 0
        assert max(delays) <= 3 * MS
        assert len(set(delays)) > 10      # actually spread around


def simple_params(**kw):
    defaults = dict(base=Duration(0), delta=Duration.parse('1s'),
                    step=Duration(0), runtime=2, rate=100.0, seed=3)
    defaults.update(kw)
    return RunParams(**defaults)


class TestTopology:

    def test_addressing_rightward(self):
        params = simple_params()
        groups = [FlowGroup(scheme='cubic', direction='->', flows=2, start=0)]
        topo = build_topology(params, groups)
        topo.attach(Simulator())
        first, second = topo.flows
        assert ip_to_text(first.sender_ip) == '10.0.0.1'
        assert ip_to_text(first.receiver_ip) == '10.0.3.2'
        assert ip_to_text(second.sender_ip) == '10.0.1.1'
        assert ip_to_text(second.receiver_ip) == '10.0.4.2'
        assert (first.sport, first.dport) == (49153, 9001)
        assert (second.sport, second.dport) == (49154, 9002)

    def test_addressing_leftward_swaps_roles(self):
        params = simple_params()
        groups = [FlowGroup(scheme='reno', direction='<-', flows=1, start=0)]
        topo = build_topology(params, groups)
        topo.attach(Simulator())
        flow = topo.flows[0]
        assert ip_to_text(flow.sender_ip) == '10.0.2.2'
        assert ip_to_text(flow.receiver_ip) == '10.0.0.1'

    def test_paths_cross_the_matching_central_end(self):
        params = simple_params()
        groups = [FlowGroup(scheme='cubic', direction='->', flows=1, start=0),
                  FlowGroup(scheme='cubic', direction='<-', flows=1, start=0)]
        topo = build_topology(params, groups)
        topo.attach(Simulator())
        right, left = topo.flows
        assert [d.name for d in topo.data_path(right)] == [
            'left-host-1', 'central-left', 'right-router-side-1']
        assert [d.name for d in topo.ack_path(right)] == [
            'right-host-1', 'central-right', 'left-router-side-1']
        assert [d.name for d in topo.data_path(left)] == [
            'right-host-2', 'central-right', 'left-router-side-2']
        assert [d.name for d in topo.ack_path(left)] == [
            'left-host-2', 'central-left', 'right-router-side-2']

    def test_install_central_delay_sides(self):
        params = simple_params()
        topo = build_topology(params, [FlowGroup(scheme='cubic', direction='->',
                                                 flows=1, start=0)])
        topo.attach(Simulator())
        install_central_delay(topo, 7 * MS, 'left')
        assert topo.central_left.delay_ns == 7 * MS
        assert topo.central_right.delay_ns == 0
        install_central_delay(topo, 9 * MS)
        assert topo.central_right.delay_ns == 9 * MS


class TestRun:

    def test_conservation_with_drops(self):
        params = simple_params(q1=20, runtime=3)
        groups = [FlowGroup(scheme='cubic', direction='->', flows=2, start=0)]
        topo = build_topology(params, groups)
        report = run(topo, generate_delay_schedule(params), params)
        assert report.conserved()
        assert sum(f.dropped for f in report.flows) > 0
        assert sum(report.drops_by_queue.values()) >= sum(f.dropped for f in report.flows)

    def test_flow_start_offsets(self):
        params = simple_params(runtime=3)
        groups = [FlowGroup(scheme='vegas', direction='->', flows=1, start=0),
                  FlowGroup(scheme='vegas', direction='->', flows=1, start=2)]
        topo = build_topology(params, groups)
        report = run(topo, generate_delay_schedule(params), params,
                     collect_packets=True)
        late = report.flows[1]
        first_arrival = min(t for t, _, _ in late.packets)
        assert first_arrival >= 2 * 10 ** 9

    def test_delay_install_lag(self):
        # square wave 0 <-> 20 ms flips at 1 s; the left end applies it 4 ms
        # later, so departures after 1.004 s carry the new delay
        params = simple_params(step=Duration.parse('20ms'),
                               max_delay=Duration.parse('20ms'), runtime=2)
        groups = [FlowGroup(scheme='vegas', direction='->', flows=1, start=0)]
        topo = build_topology(params, groups)
        schedule = generate_delay_schedule(params)
        assert schedule == [0, 20 * MS]
        report = run(topo, schedule, params, collect_packets=True)
        for arrival, delay, _size in report.flows[0].packets:
            departure = arrival - delay
            if departure < 1_004_000_000:
                assert delay < 5 * MS
            elif departure > 1_010_000_000:
                assert delay >= 20 * MS

    def test_determinism_with_jitter(self):
        params = simple_params(base=Duration.parse('5ms'),
                               jitter=Duration.parse('2ms'), runtime=2)
        groups = [FlowGroup(scheme='cubic', direction='->', flows=1, start=0)]
        reports = []
        for _ in range(2):
            topo = build_topology(params, groups)
            reports.append(run(topo, generate_delay_schedule(params), params,
                               collect_packets=True))
        assert reports[0].flows[0].packets == reports[1].flows[0].packets

    def test_trace_files(self, tmp_path):
        params = simple_params(runtime=2)
        groups = [FlowGroup(scheme='bbr', direction='->', flows=1, start=0)]
        topo = build_topology(params, groups)
        run(topo, generate_delay_schedule(params), params, trace_dir=str(tmp_path))
        lines = (tmp_path / 'trace-1-bbr.log').read_text().splitlines()
        assert lines
        record = json.loads(lines[0])
        assert set(record) == {'time', 'cwnd', 'ssthresh', 'srtt', 'min_rtt',
                               'pacing_pps', 'mode'}


class TestCaptures:

    @pytest.fixture()
    def dumps(self, tmp_path):
        params = simple_params(base=Duration.parse('2ms'), runtime=2)
        groups = [FlowGroup(scheme='reno', direction='->', flows=1, start=0)]
        topo = build_topology(params, groups)
        sink = DirectoryCaptureSink(str(tmp_path))
        run(topo, generate_delay_schedule(params), params, capture_sink=sink)
        return tmp_path

    def test_both_roles_written(self, dumps):
        assert (dumps / '1-reno-sender.pcap').exists()
        assert (dumps / '1-reno-receiver.pcap').exists()

    def test_dumps_hold_both_directions(self, dumps):
        seen = set()
        for record in read_capture(str(dumps / '1-reno-sender.pcap')):
            src, _dst, _proto, _ip_id, _payload = parse_ipv4(record.data)
            seen.add(ip_to_text(src))
        assert seen == {'10.0.0.1', '10.0.2.2'}

    def test_timestamps_cut_at_runtime(self, dumps):
        for name in ('1-reno-sender.pcap', '1-reno-receiver.pcap'):
            stamps = [r.ts_us for r in read_capture(str(dumps / name))]
            assert stamps == sorted(stamps)
            assert stamps[-1] <= 2_000_000

    def test_data_sequence_numbers_step_by_payload(self, dumps):
        seqs = []
        for record in read_capture(str(dumps / '1-reno-receiver.pcap')):
            if record.size == 1500:
                payload = parse_ipv4(record.data)[4]
                seqs.append(int.from_bytes(payload[4:8], 'big'))
            if len(seqs) == 5:
                break
        assert seqs == [0, 1460, 2920, 4380, 5840]

    def test_ip_ids_increment(self, dumps):
        ids = []
        for record in read_capture(str(dumps / '1-reno-sender.pcap')):
            src = parse_ipv4(record.data)[0]
            if ip_to_text(src) == '10.0.0.1':
                ids.append(int.from_bytes(parse_ipv4(record.data)[3], 'big'))
            if len(ids) == 6:
                break
        assert ids == list(range(ids[0], ids[0] + 6))
