"""Dumbbell topology and the deterministic discrete-event emulation core.

The emulated network is the classic dumbbell: n left hosts and n right
hosts joined through two routers that share one central link.  Every link
end carries an egress discipline combining a rate shaper, a delay (with
optional jitter on the central link), and a tail-drop FIFO limit, mirroring
the behaviour of the kernel's netem/tbf stack:

- the limit counts packets waiting, in service, and held for delay;
- delay and jitter are sampled at enqueue time, so packets already queued
  keep their delay when the link delay is reconfigured;
- serialization takes exactly size * 8000 / rate nanoseconds;
- a zero rate disables the shaper entirely.

Time is an integer nanosecond clock driven by a single event heap, so runs
are reproducible bit for bit for a given seed.
"""

import heapq
import json
import math
from collections import deque
from dataclasses import dataclass, field

from .config import NS_PER_SEC, Duration, expand_flows
from .packets import ACK_PACKET_LEN, FLAG_ACK, FLAG_PSH_ACK, MTU, build_tcp_packet, text_to_ip
from .pcap import CaptureWriter
from .rng import JITTER_STREAM, SplitMix64
from .schemes import DELACK_TIMEOUT, AckSample, DelayedAck, SchemeState, create_scheme

PRIO_DELAY_CHANGE = 0
PRIO_FLOW_START = 1
PRIO_SERVICE = 2
PRIO_ARRIVAL = 3
PRIO_SCHEME_TICK = 4

DATA_PACKET_LEN = MTU
DATA_PAYLOAD_LEN = MTU - 40

# Reordering depth treated as a loss signal, and the retransmission
# timeout floor.  The floor has to exceed the longest ack gap a variable
# delay schedule produces within one period, or spurious timeouts restart
# every flow mid-gap.
REORDER_THRESHOLD = 3
MIN_RTO = 0.3
MAX_RTO = 60.0

DEFAULT_INSTALL_LAG = Duration.parse('4ms')
TRACE_TICK_NS = 50 * 1000 * 1000


class Simulator:
    """Event heap with a stable (time, priority, insertion) order."""

    def __init__(self):
        self.now = 0
        self._heap = []
        self._counter = 0

    def schedule(self, when, prio, fn, *args):
        if when < self.now:
            when = self.now
        heapq.heappush(self._heap, (when, prio, self._counter, fn, args))
        self._counter += 1

    def run(self):
        heap = self._heap
        while heap:
            when, _prio, _seq, fn, args = heapq.heappop(heap)
            self.now = when
            fn(*args)


class Packet:
    """One emulated IP packet; wire bytes are only built when captured."""

    __slots__ = ('flow', 'kind', 'index', 'size', 'seq', 'ack_no', 'ip_id',
                 'src', 'dst', 'sport', 'dport', 'send_ns', 'path', 'hop',
                 'disc_delay', 'acked', 'delivered_snapshot')

    def wire_bytes(self):
        flags = FLAG_PSH_ACK if self.kind == 'data' else FLAG_ACK
        return build_tcp_packet(self.src, self.dst, self.ip_id, self.seq,
                                self.ack_no, flags, self.size - 40,
                                self.sport, self.dport)


class Discipline:
    """Egress discipline of one link end: shaper, delay, tail-drop FIFO."""

    __slots__ = ('sim', 'name', 'rate', 'delay_ns', 'jitter_ns', 'limit',
                 'rng', 'held', 'busy', 'queue', 'drops', 'drop_hook')

    def __init__(self, sim, name, rate, delay_ns, limit, jitter_ns=0, rng=None):
        self.sim = sim
        self.name = name
        self.rate = rate
        self.delay_ns = delay_ns
        self.jitter_ns = jitter_ns
        self.limit = limit
        self.rng = rng
        self.held = 0
        self.busy = False
        self.queue = deque()
        self.drops = 0
        self.drop_hook = None

    def _service_ns(self, size):
        return int(round(size * 8000 / self.rate))

    def send(self, pkt):
        if self.held >= self.limit:
            self.drops += 1
            if self.drop_hook is not None:
                self.drop_hook(pkt)
            return
        self.held += 1
        delay = self.delay_ns
        if self.jitter_ns:
            delay += self.rng.uniform_int(-self.jitter_ns, self.jitter_ns)
            if delay < 0:
                delay = 0
        pkt.disc_delay = delay
        if self.rate <= 0.0:
            if delay == 0:
                self._deliver(pkt)
            else:
                self.sim.schedule(self.sim.now + delay, PRIO_ARRIVAL, self._deliver, pkt)
        elif self.busy:
            self.queue.append(pkt)
        else:
            self.busy = True
            self.sim.schedule(self.sim.now + self._service_ns(pkt.size),
                              PRIO_SERVICE, self._service, pkt)

    def _service(self, pkt):
        delay = pkt.disc_delay
        if delay == 0:
            self._deliver(pkt)
        else:
            self.sim.schedule(self.sim.now + delay, PRIO_ARRIVAL, self._deliver, pkt)
        if self.queue:
            nxt = self.queue.popleft()
            self.sim.schedule(self.sim.now + self._service_ns(nxt.size),
                              PRIO_SERVICE, self._service, nxt)
        else:
            self.busy = False

    def _deliver(self, pkt):
        self.held -= 1
        pkt.hop += 1
        pkt.path[pkt.hop](pkt)


@dataclass(frozen=True)
class FlowSpec:
    """One flow of the experiment after sorting and numbering."""

    number: int
    scheme: str
    direction: str
    start_ns: int
    sender_ip: int
    receiver_ip: int
    sport: int
    dport: int


class Topology:
    """Holds the disciplines of all link ends plus the flow table."""

    def __init__(self, params, groups):
        self.params = params
        self.flows = []
        self.disciplines = {}
        self._jitter_rng = SplitMix64(params.seed ^ JITTER_STREAM)
        self._groups = list(expand_flows(groups))
        self.n = len(self._groups)

    def attach(self, sim):
        """Creates the disciplines on a simulator and resolves addressing."""
        params = self.params
        n = self.n
        base_delay = params.base.ns
        self.central_left = Discipline(sim, 'central-left', params.rate, base_delay,
                                       params.q1, params.jitter.ns, self._jitter_rng)
        self.central_right = Discipline(sim, 'central-right', params.rate, base_delay,
                                        params.q2, params.jitter.ns, self._jitter_rng)
        self.disciplines = {d.name: d for d in (self.central_left, self.central_right)}
        self.left_host = []
        self.left_side = []
        self.right_side = []
        self.right_host = []
        self.flows = []
        for i, (scheme, direction, group) in enumerate(self._groups):
            number = i + 1
            lh = Discipline(sim, 'left-host-%d' % number, group.left_rate,
                            group.left_delay.ns, group.left_queues)
            ls = Discipline(sim, 'left-router-side-%d' % number, group.left_rate,
                            group.left_delay.ns, group.left_queues)
            rs = Discipline(sim, 'right-router-side-%d' % number, group.right_rate,
                            group.right_delay.ns, group.right_queues)
            rh = Discipline(sim, 'right-host-%d' % number, group.right_rate,
                            group.right_delay.ns, group.right_queues)
            for disc in (lh, ls, rs, rh):
                self.disciplines[disc.name] = disc
            self.left_host.append(lh)
            self.left_side.append(ls)
            self.right_side.append(rs)
            self.right_host.append(rh)
            left_addr = text_to_ip('10.0.%d.1' % i)
            right_addr = text_to_ip('10.0.%d.2' % (n + 1 + i))
            if direction == '->':
                sender_ip, receiver_ip = left_addr, right_addr
            else:
                sender_ip, receiver_ip = right_addr, left_addr
            self.flows.append(FlowSpec(number=number, scheme=scheme,
                                       direction=direction,
                                       start_ns=group.start * NS_PER_SEC,
                                       sender_ip=sender_ip, receiver_ip=receiver_ip,
                                       sport=49152 + number, dport=9000 + number))

    def data_path(self, flow):
        i = flow.number - 1
        if flow.direction == '->':
            return [self.left_host[i], self.central_left, self.right_side[i]]
        return [self.right_host[i], self.central_right, self.left_side[i]]

    def ack_path(self, flow):
        i = flow.number - 1
        if flow.direction == '->':
            return [self.right_host[i], self.central_right, self.left_side[i]]
        return [self.left_host[i], self.central_left, self.right_side[i]]


def build_topology(params, groups):
    return Topology(params, groups)


def generate_delay_schedule(params):
    """Delay value for each delta boundary of the run.

    values[0] is the base delay; each later boundary moves one step up or
    down on a fair coin.  A move leaving [0, max_delay] is flipped to the
    opposite direction; if both directions leave the range, the value
    saturates at the bound the coin's direction violated.  The coin is
    consumed at every boundary, even a forced one, so schedules with the
    same seed stay aligned across parameter changes.
    """
    rng = SplitMix64(params.seed)
    step = params.step.ns
    max_ns = params.max_delay.ns
    values = [params.base.ns]
    boundary = params.delta.ns
    while boundary < params.runtime_ns:
        up = rng.coin() == 1
        prev = values[-1]
        candidate = prev + step if up else prev - step
        if not 0 <= candidate <= max_ns:
            opposite = prev - step if up else prev + step
            if 0 <= opposite <= max_ns:
                candidate = opposite
            else:
                candidate = max_ns if up else 0
        values.append(candidate)
        boundary += params.delta.ns
    return values


def install_central_delay(topology, delay_ns, side='both'):
    """Immediately points one or both central link ends at a new delay."""
    if side in ('left', 'both'):
        topology.central_left.delay_ns = delay_ns
    if side in ('right', 'both'):
        topology.central_right.delay_ns = delay_ns


@dataclass
class FlowResult:
    """Counters for one flow; conservation: injected = delivered + dropped."""

    number: int
    scheme: str
    direction: str
    injected: int = 0
    delivered: int = 0
    dropped: int = 0
    delivered_bytes: int = 0
    acks_injected: int = 0
    acks_dropped: int = 0
    packets: list = None


@dataclass
class RunReport:
    flows: list = field(default_factory=list)
    schedule: list = field(default_factory=list)
    drops_by_queue: dict = field(default_factory=dict)

    def conserved(self):
        return all(f.injected == f.delivered + f.dropped for f in self.flows)


class _Receiver:
    """Receiving endpoint: counts arrivals and generates (delayed) acks."""

    def __init__(self, sim, spec, result, stop_ns, delayed_ack, taps):
        self.sim = sim
        self.spec = spec
        self.result = result
        self.stop_ns = stop_ns
        self.delack = DelayedAck(delayed_ack)
        self.ack_path = None
        self.sender = None
        self._ip_id = 0
        self._timer_gen = 0
        self._tap_arrival, self._tap_ack_send = taps

    def deliver(self, pkt):
        now = self.sim.now
        self.result.delivered += 1
        self.result.delivered_bytes += pkt.size
        if now <= self.stop_ns:
            if self.result.packets is not None:
                self.result.packets.append((now, now - pkt.send_ns, pkt.size))
            if self._tap_arrival is not None:
                self._tap_arrival(now, pkt)
        batch = self.delack.on_data(pkt)
        if batch:
            self._send_ack(batch)
        elif self.delack.pending is not None:
            self._timer_gen += 1
            self.sim.schedule(now + int(DELACK_TIMEOUT * NS_PER_SEC),
                              PRIO_SCHEME_TICK, self._on_timer, self._timer_gen)

    def _on_timer(self, gen):
        if gen != self._timer_gen:
            return
        batch = self.delack.on_timer()
        if batch:
            self._send_ack(batch)

    def _send_ack(self, batch):
        now = self.sim.now
        spec = self.spec
        ack = Packet()
        ack.flow = spec.number
        ack.kind = 'ack'
        ack.index = self._ip_id
        ack.size = ACK_PACKET_LEN
        ack.seq = 0
        ack.ack_no = max((p.seq + p.size - 40) for p in batch) & 0xFFFFFFFF
        ack.ip_id = self._ip_id & 0xFFFF
        self._ip_id += 1
        ack.src = spec.receiver_ip
        ack.dst = spec.sender_ip
        ack.sport = spec.dport
        ack.dport = spec.sport
        ack.send_ns = now
        ack.acked = tuple(p.index for p in batch)
        ack.delivered_snapshot = 0
        ack.disc_delay = 0
        ack.path = self.ack_path
        ack.hop = 0
        self.result.acks_injected += 1
        if now <= self.stop_ns and self._tap_ack_send is not None:
            self._tap_ack_send(now, ack)
        ack.path[0](ack)


class _Sender:
    """Sending endpoint: ack-clocked window, RTO, optional pacing."""

    def __init__(self, sim, spec, model, result, stop_ns, taps):
        self.sim = sim
        self.spec = spec
        self.model = model
        self.result = result
        self.stop_ns = stop_ns
        self.data_path = None
        self.inflight = {}
        self._next_index = 0
        self._round_end = 0
        self._loss_epoch_end = None
        self._delivered = 0
        self.srtt = None
        self.rttvar = 0.0
        self._rto_gen = 0
        self._rto_backoff = 1.0
        self._next_pace = 0
        self._tick_armed = False
        self._tap_send, self._tap_ack_arrival = taps

    def start(self):
        self.fill()

    def _rto_ns(self):
        if self.srtt is None:
            rto = 1.0
        else:
            rto = self.srtt + max(0.001, 4.0 * self.rttvar)
        rto = min(MAX_RTO, max(MIN_RTO, rto) * self._rto_backoff)
        return int(rto * NS_PER_SEC)

    def _arm_rto(self):
        self._rto_gen += 1
        if self.inflight:
            self.sim.schedule(self.sim.now + self._rto_ns(), PRIO_SCHEME_TICK,
                              self._on_rto, self._rto_gen)

    def _on_rto(self, gen):
        if gen != self._rto_gen or not self.inflight:
            return
        # Every outstanding packet is written off; recovery restarts the
        # stream with fresh sequence numbers rather than retransmitting.
        self.inflight.clear()
        self.model.on_timeout(self.sim.now / NS_PER_SEC)
        self._rto_backoff = min(self._rto_backoff * 2.0, 64.0)
        self.fill()
        self._arm_rto()

    def fill(self):
        sim = self.sim
        if sim.now >= self.stop_ns:
            return
        window = max(1, int(self.model.cwnd))
        while len(self.inflight) < window:
            rate = self.model.pacing_rate_pps()
            if rate > 0.0:
                if sim.now < self._next_pace:
                    if not self._tick_armed:
                        self._tick_armed = True
                        sim.schedule(self._next_pace, PRIO_SCHEME_TICK, self._pace_tick)
                    return
                self._next_pace = max(sim.now, self._next_pace) + int(NS_PER_SEC / rate)
            self._send_packet()

    def _pace_tick(self):
        self._tick_armed = False
        self.fill()

    def _send_packet(self):
        sim = self.sim
        spec = self.spec
        index = self._next_index
        self._next_index += 1
        pkt = Packet()
        pkt.flow = spec.number
        pkt.kind = 'data'
        pkt.index = index
        pkt.size = DATA_PACKET_LEN
        pkt.seq = (index * DATA_PAYLOAD_LEN) & 0xFFFFFFFF
        pkt.ack_no = 0
        pkt.ip_id = index & 0xFFFF
        pkt.src = spec.sender_ip
        pkt.dst = spec.receiver_ip
        pkt.sport = spec.sport
        pkt.dport = spec.dport
        pkt.send_ns = sim.now
        pkt.acked = ()
        pkt.delivered_snapshot = self._delivered
        pkt.disc_delay = 0
        pkt.path = self.data_path
        pkt.hop = 0
        had_inflight = bool(self.inflight)
        self.inflight[index] = pkt
        self.result.injected += 1
        if self._tap_send is not None and sim.now <= self.stop_ns:
            self._tap_send(sim.now, pkt)
        if not had_inflight:
            self._arm_rto()
        pkt.path[0](pkt)

    def _rtt_update(self, sample):
        if self.srtt is None:
            self.srtt = sample
            self.rttvar = sample / 2.0
        else:
            self.rttvar = 0.75 * self.rttvar + 0.25 * abs(self.srtt - sample)
            self.srtt = 0.875 * self.srtt + 0.125 * sample

    def on_ack(self, ack):
        sim = self.sim
        now = sim.now
        if self._tap_ack_arrival is not None and now <= self.stop_ns:
            self._tap_ack_arrival(now, ack)
        newest = None
        acked = 0
        for index in ack.acked:
            pkt = self.inflight.pop(index, None)
            if pkt is None:
                continue
            acked += 1
            self._delivered += 1
            if newest is None or index > newest.index:
                newest = pkt
        if newest is None:
            return
        self._rto_backoff = 1.0
        rtt = max(now - newest.send_ns, 1) / NS_PER_SEC
        self._rtt_update(rtt)
        dt = max(now - newest.send_ns, 1)
        bw = (self._delivered - newest.delivered_snapshot) / (dt / NS_PER_SEC)
        new_round = newest.index >= self._round_end
        if new_round:
            self._round_end = self._next_index
        sample = AckSample(rtt=rtt, acked=acked, bw=bw, new_round=new_round,
                           inflight=len(self.inflight))
        self.model.on_ack(now / NS_PER_SEC, sample)
        # Anything reordered beyond the threshold is treated as lost; the
        # model is punished once per window of outstanding data.
        lost = False
        while self.inflight:
            first = next(iter(self.inflight))
            if newest.index - first < REORDER_THRESHOLD:
                break
            del self.inflight[first]
            lost = True
        if lost and (self._loss_epoch_end is None or newest.index >= self._loss_epoch_end):
            self.model.on_loss(now / NS_PER_SEC)
            self._loss_epoch_end = self._next_index
        self._arm_rto()
        self.fill()

    def state(self):
        model = self.model
        ssthresh = model.ssthresh if math.isfinite(model.ssthresh) else None
        min_rtt = model.min_rtt if math.isfinite(model.min_rtt) else None
        return SchemeState(cwnd=model.cwnd, ssthresh=ssthresh,
                           rtt_estimate=self.srtt, min_rtt=min_rtt,
                           pacing_rate=model.pacing_rate_pps(), mode=model.mode)


class _FlowCapture:
    """Per-flow sender and receiver dump writers, both directions each."""

    def __init__(self, sink, spec):
        self.sender = sink.open(spec.number, spec.scheme, 'sender')
        self.receiver = sink.open(spec.number, spec.scheme, 'receiver')

    def close(self):
        self.sender.close()
        self.receiver.close()


def run(topology, schedule, params, capture_sink=None, trace_dir=None,
        install_lag=DEFAULT_INSTALL_LAG, collect_packets=False,
        delayed_ack=True):
    """Runs the experiment to completion and returns the flow counters.

    Captures and per-packet collection stop at the runtime boundary; the
    queues keep draining afterwards so the conservation counters balance.
    """
    sim = Simulator()
    topology.attach(sim)
    stop_ns = params.runtime_ns
    report = RunReport(schedule=list(schedule))

    delta = params.delta.ns
    lag = install_lag.ns
    for k in range(1, len(schedule)):
        value = schedule[k]
        sim.schedule(k * delta + lag, PRIO_DELAY_CHANGE,
                     install_central_delay, topology, value, 'left')
        sim.schedule(k * delta + 2 * lag, PRIO_DELAY_CHANGE,
                     install_central_delay, topology, value, 'right')

    captures = []
    traces = []
    try:
        for spec in topology.flows:
            result = FlowResult(number=spec.number, scheme=spec.scheme,
                                direction=spec.direction)
            if collect_packets:
                result.packets = []
            report.flows.append(result)

            send_tap = ack_arrival_tap = arrival_tap = ack_send_tap = None
            if capture_sink is not None:
                cap = _FlowCapture(capture_sink, spec)
                captures.append(cap)

                def send_tap(now, pkt, w=cap.sender):
                    w.write(now // 1000, pkt.wire_bytes())

                def ack_arrival_tap(now, pkt, w=cap.sender):
                    w.write(now // 1000, pkt.wire_bytes())

                def arrival_tap(now, pkt, w=cap.receiver):
                    w.write(now // 1000, pkt.wire_bytes())

                def ack_send_tap(now, pkt, w=cap.receiver):
                    w.write(now // 1000, pkt.wire_bytes())

            model = create_scheme(spec.scheme)
            sender = _Sender(sim, spec, model, result, stop_ns,
                             (send_tap, ack_arrival_tap))
            receiver = _Receiver(sim, spec, result, stop_ns, delayed_ack,
                                 (arrival_tap, ack_send_tap))
            sender.data_path = tuple(d.send for d in topology.data_path(spec)) + (receiver.deliver,)
            receiver.ack_path = tuple(d.send for d in topology.ack_path(spec)) + (sender.on_ack,)

            sim.schedule(spec.start_ns, PRIO_FLOW_START, sender.start)

            if trace_dir is not None:
                path = '%s/trace-%d-%s.log' % (trace_dir, spec.number, spec.scheme)
                handle = open(path, 'w')
                traces.append(handle)

                def tick(s=sender, h=handle, start=spec.start_ns):
                    if sim.now > stop_ns:
                        return
                    st = s.state()
                    h.write(json.dumps({
                        'time': sim.now / NS_PER_SEC,
                        'cwnd': st.cwnd,
                        'ssthresh': st.ssthresh,
                        'srtt': st.rtt_estimate,
                        'min_rtt': st.min_rtt,
                        'pacing_pps': st.pacing_rate,
                        'mode': st.mode,
                    }) + '\n')
                    sim.schedule(sim.now + TRACE_TICK_NS, PRIO_SCHEME_TICK, tick)

                sim.schedule(spec.start_ns, PRIO_SCHEME_TICK, tick)

        by_flow = {f.number: f for f in report.flows}

        def queue_drop(pkt):
            result = by_flow[pkt.flow]
            if pkt.kind == 'data':
                result.dropped += 1
            else:
                result.acks_dropped += 1

        for disc in topology.disciplines.values():
            disc.drop_hook = queue_drop

        sim.run()
    finally:
        for cap in captures:
            cap.close()
        for handle in traces:
            handle.close()

    report.drops_by_queue = {name: d.drops for name, d in
                             sorted(topology.disciplines.items()) if d.drops}
    return report
