"""Congestion control scheme models and the scheme registry.

The models are class representatives, not kernel ports: each one keeps the
signature behaviour of its family (loss-based window growth, delay-based
window holding, rate-based pacing) with the standard constants.  All
constants live at module level and can be overridden through the model
constructors for experiments.

Windows are measured in packets and may be fractional; the transport engine
gates sending on the floor of the window and never lets it fall below one
packet (two for the delay-based model, which needs headroom to measure).
"""

import math
from dataclasses import dataclass

INITIAL_WINDOW = 10.0

CUBIC_C = 0.4
CUBIC_BETA = 0.7

# Slow-start exit on delay increase, as in the stock kernel cubic: leaving
# slow start once queueing delay builds keeps the overshoot bounded.
HYSTART_DELAY_FLOOR = 0.004
HYSTART_MIN_CWND = 16

RENO_BETA = 0.5

VEGAS_ALPHA = 2.0
VEGAS_BETA = 4.0

BBR_STARTUP_GAIN = 2.885
BBR_DRAIN_GAIN = 1.0 / 2.885
BBR_CWND_GAIN = 2.0
BBR_BW_WINDOW_ROUNDS = 8
BBR_RTPROP_WINDOW = 10.0
BBR_PROBE_RTT_DURATION = 0.2
BBR_PROBE_RTT_CWND = 4.0
BBR_GAIN_CYCLE = (1.25, 0.75, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
BBR_MIN_PHASE = 0.01

DELACK_TIMEOUT = 0.040


class SchemeError(KeyError):
    """Raised when a congestion control scheme is unknown."""


@dataclass
class AckSample:
    """Per-acknowledgement feedback handed to a scheme model."""

    rtt: float
    acked: int
    bw: float
    new_round: bool
    inflight: int


@dataclass
class SchemeState:
    """Snapshot of a model, used by runtime traces."""

    cwnd: float
    ssthresh: float
    rtt_estimate: float
    min_rtt: float
    pacing_rate: float
    mode: str


class Model:
    """Common window bookkeeping shared by the concrete schemes."""

    min_cwnd = 1.0

    def __init__(self):
        self.cwnd = INITIAL_WINDOW
        self.ssthresh = math.inf
        self.min_rtt = math.inf

    def observe_rtt(self, rtt):
        if rtt < self.min_rtt:
            self.min_rtt = rtt

    @property
    def in_slow_start(self):
        return self.cwnd < self.ssthresh

    @property
    def mode(self):
        return 'slow_start' if self.in_slow_start else 'avoidance'

    def pacing_rate_pps(self):
        return 0.0

    def on_ack(self, now, sample):
        raise NotImplementedError

    def on_loss(self, now):
        raise NotImplementedError

    def on_timeout(self, now):
        self.ssthresh = max(2.0, self.cwnd / 2.0)
        self.cwnd = self.min_cwnd


class Cubic(Model):
    """Loss-based model with the cubic window function."""

    def __init__(self, c=CUBIC_C, beta=CUBIC_BETA):
        super().__init__()
        self.c = c
        self.beta = beta
        self.w_max = 0.0
        self.epoch_start = None
        self._rtt_smooth = None

    def _hystart(self, rtt, now):
        if self._rtt_smooth is None:
            self._rtt_smooth = rtt
        else:
            self._rtt_smooth += (rtt - self._rtt_smooth) / 8.0
        threshold = self.min_rtt + max(HYSTART_DELAY_FLOOR, self.min_rtt / 8.0)
        if self.cwnd >= HYSTART_MIN_CWND and self._rtt_smooth > threshold:
            self.ssthresh = self.cwnd
            self.w_max = self.cwnd
            self.epoch_start = now

    def _target(self, now):
        if self.epoch_start is None:
            self.epoch_start = now
            self.w_max = max(self.w_max, self.cwnd)
        t = now - self.epoch_start
        k = ((self.w_max * (1.0 - self.beta)) / self.c) ** (1.0 / 3.0)
        return self.c * (t - k) ** 3 + self.w_max

    def on_ack(self, now, sample):
        self.observe_rtt(sample.rtt)
        if self.in_slow_start:
            self.cwnd += sample.acked
            self._hystart(sample.rtt, now)
            return
        target = self._target(now)
        if target > self.cwnd:
            self.cwnd += (target - self.cwnd) / self.cwnd * sample.acked
        else:
            # Heavily damped probing while at or above the plateau.
            self.cwnd += 0.01 * sample.acked / self.cwnd

    def on_loss(self, now):
        self.w_max = self.cwnd
        self.cwnd = max(self.min_cwnd, self.cwnd * self.beta)
        self.ssthresh = self.cwnd
        self.epoch_start = now

    def on_timeout(self, now):
        self.ssthresh = max(2.0, self.cwnd * self.beta)
        self.w_max = self.cwnd
        self.cwnd = self.min_cwnd
        self.epoch_start = None
        self._rtt_smooth = None


class Reno(Model):
    """Classic AIMD: one packet per round trip up, halving on loss."""

    def on_ack(self, now, sample):
        self.observe_rtt(sample.rtt)
        if self.in_slow_start:
            self.cwnd += sample.acked
        else:
            self.cwnd += sample.acked / self.cwnd

    def on_loss(self, now):
        self.ssthresh = max(2.0, self.cwnd * RENO_BETA)
        self.cwnd = max(self.min_cwnd, self.ssthresh)


class Vegas(Model):
    """Delay-based model holding the path backlog between alpha and beta."""

    min_cwnd = 2.0

    def __init__(self, alpha=VEGAS_ALPHA, beta=VEGAS_BETA):
        super().__init__()
        self.cwnd = max(self.cwnd, self.min_cwnd)
        self.alpha = alpha
        self.beta = beta
        self._epoch_end = None
        self._epoch_rtt = math.inf
        self._grow_epoch = False

    def _backlog(self, rtt):
        # Expected minus actual throughput, expressed in packets queued.
        return self.cwnd * (rtt - self.min_rtt) / rtt

    def on_ack(self, now, sample):
        self.observe_rtt(sample.rtt)
        self._epoch_rtt = min(self._epoch_rtt, sample.rtt)
        if self._epoch_end is None:
            self._epoch_end = now + sample.rtt
            return
        if now < self._epoch_end:
            return
        rtt = self._epoch_rtt
        diff = self._backlog(rtt)
        if self.in_slow_start:
            if diff > self.beta:
                self.ssthresh = self.cwnd
            elif self._grow_epoch:
                self.cwnd *= 2.0
            self._grow_epoch = not self._grow_epoch
        elif diff < self.alpha:
            self.cwnd += 1.0
        elif diff > self.beta:
            self.cwnd -= 1.0
        self.cwnd = max(self.min_cwnd, self.cwnd)
        self._epoch_end = now + rtt
        self._epoch_rtt = math.inf

    def on_loss(self, now):
        self.ssthresh = max(2.0, self.cwnd * 0.75)
        self.cwnd = max(self.min_cwnd, self.cwnd * 0.75)

    def on_timeout(self, now):
        self.ssthresh = max(2.0, self.cwnd / 2.0)
        self.cwnd = self.min_cwnd


class Bbr(Model):
    """Hybrid model: pace at the bandwidth estimate, cap inflight near BDP."""

    STARTUP, DRAIN, PROBE_BW, PROBE_RTT = 'startup', 'drain', 'probe_bw', 'probe_rtt'

    def __init__(self):
        super().__init__()
        self._mode = self.STARTUP
        self._bw_rounds = []
        self._round = 0
        self._round_bw = 0.0
        self._full_bw = 0.0
        self._full_bw_count = 0
        self._rtprop = math.inf
        self._rtprop_ts = 0.0
        self._cycle_index = 0
        self._cycle_start = 0.0
        self._probe_rtt_until = None

    @property
    def mode(self):
        return self._mode

    def _bw(self):
        return max((bw for _, bw in self._bw_rounds), default=0.0)

    def _update_rtprop(self, now, rtt):
        if rtt <= self._rtprop or now - self._rtprop_ts > BBR_RTPROP_WINDOW:
            self._rtprop = rtt
            self._rtprop_ts = now

    def _advance_round(self, new_round):
        if not new_round:
            return
        self._round += 1
        self._bw_rounds.append((self._round, self._round_bw))
        self._round_bw = 0.0
        horizon = self._round - BBR_BW_WINDOW_ROUNDS
        self._bw_rounds = [(r, bw) for r, bw in self._bw_rounds if r > horizon]

    def _check_full_pipe(self, new_round):
        if not new_round or self._mode != self.STARTUP:
            return
        bw = self._bw()
        if bw >= self._full_bw * 1.25:
            self._full_bw = bw
            self._full_bw_count = 0
        else:
            self._full_bw_count += 1
            if self._full_bw_count >= 3:
                self._mode = self.DRAIN

    def _gain(self):
        if self._mode == self.STARTUP:
            return BBR_STARTUP_GAIN
        if self._mode == self.DRAIN:
            return BBR_DRAIN_GAIN
        if self._mode == self.PROBE_RTT:
            return 1.0
        return BBR_GAIN_CYCLE[self._cycle_index]

    def _bdp_packets(self):
        if not math.isfinite(self._rtprop):
            return INITIAL_WINDOW
        return max(BBR_PROBE_RTT_CWND, self._bw() * self._rtprop)

    def on_ack(self, now, sample):
        self.observe_rtt(sample.rtt)
        # staleness is judged before the estimate refresh below, which
        # itself resets the timestamp once the window has expired
        rtprop_expired = now - self._rtprop_ts > BBR_RTPROP_WINDOW
        self._update_rtprop(now, sample.rtt)
        self._round_bw = max(self._round_bw, sample.bw)
        self._advance_round(sample.new_round)
        self._check_full_pipe(sample.new_round)

        if self._mode == self.DRAIN and sample.inflight <= self._bdp_packets():
            self._mode = self.PROBE_BW
            self._cycle_index = 0
            self._cycle_start = now
        elif self._mode == self.PROBE_BW:
            phase = max(self._rtprop, BBR_MIN_PHASE)
            if math.isfinite(phase) and now - self._cycle_start > phase:
                self._cycle_index = (self._cycle_index + 1) % len(BBR_GAIN_CYCLE)
                self._cycle_start = now
            if rtprop_expired:
                self._mode = self.PROBE_RTT
                self._probe_rtt_until = now + BBR_PROBE_RTT_DURATION
        elif self._mode == self.PROBE_RTT and now >= self._probe_rtt_until:
            self._rtprop_ts = now
            self._mode = self.PROBE_BW
            self._cycle_index = 0
            self._cycle_start = now

        if self._mode == self.PROBE_RTT:
            self.cwnd = BBR_PROBE_RTT_CWND
        else:
            self.cwnd = max(BBR_PROBE_RTT_CWND, BBR_CWND_GAIN * self._bdp_packets())

    def pacing_rate_pps(self):
        bw = self._bw()
        if bw <= 0.0:
            return 0.0
        return self._gain() * bw

    def on_loss(self, now):
        pass

    def on_timeout(self, now):
        pass


class DelayedAck:
    """Receiver-side acknowledgement batching.

    The second packet of a pair is acknowledged immediately together with
    the first; a lone packet waits on a timer before being acknowledged.
    """

    def __init__(self, enabled=True):
        self.enabled = enabled
        self.pending = None

    def on_data(self, seq):
        """Returns sequence numbers to acknowledge right away."""
        if not self.enabled:
            return [seq]
        if self.pending is None:
            self.pending = seq
            return []
        batch = [self.pending, seq]
        self.pending = None
        return batch

    def on_timer(self):
        """Timer expiry: flush the lone pending packet, if still there."""
        if self.pending is None:
            return []
        batch = [self.pending]
        self.pending = None
        return batch


@dataclass(frozen=True)
class SchemeInfo:
    """Registry entry describing one congestion control scheme."""

    name: str
    kind: str
    transport: str
    factory: type


_REGISTRY = {
    'cubic': SchemeInfo('cubic', 'loss-based', 'tcp', Cubic),
    'reno': SchemeInfo('reno', 'loss-based', 'tcp', Reno),
    'vegas': SchemeInfo('vegas', 'delay-based', 'tcp', Vegas),
    'bbr': SchemeInfo('bbr', 'hybrid', 'tcp', Bbr),
}


def registry():
    """Mapping of scheme name to its SchemeInfo descriptor."""
    return dict(_REGISTRY)


def create_scheme(name):
    """Instantiate the model for a scheme name."""
    try:
        info = _REGISTRY[name]
    except KeyError:
        raise SchemeError('unknown scheme: %r' % (name,)) from None
    return info.factory()
