"""Curves, aggregated series, statistics files, and plot rendering.

A report type groups flows into curves: per-flow (one each), total (one
overall), or per-subset over the layout properties scheme and direction.
Average rate / delay / fairness series are computed per aggregation
interval; the statistics file is interval-independent and has the two
fixed-format sections written by this module verbatim.
"""

import math
import os
from dataclasses import dataclass

import matplotlib

matplotlib.use('Agg')
matplotlib.rcParams['svg.hashsalt'] = 'dumbbell'

import matplotlib.pyplot as plt

from .analysis import data_log_name, load_flow_log
from .config import METADATA_FILE, load_metadata, sorted_groups, expand_flows

SUBSET_FIELDS = ('scheme', 'direction')
DEFAULT_INTERVAL = 0.5

# Below this duration a curve has no meaningful average rate.
MIN_RATE_DURATION = 0.005

STATS_NAME = '%s-stats.log'
PLOT_NAMES = ('%s-avg-rate.%s', '%s-avg-jain.%s', '%s-avg-delay.%s', '%s-ppt-delay.%s')


class ReportError(ValueError):
    """Raised for unsupported report types or subset fields."""


@dataclass
class FlowData:
    """One flow's identity plus its loaded data log."""

    number: int
    scheme: str
    direction: str
    log: object


def load_flow_data(data_dir):
    """Reads metadata plus every data-<k>.log from an analysis directory."""
    _params, groups = load_metadata(os.path.join(data_dir, METADATA_FILE))
    flows = []
    for number, (scheme, direction, _group) in enumerate(
            expand_flows(sorted_groups(groups)), start=1):
        log = load_flow_log(os.path.join(data_dir, data_log_name(number)))
        flows.append(FlowData(number, scheme, direction, log))
    return flows


class Curve:
    """A merged set of flows plotted and reported as one unit."""

    def __init__(self, label, members):
        self.label = label
        self.flow_numbers = [f.number for f in members]
        merged = []
        self.bytes_lost = 0
        self.bytes_sent = 0
        for flow in members:
            log = flow.log
            self.bytes_lost += log.bytes_lost
            self.bytes_sent += log.bytes_sent
            merged.extend(zip(log.arrivals, log.delays, log.sizes))
        merged.sort(key=lambda packet: packet[0])
        self.arrivals = [p[0] for p in merged]
        self.delays = [p[1] for p in merged]
        self.sizes = [p[2] for p in merged]
        starts = [f.log.first_arrival for f in members if f.log.first_arrival is not None]
        ends = [f.log.last_arrival for f in members if f.log.last_arrival is not None]
        self.start = min(starts) if starts else None
        self.end = max(ends) if ends else None

    @property
    def packets(self):
        return len(self.arrivals)

    @property
    def duration(self):
        if self.start is None:
            return None
        return self.end - self.start


def _flows_word(count):
    return '1 flow' if count == 1 else '%d flows' % count


def type_name(kind, fields=None):
    if kind in ('per-flow', 'total'):
        return kind
    return 'per-' + '-'.join(fields)


def build_curves(flows, kind, fields=None):
    """Groups flows into labeled curves for one report type."""
    if kind == 'per-flow':
        return [Curve('Flow %d: %s %s' % (f.number, f.scheme, f.direction), [f])
                for f in flows]
    if kind == 'total':
        return [Curve('Total: %s' % _flows_word(len(flows)), list(flows))]
    if kind != 'per-subset':
        raise ReportError('unknown report type: %r' % (kind,))
    if not fields:
        raise ReportError('per-subset needs at least one field')
    for name in fields:
        if name not in SUBSET_FIELDS:
            raise ReportError('unsupported subset field %r (allowed: %s)' %
                              (name, ', '.join(SUBSET_FIELDS)))
    order = []
    groups = {}
    for flow in flows:
        key = tuple(getattr(flow, name) for name in fields)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(flow)
    return [Curve('%s : %s' % (' '.join(key), _flows_word(len(groups[key]))),
                  groups[key]) for key in order]


def jains_index(rates):
    """(Sum x)^2 / (m * Sum x^2); None when every rate is zero."""
    m = len(rates)
    if m == 0:
        raise ReportError('Jain\'s index of an empty rate list')
    square_of_sum = sum(rates) ** 2
    sum_of_squares = sum(x * x for x in rates)
    if sum_of_squares == 0:
        return None
    return square_of_sum / (m * sum_of_squares)


def _slot_count(curves, interval):
    ends = [c.end for c in curves if c.end is not None]
    if not ends:
        return 0
    return int(max(ends) // interval) + 1


def _slot_bytes(curve, interval, slots):
    per_slot = [0] * slots
    for arrival, size in zip(curve.arrivals, curve.sizes):
        per_slot[int(arrival // interval)] += size
    return per_slot


def _slot_delay_means(curve, interval, slots):
    sums = [0.0] * slots
    counts = [0] * slots
    for arrival, delay in zip(curve.arrivals, curve.delays):
        index = int(arrival // interval)
        sums[index] += delay
        counts[index] += 1
    return [sums[k] / counts[k] if counts[k] else None for k in range(slots)]


def rate_series(curve, interval, slots):
    """(x, Mbit/s) points across the curve's own slot span."""
    if curve.start is None:
        return [], []
    per_slot = _slot_bytes(curve, interval, slots)
    first = int(curve.start // interval)
    last = int(curve.end // interval)
    xs = [(k + 0.5) * interval for k in range(first, last + 1)]
    ys = [per_slot[k] * 8 / interval / 1e6 for k in range(first, last + 1)]
    return xs, ys


def delay_series(curve, interval, slots):
    """(x, ms) points; slots without packets become gaps."""
    if curve.start is None:
        return [], []
    means = _slot_delay_means(curve, interval, slots)
    first = int(curve.start // interval)
    last = int(curve.end // interval)
    xs = [(k + 0.5) * interval for k in range(first, last + 1)]
    ys = [means[k] * 1000 if means[k] is not None else math.nan
          for k in range(first, last + 1)]
    return xs, ys


def jain_series(curves, interval):
    """The fairness meta-curve over all curves of the report.

    A curve joins a slot's computation only when its span encompasses the
    whole slot; slots with no eligible curves (or no traffic at all) are
    left out.
    """
    slots = _slot_count(curves, interval)
    per_curve = [_slot_bytes(c, interval, slots) for c in curves]
    xs = []
    ys = []
    for k in range(slots):
        slot_start = k * interval
        slot_end = slot_start + interval
        rates = []
        for curve, per_slot in zip(curves, per_curve):
            if curve.start is None:
                continue
            if curve.start <= slot_start and slot_end <= curve.end:
                rates.append(per_slot[k] * 8 / interval / 1e6)
        if not rates:
            continue
        value = jains_index(rates)
        if value is None:
            continue
        xs.append((k + 0.5) * interval)
        ys.append(value)
    return xs, ys


def _nearest_rank(sorted_values, percent):
    rank = max(1, math.ceil(percent / 100 * len(sorted_values)))
    return sorted_values[rank - 1]


@dataclass
class CurveStats:
    """Interval-independent per-curve statistics; None marks unavailable."""

    label: str
    rate: object
    rate_reason: str
    delay: object
    loss: object
    median: object
    average: object
    percentile_95: object


def curve_stats(curve):
    if curve.packets == 0:
        rate, reason = None, 'no packets'
    elif curve.duration < MIN_RATE_DURATION:
        rate, reason = None, 'curve duration is less than 5 ms'
    else:
        rate = sum(curve.sizes) * 8 / curve.duration / 1e6
        reason = ''
    if curve.packets:
        mean = sum(curve.delays) / curve.packets * 1000
        ordered = sorted(curve.delays)
        median = _nearest_rank(ordered, 50) * 1000
        percentile = _nearest_rank(ordered, 95) * 1000
    else:
        mean = median = percentile = None
    loss = None
    if curve.bytes_sent:
        loss = float(curve.bytes_lost) / curve.bytes_sent * 100
    return CurveStats(label=curve.label, rate=rate, rate_reason=reason,
                      delay=mean, loss=loss, median=median, average=mean,
                      percentile_95=percentile)


def _write_average_section(handle, stats):
    rates = [s.rate for s in stats if s.rate is not None]
    handle.write('== Average and loss statistics ==\n\n')
    overall = jains_index(rates) if rates else None
    if overall is None:
        handle.write("Average Jain's index  : unavailable (no curves with traffic)\n\n")
    else:
        handle.write("Average Jain's index  : %f\n\n" % overall)
    for s in stats:
        handle.write('-- Curve "%s":\n' % s.label)
        if s.rate is None:
            handle.write('Average throughput    : unavailable (%s)\n' % s.rate_reason)
        else:
            handle.write('Average throughput    : %f Mbps\n' % s.rate)
        if s.delay is None:
            handle.write('Average one-way delay : unavailable (no packets)\n')
        else:
            handle.write('Average one-way delay : %f ms\n' % s.delay)
        if s.loss is None:
            handle.write('Loss                  : unavailable (no bytes sent)\n')
        else:
            handle.write('Loss                  : %f %%\n' % s.loss)
        handle.write('\n')


def _write_perpacket_section(handle, stats):
    handle.write('===== Per-packet statistics =====\n')
    for s in stats:
        handle.write('\n-- Curve "%s":\n' % s.label)
        if s.median is None:
            handle.write('Median per-packet one-way delay          : unavailable (no packets)\n')
            handle.write('Average per-packet one-way delay         : unavailable (no packets)\n')
            handle.write('95th percentile per-packet one-way delay : unavailable (no packets)\n')
        else:
            handle.write('Median per-packet one-way delay          : %f ms\n' % s.median)
            handle.write('Average per-packet one-way delay         : %f ms\n' % s.average)
            handle.write('95th percentile per-packet one-way delay : %f ms\n' % s.percentile_95)


def _color_cycle(colors):
    if colors:
        return list(colors)
    return list(matplotlib.rcParams['axes.prop_cycle'].by_key()['color'])


def _new_figure(title):
    figure, axes = plt.subplots(figsize=(12, 6))
    axes.set_title(title)
    axes.set_xlabel('Time (s)')
    axes.grid(True, alpha=0.3)
    return figure, axes


def _finish(figure, axes, path):
    handles, _labels = axes.get_legend_handles_labels()
    if handles:
        axes.legend(loc='upper right', fontsize='small')
    figure.savefig(path)
    plt.close(figure)


def emit_reports(curves, interval, out_dir, name, colors=None, jain_color=None,
                 image_format='svg', log=None):
    """Writes the four plots and the statistics file for one report type.

    The average artifacts are produced before the per-packet ones, and the
    statistics file is assembled in the same order, so partial output stays
    useful if a later stage dies.
    """
    say = log if log is not None else lambda line: None
    os.makedirs(out_dir, exist_ok=True)
    cycle = _color_cycle(colors)
    stats = [curve_stats(c) for c in curves]
    slots = _slot_count(curves, interval)

    def color_of(index):
        return cycle[index % len(cycle)]

    say('Plotting average throughput...')
    figure, axes = _new_figure('Average throughput, %g s interval' % interval)
    axes.set_ylabel('Throughput (Mbit/s)')
    for index, (curve, stat) in enumerate(zip(curves, stats)):
        if curve.packets == 0:
            say('Curve "%s" has no packets: left out of the throughput plot' % curve.label)
            continue
        if stat.rate is None:
            say('Curve "%s": %s; left out of the throughput plot' %
                (curve.label, stat.rate_reason))
            continue
        xs, ys = rate_series(curve, interval, slots)
        axes.plot(xs, ys, label='%s (%f Mbps)' % (curve.label, stat.rate),
                  color=color_of(index))
    _finish(figure, axes, os.path.join(out_dir, PLOT_NAMES[0] % (name, image_format)))

    say('Plotting average one-way delay...')
    figure, axes = _new_figure('Average one-way delay, %g s interval' % interval)
    axes.set_ylabel('One-way delay (ms)')
    for index, (curve, stat) in enumerate(zip(curves, stats)):
        if curve.packets == 0:
            say('Curve "%s" has no packets: left out of the delay plot' % curve.label)
            continue
        xs, ys = delay_series(curve, interval, slots)
        axes.plot(xs, ys, label='%s (%f ms)' % (curve.label, stat.delay),
                  color=color_of(index))
    _finish(figure, axes, os.path.join(out_dir, PLOT_NAMES[2] % (name, image_format)))

    say("Plotting average Jain's index...")
    figure, axes = _new_figure("Average Jain's index, %g s interval" % interval)
    axes.set_ylabel("Jain's index")
    xs, ys = jain_series(curves, interval)
    rates = [s.rate for s in stats if s.rate is not None]
    overall = jains_index(rates) if rates else None
    label = "Jain's index" if overall is None else "Jain's index (%f)" % overall
    axes.plot(xs, ys, label=label,
              color=jain_color if jain_color else color_of(0))
    _finish(figure, axes, os.path.join(out_dir, PLOT_NAMES[1] % (name, image_format)))

    say('Saving average statistics...')
    stats_path = os.path.join(out_dir, STATS_NAME % name)
    with open(stats_path, 'w') as handle:
        _write_average_section(handle, stats)

        say('Plotting per packet one-way delay...')
        figure, axes = _new_figure('Per-packet one-way delay')
        axes.set_ylabel('One-way delay (ms)')
        for index, (curve, stat) in enumerate(zip(curves, stats)):
            if curve.packets == 0:
                say('Curve "%s" has no packets: left out of the per-packet plot' % curve.label)
                continue
            axes.scatter(curve.arrivals, [d * 1000 for d in curve.delays],
                         label='%s (%f ms)' % (curve.label, stat.median),
                         color=color_of(index), s=2)
        _finish(figure, axes, os.path.join(out_dir, PLOT_NAMES[3] % (name, image_format)))

        say('Saving per-packet statistics...')
        _write_perpacket_section(handle, stats)
