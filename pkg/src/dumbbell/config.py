"""Experiment configuration: durations, flow layout, run parameters, metadata.

The layout file is a restricted YAML document: a sequence of flat mappings
whose values are all scalars.  Each mapping describes one group of identical
flows crossing the dumbbell topology.
"""

import dataclasses
import json
import re
import time
from dataclasses import dataclass, field
from decimal import Decimal, ROUND_HALF_EVEN

import yaml

RIGHTWARD = '->'
LEFTWARD = '<-'
DIRECTIONS = (RIGHTWARD, LEFTWARD)

DEFAULT_QUEUE_SIZE = 1000
DEFAULT_RATE_MBITS = 100.0
DEFAULT_RUNTIME_SEC = 30
MIN_RUNTIME_SEC = 1
MAX_RUNTIME_SEC = 60
MAX_TOTAL_FLOWS = 100

NS_PER_US = 10 ** 3
NS_PER_MS = 10 ** 6
NS_PER_SEC = 10 ** 9

# Durations below this delta would make the runtime thread's install pacing
# meaningless, so they are rejected up front.
MIN_DELTA_NS = 10 * NS_PER_MS

_DURATION_RE = re.compile(r'\s*([+-]?[0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?)\s*(us|ms|s)?\s*')

_UNIT_SCALE_NS = {'us': NS_PER_US, 'ms': NS_PER_MS, 's': NS_PER_SEC}

LAYOUT_KEYS = ('direction', 'flows', 'left-delay', 'left-queues', 'left-rate',
               'right-delay', 'right-queues', 'right-rate', 'scheme', 'start')


class ConfigError(ValueError):
    """Raised for malformed layout documents, durations or parameters."""


@dataclass(frozen=True, order=True)
class Duration:
    """A time span stored canonically as integer nanoseconds."""

    ns: int

    @classmethod
    def parse(cls, text):
        """Parse '5', '5us', '2.5ms', '1s' (bare numbers are milliseconds)."""
        if isinstance(text, Duration):
            return text
        if isinstance(text, bool):
            raise ConfigError('malformed duration: %r' % (text,))
        if isinstance(text, (int, float)):
            text = str(text)
        if not isinstance(text, str):
            raise ConfigError('malformed duration: %r' % (text,))
        match = _DURATION_RE.fullmatch(text)
        if match is None:
            raise ConfigError('malformed duration: %r' % (text,))
        number, unit = match.groups()
        scale = _UNIT_SCALE_NS[unit] if unit else NS_PER_MS
        ns = (Decimal(number) * scale).to_integral_value(rounding=ROUND_HALF_EVEN)
        if ns < 0:
            raise ConfigError('negative duration: %r' % (text,))
        return cls(int(ns))

    def format(self):
        """Render with the largest unit that keeps the value exact."""
        if self.ns % NS_PER_SEC == 0:
            return '%ds' % (self.ns // NS_PER_SEC)
        if self.ns % NS_PER_MS == 0:
            return '%dms' % (self.ns // NS_PER_MS)
        if self.ns % NS_PER_US == 0:
            return '%dus' % (self.ns // NS_PER_US)
        return '%sus' % (Decimal(self.ns) / NS_PER_US).normalize()

    @property
    def seconds(self):
        return self.ns / NS_PER_SEC

    @property
    def us(self):
        return self.ns / NS_PER_US

    def __bool__(self):
        return self.ns != 0


ZERO = Duration(0)


@dataclass
class FlowGroup:
    """One layout entry: a group of identical flows."""

    scheme: str
    direction: str
    flows: int
    start: int
    left_delay: Duration = ZERO
    left_rate: float = 0.0
    left_queues: int = DEFAULT_QUEUE_SIZE
    right_delay: Duration = ZERO
    right_rate: float = 0.0
    right_queues: int = DEFAULT_QUEUE_SIZE


def _current_unix_time():
    return int(time.time())


@dataclass
class RunParams:
    """Parameters of one emulation run."""

    base: Duration = ZERO
    delta: Duration = Duration(NS_PER_SEC)
    step: Duration = ZERO
    jitter: Duration = ZERO
    runtime: int = DEFAULT_RUNTIME_SEC
    rate: float = DEFAULT_RATE_MBITS
    max_delay: Duration = Duration(100 * NS_PER_SEC)
    seed: int = field(default_factory=_current_unix_time)
    q1: int = DEFAULT_QUEUE_SIZE
    q2: int = DEFAULT_QUEUE_SIZE
    dir: str = 'dumps'

    @property
    def runtime_ns(self):
        return self.runtime * NS_PER_SEC


def _require(condition, message):
    if not condition:
        raise ConfigError(message)


def validate_params(params):
    """Reject parameter combinations the emulator cannot honour."""
    _require(isinstance(params.runtime, int) and not isinstance(params.runtime, bool),
             'runtime must be an integer number of seconds')
    _require(MIN_RUNTIME_SEC <= params.runtime <= MAX_RUNTIME_SEC,
             'runtime must be within [%d, %d] seconds' % (MIN_RUNTIME_SEC, MAX_RUNTIME_SEC))
    _require(params.delta.ns >= MIN_DELTA_NS,
             'delta must be at least %dms' % (MIN_DELTA_NS // NS_PER_MS))
    _require(params.base.ns <= params.max_delay.ns, 'base delay exceeds max delay')
    _require(params.step.ns <= params.max_delay.ns, 'step exceeds max delay')
    _require(params.rate >= 0, 'rate must be non-negative')
    _require(params.q1 >= 1 and params.q2 >= 1, 'queue sizes must be positive')
    _require(0 <= params.seed < 2 ** 64, 'seed must fit an unsigned 64-bit integer')


def validate_groups(groups, params):
    """Check flow groups against run parameters."""
    total = 0
    for index, group in enumerate(groups):
        where = 'flow group %d' % (index + 1)
        _require(group.start < params.runtime,
                 '%s: start second %d is not before the runtime %d'
                 % (where, group.start, params.runtime))
        for side, delay in (('left', group.left_delay), ('right', group.right_delay)):
            _require(delay.ns <= params.max_delay.ns,
                     '%s: %s-delay exceeds max delay' % (where, side))
        total += group.flows
    _require(0 < total <= MAX_TOTAL_FLOWS,
             'total flow count must be within [1, %d]' % MAX_TOTAL_FLOWS)


def _known_schemes():
    from . import schemes
    return schemes.registry()


def _parse_entry(index, entry):
    where = 'flow group %d' % (index + 1)
    if not isinstance(entry, dict):
        raise ConfigError('%s: expected a mapping of scalar fields' % where)
    for key, value in entry.items():
        if key not in LAYOUT_KEYS:
            raise ConfigError('%s: unknown key %r' % (where, key))
        if isinstance(value, (dict, list)):
            raise ConfigError('%s: key %r must hold a scalar value' % (where, key))

    def get(key, default=None):
        value = entry.get(key)
        return default if value is None else value

    scheme = get('scheme')
    if not isinstance(scheme, str) or scheme not in _known_schemes():
        raise ConfigError('%s: unknown scheme %r' % (where, scheme))
    direction = get('direction')
    if direction not in DIRECTIONS:
        raise ConfigError('%s: direction must be %r or %r' % (where, RIGHTWARD, LEFTWARD))
    flows = get('flows')
    if not isinstance(flows, int) or isinstance(flows, bool) or flows < 1:
        raise ConfigError('%s: flow count must be a positive integer' % where)
    start = get('start')
    if not isinstance(start, int) or isinstance(start, bool) or start < 0:
        raise ConfigError('%s: start must be a non-negative integer second' % where)

    def duration_of(key):
        try:
            return Duration.parse(get(key, 0))
        except ConfigError as error:
            raise ConfigError('%s: %s' % (where, error)) from None

    def rate_of(key):
        value = get(key, 0.0)
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value < 0:
            raise ConfigError('%s: %s must be a non-negative number of Mbit/s' % (where, key))
        return float(value)

    def queues_of(key):
        value = get(key, DEFAULT_QUEUE_SIZE)
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            raise ConfigError('%s: %s must be a positive integer' % (where, key))
        return value

    return FlowGroup(scheme=scheme, direction=direction, flows=flows, start=start,
                     left_delay=duration_of('left-delay'),
                     left_rate=rate_of('left-rate'),
                     left_queues=queues_of('left-queues'),
                     right_delay=duration_of('right-delay'),
                     right_rate=rate_of('right-rate'),
                     right_queues=queues_of('right-queues'))


def parse_layout(text):
    """Parse a layout document into a list of FlowGroup entries."""
    try:
        document = yaml.safe_load(text)
    except yaml.YAMLError as error:
        raise ConfigError('layout is not valid YAML: %s' % error) from None
    if document is None:
        raise ConfigError('layout document is empty')
    if not isinstance(document, list):
        raise ConfigError('layout must be a sequence of flow groups')
    return [_parse_entry(index, entry) for index, entry in enumerate(document)]


DEFAULT_LAYOUT_TEMPLATE = """\
# Delays and rates are optional: if lacking or set to null, they are
# treated as zero, and zero delay/rate simply leaves the link unshaped.
# Queue sizes are optional: if lacking or set to null, they are set to %(queues)d.
- direction: %(direction)s
  flows: 2
  left-delay: null
  left-queues: null
  left-rate: null
  right-delay: null
  right-queues: null
  right-rate: null
  scheme: cubic
  start: 0
- direction: %(direction)s
  flows: 2
  left-delay: null
  left-queues: null
  left-rate: null
  right-delay: null
  right-queues: null
  right-rate: null
  scheme: vegas
  start: %(half)d
"""


def default_layout(runtime):
    """Produce the default layout document for the given runtime."""
    return DEFAULT_LAYOUT_TEMPLATE % {'queues': DEFAULT_QUEUE_SIZE,
                                      'direction': RIGHTWARD,
                                      'half': runtime // 2}


def sorted_groups(groups):
    """Stable-sort groups by start second; file order breaks ties."""
    return sorted(groups, key=lambda group: group.start)


def expand_flows(groups):
    """Expand sorted groups into per-flow (scheme, direction, group) triples."""
    flows = []
    for group in sorted_groups(groups):
        flows.extend((group.scheme, group.direction, group) for _ in range(group.flows))
    return flows


METADATA_FILE = 'metadata.json'
METADATA_VERSION = 1


def _group_to_dict(group):
    return {
        'direction': group.direction,
        'flows': group.flows,
        'left-delay': group.left_delay.format(),
        'left-queues': group.left_queues,
        'left-rate': group.left_rate,
        'right-delay': group.right_delay.format(),
        'right-queues': group.right_queues,
        'right-rate': group.right_rate,
        'scheme': group.scheme,
        'start': group.start,
    }


def _group_from_dict(data):
    return FlowGroup(scheme=data['scheme'], direction=data['direction'],
                     flows=data['flows'], start=data['start'],
                     left_delay=Duration.parse(data['left-delay']),
                     left_rate=float(data['left-rate']),
                     left_queues=data['left-queues'],
                     right_delay=Duration.parse(data['right-delay']),
                     right_rate=float(data['right-rate']),
                     right_queues=data['right-queues'])


def save_metadata(params, groups, path):
    """Write run parameters and defaulted, sorted flow groups as JSON."""
    payload = {
        'format_version': METADATA_VERSION,
        'base': params.base.format(),
        'delta': params.delta.format(),
        'step': params.step.format(),
        'jitter': params.jitter.format(),
        'runtime': params.runtime,
        'rate': params.rate,
        'max_delay': params.max_delay.format(),
        'seed': params.seed,
        'q1': params.q1,
        'q2': params.q2,
        'dir': params.dir,
        'flows': [_group_to_dict(group) for group in sorted_groups(groups)],
    }
    with open(path, 'w') as sink:
        json.dump(payload, sink, indent=4)
        sink.write('\n')


def load_metadata(path):
    """Read metadata back into (RunParams, groups)."""
    with open(path) as source:
        payload = json.load(source)
    version = payload.get('format_version')
    if version != METADATA_VERSION:
        raise ConfigError('unsupported metadata format version: %r' % (version,))
    params = RunParams(base=Duration.parse(payload['base']),
                       delta=Duration.parse(payload['delta']),
                       step=Duration.parse(payload['step']),
                       jitter=Duration.parse(payload['jitter']),
                       runtime=payload['runtime'],
                       rate=float(payload['rate']),
                       max_delay=Duration.parse(payload['max_delay']),
                       seed=payload['seed'],
                       q1=payload['q1'],
                       q2=payload['q2'],
                       dir=payload.get('dir', 'dumps'))
    groups = [_group_from_dict(data) for data in payload['flows']]
    return params, groups


def replace_params(params, **changes):
    """Return a copy of params with the given fields replaced."""
    return dataclasses.replace(params, **changes)
