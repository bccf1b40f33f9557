"""Command-line interface: run, analyze, plot, and clean subcommands."""

import argparse
import os
import sys
import time

from .analysis import AnalysisError, analyze_experiment
from .config import (ConfigError, Duration, METADATA_FILE, RunParams,
                     default_layout, expand_flows, load_metadata, parse_layout,
                     replace_params, save_metadata, sorted_groups,
                     validate_groups, validate_params)
from .emulator import build_topology, generate_delay_schedule, run
from .pcap import DirectoryCaptureSink
from .reporting import (DEFAULT_INTERVAL, ReportError, build_curves,
                        emit_reports, load_flow_data, type_name)

CLEAN_EXTENSIONS = ('.pcap', '.json', '.svg', '.png', '.log')


def _fail(message):
    print(message, file=sys.stderr)
    return 1


def _add_run_parser(subparsers):
    parser = subparsers.add_parser(
        'run', help='emulate an experiment and record capture files',
        description='Emulates the dumbbell experiment described by the layout '
                    'file, recording one sender and one receiver capture per '
                    'flow plus a metadata file for exact reproduction. '
                    'Durations accept us/ms/s suffixes; a bare number is '
                    'milliseconds.')
    parser.add_argument('base', nargs='?', help='base delay of the central link')
    parser.add_argument('delta', nargs='?',
                        help='period between delay changes (at least 10ms)')
    parser.add_argument('step', nargs='?',
                        help='delay change applied every delta')
    parser.add_argument('jitter', nargs='?', default=None,
                        help='delay jitter of the central link, default none')
    parser.add_argument('-d', '--dir', default=None,
                        help='output directory for dumps, default "dumps"')
    parser.add_argument('-l', '--layout', default='layout.yml',
                        help='path of the layout file, default "layout.yml"')
    parser.add_argument('-r', '--rate', type=float, default=100.0,
                        help='rate of the central link in Mbit/s, default 100')
    parser.add_argument('-t', '--runtime', type=int, default=30,
                        help='runtime in seconds (1 to 60), default 30')
    parser.add_argument('-m', '--max-delay', type=int, default=100000000,
                        help='maximum delay of the variable schedule in '
                             'microseconds, default 100000000')
    parser.add_argument('-s', '--seed', type=int, default=None,
                        help='RNG seed, default is the current UNIX time')
    parser.add_argument('-b', '--buffer', type=int, default=None,
                        help='capture buffer size; accepted for compatibility '
                             'and ignored')
    parser.add_argument('-q1', type=int, default=None,
                        help='queue size of the left central link end, default 1000')
    parser.add_argument('-q2', type=int, default=None,
                        help='queue size of the right central link end, default 1000')
    parser.add_argument('-q', type=int, default=None,
                        help='same as -q1 N -q2 N')
    parser.add_argument('--from-metadata', default=None, metavar='FILE',
                        help='rerun the experiment recorded in a metadata file')
    parser.set_defaults(handler=cmd_run)


def _add_analyze_parser(subparsers):
    parser = subparsers.add_parser(
        'analyze', help='extract per-flow data logs from capture files',
        description='Matches each flow\'s sender and receiver captures '
                    'packet by packet and writes one data log per flow.')
    parser.add_argument('-d', '--dir', default='dumps',
                        help='folder with input capture files, default "dumps"')
    parser.add_argument('-o', '--output-dir', default=os.path.join('graphs', 'data'),
                        help='folder for output data logs, default "graphs/data"')
    parser.set_defaults(handler=cmd_analyze)


def _add_plot_parser(subparsers):
    parser = subparsers.add_parser(
        'plot', help='make graphs and statistics over extracted data logs',
        description='Makes graphs and stats over the extracted data logs. '
                    'For every chosen type the following are generated: '
                    'average throughput, average Jain\'s index, average '
                    'one-way delay, per-packet one-way delay, and a two-part '
                    'statistics file.')
    parser.add_argument('-d', '--dir', default=os.path.join('graphs', 'data'),
                        help='folder with input data logs, default "graphs/data"')
    parser.add_argument('-o', '--output-dir', default='graphs',
                        help='folder for output graphs and stats, default "graphs"')
    parser.add_argument('-f', '--per-flow', action='store_true',
                        help='each graph has a separate curve per flow')
    parser.add_argument('-t', '--total', action='store_true',
                        help='each graph has one curve for all flows together')
    parser.add_argument('-s', '--per-subset', action='append', metavar='"FIELD1 FIELD2..."',
                        help='each graph has one curve per subset of flows '
                             'sharing the chosen layout fields (allowed: '
                             'scheme, direction)')
    parser.add_argument('-i', '--interval', type=float, default=DEFAULT_INTERVAL,
                        help='aggregation interval of average graphs in '
                             'seconds, default 0.5')
    parser.add_argument('-c', '--colors', default=None, metavar='"COLOR1 COLOR2..."',
                        help='color cycle for curves, any matplotlib format')
    parser.add_argument('-j', '--jains-index-color', default=None, metavar='COLOR',
                        help='color of the Jain\'s index curve, default is '
                             'the first cycle color')
    parser.set_defaults(handler=cmd_plot)


def _add_clean_parser(subparsers):
    parser = subparsers.add_parser(
        'clean', help='delete generated capture, data, and graph files',
        description='Cleans the three output directories, deleting only '
                    'pcap/json/svg/png/log files and never touching '
                    'subdirectories. A directory left completely empty is '
                    'removed as well.')
    parser.add_argument('-a', '--all', action='store_true',
                        help='clean all three directories, same as -pdg')
    parser.add_argument('-p', '--pcap', '--pcaps', action='store_true', dest='pcaps',
                        help='clean the directory with capture files')
    parser.add_argument('-d', '--data', action='store_true',
                        help='clean the directory with data logs')
    parser.add_argument('-g', '--graph', '--graphs', action='store_true', dest='graphs',
                        help='clean the directory with graphs and stats')
    parser.add_argument('-s', '--sender', '--senders', action='store_true', dest='senders',
                        help='among chosen files, delete those belonging '
                             'exclusively to senders')
    parser.add_argument('-r', '--receiver', '--receivers', action='store_true', dest='receivers',
                        help='among chosen files, delete those belonging '
                             'exclusively to receivers')
    parser.add_argument('-m', '--mutual', action='store_true',
                        help='among chosen files, delete those common for '
                             'senders and receivers')
    parser.add_argument('-f1', '--folder1', default='dumps',
                        help='directory with capture files, default "dumps"')
    parser.add_argument('-f2', '--folder2', default=os.path.join('graphs', 'data'),
                        help='directory with data logs, default "graphs/data"')
    parser.add_argument('-f3', '--folder3', default='graphs',
                        help='directory with graphs, default "graphs"')
    parser.set_defaults(handler=cmd_clean)


def _parse_duration(name, text):
    try:
        return Duration.parse(text)
    except ConfigError as error:
        raise ConfigError('%s: %s' % (name, error)) from None


def cmd_run(args):
    try:
        if args.from_metadata:
            if args.base is not None:
                return _fail('--from-metadata replaces the positional arguments')
            params, groups = load_metadata(args.from_metadata)
            if args.dir is not None:
                params = replace_params(params, dir=args.dir)
        else:
            if args.base is None or args.delta is None or args.step is None:
                return _fail('base, delta and step arguments are required '
                             '(or use --from-metadata)')
            queue1 = args.q1 if args.q1 is not None else (args.q if args.q is not None else 1000)
            queue2 = args.q2 if args.q2 is not None else (args.q if args.q is not None else 1000)
            seed_kwargs = {} if args.seed is None else {'seed': args.seed}
            params = RunParams(
                base=_parse_duration('base', args.base),
                delta=_parse_duration('delta', args.delta),
                step=_parse_duration('step', args.step),
                jitter=_parse_duration('jitter', args.jitter) if args.jitter else Duration(0),
                runtime=args.runtime,
                rate=args.rate,
                max_delay=Duration(args.max_delay * 1000),
                q1=queue1, q2=queue2,
                dir=args.dir if args.dir is not None else 'dumps',
                **seed_kwargs)
            validate_params(params)
            if not os.path.exists(args.layout):
                print('Layout file %s was not found, generating the default one' %
                      args.layout)
                with open(args.layout, 'w') as handle:
                    handle.write(default_layout(params.runtime))
            with open(args.layout) as handle:
                groups = parse_layout(handle.read())
        validate_params(params)
        validate_groups(groups, params)
    except (ConfigError, OSError) as error:
        return _fail(str(error))

    if args.buffer is not None:
        print('Warning: -b/--buffer has no effect here, captures are '
              'written directly to disk')

    groups = sorted_groups(groups)
    os.makedirs(params.dir, exist_ok=True)
    save_metadata(params, groups, os.path.join(params.dir, METADATA_FILE))

    print('Testing:')
    print('Total number of flows is %d' % len(expand_flows(groups)))
    print('Flows have been sorted by their start')
    print('Creating the dumbbell topology...')
    topology = build_topology(params, groups)
    print("Setting rates, delays and queue sizes at the topology's interfaces...")
    schedule = generate_delay_schedule(params)
    print('Starting capture recordings at hosts...')
    sink = DirectoryCaptureSink(params.dir)
    print('Starting servers...')
    print('Starting clients and optionally varying delay...')
    run(topology, schedule, params, capture_sink=sink)
    print('Cleaning up the topology...')
    print('SUCCESS')
    print('Done.')
    return 0


def cmd_analyze(args):
    pending = False

    def progress(fraction, elapsed):
        nonlocal pending
        pending = True
        minutes, seconds = divmod(int(elapsed), 60)
        sys.stdout.write('\r%3d %% passed, elapsed: %02d:%02d' %
                         (int(fraction * 100), minutes, seconds))
        sys.stdout.flush()

    def log(message):
        nonlocal pending
        if pending:
            sys.stdout.write('\n')
            pending = False
        print(message)

    try:
        analyze_experiment(args.dir, args.output_dir, log=log, progress=progress)
    except (AnalysisError, ConfigError, OSError) as error:
        if pending:
            print()
        return _fail(str(error))
    if pending:
        print()
    return 0


def cmd_plot(args):
    selected = []
    if args.per_flow:
        selected.append(('per-flow', None))
    if args.total:
        selected.append(('total', None))
    for fields_text in args.per_subset or ():
        fields = fields_text.split()
        if not fields:
            return _fail('-s needs at least one field, e.g. -s "scheme"')
        selected.append(('per-subset', fields))
    if not selected:
        return _fail('choose at least one type of graphs: -f, -t or -s')
    if args.interval <= 0:
        return _fail('the aggregation interval must be positive')

    colors = args.colors.split() if args.colors else None
    try:
        flows = load_flow_data(args.dir)
        for kind, fields in selected:
            print('Loading data of the curves to make average plots and stats...')
            curves = build_curves(flows, kind, fields)
            emit_reports(curves, args.interval, args.output_dir,
                         type_name(kind, fields), colors=colors,
                         jain_color=args.jains_index_color, log=print)
    except (ReportError, AnalysisError, ConfigError, OSError) as error:
        return _fail(str(error))
    print('SUCCESS')
    return 0


def _clean_role(name):
    if name.endswith('-sender.pcap'):
        return 'sender'
    if name.endswith('-receiver.pcap'):
        return 'receiver'
    return 'mutual'


def cmd_clean(args):
    locations = []
    if args.all or args.pcaps:
        locations.append(args.folder1)
    if args.all or args.data:
        locations.append(args.folder2)
    if args.all or args.graphs:
        locations.append(args.folder3)
    roles = set()
    if args.senders:
        roles.add('sender')
    if args.receivers:
        roles.add('receiver')
    if args.mutual:
        roles.add('mutual')
    if not roles:
        roles = {'sender', 'receiver', 'mutual'}

    for directory in locations:
        if not os.path.isdir(directory):
            continue
        for name in sorted(os.listdir(directory)):
            path = os.path.join(directory, name)
            if not os.path.isfile(path):
                continue
            if os.path.splitext(name)[1] not in CLEAN_EXTENSIONS:
                continue
            if _clean_role(name) in roles:
                os.remove(path)
        if not os.listdir(directory):
            os.rmdir(directory)
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog='dumbbell',
        description='Deterministic dumbbell-topology congestion control '
                    'testbed: emulate flows, analyze the recorded captures, '
                    'plot the results.')
    subparsers = parser.add_subparsers(dest='command', required=True)
    _add_run_parser(subparsers)
    _add_analyze_parser(subparsers)
    _add_plot_parser(subparsers)
    _add_clean_parser(subparsers)
    args = parser.parse_args(argv)
    return args.handler(args)


if __name__ == '__main__':
    sys.exit(main())
