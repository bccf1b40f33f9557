"""Deterministic dumbbell-topology congestion control testbed.

Emulates point-to-point flows over a shared central link with a
configurable delay schedule, records per-flow packet captures, extracts
per-packet logs from them, and renders throughput / delay / fairness
graphs plus statistics files.
"""

from .config import (ConfigError, Duration, FlowGroup, RunParams,
                     load_metadata, parse_layout, save_metadata)
from .emulator import (RunReport, build_topology, generate_delay_schedule,
                       run)
from .analysis import AnalysisError, analyze_experiment
from .reporting import ReportError, build_curves, emit_reports, jains_index

__version__ = '0.1.0'

__all__ = [
    'AnalysisError',
    'ConfigError',
    'Duration',
    'FlowGroup',
    'ReportError',
    'RunParams',
    'RunReport',
    'analyze_experiment',
    'build_curves',
    'build_topology',
    'emit_reports',
    'generate_delay_schedule',
    'jains_index',
    'load_metadata',
    'parse_layout',
    'run',
    'save_metadata',
    '__version__',
]
