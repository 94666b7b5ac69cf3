import argparse
import logging
import sys

from . import progress
from . import runner
from . import __version__
from .config import Settings, PRESETS, SCHEMES, METHODS
from .errors import FibernetError
from .fibers import BOND_PAIR_MODES
from .models import NETWORK_TYPES
from .network import PAIR_SETS
from typing import Any, Dict, List, Optional, Tuple

# argparse dest -> configuration key it overrides
CONFIG_FLAGS: Dict[str, Tuple[str, str]] = {
    "seed": ("run", "seed"),
    "output": ("run", "output"),
    "type": ("network", "type"),
    "m_fine": ("network", "m_fine"),
    "domain": ("network", "domain_side"),
    "magnitude": ("network", "magnitude"),
    "pairs": ("network", "pairs"),
    "fiber_count": ("network", "fiber_count"),
    "target_nodes": ("network", "target_nodes"),
    "fiber_length": ("network", "fiber_length"),
    "segments": ("network", "segments_per_fiber"),
    "bond_pairs": ("network", "bond_pairs"),
    "scheme": ("coefficients", "scheme"),
    "problem": ("problem", "kind"),
    "method": ("multiscale", "method"),
    "coarse_m": ("multiscale", "m"),
    "loc_factor": ("multiscale", "loc_factor"),
    "log_base": ("multiscale", "log_base"),
    "coarse_sizes": ("study", "coarse_sizes"),
}


def _common_arguments() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument('-v', '--verbose', action='count', default=0,
                        help="Verbosity level (repeat to be more verbose)")
    parser.add_argument('--config', metavar='FILE', help='Configuration file (INI)')
    parser.add_argument('--preset', choices=PRESETS, help='Packaged experiment preset')
    parser.add_argument('--seed', type=int, help='Seed for every random choice')
    parser.add_argument('--threads', type=int,
                        help='Worker threads for corrector solves (default: $FIBERNET_THREADS)')
    parser.add_argument('--output', metavar='DIR', help='Directory for output files')
    parser.add_argument('--quiet-progress', action='store_true', default=False,
                        help='Do not show progress bars')
    return parser


def _network_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--type', choices=NETWORK_TYPES, help='Network type')
    parser.add_argument('--domain', type=float, help='Side length of the square domain')
    parser.add_argument('--magnitude', type=float,
                        help='Perturbation as a fraction of the grid spacing')
    parser.add_argument('--pairs', choices=PAIR_SETS, help='Edge pairs of grid networks')
    parser.add_argument('--fiber-count', type=int, help='Number of fibers')
    parser.add_argument('--target-nodes', type=int,
                        help='Choose the fiber count to reach this many nodes')
    parser.add_argument('--fiber-length', type=float, help='Fiber length')
    parser.add_argument('--segments', type=int, help='Segments per fiber')
    parser.add_argument('--bond-pairs', choices=BOND_PAIR_MODES,
                        help='Edge pairs created at fiber crossings')
    parser.add_argument('--scheme', choices=SCHEMES, help='Coefficient scheme')


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    common = _common_arguments()
    parser = argparse.ArgumentParser(prog='fibernet',
                                     description='Multiscale solver for discrete network models',
                                     allow_abbrev=False)
    parser.add_argument('-version', '--version', action='version',
                        version='%(prog)s {}'.format(__version__))
    commands = parser.add_subparsers(dest='command', metavar='COMMAND')
    commands.required = True

    generate = commands.add_parser('generate', parents=[common], allow_abbrev=False,
                                   help='Generate a network file')
    _network_arguments(generate)
    generate.add_argument('--m', dest='m_fine', type=int,
                          help='Grid cells per side of grid networks')

    solve = commands.add_parser('solve', parents=[common], allow_abbrev=False,
                                help='Solve a boundary value problem on a network')
    _network_arguments(solve)
    solve.add_argument('--m-fine', dest='m_fine', type=int,
                       help='Grid cells per side when generating a grid network')
    solve.add_argument('--network', metavar='FILE', help='Network file (default: generate)')
    solve.add_argument('--method', choices=METHODS, help='Exact or multiscale solve')
    solve.add_argument('--problem', choices=('force', 'displace'), help='Boundary value problem')
    solve.add_argument('--m', dest='coarse_m', type=int, help='Coarse elements per side')
    solve.add_argument('--loc-factor', type=float, help='Localization radius factor')
    solve.add_argument('--log-base', help="Logarithm base of the localization radius ('e')")
    solve.add_argument('--dump-basis', action='store_true', default=False,
                       help='Write the multiscale basis functions')
    solve.add_argument('--export-matrix', action='store_true', default=False,
                       help='Write the stiffness matrix as coordinate text')
    solve.add_argument('--compare', action='store_true', default=False,
                       help='Solve exactly and with the multiscale method and print the errors')

    study = commands.add_parser('study', parents=[common], allow_abbrev=False,
                                help='Run a convergence study')
    _network_arguments(study)
    study.add_argument('--m-fine', dest='m_fine', type=int,
                       help='Grid cells per side of grid networks')
    study.add_argument('--problem', choices=('force', 'displace'), help='Boundary value problem')
    study.add_argument('--coarse-sizes', type=int, nargs='+', metavar='M',
                       help='Coarse elements per side, increasing')
    study.add_argument('--loc-factor', type=float, help='Localization radius factor')
    study.add_argument('--log-base', help="Logarithm base of the localization radius ('e')")

    info = commands.add_parser('info', parents=[common], allow_abbrev=False,
                               help='Print the metadata of a fibernet file')
    info.add_argument('file', metavar='FILE')

    return parser.parse_args(argv)


def config_overrides(args: argparse.Namespace) -> Dict[Tuple[str, str], Any]:
    return {key: getattr(args, dest) for dest, key in CONFIG_FLAGS.items()
            if getattr(args, dest, None) is not None}


def main(argv: Optional[List[str]] = None) -> None:
    args = parse_arguments(argv)

    log_level = logging.ERROR
    if args.verbose == 1:
        log_level = logging.WARNING
    elif args.verbose == 2:
        log_level = logging.INFO
    elif args.verbose >= 3:
        log_level = logging.DEBUG
    logging.basicConfig(level=log_level, format='%(asctime)s:%(levelname)s:%(message)s',
                        datefmt='%Y-%m-%d %H:%M:%S')

    logging.debug("Parsed arguments: {}".format(args))

    try:
        settings = Settings(preset=args.preset, config_file=args.config,
                            overrides=config_overrides(args))
        progress.set_enabled(settings.progress and not args.quiet_progress)
        returncode = runner.FibernetRun(settings, config=args).run()
    except FibernetError as err:
        if args.verbose >= 3:
            logging.exception("Command failed")
        print("fibernet: error: {}".format(err), file=sys.stderr)
        returncode = err.exit_code
    except (ValueError, OSError) as err:
        if args.verbose >= 3:
            logging.exception("Command failed")
        print("fibernet: error: {}".format(err), file=sys.stderr)
        returncode = 2
    sys.exit(returncode)
