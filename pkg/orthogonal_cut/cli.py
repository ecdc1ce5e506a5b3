"""
Command-line driver: orthocut {solve, round, alpha, gap, procrustes, replay}.

Exit codes: 0 success, 2 unreadable or malformed input (and usage errors), 3 infeasible or
ill-posed instance, 1 any other error of the package. Every run writes a manifest with the full
argument echo, seeds, version and wall-clock time; `orthocut replay MANIFEST` runs it again.
"""

import argparse
import dataclasses
import json
import logging
import sys
import time
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np
import pandas as pd

from . import __version__
from .alpha import (MP_LIMIT, alpha_chi_1r, alpha_closed_form, alpha_complex_laguerre,
                    alpha_curve, alpha_lower_bounds, alpha_mc, mp_limit, phi_curve,
                    stiefel_lower_bound)
from .exceptions import FeasibilityError, InputError, OrthoCutError, UnsupportedError
from .gap import GapConfig, measure_gap
from .linalg import RngSeed, default_seed
from .problem import (BlockPsdMatrix, _check_compatible, build_procrustes, load_tuple, objective,
                      procrustes_residual, read_point_clouds)
from .rounding import RoundingConfig, round_best_of
from .solver import INITS, SolveConfig, solve_relaxation

logger = logging.getLogger(__name__)

ALPHA_COLUMNS = ['d', 'r', 'field', 'method', 'value', 'se', 'samples', 'seed']
ALPHA_METHODS = ('mc', 'closed', 'laguerre', 'chi', 'bounds', 'mp', 'phi', 'curve')

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARSE = 2
EXIT_INFEASIBLE = 3


class _ParseFailure(Exception):
    """Input could not be read or does not describe a valid object."""


@dataclass
class RunManifest:
    """Record of one run, sufficient to repeat it."""
    subcommand: str
    argv: list
    config: dict
    seed: int
    version: str
    started_at: str
    wall_clock: float = 0.0
    outputs: list = dataclasses.field(default_factory=list)
    exit_code: int = None

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def save(self, path):
        with open(path, 'w') as f:
            f.write(self.to_json())

    @classmethod
    def from_dict(cls, obj):
        if not isinstance(obj, dict) or not isinstance(obj.get('argv'), list):
            raise InputError('A manifest must be a JSON object with the list argv.')
        names = {field.name for field in dataclasses.fields(cls)}
        missing = [name for name in ('subcommand', 'config', 'seed', 'version', 'started_at')
                   if name not in obj]
        if missing:
            raise InputError(f'Manifest is missing {missing}.')
        return cls(**{key: value for key, value in obj.items() if key in names})

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _parse(function, *args, **kwargs):
    try:
        return function(*args, **kwargs)
    except (OSError, json.JSONDecodeError, OrthoCutError) as err:
        raise _ParseFailure(str(err))


def _int_list(text):
    """'3', '1,2,5' or '1-10'."""
    values = []
    try:
        for part in text.split(','):
            start, _, stop = part.partition('-')
            values.extend(range(int(start), int(stop or start) + 1))
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected integers like 3, 1,2,5 or 1-10, got {text!r}')
    return values


def _float_list(text):
    try:
        return [float(part) for part in text.split(',')]
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected comma separated numbers, got {text!r}')


def _write_json(obj, path, manifest):
    text = json.dumps(obj, sort_keys=True, indent=2)
    if path is None:
        print(text)
    else:
        with open(path, 'w') as f:
            f.write(text)
        manifest.outputs.append(path)


def _write_csv(frame, path, manifest):
    if path is None:
        frame.to_csv(sys.stdout, index=False)
    else:
        frame.to_csv(path, index=False)
        manifest.outputs.append(path)


def _solve_config(args, seed):
    return SolveConfig(max_sweeps=args.max_sweeps, rel_tol=args.rel_tol, restarts=args.restarts,
                       init=args.init, seed=seed, random_order=args.random_order,
                       n_jobs=args.jobs, verbose=args.verbose > 0)


def cmd_solve(args, manifest):
    c = _parse(BlockPsdMatrix.load, args.instance)
    config = _parse(_solve_config, args, RngSeed(args.seed))
    manifest.config['solve'] = config.to_dict()

    solution, report = solve_relaxation(c, config)
    if args.out is not None:
        solution.save(args.out)
        manifest.outputs.append(args.out)
    _write_json(report.to_dict(), args.report, manifest)
    return EXIT_OK


def cmd_round(args, manifest):
    x = _parse(load_tuple, args.solution)
    c = _parse(BlockPsdMatrix.load, args.instance)
    _parse(_check_compatible, c, x)
    seed = RngSeed(args.seed)
    config = _parse(RoundingConfig.from_target, args.target, draws=args.draws, seed=seed,
                    n_jobs=args.jobs, verbose=args.verbose > 0)
    polish_config = _parse(SolveConfig, max_sweeps=args.max_sweeps, rel_tol=args.rel_tol,
                           seed=seed.child(1))
    _parse(config.width, x.d)
    manifest.config['rounding'] = config.to_dict()

    c.check_psd()
    relaxation_value = objective(c, x)
    rounded, value, stats = round_best_of(x, c, config, polish=args.polish,
                                          polish_config=polish_config)
    if args.out is not None:
        rounded.save(args.out)
        manifest.outputs.append(args.out)
    _write_json({'value': value, 'relaxation_value': relaxation_value,
                 'ratio': value / relaxation_value if relaxation_value > 0 else None,
                 'mean_ratio': stats.mean / relaxation_value if relaxation_value > 0 else None,
                 'stats': stats.to_dict(), 'config': config.to_dict()}, args.report, manifest)
    return EXIT_OK


def _alpha_rows(args):
    fields = ['real', 'complex'] if args.field == 'both' else [args.field]
    seed = RngSeed(args.seed)
    rows = []
    for field in fields:
        for k, d in enumerate(args.d):
            if args.method == 'mc':
                r = d if args.r is None else args.r
                rows.append(alpha_mc(d, r, field, samples=args.samples, seed=seed.child(k),
                                     n_jobs=args.jobs).to_row())
            elif args.method == 'closed':
                rows.append(alpha_closed_form(d, field).to_row())
            elif args.method == 'laguerre':
                if field != 'complex':
                    raise UnsupportedError('Laguerre quadrature is only available for the '
                                           'complex field.')
                rows.append(alpha_complex_laguerre(d, args.order).to_row())
            elif args.method == 'bounds':
                if args.r is None:
                    value, r = alpha_lower_bounds(d, field), d
                else:
                    value, r = stiefel_lower_bound(d, args.r), args.r
                rows.append({'d': d, 'r': r, 'field': field, 'method': 'lower-bound',
                             'value': value, 'se': 0.0, 'samples': 0, 'seed': None})
    return rows


def cmd_alpha(args, manifest):
    try:
        frame = _alpha_frame(args)
    except InputError as err:
        raise _ParseFailure(str(err))
    _write_csv(frame, args.out, manifest)
    return EXIT_OK


def _alpha_frame(args):
    if args.method == 'phi':
        frame = phi_curve(args.rho)
    elif args.method == 'curve':
        fields = ['real', 'complex'] if args.field == 'both' else [args.field]
        frame = pd.concat([alpha_curve(args.d, field, samples=args.samples,
                                       seed=RngSeed(args.seed).child(k), n_jobs=args.jobs)
                           for k, field in enumerate(fields)], ignore_index=True)
    elif args.method == 'chi':
        widths = args.d if args.r is None else [args.r]
        frame = pd.DataFrame([alpha_chi_1r(r).to_row() for r in widths], columns=ALPHA_COLUMNS)
    elif args.method == 'mp':
        exact, quadrature = mp_limit()
        logger.info(f'8 / (3 pi) = {exact}, quadrature {quadrature}')
        frame = pd.DataFrame([{'d': np.inf, 'r': np.inf, 'field': 'both', 'method': 'mp-limit',
                               'value': quadrature, 'se': abs(quadrature - MP_LIMIT),
                               'samples': 0, 'seed': None}], columns=ALPHA_COLUMNS)
    else:
        frame = pd.DataFrame(_alpha_rows(args), columns=ALPHA_COLUMNS)
    return frame


def cmd_gap(args, manifest):
    config = _parse(GapConfig, d=args.d, p=args.p, n=args.n, field=args.field,
                    seed=RngSeed(args.seed), trials=args.trials, draws=args.draws,
                    max_sweeps=args.max_sweeps, rel_tol=args.rel_tol, n_jobs=args.jobs,
                    verbose=args.verbose > 0)
    manifest.config['gap'] = config.to_dict()
    report = measure_gap(config)
    _write_csv(report.to_frame(), args.out, manifest)
    if args.report is not None:
        _write_json(report.to_dict(), args.report, manifest)
    return EXIT_OK


def cmd_procrustes(args, manifest):
    clouds = _parse(read_point_clouds, args.clouds)
    c = _parse(build_procrustes, clouds)
    seed = RngSeed(args.seed)
    solve_config = _parse(_solve_config, args, seed.child(0))
    rounding = _parse(RoundingConfig, draws=args.draws, seed=seed.child(1), n_jobs=args.jobs)
    polish_config = SolveConfig(max_sweeps=args.max_sweeps, rel_tol=args.rel_tol,
                                seed=seed.child(2))
    manifest.config['solve'] = solve_config.to_dict()
    manifest.config['rounding'] = rounding.to_dict()

    X, report = solve_relaxation(c, solve_config)
    aligned, value, stats = round_best_of(X, c, rounding, polish=args.polish,
                                          polish_config=polish_config)
    scale = 2 * c.n * sum(float(np.sum(A ** 2)) for A in clouds)
    if args.out is not None:
        aligned.save(args.out)
        manifest.outputs.append(args.out)
    _write_json({'relaxation_value': report.objective, 'value': value,
                 'ratio': value / report.objective if report.objective > 0 else None,
                 'mean_ratio': stats.mean / report.objective if report.objective > 0 else None,
                 'residual': procrustes_residual(clouds, aligned),
                 'residual_lower_bound': max(scale - 2 * report.objective, 0.0),
                 'stats': stats.to_dict()}, args.report, manifest)
    return EXIT_OK


def cmd_replay(args, manifest):
    recorded = _parse(RunManifest.load, args.manifest_file)
    logger.info(f'Replaying {recorded.subcommand} run from {recorded.started_at}.')
    return main(recorded.argv)


def _add_solver_flags(parser, max_sweeps=1000, rel_tol=1e-9):
    parser.add_argument('--max-sweeps', type=int, default=max_sweeps,
                        help='maximum number of block-coordinate sweeps')
    parser.add_argument('--rel-tol', type=float, default=rel_tol,
                        help='stop when a sweep improves the objective by less than this')


def build_parser():
    parser = argparse.ArgumentParser(
        prog='orthocut',
        description='Orthogonal-Cut relaxation, Gaussian polar rounding and its constants.')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument('--seed', type=int, default=None,
                        help='random seed (default: $ORTHOCUT_SEED or 0)')
    parser.add_argument('--jobs', type=int, default=1, help='number of parallel jobs')
    parser.add_argument('-v', '--verbose', action='count', default=0,
                        help='log progress (-v) or debug output (-vv) to stderr')
    parser.add_argument('--manifest', default=None,
                        help='manifest path (default: next to the first output file)')
    commands = parser.add_subparsers(dest='command', required=True)

    solve = commands.add_parser('solve', help='solve the relaxation of an instance')
    solve.add_argument('instance', help='instance JSON file')
    solve.add_argument('--out', default=None, help='solution JSON file')
    solve.add_argument('--report', default=None, help='report JSON file (default: stdout)')
    solve.add_argument('--restarts', type=int, default=3)
    solve.add_argument('--init', choices=INITS, default='random')
    solve.add_argument('--random-order', action='store_true',
                       help='visit the blocks in a random order in every sweep')
    _add_solver_flags(solve)
    solve.set_defaults(func=cmd_solve)

    rounding = commands.add_parser('round', help='round a relaxation solution')
    rounding.add_argument('solution', help='relaxation solution JSON file')
    rounding.add_argument('instance', help='instance JSON file')
    rounding.add_argument('--target', default='group', help="'group' or 'stiefel:r'")
    rounding.add_argument('--draws', type=int, default=1, help='number of Gaussian draws')
    rounding.add_argument('--polish', action='store_true',
                          help='run local ascent from the best draw')
    rounding.add_argument('--out', default=None, help='rounded solution JSON file')
    rounding.add_argument('--report', default=None, help='statistics JSON file (default: stdout)')
    _add_solver_flags(rounding)
    rounding.set_defaults(func=cmd_round)

    alpha = commands.add_parser('alpha', help='approximation constants as CSV rows')
    alpha.add_argument('--d', type=_int_list, default=[1, 2, 3],
                       help='matrix sizes, e.g. 3, 1,2,5 or 1-44')
    alpha.add_argument('--r', type=int, default=None, help='Stiefel width (default: r = d)')
    alpha.add_argument('--field', choices=('real', 'complex', 'both'), default='real')
    alpha.add_argument('--method', choices=ALPHA_METHODS, default='mc')
    alpha.add_argument('--samples', type=int, default=10 ** 6)
    alpha.add_argument('--order', type=int, default=None, help='Laguerre quadrature order')
    alpha.add_argument('--rho', type=_float_list, default=[1, 1.5, 2, 3, 5],
                       help='aspect ratios for --method phi')
    alpha.add_argument('--out', default=None, help='CSV file (default: stdout)')
    alpha.set_defaults(func=cmd_alpha)

    gap = commands.add_parser('gap', help='integrality-gap experiment')
    gap.add_argument('--d', type=int, default=1)
    gap.add_argument('--p', type=int, default=50)
    gap.add_argument('--n', type=int, default=2000)
    gap.add_argument('--field', choices=('real', 'complex'), default='real')
    gap.add_argument('--trials', type=int, default=5)
    gap.add_argument('--draws', type=int, default=64)
    gap.add_argument('--out', default=None, help='per-trial CSV file (default: stdout)')
    gap.add_argument('--report', default=None, help='report JSON file')
    _add_solver_flags(gap, max_sweeps=300, rel_tol=1e-6)
    gap.set_defaults(func=cmd_gap)

    procrustes = commands.add_parser('procrustes', help='align point clouds')
    procrustes.add_argument('clouds', help='CSV with columns cloud_id, point_id, x_1, ..., x_d')
    procrustes.add_argument('--draws', type=int, default=16)
    procrustes.add_argument('--polish', action='store_true')
    procrustes.add_argument('--restarts', type=int, default=3)
    procrustes.add_argument('--init', choices=INITS, default='random')
    procrustes.add_argument('--random-order', action='store_true')
    procrustes.add_argument('--out', default=None, help='alignment JSON file')
    procrustes.add_argument('--report', default=None, help='report JSON file (default: stdout)')
    _add_solver_flags(procrustes)
    procrustes.set_defaults(func=cmd_procrustes)

    replay = commands.add_parser('replay', help='run the command recorded in a manifest again')
    replay.add_argument('manifest_file', help='manifest JSON file')
    replay.set_defaults(func=cmd_replay)
    return parser


def _configure_logging(verbosity):
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(stream=sys.stderr, level=level,
                        format='%(levelname)s %(name)s: %(message)s')


def _emit_manifest(manifest, path):
    if path is None and manifest.outputs:
        path = manifest.outputs[0] + '.manifest.json'
    if path is None:
        logger.info(f'Run manifest:\n{manifest.to_json()}')
    else:
        manifest.save(path)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    if args.command == 'replay':
        try:
            return cmd_replay(args, None)
        except _ParseFailure as err:
            logger.error(f'Invalid manifest: {err}')
            return EXIT_PARSE

    manifest = RunManifest(subcommand=args.command, argv=argv,
                           config={key: value for key, value in vars(args).items()
                                   if key != 'func'},
                           seed=args.seed, version=__version__,
                           started_at=datetime.now(timezone.utc).isoformat())
    start = time.perf_counter()
    try:
        if args.seed is None:
            args.seed = _parse(default_seed)
            manifest.seed = manifest.config['seed'] = args.seed
            manifest.argv = ['--seed', str(args.seed)] + argv
        _parse(RngSeed, args.seed)
        code = args.func(args, manifest)
    except _ParseFailure as err:
        logger.error(f'Invalid input: {err}')
        code = EXIT_PARSE
    except (FeasibilityError, InputError) as err:
        logger.error(f'Infeasible or ill-posed instance: {err}')
        code = EXIT_INFEASIBLE
    except OrthoCutError as err:
        logger.error(str(err))
        code = EXIT_ERROR

    manifest.wall_clock = time.perf_counter() - start
    manifest.exit_code = code
    _emit_manifest(manifest, args.manifest)
    return code
