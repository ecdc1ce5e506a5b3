"""
Integrality-gap instances: C_ij = V_i V_j^H / n^2 for n i.i.d. d x dp Gaussian matrices V_k with
entries N(0, 1/(dp)). For large n and p the relaxation value w_r approaches d/p while the best
group value w_c stays near alpha(d)^2 d/p, so the ratio w_c / w_r approaches alpha(d)^2.

Neither optimum is computable exactly. measure_gap reports a lower bound on w_r (the best of
the relaxation solve and the explicit padded-polar point) and a lower bound on w_c (best rounded
draw polished by local ascent); the ratio is empirical.
"""

import dataclasses
import json
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from .alpha import alpha_reference
from .exceptions import InputError
from .linalg import RngSeed, as_rng_seed, check_field, gaussian_matrix, polar_batch
from .problem import BlockPsdMatrix, StiefelTuple, objective
from .rounding import RoundingConfig, round_best_of
from .solver import SolveConfig, local_ascent_group, solve_relaxation

logger = logging.getLogger(__name__)

# acceptance thresholds stored with every report
RATIO_BAND = (-0.05, 0.10)
PADDED_POLAR_CONSTANT = 3.0
CORRELATION_CONSTANT = 5.0
RATIO_TOL = 1e-7


@dataclass
class GapConfig:
    """
    Parameters of the integrality-gap experiment.


    Parameters
    ----------
    d : int
        block size

    p : int
        the generators V_k have dimensions d x dp

    n : int
        number of blocks

    field : str
        'real' or 'complex' (no thresholds are checked for complex instances)

    seed : RngSeed or int
        trial t uses seed.child(t)

    trials : int
        number of independent instances

    draws : int
        rounding draws per trial before the local ascent polish

    max_sweeps, rel_tol, restarts : int, float, int
        relaxation and ascent solver parameters

    n_jobs : int
        number of trials run in parallel

    verbose : bool
        show a progress bar over trials

    """
    d: int = 1
    p: int = 50
    n: int = 2000
    field: str = 'real'
    seed: RngSeed = dataclasses.field(default_factory=lambda: as_rng_seed(None))
    trials: int = 5
    draws: int = 64
    max_sweeps: int = 300
    rel_tol: float = 1e-6
    restarts: int = 1
    n_jobs: int = 1
    verbose: bool = False

    def __post_init__(self):
        self.seed = as_rng_seed(self.seed)
        check_field(self.field)
        if self.d < 1:
            raise InputError(f'd must be at least 1, got {self.d}.')
        if self.p < 1:
            raise InputError(f'p must be at least 1, got {self.p}.')
        if self.n < 2:
            raise InputError(f'n must be at least 2, got {self.n}.')
        if self.trials < 1 or self.draws < 1:
            raise InputError('trials and draws must be at least 1.')

    def trial_seed(self, trial):
        return self.seed.child(trial)

    def to_dict(self):
        out = dataclasses.asdict(self)
        out['seed'] = self.seed.to_dict()
        return out


@dataclass
class GapTrial:
    """Measurements on one gap instance."""
    trial: int
    w_r: float
    relaxation_value: float
    padded_polar_value: float  # None when p > n
    rounded_value: float
    w_c: float
    ratio: float
    correlation: float
    relaxation_sweeps: int
    relaxation_converged: bool
    relaxation_underconverged: bool


@dataclass
class GapReport:
    """
    Per-trial measurements of measure_gap with their means and standard errors, the alpha(d)^2
    reference the ratio is compared with, the thresholds used and whether they hold.
    """
    config: dict
    trials: list
    alpha_sq: float
    thresholds: dict
    checks: dict
    empirical: bool = True

    @property
    def ratios(self):
        return np.array([trial.ratio for trial in self.trials])

    @property
    def mean_ratio(self):
        return float(np.mean(self.ratios))

    @property
    def ratio_std_error(self):
        ratios = self.ratios
        if ratios.size < 2:
            return 0.0
        return float(np.std(ratios, ddof=1) / np.sqrt(ratios.size))

    def to_frame(self):
        return pd.DataFrame([dataclasses.asdict(trial) for trial in self.trials])

    def to_dict(self):
        out = dataclasses.asdict(self)
        out['mean_ratio'] = self.mean_ratio
        out['ratio_std_error'] = self.ratio_std_error
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def sample_generators(config, seed):
    """The n matrices V_k, array of dimensions n x d x dp."""
    d, p = config.d, config.p
    return gaussian_matrix(d, d * p, 1.0 / (d * p), config.field, seed, size=config.n)


def _instance_from_generators(V):
    n, d, _ = V.shape
    return BlockPsdMatrix.from_factor(V.reshape(n * d, -1) / n, d)


def build_gap_instance(config, trial=0):
    """
    Gap instance of a trial: C = F F^H with block rows F_i = V_i / n, so C_ij = V_i V_j^H / n^2
    and C is PSD by construction.
    """
    V = sample_generators(config, config.trial_seed(trial).child(0))
    return _instance_from_generators(V)


def padded_polar_point(V, m):
    """
    Relaxation point X_i = [P(V_i) 0] of width m >= dp; None if the blocks V_i are wider than
    the relaxation (p > n).
    """
    n, d, width = V.shape
    if width > m:
        return None
    blocks = np.zeros((n, d, m), dtype=V.dtype)
    blocks[:, :, :width] = polar_batch(V)[0]
    return StiefelTuple(blocks)


def _correlation(V, O):
    """||(1/n) sum_i O_i^H V_i||_F^2."""
    mean = np.mean(np.conj(np.swapaxes(O, 1, 2)) @ V, axis=0)
    return float(np.sum(np.abs(mean) ** 2))


def _run_trial(config, trial):
    seed = config.trial_seed(trial)
    V = sample_generators(config, seed.child(0))
    c = _instance_from_generators(V)

    solve_config = SolveConfig(max_sweeps=config.max_sweeps, rel_tol=config.rel_tol,
                               restarts=config.restarts, seed=seed.child(1))
    X, report = solve_relaxation(c, solve_config)

    point = padded_polar_point(V, c.dim)
    if point is None:
        logger.warning(f'trial {trial}: p = {config.p} > n = {config.n}, the padded polar '
                       f'point does not fit the relaxation width.')
        padded_value = None
    else:
        padded_value = objective(c, point)

    rounding = RoundingConfig(target='group', draws=config.draws, seed=seed.child(2))
    ascent = SolveConfig(max_sweeps=config.max_sweeps, rel_tol=config.rel_tol, seed=seed.child(3))
    rounded, rounded_value, _ = round_best_of(X, c, rounding)
    O, ascent_report = local_ascent_group(c, rounded, ascent)
    w_c = ascent_report.objective

    w_r = max(report.objective, w_c, -np.inf if padded_value is None else padded_value)
    underconverged = w_r > report.objective * (1 + RATIO_TOL)
    if underconverged:
        logger.warning(f'trial {trial}: relaxation value {report.objective} is below a known '
                       f'feasible value {w_r}, the solve is under-converged.')

    return GapTrial(trial=trial, w_r=float(w_r), relaxation_value=report.objective,
                    padded_polar_value=padded_value, rounded_value=float(rounded_value),
                    w_c=float(w_c), ratio=float(w_c / w_r) if w_r > 0 else 0.0,
                    correlation=_correlation(V, O.blocks), relaxation_sweeps=report.sweeps,
                    relaxation_converged=report.converged,
                    relaxation_underconverged=bool(underconverged))


def _thresholds(config, alpha_sq):
    d, p = config.d, config.p
    return {'ratio_band': [alpha_sq + RATIO_BAND[0], alpha_sq + RATIO_BAND[1]],
            'ratio_max': 1 + RATIO_TOL,
            'padded_polar_floor': d / p - PADDED_POLAR_CONSTANT / np.sqrt(p),
            'correlation_ceiling': d / p * alpha_sq + CORRELATION_CONSTANT / np.sqrt(p)}


def _checks(trials, thresholds, mean_ratio):
    low, high = thresholds['ratio_band']
    padded = [t.padded_polar_value for t in trials if t.padded_polar_value is not None]
    return {'ratio_in_band': bool(low <= mean_ratio <= high),
            'ratio_below_upper': bool(mean_ratio <= high),
            'ratio_at_most_one': all(0 <= t.ratio <= thresholds['ratio_max'] for t in trials),
            'padded_polar_above_floor': all(v >= thresholds['padded_polar_floor']
                                            for v in padded),
            'correlation_below_ceiling': all(t.correlation <= thresholds['correlation_ceiling']
                                             for t in trials)}


def measure_gap(config=None):
    """
    Run `config.trials` independent gap instances.


    Parameters
    ----------
    config : GapConfig, optional


    Returns
    -------
    report : GapReport
        trials in order of their index, whatever the number of jobs

    """
    config = GapConfig() if config is None else config
    trials = Parallel(n_jobs=config.n_jobs)(
        delayed(_run_trial)(config, t)
        for t in tqdm(range(config.trials), disable=not config.verbose, desc='trials'))

    reference = alpha_reference(config.d, config.field, seed=config.seed.child(config.trials))
    alpha_sq = reference.squared
    thresholds = _thresholds(config, alpha_sq)
    report = GapReport(config=config.to_dict(), trials=list(trials), alpha_sq=alpha_sq,
                       thresholds=thresholds, checks={})
    report.checks = _checks(report.trials, thresholds, report.mean_ratio)
    log = logger.info if config.verbose else logger.debug
    log(f'Gap d = {config.d}, p = {config.p}, n = {config.n}: mean ratio {report.mean_ratio} '
        f'+- {report.ratio_std_error} (alpha^2 = {alpha_sq}).')
    return report
