"""
Gaussian rounding of relaxation solutions: one shared Gaussian matrix R (nd x d, or nd x r for
Stiefel targets) per draw, and V_i = P(X_i R) for every block.
"""

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from .exceptions import FeasibilityError, InputError, ShapeError
from .linalg import RngSeed, as_rng_seed, field_of, gaussian_matrix, polar_batch
from .problem import FEASIBILITY_TOL, GroupTuple, _check_compatible, objective_batch
from .solver import SolveConfig, local_ascent_group

logger = logging.getLogger(__name__)

TARGETS = ('group', 'stiefel')


@dataclass
class RoundingConfig:
    """
    Parameters of the rounding.


    Parameters
    ----------
    target : str
        'group' (V_i in O(d) / U(d), R is nd x d with entries N(0, 1/d)) or 'stiefel'
        (V_i in O(d, r), R is nd x r with entries N(0, 1/r))

    r : int, optional
        width of the Stiefel target, r >= d

    draws : int
        number of independent Gaussian matrices (best-of-k)

    seed : RngSeed or int
        draws are generated in chunks of chunk_size, chunk c uses seed.child(c)

    chunk_size : int
        number of draws evaluated together

    n_jobs : int
        number of chunks evaluated in parallel

    verbose : bool
        show a progress bar over chunks

    """
    target: str = 'group'
    r: int = None
    draws: int = 1
    seed: RngSeed = dataclasses.field(default_factory=lambda: as_rng_seed(None))
    chunk_size: int = 256
    n_jobs: int = 1
    verbose: bool = False

    def __post_init__(self):
        self.seed = as_rng_seed(self.seed)
        if self.target not in TARGETS:
            raise InputError(f"target must be 'group' or 'stiefel', got {self.target!r}.")
        if self.target == 'stiefel' and (self.r is None or self.r < 1):
            raise InputError('A Stiefel target needs the width r.')
        if self.draws < 1:
            raise InputError(f'draws must be at least 1, got {self.draws}.')
        if self.chunk_size < 1:
            raise InputError(f'chunk_size must be at least 1, got {self.chunk_size}.')

    @classmethod
    def from_target(cls, target, **kwargs):
        """Parse 'group' or 'stiefel:r'."""
        if target == 'group':
            return cls(target='group', **kwargs)
        kind, _, width = target.partition(':')
        if kind != 'stiefel' or not width.isdigit():
            raise InputError(f"target must be 'group' or 'stiefel:r', got {target!r}.")
        return cls(target='stiefel', r=int(width), **kwargs)

    def width(self, d):
        if self.target == 'group':
            return d
        if self.r < d:
            raise ShapeError(f'Stiefel width r = {self.r} must be at least d = {d}.')
        return self.r

    def to_dict(self):
        out = dataclasses.asdict(self)
        out['seed'] = self.seed.to_dict()
        return out


@dataclass
class DrawStats:
    """Statistics of the objective over the draws of round_best_of."""
    draws: int
    mean: float
    max: float
    std_error: float
    best_draw: int
    polished: float = None
    values: list = None

    def to_dict(self):
        return dataclasses.asdict(self)


def _check_relaxation(x):
    residual = x.residual()
    if residual > FEASIBILITY_TOL:
        raise FeasibilityError(f'Relaxation solution is not feasible: max ||X_i X_i^H - I|| = '
                               f'{residual:.3e}.')


def _round_chunk(blocks, width, seed, count):
    """Rounded tuples for `count` draws, array of dimensions count x n x d x width."""
    m = blocks.shape[-1]
    R = gaussian_matrix(m, width, 1.0 / width, field_of(blocks), seed, size=count)
    V, non_unique = polar_batch(np.matmul(blocks[np.newaxis], R[:, np.newaxis]))
    if np.any(non_unique):
        logger.warning(f'{int(np.count_nonzero(non_unique))} blocks X_i R were rank deficient.')
    return V


def _chunk_sizes(draws, chunk_size):
    return [min(chunk_size, draws - start) for start in range(0, draws, chunk_size)]


def round_once(x, config=None):
    """
    Round a relaxation solution with a single Gaussian draw.


    Parameters
    ----------
    x : StiefelTuple
        feasible relaxation solution, blocks d x m

    config : RoundingConfig, optional
        target and seed (draws is ignored)


    Returns
    -------
    V : GroupTuple
        V_i = P(X_i R), blocks of dimensions d x d (group) or d x r (Stiefel)

    """
    config = RoundingConfig() if config is None else config
    _check_relaxation(x)
    V = _round_chunk(x.blocks, config.width(x.d), config.seed.child(0), 1)
    return GroupTuple(V[0])


def _evaluate_chunk(c, blocks, width, seed, count):
    V = _round_chunk(blocks, width, seed, count)
    values = objective_batch(c, V)
    best = int(np.argmax(values))
    return values, V[best]


def round_best_of(x, c, config=None, polish=False, polish_config=None, keep_values=False):
    """
    Round with `config.draws` independent Gaussian matrices and keep the best tuple.

    The guarantee of the rounding holds for the expectation of a single draw; the maximum over
    draws and the optional local ascent polish only improve on it.


    Parameters
    ----------
    x : StiefelTuple
        feasible relaxation solution

    c : BlockPsdMatrix
        instance the objective is evaluated on

    config : RoundingConfig, optional
        target, number of draws, seed

    polish : bool, optional
        if True, run local_ascent_group from the best draw

    polish_config : SolveConfig, optional
        parameters of the polish

    keep_values : bool, optional
        if True, the objective of every draw is stored in the returned statistics


    Returns
    -------
    V : GroupTuple
        best (optionally polished) rounded tuple

    value : float
        its objective

    stats : DrawStats
        mean, max and standard error of the objective over the draws

    """
    config = RoundingConfig() if config is None else config
    _check_compatible(c, x)
    _check_relaxation(x)
    width = config.width(x.d)

    sizes = _chunk_sizes(config.draws, config.chunk_size)
    chunks = Parallel(n_jobs=config.n_jobs)(
        delayed(_evaluate_chunk)(c, x.blocks, width, config.seed.child(k), size)
        for k, size in tqdm(list(enumerate(sizes)), disable=not config.verbose, desc='draws'))

    values = np.concatenate([chunk[0] for chunk in chunks])
    best = int(np.argmax(values))
    best_tuple = GroupTuple(chunks[best // config.chunk_size][1])
    std_error = float(np.std(values, ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
    stats = DrawStats(draws=int(values.size), mean=float(np.mean(values)),
                      max=float(values[best]), std_error=std_error, best_draw=best,
                      values=values.tolist() if keep_values else None)
    value = stats.max

    if polish:
        polish_config = SolveConfig(seed=config.seed) if polish_config is None else polish_config
        best_tuple, report = local_ascent_group(c, best_tuple, polish_config)
        value = report.objective
        stats.polished = value
    return best_tuple, value, stats


def expected_polar_correlation(M, N, draws=10 ** 5, seed=None, chunk_size=8192):
    """
    Monte-Carlo average of P(M R) (N R)^H over Gaussian R of dimensions m x d with entries
    N(0, 1/d), for M, N of dimensions d x m with orthonormal rows. In expectation this equals
    alpha(d) M N^H; M = N = I gives E[P(G) G^H] = alpha(d) I.


    Returns
    -------
    mean : np.ndarray
        d x d average

    std_error : np.ndarray
        entrywise standard error of the average

    """
    M, N = np.asarray(M), np.asarray(N)
    if M.ndim != 2 or M.shape != N.shape or M.shape[1] < M.shape[0]:
        raise ShapeError(f'M and N must both be d x m with m >= d, got {M.shape} and {N.shape}.')
    d, m = M.shape
    for name, A in (('M', M), ('N', N)):
        if np.max(np.abs(A @ A.conj().T - np.eye(d))) > 1e-8:
            raise FeasibilityError(f'{name} must have orthonormal rows.')
    if draws < 2:
        raise InputError(f'draws must be at least 2, got {draws}.')

    seed = as_rng_seed(seed)
    field = 'complex' if np.iscomplexobj(M) or np.iscomplexobj(N) else 'real'
    total = np.zeros((d, d), dtype=np.complex128 if field == 'complex' else np.float64)
    total_sq = np.zeros((d, d))
    for k, size in enumerate(_chunk_sizes(draws, chunk_size)):
        R = gaussian_matrix(m, d, 1.0 / d, field, seed.child(k), size=size)
        P = polar_batch(M @ R)[0]
        samples = P @ np.conj(np.swapaxes(N @ R, -1, -2))
        total += samples.sum(axis=0)
        total_sq += (np.abs(samples) ** 2).sum(axis=0)
    mean = total / draws
    variance = np.maximum(total_sq / draws - np.abs(mean) ** 2, 0) * draws / (draws - 1)
    return mean, np.sqrt(variance / draws)
