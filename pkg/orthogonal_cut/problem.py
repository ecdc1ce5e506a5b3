"""
Problem instances of the little Grothendieck problem: block PSD coefficient matrices, feasible
tuples over the orthogonal/unitary group and the Stiefel manifold, objective evaluation,
instance builders and a brute-force oracle for tiny instances.
"""

import itertools
import json
import logging

import numpy as np
import pandas as pd

from .exceptions import CapacityError, FeasibilityError, InputError, ShapeError
from .linalg import (HERMITIAN_TOL, as_rng_seed, check_field, field_of, gaussian_matrix, is_psd,
                     random_stiefel, stiefel_residual)

logger = logging.getLogger(__name__)

PSD_TOL = 1e-8
FEASIBILITY_TOL = 1e-6
IMAG_TOL = 1e-8

# largest number of candidate points the exhaustive d = 1 searches enumerate
MAX_ENUMERATION = 2 ** 20


class BlockPsdMatrix:
    """
    Hermitian positive semidefinite matrix C of dimensions dn x dn, partitioned into n x n
    blocks C_ij of size d x d.

    If C was built as a Gram matrix C = F F^H, the factor F (dn x k) is kept in `factor`; objective
    evaluation and the solvers use it when k < dn.


    Parameters
    ----------
    data : np.ndarray
        Hermitian matrix of dimensions dn x dn

    d : int
        block size

    check : bool, optional
        if True, C is checked to be PSD up to PSD_TOL (relative to its largest entry). Use
        BlockPsdMatrix.unsafe to skip the check.

    """

    def __init__(self, data, d, check=True, factor=None):
        data = np.asarray(data)
        if data.ndim != 2 or data.shape[0] != data.shape[1]:
            raise ShapeError(f'C must be a square matrix, got shape {data.shape}.')
        if d < 1 or data.shape[0] % d != 0 or data.shape[0] == 0:
            raise ShapeError(f'C must have dimensions dn x dn with block size d = {d}, '
                             f'got {data.shape[0]} x {data.shape[1]}.')
        if not np.all(np.isfinite(data)):
            raise InputError('C must only contain finite entries.')
        if not np.iscomplexobj(data):
            data = data.astype(np.float64)

        scale = max(1.0, float(np.max(np.abs(data))))
        if np.max(np.abs(data - data.conj().T)) > HERMITIAN_TOL * scale:
            raise InputError('C must be Hermitian.')

        self.data = (data + data.conj().T) / 2
        self.d = int(d)
        self.n = data.shape[0] // self.d
        self.field = field_of(data)
        self.factor = factor
        self.psd = None
        self.lambda_min = None

        if factor is not None:
            self.psd = True
        elif check:
            self.check_psd()

    @classmethod
    def unsafe(cls, data, d):
        """Build without the PSD check (the solver checks before solving)."""
        return cls(data, d, check=False)

    @classmethod
    def from_factor(cls, factor, d):
        """C = F F^H for a factor F of dimensions dn x k; PSD by construction."""
        factor = np.asarray(factor)
        if factor.ndim != 2:
            raise ShapeError(f'factor must be a matrix, got shape {factor.shape}.')
        if not np.iscomplexobj(factor):
            factor = factor.astype(np.float64)
        return cls(factor @ factor.conj().T, d, check=False, factor=factor)

    @classmethod
    def from_blocks(cls, blocks, check=True):
        """Assemble C from an array of blocks of dimensions n x n x d x d."""
        blocks = np.asarray(blocks)
        if blocks.ndim != 4 or blocks.shape[0] != blocks.shape[1] or \
                blocks.shape[2] != blocks.shape[3]:
            raise ShapeError(f'blocks must have dimensions n x n x d x d, got {blocks.shape}.')
        n, _, d, _ = blocks.shape
        data = np.moveaxis(blocks, 2, 1).reshape(n * d, n * d)
        return cls(data, d, check=check)

    def check_psd(self):
        scale = max(1.0, float(np.max(np.abs(self.data))))
        self.psd, self.lambda_min = is_psd(self.data, tol=PSD_TOL * scale)
        if not self.psd:
            raise InputError(f'C must be positive semidefinite '
                             f'(smallest eigenvalue {self.lambda_min:.3e}).')
        return self.lambda_min

    @property
    def dim(self):
        return self.n * self.d

    def block(self, i, j):
        d = self.d
        return self.data[i * d:(i + 1) * d, j * d:(j + 1) * d]

    def blocks(self):
        """Array of dimensions n x n x d x d with blocks[i, j] = C_ij."""
        n, d = self.n, self.d
        return np.moveaxis(self.data.reshape(n, d, n, d), 1, 2)

    def diagonal_blocks(self):
        idx = np.arange(self.n)
        return self.blocks()[idx, idx]

    def uses_factor(self):
        return self.factor is not None and self.factor.shape[1] < self.dim

    def to_dict(self):
        blocks = self.blocks()
        out = []
        for i in range(self.n):
            for j in range(self.n):
                out.append([[[float(z.real), float(z.imag)] for z in row] for row in blocks[i, j]])
        return {'blocks': out, 'd': self.d, 'field': self.field, 'n': self.n}

    @classmethod
    def from_dict(cls, obj, check=False):
        """
        Parse the instance JSON object {field, d, n, blocks}. Blocks are listed row-major, each
        entry as [re, im].
        """
        try:
            field = check_field(obj['field'])
            d, n = int(obj['d']), int(obj['n'])
            raw = np.asarray(obj['blocks'], dtype=np.float64)
        except KeyError as err:
            raise ShapeError(f'Instance is missing the field {err}.')
        except (TypeError, ValueError):
            raise ShapeError('Instance blocks must be nested lists of [re, im] pairs.')
        if d < 1 or n < 1 or raw.shape != (n * n, d, d, 2):
            raise ShapeError(f'Instance blocks must have dimensions {n * n} x {d} x {d} x 2, '
                             f'got {raw.shape}.')
        blocks = raw[..., 0] + 1j * raw[..., 1] if field == 'complex' else raw[..., 0]
        if field == 'real' and np.any(raw[..., 1] != 0):
            raise InputError('A real instance must have zero imaginary parts.')
        return cls.from_blocks(blocks.reshape(n, n, d, d), check=check)

    def save(self, path):
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f, sort_keys=True)

    @classmethod
    def load(cls, path, check=False):
        with open(path) as f:
            return cls.from_dict(json.load(f), check=check)


class _BlockTuple:
    kind = None

    def __init__(self, blocks):
        blocks = np.asarray(blocks)
        if blocks.ndim != 3:
            raise ShapeError(f'blocks must have dimensions n x d x w, got shape {blocks.shape}.')
        n, d, width = blocks.shape
        if n < 1 or d < 1 or width < d:
            raise ShapeError(f'blocks must have dimensions n x d x w with w >= d, '
                             f'got {n} x {d} x {width}.')
        if not np.iscomplexobj(blocks):
            blocks = blocks.astype(np.float64)
        self.blocks = blocks
        self.n, self.d, self.width = n, d, width
        self.field = field_of(blocks)

    def stacked(self):
        """Blocks stacked vertically, dimensions dn x w."""
        return self.blocks.reshape(self.n * self.d, self.width)

    def gram(self):
        """Gram matrix G with G_ij = X_i X_j^H."""
        T = self.stacked()
        return T @ T.conj().T

    def residual(self):
        return stiefel_residual(self.blocks)

    def to_dict(self):
        blocks = [[[[float(z.real), float(z.imag)] for z in row] for row in block]
                  for block in self.blocks]
        return {'blocks': blocks, 'd': self.d, 'field': self.field, 'kind': self.kind,
                'n': self.n, 'width': self.width}

    def save(self, path):
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f, sort_keys=True)


class GroupTuple(_BlockTuple):
    """
    Tuple V_1, ..., V_n of d x r matrices with V_i V_i^H = I: orthogonal/unitary matrices for
    r = d, points of the Stiefel manifold O(d, r) otherwise.
    """
    kind = 'group'

    @property
    def r(self):
        return self.width

    def pad(self, m):
        """Zero-pad every block to width m, giving a feasible point of the relaxation."""
        if m < self.width:
            raise ShapeError(f'Cannot pad blocks of width {self.width} to width {m}.')
        padded = np.zeros((self.n, self.d, m), dtype=self.blocks.dtype)
        padded[:, :, :self.width] = self.blocks
        return StiefelTuple(padded)


class StiefelTuple(_BlockTuple):
    """Relaxation variables X_1, ..., X_n of dimensions d x m with X_i X_i^H = I."""
    kind = 'stiefel'

    @property
    def m(self):
        return self.width


def tuple_from_dict(obj):
    try:
        kind = obj['kind']
        field = check_field(obj['field'])
        raw = np.asarray(obj['blocks'], dtype=np.float64)
        n, d, width = int(obj['n']), int(obj['d']), int(obj['width'])
    except KeyError as err:
        raise ShapeError(f'Solution is missing the field {err}.')
    except (TypeError, ValueError):
        raise ShapeError('Solution blocks must be nested lists of [re, im] pairs.')
    if raw.shape != (n, d, width, 2):
        raise ShapeError(f'Solution blocks must have dimensions {n} x {d} x {width} x 2, '
                         f'got {raw.shape}.')
    blocks = raw[..., 0] + 1j * raw[..., 1] if field == 'complex' else raw[..., 0]
    if kind == 'group':
        return GroupTuple(blocks)
    elif kind == 'stiefel':
        return StiefelTuple(blocks)
    raise ShapeError(f"Solution kind must be 'group' or 'stiefel', got {kind!r}.")


def load_tuple(path):
    with open(path) as f:
        return tuple_from_dict(json.load(f))


def _check_compatible(c, t):
    if t.d != c.d or t.n != c.n:
        raise ShapeError(f'Tuple has n = {t.n}, d = {t.d} but C has n = {c.n}, d = {c.d}.')
    if t.field != c.field:
        raise ShapeError(f'Tuple is {t.field} but C is {c.field}.')


def _quadratic_form(c, T):
    """Re tr(T^H C T) for T of dimensions dn x w."""
    if c.uses_factor():
        Y = c.factor.conj().T @ T
        return float(np.sum(np.abs(Y) ** 2))
    value = np.vdot(T, c.data @ T)
    if abs(value.imag) > IMAG_TOL * max(1.0, abs(value.real)):
        raise InputError(f'Objective has a non-negligible imaginary part {value.imag:.3e}.')
    return float(value.real)


def objective(c, t):
    """
    Objective sum_ij Re tr(C_ij^H T_i T_j^H) of a GroupTuple or StiefelTuple.


    Parameters
    ----------
    c : BlockPsdMatrix
        coefficient matrix

    t : GroupTuple or StiefelTuple
        feasible tuple with the same n, d and field as c


    Returns
    -------
    value : float

    """
    _check_compatible(c, t)
    residual = t.residual()
    if residual > FEASIBILITY_TOL:
        raise FeasibilityError(f'Tuple is not feasible: max ||X_i X_i^H - I|| = {residual:.3e}.')
    return _quadratic_form(c, t.stacked())


def objective_batch(c, blocks):
    """Objective for a stack of tuples given as an array of dimensions k x n x d x w."""
    blocks = np.asarray(blocks)
    k, n, d, width = blocks.shape
    if n != c.n or d != c.d:
        raise ShapeError(f'Tuples have n = {n}, d = {d} but C has n = {c.n}, d = {c.d}.')
    T = blocks.reshape(k, n * d, width)
    if c.uses_factor():
        Y = np.matmul(c.factor.conj().T, T)
        return np.sum(np.abs(Y) ** 2, axis=(1, 2))
    return np.sum(np.conj(T) * np.matmul(c.data, T), axis=(1, 2)).real


def build_random_psd(d, n, field='real', rank=None, seed=None):
    """
    Random instance C = A A^H with A a dn x rank Gaussian matrix (rank defaults to dn).
    """
    check_field(field)
    if d < 1 or n < 1:
        raise ShapeError(f'd and n must be positive, got d = {d}, n = {n}.')
    rank = d * n if rank is None else int(rank)
    if rank < 1:
        raise InputError(f'rank must be at least 1, got {rank}.')
    A = gaussian_matrix(d * n, rank, 1.0, field, as_rng_seed(seed))
    return BlockPsdMatrix.from_factor(A, d)


def build_procrustes(clouds):
    """
    Instance of the complementary orthogonal Procrustes problem, C_ij = A_i A_j^T.
    Maximizing the objective over O(d)^n minimizes sum_ij ||O_i^T A_i - O_j^T A_j||_F^2.


    Parameters
    ----------
    clouds : list of np.ndarray
        n real point clouds, each of dimensions d x k (points are columns)


    Returns
    -------
    C : BlockPsdMatrix

    """
    clouds = [np.asarray(A) for A in clouds]
    if len(clouds) == 0:
        raise ShapeError('At least one point cloud is needed.')
    shape = clouds[0].shape
    for i, A in enumerate(clouds):
        if A.ndim != 2 or A.shape != shape:
            raise ShapeError(f'All point clouds must have dimensions {shape}, cloud {i} has '
                             f'{A.shape}.')
        if np.iscomplexobj(A) or not np.all(np.isfinite(A)):
            raise InputError(f'Point cloud {i} must have finite real coordinates.')
    return BlockPsdMatrix.from_factor(np.vstack(clouds).astype(np.float64), shape[0])


def procrustes_residual(clouds, t):
    """sum_ij ||O_i^T A_i - O_j^T A_j||_F^2 for the alignment O_1, ..., O_n in t."""
    A = np.stack([np.asarray(a, dtype=np.float64) for a in clouds])
    if A.shape[0] != t.n or A.shape[1] != t.d:
        raise ShapeError(f'{A.shape[0]} clouds in dimension {A.shape[1]} do not match a tuple '
                         f'with n = {t.n}, d = {t.d}.')
    Z = np.conj(np.swapaxes(t.blocks, 1, 2)) @ A
    n = t.n
    return float(2 * n * np.sum(np.abs(Z) ** 2) - 2 * np.sum(np.abs(np.sum(Z, axis=0)) ** 2))


def read_point_clouds(path):
    """
    Read point clouds from a CSV file with header cloud_id, point_id, x_1, ..., x_d.
    Clouds are ordered by cloud_id and points by point_id; every cloud must have the same
    number of points.
    """
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as err:
        raise ShapeError(f'Could not parse point cloud file: {err}')
    coords = sorted((col for col in frame.columns if col.startswith('x_')),
                    key=lambda col: int(col[2:]) if col[2:].isdigit() else -1)
    if 'cloud_id' not in frame.columns or 'point_id' not in frame.columns or not coords:
        raise ShapeError('Point cloud file needs the columns cloud_id, point_id, x_1, ..., x_d.')
    if [int(col[2:]) if col[2:].isdigit() else -1 for col in coords] != \
            list(range(1, len(coords) + 1)):
        raise ShapeError(f'Coordinate columns must be x_1, ..., x_d, got {coords}.')

    clouds = []
    for _, group in frame.sort_values(['cloud_id', 'point_id']).groupby('cloud_id', sort=True):
        values = group[coords].to_numpy(dtype=np.float64)
        clouds.append(values.T)
    sizes = {A.shape[1] for A in clouds}
    if len(sizes) != 1:
        raise ShapeError(f'All clouds must have the same number of points, got {sorted(sizes)}.')
    return clouds


class BruteForceResult:
    """Result of brute_force_opt. `exact` is False when `value` is only a lower bound."""

    def __init__(self, value, solution, exact, method):
        self.value = value
        self.solution = solution
        self.exact = exact
        self.method = method

    def __iter__(self):
        return iter((self.value, self.solution))


def _enumerate_d1(c, points):
    """Best x^H C x over the rows of points (candidates x of length n)."""
    values = np.einsum('ki,ij,kj->k', np.conj(points), c.data, points).real
    best = int(np.argmax(values))
    return float(values[best]), points[best]


def brute_force_opt(c, grid=16, restarts=32, seed=None):
    """
    Oracle for tiny instances of the group problem.

    For d = 1 and real C the maximum over {+1, -1}^n is found by enumeration (n <= 16). For
    d = 1 and complex C the maximum over `grid` equally spaced phases per variable is found by
    enumeration (a lower bound that increases along nested grids). For d <= 2 and n <= 3 the best
    of `restarts` local ascent runs from random starts is returned and flagged approximate.


    Parameters
    ----------
    c : BlockPsdMatrix
        instance

    grid : int, optional
        number of phases per variable (complex d = 1)

    restarts : int, optional
        number of random starts (d = 2)

    seed : int or RngSeed, optional
        seed of the random starts


    Returns
    -------
    result : BruteForceResult
        value, solution (GroupTuple), exact flag and method name. Unpacks as (value, solution).

    """
    n, d = c.n, c.d
    if d == 1 and c.field == 'real':
        if n > 16:
            raise CapacityError(f'Exhaustive sign search supports n <= 16, got n = {n}.')
        # x and -x give the same value, fix x_1 = +1
        bits = (np.arange(2 ** (n - 1))[:, np.newaxis] >> np.arange(n - 1)) & 1
        points = np.hstack([np.ones((bits.shape[0], 1)), 1.0 - 2.0 * bits])
        value, x = _enumerate_d1(c, points)
        return BruteForceResult(value, GroupTuple(x.reshape(n, 1, 1)), True, 'sign-enumeration')

    if d == 1:
        if grid < 1 or grid ** (n - 1) > MAX_ENUMERATION:
            raise CapacityError(f'Phase grid search over {grid} ** {n - 1} points exceeds '
                                f'{MAX_ENUMERATION}.')
        phases = np.exp(2j * np.pi * np.arange(grid) / grid)
        # common phase rotations leave the value unchanged, fix x_1 = 1
        points = np.array([(1.0,) + p for p in itertools.product(phases, repeat=n - 1)],
                          dtype=np.complex128)
        value, x = _enumerate_d1(c, points)
        return BruteForceResult(value, GroupTuple(x.reshape(n, 1, 1)), False, 'phase-grid')

    if d > 2 or n > 3:
        raise CapacityError(f'Random restart search supports d <= 2 and n <= 3, '
                            f'got d = {d}, n = {n}.')

    from .solver import SolveConfig, local_ascent_group

    seed = as_rng_seed(seed)
    config = SolveConfig(max_sweeps=500, rel_tol=1e-13, restarts=1, seed=seed)
    starts = [GroupTuple(np.tile(np.eye(d, dtype=c.data.dtype), (n, 1, 1)))]
    for k in range(restarts):
        starts.append(GroupTuple(np.stack([random_stiefel(d, d, c.field, seed.child(k * n + i))
                                           for i in range(n)])))
    best_value, best = -np.inf, None
    for start in starts:
        solution, report = local_ascent_group(c, start, config)
        if report.objective > best_value:
            best_value, best = report.objective, solution
    return BruteForceResult(best_value, best, False, 'random-restart-ascent')
