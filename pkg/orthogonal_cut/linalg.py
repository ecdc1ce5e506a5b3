"""
Dense small-matrix primitives over the real and complex field: thin SVD (LAPACK or one-sided
Jacobi), polar decomposition onto the Stiefel manifold, seeded Gaussian sampling and
Hermitian eigenvalue checks.
"""

import logging
import os
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import InputError, ShapeError

logger = logging.getLogger(__name__)

FIELDS = ('real', 'complex')

# polar factors of matrices with sigma_min < RANK_TOL * sigma_max are flagged as non-unique
RANK_TOL = 1e-12
HERMITIAN_TOL = 1e-10


def default_seed():
    """
    Seed used when none is given: the integer in the environment variable ORTHOCUT_SEED, else 0.
    """
    value = os.environ.get('ORTHOCUT_SEED')
    if value is None or value.strip() == '':
        return 0
    try:
        seed = int(value)
    except ValueError:
        raise InputError(f'ORTHOCUT_SEED must be an integer, got {value!r}.')
    if seed < 0:
        raise InputError(f'ORTHOCUT_SEED must be non-negative, got {seed}.')
    return seed


@dataclass(frozen=True)
class RngSeed:
    """
    Reproducible random stream: identical (seed, stream) pairs give bit-identical samples.

    Streams are fed through numpy's SeedSequence into a PCG64 generator. Use `child` to derive
    independent streams for chunks of a Monte-Carlo run, so results do not depend on how the
    chunks are distributed over workers.
    """
    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        for name in ('seed', 'stream'):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or not 0 <= int(value) < 2 ** 64:
                raise InputError(f'{name} must be an unsigned 64-bit integer, got {value!r}.')

    def generator(self):
        sequence = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.PCG64(sequence))

    def child(self, index):
        sequence = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream), int(index)))
        high, low = sequence.generate_state(2, np.uint32)
        return RngSeed(int(self.seed), (int(high) << 32) | int(low))

    def to_dict(self):
        return {'seed': int(self.seed), 'stream': int(self.stream)}


def as_rng_seed(seed):
    if seed is None:
        return RngSeed(default_seed())
    if isinstance(seed, RngSeed):
        return seed
    if isinstance(seed, (int, np.integer)):
        return RngSeed(int(seed))
    raise InputError(f'seed must be an int or RngSeed, got {type(seed).__name__}.')


def as_generator(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return as_rng_seed(seed).generator()


def check_field(field):
    if field not in FIELDS:
        raise InputError(f"field must be 'real' or 'complex', got {field!r}.")
    return field


def field_of(a):
    return 'complex' if np.iscomplexobj(a) else 'real'


@dataclass(frozen=True)
class SvdResult:
    """
    Thin SVD a = left @ diag(singulars) @ right^H of a d x r matrix with r >= d.

    left is d x d unitary, singulars are non-increasing, right is r x d with orthonormal columns.
    """
    left: np.ndarray
    singulars: np.ndarray
    right: np.ndarray

    def reconstruct(self):
        return (self.left * self.singulars) @ self.right.conj().T


def _as_matrix(a, name='a'):
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f'{name} must be a non-empty matrix, got shape {a.shape}.')
    if not np.all(np.isfinite(a)):
        raise InputError(f'{name} must only contain finite entries.')
    if not np.iscomplexobj(a):
        a = a.astype(np.float64, copy=False)
    return a


def svd_thin(a, method='lapack'):
    """
    Thin singular value decomposition of a d x r matrix, r >= d.


    Parameters
    ----------
    a : np.ndarray
        real or complex matrix of dimensions d x r with finite entries

    method : str, optional
        'lapack' (numpy's LAPACK driver) or 'jacobi' (one-sided Jacobi rotations, accurate for
        the small d this package works with)


    Returns
    -------
    svd : SvdResult
        left (d x d), singulars (d, non-increasing), right (r x d)

    """
    a = _as_matrix(a)
    d, r = a.shape
    if r < d:
        raise ShapeError(f'a must have at least as many columns as rows, got {d} x {r}.')

    if method == 'lapack':
        u, s, vh = np.linalg.svd(a, full_matrices=False)
        return SvdResult(u, s, vh.conj().T)
    elif method == 'jacobi':
        return _jacobi_svd(a)
    else:
        raise InputError(f"method must be 'lapack' or 'jacobi', got {method!r}.")


def _jacobi_svd(a, tol=1e-15, max_sweeps=60):
    """
    One-sided Jacobi SVD. The columns of B = a^H (r x d) are rotated pairwise until they are
    mutually orthogonal, B @ J = W @ diag(sigma), which gives a = J @ diag(sigma) @ W^H.
    """
    d, r = a.shape
    B = np.array(a.conj().T, dtype=np.complex128 if np.iscomplexobj(a) else np.float64)
    J = np.eye(d, dtype=B.dtype)

    for sweep in range(max_sweeps):
        rotated = False
        for p in range(d - 1):
            for q in range(p + 1, d):
                alpha = np.vdot(B[:, p], B[:, p]).real
                beta = np.vdot(B[:, q], B[:, q]).real
                gamma = np.vdot(B[:, p], B[:, q])
                g = abs(gamma)
                if g == 0 or g <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True

                # rotate column q by the phase of gamma, so the 2 x 2 Gram matrix becomes real
                phase = np.conj(gamma / g) if np.iscomplexobj(B) else np.sign(gamma)
                zeta = (beta - alpha) / (2 * g)
                t = 1.0 if zeta == 0 else np.sign(zeta) / (abs(zeta) + np.sqrt(1 + zeta ** 2))
                c = 1 / np.sqrt(1 + t ** 2)
                s = c * t

                b_p, b_q = B[:, p].copy(), B[:, q] * phase
                B[:, p], B[:, q] = c * b_p - s * b_q, s * b_p + c * b_q
                j_p, j_q = J[:, p].copy(), J[:, q] * phase
                J[:, p], J[:, q] = c * j_p - s * j_q, s * j_p + c * j_q
        if not rotated:
            break
    else:
        logger.warning(f'Jacobi SVD did not converge within {max_sweeps} sweeps.')

    sigma = np.linalg.norm(B, axis=0)
    order = np.argsort(-sigma, kind='stable')
    sigma, B, J = sigma[order], B[:, order], J[:, order]

    valid = sigma > RANK_TOL * max(sigma[0], np.finfo(float).tiny)
    W = np.zeros_like(B)
    W[:, valid] = B[:, valid] / sigma[valid]
    if not np.all(valid):
        # complete the right factor with an orthonormal basis of the complement
        n_missing = int(np.count_nonzero(~valid))
        if np.any(valid):
            complement = scipy.linalg.null_space(W[:, valid].conj().T)
        else:
            complement = np.eye(r, dtype=B.dtype)
        W[:, ~valid] = complement[:, :n_missing]
        sigma = np.where(valid, sigma, 0.0)
    return SvdResult(J, sigma, W)


def polar(a, return_flag=False, method='lapack'):
    """
    Polar factor P(a) = U V^H of a d x r matrix (r >= d), the closest matrix with orthonormal
    rows to a in Frobenius norm. For d = r = 1 this is the sign (real) or the phase (complex).


    Parameters
    ----------
    a : np.ndarray
        matrix of dimensions d x r

    return_flag : bool, optional
        if True, also return whether a is rank deficient, in which case the polar factor is not
        unique and the one built from the computed SVD factors is returned

    method : str, optional
        SVD method, see svd_thin


    Returns
    -------
    P : np.ndarray
        matrix of dimensions d x r with P @ P^H = I

    non_unique : bool
        only returned if return_flag is True

    """
    svd = svd_thin(a, method=method)
    P = svd.left @ svd.right.conj().T
    non_unique = bool(svd.singulars[0] == 0 or svd.singulars[-1] < RANK_TOL * svd.singulars[0])
    if non_unique:
        logger.warning('polar: input is rank deficient, returning one of several minimizers.')
    if return_flag:
        return P, non_unique
    return P


def polar_batch(a):
    """
    Polar factors of a stack of d x r matrices (array of dimensions ... x d x r).

    Returns the stack of polar factors and a boolean array marking rank-deficient inputs.
    For d = 1 the factor is a / ||a||, which is exactly the sign of a when r = 1; zero rows are
    mapped to the first unit row.
    """
    a = np.asarray(a)
    d, r = a.shape[-2:]
    if r < d:
        raise ShapeError(f'Blocks must have at least as many columns as rows, got {d} x {r}.')

    if d == 1:
        norms = np.linalg.norm(a, axis=-1, keepdims=True)
        degenerate = norms[..., 0, 0] == 0
        P = a / np.where(norms == 0, 1.0, norms)
        if np.any(degenerate):
            unit = np.zeros((1, r), dtype=P.dtype)
            unit[0, 0] = 1
            P[degenerate] = unit
        return P, degenerate

    u, s, vh = np.linalg.svd(a, full_matrices=False)
    non_unique = (s[..., 0] == 0) | (s[..., -1] < RANK_TOL * s[..., 0])
    return u @ vh, non_unique


def gaussian_matrix(rows, cols, variance=1.0, field='real', seed=None, size=()):
    """
    Matrix with i.i.d. Gaussian entries of total variance `variance`.

    Complex entries are circularly symmetric: real and imaginary parts are independent
    N(0, variance / 2). Leading batch dimensions can be requested with `size`.
    """
    check_field(field)
    if variance <= 0:
        raise InputError(f'variance must be positive, got {variance}.')
    if rows < 1 or cols < 1:
        raise ShapeError(f'rows and cols must be positive, got {rows} x {cols}.')
    rng = as_generator(seed)
    batch = (int(size),) if isinstance(size, (int, np.integer)) else tuple(int(s) for s in size)
    shape = batch + (int(rows), int(cols))

    if field == 'real':
        return np.sqrt(variance) * rng.standard_normal(shape)
    scale = np.sqrt(variance / 2)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return scale * (re + 1j * im)


def random_stiefel(d, r, field='real', seed=None):
    """Haar-distributed d x r matrix with orthonormal rows (polar factor of a Gaussian matrix)."""
    return polar(gaussian_matrix(d, r, 1.0, field, seed))


def is_psd(a, tol=1e-9):
    """
    Check whether a Hermitian matrix is positive semidefinite.


    Parameters
    ----------
    a : np.ndarray
        Hermitian matrix of dimensions n x n

    tol : float, optional
        a is accepted if its smallest eigenvalue is >= -tol


    Returns
    -------
    psd : bool

    lambda_min : float
        smallest eigenvalue of a

    """
    a = _as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f'a must be square, got shape {a.shape}.')
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.conj().T)) > HERMITIAN_TOL * scale:
        raise InputError('a must be Hermitian.')
    a = (a + a.conj().T) / 2
    lambda_min = float(scipy.linalg.eigvalsh(a, subset_by_index=[0, 0])[0])
    return lambda_min >= -tol, lambda_min


def stiefel_residual(blocks):
    """max_i ||X_i X_i^H - I||_max over a stack of blocks of dimensions n x d x w."""
    blocks = np.asarray(blocks)
    d = blocks.shape[-2]
    gram = blocks @ np.conj(np.swapaxes(blocks, -1, -2))
    return float(np.max(np.abs(gram - np.eye(d)))) if gram.size else 0.0
