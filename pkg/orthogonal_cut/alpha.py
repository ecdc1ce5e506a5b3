"""
Approximation constants of the Gaussian polar rounding.

alpha(d, r) is the expected average singular value of a d x r Gaussian matrix with i.i.d.
N(0, 1/r) entries (r = d for the group problems). The rounding achieves alpha(d)^2 of the
relaxation value in expectation. This module provides Monte-Carlo estimates, the closed forms
for d <= 3, Gauss-Laguerre quadrature of the complex case, the lower bounds in d, the
Marchenko-Pastur limit 8 / (3 pi) and its rectangular analogue phi(rho), and a probe of the
diagonal rescalings D of the Gaussian matrix.
"""

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.integrate
import scipy.special
from joblib import Parallel, delayed
from tqdm import tqdm

from .exceptions import DomainError, InputError, ShapeError, UnsupportedError
from .linalg import as_rng_seed, check_field, gaussian_matrix

logger = logging.getLogger(__name__)

MP_LIMIT = 8 / (3 * np.pi)
MIN_SAMPLES = 1000
# Gaussian entries generated per Monte-Carlo chunk
CHUNK_ENTRIES = 2 ** 20
NORM_TOL = 1e-10

_CLOSED_FORMS = {
    'real': {
        1: np.sqrt(2 / np.pi),
        2: (2 * np.sqrt(2) - 1) * np.sqrt(np.pi) / 4,
        3: (4 * np.sqrt(2) + 3 * np.pi) / (6 * np.sqrt(3 * np.pi)),  # 0.81877
    },
    'complex': {
        1: np.sqrt(np.pi) / 2,
        2: 11 * np.sqrt(np.pi / 2) / 16,
        3: 107 * np.sqrt(np.pi / 3) / 128,
    },
}


@dataclass(frozen=True)
class AlphaEstimate:
    """
    Value of alpha(d, r) with the method that produced it. Monte-Carlo estimates carry the
    number of samples, the standard error sd / sqrt(samples) and the seed; exact methods have
    samples = 0 and std_error = 0.
    """
    value: float
    method: str
    d: int
    r: int
    field: str
    samples: int = 0
    std_error: float = 0.0
    seed: int = None

    @property
    def squared(self):
        return self.value ** 2

    def to_row(self):
        return {'d': self.d, 'r': self.r, 'field': self.field, 'method': self.method,
                'value': self.value, 'se': self.std_error, 'samples': self.samples,
                'seed': self.seed}


def _combine_moments(parts):
    """Merge per-chunk (count, mean, M2) in order; M2 is the sum of squared deviations."""
    count, mean, m2 = 0, 0.0, 0.0
    for n_b, mean_b, m2_b in parts:
        total = count + n_b
        delta = mean_b - mean
        mean = mean + delta * n_b / total
        m2 = m2 + m2_b + delta ** 2 * count * n_b / total
        count = total
    return count, mean, m2


def _moments(values):
    mean = np.mean(values, axis=0)
    return values.shape[0], mean, np.sum((values - mean) ** 2, axis=0)


def _average_singular_value(G):
    if G.shape[-2] == 1:
        return np.linalg.norm(G, axis=-1)[..., 0]
    return np.mean(np.linalg.svd(G, compute_uv=False), axis=-1)


def _alpha_chunk(d, r, field, seed, count):
    G = gaussian_matrix(d, r, 1.0 / r, field, seed, size=count)
    return _moments(_average_singular_value(G))


def _chunk_sizes(samples, chunk_size):
    return [min(chunk_size, samples - start) for start in range(0, samples, chunk_size)]


def alpha_mc(d, r=None, field='real', samples=10 ** 6, seed=None, n_jobs=1, verbose=False):
    """
    Monte-Carlo estimate of alpha(d, r).


    Parameters
    ----------
    d : int
        number of rows

    r : int, optional
        number of columns, r >= d (defaults to d)

    field : str, optional
        'real' or 'complex'

    samples : int, optional
        number of Gaussian matrices, at least 1000

    seed : int or RngSeed, optional
        samples are drawn in chunks, chunk c uses seed.child(c)

    n_jobs : int, optional
        number of chunks sampled in parallel (the estimate does not depend on it)

    verbose : bool, optional
        show a progress bar over chunks


    Returns
    -------
    estimate : AlphaEstimate

    """
    check_field(field)
    r = d if r is None else r
    if d < 1:
        raise InputError(f'd must be at least 1, got {d}.')
    if r < d:
        raise ShapeError(f'r must be at least d, got d = {d}, r = {r}.')
    if samples < MIN_SAMPLES:
        raise InputError(f'samples must be at least {MIN_SAMPLES}, got {samples}.')
    seed = as_rng_seed(seed)

    chunk_size = max(1, CHUNK_ENTRIES // (d * r))
    sizes = _chunk_sizes(samples, chunk_size)
    parts = Parallel(n_jobs=n_jobs)(
        delayed(_alpha_chunk)(d, r, field, seed.child(k), size)
        for k, size in tqdm(list(enumerate(sizes)), disable=not verbose, desc='alpha'))
    count, mean, m2 = _combine_moments(parts)
    std_error = float(np.sqrt(m2 / (count - 1) / count))
    logger.debug(f'alpha_mc(d={d}, r={r}, {field}) = {mean} +- {std_error} ({count} samples)')
    return AlphaEstimate(float(mean), 'monte-carlo', d, r, field, int(count), std_error,
                         int(seed.seed))


def alpha_closed_form(d, field='real'):
    """Exact alpha(d) for d in {1, 2, 3}."""
    check_field(field)
    if d not in _CLOSED_FORMS[field]:
        raise UnsupportedError(f'Closed forms are available for d <= 3, got d = {d}.')
    return AlphaEstimate(float(_CLOSED_FORMS[field][d]), 'closed-form', d, d, field)


def _laguerre_polynomials(n_max, x):
    """Rows L_0(x), ..., L_{n_max}(x), by the three-term recurrence."""
    L = np.empty((n_max + 1,) + np.shape(x))
    L[0] = 1.0
    if n_max >= 1:
        L[1] = 1.0 - x
    for k in range(1, n_max):
        L[k + 1] = ((2 * k + 1 - x) * L[k] - k * L[k - 1]) / (k + 1)
    return L


def alpha_complex_laguerre(d, order=None):
    """
    alpha_C(d) = d^(-3/2) sum_{k<d} int_0^inf x^(1/2) e^(-x) L_k(x)^2 dx, every integral by
    generalized Gauss-Laguerre quadrature with weight x^(1/2) e^(-x). The integrands are
    polynomials of degree 2d - 2, so any order >= d is exact up to roundoff.


    Parameters
    ----------
    d : int
        matrix size

    order : int, optional
        number of quadrature nodes, at least 2d + 10 (the default)


    Returns
    -------
    estimate : AlphaEstimate

    """
    if d < 1:
        raise InputError(f'd must be at least 1, got {d}.')
    order = 2 * d + 10 if order is None else int(order)
    if order < 2 * d + 10:
        raise InputError(f'order must be at least 2d + 10 = {2 * d + 10}, got {order}.')
    x, w = scipy.special.roots_genlaguerre(order, 0.5)
    L = _laguerre_polynomials(d - 1, x)
    integrals = (L ** 2) @ w
    value = float(np.sum(integrals) / d ** 1.5)
    return AlphaEstimate(value, 'laguerre-quadrature', d, d, 'complex')


def alpha_lower_bounds(d, field='real'):
    """
    Lower bound on alpha(d): 8/(3 pi) - 4/d (complex), 8/(3 pi) - 3/sqrt(d) - 4/d (real).
    Negative for small d.
    """
    check_field(field)
    if d < 1:
        raise InputError(f'd must be at least 1, got {d}.')
    if field == 'complex':
        return MP_LIMIT - 4 / d
    return MP_LIMIT - 3 / np.sqrt(d) - 4 / d


def alpha_chi_1r(r):
    """alpha_R(1, r), the mean of a chi distribution with r degrees of freedom over sqrt(r)."""
    if r < 1:
        raise InputError(f'r must be at least 1, got {r}.')
    value = np.sqrt(2 / r) * np.exp(scipy.special.gammaln((r + 1) / 2) -
                                    scipy.special.gammaln(r / 2))
    return AlphaEstimate(float(value), 'closed-form', 1, int(r), 'real')


def stiefel_lower_bound(d, r):
    """1 - sqrt(d / r), lower bound on alpha_R(d, r) from the smallest singular value."""
    if d < 1 or r < d:
        raise ShapeError(f'Need 1 <= d <= r, got d = {d}, r = {r}.')
    return 1 - np.sqrt(d / r)


def ncgi_ratio(field='real'):
    """Approximation ratio of the non-commutative Grothendieck rounding the constants beat."""
    return 1 / (2 * np.sqrt(2)) if check_field(field) == 'real' else 0.5


def _mp_sqrt_moment(lam):
    """
    E sqrt(x) for x Marchenko-Pastur distributed with ratio lam <= 1 and unit mean. With
    x = (a + b)/2 + (b - a)/2 cos(theta) the square-root singularities at both ends of the
    support cancel, leaving a smooth integrand on [0, pi].
    """
    a, b = (1 - np.sqrt(lam)) ** 2, (1 + np.sqrt(lam)) ** 2
    half = (b - a) / 2

    def integrand(theta):
        x = max((a + b) / 2 + half * np.cos(theta), np.finfo(float).tiny)
        return half ** 2 * np.sin(theta) ** 2 / (2 * np.pi * lam * np.sqrt(x))

    value, error = scipy.integrate.quad(integrand, 0, np.pi, epsabs=1e-13, epsrel=1e-12,
                                        limit=200)
    logger.debug(f'Marchenko-Pastur moment for lambda = {lam}: {value} (quadrature error {error})')
    return value


def mp_limit():
    """
    Limit of alpha_K(d) for d -> infinity.


    Returns
    -------
    exact : float
        8 / (3 pi)

    quadrature : float
        int_0^4 sqrt(x) sqrt(x (4 - x)) / (2 pi x) dx evaluated numerically

    """
    return MP_LIMIT, _mp_sqrt_moment(1.0)


def phi_rho(rho):
    """
    phi(rho), limit of alpha_R(d, rho d) for d -> infinity: E sqrt(x) under the
    Marchenko-Pastur law with ratio 1 / rho.
    """
    if not rho >= 1:
        raise DomainError(f'rho must be at least 1, got {rho}.')
    return _mp_sqrt_moment(1.0 / rho)


def alpha_reference(d, field='real', r=None, samples=2 * 10 ** 5, seed=None, n_jobs=1):
    """
    Most accurate available alpha(d, r): closed form (d <= 3 or d = 1), Laguerre quadrature
    (complex), Monte Carlo otherwise.
    """
    check_field(field)
    r = d if r is None else r
    if r == d and d <= 3:
        return alpha_closed_form(d, field)
    if d == 1 and field == 'real':
        return alpha_chi_1r(r)
    if r == d and field == 'complex':
        return alpha_complex_laguerre(d)
    return alpha_mc(d, r, field, samples=samples, seed=seed, n_jobs=n_jobs)


def alpha_curve(ds, field='real', samples=10 ** 5, seed=None, n_jobs=1):
    """
    alpha(d) and alpha(d)^2 with the lower bound, the Marchenko-Pastur limit and the
    non-commutative Grothendieck ratio for every d in ds.

    The column `increment` holds alpha(d) - alpha(d - 1) over consecutive rows; the sequence is
    reported and never checked.
    """
    seed = as_rng_seed(seed)
    rows = []
    for k, d in enumerate(ds):
        estimate = alpha_reference(int(d), field, samples=samples, seed=seed.child(k),
                                   n_jobs=n_jobs)
        rows.append({'d': int(d), 'field': field, 'method': estimate.method,
                     'alpha': estimate.value, 'alpha_sq': estimate.squared,
                     'se': estimate.std_error, 'lower_bound': alpha_lower_bounds(int(d), field),
                     'mp_limit': MP_LIMIT, 'mp_limit_sq': MP_LIMIT ** 2,
                     'ncgi_ratio': ncgi_ratio(field)})
    frame = pd.DataFrame(rows)
    frame['increment'] = frame['alpha'].diff()
    return frame


def phi_curve(rhos):
    """phi(rho) next to the bound 1 - sqrt(1 / rho)."""
    return pd.DataFrame([{'rho': float(rho), 'phi': phi_rho(rho),
                          'lower_bound': 1 - np.sqrt(1 / rho)} for rho in rhos])


@dataclass
class AlphaStarProbe:
    """
    Monte-Carlo values of E (1/d) sum_j sigma_j(G D) for diagonal candidates D >= 0 with
    ||D||_F^2 = d, all evaluated on the same Gaussian matrices. `paired_std_errors[k]` is the
    standard error of the difference between candidate k and the identity.
    """
    d: int
    candidates: np.ndarray
    values: np.ndarray
    std_errors: np.ndarray
    paired_std_errors: np.ndarray
    identity_index: int
    samples: int
    seed: int

    def argmax(self, ties=3.0):
        """Best candidate; candidates within `ties` paired standard errors of D = I lose to I."""
        best = int(np.argmax(self.values))
        lead = self.values[best] - self.values[self.identity_index]
        if best != self.identity_index and lead <= ties * self.paired_std_errors[best]:
            return self.identity_index
        return best

    def distances(self):
        """||D - I||_F of every candidate."""
        return np.linalg.norm(self.candidates - 1.0, axis=1)

    def to_frame(self):
        frame = pd.DataFrame({'candidate': np.arange(len(self.values)), 'value': self.values,
                              'se': self.std_errors, 'paired_se': self.paired_std_errors,
                              'distance_to_identity': self.distances()})
        for j in range(self.d):
            frame[f'D_{j + 1}'] = self.candidates[:, j]
        return frame

    def to_dict(self):
        out = dataclasses.asdict(self)
        for key in ('candidates', 'values', 'std_errors', 'paired_std_errors'):
            out[key] = np.asarray(out[key]).tolist()
        out['argmax'] = self.argmax()
        return out


def default_alpha_star_candidates(d, count=24, seed=None):
    """
    Diagonals of D = I, `count` random feasible D (squared entries d times a uniform point of the
    simplex) and boundary candidates with all mass on the first k entries or nearly all mass on
    one entry. Rows hold the diagonals.
    """
    if d < 1:
        raise InputError(f'd must be at least 1, got {d}.')
    if d == 1:
        return np.ones((1, 1))
    rng = as_rng_seed(seed).generator()
    candidates = [np.ones(d)]
    for _ in range(count):
        candidates.append(np.sqrt(d * rng.dirichlet(np.ones(d))))
    for k in range(1, d):
        candidates.append(np.where(np.arange(d) < k, np.sqrt(d / k), 0.0))
    concentrated = np.full(d, 0.05 / (d - 1))
    concentrated[0] = 0.95
    candidates.append(np.sqrt(d * concentrated))
    return np.array(candidates)


def _check_candidates(candidates, d):
    candidates = np.asarray(candidates, dtype=np.float64)
    if candidates.ndim != 2 or candidates.shape[1] != d:
        raise ShapeError(f'candidates must have dimensions c x {d}, got {candidates.shape}.')
    if np.any(candidates < 0) or not np.all(np.isfinite(candidates)):
        raise InputError('Candidate diagonals must be finite and non-negative.')
    norms = np.sum(candidates ** 2, axis=1)
    bad = np.flatnonzero(np.abs(norms - d) > NORM_TOL)
    if bad.size:
        raise InputError(f'Candidates {bad.tolist()} violate ||D||_F^2 = {d}.')
    return candidates


def _probe_chunk(d, candidates, identity, seed, count):
    G = gaussian_matrix(d, d, 1.0 / d, 'real', seed, size=count)
    values = np.stack([_average_singular_value(G * D) for D in candidates], axis=1)
    return _moments(values), _moments(values - values[:, [identity]])


def alpha_star_probe(d, candidates=None, samples=10 ** 5, seed=None, n_jobs=1):
    """
    Compare E (1/d) sum_j sigma_j(G D) across diagonal rescalings D of a real Gaussian matrix G
    (entries N(0, 1/d)). D = I is added if missing; its value is alpha_R(d).


    Parameters
    ----------
    d : int
        matrix size

    candidates : np.ndarray, optional
        c x d array of diagonals, each non-negative with squared norm d
        (default_alpha_star_candidates if None)

    samples : int, optional
        number of Gaussian matrices shared by all candidates

    seed : int or RngSeed, optional

    n_jobs : int, optional
        number of chunks sampled in parallel


    Returns
    -------
    probe : AlphaStarProbe

    """
    seed = as_rng_seed(seed)
    if candidates is None:
        candidates = default_alpha_star_candidates(d, seed=seed.child(0))
    candidates = _check_candidates(candidates, d)
    if samples < MIN_SAMPLES:
        raise InputError(f'samples must be at least {MIN_SAMPLES}, got {samples}.')

    is_identity = np.all(np.abs(candidates - 1.0) <= NORM_TOL, axis=1)
    if not np.any(is_identity):
        candidates = np.vstack([np.ones((1, d)), candidates])
        is_identity = np.concatenate([[True], np.zeros(len(candidates) - 1, dtype=bool)])
    identity = int(np.flatnonzero(is_identity)[0])

    chunk_size = max(1, CHUNK_ENTRIES // (d * d * len(candidates)))
    sizes = _chunk_sizes(samples, chunk_size)
    parts = Parallel(n_jobs=n_jobs)(
        delayed(_probe_chunk)(d, candidates, identity, seed.child(k + 1), size)
        for k, size in enumerate(sizes))
    count, values, m2 = _combine_moments([part[0] for part in parts])
    _, _, m2_paired = _combine_moments([part[1] for part in parts])

    return AlphaStarProbe(d=d, candidates=candidates, values=np.asarray(values),
                          std_errors=np.sqrt(m2 / (count - 1) / count),
                          paired_std_errors=np.sqrt(m2_paired / (count - 1) / count),
                          identity_index=identity, samples=int(count), seed=int(seed.seed))
