import itertools

import numpy as np
import pandas as pd
import pytest

from ..exceptions import CapacityError, FeasibilityError, InputError, ShapeError
from ..linalg import RngSeed, gaussian_matrix, random_stiefel
from ..problem import (BlockPsdMatrix, GroupTuple, StiefelTuple, brute_force_opt,
                       build_procrustes, build_random_psd, load_tuple, objective, objective_batch,
                       procrustes_residual, read_point_clouds)


def random_group_tuple(d, n, field='real', seed=0):
    return GroupTuple(np.stack([random_stiefel(d, d, field, RngSeed(seed).child(i))
                                for i in range(n)]))


def decoupled_instance(d, n, seed=0):
    blocks = np.zeros((n, n, d, d))
    for i in range(n):
        A = gaussian_matrix(d, d, 1.0, 'real', RngSeed(seed).child(i))
        blocks[i, i] = A @ A.T
    return BlockPsdMatrix.from_blocks(blocks)


def test_block_psd_matrix():
    c = build_random_psd(2, 4, 'complex', seed=1)
    assert (c.d, c.n, c.dim, c.field) == (2, 4, 8, 'complex')
    np.testing.assert_allclose(c.block(1, 2), c.data[2:4, 4:6])
    np.testing.assert_allclose(c.blocks()[3, 0], c.block(3, 0))
    np.testing.assert_allclose(c.diagonal_blocks()[2], c.block(2, 2))

    with pytest.raises(InputError):
        BlockPsdMatrix(np.diag([1.0, -1.0]), 1)
    with pytest.raises(ShapeError):
        BlockPsdMatrix(np.eye(5), 2)
    with pytest.raises(InputError):
        BlockPsdMatrix(np.array([[1.0, 1.0], [0.0, 1.0]]), 1)

    # the PSD check is deferred for unsafe instances
    c = BlockPsdMatrix.unsafe(np.diag([1.0, -1.0]), 1)
    assert c.psd is None
    with pytest.raises(InputError):
        c.check_psd()


def test_instance_json(tmp_path):
    c = build_random_psd(2, 3, 'complex', seed=2)
    path = tmp_path / 'instance.json'
    c.save(path)
    loaded = BlockPsdMatrix.load(path)
    np.testing.assert_allclose(loaded.data, c.data, atol=1e-14)
    assert loaded.field == 'complex' and loaded.d == 2 and loaded.n == 3

    obj = c.to_dict()
    obj['n'] = 4
    with pytest.raises(ShapeError):
        BlockPsdMatrix.from_dict(obj)
    with pytest.raises(ShapeError):
        BlockPsdMatrix.from_dict({'d': 1, 'n': 1, 'field': 'real'})
    with pytest.raises(ShapeError):
        BlockPsdMatrix.from_dict({'d': 1, 'n': 1, 'field': 'real', 'blocks': 'abc'})


def test_tuple_json(tmp_path):
    t = random_group_tuple(2, 3, 'complex', seed=3)
    path = tmp_path / 'solution.json'
    t.save(path)
    loaded = load_tuple(path)
    assert isinstance(loaded, GroupTuple)
    np.testing.assert_allclose(loaded.blocks, t.blocks, atol=1e-15)

    padded = t.pad(6)
    assert isinstance(padded, StiefelTuple) and padded.m == 6
    with pytest.raises(ShapeError):
        t.pad(1)


def test_objective():
    c = build_random_psd(2, 5, 'real', rank=3, seed=4)
    assert c.uses_factor()
    dense = BlockPsdMatrix(c.data, 2)
    t = random_group_tuple(2, 5, seed=5)

    value = objective(c, t)
    np.testing.assert_allclose(value, objective(dense, t), rtol=1e-12)
    np.testing.assert_allclose(value, np.trace(t.stacked().T @ c.data @ t.stacked()), rtol=1e-12)
    # zero padding does not change the objective
    np.testing.assert_allclose(objective(c, t.pad(10)), value, rtol=1e-12)

    stack = np.stack([t.blocks, random_group_tuple(2, 5, seed=6).blocks])
    np.testing.assert_allclose(objective_batch(c, stack)[0], value, rtol=1e-12)
    np.testing.assert_allclose(objective_batch(dense, stack), objective_batch(c, stack),
                               rtol=1e-12)

    with pytest.raises(FeasibilityError):
        objective(c, GroupTuple(2 * t.blocks))
    with pytest.raises(ShapeError):
        objective(c, random_group_tuple(2, 4))
    with pytest.raises(ShapeError):
        objective(c, random_group_tuple(2, 5, 'complex'))


def test_objective_decoupled():
    c = decoupled_instance(3, 4, seed=7)
    expected = np.trace(c.data)
    for k in range(5):
        np.testing.assert_allclose(objective(c, random_group_tuple(3, 4, seed=k)), expected)


def test_objective_invariances():
    c = build_random_psd(2, 4, 'complex', seed=8)
    t = random_group_tuple(2, 4, 'complex', seed=9)
    value = objective(c, t)
    # a common right unitary factor O_i -> O_i U leaves every product O_i O_j^H unchanged
    for k in range(3):
        U = random_stiefel(2, 2, 'complex', RngSeed(10).child(k))
        np.testing.assert_allclose(objective(c, GroupTuple(t.blocks @ U)), value, rtol=1e-12)

    for k in range(10):
        assert objective(c, random_group_tuple(2, 4, 'complex', seed=20 + k)) >= 0
        blocks = np.stack([random_stiefel(2, 8, 'complex', RngSeed(30 + k).child(i))
                           for i in range(4)])
        assert objective(c, StiefelTuple(blocks)) >= 0


def test_build_random_psd():
    c = build_random_psd(2, 5, 'real', rank=1, seed=11)
    eigenvalues = np.linalg.eigvalsh(c.data)
    assert eigenvalues[-2] <= 1e-8 * eigenvalues[-1]
    assert c.uses_factor() and c.psd

    np.testing.assert_array_equal(build_random_psd(3, 4, 'complex', seed=12).data,
                                  build_random_psd(3, 4, 'complex', seed=12).data)
    assert not np.array_equal(build_random_psd(3, 4, seed=12).data,
                              build_random_psd(3, 4, seed=13).data)
    with pytest.raises(InputError):
        build_random_psd(2, 3, rank=0)


def test_brute_force_sign_enumeration():
    c = build_random_psd(1, 6, seed=8)
    best = max(x @ c.data @ x for x in (np.array(s) for s in itertools.product([1, -1], repeat=6)))
    result = brute_force_opt(c)
    assert result.exact and result.method == 'sign-enumeration'
    np.testing.assert_allclose(result.value, best, rtol=1e-12)
    value, solution = result
    np.testing.assert_allclose(objective(c, solution), value, rtol=1e-12)

    with pytest.raises(CapacityError):
        brute_force_opt(build_random_psd(1, 17, seed=9))


def test_brute_force_approximate():
    c = build_random_psd(1, 4, 'complex', seed=10)
    coarse = brute_force_opt(c, grid=4)
    fine = brute_force_opt(c, grid=16)
    assert not fine.exact
    # the grid of 4 phases is contained in the grid of 16
    assert fine.value >= coarse.value - 1e-12

    c = build_random_psd(2, 3, seed=11)
    result = brute_force_opt(c, restarts=8, seed=12)
    assert result.method == 'random-restart-ascent'
    np.testing.assert_allclose(objective(c, result.solution), result.value, rtol=1e-10)

    with pytest.raises(CapacityError):
        brute_force_opt(build_random_psd(3, 3, seed=13))


def test_procrustes():
    clouds = [gaussian_matrix(3, 7, 1.0, 'real', RngSeed(14).child(i)) for i in range(4)]
    c = build_procrustes(clouds)
    assert (c.d, c.n) == (3, 4)
    np.testing.assert_allclose(c.block(0, 2), clouds[0] @ clouds[2].T)

    t = random_group_tuple(3, 4, seed=15)
    direct = sum(np.linalg.norm(t.blocks[i].T @ clouds[i] - t.blocks[j].T @ clouds[j]) ** 2
                 for i in range(4) for j in range(4))
    np.testing.assert_allclose(procrustes_residual(clouds, t), direct, rtol=1e-10)
    scale = 2 * 4 * sum(np.sum(A ** 2) for A in clouds)
    np.testing.assert_allclose(direct, scale - 2 * objective(c, t), rtol=1e-10)

    with pytest.raises(ShapeError):
        build_procrustes([np.ones((3, 7)), np.ones((3, 6))])


def test_read_point_clouds(tmp_path):
    rows = [{'cloud_id': i, 'point_id': k, 'x_1': 10 * i + k, 'x_2': -k}
            for i in [1, 0] for k in [2, 0, 1]]
    path = tmp_path / 'clouds.csv'
    pd.DataFrame(rows).to_csv(path, index=False)

    clouds = read_point_clouds(path)
    assert len(clouds) == 2
    np.testing.assert_array_equal(clouds[0], [[0, 1, 2], [0, -1, -2]])
    np.testing.assert_array_equal(clouds[1], [[10, 11, 12], [0, -1, -2]])

    pd.DataFrame(rows[:-1]).to_csv(path, index=False)
    with pytest.raises(ShapeError):
        read_point_clouds(path)
    pd.DataFrame(rows).drop(columns='point_id').to_csv(path, index=False)
    with pytest.raises(ShapeError):
        read_point_clouds(path)
