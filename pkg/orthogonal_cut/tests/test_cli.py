import json
import logging

import numpy as np
import pandas as pd
import pytest

from ..alpha import alpha_closed_form
from ..cli import ALPHA_COLUMNS, EXIT_ERROR, EXIT_INFEASIBLE, EXIT_OK, EXIT_PARSE, RunManifest, main
from ..exceptions import InputError
from ..linalg import RngSeed, gaussian_matrix, random_stiefel
from ..problem import BlockPsdMatrix, brute_force_opt, build_random_psd, load_tuple
from .test_problem import decoupled_instance


def write_instance(c, tmp_path, name='instance.json'):
    path = str(tmp_path / name)
    c.save(path)
    return path


def write_clouds(clouds, path):
    rows = []
    for i, A in enumerate(clouds):
        for k in range(A.shape[1]):
            rows.append({'cloud_id': i, 'point_id': k,
                         **{f'x_{j + 1}': A[j, k] for j in range(A.shape[0])}})
    pd.DataFrame(rows).to_csv(path, index=False)
    return str(path)


def read_json(path):
    with open(path) as f:
        return json.load(f)


def test_solve_decoupled(tmp_path):
    c = decoupled_instance(2, 5, seed=1)
    instance = write_instance(c, tmp_path)
    out, report = str(tmp_path / 'solution.json'), str(tmp_path / 'report.json')

    assert main(['--seed', '1', 'solve', instance, '--out', out, '--report', report]) == EXIT_OK
    trace = float(np.trace(c.data))
    np.testing.assert_allclose(read_json(report)['objective'], trace, rtol=1e-10)
    assert load_tuple(out).m == 10

    manifest = RunManifest.load(out + '.manifest.json')
    assert manifest.subcommand == 'solve' and manifest.exit_code == EXIT_OK
    assert manifest.seed == 1 and manifest.outputs == [out, report]
    assert manifest.argv[:2] == ['--seed', '1']


def test_solve_dominates_brute_force(tmp_path, capsys):
    c = build_random_psd(1, 8, seed=2)
    instance = write_instance(c, tmp_path)
    assert main(['--seed', '2', 'solve', instance]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    value, _ = brute_force_opt(c)
    assert report['objective'] >= value * (1 - 1e-9)


def test_solve_bad_input(tmp_path, caplog):
    path = tmp_path / 'broken.json'
    path.write_text('{"d": 2, "n": ')
    with caplog.at_level(logging.ERROR):
        assert main(['solve', str(path)]) == EXIT_PARSE
    assert 'Invalid input' in caplog.text

    assert main(['solve', str(tmp_path / 'missing.json')]) == EXIT_PARSE
    valid = write_instance(build_random_psd(2, 3, seed=1), tmp_path)
    assert main(['solve', valid, '--restarts', '0']) == EXIT_PARSE

    indefinite = np.diag([1.0, -1.0, 1.0, 1.0])
    instance = write_instance(BlockPsdMatrix.unsafe(indefinite, 2), tmp_path)
    caplog.clear()
    with caplog.at_level(logging.ERROR):
        assert main(['solve', instance]) == EXIT_INFEASIBLE
    assert 'positive semidefinite' in caplog.text


def test_round_pipeline(tmp_path):
    c = build_random_psd(2, 6, 'complex', seed=3)
    instance = write_instance(c, tmp_path)
    solution, report = str(tmp_path / 'solution.json'), str(tmp_path / 'solve.json')
    assert main(['--seed', '3', 'solve', instance, '--out', solution, '--report', report]) == 0

    rounded = [str(tmp_path / f'rounded{k}.json') for k in range(2)]
    stats = [str(tmp_path / f'stats{k}.json') for k in range(2)]
    for k in range(2):
        assert main(['--seed', '4', 'round', solution, instance, '--draws', '32',
                     '--out', rounded[k], '--report', stats[k]]) == EXIT_OK
    first, second = read_json(stats[0]), read_json(stats[1])
    assert first == second
    assert first['value'] <= first['relaxation_value'] * (1 + 1e-9)
    np.testing.assert_allclose(first['relaxation_value'], read_json(report)['objective'])
    assert first['stats']['draws'] == 32
    np.testing.assert_array_equal(load_tuple(rounded[0]).blocks, load_tuple(rounded[1]).blocks)

    polished = str(tmp_path / 'polished.json')
    assert main(['--seed', '4', 'round', solution, instance, '--draws', '32', '--polish',
                 '--report', polished]) == EXIT_OK
    assert read_json(polished)['value'] >= first['value']

    assert main(['round', solution, instance, '--target', 'stiefel:1']) == EXIT_PARSE
    assert main(['round', solution, instance, '--target', 'sphere']) == EXIT_PARSE
    assert main(['round', solution, write_instance(build_random_psd(2, 5, 'complex', seed=1),
                                                   tmp_path, 'other.json')]) == EXIT_PARSE


def test_round_stiefel_target(tmp_path, capsys):
    c = build_random_psd(2, 5, seed=5)
    instance = write_instance(c, tmp_path)
    solution = str(tmp_path / 'solution.json')
    assert main(['--seed', '5', 'solve', instance, '--out', solution]) == EXIT_OK
    capsys.readouterr()

    rounded = str(tmp_path / 'rounded.json')
    assert main(['round', solution, instance, '--target', 'stiefel:4', '--draws', '8',
                 '--out', rounded]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert load_tuple(rounded).r == 4
    assert report['config']['r'] == 4


def test_alpha_closed(tmp_path):
    out = str(tmp_path / 'alpha.csv')
    assert main(['alpha', '--method', 'closed', '--d', '1-3', '--field', 'both',
                 '--out', out]) == EXIT_OK
    frame = pd.read_csv(out)
    assert list(frame.columns) == ALPHA_COLUMNS
    assert list(frame['field']) == ['real'] * 3 + ['complex'] * 3
    np.testing.assert_allclose(frame['value'][:3],
                               [alpha_closed_form(d).value for d in [1, 2, 3]])
    assert (tmp_path / 'alpha.csv.manifest.json').exists()

    assert main(['alpha', '--method', 'closed', '--d', '4']) == EXIT_ERROR
    assert main(['alpha', '--method', 'mc', '--samples', '10']) == EXIT_PARSE


def test_alpha_mc_is_reproducible(tmp_path):
    outputs = [str(tmp_path / f'alpha{k}.csv') for k in range(2)]
    for k, out in enumerate(outputs):
        assert main(['--seed', '5', '--jobs', str(k + 1), 'alpha', '--d', '2,3',
                     '--samples', '2000', '--field', 'complex', '--out', out]) == EXIT_OK
    frames = [pd.read_csv(out) for out in outputs]
    np.testing.assert_allclose(frames[0]['value'], frames[1]['value'], rtol=1e-12)
    assert list(frames[0]['samples']) == [2000, 2000]
    assert np.all(frames[0]['se'] > 0)


def test_alpha_other_methods(capsys):
    assert main(['alpha', '--method', 'phi', '--rho', '1,2']) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == 'rho,phi,lower_bound' and len(lines) == 3

    assert main(['alpha', '--method', 'laguerre', '--field', 'complex', '--d', '5']) == EXIT_OK
    assert 'laguerre-quadrature' in capsys.readouterr().out

    assert main(['alpha', '--method', 'chi', '--r', '100']) == EXIT_OK
    assert main(['alpha', '--method', 'bounds', '--d', '400']) == EXIT_OK
    assert main(['alpha', '--method', 'mp']) == EXIT_OK


def test_gap(tmp_path):
    out, report = str(tmp_path / 'gap.csv'), str(tmp_path / 'gap.json')
    assert main(['--seed', '6', 'gap', '--p', '5', '--n', '40', '--trials', '2', '--draws', '8',
                 '--out', out, '--report', report]) == EXIT_OK
    frame = pd.read_csv(out)
    assert list(frame['trial']) == [0, 1]
    assert np.all(frame['ratio'] <= 1 + 1e-7)
    assert read_json(report)['config']['p'] == 5
    assert RunManifest.load(out + '.manifest.json').config['gap']['n'] == 40

    assert main(['gap', '--p', '0']) == EXIT_PARSE


def aligned_clouds(d, n, k, noise, seed):
    B = gaussian_matrix(d, k, 1.0, 'real', seed.child(0))
    clouds = []
    for i in range(n):
        Q = random_stiefel(d, d, 'real', seed.child(i + 1))
        E = gaussian_matrix(d, k, noise ** 2, 'real', seed.child(n + i + 1)) if noise else 0
        clouds.append(Q @ B + E)
    return clouds


def test_procrustes_exact(tmp_path):
    clouds = aligned_clouds(3, 6, 10, 0.0, RngSeed(7))
    path = write_clouds(clouds, tmp_path / 'clouds.csv')
    report, out = str(tmp_path / 'report.json'), str(tmp_path / 'alignment.json')
    assert main(['--seed', '7', 'procrustes', path, '--polish', '--report', report,
                 '--out', out]) == EXIT_OK
    result = read_json(report)
    scale = 2 * 6 * sum(np.sum(A ** 2) for A in clouds)
    assert result['residual'] <= 1e-6 * scale
    np.testing.assert_allclose(result['ratio'], 1, atol=1e-6)

    O = load_tuple(out).blocks
    aligned = [O[i].T @ A for i, A in enumerate(clouds)]
    for A in aligned[1:]:
        np.testing.assert_allclose(A, aligned[0], atol=1e-3)


def test_procrustes_noisy(tmp_path):
    clouds = aligned_clouds(2, 8, 6, 1.0, RngSeed(8))
    path = write_clouds(clouds, tmp_path / 'clouds.csv')
    report = str(tmp_path / 'report.json')
    assert main(['--seed', '8', 'procrustes', path, '--draws', '2000', '--report', report]) == 0
    result = read_json(report)
    alpha_sq = alpha_closed_form(2).squared
    se = result['stats']['std_error'] / result['relaxation_value']
    assert result['mean_ratio'] >= alpha_sq - 3 * se
    assert result['residual'] >= result['residual_lower_bound'] * (1 - 1e-9)


def test_procrustes_bad_clouds(tmp_path):
    clouds = aligned_clouds(2, 3, 4, 0.0, RngSeed(9))
    path = write_clouds(clouds, tmp_path / 'clouds.csv')
    frame = pd.read_csv(path)
    frame.iloc[:-1].to_csv(path, index=False)
    assert main(['procrustes', path]) == EXIT_PARSE


def test_replay(tmp_path):
    c = build_random_psd(2, 4, seed=10)
    instance = write_instance(c, tmp_path)
    out, report = str(tmp_path / 'solution.json'), str(tmp_path / 'report.json')
    manifest = str(tmp_path / 'run.json')
    assert main(['--seed', '10', '--manifest', manifest, 'solve', instance, '--out', out,
                 '--report', report]) == EXIT_OK
    recorded = [(tmp_path / name).read_text() for name in ('solution.json', 'report.json')]
    (tmp_path / 'solution.json').unlink()
    (tmp_path / 'report.json').unlink()

    assert main(['replay', manifest]) == EXIT_OK
    replayed = [(tmp_path / name).read_text() for name in ('solution.json', 'report.json')]
    assert replayed == recorded

    broken = tmp_path / 'broken.json'
    broken.write_text('{"argv": "solve"}')
    assert main(['replay', str(broken)]) == EXIT_PARSE


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv('ORTHOCUT_SEED', '11')
    out = str(tmp_path / 'env.csv')
    assert main(['alpha', '--d', '2', '--samples', '1000', '--out', out]) == EXIT_OK
    manifest = RunManifest.load(out + '.manifest.json')
    assert manifest.seed == 11 and manifest.argv[:2] == ['--seed', '11']

    explicit = str(tmp_path / 'explicit.csv')
    monkeypatch.delenv('ORTHOCUT_SEED')
    assert main(['--seed', '11', 'alpha', '--d', '2', '--samples', '1000',
                 '--out', explicit]) == EXIT_OK
    pd.testing.assert_frame_equal(pd.read_csv(out), pd.read_csv(explicit))

    monkeypatch.setenv('ORTHOCUT_SEED', 'abc')
    assert main(['alpha', '--method', 'closed']) == EXIT_PARSE


def test_manifest_validation():
    with pytest.raises(InputError):
        RunManifest.from_dict({'argv': ['solve', 'x.json']})
    with pytest.raises(InputError):
        RunManifest.from_dict([])


def test_usage_errors():
    with pytest.raises(SystemExit) as exit_info:
        main(['solve'])
    assert exit_info.value.code == EXIT_PARSE
    with pytest.raises(SystemExit):
        main(['alpha', '--d', 'one'])
