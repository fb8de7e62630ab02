import logging
import os

import numpy as np
import pytest
import yaml

from coveragemarl.ExperimentRunner import (CSV_COLUMNS, CSV_SCHEMA, LOG_ENV, ScenarioError, apply_overrides,
                                           configure_logging, episodes_frame, load_scenario, main,
                                           read_episode_csv, resolve_scenario, run, summarize,
                                           write_episode_csv)
from coveragemarl.FeatureSchemes import load_checkpoint
from coveragemarl.MultiAgentLearner import EpisodeLog, LearnerMode


SCENARIO = '''name: small
grid:
  dims: [3, 3, 2]
  tan_theta: [0.5, 0.5]
field:
  mask: field.txt
agents: 2
learner:
  scheme: tabular
  alpha: 0.5
run:
  seeds: [1]
'''

def write_scenario(tmp_path, text=SCENARIO, mask='...\n#.#\n...\n'):
    (tmp_path / 'field.txt').write_text(mask)
    path = tmp_path / 'small.yaml'
    path.write_text(text)
    return str(path)

def make_logs(steps, goals):
    return [EpisodeLog(episode=e, steps=s, goal_reached=g, coverage_sum=2 if g else 1, overlap_sum=0,
                       cumulative_reward=0.1 if g else 0., epsilon=0.5)
            for e, (s, g) in enumerate(zip(steps, goals))]


def test_shipped_scenarios_load():
    scenario = load_scenario('sim3uav')
    assert scenario.grid.shape == (7, 7, 5)
    assert scenario.n_agents == 3
    assert len(scenario.field) == 16
    assert scenario.seeds == [1, 2, 3]
    assert scenario.config.scheme == 'fsr'
    assert scenario.config.max_steps == 2000
    assert scenario.config.checkpoint_every == 250
    assert scenario.config.seed == 1
    assert scenario.environment().fb == 16

    for name in ('lab2uav', 'tiny1uav', 'tiny2uav'):
        assert load_scenario(name).name == name
    assert load_scenario('tiny2uav').grid.tan_theta_1 == 0.5

def test_resolve_scenario(tmp_path):
    path = write_scenario(tmp_path)
    assert resolve_scenario(path) == path
    assert resolve_scenario('tiny2uav').endswith(os.path.join('scenarios', 'tiny2uav.yaml'))
    with pytest.raises(ScenarioError):
        resolve_scenario('no_such_scenario')

def test_custom_scenario(tmp_path):
    scenario = load_scenario(write_scenario(tmp_path))
    assert scenario.name == 'small'
    assert scenario.config.alpha == 0.5
    assert scenario.config.scheme == 'tabular'
    assert scenario.output == 'output'
    assert scenario.replicates == 1
    assert scenario.stem(1) == 'small_ce_tabular_seed1'

def test_unknown_key_reports_line(tmp_path):
    path = write_scenario(tmp_path, SCENARIO.replace('  alpha: 0.5', '  alhpa: 0.5'))
    with pytest.raises(ScenarioError) as err:
        load_scenario(path)
    assert err.value.line == 10
    assert 'alhpa' in str(err.value)
    assert str(err.value).startswith('%s:10: ' % path)

def test_bad_learner_value_reports_line(tmp_path):
    path = write_scenario(tmp_path, SCENARIO.replace('  alpha: 0.5', '  alpha: 2.0'))
    with pytest.raises(ScenarioError) as err:
        load_scenario(path)
    assert err.value.line == 10
    assert 'alpha must be' in str(err.value)

def test_mask_mismatch_reports_line(tmp_path):
    path = write_scenario(tmp_path, mask='....\n#..#\n....\n')
    with pytest.raises(ScenarioError) as err:
        load_scenario(path)
    assert err.value.line == 6

def test_missing_mask(tmp_path):
    path = write_scenario(tmp_path)
    os.remove(tmp_path / 'field.txt')
    with pytest.raises(ScenarioError) as err:
        load_scenario(path)
    assert err.value.line == 6

def test_too_many_agents(tmp_path):
    path = write_scenario(tmp_path, SCENARIO.replace('agents: 2', 'agents: 5'))
    with pytest.raises(ScenarioError) as err:
        load_scenario(path)
    assert err.value.line == 7

def test_bad_grid_and_seeds(tmp_path):
    for old, new in (('dims: [3, 3, 2]', 'dims: [3, 3]'), ('dims: [3, 3, 2]', 'dims: [3, 0, 2]'),
                     ('tan_theta: [0.5, 0.5]', 'tan_theta: [0.5, -1]'), ('seeds: [1]', 'seeds: []'),
                     ('seeds: [1]', 'seeds: [1, 2]\n  replicates: 3')):
        with pytest.raises(ScenarioError):
            load_scenario(write_scenario(tmp_path, SCENARIO.replace(old, new)))

def test_name_defaults_to_file_name(tmp_path):
    assert load_scenario(write_scenario(tmp_path, SCENARIO.replace('name: small\n', ''))).name == 'small'

def test_yaml_syntax_error(tmp_path):
    path = write_scenario(tmp_path, SCENARIO.replace('agents: 2', 'agents: [2'))
    with pytest.raises(ScenarioError) as err:
        load_scenario(path)
    assert err.value.line is not None

def test_replicates_without_seeds(tmp_path):
    path = write_scenario(tmp_path, SCENARIO.replace('seeds: [1]', 'replicates: 3'))
    assert load_scenario(path).seeds == [1, 2, 3]

def test_overrides(tmp_path):
    scenario = load_scenario(write_scenario(tmp_path))
    changed = apply_overrides(scenario, scheme='baseline', seed=7, episodes=3, max_steps=9, out=str(tmp_path))
    assert changed.config.learner_mode is LearnerMode.Baseline
    assert changed.seeds == [7]
    assert changed.config.seed == 7
    assert (changed.config.episodes, changed.config.max_steps) == (3, 9)
    assert changed.output == str(tmp_path)
    assert changed.stem(7) == 'small_baseline_tabular_seed7'
    assert apply_overrides(scenario, scheme='fsr').config.scheme == 'fsr'
    assert scenario.config.learner_mode is LearnerMode.CE
    with pytest.raises(ValueError):
        apply_overrides(scenario, episodes=-1)


def test_summarize_converged_run():
    logs = make_logs([50]*10 + [5]*10, [False]*10 + [True]*10)
    summary = summarize(logs, max_steps=50)
    assert summary['episodes'] == 20
    assert len(summary['phases']) == 10
    assert summary['phases'][0] == {'phase': 0, 'first_episode': 0, 'last_episode': 1,
                                    'mean_steps': 50., 'median_steps': 50.}
    assert summary['phases'][-1]['median_steps'] == 5.
    assert summary['final_episodes'] == 2
    assert summary['final_goal_rate'] == 1.
    assert summary['final_median_steps'] == 5.
    assert summary['first_goal_episode'] == 10
    assert summary['converged']
    assert summary['final_capped_rate'] == 0.

def test_summarize_failed_run():
    summary = summarize(make_logs([30]*5, [False]*5), max_steps=30)
    assert len(summary['phases']) == 5
    assert summary['final_episodes'] == 1
    assert summary['first_goal_episode'] is None
    assert not summary['converged']
    assert summary['final_capped_rate'] == 1.
    with pytest.raises(ValueError):
        summarize([])

def test_episode_csv(tmp_path):
    logs = make_logs([4, 7, 2], [True, False, True])
    path = tmp_path / 'episodes.csv'
    write_episode_csv(path, logs)
    assert path.read_text().splitlines()[0] == CSV_SCHEMA
    assert path.read_text().splitlines()[1] == ','.join(CSV_COLUMNS)

    frame = read_episode_csv(path)
    assert list(frame['steps']) == [4, 7, 2]
    assert list(frame['goal_reached']) == [True, False, True]
    assert np.allclose(frame['cumulative_reward'], [0.1, 0., 0.1])
    assert summarize(frame) == summarize(logs)
    assert episodes_frame(logs).shape == (3, len(CSV_COLUMNS))

    bad = tmp_path / 'plain.csv'
    bad.write_text(','.join(CSV_COLUMNS) + '\n1,1,True,1,0,0.1,0.5\n')
    with pytest.raises(ValueError):
        read_episode_csv(bad)


def _run_small(tmp_path, out, *extra):
    scenario = write_scenario(tmp_path)
    return main(['run', scenario, '--episodes', '4', '--max-steps', '15', '--out', str(out), '--no-progress'] + list(extra))

def test_run_is_reproducible(tmp_path):
    assert _run_small(tmp_path, tmp_path / 'a') == 0
    assert _run_small(tmp_path, tmp_path / 'b') == 0
    for suffix in ('.csv', '.trajectory.csv', '.summary.yaml'):
        name = 'small_ce_tabular_seed1' + suffix
        assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes()

def test_run_outputs(tmp_path):
    assert _run_small(tmp_path, tmp_path / 'out') == 0
    stem = tmp_path / 'out' / 'small_ce_tabular_seed1'

    frame = read_episode_csv(str(stem) + '.csv')
    assert list(frame['episode']) == [0, 1, 2, 3]

    with open(str(stem) + '.summary.yaml') as f: record = yaml.safe_load(f)
    assert record['scenario'] == 'small'
    assert record['learner']['seed'] == 1
    assert record['learner']['episodes'] == 4
    assert record['summary']['episodes'] == 4
    assert record['lp_solves'] >= record['greedy_evaluation']['steps']
    assert record['memory']['parameters_per_agent'] == 18**2*36

    thetas, scheme = load_checkpoint(str(stem) + '.theta.h5')
    assert thetas.shape == (2, scheme.length)

    trajectory = np.loadtxt(str(stem) + '.trajectory.csv', delimiter=',', skiprows=1)
    assert len(trajectory) == 2*(record['greedy_evaluation']['steps'] + 1)

def test_baseline_run(tmp_path):
    assert _run_small(tmp_path, tmp_path / 'out', '--scheme', 'baseline') == 0
    with open(tmp_path / 'out' / 'small_baseline_tabular_seed1.summary.yaml') as f: record = yaml.safe_load(f)
    assert record['lp_solves'] == 0
    assert record['learner']['mode'] == 'baseline'

def test_every_replicate_runs(tmp_path):
    scenario = load_scenario(write_scenario(tmp_path, SCENARIO.replace('seeds: [1]', 'seeds: [1, 2, 3]')))
    scenario = apply_overrides(scenario, episodes=2, max_steps=10, out=str(tmp_path / 'out'))
    assert run(scenario, ncores=1, progress=False) == 0
    for seed in (1, 2, 3):
        assert (tmp_path / 'out' / ('small_ce_tabular_seed%d.csv' % seed)).exists()

def test_failed_replicate_sets_exit_code(tmp_path, monkeypatch):
    import coveragemarl.ExperimentRunner as runner
    scenario = apply_overrides(load_scenario(write_scenario(tmp_path)), episodes=1, max_steps=5,
                               out=str(tmp_path / 'out'))
    def broken(*args, **kwargs): raise RuntimeError('boom')
    monkeypatch.setattr(runner, 'train', broken)
    assert run(scenario, progress=False) == 1

def test_summarize_command(tmp_path, capsys):
    path = tmp_path / 'episodes.csv'
    write_episode_csv(path, make_logs([9, 3], [False, True]))
    assert main(['summarize', str(path)]) == 0
    summary = yaml.safe_load(capsys.readouterr().out)
    assert summary['episodes'] == 2
    assert summary['first_goal_episode'] == 1

    path.write_text('episode,steps\n1,2\n')
    assert main(['summarize', str(path)]) == 1

def test_optima_command(capsys):
    assert main(['optima', 'tiny2uav', '--show', '1']) == 0
    out = capsys.readouterr().out
    assert out.startswith('tiny2uav: 26 optimal joint states')

def test_bad_scenario_exit_code(tmp_path):
    assert main(['run', str(tmp_path / 'missing.yaml')]) == 2
    path = write_scenario(tmp_path, SCENARIO.replace('agents: 2', 'agents: 9'))
    assert main(['optima', path]) == 2

def test_log_level_from_environment(monkeypatch):
    package = logging.getLogger('coveragemarl')
    monkeypatch.setenv(LOG_ENV, 'debug')
    assert configure_logging().level == logging.DEBUG
    monkeypatch.setenv(LOG_ENV, 'error')
    assert configure_logging().level == logging.ERROR
    monkeypatch.setenv(LOG_ENV, 'chatty')
    assert configure_logging().level == logging.INFO
    assert len(package.handlers) == 1
