'''
ExperimentRunner - Scenario files, training runs and their outputs.

A scenario is a YAML file naming the grid, the field mask (a sibling text file),
the team size, the learner settings and the seeds of the replicates. Running a
scenario trains one replicate per seed and writes, per replicate:

    <name>_<mode>_<scheme>_seed<N>.csv             episode table
    <name>_<mode>_<scheme>_seed<N>.summary.yaml    config echo and convergence summary
    <name>_<mode>_<scheme>_seed<N>.theta.h5        trained parameters
    <name>_<mode>_<scheme>_seed<N>.trajectory.csv  joint states of the greedy evaluation

Command line
------------
    coveragemarl run <scenario> [--scheme fsr|rbf|tabular|baseline] [--mode ce|baseline]
                     [--seed N] [--episodes N] [--max-steps N] [--out DIR] [--ncores N]
    coveragemarl summarize <episodes.csv>
    coveragemarl optima <scenario> [--show N]

<scenario> is a path or the name of a shipped scenario (sim3uav, lab2uav, tiny1uav, tiny2uav).
The environment variable COVERAGE_MARL_LOG (error, info or debug) sets the verbosity.

Classes
-------
    ScenarioError - Invalid scenario file, with file and line

    Scenario - Everything needed to train the replicates of an experiment

Functions
---------
    resolve_scenario - Path of a scenario given a path or a shipped name

    load_scenario - Reads and validates a scenario file

    apply_overrides - Scenario with command line values substituted

    episodes_frame / write_episode_csv / read_episode_csv - Episode tables

    summarize - Per-phase step statistics and the convergence verdict

    run_replicate - Trains one seed and writes its outputs

    run - Trains every replicate of a scenario

    configure_logging - Installs the package log handler

    main - Command line entry point
'''

import argparse
import dataclasses
import logging
import math
import multiprocessing
import os
import sys
from dataclasses import dataclass
from typing import List

import numpy as np
import pandas as pd
import yaml

from coveragemarl.ArrayMechanics import external, workerLimit
from coveragemarl.CoverageGrid import (CoverageEnvironment, FieldMaskError, GridSpec,
                                       enumerate_goal_states, load_field_mask, render_field)
from coveragemarl.FeatureSchemes import memory_footprint
from coveragemarl.MultiAgentLearner import LearnerConfig, LearnerMode, save_parameters, train

logger = logging.getLogger(__name__)

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'scenarios')
CSV_SCHEMA = '# coveragemarl-episodes v1'
CSV_COLUMNS = ['episode', 'steps', 'goal_reached', 'coverage_sum', 'overlap_sum', 'cumulative_reward', 'epsilon']
FLOAT_FORMAT = '%.10g'
MAX_AGENTS = 4
N_PHASES = 10

LOG_LEVELS = {'error': logging.ERROR, 'info': logging.INFO, 'debug': logging.DEBUG}
LOG_ENV = 'COVERAGE_MARL_LOG'

_REQUIRED = object()
_LEARNER_KEYS = [f.name for f in dataclasses.fields(LearnerConfig) if f.name != 'seed']
_LEARNER_KINDS = {'mode': str, 'scheme': str, 'episodes': int, 'max_steps': int,
                  'rbf_centers': int, 'checkpoint_every': int}


class ScenarioError(ValueError):

    '''
    ScenarioError - Invalid scenario file; str() reads "<path>:<line>: <message>"
    '''

    def __init__(self, message, path=None, line=None):
        self.message = message
        self.path = path
        self.line = line
        location = ''
        if path is not None: location = "%s:%s: " % (path, line if line is not None else '?')
        super().__init__(location + message)


@dataclass(frozen=True)
class Scenario():

    '''
    Scenario - Everything needed to train the replicates of an experiment

    Parameters
    ----------
        name: str
        grid: GridSpec
        field: FieldMask
        field_path: str
        n_agents: int
        config: LearnerConfig
            - seed is that of the first replicate
        output: str
            - Output directory
        seeds: list of int
            - One per replicate
        overlap_on_field_only: bool
        path: str or None
            - Scenario file
    '''

    name: str
    grid: GridSpec
    field: object
    field_path: str
    n_agents: int
    config: LearnerConfig
    output: str
    seeds: List[int]
    overlap_on_field_only: bool = False
    path: str = None

    @property
    def replicates(self):
        return len(self.seeds)

    def environment(self):
        return CoverageEnvironment(self.grid, self.field, self.n_agents, reward=self.config.reward,
                                   fb=self.config.fb, overlap_on_field_only=self.overlap_on_field_only)

    def stem(self, seed):
        scheme = self.config.scheme if self.config.learner_mode is LearnerMode.CE else 'tabular'
        return "%s_%s_%s_seed%d" % (self.name, self.config.mode, scheme, seed)


def resolve_scenario(name):

    '''
    resolve_scenario - Path of a scenario file given its path or a shipped scenario name
    '''

    if os.path.isfile(name): return name
    shipped = os.path.join(SCENARIO_DIR, name if name.endswith('.yaml') else name + '.yaml')
    if os.path.isfile(shipped): return shipped

    raise ScenarioError("No scenario file or shipped scenario called %r" % name)


class _Reader():

    # Typed access into the parsed YAML, reporting the node's line on failure

    def __init__(self, path, node, data):
        self.path = path
        self.node = node
        self.data = data

    def line(self, *keys):
        node = self.node
        line = node.start_mark.line + 1
        for key in keys:
            if not isinstance(node, yaml.MappingNode): break
            for key_node, value_node in node.value:
                if key_node.value == key:
                    node = value_node
                    line = value_node.start_mark.line + 1
                    break
            else: break
        return line

    def error(self, message, *keys):
        return ScenarioError(message, path=self.path, line=self.line(*keys))

    def section(self, key, required=True):
        value = self.data.get(key) if isinstance(self.data, dict) else None
        if value is None:
            if required: raise self.error("missing section '%s'" % key)
            return {}
        if not isinstance(value, dict): raise self.error("'%s' must be a mapping" % key, key)
        return value

    def check_keys(self, mapping, allowed, *keys):
        for key in mapping:
            if key not in allowed:
                raise self.error("unknown key '%s' (expected one of %s)" % (key, ', '.join(allowed)), *(keys + (key,)))

    def get(self, mapping, key, kind, *path, default=_REQUIRED):
        if key not in mapping or mapping[key] is None:
            if default is _REQUIRED: raise self.error("missing key '%s'" % '.'.join(path + (key,)), *path)
            return default
        value = mapping[key]
        try:
            if kind is bool:
                if not isinstance(value, bool): raise TypeError
                return value
            if kind is int and (isinstance(value, bool) or int(value) != value): raise TypeError
            return kind(value)
        except (TypeError, ValueError):
            raise self.error("'%s' must be %s, got %r" % ('.'.join(path + (key,)), kind.__name__, value), *(path + (key,)))


def load_scenario(path):

    '''
    load_scenario - Reads and validates a scenario file

    Parameters
    ----------
        path: str
            - Scenario YAML file (or a shipped scenario name)

    Returns
    -------
        scenario: Scenario

    Raises
    ------
        ScenarioError - with the file and the line of the offending value
    '''

    path = resolve_scenario(path)
    try:
        with open(path) as f: text = f.read()
    except OSError as err:
        raise ScenarioError("cannot read scenario (%s)" % err, path=path)

    loader = yaml.SafeLoader(text)
    try:
        node = loader.get_single_node()
        data = loader.construct_document(node) if node is not None else None
    except yaml.YAMLError as err:
        mark = getattr(err, 'problem_mark', None)
        raise ScenarioError("YAML syntax error: %s" % getattr(err, 'problem', err), path=path,
                            line=mark.line+1 if mark is not None else None)
    finally:
        loader.dispose()

    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a YAML mapping", path=path, line=1)
    reader = _Reader(path, node, data)
    reader.check_keys(data, ['name', 'grid', 'field', 'agents', 'learner', 'run'])

    name = str(reader.get(data, 'name', str,
                          default=os.path.splitext(os.path.basename(path))[0]))

    # Grid
    grid_section = reader.section('grid')
    reader.check_keys(grid_section, ['dims', 'tan_theta'], 'grid')
    dims = grid_section.get('dims')
    if not isinstance(dims, list) or len(dims) != 3 or \
            not all(isinstance(d, int) and not isinstance(d, bool) and d >= 1 for d in dims):
        raise reader.error("grid.dims must be a list of three positive integers [X, Y, Z]", 'grid', 'dims')
    tan_theta = grid_section.get('tan_theta', [1.0, 1.0])
    if not isinstance(tan_theta, list) or len(tan_theta) != 2 or \
            not all(isinstance(t, (int, float)) and not isinstance(t, bool) and t > 0 for t in tan_theta):
        raise reader.error("grid.tan_theta must be a list of two positive numbers", 'grid', 'tan_theta')
    grid = GridSpec(*dims, *[float(t) for t in tan_theta])

    # Field
    field_section = reader.section('field')
    reader.check_keys(field_section, ['mask', 'overlap_on_field_only'], 'field')
    mask = reader.get(field_section, 'mask', str, 'field')
    field_path = mask if os.path.isabs(mask) else os.path.join(os.path.dirname(path), mask)
    try: field = load_field_mask(field_path, grid=grid)
    except (OSError, FieldMaskError) as err:
        raise reader.error("field mask %s: %s" % (mask, err), 'field', 'mask')
    overlap_on_field_only = reader.get(field_section, 'overlap_on_field_only', bool, 'field', default=False)

    # Agents
    n_agents = reader.get(data, 'agents', int)
    if not 1 <= n_agents <= MAX_AGENTS:
        raise reader.error("agents must lie in [1, %d], got %d" % (MAX_AGENTS, n_agents), 'agents')

    # Learner
    learner_section = reader.section('learner', required=False)
    reader.check_keys(learner_section, _LEARNER_KEYS, 'learner')
    kwargs = {}
    for key in learner_section:
        kind = _LEARNER_KINDS.get(key, float)
        kwargs[key] = reader.get(learner_section, key, kind, 'learner', default=None)
    kwargs = {key: value for key, value in kwargs.items() if value is not None}

    # Replicates
    run_section = reader.section('run', required=False)
    reader.check_keys(run_section, ['output', 'replicates', 'seeds'], 'run')
    output = reader.get(run_section, 'output', str, 'run', default='output')
    seeds = run_section.get('seeds')
    replicates = reader.get(run_section, 'replicates', int, 'run', default=None)
    if seeds is None:
        seeds = list(range(1, (replicates or 1) + 1))
    elif not isinstance(seeds, list) or not seeds or \
            not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds):
        raise reader.error("run.seeds must be a non-empty list of nonnegative integers", 'run', 'seeds')
    if replicates is not None and replicates != len(seeds):
        raise reader.error("run.replicates is %d but %d seeds are listed" % (replicates, len(seeds)), 'run', 'replicates')

    try: config = LearnerConfig(seed=seeds[0], **kwargs)
    except ValueError as err:
        key = next((k for k in kwargs if str(err).startswith(k + ' ')), None)
        raise reader.error("learner: %s" % err, *(('learner', key) if key else ('learner',)))

    if config.fb is not None and len(field) and config.fb > len(field):
        raise reader.error("fb = %r exceeds the %d field cells" % (config.fb, len(field)), 'learner', 'fb')

    scenario = Scenario(name=name, grid=grid, field=field, field_path=field_path, n_agents=n_agents,
                        config=config, output=output, seeds=list(seeds),
                        overlap_on_field_only=overlap_on_field_only, path=path)
    try: scenario.environment()
    except ValueError as err: raise reader.error(str(err))

    logger.info("Loaded scenario %s from %s: %dx%dx%d grid, %d field cells, %d agents",
                name, path, grid.dim_x, grid.dim_y, grid.dim_z, len(field), n_agents)
    return scenario

def apply_overrides(scenario, scheme=None, mode=None, seed=None, episodes=None, max_steps=None, out=None):

    '''
    apply_overrides - Scenario with command line values in place of the file's

    scheme='baseline' is shorthand for mode='baseline'. A seed replaces the seed list
    with that single seed.
    '''

    changes = {}
    if scheme == LearnerMode.Baseline.value:
        scheme, mode = None, LearnerMode.Baseline.value
    if scheme is not None: changes['scheme'] = scheme
    if mode is not None: changes['mode'] = mode
    if episodes is not None: changes['episodes'] = episodes
    if max_steps is not None: changes['max_steps'] = max_steps

    seeds = scenario.seeds if seed is None else [int(seed)]
    changes['seed'] = seeds[0]
    config = dataclasses.replace(scenario.config, **changes)

    return dataclasses.replace(scenario, config=config, seeds=seeds,
                               output=scenario.output if out is None else out)

def episodes_frame(logs):

    '''
    episodes_frame - DataFrame of EpisodeLogs with the CSV columns
    '''

    rows = [[log.episode, log.steps, bool(log.goal_reached), log.coverage_sum, log.overlap_sum,
             log.cumulative_reward, log.epsilon] for log in logs]
    return pd.DataFrame(rows, columns=CSV_COLUMNS)

def write_episode_csv(path, logs):

    '''
    write_episode_csv - Writes the schema line then the episode table
    '''

    frame = logs if isinstance(logs, pd.DataFrame) else episodes_frame(logs)
    with open(path, 'w', newline='') as f:
        f.write(CSV_SCHEMA + '\n')
        frame.to_csv(f, index=False, float_format=FLOAT_FORMAT)

def read_episode_csv(path):

    '''
    read_episode_csv - Reads an episode table written by write_episode_csv
    '''

    with open(path) as f: first = f.readline().rstrip('\n')
    if first != CSV_SCHEMA:
        raise ValueError("%s: expected the schema line %r, got %r" % (path, CSV_SCHEMA, first))
    frame = pd.read_csv(path, skiprows=1)
    missing = [c for c in CSV_COLUMNS if c not in frame.columns]
    if missing: raise ValueError("%s: missing columns %s" % (path, ', '.join(missing)))

    return frame

def summarize(logs, max_steps=None):

    '''
    summarize - Per-phase step statistics and the convergence verdict

    Parameters
    ----------
        logs: list of EpisodeLog or DataFrame with the CSV columns

    kwargs
    ------
        max_steps: int or None
            - Step cap, used for the share of capped final episodes

    Returns
    -------
        summary: dict
            - episodes, phases (10 consecutive slices with mean/median steps),
              final_episodes, final_goal_rate, final_median_steps, first_goal_episode
              (None if never), converged (final_goal_rate >= 0.9)
    '''

    frame = logs if isinstance(logs, pd.DataFrame) else episodes_frame(logs)
    if len(frame) == 0: raise ValueError("Cannot summarize an empty episode log")

    steps = frame['steps'].to_numpy()
    goals = frame['goal_reached'].astype(bool).to_numpy()
    episodes = frame['episode'].to_numpy()

    phases = []
    for k, chunk in enumerate(np.array_split(np.arange(len(frame)), min(N_PHASES, len(frame)))):
        phases.append({'phase': k, 'first_episode': int(episodes[chunk[0]]), 'last_episode': int(episodes[chunk[-1]]),
                       'mean_steps': float(steps[chunk].mean()), 'median_steps': float(np.median(steps[chunk]))})

    n_final = max(1, int(math.ceil(0.1*len(frame))))
    final_goal_rate = float(goals[-n_final:].mean())
    first_goal = int(episodes[np.argmax(goals)]) if goals.any() else None

    summary = {'episodes': int(len(frame)),
               'phases': phases,
               'final_episodes': n_final,
               'final_goal_rate': final_goal_rate,
               'final_median_steps': float(np.median(steps[-n_final:])),
               'first_goal_episode': first_goal,
               'converged': bool(final_goal_rate >= 0.9)}
    if max_steps is not None:
        summary['final_capped_rate'] = float(np.mean(steps[-n_final:] >= max_steps))

    return summary

def _footprint(scenario, result):

    m = scenario.n_agents
    tabular = memory_footprint('tabular', scenario.grid, m)
    if result.scheme is not None: per_agent = int(result.scheme.length)
    else: per_agent = int(np.prod(result.thetas.shape[1:]))

    return {'parameters_per_agent': per_agent,
            'joint_tabular_per_agent': int(tabular),
            'fraction_of_tabular': float(per_agent/tabular)}

def run_replicate(seed, scenario, progress=True):

    '''
    run_replicate - Trains one seed of a scenario and writes its four output files

    Returns
    -------
        summary: dict
    '''

    config = dataclasses.replace(scenario.config, seed=int(seed))
    env = scenario.environment()
    os.makedirs(scenario.output, exist_ok=True)
    stem = os.path.join(scenario.output, scenario.stem(seed))
    logger.info("Replicate seed %d started (%s)", seed, os.path.basename(stem))

    result = train(env, config, progress=progress, checkpoint_path=stem + '.theta.h5')

    write_episode_csv(stem + '.csv', result.logs)
    save_parameters(stem + '.theta.h5', result.thetas, result.scheme, episode=config.episodes)

    positions = [(k, i, agent[0], agent[1], agent[2])
                 for k, joint in enumerate(result.trajectory) for i, agent in enumerate(joint)]
    pd.DataFrame(positions, columns=['step', 'agent', 'x', 'y', 'z']).to_csv(stem + '.trajectory.csv', index=False)

    summary = summarize(result.logs, max_steps=config.max_steps) if result.logs else {'episodes': 0, 'converged': False}
    evaluation = dataclasses.asdict(result.evaluation)
    evaluation.pop('duration')
    record = {'scenario': scenario.name,
              'scenario_file': scenario.path,
              'field_mask': scenario.field_path,
              'grid': {'dims': list(scenario.grid.shape),
                       'tan_theta': [scenario.grid.tan_theta_1, scenario.grid.tan_theta_2]},
              'field_cells': len(scenario.field),
              'agents': scenario.n_agents,
              'overlap_on_field_only': scenario.overlap_on_field_only,
              'learner': dataclasses.asdict(config),
              'summary': summary,
              'greedy_evaluation': evaluation,
              'lp_solves': int(result.lp_solves),
              'memory': _footprint(scenario, result)}
    with open(stem + '.summary.yaml', 'w') as f:
        yaml.safe_dump(record, f, sort_keys=False)

    logger.info("Replicate seed %d finished: converged %s, final goal rate %.2f, outputs %s.*",
                seed, summary['converged'], summary.get('final_goal_rate', 0.), stem)
    return summary

def _guarded_replicate(seed, scenario, progress):
    # Replicate failures are reported, never raised, so siblings keep running
    try: return seed, run_replicate(seed, scenario, progress=progress), None
    except Exception as err:
        logger.error("Replicate seed %d failed: %s", seed, err, exc_info=logger.isEnabledFor(logging.DEBUG))
        return seed, None, "%s: %s" % (type(err).__name__, err)

def run(scenario, ncores=1, progress=True):

    '''
    run - Trains every replicate of a scenario

    Parameters
    ----------
        scenario: Scenario

    kwargs
    ------
        ncores: int
            - Worker processes for the replicates (<=0 for every physical core)
        progress: bool

    Returns
    -------
        exit_code: int
            - 0 when every replicate finished, 1 otherwise
    '''

    nworkers = workerLimit(len(scenario.seeds), ncores)
    if nworkers > 1:
        logger.info("Running %d replicates on %d cores", len(scenario.seeds), nworkers)
        func = external(_guarded_replicate, args=(scenario, False))
        with multiprocessing.Pool(nworkers) as pool:
            results = pool.map(func, scenario.seeds, chunksize=1)
    else:
        results = [_guarded_replicate(seed, scenario, progress) for seed in scenario.seeds]

    failed = [seed for seed, _, error in results if error is not None]
    if failed: logger.error("%d of %d replicates failed (seeds %s)", len(failed), len(results), failed)

    return 1 if failed else 0

def configure_logging():

    '''
    configure_logging - One stream handler on the package logger, level from COVERAGE_MARL_LOG
    '''

    name = os.environ.get(LOG_ENV, 'info').strip().lower()
    package = logging.getLogger('coveragemarl')
    package.setLevel(LOG_LEVELS.get(name, logging.INFO))
    if not package.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(name)s: %(message)s'))
        package.addHandler(handler)
    if name not in LOG_LEVELS:
        package.warning("Unknown %s=%r, using info", LOG_ENV, name)

    return package

def _parser():

    parser = argparse.ArgumentParser(prog='coveragemarl',
                                     description='Multi-agent CE Q-learning for UAV field coverage')
    sub = parser.add_subparsers(dest='command', required=True)

    p_run = sub.add_parser('run', help='train every replicate of a scenario')
    p_run.add_argument('scenario', help='scenario file or shipped scenario name')
    p_run.add_argument('--scheme', choices=['fsr', 'rbf', 'tabular', 'baseline'])
    p_run.add_argument('--mode', choices=['ce', 'baseline'])
    p_run.add_argument('--seed', type=int)
    p_run.add_argument('--episodes', type=int)
    p_run.add_argument('--max-steps', dest='max_steps', type=int)
    p_run.add_argument('--out')
    p_run.add_argument('--ncores', type=int, default=1)
    p_run.add_argument('--no-progress', dest='progress', action='store_false')

    p_sum = sub.add_parser('summarize', help='summary of an episode CSV')
    p_sum.add_argument('csv')
    p_sum.add_argument('--max-steps', dest='max_steps', type=int)

    p_opt = sub.add_parser('optima', help='optimal configurations of a small scenario')
    p_opt.add_argument('scenario')
    p_opt.add_argument('--show', type=int, default=3)

    return parser

def main(argv=None):

    '''
    main - Command line entry point; returns the exit code
    '''

    args = _parser().parse_args(argv)
    configure_logging()

    if args.command == 'summarize':
        try: frame = read_episode_csv(args.csv)
        except (OSError, ValueError) as err:
            logger.error("%s", err)
            return 1
        print(yaml.safe_dump(summarize(frame, max_steps=args.max_steps), sort_keys=False), end='')
        return 0

    try:
        scenario = load_scenario(args.scenario)
        if args.command == 'run':
            scenario = apply_overrides(scenario, scheme=args.scheme, mode=args.mode, seed=args.seed,
                                       episodes=args.episodes, max_steps=args.max_steps, out=args.out)
    except (ScenarioError, ValueError) as err:
        logger.error("%s", err)
        return 2

    if args.command == 'run':
        return run(scenario, ncores=args.ncores, progress=args.progress)

    env = scenario.environment()
    try: goals = enumerate_goal_states(env)
    except ValueError as err:
        logger.error("%s", err)
        return 1
    print("%s: %d optimal joint states" % (scenario.name, len(goals)))
    for joint in goals[:args.show]:
        print("%s\n%s\n" % ([tuple(agent) for agent in joint], render_field(env, joint)))

    return 0


if __name__ == '__main__':
    sys.exit(main())
