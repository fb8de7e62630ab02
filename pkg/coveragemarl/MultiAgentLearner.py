'''
MultiAgentLearner - Episodic training of the coverage team.

In CE mode every agent keeps a linear approximation of the joint Q-function. At
each step the agents either explore (a uniformly drawn collision-free joint action)
or solve the correlated equilibrium of their current Q-values and all take the
joint action it recommends. The team reward is paid on the successor state and
each agent updates its own parameters towards it.

In Baseline mode agents are independent tabular Q-learners on their own cell,
rewarded for their own coverage minus a penalty per overlapped cell. They never
solve an LP.

Classes
-------
    LearnerMode - ce or baseline

    LearnerConfig - Learning rates, exploration schedule and episode limits

    EpisodeLog - Outcome of one episode

    TrainResult - Parameters, episode logs and the final greedy evaluation

Functions
---------
    epsilon_at - Exploration rate of an episode

    step_ce - One CE-mode step

    update_agents - Approximated Q-learning update of every agent

    step_baseline - One independent-learner step

    update_baseline - Tabular Q-learning update of every independent learner

    run_episode - One episode from a random collision-free start

    train - Runs every episode and a final greedy evaluation

    save_parameters - Writes trained parameters to HDF5

Requirements
------------

CoverageGrid.py
CorrelatedEquilibrium.py
FeatureSchemes.py
SimplexSolver.py
'''

import enum
import logging
import time
from dataclasses import dataclass, field as dc_field
from typing import List, Optional

import h5py
import numpy as np
from tqdm import tqdm

from coveragemarl.ArrayMechanics import digit_table
from coveragemarl.CoverageGrid import (N_ACTIONS, Action, apply_joint_action, individual_reward,
                                       joint_action_from_index, random_joint_state)
from coveragemarl.CorrelatedEquilibrium import (CESolveError, JointActionTable, filter_collisions,
                                                select_joint_action, solve_ce)
from coveragemarl.FeatureSchemes import (SchemeVariant, action_values, best_joint_q, make_scheme,
                                         save_checkpoint, td_update)
from coveragemarl.SimplexSolver import SimplexSolver

logger = logging.getLogger(__name__)


class LearnerMode(enum.Enum):
    CE = 'ce'
    Baseline = 'baseline'


@dataclass(frozen=True)
class LearnerConfig():

    '''
    LearnerConfig - Learning rates, exploration schedule and episode limits

    Parameters
    ----------
        alpha: float in (0, 1]
            - Learning rate
        gamma: float in (0, 1]
            - Discount
        epsilon0: float in [0, 1]
            - Exploration rate of episode 0
        epsilon_decay: float in (0, 1]
            - Per-episode multiplicative decay
        epsilon_floor: float in [0, 1]
            - Smallest exploration rate once decayed
        episodes: int
        max_steps: int
            - Step cap per episode
        reward: float
            - Team reward r
        fb: float or None
            - Coverage bound, |F| when None
        seed: int
        scheme: str
            - fsr, rbf or tabular (CE mode)
        mode: str
            - ce or baseline
        rbf_centers: int
            - L
        coverage_unit, overlap_penalty: float
            - Baseline individual reward coverage_unit*f_i - overlap_penalty*o_i
        checkpoint_every: int
            - Episodes between checkpoints, 0 for none
    '''

    alpha: float = 0.1
    gamma: float = 0.9
    epsilon0: float = 0.9
    epsilon_decay: float = 0.997
    epsilon_floor: float = 0.01
    episodes: int = 2000
    max_steps: int = 2000
    reward: float = 0.1
    fb: Optional[float] = None
    seed: int = 0
    scheme: str = 'fsr'
    mode: str = 'ce'
    rbf_centers: int = 8
    coverage_unit: float = 1.0
    overlap_penalty: float = 0.01
    checkpoint_every: int = 0

    def __post_init__(self):

        checks = [('alpha', 0 < self.alpha <= 1, "(0, 1]"),
                  ('gamma', 0 < self.gamma <= 1, "(0, 1]"),
                  ('epsilon0', 0 <= self.epsilon0 <= 1, "[0, 1]"),
                  ('epsilon_decay', 0 < self.epsilon_decay <= 1, "(0, 1]"),
                  ('epsilon_floor', 0 <= self.epsilon_floor <= 1, "[0, 1]"),
                  ('episodes', self.episodes >= 0, ">= 0"),
                  ('max_steps', self.max_steps >= 1, ">= 1"),
                  ('reward', self.reward > 0, "> 0"),
                  ('rbf_centers', self.rbf_centers >= 1, ">= 1"),
                  ('overlap_penalty', self.overlap_penalty >= 0, ">= 0"),
                  ('checkpoint_every', self.checkpoint_every >= 0, ">= 0")]
        for name, ok, bound in checks:
            if not ok: raise ValueError("%s must be %s, got %r" % (name, bound, getattr(self, name)))
        if self.fb is not None and self.fb <= 0:
            raise ValueError("fb must be positive, got %r" % (self.fb,))

        # Normalise the enumerations, raising ValueError on unknown names
        object.__setattr__(self, 'mode', LearnerMode(self.mode).value)
        object.__setattr__(self, 'scheme', SchemeVariant(self.scheme).value)

    @property
    def learner_mode(self):
        return LearnerMode(self.mode)


@dataclass(frozen=True)
class EpisodeLog():

    episode: int
    steps: int
    goal_reached: bool
    coverage_sum: int
    overlap_sum: int
    cumulative_reward: float
    epsilon: float
    duration: float = dc_field(default=0., compare=False)


@dataclass
class TrainResult():

    '''
    TrainResult - Output of train

    Attributes
    ----------
        thetas: np.array of float
            - CE mode: (m x length) parameter vectors.
              Baseline: (m x n_cells x 6) individual Q tables
        logs: list of EpisodeLog
        evaluation: EpisodeLog
            - Final greedy (epsilon = 0) episode without learning
        trajectory: list of JointState
            - Joint states visited by the evaluation episode, start included
        lp_solves: int
            - CE LPs settled during training and evaluation, by the simplex or its presolve
        scheme: FeatureScheme or None (Baseline)
    '''

    thetas: np.ndarray
    logs: List[EpisodeLog]
    evaluation: EpisodeLog
    trajectory: list
    lp_solves: int
    scheme: object = None


def epsilon_at(episode, config):

    '''
    epsilon_at - epsilon0*epsilon_decay**episode, floored at epsilon_floor

    The floor never lifts the rate above epsilon0, so epsilon0 = 0 stays greedy.
    '''

    floor = min(config.epsilon_floor, config.epsilon0)
    return max(config.epsilon0*config.epsilon_decay**episode, floor)

def _explore(admissible, rng):
    return int(admissible[rng.integers(len(admissible))])

def step_ce(S, thetas, env, config, rng, scheme, epsilon, solver=None, admissible=None):

    '''
    step_ce - One CE-mode step

    With probability epsilon a uniformly drawn admissible joint action is taken.
    Otherwise every agent's Q-values over all joint actions form a JointActionTable
    whose CE gives the joint action. A failed CE solve falls back to exploration.

    Parameters
    ----------
        S: JointState
        thetas: np.array of float (m x length)
        env: CoverageEnvironment
        config: LearnerConfig
        rng: np.random.Generator
        scheme: FeatureScheme
        epsilon: float

    kwargs
    ------
        solver: SimplexSolver or None
        admissible: array of int or None
            - filter_collisions(S), computed when None

    Returns
    -------
        A: JointAction
        S_next: JointState
        reward: float
            - Team reward of S_next
    '''

    if admissible is None: admissible = filter_collisions(S, env.grid)

    if rng.random() < epsilon:
        A = joint_action_from_index(_explore(admissible, rng), env.n_agents)
    else:
        table = JointActionTable([action_values(theta, S, scheme) for theta in thetas])
        try:
            A = select_joint_action(solve_ce(table, solver), admissible)
        except CESolveError as err:
            logger.debug("CE solve failed at %r, exploring instead: %s", list(S), err)
            A = joint_action_from_index(_explore(admissible, rng), env.n_agents)

    S_next = apply_joint_action(S, A, env.grid)
    return A, S_next, env(S_next)

def update_agents(thetas, S, A, reward, S_next, config, scheme, admissible_next=None):

    '''
    update_agents - td_update of every agent towards reward + gamma*max Q(S_next, .)

    Each agent bootstraps from its own pre-update parameters over the admissible
    joint actions at S_next.

    Returns
    -------
        thetas: np.array of float (m x length), a new array
    '''

    if admissible_next is None: admissible_next = filter_collisions(S_next, scheme.grid)
    phi = scheme(S, A)

    updated = np.array(thetas, dtype=float, copy=True)
    for i in range(len(updated)):
        _, max_next = best_joint_q(updated[i], S_next, scheme, admissible_next)
        td_update(updated[i], phi, reward, max_next, config.alpha, config.gamma, inplace=True)

    return updated

def step_baseline(S, qtables, env, config, rng, epsilon, admissible=None):

    '''
    step_baseline - One independent-learner step

    Exploration is the same uniform admissible draw as CE mode. Otherwise agents pick
    in rank order, each taking its best individual action (lowest action on ties)
    among those which still complete to an admissible joint action.

    Parameters
    ----------
        S: JointState
        qtables: np.array of float (m x n_cells x 6)
        env: CoverageEnvironment
        config: LearnerConfig
        rng: np.random.Generator
        epsilon: float

    Returns
    -------
        A: JointAction
        S_next: JointState
        rewards: np.array of float (m)
            - coverage_unit*f_i - overlap_penalty*o_i on S_next
    '''

    m = env.n_agents
    if admissible is None: admissible = filter_collisions(S, env.grid)

    if rng.random() < epsilon:
        A = joint_action_from_index(_explore(admissible, rng), m)
    else:
        rows = digit_table(N_ACTIONS, m)[admissible]
        picks = []
        for i in range(m):
            values = qtables[i, env.grid.cell_index(S[i])]
            allowed = np.zeros(N_ACTIONS, dtype=bool)
            allowed[rows[:, i]] = True
            best = int(np.argmax(np.where(allowed, values, -np.inf)))
            picks.append(Action(best))
            rows = rows[rows[:, i] == best]
        A = tuple(picks)

    S_next = apply_joint_action(S, A, env.grid)
    rewards = np.array([individual_reward(S_next, i, env.field, env.grid,
                                          coverage_unit=config.coverage_unit,
                                          overlap_penalty=config.overlap_penalty,
                                          overlap_on_field_only=env.overlap_on_field_only)
                        for i in range(m)])

    return A, S_next, rewards

def update_baseline(qtables, S, A, rewards, S_next, config, grid):

    '''
    update_baseline - Q_i(s_i, a_i) <- (1 - alpha) Q_i(s_i, a_i) + alpha (r_i + gamma max_a Q_i(s_i', a))

    Returns
    -------
        qtables: np.array of float (m x n_cells x 6), a new array
    '''

    updated = np.array(qtables, dtype=float, copy=True)
    for i in range(len(updated)):
        s, s_next = grid.cell_index(S[i]), grid.cell_index(S_next[i])
        target = rewards[i] + config.gamma*qtables[i, s_next].max()
        updated[i, s, int(A[i])] = (1 - config.alpha)*qtables[i, s, int(A[i])] + config.alpha*target

    return updated

def run_episode(thetas, env, config, episode_index, rng, scheme=None, epsilon=None, solver=None,
                learn=True, trajectory=None):

    '''
    run_episode - One episode from a uniformly drawn collision-free joint state

    Steps until the team reward is paid on the successor state or max_steps is reached.

    Parameters
    ----------
        thetas: np.array of float
            - CE parameters (m x length) or Baseline Q tables (m x n_cells x 6)
        env: CoverageEnvironment
        config: LearnerConfig
        episode_index: int
        rng: np.random.Generator

    kwargs
    ------
        scheme: FeatureScheme
            - Required in CE mode
        epsilon: float or None
            - epsilon_at(episode_index) when None
        solver: SimplexSolver or None
        learn: bool
            - Update the parameters
        trajectory: list or None
            - Joint states visited are appended when given

    Returns
    -------
        log: EpisodeLog
        thetas: np.array of float
    '''

    baseline = config.learner_mode is LearnerMode.Baseline
    if not baseline and scheme is None:
        raise ValueError("CE mode needs a FeatureScheme")
    if epsilon is None: epsilon = epsilon_at(episode_index, config)

    start = time.perf_counter()
    S = random_joint_state(env, rng)
    if trajectory is not None: trajectory.append(S)
    admissible = filter_collisions(S, env.grid)

    cumulative = 0.
    goal = False
    for steps in range(1, config.max_steps+1):
        if baseline:
            A, S_next, rewards = step_baseline(S, thetas, env, config, rng, epsilon, admissible=admissible)
            reward = env(S_next)
            admissible = filter_collisions(S_next, env.grid)
            if learn: thetas = update_baseline(thetas, S, A, rewards, S_next, config, env.grid)
        else:
            A, S_next, reward = step_ce(S, thetas, env, config, rng, scheme, epsilon,
                                        solver=solver, admissible=admissible)
            admissible = filter_collisions(S_next, env.grid)
            if learn: thetas = update_agents(thetas, S, A, reward, S_next, config, scheme,
                                             admissible_next=admissible)

        cumulative += reward
        S = S_next
        if trajectory is not None: trajectory.append(S)
        if reward > 0:
            goal = True
            break

    coverage, overlap = env.sums(S)
    log = EpisodeLog(episode=int(episode_index), steps=steps, goal_reached=goal, coverage_sum=coverage,
                     overlap_sum=overlap, cumulative_reward=cumulative, epsilon=float(epsilon),
                     duration=time.perf_counter() - start)

    return log, thetas

def _initial_parameters(env, config, scheme, resume):

    if config.learner_mode is LearnerMode.Baseline: shape = (env.n_agents, env.grid.n_cells, N_ACTIONS)
    else: shape = (env.n_agents, scheme.length)
    if resume is None: return np.zeros(shape)

    resume = np.array(resume, dtype=float)
    if resume.shape != shape:
        raise ValueError("Resumed parameters have shape %r, expected %r" % (resume.shape, shape))
    return resume

def train(env, config, resume=None, progress=True, checkpoint_path=None, solver=None):

    '''
    train - Runs config.episodes episodes then one greedy evaluation episode

    Parameters
    ----------
        env: CoverageEnvironment
        config: LearnerConfig

    kwargs
    ------
        resume: np.array or None
            - Starting parameters, zeros when None
        progress: bool
            - Show a tqdm bar over episodes
        checkpoint_path: str or None
            - HDF5 file rewritten every config.checkpoint_every episodes
        solver: SimplexSolver or None
            - A fresh solver is made when None; its solve count is reported

    Returns
    -------
        result: TrainResult
    '''

    rng = np.random.default_rng(config.seed)
    if solver is None: solver = SimplexSolver()
    start_solves = solver.n_problems

    scheme = None
    if config.learner_mode is LearnerMode.CE:
        scheme = make_scheme(config.scheme, env.grid, env.n_agents, n_centers=config.rbf_centers, seed=config.seed)
    thetas = _initial_parameters(env, config, scheme, resume)
    logger.info("Training %s mode (%s) for %d episodes, %d agents, %d parameters per agent",
                config.mode, config.scheme if scheme is not None else 'tabular individual',
                config.episodes, env.n_agents, thetas[0].size)

    logs = []
    for e in tqdm(range(config.episodes), disable=not progress, desc='episodes', ncols=100):
        log, thetas = run_episode(thetas, env, config, e, rng, scheme=scheme, solver=solver)
        logs.append(log)
        logger.debug("Episode %d: %d steps, goal %s, coverage %d, overlap %d, epsilon %.4f",
                     e, log.steps, log.goal_reached, log.coverage_sum, log.overlap_sum, log.epsilon)
        if checkpoint_path is not None and config.checkpoint_every and (e+1) % config.checkpoint_every == 0:
            save_parameters(checkpoint_path, thetas, scheme, episode=e+1)

    trajectory = []
    evaluation, _ = run_episode(thetas, env, config, config.episodes, rng, scheme=scheme, epsilon=0.,
                                solver=solver, learn=False, trajectory=trajectory)
    logger.info("Greedy evaluation: %d steps, goal %s", evaluation.steps, evaluation.goal_reached)

    return TrainResult(thetas=thetas, logs=logs, evaluation=evaluation, trajectory=trajectory,
                       lp_solves=solver.n_problems - start_solves, scheme=scheme)

def save_parameters(path, thetas, scheme, **attrs):

    '''
    save_parameters - Writes trained parameters to HDF5

    CE parameters go through save_checkpoint. Baseline Q tables are stored as
    dataset q_tables (m x n_cells x 6) with attrs variant='baseline' and format_version.
    '''

    if scheme is not None:
        save_checkpoint(path, thetas, scheme, **attrs)
        return

    with h5py.File(path, 'w') as hf:
        hf.create_dataset('q_tables', data=np.asarray(thetas, dtype=np.float64))
        hf.attrs['format_version'] = 1
        hf.attrs['variant'] = LearnerMode.Baseline.value
        for key, value in attrs.items(): hf.attrs[key] = value
