'''
CorrelatedEquilibrium - Per-state correlated equilibrium over joint actions.

At every joint state the agents' Q-values over all joint actions form a normal
form game. The utilitarian correlated equilibrium of that game is found with
a linear program over joint-action probabilities, and one joint action is then
extracted deterministically among the collision-free ones, so that every agent
arrives at the same decision.

Classes
-------
    JointActionTable - Q_i(S, .) for every agent i over all joint actions

    CEDistribution - Probability vector over joint actions

Functions
---------
    rationality_matrix - Rows of the CE rationality constraints

    build_ce_lp - LP whose optimum is the utilitarian CE of a JointActionTable

    pure_equilibrium_optimum - Point mass on the best joint action when it is an equilibrium

    solve_ce - Solves the CE LP of a table

    rationality_violation - Largest violation of the CE constraints by a distribution

    expected_payoffs - E_p[Q_i] for every agent

    filter_collisions - Canonical indices of the joint actions keeping agents in distinct cells

    select_joint_action - Deterministic joint action from a distribution (social conventions)

Requirements
------------

CoverageGrid.py
SimplexSolver.py
ArrayMechanics.py
'''

import logging
from functools import lru_cache

import numpy as np

from coveragemarl.ArrayMechanics import digit_table, decode_index
from coveragemarl.CoverageGrid import N_ACTIONS, successor_cells, joint_action_from_index
from coveragemarl.SimplexSolver import LPProblem, IterationLimitError, LPNumericalError, default_solver, solve

logger = logging.getLogger(__name__)

# Negative entries down to -NEG_TOL are solver noise and are clamped to 0
NEG_TOL = 1e-9
SUM_TOL = 1e-6
# Probabilities below MASS_TOL count as no mass when extracting an action
MASS_TOL = 1e-12


class CESolveError(RuntimeError):
    "Raised when the CE linear program cannot be solved."
    pass

class EmptyAdmissibleSetError(ValueError):
    "Raised when a joint action is requested from an empty admissible set."
    pass


def _agent_count(n_joint, n_actions):
    # Integer m with n_actions**m == n_joint
    m = 0
    size = 1
    while size < n_joint:
        size *= n_actions
        m += 1
    if size != n_joint:
        raise ValueError("%d joint actions is not a power of %d" % (n_joint, n_actions))
    return m


class JointActionTable():

    '''
    JointActionTable - Q_i(S, .) for every agent i over all joint actions

    Parameters
    ----------
        q: array of float (m x n_actions**m)
            - Row i holds agent i's Q-values, column A the canonical joint-action index

    kwargs
    ------
        n_actions: int
            - Individual actions per agent (6 for the coverage game)
    '''

    def __init__(self, q, n_actions=N_ACTIONS):

        q = np.array(q, dtype=float)
        if q.ndim != 2 or q.shape[0] < 1:
            raise ValueError("Q table must be a 2-d (agents x joint actions) array, got shape %r" % (q.shape,))
        if n_actions < 1:
            raise ValueError("n_actions must be positive, got %r" % (n_actions,))
        m = q.shape[0]
        if q.shape[1] != n_actions**m:
            raise ValueError("%d agents with %d actions need %d joint actions, got %d"
                             % (m, n_actions, n_actions**m, q.shape[1]))
        if not np.all(np.isfinite(q)):
            raise ValueError("Q table holds NaN or infinite entries")
        q.flags.writeable = False

        self.q = q
        self.n_agents = m
        self.n_actions = int(n_actions)

    @property
    def n_joint(self):
        return self.q.shape[1]

    def __getitem__(self, i):
        return self.q[i]


class CEDistribution():

    '''
    CEDistribution - Probability vector over the joint actions of a game

    Entries between -1e-9 and 0 are clamped to 0; the vector must sum to 1
    within 1e-6.

    Parameters
    ----------
        probabilities: array of float (n_actions**m)

    kwargs
    ------
        n_actions: int
    '''

    def __init__(self, probabilities, n_actions=N_ACTIONS):

        p = np.array(probabilities, dtype=float).ravel()
        if not np.all(np.isfinite(p)):
            raise ValueError("Distribution holds NaN or infinite entries")
        if len(p) and p.min() < -NEG_TOL:
            raise ValueError("Probability %.3g below zero" % p.min())
        if abs(p.sum() - 1.) > SUM_TOL:
            raise ValueError("Probabilities sum to %.9g, expected 1" % p.sum())
        p[p < 0] = 0.
        p.flags.writeable = False

        self.probabilities = p
        self.n_actions = int(n_actions)
        self.n_agents = _agent_count(len(p), self.n_actions)

    def __len__(self):
        return len(self.probabilities)

    def __getitem__(self, index):
        return self.probabilities[index]


def rationality_matrix(table):

    '''
    rationality_matrix - Rows of the CE rationality constraints, row.p >= 0

    For agent i and an ordered pair of distinct individual actions (a, a'), the row
    holds Q_i(a, A_-i) - Q_i(a', A_-i) on the joint actions where i plays a and 0
    elsewhere.

    Parameters
    ----------
        table: JointActionTable

    Returns
    -------
        rows: np.array of float (m*k*(k-1) x k**m)
            - Ordered by agent, then a, then a'
    '''

    m, k, n = table.n_agents, table.n_actions, table.n_joint
    index = np.arange(n).reshape((k,)*m)

    rows = np.zeros((m*k*(k-1), n))
    r = 0
    for i in range(m):
        # Put agent i's action on the leading axis; the rest enumerates A_-i
        qi = np.moveaxis(table.q[i].reshape((k,)*m), i, 0).reshape(k, -1)
        idx = np.moveaxis(index, i, 0).reshape(k, -1)
        for a in range(k):
            for a2 in range(k):
                if a == a2: continue
                rows[r, idx[a]] = qi[a] - qi[a2]
                r += 1

    return rows

def build_ce_lp(table, weights=None):

    '''
    build_ce_lp - LP whose optimum is the utilitarian CE of a JointActionTable

    maximize sum_A p(A) sum_i w_i Q_i(A)
    subject to sum_A p(A) = 1, p >= 0 and every rationality row >= 0

    Parameters
    ----------
        table: JointActionTable

    kwargs
    ------
        weights: array of float (m) or None
            - Agent weights in the objective, all ones (utilitarian) when None

    Returns
    -------
        problem: LPProblem
            - Row 0 is the normalisation, rows 1.. the rationality constraints
    '''

    if weights is None: weights = np.ones(table.n_agents)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (table.n_agents,):
        raise ValueError("Need one weight per agent (%d), got shape %r" % (table.n_agents, weights.shape))

    rational = rationality_matrix(table)
    A = np.vstack((np.ones((1, table.n_joint)), rational))
    relations = ('=',) + ('>=',)*rational.shape[0]
    b = np.zeros(A.shape[0])
    b[0] = 1.

    return LPProblem(weights @ table.q, A, relations, b)

def pure_equilibrium_optimum(table):

    '''
    pure_equilibrium_optimum - Point mass on the utilitarian best joint action when it is a CE

    No distribution beats max_A sum_i Q_i(A) on the utilitarian objective, so when that
    joint action (smallest index on ties) is a pure equilibrium its point mass solves
    the CE LP. Tables whose agents share one Q vector always pass.

    Parameters
    ----------
        table: JointActionTable

    Returns
    -------
        dist: CEDistribution or None
            - None when some agent gains by deviating from the best joint action
    '''

    m, k = table.n_agents, table.n_actions
    best = int(np.argmax(table.q.sum(axis=0)))
    digits = decode_index(best, k, m)
    for i in range(m):
        place = k**(m-1-i)
        deviations = best + (np.arange(k) - digits[i])*place
        if table.q[i, deviations].max() > table.q[i, best]: return None

    p = np.zeros(table.n_joint)
    p[best] = 1.
    return CEDistribution(p, n_actions=k)

def solve_ce(table, solver=None, presolve=True):

    '''
    solve_ce - Utilitarian correlated equilibrium of a JointActionTable

    Parameters
    ----------
        table: JointActionTable

    kwargs
    ------
        solver: SimplexSolver or None
            - Solver to use (and whose counters are incremented), module default when None
        presolve: bool
            - Try pure_equilibrium_optimum before the simplex

    Returns
    -------
        dist: CEDistribution

    Raises
    ------
        CESolveError - solver failure or a non-optimal status (a CE always exists)
    '''

    solver = default_solver(solver)
    if presolve:
        dist = pure_equilibrium_optimum(table)
        if dist is not None:
            solver.record_presolve()
            return dist

    problem = build_ce_lp(table)
    try: solution = solve(problem, solver)
    except IterationLimitError as err:
        raise CESolveError("CE LP over %d joint actions hit the iteration limit" % table.n_joint) from err
    except LPNumericalError as err:
        raise CESolveError("CE LP over %d joint actions: %s" % (table.n_joint, err)) from err

    if not solution.optimal:
        raise CESolveError("CE LP over %d joint actions returned %s" % (table.n_joint, solution.status.value))

    try: dist = CEDistribution(solution.x, n_actions=table.n_actions)
    except ValueError as err:
        raise CESolveError("CE LP returned an invalid distribution: %s" % err) from err

    if logger.isEnabledFor(logging.DEBUG):
        logger.debug("CE solved in %d iterations, rationality violation %.2e",
                     solution.iterations, rationality_violation(table, dist))

    return dist

def rationality_violation(table, p):

    '''
    rationality_violation - Largest violation of the CE rationality constraints

    Parameters
    ----------
        table: JointActionTable
        p: CEDistribution or array of float

    Returns
    -------
        violation: float
            - max(0, -min_row row.p), 0 for a correlated equilibrium
    '''

    if isinstance(p, CEDistribution): p = p.probabilities
    rows = rationality_matrix(table)
    if rows.shape[0] == 0: return 0.

    return max(0., float(-(rows @ np.asarray(p, dtype=float)).min()))

def expected_payoffs(table, p):

    '''
    expected_payoffs - E_p[Q_i] for every agent i (array of length m)
    '''

    if isinstance(p, CEDistribution): p = p.probabilities
    return table.q @ np.asarray(p, dtype=float)

def filter_collisions(joint, grid):

    '''
    filter_collisions - Joint actions which keep every agent in its own cell

    Agents commit in rank order: agent i may not move into a cell already claimed by
    the successor of an agent j < i. Blocked moves occupy the current cell. Taken over
    all ranks this keeps exactly the joint actions whose successor cells are pairwise
    distinct.

    Results are cached per joint state and returned read-only.

    Parameters
    ----------
        joint: JointState
        grid: GridSpec

    Returns
    -------
        admissible: np.array of int
            - Canonical joint-action indices, ascending

    Raises
    ------
        EmptyAdmissibleSetError - no joint action survives
    '''

    key = tuple(tuple(int(v) for v in agent) for agent in joint)
    return _admissible_indices(key, grid)

@lru_cache(maxsize=65536)
def _admissible_indices(joint, grid):

    m = len(joint)
    successors = successor_cells(joint, grid)
    cell_ids = (successors[..., 0]*grid.dim_y + successors[..., 1])*grid.dim_z + successors[..., 2] - 1

    # chosen[A, i]: cell of agent i under joint action A
    chosen = cell_ids[np.arange(m), digit_table(N_ACTIONS, m)]
    ordered = np.sort(chosen, axis=1)
    distinct = np.all(ordered[:, 1:] != ordered[:, :-1], axis=1)
    admissible = np.flatnonzero(distinct)

    if len(admissible) == 0:
        raise EmptyAdmissibleSetError("No collision-free joint action from %r" % (list(joint),))

    admissible.flags.writeable = False
    return admissible

def select_joint_action(dist, admissible):

    '''
    select_joint_action - One joint action agreed by every agent

    The distribution is restricted to the admissible joint actions and the most
    probable one is taken. Ties (within 1e-12) go to the smallest canonical index,
    i.e. to the higher-ranked agents' preferred moves. With no mass on the
    admissible set the smallest admissible index is returned.

    Parameters
    ----------
        dist: CEDistribution
        admissible: array of int
            - Canonical joint-action indices

    Returns
    -------
        action: JointAction
    '''

    admissible = np.unique(np.asarray(admissible, dtype=int))
    if len(admissible) == 0:
        raise EmptyAdmissibleSetError("Cannot select a joint action from an empty admissible set")

    p = dist.probabilities[admissible]
    best = p.max()
    if best < MASS_TOL: index = admissible[0]
    else: index = admissible[np.argmax(p >= best - MASS_TOL)]

    if dist.n_actions == N_ACTIONS: return joint_action_from_index(index, dist.n_agents)
    return decode_index(index, dist.n_actions, dist.n_agents)
