'''
SimplexSolver - Dense two-phase simplex for small linear programs.

Solves   maximize c.x   subject to   a_k.x (<=, =, >=) b_k,   x >= 0
on a dense tableau. Phase 1 minimises the sum of artificial variables to find a
feasible basis, phase 2 optimises the true objective. Pivot columns follow
Dantzig's rule until a run of degenerate pivots is seen, after which Bland's
smallest-index rule is used for the rest of the phase.

Leaving rows come from a two-pass (Harris) ratio test which prefers large pivot
elements. The tableau is recomputed from the original rows every few pivots and
before any status is reported, and an optimal answer is only returned once
check_solution accepts it.

Classes
-------
    LPStatus - Optimal, Infeasible or Unbounded

    LPProblem - Objective vector and dense constraint rows

    LPSolution - Status, primal solution and objective value

    SimplexSolver - Configured solver; counts the solves it performs

Exceptions
----------
    IterationLimitError, LPNumericalError, LPDimensionError

Functions
---------
    solve - Solves a problem with a default SimplexSolver

    default_solver - The given solver or the shared default

    check_solution - Largest constraint violation of a candidate x
'''

import enum
import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

FEAS_TOL = 1e-7
OPT_TOL = 1e-7
# Pivot elements below PIVOT_TOL times the column's largest entry are refused
PIVOT_TOL = 1e-9
# Slack allowed on the right-hand side by the two-pass ratio test
HARRIS_TOL = 1e-9
REFACTOR_EVERY = 25

_RELATIONS = {'<=': '<=', '=': '=', '==': '=', '>=': '>='}


class LPDimensionError(ValueError):
    "Raised when an LP's vectors have inconsistent lengths or non-finite entries."
    pass

class IterationLimitError(RuntimeError):
    "Raised when the simplex exceeds its iteration limit."
    pass

class LPNumericalError(RuntimeError):
    "Raised when the optimal basis fails the independent feasibility check."
    pass


class LPStatus(enum.Enum):
    Optimal = 'optimal'
    Infeasible = 'infeasible'
    Unbounded = 'unbounded'


@dataclass(frozen=True, eq=False)
class LPProblem():

    '''
    LPProblem - maximize objective.x subject to A x (relations) b, x >= 0

    Parameters
    ----------
        objective: np.array of float (n)
        A: np.array of float (k x n)
        relations: tuple of str
            - One of '<=', '=', '>=' per row
        b: np.array of float (k)
    '''

    objective: np.ndarray
    A: np.ndarray
    relations: tuple
    b: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).ravel()
        n = len(c)
        A = np.asarray(self.A, dtype=float)
        if A.size == 0: A = A.reshape(0, n)
        b = np.asarray(self.b, dtype=float).ravel()

        if A.ndim != 2 or A.shape[1] != n:
            raise LPDimensionError("Constraint matrix has shape %r, expected (k, %d)" % (A.shape, n))
        if len(b) != A.shape[0] or len(self.relations) != A.shape[0]:
            raise LPDimensionError("%d constraint rows, %d bounds and %d relations"
                                   % (A.shape[0], len(b), len(self.relations)))
        try: relations = tuple(_RELATIONS[rel] for rel in self.relations)
        except KeyError as err: raise LPDimensionError("Unknown relation %r" % (err.args[0],))
        for name, arr in (('objective', c), ('A', A), ('b', b)):
            if not np.all(np.isfinite(arr)):
                raise LPDimensionError("%s holds NaN or infinite entries" % name)

        object.__setattr__(self, 'objective', c)
        object.__setattr__(self, 'A', A)
        object.__setattr__(self, 'b', b)
        object.__setattr__(self, 'relations', relations)

    @classmethod
    def from_constraints(cls, objective, constraints):

        '''
        from_constraints - Builds a problem from a list of (a, relation, b) triples
        '''

        n = len(objective)
        for k, (a, _, _) in enumerate(constraints):
            if len(a) != n:
                raise LPDimensionError("Constraint %d has %d coefficients, expected %d" % (k, len(a), n))
        A = np.array([a for a, _, _ in constraints], dtype=float).reshape(len(constraints), n)
        relations = tuple(rel for _, rel, _ in constraints)
        b = np.array([bound for _, _, bound in constraints], dtype=float)

        return cls(np.asarray(objective, dtype=float), A, relations, b)

    @property
    def n_variables(self):
        return len(self.objective)

    @property
    def n_constraints(self):
        return self.A.shape[0]


@dataclass(frozen=True, eq=False)
class LPSolution():

    status: LPStatus
    x: np.ndarray = None
    objective_value: float = None
    iterations: int = 0

    @property
    def optimal(self):
        return self.status is LPStatus.Optimal


def check_solution(problem, x):

    '''
    check_solution - Largest constraint violation of a candidate x

    Parameters
    ----------
        problem: LPProblem
        x: np.array of float (n)

    Returns
    -------
        violation: float
            - max over rows of the amount by which the row (and x >= 0) is broken
    '''

    x = np.asarray(x, dtype=float)
    violation = max(0.0, float(-x.min())) if len(x) else 0.0
    if problem.n_constraints == 0: return violation

    residual = problem.A @ x - problem.b
    relations = np.array(problem.relations)
    le = np.where(relations == '<=', np.maximum(residual, 0), 0)
    ge = np.where(relations == '>=', np.maximum(-residual, 0), 0)
    eq = np.where(relations == '=', np.abs(residual), 0)

    return max(violation, float(np.max(le + ge + eq)))


class SimplexSolver():

    '''
    SimplexSolver - Dense two-phase simplex

    kwargs
    ------
        feas_tol: float
            - Feasibility tolerance (phase 1 optimum and reported solution)
        opt_tol: float
            - Reduced-cost tolerance for optimality
        pivot_tol: float
            - Smallest pivot element accepted, relative to the entering column's largest entry
        harris_tol: float
            - Right-hand-side slack of the two-pass ratio test
        max_iter: int or None
            - Iteration limit per phase, 50*(rows+columns) when None
        degenerate_switch: int
            - Consecutive degenerate pivots after which Bland's rule takes over, 0 for Bland throughout
        refactor_every: int
            - Pivots between recomputations of the tableau from the original rows

    Attributes
    ----------
        n_solves: int
            - Problems handed to the simplex
        n_presolved: int
            - Problems settled by a caller's presolve and recorded with record_presolve

    Functions
    ---------
        __call__ - Solve an LPProblem and return an LPSolution
    '''

    def __init__(self, feas_tol=FEAS_TOL, opt_tol=OPT_TOL, pivot_tol=PIVOT_TOL, harris_tol=HARRIS_TOL,
                 max_iter=None, degenerate_switch=50, refactor_every=REFACTOR_EVERY):

        if refactor_every < 1:
            raise ValueError("refactor_every must be at least 1, got %r" % (refactor_every,))

        self.feas_tol = feas_tol
        self.opt_tol = opt_tol
        self.pivot_tol = pivot_tol
        self.harris_tol = harris_tol
        self.max_iter = max_iter
        self.degenerate_switch = degenerate_switch
        self.refactor_every = refactor_every

        self.n_solves = 0
        self.n_presolved = 0

    @property
    def n_problems(self):
        return self.n_solves + self.n_presolved

    def record_presolve(self):
        self.n_presolved += 1

    def __call__(self, problem):

        self.n_solves += 1
        n = problem.n_variables
        M, basis, n_slack, artificial = self._tableau(problem)
        k, n_cols = M.shape[0], M.shape[1] - 1
        max_iter = self.max_iter or 50*(k + n_cols + 1)
        rows = np.arange(k)
        T = np.vstack((M, np.zeros((1, n_cols+1))))
        scale = max(1., np.abs(problem.b).max(initial=0.))

        # Phase 1: maximize -sum(artificials)
        iterations = 0
        if artificial:
            cost = np.zeros(n_cols)
            cost[artificial] = -1.
            self._price(T, basis, cost)
            _, it = self._iterate(T, basis, np.arange(n_cols), cost, M, rows, max_iter)
            iterations += it
            if -T[-1, -1] > self.feas_tol*scale:
                logger.debug("LP infeasible: phase 1 residual %.3g", -T[-1, -1])
                return LPSolution(LPStatus.Infeasible, iterations=iterations)
            T, basis, rows = self._expel_artificials(T, basis, rows, n + n_slack)

        # Phase 2: artificial columns never re-enter
        cost = np.zeros(n_cols)
        cost[:n] = problem.objective
        self._refactor(T, basis, cost, M, rows)
        status, it = self._iterate(T, basis, np.arange(n + n_slack), cost, M, rows, max_iter)
        iterations += it
        if status is LPStatus.Unbounded:
            return LPSolution(LPStatus.Unbounded, iterations=iterations)

        values = np.zeros(n_cols)
        values[basis] = T[:-1, -1]
        x = values[:n]
        x[(x < 0) & (x > -self.feas_tol)] = 0.

        violation = check_solution(problem, x)
        if violation > self.feas_tol*scale:
            raise LPNumericalError("Optimal basis violates the constraints by %.3g" % violation)

        return LPSolution(LPStatus.Optimal, x=x, objective_value=float(problem.objective @ x),
                          iterations=iterations)

    def _tableau(self, problem):

        '''
        _tableau - Standard-form rows [A | slack/surplus | artificial | b] with b >= 0,
                   and the starting basis
        '''

        A = problem.A.copy()
        b = problem.b.copy()
        relations = list(problem.relations)
        k, n = A.shape

        # Rows with b < 0, and >= rows with b == 0, are negated so b >= 0 and
        # as many rows as possible start with a slack in the basis.
        for r in range(k):
            if b[r] < 0 or (b[r] == 0 and relations[r] == '>='):
                A[r], b[r] = -A[r], -b[r]
                relations[r] = {'<=': '>=', '>=': '<=', '=': '='}[relations[r]]

        slack_rows = [r for r in range(k) if relations[r] != '=']
        art_rows = [r for r in range(k) if relations[r] != '<=']
        n_slack, n_art = len(slack_rows), len(art_rows)

        M = np.zeros((k, n + n_slack + n_art + 1))
        M[:, :n] = A
        M[:, -1] = b
        basis = np.zeros(k, dtype=int)
        for s, r in enumerate(slack_rows):
            M[r, n+s] = 1. if relations[r] == '<=' else -1.
            if relations[r] == '<=': basis[r] = n+s
        for a, r in enumerate(art_rows):
            M[r, n+n_slack+a] = 1.
            basis[r] = n+n_slack+a
        artificial = list(range(n+n_slack, n+n_slack+n_art))

        return M, basis, n_slack, artificial

    def _price(self, T, basis, cost):
        # Objective row: c_B B^-1 A - c | c_B B^-1 b
        c_B = cost[basis]
        T[-1, :-1] = c_B @ T[:-1, :-1] - cost
        T[-1, -1] = c_B @ T[:-1, -1]

    def _refactor(self, T, basis, cost, M, rows):
        # B^-1 [A | b] recomputed from the original rows
        if len(basis):
            try: T[:-1] = np.linalg.solve(M[np.ix_(rows, basis)], M[rows])
            except np.linalg.LinAlgError:
                logger.debug("Singular basis matrix, keeping the updated tableau")
        self._price(T, basis, cost)

    def _pivot(self, T, basis, row, col):
        T[row] /= T[row, col]
        pivot_row = T[row].copy()
        T -= np.outer(T[:, col], pivot_row)
        T[row] = pivot_row
        basis[row] = col

    def _ratio_row(self, T, basis, column, bland):

        '''
        _ratio_row - Leaving row for an entering column, None when the column is unbounded

        Two passes: the longest step which breaks no row by more than harris_tol, then
        among the rows blocking within that step the largest pivot element (Dantzig
        mode) or the smallest basic index among the well-sized pivots (Bland mode).
        '''

        eligible = np.nonzero(column > self.pivot_tol*max(1., np.abs(column).max()))[0]
        if len(eligible) == 0: return None

        rhs = np.maximum(T[eligible, -1], 0.)
        pivots = column[eligible]
        limit = ((rhs + self.harris_tol)/pivots).min()
        candidates = eligible[rhs/pivots <= limit]

        if not bland: return candidates[np.argmax(column[candidates])]
        strong = candidates[column[candidates] >= 1e-3*column[candidates].max()]
        return strong[np.argmin(basis[strong])]

    def _iterate(self, T, basis, columns, cost, M, rows, max_iter):

        '''
        _iterate - Pivots until no improving column remains

        Optimal and Unbounded are only reported from a freshly refactored tableau.

        Returns
        -------
            status: LPStatus (Optimal or Unbounded)
            iterations: int
        '''

        bland = self.degenerate_switch <= 0
        degenerate_run = 0
        fresh = False
        for it in range(max_iter):
            if it and it % self.refactor_every == 0 and not fresh:
                self._refactor(T, basis, cost, M, rows)
                fresh = True

            reduced = T[-1, columns]
            improving = np.nonzero(reduced < -self.opt_tol)[0]
            if len(improving) == 0:
                if fresh: return LPStatus.Optimal, it
                self._refactor(T, basis, cost, M, rows)
                fresh = True
                continue

            if bland: col = columns[improving[0]]
            else: col = columns[improving[np.argmin(reduced[improving])]]

            row = self._ratio_row(T, basis, T[:-1, col], bland)
            if row is None:
                if fresh: return LPStatus.Unbounded, it
                self._refactor(T, basis, cost, M, rows)
                fresh = True
                continue

            if T[row, -1] <= self.feas_tol*T[row, col]:
                degenerate_run += 1
                if degenerate_run >= self.degenerate_switch and not bland:
                    logger.debug("Switching to Bland's rule after %d degenerate pivots", degenerate_run)
                    bland = True
            else: degenerate_run = 0

            self._pivot(T, basis, row, col)
            fresh = False

        raise IterationLimitError("Simplex did not finish within %d iterations" % max_iter)

    def _expel_artificials(self, T, basis, rows, n_real):

        '''
        _expel_artificials - Pivots zero-valued artificials out of the basis after
                             phase 1, dropping rows which turn out to be redundant

        Returns
        -------
            T, basis, rows: tableau, basis and original row indices of the kept rows
        '''

        scale = max(1., np.abs(T[:-1, :n_real]).max(initial=0.))
        keep = []
        for row in range(len(basis)):
            if basis[row] < n_real:
                keep.append(row)
                continue
            entries = np.abs(T[row, :n_real])
            col = int(np.argmax(entries)) if n_real else 0
            if n_real == 0 or entries[col] <= self.pivot_tol*scale:
                # Linear combination of the other rows
                continue
            T[row, -1] = 0.
            self._pivot(T, basis, row, col)
            keep.append(row)

        return T[keep + [T.shape[0]-1]], basis[keep], rows[keep]


_default_solver = SimplexSolver()

def default_solver(solver=None):
    "default_solver - solver itself, or the module's shared SimplexSolver when None"
    if solver is None: return _default_solver
    return solver

def solve(problem, solver=None):

    '''
    solve - Solves problem with the given (or the module's default) SimplexSolver
    '''

    return default_solver(solver)(problem)
