'''
CoverageGrid - Discrete 3-D grid world for the field coverage game.

Agents sit on the cells of an X x Y x Z grid and look straight down with a
square camera footprint which grows with altitude. The field of interest F is a
set of ground cells; the team wants every cell of F under some footprint while
no two footprints share a ground cell.

Classes
-------
    Action - The six moves with their fixed canonical ordering

    AgentState - Position (x, y, z) of one agent

    GridSpec - Grid extents and the tangents of the camera half-angles

    FieldMask - Field of interest F and its per-cell weights Phi

    CoverageEnvironment - Grid, field, team size and reward settings bundled together

Functions
---------
    fov_mask / fov_cells - Ground cells under the footprint of one agent

    coverage_count - f_i, field cells under agent i

    overlap_count - o_i, cells of agent i's footprint also seen by another agent

    coverage_overlap_sums - (sum_i f_i, sum_i o_i) in a single pass

    objective_H - sum_i f_i - sum_i o_i

    apply_action / apply_joint_action - Deterministic moves with border clamping

    successor_cells - Successor cell of every agent under every action

    joint_action_index / joint_action_from_index - Canonical joint-action indices

    global_reward - Team reward r when the field is covered without overlap

    individual_reward - Per-agent coverage minus overlap penalty (independent learners)

    parse_field_mask / load_field_mask - Reads '#'/'.' text masks

    random_joint_state - Uniform collision-free joint state

    enumerate_goal_states - Every joint state earning the team reward

    render_field - Text picture of the footprints over the field
'''

import enum
import itertools
import logging
from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from typing import NamedTuple, Tuple

import numpy as np

from coveragemarl.ArrayMechanics import encode_index, decode_index

logger = logging.getLogger(__name__)

# Footprint half-widths are floor(z*tan(theta) + _EDGE_TOL) so that tangents such as
# tan(pi/4) = 0.9999999999999999 still reach the neighbouring cell.
_EDGE_TOL = 1e-9


class FieldMaskError(ValueError):
    "Raised when a field mask text is malformed or does not fit the grid."
    pass

class CollisionError(RuntimeError):
    "Raised when a joint action sends two agents into the same cell."
    pass


class Action(enum.IntEnum):

    '''
    Action - The six moves. The integer values are the serialization contract:
             joint-action indices, feature blocks and checkpoints all rely on them.
    '''

    North = 0
    West = 1
    South = 2
    East = 3
    Up = 4
    Down = 5

N_ACTIONS = len(Action)

# (dx, dy, dz) per action, rows in Action order
MOVES = np.array([[0, 1, 0],
                  [-1, 0, 0],
                  [0, -1, 0],
                  [1, 0, 0],
                  [0, 0, 1],
                  [0, 0, -1]], dtype=int)


class AgentState(NamedTuple):
    x: int
    y: int
    z: int


JointState = Tuple[AgentState, ...]
JointAction = Tuple[Action, ...]


@dataclass(frozen=True)
class GridSpec():

    '''
    GridSpec - Grid extents and the tangents of the camera half-angles

    Parameters
    ----------
        dim_x, dim_y, dim_z: int
            - Number of cells along each axis (altitude levels run 1..dim_z)
        tan_theta_1, tan_theta_2: float
            - Tangent of the camera half-angle along x and along y
    '''

    dim_x: int
    dim_y: int
    dim_z: int
    tan_theta_1: float = 1.0
    tan_theta_2: float = 1.0

    def __post_init__(self):
        for name in ('dim_x', 'dim_y', 'dim_z'):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError("%s must be a positive integer, got %r" % (name, value))
        for name in ('tan_theta_1', 'tan_theta_2'):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError("%s must be a positive real, got %r" % (name, value))

    @property
    def n_cells(self):
        return self.dim_x*self.dim_y*self.dim_z

    @property
    def shape(self):
        return (self.dim_x, self.dim_y, self.dim_z)

    def half_widths(self, z):
        # Largest integer offsets satisfying |dq| <= z*tan(theta) on each axis
        hx = int(np.floor(z*self.tan_theta_1 + _EDGE_TOL))
        hy = int(np.floor(z*self.tan_theta_2 + _EDGE_TOL))
        return hx, hy

    def contains(self, agent):
        x, y, z = agent
        return 0 <= x < self.dim_x and 0 <= y < self.dim_y and 1 <= z <= self.dim_z

    def cell_index(self, agent):
        x, y, z = agent
        return (x*self.dim_y + y)*self.dim_z + (z-1)

    def cell_from_index(self, index):
        rest, z = divmod(int(index), self.dim_z)
        x, y = divmod(rest, self.dim_y)
        return AgentState(x, y, z+1)


@dataclass(frozen=True, eq=False)
class FieldMask():

    '''
    FieldMask - Field of interest F and its per-cell weights Phi

    Parameters
    ----------
        width, height: int
            - Lateral extents (must match the grid's dim_x, dim_y)
        cells: frozenset of (x, y)
            - Ground cells belonging to F
        weights: np.array of float (width x height)
            - Phi(q); 1 on F and 0 elsewhere unless given. Cell counts ignore it.
    '''

    width: int
    height: int
    cells: frozenset
    weights: np.ndarray = dc_field(default=None, repr=False)

    def __post_init__(self):
        cells = frozenset((int(x), int(y)) for x, y in self.cells)
        for x, y in cells:
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ValueError("Field cell %r outside [0, %d) x [0, %d)" % ((x, y), self.width, self.height))
        object.__setattr__(self, 'cells', cells)

        mask = np.zeros((self.width, self.height), dtype=bool)
        for x, y in cells: mask[x, y] = True
        mask.flags.writeable = False
        object.__setattr__(self, 'mask', mask)

        if self.weights is None: weights = mask.astype(float)
        else: weights = np.array(self.weights, dtype=float)
        if weights.shape != mask.shape:
            raise ValueError("weights shape %r does not match field %r" % (weights.shape, mask.shape))
        if np.any(weights < 0) or np.any(weights[~mask] != 0):
            raise ValueError("weights must be nonnegative and zero outside the field")
        weights.flags.writeable = False
        object.__setattr__(self, 'weights', weights)

    def __len__(self):
        return len(self.cells)


@lru_cache(maxsize=4096)
def fov_mask(agent, grid):

    '''
    fov_mask - Boolean ground mask of the cells under agent's camera footprint

    Parameters
    ----------
        agent: AgentState
        grid: GridSpec

    Returns
    -------
        mask: read-only np.array of bool (dim_x x dim_y)
            - True where |qx - x| <= z*tan_theta_1 and |qy - y| <= z*tan_theta_2,
            clipped to the grid
    '''

    x, y, z = agent
    hx, hy = grid.half_widths(z)
    mask = np.zeros((grid.dim_x, grid.dim_y), dtype=bool)
    mask[max(0, x-hx):min(grid.dim_x, x+hx+1), max(0, y-hy):min(grid.dim_y, y+hy+1)] = True
    mask.flags.writeable = False

    return mask

def fov_cells(agent, grid):

    '''
    fov_cells - Ground cells covered by the footprint of one agent

    Returns
    -------
        cells: frozenset of (qx, qy)
    '''

    xs, ys = np.nonzero(fov_mask(AgentState(*agent), grid))
    return frozenset(zip(xs.tolist(), ys.tolist()))

def _footprints(joint, grid):
    return np.array([fov_mask(AgentState(*agent), grid) for agent in joint])

def coverage_count(joint, i, field, grid):

    '''
    coverage_count - f_i, number of field cells under agent i's footprint
    '''

    return int(np.count_nonzero(fov_mask(AgentState(*joint[i]), grid) & field.mask))

def overlap_count(joint, i, grid, field=None):

    '''
    overlap_count - o_i, cells of agent i's footprint also under another agent's footprint

    Parameters
    ----------
        joint: JointState
        i: int
            - Agent rank
        grid: GridSpec

    kwargs
    ------
        field: FieldMask or None
            - When given, only field cells count (the field-cells-only overlap variant)
    '''

    own = fov_mask(AgentState(*joint[i]), grid)
    others = np.zeros_like(own)
    for j, agent in enumerate(joint):
        if j != i: others = others | fov_mask(AgentState(*agent), grid)
    shared = own & others
    if field is not None: shared = shared & field.mask

    return int(np.count_nonzero(shared))

def coverage_overlap_sums(joint, field, grid, overlap_on_field_only=False):

    '''
    coverage_overlap_sums - (sum_i f_i, sum_i o_i) for a joint state

    A cell seen by c >= 2 agents contributes c to the overlap sum (once per agent).
    '''

    masks = _footprints(joint, grid)
    counts = masks.sum(axis=0)
    coverage = int((counts*field.mask).sum())
    shared = counts*(counts >= 2)
    if overlap_on_field_only: shared = shared*field.mask

    return coverage, int(shared.sum())

def objective_H(joint, field, grid, overlap_on_field_only=False):

    '''
    objective_H - Discrete team objective sum_i f_i - sum_i o_i
    '''

    coverage, overlap = coverage_overlap_sums(joint, field, grid, overlap_on_field_only)
    return coverage - overlap

def apply_action(state, action, grid):

    '''
    apply_action - Moves one agent one cell; moves leaving the grid keep the agent still

    Parameters
    ----------
        state: AgentState
        action: Action or int
        grid: GridSpec

    Returns
    -------
        successor: AgentState
    '''

    dx, dy, dz = MOVES[int(action)]
    moved = AgentState(state[0]+int(dx), state[1]+int(dy), state[2]+int(dz))
    if grid.contains(moved): return moved

    return AgentState(*state)

def successor_cells(joint, grid):

    '''
    successor_cells - Successor cell of every agent under every action

    Returns
    -------
        successors: np.array of int (m x N_ACTIONS x 3)
    '''

    positions = np.array(joint, dtype=int).reshape(-1, 1, 3)
    moved = positions + MOVES[None, :, :]
    upper = np.array([grid.dim_x-1, grid.dim_y-1, grid.dim_z])
    lower = np.array([0, 0, 1])
    inside = np.all((moved >= lower) & (moved <= upper), axis=2)

    return np.where(inside[:, :, None], moved, positions)

def joint_action_index(action):

    '''
    joint_action_index - Canonical index of a joint action (agent 0 most significant)
    '''

    return encode_index([int(a) for a in action], N_ACTIONS)

def joint_action_from_index(index, n_agents):

    '''
    joint_action_from_index - JointAction for a canonical index
    '''

    return tuple(Action(a) for a in decode_index(index, N_ACTIONS, n_agents))

def apply_joint_action(joint, action, grid):

    '''
    apply_joint_action - Element-wise apply_action over the team

    Raises
    ------
        CollisionError - two successors coincide (the joint action was not collision-filtered)
    '''

    if len(joint) != len(action):
        raise ValueError("Joint action has %d entries for %d agents" % (len(action), len(joint)))
    successor = tuple(apply_action(s, a, grid) for s, a in zip(joint, action))
    if len(set(successor)) != len(successor):
        raise CollisionError("Joint action %s from %s puts two agents in one cell: %s"
                             % ([Action(a).name for a in action], list(joint), list(successor)))

    return successor

def global_reward(joint, field, grid, r, fb=None, overlap_on_field_only=False):

    '''
    global_reward - Team reward: r when sum_i f_i >= fb and sum_i o_i <= 0, else 0

    kwargs
    ------
        fb: float or None
            - Acceptable coverage bound, defaults to |F| (full coverage)
    '''

    if fb is None: fb = len(field)
    coverage, overlap = coverage_overlap_sums(joint, field, grid, overlap_on_field_only)
    if coverage >= fb and overlap <= 0: return r

    return 0.0

def individual_reward(joint, i, field, grid, coverage_unit=1.0, overlap_penalty=0.01,
                      overlap_on_field_only=False):

    '''
    individual_reward - Own field coverage minus a penalty per overlapped cell

    Returns
    -------
        reward: float
            - coverage_unit*f_i - overlap_penalty*o_i
    '''

    f_i = coverage_count(joint, i, field, grid)
    o_i = overlap_count(joint, i, grid, field=field if overlap_on_field_only else None)

    return coverage_unit*f_i - overlap_penalty*o_i

def parse_field_mask(text, grid=None):

    '''
    parse_field_mask - Reads a field mask drawn with '#' (field) and '.' (background)

    Parameters
    ----------
        text: str
            - One row per line; line 0 holds y = 0 and column c holds x = c

    kwargs
    ------
        grid: GridSpec or None
            - When given, the mask must be dim_x wide and dim_y tall

    Returns
    -------
        field: FieldMask
    '''

    rows = [line.rstrip() for line in text.splitlines()]
    while rows and rows[-1] == '': rows.pop()
    if not rows: raise FieldMaskError("Field mask is empty")

    width = len(rows[0])
    cells = []
    for y, row in enumerate(rows):
        if len(row) != width:
            raise FieldMaskError("Row %d has %d columns, expected %d (mask must be rectangular)"
                                 % (y, len(row), width))
        for x, char in enumerate(row):
            if char == '#': cells.append((x, y))
            elif char != '.':
                raise FieldMaskError("Row %d column %d: unexpected character %r (use '#' or '.')"
                                     % (y, x, char))

    height = len(rows)
    if grid is not None and (width, height) != (grid.dim_x, grid.dim_y):
        raise FieldMaskError("Field mask is %dx%d but the grid is %dx%d"
                             % (width, height, grid.dim_x, grid.dim_y))

    return FieldMask(width, height, frozenset(cells))

def load_field_mask(path, grid=None):

    with open(path) as f:
        return parse_field_mask(f.read(), grid=grid)


class CoverageEnvironment():

    '''
    CoverageEnvironment - Grid, field, team size and reward settings bundled together

    Parameters
    ----------
        grid: GridSpec
        field: FieldMask
        n_agents: int

    kwargs
    ------
        reward: float
            - Team reward r paid on goal states
        fb: float or None
            - Coverage bound, |F| when None
        overlap_on_field_only: bool
            - Count overlap on field cells only

    Functions
    ---------
        __call__ - Team reward of a joint state
        sums - (sum_i f_i, sum_i o_i)
        is_goal - Whether the team reward condition holds
        validate - Checks the JointState invariants
    '''

    def __init__(self, grid, field, n_agents, reward=0.1, fb=None, overlap_on_field_only=False):

        if (field.width, field.height) != (grid.dim_x, grid.dim_y):
            raise FieldMaskError("Field is %dx%d but the grid is %dx%d"
                                 % (field.width, field.height, grid.dim_x, grid.dim_y))
        if int(n_agents) != n_agents or n_agents < 1:
            raise ValueError("n_agents must be a positive integer, got %r" % (n_agents,))
        if n_agents > grid.n_cells:
            raise ValueError("%d agents do not fit on %d cells" % (n_agents, grid.n_cells))
        if reward <= 0:
            raise ValueError("reward must be positive, got %r" % (reward,))
        if fb is None: fb = len(field)
        if len(field) > 0 and not (0 < fb <= len(field)):
            raise ValueError("fb must lie in (0, |F|] = (0, %d], got %r" % (len(field), fb))

        self.grid = grid
        self.field = field
        self.n_agents = int(n_agents)
        self.reward = float(reward)
        self.fb = fb
        self.overlap_on_field_only = bool(overlap_on_field_only)

    def __call__(self, joint):
        return global_reward(joint, self.field, self.grid, self.reward, fb=self.fb,
                             overlap_on_field_only=self.overlap_on_field_only)

    def sums(self, joint):
        return coverage_overlap_sums(joint, self.field, self.grid, self.overlap_on_field_only)

    def is_goal(self, joint):
        coverage, overlap = self.sums(joint)
        return coverage >= self.fb and overlap <= 0

    def validate(self, joint):
        if len(joint) != self.n_agents:
            raise ValueError("Joint state has %d agents, expected %d" % (len(joint), self.n_agents))
        for agent in joint:
            if not self.grid.contains(agent):
                raise ValueError("Agent %r outside grid %r" % (tuple(agent), self.grid.shape))
        if len(set(map(tuple, joint))) != len(joint):
            raise ValueError("Two agents share a cell in %r" % (list(joint),))
        return tuple(AgentState(*agent) for agent in joint)


def random_joint_state(env, rng):

    '''
    random_joint_state - Uniform draw over joint states with pairwise-distinct cells

    Parameters
    ----------
        env: CoverageEnvironment
        rng: np.random.Generator
    '''

    cells = rng.choice(env.grid.n_cells, size=env.n_agents, replace=False)
    return tuple(env.grid.cell_from_index(c) for c in cells)

def enumerate_goal_states(env, limit=2000000):

    '''
    enumerate_goal_states - Every collision-free joint state earning the team reward

    Parameters
    ----------
        env: CoverageEnvironment

    kwargs
    ------
        limit: int
            - Largest number of joint states which will be scanned

    Returns
    -------
        goals: list of JointState in canonical (agent-0-major cell index) order
    '''

    grid = env.grid
    n_states = int(np.prod(np.arange(grid.n_cells - env.n_agents + 1, grid.n_cells + 1), dtype=float))
    if n_states > limit:
        raise ValueError("Scanning %d joint states exceeds the limit of %d" % (n_states, limit))

    cells = [grid.cell_from_index(c) for c in range(grid.n_cells)]
    masks = np.array([fov_mask(cell, grid) for cell in cells], dtype=int)
    field_mask = env.field.mask

    # Footprints covering no field cell can still be part of a goal when fb < |F|,
    # so every permutation is checked.
    goals = []
    for combo in itertools.permutations(range(grid.n_cells), env.n_agents):
        counts = masks[list(combo)].sum(axis=0)
        coverage = int((counts*field_mask).sum())
        shared = counts*(counts >= 2)
        if env.overlap_on_field_only: shared = shared*field_mask
        if coverage >= env.fb and shared.sum() <= 0:
            goals.append(tuple(cells[c] for c in combo))

    logger.debug("%d goal states out of %d joint states", len(goals), n_states)
    return goals

def render_field(env, joint):

    '''
    render_field - Text picture of the footprints over the field

    Row 0 is y = 0, as in mask files. '#' marks an uncovered field cell, '.' an unseen
    background cell, a digit the rank of the only agent seeing the cell ('-' for ranks
    above 9) and '*' a cell seen by two or more agents.
    '''

    grid = env.grid
    masks = _footprints(joint, grid)
    counts = masks.sum(axis=0)
    rows = []
    for y in range(grid.dim_y):
        row = []
        for x in range(grid.dim_x):
            if counts[x, y] >= 2: row.append('*')
            elif counts[x, y] == 1:
                rank = int(np.argmax(masks[:, x, y]))
                row.append(str(rank) if rank < 10 else '-')
            elif env.field.mask[x, y]: row.append('#')
            else: row.append('.')
        rows.append(''.join(row))

    return '\n'.join(rows)
