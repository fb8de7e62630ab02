'''
FeatureSchemes - Linear approximation of the joint Q-function, Q_i(S, A) = phi(S, A).theta_i

Every scheme splits its feature vector into one block per joint action; phi(S, A)
is zero outside the block of A. Inside the block:

    FSR - one indicator per coordinate value of every agent (x, y and z one-hot)
    RBF - Gaussian bells exp(-|S - c_l|^2 / (2 mu_l^2)) around L centers in joint-state space
    Tabular - a single indicator for the joint state (exact Q-learning)

Classes
-------
    SchemeVariant - fsr, rbf or tabular

    SparseFeatures - Sorted (index, value) pairs of a feature vector

    FeatureScheme - Base class: block layout and feature evaluation
    FSRScheme, RBFScheme, TabularScheme

Functions
---------
    make_scheme - Builds a scheme from its variant name

    default_rbf_centers - Seeded RBF centers and radii

    fsr_features / rbf_features / tabular_features - phi(S, A) with a variant check

    q_value - phi.theta

    action_values - phi(S, A).theta for every joint action A at once

    best_joint_q - Best admissible joint action under theta and its value

    td_update - One approximated Q-learning step on theta

    parameter_length / memory_footprint - Parameter vector lengths

    save_checkpoint / load_checkpoint - HDF5 parameter snapshots

Requirements
------------

CoverageGrid.py
ArrayMechanics.py
'''

import enum
import logging
from dataclasses import dataclass

import h5py
import numpy as np
from scipy.spatial.distance import cdist

from coveragemarl.ArrayMechanics import encode_index, decode_index, memoryLimit
from coveragemarl.CoverageGrid import (N_ACTIONS, GridSpec, joint_action_index,
                                       joint_action_from_index)

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class SchemeMismatchError(ValueError):
    "Raised when features or parameters belong to a different scheme."
    pass

class DivergenceError(FloatingPointError):
    "Raised when a parameter update produces NaN or infinite values."
    pass

class CheckpointError(ValueError):
    "Raised when a checkpoint file is missing fields or is inconsistent."
    pass


class SchemeVariant(enum.Enum):
    FSR = 'fsr'
    RBF = 'rbf'
    Tabular = 'tabular'


@dataclass(frozen=True, eq=False)
class SparseFeatures():

    '''
    SparseFeatures - Nonzero entries of a feature vector, indices ascending
    '''

    indices: np.ndarray
    values: np.ndarray

    @property
    def nnz(self):
        return len(self.indices)

    def to_dense(self, length):
        phi = np.zeros(length)
        phi[self.indices] = self.values
        return phi


def _action_index(A, n_agents):
    # Accepts a JointAction or a canonical index
    if isinstance(A, (int, np.integer)):
        index = int(A)
        if not 0 <= index < N_ACTIONS**n_agents:
            raise ValueError("Joint-action index %d outside [0, %d)" % (index, N_ACTIONS**n_agents))
        return index
    if len(A) != n_agents:
        raise ValueError("Joint action has %d entries for %d agents" % (len(A), n_agents))
    return joint_action_index(A)


class FeatureScheme():

    '''
    FeatureScheme - Block layout shared by every scheme

    Parameters
    ----------
        grid: GridSpec
        n_agents: int

    Attributes
    ----------
        block_size: int
            - Features per joint action
        n_joint: int
            - 6**m joint actions
        length: int
            - block_size*n_joint, the parameter vector length

    Functions
    ---------
        state_features(S) - (indices, values) inside one block
        __call__(S, A) - SparseFeatures of phi(S, A)
    '''

    variant = None

    def __init__(self, grid, n_agents):

        if int(n_agents) != n_agents or n_agents < 1:
            raise ValueError("n_agents must be a positive integer, got %r" % (n_agents,))
        self.grid = grid
        self.n_agents = int(n_agents)
        self.n_joint = N_ACTIONS**self.n_agents

    @property
    def coordinate_dim(self):
        # D = m(X+Y+Z)
        return self.n_agents*(self.grid.dim_x + self.grid.dim_y + self.grid.dim_z)

    @property
    def length(self):
        return self.block_size*self.n_joint

    def state_features(self, S):
        raise NotImplementedError

    def __call__(self, S, A):

        a = _action_index(A, self.n_agents)
        indices, values = self.state_features(S)
        return SparseFeatures(indices + a*self.block_size, values)

    def _check_state(self, S):
        if len(S) != self.n_agents:
            raise ValueError("Joint state has %d agents, scheme expects %d" % (len(S), self.n_agents))

    def __repr__(self):
        return "%s(grid=%r, n_agents=%d, length=%d)" % (type(self).__name__, self.grid, self.n_agents, self.length)


class FSRScheme(FeatureScheme):

    '''
    FSRScheme - One-hot x, y and z indicators per agent, D = m(X+Y+Z) features per block
    '''

    variant = SchemeVariant.FSR

    @property
    def block_size(self):
        return self.coordinate_dim

    def state_features(self, S):

        self._check_state(S)
        X, Y, Z = self.grid.shape
        indices = np.empty(3*self.n_agents, dtype=int)
        for i, (x, y, z) in enumerate(S):
            offset = i*(X + Y + Z)
            indices[3*i:3*i+3] = (offset + x, offset + X + y, offset + X + Y + z - 1)

        return indices, np.ones(len(indices))


class RBFScheme(FeatureScheme):

    '''
    RBFScheme - Gaussian bells around L centers in joint-state coordinates

    Parameters
    ----------
        grid: GridSpec
        n_agents: int
        centers: array of float (L x 3m)
            - Points (x_1, y_1, z_1, ..., x_m, y_m, z_m)
        radii: array of float (L) or float
            - mu_l > 0
    '''

    variant = SchemeVariant.RBF

    def __init__(self, grid, n_agents, centers, radii):

        super().__init__(grid, n_agents)

        centers = np.array(centers, dtype=float)
        if centers.ndim != 2 or centers.shape[0] < 1 or centers.shape[1] != 3*self.n_agents:
            raise ValueError("centers must be (L >= 1) x %d, got shape %r" % (3*self.n_agents, centers.shape))
        radii = np.broadcast_to(np.asarray(radii, dtype=float), (centers.shape[0],)).copy()
        if not np.all(np.isfinite(radii) & (radii > 0)):
            raise ValueError("RBF radii must be positive and finite")
        centers.flags.writeable = False
        radii.flags.writeable = False

        self.centers = centers
        self.radii = radii

    @property
    def n_centers(self):
        return len(self.centers)

    @property
    def block_size(self):
        return self.n_centers

    def state_features(self, S):

        self._check_state(S)
        coords = np.asarray(S, dtype=float).ravel()
        d2 = np.sum((self.centers - coords)**2, axis=1)

        return np.arange(self.n_centers), np.exp(-d2/(2*self.radii**2))


class TabularScheme(FeatureScheme):

    '''
    TabularScheme - Indicator of the whole joint state, n_cells**m features per block

    kwargs
    ------
        memory_proportion: float
            - Largest share of the available memory the parameter vectors may use
    '''

    variant = SchemeVariant.Tabular

    def __init__(self, grid, n_agents, memory_proportion=0.5):

        super().__init__(grid, n_agents)
        n_max = memoryLimit(proportion=memory_proportion)
        if self.length*self.n_agents > n_max:
            raise MemoryError("Tabular parameters need %d float64 entries, only %d fit in memory"
                              % (self.length*self.n_agents, n_max))

    @property
    def n_states(self):
        return self.grid.n_cells**self.n_agents

    @property
    def block_size(self):
        return self.n_states

    def state_index(self, S):
        self._check_state(S)
        return encode_index([self.grid.cell_index(agent) for agent in S], self.grid.n_cells)

    def state_features(self, S):
        return np.array([self.state_index(S)]), np.ones(1)

    def decode(self, index):

        '''
        decode - (JointState, JointAction) of a feature index
        '''

        a, s = divmod(int(index), self.n_states)
        S = tuple(self.grid.cell_from_index(c) for c in decode_index(s, self.grid.n_cells, self.n_agents))
        return S, joint_action_from_index(a, self.n_agents)


def default_rbf_centers(grid, n_agents, n_centers=8, seed=None):

    '''
    default_rbf_centers - Centers and radii for an RBFScheme

    A single agent with 8 centers gets the corners of the (x, y, z) bounding box.
    Otherwise the centers are drawn uniformly over the joint-state bounding box from
    a generator seeded with seed. Every radius is half the mean distance from a center
    to its nearest neighbour.

    Returns
    -------
        centers: np.array of float (n_centers x 3*n_agents)
        radii: np.array of float (n_centers)
    '''

    if n_centers < 1:
        raise ValueError("Need at least one RBF center, got %r" % (n_centers,))

    lower = np.tile([0., 0., 1.], n_agents)
    upper = np.tile([grid.dim_x-1., grid.dim_y-1., float(grid.dim_z)], n_agents)

    if n_agents == 1 and n_centers == 8:
        centers = np.array([[x, y, z] for x in (lower[0], upper[0])
                                      for y in (lower[1], upper[1])
                                      for z in (lower[2], upper[2])])
    else:
        rng = np.random.default_rng(seed)
        centers = rng.uniform(lower, upper, size=(n_centers, len(lower)))

    if n_centers == 1:
        mu = 0.5*np.linalg.norm(upper - lower)
    else:
        distance = cdist(centers, centers)
        np.fill_diagonal(distance, np.inf)
        mu = 0.5*distance.min(axis=1).mean()
    # Degenerate grids (all extents 1) collapse the corners
    if not mu > 0: mu = 1.

    return centers, np.full(n_centers, mu)

def make_scheme(variant, grid, n_agents, n_centers=8, seed=None):

    '''
    make_scheme - FeatureScheme for a variant name ('fsr', 'rbf' or 'tabular')
    '''

    variant = SchemeVariant(variant)
    if variant is SchemeVariant.FSR: return FSRScheme(grid, n_agents)
    if variant is SchemeVariant.RBF:
        centers, radii = default_rbf_centers(grid, n_agents, n_centers=n_centers, seed=seed)
        return RBFScheme(grid, n_agents, centers, radii)
    return TabularScheme(grid, n_agents)

def _features_of(variant, S, A, scheme):
    if scheme.variant is not variant:
        raise SchemeMismatchError("Expected a %s scheme, got %s" % (variant.value, scheme.variant.value))
    return scheme(S, A)

def fsr_features(S, A, scheme):
    "fsr_features - phi(S, A) of an FSRScheme (3m ones in the block of A)"
    return _features_of(SchemeVariant.FSR, S, A, scheme)

def rbf_features(S, A, scheme):
    "rbf_features - phi(S, A) of an RBFScheme (L bell values in the block of A)"
    return _features_of(SchemeVariant.RBF, S, A, scheme)

def tabular_features(S, A, scheme):
    "tabular_features - phi(S, A) of a TabularScheme (a single one)"
    return _features_of(SchemeVariant.Tabular, S, A, scheme)

def q_value(theta, phi):

    '''
    q_value - Approximated Q-value phi.theta
    '''

    if phi.nnz and phi.indices[-1] >= len(theta):
        raise SchemeMismatchError("Feature index %d beyond parameter length %d" % (phi.indices[-1], len(theta)))
    return float(theta[phi.indices] @ phi.values)

def action_values(theta, S, scheme):

    '''
    action_values - phi(S, A).theta for every joint action A

    Returns
    -------
        q: np.array of float (6**m), indexed by canonical joint-action index
    '''

    if len(theta) != scheme.length:
        raise SchemeMismatchError("Parameter length %d, scheme expects %d" % (len(theta), scheme.length))
    indices, values = scheme.state_features(S)

    return np.asarray(theta).reshape(scheme.n_joint, scheme.block_size)[:, indices] @ values

def best_joint_q(theta, S, scheme, admissible):

    '''
    best_joint_q - Admissible joint action with the largest approximated Q-value

    Parameters
    ----------
        theta: np.array of float
        S: JointState
        scheme: FeatureScheme
        admissible: array of int
            - Canonical joint-action indices

    Returns
    -------
        action: JointAction
            - Ties go to the smallest canonical index
        value: float
    '''

    admissible = np.unique(np.asarray(admissible, dtype=int))
    if len(admissible) == 0:
        raise ValueError("best_joint_q needs a non-empty admissible set")
    q = action_values(theta, S, scheme)[admissible]
    best = int(np.argmax(q))

    return joint_action_from_index(admissible[best], scheme.n_agents), float(q[best])

def td_update(theta, phi, reward, max_next_q, alpha, gamma, inplace=False):

    '''
    td_update - theta + alpha*(reward + gamma*max_next_q - phi.theta)*phi

    Parameters
    ----------
        theta: np.array of float
        phi: SparseFeatures
            - phi(S_k, A_k)
        reward: float
        max_next_q: float
            - max over admissible A' of phi(S_k+1, A').theta
        alpha: float in (0, 1]
        gamma: float in (0, 1]

    kwargs
    ------
        inplace: bool
            - Update theta itself instead of a copy

    Returns
    -------
        theta: np.array of float

    Raises
    ------
        DivergenceError - an updated entry is NaN or infinite
    '''

    if not 0 < alpha <= 1: raise ValueError("alpha must lie in (0, 1], got %r" % (alpha,))
    if not 0 < gamma <= 1: raise ValueError("gamma must lie in (0, 1], got %r" % (gamma,))

    delta = reward + gamma*max_next_q - q_value(theta, phi)
    if not inplace: theta = theta.copy()
    theta[phi.indices] += alpha*delta*phi.values

    if not np.all(np.isfinite(theta[phi.indices])):
        raise DivergenceError("Parameters diverged (TD error %r)" % delta)

    return theta

def parameter_length(scheme):
    "parameter_length - Length of one agent's parameter vector"
    return scheme.length

def memory_footprint(variant, grid, n_agents, n_centers=8):

    '''
    memory_footprint - Parameter vector length of a scheme without building it

    FSR: m(X+Y+Z)*6**m, RBF: L*6**m, Tabular: (XYZ)**m * 6**m. Python integers, so
    the tabular length never overflows.
    '''

    variant = SchemeVariant(variant)
    n_joint = N_ACTIONS**int(n_agents)
    if variant is SchemeVariant.FSR:
        return n_agents*(grid.dim_x + grid.dim_y + grid.dim_z)*n_joint
    if variant is SchemeVariant.RBF:
        return int(n_centers)*n_joint
    return grid.n_cells**int(n_agents)*n_joint

def save_checkpoint(path, thetas, scheme, **attrs):

    '''
    save_checkpoint - Writes parameter vectors to an HDF5 file

    Layout
    ------
        theta: dataset float64 (m x length)
        centers, radii: datasets (RBF only)
        attrs: format_version, variant, n_agents, dims, tan_theta, n_centers, length,
               plus any extra attrs given (e.g. episode)
    '''

    thetas = np.asarray(thetas, dtype=np.float64)
    if thetas.ndim != 2 or thetas.shape[1] != scheme.length:
        raise SchemeMismatchError("Parameters of shape %r do not fit %r" % (thetas.shape, scheme))

    with h5py.File(path, 'w') as hf:
        hf.create_dataset('theta', data=thetas)
        hf.attrs['format_version'] = CHECKPOINT_VERSION
        hf.attrs['variant'] = scheme.variant.value
        hf.attrs['n_agents'] = scheme.n_agents
        hf.attrs['dims'] = np.array(scheme.grid.shape)
        hf.attrs['tan_theta'] = np.array([scheme.grid.tan_theta_1, scheme.grid.tan_theta_2])
        hf.attrs['length'] = scheme.length
        if scheme.variant is SchemeVariant.RBF:
            hf.attrs['n_centers'] = scheme.n_centers
            hf.create_dataset('centers', data=scheme.centers)
            hf.create_dataset('radii', data=scheme.radii)
        else: hf.attrs['n_centers'] = 0
        for key, value in attrs.items(): hf.attrs[key] = value

    logger.debug("Checkpoint of %d x %d parameters written to %s", thetas.shape[0], thetas.shape[1], path)

def load_checkpoint(path):

    '''
    load_checkpoint - Reads parameter vectors and their scheme from an HDF5 file

    Returns
    -------
        thetas: np.array of float (m x length)
        scheme: FeatureScheme

    Raises
    ------
        CheckpointError - unreadable file, missing fields, wrong version or inconsistent shapes
    '''

    try:
        with h5py.File(path, 'r') as hf:
            version = int(hf.attrs['format_version'])
            if version != CHECKPOINT_VERSION:
                raise CheckpointError("%s: checkpoint version %d, expected %d" % (path, version, CHECKPOINT_VERSION))
            variant = hf.attrs['variant']
            if isinstance(variant, bytes): variant = variant.decode()
            n_agents = int(hf.attrs['n_agents'])
            dims = [int(d) for d in hf.attrs['dims']]
            tan_theta = [float(t) for t in hf.attrs['tan_theta']]
            thetas = hf['theta'][()]
            centers = hf['centers'][()] if 'centers' in hf else None
            radii = hf['radii'][()] if 'radii' in hf else None
    except (OSError, KeyError) as err:
        raise CheckpointError("%s: cannot read checkpoint (%s)" % (path, err)) from err

    grid = GridSpec(*dims, *tan_theta)
    try: variant = SchemeVariant(variant)
    except ValueError as err: raise CheckpointError("%s: unknown scheme %r" % (path, variant)) from err

    if variant is SchemeVariant.RBF:
        if centers is None or radii is None:
            raise CheckpointError("%s: RBF checkpoint without centers/radii" % path)
        scheme = RBFScheme(grid, n_agents, centers, radii)
    elif variant is SchemeVariant.FSR: scheme = FSRScheme(grid, n_agents)
    else: scheme = TabularScheme(grid, n_agents)

    if thetas.shape != (n_agents, scheme.length):
        raise CheckpointError("%s: theta has shape %r, expected %r" % (path, thetas.shape, (n_agents, scheme.length)))

    return thetas, scheme
