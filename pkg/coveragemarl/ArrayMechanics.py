'''
ArrayMechanics - Index arithmetic and array helpers shared across the package.

Joint actions and joint states are stored as canonical integer indices in a
mixed-radix system where agent 0 is the most significant digit. Every module
which enumerates joint actions (CE tables, feature blocks, collision filters)
uses the functions here so that index orderings always agree.

Functions
---------
    encode_index - Converts a tuple of digits into its canonical index (agent-0-major)

    decode_index - Converts a canonical index back into a tuple of digits

    digit_table - Array of every digit tuple, row r holding the digits of index r

    memoryLimit - Number of float64 entries which may be allocated whilst using a
                  set proportion of the available memory

    workerLimit - Number of worker processes to use for a given number of jobs

Classes
-------
    external - Allows multiprocessing of a function with fixed arguments
'''

from functools import lru_cache

import numpy as np
import psutil


def encode_index(digits, base):

    '''
    encode_index - Converts a tuple of digits into its canonical index (agent-0-major)

    Parameters
    ----------
        digits: sequence of int
            - One digit per agent, each in [0, base)
        base: int
            - Radix (number of values per digit)

    Returns
    -------
        index: int
            - sum_i digits[i] * base**(len(digits)-1-i)
    '''

    index = 0
    for d in digits:
        d = int(d)
        if d < 0 or d >= base:
            raise ValueError("Digit %d outside [0, %d)" % (d, base))
        index = index*base + d

    return index

def decode_index(index, base, length):

    '''
    decode_index - Converts a canonical index back into a tuple of digits

    Parameters
    ----------
        index: int
            - Canonical index in [0, base**length)
        base: int
            - Radix
        length: int
            - Number of digits

    Returns
    -------
        digits: tuple of int
    '''

    index = int(index)
    if index < 0 or index >= base**length:
        raise ValueError("Index %d outside [0, %d)" % (index, base**length))

    digits = [0]*length
    for i in range(length-1, -1, -1):
        index, digits[i] = divmod(index, base)

    return tuple(digits)

@lru_cache(maxsize=64)
def digit_table(base, length):

    '''
    digit_table - Array of every digit tuple, row r holding the digits of index r
                  (cached and read-only)

    Parameters
    ----------
        base: int
        length: int

    Returns
    -------
        table: np.array of int (base**length x length)
    '''

    if length == 0: table = np.zeros((1, 0), dtype=int)
    else: table = np.indices((base,)*length).reshape(length, -1).T.copy()
    table.flags.writeable = False

    return table

def memoryLimit(proportion=0.5, memory=None):

    '''
    memoryLimit - Number of float64 entries which may be allocated whilst using a
                  set proportion of the available memory

    **kwargs
    --------
        proportion: float (<1)
            - Proportion of available memory which this can use
        memory: float
            - Gb of memory to assume instead of querying the machine

    Returns
    -------
        n_max: int
    '''

    if memory is None: mem = psutil.virtual_memory().available
    else: mem = float(memory)*(float(1024)**3)

    return int(mem*proportion/8)

def workerLimit(njobs, ncores=1):

    '''
    workerLimit - Number of worker processes to use for a given number of jobs

    Parameters
    ----------
        njobs: int
            - Number of independent jobs
        ncores: int
            - Requested number of cores (<=0 means all physical cores)

    Returns
    -------
        nworkers: int
            - Never more than the jobs, the request or the machine's cpu count
    '''

    available = psutil.cpu_count(logical=False) or psutil.cpu_count() or 1
    if ncores <= 0: ncores = available

    return max(1, min(int(njobs), int(ncores), int(available)))


class external():

    '''
    external - Allows multiprocessing of a function with fixed arguments

    Parameters
    ----------
        func: function
            - The function being iterated over in parallel
        args: tuple
            - All stationary arguments of function
        kwargs: dict
            - All stationary kwarguments of function
    '''

    def __init__(self, func, args=(), kwargs=None):
        self.func = func
        self.args = tuple(args)
        self.kwargs = kwargs or {}

    def __call__(self, moreargs):

        '''
        __call__ - Run the function on the given arguments

        Parameters
        ----------
            moreargs: tuple
                - Arguments which change with each iteration
        Returns
        -------
            ans: output of function
        '''

        if not isinstance(moreargs, tuple): moreargs = (moreargs,)
        args = moreargs+self.args
        ans = self.func(*args, **self.kwargs)
        return ans
