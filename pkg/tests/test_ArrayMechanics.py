import numpy as np
import pytest

from coveragemarl.ArrayMechanics import decode_index, digit_table, encode_index, external, memoryLimit, workerLimit


def scaled_sum(x, y, scale=1):
    return scale*(x + y)


def test_agent_zero_is_most_significant():
    assert encode_index((0, 1), 6) == 1
    assert encode_index((1, 0), 6) == 6
    assert encode_index((5, 5, 5), 6) == 215
    assert decode_index(6, 6, 2) == (1, 0)
    assert decode_index(0, 6, 0) == ()

def test_encode_decode_agree():
    for index in range(0, 18**2, 7):
        assert encode_index(decode_index(index, 18, 2), 18) == index

def test_index_bounds():
    with pytest.raises(ValueError):
        encode_index((6,), 6)
    with pytest.raises(ValueError):
        decode_index(36, 6, 2)
    with pytest.raises(ValueError):
        decode_index(-1, 6, 2)

def test_digit_table():
    table = digit_table(6, 2)
    assert table.shape == (36, 2)
    assert tuple(table[23]) == (3, 5)
    assert all(encode_index(row, 3) == r for r, row in enumerate(digit_table(3, 3)))
    assert digit_table(6, 0).shape == (1, 0)
    assert digit_table(6, 2) is table
    with pytest.raises(ValueError):
        table[0, 0] = 1

def test_memory_limit():
    assert memoryLimit(proportion=0.5, memory=1) == 2**30//16
    assert memoryLimit() > 0

def test_worker_limit():
    assert workerLimit(1, ncores=8) == 1
    assert workerLimit(3, ncores=1) == 1
    assert 1 <= workerLimit(3, ncores=0) <= 3
    assert workerLimit(0) == 1

def test_external():
    func = external(scaled_sum, args=(10,), kwargs={'scale': 2})
    assert func(1) == 22
    assert func((3,)) == 26
    assert np.isclose(external(np.add, args=(0.5,))(1.), 1.5)
