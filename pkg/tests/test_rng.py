import numpy as np
import pytest

from fedspectrum.rng import as_key, child_rng, subkey


def test_as_key_normalizes_ints_and_tuples():
    assert as_key(7) == (7,)
    assert as_key((1, 2, 3)) == (1, 2, 3)
    assert as_key([4, 5]) == (4, 5)


def test_negative_seed_rejected():
    with pytest.raises(ValueError):
        as_key(-1)


def test_subkey_extends():
    assert subkey(7, 2, 0, 3) == (7, 2, 0, 3)
    assert subkey((7, 2), 1) == (7, 2, 1)


def test_child_streams_reproducible():
    a = child_rng(9, 1, 2).standard_normal(8)
    b = child_rng(9, 1, 2).standard_normal(8)
    assert np.array_equal(a, b)


def test_sibling_streams_differ():
    a = child_rng(9, 1, 2).standard_normal(8)
    b = child_rng(9, 1, 3).standard_normal(8)
    c = child_rng(9, 2, 2).standard_normal(8)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_streams_independent_of_consumption_order():
    # Drawing from one child stream never affects a sibling.
    first = child_rng(5, 0)
    first.standard_normal(100)
    drawn = child_rng(5, 1).standard_normal(4)
    fresh = child_rng(5, 1).standard_normal(4)
    assert np.array_equal(drawn, fresh)
