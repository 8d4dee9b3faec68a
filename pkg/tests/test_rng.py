import numpy as np
import pytest
from scipy import stats
from scipy.special import ndtri

from revdiff import rng as rngmod
from revdiff.rng import CounterStream, GeneratorStream, as_stream, derive_keys, normal_block


def test_ndtri_matches_scipy():
    u = np.concatenate([
        np.logspace(-300, -1, 2000),
        np.linspace(1e-6, 1 - 1e-6, 20001),
        1.0 - np.logspace(-16, -1, 500),
    ])
    ours = np.array([rngmod._ndtri(v) for v in u])
    ref = ndtri(u)
    assert np.max(np.abs(ours - ref) / np.maximum(1.0, np.abs(ref))) < 5e-15


def test_normal_distribution():
    x = CounterStream(7, np.arange(200), 3, rngmod.SCORE).standard_normal((200, 5000)).ravel()
    assert abs(x.mean()) < 4 / np.sqrt(x.size)
    assert abs(x.var() - 1) < 4 * np.sqrt(2 / x.size)
    assert stats.kstest(x[:200_000], "norm").pvalue > 1e-3


def test_rows_independent():
    x = CounterStream(0, np.arange(2000), 1, 2).standard_normal((2000, 2))
    assert abs(np.corrcoef(x[:, 0], x[:, 1])[0, 1]) < 0.1
    assert abs(np.corrcoef(x[:-1, 0], x[1:, 0])[0, 1]) < 0.1


def test_continuation_equals_single_draw():
    a = CounterStream(1, [3, 9], 4, 2)
    parts = np.concatenate([a.standard_normal((2, 3)), a.standard_normal((2, 5))], axis=1)
    whole = CounterStream(1, [3, 9], 4, 2).standard_normal((2, 8))
    np.testing.assert_array_equal(parts, whole)


def test_partition_invariance():
    full = CounterStream(5, np.arange(10), 2, 3).standard_normal((10, 4))
    left = CounterStream(5, np.arange(4), 2, 3).standard_normal((4, 4))
    right = CounterStream(5, np.arange(4, 10), 2, 3).standard_normal((6, 4))
    np.testing.assert_array_equal(full, np.concatenate([left, right]))


@pytest.mark.parametrize("field", ["seed", "chain", "step", "purpose"])
def test_keys_differ(field):
    base = dict(seed=1, chain=2, step=3, purpose=4)
    other = dict(base)
    other[field] += 1
    k0 = derive_keys(base["seed"], [base["chain"]], base["step"], base["purpose"])
    k1 = derive_keys(other["seed"], [other["chain"]], other["step"], other["purpose"])
    assert k0[0] != k1[0]


def test_normal_block_matches_streams():
    chains = np.array([0, 5, 6])
    steps = np.array([1, 2, 10])
    block = normal_block(9, chains, steps, rngmod.LANGEVIN, 3)
    for j, s in enumerate(steps):
        for i, c in enumerate(chains):
            ref = CounterStream(9, [c], s, rngmod.LANGEVIN).standard_normal((1, 3))[0]
            np.testing.assert_array_equal(block[j, i], ref)


def test_leading_dimension_checked():
    with pytest.raises(ValueError):
        CounterStream(0, [0, 1]).standard_normal((3, 2))


def test_negative_keys_rejected():
    with pytest.raises(ValueError):
        derive_keys(-1, [0])


def test_as_stream():
    assert isinstance(as_stream(3, 2), GeneratorStream)
    s = CounterStream(0, [0])
    assert as_stream(s, 1) is s
    with pytest.raises(TypeError):
        as_stream("nope", 1)
