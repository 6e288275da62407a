import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ir2vis import knn
from ir2vis.errors import ConfigError, DimensionError, ValidationError
from ir2vis.imagery import SamplePair, synth_dataset

import oracles

TS = dt.datetime(2020, 1, 1, tzinfo=dt.timezone.utc)


def _pairs(r, n, size=6, ids=None):
    ids = ids or [f"id{i:03d}" for i in range(n)]
    return [SamplePair(ids[i], TS, r.uniform(0, 1, (1, 3, size, size)).astype(np.float32),
                       r.uniform(0, 1, (1, 3, size, size)).astype(np.float32)) for i in range(n)]


def test_three_identical_ir_give_mean_target():
    ir = np.full((1, 3, 4, 4), 0.5, np.float32)
    pairs = [SamplePair(f"p{i}", TS, ir, np.full((1, 3, 4, 4), v, np.float32)) for i, v in enumerate((0.0, 0.3, 0.6))]
    index = knn.fit(pairs, 3)
    assert len(index) == 3
    out = knn.predict(index, ir)
    assert out.shape == (1, 3, 4, 4)
    np.testing.assert_allclose(out, 0.3, atol=1e-7)


def test_k1_exact_match_returns_target_bitwise():
    r = np.random.default_rng(0)
    pairs = _pairs(r, 5)
    index = knn.fit(pairs, 1)
    assert knn.predict(index, pairs[2].ir).tobytes() == pairs[2].visible.tobytes()


@pytest.mark.parametrize("seed", range(3))
def test_matches_linear_scan_on_50_pairs(seed):
    r = np.random.default_rng(seed)
    pairs = _pairs(r, 50)
    index = knn.fit(pairs, 3)
    for _ in range(10):
        q = r.uniform(0, 1, (1, 3, 6, 6))
        ref, chosen = oracles.knn_linear_scan([p.ir for p in pairs], [p.visible for p in pairs],
                                              [p.id for p in pairs], q, 3)
        np.testing.assert_array_equal([index.ids[i] for i in index.neighbours(q)], chosen)
        np.testing.assert_allclose(knn.predict(index, q)[0], ref[0], atol=1e-7)


def test_ties_broken_by_ascending_id():
    ir = np.zeros((1, 3, 2, 2), np.float32)
    pairs = [SamplePair(pid, TS, ir, np.full((1, 3, 2, 2), v, np.float32))
             for pid, v in (("c", 0.9), ("a", 0.1), ("b", 0.5))]
    index = knn.fit(pairs, 2)
    assert [index.ids[i] for i in index.neighbours(ir)] == ["a", "b"]


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_permutation_invariance_and_range(seed):
    r = np.random.default_rng(seed)
    pairs = _pairs(r, 12, 4)
    q = r.uniform(0, 1, (1, 3, 4, 4))
    a = knn.predict(knn.fit(pairs, 3), q)
    shuffled = [pairs[i] for i in r.permutation(len(pairs))]
    b = knn.predict(knn.fit(shuffled, 3), q)
    assert a.tobytes() == b.tobytes()
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_fit_errors():
    r = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        knn.fit(_pairs(r, 2), 3)
    with pytest.raises(ValidationError):
        knn.fit(_pairs(r, 3, ids=["a", "a", "b"]), 3)
    p = _pairs(r, 3)
    p[0] = SamplePair("x", TS, p[0].ir, None, split="deploy")
    with pytest.raises(ValidationError):
        knn.fit(p, 3)


def test_query_dimension_mismatch():
    index = knn.fit(_pairs(np.random.default_rng(0), 4), 3)
    with pytest.raises(DimensionError):
        knn.predict(index, np.zeros((1, 3, 5, 5)))


def test_two_hundred_synthetic_pairs_queryable():
    pairs = synth_dataset(200, 16, seed=5)
    index = knn.fit(pairs, 3)
    assert knn.predict(index, pairs[0].ir).shape == (1, 3, 16, 16)
