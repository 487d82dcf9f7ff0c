import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import random_layer
from crewfc import CrewLinear, QuantizedLayer, crew_forward, dense_forward, encode, ucnn_forward
from crewfc.engine import MAX_SAFE_INPUTS, column_unique_counts


def test_dense_2x2():
    layer = QuantizedLayer([[2, 2], [3, 5]], [0, 0])
    out, tr = dense_forward(layer, [1, 2])
    assert out.tolist() == [8, 12] == oracles.dense([[2, 2], [3, 5]], [0, 0], [1, 2])
    assert tr.multiplications == 4


def test_crew_2x2():
    layer = QuantizedLayer([[2, 2], [3, 5]], [0, 0])
    out, tr, table = crew_forward(encode(layer), [1, 2])
    assert out.tolist() == [8, 12]
    assert tr.multiplications == 3
    assert tr.partial_product_table_entries == 3
    assert tr.index_lookups == 4
    assert table.row(0).tolist() == [2] and table.row(1).tolist() == [6, 10]
    assert table.values.dtype == np.int16


def test_zero_input_gives_bias(small_layer):
    x = np.zeros(small_layer.n_inputs)
    for out in (dense_forward(small_layer, x)[0], crew_forward(encode(small_layer), x)[0],
                ucnn_forward(small_layer, x)[0]):
        assert np.array_equal(out, small_layer.bias)


def test_unit_basis_selects_row(small_layer):
    enc = encode(small_layer)
    for i in (0, 5, small_layer.n_inputs - 1):
        e = np.zeros(small_layer.n_inputs, dtype=np.int64)
        e[i] = 1
        expect = small_layer.weights[i].astype(np.int64) + small_layer.bias
        assert np.array_equal(dense_forward(small_layer, e)[0], expect)
        assert np.array_equal(crew_forward(enc, e)[0], expect)


def test_matches_python_oracle(rng):
    layer = random_layer(rng, 9, 11)
    x = rng.integers(-128, 128, size=9)
    expect = oracles.dense(layer.weights.tolist(), layer.bias.tolist(), x.tolist())
    assert dense_forward(layer, x)[0].tolist() == expect
    assert crew_forward(encode(layer), x)[0].tolist() == expect
    assert ucnn_forward(layer, x)[0].tolist() == expect


def test_rank_one_rows():
    W = np.repeat(np.arange(-3, 5)[:, None], 10, axis=1)
    layer = QuantizedLayer(W, np.zeros(10))
    _, tr, _ = crew_forward(encode(layer), np.ones(8))
    assert tr.multiplications == 8
    assert dense_forward(layer, np.ones(8))[1].multiplications == 8 * 10


def test_counter_example_10_muls():
    rows = [[1, 2] * 4, [1, 2, 3, 4] * 2, [1, 2, 3] * 2 + [1, 2], [7] * 8]
    layer = QuantizedLayer(rows, np.zeros(8))
    enc = encode(layer)
    assert enc.uw_counts.tolist() == [2, 4, 3, 1]
    _, tr, _ = crew_forward(enc, np.ones(4))
    assert tr.multiplications == 10
    assert dense_forward(layer, np.ones(4))[1].multiplications == 32


def test_ucnn_constant_column():
    layer = QuantizedLayer([[5], [5], [5]], [0])
    out, tr = ucnn_forward(layer, [1, 2, 3])
    assert out.tolist() == [30]
    assert tr.multiplications == 1
    # two gather adds plus one final add
    assert tr.additions == 3


def test_ucnn_column_constant_matrix(rng):
    W = np.tile(rng.integers(-128, 128, size=12), (20, 1))
    layer = QuantizedLayer(W, np.zeros(12))
    assert ucnn_forward(layer, np.ones(20))[1].multiplications == 12


def test_column_unique_counts(rng):
    W = rng.integers(-5, 5, size=(30, 7))
    assert column_unique_counts(W).tolist() == [len(set(W[:, j].tolist())) for j in range(7)]


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 64), st.integers(1, 64), st.integers(1, 256), st.integers(0, 2 ** 32 - 1))
def test_triple_equivalence(n, m, max_uw, seed):
    rng = np.random.default_rng(seed)
    layer = random_layer(rng, n, m, max_uw=max_uw)
    x = rng.integers(-128, 128, size=n)
    d, dt = dense_forward(layer, x)
    c, ct, _ = crew_forward(encode(layer), x)
    u, ut = ucnn_forward(layer, x)
    assert np.array_equal(d, c) and np.array_equal(d, u)
    assert dt.multiplications == n * m
    assert ct.multiplications == int(encode(layer).uw_counts.sum())
    assert ct.index_lookups == n * m
    assert ut.multiplications == int(column_unique_counts(layer.weights).sum())


@pytest.mark.parametrize("a", [-3, -1, 0, 2, 5])
def test_linearity(rng, a):
    layer = random_layer(rng, 40, 30)
    x = rng.integers(-20, 20, size=40)
    enc = encode(layer)
    ax = np.clip(a * x, -128, 127)
    assert np.array_equal(ax, a * x)
    lhs = crew_forward(enc, ax)[0].astype(np.int64)
    rhs = a * crew_forward(enc, x)[0].astype(np.int64) - (a - 1) * layer.bias
    assert np.array_equal(lhs, rhs)


def test_partial_products_fit_int16():
    layer = QuantizedLayer([[-128, 127]], [0, 0])
    _, _, table = crew_forward(encode(layer), [-128])
    assert table.row(0).tolist() == [16384, -16256]


def test_no_overflow_bound():
    # worst case |x * w| = 2**14, times 2**15 inputs, stays inside int32
    assert MAX_SAFE_INPUTS * (1 << 14) <= np.iinfo(np.int32).max + 1
    n = 4096
    layer = QuantizedLayer(np.full((n, 2), -128), [0, 0])
    out, _ = dense_forward(layer, np.full(n, -128))
    assert out.tolist() == [n * 16384] * 2
    assert crew_forward(encode(layer), np.full(n, -128))[0].tolist() == out.tolist()


def test_length_mismatch(small_layer):
    with pytest.raises(ValueError):
        dense_forward(small_layer, np.zeros(3))
    with pytest.raises(ValueError):
        crew_forward(encode(small_layer), np.zeros(3))
    with pytest.raises(ValueError):
        ucnn_forward(small_layer, np.zeros(3))
    with pytest.raises(ValueError):
        dense_forward(small_layer, np.full(small_layer.n_inputs, 300))


def test_crew_linear_estimator(rng, small_layer):
    X = rng.integers(-128, 128, size=(5, small_layer.n_inputs))
    est = CrewLinear().fit(small_layer)
    assert est.get_params() == {"bits": 8, "method": "crew"}
    Y = est.predict(X)
    assert Y.shape == (5, small_layer.n_outputs) and Y.dtype == np.int32
    for method in ("dense", "ucnn"):
        assert np.array_equal(est.set_params(method=method).predict(X), Y)
    ref = X @ small_layer.weights.astype(np.int64) + small_layer.bias
    assert np.array_equal(Y, ref)
    raw = CrewLinear().fit(small_layer.weights, bias=small_layer.bias)
    assert np.array_equal(raw.predict(X), Y)
    with pytest.raises(ValueError):
        CrewLinear(method="bogus").fit(small_layer).predict(X)
