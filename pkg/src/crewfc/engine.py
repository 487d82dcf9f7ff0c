"""Functional (untimed) FC execution: dense, CREW memoized and UCNN factorized.

All three paths accumulate exactly in integers and must agree cell for cell.
Outputs are pre-activation int32 values, bias included.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .codec import encode
from .layers import QuantizedLayer
from .validation import check_input_batch, check_input_vector

# 8-bit operands: |product| <= 2**14, so up to 2**15 inputs cannot overflow int32
MAX_SAFE_INPUTS = 1 << 15


@dataclass(frozen=True)
class ExecutionTrace:
    multiplications: int
    additions: int
    partial_product_table_entries: int
    index_lookups: int
    outputs: np.ndarray


@dataclass(frozen=True)
class PartialProductTable:
    """Memoized ``in(i) * u`` products, row ``i`` holding one entry per unique weight."""

    values: np.ndarray
    offsets: np.ndarray
    counts: np.ndarray

    def row(self, i):
        return self.values[self.offsets[i]:self.offsets[i] + self.counts[i]]

    def __len__(self):
        return self.counts.size


def _finish(acc, bias):
    out = acc + bias.astype(np.int64)
    info = np.iinfo(np.int32)
    if out.size and (out.min() < info.min or out.max() > info.max):
        raise OverflowError("accumulated output does not fit in int32")
    return out.astype(np.int32)


def _check_size(n):
    if n > MAX_SAFE_INPUTS:
        raise ValueError(f"n_inputs={n} exceeds {MAX_SAFE_INPUTS}; int32 accumulation could overflow")


def dense_forward(layer, x):
    """Reference dot products: ``out[j] = sum_i w[i, j] * x[i] + b[j]``."""
    n, m = layer.weights.shape
    _check_size(n)
    x = check_input_vector(x, n)
    out = _finish(x @ layer.weights.astype(np.int64), layer.bias)
    return out, ExecutionTrace(n * m, n * m, 0, 0, out)


def crew_forward(enc, x):
    """Two-step execution from a :class:`CrewEncoding`.

    Step 1 multiplies every input by its row's unique weights and memoizes the
    products; step 2 walks the index matrix, summing the selected products
    into each output.
    """
    n, m = enc.n_inputs, enc.n_outputs
    _check_size(n)
    x = check_input_vector(x, n)
    flat, offsets = enc.flat_uniques()
    products = (np.repeat(x, enc.uw_counts) * flat).astype(np.int16)
    table = PartialProductTable(products, offsets, enc.uw_counts)
    gathered = products[offsets[:, None] + enc.index_matrix.astype(np.int64)]
    out = _finish(gathered.astype(np.int64).sum(axis=0), enc.bias)
    n_products = int(enc.uw_counts.sum())
    trace = ExecutionTrace(n_products, n * m, n_products, n * m, out)
    return out, trace, table


def column_unique_counts(W):
    """Distinct weight values in each output column."""
    W = np.asarray(W, dtype=np.int64)
    n, m = W.shape
    present = np.zeros((256, m), dtype=bool)
    present[W + 128, np.broadcast_to(np.arange(m), (n, m))] = True
    return present.sum(axis=0)


def ucnn_forward(layer, x):
    """Per-output factorization: inputs sharing a weight value are summed first.

    ``out[j] = sum_u u * (sum of x[i] with w[i, j] == u) + b[j]``; one
    multiplication per distinct value in column ``j``. Additions count the
    gather adds (``N - UW_col`` per column) plus one final add per group,
    the bias add included.
    """
    n, m = layer.weights.shape
    _check_size(n)
    x = check_input_vector(x, n)
    W = layer.weights.astype(np.int64) + 128
    cols = np.broadcast_to(np.arange(m), (n, m))
    sums = np.zeros((256, m), dtype=np.int64)
    np.add.at(sums, (W.ravel(), cols.ravel()), np.broadcast_to(x[:, None], (n, m)).ravel())
    values = np.arange(256, dtype=np.int64) - 128
    out = _finish(values @ sums, layer.bias)
    uw_col = column_unique_counts(layer.weights)
    muls = int(uw_col.sum())
    adds = int((n - uw_col).sum()) + muls
    return out, ExecutionTrace(muls, adds, 0, n * m, out)


class CrewLinear(BaseEstimator):
    """FC layer executor with an sklearn-style interface.

    ``fit`` takes an integer weight matrix of shape ``(n_inputs, n_outputs)``
    (or a :class:`QuantizedLayer`) and builds the CREW encoding; ``predict``
    evaluates a batch of int8 input vectors along the chosen path.

    Parameters
    ----------
    method : {"crew", "dense", "ucnn"}, default="crew"
        Execution path used by ``predict``.
    bits : int, default=8
        Bit width of the weights passed to ``fit``.

    Attributes
    ----------
    layer_ : QuantizedLayer
    encoding_ : CrewEncoding
    trace_ : ExecutionTrace
        Counters of the last sample evaluated by ``predict``.
    """

    def __init__(self, method="crew", bits=8):
        self.method = method
        self.bits = bits

    def fit(self, X, y=None, bias=None):
        if isinstance(X, QuantizedLayer):
            layer = X
        else:
            X = np.asarray(X)
            b = np.zeros(X.shape[-1], dtype=np.int32) if bias is None else bias
            layer = QuantizedLayer(X, b, q=self.bits)
        self.layer_ = layer
        self.encoding_ = encode(layer)
        self.n_features_in_ = layer.n_inputs
        return self

    def predict(self, X):
        check_is_fitted(self, "encoding_")
        if self.method not in ("crew", "dense", "ucnn"):
            raise ValueError(f"unknown method {self.method!r}")
        X = check_input_batch(X, self.n_features_in_)
        out = np.empty((X.shape[0], self.layer_.n_outputs), dtype=np.int32)
        for k, x in enumerate(X):
            if self.method == "crew":
                out[k], self.trace_, _ = crew_forward(self.encoding_, x)
            elif self.method == "dense":
                out[k], self.trace_ = dense_forward(self.layer_, x)
            else:
                out[k], self.trace_ = ucnn_forward(self.layer_, x)
        return out
