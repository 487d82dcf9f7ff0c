"""Input validation helpers shared by the functional API and the estimators."""

import numpy as np


def check_bits(q):
    q = int(q)
    if not 2 <= q <= 8:
        raise ValueError(f"bit width must be in [2, 8], got {q}")
    return q


def check_weight_matrix(W, *, dtype=None, name="weights"):
    """Return ``W`` as a 2-D array with at least one row and one column."""
    W = np.asarray(W) if dtype is None else np.asarray(W, dtype=dtype)
    if W.ndim != 2:
        raise ValueError(f"{name} must be 2-D (n_inputs, n_outputs), got shape {W.shape}")
    if W.shape[0] < 1 or W.shape[1] < 1:
        raise ValueError(f"{name} must have at least one row and one column, got {W.shape}")
    return W


def check_int_range(W, q, *, name="weights"):
    lo, hi = -(1 << (q - 1)), (1 << (q - 1)) - 1
    if W.size and (W.min() < lo or W.max() > hi):
        raise ValueError(f"{name} outside the {q}-bit signed range [{lo}, {hi}]")
    if not np.issubdtype(W.dtype, np.integer):
        if not np.array_equal(W, np.round(W)):
            raise ValueError(f"{name} must hold integers")
    return W


def check_finite(a, *, name):
    a = np.asarray(a)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def check_input_vector(x, n_inputs):
    """Validate one int8 activation vector of length ``n_inputs``."""
    x = np.asarray(x)
    if x.ndim != 1:
        raise ValueError(f"input must be a 1-D vector, got shape {x.shape}")
    if x.shape[0] != n_inputs:
        raise ValueError(f"input length {x.shape[0]} does not match n_inputs={n_inputs}")
    if x.size and (x.min() < -128 or x.max() > 127):
        raise ValueError("input values must fit in int8")
    return x.astype(np.int64)


def check_input_batch(X, n_inputs):
    """Validate a batch of int8 input vectors, one per row."""
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != n_inputs:
        raise ValueError(f"expected inputs of shape (n_samples, {n_inputs}), got {X.shape}")
    if X.size and (X.min() < -128 or X.max() > 127):
        raise ValueError("input values must fit in int8")
    return X.astype(np.int64)
