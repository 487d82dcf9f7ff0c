"""Symmetric per-tensor linear quantization of FC weights."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .layers import FloatLayer, QuantizedLayer
from .validation import check_bits, check_finite, check_weight_matrix


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _qmax(q):
    return (1 << (q - 1)) - 1


def _quantize_array(w, amax, q):
    # w / scale computed as w * qmax / amax so on-grid inputs land exactly on integers
    lo, hi = -(1 << (q - 1)), _qmax(q)
    if amax == 0:
        return np.zeros(np.shape(w), dtype=np.int64)
    v = round_half_away(np.asarray(w, dtype=np.float64) / amax * _qmax(q))
    return np.clip(v, lo, hi).astype(np.int64)


def quantize_layer(layer, q=8):
    """Quantize a :class:`FloatLayer` to ``q``-bit signed integers.

    ``scale = max|w| / (2**(q-1) - 1)``; an all-zero layer gets ``scale = 1``.
    Biases are mapped to int32 with the same scale so the integer engine can
    add them directly.
    """
    q = check_bits(q)
    W = layer.weights.astype(np.float64)
    amax = float(np.abs(W).max())
    scale = amax / _qmax(q) if amax > 0 else 1.0
    Wq = _quantize_array(W, amax, q)
    b = round_half_away(layer.bias.astype(np.float64) / scale)
    b = np.clip(b, np.iinfo(np.int32).min, np.iinfo(np.int32).max).astype(np.int32)
    return QuantizedLayer(Wq, b, scale=scale, q=q)


def dequantize(qlayer):
    W = qlayer.weights.astype(np.float64) * qlayer.scale
    b = qlayer.bias.astype(np.float64) * qlayer.scale
    return FloatLayer(W, b)


class LinearQuantizer(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`quantize_layer` for weight matrices.

    Parameters
    ----------
    bits : int, default=8
        Target bit width ``q``.

    Attributes
    ----------
    scale_ : float
        Dequantization factor learned from the fitted matrix.
    amax_ : float
        Largest absolute weight seen during ``fit``.
    """

    def __init__(self, bits=8):
        self.bits = bits

    def fit(self, X, y=None):
        q = check_bits(self.bits)
        X = check_finite(check_weight_matrix(X, dtype=np.float64), name="X")
        self.amax_ = float(np.abs(X).max())
        self.scale_ = float(np.float32(self.amax_ / _qmax(q) if self.amax_ > 0 else 1.0))
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "scale_")
        X = check_finite(check_weight_matrix(X, dtype=np.float64), name="X")
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, expected {self.n_features_in_}")
        return _quantize_array(X, self.amax_, check_bits(self.bits)).astype(np.int8)

    def inverse_transform(self, X):
        check_is_fitted(self, "scale_")
        return np.asarray(X, dtype=np.float64) * self.scale_
