"""Layer containers: the float model and its quantized integer form."""

from dataclasses import dataclass

import numpy as np

from .validation import check_bits, check_finite, check_int_range, check_weight_matrix


@dataclass(frozen=True, eq=False)
class FloatLayer:
    """Fully-connected layer in floating point.

    ``weights[i, j]`` is the weight connecting input ``i`` to output ``j``;
    values are held as float32 so that the container round trip is exact.
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        W = check_weight_matrix(self.weights, dtype=np.float32)
        b = np.asarray(self.bias, dtype=np.float32).reshape(-1)
        if b.shape[0] != W.shape[1]:
            raise ValueError(f"bias length {b.shape[0]} != n_outputs {W.shape[1]}")
        check_finite(W, name="weights")
        check_finite(b, name="bias")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "bias", b)

    @property
    def n_inputs(self):
        return self.weights.shape[0]

    @property
    def n_outputs(self):
        return self.weights.shape[1]

    def __eq__(self, other):
        if not isinstance(other, FloatLayer):
            return NotImplemented
        return (
            self.weights.shape == other.weights.shape
            and self.weights.tobytes() == other.weights.tobytes()
            and self.bias.tobytes() == other.bias.tobytes()
        )


@dataclass(frozen=True, eq=False)
class QuantizedLayer:
    """Fully-connected layer in the ``q``-bit signed integer domain.

    ``scale`` dequantizes weights (``w = weights * scale``) and is rounded to
    float32 on construction, matching what the container can store.
    """

    weights: np.ndarray
    bias: np.ndarray
    scale: float = 1.0
    q: int = 8

    def __post_init__(self):
        q = check_bits(self.q)
        W = check_weight_matrix(self.weights)
        check_int_range(W, q)
        W = W.astype(np.int8)
        b = np.asarray(self.bias).reshape(-1)
        if b.shape[0] != W.shape[1]:
            raise ValueError(f"bias length {b.shape[0]} != n_outputs {W.shape[1]}")
        if b.size and (b.min() < np.iinfo(np.int32).min or b.max() > np.iinfo(np.int32).max):
            raise ValueError("bias does not fit in int32")
        b = b.astype(np.int32)
        scale = float(np.float32(self.scale))
        if not (np.isfinite(scale) and scale > 0):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "q", q)

    @property
    def n_inputs(self):
        return self.weights.shape[0]

    @property
    def n_outputs(self):
        return self.weights.shape[1]

    def with_weights(self, weights):
        return QuantizedLayer(weights, self.bias, self.scale, self.q)

    def __eq__(self, other):
        if not isinstance(other, QuantizedLayer):
            return NotImplemented
        return (
            self.q == other.q
            and self.scale == other.scale
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.bias, other.bias)
        )
