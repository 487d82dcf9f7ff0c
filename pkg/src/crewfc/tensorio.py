"""FCL1 layer container and synthetic layer generation.

Container layout (little-endian)::

    b"FCL1" | u8 dtype | u32 N | u32 M | payload

dtype 0 payload is ``N*M`` float32 weights (row-major) then ``M`` float32
biases; dtype 1 payload is one float32 scale, ``N*M`` int8 weights and ``M``
int32 biases.
"""

import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .exceptions import FormatError, ProfileError
from .layers import FloatLayer, QuantizedLayer

MAGIC = b"FCL1"
DTYPE_FLOAT32 = 0
DTYPE_INT8 = 1
_HEADER = struct.Struct("<4sBII")


def atomic_write_bytes(path, data):
    """Write ``data`` to ``path`` through a temp file and rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def layer_to_bytes(layer):
    if isinstance(layer, QuantizedLayer):
        n, m = layer.weights.shape
        return b"".join([
            _HEADER.pack(MAGIC, DTYPE_INT8, n, m),
            struct.pack("<f", layer.scale),
            layer.weights.astype("<i1").tobytes(),
            layer.bias.astype("<i4").tobytes(),
        ])
    if isinstance(layer, FloatLayer):
        n, m = layer.weights.shape
        return b"".join([
            _HEADER.pack(MAGIC, DTYPE_FLOAT32, n, m),
            layer.weights.astype("<f4").tobytes(),
            layer.bias.astype("<f4").tobytes(),
        ])
    raise TypeError(f"cannot serialize {type(layer).__name__}")


def layer_from_bytes(buf):
    """Parse an FCL1 buffer into a :class:`FloatLayer` or :class:`QuantizedLayer`."""
    if len(buf) < _HEADER.size:
        raise FormatError(f"header truncated: {len(buf)} bytes")
    magic, dtype, n, m = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if n < 1 or m < 1:
        raise FormatError(f"invalid dimensions N={n}, M={m}")
    body = memoryview(buf)[_HEADER.size:]
    if dtype == DTYPE_FLOAT32:
        expected = 4 * (n * m + m)
    elif dtype == DTYPE_INT8:
        expected = 4 + n * m + 4 * m
    else:
        raise FormatError(f"unknown dtype tag {dtype}")
    if len(body) != expected:
        raise FormatError(
            f"payload holds {len(body)} bytes, header N={n}, M={m} dtype={dtype} needs {expected}"
        )
    try:
        if dtype == DTYPE_FLOAT32:
            vals = np.frombuffer(body, dtype="<f4")
            W, b = vals[: n * m].reshape(n, m), vals[n * m:]
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise FormatError("non-finite value in payload")
            return FloatLayer(W.astype(np.float32), b.astype(np.float32))
        (scale,) = struct.unpack_from("<f", body, 0)
        if not (np.isfinite(scale) and scale > 0):
            raise FormatError(f"invalid scale {scale}")
        W = np.frombuffer(body, dtype="<i1", count=n * m, offset=4).reshape(n, m)
        b = np.frombuffer(body, dtype="<i4", count=m, offset=4 + n * m)
        # the container carries no bit width; int8 storage implies q = 8
        return QuantizedLayer(W.astype(np.int8), b.astype(np.int32), scale=scale, q=8)
    except ValueError as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(str(exc)) from exc


def load_layer(path):
    with open(path, "rb") as fh:
        return layer_from_bytes(fh.read())


def save_layer(layer, path):
    atomic_write_bytes(path, layer_to_bytes(layer))


@dataclass(frozen=True)
class UniqueWeightProfile:
    """Target distribution of unique weights per input row.

    Exactly one of ``uw`` (every row gets ``uw`` distinct values) or
    ``histogram`` (mapping UW value -> probability) must be given.
    ``zipf_exponent`` skews how often each distinct value is reused across
    the row's ``n_outputs`` slots.
    """

    n_inputs: int
    n_outputs: int
    uw: int = None
    histogram: dict = field(default=None, hash=False)
    zipf_exponent: float = 1.0

    def __post_init__(self):
        if self.n_inputs < 1 or self.n_outputs < 1:
            raise ProfileError("n_inputs and n_outputs must be positive")
        if (self.uw is None) == (self.histogram is None):
            raise ProfileError("give exactly one of uw or histogram")
        limit = min(self.n_outputs, 256)
        for v in self.support():
            if not 1 <= v <= limit:
                raise ProfileError(
                    f"UW={v} cannot be placed in a row of {self.n_outputs} slots "
                    f"(need 1 <= UW <= {limit})"
                )
        if self.histogram is not None:
            p = np.array(list(self.histogram.values()), dtype=np.float64)
            if np.any(p < 0) or not np.isclose(p.sum(), 1.0):
                raise ProfileError("histogram probabilities must be non-negative and sum to 1")
        if self.zipf_exponent < 0:
            raise ProfileError("zipf_exponent must be non-negative")

    def support(self):
        if self.uw is not None:
            return [int(self.uw)]
        return [int(k) for k in self.histogram]

    def mean_uw(self):
        if self.uw is not None:
            return float(self.uw)
        return float(sum(k * p for k, p in self.histogram.items()))

    def draw_counts(self, rng):
        if self.uw is not None:
            return np.full(self.n_inputs, int(self.uw), dtype=np.int64)
        keys = np.array(list(self.histogram), dtype=np.int64)
        p = np.array(list(self.histogram.values()), dtype=np.float64)
        return rng.choice(keys, size=self.n_inputs, p=p / p.sum())


def synth_row(rng, k, m, zipf_exponent):
    """One row of ``m`` int8 weights holding exactly ``k`` distinct values."""
    values = rng.choice(256, size=k, replace=False).astype(np.int64) - 128
    row = np.empty(m, dtype=np.int64)
    slots = rng.permutation(m)
    # every distinct value occupies at least one slot, the rest follow the skewed draw
    row[slots[:k]] = values
    if m > k:
        p = np.arange(1, k + 1, dtype=np.float64) ** -zipf_exponent
        row[slots[k:]] = values[rng.choice(k, size=m - k, p=p / p.sum())]
    return row


def synth_layer(profile, seed):
    """Generate a quantized layer whose rows follow ``profile``.

    Deterministic in ``(profile, seed)``. Biases are zero.
    """
    rng = np.random.default_rng(seed)
    counts = profile.draw_counts(rng)
    W = np.empty((profile.n_inputs, profile.n_outputs), dtype=np.int64)
    for i, k in enumerate(counts):
        W[i] = synth_row(rng, int(k), profile.n_outputs, profile.zipf_exponent)
    bias = np.zeros(profile.n_outputs, dtype=np.int32)
    return QuantizedLayer(W, bias, scale=1.0 / 127, q=8)
