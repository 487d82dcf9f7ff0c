"""Unique-weight analysis, CREW index tables and the packed CREW stream.

A layer is rewritten as, per input row ``i``:

* the ``UW_i`` distinct weights of the row, in first-occurrence order;
* ``M`` indexes of ``b_i = ceil(log2 UW_i)`` bits selecting one of them.

The packed form groups indexes into ``bs_row x bs_col`` blocks stored in
row-major block order. Inside a block the ``bs_col`` indexes of its first row
come first, each at that row's width, MSB-first; every block starts on a byte
boundary. Blocks on the right and bottom borders may be narrower/shorter.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import FormatError
from .layers import QuantizedLayer

CREW_MAGIC = b"CREW"
CREW_VERSION = 1
_CREW_HEADER = struct.Struct("<4sHIIBfHH")

# values are offset into [0, 256) for table lookups; q <= 8 keeps them in range
_OFFSET = 128
_NVALS = 256
_WIDTH_LUT = np.array([0] + [(k - 1).bit_length() for k in range(1, _NVALS + 1)], dtype=np.int64)


def bit_width(uw):
    """Index width for ``uw`` unique weights: ``ceil(log2 uw)``, 0 for ``uw == 1``."""
    uw = np.asarray(uw, dtype=np.int64)
    if np.any(uw < 1) or np.any(uw > _NVALS):
        raise ValueError(f"unique-weight counts must be in [1, {_NVALS}]")
    return _WIDTH_LUT[uw]


def _first_occurrence(W):
    """Vectorized per-row unique extraction in first-occurrence order.

    Returns ``(uw_counts, order, rank)``: ``order[i, :uw_counts[i]]`` lists the
    offset values of row ``i`` by first appearance and ``rank[i, v]`` is the
    position of offset value ``v`` in that list.
    """
    n, m = W.shape
    v = W.astype(np.int64) + _OFFSET
    first = np.full((n, _NVALS), m, dtype=np.int64)
    rows = np.broadcast_to(np.arange(n)[:, None], (n, m))
    cols = np.broadcast_to(np.arange(m)[None, :], (n, m))
    np.minimum.at(first, (rows.ravel(), v.ravel()), cols.ravel())
    present = first < m
    uw = present.sum(axis=1)
    order = np.argsort(first, axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.broadcast_to(np.arange(_NVALS), (n, _NVALS)), axis=1)
    return uw, order, rank


@dataclass(frozen=True)
class RowAnalysis:
    uw_counts: np.ndarray
    n_outputs: int

    @property
    def mean_uw(self):
        return float(self.uw_counts.mean())

    @property
    def muls_fraction(self):
        """Share of the dense multiplications left when each input multiplies only its uniques."""
        return float(self.uw_counts.sum()) / (self.uw_counts.size * self.n_outputs)

    def histogram(self):
        """``{UW: number of rows}`` for every UW value that occurs."""
        vals, counts = np.unique(self.uw_counts, return_counts=True)
        return {int(k): int(c) for k, c in zip(vals, counts)}

    def cumulative(self, uw):
        """Fraction of rows with strictly fewer than ``uw`` unique weights."""
        return float(np.mean(self.uw_counts < uw))


def analyze_rows(layer):
    W = layer.weights if isinstance(layer, QuantizedLayer) else np.asarray(layer)
    uw, _, _ = _first_occurrence(W)
    return RowAnalysis(uw_counts=uw, n_outputs=W.shape[1])


@dataclass(frozen=True, eq=False)
class CrewEncoding:
    """Per-input unique-weight tables and the index matrix that addresses them."""

    unique_weights: tuple
    index_matrix: np.ndarray
    bias: np.ndarray
    scale: float = 1.0
    q: int = 8
    uw_counts: np.ndarray = field(init=False)
    bit_widths: np.ndarray = field(init=False)

    def __post_init__(self):
        uniques = tuple(np.asarray(u, dtype=np.int64) for u in self.unique_weights)
        idx = np.asarray(self.index_matrix)
        if idx.ndim != 2 or idx.shape[0] != len(uniques):
            raise ValueError("index_matrix must have one row per unique-weight table")
        uw = np.array([u.size for u in uniques], dtype=np.int64)
        if np.any(uw < 1) or np.any(uw > (1 << self.q)):
            raise ValueError(f"every row needs between 1 and {1 << self.q} unique weights")
        for i, u in enumerate(uniques):
            if np.unique(u).size != u.size:
                raise ValueError(f"row {i}: unique weights are not pairwise distinct")
        if idx.size and (idx.min() < 0 or np.any(idx.max(axis=1) >= uw)):
            raise ValueError("index out of range of its row's unique-weight table")
        object.__setattr__(self, "unique_weights", uniques)
        object.__setattr__(self, "index_matrix", idx.astype(np.uint8))
        object.__setattr__(self, "bias", np.asarray(self.bias, dtype=np.int32).reshape(-1))
        object.__setattr__(self, "uw_counts", uw)
        object.__setattr__(self, "bit_widths", bit_width(uw))

    @property
    def n_inputs(self):
        return self.index_matrix.shape[0]

    @property
    def n_outputs(self):
        return self.index_matrix.shape[1]

    def flat_uniques(self):
        """All unique weights concatenated row by row, plus each row's start offset."""
        offsets = np.zeros(self.n_inputs, dtype=np.int64)
        offsets[1:] = np.cumsum(self.uw_counts)[:-1]
        return np.concatenate(self.unique_weights), offsets

    def to_dense(self):
        flat, offsets = self.flat_uniques()
        return flat[offsets[:, None] + self.index_matrix.astype(np.int64)]

    def __eq__(self, other):
        if not isinstance(other, CrewEncoding):
            return NotImplemented
        return (
            self.q == other.q
            and self.scale == other.scale
            and len(self.unique_weights) == len(other.unique_weights)
            and all(np.array_equal(a, b) for a, b in zip(self.unique_weights, other.unique_weights))
            and np.array_equal(self.index_matrix, other.index_matrix)
            and np.array_equal(self.bias, other.bias)
        )


def encode(layer):
    """Build the CREW encoding of a quantized layer (lossless)."""
    W = layer.weights
    uw, order, rank = _first_occurrence(W)
    uniques = tuple(order[i, : uw[i]] - _OFFSET for i in range(W.shape[0]))
    idx = np.take_along_axis(rank, W.astype(np.int64) + _OFFSET, axis=1)
    return CrewEncoding(uniques, idx, layer.bias, scale=layer.scale, q=layer.q)


def decode_to_dense(enc):
    return QuantizedLayer(enc.to_dense(), enc.bias, scale=enc.scale, q=enc.q)


# -- variable-width bit packing ---------------------------------------------


def _group_layout(widths, groups, n_groups):
    lengths = np.bincount(groups, weights=widths, minlength=n_groups).astype(np.int64)
    padded = (lengths + 7) // 8 * 8
    len_start = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    pad_start = np.concatenate([[0], np.cumsum(padded)[:-1]])
    return lengths, padded, len_start, pad_start


def _bit_positions(widths, groups, n_groups):
    """Destination bit position of every field bit, in field order, MSB-first."""
    _, padded, len_start, pad_start = _group_layout(widths, groups, n_groups)
    bit_group = np.repeat(groups, widths)
    t = np.arange(bit_group.size, dtype=np.int64)
    return t + (pad_start - len_start)[bit_group], int(padded.sum()), pad_start // 8


def pack_fields(values, widths, groups=None, n_groups=1):
    """Pack unsigned ``values`` at per-field ``widths`` (0..8 bits), MSB-first.

    Fields are consumed in order; each group (``groups`` must be
    non-decreasing) starts on a byte boundary and is zero-padded to one.
    Returns ``(bytes, group_byte_offsets)``.
    """
    values = np.asarray(values, dtype=np.int64).ravel()
    widths = np.asarray(widths, dtype=np.int64).ravel()
    groups = np.zeros(values.size, dtype=np.int64) if groups is None else np.asarray(groups).ravel()
    if np.any(values >> widths):
        raise ValueError("value does not fit in its field width")
    k = np.arange(8)
    mask = k[None, :] < widths[:, None]
    shifts = np.maximum(widths[:, None] - 1 - k[None, :], 0)
    bits = ((values[:, None] >> shifts) & 1)[mask]
    dest, total, byte_offsets = _bit_positions(widths, groups, n_groups)
    out = np.zeros(total, dtype=np.uint8)
    out[dest] = bits
    return np.packbits(out).tobytes(), byte_offsets


def unpack_fields(buf, widths, groups=None, n_groups=1):
    """Inverse of :func:`pack_fields`; ``buf`` must hold exactly the packed bytes."""
    widths = np.asarray(widths, dtype=np.int64).ravel()
    groups = np.zeros(widths.size, dtype=np.int64) if groups is None else np.asarray(groups).ravel()
    dest, total, _ = _bit_positions(widths, groups, n_groups)
    if len(buf) * 8 != total:
        raise FormatError(f"bit stream holds {len(buf)} bytes, layout needs {total // 8}")
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8))[dest].astype(np.int64)
    field_id = np.repeat(np.arange(widths.size), widths)
    start = np.concatenate([[0], np.cumsum(widths)[:-1]])
    pos = np.arange(bits.size) - start[field_id]
    contrib = bits << (widths[field_id] - 1 - pos)
    return np.bincount(field_id, weights=contrib, minlength=widths.size).astype(np.int64)


# -- block geometry -----------------------------------------------------------


def block_grid(n, m, bs_row, bs_col):
    """Number of block rows and block columns, ragged edges included."""
    return -(-n // bs_row), -(-m // bs_col)


def _block_order(n, m, bs_row, bs_col):
    """Cell coordinates in stream order plus each cell's block id."""
    nbr, nbc = block_grid(n, m, bs_row, bs_col)
    ii = np.arange(nbr * bs_row).reshape(nbr, bs_row, 1, 1)
    jj = np.arange(nbc * bs_col).reshape(1, 1, nbc, bs_col)
    ii, jj = np.broadcast_arrays(ii, jj)
    ii = ii.transpose(0, 2, 1, 3).ravel()
    jj = jj.transpose(0, 2, 1, 3).ravel()
    valid = (ii < n) & (jj < m)
    ii, jj = ii[valid], jj[valid]
    block = (ii // bs_row) * nbc + jj // bs_col
    return ii, jj, block, nbr * nbc


def block_stream_sizes(bit_widths, n_outputs, bs_row, bs_col):
    """Byte size of every block of the packed index stream, row-major block order."""
    b = np.asarray(bit_widths, dtype=np.int64)
    n = b.size
    nbr, nbc = block_grid(n, n_outputs, bs_row, bs_col)
    row_bits = np.add.reduceat(b, np.arange(0, n, bs_row)) if n else np.zeros(0, np.int64)
    widths = np.full(nbc, bs_col, dtype=np.int64)
    widths[-1] = n_outputs - bs_col * (nbc - 1)
    return (row_bits[:, None] * widths[None, :] + 7) // 8


def pack_indexes(index_matrix, bit_widths, bs_row, bs_col):
    n, m = index_matrix.shape
    ii, jj, block, nblocks = _block_order(n, m, bs_row, bs_col)
    w = np.asarray(bit_widths, dtype=np.int64)[ii]
    return pack_fields(index_matrix[ii, jj], w, block, nblocks)[0]


def unpack_indexes(stream, bit_widths, n_outputs, bs_row, bs_col):
    b = np.asarray(bit_widths, dtype=np.int64)
    n, m = b.size, n_outputs
    ii, jj, block, nblocks = _block_order(n, m, bs_row, bs_col)
    vals = unpack_fields(stream, b[ii], block, nblocks)
    out = np.zeros((n, m), dtype=np.uint8)
    out[ii, jj] = vals
    return out


def decode_block(stream, block_row, block_col, bit_widths, n_outputs, bs_row, bs_col):
    """Decode one block the way the PE-side decoder does.

    The block is located from the per-row widths, then read byte by byte: each
    index is cut out of a two-byte window at the current bit pointer and
    zero-extended to 8 bits. Returns the ``rows x cols`` uint8 sub-matrix.
    """
    b = np.asarray(bit_widths, dtype=np.int64)
    sizes = block_stream_sizes(b, n_outputs, bs_row, bs_col)
    nbr, nbc = sizes.shape
    if not (0 <= block_row < nbr and 0 <= block_col < nbc):
        raise IndexError(f"block ({block_row}, {block_col}) outside {nbr}x{nbc} grid")
    flat = sizes.ravel()
    k = block_row * nbc + block_col
    start = int(flat[:k].sum())
    size = int(flat[k])
    if start + size > len(stream):
        raise FormatError(f"stream truncated: block {k} needs bytes [{start}, {start + size})")
    chunk = bytes(stream[start:start + size]) + b"\x00"
    r0, c0 = block_row * bs_row, block_col * bs_col
    widths = b[r0:r0 + bs_row]
    cols = min(bs_col, n_outputs - c0)
    out = np.zeros((widths.size, cols), dtype=np.uint8)
    ptr = 0
    for r, w in enumerate(widths):
        w = int(w)
        for c in range(cols):
            if w == 0:
                continue
            byte, off = divmod(ptr, 8)
            window = (chunk[byte] << 8) | chunk[byte + 1]
            out[r, c] = (window >> (16 - off - w)) & ((1 << w) - 1)
            ptr += w
    return out


# -- packed layer -------------------------------------------------------------


def _descriptors(bit_widths):
    b = np.asarray(bit_widths, dtype=np.int64)
    desc = np.minimum(b, 7)
    escape = (b == 8).astype(np.int64)
    return desc, escape


def _widths_from_descriptors(desc, escape):
    return np.where(escape == 1, 8, desc)


@dataclass(frozen=True, eq=False)
class PackedCrewLayer:
    """A CREW encoding serialized into byte streams, ready for a file or DRAM."""

    n_inputs: int
    n_outputs: int
    q: int
    scale: float
    bs_row: int
    bs_col: int
    uw_counts: np.ndarray
    bit_widths: np.ndarray
    unique_stream: bytes
    bias: np.ndarray
    block_stream: bytes

    @property
    def descriptor_bytes(self):
        return (3 * self.n_inputs + 7) // 8

    @property
    def escape_bytes(self):
        return (self.n_inputs + 7) // 8

    @property
    def n_blocks(self):
        nbr, nbc = block_grid(self.n_inputs, self.n_outputs, self.bs_row, self.bs_col)
        return nbr * nbc

    def to_bytes(self):
        desc, escape = _descriptors(self.bit_widths)
        header = _CREW_HEADER.pack(
            CREW_MAGIC, CREW_VERSION, self.n_inputs, self.n_outputs, self.q,
            self.scale, self.bs_row, self.bs_col,
        )
        return b"".join([
            header,
            (self.uw_counts - 1).astype(np.uint8).tobytes(),
            pack_fields(desc, np.full(desc.size, 3))[0],
            pack_fields(escape, np.ones(escape.size, dtype=np.int64))[0],
            self.unique_stream,
            self.bias.astype("<i4").tobytes(),
            self.block_stream,
        ])

    @classmethod
    def from_bytes(cls, buf):
        buf = bytes(buf)
        if len(buf) < _CREW_HEADER.size:
            raise FormatError(f"CREW header truncated: {len(buf)} bytes")
        magic, version, n, m, q, scale, bs_row, bs_col = _CREW_HEADER.unpack_from(buf, 0)
        if magic != CREW_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {CREW_MAGIC!r}")
        if version != CREW_VERSION:
            raise FormatError(f"unsupported CREW version {version}")
        if n < 1 or m < 1 or bs_row < 1 or bs_col < 1 or not 2 <= q <= 8:
            raise FormatError(f"invalid header N={n} M={m} q={q} block={bs_row}x{bs_col}")
        if not (np.isfinite(scale) and scale > 0):
            raise FormatError(f"invalid scale {scale}")
        pos = _CREW_HEADER.size

        def take(size, what):
            nonlocal pos
            if pos + size > len(buf):
                raise FormatError(f"stream truncated while reading {what}")
            out = buf[pos:pos + size]
            pos += size
            return out

        uw = np.frombuffer(take(n, "unique-weight counts"), dtype=np.uint8).astype(np.int64) + 1
        desc = unpack_fields(take((3 * n + 7) // 8, "size descriptors"), np.full(n, 3))
        escape = unpack_fields(take((n + 7) // 8, "escape flags"), np.ones(n, dtype=np.int64))
        widths = _widths_from_descriptors(desc, escape)
        if np.any(desc[escape == 1] != 7):
            raise FormatError("escape flag set on a row whose descriptor is not 7")
        if uw.max() > (1 << q):
            raise FormatError(f"unique-weight count exceeds 2^{q}")
        if not np.array_equal(widths, bit_width(uw)):
            bad = int(np.flatnonzero(widths != bit_width(uw))[0])
            raise FormatError(
                f"size descriptor of row {bad} ({widths[bad]} bits) inconsistent "
                f"with its {uw[bad]} unique weights"
            )
        row_bytes = (uw * q + 7) // 8
        unique_stream = take(int(row_bytes.sum()), "unique weights")
        bias = np.frombuffer(take(4 * m, "biases"), dtype="<i4").astype(np.int32)
        size = int(block_stream_sizes(widths, m, bs_row, bs_col).sum())
        block_stream = take(size, "index blocks")
        if pos != len(buf):
            raise FormatError(f"{len(buf) - pos} trailing bytes after index blocks")
        return cls(n, m, q, float(scale), bs_row, bs_col, uw, widths, unique_stream, bias, block_stream)

    def unique_weights(self):
        uw = self.uw_counts
        widths = np.full(int(uw.sum()), self.q, dtype=np.int64)
        groups = np.repeat(np.arange(uw.size), uw)
        raw = unpack_fields(self.unique_stream, widths, groups, uw.size)
        # two's complement at q bits
        raw = np.where(raw >= (1 << (self.q - 1)), raw - (1 << self.q), raw)
        return tuple(np.split(raw, np.cumsum(uw)[:-1]))


def pack(enc, bs_row=16, bs_col=16):
    """Serialize a :class:`CrewEncoding` into blocks of ``bs_row x bs_col`` indexes."""
    bs_row, bs_col = int(bs_row), int(bs_col)
    if not (1 <= bs_row <= 0xFFFF and 1 <= bs_col <= 0xFFFF):
        raise ValueError(f"block size must be in [1, 65535], got {bs_row}x{bs_col}")
    flat, _ = enc.flat_uniques()
    uw = enc.uw_counts
    unique_stream, _ = pack_fields(
        flat & ((1 << enc.q) - 1), np.full(flat.size, enc.q), np.repeat(np.arange(uw.size), uw), uw.size
    )
    blocks = pack_indexes(enc.index_matrix, enc.bit_widths, bs_row, bs_col)
    return PackedCrewLayer(
        enc.n_inputs, enc.n_outputs, enc.q, float(np.float32(enc.scale)), bs_row, bs_col,
        uw.copy(), enc.bit_widths.copy(), unique_stream, enc.bias.copy(), blocks,
    )


def unpack(packed):
    idx = unpack_indexes(packed.block_stream, packed.bit_widths, packed.n_outputs, packed.bs_row, packed.bs_col)
    if np.any(idx.max(axis=1).astype(np.int64) >= packed.uw_counts):
        raise FormatError("decoded index exceeds its row's unique-weight count")
    return CrewEncoding(packed.unique_weights(), idx, packed.bias, scale=packed.scale, q=packed.q)


def save_crew(packed, path):
    from .tensorio import atomic_write_bytes

    atomic_write_bytes(path, packed.to_bytes())


def load_crew(path):
    with open(path, "rb") as fh:
        return PackedCrewLayer.from_bytes(fh.read())


# -- storage accounting -------------------------------------------------------


@dataclass(frozen=True)
class StorageReport:
    dense_bits: int
    unique_bits: int
    index_bits: int
    descriptor_bits: int
    escape_bits: int
    count_bits: int
    ucnn_index_bits: int
    saved_muls_fraction: float
    payload_bits: int

    @property
    def crew_bits(self):
        return self.unique_bits + self.index_bits + self.descriptor_bits + self.escape_bits + self.count_bits

    @property
    def storage_reduction_fraction(self):
        return 1.0 - self.crew_bits / self.dense_bits

    @property
    def payload_reduction_fraction(self):
        """Reduction counting only unique weights and unpadded indexes (no metadata)."""
        return 1.0 - self.payload_bits / self.dense_bits

    def as_dict(self):
        return {
            "dense_bits": self.dense_bits,
            "crew_bits": self.crew_bits,
            "unique_bits": self.unique_bits,
            "index_bits": self.index_bits,
            "descriptor_bits": self.descriptor_bits,
            "escape_bits": self.escape_bits,
            "count_bits": self.count_bits,
            "ucnn_index_bits": self.ucnn_index_bits,
            "saved_muls_fraction": self.saved_muls_fraction,
            "storage_reduction_fraction": self.storage_reduction_fraction,
            "payload_reduction_fraction": self.payload_reduction_fraction,
        }


def ucnn_index_width(n_inputs):
    return int(n_inputs - 1).bit_length() if n_inputs > 1 else 0


def storage_report(enc, bs_row=16, bs_col=16):
    n, m, q = enc.n_inputs, enc.n_outputs, enc.q
    uw = enc.uw_counts
    index_bytes = int(block_stream_sizes(enc.bit_widths, m, bs_row, bs_col).sum())
    return StorageReport(
        dense_bits=n * m * q,
        unique_bits=int(((uw * q + 7) // 8).sum()) * 8,
        index_bits=index_bytes * 8,
        descriptor_bits=(3 * n + 7) // 8 * 8,
        escape_bits=(n + 7) // 8 * 8,
        count_bits=8 * n,
        ucnn_index_bits=n * m * ucnn_index_width(n),
        saved_muls_fraction=1.0 - float(uw.sum()) / (n * m),
        payload_bits=int(uw.sum()) * q + m * int(enc.bit_widths.sum()),
    )
