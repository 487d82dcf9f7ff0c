"""Partial product approximation.

Rare unique weights of a row are merged into their nearest surviving value so
the row's unique count drops to a lower power of two, which shrinks every
index of that row by one bit per level.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .codec import encode, storage_report
from .layers import QuantizedLayer
from .validation import check_weight_matrix


@dataclass(frozen=True)
class PpaConfig:
    threshold: float = 0.10
    max_bits_reduced: int = 1

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must be in [0, 1], got {self.threshold}")
        if int(self.max_bits_reduced) < 1:
            raise ValueError("max_bits_reduced must be >= 1")


@dataclass(frozen=True)
class PpaRowReport:
    """Outcome of one approximation level on one input row."""

    row: int
    level: int
    original_uw: int
    target_uw: int
    dist_w: int
    low_freq_w: int
    wr: float
    applied: bool
    removed: tuple = field(default=())
    replacements: tuple = field(default=())


def lower_power_of_two(uw):
    """Largest power of two strictly below ``uw`` (``uw >= 2``)."""
    return 1 << ((int(uw) - 1).bit_length() - 1)


def _nearest(survivors, value):
    # ties go to the smaller value: survivors are sorted ascending and argmin keeps the first
    survivors = np.sort(survivors)
    return int(survivors[np.argmin(np.abs(survivors - value))])


def approximate_row(row, threshold, max_levels, row_index=0):
    """Apply up to ``max_levels`` approximation levels to one weight row.

    Returns the rewritten row and one :class:`PpaRowReport` per level evaluated.
    """
    row = np.asarray(row, dtype=np.int64).copy()
    m = row.size
    reports = []
    for level in range(1, max_levels + 1):
        values, counts = np.unique(row, return_counts=True)
        uw = values.size
        if uw < 2:
            break
        target = lower_power_of_two(uw)
        dist = uw - target
        # least frequent first; ties remove the smaller magnitude, then the smaller value
        order = np.lexsort((values, np.abs(values), counts))
        removed = values[order[:dist]]
        low_freq = int(counts[order[:dist]].sum())
        wr = low_freq / m
        applied = wr < threshold
        replacements = ()
        if applied:
            survivors = values[order[dist:]]
            replacements = tuple(_nearest(survivors, d) for d in removed)
            mapping = dict(zip(removed.tolist(), replacements))
            hit = np.isin(row, removed)
            row[hit] = [mapping[v] for v in row[hit].tolist()]
        reports.append(PpaRowReport(
            row=row_index, level=level, original_uw=uw, target_uw=target, dist_w=dist,
            low_freq_w=low_freq, wr=wr, applied=applied,
            removed=tuple(int(v) for v in removed) if applied else (),
            replacements=replacements,
        ))
        if not applied:
            break
    return row, reports


def apply_ppa(layer, cfg=None):
    """Run the approximation over every row of ``layer``.

    Returns ``(approximated_layer, reports)``. Dimensions, bias and scale are
    untouched; rows where no level applies are returned cell for cell.
    """
    cfg = cfg or PpaConfig()
    W = layer.weights.astype(np.int64)
    out = W.copy()
    reports = []
    for i in range(W.shape[0]):
        out[i], row_reports = approximate_row(W[i], cfg.threshold, int(cfg.max_bits_reduced), i)
        reports.extend(row_reports)
    return layer.with_weights(out), reports


def rows_reduced(reports, n_inputs):
    """Fraction of rows that had at least one level applied."""
    rows = {r.row for r in reports if r.applied}
    return len(rows) / n_inputs


@dataclass(frozen=True)
class SweepRow:
    thr: float
    crew_bits: int
    compression_ratio: float
    rows_reduced_pct: float
    mean_rel_err: float
    max_rel_err: float

    def as_dict(self):
        return {
            "thr": self.thr,
            "crew_bits": self.crew_bits,
            "compression_ratio": self.compression_ratio,
            "rows_reduced_pct": self.rows_reduced_pct,
            "mean_rel_err": self.mean_rel_err,
            "max_rel_err": self.max_rel_err,
        }


SWEEP_COLUMNS = ("thr", "crew_bits", "compression_ratio", "rows_reduced_pct", "mean_rel_err", "max_rel_err")


def output_perturbation(reference, approx, n_vectors=256, seed=0):
    """Mean and max relative L2 output error over seeded random int8 inputs."""
    rng = np.random.default_rng(seed)
    X = rng.integers(-128, 128, size=(n_vectors, reference.n_inputs)).astype(np.float64)
    # int8 x int8 sums stay far below 2**53, so float64 BLAS products are exact
    W = reference.weights.astype(np.float64)
    Y = X @ W + reference.bias
    D = X @ (approx.weights.astype(np.float64) - W) + (approx.bias.astype(np.float64) - reference.bias)
    num = np.linalg.norm(D, axis=1)
    den = np.linalg.norm(Y, axis=1)
    rel = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.where(num > 0, np.inf, 0.0))
    return float(rel.mean()), float(rel.max())


def ppa_sweep(layer, thresholds, max_bits_reduced=1, bs_row=16, bs_col=16, n_vectors=256, seed=0):
    """Compression and output perturbation of the approximation for each threshold."""
    base_bits = storage_report(encode(layer), bs_row, bs_col).crew_bits
    rows = []
    for thr in thresholds:
        approx, reports = apply_ppa(layer, PpaConfig(float(thr), max_bits_reduced))
        bits = storage_report(encode(approx), bs_row, bs_col).crew_bits
        mean_err, max_err = output_perturbation(layer, approx, n_vectors, seed)
        rows.append(SweepRow(
            thr=float(thr), crew_bits=bits, compression_ratio=base_bits / bits,
            rows_reduced_pct=100.0 * rows_reduced(reports, layer.n_inputs),
            mean_rel_err=mean_err, max_rel_err=max_err,
        ))
    return rows


class PartialProductApproximator(TransformerMixin, BaseEstimator):
    """Fit the per-row merge maps on a weight matrix, then apply them.

    ``transform`` rewrites every occurrence of a removed unique weight by its
    replacement, row by row; on the fitted matrix it reproduces
    :func:`apply_ppa` exactly.

    Parameters
    ----------
    threshold : float, default=0.10
    max_bits_reduced : int, default=1
    """

    def __init__(self, threshold=0.10, max_bits_reduced=1):
        self.threshold = threshold
        self.max_bits_reduced = max_bits_reduced

    def fit(self, X, y=None):
        cfg = PpaConfig(self.threshold, self.max_bits_reduced)
        W = check_weight_matrix(X, dtype=np.int64)
        layer = QuantizedLayer(W, np.zeros(W.shape[1], dtype=np.int32))
        _, self.reports_ = apply_ppa(layer, cfg)
        self.n_features_in_ = W.shape[1]
        self.n_rows_ = W.shape[0]
        self.mappings_ = [dict() for _ in range(W.shape[0])]
        for r in self.reports_:
            if r.applied:
                m = self.mappings_[r.row]
                # later levels may remap an earlier replacement target
                for k, v in list(m.items()):
                    if v in r.removed:
                        m[k] = r.replacements[r.removed.index(v)]
                m.update(zip(r.removed, r.replacements))
        return self

    def transform(self, X):
        check_is_fitted(self, "mappings_")
        W = check_weight_matrix(X, dtype=np.int64).copy()
        if W.shape[0] != self.n_rows_ or W.shape[1] != self.n_features_in_:
            raise ValueError(f"X has shape {W.shape}, fitted on {(self.n_rows_, self.n_features_in_)}")
        for i, mapping in enumerate(self.mappings_):
            if mapping:
                hit = np.isin(W[i], list(mapping))
                W[i, hit] = [mapping[v] for v in W[i, hit].tolist()]
        return W.astype(np.int8)

    def rows_reduced_fraction(self):
        check_is_fitted(self, "reports_")
        return rows_reduced(self.reports_, self.n_rows_)
