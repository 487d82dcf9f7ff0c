import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import random_layer
from crewfc import PartialProductApproximator, PpaConfig, QuantizedLayer, UniqueWeightProfile, apply_ppa, encode
from crewfc.ppa import SWEEP_COLUMNS, approximate_row, lower_power_of_two, ppa_sweep, rows_reduced
from crewfc.tensorio import synth_layer


def row_38(m=1000, tail=1):
    """38 distinct values: 32 common ones and 6 rare ones seen ``tail`` times each."""
    common = np.arange(-64, 64, 4)[:32]
    rare = np.array([-127, -100, 1, 2, 99, 126])
    body = np.resize(common, m - 6 * tail)
    return np.concatenate([body, np.repeat(rare, tail)])


@pytest.mark.parametrize("uw,low", [(2, 1), (3, 2), (4, 2), (5, 4), (38, 32), (64, 32), (65, 64), (256, 128)])
def test_lower_power_of_two(uw, low):
    assert lower_power_of_two(uw) == low


def test_row_38_reduced_to_32():
    row = row_38()
    new, reps = approximate_row(row, 0.10, 1)
    assert len(set(new.tolist())) == 32
    r = reps[0]
    assert r.applied and r.original_uw == 38 and r.target_uw == 32 and r.dist_w == 6
    assert r.low_freq_w == 6 and r.wr == pytest.approx(0.006)
    assert sorted(r.removed) == [-127, -100, 1, 2, 99, 126]
    layer = QuantizedLayer(new[None, :], np.zeros(new.size))
    assert encode(layer).bit_widths.tolist() == [5]


def test_row_38_untouched_above_threshold():
    row = row_38(m=100, tail=2)
    new, reps = approximate_row(row, 0.10, 1)
    # 12 of 100 slots held by the 6 rare values -> WR = 0.12
    assert not reps[0].applied and reps[0].wr == pytest.approx(0.12)
    assert np.array_equal(new, row)


def test_nearest_survivor_and_ties():
    # counts: 0 x5, 10 x5, 4 x1, 5 x1, 6 x1  -> UW 5, target 4, remove one
    row = np.array([0] * 5 + [10] * 5 + [4, 5, 6])
    new, reps = approximate_row(row, 0.5, 1)
    # equal counts: remove smallest |value| first -> 4, nearest survivor 5
    assert reps[0].removed == (4,) and reps[0].replacements == (5,)
    # 5 sits 3 away from both 2 and 8: equidistant replacement prefers the smaller survivor
    row = np.array([0] * 5 + [10] * 5 + [2] * 3 + [5] + [8] * 3)
    _, reps = approximate_row(row, 0.5, 1)
    assert reps[0].removed == (5,) and reps[0].replacements == (2,)
    row = np.array([0] * 9 + [4] * 9 + [6] * 9 + [9] * 9 + [2])
    _, reps = approximate_row(row, 0.5, 1)
    # 2 is equidistant from 0 and 4 -> 0
    assert reps[0].replacements == (0,)


def test_frequency_tie_prefers_smaller_magnitude():
    row = np.array([50] * 10 + [60] * 10 + [-3, 3, 7])
    _, reps = approximate_row(row, 0.5, 1)
    # UW 5 -> 4: remove one of the singles; -3 and 3 tie on |v|, the smaller value goes
    assert reps[0].removed == (-3,)


def test_threshold_zero_is_identity(rng):
    layer = random_layer(rng, 30, 50, max_uw=40)
    out, reps = apply_ppa(layer, PpaConfig(0.0))
    assert out == layer
    assert all(not r.applied for r in reps)


def test_uw_one_rows_skipped():
    layer = QuantizedLayer(np.full((3, 5), 7), np.zeros(5))
    out, reps = apply_ppa(layer, PpaConfig(1.0, 3))
    assert out == layer and reps == []


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 120), st.integers(1, 80), st.floats(0, 1), st.integers(0, 2 ** 32 - 1))
def test_matches_algorithm_oracle(m, max_uw, thr, seed):
    rng = np.random.default_rng(seed)
    row = random_layer(rng, 1, m, max_uw=max_uw).weights[0]
    new, reps = approximate_row(row, thr, 1)
    expect, applied = oracles.ppa_row(row.tolist(), thr)
    assert new.tolist() == expect
    assert bool(reps and reps[0].applied) == applied


def _skewed_layer(seed=0, n=64, m=512):
    prof = UniqueWeightProfile(n, m, histogram={k: 1 / 40 for k in range(20, 60)}, zipf_exponent=1.5)
    return synth_layer(prof, seed)


def test_applied_rows_properties():
    layer = _skewed_layer()
    for levels in (1, 2):
        out, reps = apply_ppa(layer, PpaConfig(0.2, levels))
        before, after = encode(layer), encode(out)
        assert out.bias.tobytes() == layer.bias.tobytes() and out.weights.shape == layer.weights.shape
        per_row = {}
        for r in reps:
            if r.applied:
                per_row[r.row] = per_row.get(r.row, 0) + 1
                assert r.wr < 0.2
        for i in range(layer.n_inputs):
            k = per_row.get(i, 0)
            if k:
                uw = int(after.uw_counts[i])
                assert uw & (uw - 1) == 0
                assert after.bit_widths[i] == before.bit_widths[i] - k
            else:
                assert np.array_equal(out.weights[i], layer.weights[i])


def test_replacements_are_nearest_survivors():
    # each modified cell moves to the closest value still present in its row
    layer = _skewed_layer(1)
    out, _ = apply_ppa(layer, PpaConfig(0.15))
    for i in range(layer.n_inputs):
        survivors = np.unique(out.weights[i]).astype(np.int64)
        changed = np.flatnonzero(out.weights[i] != layer.weights[i])
        for j in changed:
            old = int(layer.weights[i, j])
            d = np.abs(survivors - old)
            assert abs(int(out.weights[i, j]) - old) == d.min()
            assert int(out.weights[i, j]) == survivors[np.argmin(d)]


def test_two_levels_rechecks_threshold():
    layer = _skewed_layer(2)
    _, reps1 = apply_ppa(layer, PpaConfig(0.1, 1))
    _, reps2 = apply_ppa(layer, PpaConfig(0.1, 2))
    lvl2 = [r for r in reps2 if r.level == 2]
    assert lvl2 and all(r.applied == (r.wr < 0.1) for r in lvl2)
    assert rows_reduced(reps2, layer.n_inputs) == rows_reduced(reps1, layer.n_inputs)


def test_deterministic():
    layer = _skewed_layer(3)
    a, ra = apply_ppa(layer, PpaConfig(0.1, 2))
    b, rb = apply_ppa(layer, PpaConfig(0.1, 2))
    assert a == b and ra == rb


def test_config_validation():
    with pytest.raises(ValueError):
        PpaConfig(-0.1)
    with pytest.raises(ValueError):
        PpaConfig(1.1)
    with pytest.raises(ValueError):
        PpaConfig(0.1, 0)


def test_sweep_zero_threshold():
    rows = ppa_sweep(_skewed_layer(), [0.0], n_vectors=32)
    assert rows[0].compression_ratio == 1.0
    assert rows[0].mean_rel_err == 0.0 and rows[0].max_rel_err == 0.0
    assert tuple(rows[0].as_dict()) == SWEEP_COLUMNS


def test_sweep_monotone():
    rows = ppa_sweep(_skewed_layer(4), [0.05, 0.10, 0.15, 0.20], n_vectors=32)
    ratios = [r.compression_ratio for r in rows]
    assert all(b >= a for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] > 1.0
    reduced = [r.rows_reduced_pct for r in rows]
    assert all(b >= a for a, b in zip(reduced, reduced[1:]))


def test_approximator_estimator():
    layer = _skewed_layer(5)
    est = PartialProductApproximator(threshold=0.1, max_bits_reduced=2)
    assert est.get_params() == {"max_bits_reduced": 2, "threshold": 0.1}
    W = est.fit_transform(layer.weights)
    ref, reps = apply_ppa(layer, PpaConfig(0.1, 2))
    assert np.array_equal(W, ref.weights)
    assert est.rows_reduced_fraction() == rows_reduced(reps, layer.n_inputs)
    with pytest.raises(ValueError):
        est.transform(layer.weights[:3])
