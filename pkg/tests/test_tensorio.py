import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from crewfc import FloatLayer, ProfileError, QuantizedLayer, UniqueWeightProfile, analyze_rows
from crewfc.exceptions import FormatError
from crewfc.tensorio import layer_from_bytes, layer_to_bytes, load_layer, save_layer, synth_layer


def _float_layer(n, m, seed=0):
    rng = np.random.default_rng(seed)
    return FloatLayer(rng.normal(size=(n, m)), rng.normal(size=m))


def test_save_load_2x3(tmp_path):
    layer = _float_layer(2, 3)
    save_layer(layer, tmp_path / "a.fcl")
    back = load_layer(tmp_path / "a.fcl")
    assert back == layer
    assert back.n_inputs == 2 and back.n_outputs == 3


def test_minimal_layer_file(tmp_path):
    layer = FloatLayer([[1.5]], [-2.0])
    save_layer(layer, tmp_path / "m.fcl")
    raw = (tmp_path / "m.fcl").read_bytes()
    # header 13 bytes + 1 weight + 1 bias, float32 each
    assert len(raw) == 13 + 8
    assert raw[:4] == b"FCL1" and raw[4] == 0
    assert struct.unpack("<II", raw[5:13]) == (1, 1)
    assert load_layer(tmp_path / "m.fcl") == layer


def test_saves_are_byte_identical(tmp_path):
    layer = _float_layer(7, 5, seed=3)
    save_layer(layer, tmp_path / "a.fcl")
    save_layer(layer, tmp_path / "b.fcl")
    assert (tmp_path / "a.fcl").read_bytes() == (tmp_path / "b.fcl").read_bytes()


def test_quantized_container_round_trip(tmp_path):
    layer = QuantizedLayer(np.array([[-128, 0, 127]]), [1, -2, 3], scale=0.25)
    save_layer(layer, tmp_path / "q.fcl")
    raw = (tmp_path / "q.fcl").read_bytes()
    assert raw[4] == 1
    assert len(raw) == 13 + 4 + 3 + 12
    assert load_layer(tmp_path / "q.fcl") == layer


def test_payload_dimension_mismatch():
    raw = layer_to_bytes(_float_layer(2, 3))
    # drop 4 weights' worth: 5 values left for N=2, M=3
    with pytest.raises(FormatError, match="payload"):
        layer_from_bytes(raw[:13] + raw[13:13 + 20])


def test_nan_weight_rejected():
    raw = bytearray(layer_to_bytes(_float_layer(2, 3)))
    raw[13:17] = struct.pack("<f", float("nan"))
    with pytest.raises(FormatError, match="non-finite"):
        layer_from_bytes(bytes(raw))


@pytest.mark.parametrize("mutate,msg", [
    (lambda r: b"XXXX" + r[4:], "magic"),
    (lambda r: r[:4] + b"\x07" + r[5:], "dtype"),
    (lambda r: r[:5] + struct.pack("<I", 0) + r[9:], "dimensions"),
    (lambda r: r[:8], "truncated"),
])
def test_malformed_header(mutate, msg):
    raw = layer_to_bytes(_float_layer(2, 3))
    with pytest.raises(FormatError, match=msg):
        layer_from_bytes(mutate(raw))


def test_bad_quantized_scale():
    raw = bytearray(layer_to_bytes(QuantizedLayer([[1]], [0])))
    raw[13:17] = struct.pack("<f", -1.0)
    with pytest.raises(FormatError, match="scale"):
        layer_from_bytes(bytes(raw))


def test_float_layer_rejects_nonfinite():
    with pytest.raises(ValueError):
        FloatLayer([[np.inf]], [0.0])
    with pytest.raises(ValueError):
        FloatLayer([[1.0, 2.0]], [0.0])


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6)),
           elements=st.floats(-1e6, 1e6, width=32)),
    st.data(),
)
def test_round_trip_property(W, data):
    b = data.draw(arrays(np.float32, W.shape[1], elements=st.floats(-1e6, 1e6, width=32)))
    layer = FloatLayer(W, b)
    assert layer_from_bytes(layer_to_bytes(layer)) == layer


def test_profile_constant_uw2():
    layer = synth_layer(UniqueWeightProfile(4, 8, uw=2), seed=7)
    assert layer.weights.shape == (4, 8)
    for row in layer.weights:
        assert len(set(row.tolist())) == 2


def test_profile_ds2_constant():
    layer = synth_layer(UniqueWeightProfile(512, 2304, uw=38), seed=1)
    a = analyze_rows(layer)
    assert np.all(a.uw_counts == 38)
    assert a.muls_fraction == pytest.approx(38 / 2304)
    # published DS2 share of remaining multiplications is 1.67%
    assert abs(100 * a.muls_fraction - 1.67) < 0.05


def test_profile_uw_exceeds_m():
    with pytest.raises(ProfileError):
        UniqueWeightProfile(4, 8, uw=9)
    with pytest.raises(ProfileError):
        UniqueWeightProfile(4, 300, uw=257)
    with pytest.raises(ProfileError):
        UniqueWeightProfile(4, 8, histogram={3: 0.5, 9: 0.5})


def test_profile_needs_exactly_one_spec():
    with pytest.raises(ProfileError):
        UniqueWeightProfile(4, 8)
    with pytest.raises(ProfileError):
        UniqueWeightProfile(4, 8, uw=2, histogram={2: 1.0})


def test_synth_is_pure_function_of_seed():
    prof = UniqueWeightProfile(20, 40, histogram={1: 0.2, 5: 0.3, 17: 0.5})
    a, b = synth_layer(prof, 99), synth_layer(prof, 99)
    assert a == b
    assert not np.array_equal(a.weights, synth_layer(prof, 100).weights)


def test_synth_histogram_counts_recovered():
    prof = UniqueWeightProfile(200, 64, histogram={1: 0.1, 2: 0.2, 33: 0.3, 64: 0.4})
    layer = synth_layer(prof, 5)
    drawn = prof.draw_counts(np.random.default_rng(5))
    assert np.array_equal(analyze_rows(layer).uw_counts, drawn)
    assert np.all(layer.bias == 0)


def test_zipf_skew_creates_rare_values():
    layer = synth_layer(UniqueWeightProfile(50, 1000, uw=40, zipf_exponent=1.5), 0)
    row = layer.weights[0]
    _, counts = np.unique(row, return_counts=True)
    assert counts.max() > 10 * counts.min()
