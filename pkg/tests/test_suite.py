import numpy as np
import pytest

from crewfc import analyze_rows
from crewfc.suite import PRESET_NAMES, PRESETS, SuiteSpec, get_preset, normal_histogram

# published mean unique weights per input
UW_TABLE = {"ds2": 38, "gnmt": 29, "transformer": 49, "kaldi": 59, "ptblm": 43}


@pytest.mark.parametrize("mean,sd", [(38, 6.0), (59, 14.0), (5, 4.0), (120, 10.0)])
def test_normal_histogram_mean_exact(mean, sd):
    h = normal_histogram(mean, sd)
    assert sum(h.values()) == pytest.approx(1.0)
    assert sum(k * p for k, p in h.items()) == pytest.approx(mean)
    assert min(h) >= 1 and max(h) <= 127


def test_preset_means_match_table():
    assert PRESET_NAMES == tuple(UW_TABLE)
    for p in PRESETS:
        assert p.mean_uw == UW_TABLE[p.name]
        assert p.profile().mean_uw() == pytest.approx(UW_TABLE[p.name])


def test_realized_means_within_one():
    layers = SuiteSpec(seed=0).layers()
    for name, layer in layers.items():
        assert abs(analyze_rows(layer).mean_uw - UW_TABLE[name]) <= 1.0


def test_suite_seeds():
    spec = SuiteSpec(presets=(get_preset("gnmt"),), seed=3)
    a, b = spec.layers()["gnmt"], spec.layers()["gnmt"]
    assert a == b
    assert not np.array_equal(a.weights, SuiteSpec(presets=(get_preset("gnmt"),), seed=4).layers()["gnmt"].weights)


def test_unknown_preset():
    with pytest.raises(KeyError):
        get_preset("resnet")
