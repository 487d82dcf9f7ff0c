"""Synthetic layer presets matched to published unique-weight statistics.

Each preset fixes a mean unique-weight count per input row and a layer shape
whose ``mean_uw / n_outputs`` reproduces the reported share of remaining
multiplications. Rows draw their count from a symmetric discretized normal
histogram around the mean, so the histogram mean is exact.
"""

from dataclasses import dataclass

import numpy as np

from .tensorio import UniqueWeightProfile, synth_layer

# Reuse skew of distinct values within a row. 1.5 makes over half of a row's
# unique weights individually cover <1% of its slots, as observed on trained FC layers.
PRESET_ZIPF = 1.5


def normal_histogram(mean, sd, lo=1, hi=127):
    """Discretized normal over integers, truncated symmetrically around ``mean``."""
    half = int(min(3 * sd, mean - lo, hi - mean))
    ks = np.arange(mean - half, mean + half + 1)
    p = np.exp(-0.5 * ((ks - mean) / sd) ** 2)
    p /= p.sum()
    return {int(k): float(v) for k, v in zip(ks, p)}


@dataclass(frozen=True)
class Preset:
    name: str
    mean_uw: int
    sd: float
    n_inputs: int
    n_outputs: int
    saved_muls_pct: float
    storage_reduction_pct: float

    def profile(self, zipf_exponent=PRESET_ZIPF):
        return UniqueWeightProfile(
            n_inputs=self.n_inputs, n_outputs=self.n_outputs,
            histogram=normal_histogram(self.mean_uw, self.sd), zipf_exponent=zipf_exponent,
        )


# reported saved-MULs and storage-reduction percentages ride along for comparison tables
PRESETS = (
    Preset("ds2", 38, 6.0, 512, 2304, 98, 27),
    Preset("gnmt", 29, 5.0, 1024, 5120, 99, 34),
    Preset("transformer", 49, 12.0, 512, 1280, 96, 22),
    Preset("kaldi", 59, 14.0, 512, 2000, 97, 16),
    Preset("ptblm", 43, 10.0, 1024, 6000, 99, 26),
)
PRESET_NAMES = tuple(p.name for p in PRESETS)


def get_preset(name):
    for p in PRESETS:
        if p.name == name:
            return p
    raise KeyError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")


@dataclass(frozen=True)
class SuiteSpec:
    presets: tuple = PRESETS
    seed: int = 0
    zipf_exponent: float = PRESET_ZIPF

    def layers(self):
        """``{name: QuantizedLayer}``; each preset gets its own derived seed."""
        out = {}
        for k, p in enumerate(self.presets):
            out[p.name] = synth_layer(p.profile(self.zipf_exponent), seed=[self.seed, k])
        return out
