"""Partial-product memoization for quantized fully-connected layers.

Encode a layer into per-input unique-weight tables plus variable-width
index blocks, execute it bit-exactly from that form, approximate rare
unique weights, and model the timing and traffic of the resulting
dataflow against output-stationary and factorization baselines.
"""

from .codec import (
    CrewEncoding,
    PackedCrewLayer,
    StorageReport,
    analyze_rows,
    decode_block,
    decode_to_dense,
    encode,
    load_crew,
    pack,
    save_crew,
    storage_report,
    unpack,
)
from .engine import CrewLinear, ExecutionTrace, PartialProductTable, crew_forward, dense_forward, ucnn_forward
from .exceptions import ConfigError, CrewError, FormatError, ProfileError, VerificationError
from .layers import FloatLayer, QuantizedLayer
from .perfmodel import (
    CostTable,
    DataflowConfig,
    SimReport,
    compare,
    simulate_baseline,
    simulate_crew,
    simulate_ucnn,
)
from .ppa import PartialProductApproximator, PpaConfig, PpaRowReport, apply_ppa, ppa_sweep
from .quantize import LinearQuantizer, dequantize, quantize_layer
from .suite import PRESETS, SuiteSpec
from .tensorio import UniqueWeightProfile, load_layer, save_layer, synth_layer

__version__ = "0.1.0"
