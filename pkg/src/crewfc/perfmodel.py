"""Analytical timing, traffic and energy model of three FC dataflows.

Every dataflow is modeled as ``max(compute pipeline, DRAM traffic bound)``
under perfect double buffering:

* ``baseline``: TPU-like output-stationary array.
* ``ucnn``: per-output factorization, one ``ceil(log2 N)``-bit input index
  per weight, run on the same blocked array as CREW.
* ``crew``: unique-weight products computed per PE row (step 1) overlapped
  with index-driven accumulation over ``bs_row x bs_col`` index blocks
  (step 2), followed by a top-to-bottom reduction.

Config and cost files are ``key = value`` text; ``#`` starts a comment.
"""

import csv
import dataclasses
import io
import json
import math
import os
from dataclasses import dataclass, field, fields

import numpy as np

from .codec import CrewEncoding, PackedCrewLayer, block_stream_sizes, encode, ucnn_index_width
from .engine import column_unique_counts
from .exceptions import ConfigError
from .layers import QuantizedLayer

BASELINE_MAPPINGS = ("batch", "flat")


@dataclass(frozen=True)
class DataflowConfig:
    """Array geometry, block size and memory parameters.

    ``baseline_mapping`` selects how the output-stationary baseline places a
    single input vector: ``batch`` maps the batch (one vector) onto PE rows
    and outputs onto PE columns, so one row of the array is busy; ``flat``
    spreads outputs over every PE.
    """

    pe_rows: int = 16
    pe_cols: int = 16
    bs_row: int = 16
    bs_col: int = 16
    frequency_hz: float = 5e8
    dram_bytes_per_cycle: float = 32.0
    input_bits: int = 8
    weight_bits: int = 8
    pp_bits: int = 16
    acc_bits: int = 32
    indir_buffer_bytes: int = 512
    pp_buffer_bytes: int = 1024
    psum_buffer_bytes: int = 768
    baseline_mapping: str = "batch"

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.type in (int, float) and not v > 0:
                raise ConfigError(f"{f.name} must be positive, got {v}")
        if self.baseline_mapping not in BASELINE_MAPPINGS:
            raise ConfigError(f"baseline_mapping must be one of {BASELINE_MAPPINGS}")
        # decoded indexes are padded to 8 bits and double buffered
        if 2 * self.bs_row * self.bs_col > self.indir_buffer_bytes:
            raise ConfigError(
                f"a {self.bs_row}x{self.bs_col} block of 8-bit indexes does not fit half of the "
                f"{self.indir_buffer_bytes} B indirection buffer"
            )
        # one bank per PE column holds bs_row / pe_cols inputs' worst-case products, double buffered
        worst = 2 * math.ceil(self.bs_row / self.pe_cols) * (1 << self.weight_bits) * self.pp_bits // 8
        if worst > self.pp_buffer_bytes:
            raise ConfigError(f"partial-product buffer needs {worst} B, has {self.pp_buffer_bytes} B")
        if 2 * self.bs_col * self.acc_bits // 8 > self.psum_buffer_bytes:
            raise ConfigError("partial-sum buffer cannot double-buffer bs_col accumulators")

    @property
    def n_pes(self):
        return self.pe_rows * self.pe_cols


COST_KEYS = (
    "mul", "add", "dram_byte", "static_cycle",
    "sram_global_read", "sram_global_write",
    "sram_ppbuf_read", "sram_ppbuf_write",
    "sram_indir_read", "sram_indir_write",
    "sram_psum_read", "sram_psum_write",
)


@dataclass(frozen=True)
class CostTable:
    """Linear per-event energy weights; ``units`` labels every entry."""

    units: str
    costs: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.units:
            raise ConfigError("cost table must label its units")
        unknown = set(self.costs) - set(COST_KEYS)
        if unknown:
            raise ConfigError(f"unknown cost keys: {sorted(unknown)}")
        for k, v in self.costs.items():
            if not (np.isfinite(v) and v >= 0):
                raise ConfigError(f"cost {k} must be a non-negative number, got {v}")
        object.__setattr__(self, "costs", {k: float(self.costs.get(k, 0.0)) for k in COST_KEYS})

    def __getitem__(self, key):
        return self.costs[key]


def parse_kv(text, source="<string>"):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or key in out:
            raise ConfigError(f"{source}:{lineno}: empty or duplicate key {key!r}")
        out[key] = value
    return out


def config_from_text(text, source="<string>"):
    kv = parse_kv(text, source)
    types = {f.name: f.type for f in fields(DataflowConfig)}
    unknown = set(kv) - set(types)
    if unknown:
        raise ConfigError(f"{source}: unknown config keys {sorted(unknown)}")
    parsed = {}
    for k, v in kv.items():
        try:
            parsed[k] = types[k](float(v)) if types[k] is int else types[k](v)
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {k}: {v!r}") from exc
        if types[k] is int and float(v) != int(float(v)):
            raise ConfigError(f"{source}: {k} must be an integer, got {v!r}")
    return DataflowConfig(**parsed)


def load_config(path):
    with open(path) as fh:
        return config_from_text(fh.read(), os.fspath(path))


def costs_from_text(text, source="<string>"):
    kv = parse_kv(text, source)
    units = kv.pop("units", None)
    if units is None:
        raise ConfigError(f"{source}: cost table must define 'units'")
    unknown = set(kv) - set(COST_KEYS)
    if unknown:
        raise ConfigError(f"{source}: unknown cost keys {sorted(unknown)}")
    try:
        costs = {k: float(v) for k, v in kv.items()}
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return CostTable(units, costs)


def load_costs(path):
    with open(path) as fh:
        return costs_from_text(fh.read(), os.fspath(path))


def default_costs_path():
    return os.path.join(os.path.dirname(__file__), "data", "default_costs.cfg")


def default_costs():
    """The shipped illustrative cost table (``CREW_COSTS`` overrides the path)."""
    return load_costs(os.environ.get("CREW_COSTS") or default_costs_path())


@dataclass
class SimReport:
    dataflow: str
    n_inputs: int
    n_outputs: int
    compute_cycles: int
    traffic_cycles: int
    multiplications: int
    additions: int
    dram_bytes: dict
    sram_accesses: dict
    details: dict = field(default_factory=dict)
    energy: float = None
    speedup: float = None
    energy_ratio: float = None

    @property
    def cycles(self):
        return max(self.compute_cycles, self.traffic_cycles)

    @property
    def total_dram_bytes(self):
        return int(sum(self.dram_bytes.values()))

    def apply_costs(self, costs):
        e = self.multiplications * costs["mul"] + self.additions * costs["add"]
        e += self.total_dram_bytes * costs["dram_byte"]
        e += self.cycles * costs["static_cycle"]
        for k, n in self.sram_accesses.items():
            e += n * costs[f"sram_{k}"]
        self.energy = float(e)
        return self.energy

    def as_dict(self):
        d = dataclasses.asdict(self)
        d["cycles"] = self.cycles
        d["total_dram_bytes"] = self.total_dram_bytes
        return d

    def csv_row(self):
        row = {
            "dataflow": self.dataflow, "n_inputs": self.n_inputs, "n_outputs": self.n_outputs,
            "cycles": self.cycles, "compute_cycles": self.compute_cycles,
            "traffic_cycles": self.traffic_cycles, "multiplications": self.multiplications,
            "additions": self.additions, "total_dram_bytes": self.total_dram_bytes,
        }
        row.update({f"dram_{k}": v for k, v in self.dram_bytes.items()})
        row.update({f"sram_{k}": v for k, v in self.sram_accesses.items()})
        row.update({"energy": self.energy, "speedup": self.speedup, "energy_ratio": self.energy_ratio})
        return row


SRAM_KEYS = ("global_read", "global_write", "ppbuf_read", "ppbuf_write",
             "indir_read", "indir_write", "psum_read", "psum_write")


def _sram(**counts):
    return {k: int(counts.get(k, 0)) for k in SRAM_KEYS}


def _traffic_cycles(dram_bytes, cfg):
    return math.ceil(sum(dram_bytes.values()) / cfg.dram_bytes_per_cycle)


def _shape(layer):
    if isinstance(layer, (QuantizedLayer, CrewEncoding, PackedCrewLayer)):
        return layer.n_inputs, layer.n_outputs
    n, m = layer
    return int(n), int(m)


def simulate_baseline(layer, cfg=None):
    """Output-stationary baseline; ``layer`` may be a layer, an encoding or ``(N, M)``."""
    cfg = cfg or DataflowConfig()
    n, m = _shape(layer)
    if cfg.baseline_mapping == "batch":
        folds = math.ceil(m / cfg.pe_cols)
    else:
        folds = math.ceil(m / cfg.n_pes)
    per_fold = n + cfg.pe_rows + cfg.pe_cols - 2
    acc_bytes = cfg.acc_bits // 8
    dram = {
        "weights": math.ceil(n * m * cfg.weight_bits / 8),
        "inputs": math.ceil(n * cfg.input_bits / 8),
        "outputs": m * acc_bytes,
    }
    sram = _sram(global_read=n * m + n * folds, global_write=m)
    return SimReport(
        "baseline", n, m, folds * per_fold, _traffic_cycles(dram, cfg), n * m, n * m, dram, sram,
        details={"folds": folds, "cycles_per_fold": per_fold, "mapping": cfg.baseline_mapping},
    )


def _per_row_cycles(uw, n_rows, n_cols):
    sums = np.bincount(np.arange(uw.size) % n_rows, weights=uw, minlength=n_rows)
    return int(np.max(np.ceil(sums / n_cols))) if uw.size else 0


def simulate_crew(layer, cfg=None):
    """Two-step CREW dataflow from a :class:`CrewEncoding` or :class:`PackedCrewLayer`.

    Step 1 assigns inputs to PE rows round-robin; each row spreads its unique
    multiplications over its PE columns. Step 2 starts once the first
    ``bs_row * pe_rows`` inputs have their products and issues one
    lookup-accumulate per PE per cycle.
    """
    cfg = cfg or DataflowConfig()
    if isinstance(layer, QuantizedLayer):
        layer = encode(layer)
    if isinstance(layer, PackedCrewLayer):
        if (layer.bs_row, layer.bs_col) != (cfg.bs_row, cfg.bs_col):
            raise ValueError(
                f"packed stream uses {layer.bs_row}x{layer.bs_col} blocks, "
                f"config expects {cfg.bs_row}x{cfg.bs_col}"
            )
        index_bytes = len(layer.block_stream)
        q = layer.q
    else:
        index_bytes = int(block_stream_sizes(layer.bit_widths, layer.n_outputs, cfg.bs_row, cfg.bs_col).sum())
        q = layer.q
    uw = layer.uw_counts.astype(np.int64)
    n, m = layer.n_inputs, layer.n_outputs

    first = min(n, cfg.bs_row * cfg.pe_rows)
    step1_first = _per_row_cycles(uw[:first], cfg.pe_rows, cfg.pe_cols)
    step1_total = _per_row_cycles(uw, cfg.pe_rows, cfg.pe_cols)
    step2 = math.ceil(n * m / cfg.n_pes)
    out_batches = math.ceil(m / (cfg.pe_cols * cfg.bs_col))
    drain = cfg.pe_rows * out_batches
    writeback = math.ceil(m / cfg.pe_cols)
    # step 1 keeps running behind step 2; whichever finishes later bounds the overlap
    compute = step1_first + max(step2, step1_total - step1_first) + drain + writeback

    n_products = int(uw.sum())
    unique_bytes = int(((uw * q + 7) // 8).sum())
    dram = {
        "unique_weights": unique_bytes,
        "indexes": index_bytes,
        "size_descriptors": (3 * n + 7) // 8,
        "escape_flags": (n + 7) // 8,
        "uw_counts": n,
        "inputs": math.ceil(n * cfg.input_bits / 8),
        "outputs": m * cfg.acc_bits // 8,
    }
    meta = dram["size_descriptors"] + dram["escape_flags"] + dram["uw_counts"]
    sram = _sram(
        global_read=unique_bytes + index_bytes + meta + n, global_write=m,
        ppbuf_write=n_products, ppbuf_read=n * m,
        indir_write=n * m, indir_read=n * m,
        psum_read=n * m, psum_write=n * m,
    )
    return SimReport(
        "crew", n, m, compute, _traffic_cycles(dram, cfg), n_products, n * m, dram, sram,
        details={
            "step1_first_batch_cycles": step1_first, "step1_total_cycles": step1_total,
            "step2_cycles": step2, "drain_cycles": drain, "writeback_cycles": writeback,
        },
    )


def simulate_ucnn(layer, cfg=None):
    """UCNN factorization of an FC layer on the blocked array."""
    cfg = cfg or DataflowConfig()
    if isinstance(layer, (CrewEncoding, PackedCrewLayer)):
        raise TypeError("simulate_ucnn needs the dense QuantizedLayer")
    n, m = layer.n_inputs, layer.n_outputs
    uw_col = column_unique_counts(layer.weights)
    muls = int(uw_col.sum())
    width = ucnn_index_width(n)
    dram = {
        "unique_weights": math.ceil(muls * layer.q / 8),
        "indexes": math.ceil(n * m * width / 8),
        "inputs": math.ceil(n * cfg.input_bits / 8),
        "outputs": m * cfg.acc_bits // 8,
    }
    compute = math.ceil(n * m / cfg.n_pes) + cfg.pe_rows + cfg.pe_cols - 2
    sram = _sram(
        global_read=dram["unique_weights"] + dram["indexes"] + n * m, global_write=m,
        indir_read=n * m, psum_read=n * m, psum_write=n * m,
    )
    adds = int((n - uw_col).sum()) + muls
    return SimReport(
        "ucnn", n, m, compute, _traffic_cycles(dram, cfg), muls, adds, dram, sram,
        details={"index_bits": width},
    )


def _ratio(num, den):
    # 0/0 is defined as 1 so a zero-cost table compares every dataflow as equal
    if num == 0 and den == 0:
        return 1.0
    return num / den if den else math.inf


def compare(layer, cfg=None, costs=None, packed=None):
    """Simulate all three dataflows on ``layer`` and fill speedups/energy ratios.

    ``packed`` optionally supplies the stored CREW stream to charge instead of
    re-encoding ``layer``. Returns ``{"baseline": ..., "ucnn": ..., "crew": ...}``.
    """
    cfg = cfg or DataflowConfig()
    costs = costs or default_costs()
    reports = {
        "baseline": simulate_baseline(layer, cfg),
        "ucnn": simulate_ucnn(layer, cfg),
        "crew": simulate_crew(packed if packed is not None else encode(layer), cfg),
    }
    base = reports["baseline"]
    for r in reports.values():
        r.apply_costs(costs)
    for r in reports.values():
        r.speedup = base.cycles / r.cycles
        r.energy_ratio = _ratio(r.energy, base.energy)
    return reports


def reports_to_json(reports, **extra):
    payload = dict(extra)
    payload["reports"] = {k: r.as_dict() for k, r in reports.items()}
    return json.dumps(payload, indent=2, sort_keys=True)


def reports_to_csv(reports, layer_name=""):
    rows = [dict({"layer": layer_name}, **r.csv_row()) for r in reports.values()]
    cols = []
    for r in rows:
        cols.extend(k for k in r if k not in cols)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()
