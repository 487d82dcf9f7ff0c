"""Command-line front end.

Exit codes: 0 success, 2 usage, 3 format or verification failure, 4 I/O.
"""

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import codec, perfmodel, ppa, quantize, suite, tensorio
from .engine import crew_forward, dense_forward, ucnn_forward
from .exceptions import ConfigError, CrewError, FormatError, VerificationError
from .layers import FloatLayer, QuantizedLayer

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_IO = 0, 2, 3, 4


class UsageError(CrewError):
    pass


def _read_any(path):
    """Load an FCL1 layer or a CREW file, dispatching on the magic bytes."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] == codec.CREW_MAGIC:
        return codec.PackedCrewLayer.from_bytes(buf)
    return tensorio.layer_from_bytes(buf)


def _quantized(obj, path):
    if isinstance(obj, QuantizedLayer):
        return obj
    if isinstance(obj, codec.PackedCrewLayer):
        return codec.decode_to_dense(codec.unpack(obj))
    raise FormatError(f"{path}: expected a quantized layer (FCL1 dtype 1 or CREW), got a float layer")


def _write_text(path, text):
    tensorio.atomic_write_bytes(path, text.encode())


def _csv_text(rows, columns):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _emit(args, payload, text):
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    elif not args.quiet:
        print(text)


def _parse_values(s):
    try:
        return [int(v) for v in s.replace(" ", "").split(",") if v]
    except ValueError as exc:
        raise UsageError(f"cannot parse integer list {s!r}") from exc


def _parse_floats(s):
    try:
        return [float(v) for v in s.replace(" ", "").split(",") if v]
    except ValueError as exc:
        raise UsageError(f"cannot parse number list {s!r}") from exc


# -- subcommands --------------------------------------------------------------


def cmd_quantize(args):
    layer = tensorio.load_layer(args.input)
    if not isinstance(layer, FloatLayer):
        raise FormatError(f"{args.input}: already quantized")
    q = quantize.quantize_layer(layer, args.bits)
    tensorio.save_layer(q, args.output)
    _emit(args, {"output": args.output, "scale": q.scale, "bits": args.bits},
          f"quantized {layer.n_inputs}x{layer.n_outputs} to {args.bits} bits, scale={q.scale:.6g}")


def cmd_encode(args):
    layer = _quantized(_read_any(args.input), args.input)
    packed = codec.pack(codec.encode(layer), args.bs_row, args.bs_col)
    codec.save_crew(packed, args.output)
    rep = codec.storage_report(codec.unpack(packed), args.bs_row, args.bs_col)
    _emit(args, {"output": args.output, **rep.as_dict()},
          f"wrote {args.output}: {len(packed.to_bytes())} bytes, "
          f"storage reduction {100 * rep.storage_reduction_fraction:.2f}%")


def cmd_decode(args):
    packed = codec.load_crew(args.input)
    layer = codec.decode_to_dense(codec.unpack(packed))
    tensorio.save_layer(layer, args.output)
    _emit(args, {"output": args.output}, f"decoded {layer.n_inputs}x{layer.n_outputs} to {args.output}")


def cmd_verify(args):
    packed = codec.load_crew(args.input)
    enc = codec.unpack(packed)
    if args.reference:
        reference = _quantized(_read_any(args.reference), args.reference)
        if reference.weights.shape != enc.index_matrix.shape:
            raise FormatError("reference layer shape differs from the CREW layer")
    else:
        reference = codec.decode_to_dense(enc)
    rng = np.random.default_rng(args.seed)
    exact, first_bad, max_abs, rel = 0, None, 0, []
    for k in range(args.inputs):
        x = rng.integers(-128, 128, size=enc.n_inputs)
        got, _, _ = crew_forward(enc, x)
        want, _ = dense_forward(reference, x)
        diff = got.astype(np.int64) - want
        if not diff.any():
            exact += 1
        elif first_bad is None:
            j = int(np.flatnonzero(diff)[0])
            first_bad = {"input": k, "output": j, "crew": int(got[j]), "dense": int(want[j])}
        max_abs = max(max_abs, int(np.abs(diff).max()))
        den = np.linalg.norm(want.astype(np.float64))
        rel.append(float(np.linalg.norm(diff.astype(np.float64)) / den) if den else float(bool(diff.any())))
    payload = {
        "inputs": args.inputs, "exact": exact, "first_mismatch": first_bad,
        "max_abs_error": max_abs, "mean_rel_error": float(np.mean(rel)) if rel else 0.0,
    }
    if exact == args.inputs:
        _emit(args, dict(payload, status="OK"), f"OK, {exact}/{args.inputs} exact")
        return EXIT_OK
    text = (f"MISMATCH, {exact}/{args.inputs} exact; first at input {first_bad['input']} "
            f"output {first_bad['output']} (crew={first_bad['crew']}, dense={first_bad['dense']}); "
            f"max |err|={max_abs}, mean rel err={payload['mean_rel_error']:.3g}")
    if args.approx:
        _emit(args, dict(payload, status="APPROX"), text)
        return EXIT_OK
    print(text, file=sys.stderr)
    if args.json:
        print(json.dumps(dict(payload, status="MISMATCH"), indent=2, sort_keys=True))
    return EXIT_FORMAT


def _stats_payload(layer, bs_row, bs_col):
    a = codec.analyze_rows(layer)
    rep = codec.storage_report(codec.encode(layer), bs_row, bs_col)
    hist = a.histogram()
    n = a.uw_counts.size
    cum, running = [], 0
    for uw in sorted(hist):
        running += hist[uw]
        cum.append({"uw": uw, "rows": hist[uw], "cumulative": running / n})
    return {
        "n_inputs": layer.n_inputs, "n_outputs": layer.n_outputs,
        "mean_uw": a.mean_uw, "muls_pct": 100 * a.muls_fraction,
        "rows_below_64_pct": 100 * a.cumulative(64),
        "histogram": cum, "storage": rep.as_dict(),
    }


def cmd_stats(args):
    layer = _quantized(_read_any(args.input), args.input)
    p = _stats_payload(layer, args.bs_row, args.bs_col)
    if args.csv:
        _write_text(args.csv, _csv_text(p["histogram"], ("uw", "rows", "cumulative")))
    s = p["storage"]
    _emit(args, p, "\n".join([
        f"layer {p['n_inputs']}x{p['n_outputs']}",
        f"UW/I {p['mean_uw']:.2f}  MULs {p['muls_pct']:.2f}%  rows with UW<64 {p['rows_below_64_pct']:.1f}%",
        f"saved MULs {100 * s['saved_muls_fraction']:.2f}%  "
        f"storage reduction {100 * s['storage_reduction_fraction']:.2f}%  "
        f"(dense {s['dense_bits']} bits, crew {s['crew_bits']} bits)",
    ]))


def cmd_ppa(args):
    layer = _quantized(_read_any(args.input), args.input)
    approx, reports = ppa.apply_ppa(layer, ppa.PpaConfig(args.thr, args.max_bits))
    tensorio.save_layer(approx, args.output)
    if args.report:
        cols = ("row", "level", "original_uw", "target_uw", "dist_w", "low_freq_w", "wr", "applied")
        _write_text(args.report, _csv_text([{c: getattr(r, c) for c in cols} for r in reports], cols))
    frac = ppa.rows_reduced(reports, layer.n_inputs)
    _emit(args, {"output": args.output, "rows_reduced_pct": 100 * frac},
          f"approximated {100 * frac:.1f}% of rows at thr={args.thr}")


def cmd_ppa_sweep(args):
    layer = _quantized(_read_any(args.input), args.input)
    thrs = _parse_floats(args.thrs)
    if any(not 0 <= t <= 1 for t in thrs):
        raise UsageError("thresholds must lie in [0, 1]")
    rows = ppa.ppa_sweep(layer, thrs, args.max_bits, args.bs_row, args.bs_col, seed=args.seed)
    text = _csv_text([r.as_dict() for r in rows], ppa.SWEEP_COLUMNS)
    if args.out:
        _write_text(args.out, text)
    if args.json:
        print(json.dumps([r.as_dict() for r in rows], indent=2))
    elif not args.quiet and not args.out:
        print(text, end="")


def _config(args):
    cfg = perfmodel.load_config(args.config) if args.config else perfmodel.DataflowConfig()
    if args.costs:
        costs = perfmodel.load_costs(args.costs)
    else:
        costs = perfmodel.default_costs()
    return cfg, costs


def cmd_simulate(args):
    cfg, costs = _config(args)
    obj = _read_any(args.input)
    layer = _quantized(obj, args.input)
    # a CREW input is charged for the stream it stores; block-size mismatch raises
    packed = obj if isinstance(obj, codec.PackedCrewLayer) else None
    try:
        reports = perfmodel.compare(layer, cfg, costs, packed=packed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if args.dataflow != "all":
        reports = {args.dataflow: reports[args.dataflow]}
    body = perfmodel.reports_to_json(reports, layer=os.path.basename(args.input), cost_units=costs.units)
    if args.out:
        _write_text(args.out, body + "\n")
    if args.csv:
        _write_text(args.csv, perfmodel.reports_to_csv(reports, os.path.basename(args.input)))
    if args.json:
        print(body)
    elif not args.quiet:
        for name, r in reports.items():
            print(f"{name:9s} cycles={r.cycles:>10d} speedup={r.speedup:6.3f} "
                  f"dram={r.total_dram_bytes:>10d}B energy_ratio={r.energy_ratio:6.3f}")


def cmd_suite(args):
    cfg, costs = _config(args)
    names = args.presets.split(",") if args.presets else list(suite.PRESET_NAMES)
    try:
        presets = tuple(suite.get_preset(n) for n in names)
    except KeyError as exc:
        raise UsageError(str(exc)) from exc
    layers = suite.SuiteSpec(presets, seed=args.seed).layers()
    os.makedirs(args.out, exist_ok=True)
    table, speed, sweep_rows, all_uw = [], [], [], []
    for p in presets:
        layer = layers[p.name]
        if args.write_layers:
            tensorio.save_layer(layer, os.path.join(args.out, f"{p.name}.fcl"))
        st = _stats_payload(layer, cfg.bs_row, cfg.bs_col)
        all_uw.append(codec.analyze_rows(layer).uw_counts)
        table.append({
            "preset": p.name, "n_inputs": p.n_inputs, "n_outputs": p.n_outputs,
            "mean_uw": st["mean_uw"], "muls_pct": st["muls_pct"],
            "saved_muls_pct": 100 * st["storage"]["saved_muls_fraction"],
            "storage_reduction_pct": 100 * st["storage"]["storage_reduction_fraction"],
            "reported_saved_muls_pct": p.saved_muls_pct,
            "reported_storage_reduction_pct": p.storage_reduction_pct,
        })
        reps = perfmodel.compare(layer, cfg, costs)
        speed.append({
            "preset": p.name,
            "crew_speedup": reps["crew"].speedup, "ucnn_speedup": reps["ucnn"].speedup,
            "crew_energy_ratio": reps["crew"].energy_ratio, "ucnn_energy_ratio": reps["ucnn"].energy_ratio,
            "baseline_cycles": reps["baseline"].cycles, "crew_cycles": reps["crew"].cycles,
            "ucnn_cycles": reps["ucnn"].cycles,
        })
        for r in ppa.ppa_sweep(layer, _parse_floats(args.thrs), args.max_bits, cfg.bs_row, cfg.bs_col,
                               seed=args.seed):
            sweep_rows.append(dict({"preset": p.name}, **r.as_dict()))
    uw = np.concatenate(all_uw)
    cum = [{"uw": k, "cumulative": float(np.mean(uw <= k))} for k in range(1, 257)]
    _write_text(os.path.join(args.out, "uw_table.csv"), _csv_text(table, table[0].keys()))
    _write_text(os.path.join(args.out, "speedup.csv"), _csv_text(speed, speed[0].keys()))
    _write_text(os.path.join(args.out, "ppa_sweep.csv"),
                _csv_text(sweep_rows, ("preset",) + ppa.SWEEP_COLUMNS))
    _write_text(os.path.join(args.out, "cumulative.csv"), _csv_text(cum, ("uw", "cumulative")))
    summary = {
        "seed": args.seed, "cost_units": costs.units, "table": table, "speedup": speed,
        "rows_below_64_pct": 100 * float(np.mean(uw < 64)),
    }
    _write_text(os.path.join(args.out, "suite.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    lines = [f"{'preset':12s} {'UW/I':>6s} {'savedMUL%':>9s} {'storage%':>8s} {'CREW x':>7s} {'UCNN x':>7s}"]
    for t, s in zip(table, speed):
        lines.append(f"{t['preset']:12s} {t['mean_uw']:6.2f} {t['saved_muls_pct']:9.2f} "
                     f"{t['storage_reduction_pct']:8.2f} {s['crew_speedup']:7.3f} {s['ucnn_speedup']:7.3f}")
    lines.append(f"rows with UW<64: {summary['rows_below_64_pct']:.1f}%")
    _emit(args, summary, "\n".join(lines))


def cmd_forward(args):
    obj = _read_any(args.input)
    layer = _quantized(obj, args.input)
    if args.values is not None:
        x = np.array(_parse_values(args.values), dtype=np.int64)
    elif args.input_file:
        with open(args.input_file, "rb") as fh:
            x = np.frombuffer(fh.read(), dtype=np.int8).astype(np.int64)
    else:
        raise UsageError("give --values or --input-file")
    if args.method == "crew":
        enc = codec.unpack(obj) if isinstance(obj, codec.PackedCrewLayer) else codec.encode(layer)
        out, trace, _ = crew_forward(enc, x)
    elif args.method == "dense":
        out, trace = dense_forward(layer, x)
    else:
        out, trace = ucnn_forward(layer, x)
    if args.out:
        if args.out.endswith(".csv"):
            _write_text(args.out, "\n".join(str(int(v)) for v in out) + "\n")
        else:
            tensorio.atomic_write_bytes(args.out, out.astype("<i4").tobytes())
    payload = {"outputs": out.tolist(), "multiplications": trace.multiplications,
               "additions": trace.additions, "index_lookups": trace.index_lookups}
    _emit(args, payload, " ".join(str(int(v)) for v in out) if not args.out else
          f"wrote {out.size} outputs to {args.out}")


# -- parser -------------------------------------------------------------------


def _add_globals(p, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="seed for any random draws (default 0)")
    p.add_argument("--quiet", action="store_true", default=d(False), help="suppress human-readable output")
    p.add_argument("--json", action="store_true", default=d(False), help="print machine-readable JSON")


def _add_block(p):
    p.add_argument("--bs-row", type=int, default=16)
    p.add_argument("--bs-col", type=int, default=16)


def _add_sim(p):
    p.add_argument("--config", help="DataflowConfig key = value file")
    p.add_argument("--costs", help="CostTable file (default: $CREW_COSTS or the shipped table)")


def build_parser():
    parser = argparse.ArgumentParser(prog="crewfc", description=__doc__)
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        _add_globals(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("quantize", cmd_quantize, "float FCL1 layer -> int8 FCL1 layer")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--bits", type=int, default=8, choices=range(2, 9), metavar="{2..8}")

    p = add("encode", cmd_encode, "quantized layer -> CREW file")
    p.add_argument("input")
    p.add_argument("output")
    _add_block(p)

    p = add("decode", cmd_decode, "CREW file -> int8 FCL1 layer")
    p.add_argument("input")
    p.add_argument("output")

    p = add("verify", cmd_verify, "check CREW execution against dense execution")
    p.add_argument("input")
    p.add_argument("--reference", help="quantized layer to compare against (default: the decoded CREW file)")
    p.add_argument("--inputs", type=int, default=64, help="number of random input vectors")
    p.add_argument("--approx", action="store_true",
                   help="mismatches are expected (approximated layer): report statistics, exit 0")

    p = add("stats", cmd_stats, "unique-weight statistics and storage report")
    p.add_argument("input")
    p.add_argument("--csv", help="write the UW histogram as CSV")
    _add_block(p)

    p = add("ppa", cmd_ppa, "apply partial product approximation")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--thr", type=float, default=0.10)
    p.add_argument("--max-bits", type=int, default=1)
    p.add_argument("--report", help="write per-row reports as CSV")

    p = add("ppa-sweep", cmd_ppa_sweep, "compression and perturbation across thresholds")
    p.add_argument("input")
    p.add_argument("--thrs", default="0,0.05,0.10,0.15,0.20")
    p.add_argument("--max-bits", type=int, default=1)
    p.add_argument("--out", help="CSV output path (default: stdout)")
    _add_block(p)

    p = add("simulate", cmd_simulate, "timing/traffic/energy of the dataflows")
    p.add_argument("input")
    p.add_argument("--dataflow", choices=("baseline", "ucnn", "crew", "all"), default="all")
    p.add_argument("--out", help="JSON report path")
    p.add_argument("--csv", help="CSV report path")
    _add_sim(p)

    p = add("suite", cmd_suite, "generate the preset suite and write its tables")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--presets", help=f"comma-separated subset of {','.join(suite.PRESET_NAMES)}")
    p.add_argument("--thrs", default="0,0.05,0.10,0.15,0.20")
    p.add_argument("--max-bits", type=int, default=1)
    p.add_argument("--write-layers", action="store_true", help="also save each preset layer as FCL1")
    _add_sim(p)

    p = add("forward", cmd_forward, "run one input vector through a layer")
    p.add_argument("input")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--values", help="comma-separated int8 inputs")
    g.add_argument("--input-file", help="raw int8 input vector")
    p.add_argument("--method", choices=("crew", "dense", "ucnn"), default="crew")
    p.add_argument("--out", help="write outputs (.csv text, otherwise raw int32)")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        rc = args.func(args)
    except UsageError as exc:
        print(f"crewfc: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ConfigError, VerificationError) as exc:
        print(f"crewfc: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        print(f"crewfc: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"crewfc: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    return rc or EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
