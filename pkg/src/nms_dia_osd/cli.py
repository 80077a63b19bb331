"""Command-line entry point: ``nms-dia-osd <subcommand> [flags]``.

Settings come from an optional JSON config with one flat section per
subcommand (plus an optional ``common`` section); flags override it.
Exit status: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

log = logging.getLogger("nms_dia_osd")

SUBCOMMANDS = ("calibrate", "collect", "train-dia", "build-path", "simulate", "stats", "verify")

DEFAULTS = {
    "code": "ccsds_128_64",
    "seed": 0,
    "workers": os.cpu_count() or 1,
    "out": "out",
    "alpha": 0.78,
    "t_max": 12,
    "partition": None,
    "snr": None,
    "frames": None,
    "failures": 10_000,
    "dataset": None,
    "dia_weights": None,
    "path_file": None,
    "grid": None,
    "steps": 1000,
    "lr": 0.01,
    "ranking": "count",
    "pad_weight": None,
    "min_samples": 10_000,
    "max_frames": 2_000_000,
    "target_errors": 100,
    "aux": "off",
    "lpt": None,
    "lambda_max": None,
    "caps": None,
    "plot": True,
}


COMMAND_DEFAULTS = {"verify": {"code": "tiny16", "snr": [2.0], "frames": 1000}}


class ConfigError(Exception):
    """Bad or missing setting; the message names the offending key."""


# --------------------------------------------------------------------------
# parser


def _common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--code", help="bundled code name or alist path")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--workers", type=int, help="worker processes (default: logical cores)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--alpha", type=float, help="NMS normalization factor")
    p.add_argument("--t-max", dest="t_max", type=int, help="NMS iterations T")
    p.add_argument("--partition", help="MRB segment widths, e.g. 10,20,34")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")


def _dataset_flags(p):
    p.add_argument("--dataset", help="failure dataset file (else collected on the fly)")
    p.add_argument("--snr", type=float, action="append", help="Eb/N0 in dB (repeatable)")
    p.add_argument("--failures", type=int, help="failures to collect when no dataset is given")


def build_parser():
    ap = argparse.ArgumentParser(prog="nms-dia-osd", description="NMS decoding with DIA-guided adaptive OSD.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="grid-search the NMS alpha on cross-entropy")
    _common(p)
    p.add_argument("--snr", type=float, action="append", help="training Eb/N0 in dB")
    p.add_argument("--frames", type=int, help="frames per grid value")
    p.add_argument("--grid", help="comma-separated alpha values")

    p = sub.add_parser("collect", help="gather NMS failures with full trajectories")
    _common(p)
    p.add_argument("--snr", type=float, action="append", help="Eb/N0 in dB")
    p.add_argument("--failures", type=int, help="number of failures to keep")

    p = sub.add_parser("train-dia", help="fit DIA weights on a failure dataset")
    _common(p)
    _dataset_flags(p)
    p.add_argument("--steps", type=int, help="Adam steps")
    p.add_argument("--lr", type=float, help="Adam learning rate")

    p = sub.add_parser("build-path", help="rank order patterns into a decoding path")
    _common(p)
    _dataset_flags(p)
    p.add_argument("--dia-weights", help="DIA weights JSON (else final APP metric)")
    p.add_argument("--ranking", choices=["count", "hit_rate"], help="ranking rule")
    p.add_argument("--pad-weight", type=int, help="also list unseen patterns up to this weight")
    p.add_argument("--min-samples", type=int, help="warn below this many failures")

    p = sub.add_parser("simulate", help="FER simulation of NMS alone or the full pipeline")
    _common(p)
    p.add_argument("--snr", type=float, action="append", help="Eb/N0 in dB (repeatable)")
    p.add_argument("--frames", type=int, help="minimum frames per point")
    p.add_argument("--max-frames", type=int, help="frame cap per point")
    p.add_argument("--target-errors", type=int, help="minimum frame errors per point")
    p.add_argument("--path-file", help="decoding path JSON (omit for NMS alone)")
    p.add_argument("--dia-weights", help="DIA weights JSON")
    p.add_argument("--aux", choices=["on", "off"], help="auxiliary candidate filter")
    p.add_argument("--lpt", type=int, help="number of surviving path patterns")
    p.add_argument("--lambda-max", type=int, help="total weight cap lambda_m")
    p.add_argument("--caps", help="per-segment weight caps, e.g. 2,2,1")
    p.add_argument("--no-plot", dest="plot", action="store_const", const=False, help="skip the PNG figure")

    p = sub.add_parser("stats", help="swap, delta, pattern and per-iteration statistics")
    _common(p)
    _dataset_flags(p)
    p.add_argument("--dia-weights", help="DIA weights JSON")
    p.add_argument("--no-plot", dest="plot", action="store_const", const=False, help="skip the PNG figure")

    p = sub.add_parser("verify", help="path-guided OSD vs brute-force ML and conventional OSD")
    _common(p)
    p.add_argument("--snr", type=float, action="append", help="Eb/N0 in dB")
    p.add_argument("--frames", type=int, help="frames to check")
    return ap


# --------------------------------------------------------------------------
# settings


def _load_config(path, command):
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON in {path}: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError("config: top level must be an object")
    for key in obj:
        if key != "common" and key not in SUBCOMMANDS:
            raise ConfigError(f"config: unknown section {key!r}")
    merged = {}
    for section in ("common", command):
        sec = obj.get(section, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"config.{section}: must be an object")
        for k, v in sec.items():
            key = k.replace("-", "_")
            if key not in DEFAULTS:
                raise ConfigError(f"config.{section}.{k}: unknown key")
            merged[key] = v
    return merged


def resolve_settings(args):
    s = dict(DEFAULTS)
    s.update(COMMAND_DEFAULTS.get(args.command, {}))
    s.update(_load_config(args.config, args.command))
    for k, v in vars(args).items():
        if k in DEFAULTS and v is not None:
            s[k] = v
    if isinstance(s["snr"], (int, float)):
        s["snr"] = [float(s["snr"])]
    return s


def _int_list(s, key):
    v = s[key]
    if v is None:
        return None
    try:
        vals = [int(x) for x in (v.split(",") if isinstance(v, str) else v)]
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected comma-separated integers, got {v!r}") from None
    return vals


def _positive(s, key):
    if s[key] is not None and s[key] < 1:
        raise ConfigError(f"{key}: must be >= 1, got {s[key]}")


def _code(s):
    from .codes import BUNDLED, load_code
    from .gf2 import AlistError

    ref = s["code"]
    if ref not in BUNDLED and not Path(ref).is_file():
        raise ConfigError(f"code: no bundled code or alist file named {ref!r}")
    try:
        return load_code(ref)
    except AlistError as exc:
        raise ConfigError(f"code: {exc}") from None


def _nms(s):
    from .nms import NmsConfig

    try:
        return NmsConfig(t_max=int(s["t_max"]), alpha=float(s["alpha"]))
    except ValueError as exc:
        raise ConfigError(f"alpha/t_max: {exc}") from None


def _partition(s, code):
    from .osd import MrbPartition, default_partition

    widths = _int_list(s, "partition")
    if widths is None:
        return default_partition(code.k)
    try:
        part = MrbPartition(tuple(widths))
    except ValueError as exc:
        raise ConfigError(f"partition: {exc}") from None
    if part.k != code.k:
        raise ConfigError(f"partition: widths sum to {part.k}, code has K={code.k}")
    return part


def _file(s, key):
    v = s[key]
    if v is not None and not Path(v).is_file():
        raise ConfigError(f"{key}: file not found: {v}")
    return v


def _single_snr(s):
    if not s["snr"]:
        raise ConfigError("snr: an SNR point is required")
    if len(s["snr"]) != 1:
        raise ConfigError("snr: this subcommand takes exactly one SNR")
    return float(s["snr"][0])


def _dia(s):
    from .dia import DiaWeights

    path = _file(s, "dia_weights")
    if path is None:
        return None
    try:
        return DiaWeights.load(path)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"dia_weights: {exc}") from None


def _failures(s, code, nms):
    from .dataset import TrajectoryDataset
    from .harness import collect_failures

    path = _file(s, "dataset")
    if path is not None:
        data = TrajectoryDataset.load(path)
        if data.n != code.n:
            raise ConfigError(f"dataset: frames of length {data.n}, code has N={code.n}")
        return data
    _positive(s, "failures")
    return collect_failures(code, _single_snr(s), int(s["failures"]), nms, s["seed"], s["workers"])


# --------------------------------------------------------------------------
# subcommands


def cmd_calibrate(s, out):
    from .nms import calibrate_alpha

    code = _code(s)
    grid = [float(x) for x in (s["grid"].split(",") if isinstance(s["grid"], str) else
                               (s["grid"] or np.round(np.arange(0.5, 1.001, 0.02), 2)))]
    frames = int(s["frames"] or 2000)
    alpha = calibrate_alpha(code, _single_snr(s), frames, grid, int(s["t_max"]), s["seed"])
    (out / "alpha.json").write_text(json.dumps({"alpha": alpha, "grid": grid}))
    print(f"alpha = {alpha}")
    return {"alpha": alpha}, [out / "alpha.json"]


def cmd_collect(s, out):
    from .harness import collect_failures

    code, nms = _code(s), _nms(s)
    _positive(s, "failures")
    snr = _single_snr(s)
    data = collect_failures(code, snr, int(s["failures"]), nms, s["seed"], s["workers"])
    path = out / "failures.bin"
    data.save(path)
    print(f"{len(data)} failures at {snr} dB -> {path}")
    return {"failures": len(data)}, [path]


def cmd_train_dia(s, out):
    from .dia import TrainConfig, dia_train

    code, nms = _code(s), _nms(s)
    data = _failures(s, code, nms)
    try:
        cfg = TrainConfig(learning_rate=float(s["lr"]), steps=int(s["steps"]), seed=s["seed"])
    except ValueError as exc:
        raise ConfigError(f"lr/steps: {exc}") from None
    res = dia_train(data, cfg=cfg)
    path = out / "dia_weights.json"
    res.weights.save(path)
    print(f"trained on {len(res.train_index)} frames, last-100 loss {res.losses[-100:].mean():.4f}")
    return {"final_loss": float(res.losses[-100:].mean())}, [path]


def cmd_build_path(s, out):
    from .harness import classify_dataset
    from .osd import build_decoding_path

    code, nms = _code(s), _nms(s)
    part = _partition(s, code)
    dia = _dia(s)
    data = _failures(s, code, nms)
    pats, _, _ = classify_dataset(data, code, part, dia)
    try:
        path = build_decoding_path(pats, part, s["ranking"], s["pad_weight"], int(s["min_samples"]),
                                   code_id=code.source_id, query_snr_db=float(data.snr_db),
                                   metric_source="dia" if dia is not None else "app_final")
    except ValueError as exc:
        raise ConfigError(f"ranking/dataset: {exc}") from None
    p = out / "path.json"
    path.save(p)
    for e in path.entries[:10]:
        print(f"{list(e.pattern)}  count={e.count}  teps={e.tep_count}")
    return {"patterns": len(path)}, [p]


def _constraints(s):
    from .osd import PathConstraints

    caps = _int_list(s, "caps")
    try:
        return PathConstraints(l_pt=s["lpt"], caps=tuple(caps) if caps else None, lambda_m=s["lambda_max"])
    except ValueError as exc:
        raise ConfigError(f"lpt/caps/lambda_max: {exc}") from None


def cmd_simulate(s, out):
    from .harness import ExperimentConfig, emit_fer_report, run_fer
    from .osd import DecodingPath

    code, nms = _code(s), _nms(s)
    if not s["snr"]:
        raise ConfigError("snr: at least one SNR point is required")
    for key in ("frames", "max_frames", "workers"):
        _positive(s, key)
    if s["aux"] not in ("on", "off"):
        raise ConfigError(f"aux: expected 'on' or 'off', got {s['aux']!r}")
    dia = _dia(s)
    path = None
    if _file(s, "path_file") is not None:
        try:
            path = DecodingPath.load(s["path_file"])
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"path_file: {exc}") from None
    if dia is not None and dia.arch.t != nms.t_max:
        raise ConfigError(f"dia_weights: weights expect T={dia.arch.t}, t_max is {nms.t_max}")
    if path is not None and path.partition.k != code.k:
        raise ConfigError(f"path_file: partition covers {path.partition.k} bits, code has K={code.k}")
    cfg = ExperimentConfig(code=code, snrs=tuple(s["snr"]), min_frames=int(s["frames"] or 20_000),
                           max_frames=int(s["max_frames"]), target_errors=int(s["target_errors"]), nms=nms,
                           dia=dia, path=path, constraints=_constraints(s), aux_on=s["aux"] == "on",
                           seed=s["seed"], workers=int(s["workers"]))
    points = run_fer(cfg)
    files = emit_fer_report(points, out, plot=bool(s["plot"]))
    for p in points:
        print(f"{p.snr_db:5.2f} dB  frames={p.frames}  errors={p.frame_errors}  FER={p.fer:.4g}  "
              f"NMS FER={p.nms_fer:.4g}")
    return {"wall_time": {str(p.snr_db): p.wall_time for p in points}}, files


def cmd_stats(s, out):
    from .harness import compute_stats, emit_stats_report

    code, nms = _code(s), _nms(s)
    part = _partition(s, code)
    dia = _dia(s)
    data = _failures(s, code, nms)
    rep = compute_stats(data, code, dia, part)
    files = emit_stats_report(rep, out, plot=bool(s["plot"]))
    print(f"{rep.frames} failures, mean n_sw {rep.mean_swaps:.3f}")
    for metric, tab in rep.patterns.items():
        print(f"{metric}: top-2 ratio {sum(r for _, _, r in tab[:2]):.4f}")
    return {"mean_n_sw": rep.mean_swaps}, files


def run_verify(code, snr_db, frames, seed):
    """Counts of (checked, ties, ML mismatches, order-0 mismatches, order-1 mismatches)."""
    from .channel import ChannelParams, frame_rng, random_frame
    from .gf2 import derive_generator
    from .oracles import CodebookOracle, conventional_osd_reference
    from .osd import default_partition, nominal_path, osd_decode, prepare_context

    oracle = CodebookOracle(code)
    part = default_partition(code.k)
    full, p0, p1 = nominal_path(code.k, part), nominal_path(0, part), nominal_path(1, part)
    g, _ = derive_generator(code)
    params = ChannelParams(snr_db, code.rate, seed)
    counts = dict(checked=0, ties=0, ml=0, order0=0, order1=0)
    signs = 1.0 - 2.0 * oracle.codewords
    for i in range(frames):
        y = random_frame(g, params, frame_rng(seed, 0, i)).received
        corr = np.sort(signs @ y)
        if corr[-1] - corr[-2] < 1e-12:
            counts["ties"] += 1
            continue
        counts["checked"] += 1
        ctx = prepare_context(y, y, code)
        if not np.array_equal(osd_decode(ctx, full).estimate, oracle.ml_decode(y)):
            counts["ml"] += 1
        for key, path, order in (("order0", p0, 0), ("order1", p1, 1)):
            if not np.array_equal(osd_decode(ctx, path).estimate, conventional_osd_reference(y, y, code, order)):
                counts[key] += 1
    return counts


def cmd_verify(s, out):
    code = _code(s)
    if code.k > 20:
        raise ConfigError(f"code: brute-force ML needs K <= 20, {s['code']} has K={code.k}")
    _positive(s, "frames")
    counts = run_verify(code, _single_snr(s), int(s["frames"]), s["seed"])
    print(f"frames checked {counts['checked']} (ties skipped {counts['ties']})")
    for key in ("ml", "order0", "order1"):
        print(f"  {key}: {counts['checked'] - counts[key]} / {counts['checked']} agree")
    path = out / "verify.json"
    path.write_text(json.dumps(counts))
    if counts["ml"] or counts["order0"] or counts["order1"]:
        raise RuntimeError("oracle mismatches found")
    return counts, [path]


HANDLERS = {
    "calibrate": cmd_calibrate,
    "collect": cmd_collect,
    "train-dia": cmd_train_dia,
    "build-path": cmd_build_path,
    "simulate": cmd_simulate,
    "stats": cmd_stats,
    "verify": cmd_verify,
}


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (np.integer, np.floating)):
        return v.item()
    return v


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        s = resolve_settings(args)
        out = Path(s["out"])
        out.mkdir(parents=True, exist_ok=True)
        result, files = HANDLERS[args.command](s, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - exit-code contract
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    from . import __version__

    manifest = {
        "command": args.command,
        "argv": list(sys.argv[1:] if argv is None else argv),
        "settings": {k: _jsonable(v) for k, v in s.items()},
        "result": {k: _jsonable(v) for k, v in result.items()},
        "outputs": [str(f) for f in files],
        "elapsed_s": time.perf_counter() - t0,
        "versions": {"package": __version__, "python": platform.python_version(), "numpy": np.__version__},
    }
    (out / f"manifest-{args.command}.json").write_text(json.dumps(manifest, indent=1, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
