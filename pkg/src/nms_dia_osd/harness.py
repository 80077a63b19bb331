"""Monte-Carlo engine for the NMS -> DIA -> OSD pipeline and its statistics.

Every frame draws its message and noise from its own generator keyed by
``(seed, stream, snr, frame index)``. Frames are processed in fixed chunks
that are merged strictly in order, and the stopping rule is checked after
each merged chunk, so results do not depend on the number of workers.
"""

from __future__ import annotations

import csv
import logging
import multiprocessing as mp
import os
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .channel import ebn0_to_sigma, frame_rng
from .dataset import TrajectoryDataset, concat
from .dia import DiaWeights, dia_forward
from .gf2 import derive_generator
from .nms import NmsConfig, bit_cross_entropy, nms_decode
from .osd import (DecodingPath, MrbPartition, PathConstraints, build_decoding_path, classify_error_pattern,
                  default_partition, osd_decode, prepare_context)

log = logging.getLogger(__name__)

STREAM_SIMULATE = 0
STREAM_COLLECT = 1
CHUNK = 2000


def snr_key(snr_db):
    """Non-negative integer key for an SNR, stable to 1e-3 dB."""
    return int(round(snr_db * 1000)) + 1_000_000


# --------------------------------------------------------------------------
# configuration and results


@dataclass
class ExperimentConfig:
    """Everything ``run_fer`` needs. ``dia`` and ``path`` accept a file path or a loaded object."""

    code: object
    snrs: tuple
    min_frames: int = 20_000
    max_frames: int = 2_000_000
    target_errors: int = 100
    nms: NmsConfig = field(default_factory=NmsConfig)
    dia: Union[str, DiaWeights, None] = None
    path: Union[str, DecodingPath, None] = None
    constraints: PathConstraints = field(default_factory=PathConstraints)
    aux_on: bool = False
    seed: int = 0
    workers: int = 1
    noiseless: bool = False

    def __post_init__(self):
        self.snrs = tuple(float(s) for s in self.snrs)
        if not self.snrs:
            raise ValueError("snrs: at least one SNR point is required")
        if self.min_frames < 1 or self.max_frames < 1:
            raise ValueError("min_frames/max_frames: frame targets must be positive")
        if self.workers < 1:
            raise ValueError("workers: must be >= 1")

    def resolved(self):
        """Copy with the code, DIA weights and decoding path loaded."""
        from .codes import load_code

        code = load_code(self.code) if isinstance(self.code, (str, os.PathLike)) else self.code
        dia = DiaWeights.load(self.dia) if isinstance(self.dia, (str, os.PathLike)) else self.dia
        path = DecodingPath.load(self.path) if isinstance(self.path, (str, os.PathLike)) else self.path
        if dia is not None and dia.arch.t != self.nms.t_max:
            raise ValueError(f"dia: weights expect T={dia.arch.t}, decoder runs T={self.nms.t_max}")
        if path is not None and path.partition.k != code.k:
            raise ValueError(f"path: partition covers {path.partition.k} bits, code has K={code.k}")
        out = ExperimentConfig(**{f.name: getattr(self, f.name) for f in fields(self)})
        out.code, out.dia, out.path = code, dia, path
        return out


@dataclass(frozen=True)
class FerPoint:
    snr_db: float
    frames: int
    nms_failures: int
    frame_errors: int
    undetected_errors: int
    fer: float
    ber: float
    tau: float
    nms_fer: float
    mean_candidates_scored: float
    wall_time: float = 0.0


CSV_FIELDS = [f.name for f in fields(FerPoint) if f.name != "wall_time"]


# --------------------------------------------------------------------------
# frame generation and chunk simulation


def draw_frames(generator, sigma, seed, stream, key, start, count, noiseless=False):
    """Messages, codewords and received samples for frames ``start..start+count-1``."""
    k, n = generator.shape
    msgs = np.empty((count, k), dtype=np.uint8)
    noise = np.zeros((count, n))
    for i in range(count):
        rng = frame_rng(seed, stream, key, start + i)
        msgs[i] = rng.integers(0, 2, size=k, dtype=np.uint8)
        if not noiseless:
            noise[i] = rng.standard_normal(n)
    cws = (msgs.astype(np.int64) @ generator.astype(np.int64) % 2).astype(np.uint8)
    y = 1.0 - 2.0 * cws + sigma * noise
    return msgs, cws, y


def osd_metric(trajectory, dia):
    """Reliabilities handed to OSD: DIA output, else the final APP."""
    if dia is None:
        return trajectory[:, -1]
    return dia_forward(dia, trajectory)


_STATE = {}


def _simulate_chunk(job):
    snr, start, count = job
    cfg = _STATE["cfg"]
    g = _STATE["generator"]
    code = cfg.code
    sigma = ebn0_to_sigma(snr, code.rate)
    _, cws, y = draw_frames(g, sigma, cfg.seed, STREAM_SIMULATE, snr_key(snr), start, count, cfg.noiseless)
    run_osd = cfg.path is not None
    nms_cfg = NmsConfig(cfg.nms.t_max, cfg.nms.alpha, record_trajectory=run_osd, early_stop=True)
    res = nms_decode(y, code, nms_cfg)
    t = dict(frames=count, nms_failures=0, frame_errors=0, undetected=0, bit_errors=0, scored=0)
    for f in range(count):
        if res.converged[f]:
            wrong = res.hard[f] != cws[f]
            if wrong.any():
                t["undetected"] += 1
                t["frame_errors"] += 1
                t["bit_errors"] += int(wrong.sum())
            continue
        t["nms_failures"] += 1
        if not run_osd:
            t["frame_errors"] += 1
            t["bit_errors"] += int(np.count_nonzero(res.hard[f] != cws[f]))
            continue
        traj = res.trajectory[f]
        ctx = prepare_context(y[f], osd_metric(traj, cfg.dia), code)
        out = osd_decode(ctx, cfg.path, cfg.constraints, cfg.aux_on)
        t["scored"] += out.candidates_scored
        wrong = out.estimate != cws[f]
        if wrong.any():
            t["frame_errors"] += 1
            t["bit_errors"] += int(wrong.sum())
    return t


def _chunk_stream(cfg, snr):
    start = 0
    while start < cfg.max_frames:
        count = min(CHUNK, cfg.max_frames - start)
        yield (snr, start, count)
        start += count


def _map_ordered(fn, jobs, workers):
    """Ordered lazy map; a fork pool when ``workers > 1``."""
    if workers <= 1 or "fork" not in mp.get_all_start_methods():
        for j in jobs:
            yield fn(j)
        return
    with mp.get_context("fork").Pool(workers) as pool:
        yield from pool.imap(fn, jobs)


def run_fer(cfg):
    """Simulate each SNR point until ``min_frames`` and ``target_errors`` are both met.

    Without a decoding path the run is NMS alone. ``max_frames`` bounds
    every point.
    """
    cfg = cfg.resolved()
    g, _ = derive_generator(cfg.code)
    _STATE.update(cfg=cfg, generator=g)
    points = []
    try:
        for snr in cfg.snrs:
            t0 = time.perf_counter()
            tot = dict(frames=0, nms_failures=0, frame_errors=0, undetected=0, bit_errors=0, scored=0)
            stream = _map_ordered(_simulate_chunk, _chunk_stream(cfg, snr), cfg.workers)
            for part in stream:
                for key in tot:
                    tot[key] += part[key]
                if tot["frames"] >= cfg.min_frames and tot["frame_errors"] >= cfg.target_errors:
                    break
            if hasattr(stream, "close"):
                stream.close()
            fr = tot["frames"]
            pt = FerPoint(
                snr_db=snr, frames=fr, nms_failures=tot["nms_failures"], frame_errors=tot["frame_errors"],
                undetected_errors=tot["undetected"], fer=tot["frame_errors"] / fr,
                ber=tot["bit_errors"] / (fr * cfg.code.n), tau=tot["nms_failures"] / fr,
                nms_fer=(tot["nms_failures"] + tot["undetected"]) / fr,
                mean_candidates_scored=tot["scored"] / tot["nms_failures"] if tot["nms_failures"] else 0.0,
                wall_time=time.perf_counter() - t0)
            log.info("%.2f dB: %d frames, %d errors, FER %.4g", snr, fr, pt.frame_errors, pt.fer)
            points.append(pt)
    finally:
        _STATE.clear()
    return points


def _collect_chunk(job):
    snr, start, count = job
    code, g, nms_cfg, seed = _STATE["code"], _STATE["generator"], _STATE["nms"], _STATE["seed"]
    sigma = ebn0_to_sigma(snr, code.rate)
    _, cws, y = draw_frames(g, sigma, seed, STREAM_COLLECT, snr_key(snr), start, count)
    res = nms_decode(y, code, NmsConfig(nms_cfg.t_max, nms_cfg.alpha, True, True))
    fail = np.nonzero(~res.converged)[0]
    return res.trajectory[fail], cws[fail], start + fail


def collect_failures(code, snr_db, target, nms_cfg=NmsConfig(), seed=0, workers=1, max_frames=10**8):
    """The first ``target`` NMS failures at ``snr_db`` in frame order.

    Frames come from a stream separate from ``run_fer`` so that paths and
    DIA weights are never evaluated on the frames they were built from.
    """
    if target < 1:
        raise ValueError("target: at least one failure must be requested")
    g, _ = derive_generator(code)
    _STATE.update(code=code, generator=g, nms=nms_cfg, seed=seed)
    parts = []
    got = 0

    def jobs():
        start = 0
        while start < max_frames:
            yield (snr_db, start, min(CHUNK, max_frames - start))
            start += CHUNK

    try:
        stream = _map_ordered(_collect_chunk, jobs(), workers)
        for traj, truth, idx in stream:
            if len(idx):
                parts.append(TrajectoryDataset(traj, truth, snr_db, code.source_id, idx))
                got += len(idx)
            if got >= target:
                break
        if hasattr(stream, "close"):
            stream.close()
    finally:
        _STATE.clear()
    if got < target:
        log.warning("only %d of %d failures found within %d frames", got, target, max_frames)
    if not parts:
        return TrajectoryDataset.empty(code.n, nms_cfg.t_max, snr_db, code.source_id)
    data = concat(parts)
    return data.subset(np.arange(min(target, len(data))))


# --------------------------------------------------------------------------
# statistics


@dataclass(eq=False)
class StatsReport:
    """Distributions over one failure dataset.

    ``swaps``: n_sw -> ratio. ``delta``: variant -> ratio array over
    delta = 0..K. ``patterns``: metric -> list of (pattern, count, ratio)
    sorted by count. ``iterations``: CE and BER per iteration, plus the
    DIA point when weights were given.
    """

    frames: int
    swaps: dict
    delta: dict
    patterns: dict
    iterations: dict
    dia_ce: Optional[float] = None
    dia_ber: Optional[float] = None

    @staticmethod
    def cdf(ratios):
        return np.cumsum(ratios)

    @property
    def mean_swaps(self):
        return float(sum(k * v for k, v in self.swaps.items()))

    def top_concentration(self, metric, top=2):
        return float(sum(r for _, _, r in self.patterns[metric][:top]))


def _ratios(values, size):
    h = np.bincount(np.asarray(values, dtype=np.int64), minlength=size).astype(np.float64)
    return h / h.sum()


def mrb_errors_pre_ge(metric, truth, k):
    """Hard-decision errors among the ``k`` largest-|metric| positions."""
    idx = np.argsort(np.abs(metric), kind="stable")[-k:]
    return int(np.count_nonzero((metric[idx] < 0) != truth[idx].astype(bool)))


def classify_dataset(data, code, partition, dia=None):
    """Order pattern and swap count of every failure under the OSD metric."""
    pats, swaps, post = [], [], []
    for f in range(len(data)):
        traj = data.trajectories[f]
        ctx = prepare_context(traj[:, 0], osd_metric(traj, dia), code)
        pats.append(classify_error_pattern(ctx, data.truth[f], partition))
        swaps.append(ctx.n_sw)
        post.append(sum(pats[-1]))
    return pats, swaps, post


def _pattern_table(pats):
    counts = {}
    for p in pats:
        counts[p] = counts.get(p, 0) + 1
    rows = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    total = len(pats)
    return [(p, c, c / total) for p, c in rows]


def compute_stats(data, code, dia=None, partition=None):
    """Swap, delta, order-pattern and per-iteration statistics of ``data``.

    Cross-entropies are in nats per bit with APP values converted to LLRs
    by ``2/sigma^2``; the DIA output is already LLR-scaled by training.
    """
    if len(data) == 0:
        raise ValueError("failures: dataset is empty")
    partition = partition or default_partition(code.k)
    k = code.k
    sigma = ebn0_to_sigma(data.snr_db, code.rate)
    scale = 2.0 / sigma**2
    truth = data.truth
    variants = {"iter0_pre": [], "iterT_pre": []}
    if dia is not None:
        variants["dia_pre"] = []
    dia_out = []
    for f in range(len(data)):
        traj = data.trajectories[f]
        variants["iter0_pre"].append(mrb_errors_pre_ge(traj[:, 0], truth[f], k))
        variants["iterT_pre"].append(mrb_errors_pre_ge(traj[:, -1], truth[f], k))
        if dia is not None:
            out = dia_forward(dia, traj)
            dia_out.append(out)
            variants["dia_pre"].append(mrb_errors_pre_ge(out, truth[f], k))
    pats, swaps, post = classify_dataset(data, code, partition, dia)
    post_key = "dia_post" if dia is not None else "iterT_post"
    variants[post_key] = post
    delta = {name: _ratios(v, k + 1) for name, v in variants.items()}
    sw = np.bincount(swaps)
    swaps_ratio = {i: c / len(swaps) for i, c in enumerate(sw) if c}
    patterns = {("dia" if dia is not None else "iterT"): _pattern_table(pats)}
    if dia is not None:
        patterns["iterT"] = _pattern_table(classify_dataset(data, code, partition, None)[0])
    t_axis = np.arange(data.t + 1)
    ce = np.array([bit_cross_entropy(scale * data.trajectories[:, :, t], truth).mean() for t in t_axis])
    ber = np.array([np.mean((data.trajectories[:, :, t] < 0) != truth.astype(bool)) for t in t_axis])
    rep = StatsReport(len(data), swaps_ratio, delta, patterns, {"iteration": t_axis, "ce": ce, "ber": ber})
    if dia is not None:
        d = np.stack(dia_out)
        rep.dia_ce = float(bit_cross_entropy(d, truth).mean())
        rep.dia_ber = float(np.mean((d < 0) != truth.astype(bool)))
    return rep


def query_path(code, snr_db, n_failures, nms_cfg=NmsConfig(), dia=None, partition=None, ranking="count",
               seed=0, workers=1, pad_weight=None, min_samples=10_000):
    """Collect failures and rank their order patterns into a decoding path."""
    partition = partition or default_partition(code.k)
    data = collect_failures(code, snr_db, n_failures, nms_cfg, seed, workers)
    pats, _, _ = classify_dataset(data, code, partition, dia)
    return build_decoding_path(pats, partition, ranking, pad_weight, min_samples, code_id=code.source_id,
                               query_snr_db=snr_db, metric_source="dia" if dia is not None else "app_final")


# --------------------------------------------------------------------------
# reports


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def read_fer_csv(path):
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            vals = {}
            for f in fields(FerPoint):
                if f.name in row:
                    vals[f.name] = (int if f.type in ("int", int) else float)(row[f.name])
            out.append(FerPoint(**vals))
    return out


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def emit_fer_report(points, out_dir, name="fer", plot=True):
    """``<name>.csv`` (one row per point) and, if asked, ``<name>.png``."""
    out_dir = Path(out_dir)
    csv_path = write_csv(out_dir / f"{name}.csv", CSV_FIELDS,
                         [[getattr(p, c) for c in CSV_FIELDS] for p in points])
    written = [csv_path]
    if plot and points:
        plt = _figure()
        fig, ax = plt.subplots(figsize=(5, 4))
        snr = [p.snr_db for p in points]
        ax.semilogy(snr, [max(p.nms_fer, 1e-12) for p in points], "o--", label="NMS")
        if any(p.fer != p.nms_fer for p in points):
            ax.semilogy(snr, [max(p.fer, 1e-12) for p in points], "s-", label="pipeline")
        ax.set_xlabel("Eb/N0 (dB)")
        ax.set_ylabel("FER")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
        fig.tight_layout()
        fig.savefig(out_dir / f"{name}.png", dpi=120)
        plt.close(fig)
        written.append(out_dir / f"{name}.png")
    return written


def emit_stats_report(rep, out_dir, plot=True):
    """CSV tables for every statistic family, plus one figure per family."""
    out_dir = Path(out_dir)
    written = [write_csv(out_dir / "swaps.csv", ["n_sw", "ratio", "cdf"],
                         [(k, v, c) for (k, v), c in zip(sorted(rep.swaps.items()),
                                                         np.cumsum([rep.swaps[k] for k in sorted(rep.swaps)]))])]
    names = list(rep.delta)
    kmax = len(next(iter(rep.delta.values())))
    rows = [[d] + [x for n in names for x in (rep.delta[n][d], np.cumsum(rep.delta[n])[d])] for d in range(kmax)]
    written.append(write_csv(out_dir / "delta.csv", ["delta"] + [f"{n}_{s}" for n in names for s in ("ratio", "cdf")],
                             rows))
    prow = [(metric, "[" + " ".join(map(str, p)) + "]", c, r) for metric, tab in rep.patterns.items()
            for p, c, r in tab]
    written.append(write_csv(out_dir / "patterns.csv", ["metric", "pattern", "count", "ratio"], prow))
    it = rep.iterations
    irows = [(int(t), ce, b) for t, ce, b in zip(it["iteration"], it["ce"], it["ber"])]
    if rep.dia_ce is not None:
        irows.append(("dia", rep.dia_ce, rep.dia_ber))
    written.append(write_csv(out_dir / "iterations.csv", ["iteration", "cross_entropy", "ber"], irows))
    if not plot:
        return written
    plt = _figure()
    fig, axs = plt.subplots(1, 3, figsize=(13, 3.8))
    ks = sorted(rep.swaps)
    axs[0].bar(ks, [rep.swaps[k] for k in ks])
    axs[0].set_xlabel("n_sw")
    axs[0].set_ylabel("ratio")
    for n in names:
        axs[1].plot(np.arange(kmax), np.cumsum(rep.delta[n]), label=n)
    axs[1].set_xlim(0, min(kmax - 1, 12))
    axs[1].set_xlabel("delta")
    axs[1].set_ylabel("CDF")
    axs[1].legend()
    axs[2].plot(it["iteration"], it["ce"], "o-", label="APP")
    if rep.dia_ce is not None:
        axs[2].axhline(rep.dia_ce, color="C3", ls="--", label="DIA")
    axs[2].set_xlabel("iteration")
    axs[2].set_ylabel("cross-entropy (nats/bit)")
    axs[2].legend()
    for ax in axs:
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_dir / "stats.png", dpi=120)
    plt.close(fig)
    written.append(out_dir / "stats.png")
    return written
