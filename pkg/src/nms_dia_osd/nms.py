"""Flooding normalized min-sum decoding with trajectory recording.

The min-sum decoder consumes raw channel samples: it is positively
homogeneous, so scaling the input by ``2/sigma^2`` only rescales every
message and the trajectory. The tanh-rule BP reference needs proper LLRs.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit

from .channel import ChannelParams, frame_rng, random_frame
from .gf2 import derive_generator

MIN_SUM = 0
TANH = 1
TANH_CLAMP = 30.0


@dataclass(frozen=True)
class NmsConfig:
    t_max: int = 12
    alpha: float = 0.78
    record_trajectory: bool = True
    early_stop: bool = True

    def __post_init__(self):
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


@dataclass(frozen=True, eq=False)
class DecodeRecord:
    converged: bool
    iterations_used: int
    hard_out: np.ndarray
    final_app: np.ndarray
    trajectory: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class BatchDecode:
    """Decoding results for a stack of frames (first axis = frame)."""

    converged: np.ndarray
    iterations: np.ndarray
    hard: np.ndarray
    app: np.ndarray
    trajectory: np.ndarray | None

    def record(self, i):
        traj = None if self.trajectory is None else self.trajectory[i]
        return DecodeRecord(bool(self.converged[i]), int(self.iterations[i]), self.hard[i], self.app[i], traj)


@dataclass(frozen=True, eq=False)
class TannerGraph:
    n: int
    m: int
    edge_var: np.ndarray  # edges grouped by check
    check_ptr: np.ndarray
    var_ptr: np.ndarray
    var_edges: np.ndarray


@lru_cache(maxsize=32)
def tanner_graph(code):
    h = code.h
    if np.any(h.sum(axis=1) < 2):
        raise ValueError("check rows of degree < 2 are not supported by message passing")
    rows, cols = np.nonzero(h)  # row-major, so grouped by check
    check_ptr = np.zeros(code.m + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=code.m), out=check_ptr[1:])
    order = np.argsort(cols, kind="stable")
    var_ptr = np.zeros(code.n + 1, dtype=np.int64)
    np.cumsum(np.bincount(cols, minlength=code.n), out=var_ptr[1:])
    return TannerGraph(code.n, code.m, cols.astype(np.int64), check_ptr, var_ptr, order.astype(np.int64))


@njit(cache=True)
def _decode_batch(y, edge_var, check_ptr, var_ptr, var_edges, alpha, t_max, mode,
                  early_stop, record, converged, iters, hard, app, traj):
    n_frames, n = y.shape
    m = check_ptr.size - 1
    n_edges = edge_var.size
    c2v = np.empty(n_edges)
    v2c = np.empty(n_edges)
    for f in range(n_frames):
        c2v[:] = 0.0
        for v in range(n):
            app[f, v] = y[f, v]
        if record:
            for v in range(n):
                traj[f, v, 0] = y[f, v]
        converged[f] = False
        iters[f] = t_max
        for t in range(1, t_max + 1):
            for e in range(n_edges):
                v2c[e] = app[f, edge_var[e]] - c2v[e]
            for c in range(m):
                lo, hi = check_ptr[c], check_ptr[c + 1]
                if mode == 0:
                    neg = 0
                    min1 = np.inf
                    min2 = np.inf
                    arg = -1
                    for e in range(lo, hi):
                        x = v2c[e]
                        if x < 0:
                            neg += 1
                            x = -x
                        if x < min1:
                            min2 = min1
                            min1 = x
                            arg = e
                        elif x < min2:
                            min2 = x
                    for e in range(lo, hi):
                        s = neg
                        if v2c[e] < 0:
                            s -= 1
                        mag = min2 if e == arg else min1
                        c2v[e] = -alpha * mag if s % 2 else alpha * mag
                else:
                    for e in range(lo, hi):
                        prod = 1.0
                        for e2 in range(lo, hi):
                            if e2 != e:
                                x = v2c[e2]
                                if x > TANH_CLAMP:
                                    x = TANH_CLAMP
                                elif x < -TANH_CLAMP:
                                    x = -TANH_CLAMP
                                prod *= np.tanh(0.5 * x)
                        c2v[e] = 2.0 * np.arctanh(prod)
            for v in range(n):
                acc = y[f, v]
                for i in range(var_ptr[v], var_ptr[v + 1]):
                    acc += c2v[var_edges[i]]
                app[f, v] = acc
                hard[f, v] = 1 if acc < 0 else 0
            if record:
                for v in range(n):
                    traj[f, v, t] = app[f, v]
            ok = True
            for c in range(m):
                par = 0
                for e in range(check_ptr[c], check_ptr[c + 1]):
                    par ^= hard[f, edge_var[e]]
                if par:
                    ok = False
                    break
            if ok:
                converged[f] = True
                if early_stop:
                    iters[f] = t
                    break
        if record and converged[f] and early_stop:
            for t2 in range(iters[f] + 1, t_max + 1):
                for v in range(n):
                    traj[f, v, t2] = np.nan


def _run(y, code, alpha, t_max, mode, early_stop, record):
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    y2 = np.ascontiguousarray(y[None, :] if single else y)
    if y2.shape[1] != code.n:
        raise ValueError(f"expected {code.n} samples per frame, got {y2.shape[1]}")
    if not np.all(np.isfinite(y2)):
        raise ValueError("received samples must be finite")
    g = tanner_graph(code)
    f = y2.shape[0]
    converged = np.zeros(f, dtype=np.bool_)
    iters = np.zeros(f, dtype=np.int64)
    hard = np.zeros((f, code.n), dtype=np.uint8)
    app = np.zeros((f, code.n))
    traj = np.zeros((f, code.n, t_max + 1)) if record else np.zeros((1, 1, 1))
    _decode_batch(y2, g.edge_var, g.check_ptr, g.var_ptr, g.var_edges, float(alpha), int(t_max),
                  mode, bool(early_stop), bool(record), converged, iters, hard, app, traj)
    batch = BatchDecode(converged, iters, hard, app, traj if record else None)
    return batch.record(0) if single else batch


def nms_decode(y, code, cfg=NmsConfig()):
    """Normalized min-sum decoding of one frame (1-D ``y``) or a stack (2-D).

    Check-to-variable messages start at zero; each iteration forms
    variable-to-check messages from the previous a-posteriori values,
    applies the ``alpha``-weighted sign/min rule, and recomputes the
    a-posteriori values. Decoding stops at the first iteration whose hard
    decision satisfies every check unless ``cfg.early_stop`` is off.
    Trajectory column 0 holds ``y``; column ``t`` the a-posteriori values
    after iteration ``t`` (NaN past an early stop).
    """
    return _run(y, code, cfg.alpha, cfg.t_max, MIN_SUM, cfg.early_stop, cfg.record_trajectory)


def bp_decode(l, code, t_max, record_trajectory=False, early_stop=True):
    """Sum-product (tanh rule) reference decoder on channel LLRs."""
    return _run(l, code, 1.0, t_max, TANH, early_stop, record_trajectory)


def check_node_minsum(inputs, alpha):
    """Outgoing min-sum messages for one check given its incoming messages."""
    x = np.asarray(inputs, dtype=np.float64)
    out = np.empty_like(x)
    for i in range(x.size):
        rest = np.delete(x, i)
        sign = -1.0 if np.count_nonzero(rest < 0) % 2 else 1.0
        out[i] = alpha * sign * np.abs(rest).min()
    return out


def bit_cross_entropy(llrs, truth):
    """Per-bit cross-entropy with ``P(bit = 0) = logistic(llr)`` (nats)."""
    s = 1.0 - 2.0 * np.asarray(truth, dtype=np.float64)
    return np.logaddexp(0.0, -s * np.asarray(llrs, dtype=np.float64))


def calibrate_alpha(code, training_snr, n_frames, grid, t_max=12, seed=0):
    """Pick the grid value minimizing mean cross-entropy of final-iteration APPs.

    All candidates decode the same raw received frames with early stopping
    disabled; the APP values go through the logistic function as they are.
    """
    grid = [float(a) for a in grid]
    if not grid:
        raise ValueError("empty alpha grid")
    if any(not 0 < a <= 1 for a in grid):
        raise ValueError("alpha grid values must lie in (0, 1]")
    if len(grid) == 1:
        return grid[0]
    g, _ = derive_generator(code)
    params = ChannelParams(training_snr, code.rate, seed)
    frames = [random_frame(g, params, frame_rng(seed, 0, i)) for i in range(n_frames)]
    y = np.stack([fr.received for fr in frames])
    truth = np.stack([fr.codeword for fr in frames])
    losses = []
    for a in grid:
        res = nms_decode(y, code, NmsConfig(t_max, a, record_trajectory=False, early_stop=False))
        losses.append(bit_cross_entropy(res.app, truth).mean())
    return grid[int(np.argmin(losses))]
