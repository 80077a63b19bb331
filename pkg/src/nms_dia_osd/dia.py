"""Decoding-information aggregation: a per-bit 1-D CNN over APP trajectories.

Each bit's ``T+1`` samples (channel value, then one a-posteriori value per
NMS iteration) pass through three valid, stride-1, width-3 convolutions
without bias, get flattened, and are merged by one dense unit with bias.
The output is read as an LLR: positive means bit 0.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

log = logging.getLogger(__name__)

_ACT = {
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "linear": (lambda z: z, lambda z, a: np.ones_like(z)),
}


@dataclass(frozen=True)
class DiaArchitecture:
    t: int
    filters: tuple = (8, 4, 2)
    kernel: int = 3
    activations: tuple = ("tanh", "tanh", "linear")

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(int(f) for f in self.filters))
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(self.filters) != len(self.activations):
            raise ValueError("one activation per convolution stage")
        if any(a not in _ACT for a in self.activations):
            raise ValueError(f"activations must be among {sorted(_ACT)}")
        if self.stage_lengths[-1] < 1:
            raise ValueError(f"trajectory of length {self.input_len} too short for {len(self.filters)} stages")

    @property
    def input_len(self):
        return self.t + 1

    @property
    def stage_lengths(self):
        out, cur = [], self.input_len
        for _ in self.filters:
            cur -= self.kernel - 1
            out.append(cur)
        return out

    @property
    def flat_width(self):
        return self.stage_lengths[-1] * self.filters[-1]

    def conv_shapes(self):
        chans = (1,) + self.filters
        return [(self.kernel, chans[i], chans[i + 1]) for i in range(len(self.filters))]

    @property
    def n_params(self):
        return sum(int(np.prod(s)) for s in self.conv_shapes()) + self.flat_width + 1

    def to_dict(self):
        return {"t": self.t, "filters": list(self.filters), "kernel": self.kernel,
                "activations": list(self.activations)}


@dataclass(eq=False)
class DiaWeights:
    arch: DiaArchitecture
    convs: list
    dense_w: np.ndarray
    dense_b: float = 0.0

    def __post_init__(self):
        self.convs = [np.asarray(w, dtype=np.float64) for w in self.convs]
        self.dense_w = np.asarray(self.dense_w, dtype=np.float64).reshape(-1)
        self.dense_b = float(self.dense_b)
        shapes = self.arch.conv_shapes()
        if len(self.convs) != len(shapes) or any(w.shape != s for w, s in zip(self.convs, shapes)):
            raise ValueError(f"conv weight shapes {[w.shape for w in self.convs]} != {shapes}")
        if self.dense_w.size != self.arch.flat_width:
            raise ValueError(f"dense stage expects {self.arch.flat_width} weights, got {self.dense_w.size}")

    @classmethod
    def zeros(cls, arch, bias=0.0):
        return cls(arch, [np.zeros(s) for s in arch.conv_shapes()], np.zeros(arch.flat_width), bias)

    @classmethod
    def glorot(cls, arch, rng):
        convs = []
        for k, cin, cout in arch.conv_shapes():
            lim = np.sqrt(6.0 / (k * cin + k * cout))
            convs.append(rng.uniform(-lim, lim, size=(k, cin, cout)))
        lim = np.sqrt(6.0 / (arch.flat_width + 1))
        return cls(arch, convs, rng.uniform(-lim, lim, size=arch.flat_width), 0.0)

    def params(self):
        return [*self.convs, self.dense_w, np.array([self.dense_b])]

    def set_params(self, params):
        *convs, dw, db = params
        self.convs = [np.array(c) for c in convs]
        self.dense_w = np.array(dw)
        self.dense_b = float(db[0])

    def all_finite(self):
        return all(np.all(np.isfinite(p)) for p in self.params())

    def to_json(self):
        stages = [w.reshape(-1).tolist() for w in self.convs]
        stages += [self.dense_w.tolist(), [self.dense_b]]
        return json.dumps({"architecture": self.arch.to_dict(), "stages": stages})

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        a = obj["architecture"]
        arch = DiaArchitecture(int(a["t"]), tuple(a["filters"]), int(a.get("kernel", 3)), tuple(a["activations"]))
        stages = obj["stages"]
        shapes = arch.conv_shapes()
        if len(stages) != len(shapes) + 2:
            raise ValueError(f"expected {len(shapes) + 2} stages, found {len(stages)}")
        convs = []
        for vals, shape in zip(stages, shapes):
            if len(vals) != int(np.prod(shape)):
                raise ValueError(f"stage of shape {shape} holds {len(vals)} values")
            convs.append(np.asarray(vals, dtype=np.float64).reshape(shape))
        if len(stages[-1]) != 1:
            raise ValueError("dense bias stage must hold one value")
        return cls(arch, convs, np.asarray(stages[-2]), stages[-1][0])

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    steps: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    holdout: float = 0.1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


@dataclass(eq=False)
class TrainResult:
    weights: DiaWeights
    losses: np.ndarray
    train_index: np.ndarray
    holdout_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def _forward(weights, x):
    arch = weights.arch
    a = x[:, :, None]
    cache = []
    for w, act in zip(weights.convs, arch.activations):
        win = sliding_window_view(a, arch.kernel, axis=1)  # (B, L', Cin, K)
        z = np.einsum("blck,kcf->blf", win, w, optimize=True)
        out = _ACT[act][0](z)
        cache.append((a, win, z, out))
        a = out
    flat = a.reshape(a.shape[0], -1)
    y = flat @ weights.dense_w + weights.dense_b
    return y, (cache, flat)


def dia_forward(weights, trajectories):
    """Refined reliability (LLR-like) for every row of ``trajectories``."""
    x = np.asarray(trajectories, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != weights.arch.input_len:
        raise ValueError(f"expected rows of length {weights.arch.input_len}, got shape {x.shape}")
    if not weights.all_finite():
        raise ValueError("DIA weights contain non-finite values")
    return _forward(weights, x)[0]


def dia_loss(outputs, truth):
    """Summed cross-entropy with ``P(bit = 0) = logistic(output)``."""
    outputs = np.asarray(outputs, dtype=np.float64)
    truth = np.asarray(truth)
    if outputs.shape != truth.shape:
        raise ValueError("outputs and truth differ in shape")
    s = 1.0 - 2.0 * truth
    return float(np.logaddexp(0.0, -s * outputs).sum())


def dia_loss_and_grad(weights, x, truth):
    """Loss and gradients (same order as :meth:`DiaWeights.params`)."""
    x = np.asarray(x, dtype=np.float64)
    out, (cache, flat) = _forward(weights, x)
    s = 1.0 - 2.0 * np.asarray(truth, dtype=np.float64)
    loss = float(np.logaddexp(0.0, -s * out).sum())
    # d/do softplus(-s*o) = -s * logistic(-s*o)
    d_out = -s * 0.5 * (1.0 + np.tanh(-0.5 * s * out))
    g_dw = flat.T @ d_out
    g_db = np.array([d_out.sum()])
    d_a = np.outer(d_out, weights.dense_w).reshape(cache[-1][3].shape)
    arch = weights.arch
    grads = [None] * len(weights.convs)
    for i in range(len(weights.convs) - 1, -1, -1):
        a_in, win, z, a_out = cache[i]
        d_z = d_a * _ACT[arch.activations[i]][1](z, a_out)
        grads[i] = np.einsum("blck,blf->kcf", win, d_z, optimize=True)
        if i:
            w = weights.convs[i]
            d_in = np.zeros_like(a_in)
            length = d_z.shape[1]
            for k in range(arch.kernel):
                d_in[:, k:k + length, :] += d_z @ w[k].T
            d_a = d_in
    return loss, grads + [g_dw, g_db]


def split_frames(n_frames, holdout, seed):
    """Deterministic frame-level train/held-out split."""
    idx = np.random.default_rng(seed).permutation(n_frames)
    n_hold = int(round(holdout * n_frames)) if n_frames > 1 else 0
    return np.sort(idx[n_hold:]), np.sort(idx[:n_hold])


def dia_train(dataset, arch=None, cfg=TrainConfig()):
    """Fit DIA weights with Adam, one failure frame (``n`` rows) per step.

    Frames are visited in a seeded shuffled order, reshuffled each pass.
    The held-out fraction ``cfg.holdout`` of frames is never touched.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    arch = arch or DiaArchitecture(dataset.t)
    if arch.t != dataset.t:
        raise ValueError(f"architecture expects T={arch.t}, dataset has T={dataset.t}")
    rng = np.random.default_rng(cfg.seed)
    train_idx, hold_idx = split_frames(len(dataset), cfg.holdout, cfg.seed)
    if train_idx.size == 0:
        train_idx, hold_idx = hold_idx, train_idx
    weights = DiaWeights.glorot(arch, rng)
    params = weights.params()
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    losses = np.empty(cfg.steps)
    order = rng.permutation(train_idx)
    pos = 0
    for step in range(cfg.steps):
        if pos == order.size:
            order = rng.permutation(train_idx)
            pos = 0
        f = order[pos]
        pos += 1
        loss, grads = dia_loss_and_grad(weights, dataset.trajectories[f], dataset.truth[f])
        losses[step] = loss
        b1t = 1.0 - cfg.beta1 ** (step + 1)
        b2t = 1.0 - cfg.beta2 ** (step + 1)
        for p, g, a, b in zip(params, grads, m1, m2):
            a *= cfg.beta1
            a += (1.0 - cfg.beta1) * g
            b *= cfg.beta2
            b += (1.0 - cfg.beta2) * g * g
            p -= cfg.learning_rate * (a / b1t) / (np.sqrt(b / b2t) + cfg.epsilon)
        weights.set_params(params)
        params = weights.params()
    log.info("DIA training: first-100 mean loss %.3f, last-100 mean loss %.3f",
             losses[:100].mean(), losses[-100:].mean())
    return TrainResult(weights, losses, train_idx, hold_idx)
