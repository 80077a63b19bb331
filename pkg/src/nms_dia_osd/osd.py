"""Decoding-path-guided ordered statistics decoding.

Positions are sorted by ascending reliability, H is reduced to
``[I : q2]`` on that order, and the ``K`` most reliable basis (MRB) bits
at the tail are re-sorted so that the least reliable MRB bits sit at the
left. The MRB is cut into segments; an *order pattern* gives the number of
flipped bits per segment and labels the block of test error patterns
(TEPs) with exactly those segment weights. A *decoding path* is a ranked
list of order patterns learned from past failures; decoding walks it,
re-encodes every TEP and keeps the candidate closest to the channel hard
decisions in reliability-weighted Hamming distance.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from numba import njit

from .gf2 import Permutation, encode_lrb, gauss_systematic, n_words, pack_rows


# --------------------------------------------------------------------------
# partitions and patterns


@dataclass(frozen=True)
class MrbPartition:
    """Segment widths of the MRB, least reliable segment first."""

    widths: tuple

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if not widths or min(widths) < 1:
            raise ValueError(f"partition widths must be positive, got {widths}")
        object.__setattr__(self, "widths", widths)

    @property
    def k(self):
        return sum(self.widths)

    @property
    def q(self):
        return len(self.widths)

    @property
    def starts(self):
        return tuple(itertools.accumulate((0,) + self.widths[:-1]))

    def segment_of(self, j):
        return int(np.searchsorted(np.cumsum(self.widths), j, side="right"))

    @classmethod
    def parse(cls, text):
        return cls(tuple(int(x) for x in str(text).split(",")))


def default_partition(k):
    """``(10, 20, k - 30)`` when ``k > 30``, otherwise roughly ``k * (1/6, 1/3, 1/2)``."""
    if k > 30:
        return MrbPartition((10, 20, k - 30))
    a = max(1, k // 6)
    b = max(1, k // 3)
    if k - a - b < 1:
        return MrbPartition((k,))
    return MrbPartition((a, b, k - a - b))


def check_pattern(pattern, partition):
    pattern = tuple(int(x) for x in pattern)
    if len(pattern) != partition.q:
        raise ValueError(f"pattern {pattern} has {len(pattern)} segments, partition has {partition.q}")
    for lam, w in zip(pattern, partition.widths):
        if lam < 0 or lam > w:
            raise ValueError(f"pattern {pattern} exceeds segment widths {partition.widths}")
    return pattern


def tep_count(pattern, partition):
    """Number of TEPs carrying exactly the given per-segment weights."""
    pattern = check_pattern(pattern, partition)
    return math.prod(math.comb(w, lam) for lam, w in zip(pattern, partition.widths))


@lru_cache(maxsize=256)
def _colex_combinations(width, weight):
    combos = sorted(itertools.combinations(range(width), weight), key=lambda c: c[::-1])
    return np.array(combos, dtype=np.int64).reshape(len(combos), weight)


def tep_supports(pattern, partition):
    """MRB indices flipped by each TEP of ``pattern``, one row per TEP.

    Inside a segment, supports run in colexicographic order; across
    segments the leftmost (least reliable) segment varies fastest.
    """
    pattern = check_pattern(pattern, partition)
    per_seg = [(_colex_combinations(w, lam) + s) for lam, w, s in zip(pattern, partition.widths, partition.starts)]
    counts = [len(c) for c in per_seg]
    total = math.prod(counts)
    weight = sum(pattern)
    out = np.empty((total, weight), dtype=np.int64)
    col = 0
    stride = 1
    for combos, cnt in zip(per_seg, counts):
        lam = combos.shape[1]
        if lam:
            idx = (np.arange(total) // stride) % cnt
            out[:, col:col + lam] = combos[idx]
        col += lam
        stride *= cnt
    return out


def enumerate_teps(pattern, partition):
    """All TEPs of ``pattern`` as ``K``-bit rows, in traversal order."""
    sup = tep_supports(pattern, partition)
    teps = np.zeros((sup.shape[0], partition.k), dtype=np.uint8)
    if sup.shape[1]:
        np.put_along_axis(teps, sup, 1, axis=1)
    return teps


# --------------------------------------------------------------------------
# decoding paths


@dataclass(frozen=True)
class PathConstraints:
    """Filters applied while walking a path.

    ``l_pt`` caps the number of *surviving* patterns, matching the
    ``(lambda_m, l_pt)`` labels such as ``(1, 4)`` or ``(3, 12)``.
    """

    l_pt: Optional[int] = None
    caps: Optional[tuple] = None
    lambda_m: Optional[int] = None
    phi: Optional[Callable] = None

    def __post_init__(self):
        if self.caps is not None:
            object.__setattr__(self, "caps", tuple(int(c) for c in self.caps))
            if min(self.caps) < 0:
                raise ValueError("segment caps must be >= 0")
        if self.lambda_m is not None and self.lambda_m < 0:
            raise ValueError("lambda_m must be >= 0")
        if self.l_pt is not None and self.l_pt < 0:
            raise ValueError("l_pt must be >= 0")

    def allows(self, pattern):
        if self.lambda_m is not None and sum(pattern) > self.lambda_m:
            return False
        if self.caps is not None and any(lam > cap for lam, cap in zip(pattern, self.caps)):
            return False
        if self.phi is not None and not self.phi(pattern):
            return False
        return True


@dataclass(frozen=True)
class PathEntry:
    pattern: tuple
    count: int
    tep_count: int


@dataclass(eq=False)
class DecodingPath:
    entries: list
    partition: MrbPartition
    ranking: str = "count"
    code_id: str = ""
    query_snr_db: float = float("nan")
    metric_source: str = ""
    sample_count: int = 0
    _compiled: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.entries)

    @property
    def patterns(self):
        return [e.pattern for e in self.entries]

    def surviving(self, constraints=PathConstraints()):
        out = []
        for e in self.entries:
            if constraints.l_pt is not None and len(out) >= constraints.l_pt:
                break
            if constraints.allows(e.pattern):
                out.append(e)
        return out

    def total_teps(self, constraints=PathConstraints()):
        return sum(e.tep_count for e in self.surviving(constraints))

    def compiled(self, constraints):
        key = constraints
        if key not in self._compiled:
            entries = self.surviving(constraints)
            sups = [tep_supports(e.pattern, self.partition) for e in entries]
            wmax = max((s.shape[1] for s in sups), default=0)
            total = sum(s.shape[0] for s in sups)
            arr = np.full((total, max(wmax, 1)), -1, dtype=np.int64)
            pid = np.empty(total, dtype=np.int64)
            row = 0
            for i, s in enumerate(sups):
                arr[row:row + s.shape[0], :s.shape[1]] = s
                pid[row:row + s.shape[0]] = i
                row += s.shape[0]
            self._compiled[key] = ([e.pattern for e in entries], arr, pid)
        return self._compiled[key]

    def to_dict(self):
        return {
            "code_id": self.code_id,
            "metric_source": self.metric_source,
            "query_snr_db": self.query_snr_db,
            "sample_count": self.sample_count,
            "partition": list(self.partition.widths),
            "ranking": self.ranking,
            "entries": [{"pattern": list(e.pattern), "count": e.count, "tep_count": e.tep_count}
                        for e in self.entries],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, obj):
        part = MrbPartition(tuple(obj["partition"]))
        entries = []
        for e in obj["entries"]:
            pat = check_pattern(e["pattern"], part)
            tc = tep_count(pat, part)
            if int(e.get("tep_count", tc)) != tc:
                raise ValueError(f"entry {pat}: stored tep_count {e['tep_count']} != {tc}")
            entries.append(PathEntry(pat, int(e["count"]), tc))
        return cls(entries, part, obj.get("ranking", "count"), obj.get("code_id", ""),
                   float(obj.get("query_snr_db", float("nan"))), obj.get("metric_source", ""),
                   int(obj.get("sample_count", 0)))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())


def patterns_up_to(weight, partition):
    """All patterns of total weight ``<= weight``, by weight, then leftmost segments first."""
    out = []
    for total in range(weight + 1):
        level = [p for p in itertools.product(*(range(min(w, total) + 1) for w in partition.widths))
                 if sum(p) == total]
        out += sorted(level, reverse=True)
    return out


def _rank_key(ranking):
    if ranking == "count":
        return lambda e: (-e.count, e.tep_count, e.pattern)
    if ranking == "hit_rate":
        return lambda e: (-e.count / e.tep_count, e.tep_count, e.pattern)
    raise ValueError(f"unknown ranking rule {ranking!r}")


def build_decoding_path(patterns, partition, ranking="count", pad_weight=None, min_samples=10_000,
                        **provenance):
    """Rank order patterns by how often they trapped the true error pattern.

    Parameters
    ----------
    patterns : iterable of tuple
        One classified order pattern per query-phase failure.
    partition : MrbPartition
    ranking : {"count", "hit_rate"}
        ``hit_rate`` divides each count by the pattern's TEP count.
    pad_weight : int, optional
        Also list every never-observed pattern up to this total weight,
        with count zero, so trimmed paths can reach them.
    min_samples : int
        Fewer failures than this only triggers a warning.
    """
    counts = {}
    n = 0
    for p in patterns:
        p = check_pattern(p, partition)
        counts[p] = counts.get(p, 0) + 1
        n += 1
    if n == 0:
        raise ValueError("empty query dataset")
    if n < min_samples:
        warnings.warn(f"decoding path built from {n} failures (< {min_samples}); ranking may be unstable",
                      stacklevel=2)
    if pad_weight is not None:
        for p in patterns_up_to(pad_weight, partition):
            counts.setdefault(p, 0)
    entries = [PathEntry(p, c, tep_count(p, partition)) for p, c in counts.items()]
    entries.sort(key=_rank_key(ranking))
    return DecodingPath(entries, partition, ranking, sample_count=n, **provenance)


def nominal_path(p, partition):
    """Conventional order-``p`` OSD expressed as a path (zero counts)."""
    if p > partition.k:
        raise ValueError("order exceeds MRB size")
    entries = [PathEntry(pat, 0, tep_count(pat, partition)) for pat in patterns_up_to(p, partition)]
    return DecodingPath(entries, partition, "nominal", metric_source="nominal")


# --------------------------------------------------------------------------
# per-frame context


@dataclass(frozen=True, eq=False)
class OsdContext:
    perm: Permutation
    q2: np.ndarray
    metric_sorted: np.ndarray
    y_sorted: np.ndarray
    hard_y: np.ndarray
    anchor: np.ndarray
    n_sw: int

    @property
    def m(self):
        return self.q2.shape[0]

    @property
    def k(self):
        return self.q2.shape[1]

    @property
    def n(self):
        return self.m + self.k

    def aux_positions(self, psi2):
        """The ``psi2`` LRB positions with the largest reliability metric."""
        if psi2 > self.m:
            raise ValueError(f"psi2={psi2} exceeds the {self.m} LRB positions")
        mag = np.abs(self.metric_sorted[:self.m])
        return np.sort(np.argsort(-mag, kind="stable")[:psi2])

    def codeword(self, mrb_bits):
        """Permuted-order codeword with the given MRB part."""
        mrb_bits = np.asarray(mrb_bits, dtype=np.uint8)
        return np.concatenate([encode_lrb(self.q2, mrb_bits), mrb_bits])


def prepare_context(y, metric, code):
    """Sort by ``|metric|``, reduce H, and re-sort the MRB.

    The MRB re-sort restores ascending ``|metric|`` inside the MRB after
    the elimination swapped columns in; ``q2`` columns move along with it.
    """
    y = np.asarray(y, dtype=np.float64)
    metric = np.asarray(metric, dtype=np.float64)
    if y.shape != (code.n,) or metric.shape != (code.n,):
        raise ValueError(f"y and metric must both have length {code.n}")
    order = Permutation(np.argsort(np.abs(metric), kind="stable"))
    sf = gauss_systematic(code, order)
    m = code.m
    fwd = np.array(sf.perm.forward)
    resort = np.argsort(np.abs(metric[fwd[m:]]), kind="stable")
    fwd[m:] = fwd[m:][resort]
    q2 = np.ascontiguousarray(sf.q2[:, resort])
    perm = Permutation(fwd)
    y_s = y[fwd]
    met_s = metric[fwd]
    return OsdContext(perm=perm, q2=q2, metric_sorted=met_s, y_sorted=y_s,
                      hard_y=(y_s < 0).astype(np.uint8), anchor=(met_s[m:] < 0).astype(np.uint8),
                      n_sw=sf.n_sw)


def classify_error_pattern(ctx, truth, partition):
    """Per-segment weights of the MRB error between anchor and ``truth``."""
    t = ctx.perm.apply(np.asarray(truth, dtype=np.uint8))
    e = ctx.anchor ^ t[ctx.m:]
    return tuple(int(e[s:s + w].sum()) for s, w in zip(partition.starts, partition.widths))


def weighted_discrepancy(ctx, candidate):
    """Sum of ``|y|`` over permuted positions where ``candidate`` disagrees with the channel."""
    candidate = np.asarray(candidate, dtype=np.uint8)
    return float(np.abs(ctx.y_sorted)[candidate != ctx.hard_y].sum())


def auxiliary_check(ctx, candidate_lrb, lambda_m):
    """True iff the candidate differs from the channel hard decisions in at
    most ``lambda_m`` of the ``3 * lambda_m`` most reliable LRB positions."""
    pos = ctx.aux_positions(3 * lambda_m)
    cand = np.asarray(candidate_lrb, dtype=np.uint8)
    return int(np.count_nonzero(cand[pos] != ctx.hard_y[pos])) <= lambda_m


# --------------------------------------------------------------------------
# scoring kernel


@njit(cache=True)
def _popcount(x):
    x = x - ((x >> np.uint64(1)) & np.uint64(0x5555555555555555))
    x = (x & np.uint64(0x3333333333333333)) + ((x >> np.uint64(2)) & np.uint64(0x3333333333333333))
    x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return (x * np.uint64(0x0101010101010101)) >> np.uint64(56)


@njit(cache=True)
def _score_teps(supports, qcols, base, tabs, mrb_base, delta, aux_mask, aux_thr, scores):
    n_c, wmax = supports.shape
    nw = base.size
    acc = np.empty(nw, dtype=np.uint64)
    filtered = 0
    for c in range(n_c):
        s = mrb_base
        for w in range(nw):
            acc[w] = base[w]
        for i in range(wmax):
            j = supports[c, i]
            if j < 0:
                break
            s += delta[j]
            for w in range(nw):
                acc[w] ^= qcols[j, w]
        if aux_thr >= 0:
            d = 0
            for w in range(nw):
                d += _popcount(acc[w] & aux_mask[w])
            if d > aux_thr:
                scores[c] = np.inf
                filtered += 1
                continue
        for w in range(nw):
            x = acc[w]
            for b in range(8):
                s += tabs[w * 8 + b, (x >> np.uint64(8 * b)) & np.uint64(255)]
        scores[c] = s
    return filtered


_BYTE_BITS = ((np.arange(256)[:, None] >> np.arange(8)) & 1).astype(np.float64)


def _lrb_tables(weights):
    m = weights.size
    padded = np.zeros(n_words(m) * 64)
    padded[:m] = weights
    return np.ascontiguousarray((_BYTE_BITS @ padded.reshape(-1, 8).T).T)


@dataclass(frozen=True, eq=False)
class OsdOutcome:
    estimate: np.ndarray
    best_score: float
    candidates_scored: int
    candidates_filtered: int
    matched_pattern: Optional[tuple]
    fallback: bool = False


def osd_decode(ctx, path, constraints=PathConstraints(), aux_on=False, lambda_m=None):
    """Walk ``path`` under ``constraints`` and return the best re-encoded candidate.

    With ``aux_on`` every candidate must pass the auxiliary check with
    ``lambda_m`` (defaults to ``constraints.lambda_m``, else the largest
    surviving pattern weight). Ties in score keep the earlier candidate.
    If the check discards every candidate, the anchor codeword is
    returned with ``fallback=True``.
    """
    if path.partition.k != ctx.k:
        raise ValueError(f"path partition covers {path.partition.k} MRB bits, context has {ctx.k}")
    patterns, supports, pid = path.compiled(constraints)
    m, k = ctx.m, ctx.k
    abs_y = np.abs(ctx.y_sorted)
    hard_mrb = ctx.hard_y[m:]
    qcols = pack_rows(np.ascontiguousarray(ctx.q2.T))
    c1_anchor = encode_lrb(ctx.q2, ctx.anchor)
    base = pack_rows((c1_anchor ^ ctx.hard_y[:m])[None, :])[0]
    tabs = _lrb_tables(abs_y[:m])
    disagree = ctx.anchor != hard_mrb
    mrb_base = float(abs_y[m:][disagree].sum())
    delta = np.where(disagree, -abs_y[m:], abs_y[m:])
    if aux_on:
        if lambda_m is None:
            lambda_m = constraints.lambda_m if constraints.lambda_m is not None else max(map(sum, patterns), default=0)
        mask_bits = np.zeros(m, dtype=np.uint8)
        mask_bits[ctx.aux_positions(3 * lambda_m)] = 1
        aux_mask = pack_rows(mask_bits[None, :])[0]
        aux_thr = int(lambda_m)
    else:
        aux_mask = np.zeros_like(base)
        aux_thr = -1
    scores = np.empty(supports.shape[0])
    filtered = int(_score_teps(supports, qcols, base, tabs, mrb_base, delta, aux_mask, aux_thr, scores))
    scored = supports.shape[0] - filtered
    if scored == 0:
        cand = ctx.codeword(ctx.anchor)
        return OsdOutcome(ctx.perm.revert(cand), weighted_discrepancy(ctx, cand), 0, filtered, None, True)
    best = int(np.argmin(scores))
    mrb = ctx.anchor.copy()
    sup = supports[best]
    mrb[sup[sup >= 0]] ^= 1
    cand = ctx.codeword(mrb)
    return OsdOutcome(ctx.perm.revert(cand), float(scores[best]), scored, filtered, patterns[pid[best]])
