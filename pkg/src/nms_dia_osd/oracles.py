"""Slow, independent reference decoders for small codes.

Nothing here shares code with the fast paths: the codebook is listed
from a generator built by plain dense elimination, and the reference OSD
does its own dense reduction and enumerates supports with itertools.
"""

from __future__ import annotations

import itertools

import numpy as np

MAX_ORACLE_K = 20


def _dense_reduce(h, order):
    """Dense GF(2) reduction of ``h[:, order]`` to ``[I : Q]``.

    Pivot rule: a missing pivot in column ``r`` is replaced by the leftmost
    later column that has a one in rows ``r..m-1``.
    Returns (reduced matrix, column order after swaps, swap partners).
    """
    a = h[:, order].astype(np.uint8).copy()
    order = list(order)
    m, n = a.shape
    partners = []
    for r in range(m):
        rows = np.nonzero(a[r:, r])[0]
        if rows.size == 0:
            for j in range(r + 1, n):
                if a[r:, j].any():
                    a[:, [r, j]] = a[:, [j, r]]
                    order[r], order[j] = order[j], order[r]
                    partners.append(j)
                    break
            else:
                raise ValueError("rank deficient")
            rows = np.nonzero(a[r:, r])[0]
        p = r + rows[0]
        a[[r, p]] = a[[p, r]]
        for i in range(m):
            if i != r and a[i, r]:
                a[i] ^= a[r]
    return a, np.array(order), partners


def dense_generator(h):
    """Generator rows (in natural bit order) for the null space of ``h``."""
    m, n = h.shape
    a, order, _ = _dense_reduce(h, np.arange(n))
    k = n - m
    g_perm = np.concatenate([a[:, m:].T, np.eye(k, dtype=np.uint8)], axis=1)
    g = np.zeros_like(g_perm)
    g[:, order] = g_perm
    return g


class CodebookOracle:
    """Full codebook of a code with ``k <= 20``."""

    def __init__(self, code):
        if code.k > MAX_ORACLE_K:
            raise ValueError(f"codebook oracle limited to k <= {MAX_ORACLE_K}, got {code.k}")
        g = dense_generator(code.h).astype(np.int64)
        msgs = np.array(list(itertools.product((0, 1), repeat=code.k)), dtype=np.int64)
        words = (msgs @ g % 2).astype(np.uint8)
        # lexicographic codeword order makes tie-breaking well defined
        keys = np.lexsort(words.T[::-1])
        self.codewords = words[keys]
        self.code = code

    def ml_decode(self, y):
        """Codeword maximizing the correlation with ``y``; ties go to the
        lexicographically smallest codeword."""
        corr = (1.0 - 2.0 * self.codewords) @ np.asarray(y, dtype=np.float64)
        return self.codewords[int(np.argmax(corr))].copy()


def ml_bruteforce(y, oracle):
    return oracle.ml_decode(y)


def conventional_osd_reference(y, metric, code, p):
    """Textbook order-``p`` OSD.

    Positions are ranked by ``|metric|`` and the anchor is the sign of
    ``metric`` on the MRB. Every MRB support of weight ``<= p`` is tried,
    by weight and then lexicographically; the candidate with the smallest
    ``sum |y_i|`` over bits disagreeing with ``sign(y)`` wins, the first
    one tried on ties.
    """
    y = np.asarray(y, dtype=np.float64)
    metric = np.asarray(metric, dtype=np.float64)
    m, n = code.m, code.n
    if p > n - m:
        raise ValueError("order exceeds MRB size")
    idx = np.argsort(np.abs(metric), kind="stable")
    a, perm, _ = _dense_reduce(code.h, idx)
    q = a[:, m:]
    mrb_order = np.argsort(np.abs(metric[perm[m:]]), kind="stable")
    perm = np.concatenate([perm[:m], perm[m:][mrb_order]])
    q = q[:, mrb_order]
    ys = y[perm]
    hard = (ys < 0).astype(np.uint8)
    base = (metric[perm[m:]] < 0).astype(np.uint8)
    best, best_score = None, np.inf
    for w in range(p + 1):
        for sup in itertools.combinations(range(n - m), w):
            mrb = base.copy()
            mrb[list(sup)] ^= 1
            lrb = (q.astype(np.int64) @ mrb % 2).astype(np.uint8)
            cand = np.concatenate([lrb, mrb])
            score = np.abs(ys)[cand != hard].sum()
            if score < best_score:
                best, best_score = cand, score
    out = np.zeros(n, dtype=np.uint8)
    out[perm] = best
    return out
