"""Parity-check matrices used by the experiments.

The CCSDS (128,64) matrix is rebuilt from the circulant exponents of the
CCSDS short-block telecommand code. The (64,32) matrix shipped here is a
progressive-edge-growth (3,6)-regular construction.
"""

from __future__ import annotations

from importlib import resources

import numpy as np

from .gf2 import ParityCheckCode, gf2_rank, load_alist, parse_alist

# block exponents; None = zero block, "I+k" = identity plus shift k
_CCSDS_128_64 = [
    ["I+7", 2, 14, 6, None, 0, 13, 0],
    [6, "I+15", 0, 1, 0, None, 0, 7],
    [4, 1, "I+15", 14, 11, 0, None, 3],
    [0, 1, 9, "I+13", 14, 1, 0, None],
]


def circulant(size, shift):
    """``size x size`` identity cyclically shifted right by ``shift``."""
    p = np.zeros((size, size), dtype=np.uint8)
    p[np.arange(size), (np.arange(size) + shift) % size] = 1
    return p


def ccsds_128_64():
    size = 16
    blocks = []
    for row in _CCSDS_128_64:
        out = []
        for e in row:
            if e is None:
                out.append(np.zeros((size, size), dtype=np.uint8))
            elif isinstance(e, str):
                out.append(np.eye(size, dtype=np.uint8) ^ circulant(size, int(e[2:])))
            else:
                out.append(circulant(size, e))
        blocks.append(out)
    return ParityCheckCode(np.block(blocks), source_id="ccsds_128_64")


def peg_code(n, m, col_degree, source_id=None):
    """Progressive edge growth with deterministic lowest-index tie breaks.

    Each new edge of variable ``j`` goes to a check node outside the
    current depth-limited neighbourhood of ``j`` (or, if every check is
    reachable, one first reached at the deepest level), preferring the
    check with the lowest current degree.
    """
    h = np.zeros((m, n), dtype=np.uint8)
    deg = np.zeros(m, dtype=np.int64)
    for j in range(n):
        for e in range(col_degree):
            if e == 0:
                cand = np.flatnonzero(deg == deg.min())
                c = int(cand[0])
            else:
                reached = np.zeros(m, dtype=bool)
                frontier_c = set(np.flatnonzero(h[:, j]).tolist())
                for c0 in frontier_c:
                    reached[c0] = True
                last_new = np.array(sorted(frontier_c))
                while True:
                    vars_ = set(np.flatnonzero(h[list(frontier_c)].any(axis=0)).tolist()) if frontier_c else set()
                    new_c = set()
                    for v in vars_:
                        for c1 in np.flatnonzero(h[:, v]):
                            if not reached[c1]:
                                new_c.add(int(c1))
                    if not new_c:
                        break
                    if reached.sum() + len(new_c) == m:
                        # next level would cover everything: pick among unreached
                        break
                    for c1 in new_c:
                        reached[c1] = True
                    last_new = np.array(sorted(new_c))
                    frontier_c = new_c
                pool = np.flatnonzero(~reached)
                if pool.size == 0:
                    pool = last_new
                pool = pool[h[pool, j] == 0]
                c = int(pool[np.argmin(deg[pool])])
            h[c, j] = 1
            deg[c] += 1
    return ParityCheckCode(h, source_id=source_id or f"peg_{n}_{n - m}")


def random_code(n, m, rng, min_row_degree=2, max_tries=1000):
    """Random full-rank H with every row of degree >= ``min_row_degree``."""
    for _ in range(max_tries):
        h = (rng.random((m, n)) < 0.4).astype(np.uint8)
        if h.sum(axis=1).min() < min_row_degree or h.sum(axis=0).min() < 1:
            continue
        if gf2_rank(h) == m:
            return ParityCheckCode(h, source_id=f"random_{n}_{n - m}")
    raise RuntimeError("could not draw a full-rank matrix")


BUNDLED = {
    "ccsds_128_64": "ccsds_128_64.alist",
    "peg_64_32": "peg_64_32.alist",
    "tiny16": "tiny16.alist",
}


def bundled_code(name):
    """Load one of the alist files shipped with the package."""
    try:
        fname = BUNDLED[name]
    except KeyError:
        raise KeyError(f"unknown bundled code {name!r}; have {sorted(BUNDLED)}") from None
    text = resources.files("nms_dia_osd.data").joinpath(fname).read_text()
    return parse_alist(text, source_id=name)


def load_code(ref):
    """Resolve a bundled code name or an alist path."""
    if ref in BUNDLED:
        return bundled_code(ref)
    return load_alist(ref)
