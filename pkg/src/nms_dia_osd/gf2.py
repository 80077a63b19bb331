"""Binary linear algebra for parity-check codes.

Bit matrices are packed 64 columns per ``uint64`` word (bit ``j`` of a row
lives in word ``j // 64`` at position ``j % 64``). Row XOR is the only row
operation Gaussian elimination needs over GF(2).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from numba import njit


class AlistError(ValueError):
    """Base class for malformed alist input."""


class AlistHeaderError(AlistError):
    pass


class AlistIndexError(AlistError):
    pass


class AlistConsistencyError(AlistError):
    pass


class RankDeficiencyError(ValueError):
    """Raised when H does not have full row rank."""


# --------------------------------------------------------------------------
# packing helpers


def n_words(n_bits):
    return (n_bits + 63) // 64


def pack_rows(mat):
    """Pack a 2-D 0/1 array row-wise into ``uint64`` words (little-endian bits)."""
    mat = np.ascontiguousarray(mat, dtype=np.uint8)
    rows, cols = mat.shape
    w = n_words(cols)
    padded = np.zeros((rows, w * 64), dtype=np.uint8)
    padded[:, :cols] = mat
    return np.packbits(padded, axis=1, bitorder="little").view("<u8").astype(np.uint64)


def unpack_rows(packed, n_cols):
    packed = np.ascontiguousarray(packed, dtype="<u8")
    bits = np.unpackbits(packed.view(np.uint8), axis=1, bitorder="little")
    return bits[:, :n_cols].astype(np.uint8)


def pack_vector(bits):
    return pack_rows(np.asarray(bits, dtype=np.uint8)[None, :])[0]


def unpack_vector(words, n_bits):
    return unpack_rows(np.asarray(words)[None, :], n_bits)[0]


# --------------------------------------------------------------------------
# domain types


@dataclass(frozen=True, eq=False)
class ParityCheckCode:
    """Binary parity-check code given by a dense ``m x n`` matrix ``h``."""

    h: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        h = np.array(self.h, dtype=np.uint8, copy=True)
        if h.ndim != 2:
            raise ValueError("parity-check matrix must be 2-D")
        if np.any(h > 1):
            raise ValueError("parity-check matrix must be binary")
        m, n = h.shape
        if not 0 < m < n:
            raise ValueError(f"need 0 < m < n, got m={m}, n={n}")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @property
    def n(self):
        return self.h.shape[1]

    @property
    def m(self):
        return self.h.shape[0]

    @property
    def k(self):
        return self.n - self.m

    @property
    def rate(self):
        return self.k / self.n

    @cached_property
    def col_degrees(self):
        return self.h.sum(axis=0).astype(np.int64)

    @cached_property
    def row_degrees(self):
        return self.h.sum(axis=1).astype(np.int64)

    @cached_property
    def packed(self):
        return pack_rows(self.h)

    @cached_property
    def fingerprint(self):
        """Short content hash of ``h``, used to key cached derived data."""
        digest = hashlib.sha256()
        digest.update(np.asarray(self.h.shape, dtype=np.int64).tobytes())
        digest.update(np.packbits(self.h).tobytes())
        return digest.hexdigest()[:16]

    def __repr__(self):
        return f"ParityCheckCode(n={self.n}, m={self.m}, source_id={self.source_id!r})"


@dataclass(frozen=True, eq=False)
class Permutation:
    """Position map: ``forward[i]`` is the source index placed at position ``i``."""

    forward: np.ndarray

    def __post_init__(self):
        fwd = np.array(self.forward, dtype=np.int64, copy=True)
        if fwd.ndim != 1 or not np.array_equal(np.sort(fwd), np.arange(fwd.size)):
            raise ValueError("forward must be a permutation of range(n)")
        fwd.setflags(write=False)
        object.__setattr__(self, "forward", fwd)

    @classmethod
    def identity(cls, n):
        return cls(np.arange(n))

    @cached_property
    def inverse(self):
        inv = np.empty_like(self.forward)
        inv[self.forward] = np.arange(self.forward.size)
        inv.setflags(write=False)
        return inv

    def __len__(self):
        return self.forward.size

    def apply(self, x, axis=-1):
        """Reorder ``x`` into permuted positions."""
        return np.take(x, self.forward, axis=axis)

    def revert(self, x, axis=-1):
        """Map permuted-order data back to the original positions."""
        return np.take(x, self.inverse, axis=axis)

    def then(self, other):
        """Compose: first ``self``, then ``other`` acting on permuted positions."""
        return Permutation(self.forward[other.forward])


@dataclass(frozen=True, eq=False)
class SystematicForm:
    """Result of reducing a column-permuted H to ``[I : q2]``."""

    q2: np.ndarray
    perm: Permutation
    n_sw: int
    swaps: tuple = field(default=())

    @property
    def m(self):
        return self.q2.shape[0]

    @property
    def k(self):
        return self.q2.shape[1]

    def matrix(self):
        """The full systematic matrix ``[I : q2]``."""
        return np.hstack([np.eye(self.m, dtype=np.uint8), self.q2])


# --------------------------------------------------------------------------
# alist I/O


def _int_tokens(line, lineno):
    try:
        return [int(tok) for tok in line.split()]
    except ValueError as exc:
        raise AlistHeaderError(f"line {lineno}: non-integer token") from exc


def parse_alist(text, source_id=""):
    """Parse MacKay alist text into a :class:`ParityCheckCode`.

    Column lists come first (one line per variable node), then row lists.
    Zero padding is accepted and ignored. Check rows of degree one are
    rejected, since message-passing decoders cannot form extrinsic
    messages through them.
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 4:
        raise AlistHeaderError("alist needs at least four non-empty lines")
    head = _int_tokens(lines[0], 1)
    if len(head) != 2 or min(head) <= 0:
        raise AlistHeaderError("line 1 must hold 'n m' with positive values")
    n, m = head
    maxes = _int_tokens(lines[1], 2)
    if len(maxes) != 2:
        raise AlistHeaderError("line 2 must hold the two maximum degrees")
    col_deg = _int_tokens(lines[2], 3)
    row_deg = _int_tokens(lines[3], 4)
    if len(col_deg) != n or len(row_deg) != m:
        raise AlistHeaderError("degree lists do not match n and m")
    if max(col_deg) != maxes[0] or max(row_deg) != maxes[1]:
        raise AlistHeaderError("maximum degrees disagree with degree lists")
    if len(lines) < 4 + n:
        raise AlistHeaderError("missing column neighbour lists")

    h = np.zeros((m, n), dtype=np.uint8)
    for j in range(n):
        lineno = 5 + j
        idx = [v for v in _int_tokens(lines[4 + j], lineno) if v != 0]
        if len(idx) != col_deg[j]:
            raise AlistConsistencyError(f"line {lineno}: column {j + 1} lists {len(idx)} rows, degree says {col_deg[j]}")
        for v in idx:
            if not 1 <= v <= m:
                raise AlistIndexError(f"line {lineno}: row index {v} outside 1..{m}")
            h[v - 1, j] = 1

    if len(lines) >= 4 + n + m:
        h_rows = np.zeros_like(h)
        for i in range(m):
            lineno = 5 + n + i
            idx = [v for v in _int_tokens(lines[4 + n + i], lineno) if v != 0]
            if len(idx) != row_deg[i]:
                raise AlistConsistencyError(f"line {lineno}: row {i + 1} lists {len(idx)} columns, degree says {row_deg[i]}")
            for v in idx:
                if not 1 <= v <= n:
                    raise AlistIndexError(f"line {lineno}: column index {v} outside 1..{n}")
                h_rows[i, v - 1] = 1
        if not np.array_equal(h, h_rows):
            raise AlistConsistencyError("column and row lists describe different matrices")
    elif len(lines) != 4 + n:
        raise AlistConsistencyError("row neighbour lists incomplete")

    if not np.array_equal(h.sum(axis=1), row_deg):
        raise AlistConsistencyError("row degrees disagree with column lists")
    if np.any(h.sum(axis=1) == 1):
        bad = int(np.flatnonzero(h.sum(axis=1) == 1)[0]) + 1
        raise AlistConsistencyError(f"check row {bad} has degree one")
    return ParityCheckCode(h, source_id=source_id)


def write_alist(code):
    """Serialize ``code`` as alist text with zero-padded neighbour lists."""
    h = code.h
    m, n = h.shape
    cd, rd = code.col_degrees, code.row_degrees
    out = [f"{n} {m}", f"{cd.max()} {rd.max()}", " ".join(map(str, cd)), " ".join(map(str, rd))]
    for j in range(n):
        idx = list(np.flatnonzero(h[:, j]) + 1) + [0] * int(cd.max() - cd[j])
        out.append(" ".join(map(str, idx)))
    for i in range(m):
        idx = list(np.flatnonzero(h[i]) + 1) + [0] * int(rd.max() - rd[i])
        out.append(" ".join(map(str, idx)))
    return "\n".join(out) + "\n"


def load_alist(path, source_id=None):
    path = Path(path)
    return parse_alist(path.read_text(), source_id=source_id or path.stem)


# --------------------------------------------------------------------------
# Gaussian elimination


@njit(cache=True)
def _bit(row, j):
    return (row[j >> 6] >> np.uint64(j & 63)) & np.uint64(1)


@njit(cache=True)
def _swap_cols(a, c1, c2):
    w1, b1 = c1 >> 6, np.uint64(c1 & 63)
    w2, b2 = c2 >> 6, np.uint64(c2 & 63)
    one = np.uint64(1)
    for i in range(a.shape[0]):
        x = (a[i, w1] >> b1) & one
        y = (a[i, w2] >> b2) & one
        if x != y:
            a[i, w1] ^= one << b1
            a[i, w2] ^= one << b2


@njit(cache=True)
def _eliminate(a, m, n, swaps):
    """Reduce packed ``a`` in place to [I : Q]. Returns the swap count, or -1."""
    n_swaps = 0
    for r in range(m):
        piv = -1
        for i in range(r, m):
            if _bit(a[i], r):
                piv = i
                break
        if piv < 0:
            # leftmost later column with a usable pivot keeps the most
            # reliable columns at the tail
            for j in range(r + 1, n):
                for i in range(r, m):
                    if _bit(a[i], j):
                        piv = i
                        break
                if piv >= 0:
                    _swap_cols(a, r, j)
                    swaps[n_swaps, 0] = r
                    swaps[n_swaps, 1] = j
                    n_swaps += 1
                    break
            if piv < 0:
                return -1
        if piv != r:
            for w in range(a.shape[1]):
                t = a[r, w]
                a[r, w] = a[piv, w]
                a[piv, w] = t
        for i in range(m):
            if i != r and _bit(a[i], r):
                for w in range(a.shape[1]):
                    a[i, w] ^= a[r, w]
    return n_swaps


def gauss_systematic(code, order=None):
    """Reduce ``code.h`` with columns taken in ``order`` to ``[I : q2]``.

    Parameters
    ----------
    code : ParityCheckCode
    order : Permutation, optional
        Column order, least reliable first. Identity when omitted.

    Returns
    -------
    SystematicForm
        ``perm`` is ``order`` composed with the column swaps the pivot
        search needed; ``n_sw`` counts swaps whose partner column sat at a
        position ``>= m`` (i.e. pulled from the reliable side).

    Raises
    ------
    RankDeficiencyError
        If fewer than ``m`` independent columns exist.
    """
    m, n = code.m, code.n
    if order is None:
        order = Permutation.identity(n)
    if len(order) != n:
        raise ValueError("order length differs from code length")
    a = pack_rows(code.h[:, order.forward])
    swaps = np.zeros((m, 2), dtype=np.int64)
    count = _eliminate(a, m, n, swaps)
    if count < 0:
        raise RankDeficiencyError(f"H of {code.source_id or 'code'} is not full row rank")
    swaps = swaps[:count]
    fwd = np.array(order.forward)
    for r, j in swaps:
        fwd[r], fwd[j] = fwd[j], fwd[r]
    reduced = unpack_rows(a, n)
    q2 = reduced[:, m:].copy()
    q2.setflags(write=False)
    n_sw = int(np.count_nonzero(swaps[:, 1] >= m)) if count else 0
    return SystematicForm(q2=q2, perm=Permutation(fwd), n_sw=n_sw, swaps=tuple(map(tuple, swaps.tolist())))


def encode_lrb(q2, mrb_bits):
    """Complete the least reliable part so that ``[I : q2] c = 0``."""
    q2 = np.asarray(q2, dtype=np.uint8)
    mrb_bits = np.asarray(mrb_bits, dtype=np.uint8)
    if q2.ndim != 2 or mrb_bits.shape[-1] != q2.shape[1]:
        raise ValueError(f"q2 has {q2.shape[1]} columns, got {mrb_bits.shape[-1]} MRB bits")
    return (mrb_bits @ q2.T.astype(np.int64) % 2).astype(np.uint8)


def syndrome(code, c):
    c = np.asarray(c, dtype=np.uint8)
    if c.shape[-1] != code.n:
        raise ValueError(f"expected {code.n} bits, got {c.shape[-1]}")
    return (c.astype(np.int64) @ code.h.T % 2).astype(np.uint8)


def gf2_rank(mat):
    a = pack_rows(mat)
    rows, cols = mat.shape
    rank = 0
    for j in range(cols):
        w, b = j >> 6, np.uint64(j & 63)
        piv = None
        for i in range(rank, rows):
            if (a[i, w] >> b) & np.uint64(1):
                piv = i
                break
        if piv is None:
            continue
        a[[rank, piv]] = a[[piv, rank]]
        hit = ((a[:, w] >> b) & np.uint64(1)).astype(bool)
        hit[rank] = False
        a[hit] ^= a[rank]
        rank += 1
        if rank == rows:
            break
    return rank


def derive_generator(code):
    """Return ``(G, perm)`` with ``G`` a ``k x n`` generator, ``G H^T = 0``.

    ``perm`` is the systematizing permutation: ``G`` restricted to
    positions ``perm.forward[m:]`` is the identity.
    """
    sf = gauss_systematic(code)
    g_perm = np.hstack([sf.q2.T, np.eye(code.k, dtype=np.uint8)])
    g = sf.perm.revert(g_perm, axis=1).astype(np.uint8)
    return g, sf.perm


def cached_generator(code, cache_dir):
    """Load the generator from a sidecar ``.npz`` or derive and store it."""
    cache_dir = Path(cache_dir)
    key = f"{code.source_id or 'code'}-{code.fingerprint}"
    path = cache_dir / f"{key}.gen.npz"
    if path.exists():
        with np.load(path) as data:
            g = np.unpackbits(data["g"], axis=1, count=code.n).astype(np.uint8)
            return g, Permutation(data["perm"])
    g, perm = derive_generator(code)
    cache_dir.mkdir(parents=True, exist_ok=True)
    np.savez(path, g=np.packbits(g, axis=1), perm=perm.forward)
    return g, perm
