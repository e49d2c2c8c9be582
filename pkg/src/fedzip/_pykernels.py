"""Pure-Python bit and clustering kernels; the fallback when ``fedzip._kernels`` is not compiled.

Packing is vectorized with numpy. Unpacking walks the bitstream one bit at a
time, which is slow but has no dependencies beyond numpy. Bits are MSB-first
within each byte and trailing pad bits are zero.
"""
from __future__ import annotations

import numpy as np

from .errors import DecodeError

MAX_VARINT_GROUPS = 10


def _pack_bits(bits: np.ndarray) -> tuple[bytes, int]:
    return np.packbits(bits.astype(np.uint8, copy=False)).tobytes(), int(bits.size)


def huffman_pack(symbols, codes, lengths) -> tuple[bytes, int]:
    """Concatenate ``codes[s]`` (``lengths[s]`` bits each) for every symbol."""
    symbols = np.asarray(symbols, dtype=np.int64)
    codes = np.asarray(codes, dtype=np.uint64)
    lengths = np.asarray(lengths, dtype=np.int64)
    sym_len = lengths[symbols]
    sym_code = codes[symbols]
    total = int(sym_len.sum())
    bits = np.zeros(total, dtype=np.uint8)
    starts = np.cumsum(sym_len) - sym_len
    for j in range(int(sym_len.max(initial=0))):
        mask = sym_len > j
        shift = (sym_len[mask] - 1 - j).astype(np.uint64)
        bits[starts[mask] + j] = ((sym_code[mask] >> shift) & np.uint64(1)).astype(np.uint8)
    return _pack_bits(bits)


def huffman_unpack(payload: bytes, nbits: int, n: int, count_by_length, sorted_symbols):
    """Decode ``n`` canonical-Huffman symbols.

    ``count_by_length[L]`` is the number of codewords of length ``L``;
    ``sorted_symbols`` lists symbols in canonical order. Returns
    ``(symbols, bits_consumed)``.
    """
    count = [int(c) for c in count_by_length]
    symbols = [int(s) for s in sorted_symbols]
    max_len = len(count) - 1
    out = np.empty(n, dtype=np.int64)
    pos = 0
    for i in range(n):
        code = first = index = 0
        for length in range(1, max_len + 1):
            if pos >= nbits:
                raise DecodeError("payload truncated inside a codeword", pos)
            code |= (payload[pos >> 3] >> (7 - (pos & 7))) & 1
            pos += 1
            c = count[length]
            if code - first < c:
                out[i] = symbols[index + code - first]
                break
            index += c
            first = (first + c) << 1
            code <<= 1
        else:
            raise DecodeError("invalid codeword", pos)
    return out, pos


def fixed_pack(positions, discs, width: int, disc_bits: int = 1) -> tuple[bytes, int]:
    """Records of ``width`` position bits followed by ``disc_bits`` (0 or 1) discriminator bits."""
    positions = np.asarray(positions, dtype=np.int64)
    discs = np.asarray(discs, dtype=np.int64)
    record = (positions << 1) | (discs & 1) if disc_bits else positions
    shifts = np.arange(width + disc_bits - 1, -1, -1, dtype=np.int64)
    bits = (record[:, None] >> shifts[None, :]) & 1
    return _pack_bits(bits.reshape(-1))


def fixed_unpack(payload: bytes, nbits: int, count: int, width: int, disc_bits: int = 1):
    need = count * (width + disc_bits)
    if need > nbits:
        raise DecodeError(f"payload holds {nbits} bits, {count} records need {need}", nbits)
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))[:need].astype(np.int64)
    records = bits.reshape(count, width + disc_bits)
    weights = np.left_shift(np.int64(1), np.arange(width + disc_bits - 1, -1, -1, dtype=np.int64))
    values = records @ weights if count else np.zeros(0, dtype=np.int64)
    if not disc_bits:
        return values, np.zeros(count, dtype=np.uint8), need
    return values >> 1, (values & 1).astype(np.uint8), need


def varint_groups(gaps: np.ndarray) -> np.ndarray:
    """Number of 7-bit groups needed per non-negative integer (at least one)."""
    gaps = np.asarray(gaps, dtype=np.int64)
    groups = np.ones(gaps.shape, dtype=np.int64)
    rest = gaps >> 7
    while np.any(rest):
        groups += rest > 0
        rest = rest >> 7
    return groups


def varint_pack(positions, discs, disc_bits: int = 1) -> tuple[bytes, int]:
    """Gap-coded records: a LEB128-style varint of the gap, then ``disc_bits`` discriminator bits.

    The first record carries the absolute position. Each group is a
    continuation bit followed by 7 payload bits, least significant group first.
    """
    positions = np.asarray(positions, dtype=np.int64)
    discs = np.asarray(discs, dtype=np.uint8)
    if positions.size == 0:
        return b"", 0
    gaps = np.diff(positions, prepend=0)
    groups = varint_groups(gaps)
    total_groups = int(groups.sum())
    rec = np.repeat(np.arange(positions.size), groups)
    first_group = np.cumsum(groups) - groups
    q = np.arange(total_groups) - first_group[rec]
    group_bytes = ((gaps[rec] >> (7 * q)) & 0x7F) | np.where(q < groups[rec] - 1, 0x80, 0)
    group_bits = np.unpackbits(group_bytes.astype(np.uint8)).reshape(total_groups, 8)
    record_start = 8 * first_group + disc_bits * np.arange(positions.size)
    bits = np.zeros(8 * total_groups + disc_bits * positions.size, dtype=np.uint8)
    group_start = record_start[rec] + 8 * q
    bits[group_start[:, None] + np.arange(8)[None, :]] = group_bits
    if disc_bits:
        bits[record_start + 8 * groups] = discs & 1
    return _pack_bits(bits)


def varint_unpack(payload: bytes, nbits: int, count: int, disc_bits: int = 1):
    positions = np.empty(count, dtype=np.int64)
    discs = np.zeros(count, dtype=np.uint8)
    pos = 0
    prev = 0
    for r in range(count):
        value = 0
        for q in range(MAX_VARINT_GROUPS + 1):
            if q == MAX_VARINT_GROUPS:
                raise DecodeError("varint longer than 10 groups", pos)
            if pos + 8 > nbits:
                raise DecodeError("payload truncated inside a varint", pos)
            byte = 0
            for _ in range(8):
                byte = (byte << 1) | ((payload[pos >> 3] >> (7 - (pos & 7))) & 1)
                pos += 1
            value |= (byte & 0x7F) << (7 * q)
            if not byte & 0x80:
                break
        if disc_bits:
            if pos >= nbits:
                raise DecodeError("payload truncated before a discriminator bit", pos)
            discs[r] = (payload[pos >> 3] >> (7 - (pos & 7))) & 1
            pos += 1
        prev = prev + value if r else value
        if prev >= 1 << 62:
            raise DecodeError("decoded position overflows", pos)
        positions[r] = prev
    return positions, discs, pos


def _segment_cost(p1, p2, a: int, b: int) -> float:
    s = p1[b] - p1[a]
    v = (p2[b] - p2[a]) - s * s / (b - a)
    return v if v > 0.0 else 0.0


def kmeans_dp_bounds(prefix, prefix_sq, k: int) -> np.ndarray:
    """Segment boundaries of the optimal k-segmentation of sorted data.

    ``prefix``/``prefix_sq`` are the length ``n + 1`` running sums of the
    sorted values and their squares. Layer ``c`` holds the best cost of
    splitting the first ``j`` values into ``c`` segments; the optimal last
    split is monotone in ``j``, so each layer is filled by divide and conquer.
    Returns ``k + 1`` boundaries from 0 to ``n``.
    """
    p1 = np.asarray(prefix, dtype=np.float64).tolist()
    p2 = np.asarray(prefix_sq, dtype=np.float64).tolist()
    n = len(p1) - 1
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    prev = [0.0] + [_segment_cost(p1, p2, 0, j) for j in range(1, n + 1)]
    arg = [[0] * (n + 1) for _ in range(k + 1)]
    for c in range(2, k + 1):
        cur = [np.inf] * (n + 1)
        stack = [(c, n, c - 1, n - 1)]
        while stack:
            jlo, jhi, ilo, ihi = stack.pop()
            if jlo > jhi:
                continue
            j = (jlo + jhi) // 2
            best, best_i = np.inf, ilo
            for i in range(max(ilo, c - 1), min(ihi, j - 1) + 1):
                v = prev[i] + _segment_cost(p1, p2, i, j)
                if v < best:
                    best, best_i = v, i
            cur[j] = best
            arg[c][j] = best_i
            stack.append((jlo, j - 1, ilo, best_i))
            stack.append((j + 1, jhi, best_i, ihi))
        prev = cur
    bounds = np.zeros(k + 1, dtype=np.int64)
    bounds[k] = n
    for c in range(k, 1, -1):
        bounds[c - 1] = arg[c][bounds[c]]
    return bounds
