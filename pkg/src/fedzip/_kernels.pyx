# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled bit and clustering kernels; same API and bit layout as ``fedzip._pykernels``."""
import numpy as np

from libc.math cimport INFINITY
from libc.stdint cimport int64_t, uint8_t, uint64_t

from .errors import DecodeError

cdef enum:
    MAX_VARINT_GROUPS = 10


cdef inline int read_bit(const uint8_t[::1] buf, int64_t pos) nogil:
    return (buf[pos >> 3] >> (7 - (pos & 7))) & 1


cdef class _BitWriter:
    cdef uint8_t[::1] buf
    cdef Py_ssize_t out
    cdef uint64_t acc
    cdef int nacc

    def __cinit__(self, uint8_t[::1] buf):
        self.buf = buf
        self.out = 0
        self.acc = 0
        self.nacc = 0

    cdef inline void put(self, uint64_t value, int nbits) noexcept nogil:
        # nbits <= 56 so the accumulator (< 8 pending bits) never overflows
        self.acc = (self.acc << nbits) | (value & ((<uint64_t>1 << nbits) - 1))
        self.nacc += nbits
        while self.nacc >= 8:
            self.nacc -= 8
            self.buf[self.out] = <uint8_t>((self.acc >> self.nacc) & 0xFF)
            self.out += 1
        self.acc &= (<uint64_t>1 << self.nacc) - 1

    cdef inline void flush(self) noexcept nogil:
        if self.nacc > 0:
            self.buf[self.out] = <uint8_t>((self.acc << (8 - self.nacc)) & 0xFF)
            self.out += 1
            self.nacc = 0


def huffman_pack(symbols, codes, lengths):
    cdef const int64_t[::1] sym = np.ascontiguousarray(symbols, dtype=np.int64)
    cdef const uint64_t[::1] code = np.ascontiguousarray(codes, dtype=np.uint64)
    cdef const uint8_t[::1] length = np.ascontiguousarray(lengths, dtype=np.uint8)
    cdef Py_ssize_t n = sym.shape[0], i
    cdef int64_t total = 0
    for i in range(n):
        total += length[sym[i]]
    out = np.zeros((total + 7) // 8 + 1, dtype=np.uint8)
    cdef _BitWriter w = _BitWriter(out)
    with nogil:
        for i in range(n):
            w.put(code[sym[i]], length[sym[i]])
        w.flush()
    return out[: (total + 7) // 8].tobytes(), int(total)


def huffman_unpack(payload, int64_t nbits, Py_ssize_t n, count_by_length, sorted_symbols):
    cdef const uint8_t[::1] buf = np.frombuffer(payload, dtype=np.uint8) if len(payload) else np.zeros(1, np.uint8)
    cdef const int64_t[::1] count = np.ascontiguousarray(count_by_length, dtype=np.int64)
    cdef const int64_t[::1] syms = np.ascontiguousarray(sorted_symbols, dtype=np.int64)
    cdef int max_len = count.shape[0] - 1
    result = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] out = result
    cdef int64_t pos = 0, code, first, index, c
    cdef Py_ssize_t i
    cdef int length, status = 0
    with nogil:
        for i in range(n):
            code = 0
            first = 0
            index = 0
            status = 2
            for length in range(1, max_len + 1):
                if pos >= nbits:
                    status = 1
                    break
                code = code | read_bit(buf, pos)
                pos += 1
                c = count[length]
                if code - first < c:
                    out[i] = syms[index + code - first]
                    status = 0
                    break
                index += c
                first = (first + c) << 1
                code <<= 1
            if status:
                break
    if status == 1:
        raise DecodeError("payload truncated inside a codeword", pos)
    if status == 2:
        raise DecodeError("invalid codeword", pos)
    return result, int(pos)


def fixed_pack(positions, discs, int width, int disc_bits=1):
    cdef const int64_t[::1] p = np.ascontiguousarray(positions, dtype=np.int64)
    cdef const uint8_t[::1] d = np.ascontiguousarray(discs, dtype=np.uint8)
    cdef Py_ssize_t n = p.shape[0], i
    cdef int64_t total = n * (width + disc_bits)
    out = np.zeros((total + 7) // 8 + 1, dtype=np.uint8)
    cdef _BitWriter w = _BitWriter(out)
    with nogil:
        for i in range(n):
            if disc_bits:
                w.put((<uint64_t>p[i] << 1) | (d[i] & 1), width + 1)
            else:
                w.put(<uint64_t>p[i], width)
        w.flush()
    return out[: (total + 7) // 8].tobytes(), int(total)


def fixed_unpack(payload, int64_t nbits, Py_ssize_t count, int width, int disc_bits=1):
    cdef int64_t need = count * (width + disc_bits)
    if need > nbits:
        raise DecodeError(f"payload holds {nbits} bits, {count} records need {need}", nbits)
    cdef const uint8_t[::1] buf = np.frombuffer(payload, dtype=np.uint8) if len(payload) else np.zeros(1, np.uint8)
    positions = np.empty(count, dtype=np.int64)
    discs = np.zeros(count, dtype=np.uint8)
    cdef int64_t[::1] p = positions
    cdef uint8_t[::1] d = discs
    cdef int64_t pos = 0, value
    cdef Py_ssize_t r
    cdef int b
    with nogil:
        for r in range(count):
            value = 0
            for b in range(width):
                value = (value << 1) | read_bit(buf, pos)
                pos += 1
            p[r] = value
            if disc_bits:
                d[r] = <uint8_t>read_bit(buf, pos)
                pos += 1
    return positions, discs, int(need)


def varint_pack(positions, discs, int disc_bits=1):
    cdef const int64_t[::1] p = np.ascontiguousarray(positions, dtype=np.int64)
    cdef const uint8_t[::1] d = np.ascontiguousarray(discs, dtype=np.uint8)
    cdef Py_ssize_t n = p.shape[0], i
    if n == 0:
        return b"", 0
    cdef int64_t total = 0, gap, prev = 0
    cdef uint64_t rest
    for i in range(n):
        gap = p[i] - prev
        prev = p[i]
        rest = <uint64_t>gap >> 7
        total += 8 + disc_bits
        while rest:
            total += 8
            rest >>= 7
    out = np.zeros((total + 7) // 8 + 1, dtype=np.uint8)
    cdef _BitWriter w = _BitWriter(out)
    prev = 0
    with nogil:
        for i in range(n):
            rest = <uint64_t>(p[i] - prev)
            prev = p[i]
            while rest >> 7:
                w.put(0x80 | (rest & 0x7F), 8)
                rest >>= 7
            w.put(rest, 8)
            if disc_bits:
                w.put(d[i] & 1, 1)
        w.flush()
    return out[: (total + 7) // 8].tobytes(), int(total)


def varint_unpack(payload, int64_t nbits, Py_ssize_t count, int disc_bits=1):
    cdef const uint8_t[::1] buf = np.frombuffer(payload, dtype=np.uint8) if len(payload) else np.zeros(1, np.uint8)
    positions = np.empty(count, dtype=np.int64)
    discs = np.zeros(count, dtype=np.uint8)
    cdef int64_t[::1] p = positions
    cdef uint8_t[::1] d = discs
    cdef int64_t pos = 0, prev = 0
    cdef uint64_t value, byte
    cdef Py_ssize_t r
    cdef int q, b, status = 0
    with nogil:
        for r in range(count):
            value = 0
            status = 3
            for q in range(MAX_VARINT_GROUPS):
                if pos + 8 > nbits:
                    status = 1
                    break
                byte = 0
                for b in range(8):
                    byte = (byte << 1) | read_bit(buf, pos)
                    pos += 1
                value |= (byte & 0x7F) << (7 * q)
                if not (byte & 0x80):
                    status = 0
                    break
            if status:
                break
            if disc_bits:
                if pos >= nbits:
                    status = 2
                    break
                d[r] = <uint8_t>read_bit(buf, pos)
                pos += 1
            if r:
                value += <uint64_t>prev
            if value >= (<uint64_t>1 << 62):
                status = 4
                break
            prev = <int64_t>value
            p[r] = prev
    if status == 1:
        raise DecodeError("payload truncated inside a varint", pos)
    if status == 2:
        raise DecodeError("payload truncated before a discriminator bit", pos)
    if status == 3:
        raise DecodeError("varint longer than 10 groups", pos)
    if status == 4:
        raise DecodeError("decoded position overflows", pos)
    return positions, discs, int(pos)


cdef inline double _segment_cost(const double[::1] p1, const double[::1] p2, int64_t a, int64_t b) noexcept nogil:
    cdef double s = p1[b] - p1[a]
    cdef double v = (p2[b] - p2[a]) - s * s / <double>(b - a)
    return v if v > 0.0 else 0.0


def kmeans_dp_bounds(prefix, prefix_sq, int k):
    """Segment boundaries of the optimal k-segmentation of sorted data."""
    cdef const double[::1] p1 = np.ascontiguousarray(prefix, dtype=np.float64)
    cdef const double[::1] p2 = np.ascontiguousarray(prefix_sq, dtype=np.float64)
    cdef int64_t n = p1.shape[0] - 1
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    prev_arr = np.empty(n + 1, dtype=np.float64)
    cur_arr = np.empty(n + 1, dtype=np.float64)
    arg_arr = np.zeros((k + 1, n + 1), dtype=np.int64)
    # explicit DFS stack; depth stays below 2 * log2(n) + 2
    stack_arr = np.empty((256, 4), dtype=np.int64)
    cdef double[::1] prev = prev_arr
    cdef double[::1] cur = cur_arr
    cdef int64_t[:, ::1] arg = arg_arr
    cdef int64_t[:, ::1] stack = stack_arr
    cdef int64_t j, i, jlo, jhi, ilo, ihi, best_i, top, lo_i, hi_i
    cdef int c
    cdef double best, v
    with nogil:
        prev[0] = 0.0
        for j in range(1, n + 1):
            prev[j] = _segment_cost(p1, p2, 0, j)
        for c in range(2, k + 1):
            for j in range(n + 1):
                cur[j] = INFINITY
            top = 0
            stack[0, 0] = c
            stack[0, 1] = n
            stack[0, 2] = c - 1
            stack[0, 3] = n - 1
            top = 1
            while top > 0:
                top -= 1
                jlo = stack[top, 0]
                jhi = stack[top, 1]
                ilo = stack[top, 2]
                ihi = stack[top, 3]
                if jlo > jhi:
                    continue
                j = (jlo + jhi) // 2
                best = INFINITY
                best_i = ilo
                lo_i = ilo if ilo > c - 1 else c - 1
                hi_i = ihi if ihi < j - 1 else j - 1
                for i in range(lo_i, hi_i + 1):
                    v = prev[i] + _segment_cost(p1, p2, i, j)
                    if v < best:
                        best = v
                        best_i = i
                cur[j] = best
                arg[c, j] = best_i
                stack[top, 0] = jlo
                stack[top, 1] = j - 1
                stack[top, 2] = ilo
                stack[top, 3] = best_i
                stack[top + 1, 0] = j + 1
                stack[top + 1, 1] = jhi
                stack[top + 1, 2] = best_i
                stack[top + 1, 3] = ihi
                top += 2
            for j in range(n + 1):
                prev[j] = cur[j]
    bounds = np.zeros(k + 1, dtype=np.int64)
    bounds[k] = n
    for c in range(k, 1, -1):
        bounds[c - 1] = arg_arr[c, bounds[c]]
    return bounds
