"""Lossless encoders for quantized tensors and the ``FZIP`` update-file format.

Three payload encoders share one record header:

* ``huffman``: canonical Huffman code over cluster labels, rebuilt on the
  decoder from the per-cluster counts carried in the header.
* ``ap``: positions of the two least frequent clusters as fixed-width
  integers, each followed by one bit choosing between them. Every other
  position holds the dominant cluster.
* ``doap``: like ``ap`` but each record stores the gap from the previous
  listed position as a 7-bit-group varint.

The byte layout is documented in ``docs/FORMAT.md``.
"""
from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ._backend import kernels as _default_kernels
from .errors import DecodeError, UnsupportedModeError
from .quantize import QuantizedTensor, frequency_order

MAGIC = b"FZIP"
FORMAT_VERSION = 1
ENCODERS = ("huffman", "ap", "doap")
_ENCODER_IDS = {name: i for i, name in enumerate(ENCODERS)}
_KIND_IDS = {"weight": 0, "bias": 1}
_KINDS = {v: k for k, v in _KIND_IDS.items()}
MAX_CODE_LENGTH = 56

_FILE_HEADER = struct.Struct("<4sHIIQI")


@dataclass(eq=False)
class EncodedTensor:
    name: str
    shape: tuple[int, ...]
    kind: str
    encoder: str
    centroids: np.ndarray
    counts: np.ndarray
    payload: bytes
    payload_bit_length: int

    def __post_init__(self):
        self.shape = tuple(int(d) for d in self.shape)
        self.centroids = np.asarray(self.centroids, dtype=np.float32).reshape(-1)
        self.counts = np.asarray(self.counts, dtype=np.int64).reshape(-1)
        if self.encoder not in _ENCODER_IDS:
            raise ValueError(f"unknown encoder {self.encoder!r}")

    @property
    def k(self) -> int:
        return self.centroids.size

    @property
    def num_elements(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    def header_bytes(self) -> bytes:
        name = self.name.encode("utf-8")
        parts = [
            struct.pack("<H", len(name)),
            name,
            struct.pack("<BBB", _KIND_IDS[self.kind], _ENCODER_IDS[self.encoder], len(self.shape)),
            struct.pack(f"<{len(self.shape)}I", *self.shape),
            struct.pack("<I", self.k),
            self.centroids.astype("<f4").tobytes(),
            self.counts.astype("<u4").tobytes(),
            struct.pack("<Q", self.payload_bit_length),
        ]
        return b"".join(parts)

    def header_bits(self) -> int:
        return 8 * len(self.header_bytes())

    def to_bytes(self) -> bytes:
        return self.header_bytes() + self.payload

    def __eq__(self, other):
        if not isinstance(other, EncodedTensor):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()


@dataclass(eq=False)
class EncodedUpdate:
    client_id: int
    round_index: int
    n_m: int
    tensors: list[EncodedTensor] = field(default_factory=list)

    def to_bytes(self) -> bytes:
        head = _FILE_HEADER.pack(
            MAGIC, FORMAT_VERSION, self.client_id, self.round_index, self.n_m, len(self.tensors)
        )
        return head + b"".join(t.to_bytes() for t in self.tensors)

    def size_bits(self) -> int:
        return 8 * len(self.to_bytes())

    def __eq__(self, other):
        if not isinstance(other, EncodedUpdate):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()


# -- canonical Huffman -------------------------------------------------------


def huffman_code_lengths(counts) -> np.ndarray:
    """Huffman codeword length per label; 0 for unused labels.

    Among equal weights the less frequent label (by frequency order) is merged
    first, so the most frequent label always gets the shortest codeword. A
    single used label gets length 0 (no payload needed).
    """
    counts = np.asarray(counts, dtype=np.int64)
    lengths = np.zeros(counts.size, dtype=np.int64)
    used = [int(s) for s in frequency_order(counts)[::-1] if counts[s] > 0]
    if len(used) <= 1:
        return lengths
    heap = [(int(counts[s]), key, [s]) for key, s in enumerate(used)]
    heapq.heapify(heap)
    key = len(used)
    while len(heap) > 1:
        c1, _, syms1 = heapq.heappop(heap)
        c2, _, syms2 = heapq.heappop(heap)
        for s in syms1 + syms2:
            lengths[s] += 1
        heapq.heappush(heap, (c1 + c2, key, syms1 + syms2))
        key += 1
    return lengths


def canonical_code(lengths):
    """Return ``(codes, count_by_length, sorted_symbols)`` for canonical codeword assignment."""
    lengths = np.asarray(lengths, dtype=np.int64)
    max_len = int(lengths.max(initial=0))
    if max_len > MAX_CODE_LENGTH:
        raise ValueError(f"codeword length {max_len} exceeds {MAX_CODE_LENGTH} bits")
    symbols = [s for s in np.lexsort((np.arange(lengths.size), lengths)) if lengths[s] > 0]
    count_by_length = np.bincount(lengths[symbols], minlength=max_len + 1).astype(np.int64)
    count_by_length[0] = 0
    codes = np.zeros(lengths.size, dtype=np.uint64)
    code = 0
    prev_len = lengths[symbols[0]] if symbols else 0
    for s in symbols:
        code <<= int(lengths[s] - prev_len)
        prev_len = lengths[s]
        codes[s] = code
        code += 1
    return codes, count_by_length, np.asarray(symbols, dtype=np.int64)


def _check_padding(e: EncodedTensor):
    expected = (e.payload_bit_length + 7) // 8
    if len(e.payload) != expected:
        raise DecodeError(
            f"payload is {len(e.payload)} bytes, header declares {e.payload_bit_length} bits",
            min(len(e.payload), expected) * 8,
            e.name,
        )
    pad = (-e.payload_bit_length) % 8
    if pad and e.payload[-1] & ((1 << pad) - 1):
        raise DecodeError("non-zero padding bits", e.payload_bit_length, e.name)


def _header_from(q: QuantizedTensor, encoder: str) -> dict:
    if q.size >= 1 << 32:
        raise ValueError(f"{q.name}: tensors above 2**32 - 1 elements are not supported")
    return dict(name=q.name, shape=q.shape, kind=q.kind, encoder=encoder,
                centroids=q.centroids, counts=q.counts())


def encode_huffman(q: QuantizedTensor, kernels=None) -> EncodedTensor:
    kernels = kernels or _default_kernels
    header = _header_from(q, "huffman")
    lengths = huffman_code_lengths(header["counts"])
    if not lengths.any():
        # one populated cluster: the counts alone reconstruct the labels
        return EncodedTensor(**header, payload=b"", payload_bit_length=0)
    codes, _, _ = canonical_code(lengths)
    payload, nbits = kernels.huffman_pack(q.labels.astype(np.int64), codes, lengths.astype(np.uint8))
    return EncodedTensor(**header, payload=payload, payload_bit_length=nbits)


def _address_layout(counts):
    """Dominant label and the two remaining labels ordered by (count, label)."""
    counts = np.asarray(counts)
    if counts.size != 3:
        raise UnsupportedModeError(f"address-position encoders need exactly 3 clusters, got {counts.size}")
    dominant = int(frequency_order(counts)[0])
    rest = sorted((int(counts[s]), s) for s in range(3) if s != dominant)
    return dominant, (rest[0][1], rest[1][1])


def _disc_bits(counts, pair) -> int:
    # with one infrequent cluster empty every record is ``high`` and the flag carries nothing
    return 1 if counts[pair[0]] else 0


def _address_records(q: QuantizedTensor):
    counts = q.counts()
    dominant, (low, high) = _address_layout(counts)
    positions = np.flatnonzero(q.labels != dominant).astype(np.int64)
    discs = (q.labels[positions] == high).astype(np.uint8)
    return positions, discs, _disc_bits(counts, (low, high))


def position_width(n: int) -> int:
    """Bits per absolute position: ``ceil(log2(n))``."""
    return max(int(n) - 1, 0).bit_length()


def encode_ap(q: QuantizedTensor, kernels=None) -> EncodedTensor:
    kernels = kernels or _default_kernels
    header = _header_from(q, "ap")
    positions, discs, disc_bits = _address_records(q)
    payload, nbits = kernels.fixed_pack(positions, discs, position_width(q.size), disc_bits)
    return EncodedTensor(**header, payload=payload, payload_bit_length=nbits)


def encode_doap(q: QuantizedTensor, kernels=None) -> EncodedTensor:
    kernels = kernels or _default_kernels
    header = _header_from(q, "doap")
    positions, discs, disc_bits = _address_records(q)
    payload, nbits = kernels.varint_pack(positions, discs, disc_bits)
    return EncodedTensor(**header, payload=payload, payload_bit_length=nbits)


_ENCODE = {"huffman": encode_huffman, "ap": encode_ap, "doap": encode_doap}


def encode(q: QuantizedTensor, encoder: str = "doap", kernels=None) -> EncodedTensor:
    try:
        fn = _ENCODE[encoder]
    except KeyError:
        raise ValueError(f"unknown encoder {encoder!r}; choose from {ENCODERS}") from None
    return fn(q, kernels)


def _rebuild_from_addresses(e: EncodedTensor, positions, discs, dominant, pair, n):
    if positions.size:
        if positions[0] < 0 or np.any(np.diff(positions) <= 0):
            bad = int(np.flatnonzero(np.diff(positions) <= 0)[0]) + 1 if positions[0] >= 0 else 0
            raise DecodeError(f"record {bad}: positions not strictly ascending", None, e.name)
        if positions[-1] >= n:
            raise DecodeError(f"position {int(positions[-1])} >= tensor length {n}", None, e.name)
    labels = np.full(n, dominant, dtype=np.int64)
    labels[positions] = np.asarray(pair, dtype=np.int64)[discs.astype(np.int64)]
    return labels


def decode(e: EncodedTensor, kernels=None) -> QuantizedTensor:
    """Reconstruct labels and centroids exactly, validating the payload against the header."""
    kernels = kernels or _default_kernels
    n = e.num_elements
    counts = e.counts
    if counts.size != e.k:
        raise DecodeError(f"{counts.size} counts for {e.k} centroids", None, e.name)
    if counts.sum() != n:
        raise DecodeError(f"counts sum to {int(counts.sum())}, tensor has {n} elements", None, e.name)
    _check_padding(e)
    try:
        if e.encoder == "huffman":
            lengths = huffman_code_lengths(counts)
            if not lengths.any():
                if e.payload_bit_length:
                    raise DecodeError("constant tensor carries a payload", 0)
                labels = np.full(n, int(np.argmax(counts)) if n else 0, dtype=np.int64)
            else:
                _, count_by_length, symbols = canonical_code(lengths)
                labels, used = kernels.huffman_unpack(
                    e.payload, e.payload_bit_length, n, count_by_length, symbols
                )
                if used != e.payload_bit_length:
                    raise DecodeError(f"{e.payload_bit_length - used} trailing payload bits", used)
        else:
            dominant, pair = _address_layout(counts)
            records = int(counts[pair[0]] + counts[pair[1]])
            disc_bits = _disc_bits(counts, pair)
            if not disc_bits:
                pair = (pair[1], pair[1])
            if e.encoder == "ap":
                positions, discs, used = kernels.fixed_unpack(
                    e.payload, e.payload_bit_length, records, position_width(n), disc_bits
                )
            else:
                positions, discs, used = kernels.varint_unpack(
                    e.payload, e.payload_bit_length, records, disc_bits
                )
            if used != e.payload_bit_length:
                raise DecodeError(f"{e.payload_bit_length - used} trailing payload bits", used)
            labels = _rebuild_from_addresses(e, positions, discs, dominant, pair, n)
    except DecodeError as err:
        raise err.for_tensor(e.name) from None
    except UnsupportedModeError as err:
        raise DecodeError(str(err), None, e.name) from None
    decoded_counts = np.bincount(labels, minlength=e.k)
    if decoded_counts.size != e.k or not np.array_equal(decoded_counts, counts):
        raise DecodeError("decoded labels disagree with header counts", None, e.name)
    return QuantizedTensor(e.name, e.shape, e.kind, labels, e.centroids)


def encoded_size_bits(e: EncodedTensor, include_header: bool = True) -> int:
    return e.payload_bit_length + (e.header_bits() if include_header else 0)


def tensor_compression_rate(e: EncodedTensor, include_header: bool = True) -> float:
    bits = encoded_size_bits(e, include_header)
    return 32 * e.num_elements / bits if bits else float("inf")


# -- update files ------------------------------------------------------------


def encode_update(
    quantized: Sequence[QuantizedTensor],
    encoder: str,
    client_id: int = 0,
    round_index: int = 0,
    n_m: int = 0,
    kernels=None,
) -> EncodedUpdate:
    """Encode every tensor of one client update.

    Address encoders only apply to three-cluster tensors; a tensor that
    quantized to fewer distinct clusters is Huffman-coded instead and the
    record header says so.
    """
    tensors = []
    for q in quantized:
        mode = encoder if encoder == "huffman" or q.k == 3 else "huffman"
        tensors.append(encode(q, mode, kernels))
    return EncodedUpdate(client_id, round_index, n_m, tensors)


def decode_update(update: EncodedUpdate, kernels=None) -> list[QuantizedTensor]:
    names = [t.name for t in update.tensors]
    if len(set(names)) != len(names):
        raise DecodeError("update lists a tensor more than once")
    return [decode(t, kernels) for t in update.tensors]


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError(f"file truncated reading {what}", 8 * len(self.data))
        out = bytes(self.data[self.pos:self.pos + n])
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))


def _read_tensor(r: _Reader) -> EncodedTensor:
    (name_len,) = r.unpack("<H", "name length")
    name = r.take(name_len, "name").decode("utf-8")
    kind_id, enc_id, ndim = r.unpack("<BBB", f"{name} header")
    if kind_id not in _KINDS or enc_id >= len(ENCODERS):
        raise DecodeError(f"bad kind/encoder id {kind_id}/{enc_id}", None, name)
    shape = r.unpack(f"<{ndim}I", f"{name} shape")
    (k,) = r.unpack("<I", f"{name} k")
    centroids = np.frombuffer(r.take(4 * k, f"{name} centroids"), dtype="<f4")
    counts = np.frombuffer(r.take(4 * k, f"{name} counts"), dtype="<u4")
    (nbits,) = r.unpack("<Q", f"{name} payload length")
    payload = r.take((nbits + 7) // 8, f"{name} payload")
    return EncodedTensor(name, shape, _KINDS[kind_id], ENCODERS[enc_id], centroids, counts, payload, nbits)


def parse_update(data: bytes) -> EncodedUpdate:
    r = _Reader(data)
    magic, version, client_id, round_index, n_m, count = r.unpack(_FILE_HEADER.format, "file header")
    if magic != MAGIC:
        raise DecodeError(f"bad magic {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise DecodeError(f"unsupported format version {version}", 32)
    tensors = [_read_tensor(r) for _ in range(count)]
    if r.pos != len(r.data):
        raise DecodeError(f"{len(r.data) - r.pos} trailing bytes after last tensor", 8 * r.pos)
    return EncodedUpdate(client_id, round_index, n_m, tensors)


def write_update(path, update: EncodedUpdate) -> int:
    data = update.to_bytes()
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def read_update(path) -> EncodedUpdate:
    with open(path, "rb") as fh:
        return parse_update(fh.read())


def compression_table(update: EncodedUpdate) -> list[dict]:
    """Per-tensor size and compression-rate rows for reporting."""
    rows = []
    for t in update.tensors:
        rows.append({
            "tensor": t.name,
            "elements": t.num_elements,
            "encoder": t.encoder,
            "k": t.k,
            "payload_bits": t.payload_bit_length,
            "total_bits": encoded_size_bits(t, True),
            "cr_payload": tensor_compression_rate(t, False),
            "cr_total": tensor_compression_rate(t, True),
        })
    return rows


def format_table(rows: Iterable[dict]) -> str:
    rows = list(rows)
    lines = [f"{'tensor':<18}{'elements':>10}{'encoder':>9}{'payload':>10}{'total':>10}"
             f"{'CR(payload)':>13}{'CR(total)':>11}"]
    for r in rows:
        lines.append(
            f"{r['tensor']:<18}{r['elements']:>10}{r['encoder']:>9}{r['payload_bits']:>10}"
            f"{r['total_bits']:>10}{r['cr_payload']:>13.1f}{r['cr_total']:>11.1f}"
        )
    return "\n".join(lines)
