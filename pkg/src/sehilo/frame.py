"""Bit-exact frames carrying Hi and Lo token index streams.

Header (little-endian)::

    4 bytes  magic b"SHLF"
    u8       version (1)
    u8       number of dimensions D
    D * u8   level count per dimension
    f32      alpha
    f32      epsilon
    u32      tokens in the Hi stream
    u32      tokens in the Lo stream
    u64      seed

The payload packs each token's index tuple into one mixed-radix integer
(dimension 0 least significant) of ``ceil(log2(prod m_i))`` bits, Hi tokens
first, then Lo. Bits are written LSB-first into consecutive bytes and the
final partial byte is zero-padded. Decoding rejects any byte count other than
the exact one implied by the header, and nonzero padding.
"""

import math
import struct
from dataclasses import dataclass

import numpy as np

from sehilo.fsq import QuantizerConfig

FRAME_MAGIC = b"SHLF"
FRAME_VERSION = 1
_TAIL = struct.Struct("<ffIIQ")


class FrameError(ValueError):
    """Base class for frame decoding failures."""


class BadMagicError(FrameError):
    pass


class VersionMismatchError(FrameError):
    pass


class TruncatedFrameError(FrameError):
    pass


class TrailingDataError(FrameError):
    pass


class IndexOverflowError(FrameError):
    pass


class PaddingError(FrameError):
    pass


MAX_TOKEN_BITS = 62


def bits_per_token(levels):
    return (math.prod(levels) - 1).bit_length()


def _check_width(levels):
    if bits_per_token(levels) > MAX_TOKEN_BITS:
        raise ValueError(f"levels {list(levels)} need more than {MAX_TOKEN_BITS} bits per token")


def payload_bytes(levels, n_tokens):
    return (n_tokens * bits_per_token(levels) + 7) // 8


def _place_values(levels):
    return np.cumprod((1,) + tuple(levels[:-1]), dtype=np.int64)


def pack_token(indices, levels):
    if len(indices) != len(levels):
        raise ValueError(f"{len(indices)} indices for {len(levels)} dimensions")
    value, place = 0, 1
    for i, m in zip(indices, levels):
        if not 0 <= i < m:
            raise IndexOverflowError(f"index {i} out of range for {m} levels")
        value += int(i) * place
        place *= m
    return value


def unpack_token(value, levels):
    if not 0 <= value < math.prod(levels):
        raise IndexOverflowError(f"packed value {value} out of range for levels {list(levels)}")
    out = []
    for m in levels:
        value, r = divmod(value, m)
        out.append(r)
    return out


def pack_tokens(indices, levels):
    """Vectorised :func:`pack_token` over an ``(N, D)`` index matrix."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1, len(levels))
    m = np.asarray(levels, dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= m):
        raise IndexOverflowError("index out of range for levels")
    return idx @ _place_values(levels)


def unpack_tokens(values, levels):
    values = np.asarray(values, dtype=np.int64)
    if np.any(values < 0) or np.any(values >= math.prod(levels)):
        raise IndexOverflowError(f"packed value out of range for levels {list(levels)}")
    m = np.asarray(levels, dtype=np.int64)
    return (values[:, None] // _place_values(levels)) % m


def _pack_bits(values, nbits):
    bits = (values[:, None] >> np.arange(nbits, dtype=np.int64)) & 1
    return np.packbits(bits.astype(np.uint8).ravel(), bitorder="little").tobytes()


def _unpack_bits(buf, n_values, nbits):
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), bitorder="little")
    used = n_values * nbits
    if np.any(bits[used:]):
        raise PaddingError("nonzero padding bits after the last token")
    bits = bits[:used].reshape(n_values, nbits).astype(np.int64)
    return bits @ (np.int64(1) << np.arange(nbits, dtype=np.int64))


@dataclass(frozen=True)
class DecodedFrame:
    hi: np.ndarray
    lo: np.ndarray
    config: QuantizerConfig
    seed: int


def encode_frame(hi, lo, qcfg, seed=0):
    levels = qcfg.levels
    if any(m > 255 for m in levels) or len(levels) > 255:
        raise ValueError("level counts and dimension count must fit in a byte")
    _check_width(levels)
    hi = np.asarray(hi, dtype=np.int64).reshape(-1, len(levels))
    lo = np.asarray(lo, dtype=np.int64).reshape(-1, len(levels))
    header = (
        FRAME_MAGIC
        + bytes([FRAME_VERSION, len(levels)])
        + bytes(levels)
        + _TAIL.pack(qcfg.alpha, qcfg.epsilon, len(hi), len(lo), int(seed))
    )
    values = np.concatenate([pack_tokens(hi, levels), pack_tokens(lo, levels)])
    return header + _pack_bits(values, bits_per_token(levels))


def decode_frame(buf):
    buf = bytes(buf)
    if len(buf) < 6:
        raise TruncatedFrameError("frame shorter than the fixed header")
    if buf[:4] != FRAME_MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}")
    if buf[4] != FRAME_VERSION:
        raise VersionMismatchError(f"unsupported frame version {buf[4]}")
    n_dims = buf[5]
    head_end = 6 + n_dims + _TAIL.size
    if len(buf) < head_end:
        raise TruncatedFrameError("truncated header")
    levels = tuple(buf[6 : 6 + n_dims])
    alpha, epsilon, n_hi, n_lo, seed = _TAIL.unpack_from(buf, 6 + n_dims)
    try:
        qcfg = QuantizerConfig(levels, alpha, epsilon)
    except ValueError as exc:
        raise FrameError(f"invalid quantizer header: {exc}") from None
    if bits_per_token(levels) > MAX_TOKEN_BITS:
        raise FrameError(f"levels {list(levels)} exceed {MAX_TOKEN_BITS} bits per token")
    expected = head_end + payload_bytes(levels, n_hi + n_lo)
    if len(buf) < expected:
        raise TruncatedFrameError(f"payload needs {expected} bytes, frame has {len(buf)}")
    if len(buf) > expected:
        raise TrailingDataError(f"{len(buf) - expected} trailing bytes after payload")
    values = _unpack_bits(buf[head_end:], n_hi + n_lo, bits_per_token(levels))
    idx = unpack_tokens(values, levels)
    return DecodedFrame(idx[:n_hi], idx[n_hi:], qcfg, seed)
