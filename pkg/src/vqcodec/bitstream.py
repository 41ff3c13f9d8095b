"""Bit-exact serialization of code-index sequences (.bgc format, version 1).

Layout (integers little-endian):

    magic           4 bytes  b"BGC1"
    version         u8       1
    sample_rate     u32      Hz
    downsample      u16      R (samples per code frame)
    log2_k          u8       codebook size stored as log2(K); K power of two
    n_frames        u32
    ext_len         u8       header extension length in bytes
    extension       bytes    opaque (the CLI stores the original sample
                             count here as a u32)
    payload         bytes    MSB-first fixed-width packing, log2(K) bits per
                             index, final partial byte zero-padded

Fixed-width packing is used instead of entropy coding: code usage is close
to uniform in practice, so the gain would be marginal.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from vqcodec.errors import CodecError, ConfigError, FormatError, LengthError, VersionError

MAGIC = b"BGC1"
VERSION = 1
_HEADER = struct.Struct("<4sBIHBIB")


def _bits_for(codebook_size):
    bits = int(codebook_size).bit_length() - 1
    if codebook_size < 2 or (1 << bits) != codebook_size:
        raise ConfigError(
            f"codebook_size must be a power of two >= 2, got {codebook_size}"
        )
    return bits


@dataclass(frozen=True)
class StreamHeader:
    sample_rate: int
    downsample: int
    codebook_size: int
    n_frames: int
    extension: bytes = b""

    def __post_init__(self):
        _bits_for(self.codebook_size)
        if not 0 < self.downsample <= 0xFFFF:
            raise ConfigError(f"downsample rate {self.downsample} out of u16 range")
        if self.n_frames < 0 or self.sample_rate <= 0:
            raise ConfigError("n_frames must be >= 0 and sample_rate positive")
        if len(self.extension) > 0xFF:
            raise ConfigError("header extension limited to 255 bytes")

    @property
    def bits_per_code(self):
        return _bits_for(self.codebook_size)

    @property
    def payload_bytes(self):
        return (self.n_frames * self.bits_per_code + 7) // 8


@dataclass
class EncodedStream:
    header: StreamHeader
    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def duration_seconds(self):
        return self.header.n_frames * self.header.downsample / self.header.sample_rate


def pack(indices, header: StreamHeader) -> bytes:
    """Serialize indices under ``header``; header.n_frames must match."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size != header.n_frames:
        raise CodecError(
            f"header says {header.n_frames} frames but got {idx.size} indices"
        )
    if idx.size and (idx.min() < 0 or idx.max() >= header.codebook_size):
        raise CodecError(
            f"indices out of range [0, {header.codebook_size}) "
            f"(min {idx.min()}, max {idx.max()})"
        )
    bits = header.bits_per_code
    head = _HEADER.pack(
        MAGIC, VERSION, header.sample_rate, header.downsample,
        bits, header.n_frames, len(header.extension),
    )
    if idx.size == 0:
        return head + header.extension
    shifts = np.arange(bits - 1, -1, -1, dtype=np.int64)
    bitmat = ((idx[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
    payload = np.packbits(bitmat.reshape(-1)).tobytes()
    return head + header.extension + payload


def unpack(data: bytes) -> EncodedStream:
    """Exact inverse of :func:`pack`."""
    if len(data) < _HEADER.size:
        raise LengthError(f"stream too short for a header: {len(data)} bytes")
    magic, version, sample_rate, downsample, bits, n_frames, ext_len = \
        _HEADER.unpack(data[:_HEADER.size])
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}; not an encoded stream")
    if version != VERSION:
        raise VersionError(f"unsupported stream version {version}")
    if bits < 1 or bits > 16:
        raise FormatError(f"bits_per_code {bits} out of the supported range")
    offset = _HEADER.size
    extension = data[offset:offset + ext_len]
    if len(extension) != ext_len:
        raise LengthError("stream truncated inside the header extension")
    offset += ext_len
    payload = data[offset:]
    expected = (n_frames * bits + 7) // 8
    if len(payload) != expected:
        raise LengthError(
            f"payload is {len(payload)} bytes but the header implies {expected}"
        )
    header = StreamHeader(
        sample_rate=sample_rate, downsample=downsample,
        codebook_size=1 << bits, n_frames=n_frames, extension=extension,
    )
    if n_frames == 0:
        return EncodedStream(header, np.zeros(0, dtype=np.int64))
    raw = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))
    bitmat = raw[:n_frames * bits].reshape(n_frames, bits).astype(np.int64)
    weights = (1 << np.arange(bits - 1, -1, -1, dtype=np.int64))
    return EncodedStream(header, bitmat @ weights)


def measured_bitrate(stream: EncodedStream, duration_seconds) -> float:
    """Payload bitrate in kbps over the given duration (header excluded)."""
    if duration_seconds <= 0:
        raise CodecError("duration must be positive")
    payload_bits = stream.header.n_frames * stream.header.bits_per_code
    return payload_bits / duration_seconds / 1000.0


def theoretical_bitrate_kbps(sample_rate, downsample, codebook_size) -> float:
    """frame_rate * log2(K) / 1000."""
    return sample_rate / downsample * _bits_for(codebook_size) / 1000.0
