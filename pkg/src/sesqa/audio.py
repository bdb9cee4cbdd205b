"""Mono raw-audio frames and WAV PCM I/O.

Everything downstream works on 32-bit float mono buffers at a fixed rate
(canonically 48 kHz). WAV reading handles 16/24-bit integer PCM and 32-bit
float, little-endian RIFF only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

CANONICAL_RATE = 48000

# Silence gate: a frame is usable when at least half of its
# 20 ms windows have RMS above -45 dBFS.
SILENCE_WINDOW_S = 0.020
SILENCE_RMS_DBFS = -45.0
SILENCE_MIN_ACTIVE = 0.5


class AudioFormatError(ValueError):
    """Malformed or unsupported WAV data."""


class DegenerateInputError(ValueError):
    """Input signal carries no usable content (e.g. all zeros)."""


@dataclass(frozen=True)
class AudioFrame:
    """Immutable mono audio buffer."""

    samples: np.ndarray
    sample_rate: int
    source_id: str = ""

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float32)
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if s.ndim != 1:
            raise ValueError("AudioFrame is mono; got shape %r" % (s.shape,))
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def with_samples(self, samples, source_id=None) -> "AudioFrame":
        return AudioFrame(samples, self.sample_rate,
                          self.source_id if source_id is None else source_id)


@dataclass(frozen=True)
class FrameSlice:
    offset_samples: int
    length_samples: int

    def __post_init__(self):
        if self.offset_samples < 0:
            raise ValueError("offset_samples must be >= 0")
        if self.length_samples <= 0:
            raise ValueError("length_samples must be > 0")


def _find_chunk(data: bytes, fourcc: bytes, start: int) -> tuple[int, int]:
    """Return (payload offset, payload size) of the first `fourcc` chunk."""
    pos = start
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        if cid == fourcc:
            return pos + 8, size
        pos += 8 + size + (size & 1)
    raise AudioFormatError("missing %r chunk" % fourcc)


def read_wav(path) -> AudioFrame:
    """Read a RIFF WAV file as a mono float frame.

    Integer PCM is scaled by 2^(bits-1); multichannel input is averaged
    down to mono. Raises AudioFormatError for malformed headers or
    unsupported encodings.
    """
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise AudioFormatError("not a RIFF/WAVE file: %s" % path)

    fmt_off, fmt_size = _find_chunk(data, b"fmt ", 12)
    if fmt_size < 16:
        raise AudioFormatError("truncated fmt chunk")
    fmt_tag, channels, rate, _, block_align, bits = struct.unpack_from(
        "<HHIIHH", data, fmt_off)
    if fmt_tag == 0xFFFE:  # WAVE_FORMAT_EXTENSIBLE: sub-format GUID leads with the tag
        if fmt_size < 40:
            raise AudioFormatError("truncated extensible fmt chunk")
        (fmt_tag,) = struct.unpack_from("<H", data, fmt_off + 24)
    if channels < 1:
        raise AudioFormatError("zero channels")

    data_off, data_size = _find_chunk(data, b"data", 12)
    raw = data[data_off:data_off + data_size]
    if len(raw) < data_size:
        raise AudioFormatError("data chunk shorter than declared")

    if fmt_tag == 1 and bits == 16:
        x = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 2.0 ** 15
    elif fmt_tag == 1 and bits == 24:
        b = np.frombuffer(raw[: (len(raw) // 3) * 3], dtype=np.uint8)
        b = b.reshape(-1, 3)
        ints = (b[:, 0].astype(np.int32)
                | (b[:, 1].astype(np.int32) << 8)
                | (b[:, 2].astype(np.int32) << 16))
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        x = ints.astype(np.float32) / 2.0 ** 23
    elif fmt_tag == 3 and bits == 32:
        x = np.frombuffer(raw, dtype="<f4").astype(np.float32)
    else:
        raise AudioFormatError(
            "unsupported encoding: format tag %d, %d bits" % (fmt_tag, bits))

    if channels > 1:
        x = x[: (len(x) // channels) * channels]
        x = x.reshape(-1, channels).mean(axis=1)
    return AudioFrame(x, rate, source_id=str(path))


def write_wav(frame: AudioFrame, path, bit_depth="32f") -> None:
    """Write `frame` as WAV PCM. bit_depth is one of 16, 24, "32f"."""
    x = np.asarray(frame.samples, dtype=np.float32)
    if bit_depth == "32f" or bit_depth == 32:
        fmt_tag, bits = 3, 32
        payload = x.astype("<f4").tobytes()
    elif bit_depth == 16:
        if np.max(np.abs(x), initial=0.0) > 1.0:
            raise ValueError("samples exceed [-1, 1]; peak-normalize first")
        fmt_tag, bits = 1, 16
        q = np.clip(np.round(x * 2.0 ** 15), -(1 << 15), (1 << 15) - 1)
        payload = q.astype("<i2").tobytes()
    elif bit_depth == 24:
        if np.max(np.abs(x), initial=0.0) > 1.0:
            raise ValueError("samples exceed [-1, 1]; peak-normalize first")
        fmt_tag, bits = 1, 24
        q = np.clip(np.round(x * 2.0 ** 23), -(1 << 23), (1 << 23) - 1)
        q = q.astype(np.int32)
        b = np.empty((len(q), 3), dtype=np.uint8)
        b[:, 0] = q & 0xFF
        b[:, 1] = (q >> 8) & 0xFF
        b[:, 2] = (q >> 16) & 0xFF
        payload = b.tobytes()
    else:
        raise ValueError("bit_depth must be 16, 24 or '32f'")

    byte_rate = frame.sample_rate * bits // 8
    block_align = bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, 1, frame.sample_rate,
                      byte_rate, block_align, bits)
    body = (b"WAVE"
            + b"fmt " + struct.pack("<I", len(fmt)) + fmt
            + b"data" + struct.pack("<I", len(payload)) + payload)
    if len(payload) & 1:
        body += b"\x00"
    with open(path, "wb") as f:
        f.write(b"RIFF" + struct.pack("<I", len(body)) + body)


def peak_normalize(frame: AudioFrame) -> AudioFrame:
    """Scale so that max |sample| is exactly 1."""
    peak = float(np.max(np.abs(frame.samples), initial=0.0))
    if peak == 0.0:
        raise DegenerateInputError("cannot peak-normalize an all-zero frame")
    return frame.with_samples(frame.samples / peak)


def extract_slice(frame: AudioFrame, sl: FrameSlice) -> AudioFrame:
    if sl.offset_samples + sl.length_samples > len(frame.samples):
        raise IndexError(
            "slice [%d, %d) out of bounds for frame of %d samples"
            % (sl.offset_samples, sl.offset_samples + sl.length_samples,
               len(frame.samples)))
    return frame.with_samples(
        frame.samples[sl.offset_samples:sl.offset_samples + sl.length_samples])


def is_usable(samples: np.ndarray, sample_rate: int) -> bool:
    """Silence gate for frame sampling: enough 20 ms windows above -45 dBFS."""
    win = max(1, int(round(SILENCE_WINDOW_S * sample_rate)))
    n = len(samples) // win
    if n == 0:
        return False
    chunks = np.asarray(samples[: n * win], dtype=np.float64).reshape(n, win)
    rms = np.sqrt(np.mean(chunks ** 2, axis=1))
    thresh = 10.0 ** (SILENCE_RMS_DBFS / 20.0)
    return np.mean(rms > thresh) >= SILENCE_MIN_ACTIVE
