"""Mono audio I/O: WAV load/save, linear resampling, and the streaming ring buffer."""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from . import CANONICAL_RATE_HZ

INT16_FULL_SCALE = 32768.0


class UnsupportedFormat(ValueError):
    """WAV file uses a codec or layout we do not read (compressed, >2ch, odd depth)."""


class CorruptHeader(ValueError):
    """File is not a parseable RIFF/WAVE container."""


class ChunkTooLarge(ValueError):
    """Pushed chunk exceeds the ring buffer capacity."""


@dataclass
class AudioClip:
    """Mono PCM samples in [-1, 1] plus their sample rate."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        self.samples = np.asarray(self.samples, dtype=np.float64)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def __len__(self) -> int:
        return len(self.samples)


def load_wav(path) -> AudioClip:
    """Read a RIFF/WAVE file (PCM int16 or float32, 1-2 channels) as mono.

    Stereo is averaged to mono; int16 is scaled to [-1, 1] by 1/32768.
    """
    with open(path, "rb") as f:
        data = f.read()

    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise CorruptHeader(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if size < 16:
                raise CorruptHeader(f"{path}: fmt chunk truncated")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            if len(body) < size:
                raise CorruptHeader(f"{path}: data chunk truncated")
            payload = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None or payload is None:
        raise CorruptHeader(f"{path}: missing fmt or data chunk")

    audio_format, n_channels, rate, _byte_rate, _block_align, bits = fmt
    if n_channels not in (1, 2):
        raise UnsupportedFormat(f"{path}: {n_channels} channels (want 1 or 2)")
    if audio_format == 1 and bits == 16:
        raw = np.frombuffer(payload, dtype="<i2").astype(np.float64)
        samples = raw / INT16_FULL_SCALE
    elif audio_format == 3 and bits == 32:
        samples = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedFormat(
            f"{path}: format code {audio_format} at {bits} bits is not PCM16 or float32"
        )

    if n_channels == 2:
        samples = samples.reshape(-1, 2).mean(axis=1)

    return AudioClip(samples=samples, sample_rate_hz=int(rate))


def save_wav(clip: AudioClip, path, float32: bool = False) -> None:
    """Write a mono WAV file, PCM int16 by default (float32 optional)."""
    if float32:
        payload = np.asarray(clip.samples, dtype="<f4").tobytes()
        audio_format, bits = 3, 32
    else:
        scaled = np.round(np.asarray(clip.samples) * INT16_FULL_SCALE)
        payload = np.clip(scaled, -32768, 32767).astype("<i2").tobytes()
        audio_format, bits = 1, 16

    block_align = bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, audio_format, 1, clip.sample_rate_hz,
        clip.sample_rate_hz * block_align, block_align, bits,
        b"data", len(payload),
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def resample_linear(clip: AudioClip, target_hz: int) -> AudioClip:
    """Resample by linear interpolation onto a uniform grid at target_hz.

    Sufficient here because everything of interest sits far below Nyquist.
    """
    if target_hz <= 0:
        raise ValueError("target_hz must be positive")
    if target_hz == clip.sample_rate_hz:
        return AudioClip(samples=clip.samples.copy(), sample_rate_hz=target_hz)

    n_in = len(clip.samples)
    n_out = int(round(n_in * target_hz / clip.sample_rate_hz))
    positions = np.arange(n_out) * (clip.sample_rate_hz / target_hz)
    out = np.interp(positions, np.arange(n_in), clip.samples)
    return AudioClip(samples=out, sample_rate_hz=target_hz)


@dataclass
class RingBuffer:
    """Fixed 2-second circular sample store: one writer, snapshot readers.

    Snapshots are value copies taken under a short lock, contiguous in time order.
    """

    sample_rate_hz: int = CANONICAL_RATE_HZ
    capacity_seconds: float = 2.0
    _store: np.ndarray = field(init=False, repr=False)
    _total: int = field(init=False, default=0)
    _lock: threading.Lock = field(init=False, repr=False)

    def __post_init__(self):
        self.capacity = int(round(self.capacity_seconds * self.sample_rate_hz))
        self._store = np.zeros(self.capacity, dtype=np.float64)
        self._lock = threading.Lock()

    @property
    def total_pushed(self) -> int:
        return self._total

    @property
    def filled(self) -> int:
        return min(self._total, self.capacity)

    def push(self, chunk: np.ndarray) -> None:
        chunk = np.asarray(chunk, dtype=np.float64)
        n = len(chunk)
        if n > self.capacity:
            raise ChunkTooLarge(f"chunk of {n} samples exceeds capacity {self.capacity}")
        if n == 0:
            return
        with self._lock:
            head = self._total % self.capacity
            first = min(n, self.capacity - head)
            self._store[head:head + first] = chunk[:first]
            if first < n:
                self._store[:n - first] = chunk[first:]
            self._total += n

    def snapshot_last(self, n: int) -> np.ndarray:
        """Copy of the most recent n samples, oldest first."""
        with self._lock:
            if n > self.filled:
                raise ValueError(f"only {self.filled} samples available, asked for {n}")
            head = self._total % self.capacity
            start = (head - n) % self.capacity
            if start + n <= self.capacity:
                return self._store[start:start + n].copy()
            first = self.capacity - start
            return np.concatenate([self._store[start:], self._store[:n - first]])
