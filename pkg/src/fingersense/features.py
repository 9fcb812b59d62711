"""MFCC extraction: 0.5 s windows become 40x44 standardized coefficient matrices.

Frame/hop/FFT sizes are pinned so a 0.5 s window at 16 kHz yields exactly 44
frames; the mel range stops at 1000 Hz because the signal is band-limited to
500 Hz upstream and spreading 40 filters over 0-8 kHz would waste resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class WrongWindowLength(ValueError):
    """Input window is not exactly one analysis window long."""


class WrongSegmentLength(ValueError):
    """Candidate segment is not exactly 1.0 s long."""


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MfccConfig:
    sample_rate_hz: int = 16000
    frame_len: int = 400          # 25 ms
    hop: int = 176                # 11 ms -> floor((8000-400)/176)+1 = 44 frames
    fft_size: int = 512
    n_mels: int = 40
    mel_lo_hz: float = 10.0
    mel_hi_hz: float = 1000.0
    n_coeffs: int = 40
    log_floor: float = 1e-10
    window_s: float = 0.5
    step_s: float = 0.05

    def __post_init__(self):
        if self.n_coeffs > self.n_mels:
            raise ValueError("n_coeffs must be <= n_mels")
        if not (self.mel_lo_hz < self.mel_hi_hz <= self.sample_rate_hz / 2):
            raise ValueError("mel range must satisfy lo < hi <= Nyquist")
        if self.fft_size < self.frame_len:
            raise ValueError("fft_size must be >= frame_len")

    @property
    def window_samples(self) -> int:
        return int(round(self.window_s * self.sample_rate_hz))

    @property
    def n_frames(self) -> int:
        return (self.window_samples - self.frame_len) // self.hop + 1


@dataclass
class MfccFrame:
    """One 40x44 coefficient matrix plus its offset within the parent segment."""

    values: np.ndarray
    t_start: float = 0.0


def mel_filterbank(cfg: MfccConfig) -> np.ndarray:
    """(n_mels, n_bins) triangular filters on the mel scale, unit peak each."""
    n_bins = cfg.fft_size // 2 + 1
    bin_hz = np.arange(n_bins) * cfg.sample_rate_hz / cfg.fft_size
    edges_mel = np.linspace(hz_to_mel(cfg.mel_lo_hz), hz_to_mel(cfg.mel_hi_hz), cfg.n_mels + 2)
    edges_hz = mel_to_hz(edges_mel)

    bank = np.zeros((cfg.n_mels, n_bins))
    for i in range(cfg.n_mels):
        lo, mid, hi = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        rising = (bin_hz - lo) / (mid - lo)
        falling = (hi - bin_hz) / (hi - mid)
        bank[i] = np.clip(np.minimum(rising, falling), 0.0, None)
    return bank


def dct_ii_orthonormal(n: int) -> np.ndarray:
    """(n, n) orthonormal DCT-II matrix; its transpose is the inverse."""
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    basis = np.cos(np.pi * k * (2 * m + 1) / (2 * n)) * np.sqrt(2.0 / n)
    basis[0] *= np.sqrt(0.5)
    return basis


class MfccExtractor:
    """Precomputes the window, filter bank, and DCT basis; then pure per call."""

    def __init__(self, cfg: MfccConfig = MfccConfig()):
        self.cfg = cfg
        self._window = np.hamming(cfg.frame_len)
        self._bank = mel_filterbank(cfg)
        self._dct = dct_ii_orthonormal(cfg.n_mels)[:cfg.n_coeffs]

    def log_mel(self, window: np.ndarray) -> np.ndarray:
        """(n_mels, n_frames) log mel energies, before DCT and standardization."""
        cfg = self.cfg
        window = np.asarray(window, dtype=np.float64)
        if len(window) != cfg.window_samples:
            raise WrongWindowLength(
                f"need {cfg.window_samples} samples, got {len(window)}"
            )
        idx = np.arange(cfg.n_frames)[:, None] * cfg.hop + np.arange(cfg.frame_len)[None, :]
        frames = window[idx] * self._window
        spectrum = np.fft.rfft(frames, n=cfg.fft_size, axis=1)
        power = (spectrum.real ** 2 + spectrum.imag ** 2)
        mel = self._bank @ power.T
        return np.log(np.maximum(mel, cfg.log_floor))

    def mfcc(self, window: np.ndarray) -> MfccFrame:
        """Full transform: log-mel -> DCT-II -> per-coefficient standardization."""
        coeffs = self._dct @ self.log_mel(window)
        mean = coeffs.mean(axis=1, keepdims=True)
        var = coeffs.var(axis=1, keepdims=True)
        std = np.sqrt(np.maximum(var, 1e-8))
        return MfccFrame(values=(coeffs - mean) / std)

    def segment_windows(self, segment_samples: np.ndarray):
        """Slide a 0.5 s window at 0.05 s steps over a 1.0 s segment: 11 frames."""
        cfg = self.cfg
        segment_samples = np.asarray(segment_samples, dtype=np.float64)
        expected = int(round(1.0 * cfg.sample_rate_hz))
        if len(segment_samples) != expected:
            raise WrongSegmentLength(
                f"need {expected} samples (1.0 s), got {len(segment_samples)}"
            )
        step = int(round(cfg.step_s * cfg.sample_rate_hz))
        out = []
        for start in range(0, expected - cfg.window_samples + step, step):
            t_offset = start / cfg.sample_rate_hz
            frame = self.mfcc(segment_samples[start:start + cfg.window_samples])
            frame.t_start = t_offset
            out.append((t_offset, frame))
        return out
