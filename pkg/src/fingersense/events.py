"""Stage-1 event gate: scan a 2 s window every 0.1 s, fire on center-region peaks.

This stage exists to rule out obvious non-event periods cheaply, not to be
accurate; every trigger hands a fixed 1 s center crop to the classifier.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class InsufficientData(ValueError):
    """Not enough buffered audio to estimate the noise floor."""


@dataclass(frozen=True)
class DetectorConfig:
    window_s: float = 2.0
    step_s: float = 0.1
    center_lo_s: float = 0.5
    center_hi_s: float = 1.0
    crop_s: float = 1.0
    # adaptive mode: trigger at k * rolling median |amplitude|, floored;
    # absolute mode (peak_threshold set): trigger at that amplitude directly.
    k: float = 6.0
    peak_threshold: float | None = None
    absolute_floor: float = 0.01
    refractory_s: float = 0.5

    def __post_init__(self):
        if not (0 <= self.center_lo_s < self.center_hi_s <= self.window_s):
            raise ValueError("need 0 <= center_lo < center_hi <= window")
        if self.crop_s > self.window_s:
            raise ValueError("crop must fit in the window")
        if self.peak_threshold is None:
            if self.k <= 0:
                raise ValueError("adaptive multiplier k must be positive")
        elif not (0 < self.peak_threshold <= 1):
            raise ValueError("absolute peak_threshold must be in (0, 1]")


@dataclass
class CandidateSegment:
    samples: np.ndarray
    t_start: float
    peak_amplitude: float
    trigger_level: float


def noise_floor(samples: np.ndarray, sample_rate_hz: int = 16000) -> float:
    """Median absolute amplitude of the most recent 2 s (robust to short bursts)."""
    samples = np.asarray(samples)
    if len(samples) < int(0.5 * sample_rate_hz):
        raise InsufficientData(
            f"need >= 0.5 s of samples, got {len(samples) / sample_rate_hz:.3f} s"
        )
    recent = samples[-int(2.0 * sample_rate_hz):]
    return float(np.median(np.abs(recent)))


class EventDetector:
    """Holds the refractory state; scan once per step over buffer snapshots."""

    def __init__(self, cfg: DetectorConfig = DetectorConfig(),
                 sample_rate_hz: int = 16000):
        self.cfg = cfg
        self.sample_rate_hz = sample_rate_hz
        self.last_trigger_time = -np.inf

    def trigger_level(self, window: np.ndarray) -> float:
        if self.cfg.peak_threshold is not None:
            return self.cfg.peak_threshold
        return max(self.cfg.k * noise_floor(window, self.sample_rate_hz),
                   self.cfg.absolute_floor)

    def scan(self, window: np.ndarray, stream_time: float):
        """window: the latest window_s of filtered audio, ending at stream_time.

        Fires when the window's dominant peak (argmax of |sample|, earliest on
        ties) sits inside the half-open center region [lo, hi) above the
        trigger level, and the refractory period has strictly elapsed. The
        peak position transits the 0.5 s region in exactly 0.5 s of stream
        time, so an isolated burst of any width triggers exactly once.
        """
        sr = self.sample_rate_hz
        cfg = self.cfg
        window = np.asarray(window, dtype=np.float64)
        if len(window) != int(round(cfg.window_s * sr)):
            raise ValueError(f"expected {cfg.window_s} s window, got {len(window)} samples")

        if stream_time <= self.last_trigger_time + cfg.refractory_s:
            return None

        level = self.trigger_level(window)
        mags = np.abs(window)
        peak_idx = int(mags.argmax())
        lo = int(round(cfg.center_lo_s * sr))
        hi = int(round(cfg.center_hi_s * sr))
        if not (lo <= peak_idx < hi) or mags[peak_idx] <= level:
            return None

        crop_start = int(round((cfg.window_s - cfg.crop_s) / 2 * sr))
        crop = window[crop_start:crop_start + int(round(cfg.crop_s * sr))].copy()
        self.last_trigger_time = stream_time
        return CandidateSegment(
            samples=crop,
            t_start=stream_time - cfg.window_s + crop_start / sr,
            peak_amplitude=float(np.abs(crop).max()),
            trigger_level=float(level),
        )

    def reset(self) -> None:
        self.last_trigger_time = -np.inf
