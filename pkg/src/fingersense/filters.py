"""Butterworth band-pass design and streaming application.

The gesture band sits at 10-500 Hz, so the cascade is realized as second-order
sections; a single high-order polynomial with a 10 Hz corner at 16 kHz would be
numerically fragile.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import sosfilt

from .audio import AudioClip

DEFAULT_LOW_HZ = 10.0
DEFAULT_HIGH_HZ = 500.0
DEFAULT_PROTOTYPE_ORDER = 4


class InvalidBand(ValueError):
    """Requested cutoffs are degenerate or outside (0, Nyquist)."""


class UnstableDesign(ArithmeticError):
    """Design produced a pole on or outside the unit circle."""


class RateMismatch(ValueError):
    """Clip sample rate differs from the rate the filter was designed for."""


@dataclass(frozen=True)
class BiquadCascade:
    """Immutable cascade of second-order sections (b0, b1, b2, a1, a2)."""

    sections: tuple
    design_meta: dict

    @property
    def sample_rate_hz(self) -> int:
        return self.design_meta["sample_rate_hz"]

    def as_sos(self) -> np.ndarray:
        """scipy-style (n, 6) array [b0, b1, b2, 1, a1, a2]."""
        rows = [(b0, b1, b2, 1.0, a1, a2) for b0, b1, b2, a1, a2 in self.sections]
        return np.array(rows, dtype=np.float64)

    def to_json(self) -> str:
        return json.dumps(
            {"sections": [list(s) for s in self.sections], "meta": self.design_meta}
        )

    @staticmethod
    def from_json(text: str) -> "BiquadCascade":
        doc = json.loads(text)
        return BiquadCascade(
            sections=tuple(tuple(s) for s in doc["sections"]),
            design_meta=doc["meta"],
        )


def design_bandpass(low_hz: float, high_hz: float,
                    prototype_order: int = DEFAULT_PROTOTYPE_ORDER,
                    sample_rate_hz: int = 16000) -> BiquadCascade:
    """Design a Butterworth band-pass as a biquad cascade.

    Analog low-pass prototype of the given even order, band-pass transformed,
    then discretized by the bilinear transform with frequency pre-warping.
    Gain is normalized to exactly 1 at the (warped) geometric center, so the
    -3 dB points land on the requested cutoffs.
    """
    nyquist = sample_rate_hz / 2.0
    if not (0.0 < low_hz < high_hz < nyquist):
        raise InvalidBand(f"need 0 < low < high < {nyquist}, got ({low_hz}, {high_hz})")
    if prototype_order < 2 or prototype_order % 2 != 0:
        raise InvalidBand(f"prototype_order must be even and >= 2, got {prototype_order}")

    fs = float(sample_rate_hz)
    n = prototype_order
    # Pre-warp so the bilinear map puts the band edges exactly on target.
    w1 = 2.0 * fs * np.tan(np.pi * low_hz / fs)
    w2 = 2.0 * fs * np.tan(np.pi * high_hz / fs)
    w0 = np.sqrt(w1 * w2)
    bw = w2 - w1

    k = np.arange(1, n + 1)
    proto_poles = np.exp(1j * np.pi * (2 * k + n - 1) / (2 * n))

    # Low-pass -> band-pass: each prototype pole p becomes the two roots of
    # s^2 - p*bw*s + w0^2.
    analog_poles = []
    for p in proto_poles:
        disc = np.sqrt((p * bw) ** 2 - 4.0 * w0 ** 2 + 0j)
        analog_poles.append((p * bw + disc) / 2.0)
        analog_poles.append((p * bw - disc) / 2.0)
    analog_poles = np.array(analog_poles)

    z_poles = (2.0 * fs + analog_poles) / (2.0 * fs - analog_poles)
    if np.any(np.abs(z_poles) >= 1.0 - 1e-12):
        raise UnstableDesign("pole on or outside the unit circle")

    upper = sorted(
        (zp for zp in z_poles if zp.imag > 1e-12),
        key=lambda zp: (zp.real, zp.imag),
    )
    if len(upper) != n:
        raise UnstableDesign("expected conjugate pole pairs only")

    # Digital frequency the analog design holds unit gain at (maps back to
    # ~sqrt(low*high) in Hz; pre-warp correction is tiny down here).
    w_center = 2.0 * np.arctan(w0 / (2.0 * fs))
    z1 = np.exp(1j * w_center)

    sections = []
    for zp in upper:
        a1 = -2.0 * zp.real
        a2 = abs(zp) ** 2
        # One zero at z=+1 and one at z=-1 per section: numerator z^2 - 1.
        num = z1 ** 2 - 1.0
        den = z1 ** 2 + a1 * z1 + a2
        gain = 1.0 / abs(num / den)
        sections.append((gain, 0.0, -gain, a1, a2))

    meta = {
        "low_hz": float(low_hz),
        "high_hz": float(high_hz),
        "prototype_order": int(prototype_order),
        "sample_rate_hz": int(sample_rate_hz),
    }
    return BiquadCascade(sections=tuple(sections), design_meta=meta)


def frequency_response(cascade: BiquadCascade, freqs_hz) -> np.ndarray:
    """|H| of the cascade evaluated on the unit circle at the given frequencies."""
    w = 2.0 * np.pi * np.asarray(freqs_hz, dtype=np.float64) / cascade.sample_rate_hz
    z_inv = np.exp(-1j * w)
    h = np.ones_like(z_inv, dtype=np.complex128)
    for b0, b1, b2, a1, a2 in cascade.sections:
        h *= (b0 + b1 * z_inv + b2 * z_inv ** 2) / (1.0 + a1 * z_inv + a2 * z_inv ** 2)
    return np.abs(h)


def apply(cascade: BiquadCascade, clip: AudioClip) -> AudioClip:
    """Causal single-pass filtering from zero state; output length == input length."""
    if clip.sample_rate_hz != cascade.sample_rate_hz:
        raise RateMismatch(
            f"clip at {clip.sample_rate_hz} Hz, filter designed for {cascade.sample_rate_hz} Hz"
        )
    out = sosfilt(cascade.as_sos(), clip.samples)
    return AudioClip(samples=out, sample_rate_hz=clip.sample_rate_hz)


@dataclass
class StreamFilter:
    """Per-stream filter state for incremental chunk-by-chunk filtering.

    One instance must not be shared between streams.
    """

    cascade: BiquadCascade
    _sos: np.ndarray = field(init=False, repr=False)
    _zi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._sos = self.cascade.as_sos()
        self._zi = np.zeros((self._sos.shape[0], 2))

    def process(self, chunk: np.ndarray) -> np.ndarray:
        out, self._zi = sosfilt(self._sos, np.asarray(chunk, dtype=np.float64), zi=self._zi)
        return out

    def reset(self) -> None:
        self._zi[:] = 0.0
