"""Noise mixing at controlled SNR plus the synthetic gesture/noise generators.

The synthetic class templates stand in for human recordings so the pipeline can
be exercised end to end at desk scale; they are deliberately simple waveforms
whose energy stays inside the 10-500 Hz gesture band.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import GESTURES, CANONICAL_RATE_HZ
from .audio import AudioClip


class NoiseTooShort(ValueError):
    pass


class SilentClean(ValueError):
    """Clean power below 1e-12: SNR is undefined."""


class UnknownClass(ValueError):
    pass


@dataclass
class AugmentConfig:
    ratio: int = 10
    snr_db_range: tuple = (0.0, 20.0)
    seed: int = 0
    # list of (noise_id, AudioClip), each >= 1 s at the canonical rate
    noise_corpus: list = field(default_factory=list)

    def __post_init__(self):
        if self.ratio < 1:
            raise ValueError("ratio must be >= 1")
        if self.snr_db_range[0] > self.snr_db_range[1]:
            raise ValueError("snr_db_range must be ordered")


@dataclass
class MixResult:
    clip: AudioClip
    noise_offset: int
    noise_scale: float
    clipped_fraction: float


def mix_at_snr_detailed(clean: AudioClip, noise: AudioClip, snr_db: float,
                        seed: int) -> MixResult:
    """Mix a random noise sub-clip under the clean signal at the requested SNR.

    The noise is scaled so 10*log10(P_clean / P_noise) = snr_db with powers
    measured over the clean clip's extent; the clean signal is left unscaled
    and the sum is hard-clipped to [-1, 1] (microphone saturation).
    """
    n = len(clean.samples)
    if len(noise.samples) < n:
        raise NoiseTooShort(f"noise {len(noise.samples)} < clean {n} samples")
    p_clean = float(np.mean(clean.samples ** 2))
    if p_clean < 1e-12:
        raise SilentClean("clean power below 1e-12, cannot define SNR")

    rng = np.random.default_rng(seed)
    offset = int(rng.integers(0, len(noise.samples) - n + 1))
    sub = noise.samples[offset:offset + n]
    p_noise = float(np.mean(sub ** 2))
    if p_noise <= 0.0:
        raise SilentClean("chosen noise slice is silent")
    scale = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))

    raw = clean.samples + scale * sub
    mixed = np.clip(raw, -1.0, 1.0)
    clipped = float(np.mean(raw != mixed))
    return MixResult(
        clip=AudioClip(samples=mixed, sample_rate_hz=clean.sample_rate_hz),
        noise_offset=offset, noise_scale=float(scale), clipped_fraction=clipped,
    )


def mix_at_snr(clean: AudioClip, noise: AudioClip, snr_db: float,
               seed: int) -> AudioClip:
    return mix_at_snr_detailed(clean, noise, snr_db, seed).clip


@dataclass
class AugmentedClip:
    id: str
    label: str
    clip: AudioClip
    source: str                    # clean | augmented
    parent_id: str | None = None
    snr_db: float | None = None
    noise_id: str | None = None


def augment_dataset(clean_set, cfg: AugmentConfig):
    """clean_set: list of (id, label, AudioClip). Returns originals plus
    cfg.ratio augmented copies per original, each with an independent
    (noise clip, offset, snr) draw derived from the master seed.
    """
    if not clean_set:
        raise ValueError("clean_set must be non-empty")
    if not cfg.noise_corpus:
        raise ValueError("noise corpus is empty")

    out = [AugmentedClip(id=cid, label=label, clip=clip, source="clean")
           for cid, label, clip in clean_set]
    for i, (cid, label, clip) in enumerate(clean_set):
        for r in range(cfg.ratio):
            # per-record seed so records can be generated independently
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, i, r]))
            noise_id, noise = cfg.noise_corpus[int(rng.integers(len(cfg.noise_corpus)))]
            snr_db = float(rng.uniform(*cfg.snr_db_range))
            mixed = mix_at_snr(clip, noise, snr_db, int(rng.integers(2 ** 31)))
            out.append(AugmentedClip(
                id=f"{cid}-aug{r}", label=label, clip=mixed, source="augmented",
                parent_id=cid, snr_db=snr_db, noise_id=noise_id,
            ))
    return out


# ---------------------------------------------------------------------------
# synthetic gesture templates

@dataclass
class SynthGestureSpec:
    class_id: str
    amp_jitter_db: float = 3.0
    duration_jitter: float = 0.2
    freq_jitter: float = 0.1
    base_amplitude: float = 0.5
    clip_s: float = 1.0

    def __post_init__(self):
        if self.class_id not in GESTURES:
            raise UnknownClass(f"unknown gesture class {self.class_id!r}")


def _hann_burst(t_len: int, sr: int, freq: float, amp: float) -> np.ndarray:
    t = np.arange(t_len) / sr
    return amp * np.hanning(t_len) * np.sin(2 * np.pi * freq * t)


def _chirp(duration_s: float, f0: float, f1: float, amp: float, sr: int) -> np.ndarray:
    n = int(round(duration_s * sr))
    t = np.arange(n) / sr
    phase = 2 * np.pi * (f0 * t + (f1 - f0) * t ** 2 / (2 * duration_s))
    return amp * np.hanning(n) * np.sin(phase)


def _damped_burst(duration_s: float, freq: float, amp: float, sr: int) -> np.ndarray:
    n = int(round(duration_s * sr))
    t = np.arange(n) / sr
    env = np.exp(-t / (duration_s / 4.0))
    attack = min(n, int(0.003 * sr))
    env[:attack] *= np.linspace(0.0, 1.0, attack)
    return amp * env * np.sin(2 * np.pi * freq * t)


def synth_gesture(spec: SynthGestureSpec, seed: int,
                  sample_rate_hz: int = CANONICAL_RATE_HZ) -> AudioClip:
    """Deterministic-under-seed 1 s clip with the gesture centered at 0.5 s.

    Class signatures (distinct burst counts / frequency trajectories):
      pinch     - one 60 ms damped burst near 80 Hz
      rub_up    - 300 ms upward chirp 50 -> 250 Hz
      rub_down  - 300 ms downward chirp 250 -> 50 Hz
      flick     - two 15 ms bursts around 300 Hz, 40 ms apart
      open_palm - two low-band (30-120 Hz) sub-bursts 150 ms apart
    """
    rng = np.random.default_rng(seed)
    sr = sample_rate_hz
    amp = spec.base_amplitude * 10.0 ** (rng.uniform(-spec.amp_jitter_db,
                                                     spec.amp_jitter_db) / 20.0)
    dur = 1.0 + rng.uniform(-spec.duration_jitter, spec.duration_jitter)
    frq = 1.0 + rng.uniform(-spec.freq_jitter, spec.freq_jitter)

    cls = spec.class_id
    if cls == "pinch":
        g = _damped_burst(0.060 * dur, 80.0 * frq, amp, sr)
    elif cls == "rub_up":
        g = _chirp(0.300 * dur, 50.0 * frq, 250.0 * frq, amp, sr)
    elif cls == "rub_down":
        g = _chirp(0.300 * dur, 250.0 * frq, 50.0 * frq, amp, sr)
    elif cls == "flick":
        burst_n = int(round(0.015 * dur * sr))
        gap_n = int(round(0.040 * dur * sr))
        g = np.zeros(gap_n + burst_n)
        g[:burst_n] += _hann_burst(burst_n, sr, 280.0 * frq, amp)
        g[gap_n:gap_n + burst_n] += _hann_burst(burst_n, sr, 320.0 * frq, amp)
    elif cls == "open_palm":
        b1 = _hann_burst(int(round(0.080 * dur * sr)), sr, 50.0 * frq, amp)
        b2 = _hann_burst(int(round(0.100 * dur * sr)), sr, 100.0 * frq, amp)
        gap_n = int(round(0.150 * dur * sr))
        g = np.zeros(gap_n + len(b2))
        g[:len(b1)] += b1
        g[gap_n:gap_n + len(b2)] += b2
    else:  # unreachable: spec validates
        raise UnknownClass(cls)

    clip_n = int(round(spec.clip_s * sr))
    out = np.zeros(clip_n)
    start = clip_n // 2 - len(g) // 2
    out[start:start + len(g)] = g[:clip_n - start]
    return AudioClip(samples=out, sample_rate_hz=sr)


def make_synth_corpus(per_class: int, seed: int,
                      sample_rate_hz: int = CANONICAL_RATE_HZ):
    """(id, label, AudioClip) triples: per_class clips for each gesture."""
    out = []
    for c, label in enumerate(GESTURES):
        for i in range(per_class):
            clip_seed = int(np.random.SeedSequence([seed, c, i]).generate_state(1)[0])
            clip = synth_gesture(SynthGestureSpec(class_id=label), clip_seed,
                                 sample_rate_hz)
            out.append((f"{label}-{i:05d}", label, clip))
    return out


# ---------------------------------------------------------------------------
# synthetic background noise

NOISE_KINDS = ("pink", "brown", "babble")


def synth_noise(kind: str, duration_s: float, seed: int,
                sample_rate_hz: int = CANONICAL_RATE_HZ,
                rms: float = 0.1) -> AudioClip:
    """Seeded colored noise: pink (-3 dB/octave), brown (-6), or babble-like
    (pink with a slow speech-rate amplitude modulation)."""
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    if kind not in NOISE_KINDS:
        raise ValueError(f"kind must be one of {NOISE_KINDS}")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate_hz))
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate_hz)
    shaping = np.zeros_like(freqs)
    nonzero = freqs > 0
    exponent = 0.5 if kind in ("pink", "babble") else 1.0
    shaping[nonzero] = 1.0 / freqs[nonzero] ** exponent
    samples = np.fft.irfft(spectrum * shaping, n=n)
    if kind == "babble":
        t = np.arange(n) / sample_rate_hz
        am = 1.0 + 0.6 * np.sin(2 * np.pi * rng.uniform(1.5, 3.5) * t
                                + rng.uniform(0, 2 * np.pi))
        samples = samples * am
    samples *= rms / np.sqrt(np.mean(samples ** 2))
    return AudioClip(samples=np.clip(samples, -1.0, 1.0),
                     sample_rate_hz=sample_rate_hz)


def make_noise_corpus(n_clips: int, duration_s: float, seed: int,
                      kinds=("pink",), sample_rate_hz: int = CANONICAL_RATE_HZ):
    """(noise_id, AudioClip) pairs cycling through the requested kinds."""
    out = []
    for i in range(n_clips):
        kind = kinds[i % len(kinds)]
        clip_seed = int(np.random.SeedSequence([seed, 1000 + i]).generate_state(1)[0])
        out.append((f"{kind}-{i:03d}",
                    synth_noise(kind, duration_s, clip_seed, sample_rate_hz)))
    return out
