"""Clip-to-feature plumbing shared by training and evaluation.

Clips are stored raw; the band-pass runs here (zero initial state) so training
and the streaming path see the same signal chain.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import sosfilt

from . import GESTURES
from .features import MfccConfig, MfccExtractor
from . import filters

CENTER_OFFSET_S = 0.25  # 0.5 s window centered on the 1 s clip's midpoint

# Training views: the center window plus +/-0.1 s shifts. Detector crops land
# gestures off-center by up to ~0.1 s, and a model trained only on centered
# views mislabels shifted windows confidently enough to win the NMS argmax.
TRAIN_OFFSETS_S = (0.15, 0.25, 0.35)


def default_bandpass(sample_rate_hz: int = 16000) -> filters.BiquadCascade:
    return filters.design_bandpass(filters.DEFAULT_LOW_HZ, filters.DEFAULT_HIGH_HZ,
                                   filters.DEFAULT_PROTOTYPE_ORDER, sample_rate_hz)


class ClipFeaturizer:
    """Precomputed filter + MFCC tables; pure and thread-safe per call."""

    def __init__(self, cfg: MfccConfig = MfccConfig()):
        self.cfg = cfg
        self.extractor = MfccExtractor(cfg)
        self.cascade = default_bandpass(cfg.sample_rate_hz)
        self._sos = self.cascade.as_sos()

    def filter_clip(self, samples: np.ndarray) -> np.ndarray:
        return sosfilt(self._sos, np.asarray(samples, dtype=np.float64))

    def eval_windows(self, samples: np.ndarray):
        """Band-pass then all 11 sliding windows: [(t_offset, 40x44 matrix)]."""
        filtered = self.filter_clip(samples)
        return [(t, f.values) for t, f in self.extractor.segment_windows(filtered)]

    def train_window(self, samples: np.ndarray,
                     offset_s: float = CENTER_OFFSET_S) -> np.ndarray:
        """Band-pass then one window starting at offset_s into the clip."""
        filtered = self.filter_clip(samples)
        start = int(round(offset_s * self.cfg.sample_rate_hz))
        return self.extractor.mfcc(filtered[start:start + self.cfg.window_samples]).values


def training_arrays(labeled_clips, featurizer: ClipFeaturizer | None = None,
                    offsets=TRAIN_OFFSETS_S):
    """[(label, samples)] -> (X, y) with one training window per offset."""
    fz = featurizer or ClipFeaturizer()
    n = len(labeled_clips) * len(offsets)
    xs = np.empty((n, fz.cfg.n_coeffs, fz.cfg.n_frames))
    ys = np.empty(n, dtype=np.int64)
    i = 0
    for label, samples in labeled_clips:
        filtered = fz.filter_clip(samples)
        for offset_s in offsets:
            start = int(round(offset_s * fz.cfg.sample_rate_hz))
            xs[i] = fz.extractor.mfcc(
                filtered[start:start + fz.cfg.window_samples]).values
            ys[i] = GESTURES.index(label)
            i += 1
    return xs, ys


def mixed_training_arrays(records, featurizer: ClipFeaturizer | None = None):
    """records: (id, label, samples, source) tuples -> (X, y).

    Clean/synthetic clips contribute all three shift offsets; each augmented
    copy contributes one offset rotated by a stable hash of its id. Copies
    already multiply the corpus, so this keeps the epoch cost linear while
    every shift still appears under every noise condition.
    """
    import zlib

    fz = featurizer or ClipFeaturizer()
    plan = []
    for rid, label, samples, source in records:
        if source == "augmented":
            offset = TRAIN_OFFSETS_S[zlib.crc32(rid.encode()) % len(TRAIN_OFFSETS_S)]
            plan.append((label, samples, (offset,)))
        else:
            plan.append((label, samples, TRAIN_OFFSETS_S))

    n = sum(len(offsets) for _, _, offsets in plan)
    xs = np.empty((n, fz.cfg.n_coeffs, fz.cfg.n_frames))
    ys = np.empty(n, dtype=np.int64)
    i = 0
    for label, samples, offsets in plan:
        filtered = fz.filter_clip(samples)
        for offset_s in offsets:
            start = int(round(offset_s * fz.cfg.sample_rate_hz))
            xs[i] = fz.extractor.mfcc(
                filtered[start:start + fz.cfg.window_samples]).values
            ys[i] = GESTURES.index(label)
            i += 1
    return xs, ys
