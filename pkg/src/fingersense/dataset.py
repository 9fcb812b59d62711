"""Dataset bookkeeping: auto-segmentation, 70/10/20 splits, JSONL manifests.

Split hygiene is the load-bearing invariant: every augmented copy inherits its
parent's split, so no clean sample leaks across train/val/test through its
noisy derivatives.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import GESTURES
from .audio import AudioClip
from .events import noise_floor
from . import filters

SPLITS = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.7, 0.1, 0.2)


class NoEventsFound(ValueError):
    pass


class TooFewSamples(ValueError):
    pass


class DuplicateId(ValueError):
    pass


class SplitLeak(ValueError):
    """Augmented record assigned to a different split than its parent."""


class MissingFile(FileNotFoundError):
    pass


@dataclass
class SampleRecord:
    id: str
    path: str
    label: str
    split: str | None = None
    source: str = "clean"          # clean | augmented | synthetic
    parent_id: str | None = None
    snr_db: float | None = None
    recorder: str = "synth"

    def to_json(self) -> str:
        doc = {k: v for k, v in asdict(self).items() if v is not None}
        return json.dumps(doc)

    @staticmethod
    def from_json(line: str) -> "SampleRecord":
        return SampleRecord(**json.loads(line))


@dataclass
class DatasetManifest:
    records: list
    class_set: tuple = GESTURES
    created_with: dict = field(default_factory=dict)

    def by_split(self, split: str):
        return [r for r in self.records if r.split == split]

    def counts(self) -> dict:
        """{source: {split: count}} summary table."""
        table = {}
        for r in self.records:
            table.setdefault(r.source, {s: 0 for s in SPLITS})
            table[r.source][r.split] += 1
        return table


def auto_segment(recording: AudioClip, label: str,
                 k: float = 6.0, min_interval_s: float = 0.5,
                 clip_s: float = 1.0):
    """Cut a repeated-gesture recording into 1 s labeled clips.

    Peaks are found on the band-passed signal above an adaptive threshold
    (k x median absolute amplitude) with the given minimum spacing; clips are
    cut from the RAW recording centered on each peak. Events whose clip would
    run off either edge are discarded.
    """
    if label not in GESTURES:
        raise ValueError(f"unknown label {label!r}")
    sr = recording.sample_rate_hz
    cascade = filters.design_bandpass(10.0, 500.0, 4, sr)
    filtered = filters.apply(cascade, recording).samples

    floor = max(k * float(np.median(np.abs(filtered))), 0.01)
    mags = np.abs(filtered)
    above = mags > floor
    if not above.any():
        raise NoEventsFound(f"no peaks above {floor:.4f} in recording")

    # local maxima above threshold, then greedy amplitude-ordered suppression
    interior = np.zeros_like(above)
    interior[1:-1] = above[1:-1] & (mags[1:-1] >= mags[:-2]) & (mags[1:-1] >= mags[2:])
    peak_idx = np.flatnonzero(interior)
    order = peak_idx[np.lexsort((peak_idx, -mags[peak_idx]))]
    min_gap = int(round(min_interval_s * sr))
    kept = []
    for p in order:
        if all(abs(p - q) >= min_gap for q in kept):
            kept.append(p)
    kept.sort()

    half = int(round(clip_s * sr)) // 2
    clips = []
    for p in kept:
        start = p - half
        if start < 0 or start + 2 * half > len(recording.samples):
            continue  # edge-clipped events are discarded, never zero-padded
        clips.append(AudioClip(samples=recording.samples[start:start + 2 * half].copy(),
                               sample_rate_hz=sr))
    if not clips:
        raise NoEventsFound("all detected events were edge-clipped")
    return [(clip, label) for clip in clips]


def _apportion(count_by_class: dict, total_target: int, fraction: float) -> dict:
    """Hamilton largest-remainder apportionment of a split across classes."""
    quotas = {c: n * fraction for c, n in count_by_class.items()}
    base = {c: int(np.floor(q)) for c, q in quotas.items()}
    leftover = total_target - sum(base.values())
    remainders = sorted(count_by_class, key=lambda c: (-(quotas[c] - base[c]), c))
    for c in remainders[:leftover]:
        base[c] += 1
    return base


def split(records, fractions=DEFAULT_FRACTIONS, seed: int = 0,
          min_per_class: int = 10):
    """Assign train/val/test stratified per class, seeded.

    Global targets follow round(n * fraction) for val and test with the
    rounding residue going to train; per-class counts are apportioned by
    largest remainder so each class deviates by at most one sample.
    """
    by_class = {}
    for r in records:
        by_class.setdefault(r.label, []).append(r)
    for label, rs in by_class.items():
        if len(rs) < min_per_class:
            raise TooFewSamples(f"class {label}: {len(rs)} < {min_per_class}")

    n = len(records)
    val_target = int(round(n * fractions[1]))
    test_target = int(round(n * fractions[2]))
    counts = {c: len(rs) for c, rs in by_class.items()}
    val_quota = _apportion(counts, val_target, fractions[1])
    test_quota = _apportion(counts, test_target, fractions[2])

    rng = np.random.default_rng(seed)
    for label in sorted(by_class):
        rs = by_class[label]
        order = rng.permutation(len(rs))
        n_val, n_test = val_quota[label], test_quota[label]
        for pos, idx in enumerate(order):
            if pos < n_val:
                rs[idx].split = "val"
            elif pos < n_val + n_test:
                rs[idx].split = "test"
            else:
                rs[idx].split = "train"
    return records


def build_manifest(records, path, created_with: dict | None = None) -> None:
    """Write one JSON record per line; rejects duplicate ids up front."""
    seen = set()
    for r in records:
        if r.id in seen:
            raise DuplicateId(r.id)
        seen.add(r.id)
    with open(path, "w") as f:
        for r in records:
            f.write(r.to_json() + "\n")


def validate_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Load and validate a JSONL manifest; raises on any invariant violation."""
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(SampleRecord.from_json(line))

    seen = {}
    for r in records:
        if r.id in seen:
            raise DuplicateId(r.id)
        seen[r.id] = r
        if r.label not in GESTURES:
            raise ValueError(f"{r.id}: unknown label {r.label!r}")
        if r.split not in SPLITS:
            raise ValueError(f"{r.id}: bad split {r.split!r}")
        if r.source == "augmented":
            if r.parent_id is None or r.snr_db is None:
                raise ValueError(f"{r.id}: augmented record needs parent_id and snr_db")
        elif r.parent_id is not None:
            raise ValueError(f"{r.id}: {r.source} record must not have parent_id")

    for r in records:
        if r.parent_id is not None:
            parent = seen.get(r.parent_id)
            if parent is None:
                raise ValueError(f"{r.id}: parent {r.parent_id} not in manifest")
            if parent.split != r.split:
                raise SplitLeak(f"{r.id} in {r.split}, parent {parent.id} in {parent.split}")
            if parent.label != r.label:
                raise ValueError(f"{r.id}: label differs from parent")

    if check_files:
        for r in records:
            if not os.path.exists(r.path):
                raise MissingFile(r.path)

    return DatasetManifest(records=records)
