import numpy as np
import pytest

from fingersense import GESTURES
from fingersense.audio import AudioClip
from fingersense.augment import SynthGestureSpec, synth_gesture
from fingersense.dataset import (DuplicateId, MissingFile, NoEventsFound,
                                 SampleRecord, SplitLeak, TooFewSamples,
                                 auto_segment, build_manifest, split,
                                 validate_manifest)

SR = 16000


def burst_recording(times, duration_s, amp=0.4, seed=0):
    """Quiet recording with 80 Hz tone bursts at the given peak times."""
    rng = np.random.default_rng(seed)
    samples = rng.normal(0, 0.001, int(duration_s * SR))
    n = int(0.06 * SR)
    t = np.arange(n) / SR
    burst = amp * np.hanning(n) * np.sin(2 * np.pi * 80 * t)
    for peak in times:
        start = int(peak * SR) - n // 2
        samples[start:start + n] += burst
    return AudioClip(samples, SR)


class TestAutoSegment:
    def test_ten_bursts_ten_clips(self):
        times = [2.0 + 2.0 * i for i in range(10)]
        rec = burst_recording(times, duration_s=24.0)
        clips = auto_segment(rec, "pinch")
        assert len(clips) == 10
        for (clip, label), peak in zip(clips, times):
            assert label == "pinch"
            assert len(clip.samples) == SR
            # the burst is inside its clip
            assert np.abs(clip.samples).max() > 0.1

    def test_close_pair_suppressed(self):
        # the weaker second burst 0.3 s after the first is inside the minimum
        # interval and must be suppressed
        rec = burst_recording([3.0], duration_s=8.0, amp=0.4)
        extra = burst_recording([3.3], duration_s=8.0, amp=0.2)
        rec = AudioClip(rec.samples + extra.samples, SR)
        clips = auto_segment(rec, "flick")
        assert len(clips) == 1

    def test_silence_raises(self):
        rec = AudioClip(np.zeros(5 * SR), SR)
        with pytest.raises(NoEventsFound):
            auto_segment(rec, "pinch")

    def test_edge_clipped_events_discarded(self):
        rec = burst_recording([0.2, 4.0], duration_s=8.0)
        clips = auto_segment(rec, "rub_up")
        assert len(clips) == 1  # the burst at 0.2 s cannot yield a full 1 s clip

    def test_count_matches_well_separated_bursts(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            n = int(rng.integers(2, 8))
            gaps = rng.uniform(0.65, 2.0, n)
            times = 1.5 + np.cumsum(gaps)
            rec = burst_recording(times, duration_s=float(times[-1] + 2.0),
                                  seed=int(rng.integers(1000)))
            clips = auto_segment(rec, "open_palm")
            assert len(clips) == n


class TestSplit:
    def make_records(self, counts):
        records = []
        for label, n in counts.items():
            for i in range(n):
                records.append(SampleRecord(id=f"{label}-{i}", path="x.wav",
                                            label=label))
        return records

    def test_100_single_class(self):
        records = self.make_records({"pinch": 100})
        split(records, seed=0)
        by = {s: sum(1 for r in records if r.split == s) for s in ("train", "val", "test")}
        assert by == {"train": 70, "val": 10, "test": 20}

    def test_table1_totals(self):
        counts = {"pinch": 537, "rub_up": 537, "rub_down": 537,
                  "flick": 536, "open_palm": 536}
        records = self.make_records(counts)
        split(records, seed=1)
        by = {s: sum(1 for r in records if r.split == s) for s in ("train", "val", "test")}
        assert by == {"train": 1878, "val": 268, "test": 537}

    def test_stratification_within_one_sample(self):
        counts = {g: n for g, n in zip(GESTURES, (53, 87, 120, 61, 79))}
        records = self.make_records(counts)
        split(records, seed=2)
        total = len(records)
        for frac, name in ((0.1, "val"), (0.2, "test")):
            for g, n in counts.items():
                got = sum(1 for r in records if r.label == g and r.split == name)
                assert abs(got - n * frac) <= 1.0 + 1e-9

    def test_deterministic(self):
        counts = {g: 40 for g in GESTURES}
        a = self.make_records(counts)
        b = self.make_records(counts)
        split(a, seed=3)
        split(b, seed=3)
        assert [r.split for r in a] == [r.split for r in b]

    def test_too_few(self):
        with pytest.raises(TooFewSamples):
            split(self.make_records({"pinch": 5}), seed=0)


class TestManifest:
    def write_corpus(self, tmp_path, per_class=3):
        records = []
        for label in GESTURES:
            for i in range(per_class):
                cid = f"{label}-{i}"
                clip = synth_gesture(SynthGestureSpec(class_id=label), seed=i)
                path = tmp_path / f"{cid}.wav"
                from fingersense.audio import save_wav
                save_wav(clip, path)
                records.append(SampleRecord(id=cid, path=str(path), label=label,
                                            split="train", source="synthetic"))
        return records

    def test_roundtrip_and_counts(self, tmp_path):
        records = self.write_corpus(tmp_path)
        path = tmp_path / "manifest.jsonl"
        build_manifest(records, path)
        manifest = validate_manifest(path)
        assert len(manifest.records) == len(records)
        assert manifest.counts()["synthetic"]["train"] == len(records)

    def test_duplicate_id(self, tmp_path):
        records = self.write_corpus(tmp_path)
        records.append(records[0])
        with pytest.raises(DuplicateId):
            build_manifest(records, tmp_path / "m.jsonl")

    def test_split_leak(self, tmp_path):
        records = self.write_corpus(tmp_path)
        child = SampleRecord(id="aug-0", path=records[0].path, label=records[0].label,
                             split="test", source="augmented",
                             parent_id=records[0].id, snr_db=10.0)
        build_manifest(records + [child], tmp_path / "m.jsonl")
        with pytest.raises(SplitLeak):
            validate_manifest(tmp_path / "m.jsonl")

    def test_missing_file(self, tmp_path):
        records = self.write_corpus(tmp_path)
        records.append(SampleRecord(id="ghost", path=str(tmp_path / "ghost.wav"),
                                    label="pinch", split="train", source="clean"))
        build_manifest(records, tmp_path / "m.jsonl")
        with pytest.raises(MissingFile):
            validate_manifest(tmp_path / "m.jsonl")
        validate_manifest(tmp_path / "m.jsonl", check_files=False)

    def test_augmented_needs_parent_and_snr(self, tmp_path):
        records = self.write_corpus(tmp_path)
        bad = SampleRecord(id="aug-1", path=records[0].path, label=records[0].label,
                           split="train", source="augmented")
        build_manifest(records + [bad], tmp_path / "m.jsonl")
        with pytest.raises(ValueError):
            validate_manifest(tmp_path / "m.jsonl")
