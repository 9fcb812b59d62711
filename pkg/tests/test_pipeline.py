import time

import numpy as np
import pytest

from fingersense import GESTURES
from fingersense.audio import AudioClip
from fingersense.augment import SynthGestureSpec, synth_gesture, synth_noise
from fingersense.evaluation import NmsConfig, false_alarm_profile
from fingersense.pipeline import (ActionMapping, GestureEvent, ModelMissing,
                                  OBJECT_VIEWER_MAPPING, Pipeline, ReplaySource,
                                  WEB_BROWSER_MAPPING, map_action, run_stream)

SR = 16000


def gesture_stream(labels_times, duration_s, noise_rms=0.0, seed=0):
    """Stream with zero-jitter gesture templates centered at given times."""
    samples = np.zeros(int(duration_s * SR))
    if noise_rms > 0:
        samples += synth_noise("pink", duration_s, seed=seed, rms=noise_rms).samples
    for label, t in labels_times:
        spec = SynthGestureSpec(class_id=label, amp_jitter_db=0,
                                duration_jitter=0, freq_jitter=0)
        clip = synth_gesture(spec, seed=seed)
        start = int(t * SR) - len(clip.samples) // 2
        samples[start:start + len(clip.samples)] += clip.samples
    return AudioClip(np.clip(samples, -1, 1), SR)


def event_of(seq=0, gesture="pinch", p=0.9):
    probs = np.full(5, (1 - p) / 4)
    probs[GESTURES.index(gesture)] = p
    return GestureEvent(t=1.0, gesture=gesture, p=p, probs=probs, seq=seq)


class TestMapAction:
    def test_object_viewer_table(self):
        expected = {"pinch": "zoom_in", "rub_up": "rotate_right",
                    "rub_down": "rotate_left", "flick": "zoom_out",
                    "open_palm": "default_view"}
        for gesture, action in expected.items():
            assert map_action(event_of(gesture=gesture), OBJECT_VIEWER_MAPPING) == action

    def test_web_browser_table(self):
        expected = {"pinch": "reserved", "rub_up": "scroll_up",
                    "rub_down": "scroll_down", "flick": "go_back",
                    "open_palm": "exit"}
        for gesture, action in expected.items():
            assert map_action(event_of(gesture=gesture), WEB_BROWSER_MAPPING) == action

    def test_mapping_must_be_total(self):
        with pytest.raises(ValueError):
            ActionMapping(context="object_viewer", map={"pinch": "zoom_in"})


class TestRunStream:
    def test_three_gestures_three_events(self, trained_model):
        schedule = [("pinch", 3.0), ("rub_up", 6.0), ("flick", 9.0)]
        clip = gesture_stream(schedule, duration_s=12.0)
        events = list(run_stream(ReplaySource(clip), trained_model))
        assert [e.gesture for e in events] == ["pinch", "rub_up", "flick"]
        for event, (_, t) in zip(events, schedule):
            assert abs(event.t - t) <= 0.3
            assert event.p >= 0.7
            assert event.probs.sum() == pytest.approx(1.0, abs=1e-5)
        assert [e.seq for e in events] == [0, 1, 2]

    def test_silent_stream_no_events_no_inference(self, trained_model):
        clip = AudioClip(np.zeros(8 * SR), SR)
        pipe = Pipeline(trained_model)
        events = list(run_stream(ReplaySource(clip), trained_model, pipeline=pipe))
        assert events == []
        assert pipe.stats.inferences == 0
        assert pipe.stats.triggers == 0

    def test_replay_determinism(self, trained_model):
        clip = gesture_stream([("rub_down", 3.0), ("open_palm", 6.0)], 9.0,
                              noise_rms=0.003, seed=4)
        runs = []
        for _ in range(2):
            events = list(run_stream(ReplaySource(clip), trained_model))
            runs.append([(e.seq, e.t, e.gesture, e.p) for e in events])
        assert runs[0] == runs[1]
        assert len(runs[0]) == 2

    def test_two_stage_economy(self, trained_model):
        clip = gesture_stream([("pinch", 3.0), ("flick", 6.0)], 9.0)
        pipe = Pipeline(trained_model)
        list(run_stream(ReplaySource(clip), trained_model, pipeline=pipe))
        assert pipe.stats.triggers >= 2
        assert pipe.stats.inferences <= 11 * pipe.stats.triggers

    def test_emission_latency_bound(self, trained_model):
        clip = gesture_stream([("rub_up", 4.0)], 8.0)
        pipe = Pipeline(trained_model)
        events = list(run_stream(ReplaySource(clip), trained_model, pipeline=pipe))
        assert len(events) == 1
        (seq, event_t, emitted_at) = pipe.stats.emissions[0]
        assert emitted_at - 4.0 <= 1.2  # window centering bound

    def test_model_required(self):
        with pytest.raises(ModelMissing):
            Pipeline(None)

    def test_realtime_factor_short(self, trained_model):
        clip = gesture_stream([("pinch", 3.0), ("rub_up", 6.0)], 10.0,
                              noise_rms=0.002, seed=1)
        pipe = Pipeline(trained_model)
        start = time.perf_counter()
        list(run_stream(ReplaySource(clip), trained_model, pipeline=pipe))
        elapsed = time.perf_counter() - start
        assert elapsed <= 2.0  # 10 s of audio well under real time

    def test_epsilon_change_between_chunks(self, trained_model):
        # lowering epsilon mid-stream makes later marginal events visible
        clip = gesture_stream([("pinch", 3.0)], 6.0)
        pipe = Pipeline(trained_model, nms_cfg=NmsConfig(epsilon=1.0,
                                                         secondary_epsilon=1.0))
        events = list(run_stream(ReplaySource(clip), trained_model, pipeline=pipe))
        assert events == []  # epsilon 1.0 blocks everything below certainty


class TestFalseAlarmProfile:
    def test_quiet_noise_never_triggers(self, trained_model):
        quiet = synth_noise("pink", 30.0, seed=3, rms=0.001)
        profile = false_alarm_profile(trained_model, quiet)
        assert profile.trigger_probs == []
        assert profile.alarms_at(0.7) == 0

    def test_epsilon_monotonicity_on_loud_noise(self, trained_model):
        loud = synth_noise("pink", 60.0, seed=4, rms=0.15)
        profile = false_alarm_profile(trained_model, loud)
        assert len(profile.trigger_probs) > 0
        assert profile.alarms_at(0.7) <= profile.alarms_at(0.6)

    def test_gesture_probs_exceed_noise_probs(self, trained_model):
        gestures = gesture_stream(
            [(GESTURES[i % 5], 3.0 + 2.0 * i) for i in range(6)],
            duration_s=17.0, noise_rms=0.01, seed=5)
        noise_only = synth_noise("pink", 60.0, seed=6, rms=0.15)
        gesture_profile = false_alarm_profile(trained_model, gestures)
        noise_profile = false_alarm_profile(trained_model, noise_only)
        assert len(gesture_profile.trigger_probs) >= 5
        assert len(noise_profile.trigger_probs) > 0
        assert (np.median(gesture_profile.trigger_probs)
                > np.median(noise_profile.trigger_probs))
