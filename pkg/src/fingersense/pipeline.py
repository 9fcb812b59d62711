"""Real-time glue: source -> filter -> ring buffer -> detector -> classifier
-> NMS -> gesture events, plus the gesture-to-action mapping for the demos.

The two-stage economy is the point: on silence the model never runs, and each
stage-1 trigger costs at most 11 inferences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import GESTURES, CANONICAL_RATE_HZ
from .audio import AudioClip, RingBuffer
from .cnn import CnnModel, cast_model, predict_batch
from .events import DetectorConfig, EventDetector
from .evaluation import Detection, NmsConfig, nms
from .features import MfccConfig, MfccExtractor
from .filters import StreamFilter
from .windows import default_bandpass

ACTION_TOKENS = ("zoom_in", "zoom_out", "rotate_left", "rotate_right",
                 "default_view", "scroll_up", "scroll_down", "go_back",
                 "exit", "reserved")


class SourceLost(RuntimeError):
    pass


class ModelMissing(ValueError):
    pass


@dataclass
class GestureEvent:
    t: float
    gesture: str
    p: float
    probs: np.ndarray
    seq: int


@dataclass(frozen=True)
class ActionMapping:
    context: str
    map: dict

    def __post_init__(self):
        missing = set(GESTURES) - set(self.map)
        if missing:
            raise ValueError(f"mapping not total, missing {missing}")


OBJECT_VIEWER_MAPPING = ActionMapping(context="object_viewer", map={
    "pinch": "zoom_in",
    "rub_up": "rotate_right",
    "rub_down": "rotate_left",
    "flick": "zoom_out",
    "open_palm": "default_view",
})

WEB_BROWSER_MAPPING = ActionMapping(context="web_browser", map={
    "pinch": "reserved",
    "rub_up": "scroll_up",
    "rub_down": "scroll_down",
    "flick": "go_back",
    "open_palm": "exit",
})


def map_action(event: GestureEvent, mapping: ActionMapping) -> str:
    return mapping.map[event.gesture]


class ReplaySource:
    """Feeds a WAV clip through the pipeline in 0.1 s chunks, faster than real
    time but with stream timestamps preserved."""

    def __init__(self, clip: AudioClip, chunk_s: float = 0.1):
        if clip.sample_rate_hz != CANONICAL_RATE_HZ:
            raise SourceLost(
                f"replay needs {CANONICAL_RATE_HZ} Hz audio, got {clip.sample_rate_hz}"
            )
        self.clip = clip
        self.chunk = int(round(chunk_s * clip.sample_rate_hz))

    def chunks(self):
        samples = self.clip.samples
        for start in range(0, len(samples) - self.chunk + 1, self.chunk):
            yield samples[start:start + self.chunk]


class MicSource:
    """Optional microphone adapter behind the same chunk interface."""

    def __init__(self, chunk_s: float = 0.1, sample_rate_hz: int = CANONICAL_RATE_HZ):
        try:
            import sounddevice  # noqa: F401
        except ImportError as exc:
            raise SourceLost("no microphone backend available (pip install sounddevice)") from exc
        self.chunk_s = chunk_s
        self.sample_rate_hz = sample_rate_hz

    def chunks(self):
        import sounddevice as sd

        frames = int(self.chunk_s * self.sample_rate_hz)
        with sd.InputStream(samplerate=self.sample_rate_hz, channels=1,
                            dtype="float32") as stream:
            while True:
                data, _overflow = stream.read(frames)
                yield data[:, 0].astype(np.float64)


@dataclass
class PipelineStats:
    triggers: int = 0
    inferences: int = 0
    events_emitted: int = 0
    candidate_max_probs: list = field(default_factory=list)   # (t_start, max p)
    emissions: list = field(default_factory=list)             # (seq, event t, stream t)


class Pipeline:
    """Single-stream processing state; feed chunks, collect gesture events."""

    def __init__(self, model: CnnModel, det_cfg: DetectorConfig | None = None,
                 nms_cfg: NmsConfig | None = None,
                 mfcc_cfg: MfccConfig = MfccConfig(),
                 sample_rate_hz: int = CANONICAL_RATE_HZ):
        if model is None:
            raise ModelMissing("pipeline needs a trained model")
        self.model = cast_model(model, np.float32)
        self.det_cfg = det_cfg or DetectorConfig()
        self.nms_cfg = nms_cfg or NmsConfig()
        self.sample_rate_hz = sample_rate_hz

        self.filter = StreamFilter(default_bandpass(sample_rate_hz))
        self.ring = RingBuffer(sample_rate_hz=sample_rate_hz,
                               capacity_seconds=self.det_cfg.window_s)
        self.detector = EventDetector(self.det_cfg, sample_rate_hz)
        self.extractor = MfccExtractor(mfcc_cfg)
        self.stats = PipelineStats()
        self._seq = 0
        self._last_event_t = -np.inf
        self._last_scan_time = -np.inf

    @property
    def stream_time(self) -> float:
        return self.ring.total_pushed / self.sample_rate_hz

    def process_chunk(self, chunk: np.ndarray):
        """Filter incrementally, push to the ring, scan once per step."""
        filtered = self.filter.process(chunk)
        self.ring.push(filtered)
        events = []
        now = self.stream_time
        window_n = self.ring.capacity
        if (self.ring.filled >= window_n
                and now >= self._last_scan_time + self.det_cfg.step_s - 1e-9):
            self._last_scan_time = now
            candidate = self.detector.scan(self.ring.snapshot_last(window_n), now)
            if candidate is not None:
                self.stats.triggers += 1
                events = self._classify(candidate)
        return events

    def _classify(self, candidate):
        wins = self.extractor.segment_windows(candidate.samples)
        mats = np.asarray([w.values for _, w in wins], dtype=np.float32)
        probs = predict_batch(self.model, mats, chunk=len(mats))
        self.stats.inferences += len(mats)
        self.stats.candidate_max_probs.append(
            (candidate.t_start, float(probs.max()))
        )

        detections = []
        for (t_off, _), row in zip(wins, probs):
            k = int(row.argmax())
            detections.append(Detection(
                t=candidate.t_start + t_off + 0.25,   # window center time
                gesture=GESTURES[k], p=float(row[k]), probs=row,
            ))
        kept = nms(detections, self.nms_cfg)

        out = []
        for d in kept:
            # causal guard against double-firing across adjacent candidates:
            # an already-emitted event wins its suppression window
            if d.t - self._last_event_t <= self.nms_cfg.suppression_window_s:
                continue
            event = GestureEvent(t=d.t, gesture=d.gesture, p=d.p,
                                 probs=np.asarray(d.probs, dtype=np.float64),
                                 seq=self._seq)
            self._seq += 1
            self._last_event_t = d.t
            self.stats.events_emitted += 1
            self.stats.emissions.append((event.seq, event.t, self.stream_time))
            out.append(event)
        return out


def run_stream(source, model: CnnModel, det_cfg: DetectorConfig | None = None,
               nms_cfg: NmsConfig | None = None, pipeline: Pipeline | None = None):
    """Drive a chunk source through a Pipeline, yielding GestureEvents."""
    pipe = pipeline or Pipeline(model, det_cfg=det_cfg, nms_cfg=nms_cfg)
    for chunk in source.chunks():
        for event in pipe.process_chunk(chunk):
            yield event
