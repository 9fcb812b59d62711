"""Metrics, per-gesture ROC/AUC, non-maximum suppression, and the evaluation
harnesses (clip-level test evaluation, augmentation-ratio sweep, false alarms)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import GESTURES
from . import augment as aug
from . import cnn
from .windows import ClipFeaturizer, mixed_training_arrays

N_CLASSES = len(GESTURES)


class InconsistentCounts(ValueError):
    pass


class SingleClassLabels(ValueError):
    pass


class EmptySplit(ValueError):
    pass


class DuplicateRatio(ValueError):
    pass


@dataclass
class ConfusionCounts:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    @staticmethod
    def zeros() -> "ConfusionCounts":
        z = lambda: np.zeros(N_CLASSES, dtype=np.int64)
        return ConfusionCounts(tp=z(), fp=z(), fn=z(), tn=z())

    def total(self) -> int:
        return int(self.tp[0] + self.fp[0] + self.fn[0] + self.tn[0])

    def validate(self) -> None:
        totals = self.tp + self.fp + self.fn + self.tn
        if np.any(totals != totals[0]) or np.any(
            (self.tp < 0) | (self.fp < 0) | (self.fn < 0) | (self.tn < 0)
        ):
            raise InconsistentCounts(f"per-class totals differ: {totals}")


@dataclass
class MetricsReport:
    per_class: dict                 # label -> {precision, recall, f1, accuracy}
    macro_precision: float
    macro_recall: float
    macro_f1: float
    macro_accuracy: float           # mean of per-class one-vs-rest accuracies
    overall_accuracy: float         # fraction of clips classified correctly

    def row(self) -> str:
        return (f"P={self.macro_precision:.4f} R={self.macro_recall:.4f} "
                f"F1={self.macro_f1:.4f} ACC={self.overall_accuracy:.4f}")


@dataclass
class NmsConfig:
    epsilon: float = 0.7
    secondary_epsilon: float = 0.6
    suppression_window_s: float = 0.5

    def __post_init__(self):
        if not (0 < self.secondary_epsilon <= self.epsilon <= 1):
            raise ValueError("need 0 < secondary_epsilon <= epsilon <= 1")


@dataclass
class Detection:
    t: float
    gesture: str
    p: float
    probs: np.ndarray | None = None


def metrics(counts: ConfusionCounts) -> MetricsReport:
    """Per-class precision/recall/F1/accuracy plus macro averages.

    0/0 cases follow the usual conventions: undefined P or R is 0, and
    F1 is 0 when P + R = 0.
    """
    counts.validate()
    per_class = {}
    ps, rs, f1s, accs = [], [], [], []
    total = counts.total()
    for i, label in enumerate(GESTURES):
        tp, fp, fn, tn = (int(counts.tp[i]), int(counts.fp[i]),
                          int(counts.fn[i]), int(counts.tn[i]))
        p = tp / (tp + fp) if tp + fp > 0 else 0.0
        r = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        acc = (tp + tn) / total if total > 0 else 0.0
        per_class[label] = {"precision": p, "recall": r, "f1": f1, "accuracy": acc}
        ps.append(p); rs.append(r); f1s.append(f1); accs.append(acc)
    return MetricsReport(
        per_class=per_class,
        macro_precision=float(np.mean(ps)), macro_recall=float(np.mean(rs)),
        macro_f1=float(np.mean(f1s)), macro_accuracy=float(np.mean(accs)),
        # each clip is a TP for exactly its true class when predicted correctly
        overall_accuracy=float(counts.tp.sum() / total) if total else 0.0,
    )


def roc_auc(scores, labels):
    """ROC points (fpr, tpr, threshold) by sweeping unique scores, AUC by
    trapezoid; tied scores move together as one threshold group."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = int(len(labels) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise SingleClassLabels("need both positive and negative labels")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]

    points = [(0.0, 0.0, np.inf)]
    tp = fp = 0
    i = 0
    while i < len(sorted_scores):
        thresh = sorted_scores[i]
        while i < len(sorted_scores) and sorted_scores[i] == thresh:
            if sorted_labels[i]:
                tp += 1
            else:
                fp += 1
            i += 1
        points.append((fp / n_neg, tp / n_pos, float(thresh)))

    auc = 0.0
    for (f0, t0, _), (f1, t1, _) in zip(points, points[1:]):
        auc += (f1 - f0) * (t0 + t1) / 2.0
    return points, float(auc)


def nms(detections, cfg: NmsConfig):
    """Greedy cross-class suppression: drop p < epsilon, then repeatedly keep
    the highest-probability survivor and suppress everything within the
    window. Ties break on (earlier time, class order) so output never depends
    on input ordering. Returns kept detections time-ordered."""
    alive = [d for d in detections if d.p >= cfg.epsilon]
    order = sorted(alive, key=lambda d: (-d.p, d.t, GESTURES.index(d.gesture)))
    kept = []
    for d in order:
        if all(abs(d.t - k.t) > cfg.suppression_window_s for k in kept):
            kept.append(d)
    return sorted(kept, key=lambda d: (d.t, GESTURES.index(d.gesture)))


# ---------------------------------------------------------------------------
# clip-level evaluation

def classify_clips(model: cnn.CnnModel, clips, nms_cfg: NmsConfig,
                   featurizer: ClipFeaturizer | None = None):
    """clips: [(label, samples)]. Returns (verdicts, scores) where verdicts is
    a list of predicted labels (None = no surviving event) and scores is an
    (n_clips, 5) array of per-class max window probabilities (for ROC)."""
    fz = featurizer or ClipFeaturizer()
    fast = cnn.cast_model(model, np.float32)

    all_windows = []
    spans = []
    offsets = None
    for _, samples in clips:
        wins = fz.eval_windows(samples)
        if offsets is None:
            offsets = [t for t, _ in wins]
        spans.append((len(all_windows), len(all_windows) + len(wins)))
        all_windows.extend(w for _, w in wins)
    probs = cnn.predict_batch(fast, np.asarray(all_windows)) if all_windows else \
        np.zeros((0, N_CLASSES))

    verdicts = []
    scores = np.zeros((len(clips), N_CLASSES))
    for ci, (start, end) in enumerate(spans):
        clip_probs = probs[start:end]
        scores[ci] = clip_probs.max(axis=0)
        detections = []
        for wi in range(end - start):
            row = clip_probs[wi]
            k = int(row.argmax())
            detections.append(Detection(
                t=offsets[wi] + 0.25, gesture=GESTURES[k],
                p=float(row[k]), probs=row,
            ))
        events = nms(detections, nms_cfg)
        if events:
            best = max(events, key=lambda e: e.p)
            verdicts.append(best.gesture)
        else:
            verdicts.append(None)
    return verdicts, scores


def counts_from_verdicts(true_labels, verdicts) -> ConfusionCounts:
    counts = ConfusionCounts.zeros()
    for truth, pred in zip(true_labels, verdicts):
        ti = GESTURES.index(truth)
        pi = GESTURES.index(pred) if pred is not None else None
        for c in range(N_CLASSES):
            if c == ti and c == pi:
                counts.tp[c] += 1
            elif c == ti:
                counts.fn[c] += 1     # missed clips count against their class
            elif c == pi:
                counts.fp[c] += 1
            else:
                counts.tn[c] += 1
    return counts


def evaluate_clips(model, clips, nms_cfg: NmsConfig | None = None,
                   featurizer=None, with_roc: bool = True):
    """clips: [(label, samples)] -> (MetricsReport, ConfusionCounts, roc dict)."""
    if not clips:
        raise EmptySplit("no clips to evaluate")
    nms_cfg = nms_cfg or NmsConfig()
    verdicts, scores = classify_clips(model, clips, nms_cfg, featurizer)
    labels = [label for label, _ in clips]
    counts = counts_from_verdicts(labels, verdicts)
    report = metrics(counts)

    roc = {}
    if with_roc:
        for c, gesture in enumerate(GESTURES):
            binary = np.array([lbl == gesture for lbl in labels])
            if binary.any() and not binary.all():
                points, auc_value = roc_auc(scores[:, c], binary)
                roc[gesture] = {"points": points, "auc": auc_value}
    return report, counts, roc


def evaluate_model(model, manifest, split: str = "test",
                   nms_cfg: NmsConfig | None = None, clip_loader=None):
    """Evaluate on one split of a manifest; clip_loader maps a SampleRecord to
    samples (defaults to reading the record's WAV path)."""
    from .audio import load_wav

    records = manifest.by_split(split)
    if not records:
        raise EmptySplit(f"split {split!r} is empty")
    loader = clip_loader or (lambda rec: load_wav(rec.path).samples)
    clips = [(rec.label, loader(rec)) for rec in records]
    return evaluate_clips(model, clips, nms_cfg=nms_cfg)


# ---------------------------------------------------------------------------
# augmentation-ratio sweep

def ratio_sweep(clean_train, clean_val, clean_test, noise_corpus, ratios,
                train_cfg: cnn.TrainConfig, snr_db_range=(0.0, 20.0),
                test_ratio: int = 5, aug_seed: int = 11, featurizer=None):
    """Train one model per augmentation ratio (shared seeds) and evaluate each
    against the same clean and noisy test conditions.

    clean_*: lists of (id, label, AudioClip). Returns
    [(ratio, condition, MetricsReport)] with condition in {clean, noisy}.
    """
    ratios = list(ratios)
    if len(set(ratios)) != len(ratios):
        raise DuplicateRatio(f"ratios contain duplicates: {ratios}")
    if any(r < 1 for r in ratios):
        raise ValueError("ratios must be >= 1")

    fz = featurizer or ClipFeaturizer()
    # one fixed noisy test condition shared by every ratio
    test_aug = aug.augment_dataset(
        clean_test, aug.AugmentConfig(ratio=test_ratio, snr_db_range=snr_db_range,
                                      seed=aug_seed + 1, noise_corpus=noise_corpus))
    noisy_test = [(r.label, r.clip.samples) for r in test_aug if r.source == "augmented"]
    clean_test_clips = [(label, clip.samples) for _, label, clip in clean_test]

    rows = []
    for ratio in ratios:
        cfg = aug.AugmentConfig(ratio=ratio, snr_db_range=snr_db_range,
                                seed=aug_seed, noise_corpus=noise_corpus)
        train_recs = aug.augment_dataset(clean_train, cfg)
        val_recs = aug.augment_dataset(clean_val, cfg)
        train_x, train_y = mixed_training_arrays(
            [(r.id, r.label, r.clip.samples, r.source) for r in train_recs], fz)
        val_x, val_y = mixed_training_arrays(
            [(r.id, r.label, r.clip.samples, r.source) for r in val_recs], fz)

        model = cnn.new_model(seed=train_cfg.seed)
        model, _ = cnn.train(model, train_x, train_y, val_x, val_y, train_cfg)

        for condition, clips in (("clean", clean_test_clips), ("noisy", noisy_test)):
            report, _, _ = evaluate_clips(model, clips, featurizer=fz, with_roc=False)
            rows.append((ratio, condition, report))
    return rows


def sweep_to_csv(rows, path) -> None:
    with open(path, "w") as f:
        f.write("ratio,test,precision,recall,f1,accuracy\n")
        for ratio, condition, rep in rows:
            f.write(f"{ratio},{condition},{rep.macro_precision:.4f},"
                    f"{rep.macro_recall:.4f},{rep.macro_f1:.4f},"
                    f"{rep.overall_accuracy:.4f}\n")


# ---------------------------------------------------------------------------
# false-alarm analysis

@dataclass
class FalseAlarmProfile:
    trigger_probs: list
    duration_s: float
    histogram: tuple = field(default=None)
    alarms_per_hour: dict = field(default_factory=dict)

    def alarms_at(self, epsilon: float) -> int:
        return int(sum(1 for p in self.trigger_probs if p >= epsilon))


def false_alarm_profile(model, stream_clip, det_cfg=None, nms_cfg=None,
                        epsilons=(0.6, 0.7)) -> FalseAlarmProfile:
    """Run the full two-stage pipeline over a stream and profile every stage-1
    trigger's post-model max probability."""
    from .pipeline import Pipeline, ReplaySource  # late import, avoids cycle

    pipe = Pipeline(model, det_cfg=det_cfg, nms_cfg=nms_cfg)
    for chunk in ReplaySource(stream_clip).chunks():
        pipe.process_chunk(chunk)

    probs = [p for _, p in pipe.stats.candidate_max_probs]
    duration = len(stream_clip.samples) / stream_clip.sample_rate_hz
    hist = np.histogram(probs, bins=20, range=(0.0, 1.0)) if probs else \
        (np.zeros(20, dtype=int), np.linspace(0, 1, 21))
    profile = FalseAlarmProfile(
        trigger_probs=probs, duration_s=duration,
        histogram=(hist[0].tolist(), hist[1].tolist()),
    )
    hours = duration / 3600.0
    for eps in epsilons:
        profile.alarms_per_hour[eps] = profile.alarms_at(eps) / hours if hours > 0 else 0.0
    return profile
