import numpy as np
import pytest

from fingersense import GESTURES
from fingersense.evaluation import (ConfusionCounts, Detection, DuplicateRatio,
                                    EmptySplit, InconsistentCounts, NmsConfig,
                                    SingleClassLabels, classify_clips,
                                    counts_from_verdicts, evaluate_clips,
                                    metrics, nms, roc_auc)


def counts_for(tp, fp, fn, tn, cls=0):
    c = ConfusionCounts.zeros()
    total = tp + fp + fn + tn
    for i in range(5):
        if i == cls:
            c.tp[i], c.fp[i], c.fn[i], c.tn[i] = tp, fp, fn, tn
        else:
            c.tn[i] = total
    return c


class TestMetrics:
    def test_hand_example(self):
        report = metrics(counts_for(9, 1, 3, 87))
        row = report.per_class[GESTURES[0]]
        assert row["precision"] == pytest.approx(0.9)
        assert row["recall"] == pytest.approx(0.75)
        assert row["f1"] == pytest.approx(0.8182, abs=1e-4)
        assert row["accuracy"] == pytest.approx(0.96)

    def test_perfect(self):
        c = ConfusionCounts.zeros()
        c.tp[:] = 10
        c.tn[:] = 40
        report = metrics(c)
        assert report.macro_precision == report.macro_recall == 1.0
        assert report.macro_f1 == report.macro_accuracy == 1.0
        assert report.overall_accuracy == 1.0

    def test_degenerate_zero_conventions(self):
        report = metrics(counts_for(0, 0, 5, 95))
        row = report.per_class[GESTURES[0]]
        assert row["precision"] == 0.0
        assert row["recall"] == 0.0
        assert row["f1"] == 0.0

    def test_inconsistent_counts(self):
        c = counts_for(9, 1, 3, 87)
        c.tn[2] += 1
        with pytest.raises(InconsistentCounts):
            metrics(c)

    def test_matches_naive_oracle_on_random_tables(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(1, 200))
            truths = rng.integers(0, 5, n)
            preds = rng.integers(0, 6, n)  # 5 = miss
            verdicts = [GESTURES[p] if p < 5 else None for p in preds]
            labels = [GESTURES[t] for t in truths]
            counts = counts_from_verdicts(labels, verdicts)
            report = metrics(counts)
            # independent naive evaluator
            for i, g in enumerate(GESTURES):
                tp = sum(1 for t, p in zip(truths, preds) if t == i and p == i)
                fp = sum(1 for t, p in zip(truths, preds) if t != i and p == i)
                fn = sum(1 for t, p in zip(truths, preds) if t == i and p != i)
                tn = n - tp - fp - fn
                prec = tp / (tp + fp) if tp + fp else 0.0
                rec = tp / (tp + fn) if tp + fn else 0.0
                f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
                row = report.per_class[g]
                assert row["precision"] == pytest.approx(prec)
                assert row["recall"] == pytest.approx(rec)
                assert row["f1"] == pytest.approx(f1)
                assert row["accuracy"] == pytest.approx((tp + tn) / n)
            correct = sum(1 for t, p in zip(truths, preds) if t == p)
            assert report.overall_accuracy == pytest.approx(correct / n)


class TestRocAuc:
    def test_perfect_separation(self):
        _, auc = roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
        assert auc == 1.0

    def test_pair_count_oracle(self):
        # AUC equals the Mann-Whitney pair statistic
        rng = np.random.default_rng(1)
        for _ in range(30):
            n = int(rng.integers(4, 60))
            scores = np.round(rng.random(n), 2)  # rounding forces ties
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                continue
            _, auc = roc_auc(scores, labels)
            pos = scores[labels == 1]
            neg = scores[labels == 0]
            wins = (pos[:, None] > neg[None, :]).sum()
            ties = (pos[:, None] == neg[None, :]).sum()
            expected = (wins + 0.5 * ties) / (len(pos) * len(neg))
            assert auc == pytest.approx(expected, abs=1e-12)

    def test_hand_enumerated_four_points(self):
        _, auc = roc_auc([0.9, 0.8, 0.4, 0.3], [1, 1, 0, 0])
        assert auc == 1.0
        # pair-count oracle: labels [1,0,1,0] -> 3 of 4 pairs correct
        _, auc = roc_auc([0.9, 0.8, 0.4, 0.3], [1, 0, 1, 0])
        assert auc == pytest.approx(0.75)
        # labels [0,1,1,0] -> 2 of 4 pairs correct
        _, auc = roc_auc([0.9, 0.8, 0.4, 0.3], [0, 1, 1, 0])
        assert auc == pytest.approx(0.5)

    def test_random_scores_near_half(self):
        rng = np.random.default_rng(2)
        scores = rng.random(4000)
        labels = rng.integers(0, 2, 4000)
        _, auc = roc_auc(scores, labels)
        assert auc == pytest.approx(0.5, abs=0.05)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(3)
        scores = rng.random(300)
        labels = rng.integers(0, 2, 300)
        _, base = roc_auc(scores, labels)
        for transform in (np.exp, lambda s: s ** 3, lambda s: 5 * s - 2):
            _, changed = roc_auc(transform(scores), labels)
            assert changed == pytest.approx(base, abs=1e-12)

    def test_single_class_raises(self):
        with pytest.raises(SingleClassLabels):
            roc_auc([0.1, 0.2], [1, 1])

    def test_endpoints(self):
        points, _ = roc_auc([0.9, 0.1], [1, 0])
        assert points[0][:2] == (0.0, 0.0)
        assert points[-1][:2] == (1.0, 1.0)


def det(t, gesture, p):
    return Detection(t=t, gesture=gesture, p=p)


def brute_force_nms(detections, cfg):
    """Independent O(n^2) reference with the same tie rules."""
    alive = [d for d in detections if d.p >= cfg.epsilon]
    kept = []
    while alive:
        best = alive[0]
        for d in alive[1:]:
            key_d = (-d.p, d.t, GESTURES.index(d.gesture))
            key_b = (-best.p, best.t, GESTURES.index(best.gesture))
            if key_d < key_b:
                best = d
        kept.append(best)
        alive = [d for d in alive
                 if abs(d.t - best.t) > cfg.suppression_window_s]
    return sorted(kept, key=lambda d: (d.t, GESTURES.index(d.gesture)))


class TestNms:
    def test_single_detection_survives(self):
        cfg = NmsConfig()
        out = nms([det(1.0, "pinch", 0.9)], cfg)
        assert len(out) == 1 and out[0].p == 0.9

    def test_sliding_window_cluster_collapses(self):
        cfg = NmsConfig()
        dets = [det(0.05 * i, "rub_up", 0.8) for i in range(11)]
        dets[5] = det(0.25, "rub_up", 0.92)
        out = nms(dets, cfg)
        assert len(out) == 1
        assert out[0].t == 0.25 and out[0].p == 0.92

    def test_two_events_one_second_apart_survive(self):
        cfg = NmsConfig()
        out = nms([det(1.0, "pinch", 0.9), det(2.0, "flick", 0.8)], cfg)
        assert len(out) == 2

    def test_epsilon_filters(self):
        cfg = NmsConfig(epsilon=0.7)
        out = nms([det(1.0, "pinch", 0.69), det(2.0, "flick", 0.7)], cfg)
        assert len(out) == 1 and out[0].gesture == "flick"

    def test_cross_class_suppression(self):
        cfg = NmsConfig()
        out = nms([det(1.0, "pinch", 0.9), det(1.2, "flick", 0.85)], cfg)
        assert len(out) == 1 and out[0].gesture == "pinch"

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(4)
        cfg = NmsConfig()
        for _ in range(200):
            n = int(rng.integers(0, 200))
            dets = [det(float(np.round(rng.uniform(0, 20), 3)),
                        GESTURES[rng.integers(5)],
                        float(np.round(rng.uniform(0.5, 1.0), 3)))
                    for _ in range(n)]
            dets.sort(key=lambda d: d.t)
            got = nms(dets, cfg)
            want = brute_force_nms(dets, cfg)
            assert [(d.t, d.gesture, d.p) for d in got] == \
                   [(d.t, d.gesture, d.p) for d in want]

    def test_order_independence(self):
        rng = np.random.default_rng(5)
        cfg = NmsConfig()
        dets = [det(float(rng.uniform(0, 5)), GESTURES[rng.integers(5)],
                    float(rng.uniform(0.7, 1.0))) for _ in range(50)]
        base = [(d.t, d.gesture) for d in nms(sorted(dets, key=lambda d: d.t), cfg)]
        for _ in range(5):
            perm = list(dets)
            rng.shuffle(perm)
            assert [(d.t, d.gesture) for d in nms(perm, cfg)] == base

    def test_nms_config_validation(self):
        with pytest.raises(ValueError):
            NmsConfig(epsilon=0.5, secondary_epsilon=0.6)


class TestEvaluateClips:
    def test_trained_model_on_clean_test(self, trained_model, small_corpus, featurizer):
        clips = [(label, clip.samples) for _, label, clip in small_corpus["test"]]
        report, counts, roc = evaluate_clips(trained_model, clips,
                                             featurizer=featurizer)
        assert report.overall_accuracy >= 0.9
        assert set(roc) == set(GESTURES)
        for data in roc.values():
            assert data["auc"] >= 0.9

    def test_label_shuffle_gives_chance(self, trained_model, small_corpus, featurizer):
        rng = np.random.default_rng(6)
        clips = [(label, clip.samples) for _, label, clip in small_corpus["test"]]
        verdicts, _ = classify_clips(trained_model, clips, NmsConfig(),
                                     featurizer=featurizer)
        # a large shuffled relabeling: expected fraction-correct is 1/5
        hits = []
        for _ in range(50):
            shuffled = [GESTURES[i] for i in rng.integers(0, 5, len(clips))]
            counts = counts_from_verdicts(shuffled, verdicts)
            hits.append(metrics(counts).overall_accuracy)
        assert np.mean(hits) == pytest.approx(0.2, abs=0.05)

    def test_empty_split(self, trained_model):
        with pytest.raises(EmptySplit):
            evaluate_clips(trained_model, [])


class TestRatioSweepValidation:
    def test_duplicate_ratio(self):
        from fingersense.evaluation import ratio_sweep
        from fingersense.cnn import TrainConfig
        with pytest.raises(DuplicateRatio):
            ratio_sweep([], [], [], [], [1, 1], TrainConfig())
