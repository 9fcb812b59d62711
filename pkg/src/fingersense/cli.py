"""Command-line entry points: corpus generation, segmentation, augmentation,
training, evaluation, sweeps, false-alarm profiling, detection, and serving."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

from . import GESTURES, CANONICAL_RATE_HZ, __version__
from . import augment as aug
from . import cnn
from . import dataset as ds
from . import evaluation as ev
from .audio import AudioClip, load_wav, save_wav, resample_linear
from .events import DetectorConfig
from .pipeline import (OBJECT_VIEWER_MAPPING, WEB_BROWSER_MAPPING, Pipeline,
                       ReplaySource, MicSource, map_action, run_stream)
from .windows import ClipFeaturizer, mixed_training_arrays


def _detector_config(args) -> DetectorConfig:
    return DetectorConfig(
        window_s=args.det_window, step_s=args.det_step, k=args.det_k,
        peak_threshold=args.det_threshold, refractory_s=args.det_refractory,
    )


def _nms_config(args) -> ev.NmsConfig:
    return ev.NmsConfig(epsilon=args.epsilon,
                        secondary_epsilon=min(args.secondary_epsilon, args.epsilon))


def _load_noise_dir(path) -> list:
    out = []
    for wav in sorted(Path(path).glob("*.wav")):
        clip = load_wav(wav)
        if clip.sample_rate_hz != CANONICAL_RATE_HZ:
            clip = resample_linear(clip, CANONICAL_RATE_HZ)
        out.append((wav.stem, clip))
    if not out:
        raise FileNotFoundError(f"no .wav files under {path}")
    return out


def _load_clips(records) -> list:
    return [(rec.label, load_wav(rec.path).samples) for rec in records]


def _print_report(report: ev.MetricsReport, header: str) -> None:
    print(header)
    print(f"{'class':<10} {'P':>8} {'R':>8} {'F1':>8} {'ACC':>8}")
    for label in GESTURES:
        row = report.per_class[label]
        print(f"{label:<10} {row['precision']:>8.4f} {row['recall']:>8.4f} "
              f"{row['f1']:>8.4f} {row['accuracy']:>8.4f}")
    print(f"{'macro':<10} {report.macro_precision:>8.4f} {report.macro_recall:>8.4f} "
          f"{report.macro_f1:>8.4f} {report.macro_accuracy:>8.4f}")
    print(f"overall accuracy (fraction of clips correct): {report.overall_accuracy:.4f}")


def _roc_svg(points, title: str) -> str:
    w = h = 320
    pad = 30
    coords = " ".join(
        f"{pad + fpr * (w - 2 * pad):.1f},{h - pad - tpr * (h - 2 * pad):.1f}"
        for fpr, tpr, _ in points
    )
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">'
        f'<rect width="{w}" height="{h}" fill="white"/>'
        f'<line x1="{pad}" y1="{h-pad}" x2="{w-pad}" y2="{pad}" '
        f'stroke="#bbb" stroke-dasharray="4"/>'
        f'<polyline points="{coords}" fill="none" stroke="#0a62a8" stroke-width="2"/>'
        f'<text x="{w//2}" y="16" text-anchor="middle" font-size="12">{title}</text>'
        f'<text x="{w//2}" y="{h-6}" text-anchor="middle" font-size="10">FPR</text>'
        f"</svg>"
    )


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> int:
    out = Path(args.out)
    clips_dir = out / "clips"
    noise_dir = out / "noise"
    clips_dir.mkdir(parents=True, exist_ok=True)
    noise_dir.mkdir(parents=True, exist_ok=True)

    corpus = aug.make_synth_corpus(args.per_class, seed=args.seed)
    records = []
    for cid, label, clip in corpus:
        path = clips_dir / f"{cid}.wav"
        save_wav(clip, path)
        records.append(ds.SampleRecord(id=cid, path=str(path), label=label,
                                       source="synthetic", recorder="synth"))
    ds.split(records, seed=args.seed)

    kinds = tuple(args.noise_kinds.split(","))
    noise = aug.make_noise_corpus(args.noise_clips, args.noise_seconds,
                                  seed=args.seed, kinds=kinds)
    for nid, clip in noise:
        save_wav(clip, noise_dir / f"{nid}.wav")

    manifest_path = out / "manifest.jsonl"
    ds.build_manifest(records, manifest_path)
    print(f"wrote {len(records)} clips, {len(noise)} noise files, {manifest_path}")
    return 0


def cmd_segment(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    recording = load_wav(args.input)
    if recording.sample_rate_hz != CANONICAL_RATE_HZ:
        recording = resample_linear(recording, CANONICAL_RATE_HZ)
    clips = ds.auto_segment(recording, args.label, k=args.det_k)
    records = []
    stem = Path(args.input).stem
    for i, (clip, label) in enumerate(clips):
        cid = f"{stem}-{label}-{i:04d}"
        path = out / f"{cid}.wav"
        save_wav(clip, path)
        records.append(ds.SampleRecord(id=cid, path=str(path), label=label,
                                       source="clean", recorder=args.recorder))
    manifest_path = out / "manifest.jsonl"
    ds.build_manifest(records, manifest_path)
    print(f"segmented {len(records)} clips -> {manifest_path} (splits unassigned)")
    return 0


def cmd_augment(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = ds.validate_manifest(args.manifest, check_files=True)
    noise = _load_noise_dir(args.noise_dir)

    clean = [r for r in manifest.records if r.source in ("clean", "synthetic")]
    cfg = aug.AugmentConfig(ratio=args.ratio, snr_db_range=(args.snr_lo, args.snr_hi),
                            seed=args.seed, noise_corpus=noise)
    clean_set = [(r.id, r.label, load_wav(r.path)) for r in clean]
    results = aug.augment_dataset(clean_set, cfg)

    by_id = {r.id: r for r in manifest.records}
    new_records = list(manifest.records)
    for item in results:
        if item.source != "augmented":
            continue
        path = out / f"{item.id}.wav"
        save_wav(item.clip, path)
        parent = by_id[item.parent_id]
        new_records.append(ds.SampleRecord(
            id=item.id, path=str(path), label=item.label, split=parent.split,
            source="augmented", parent_id=item.parent_id, snr_db=item.snr_db,
            recorder=parent.recorder,
        ))
    manifest_path = out / "manifest.jsonl"
    ds.build_manifest(new_records, manifest_path)
    print(f"wrote {len(new_records) - len(manifest.records)} augmented clips, "
          f"{manifest_path}")
    return 0


def cmd_train(args) -> int:
    manifest = ds.validate_manifest(args.manifest, check_files=True)
    fz = ClipFeaturizer()

    def record_tuples(split):
        return [(r.id, r.label, load_wav(r.path).samples, r.source)
                for r in manifest.by_split(split)]

    train_records = record_tuples("train")
    val_records = record_tuples("val")
    print(f"featurizing {len(train_records)} train / {len(val_records)} val clips")
    train_x, train_y = mixed_training_arrays(train_records, fz)
    val_x, val_y = mixed_training_arrays(val_records, fz)

    cfg = cnn.TrainConfig(learning_rate=args.lr, batch_size=args.batch_size,
                          max_epochs=args.epochs, early_stop_patience=args.patience,
                          seed=args.seed)
    model = cnn.new_model(seed=args.seed)
    model, history = cnn.train(model, train_x, train_y, val_x, val_y, cfg)
    cnn.save_model(model, args.out)
    if args.history:
        cnn.history_to_csv(history, args.history)
    last = history[-1] if history else {}
    print(f"trained {len(history)} epochs; val_acc={last.get('val_acc', 0):.4f}; "
          f"model -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    manifest = ds.validate_manifest(args.manifest, check_files=True)
    model = cnn.load_model(args.model)
    report, counts, roc = ev.evaluate_model(model, manifest, split=args.split,
                                            nms_cfg=_nms_config(args))
    _print_report(report, f"split={args.split} epsilon={args.epsilon}")
    for gesture, data in roc.items():
        print(f"AUC[{gesture}] = {data['auc']:.4f}")
    if args.report_csv:
        with open(args.report_csv, "w") as f:
            f.write("class,precision,recall,f1,accuracy\n")
            for label in GESTURES:
                row = report.per_class[label]
                f.write(f"{label},{row['precision']:.4f},{row['recall']:.4f},"
                        f"{row['f1']:.4f},{row['accuracy']:.4f}\n")
            f.write(f"macro,{report.macro_precision:.4f},{report.macro_recall:.4f},"
                    f"{report.macro_f1:.4f},{report.macro_accuracy:.4f}\n")
    if args.roc_csv:
        with open(args.roc_csv, "w") as f:
            f.write("class,fpr,tpr,threshold\n")
            for gesture, data in roc.items():
                for fpr, tpr, thr in data["points"]:
                    f.write(f"{gesture},{fpr:.6f},{tpr:.6f},{thr:.6f}\n")
    if args.roc_svg:
        svg_dir = Path(args.roc_svg)
        svg_dir.mkdir(parents=True, exist_ok=True)
        for gesture, data in roc.items():
            title = f"{gesture} AUC={data['auc']:.3f}"
            (svg_dir / f"roc_{gesture}.svg").write_text(_roc_svg(data["points"], title))
    return 0


def cmd_sweep(args) -> int:
    manifest = ds.validate_manifest(args.manifest, check_files=True)
    noise = _load_noise_dir(args.noise_dir)
    ratios = [int(r) for r in args.ratios.split(",")]

    def triples(split):
        return [(r.id, r.label, load_wav(r.path))
                for r in manifest.by_split(split)
                if r.source in ("clean", "synthetic")]

    cfg = cnn.TrainConfig(max_epochs=args.epochs, seed=args.seed)
    rows = ev.ratio_sweep(triples("train"), triples("val"), triples("test"),
                          noise, ratios, cfg)
    ev.sweep_to_csv(rows, args.out)
    for ratio, condition, rep in rows:
        print(f"ratio={ratio:<4} test={condition:<6} {rep.row()}")
    print(f"table -> {args.out}")
    return 0


def cmd_falsealarm(args) -> int:
    model = cnn.load_model(args.model)
    if args.noise_file:
        stream = load_wav(args.noise_file)
        if stream.sample_rate_hz != CANONICAL_RATE_HZ:
            stream = resample_linear(stream, CANONICAL_RATE_HZ)
    else:
        stream = aug.synth_noise(args.noise_kind, args.duration, seed=args.seed,
                                 rms=args.noise_rms)
    profile = ev.false_alarm_profile(model, stream, det_cfg=_detector_config(args),
                                     nms_cfg=_nms_config(args))
    print(f"stream: {profile.duration_s:.1f} s, {len(profile.trigger_probs)} stage-1 triggers")
    for eps, rate in sorted(profile.alarms_per_hour.items()):
        print(f"false alarms at epsilon={eps}: {profile.alarms_at(eps)} "
              f"({rate:.1f}/hour)")
    counts, edges = profile.histogram
    for c, lo, hi in zip(counts, edges, edges[1:]):
        if c:
            print(f"  p in [{lo:.2f},{hi:.2f}): {c}")
    return 0


def cmd_detect(args) -> int:
    model = cnn.load_model(args.model)
    if args.mic:
        source = MicSource()
    elif args.replay:
        clip = load_wav(args.replay)
        if clip.sample_rate_hz != CANONICAL_RATE_HZ:
            clip = resample_linear(clip, CANONICAL_RATE_HZ)
        source = ReplaySource(clip)
    else:
        print("detect needs --replay FILE or --mic", file=sys.stderr)
        return 2
    mapping = WEB_BROWSER_MAPPING if args.context == "web_browser" else OBJECT_VIEWER_MAPPING
    count = 0
    for event in run_stream(source, model, det_cfg=_detector_config(args),
                            nms_cfg=_nms_config(args)):
        doc = {"seq": event.seq, "t": round(event.t, 3), "gesture": event.gesture,
               "p": round(event.p, 4), "action": map_action(event, mapping)}
        print(json.dumps(doc))
        count += 1
    print(f"# {count} events", file=sys.stderr)
    return 0


def cmd_serve(args) -> int:
    from .service import GestureService

    model = cnn.load_model(args.model)
    nms_cfg = _nms_config(args)
    service = GestureService(port=args.port, nms_cfg=nms_cfg,
                             model_id=Path(args.model).name,
                             detector_mode="absolute" if args.det_threshold else "adaptive",
                             ui_dir=args.ui_dir)
    service.start()
    print(f"serving on http://127.0.0.1:{service.port} "
          f"(events at /events, UI at /ui/)")

    if args.replay:
        clip = load_wav(args.replay)
        if clip.sample_rate_hz != CANONICAL_RATE_HZ:
            clip = resample_linear(clip, CANONICAL_RATE_HZ)
        pipe = Pipeline(model, det_cfg=_detector_config(args), nms_cfg=nms_cfg)
        try:
            while True:
                source = ReplaySource(clip)
                service.consume(run_stream(source, model, pipeline=pipe))
                if not args.loop:
                    break
        except KeyboardInterrupt:
            pass
    elif args.mic:
        pipe = Pipeline(model, det_cfg=_detector_config(args), nms_cfg=nms_cfg)
        try:
            service.consume(run_stream(MicSource(), model, pipeline=pipe))
        except KeyboardInterrupt:
            pass
    else:
        try:
            service._thread.join()
        except KeyboardInterrupt:
            pass
    service.stop()
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fingersense",
        description="Gesture recognition from bone-conducted wrist audio.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--seed", type=int, default=0, help="master RNG seed")
    parser.add_argument("--config", default=None,
                        help="TOML file whose keys mirror the CLI flags")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_detector_flags(p):
        p.add_argument("--det-window", type=float, default=2.0)
        p.add_argument("--det-step", type=float, default=0.1)
        p.add_argument("--det-k", type=float, default=6.0)
        p.add_argument("--det-threshold", type=float, default=None,
                       help="absolute trigger amplitude (overrides adaptive mode)")
        p.add_argument("--det-refractory", type=float, default=0.5)

    def add_nms_flags(p):
        p.add_argument("--epsilon", type=float, default=0.7)
        p.add_argument("--secondary-epsilon", type=float, default=0.6)

    p = sub.add_parser("synth", help="generate the synthetic corpus + manifest")
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--out", required=True)
    p.add_argument("--noise-clips", type=int, default=8)
    p.add_argument("--noise-seconds", type=float, default=10.0)
    p.add_argument("--noise-kinds", default="pink")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("segment", help="auto-segment a repeated-gesture recording")
    p.add_argument("--input", required=True)
    p.add_argument("--label", required=True, choices=GESTURES)
    p.add_argument("--out", required=True)
    p.add_argument("--recorder", default="extmic")
    p.add_argument("--det-k", type=float, default=6.0)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("augment", help="mix noise into clean samples at ratio")
    p.add_argument("--manifest", required=True)
    p.add_argument("--noise-dir", required=True)
    p.add_argument("--ratio", type=int, default=10)
    p.add_argument("--snr-lo", type=float, default=0.0)
    p.add_argument("--snr-hi", type=float, default=20.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train the CNN from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history", default=None, help="per-epoch CSV path")
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--patience", type=int, default=10)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="clip-level evaluation on a split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", default="test", choices=ds.SPLITS)
    p.add_argument("--report-csv", default=None)
    p.add_argument("--roc-csv", default=None)
    p.add_argument("--roc-svg", default=None, help="directory for SVG ROC plots")
    add_nms_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="augmentation-ratio sweep")
    p.add_argument("--manifest", required=True, help="clean manifest with splits")
    p.add_argument("--noise-dir", required=True)
    p.add_argument("--ratios", default="1,2,5,10")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("falsealarm", help="trigger-probability profile on noise")
    p.add_argument("--model", required=True)
    p.add_argument("--noise-file", default=None)
    p.add_argument("--noise-kind", default="pink", choices=aug.NOISE_KINDS)
    p.add_argument("--noise-rms", type=float, default=0.1)
    p.add_argument("--duration", type=float, default=600.0)
    add_detector_flags(p)
    add_nms_flags(p)
    p.set_defaults(func=cmd_falsealarm)

    p = sub.add_parser("detect", help="run the pipeline on a replay file or mic")
    p.add_argument("--replay", default=None)
    p.add_argument("--mic", action="store_true")
    p.add_argument("--model", required=True)
    p.add_argument("--context", default="object_viewer",
                   choices=("object_viewer", "web_browser"))
    add_detector_flags(p)
    add_nms_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("serve", help="HTTP service with live SSE gesture events")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--model", required=True)
    p.add_argument("--replay", default=None)
    p.add_argument("--mic", action="store_true")
    p.add_argument("--loop", action="store_true", help="loop the replay file")
    p.add_argument("--ui-dir", default=None)
    add_detector_flags(p)
    add_nms_flags(p)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)

    # --config TOML supplies defaults; explicit flags still win
    if "--config" in argv:
        cfg_path = argv[argv.index("--config") + 1]
        with open(cfg_path, "rb") as f:
            doc = tomllib.load(f)
        flat = {}
        for key, value in doc.items():
            if isinstance(value, dict):
                for k2, v2 in value.items():
                    flat[f"{key}_{k2}".replace("-", "_")] = v2
            else:
                flat[key.replace("-", "_")] = value
        parser.set_defaults(**flat)
        for action in parser._subparsers._group_actions[0].choices.values():
            known = {a.dest for a in action._actions}
            action.set_defaults(**{k: v for k, v in flat.items() if k in known})

    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    except (KeyboardInterrupt, BrokenPipeError):
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
