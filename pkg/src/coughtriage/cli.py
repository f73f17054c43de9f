"""Command-line entry points: synth, extract, augment, train, cv, infer.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import pipeline, report
from .audio_io import AudioIoError, ManifestError, load_manifest, write_wav
from .augment import plan_augmentation, execute_assignment, save_plan_csv
from .config import ConfigError, PipelineConfig, load_config
from .encoding import EncodingError
from .evaluation import cross_validate, evaluate_scores
from .synth import SyntheticSpec, synth_generate


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coughtriage",
        description="Cough-audio TB triage pipeline (synthetic-data capable)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="RNG seed (mandatory somewhere)")
        p.add_argument("--jobs", type=int, help="worker threads for extraction")
        p.add_argument("--out", help="output path/directory override")

    p = sub.add_parser("synth", help="generate a synthetic cough corpus")
    common(p)
    p.add_argument("--participants", type=int, default=100)
    p.add_argument("--clips-per-participant", type=int, default=10)
    p.add_argument("--positive-fraction", type=float, default=0.6)

    p = sub.add_parser("extract", help="extract features into the cache")
    common(p)
    p.add_argument("--manifest")
    p.add_argument("--cache-dir")

    p = sub.add_parser("augment", help="write augmented WAVs and plan CSV")
    common(p)
    p.add_argument("--manifest")
    p.add_argument("--fraction", type=float)
    p.add_argument("--split", type=float)

    p = sub.add_parser("train", help="train a model on a grouped holdout split")
    common(p)
    p.add_argument("--manifest")
    p.add_argument("--model", choices=pipeline.MODEL_KINDS)
    p.add_argument("--cache-dir")

    p = sub.add_parser("cv", help="stratified grouped k-fold cross-validation")
    common(p)
    p.add_argument("--manifest")
    p.add_argument("--model", choices=pipeline.MODEL_KINDS)
    p.add_argument("--cache-dir")
    p.add_argument("--k", type=int)
    p.add_argument("--shuffle-labels", action="store_true",
                   help="permute labels (null-distribution control)")

    p = sub.add_parser("infer", help="score one WAV clip with a saved model")
    common(p)
    p.add_argument("model_file")
    p.add_argument("wav_path")
    p.add_argument("--tabular-row",
                   help="comma-separated key=value clinical fields")
    return parser


def _config_from_args(args) -> PipelineConfig:
    overrides = {}
    for arg_key, cfg_key in [("seed", "seed"), ("jobs", "jobs"),
                             ("manifest", "manifest"), ("model", "model"),
                             ("cache_dir", "cache_dir"), ("k", "k")]:
        if getattr(args, arg_key, None) is not None:
            overrides[cfg_key] = getattr(args, arg_key)
    return load_config(args.config, overrides)


def _load_gated_manifest(cfg: PipelineConfig):
    if not cfg.manifest:
        raise ConfigError("manifest path required (config manifest= or --manifest)")
    manifest_path = Path(cfg.manifest)
    tabular = cfg.tabular or None
    if tabular is None:
        candidate = manifest_path.parent / "tabular.csv"
        tabular = candidate if candidate.exists() else None
    manifest = load_manifest(manifest_path, cfg.gate, tabular)
    base_dir = cfg.audio_dir or manifest_path.parent
    return manifest, base_dir


def cmd_synth(args) -> int:
    cfg = _config_from_args(args)
    seed = cfg.require_seed()
    out_dir = Path(args.out or "synth_data")
    spec = SyntheticSpec(n_participants=args.participants,
                         clips_per_participant=args.clips_per_participant,
                         positive_fraction=args.positive_fraction, seed=seed)
    manifest = synth_generate(spec, out_dir)
    n_pos = sum(r.label for r in manifest.records)
    print(f"wrote {len(manifest.records)} clips "
          f"({n_pos} positive) under {out_dir}")
    return 0


def cmd_extract(args) -> int:
    cfg = _config_from_args(args)
    cfg.require_seed()
    manifest, base_dir = _load_gated_manifest(cfg)
    cache = pipeline.FeatureCache(cfg)
    stats = cache.ensure(manifest, base_dir, cfg.jobs)
    print(f"cache {cache.root}: {stats['hits']} hits, "
          f"{stats['computed']} computed, {stats['failed']} failed")
    return 1 if stats["failed"] else 0


def cmd_augment(args) -> int:
    cfg = _config_from_args(args)
    seed = cfg.require_seed()
    if args.fraction is not None:
        cfg.aug_fraction = args.fraction
    if args.split is not None:
        cfg.aug_split = args.split
    manifest, base_dir = _load_gated_manifest(cfg)
    out_dir = Path(args.out or "augmented")
    out_dir.mkdir(parents=True, exist_ok=True)

    train_ids = sorted(r.clip_id for r in manifest.records
                       if r.split_tag in (None, "train"))
    plan = plan_augmentation(train_ids, cfg.aug_fraction, cfg.aug_split,
                             cfg.aug_ratio_low, cfg.aug_ratio_high,
                             cfg.ir_pool_size, seed)
    ir_pool = pipeline.build_ir_pool(cfg)
    by_id = {r.clip_id: r for r in manifest.records}
    rows = []
    for a in plan.assignments:
        rec = by_id[a.clip_id]
        clip = pipeline.load_clip(rec.file_path, cfg, base_dir)
        aug = execute_assignment(a, clip, ir_pool)
        aug_id = f"{a.clip_id}+aug"
        wav_path = out_dir / f"{aug_id}.wav"
        write_wav(wav_path, aug)
        rows.append([aug_id, str(wav_path), rec.participant_id,
                     f"{rec.cough_probability:.6f}",
                     "" if rec.label is None else str(rec.label)])
    save_plan_csv(out_dir / "plan.csv", plan)
    with open(out_dir / "augmented_manifest.csv", "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clip_id", "file_path", "participant_id",
                         "cough_probability", "label"])
        writer.writerows(rows)
    print(f"wrote {len(rows)} augmented clips and plan.csv under {out_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    seed = cfg.require_seed()
    manifest, base_dir = _load_gated_manifest(cfg)
    cache = pipeline.FeatureCache(cfg)
    cache.ensure(manifest, base_dir, cfg.jobs)

    train_ids, test_ids = pipeline.grouped_holdout_split(manifest, cfg.holdout, seed)
    training = pipeline.assemble_training_set(train_ids, manifest, cache, cfg,
                                              base_dir, seed)
    bundle = pipeline.train_bundle(cfg.model, training, manifest, cfg, seed)

    model_path = Path(args.out or cfg.model_out)
    pipeline.save_bundle(model_path, bundle, cfg, seed)

    by_id = {r.clip_id: r for r in manifest.records}
    y_test = np.array([by_id[i].label for i in test_ids])
    probs = pipeline.predict_ids(bundle, test_ids, manifest, cache)
    rep = evaluate_scores(y_test, probs, cfg.threshold)

    report_dir = Path(cfg.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    report.write_json(report_dir / f"train_{cfg.model}.json",
                      {"model_kind": cfg.model, "seed": seed,
                       "n_train": len(train_ids), "n_test": len(test_ids),
                       "holdout_report": rep.to_dict()})
    report.write_metrics_csv(report_dir / f"train_{cfg.model}.csv", [rep])
    if rep.roc is not None:
        report.save_roc_figure(report_dir / f"train_{cfg.model}_roc.png", [rep],
                               title=f"{cfg.model} holdout ROC")
    report.save_confusion_figure(report_dir / f"train_{cfg.model}_confusion.png", rep)
    if bundle.history is not None:
        report.save_training_curves(report_dir / f"train_{cfg.model}_curves.png",
                                    bundle.history.train_loss,
                                    bundle.history.train_accuracy)
    auroc = "n/a" if rep.auroc is None else f"{rep.auroc:.4f}"
    acc = "n/a" if rep.accuracy is None else f"{rep.accuracy:.4f}"
    print(f"model={cfg.model} saved={model_path} auroc={auroc} accuracy={acc}")
    print(report.format_report_table([rep]))
    return 0


def cmd_cv(args) -> int:
    cfg = _config_from_args(args)
    seed = cfg.require_seed()
    manifest, base_dir = _load_gated_manifest(cfg)
    cache = pipeline.FeatureCache(cfg)
    cache.ensure(manifest, base_dir, cfg.jobs)

    by_id = {r.clip_id: r for r in manifest.records}
    labels = {r.clip_id: r.label for r in manifest.records}
    if any(v is None for v in labels.values()):
        raise ConfigError("cv requires labels for every gated clip")
    if args.shuffle_labels:
        rng = np.random.default_rng(seed + 9999)
        values = np.array(list(labels.values()))
        rng.shuffle(values)
        labels = dict(zip(labels.keys(), (int(v) for v in values)))
        # shuffled labels must flow into training too
        shuffled_by_id = {cid: labels[cid] for cid in labels}
    groups = {r.clip_id: r.participant_id for r in manifest.records}

    def fit_and_score(train_ids, test_ids, fold_seed):
        training = pipeline.assemble_training_set(train_ids, manifest, cache,
                                                  cfg, base_dir, fold_seed)
        if args.shuffle_labels:
            training.labels = np.array(
                [shuffled_by_id[i.split("+")[0]] for i in training.clip_ids])
        bundle = pipeline.train_bundle(cfg.model, training, manifest, cfg, fold_seed)
        return pipeline.predict_ids(bundle, test_ids, manifest, cache)

    reports, summary = cross_validate(fit_and_score, labels, groups, cfg.k, seed)
    summary["model_kind"] = cfg.model
    summary["shuffled_labels"] = bool(args.shuffle_labels)

    report_dir = Path(args.out or cfg.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    tag = f"cv_{cfg.model}" + ("_shuffled" if args.shuffle_labels else "")
    report.write_json(report_dir / f"{tag}.json",
                      {"summary": summary,
                       "folds": [r.to_dict() for r in reports]})
    report.write_metrics_csv(report_dir / f"{tag}.csv", reports)
    report.save_roc_figure(report_dir / f"{tag}_roc.png", reports,
                           title=f"{cfg.model} {cfg.k}-fold ROC")
    print(report.format_report_table(reports))
    mean = summary["auroc_mean"]
    std = summary["auroc_std"]
    if mean is not None:
        print(f"AUROC mean={mean:.4f} std={std:.4f} over {len(reports)} folds")
    return 0


def _parse_tabular_row(text: str | None) -> dict[str, str] | None:
    if not text:
        return None
    row = {}
    for item in text.split(","):
        if "=" not in item:
            raise ConfigError(f"bad tabular field {item!r}, expected key=value")
        key, _, value = item.partition("=")
        row[key.strip()] = value.strip()
    return row


def cmd_infer(args) -> int:
    cfg = _config_from_args(args)
    t0 = time.perf_counter()
    bundle = pipeline.load_bundle(args.model_file, cfg)
    clip = pipeline.load_clip(args.wav_path, cfg)
    feats = pipeline.extract_features(clip, cfg)
    row = _parse_tabular_row(args.tabular_row)
    prob = bundle.predict_one(feats, row)
    elapsed_ms = (time.perf_counter() - t0) * 1000.0
    print(f"tb_positive_probability={prob:.4f} latency_ms={elapsed_ms:.1f}")
    return 0


_COMMANDS = {"synth": cmd_synth, "extract": cmd_extract, "augment": cmd_augment,
             "train": cmd_train, "cv": cmd_cv, "infer": cmd_infer}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, AudioIoError, ManifestError, EncodingError,
            FileNotFoundError, IsADirectoryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
