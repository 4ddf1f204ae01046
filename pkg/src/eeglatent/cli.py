"""Command-line interface exposing the full pipeline.

Subcommands: benchgen, preprocess, split, train, encode, generate,
evaluate, sweep-beta, augment-experiment. Every artifact-producing run
writes a resolved copy of its configuration (all defaults filled in) to
`<out>/config.resolved`, and a single seed drives every random stream via
named sub-streams, so reruns with the same config are bit-reproducible.

Exit codes: 0 success, 1 runtime failure (stderr carries a
machine-readable `error category=...` line), 2 usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import benchgen as benchgen_mod
from . import dataio, dsp, evaluate, model, nn, synth, train
from .util import ConfigError, DataError, ShapeError, derive_rng

log = logging.getLogger("eeglatent")

TUPLE_FIELDS = {"classifier_hidden", "class_freqs_hz"}


def _dataclass_from_dict(cls, d: dict, context: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{context}: expected an object, got {type(d).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {unknown}")
    kwargs = {k: tuple(v) if k in TUPLE_FIELDS and isinstance(v, list) else v
              for k, v in d.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{context}: {e}") from e


def _load_json(path: str | Path, context: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{context}: file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{context}: invalid JSON: {e}") from e


def _check_keys(d: dict, allowed: set, required: set, context: str) -> None:
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {unknown}")
    missing = sorted(required - set(d))
    if missing:
        raise ConfigError(f"{context}: missing keys {missing}")


def _write_resolved(out_dir: Path, resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.resolved").write_text(json.dumps(resolved, indent=1, sort_keys=True))


def _as_jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {k: _as_jsonable(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, (tuple, list)):
        return [_as_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    return obj


def _model_config_from_checkpoint(meta: dict) -> model.ModelConfig:
    if "model_config" not in meta:
        raise DataError("checkpoint carries no model_config metadata")
    return _dataclass_from_dict(model.ModelConfig, meta["model_config"],
                                "checkpoint model_config")


def _resolve_split(cfg: dict, trials, seed: int) -> dataio.SplitPlan:
    split = cfg.get("split")
    if isinstance(split, str):
        return dataio.load_split_plan(split)
    if isinstance(split, dict):
        _check_keys(split, {"test_fraction", "k"}, {"test_fraction", "k"}, "split")
        return dataio.make_split_plan(trials, float(split["test_fraction"]),
                                      int(split["k"]), seed)
    raise ConfigError("split must be a plan path or {test_fraction, k}")


def _training_setup(cfg: dict, context: str):
    """Common (dataset, plan, model, train) resolution for run configs."""
    seed = int(cfg.get("seed", 0))
    meta, trials = dataio.load_dataset(cfg["dataset"])
    plan = _resolve_split(cfg, trials, seed)
    model_cfg = _dataclass_from_dict(model.ModelConfig, cfg.get("model", {}),
                                     f"{context}.model")
    train_section = dict(cfg.get("train", {}))
    train_section.setdefault("seed", seed)
    train_cfg = _dataclass_from_dict(train.TrainConfig, train_section, f"{context}.train")
    return meta, trials, plan, model_cfg, train_cfg, seed


# ---------------------------------------------------------------------------
# subcommands

def cmd_benchgen(args) -> int:
    cfg = _load_json(args.config, "benchgen config") if args.config else {}
    if args.seed is not None:
        cfg["seed"] = args.seed
    spec = _dataclass_from_dict(benchgen_mod.BenchmarkSpec, cfg, "benchgen config")
    out = Path(args.out)
    manifest, truth = benchgen_mod.make_benchmark(spec, out / "dataset")
    _write_resolved(out, _as_jsonable(spec))
    log.info("benchmark written: %s (%d trials), ground truth %s",
             manifest, spec.n_trials, truth)
    return 0


def cmd_preprocess(args) -> int:
    meta, recordings = dataio.load_dataset(args.input)
    fs_out = meta.fs / args.downsample_factor
    spec = dsp.BandpassSpec(low_hz=args.low_hz, high_hz=args.high_hz, order=args.order,
                            fs=fs_out)
    out = Path(args.out)
    epoch_len = int(round(args.window_s * fs_out))
    out_trials = []
    for rec in recordings:
        epochs = dsp.preprocess_recording(
            rec.x, meta.fs, spec, drop_head_s=args.drop_s, keep_s=args.keep_s,
            window_s=args.window_s, downsample_factor=args.downsample_factor,
        )
        for k, ep in enumerate(epochs):
            out_trials.append(dataio.Trial(
                x=ep.astype(np.float32), y=rec.y, p=rec.p, fs=fs_out,
                trial_id=f"{rec.trial_id}-e{k:03d}", synthetic=rec.synthetic,
            ))
    out_meta = dataio.DatasetMeta(C=meta.C, T=epoch_len, L=meta.L, P=meta.P, fs=fs_out,
                                  channel_names=meta.channel_names)
    manifest = dataio.save_dataset(out / "dataset" / "manifest.json", out_meta, out_trials)
    _write_resolved(out, {
        "input": str(args.input), "low_hz": args.low_hz, "high_hz": args.high_hz,
        "order": args.order, "drop_s": args.drop_s, "keep_s": args.keep_s,
        "window_s": args.window_s, "downsample_factor": args.downsample_factor,
    })
    log.info("preprocessed %d recordings into %d epochs: %s",
             len(recordings), len(out_trials), manifest)
    return 0


def cmd_split(args) -> int:
    _, trials = dataio.load_dataset(args.data)
    plan = dataio.make_split_plan(trials, args.test_fraction, args.k, args.seed)
    out = Path(args.out)
    path = dataio.save_split_plan(out / "split.json", plan)
    _write_resolved(out, {"data": str(args.data), "test_fraction": args.test_fraction,
                          "k": args.k, "seed": args.seed})
    log.info("split plan written: %s (%d holdout, %d folds)",
             path, len(plan.test_ids), plan.k)
    return 0


def cmd_train(args) -> int:
    cfg = _load_json(args.config, "train config")
    _check_keys(cfg, {"dataset", "split", "model", "train", "seed", "folds"},
                {"dataset", "model"}, "train config")
    meta, trials, plan, model_cfg, train_cfg, seed = _training_setup(cfg, "train config")
    folds = cfg.get("folds", list(range(plan.k)))
    out = Path(args.out)
    _write_resolved(out, {
        "dataset": str(cfg["dataset"]), "split": _as_jsonable(plan.to_dict()),
        "model": _as_jsonable(model_cfg), "train": _as_jsonable(train_cfg),
        "seed": seed, "folds": list(folds),
    })
    for fi in folds:
        if not 0 <= fi < plan.k:
            raise ConfigError(f"fold index {fi} out of range [0, {plan.k})")
        train_ids, val_ids = plan.folds[fi]
        params, history = train.train_fold(
            dataio.select_trials(trials, train_ids),
            dataio.select_trials(trials, val_ids), model_cfg, train_cfg,
        )
        ckpt = nn.save_checkpoint(
            out / "checkpoints" / f"fold-{fi}.ckpt", params,
            meta={"model_config": _as_jsonable(model_cfg), "fold": fi,
                  "best_epoch": history.best_epoch},
        )
        train.write_history_csv(history, out / "reports" / f"history-fold-{fi}.csv")
        log.info("fold %d trained: best epoch %d, checkpoint %s",
                 fi, history.best_epoch, ckpt)
    return 0


def cmd_encode(args) -> int:
    params, _, meta = nn.load_checkpoint(args.checkpoint)
    model_cfg = _model_config_from_checkpoint(meta)
    _, trials = dataio.load_dataset(args.data)
    out = Path(args.out)
    export = evaluate.export_latents(trials, params, model_cfg,
                                     out / "latents" / "latents.csv")
    _write_resolved(out, {"checkpoint": str(args.checkpoint), "data": str(args.data)})
    print(export.compression_note)
    return 0


def cmd_generate(args) -> int:
    params, _, meta = nn.load_checkpoint(args.checkpoint)
    model_cfg = _model_config_from_checkpoint(meta)
    out = Path(args.out)
    if args.mode == "from-prior":
        request = synth.GenerationRequest(mode="from-prior", y_target=args.y,
                                          p_target=args.p, count=args.count,
                                          seed=args.seed)
        trials = synth.generate_from_prior(request, params, model_cfg)
    else:
        if not args.data or not args.reference_id:
            raise ConfigError("from-reference mode needs --data and --reference-id")
        _, real = dataio.load_dataset(args.data)
        ref = dataio.trials_by_id(real).get(args.reference_id)
        if ref is None:
            raise DataError(f"reference trial {args.reference_id!r} not found")
        rng = derive_rng(args.seed, "reference", args.reference_id)
        trials = [synth.generate_from_reference(ref, args.y, args.p, params, model_cfg,
                                                rng) for _ in range(args.count)]
    ds_meta = dataio.DatasetMeta(C=model_cfg.C, T=model_cfg.T, L=model_cfg.L,
                                 P=model_cfg.P, fs=model_cfg.fs)
    manifest = dataio.save_dataset(out / "dataset" / "manifest.json", ds_meta, trials)
    _write_resolved(out, {"checkpoint": str(args.checkpoint), "mode": args.mode,
                          "y": args.y, "p": args.p, "count": args.count,
                          "seed": args.seed})
    log.info("generated %d trials: %s", len(trials), manifest)
    return 0


def cmd_evaluate(args) -> int:
    params, _, meta = nn.load_checkpoint(args.checkpoint)
    model_cfg = _model_config_from_checkpoint(meta)
    _, trials = dataio.load_dataset(args.data)
    plan = dataio.load_split_plan(args.split)
    holdout = dataio.select_trials(trials, plan.test_ids)
    preds = train.predict_trials(holdout, params, model_cfg)
    labels = np.array([t.y for t in holdout])
    parts = np.array([t.p for t in holdout])
    report = evaluate.classification_report(preds, labels, n_classes=model_cfg.L)
    out = Path(args.out)
    evaluate.write_report_csv(report, out / "reports" / "classification.csv")
    _, cells = evaluate.per_participant_report(preds, labels, parts)
    evaluate.write_participant_cells_csv(cells, out / "reports" / "per_participant.csv")
    summary = [f"holdout accuracy: {report.accuracy:.4f} over {report.n_samples} trials"]
    for c in range(model_cfg.L):
        summary.append(f"class {c}: precision {report.precision[c]:.3f} "
                       f"recall {report.recall[c]:.3f} f1 {report.f1[c]:.3f}")
    (out / "reports" / "summary.txt").write_text("\n".join(summary) + "\n")
    if args.psd_channel is not None:
        synth_trials = []
        for y in range(model_cfg.L):
            request = synth.GenerationRequest(mode="from-prior", y_target=y,
                                              p_target=0, count=args.psd_count,
                                              seed=plan.seed)
            synth_trials.extend(synth.generate_from_prior(request, params, model_cfg))
        # the standard 200-sample window needs shortening for short epochs
        nfft = min(200, model_cfg.T)
        welch = evaluate.WelchParams(nfft=nfft, overlap=nfft // 4)
        comp = evaluate.psd_fidelity(holdout, synth_trials, channel=args.psd_channel,
                                     welch=welch)
        evaluate.write_psd_comparison_csv(comp, out / "psd" / "psd_comparison.csv")
        summary.append(f"psd gaps: low {comp.low_band_gap_db:.2f} dB, "
                       f"high {comp.high_band_gap_db:.2f} dB")
        (out / "reports" / "summary.txt").write_text("\n".join(summary) + "\n")
    _write_resolved(out, {"checkpoint": str(args.checkpoint), "data": str(args.data),
                          "split": str(args.split)})
    print("\n".join(summary))
    return 0


def cmd_sweep_beta(args) -> int:
    cfg = _load_json(args.config, "sweep config")
    _check_keys(cfg, {"dataset", "split", "model", "train", "seed", "betas"},
                {"dataset", "model", "betas"}, "sweep config")
    meta, trials, plan, model_cfg, train_cfg, seed = _training_setup(cfg, "sweep config")
    out = Path(args.out)
    _write_resolved(out, {
        "dataset": str(cfg["dataset"]), "betas": list(cfg["betas"]),
        "model": _as_jsonable(model_cfg), "train": _as_jsonable(train_cfg), "seed": seed,
    })
    rows = evaluate.run_beta_sweep(trials, plan, model_cfg, train_cfg,
                                   betas=cfg["betas"], out_dir=out / "latents")
    evaluate.write_beta_sweep_csv(rows, out / "reports" / "beta_sweep.csv")
    for r in rows:
        print(f"beta={r.beta:g} val_recon={r.val_recon_mse:.6f} "
              f"decorrelation={r.decorrelation:.4f} val_acc={r.val_accuracy:.3f}")
    return 0


def cmd_augment_experiment(args) -> int:
    cfg = _load_json(args.config, "augment config")
    _check_keys(cfg, {"dataset", "split", "model", "train", "seed", "fractions",
                      "generator_checkpoint", "classifier_lam"},
                {"dataset", "model", "fractions", "generator_checkpoint"},
                "augment config")
    meta, trials, plan, model_cfg, train_cfg, seed = _training_setup(cfg, "augment config")
    gen_params, _, gen_meta = nn.load_checkpoint(cfg["generator_checkpoint"])
    gen_cfg = _model_config_from_checkpoint(gen_meta)
    train_ids, val_ids = plan.folds[0]
    out = Path(args.out)
    _write_resolved(out, {
        "dataset": str(cfg["dataset"]), "fractions": list(cfg["fractions"]),
        "generator_checkpoint": str(cfg["generator_checkpoint"]),
        "model": _as_jsonable(model_cfg), "train": _as_jsonable(train_cfg), "seed": seed,
        "classifier_lam": cfg.get("classifier_lam", 10.0),
    })
    rows = evaluate.run_augmentation_experiment(
        dataio.select_trials(trials, train_ids), dataio.select_trials(trials, val_ids),
        dataio.select_trials(trials, plan.test_ids), cfg["fractions"], gen_params,
        gen_cfg, model_cfg, train_cfg,
        classifier_lam=float(cfg.get("classifier_lam", 10.0)),
    )
    evaluate.write_augmentation_csv(rows, out / "reports" / "augmentation.csv")
    for r in rows:
        print(f"fraction={r.fraction:g} train={r.n_train} synth={r.n_synthetic} "
              f"accuracy={r.report.accuracy:.4f}")
    return 0


# ---------------------------------------------------------------------------
# parser and dispatch

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eeglatent",
        description="Conditional beta-VAE pipeline for multi-channel "
                    "physiological time series",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("benchgen", help="generate the synthetic benchmark dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file with benchmark spec fields")
    p.add_argument("--seed", type=int, help="override the benchmark seed")
    p.set_defaults(fn=cmd_benchgen)

    p = sub.add_parser("preprocess", help="filter, epoch, and normalize raw recordings")
    p.add_argument("--input", required=True, help="manifest of raw recordings")
    p.add_argument("--out", required=True)
    p.add_argument("--low-hz", type=float, default=2.0)
    p.add_argument("--high-hz", type=float, default=40.0)
    p.add_argument("--order", type=int, default=4)
    p.add_argument("--drop-s", type=float, default=30.0)
    p.add_argument("--keep-s", type=float, default=155.0)
    p.add_argument("--window-s", type=float, default=2.0)
    p.add_argument("--downsample-factor", type=int, default=1)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("split", help="build a stratified holdout + k-fold plan")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("train", help="train per-fold models from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("encode", help="export posterior means for a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("generate", help="synthesize condition-specific trials")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["from-prior", "from-reference"],
                   default="from-prior")
    p.add_argument("--y", type=int, required=True, help="target class index")
    p.add_argument("--p", type=int, required=True, help="target participant index")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data", help="dataset with the reference trial")
    p.add_argument("--reference-id", help="trial id to encode (from-reference mode)")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("evaluate", help="holdout metrics for a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--psd-channel", type=int, default=None,
                   help="also compare real-vs-generated PSD on this channel")
    p.add_argument("--psd-count", type=int, default=20,
                   help="generated trials per class for the PSD comparison")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("sweep-beta", help="reconstruction/disentanglement trade-off")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sweep_beta)

    p = sub.add_parser("augment-experiment",
                       help="retrain with synthetic-augmented training sets")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_augment_experiment)
    return parser


ERROR_CATEGORIES = [
    (ConfigError, "config"),
    (DataError, "data"),
    (ShapeError, "shape"),
    (FloatingPointError, "numeric"),
    (FileNotFoundError, "io"),
    (OSError, "io"),
    (ValueError, "invalid"),
]


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    level = logging.DEBUG if args.verbose else (
        logging.WARNING if args.quiet else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("eeglatent").setLevel(level)
    for logger_name in ("eeglatent.train", "eeglatent.evaluate"):
        logging.getLogger(logger_name).setLevel(level)
    try:
        return args.fn(args)
    except Exception as e:  # noqa: BLE001 - single CLI boundary
        for exc_type, category in ERROR_CATEGORIES:
            if isinstance(e, exc_type):
                print(f"error category={category}: {e}", file=sys.stderr)
                return 1
        raise


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
