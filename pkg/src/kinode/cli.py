"""Command-line interface: ingest, synth, train, eval, reconstruct, plot.

Each verb is a batch command with a fixed artifact layout under its output
directory, a machine-readable run manifest (config hash, seed, versions),
and exit code 0 exactly when every requested artifact was produced. Input
archives are never mutated. `--fold all` trains folds sequentially by
default; set KINODE_WORKERS to fan folds out to that many processes.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .archive import (
    ArchiveError,
    DatasetArchive,
    load_raw_trials,
    read_archive,
    write_archive,
)
from .config import (
    ConfigError,
    ExperimentConfig,
    config_hash,
    experiment_config_from_dict,
    experiment_config_to_dict,
    load_experiment_config,
)
from .dataset import align_and_window, make_folds
from .evaluation import (
    baseline_predict,
    load_report,
    make_eval_report,
    predict_dataset,
    r2_from_arrays,
    save_curves_csv,
    save_report,
    stack_predictions,
    summarize,
)
from .events import (
    DEFAULT_SMOOTHING_WINDOW,
    EventDetectionError,
    TrialEvents,
    detect_events,
)
from .synth import synth_generate
from .training import (
    TrainingDivergedError,
    load_checkpoint,
    save_checkpoint,
    train_fold,
    validation_metrics,
)

SUMMARY_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ExperimentLayout:
    """Artifact paths under one experiment root; pure functions of (root, fold)."""

    root: Path

    @property
    def checkpoints_dir(self) -> Path:
        return self.root / "checkpoints"

    def checkpoint_path(self, fold_id: int) -> Path:
        return self.checkpoints_dir / f"fold_{fold_id:02d}.pt"

    def history_path(self, fold_id: int) -> Path:
        return self.checkpoints_dir / f"fold_{fold_id:02d}_history.json"

    @property
    def reports_dir(self) -> Path:
        return self.root / "reports"

    def report_path(self, fold_id: int) -> Path:
        return self.reports_dir / f"fold_{fold_id:02d}.json"

    def curves_path(self, fold_id: int) -> Path:
        return self.reports_dir / f"fold_{fold_id:02d}_curves.csv"

    @property
    def summary_path(self) -> Path:
        return self.reports_dir / "summary.json"

    @property
    def plots_dir(self) -> Path:
        return self.root / "plots"

    @property
    def reconstructions_dir(self) -> Path:
        return self.root / "reconstructions"

    def run_manifest_path(self, command: str) -> Path:
        return self.root / f"run_{command}.json"


def _write_run_manifest(
    layout_root: Path, command: str, config: ExperimentConfig, seed: int
) -> None:
    manifest = {
        "command": command,
        "config_hash": config_hash(config),
        "seed": seed,
        "versions": {
            "kinode": __version__,
            "torch": torch.__version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    layout_root.mkdir(parents=True, exist_ok=True)
    path = ExperimentLayout(layout_root).run_manifest_path(command)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return load_experiment_config(path)


def _fold_ids(fold_arg: str, n_folds: int) -> list[int]:
    if fold_arg == "all":
        return list(range(n_folds))
    fold = int(fold_arg)
    if not 0 <= fold < n_folds:
        raise ValueError(f"fold {fold} outside 0..{n_folds - 1}")
    return [fold]


def cmd_ingest(
    manifest_path: str,
    out_dir: str,
    config: ExperimentConfig,
    seed: int,
    smoothing_window: int = DEFAULT_SMOOTHING_WINDOW,
) -> int:
    """Detect events, window, and archive the trials a manifest points at."""
    trials, schema, participant = load_raw_trials(manifest_path)
    events = []
    failures = []
    for trial in trials:
        knee = trial.joint_positions(schema, schema.lead_knee)[:, schema.vertical_axis]
        wrist = trial.joint_positions(schema, schema.throwing_wrist)
        try:
            events.append(
                detect_events(knee, wrist, trial.frame_rate, smoothing_window)
            )
        except (EventDetectionError, ValueError) as err:
            failures.append((trial.trial_id, str(err)))
    if failures:
        for trial_id, message in failures:
            print(f"error: trial {trial_id!r}: {message}", file=sys.stderr)
        print(f"ingest failed for {len(failures)} trial(s); no archive written",
              file=sys.stderr)
        return 1

    print("trial_id,onset_frame,release_frame,max_knee_height_frame")
    for trial, ev in zip(trials, events):
        print(f"{trial.trial_id},{ev.onset_frame},{ev.release_frame},"
              f"{ev.max_knee_height_frame}")

    dataset = align_and_window(trials, events, participant, schema)
    folds = make_folds(dataset.n_trials, config.n_folds, seed)
    write_archive(out_dir, dataset, events, folds)
    _write_run_manifest(Path(out_dir), "ingest", config, seed)
    print(f"archive written to {out_dir}: {dataset.n_trials} trials x "
          f"{dataset.n_frames} frames")
    return 0


def cmd_synth(config: ExperimentConfig, seed: int, out_dir: str) -> int:
    """Generate a synthetic dataset archive with its ground-truth sidecar."""
    dataset, truth = synth_generate(config.synth, seed)
    last = dataset.n_frames - 1
    events = [
        TrialEvents(max_knee_height_frame=0, onset_frame=0, release_frame=last)
        for _ in range(dataset.n_trials)
    ]
    folds = make_folds(dataset.n_trials, config.n_folds, seed)
    write_archive(out_dir, dataset, events, folds, ground_truth=truth)
    _write_run_manifest(Path(out_dir), "synth", config, seed)
    print(f"synthetic archive written to {out_dir}: {dataset.n_trials} trials x "
          f"{dataset.n_frames} frames ({config.synth.dynamics} dynamics)")
    return 0


def _train_one_fold(
    archive: DatasetArchive,
    config: ExperimentConfig,
    fold_id: int,
    seed: int,
    layout: ExperimentLayout,
) -> None:
    train_config = (
        config.train if seed == config.train.seed
        else replace(config.train, seed=seed)
    )
    epochs = train_config.epochs
    params, history = train_fold(
        archive.dataset, archive.folds, fold_id, train_config, config.model,
        log_every=max(1, epochs // 10),
    )
    metrics = validation_metrics(
        params, archive.dataset, archive.folds, fold_id, train_config
    )
    layout.checkpoints_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(layout.checkpoint_path(fold_id), params, train_config, metrics)
    layout.history_path(fold_id).write_text(
        json.dumps(
            {
                "fold_id": fold_id,
                "total_loss": history.total_loss,
                "recon_loss": history.recon_loss,
                "kl_loss": history.kl_loss,
                "epoch_seconds": history.epoch_seconds,
            },
            indent=2,
        )
        + "\n"
    )
    print(f"fold {fold_id}: final loss {history.total_loss[-1]:.6f}, "
          f"val loss {metrics['val_total_loss']:.6f}")


def _train_fold_worker(args: tuple) -> tuple[int, str | None]:
    config_dict, data_dir, out_dir, fold_id, seed = args
    try:
        config = experiment_config_from_dict(config_dict)
        archive = read_archive(data_dir)
        _train_one_fold(archive, config, fold_id, seed, ExperimentLayout(Path(out_dir)))
        return fold_id, None
    except Exception as err:  # propagated as a message across the process boundary
        return fold_id, f"{type(err).__name__}: {err}"


def cmd_train(
    config: ExperimentConfig,
    data_dir: str,
    out_dir: str,
    fold_arg: str,
    seed: int | None,
) -> int:
    """Train one fold or all folds from an archived dataset."""
    archive = read_archive(data_dir)
    effective_seed = config.train.seed if seed is None else seed
    fold_ids = _fold_ids(fold_arg, archive.folds.n_folds)
    layout = ExperimentLayout(Path(out_dir))
    workers = int(os.environ.get("KINODE_WORKERS", "1"))

    failures: list[tuple[int, str]] = []
    if workers > 1 and len(fold_ids) > 1:
        jobs = [
            (experiment_config_to_dict(config), data_dir, out_dir, f, effective_seed)
            for f in fold_ids
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for fold_id, error in pool.map(_train_fold_worker, jobs):
                if error is not None:
                    failures.append((fold_id, error))
    else:
        for fold_id in fold_ids:
            try:
                _train_one_fold(archive, config, fold_id, effective_seed, layout)
            except TrainingDivergedError as err:
                failures.append((fold_id, str(err)))

    if failures:
        for fold_id, message in failures:
            print(f"error: fold {fold_id}: {message}", file=sys.stderr)
        return 1
    _write_run_manifest(Path(out_dir), "train", config, effective_seed)
    print(f"wrote {len(fold_ids)} checkpoint(s) to {layout.checkpoints_dir}")
    return 0


def cmd_eval(
    config: ExperimentConfig,
    data_dir: str,
    out_dir: str,
    fold_arg: str,
    log_train_r2: bool = False,
) -> int:
    """Score checkpoints on their held-out folds; write reports, CSVs, figures."""
    archive = read_archive(data_dir)
    dataset = archive.dataset
    layout = ExperimentLayout(Path(out_dir))
    fold_ids = _fold_ids(fold_arg, archive.folds.n_folds)

    missing = [f for f in fold_ids if not layout.checkpoint_path(f).is_file()]
    if missing:
        for fold_id in missing:
            print(f"error: missing checkpoint for fold {fold_id}: "
                  f"{layout.checkpoint_path(fold_id)}", file=sys.stderr)
        return 1

    layout.reports_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for fold_id in fold_ids:
        loaded = load_checkpoint(layout.checkpoint_path(fold_id))
        params = loaded.params
        test_idx = archive.folds.test_indices(fold_id)
        train_idx = archive.folds.train_indices(fold_id)
        predictions = predict_dataset(
            params,
            [dataset.trials[i] for i in test_idx],
            [dataset.trial_ids[i] for i in test_idx],
        )
        baseline = baseline_predict([dataset.trials[i] for i in train_idx])
        report = make_eval_report(
            predictions, baseline, dataset.participant_id, fold_id
        )
        save_report(report, layout.report_path(fold_id))
        save_curves_csv(report, layout.curves_path(fold_id))
        reports.append(report)
        line = (f"fold {fold_id}: rmse {report.rmse_overall:.3f} mm, "
                f"R2 full {report.mean_r2_full:.4f}, "
                f"latter half {report.mean_r2_latter_half:.4f}")
        if log_train_r2:
            train_preds = predict_dataset(
                params,
                [dataset.trials[i] for i in train_idx],
                [dataset.trial_ids[i] for i in train_idx],
            )
            truth, predicted = stack_predictions(train_preds)
            train_r2 = r2_from_arrays(truth, predicted)
            train_mean = float(np.nanmean(train_r2))
            gap = "holds" if train_mean > report.mean_r2_full else "DOES NOT HOLD"
            line += (f" | train-split R2 {train_mean:.4f} "
                     f"(generalization gap {gap})")
        print(line)

    summary = summarize(reports)
    summary_body = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "participant_id": summary.participant_id,
        "n_folds": summary.n_folds,
        "sd_convention": "population",
        "mean_r2_full": summary.r2_full[0],
        "sd_r2_full": summary.r2_full[1],
        "mean_r2_latter_half": summary.r2_latter_half[0],
        "sd_r2_latter_half": summary.r2_latter_half[1],
        "mean_rmse_mm": summary.rmse_overall[0],
        "sd_rmse_mm": summary.rmse_overall[1],
        "mean_rmse_latter_half_mm": summary.rmse_latter_half[0],
        "sd_rmse_latter_half_mm": summary.rmse_latter_half[1],
        "baseline_mean_r2_full": summary.baseline_r2_full[0],
        "baseline_mean_r2_latter_half": summary.baseline_r2_latter_half[0],
        "baseline_mean_rmse_mm": summary.baseline_rmse_overall[0],
        "baseline_mean_rmse_latter_half_mm": summary.baseline_rmse_latter_half[0],
        "n_undefined_r2": summary.n_undefined_r2,
    }
    layout.summary_path.write_text(json.dumps(summary_body, indent=2) + "\n")

    from .plots import render_report_figures

    render_report_figures(reports, dataset.joint_schema, layout.plots_dir)
    _write_run_manifest(Path(out_dir), "eval", config, config.train.seed)
    print(f"summary: R2 full {summary.r2_full[0]:.4f} ± {summary.r2_full[1]:.4f}, "
          f"latter half {summary.r2_latter_half[0]:.4f} ± "
          f"{summary.r2_latter_half[1]:.4f}, rmse {summary.rmse_overall[0]:.3f} mm")
    return 0


def cmd_reconstruct(
    config: ExperimentConfig,
    data_dir: str,
    out_dir: str,
    fold_arg: str,
    max_trials: int | None = None,
) -> int:
    """Export per-trial predictions, truths, and latent paths as CSV files."""
    archive = read_archive(data_dir)
    dataset = archive.dataset
    layout = ExperimentLayout(Path(out_dir))
    fold_ids = _fold_ids(fold_arg, archive.folds.n_folds)
    for fold_id in fold_ids:
        ckpt_path = layout.checkpoint_path(fold_id)
        if not ckpt_path.is_file():
            print(f"error: missing checkpoint for fold {fold_id}: {ckpt_path}",
                  file=sys.stderr)
            return 1
        params = load_checkpoint(ckpt_path).params
        test_idx = list(archive.folds.test_indices(fold_id))
        if max_trials is not None:
            test_idx = test_idx[:max_trials]
        predictions = predict_dataset(
            params,
            [dataset.trials[i] for i in test_idx],
            [dataset.trial_ids[i] for i in test_idx],
        )
        fold_dir = layout.reconstructions_dir / f"fold_{fold_id:02d}"
        fold_dir.mkdir(parents=True, exist_ok=True)
        columns = dataset.joint_schema.column_names()
        header = "frame," + ",".join(columns)
        for pred in predictions:
            for name, matrix in (("prediction", pred.predicted), ("truth", pred.truth)):
                lines = [header]
                for i, row in enumerate(matrix):
                    lines.append(f"{i}," + ",".join(format(v, ".9g") for v in row))
                (fold_dir / f"{pred.trial_id}_{name}.csv").write_text(
                    "\n".join(lines) + "\n"
                )
            states = pred.latent_path.states.numpy()
            d = states.shape[-1]
            lines = ["frame," + ",".join(f"z{i}" for i in range(d))]
            for i, row in enumerate(states):
                lines.append(f"{i}," + ",".join(format(v, ".9g") for v in row))
            (fold_dir / f"{pred.trial_id}_latents.csv").write_text(
                "\n".join(lines) + "\n"
            )
        print(f"fold {fold_id}: exported {len(predictions)} trial reconstructions "
              f"to {fold_dir}")
    _write_run_manifest(Path(out_dir), "reconstruct", config, config.train.seed)
    return 0


def cmd_plot(run_dir: str, out_dir: str | None, data_dir: str | None) -> int:
    """Re-render figures from saved reports and reconstructions."""
    from .dataset import DEFAULT_SCHEMA
    from .plots import (
        plot_latent_trajectories,
        plot_stick_figures,
        render_report_figures,
    )

    layout = ExperimentLayout(Path(run_dir))
    plots_dir = Path(out_dir) if out_dir else layout.plots_dir
    schema = DEFAULT_SCHEMA
    if data_dir is not None:
        schema = read_archive(data_dir).dataset.joint_schema

    report_files = sorted(layout.reports_dir.glob("fold_*.json"))
    produced: list[Path] = []
    if report_files:
        reports = [load_report(p) for p in report_files]
        produced += render_report_figures(reports, schema, plots_dir)

    recon_root = layout.reconstructions_dir
    if recon_root.is_dir():
        for fold_dir in sorted(recon_root.glob("fold_*")):
            latent_files = sorted(fold_dir.glob("*_latents.csv"))
            if latent_files:
                paths = [
                    np.loadtxt(p, delimiter=",", skiprows=1)[:, 1:]
                    for p in latent_files
                ]
                out = plots_dir / f"latents_{fold_dir.name}.png"
                produced.append(plot_latent_trajectories(paths, out))
            pred_files = sorted(fold_dir.glob("*_prediction.csv"))
            if pred_files:
                pred_file = pred_files[0]
                truth_file = Path(str(pred_file).replace("_prediction", "_truth"))
                if truth_file.is_file():
                    predicted = np.loadtxt(pred_file, delimiter=",", skiprows=1)[:, 1:]
                    truth = np.loadtxt(truth_file, delimiter=",", skiprows=1)[:, 1:]
                    n = truth.shape[0]
                    frames = sorted({0, n // 4, n // 2, (3 * n) // 4, n - 1})
                    out = plots_dir / f"stick_{fold_dir.name}_{pred_file.stem}.png"
                    produced.append(
                        plot_stick_figures(truth, predicted, schema, frames, out)
                    )
    if not produced:
        print(f"error: nothing to plot under {run_dir} (no reports or "
              f"reconstructions)", file=sys.stderr)
        return 1
    for path in produced:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kinode",
        description="Latent-ODE motion modeling: encode an initial movement "
                    "segment, integrate learned dynamics, decode and score "
                    "full-body motion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, data_help: str, out_help: str, with_fold: bool = True):
        sp.add_argument("--config", help="experiment config YAML (defaults apply "
                                         "when omitted)")
        sp.add_argument("--data", help=data_help)
        sp.add_argument("--out", required=True, help=out_help)
        sp.add_argument("--seed", type=int, default=None,
                        help="seed override (default: config value)")
        if with_fold:
            sp.add_argument("--fold", default="all",
                            help="fold id or 'all' (default: all)")

    sp = sub.add_parser("ingest", help="detect events, window, and archive raw trials")
    common(sp, "ingest manifest YAML listing the trial files", "archive directory",
           with_fold=False)
    sp.add_argument("--smoothing-window", type=int, default=DEFAULT_SMOOTHING_WINDOW,
                    help="moving-average width for event velocities; below 2 "
                         "disables smoothing (default: %(default)s)")

    sp = sub.add_parser("synth", help="generate a synthetic dataset archive")
    common(sp, "(unused)", "archive directory", with_fold=False)

    sp = sub.add_parser("train", help="train folds on an archived dataset")
    common(sp, "dataset archive directory", "experiment output directory")

    sp = sub.add_parser("eval", help="score trained folds on held-out trials")
    common(sp, "dataset archive directory", "experiment output directory")
    sp.add_argument("--log-train-r2", action="store_true",
                    help="also report R2 on each fold's training split")

    sp = sub.add_parser("reconstruct", help="export predictions and latent paths")
    common(sp, "dataset archive directory", "experiment output directory")
    sp.add_argument("--max-trials", type=int, default=None,
                    help="cap on exported test trials per fold")

    sp = sub.add_parser("plot", help="render figures from saved reports")
    sp.add_argument("--data", help="dataset archive (for joint names); optional")
    sp.add_argument("--out", help="figure directory (default: <run>/plots)")
    sp.add_argument("--run", required=True,
                    help="experiment directory holding reports/reconstructions")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "ingest":
            if args.data is None:
                raise ArchiveError("ingest needs --data pointing at a manifest")
            config = _load_config(args.config)
            return cmd_ingest(args.data, args.out, config,
                              seed=0 if args.seed is None else args.seed,
                              smoothing_window=args.smoothing_window)
        if args.command == "synth":
            config = _load_config(args.config)
            return cmd_synth(config, 0 if args.seed is None else args.seed, args.out)
        if args.command == "train":
            if args.data is None:
                raise ArchiveError("train needs --data pointing at an archive")
            config = _load_config(args.config)
            return cmd_train(config, args.data, args.out, args.fold, args.seed)
        if args.command == "eval":
            if args.data is None:
                raise ArchiveError("eval needs --data pointing at an archive")
            config = _load_config(args.config)
            return cmd_eval(config, args.data, args.out, args.fold,
                            log_train_r2=args.log_train_r2)
        if args.command == "reconstruct":
            if args.data is None:
                raise ArchiveError("reconstruct needs --data pointing at an archive")
            config = _load_config(args.config)
            return cmd_reconstruct(config, args.data, args.out, args.fold,
                                   max_trials=args.max_trials)
        if args.command == "plot":
            return cmd_plot(args.run, args.out, args.data)
        raise ValueError(f"unknown command {args.command!r}")
    except (ArchiveError, ConfigError, EventDetectionError,
            TrainingDivergedError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
