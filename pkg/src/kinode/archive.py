"""Dataset archives: on-disk layout for trials, events, folds, ground truth.

An archive is a directory:

    manifest.yaml       participant, schema, frame rate, units, trial list
    trials/<id>.csv     one windowed trial per file, frame column + 45 features
    events.csv          per-trial event frames
    folds.csv           per-trial cross-validation fold
    ground_truth/       synthetic sidecar (latents, observation map, times)

Trial files are tabular text with a header row `frame,<joint>_x,<joint>_y,
<joint>_z,...` in schema order. All floats are written with 17 significant
digits, so values survive a write/read round trip bit for bit and archives
written from the same inputs are byte-identical.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .dataset import FoldAssignment, JointSchema, MotionDataset, RawTrial
from .events import TrialEvents
from .synth import SynthConfig, SynthGroundTruth

FLOAT_FORMAT = ".17g"
MANIFEST_NAME = "manifest.yaml"
TRIALS_DIR = "trials"
EVENTS_NAME = "events.csv"
FOLDS_NAME = "folds.csv"
GROUND_TRUTH_DIR = "ground_truth"


class ArchiveError(ValueError):
    """An archive or manifest is malformed."""


def _fmt(value: float) -> str:
    return format(float(value), FLOAT_FORMAT)


@dataclass(frozen=True)
class DatasetArchive:
    """A dataset archive read back into memory."""

    dataset: MotionDataset
    events: list[TrialEvents]
    folds: FoldAssignment
    ground_truth: SynthGroundTruth | None = None


def write_trial_csv(path: Path, frames: np.ndarray, schema: JointSchema) -> None:
    """Write one trial as header + one row per frame."""
    frames = np.asarray(frames, dtype=float)
    if frames.ndim != 2 or frames.shape[1] != schema.feature_dim:
        raise ValueError(f"expected T x {schema.feature_dim} frames, got {frames.shape}")
    lines = ["frame," + ",".join(schema.column_names())]
    for i, row in enumerate(frames):
        lines.append(f"{i}," + ",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def read_trial_csv(path: Path, schema: JointSchema) -> np.ndarray:
    """Read one trial file, checking the header and frame numbering."""
    lines = path.read_text().splitlines()
    if not lines:
        raise ArchiveError(f"{path}: empty trial file")
    expected = ["frame"] + schema.column_names()
    header = [c.strip() for c in lines[0].split(",")]
    if header != expected:
        raise ArchiveError(
            f"{path}: header does not match the joint schema "
            f"(got {header[:4]}..., expected {expected[:4]}...)"
        )
    if len(lines) < 2:
        raise ArchiveError(f"{path}: no data rows")
    data = np.array(
        [[float(v) for v in line.split(",")] for line in lines[1:] if line.strip()]
    )
    if data.shape[1] != len(expected):
        raise ArchiveError(f"{path}: expected {len(expected)} columns, got {data.shape[1]}")
    frame_ids = data[:, 0]
    if not np.array_equal(frame_ids, np.arange(len(frame_ids), dtype=float)):
        raise ArchiveError(f"{path}: frame column must count 0..T-1")
    return data[:, 1:]


def schema_to_manifest(schema: JointSchema) -> dict:
    return {
        "joints": list(schema.joint_names),
        "lead_knee": schema.lead_knee,
        "throwing_wrist": schema.throwing_wrist,
        "vertical_axis": schema.vertical_axis,
    }


def schema_from_manifest(data: dict) -> JointSchema:
    try:
        return JointSchema(
            joint_names=tuple(data["joints"]),
            lead_knee=data["lead_knee"],
            throwing_wrist=data["throwing_wrist"],
            vertical_axis=int(data["vertical_axis"]),
        )
    except KeyError as missing:
        raise ArchiveError(f"manifest is missing schema field {missing}") from None


def read_manifest(path: Path) -> dict:
    if not path.is_file():
        raise ArchiveError(f"manifest not found: {path}")
    data = yaml.safe_load(path.read_text())
    if not isinstance(data, dict):
        raise ArchiveError(f"{path}: manifest must be a mapping")
    return data


def manifest_trial_entries(data: dict, base_dir: Path) -> list[tuple[str, Path]]:
    """(trial_id, file path) pairs from a manifest's trial list.

    Entries are either plain file names (the id is the stem) or mappings
    with `id` and `file` keys.
    """
    entries = data.get("trials")
    if not isinstance(entries, list) or not entries:
        raise ArchiveError("manifest must list at least one trial")
    out = []
    for entry in entries:
        if isinstance(entry, str):
            path = base_dir / entry
            out.append((path.stem, path))
        elif isinstance(entry, dict) and "id" in entry and "file" in entry:
            out.append((str(entry["id"]), base_dir / entry["file"]))
        else:
            raise ArchiveError(f"bad trial entry {entry!r}; use a file name or id/file map")
    ids = [tid for tid, _ in out]
    if len(set(ids)) != len(ids):
        raise ArchiveError("duplicate trial ids in manifest")
    return out


def load_raw_trials(manifest_path: str | Path) -> tuple[list[RawTrial], JointSchema, str]:
    """Load the raw trials an ingest manifest points at.

    Returns (trials, schema, participant_id). Non-finite samples or a bad
    header fail the offending trial by name.
    """
    manifest_path = Path(manifest_path)
    data = read_manifest(manifest_path)
    schema = schema_from_manifest(data)
    frame_rate = float(data.get("frame_rate", 200.0))
    participant = str(data.get("participant_id", manifest_path.parent.name or "session"))
    trials = []
    for trial_id, file_path in manifest_trial_entries(data, manifest_path.parent):
        if not file_path.is_file():
            raise ArchiveError(f"trial {trial_id!r}: file not found: {file_path}")
        frames = read_trial_csv(file_path, schema)
        try:
            trials.append(RawTrial(trial_id=trial_id, frames=frames, frame_rate=frame_rate))
        except ValueError as err:
            raise ArchiveError(str(err)) from None
    return trials, schema, participant


def write_archive(
    out_dir: str | Path,
    dataset: MotionDataset,
    events: Sequence[TrialEvents],
    folds: FoldAssignment,
    ground_truth: SynthGroundTruth | None = None,
) -> Path:
    """Write a windowed dataset as a fresh archive directory."""
    if len(events) != dataset.n_trials:
        raise ValueError("one TrialEvents required per trial")
    if folds.n_trials != dataset.n_trials:
        raise ValueError("fold assignment must cover every trial")
    out_dir = Path(out_dir)
    trials_dir = out_dir / TRIALS_DIR
    trials_dir.mkdir(parents=True, exist_ok=True)

    manifest = {
        "participant_id": dataset.participant_id,
        "frame_rate": dataset.frame_rate,
        "units": dataset.units,
        "n_trials": dataset.n_trials,
        "n_frames": dataset.n_frames,
        "fold_count": folds.n_folds,
        "fold_seed": folds.seed,
        **schema_to_manifest(dataset.joint_schema),
        "trials": [
            {"id": tid, "file": f"{TRIALS_DIR}/{tid}.csv"} for tid in dataset.trial_ids
        ],
    }
    (out_dir / MANIFEST_NAME).write_text(yaml.safe_dump(manifest, sort_keys=True))

    for tid, frames in zip(dataset.trial_ids, dataset.trials):
        write_trial_csv(trials_dir / f"{tid}.csv", frames, dataset.joint_schema)

    event_lines = ["trial_id,onset_frame,release_frame,max_knee_height_frame,onset_at_start"]
    for tid, ev in zip(dataset.trial_ids, events):
        event_lines.append(
            f"{tid},{ev.onset_frame},{ev.release_frame},"
            f"{ev.max_knee_height_frame},{int(ev.onset_at_start)}"
        )
    (out_dir / EVENTS_NAME).write_text("\n".join(event_lines) + "\n")

    fold_lines = ["trial_id,fold_id"]
    for tid, fold in zip(dataset.trial_ids, folds.fold_of_trial):
        fold_lines.append(f"{tid},{int(fold)}")
    (out_dir / FOLDS_NAME).write_text("\n".join(fold_lines) + "\n")

    if ground_truth is not None:
        _write_ground_truth(out_dir / GROUND_TRUTH_DIR, dataset, ground_truth)
    return out_dir


def _write_ground_truth(
    gt_dir: Path, dataset: MotionDataset, truth: SynthGroundTruth
) -> None:
    gt_dir.mkdir(parents=True, exist_ok=True)
    d = truth.latent_paths.shape[-1]
    latent_cols = ",".join(f"z{i}" for i in range(d))
    lines = [f"trial_id,frame,{latent_cols}"]
    for tid, path in zip(dataset.trial_ids, truth.latent_paths):
        for frame, state in enumerate(path):
            lines.append(f"{tid},{frame}," + ",".join(_fmt(v) for v in state))
    (gt_dir / "latents.csv").write_text("\n".join(lines) + "\n")

    obs_lines = ["feature," + ",".join(f"a{i}" for i in range(d)) + ",offset"]
    for row, (a_row, b) in enumerate(zip(truth.observation_matrix, truth.offset)):
        obs_lines.append(
            f"{row}," + ",".join(_fmt(v) for v in a_row) + f",{_fmt(b)}"
        )
    (gt_dir / "observation.csv").write_text("\n".join(obs_lines) + "\n")

    time_lines = ["frame,time"] + [
        f"{i},{_fmt(t)}" for i, t in enumerate(truth.times)
    ]
    (gt_dir / "times.csv").write_text("\n".join(time_lines) + "\n")

    config = asdict(truth.config)
    if config.get("linear_matrix") is not None:
        config["linear_matrix"] = [list(row) for row in config["linear_matrix"]]
    (gt_dir / "config.yaml").write_text(yaml.safe_dump(config, sort_keys=True))


def _read_ground_truth(gt_dir: Path, trial_ids: list[str]) -> SynthGroundTruth:
    config_data = yaml.safe_load((gt_dir / "config.yaml").read_text())
    if config_data.get("linear_matrix") is not None:
        config_data["linear_matrix"] = tuple(
            tuple(row) for row in config_data["linear_matrix"]
        )
    config = SynthConfig(**config_data)

    lines = (gt_dir / "latents.csv").read_text().splitlines()[1:]
    by_trial: dict[str, list[list[float]]] = {tid: [] for tid in trial_ids}
    for line in lines:
        parts = line.split(",")
        by_trial[parts[0]].append([float(v) for v in parts[2:]])
    latents = np.array([by_trial[tid] for tid in trial_ids])

    obs_rows = [
        [float(v) for v in line.split(",")[1:]]
        for line in (gt_dir / "observation.csv").read_text().splitlines()[1:]
    ]
    obs = np.array(obs_rows)
    times = np.array(
        [
            float(line.split(",")[1])
            for line in (gt_dir / "times.csv").read_text().splitlines()[1:]
        ]
    )
    return SynthGroundTruth(
        latent_paths=latents,
        observation_matrix=obs[:, :-1],
        offset=obs[:, -1],
        times=times,
        config=config,
    )


def read_archive(archive_dir: str | Path) -> DatasetArchive:
    """Read an archive directory back into memory.

    Raises:
        ArchiveError: missing files, malformed tables, or mismatched trial
            sets.
    """
    archive_dir = Path(archive_dir)
    manifest = read_manifest(archive_dir / MANIFEST_NAME)
    schema = schema_from_manifest(manifest)
    entries = manifest_trial_entries(manifest, archive_dir)
    trial_ids = [tid for tid, _ in entries]
    trials = [read_trial_csv(path, schema) for _, path in entries]
    dataset = MotionDataset(
        trials=trials,
        trial_ids=trial_ids,
        participant_id=str(manifest.get("participant_id", "session")),
        joint_schema=schema,
        frame_rate=float(manifest.get("frame_rate", 200.0)),
        units=str(manifest.get("units", "mm")),
    )

    events_path = archive_dir / EVENTS_NAME
    if not events_path.is_file():
        raise ArchiveError(f"events table not found: {events_path}")
    events_by_id: dict[str, TrialEvents] = {}
    for line in events_path.read_text().splitlines()[1:]:
        if not line.strip():
            continue
        tid, onset, release, peak, at_start = line.split(",")
        events_by_id[tid] = TrialEvents(
            max_knee_height_frame=int(peak),
            onset_frame=int(onset),
            release_frame=int(release),
            onset_at_start=bool(int(at_start)),
        )
    missing = [tid for tid in trial_ids if tid not in events_by_id]
    if missing:
        raise ArchiveError(f"events table is missing trials: {missing[:3]}")
    events = [events_by_id[tid] for tid in trial_ids]

    folds_path = archive_dir / FOLDS_NAME
    if not folds_path.is_file():
        raise ArchiveError(f"fold table not found: {folds_path}")
    fold_by_id: dict[str, int] = {}
    for line in folds_path.read_text().splitlines()[1:]:
        if not line.strip():
            continue
        tid, fold = line.split(",")
        fold_by_id[tid] = int(fold)
    missing = [tid for tid in trial_ids if tid not in fold_by_id]
    if missing:
        raise ArchiveError(f"fold table is missing trials: {missing[:3]}")
    folds = FoldAssignment(
        n_folds=int(manifest.get("fold_count", 10)),
        fold_of_trial=np.array([fold_by_id[tid] for tid in trial_ids]),
        seed=int(manifest.get("fold_seed", 0)),
    )

    ground_truth = None
    if (archive_dir / GROUND_TRUTH_DIR).is_dir():
        ground_truth = _read_ground_truth(archive_dir / GROUND_TRUTH_DIR, trial_ids)
    return DatasetArchive(
        dataset=dataset, events=events, folds=folds, ground_truth=ground_truth
    )
