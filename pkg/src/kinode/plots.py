"""Static figure rendering: metric curves, latent trajectories, stick figures.

All plots are batch-rendered to image files with the Agg backend, so they
work headless. Curve figures show the cross-fold mean with a +-SD band and
the mean-baseline reference; latent figures project 3-D latent paths; stick
figures overlay predicted and true skeletons at chosen frames.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .dataset import JointSchema
from .evaluation import EvalReport, ParticipantSummary, summarize

SKELETON_EDGES = (
    ("head", "left_shoulder"),
    ("head", "right_shoulder"),
    ("left_shoulder", "right_shoulder"),
    ("left_shoulder", "left_elbow"),
    ("left_elbow", "left_wrist"),
    ("right_shoulder", "right_elbow"),
    ("right_elbow", "right_wrist"),
    ("left_shoulder", "left_hip"),
    ("right_shoulder", "right_hip"),
    ("left_hip", "right_hip"),
    ("left_hip", "left_knee"),
    ("left_knee", "left_heel"),
    ("left_heel", "left_toe"),
    ("right_hip", "right_knee"),
    ("right_knee", "right_heel"),
    ("right_heel", "right_toe"),
)


def _band(ax, x, mean, sd, label, color):
    ax.plot(x, mean, color=color, label=label)
    ax.fill_between(x, mean - sd, mean + sd, color=color, alpha=0.2, linewidth=0)


def plot_rmse_curves(
    summary: ParticipantSummary, out_path: str | Path, dpi: int = 150
) -> Path:
    """RMSE(t) with cross-fold mean +- SD, model against baseline."""
    out_path = Path(out_path)
    frames = np.arange(summary.n_frames)
    fig, ax = plt.subplots(figsize=(7, 4))
    _band(ax, frames, summary.rmse_curve_mean, summary.rmse_curve_sd,
          "model", "tab:blue")
    _band(ax, frames, summary.baseline_rmse_curve_mean,
          summary.baseline_rmse_curve_sd, "mean baseline", "tab:orange")
    ax.set_xlabel("frame")
    ax.set_ylabel("RMSE (mm)")
    ax.set_title(f"{summary.participant_id}: per-frame RMSE "
                 f"(mean ± SD over {summary.n_folds} folds)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=dpi)
    plt.close(fig)
    return out_path


def plot_r2_curves(
    summary: ParticipantSummary, out_path: str | Path, dpi: int = 150
) -> Path:
    """R2(t) with cross-fold mean +- SD, model against baseline."""
    out_path = Path(out_path)
    frames = np.arange(summary.n_frames)
    fig, ax = plt.subplots(figsize=(7, 4))
    _band(ax, frames, summary.r2_curve_mean, summary.r2_curve_sd,
          "model", "tab:blue")
    _band(ax, frames, summary.baseline_r2_curve_mean,
          summary.baseline_r2_curve_sd, "mean baseline", "tab:orange")
    ax.axhline(0.0, color="gray", linewidth=0.8, linestyle=":")
    ax.axvline(summary.n_frames // 2, color="gray", linewidth=0.8,
               linestyle="--", label="latter half")
    ax.set_xlabel("frame")
    ax.set_ylabel("$R^2(t)$")
    ax.set_ylim(-1.05, 1.05)
    ax.set_title(f"{summary.participant_id}: time-resolved $R^2$ "
                 f"(mean ± SD over {summary.n_folds} folds)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=dpi)
    plt.close(fig)
    return out_path


def plot_per_joint_rmse(
    summary: ParticipantSummary,
    schema: JointSchema,
    out_path: str | Path,
    dpi: int = 150,
) -> Path:
    """Bar chart of the per-joint RMSE averaged over folds."""
    out_path = Path(out_path)
    fig, ax = plt.subplots(figsize=(8, 4))
    names = list(schema.joint_names)
    ax.bar(range(len(names)), summary.per_joint_rmse_mean, color="tab:blue")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=8)
    ax.set_ylabel("RMSE (mm)")
    ax.set_title(f"{summary.participant_id}: per-joint RMSE (fold mean)")
    fig.tight_layout()
    fig.savefig(out_path, dpi=dpi)
    plt.close(fig)
    return out_path


def plot_latent_trajectories(
    latent_paths: Sequence[np.ndarray], out_path: str | Path, dpi: int = 150
) -> Path:
    """3-D projection of latent trajectories, one line per trial.

    Paths with fewer than 3 latent dimensions are zero-padded for display.
    """
    out_path = Path(out_path)
    fig = plt.figure(figsize=(6, 6))
    ax = fig.add_subplot(projection="3d")
    cmap = plt.get_cmap("viridis")
    n = max(len(latent_paths), 1)
    for i, path in enumerate(latent_paths):
        path = np.asarray(path, dtype=float)
        if path.ndim != 2:
            raise ValueError(f"latent path {i} must be T x d, got {path.shape}")
        if path.shape[1] < 3:
            pad = np.zeros((path.shape[0], 3 - path.shape[1]))
            path = np.hstack([path, pad])
        color = cmap(i / max(n - 1, 1))
        ax.plot(path[:, 0], path[:, 1], path[:, 2], color=color, linewidth=0.8)
        ax.scatter(*path[0, :3], color=color, s=12)
    ax.set_xlabel("$z_1$")
    ax.set_ylabel("$z_2$")
    ax.set_zlabel("$z_3$")
    ax.set_title("latent trajectories (dot = initial state)")
    fig.tight_layout()
    fig.savefig(out_path, dpi=dpi)
    plt.close(fig)
    return out_path


def _skeleton_segments(frame: np.ndarray, schema: JointSchema) -> list[np.ndarray]:
    joints = frame.reshape(-1, 3)
    segments = []
    for a, b in SKELETON_EDGES:
        if a in schema.joint_names and b in schema.joint_names:
            segments.append(
                np.stack([joints[schema.joint_index(a)], joints[schema.joint_index(b)]])
            )
    return segments


def plot_stick_figures(
    truth: np.ndarray,
    predicted: np.ndarray,
    schema: JointSchema,
    frames: Sequence[int],
    out_path: str | Path,
    dpi: int = 150,
) -> Path:
    """Overlay true and predicted skeletons at selected frames.

    Panels are side views spanning the horizontal axis with the largest
    motion range against the vertical axis.
    """
    truth = np.asarray(truth, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if truth.shape != predicted.shape or truth.ndim != 2:
        raise ValueError("truth and prediction must be equal-shaped T x D matrices")
    out_path = Path(out_path)
    up = schema.vertical_axis
    horizontal = [a for a in range(3) if a != up]
    spans = [
        np.ptp(truth.reshape(truth.shape[0], -1, 3)[:, :, a]) for a in horizontal
    ]
    across = horizontal[int(np.argmax(spans))]

    fig, axes = plt.subplots(
        1, len(frames), figsize=(3 * len(frames), 4), squeeze=False
    )
    for ax, frame_idx in zip(axes[0], frames):
        if not 0 <= frame_idx < truth.shape[0]:
            raise ValueError(f"frame {frame_idx} outside 0..{truth.shape[0] - 1}")
        for segments, color, label in (
            (_skeleton_segments(truth[frame_idx], schema), "tab:gray", "truth"),
            (_skeleton_segments(predicted[frame_idx], schema), "tab:red", "prediction"),
        ):
            for i, seg in enumerate(segments):
                ax.plot(seg[:, across], seg[:, up], color=color, linewidth=1.5,
                        label=label if i == 0 else None)
        ax.set_title(f"frame {frame_idx}", fontsize=9)
        ax.set_aspect("equal")
        ax.tick_params(labelsize=7)
    axes[0][0].legend(fontsize=8)
    fig.suptitle("true vs predicted posture")
    fig.tight_layout()
    fig.savefig(out_path, dpi=dpi)
    plt.close(fig)
    return out_path


def render_report_figures(
    reports: Sequence[EvalReport],
    schema: JointSchema,
    out_dir: str | Path,
    dpi: int = 150,
) -> list[Path]:
    """Render the standard figure set for a set of fold reports."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = summarize(reports)
    return [
        plot_rmse_curves(summary, out_dir / "rmse_curves.png", dpi=dpi),
        plot_r2_curves(summary, out_dir / "r2_curves.png", dpi=dpi),
        plot_per_joint_rmse(summary, schema, out_dir / "per_joint_rmse.png", dpi=dpi),
    ]
