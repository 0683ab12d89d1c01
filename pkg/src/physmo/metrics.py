"""Pose-accuracy and physical-plausibility metrics.

Inputs are joint position sequences in meters, (T, J, 3); all reported
values are in millimeters (velocity metrics in mm per frame at the
evaluation fps, which is always recorded in the report).
"""

import json
from dataclasses import dataclass, asdict

import numpy as np

_MM = 1000.0


def _check(pred, ref):
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {ref.shape}")
    return pred, ref


def mpjpe(pred, ref, root_index: int = 0) -> float:
    """Root-aligned mean per-joint position error [mm], no Procrustes."""
    pred, ref = _check(pred, ref)
    pa = pred - pred[:, root_index:root_index + 1]
    ra = ref - ref[:, root_index:root_index + 1]
    return float(np.linalg.norm(pa - ra, axis=-1).mean() * _MM)


def global_root_error(pred, ref, root_index: int = 0) -> float:
    """Mean Euclidean distance between root positions [mm]."""
    pred, ref = _check(pred, ref)
    d = np.linalg.norm(pred[:, root_index] - ref[:, root_index], axis=-1)
    return float(d.mean() * _MM)


def smoothness_error(pred, ref):
    """(e_smooth, sigma_smooth) [mm/frame]: per-joint speed-magnitude
    difference |  |dp_hat| - |dp_gt|  |, joint-averaged per frame; mean and
    standard deviation over frames."""
    pred, ref = _check(pred, ref)
    if pred.shape[0] < 2:
        raise ValueError("need at least 2 frames")
    sp = np.linalg.norm(np.diff(pred, axis=0), axis=-1)
    sr = np.linalg.norm(np.diff(ref, axis=0), axis=-1)
    per_frame = np.abs(sp - sr).mean(axis=-1) * _MM
    return float(per_frame.mean()), float(per_frame.std())


def foot_metrics(pred, ref, foot_indices):
    """(e_foot_z [mm], e_foot_vxy [mm/frame]) over the given foot joints.

    e_foot_z = mean |z_hat - z_gt|; e_foot_vxy = mean |d_xy_hat - d_xy_gt|
    with d the per-frame displacement.
    """
    pred, ref = _check(pred, ref)
    fi = list(foot_indices)
    pz = pred[:, fi, 2]
    rz = ref[:, fi, 2]
    e_z = float(np.abs(pz - rz).mean() * _MM)
    dp = np.diff(pred[:, fi, :2], axis=0)
    dr = np.diff(ref[:, fi, :2], axis=0)
    e_vxy = float(np.linalg.norm(dp - dr, axis=-1).mean() * _MM)
    return e_z, e_vxy


@dataclass
class MetricsReport:
    mpjpe_mm: float
    global_root_error_mm: float
    e_smooth_mm_per_frame: float
    sigma_smooth_mm_per_frame: float
    e_foot_z_mm: float
    e_foot_vxy_mm_per_frame: float
    fps: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def to_table(self) -> str:
        rows = [
            ("MPJPE [mm]", self.mpjpe_mm),
            ("global root error [mm]", self.global_root_error_mm),
            ("e_smooth [mm/frame]", self.e_smooth_mm_per_frame),
            ("sigma_smooth [mm/frame]", self.sigma_smooth_mm_per_frame),
            ("e_foot_z [mm]", self.e_foot_z_mm),
            ("e_foot_vxy [mm/frame]", self.e_foot_vxy_mm_per_frame),
            ("evaluation fps", self.fps),
        ]
        width = max(len(n) for n, _ in rows)
        return "\n".join(f"{n:<{width}}  {v:12.4f}" for n, v in rows)


def evaluate(pred, ref, fps: float, foot_indices,
             root_index: int = 0) -> MetricsReport:
    """Full report over congruent (T, J, 3) sequences in meters."""
    e_s, s_s = smoothness_error(pred, ref)
    e_z, e_v = foot_metrics(pred, ref, foot_indices)
    return MetricsReport(
        mpjpe_mm=mpjpe(pred, ref, root_index),
        global_root_error_mm=global_root_error(pred, ref, root_index),
        e_smooth_mm_per_frame=e_s,
        sigma_smooth_mm_per_frame=s_s,
        e_foot_z_mm=e_z,
        e_foot_vxy_mm_per_frame=e_v,
        fps=fps,
    )
