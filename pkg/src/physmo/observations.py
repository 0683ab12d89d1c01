"""Observation sequences: per-frame keypoints, confidences and camera."""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np


class ValidationError(ValueError):
    """Schema violation; `path` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: x_cam = R x_world + t, pixel = K project(x_cam)."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # (3, 3) world -> camera
    translation: np.ndarray  # (3,)

    def world_to_cam(self, p: np.ndarray) -> np.ndarray:
        return p @ np.asarray(self.rotation).T + np.asarray(self.translation)

    def cam_to_world(self, p: np.ndarray) -> np.ndarray:
        R = np.asarray(self.rotation)
        return (p - np.asarray(self.translation)) @ R

    def project(self, p_cam: np.ndarray) -> np.ndarray:
        z = p_cam[..., 2:]
        return np.stack(
            [self.fx * p_cam[..., 0] / z[..., 0] + self.cx,
             self.fy * p_cam[..., 1] / z[..., 0] + self.cy], axis=-1)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "rotation": np.asarray(self.rotation).tolist(),
            "translation": np.asarray(self.translation).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            fx=float(d["fx"]), fy=float(d["fy"]),
            cx=float(d["cx"]), cy=float(d["cy"]),
            rotation=np.asarray(d["rotation"], dtype=np.float64),
            translation=np.asarray(d["translation"], dtype=np.float64),
        )


@dataclass
class ObservationSequence:
    """Noisy per-frame pose observations driving the refinement.

    keypoints_3d are in camera coordinates [m]; keypoints_2d in pixels;
    confidences in [0, 1]. The ground plane is z = ground_height in world
    coordinates.
    """

    fps: float
    keypoints_3d: np.ndarray  # (T, J, 3)
    keypoints_2d: np.ndarray  # (T, J, 2)
    confidence: np.ndarray  # (T, J)
    camera: Camera
    ground_height: float = 0.0
    joint_names: tuple = ()
    warning_count: int = 0

    @property
    def n_frames(self) -> int:
        return self.keypoints_3d.shape[0]

    @property
    def n_joints(self) -> int:
        return self.keypoints_3d.shape[1]

    def frame_times(self) -> np.ndarray:
        return np.arange(self.n_frames) / self.fps

    def keypoints_world(self) -> np.ndarray:
        return self.camera.cam_to_world(self.keypoints_3d)

    def to_json(self) -> str:
        return json.dumps({
            "fps": self.fps,
            "ground_height": self.ground_height,
            "joint_names": list(self.joint_names),
            "camera": self.camera.to_dict(),
            "keypoints_3d": self.keypoints_3d.tolist(),
            "keypoints_2d": self.keypoints_2d.tolist(),
            "confidence": self.confidence.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "ObservationSequence":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ValidationError("<document>", f"invalid JSON: {e}") from e
        for key in ("fps", "camera", "keypoints_3d", "keypoints_2d", "confidence"):
            if key not in doc:
                raise ValidationError(key, "missing required field")
        fps = float(doc["fps"])
        if fps <= 0:
            raise ValidationError("fps", f"must be positive, got {fps}")
        kp3 = np.asarray(doc["keypoints_3d"], dtype=np.float64)
        kp2 = np.asarray(doc["keypoints_2d"], dtype=np.float64)
        conf = np.asarray(doc["confidence"], dtype=np.float64)
        if kp3.ndim != 3 or kp3.shape[2] != 3:
            raise ValidationError("keypoints_3d", f"expected (T, J, 3), got {kp3.shape}")
        if kp2.shape != kp3.shape[:2] + (2,):
            raise ValidationError("keypoints_2d", f"shape {kp2.shape} does not match keypoints_3d")
        if conf.shape != kp3.shape[:2]:
            raise ValidationError("confidence", f"shape {conf.shape} does not match keypoints_3d")
        if ((conf < 0) | (conf > 1)).any():
            t, j = np.argwhere((conf < 0) | (conf > 1))[0]
            raise ValidationError(f"confidence[{t}][{j}]",
                                  f"must lie in [0, 1], got {conf[t, j]}")
        # NaN keypoints are unusable: zero their confidence and warn
        warning_count = 0
        bad = ~np.isfinite(kp3).all(axis=-1) | ~np.isfinite(kp2).all(axis=-1)
        if bad.any():
            warning_count = int(bad.sum())
            warnings.warn(f"{warning_count} keypoints are NaN; confidence forced to 0")
            conf = np.where(bad, 0.0, conf)
            kp3 = np.nan_to_num(kp3)
            kp2 = np.nan_to_num(kp2)
        return cls(
            fps=fps,
            keypoints_3d=kp3,
            keypoints_2d=kp2,
            confidence=conf,
            camera=Camera.from_dict(doc["camera"]),
            ground_height=float(doc.get("ground_height", 0.0)),
            joint_names=tuple(doc.get("joint_names", ())),
            warning_count=warning_count,
        )
