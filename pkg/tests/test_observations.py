"""Observation file parsing, validation, and camera geometry."""

import json

import numpy as np
import pytest

from physmo import Camera, ObservationSequence, ValidationError


def make_doc(T=2, J=3, **overrides):
    doc = {
        "fps": 50.0,
        "camera": {
            "fx": 1000.0, "fy": 1000.0, "cx": 500.0, "cy": 500.0,
            "rotation": np.eye(3).tolist(),
            "translation": [0.0, 0.0, 0.0],
        },
        "keypoints_3d": np.zeros((T, J, 3)).tolist(),
        "keypoints_2d": np.zeros((T, J, 2)).tolist(),
        "confidence": np.ones((T, J)).tolist(),
    }
    doc.update(overrides)
    return doc


class TestCamera:
    def test_world_cam_round_trip(self, rng):
        th = 0.4
        R = np.array([[np.cos(th), -np.sin(th), 0],
                      [np.sin(th), np.cos(th), 0],
                      [0, 0, 1.0]])
        cam = Camera(fx=1000, fy=1000, cx=500, cy=500,
                     rotation=R, translation=np.array([0.1, -0.2, 3.0]))
        p = rng.normal(size=(4, 3))
        np.testing.assert_allclose(cam.cam_to_world(cam.world_to_cam(p)), p,
                                   atol=1e-12)

    def test_projection_center_point(self):
        cam = Camera(fx=1000, fy=1000, cx=500, cy=500,
                     rotation=np.eye(3), translation=np.zeros(3))
        px = cam.project(np.array([[0.0, 0.0, 2.0]]))
        np.testing.assert_allclose(px, [[500.0, 500.0]])

    def test_dict_round_trip(self):
        cam = Camera(fx=900, fy=950, cx=480, cy=270,
                     rotation=np.eye(3), translation=np.array([1.0, 2.0, 3.0]))
        back = Camera.from_dict(cam.to_dict())
        assert back.fx == cam.fx and back.cy == cam.cy
        np.testing.assert_array_equal(back.translation, cam.translation)


class TestObservationParsing:
    def test_minimal_two_frame_file(self):
        obs = ObservationSequence.from_json(json.dumps(make_doc()))
        assert obs.n_frames == 2
        assert obs.n_joints == 3
        assert obs.fps == 50.0
        np.testing.assert_allclose(obs.frame_times(), [0.0, 0.02])

    def test_json_round_trip(self, rng):
        doc = make_doc()
        doc["keypoints_3d"] = rng.normal(size=(2, 3, 3)).tolist()
        obs = ObservationSequence.from_json(json.dumps(doc))
        back = ObservationSequence.from_json(obs.to_json())
        np.testing.assert_array_equal(back.keypoints_3d, obs.keypoints_3d)
        assert back.fps == obs.fps

    def test_missing_field_names_path(self):
        doc = make_doc()
        del doc["confidence"]
        with pytest.raises(ValidationError, match="confidence"):
            ObservationSequence.from_json(json.dumps(doc))

    def test_invalid_json_rejected(self):
        with pytest.raises(ValidationError, match="invalid JSON"):
            ObservationSequence.from_json("{not json")

    def test_confidence_out_of_range_names_element(self):
        doc = make_doc()
        doc["confidence"][1][2] = 1.5
        with pytest.raises(ValidationError, match=r"confidence\[1\]\[2\]"):
            ObservationSequence.from_json(json.dumps(doc))

    def test_bad_fps_rejected(self):
        with pytest.raises(ValidationError, match="fps"):
            ObservationSequence.from_json(json.dumps(make_doc(fps=0.0)))

    def test_shape_mismatch_rejected(self):
        doc = make_doc()
        doc["keypoints_2d"] = np.zeros((2, 4, 2)).tolist()
        with pytest.raises(ValidationError, match="keypoints_2d"):
            ObservationSequence.from_json(json.dumps(doc))

    def test_nan_keypoint_zeroes_confidence_with_warning(self):
        doc = make_doc()
        doc["keypoints_3d"][0][1][0] = float("nan")
        with pytest.warns(UserWarning, match="confidence forced to 0"):
            obs = ObservationSequence.from_json(json.dumps(doc))
        assert obs.confidence[0][1] == 0.0
        assert obs.warning_count == 1
        assert np.isfinite(obs.keypoints_3d).all()

    def test_keypoints_world_inverts_camera(self, rng):
        doc = make_doc()
        kp_world = rng.normal(size=(2, 3, 3))
        cam = Camera.from_dict(doc["camera"])
        doc["keypoints_3d"] = cam.world_to_cam(kp_world).tolist()
        obs = ObservationSequence.from_json(json.dumps(doc))
        np.testing.assert_allclose(obs.keypoints_world(), kp_world,
                                   atol=1e-12)
