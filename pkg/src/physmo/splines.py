"""Cubic Hermite spline motion parameterization with Catmull-Rom init.

All time-varying optimization variables (root position, yaw increments,
xy tilt, joint rotations, contact forces) share one knot grid obtained by
subsampling the frame grid (factor 8 by default). Knot values and tangents
are both optimized.
"""

import json
from dataclasses import dataclass, field

import numpy as np
import torch

from physmo.body import GRAVITY
from physmo.quaternions import DTYPE, as_tensor


@dataclass
class HermiteChannel:
    """One spline channel: knot times, values and tangents.

    values/tangents have shape (K,) or (K, C); tangents are in value units
    per second.
    """

    times: np.ndarray
    values: np.ndarray
    tangents: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.tangents = np.asarray(self.tangents, dtype=np.float64)
        if self.times.size < 2:
            raise ValueError("need at least 2 knots")
        if (np.diff(self.times) <= 0).any():
            raise ValueError("knot times must be strictly increasing")
        if self.values.shape != self.tangents.shape:
            raise ValueError("values and tangents must have the same shape")


def catmull_rom_tangents(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Interior tangents (p_{i+1}-p_{i-1})/(t_{i+1}-t_{i-1}); one-sided ends."""
    t = times.reshape((-1,) + (1,) * (values.ndim - 1))
    m = np.empty_like(values)
    m[1:-1] = (values[2:] - values[:-2]) / (t[2:] - t[:-2])
    m[0] = (values[1] - values[0]) / (t[1] - t[0])
    m[-1] = (values[-1] - values[-2]) / (t[-1] - t[-2])
    return m


def knot_grid(n_frames: int, rate: float, subsample: int = 8) -> np.ndarray:
    """Knot times at every `subsample`-th frame plus the final frame."""
    if n_frames < 2 * subsample:
        raise ValueError(f"need at least {2 * subsample} frames, got {n_frames}")
    idx = list(range(0, n_frames, subsample))
    if idx[-1] != n_frames - 1:
        idx.append(n_frames - 1)
    return np.asarray(idx, dtype=np.float64) / rate


def init_channel(samples, rate: float, subsample: int = 8) -> HermiteChannel:
    """Channel whose knots subsample the given per-frame values.

    Knot values are taken from the samples directly and tangents follow
    the Catmull-Rom rule.
    """
    samples = np.asarray(samples, dtype=np.float64)
    times = knot_grid(samples.shape[0], rate, subsample)
    idx = np.round(times * rate).astype(int)
    values = samples[idx]
    return HermiteChannel(times, values, catmull_rom_tangents(times, values))


def _segment_lookup(times: np.ndarray, t: np.ndarray):
    """Segment index and local parameter for query times; out-of-range
    queries are clamped to the support and counted."""
    clipped = np.clip(t, times[0], times[-1])
    n_clamped = int((t != clipped).sum())
    seg = np.searchsorted(times, clipped, side="right") - 1
    seg = np.clip(seg, 0, len(times) - 2)
    h = times[seg + 1] - times[seg]
    u = (clipped - times[seg]) / h
    return seg, u, h, n_clamped


def hermite_eval(channel: HermiteChannel, t, with_derivative: bool = False):
    """Evaluate the spline (and optionally its time derivative) at t.

    Queries outside [t_0, t_last] are clamped to the boundary value.
    """
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    seg, u, h, _ = _segment_lookup(channel.times, t)
    y0, y1 = channel.values[seg], channel.values[seg + 1]
    m0, m1 = channel.tangents[seg], channel.tangents[seg + 1]
    if channel.values.ndim > 1:
        u = u.reshape(-1, *([1] * (channel.values.ndim - 1)))
        h = h.reshape(u.shape)
    u2, u3 = u * u, u * u * u
    val = ((2 * u3 - 3 * u2 + 1) * y0 + (u3 - 2 * u2 + u) * h * m0
           + (-2 * u3 + 3 * u2) * y1 + (u3 - u2) * h * m1)
    if not with_derivative:
        return val
    dv = ((6 * u2 - 6 * u) * y0 / h + (3 * u2 - 4 * u + 1) * m0
          + (-6 * u2 + 6 * u) * y1 / h + (3 * u2 - 2 * u) * m1)
    return val, dv


class SplineSampler:
    """Precomputed torch evaluation of all channels on a fixed time grid.

    Channels share one knot grid, so a single (K, C) value/tangent matrix
    is evaluated with one gather per query batch. The sampler is the hot
    path of every loss evaluation.
    """

    def __init__(self, knot_times: np.ndarray, query_times: np.ndarray):
        seg, u, h, self.n_clamped = _segment_lookup(
            np.asarray(knot_times, dtype=np.float64),
            np.asarray(query_times, dtype=np.float64),
        )
        self.seg = torch.as_tensor(seg, dtype=torch.long)
        u_t = torch.as_tensor(u, dtype=DTYPE)[:, None]
        h_t = torch.as_tensor(h, dtype=DTYPE)[:, None]
        u2, u3 = u_t * u_t, u_t * u_t * u_t
        self.h00 = 2 * u3 - 3 * u2 + 1
        self.h10 = (u3 - 2 * u2 + u_t) * h_t
        self.h01 = -2 * u3 + 3 * u2
        self.h11 = (u3 - u2) * h_t

    def eval(self, values: torch.Tensor, tangents: torch.Tensor) -> torch.Tensor:
        """values, tangents: (K, C) -> samples (T, C)."""
        y0 = values[self.seg]
        y1 = values[self.seg + 1]
        m0 = tangents[self.seg]
        m1 = tangents[self.seg + 1]
        return self.h00 * y0 + self.h10 * m0 + self.h01 * y1 + self.h11 * m1


@dataclass
class ChannelLayout:
    """Column assignment of the shared (K, C) channel matrix."""

    n_joints: int
    n_sites: int

    @property
    def root_pos(self):
        return slice(0, 3)

    @property
    def yaw(self):
        return slice(3, 4)

    @property
    def xy(self):
        return slice(4, 6)

    @property
    def joints(self):
        return slice(6, 6 + 3 * (self.n_joints - 1))

    @property
    def forces(self):
        j = 6 + 3 * (self.n_joints - 1)
        return slice(j, j + 3 * self.n_sites)

    @property
    def n_columns(self):
        return 6 + 3 * (self.n_joints - 1) + 3 * self.n_sites


@dataclass
class MotionParams:
    """Spline-parameterized optimization variables for one clip.

    Contact-force channels are stored in body-weight units (1.0 =
    total_mass * 9.81 N) for conditioning; dynamics converts to Newtons.
    Optional knot-interval optimization is off by default (negligible
    effect on results); when disabled the knot times are fixed.
    """

    knot_times: np.ndarray
    values: np.ndarray  # (K, C)
    tangents: np.ndarray  # (K, C)
    shape: np.ndarray  # (n_joints - 1,)
    scale: float
    layout: ChannelLayout

    @classmethod
    def zeros(cls, knot_times, n_joints: int, n_sites: int) -> "MotionParams":
        layout = ChannelLayout(n_joints, n_sites)
        K = len(knot_times)
        return cls(
            knot_times=np.asarray(knot_times, dtype=np.float64),
            values=np.zeros((K, layout.n_columns)),
            tangents=np.zeros((K, layout.n_columns)),
            shape=np.ones(n_joints - 1),
            scale=1.0,
            layout=layout,
        )

    @property
    def n_knots(self) -> int:
        return len(self.knot_times)

    def channel(self, name: str) -> HermiteChannel:
        sl = getattr(self.layout, name)
        return HermiteChannel(self.knot_times, self.values[:, sl],
                              self.tangents[:, sl])

    def set_channel(self, name: str, samples: np.ndarray, rate: float,
                    subsample: int = 8):
        """Initialize one channel group from per-frame samples."""
        sl = getattr(self.layout, name)
        ch = init_channel(samples.reshape(samples.shape[0], -1), rate, subsample)
        if ch.values.shape[0] != self.n_knots:
            raise ValueError("sample count inconsistent with the knot grid")
        self.values[:, sl] = ch.values
        self.tangents[:, sl] = ch.tangents

    def copy(self) -> "MotionParams":
        return MotionParams(self.knot_times.copy(), self.values.copy(),
                            self.tangents.copy(), self.shape.copy(),
                            self.scale, self.layout)

    # --- flat packing (LBFGS operates on a single vector) ---

    @property
    def n_variables(self) -> int:
        return 2 * self.values.size + self.shape.size + 1

    def pack(self) -> np.ndarray:
        return np.concatenate([
            self.values.ravel(), self.tangents.ravel(), self.shape,
            [self.scale],
        ])

    def unpack(self, x: np.ndarray) -> "MotionParams":
        """New MotionParams with variables replaced from a flat vector."""
        x = np.asarray(x, dtype=np.float64)
        if x.size != self.n_variables:
            raise ValueError("flat vector size mismatch")
        nv = self.values.size
        out = self.copy()
        out.values = x[:nv].reshape(self.values.shape)
        out.tangents = x[nv:2 * nv].reshape(self.values.shape)
        out.shape = x[2 * nv:2 * nv + self.shape.size]
        out.scale = float(x[-1])
        return out

    def to_json(self) -> str:
        return json.dumps({
            "knot_times": self.knot_times.tolist(),
            "values": self.values.tolist(),
            "tangents": self.tangents.tolist(),
            "shape": self.shape.tolist(),
            "scale": self.scale,
            "n_joints": self.layout.n_joints,
            "n_sites": self.layout.n_sites,
        })

    @classmethod
    def from_json(cls, text: str) -> "MotionParams":
        doc = json.loads(text)
        layout = ChannelLayout(doc["n_joints"], doc["n_sites"])
        return cls(
            knot_times=np.asarray(doc["knot_times"]),
            values=np.asarray(doc["values"]),
            tangents=np.asarray(doc["tangents"]),
            shape=np.asarray(doc["shape"]),
            scale=float(doc["scale"]),
            layout=layout,
        )


def sample_motion(params: MotionParams, frame_times):
    """Dense per-frame coordinates and contact forces (numpy convenience).

    Returns (root_pos (T,3), yaw_delta (T,), xy (T,2),
    joint_rotvec (T,J-1,3), forces (T,n_sites,3) in body-weight units).
    """
    frame_times = np.asarray(frame_times, dtype=np.float64)
    sampler = SplineSampler(params.knot_times, frame_times)
    vals = sampler.eval(as_tensor(params.values), as_tensor(params.tangents))
    return split_samples(vals, params.layout)


def split_samples(samples: torch.Tensor, layout: ChannelLayout):
    """Split a (T, C) sample matrix into coordinate/force groups."""
    T = samples.shape[0]
    root_pos = samples[:, layout.root_pos]
    yaw = samples[:, layout.yaw][:, 0]
    xy = samples[:, layout.xy]
    joints = samples[:, layout.joints].reshape(T, layout.n_joints - 1, 3)
    forces = samples[:, layout.forces].reshape(T, layout.n_sites, 3)
    return root_pos, yaw, xy, joints, forces
