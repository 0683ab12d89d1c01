"""Rigid-body humanoid: kinematic tree, primitives, shape scaling.

The character is a tree of 16 joints (pelvis root, spine, neck, head and
left/right hip/knee/ankle, shoulder/elbow/wrist). Each joint owns one body
whose geometry is a set of box/cylinder/sphere primitives with mass and
inertia derived from a constant density of 1000 kg/m^3.

Shape is controlled by one length factor per bone (non-root joint). A
factor scales that bone's rest offset; box and sphere primitives tied to
the bone scale uniformly in all three dimensions while limb cylinders
scale length-wise only, keeping a constant thickness. The scaled body is a
smooth function of the factors, so shape can be optimized jointly with
the motion.

Axes: z up (gravity axis), y forward, x to the character's left.
"""

import json
from dataclasses import dataclass, field

import numpy as np
import torch

from physmo.quaternions import DTYPE, as_tensor

DENSITY = 1000.0  # kg/m^3
GRAVITY = 9.81  # m/s^2


class InvalidPrimitiveError(ValueError):
    pass


@dataclass(frozen=True)
class RigidPrimitive:
    """Geometric primitive attached to a body.

    kind: "box" (dims = full extents), "cylinder" (dims = radius, length)
    or "sphere" (dims = radius). `offset` is the primitive center in the
    owning joint frame; `axis` orients the cylinder axis (ignored for box
    and sphere). `scale_mode` is "uniform" or "length"; `bone` is the joint
    index whose shape factor scales this primitive.
    """

    kind: str
    dims: tuple
    offset: tuple = (0.0, 0.0, 0.0)
    axis: tuple = (0.0, 0.0, 1.0)
    scale_mode: str = "uniform"
    bone: int = 0

    def __post_init__(self):
        if self.kind not in ("box", "cylinder", "sphere"):
            raise InvalidPrimitiveError(f"unknown primitive kind {self.kind!r}")
        if any(d <= 0 for d in self.dims):
            raise InvalidPrimitiveError(f"non-positive dimension in {self.dims}")
        if self.scale_mode not in ("uniform", "length"):
            raise InvalidPrimitiveError(f"unknown scale mode {self.scale_mode!r}")


@dataclass(frozen=True)
class Skeleton:
    """Immutable kinematic tree with primitives and foot contact sites."""

    joint_names: tuple
    parents: tuple  # parent index per joint, -1 for the root
    rest_offsets: np.ndarray  # (J, 3); root entry is the standing root position
    primitives: tuple  # (owner joint index, RigidPrimitive) pairs
    site_body: tuple  # owning joint index per contact site
    site_offsets: np.ndarray  # (n_sites, 3) in owner joint frame

    def __post_init__(self):
        roots = [i for i, p in enumerate(self.parents) if p < 0]
        if roots != [0]:
            raise ValueError("skeleton must have exactly one root at index 0")
        for j, p in enumerate(self.parents):
            if j > 0 and not 0 <= p < j:
                raise ValueError(f"parent of joint {j} must precede it, got {p}")
        if not np.isfinite(self.rest_offsets).all():
            raise ValueError("rest offsets must be finite")

    @property
    def n_joints(self) -> int:
        return len(self.joint_names)

    @property
    def n_sites(self) -> int:
        return len(self.site_body)

    def index(self, name: str) -> int:
        return self.joint_names.index(name)

    @property
    def bone_names(self) -> tuple:
        return self.joint_names[1:]

    @property
    def metric_joints(self) -> tuple:
        """15-joint reduced set used for evaluation (spine dropped)."""
        return tuple(i for i, n in enumerate(self.joint_names) if n != "spine")

    @property
    def foot_joints(self) -> tuple:
        return (self.index("l_ankle"), self.index("r_ankle"))

    def primary_child(self, j: int):
        """First child of joint j in index order, or None for a leaf."""
        for c in range(j + 1, self.n_joints):
            if self.parents[c] == j:
                return c
        return None

    def ancestors_of_site(self, k: int) -> tuple:
        """Joint chain (root..owner) supporting contact site k."""
        chain = []
        j = self.site_body[k]
        while j >= 0:
            chain.append(j)
            j = self.parents[j]
        return tuple(reversed(chain))

    def to_json(self) -> str:
        doc = {
            "joint_names": list(self.joint_names),
            "parents": list(self.parents),
            "rest_offsets": self.rest_offsets.tolist(),
            "primitives": [
                {
                    "owner": owner,
                    "kind": p.kind,
                    "dims": list(p.dims),
                    "offset": list(p.offset),
                    "axis": list(p.axis),
                    "scale_mode": p.scale_mode,
                    "bone": p.bone,
                }
                for owner, p in self.primitives
            ],
            "contact_sites": [
                {"joint": b, "offset": o}
                for b, o in zip(self.site_body, self.site_offsets.tolist())
            ],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Skeleton":
        doc = json.loads(text)
        prims = tuple(
            (
                p["owner"],
                RigidPrimitive(
                    kind=p["kind"],
                    dims=tuple(p["dims"]),
                    offset=tuple(p["offset"]),
                    axis=tuple(p["axis"]),
                    scale_mode=p["scale_mode"],
                    bone=p["bone"],
                ),
            )
            for p in doc["primitives"]
        )
        sites = doc["contact_sites"]
        return cls(
            joint_names=tuple(doc["joint_names"]),
            parents=tuple(doc["parents"]),
            rest_offsets=np.asarray(doc["rest_offsets"], dtype=np.float64),
            primitives=prims,
            site_body=tuple(s["joint"] for s in sites),
            site_offsets=np.asarray([s["offset"] for s in sites], dtype=np.float64),
        )


@dataclass
class ShapeParams:
    """Per-bone length scale factors, nominal 1.0, one per non-root joint."""

    factors: np.ndarray

    @classmethod
    def identity(cls, skel: Skeleton) -> "ShapeParams":
        return cls(np.ones(skel.n_joints - 1))

    def __post_init__(self):
        self.factors = np.asarray(self.factors, dtype=np.float64)
        if (self.factors <= 0).any():
            raise ValueError("shape factors must be positive")


@dataclass
class ScaledBody:
    """Skeleton with shape factors applied; cached mass properties.

    All tensor fields are torch float64 and differentiable with respect to
    the shape factors used to build them. Immutable by convention.
    """

    skeleton: Skeleton
    rest_offsets: torch.Tensor  # (J, 3)
    masses: torch.Tensor  # (J,)
    coms: torch.Tensor  # (J, 3) body COM in joint frame
    inertias: torch.Tensor  # (J, 3, 3) about the body COM, joint frame
    site_offsets: torch.Tensor  # (n_sites, 3) scaled

    @property
    def parents(self):
        return self.skeleton.parents

    @property
    def n_joints(self) -> int:
        return self.skeleton.n_joints

    @property
    def total_mass(self) -> torch.Tensor:
        return self.masses.sum()

    @property
    def body_weight(self) -> torch.Tensor:
        return self.total_mass * GRAVITY


def _axis_rotation(axis) -> torch.Tensor:
    """Rotation taking local +z to `axis` (fixed, not differentiated)."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    z = np.array([0.0, 0.0, 1.0])
    v = np.cross(z, a)
    c = float(z @ a)
    if np.linalg.norm(v) < 1e-12:
        R = np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    else:
        vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
        R = np.eye(3) + vx + vx @ vx / (1.0 + c)
    return torch.as_tensor(R, dtype=DTYPE)


def _mass_props(prim: RigidPrimitive, dims: torch.Tensor, offset: torch.Tensor):
    """Analytic (mass, com, inertia about COM in joint frame) for one primitive."""
    if prim.kind == "box":
        lx, ly, lz = dims[0], dims[1], dims[2]
        m = DENSITY * lx * ly * lz
        diag = torch.stack([ly**2 + lz**2, lx**2 + lz**2, lx**2 + ly**2]) * m / 12.0
        inertia = torch.diag_embed(diag)
    elif prim.kind == "sphere":
        r = dims[0]
        m = DENSITY * 4.0 / 3.0 * torch.pi * r**3
        inertia = torch.eye(3, dtype=DTYPE) * (0.4 * m * r**2)
    else:  # cylinder, local axis z then rotated
        r, length = dims[0], dims[1]
        m = DENSITY * torch.pi * r**2 * length
        it = m * (3 * r**2 + length**2) / 12.0
        ia = 0.5 * m * r**2
        local = torch.diag_embed(torch.stack([it, it, ia]))
        R = _axis_rotation(prim.axis)
        inertia = R @ local @ R.T
    return m, offset, inertia


def primitive_mass_properties(prim: RigidPrimitive):
    """Mass [kg], COM [m] and inertia about the COM [kg m^2] at scale 1."""
    dims = as_tensor(list(prim.dims) + [0.0, 0.0])[:3]
    m, com, inertia = _mass_props(prim, dims, as_tensor(prim.offset))
    return float(m), com.numpy(), inertia.numpy()


def apply_shape(skel: Skeleton, shape) -> ScaledBody:
    """Scale the skeleton by per-bone factors and recompute mass properties.

    `shape` may be a ShapeParams, numpy array or torch tensor of length
    n_joints - 1; torch input keeps the result differentiable.
    """
    if isinstance(shape, ShapeParams):
        factors = as_tensor(shape.factors)
    else:
        factors = as_tensor(shape)
    J = skel.n_joints
    if factors.shape != (J - 1,):
        raise ValueError(f"expected {J - 1} shape factors, got {tuple(factors.shape)}")

    rest = as_tensor(skel.rest_offsets)
    scaled_rest = torch.cat([rest[:1], rest[1:] * factors[:, None]], dim=0)

    masses, coms, inertias = [], [], []
    eye = torch.eye(3, dtype=DTYPE)
    for j in range(J):
        parts = []
        for owner, prim in skel.primitives:
            if owner != j:
                continue
            k = factors[prim.bone - 1] if prim.bone > 0 else as_tensor(1.0)
            dims = as_tensor(list(prim.dims) + [0.0, 0.0])[:3]
            offset = as_tensor(prim.offset)
            if prim.scale_mode == "uniform":
                dims = dims * k
                offset = offset * k
            else:  # length-only: cylinder length and placement scale, radius fixed
                dims = torch.stack([dims[0], dims[1] * k, dims[2]])
                offset = offset * k
            parts.append(_mass_props(prim, dims, offset))
        m_tot = sum(p[0] for p in parts)
        com = sum(p[0] * p[1] for p in parts) / m_tot
        inertia = torch.zeros(3, 3, dtype=DTYPE)
        for m, c, it in parts:
            d = c - com
            inertia = inertia + it + m * ((d @ d) * eye - torch.outer(d, d))
        masses.append(m_tot)
        coms.append(com)
        inertias.append(inertia)

    ankle_factor = {
        b: factors[b - 1] for b in set(skel.site_body)
    }
    if skel.n_sites:
        site_off = torch.stack(
            [as_tensor(skel.site_offsets[k]) * ankle_factor[skel.site_body[k]]
             for k in range(skel.n_sites)]
        )
    else:
        site_off = torch.zeros(0, 3, dtype=DTYPE)
    return ScaledBody(
        skeleton=skel,
        rest_offsets=scaled_rest,
        masses=torch.stack(masses),
        coms=torch.stack(coms),
        inertias=torch.stack(inertias),
        site_offsets=site_off,
    )


def build_default_humanoid() -> Skeleton:
    """Default 16-joint humanoid standing on the z=0 plane.

    Primitive sizes are documented defaults (see README); the rest pose is
    a T-pose with both foot soles touching z=0 and 4 contact sites on the
    bottom corners of each foot box.
    """
    names = [
        "pelvis", "spine", "neck", "head",
        "l_hip", "l_knee", "l_ankle",
        "r_hip", "r_knee", "r_ankle",
        "l_shoulder", "l_elbow", "l_wrist",
        "r_shoulder", "r_elbow", "r_wrist",
    ]
    parents = [-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 1, 10, 11, 1, 13, 14]
    offsets = np.array(
        [
            [0.0, 0.0, 0.92],  # pelvis: standing root position
            [0.0, 0.0, 0.20],
            [0.0, 0.0, 0.25],
            [0.0, 0.0, 0.12],
            [0.09, 0.0, -0.06], [0.0, 0.0, -0.40], [0.0, 0.0, -0.40],
            [-0.09, 0.0, -0.06], [0.0, 0.0, -0.40], [0.0, 0.0, -0.40],
            [0.20, 0.0, 0.25], [0.26, 0.0, 0.0], [0.25, 0.0, 0.0],
            [-0.20, 0.0, 0.25], [-0.26, 0.0, 0.0], [-0.25, 0.0, 0.0],
        ]
    )
    idx = {n: i for i, n in enumerate(names)}

    def cyl(owner, r, length, offset, axis, bone):
        return (idx[owner], RigidPrimitive("cylinder", (r, length), offset, axis,
                                           "length", idx[bone]))

    prims = [
        (idx["pelvis"], RigidPrimitive("box", (0.26, 0.18, 0.20), (0, 0, 0.10),
                                       bone=idx["spine"])),
        (idx["spine"], RigidPrimitive("box", (0.30, 0.20, 0.25), (0, 0, 0.125),
                                      bone=idx["neck"])),
        cyl("neck", 0.05, 0.12, (0, 0, 0.06), (0, 0, 1), "head"),
        (idx["head"], RigidPrimitive("sphere", (0.10,), (0, 0, 0.07),
                                     bone=idx["head"])),
    ]
    for side, sgn in (("l", 1.0), ("r", -1.0)):
        prims += [
            cyl(f"{side}_hip", 0.07, 0.40, (0, 0, -0.20), (0, 0, 1), f"{side}_knee"),
            cyl(f"{side}_knee", 0.05, 0.40, (0, 0, -0.20), (0, 0, 1), f"{side}_ankle"),
            (idx[f"{side}_ankle"],
             RigidPrimitive("box", (0.09, 0.22, 0.06), (0, 0.05, -0.03),
                            bone=idx[f"{side}_ankle"])),
            cyl(f"{side}_shoulder", 0.045, 0.26, (sgn * 0.13, 0, 0), (1, 0, 0),
                f"{side}_elbow"),
            cyl(f"{side}_elbow", 0.04, 0.25, (sgn * 0.125, 0, 0), (1, 0, 0),
                f"{side}_wrist"),
            (idx[f"{side}_wrist"],
             RigidPrimitive("box", (0.16, 0.08, 0.04), (sgn * 0.08, 0, 0),
                            bone=idx[f"{side}_wrist"])),
        ]

    # 4 sites per foot on the bottom corners of the foot box
    corners = [(x, y, -0.06) for y in (-0.06, 0.16) for x in (-0.045, 0.045)]
    site_body = []
    site_offsets = []
    for side in ("l", "r"):
        for c in corners:
            site_body.append(idx[f"{side}_ankle"])
            site_offsets.append(c)

    return Skeleton(
        joint_names=tuple(names),
        parents=tuple(parents),
        rest_offsets=offsets,
        primitives=tuple(prims),
        site_body=tuple(site_body),
        site_offsets=np.asarray(site_offsets, dtype=np.float64),
    )
