"""Physics-based refinement of noisy humanoid motion observations.

Refines per-frame 3D/2D keypoint observations into physically plausible
motion with ground contact forces by minimizing a differentiable
dynamics + contact + pose + smoothness objective over spline-parameterized
generalized coordinates.
"""

from physmo.body import (
    RigidPrimitive,
    ShapeParams,
    Skeleton,
    apply_shape,
    build_default_humanoid,
    primitive_mass_properties,
)
from physmo.objective import LossBreakdown, LossWeights, RefinementProblem, total_loss
from physmo.observations import Camera, ObservationSequence, ValidationError
from physmo.pipeline import (
    RefinedMotion,
    RefinementConfig,
    export,
    initialize,
    load_observations,
    load_result,
    refine,
)
from physmo.synthetic import SyntheticScene, generate_synthetic

__all__ = [
    "Camera",
    "LossBreakdown",
    "LossWeights",
    "ObservationSequence",
    "RefinedMotion",
    "RefinementConfig",
    "RefinementProblem",
    "RigidPrimitive",
    "ShapeParams",
    "Skeleton",
    "SyntheticScene",
    "ValidationError",
    "apply_shape",
    "build_default_humanoid",
    "export",
    "generate_synthetic",
    "initialize",
    "load_observations",
    "load_result",
    "primitive_mass_properties",
    "refine",
    "total_loss",
]
