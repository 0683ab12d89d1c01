"""Command-line interface.

Exit codes: 0 success, 1 input validation error, 2 optimizer failure
(partial result is still written, flagged in the output).
"""

import sys

import click
import numpy as np

from physmo import metrics
from physmo.body import build_default_humanoid
from physmo.objective import LossWeights
from physmo.observations import ValidationError
from physmo.pipeline import (
    RefinementConfig,
    export,
    load_observations,
    load_result,
    refine,
)
from physmo.synthetic import SCENES, generate_synthetic


@click.group()
def main():
    """Physics-based refinement of noisy human motion estimates."""


def _load_config(config_path, weights_path, physics, subsample):
    if config_path:
        with open(config_path) as fh:
            config = RefinementConfig.from_json(fh.read())
    else:
        config = RefinementConfig()
    if weights_path:
        with open(weights_path) as fh:
            config.weights = LossWeights.from_json(fh.read())
    if physics is not None:
        config.enable_physics = physics
    if subsample is not None:
        config.subsample = subsample
    return config


@main.command("refine")
@click.argument("observations", type=click.Path(exists=True))
@click.option("-o", "--output", required=True, type=click.Path())
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]),
              default="json", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="RefinementConfig JSON file.")
@click.option("--weights", "weights_path", type=click.Path(exists=True),
              help="LossWeights JSON file (overrides the config).")
@click.option("--physics/--no-physics", "physics", default=None,
              help="Toggle the physics stage (default: on).")
@click.option("--subsample", type=int, default=None,
              help="Spline knot spacing in frames.")
@click.option("--trace", "trace_path", type=click.Path(),
              help="Write the optimizer trace CSV here.")
def refine_cmd(observations, output, fmt, config_path, weights_path,
               physics, subsample, trace_path):
    """Refine an observation sequence and export the result."""
    try:
        obs = load_observations(observations)
        config = _load_config(config_path, weights_path, physics, subsample)
    except (ValidationError, ValueError, OSError) as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    result = refine(obs, build_default_humanoid(), config)
    export(result, output, format=fmt, trace_path=trace_path)
    if result.optimizer_failed:
        click.echo("optimizer failure: partial result written", err=True)
        sys.exit(2)
    click.echo(f"wrote {output}")


@main.command("eval")
@click.argument("predicted", type=click.Path(exists=True))
@click.argument("reference", type=click.Path(exists=True))
@click.option("--json", "as_json", is_flag=True, help="Emit JSON.")
def eval_cmd(predicted, reference, as_json):
    """Compare two refinement exports (metrics on the 15-joint set)."""
    try:
        pred = load_result(predicted)
        ref = load_result(reference)
        if pred.positions.shape != ref.positions.shape:
            raise ValidationError("positions", "shape mismatch")
        skel = build_default_humanoid()
        if tuple(pred.joint_names) == tuple(skel.joint_names):
            joints = list(skel.metric_joints)
            feet = [joints.index(f) for f in skel.foot_joints]
        else:
            joints = list(range(pred.positions.shape[1]))
            feet = []
        report = metrics.evaluate(pred.positions[:, joints],
                                  ref.positions[:, joints],
                                  fps=pred.fps, foot_indices=feet)
    except (ValidationError, ValueError, OSError, KeyError) as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    click.echo(report.to_json() if as_json else report.to_table())


@main.command("synth")
@click.argument("scene", type=click.Choice(SCENES))
@click.option("-o", "--output", required=True, type=click.Path(),
              help="Observation JSON path.")
@click.option("--duration", type=float, default=10.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--fps", type=float, default=50.0, show_default=True)
@click.option("--noise-std", type=float, default=0.020, show_default=True,
              help="3D keypoint noise sigma [m].")
@click.option("--clean", is_flag=True, help="Write noiseless observations.")
@click.option("--truth", "truth_path", type=click.Path(),
              help="Also write the truth motion parameters here.")
def synth_cmd(scene, output, duration, seed, fps, noise_std, clean,
              truth_path):
    """Generate a synthetic scene with physics-consistent ground truth."""
    try:
        sc = generate_synthetic(scene, duration=duration, seed=seed,
                                fps=fps, noise_std=noise_std)
    except ValueError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    obs = sc.obs_clean if clean else sc.obs_noisy
    with open(output, "w") as fh:
        fh.write(obs.to_json())
    if truth_path:
        with open(truth_path, "w") as fh:
            fh.write(sc.truth_params.to_json())
    click.echo(f"wrote {output}")


@main.command("dump-config")
@click.option("-o", "--output", type=click.Path(), default=None,
              help="Write to a file instead of stdout.")
def dump_config_cmd(output):
    """Print the default configuration as JSON."""
    text = RefinementConfig().to_json()
    if output:
        with open(output, "w") as fh:
            fh.write(text + "\n")
        click.echo(f"wrote {output}")
    else:
        click.echo(text)
