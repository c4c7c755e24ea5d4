"""Command-line interface.

Exit codes: 0 success, 2 config error, 3 missing artifact, 4 numeric
failure.  Every failure message names the phase and offending path where
applicable.
"""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click

from .config import ExperimentConfig, apply_env_overrides, load_config
from .errors import (AvatexError, CheckpointError, ConfigError,
                     MissingArtifactError, NumericError, PhaseError)

EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4


def _exit_code(err: BaseException) -> int:
    if isinstance(err, PhaseError):
        return _exit_code(err.cause)
    if isinstance(err, (ConfigError, CheckpointError)):
        return EXIT_CONFIG
    if isinstance(err, MissingArtifactError):
        return EXIT_MISSING
    if isinstance(err, NumericError):
        return EXIT_NUMERIC
    return 1


def _load_cfg(path: str | None) -> ExperimentConfig:
    cfg = load_config(path) if path else ExperimentConfig()
    return apply_env_overrides(cfg, os.environ)


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Experiment config file (YAML); defaults apply if omitted.")
@click.option("-v", "--verbose", is_flag=True, help="Verbose logging.")
@click.pass_context
def main(ctx, config_path, verbose):
    """Relightable PBR head textures from one image or prompt."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path


def _run(ctx, fn, *args, **kwargs):
    try:
        cfg = _load_cfg(ctx.obj.get("config_path"))
        return fn(cfg, *args, **kwargs)
    except AvatexError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(_exit_code(e))


@main.command()
@click.pass_context
def synth(ctx):
    """Generate the procedural dataset declared in the config."""
    from . import pipeline

    root = _run(ctx, pipeline.cmd_synth)
    click.echo(f"dataset written to {root}")


@main.command()
@click.option("--component", type=click.Choice(
    ("autoencoder", "diffusion_image", "diffusion_texture", "pbr_decoders")),
    required=True)
@click.pass_context
def train(ctx, component):
    """Train one model component; prerequisites must exist."""
    from . import pipeline

    path = _run(ctx, pipeline.cmd_train, component)
    click.echo(f"checkpoint written to {path}")


@main.command()
@click.option("--image", "image_path", type=click.Path(exists=True), default=None)
@click.option("--prompt", default="", help="Attribute tokens, e.g. 'tone:tan age:elder'.")
@click.option("--mask", "mask_path", type=click.Path(exists=True), default=None,
              help="Region-id PNG; omit to auto-segment.")
@click.option("--auto-mask", "auto_mask_k", type=int, default=None,
              help="Color-quantization region count for auto segmentation.")
@click.option("--mesh-params", "mesh_params_path", type=click.Path(exists=True), default=None)
@click.option("--landmarks", "landmarks_path", type=click.Path(exists=True), default=None)
@click.option("--skip-dce", is_flag=True, help="Use the input image directly as I_d.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.pass_context
def generate(ctx, image_path, prompt, mask_path, auto_mask_k, mesh_params_path,
             landmarks_path, skip_dce, out_dir):
    """Full pipeline: image/prompt -> delight -> mesh -> PBR textures."""
    from . import pipeline

    if image_path is None and not prompt:
        click.echo("error: need --image or --prompt", err=True)
        sys.exit(EXIT_CONFIG)
    run_dir = _run(ctx, pipeline.cmd_generate, out_dir, image_path=image_path,
                   prompt=prompt, mask_path=mask_path, auto_mask_k=auto_mask_k,
                   mesh_params_path=mesh_params_path, landmarks_path=landmarks_path,
                   skip_dce=skip_dce)
    click.echo(f"run written to {run_dir}")


@main.command()
@click.option("--in", "run_dir", type=click.Path(exists=True), required=True)
@click.option("--prompt", required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.pass_context
def edit(ctx, run_dir, prompt, out_dir):
    """Text-driven texture edit of an existing run (loosened guidance)."""
    from . import pipeline

    out = _run(ctx, pipeline.cmd_edit, run_dir, prompt, out_dir)
    click.echo(f"edit written to {out}")


@main.command()
@click.option("--in", "run_dir", type=click.Path(exists=True), required=True)
@click.option("--rig", "rig_path", type=click.Path(exists=True), required=True,
              help="JSON light rig (or list of rigs).")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.pass_context
def relight(ctx, run_dir, rig_path, out_dir):
    """Re-render a run's PBR textures under new directional rigs."""
    from . import pipeline

    written = _run(ctx, pipeline.cmd_relight, run_dir, rig_path, out_dir)
    for p in written:
        click.echo(str(p))


@main.command(name="eval")
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.pass_context
def eval_cmd(ctx, out_path):
    """Run the metric battery and emit a JSON report."""
    from . import evaluation, pipeline
    from .synth.dataset import load_dataset

    def impl(cfg):
        models = pipeline.load_models(cfg)
        dataset = load_dataset(Path(cfg.paths.data_root))
        return evaluation.run_eval(cfg, models, dataset, out_path)

    report = _run(ctx, impl)
    click.echo(json.dumps(report, indent=1, sort_keys=True))


@main.group()
def dce():
    """Diffuse color extraction (delighting) utilities."""


@dce.command(name="run")
@click.option("--image", "image_path", type=click.Path(exists=True), required=True)
@click.option("--mask", "mask_path", type=click.Path(exists=True), default=None)
@click.option("--auto-mask", "auto_mask_k", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.pass_context
def dce_run(ctx, image_path, mask_path, auto_mask_k, out_path):
    """Remove lighting from one image; writes the delit image."""
    from . import pipeline
    from .delight import segment, delight as run_delight
    from .geometry import meshio
    from .rngs import derive_seed

    def impl(cfg):
        models = pipeline.load_models(cfg, need=("image",))
        image = meshio.read_png(image_path)
        if mask_path is not None:
            mask = segment(image, "provided_file",
                           mask_labels=meshio.read_mask_png(mask_path))
        else:
            k = auto_mask_k or cfg.delight.auto_mask_k
            mask = segment(image, "color_quantize", k=k,
                           seed=derive_seed(cfg.seed, "auto-mask"))
        result = run_delight(image, mask, models.image_net, models.ae,
                             models.schedule, pipeline.delight_config(cfg))
        meshio.write_png8(out_path, result.image_d)
        return out_path

    out = _run(ctx, impl)
    click.echo(f"delit image written to {out}")


if __name__ == "__main__":
    main()
