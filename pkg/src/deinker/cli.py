"""Command-line entry point binding all pipeline stages.

Exit codes: 0 success, 1 domain error, 2 usage error. Logs go to stderr,
data to files. Every run prints the resolved seed so results are replayable.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .config import PipelineConfig, dump_config, load_config
from .core import load_manifest, load_mask, load_raster, save_mask, save_raster
from .errors import DeinkerError, InputError

TOKEN_ENV = "DEINKER_BLINDTEST_TOKEN"


def _log(message: str) -> None:
    click.echo(message, err=True)


def _config(ctx) -> PipelineConfig:
    return ctx.obj["config"]


@click.group(invoke_without_command=True)
@click.version_option(version=__version__, prog_name="deinker")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="Pipeline config YAML.")
@click.option("--config-dump", is_flag=True, help="Print the effective config (defaults merged with --config) and exit.")
@click.option("--jobs", type=int, default=1, show_default=True, help="Worker cap for parallelizable stages.")
@click.pass_context
def cli(ctx, config_path, config_dump, jobs):
    """Marker-ink removal pipeline for H&E slides."""
    ctx.ensure_object(dict)
    config = load_config(config_path) if config_path else PipelineConfig()
    ctx.obj["config"] = config
    ctx.obj["jobs"] = max(1, jobs)
    if config_dump:
        click.echo(dump_config(config), nl=False)
        ctx.exit(0)
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())
        ctx.exit(0)


@cli.command("segment-ink")
@click.option("--slide", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--downsample", type=int, default=None, help="Defaults to the config value.")
@click.option("--override", "override_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--mode", type=click.Choice(["replace", "union", "subtract"]), default="union", show_default=True)
@click.pass_context
def segment_ink_cmd(ctx, slide, out_path, downsample, override_path, mode):
    """Detect marker ink on a slide and write the mask + sidecar."""
    from .ink import apply_mask_override, segment_ink

    config = _config(ctx)
    ds = downsample if downsample is not None else config.ink.downsample
    slide_img = load_raster(slide)
    slide_id = Path(slide).stem
    mask = segment_ink(slide_img, config.ink.thresholds(), ds, slide_id=slide_id)
    if override_path:
        mask = apply_mask_override(mask, load_mask(override_path), mode)
    save_mask(mask, out_path)
    _log(f"seed={config.seed} slide={slide_id} ink_fraction={mask.ink_fraction():.4f}")


def _load_slide_dir(slides_dir: Path) -> dict[str, np.ndarray]:
    slides = {}
    for path in sorted(Path(slides_dir).glob("*.png")):
        slides[path.stem] = load_raster(path)
    if not slides:
        raise InputError(f"no .png slides found in {slides_dir}")
    return slides


@cli.command("build-dataset")
@click.option("--slides", "slides_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--masks", "masks_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--categories", "categories_path", type=click.Path(exists=True, dir_okay=False), default=None, help="JSON mapping slide_id -> ink category (default: black).")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def build_dataset_cmd(ctx, slides_dir, masks_dir, categories_path, out_path):
    """Sample a patch manifest from slides + masks."""
    from .core import save_manifest
    from .dataset import SlideEntry, build_manifest

    config = _config(ctx)
    slides = _load_slide_dir(Path(slides_dir))
    categories = {}
    if categories_path:
        categories = json.loads(Path(categories_path).read_text())
    entries = []
    for slide_id, image in slides.items():
        mask_path = Path(masks_dir) / f"{slide_id}.png"
        if not mask_path.exists():
            raise InputError(f"no mask for slide {slide_id!r} at {mask_path}")
        entries.append(
            SlideEntry(
                slide_id=slide_id,
                image=image,
                mask=load_mask(mask_path),
                category=categories.get(slide_id, "black"),
            )
        )
    manifest = build_manifest(entries, config.sampler.sampler_config(config.seed))
    save_manifest(manifest, out_path)
    _log(f"seed={config.seed} records={len(manifest.records)} -> {out_path}")


@cli.command("materialize")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--slides", "slides_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.pass_context
def materialize_cmd(ctx, manifest_path, slides_dir, out_dir):
    """Write patch files for every manifest record."""
    from .dataset import materialize

    manifest = load_manifest(manifest_path)
    slides = _load_slide_dir(Path(slides_dir))
    written = materialize(manifest, slides, out_dir)
    _log(f"seed={manifest.seed} wrote {len(written)} patches under {out_dir}")


@cli.command("synth-corpus")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--n", required=True, type=int)
@click.option("--mix", default="black=0.4,green=0.3,blue=0.3", show_default=True)
@click.option("--seed", type=int, default=None, help="Defaults to the config seed.")
@click.option("--patch-size", type=int, default=64, show_default=True)
@click.option("--clean-src", "clean_src", type=click.Path(exists=True, file_okay=False), default=None)
@click.pass_context
def synth_corpus_cmd(ctx, out_dir, n, mix, seed, patch_size, clean_src):
    """Generate a paired (clean, inked, mask) corpus."""
    from .synth import generate_paired_corpus

    config = _config(ctx)
    seed = config.seed if seed is None else seed
    mix_dict = {}
    for part in mix.split(","):
        name, _, weight = part.partition("=")
        mix_dict[name.strip()] = float(weight)
    clean_sources = None
    if clean_src:
        clean_sources = [load_raster(p) for p in sorted(Path(clean_src).glob("*.png"))]
    records = generate_paired_corpus(
        out_dir, n, mix_dict, seed=seed, patch_size=patch_size,
        clean_sources=clean_sources, jobs=ctx.obj["jobs"],
    )
    _log(f"seed={seed} wrote {len(records)} triplets under {out_dir}")


def _load_patch_pool(directory: Path) -> np.ndarray:
    paths = sorted(Path(directory).glob("*.png"))
    if not paths:
        raise InputError(f"no .png patches found in {directory}")
    return np.stack([load_raster(p) for p in paths])


@cli.command("train")
@click.option("--marker", "marker_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--clean", "clean_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--max-steps", type=int, default=None, help="Optional cap on total steps.")
@click.option("--resume-from", "resume_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_context
def train_cmd(ctx, marker_dir, clean_dir, out_dir, max_steps, resume_path):
    """Train the ink-removal model on marker/clean patch pools."""
    from .training import resume as resume_training
    from .training import train

    config = _config(ctx)
    marker = _load_patch_pool(Path(marker_dir))
    clean = _load_patch_pool(Path(clean_dir))
    _log(f"seed={config.seed} marker={len(marker)} clean={len(clean)}")
    if resume_path:
        result = resume_training(resume_path, marker, clean, out_dir=out_dir, max_steps=max_steps)
    else:
        result = train(
            marker,
            clean,
            model_config=config.model.model_config(),
            train_config=config.training.train_config(config.seed, max_steps),
            out_dir=out_dir,
        )
    _log(f"finished at step {result.log[-1].step if result.log else 0}; checkpoints: {len(result.checkpoints)}")


@cli.command("restore")
@click.option("--slide", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--mask", "mask_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--tile", type=int, default=None)
@click.option("--stride", type=int, default=None)
@click.option("--batch", type=int, default=None)
@click.option("--identity-test", is_flag=True, help="Bypass the network: tiles pass through unchanged.")
@click.pass_context
def restore_cmd(ctx, slide, mask_path, checkpoint_path, out_path, tile, stride, batch, identity_test):
    """Reconstruct a slide by regenerating its ink tiles."""
    from .model import load_bundle
    from .restore import identity_generator, plan_tiles, restore_batchwise

    config = _config(ctx)
    tile = tile if tile is not None else config.restore.tile
    stride = stride if stride is not None else config.restore.stride
    batch = batch if batch is not None else config.restore.batch
    slide_img = load_raster(slide)
    mask = load_mask(mask_path)
    if identity_test:
        generator = identity_generator
    else:
        if checkpoint_path is None:
            raise InputError("either --checkpoint or --identity-test is required")
        bundle, _ = load_bundle(checkpoint_path)
        bundle.g_remove.eval()
        generator = bundle.g_remove
    plan = plan_tiles(slide_img.shape[1], slide_img.shape[0], mask, tile=tile, stride=stride)
    restored = restore_batchwise(slide_img, mask, generator, plan, batch_size=batch)
    save_raster(restored, out_path)
    ink_tiles = len(plan.ink_tiles())
    _log(f"seed={config.seed} tiles={len(plan.origins)} ink_tiles={ink_tiles} -> {out_path}")


@cli.command("evaluate")
@click.option("--corrected", "corrected_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--clean", "clean_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--checkpoint", "classifier_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Trained classifier checkpoint.")
@click.option("--report", "report_path", required=True, type=click.Path(dir_okay=False))
@click.option("--grad-corr", "pairs_csv", type=click.Path(exists=True, dir_okay=False), default=None, help="CSV of restored,clean file pairs.")
@click.option("--nuclei", nargs=2, type=click.Path(exists=True, dir_okay=False), default=None, help="BEFORE AFTER slide rasters.")
@click.pass_context
def evaluate_cmd(ctx, corrected_dir, clean_dir, classifier_path, report_path, pairs_csv, nuclei):
    """Score restored patches and assemble the evaluation report."""
    from .classifier import fooling_rate, load_classifier
    from .evaluation import assemble_report, batch_gradient_correlation, nuclei_delta, save_report

    config = _config(ctx)
    classifier = load_classifier(classifier_path)
    corrected_paths = sorted(Path(corrected_dir).glob("*.png"))
    if not corrected_paths:
        raise InputError(f"no corrected patches in {corrected_dir}")
    corrected = np.stack([load_raster(p) for p in corrected_paths])
    fooling = fooling_rate(classifier, corrected, ids=[p.name for p in corrected_paths])

    grad_values = None
    grad_excluded = 0
    if pairs_csv:
        pairs = []
        for line in Path(pairs_csv).read_text().splitlines():
            if not line.strip():
                continue
            a, _, b = line.partition(",")
            pairs.append((load_raster(a.strip()), load_raster(b.strip())))
        grad_values, grad_excluded = batch_gradient_correlation(pairs)

    nuclei_rows = None
    if nuclei:
        before, after = (load_raster(p) for p in nuclei)
        delta = nuclei_delta(
            before,
            after,
            min_area=config.evaluation.nuclei_min_area,
            peak_min_distance=config.evaluation.nuclei_peak_min_distance,
        )
        nuclei_rows = [{"slide_id": Path(nuclei[0]).stem, "before": delta.n_before, "after": delta.n_after}]

    report = assemble_report(
        fooling_per_patch=fooling.per_patch,
        grad_corr_values=grad_values,
        grad_corr_excluded=grad_excluded,
        nuclei_rows=nuclei_rows,
        checkpoint="",
        classifier=str(classifier_path),
        config={"seed": config.seed},
    )
    save_report(report, report_path)
    _log(f"seed={config.seed} fooling={fooling.overall:.3f} -> {report_path}")


@cli.group("blindtest")
def blindtest_group():
    """Blind-test session service."""


@blindtest_group.command("serve")
@click.option("--clean", "clean_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--corrected", "corrected_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--port", type=int, default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--data", "data_dir", required=True, type=click.Path(file_okay=False))
@click.option("--ui", "ui_dir", type=click.Path(exists=True, file_okay=False), default=None, help="Static UI assets to mount at /ui.")
@click.pass_context
def blindtest_serve_cmd(ctx, clean_dir, corrected_dir, port, host, data_dir, ui_dir):
    """Serve the blind-test HTTP API (token via DEINKER_BLINDTEST_TOKEN)."""
    import uvicorn

    from .service import create_app

    config = _config(ctx)
    port = port if port is not None else config.blindtest.port
    app = create_app(
        clean_dir, corrected_dir, data_dir, token=os.environ.get(TOKEN_ENV), ui_dir=ui_dir
    )
    _log(f"seed={config.seed} serving blind test on {host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


def main(argv=None) -> int:
    """Console entry point mapping domain errors to exit code 1."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except DeinkerError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return 2 if isinstance(exc, click.UsageError) else 1
    except click.exceptions.Abort:
        return 130
    return 0


if __name__ == "__main__":
    sys.exit(main())
