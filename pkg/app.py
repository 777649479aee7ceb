"""Command-line entry point for the middle-line detection toolkit.

Flow:
 1. tile      annotation directory -> normalized per-tile ground-truth JSON
 2. encode    ground-truth JSON -> map containers (manifest + float32 tensors)
 3. decode    map containers -> detections JSON
 4. eval      ground truth + detections -> mAP table (or P/R/F1 in text mode)

Self-tests: roundtrip (encode -> decode fidelity) and gradcheck (loss gradients).
"""
from pathlib import Path
from typing import Optional

import typer

from midlines import constants as C
from midlines.cli.commands import (
    CommandResult,
    cmd_decode,
    cmd_encode,
    cmd_eval,
    cmd_gradcheck,
    cmd_roundtrip,
    cmd_tile,
)
from midlines.config.run_config import APMode, RunConfig, load_run_config
from midlines.exception.exception import ConfigValidationError, MidlinesException
from midlines.logging.logger import attach_console, logging

app = typer.Typer(add_completion=False, no_args_is_help=True,
                  help="Middle-line oriented object detection: encode, decode, evaluate.")


def _finish(result: CommandResult) -> None:
    for line in result.output:
        typer.echo(line)
    raise typer.Exit(code=result.exit_code)


def _config(config_path: Optional[Path], **overrides) -> RunConfig:
    try:
        return load_run_config(config_path, **overrides)
    except MidlinesException as e:
        logging.error("event=config error=%r", str(e.error_message))
        typer.echo(f"invalid configuration: {e.error_message}", err=True)
        raise typer.Exit(code=1 if isinstance(e, ConfigValidationError) else 2)


@app.callback()
def main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Log DEBUG records to stderr.")):
    attach_console(logging.DEBUG if verbose else logging.INFO)


@app.command()
def tile(input_dir: Path = typer.Argument(..., help="Directory of DOTA or ICDAR .txt or COCO .json label files."),
         out_dir: Path = typer.Argument(..., help="Where per-tile JSON files are written."),
         window: int = typer.Option(C.TILE_WINDOW, help="Square tile side in pixels."),
         overlap: float = typer.Option(C.TILE_OVERLAP, help="Overlap fraction between tiles, in [0, 1)."),
         fmt: str = typer.Option("dota", "--format", help="Label format: dota, icdar or coco."),
         width: Optional[int] = typer.Option(None, help="Image width for dota/icdar files."),
         height: Optional[int] = typer.Option(None, help="Image height for dota/icdar files."),
         jobs: int = typer.Option(1, help="Files processed in parallel.")):
    _finish(cmd_tile(input_dir, out_dir, window=window, overlap=overlap, fmt=fmt, jobs=jobs,
                     width=width, height=height))


@app.command()
def encode(gt_json: Path = typer.Argument(..., help="Ground-truth JSON."),
           out_dir: Path = typer.Argument(..., help="One map container per image is written below it."),
           config: Optional[Path] = typer.Option(None, help="YAML run configuration."),
           stride: Optional[int] = typer.Option(None),
           drift_r: Optional[float] = typer.Option(None, help="Drift radius R in input pixels."),
           single_branch: Optional[bool] = typer.Option(None, "--single-branch/--two-branch"),
           seed: Optional[int] = typer.Option(None),
           jobs: Optional[int] = typer.Option(None)):
    run = _config(config, stride=stride, drift_r=drift_r, single_branch=single_branch, seed=seed, jobs=jobs)
    _finish(cmd_encode(gt_json, out_dir, run))


@app.command()
def decode(maps_dir: Path = typer.Argument(..., help="A map container or a directory of containers."),
           out_json: Path = typer.Argument(..., help="Detections JSON to write."),
           threshold: float = typer.Option(C.THRESHOLD, help="Heatmap threshold in (0, 1)."),
           config: Optional[Path] = typer.Option(None, help="YAML run configuration."),
           merge_iou: Optional[float] = typer.Option(None, help="Cross-branch merge IoU."),
           jobs: Optional[int] = typer.Option(None)):
    run = _config(config, merge_iou=merge_iou, jobs=jobs)
    _finish(cmd_decode(maps_dir, threshold=threshold, out_json=out_json, config=run))


@app.command()
def roundtrip(gt_json: Path = typer.Argument(..., help="Ground-truth JSON."),
              config: Optional[Path] = typer.Option(None, help="YAML run configuration."),
              stride: Optional[int] = typer.Option(None),
              bar: Optional[float] = typer.Option(None, help="Required fraction of objects at IoU >= 0.99."),
              min_side: Optional[float] = typer.Option(None, help="Objects below this side are sub-resolution.")):
    run = _config(config, stride=stride, roundtrip_bar=bar, min_side=min_side)
    _finish(cmd_roundtrip(gt_json, run))


@app.command()
def gradcheck(seed: Optional[int] = typer.Option(None, help="Defaults to the config seed; O2_SEED wins."),
              samples: int = typer.Option(5, help="Random evaluation points per loss."),
              config: Optional[Path] = typer.Option(None, help="YAML run configuration (seed, weights)."),
              perturb: float = typer.Option(0.0, hidden=True, help="Shift added to analytic gradients.")):
    run = _config(config, seed=seed)
    _finish(cmd_gradcheck(samples=samples, perturb=perturb, config=run))


@app.command(name="eval")
def evaluate(gt_json: Path = typer.Argument(..., help="Ground-truth JSON."),
             det_json: Path = typer.Argument(..., help="Detections JSON."),
             mode: str = typer.Option("map", help="map (per-class AP) or text (P/R/F1)."),
             iou: Optional[float] = typer.Option(None, help=f"Match IoU threshold [default: {C.EVAL_IOU}]."),
             ap_mode: Optional[APMode] = typer.Option(None, help="AP interpolation [default: all-point]."),
             config: Optional[Path] = typer.Option(None, help="YAML run configuration (eval_iou, ap_mode)."),
             out_json: Optional[Path] = typer.Option(None, help="Also write the report as JSON.")):
    run = _config(config, eval_iou=iou, ap_mode=ap_mode)
    _finish(cmd_eval(gt_json, det_json, mode=mode, out_json=out_json, config=run))


if __name__ == "__main__":
    app()
