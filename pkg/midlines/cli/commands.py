"""Command bodies behind the CLI subcommands.

Every command returns a CommandResult instead of exiting, so the typer app in
app.py and the tests share one code path. Exit codes: 0 success, 1 validation
failure, 2 I/O error; a result keeps the worst code it has seen.
"""
import json
import logging as std_logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from pydantic import ValidationError

from midlines import constants as C
from midlines.config.run_config import APMode, RunConfig, TileSpec, load_run_config
from midlines.decoder.heatmap_decoder import decode
from midlines.encoder.target_encoder import encode_image
from midlines.evaluation.metrics import evaluate
from midlines.evaluation.rotated_iou import iou_matrix
from midlines.exception.exception import (
    ConfigValidationError,
    ContainerError,
    EmptyFile,
    MidlinesException,
    UnknownClass,
)
from midlines.geometry.geometry_core import OrientedBox
from midlines.ingest.annotation_parser import AnnotatedImage, parse_coco, parse_dota, parse_icdar
from midlines.ingest.tiler import tile_image
from midlines.logging.logger import kv, logging
from midlines.loss.grad_check import run_gradcheck
from midlines.utils.main_utils import (
    detections_to_records,
    load_detections,
    load_ground_truth,
    load_maps,
    read_text,
    save_ground_truth,
    save_maps,
    write_json,
)

OK, VALIDATION, IO = 0, 1, 2
PARSERS = {"dota": parse_dota, "icdar": parse_icdar, "coco": parse_coco}
SUFFIXES = {"dota": ".txt", "icdar": ".txt", "coco": ".json"}


@dataclass
class CommandResult:
    exit_code: int = OK
    messages: List[str] = field(default_factory=list)
    output: List[str] = field(default_factory=list)

    def emit(self, level: int = std_logging.INFO, **fields) -> None:
        message = kv(**fields)
        logging.log(level, message)
        self.messages.append(message)

    def fail(self, code: int, **fields) -> None:
        self.exit_code = max(self.exit_code, code)
        self.emit(std_logging.ERROR, **fields)

    def absorb(self, other: "CommandResult") -> None:
        self.exit_code = max(self.exit_code, other.exit_code)
        self.messages += other.messages
        self.output += other.output


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, (ContainerError, EmptyFile, OSError, json.JSONDecodeError)):
        return IO
    return VALIDATION


def _describe(error: BaseException) -> str:
    if isinstance(error, MidlinesException):
        return str(error.error_message)
    return str(error)


def _guarded(event: str, body: Callable[[CommandResult], None]) -> CommandResult:
    result = CommandResult()
    try:
        body(result)
    except UnknownClass as e:
        result.fail(VALIDATION, event=event, error="UnknownClass",
                    classes=",".join(str(c) for c in e.classes), detail=repr(_describe(e)))
    except (MidlinesException, ValidationError, OSError, ValueError) as e:
        result.fail(exit_code_for(e), event=event, error=type(e).__name__, detail=repr(_describe(e)))
    result.emit(event=f"{event}_done", exit_code=result.exit_code)
    return result


def _parallel(jobs: int, fn, items: Sequence) -> List:
    """Run fn over items, results in input order."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    return Parallel(n_jobs=jobs)(delayed(fn)(item) for item in items)


def _tile_spec(window: int, overlap: float) -> TileSpec:
    try:
        return TileSpec(window=window, overlap_fraction=overlap)
    except ValidationError as e:
        raise ConfigValidationError(e, sys) from e


def parse_file(path: Path, fmt: str, width: Optional[int] = None,
               height: Optional[int] = None) -> List[AnnotatedImage]:
    """Every image described by one annotation file; COCO files carry their own sizes."""
    text = read_text(path)
    if fmt == "coco":
        return parse_coco(text)
    return [PARSERS[fmt](text, image_id=path.stem, width=width, height=height)]


def _tile_file(args) -> Tuple[CommandResult, int]:
    path, out_dir, spec, fmt, width, height = args
    parsed = []

    def body(result: CommandResult):
        parsed.extend(parse_file(path, fmt, width, height))
        tiles = [t for image in parsed for t in tile_image(image, spec)]
        for tile in tiles:
            save_ground_truth(out_dir / f"{tile.image_id}.json", [tile])
        result.output.append(f"{path.name}: {len(tiles)} tiles")
        result.emit(event="tile_file", file=path.name, images=len(parsed), tiles=len(tiles),
                    objects=sum(len(image.objects) for image in parsed))

    return _guarded("tile_file", body), len(parsed)


def cmd_tile(input_dir, out_dir, window: int = C.TILE_WINDOW, overlap: float = C.TILE_OVERLAP,
             fmt: str = "dota", jobs: int = 1, width: Optional[int] = None,
             height: Optional[int] = None) -> CommandResult:
    """Parse every annotation file in input_dir and write one normalized JSON per tile.

    width/height fix the image size of DOTA and ICDAR files (else header or annotation extent).
    """

    def body(res: CommandResult):
        spec = _tile_spec(window, overlap)
        if fmt not in PARSERS:
            raise ConfigValidationError(f"format must be one of {sorted(PARSERS)}, got {fmt!r}")
        for name, value in (("width", width), ("height", height)):
            if value is not None and value < 1:
                raise ConfigValidationError(f"{name} must be >= 1, got {value}")
        source = Path(input_dir)
        if not source.is_dir():
            raise ContainerError(f"{source} is not a readable directory")
        files = sorted(p for p in source.iterdir() if p.suffix == SUFFIXES[fmt])
        target = Path(out_dir)
        target.mkdir(parents=True, exist_ok=True)
        images = 0
        for sub, count in _parallel(jobs, _tile_file, [(p, target, spec, fmt, width, height) for p in files]):
            res.absorb(sub)
            images += count
        res.emit(event="tile", files=len(files), images=images, window=spec.window, step=spec.step)
        res.output.append(f"{images} images")

    return _guarded("tile", body)


def _encode_one(args) -> CommandResult:
    image, out_dir, config = args

    def body(result: CommandResult):
        maps = encode_image(image.objects, image.width, image.height, stride=config.stride,
                            num_classes=len(image.class_names), r=config.drift_r,
                            class_names=image.class_names, branch_range=config.branch_range,
                            single_branch=config.single_branch, image_id=image.image_id)
        save_maps(maps, out_dir / image.image_id, config=config.model_dump(mode="json"))
        result.emit(event="encode_image", image_id=image.image_id, objects=maps.n_objects,
                    positives=int(maps.reg_mask.sum()))

    return _guarded("encode_image", body)


def cmd_encode(gt_json, out_dir, config: Optional[RunConfig] = None) -> CommandResult:
    """Encode every image of a ground-truth JSON into its own map container under out_dir."""
    config = config or RunConfig()

    def body(result: CommandResult):
        images = load_ground_truth(gt_json)
        target = Path(out_dir)
        for sub in _parallel(config.jobs, _encode_one, [(img, target, config) for img in images]):
            result.absorb(sub)
        result.emit(event="encode", images=len(images), out=str(target))

    return _guarded("encode", body)


def container_dirs(maps_dir) -> List[Path]:
    """A container directory itself, or the sorted containers directly below it."""
    root = Path(maps_dir)
    if (root / C.MANIFEST_FILE).is_file():
        return [root]
    if not root.is_dir():
        raise ContainerError(f"{root} is not a map container directory")
    found = sorted(p for p in root.iterdir() if (p / C.MANIFEST_FILE).is_file())
    if not found:
        raise ContainerError(f"{root} holds no {C.MANIFEST_FILE}")
    return found


def _decode_one(args) -> list:
    path, threshold, merge_iou = args
    maps = load_maps(path)
    dets = decode(maps, threshold, merge_iou)
    return detections_to_records(dets, maps.class_names, image_id=maps.image_id)


def cmd_decode(maps_dir, threshold: float = C.THRESHOLD, out_json=None,
               config: Optional[RunConfig] = None) -> CommandResult:
    """Decode one container (or a directory of containers) into a detections JSON array."""
    config = config or RunConfig()

    def body(result: CommandResult):
        try:
            RunConfig(threshold=threshold)
        except ValidationError as e:
            raise ConfigValidationError(e, sys) from e
        dirs = container_dirs(maps_dir)
        records = []
        for batch in _parallel(config.jobs, _decode_one, [(d, threshold, config.merge_iou) for d in dirs]):
            records += batch
        if out_json is not None:
            write_json(out_json, records)
        result.emit(event="decode", containers=len(dirs), detections=len(records))

    return _guarded("decode", body)


@dataclass
class RoundTripStats:
    resolved: List[float] = field(default_factory=list)
    sub_resolution: List[float] = field(default_factory=list)

    @staticmethod
    def summary(values: Sequence[float]) -> dict:
        if not values:
            return {"count": 0, "min": None, "mean": None, "fraction": None}
        arr = np.asarray(values, dtype=np.float64)
        return {"count": int(arr.size), "min": float(arr.min()), "mean": float(arr.mean()),
                "fraction": float(np.mean(arr >= C.ROUNDTRIP_IOU))}


def roundtrip_ious(image: AnnotatedImage, config: RunConfig) -> List[Tuple[OrientedBox, float]]:
    """Best same-class rotated IoU of every object after encode then decode."""
    maps = encode_image(image.objects, image.width, image.height, stride=config.stride,
                        num_classes=len(image.class_names), r=config.drift_r,
                        class_names=image.class_names, branch_range=config.branch_range,
                        single_branch=config.single_branch, image_id=image.image_id)
    dets = decode(maps, config.threshold, config.merge_iou)
    ious = []
    for cls in range(len(image.class_names)):
        gts = [o for o in image.objects if o.class_id == cls]
        if not gts:
            continue
        boxes = [d.box for d in dets if d.class_id == cls]
        matrix = iou_matrix(gts, boxes)
        best = matrix.max(axis=1) if boxes else np.zeros(len(gts))
        ious += list(zip(gts, best.tolist()))
    return ious


def cmd_roundtrip(gt_json, config: Optional[RunConfig] = None) -> CommandResult:
    """Encode then decode every ground-truth object and report rotated IoU statistics."""
    config = config or RunConfig()

    def body(result: CommandResult):
        stats = RoundTripStats()
        for image in load_ground_truth(gt_json):
            for obj, value in roundtrip_ious(image, config):
                bucket = stats.resolved if obj.min_side() >= config.min_side else stats.sub_resolution
                bucket.append(value)

        resolved = stats.summary(stats.resolved)
        sub = stats.summary(stats.sub_resolution)
        result.emit(event="roundtrip", **{f"resolved_{k}": v for k, v in resolved.items()})
        result.emit(event="roundtrip_sub_resolution", **sub)
        if resolved["count"] == 0:
            result.output.append("no resolvable objects: vacuous pass")
            return
        result.output.append(
            f"objects={resolved['count']} min_iou={resolved['min']:.4f} mean_iou={resolved['mean']:.4f} "
            f"fraction>={C.ROUNDTRIP_IOU}={resolved['fraction']:.4f}")
        if sub["count"]:
            result.output.append(f"sub-resolution objects={sub['count']} mean_iou={sub['mean']:.4f}")
        if resolved["fraction"] < config.roundtrip_bar:
            result.fail(VALIDATION, event="roundtrip_below_bar", fraction=resolved["fraction"],
                        bar=config.roundtrip_bar)

    return _guarded("roundtrip", body)


def cmd_gradcheck(seed: Optional[int] = None, samples: int = 5, perturb: float = 0.0,
                  config: Optional[RunConfig] = None) -> CommandResult:
    """Finite-difference check of every loss; perturb shifts the analytic gradient (negative control).

    Seed and loss weights come from config; without one, `seed` (or O2_SEED when set) is used.
    """

    def body(result: CommandResult):
        if samples < 1:
            raise ConfigValidationError(f"samples must be >= 1, got {samples}")
        run = config if config is not None else load_run_config(seed=seed)
        reports = run_gradcheck(run.seed, samples, perturb=perturb, weights=run.weights)
        result.emit(event="gradcheck", seed=run.seed, samples=samples, alpha_focal=run.weights.alpha_focal,
                    alpha=run.weights.alpha, beta=run.weights.beta, gamma=run.weights.gamma)
        for name, report in reports.items():
            result.output.append(f"{name}: max_rel_error={report.max_rel_error:.3e} "
                                 f"{'ok' if report.passed else 'FAIL'}")
            if not report.passed:
                result.fail(VALIDATION, event="gradcheck_failed", loss=name,
                            max_rel_error=f"{report.max_rel_error:.3e}")

    return _guarded("gradcheck", body)


def cmd_eval(gt_json, det_json, mode: str = "map", iou: Optional[float] = None,
             ap_mode: Optional[APMode] = None, out_json=None, config: Optional[RunConfig] = None) -> CommandResult:
    """Score detections against ground truth; prints the table and optionally writes the report JSON.

    iou and ap_mode default to config.eval_iou and config.ap_mode.
    """
    config = config or RunConfig()

    def body(result: CommandResult):
        threshold = config.eval_iou if iou is None else iou
        if not 0.0 < threshold <= 1.0:
            raise ConfigValidationError(f"iou must be in (0, 1], got {threshold}")
        interpolation = APMode(config.ap_mode if ap_mode is None else ap_mode)
        gts = load_ground_truth(gt_json)
        class_names = gts[0].class_names if gts else list(C.DOTA_CLASSES)
        default_id = gts[0].image_id if len(gts) == 1 else None
        dets = load_detections(det_json, class_names, default_image_id=default_id)
        report = evaluate(dets, gts, class_names, mode=mode, iou_threshold=threshold, ap_mode=interpolation)
        result.output.append(report.to_table())
        if out_json is not None:
            write_json(out_json, report.to_dict())
        result.emit(event="eval", mode=mode, iou=threshold, ap_mode=interpolation.value,
                    map=f"{report.map_score:.4f}", f1=report.f1)

    return _guarded("eval", body)
