import json
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field, TypeAdapter, ValidationError

from midlines import constants as C
from midlines.decoder.heatmap_decoder import Detection
from midlines.encoder.target_encoder import TargetMaps
from midlines.exception.exception import ContainerError, MidlinesException, UnknownClass
from midlines.geometry.geometry_core import BranchId, OrientedBox
from midlines.ingest.annotation_parser import AnnotatedImage
from midlines.logging.logger import kv, logging

TENSOR_DTYPE = "<f4"


class ObjectRecord(BaseModel):
    class_name: str = Field(alias="class")
    corners: List[float] = Field(min_length=8, max_length=8)
    difficult: bool = False

    model_config = {"populate_by_name": True}


class ImageRecord(BaseModel):
    image_id: str
    width: int
    height: int
    objects: List[ObjectRecord] = Field(default_factory=list)
    class_names: Optional[List[str]] = None


class DetectionRecord(BaseModel):
    class_name: str = Field(alias="class")
    score: float = Field(ge=0.0, le=1.0)
    corners: List[float] = Field(min_length=8, max_length=8)
    branch: int = Field(ge=1, le=2)
    image_id: Optional[str] = None

    model_config = {"populate_by_name": True}


class TensorEntry(BaseModel):
    name: str
    file: str
    shape: List[int]
    dtype: str = TENSOR_DTYPE


class Manifest(BaseModel):
    stride: int
    num_classes: int
    width: int
    height: int
    image_w: int
    image_h: int
    class_names: List[str]
    tensors: List[TensorEntry]
    image_id: str = ""
    n_objects: int = 0
    config: Dict = Field(default_factory=dict)


def write_json(path, payload) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, ensure_ascii=False)
            fh.write("\n")
    except Exception as e:
        raise ContainerError(e, sys) from e


def read_json(path):
    try:
        with open(path, "r", encoding="utf-8-sig") as fh:
            return json.load(fh)
    except Exception as e:
        raise ContainerError(f"{path}: {e}", sys) from e


def read_text(path) -> str:
    try:
        with open(path, "r", encoding="utf-8-sig") as fh:
            return fh.read()
    except Exception as e:
        raise ContainerError(f"{path}: {e}", sys) from e


def infer_vocabulary(names: Sequence[str]) -> List[str]:
    present = set(names)
    if present <= set(C.TEXT_CLASSES):
        return list(C.TEXT_CLASSES)
    if present <= set(C.DOTA_CLASSES):
        return list(C.DOTA_CLASSES)
    return sorted(present)


def images_to_records(images: Sequence[AnnotatedImage]) -> List[dict]:
    return [
        {
            "image_id": img.image_id,
            "width": img.width,
            "height": img.height,
            "class_names": list(img.class_names),
            "objects": [
                {"class": img.class_names[o.class_id], "corners": o.flat(), "difficult": o.difficult}
                for o in img.objects
            ],
        }
        for img in images
    ]


def save_ground_truth(path, images: Sequence[AnnotatedImage]) -> None:
    write_json(path, images_to_records(images))


def _ground_truth_documents(path) -> list:
    """A JSON array of image records, or the concatenation of every *.json in a directory."""
    root = Path(path)
    if not root.is_dir():
        return read_json(root)
    merged = []
    for child in sorted(root.glob("*.json")):
        doc = read_json(child)
        if not isinstance(doc, list):
            raise ContainerError(f"{child}: expected a JSON array of image records")
        merged += doc
    return merged


def load_ground_truth(path, class_names: Optional[Sequence[str]] = None) -> List[AnnotatedImage]:
    try:
        records = TypeAdapter(List[ImageRecord]).validate_python(_ground_truth_documents(path))
    except ValidationError as e:
        raise ContainerError(f"{path}: {e}", sys) from e
    if class_names is None:
        declared = next((r.class_names for r in records if r.class_names), None)
        class_names = declared or infer_vocabulary([o.class_name for r in records for o in r.objects])
    vocab = {name: i for i, name in enumerate(class_names)}
    unknown = sorted({o.class_name for r in records for o in r.objects if o.class_name not in vocab})
    if unknown:
        raise UnknownClass(f"{path}: classes outside vocabulary: {', '.join(unknown)}", classes=unknown)
    images = []
    for r in records:
        objects = [OrientedBox.from_array(o.corners, class_id=vocab[o.class_name], difficult=o.difficult)
                   for o in r.objects]
        images.append(AnnotatedImage(r.image_id, r.width, r.height, objects, list(class_names)))
    return images


def detections_to_records(dets: Sequence[Detection], class_names: Sequence[str], image_id: Optional[str] = None) -> List[dict]:
    records = []
    for d in dets:
        record = {"class": class_names[d.class_id], "score": d.score, "corners": d.box.flat(),
                  "branch": int(d.branch)}
        if image_id is not None:
            record["image_id"] = image_id
        records.append(record)
    return records


def load_detections(path, class_names: Sequence[str], default_image_id: Optional[str] = None) -> Dict[str, List[Detection]]:
    """Detections grouped by image_id; entries without image_id use default_image_id."""
    try:
        records = TypeAdapter(List[DetectionRecord]).validate_python(read_json(path))
    except ValidationError as e:
        raise ContainerError(f"{path}: {e}", sys) from e
    vocab = {name: i for i, name in enumerate(class_names)}
    unknown = sorted({r.class_name for r in records if r.class_name not in vocab})
    if unknown:
        raise UnknownClass(f"{path}: detection classes outside vocabulary: {', '.join(unknown)}", classes=unknown)
    grouped: Dict[str, List[Detection]] = {}
    for r in records:
        key = r.image_id if r.image_id is not None else default_image_id
        if key is None:
            raise ContainerError(f"{path}: detection without image_id and no default image")
        box = OrientedBox.from_array(r.corners, class_id=vocab[r.class_name], score=r.score)
        grouped.setdefault(key, []).append(Detection(box, BranchId(r.branch)))
    return grouped


def _tensor_arrays(maps: TargetMaps) -> Dict[str, np.ndarray]:
    arrays = {}
    for b in range(2):
        arrays[C.HEATMAP_TENSORS[b]] = maps.heatmap[b]
        arrays[C.REGRESSION_TENSORS[b]] = maps.regression[b]
        arrays[C.MASK_TENSORS[b]] = maps.reg_mask[b][None].astype(np.float64)
    return arrays


def save_maps(maps: TargetMaps, out_dir, config: Optional[dict] = None) -> Path:
    """Write a map container: manifest.json plus one raw little-endian float32 file per tensor."""
    try:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        entries = []
        for name, array in _tensor_arrays(maps).items():
            file_name = f"{name}.bin"
            np.ascontiguousarray(array, dtype=TENSOR_DTYPE).tofile(out / file_name)
            entries.append(TensorEntry(name=name, file=file_name, shape=list(array.shape)))
        manifest = Manifest(stride=maps.stride, num_classes=maps.num_classes, width=maps.width,
                            height=maps.height, image_w=maps.image_w, image_h=maps.image_h,
                            class_names=list(maps.class_names), tensors=entries, image_id=maps.image_id,
                            n_objects=maps.n_objects, config=dict(config or {}))
        write_json(out / C.MANIFEST_FILE, manifest.model_dump(mode="json"))
        logging.info(kv(event="save_maps", dir=str(out), tensors=len(entries)))
        return out
    except MidlinesException:
        raise
    except Exception as e:
        raise ContainerError(e, sys) from e


def load_maps(maps_dir) -> TargetMaps:
    root = Path(maps_dir)
    try:
        manifest = Manifest.model_validate(read_json(root / C.MANIFEST_FILE))
    except ValidationError as e:
        raise ContainerError(f"{root}: bad manifest: {e}", sys) from e
    by_name = {t.name: t for t in manifest.tensors}
    missing = [name for name in C.TENSOR_NAMES if name not in by_name]
    if missing:
        raise ContainerError(f"{root}: manifest lacks tensors {missing}")
    h, w, c = manifest.height, manifest.width, manifest.num_classes
    expected = {}
    for b in range(2):
        expected[C.HEATMAP_TENSORS[b]] = [c, h, w]
        expected[C.REGRESSION_TENSORS[b]] = [C.REGRESSION_CHANNELS, h, w]
        expected[C.MASK_TENSORS[b]] = [1, h, w]
    arrays = {}
    for name, shape in expected.items():
        entry = by_name[name]
        if entry.shape != shape:
            raise ContainerError(f"{root}: tensor {name} declares shape {entry.shape}, expected {shape}")
        path = root / entry.file
        if not path.is_file():
            raise ContainerError(f"{root}: missing tensor file {entry.file}")
        data = np.fromfile(path, dtype=TENSOR_DTYPE)
        if data.size != int(np.prod(shape)):
            raise ContainerError(f"{root}: tensor {name} holds {data.size} values, expected {int(np.prod(shape))}")
        arrays[name] = data.reshape(shape).astype(np.float64)

    return TargetMaps(
        stride=manifest.stride, num_classes=c, width=w, height=h,
        heatmap=np.stack([arrays[n] for n in C.HEATMAP_TENSORS]),
        regression=np.stack([arrays[n] for n in C.REGRESSION_TENSORS]),
        reg_mask=np.stack([arrays[n][0] > 0.5 for n in C.MASK_TENSORS]),
        image_w=manifest.image_w, image_h=manifest.image_h, n_objects=manifest.n_objects,
        class_names=list(manifest.class_names), image_id=manifest.image_id or os.path.basename(root),
    )
