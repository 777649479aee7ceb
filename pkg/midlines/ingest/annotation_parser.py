"""Parsers for DOTA label files, ICDAR-2015 gt files and COCO horizontal-box JSON."""
import json
import math
import re
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

from midlines import constants as C
from midlines.exception.exception import AllLinesMalformed, DegenerateBox, EmptyFile, NonConvexInput
from midlines.geometry.geometry_core import OrientedBox, Point2
from midlines.logging.logger import kv, logging

DOTA_HEADERS = ("imagesource", "gsd", "imagesize")
IMAGESIZE_HEADER = "imagesize:"


@dataclass
class AnnotatedImage:
    image_id: str
    width: int
    height: int
    objects: List[OrientedBox] = field(default_factory=list)
    class_names: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def __post_init__(self):
        for obj in self.objects:
            if obj.class_id >= len(self.class_names):
                raise ValueError(f"class_id {obj.class_id} outside vocabulary {self.class_names}")


def strip_bom(text: str) -> str:
    return text[1:] if text.startswith("\ufeff") else text


def clamp_box(box: OrientedBox, width: float, height: float) -> OrientedBox:
    """Clamp every corner into [0, width] x [0, height]; raises DegenerateBox if nothing is left."""
    corners = tuple(Point2(min(max(p.x, 0.0), float(width)), min(max(p.y, 0.0), float(height)))
                    for p in box.corners)
    if corners == box.corners:
        return box
    return OrientedBox(corners, class_id=box.class_id, score=box.score, difficult=box.difficult)


def _keep_convex(box: OrientedBox, where: str, warnings: List[str], strict: bool) -> bool:
    if box.is_convex():
        return True
    if strict:
        raise NonConvexInput(f"{where}: non-convex quadrilateral {box.flat()}")
    warnings.append(f"{where}: non-convex quadrilateral dropped")
    return False


def _imagesize(line: str) -> Tuple[int, int]:
    """`imagesize:1400x1200` or `imagesize: 1400 1200`."""
    fields = [f for f in re.split(r"[x,\s]+", line[len(IMAGESIZE_HEADER):].strip().lower()) if f]
    if len(fields) != 2:
        raise ValueError(f"bad imagesize header {line!r}")
    width, height = (int(float(v)) for v in fields)
    if width < 1 or height < 1:
        raise ValueError(f"bad imagesize header {line!r}")
    return width, height


def _extent(boxes: Sequence[OrientedBox]) -> Tuple[int, int]:
    if not boxes:
        return 0, 0
    return (math.ceil(max(p.x for b in boxes for p in b.corners)),
            math.ceil(max(p.y for b in boxes for p in b.corners)))


def _finish(image_id: str, boxes: List[OrientedBox], class_names: Sequence[str], warnings: List[str],
            object_lines: int, width: Optional[int], height: Optional[int], strict: bool) -> AnnotatedImage:
    if object_lines == 0:
        if strict:
            raise EmptyFile(f"{image_id or 'annotation'}: no object lines")
    elif not boxes:
        raise AllLinesMalformed(f"{image_id or 'annotation'}: all {object_lines} object lines malformed")
    if width is None or height is None:
        ext_w, ext_h = _extent(boxes)
        width = ext_w if width is None else width
        height = ext_h if height is None else height
        logging.info(kv(event="size_from_extent", image_id=image_id, width=width, height=height))
    kept = []
    for box in boxes:
        try:
            kept.append(clamp_box(box, width, height))
        except DegenerateBox:
            warnings.append(f"object {box.flat()} degenerate after clamping to {width}x{height}")
    for message in warnings:
        logging.warning(kv(event="parse_warning", image_id=image_id, detail=repr(message)))
    return AnnotatedImage(image_id, int(width), int(height), kept, list(class_names), warnings)


def parse_dota(text: str, image_id: str = "", width: Optional[int] = None, height: Optional[int] = None,
               class_names: Sequence[str] = C.DOTA_CLASSES, strict: bool = False) -> AnnotatedImage:
    """Parse a DOTA v1.0 label file: `x1 y1 ... x4 y4 category difficult` per line.

    The image size comes from width/height, else an `imagesize:WxH` header, else
    the annotation extent.
    """
    vocab = {name: i for i, name in enumerate(class_names)}
    boxes, warnings, object_lines = [], [], 0
    header_size = None
    for lineno, raw in enumerate(strip_bom(text).splitlines(), start=1):
        line = raw.strip()
        if line.lower().startswith(IMAGESIZE_HEADER):
            try:
                header_size = _imagesize(line)
            except ValueError as e:
                warnings.append(f"line {lineno}: {e}")
            continue
        if not line or line.lower().startswith(DOTA_HEADERS):
            continue
        object_lines += 1
        tokens = line.split()
        if len(tokens) not in (9, 10):
            warnings.append(f"line {lineno}: expected 8 coordinates, category and difficult flag")
            continue
        try:
            coords = [float(t) for t in tokens[:8]]
            difficult = bool(int(tokens[9])) if len(tokens) == 10 else False
        except ValueError:
            warnings.append(f"line {lineno}: non-numeric field")
            continue
        if tokens[8] not in vocab:
            warnings.append(f"line {lineno}: unknown category {tokens[8]!r}")
            continue
        try:
            box = OrientedBox.from_array(coords, class_id=vocab[tokens[8]], difficult=difficult)
        except (DegenerateBox, ValueError) as e:
            warnings.append(f"line {lineno}: {e}")
            continue
        if _keep_convex(box, f"line {lineno}", warnings, strict):
            boxes.append(box)
    if header_size is not None:
        width = header_size[0] if width is None else width
        height = header_size[1] if height is None else height
    return _finish(image_id, boxes, class_names, warnings, object_lines, width, height, strict)


def parse_icdar(text: str, image_id: str = "", width: Optional[int] = None, height: Optional[int] = None,
                strict: bool = False) -> AnnotatedImage:
    """Parse an ICDAR-2015 gt file: `x1,y1,...,x4,y4,transcription`; `###` marks difficult text.

    Non-convex quads are dropped with a warning (strict: NonConvexInput).
    """
    boxes, warnings, object_lines = [], [], 0
    for lineno, raw in enumerate(strip_bom(text).splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        object_lines += 1
        fields = line.split(",", 8)
        if len(fields) != 9:
            warnings.append(f"line {lineno}: expected 8 coordinates and a transcription")
            continue
        try:
            coords = [float(t) for t in fields[:8]]
        except ValueError:
            warnings.append(f"line {lineno}: non-numeric coordinate")
            continue
        difficult = fields[8].strip() == C.ICDAR_DIFFICULT
        try:
            box = OrientedBox.from_array(coords, class_id=0, difficult=difficult)
        except (DegenerateBox, ValueError) as e:
            warnings.append(f"line {lineno}: {e}")
            continue
        if _keep_convex(box, f"line {lineno}", warnings, strict):
            boxes.append(box)
    return _finish(image_id, boxes, C.TEXT_CLASSES, warnings, object_lines, width, height, strict)


def parse_coco(text: str, strict: bool = False) -> List[AnnotatedImage]:
    """COCO detection JSON (horizontal `bbox` = [x, y, w, h]) as axis-aligned oriented boxes."""
    doc = json.loads(strip_bom(text))
    categories = doc.get("categories", [])
    class_names = [c["name"] for c in categories]
    cat_index = {c["id"]: i for i, c in enumerate(categories)}
    per_image = {img["id"]: ([], [], 0) for img in doc.get("images", [])}
    for ann in doc.get("annotations", []):
        boxes, warnings, count = per_image.setdefault(ann.get("image_id"), ([], [], 0))
        per_image[ann.get("image_id")] = (boxes, warnings, count + 1)
        x, y, w, h = (float(v) for v in ann.get("bbox", (0, 0, 0, 0)))
        if ann.get("category_id") not in cat_index:
            warnings.append(f"annotation {ann.get('id')}: unknown category {ann.get('category_id')}")
            continue
        try:
            boxes.append(OrientedBox.from_array([x, y, x + w, y, x + w, y + h, x, y + h],
                                                class_id=cat_index[ann["category_id"]],
                                                difficult=bool(ann.get("iscrowd", 0))))
        except (DegenerateBox, ValueError) as e:
            warnings.append(f"annotation {ann.get('id')}: {e}")

    sizes = {img["id"]: (img.get("width"), img.get("height"), img.get("file_name", str(img["id"])))
             for img in doc.get("images", [])}
    images = []
    for image_key, (boxes, warnings, count) in per_image.items():
        width, height, name = sizes.get(image_key, (None, None, str(image_key)))
        image_id = str(name).rsplit(".", 1)[0]
        images.append(_finish(image_id, boxes, class_names, warnings, count, width, height, strict))
    return images
