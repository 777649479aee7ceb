from typing import List

from midlines.config.run_config import TileSpec
from midlines.exception.exception import DegenerateBox
from midlines.ingest.annotation_parser import AnnotatedImage, clamp_box
from midlines.logging.logger import kv, logging


def window_origins(extent: int, window: int, step: int) -> List[int]:
    """Origins at multiples of step, with the last window pulled back to end at the edge."""
    if extent <= window:
        return [0]
    origins, origin = [], 0
    while origin + window < extent:
        origins.append(origin)
        origin += step
    origins.append(extent - window)
    return sorted(set(origins))


def tile_name(image_id: str, ox: int, oy: int) -> str:
    return f"{image_id}__{ox}_{oy}"


def tile_image(img: AnnotatedImage, spec: TileSpec = TileSpec()) -> List[AnnotatedImage]:
    """Split annotations into overlapping windows; each object goes where its corner centroid lies."""
    tiles = []
    xs = window_origins(img.width, spec.window, spec.step)
    ys = window_origins(img.height, spec.window, spec.step)
    centroids = [obj.centroid() for obj in img.objects]
    for oy in ys:
        for ox in xs:
            tile_w, tile_h = min(spec.window, img.width - ox), min(spec.window, img.height - oy)
            objects, warnings = [], []
            for obj, c in zip(img.objects, centroids):
                if not (ox <= c.x < ox + spec.window and oy <= c.y < oy + spec.window):
                    continue
                try:
                    objects.append(clamp_box(obj.translated(-ox, -oy), tile_w, tile_h))
                except DegenerateBox:
                    warnings.append(f"object {obj.flat()} degenerate after clamping to tile ({ox}, {oy})")
                    logging.warning(kv(event="drop_object", image_id=img.image_id, ox=ox, oy=oy))
            tiles.append(AnnotatedImage(tile_name(img.image_id, ox, oy), tile_w, tile_h, objects,
                                        list(img.class_names), warnings))
    logging.info(kv(event="tile", image_id=img.image_id, tiles=len(tiles), objects=len(img.objects)))
    return tiles
