import json

import numpy as np
import pytest

from midlines import constants as C
from midlines.decoder.heatmap_decoder import Detection
from midlines.encoder.target_encoder import encode_image
from midlines.exception.exception import ContainerError, UnknownClass
from midlines.geometry.geometry_core import BranchId, OrientedBox
from midlines.ingest.annotation_parser import AnnotatedImage
from midlines.utils.main_utils import (
    detections_to_records,
    infer_vocabulary,
    load_detections,
    load_ground_truth,
    load_maps,
    save_ground_truth,
    save_maps,
    write_json,
)


@pytest.fixture
def maps():
    boxes = [OrientedBox.from_rotated_rect(60, 50, 50, 24, 30, class_id=0),
             OrientedBox.from_rotated_rect(140, 120, 40, 40, 0, class_id=1)]
    return encode_image(boxes, 200, 160, num_classes=2, class_names=["plane", "ship"], image_id="img")


def test_vocabulary_inference():
    assert infer_vocabulary(["text"]) == ["text"]
    assert infer_vocabulary(["plane", "ship"]) == C.DOTA_CLASSES
    assert infer_vocabulary(["zebra", "apple"]) == ["apple", "zebra"]


def test_ground_truth_round_trip(tmp_path):
    img = AnnotatedImage("a", 300, 200, [OrientedBox.from_rotated_rect(50, 50, 30, 20, 10, class_id=1, difficult=True)],
                         ["plane", "ship"])
    path = tmp_path / "gt.json"
    save_ground_truth(path, [img])
    assert path.read_text(encoding="utf-8").endswith("\n")
    (back,) = load_ground_truth(path)
    assert back.class_names == ["plane", "ship"]
    assert (back.width, back.height) == (300, 200)
    assert back.objects[0].difficult and back.objects[0].class_id == 1
    assert back.objects[0].flat() == pytest.approx(img.objects[0].flat())


def test_ground_truth_without_declared_classes(tmp_path):
    path = tmp_path / "gt.json"
    write_json(path, [{"image_id": "x", "width": 50, "height": 50,
                       "objects": [{"class": "text", "corners": [1, 1, 20, 1, 20, 10, 1, 10]}]}])
    (img,) = load_ground_truth(path)
    assert img.class_names == ["text"]


def test_ground_truth_unknown_class(tmp_path):
    path = tmp_path / "gt.json"
    write_json(path, [{"image_id": "x", "width": 50, "height": 50,
                       "objects": [{"class": "boat", "corners": [1, 1, 20, 1, 20, 10, 1, 10]}]}])
    with pytest.raises(UnknownClass) as info:
        load_ground_truth(path, class_names=["text"])
    assert info.value.classes == ["boat"]


def test_ground_truth_bad_document(tmp_path):
    path = tmp_path / "gt.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ContainerError):
        load_ground_truth(path)
    write_json(path, [{"image_id": "x", "width": 50}])
    with pytest.raises(ContainerError):
        load_ground_truth(path)


def test_detection_records(tmp_path):
    dets = [Detection(OrientedBox.from_rotated_rect(50, 50, 30, 20, 10, class_id=1, score=0.75), BranchId.ORIENTED)]
    records = detections_to_records(dets, ["plane", "ship"], image_id="a")
    assert records[0]["class"] == "ship" and records[0]["branch"] == 2 and records[0]["image_id"] == "a"
    path = tmp_path / "det.json"
    write_json(path, records)
    grouped = load_detections(path, ["plane", "ship"])
    (back,) = grouped["a"]
    assert back.score == pytest.approx(0.75) and back.branch == BranchId.ORIENTED and back.class_id == 1


def test_detections_need_an_image(tmp_path):
    path = tmp_path / "det.json"
    write_json(path, [{"class": "text", "score": 0.5, "corners": [1, 1, 20, 1, 20, 10, 1, 10], "branch": 1}])
    with pytest.raises(ContainerError):
        load_detections(path, ["text"])
    assert list(load_detections(path, ["text"], default_image_id="only")) == ["only"]


def test_detections_unknown_class(tmp_path):
    path = tmp_path / "det.json"
    corners = [1, 1, 20, 1, 20, 10, 1, 10]
    write_json(path, [{"class": "car", "score": 0.5, "corners": corners, "branch": 1, "image_id": "a"},
                      {"class": "bus", "score": 0.5, "corners": corners, "branch": 2, "image_id": "a"}])
    with pytest.raises(UnknownClass) as info:
        load_detections(path, ["text"])
    assert info.value.classes == ["bus", "car"]


def test_container_round_trip(tmp_path, maps):
    out = save_maps(maps, tmp_path / "img", config={"stride": 4})
    manifest = json.loads((out / C.MANIFEST_FILE).read_text(encoding="utf-8"))
    assert {t["name"] for t in manifest["tensors"]} == set(C.TENSOR_NAMES)
    assert all(t["dtype"] == "<f4" for t in manifest["tensors"])
    assert manifest["config"] == {"stride": 4}
    back = load_maps(out)
    assert back.heatmap.dtype == np.float64
    np.testing.assert_allclose(back.heatmap, maps.heatmap, atol=1e-6)
    np.testing.assert_allclose(back.regression, maps.regression, rtol=1e-6, atol=1e-4)
    assert (back.reg_mask == maps.reg_mask).all()
    assert back.class_names == ["plane", "ship"] and back.image_id == "img"
    assert (back.image_w, back.image_h, back.n_objects) == (200, 160, 2)


def test_container_missing_tensor_file(tmp_path, maps):
    out = save_maps(maps, tmp_path / "img")
    (out / f"{C.REGRESSION_TENSORS[0]}.bin").unlink()
    with pytest.raises(ContainerError):
        load_maps(out)


def test_container_truncated_tensor(tmp_path, maps):
    out = save_maps(maps, tmp_path / "img")
    np.zeros(3, dtype="<f4").tofile(out / f"{C.HEATMAP_TENSORS[1]}.bin")
    with pytest.raises(ContainerError):
        load_maps(out)


def test_container_bad_shape(tmp_path, maps):
    out = save_maps(maps, tmp_path / "img")
    path = out / C.MANIFEST_FILE
    manifest = json.loads(path.read_text(encoding="utf-8"))
    manifest["tensors"][0]["shape"] = [9, 9, 9]
    path.write_text(json.dumps(manifest), encoding="utf-8")
    with pytest.raises(ContainerError):
        load_maps(out)


def test_container_corrupt_manifest(tmp_path, maps):
    out = save_maps(maps, tmp_path / "img")
    (out / C.MANIFEST_FILE).write_text("{", encoding="utf-8")
    with pytest.raises(ContainerError):
        load_maps(out)
    with pytest.raises(ContainerError):
        load_maps(tmp_path / "nowhere")
