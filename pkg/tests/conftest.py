import os
import tempfile

os.environ.setdefault("MIDLINES_LOG_DIR", os.path.join(tempfile.gettempdir(), "midlines-test-logs"))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from midlines.geometry.geometry_core import OrientedBox  # noqa: E402


def random_rectangles(rng, n, image_size=1000.0, min_side=8.0, max_side=400.0, margin=0.0, class_id=0):
    """Rectangles with centre uniform in [margin, image_size - margin] and uniform angle in [0, 180)."""
    boxes = []
    for _ in range(n):
        cx, cy = rng.uniform(margin, image_size - margin, 2)
        w, h = rng.uniform(min_side, max_side, 2)
        angle = rng.uniform(0.0, 180.0)
        boxes.append(OrientedBox.from_rotated_rect(cx, cy, w, h, angle, class_id=class_id))
    return boxes


def vertex_deviation(a: OrientedBox, b: OrientedBox) -> float:
    """Largest distance from a corner of a to its nearest corner of b."""
    pa, pb = a.as_array(), b.as_array()
    dist = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=-1)
    return float(dist.min(axis=1).max())


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def axis_box():
    return OrientedBox.from_array([70, 80, 130, 80, 130, 120, 70, 120])


@pytest.fixture
def diamond_box():
    return OrientedBox.from_array([100, 60, 140, 100, 100, 140, 60, 100])


@pytest.fixture(autouse=True)
def _no_seed_override(monkeypatch):
    monkeypatch.delenv("O2_SEED", raising=False)
