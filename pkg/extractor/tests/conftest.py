"""Fixtures for the extractor suite: a small image directory and one cached
random-weight extraction that several tests inspect."""

import numpy as np
import pytest
from PIL import Image

from capfeat.extraction import discover_images, extract_features


@pytest.fixture(scope="session")
def image_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("images")
    rng = np.random.default_rng(0)
    for i in range(5):
        arr = rng.integers(0, 256, size=(120, 160, 3), dtype=np.uint8)
        Image.fromarray(arr).save(d / f"photo_{i}.jpg")
    Image.new("RGB", (64, 48), "blue").save(d / "tiny.png")
    (d / "broken.jpg").write_bytes(b"this is not an image")
    (d / "notes.txt").write_text("not an image either")
    return d


@pytest.fixture(scope="session")
def resnet18_extraction(image_dir):
    """(store, skipped) for the whole image dir, resnet18, 2x2 grid."""
    paths = discover_images(image_dir)
    with pytest.warns(UserWarning, match="broken.jpg"):
        store, skipped = extract_features(
            paths, "resnet18", grid=(2, 2), weights="random", seed=3,
            batch_size=4)
    return store, skipped
