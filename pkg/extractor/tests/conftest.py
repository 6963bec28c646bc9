from pathlib import Path

import pytest

from imagegen import make_image


@pytest.fixture
def image_dir_factory(tmp_path):
    def factory(count: int, seed: int = 0, sizes=None) -> Path:
        root = tmp_path / f"images-{seed}-{count}"
        root.mkdir()
        sizes = sizes or [(320, 280), (256, 256), (300, 240)]
        for i in range(count):
            width, height = sizes[i % len(sizes)]
            make_image(root / f"img{i:03d}.png", width, height, seed=seed * 1000 + i)
        return root

    return factory


@pytest.fixture(scope="session")
def smoke_backbone():
    from vgg16lpff.backbone import load_backbone

    return load_backbone("random:0")
