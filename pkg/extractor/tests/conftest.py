import numpy as np
import pytest
from PIL import Image, ImageFilter


def striped_image(rng, horizontal: bool, size=64, period=8):
    """Class-distinctive texture: stripe orientation separates the classes,
    per-image phase and pixel noise keep samples apart within a class."""
    phase = int(rng.integers(0, period))
    idx = np.arange(size)
    wave = ((idx + phase) // (period // 2)) % 2
    img = np.tile(wave[None, :] if not horizontal else wave[:, None], (size, 1) if not horizontal else (1, size))
    arr = 60 + 140 * img + rng.integers(0, 40, size=(size, size))
    return Image.fromarray(np.clip(arr, 0, 255).astype(np.uint8)).convert("RGB")


def degrade(img: Image.Image, level: int) -> Image.Image:
    """Downscale-and-blur corruption; higher level wipes more texture."""
    if level == 0:
        return img
    small = max(4, 64 // (4 * level))
    out = img.resize((small, small), Image.BILINEAR).resize((64, 64), Image.BILINEAR)
    return out.filter(ImageFilter.GaussianBlur(radius=2 * level))


@pytest.fixture
def toy_dataset(tmp_path):
    """2 classes x 8 images, clean only."""
    rng = np.random.default_rng(12)
    root = tmp_path / "data"
    for cname, horizontal in (("horiz", True), ("vert", False)):
        cdir = root / cname
        cdir.mkdir(parents=True)
        for i in range(8):
            striped_image(rng, horizontal).save(cdir / f"img_{i:02d}.png")
    return root


@pytest.fixture
def corrupted_dataset(tmp_path):
    """clean/s1/s2 variants of the same images, one folder per tag."""
    rng = np.random.default_rng(34)
    root = tmp_path / "tagged"
    images = {
        ("horiz", i): striped_image(rng, True) for i in range(8)
    } | {
        ("vert", i): striped_image(rng, False) for i in range(8)
    }
    for tag, level in (("clean", 0), ("s1", 1), ("s2", 2)):
        for (cname, i), img in images.items():
            cdir = root / tag / cname
            cdir.mkdir(parents=True, exist_ok=True)
            degrade(img, level).save(cdir / f"img_{i:02d}.png")
    return root
