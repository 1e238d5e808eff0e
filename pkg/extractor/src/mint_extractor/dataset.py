"""Class-per-subdirectory image dataset listing.

Class index = position of the class subdirectory in lexicographic order, so
labels are reproducible without sidecar metadata. Files within a class are
also sorted, which fixes the dump's sample order.
"""

from pathlib import Path

from mint_tta.errors import DataError

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp"}


def list_dataset(root) -> tuple[list[Path], list[int], list[str]]:
    """Returns (image paths, labels, class names) for a dataset directory."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if len(class_dirs) < 2:
        raise DataError(f"dataset root {root} needs at least two class subdirectories")
    paths: list[Path] = []
    labels: list[int] = []
    names: list[str] = []
    for idx, class_dir in enumerate(class_dirs):
        names.append(class_dir.name)
        files = sorted(p for p in class_dir.iterdir()
                       if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())
        if not files:
            raise DataError(f"empty class directory {class_dir}")
        paths.extend(files)
        labels.extend([idx] * len(files))
    return paths, labels, names
