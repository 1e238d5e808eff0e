"""Dump extraction: encode an image dataset and its class prompts, then
write the shared binary dump format.

Image embeddings are unit-normalized here, by the writer, regardless of
what the encoder returned. Text embeddings ensemble the prompt templates:
each (template, class) string is encoded and normalized, the normalized
vectors are summed over templates, and the sum is normalized again.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from mint_tta.dump_io import write_dump
from mint_tta.errors import DataError
from mint_tta.metrics import EmbeddingSet
from mint_tta.synthetic import TextEmbeddings

from .dataset import list_dataset
from .encoders import make_encoder

DEFAULT_TEMPLATES = ["a photo of a {}"]


@dataclass
class ExtractJob:
    dataset_root: Path
    model_id: str
    output_path: Path
    prompt_templates: list = field(default_factory=lambda: list(DEFAULT_TEMPLATES))
    device: str = "cpu"
    batch_size: int = 32

    def __post_init__(self):
        self.dataset_root = Path(self.dataset_root)
        self.output_path = Path(self.output_path)
        if not self.prompt_templates:
            raise DataError("prompt_templates must be nonempty")


def _normalize_rows(rows: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms < 1e-30):
        raise DataError(f"zero-norm {what} embedding at index {int(np.argmin(norms))}")
    return rows / norms[:, None]


def _load_images(paths):
    images = []
    for path in paths:
        try:
            with Image.open(path) as img:
                images.append(img.convert("RGB"))
        except OSError as exc:
            raise DataError(f"cannot read image {path}: {exc}") from exc
    return images


def ensemble_text(encoder, class_names, templates) -> np.ndarray:
    """Per class: normalize each template encoding, sum, normalize the sum."""
    prompts = [template.format(name) for name in class_names for template in templates]
    encoded = np.asarray(encoder.encode_texts(prompts), dtype=np.float64)
    per_prompt = _normalize_rows(encoded, "text")
    k = len(templates)
    summed = per_prompt.reshape(len(class_names), k, -1).sum(axis=1)
    return _normalize_rows(summed, "ensembled text")


def extract(job: ExtractJob) -> Path:
    """Encode the dataset and write a dump with labels and text embeddings."""
    paths, labels, class_names = list_dataset(job.dataset_root)
    encoder = make_encoder(job.model_id, device=job.device, batch_size=job.batch_size)

    image_rows = []
    for i in range(0, len(paths), job.batch_size):
        batch = _load_images(paths[i:i + job.batch_size])
        image_rows.append(np.asarray(encoder.encode_images(batch), dtype=np.float64))
    image_embs = _normalize_rows(np.concatenate(image_rows), "image")
    text_embs = ensemble_text(encoder, class_names, job.prompt_templates)

    if text_embs.shape[1] != image_embs.shape[1]:
        raise DataError(
            f"dimension mismatch: image {image_embs.shape[1]} vs text {text_embs.shape[1]}"
        )

    job.output_path.parent.mkdir(parents=True, exist_ok=True)
    emb = EmbeddingSet(data=image_embs, n_classes=len(class_names),
                       labels=np.asarray(labels, dtype=np.int64))
    write_dump(job.output_path, emb, TextEmbeddings(t=text_embs))
    return job.output_path


def corrupt_tag(job: ExtractJob, tags) -> list[Path]:
    """One dump per corruption tag from pre-corrupted dataset subfolders.

    Expects job.dataset_root/<tag>/ to hold a class-per-subdirectory dataset
    for every tag; each dump lands next to job.output_path with a __<tag>
    suffix in its name.
    """
    tags = list(tags)
    if not tags:
        raise DataError("no tags given")
    missing = [str(job.dataset_root / t) for t in tags if not (job.dataset_root / t).is_dir()]
    if missing:
        raise DataError("missing corruption folder(s): " + ", ".join(missing))
    outputs = []
    stem = job.output_path.stem
    for tag in tags:
        tagged = ExtractJob(
            dataset_root=job.dataset_root / tag,
            model_id=job.model_id,
            output_path=job.output_path.with_name(f"{stem}__{tag}.mintdump"),
            prompt_templates=list(job.prompt_templates),
            device=job.device,
            batch_size=job.batch_size,
        )
        outputs.append(extract(tagged))
    return outputs
