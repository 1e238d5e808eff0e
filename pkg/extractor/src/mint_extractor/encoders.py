"""Image/text encoder backends.

Two backends share one small interface: `encode_images(pil_images)` and
`encode_texts(strings)`, both returning raw (unnormalized) float arrays.
Normalization is owned by the extractor, not the encoder.

- `toy:<dim>` is a deterministic offline encoder: grayscale-resize to a
  16x16 patch, flatten, and project through a fixed seeded Gaussian matrix.
  It needs no downloads and keeps repeated runs byte-identical, which is
  what the tests use.
- any other model id is treated as a Hugging Face CLIP checkpoint and needs
  the `clip` extra (torch + transformers) plus network access to fetch
  weights.
"""

import hashlib

import numpy as np
from PIL import Image

from mint_tta.errors import DataError

TOY_PATCH = 16


class ToyEncoder:
    """Deterministic random-projection encoder for offline use."""

    def __init__(self, dim: int, seed: int = 0):
        if dim < 2:
            raise DataError("toy encoder needs dim >= 2")
        self.dim = dim
        rng = np.random.default_rng(seed)
        self._proj = rng.standard_normal((TOY_PATCH * TOY_PATCH, dim)) / np.sqrt(dim)

    def encode_images(self, images) -> np.ndarray:
        rows = []
        for img in images:
            gray = img.convert("L").resize((TOY_PATCH, TOY_PATCH), Image.BILINEAR)
            flat = np.asarray(gray, dtype=np.float64).reshape(-1) / 255.0
            rows.append(flat @ self._proj)
        return np.stack(rows)

    def encode_texts(self, texts) -> np.ndarray:
        # alignment-free stand-in: a fixed pseudo-random direction per string
        rows = []
        for text in texts:
            digest = hashlib.sha256(text.encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            rows.append(rng.standard_normal(self.dim))
        return np.stack(rows)


class ClipEncoder:
    """Thin wrapper over a Hugging Face CLIP checkpoint."""

    def __init__(self, model_id: str, device: str = "cpu", batch_size: int = 32):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise DataError(
                f"model load failure for {model_id!r}: install the 'clip' extra "
                f"(torch + transformers): {exc}"
            ) from exc
        try:
            self._model = CLIPModel.from_pretrained(model_id).to(device).eval()
            self._processor = CLIPProcessor.from_pretrained(model_id)
        except Exception as exc:
            raise DataError(f"model load failure for {model_id!r}: {exc}") from exc
        self._torch = torch
        self.device = device
        self.batch_size = batch_size

    def encode_images(self, images) -> np.ndarray:
        torch = self._torch
        chunks = []
        with torch.no_grad():
            for i in range(0, len(images), self.batch_size):
                inputs = self._processor(images=images[i:i + self.batch_size],
                                         return_tensors="pt").to(self.device)
                chunks.append(self._model.get_image_features(**inputs).cpu().numpy())
        return np.concatenate(chunks).astype(np.float64)

    def encode_texts(self, texts) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            inputs = self._processor(text=list(texts), return_tensors="pt",
                                     padding=True).to(self.device)
            return self._model.get_text_features(**inputs).cpu().numpy().astype(np.float64)


def make_encoder(model_id: str, device: str = "cpu", batch_size: int = 32):
    if model_id.startswith("toy:"):
        try:
            dim = int(model_id.split(":", 1)[1])
        except ValueError as exc:
            raise DataError(f"bad toy encoder id {model_id!r}, expected toy:<dim>") from exc
        return ToyEncoder(dim)
    return ClipEncoder(model_id, device=device, batch_size=batch_size)
