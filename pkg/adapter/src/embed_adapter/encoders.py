"""Encoder registry: deterministic built-in encoders plus optional CLIP.

The built-in encoders need no downloaded weights and are fully deterministic,
which keeps extraction reproducible and testable offline: the text encoder
hashes each token into a Gaussian vector, the image encoders summarize pixels
(intensity layout for the identity role, color/gradient statistics for the
style role) and project them with a checkpoint-seeded fixed matrix.

Checkpoints of the form hf:<model> load a CLIP model through transformers
when the weights are available and raise EncoderUnavailable when they are
not. The embedding width always comes from the encoder at runtime.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import EncoderUnavailable, UnreadableInput, UsageError

ROLE_BY_KIND = {"text": "token", "clip": "clip", "style": "style"}

BUILTIN_CHECKPOINTS = {
    "text": "builtin:text-hash-v1",
    "clip": "builtin:image-pixel-v1",
    "style": "builtin:image-style-v1",
}

DEFAULT_DIM = 512


def _rng_from(*parts) -> np.random.Generator:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode())
    key = int.from_bytes(h.digest()[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


def _load_image(path: Path) -> Image.Image:
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise UnreadableInput(f"cannot read image {path}: {exc}") from exc


class HashTextEncoder:
    """Token text to a reproducible Gaussian direction."""

    def __init__(self, dim: int = DEFAULT_DIM):
        self.dim = dim
        self.checkpoint = BUILTIN_CHECKPOINTS["text"]

    def encode_texts(self, texts) -> np.ndarray:
        out = np.empty((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            out[i] = _rng_from(self.checkpoint, self.dim, text).standard_normal(self.dim)
        return out


class _ProjectedImageEncoder:
    def __init__(self, dim: int, checkpoint: str, n_features: int):
        self.dim = dim
        self.checkpoint = checkpoint
        rng = _rng_from(checkpoint, "projection", n_features, dim)
        self._projection = rng.standard_normal((n_features, dim)).astype(np.float64) / np.sqrt(n_features)

    def _features(self, img: Image.Image) -> np.ndarray:
        raise NotImplementedError

    def encode_images(self, paths) -> np.ndarray:
        out = np.empty((len(paths), self.dim), dtype=np.float32)
        for i, path in enumerate(paths):
            feats = self._features(_load_image(Path(path)))
            out[i] = feats @ self._projection
        return out


class PixelImageEncoder(_ProjectedImageEncoder):
    """Identity-flavored features: the grayscale intensity layout."""

    PATCH = 16

    def __init__(self, dim: int = DEFAULT_DIM):
        super().__init__(dim, BUILTIN_CHECKPOINTS["clip"], self.PATCH * self.PATCH)

    def _features(self, img: Image.Image) -> np.ndarray:
        small = img.convert("L").resize((self.PATCH, self.PATCH), Image.BILINEAR)
        feats = np.asarray(small, dtype=np.float64).ravel() / 255.0
        return feats - feats.mean()


class StyleImageEncoder(_ProjectedImageEncoder):
    """Style-flavored features: color distribution plus edge statistics,
    insensitive to where the subject sits in the frame."""

    BINS = 8

    def __init__(self, dim: int = DEFAULT_DIM):
        super().__init__(dim, BUILTIN_CHECKPOINTS["style"], 4 * self.BINS)

    def _features(self, img: Image.Image) -> np.ndarray:
        rgb = np.asarray(img.resize((64, 64), Image.BILINEAR), dtype=np.float64) / 255.0
        feats = []
        for channel in range(3):
            hist, _ = np.histogram(rgb[:, :, channel], bins=self.BINS, range=(0.0, 1.0))
            feats.append(hist / hist.sum())
        gray = rgb.mean(axis=2)
        gx = np.diff(gray, axis=1).ravel()
        gy = np.diff(gray, axis=0).ravel()
        magnitudes = np.concatenate([np.abs(gx), np.abs(gy)])
        hist, _ = np.histogram(magnitudes, bins=self.BINS, range=(0.0, 1.0))
        feats.append(hist / max(hist.sum(), 1))
        return np.concatenate(feats)


class ClipEncoder:
    """transformers-backed CLIP; width read from the loaded model."""

    def __init__(self, model_name: str):
        self.checkpoint = f"hf:{model_name}"
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor

            self._torch = torch
            self._model = CLIPModel.from_pretrained(model_name)
            self._model.eval()
            self._processor = CLIPProcessor.from_pretrained(model_name)
        except Exception as exc:  # noqa: BLE001 - anything here means "not usable"
            raise EncoderUnavailable(f"cannot load {model_name}: {exc}") from exc
        self.dim = int(self._model.config.projection_dim)

    def encode_texts(self, texts) -> np.ndarray:
        with self._torch.no_grad():
            inputs = self._processor(text=list(texts), return_tensors="pt", padding=True)
            feats = self._model.get_text_features(**inputs)
        return feats.numpy().astype(np.float32)

    def encode_images(self, paths) -> np.ndarray:
        images = [_load_image(Path(p)) for p in paths]
        with self._torch.no_grad():
            inputs = self._processor(images=images, return_tensors="pt")
            feats = self._model.get_image_features(**inputs)
        return feats.numpy().astype(np.float32)


def get_encoder(kind: str, checkpoint: str | None = None, dim: int = DEFAULT_DIM):
    if kind not in ROLE_BY_KIND:
        raise UsageError(f"unknown encoder kind {kind!r}; expected one of {sorted(ROLE_BY_KIND)}")
    if checkpoint is None or checkpoint == BUILTIN_CHECKPOINTS[kind]:
        if kind == "text":
            return HashTextEncoder(dim)
        if kind == "clip":
            return PixelImageEncoder(dim)
        return StyleImageEncoder(dim)
    if checkpoint.startswith("hf:"):
        return ClipEncoder(checkpoint[3:])
    raise UsageError(f"unknown checkpoint {checkpoint!r}; use builtin:* or hf:<model>")
