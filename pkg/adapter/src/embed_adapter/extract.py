"""Extraction jobs: token list or image directory to an embedding manifest."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoders import ROLE_BY_KIND, get_encoder
from .errors import UnreadableInput, UsageError
from .manifest import write_matrix

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}


@dataclass(frozen=True)
class ExtractionJob:
    input_path: Path
    encoder: str  # "text" | "clip" | "style"
    output_path: Path
    normalize: bool = False
    checkpoint: str | None = None
    dim: int = 512

    def __post_init__(self):
        if self.encoder not in ROLE_BY_KIND:
            raise UsageError(f"unknown encoder kind {self.encoder!r}")
        object.__setattr__(self, "input_path", Path(self.input_path))
        object.__setattr__(self, "output_path", Path(self.output_path))


def read_token_list(path: Path) -> list[str]:
    if not path.is_file():
        raise UnreadableInput(f"token list not found: {path}")
    tokens = [line.strip() for line in path.read_text().splitlines()]
    tokens = [t for t in tokens if t]
    if not tokens:
        raise UnreadableInput(f"token list is empty: {path}")
    return tokens


def list_images(path: Path) -> list[Path]:
    if not path.is_dir():
        raise UnreadableInput(f"image directory not found: {path}")
    paths = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)
    if not paths:
        raise UnreadableInput(f"no images in {path}")
    return paths


def extract(job: ExtractionJob) -> Path:
    """Encode the inputs in order and write a stylekit-format manifest."""
    encoder = get_encoder(job.encoder, job.checkpoint, job.dim)
    if job.encoder == "text":
        values = encoder.encode_texts(read_token_list(job.input_path))
    else:
        values = encoder.encode_images(list_images(job.input_path))
    if job.normalize:
        norms = np.linalg.norm(values.astype(np.float64), axis=1)
        if (norms == 0).any():
            raise UnreadableInput(f"row {int(np.argmin(norms))} encoded to a zero vector")
        values = (values.astype(np.float64) / norms[:, None]).astype(np.float32)
    return write_matrix(
        values,
        job.output_path,
        role=ROLE_BY_KIND[job.encoder],
        normalized=job.normalize,
        checkpoint=encoder.checkpoint,
    )
