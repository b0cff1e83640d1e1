"""Sequential validity filter: copies, defective, multiple subjects, duplicates.

Stages run in that fixed order; an image invalidated by one stage never
reaches the next, and its status is the first failing stage. Copy detection
compares identity-space embeddings against references (strictly above the
threshold flags), defect detection uses per-image style fidelity (strictly
below flags), subject counts come from an ingestion file with manual
overrides winning, and duplicates are found with a keep-first SSIM scan in
lexicographic image-id order.

SSIM parameters are the canonical ones (11x11 Gaussian window, sigma 1.5,
K1=0.01, K2=0.03, dynamic range 255, BT.601 grayscale) and are echoed into
every report.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from . import errors
from .store import ImageSet, load_count_file
from .style_metrics import nearest_reference_similarity, per_image_fidelity

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_RANGE = 255.0

STATUS_VALID = "valid"
STATUS_COPY = "copy"
STATUS_DEFECTIVE = "defective"
STATUS_MULTIPLE = "multiple_subjects"
STATUS_DUPLICATE = "duplicate"
CATEGORY_ORDER = (STATUS_COPY, STATUS_DEFECTIVE, STATUS_MULTIPLE, STATUS_DUPLICATE)

SCORE_FIELDS = ("nearest_ref_sim", "per_image_fidelity", "subject_count", "max_ssim")


@dataclass(frozen=True)
class FilterConfig:
    copy_threshold: float
    defective_threshold: float
    duplicate_threshold: float = 0.98
    subject_counts_path: Path | None = None
    manual_overrides_path: Path | None = None

    def __post_init__(self):
        if not 0.0 < self.copy_threshold <= 1.0:
            raise errors.UsageError(f"copy threshold {self.copy_threshold} outside (0, 1]")
        if not 0.0 <= self.defective_threshold < 1.0:
            raise errors.UsageError(f"defective threshold {self.defective_threshold} outside [0, 1)")
        if not 0.0 < self.duplicate_threshold <= 1.0:
            raise errors.UsageError(f"duplicate threshold {self.duplicate_threshold} outside (0, 1]")


# ---------------------------------------------------------------------------
# SSIM


def _gaussian_window() -> np.ndarray:
    half = (SSIM_WINDOW - 1) / 2.0
    coords = np.arange(SSIM_WINDOW) - half
    g = np.exp(-(coords**2) / (2.0 * SSIM_SIGMA**2))
    g /= g.sum()
    return np.outer(g, g)


_WINDOW = _gaussian_window()


def _local_stats(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Windowed mean and variance over the fully-covered (valid) region."""
    mu = convolve2d(img, _WINDOW, mode="valid")
    var = convolve2d(img * img, _WINDOW, mode="valid") - mu * mu
    return mu, var


def _ssim_from_stats(x, y, stats_x, stats_y) -> float:
    mu_x, var_x = stats_x
    mu_y, var_y = stats_y
    cov = convolve2d(x * y, _WINDOW, mode="valid") - mu_x * mu_y
    c1 = (SSIM_K1 * SSIM_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_RANGE) ** 2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float((num / den).mean())


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM between two 8-bit grayscale images of equal size."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise errors.DimensionMismatch("ssim expects 2-d grayscale arrays")
    if a.shape != b.shape:
        raise errors.DimensionMismatch(f"image sizes differ: {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise errors.DimensionMismatch(f"images must be at least {SSIM_WINDOW}px on each side")
    x = a.astype(np.float64)
    y = b.astype(np.float64)
    return _ssim_from_stats(x, y, _local_stats(x), _local_stats(y))


def load_grayscale(path: str | Path) -> np.ndarray:
    """Decode an image to 8-bit grayscale (BT.601 luma)."""
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise errors.UnreadableImage(f"cannot read image {path}: {exc}") from exc


class _SsimScanner:
    """Pairwise SSIM over an image set with per-image stats cached."""

    def __init__(self, imgset: ImageSet):
        if imgset.pixel_paths is None:
            raise errors.MissingFile("image set has no pixel paths for duplicate detection")
        self._paths = dict(zip(imgset.image_ids, imgset.pixel_paths))
        self._images: dict[str, np.ndarray] = {}
        self._stats: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def _get(self, image_id: str):
        if image_id not in self._images:
            img = load_grayscale(self._paths[image_id]).astype(np.float64)
            if min(img.shape) < SSIM_WINDOW:
                raise errors.DimensionMismatch(
                    f"{image_id}: images must be at least {SSIM_WINDOW}px on each side"
                )
            self._images[image_id] = img
            self._stats[image_id] = _local_stats(img)
        return self._images[image_id], self._stats[image_id]

    def __call__(self, id_a: str, id_b: str) -> float:
        x, stats_x = self._get(id_a)
        y, stats_y = self._get(id_b)
        if x.shape != y.shape:
            raise errors.DimensionMismatch(f"image sizes differ: {id_a} {x.shape} vs {id_b} {y.shape}")
        return _ssim_from_stats(x, y, stats_x, stats_y)


# ---------------------------------------------------------------------------
# Stage detectors


def detect_copies(gen: ImageSet, refs: ImageSet, threshold: float):
    """Flags images whose nearest-reference identity similarity is strictly
    above the threshold. Returns (flag set, {image_id: (similarity, ref index)})."""
    if gen.clip_embeddings is None or refs.clip_embeddings is None:
        raise errors.MissingEmbeddingSpace("copy detection needs identity-space embeddings on both sets")
    flags = set()
    sims: dict[str, tuple[float, int]] = {}
    for i, image_id in enumerate(gen.image_ids):
        sim, idx = nearest_reference_similarity(gen.clip_embeddings.row(i), refs.clip_embeddings)
        sims[image_id] = (sim, idx)
        if sim > threshold:
            flags.add(image_id)
    return flags, sims


def detect_defective(gen: ImageSet, refs: ImageSet, threshold: float):
    """Flags images whose per-image style fidelity is strictly below the
    threshold. Returns (flag set, {image_id: fidelity})."""
    if gen.style_embeddings is None or refs.style_embeddings is None:
        raise errors.MissingEmbeddingSpace("defect detection needs style-space embeddings on both sets")
    flags = set()
    fids: dict[str, float] = {}
    for i, image_id in enumerate(gen.image_ids):
        fid = per_image_fidelity(gen.style_embeddings.row(i), refs.style_embeddings)
        fids[image_id] = fid
        if fid < threshold:
            flags.add(image_id)
    return flags, fids


def apply_subject_counts(image_ids, counts, overrides=None, known_ids=None):
    """Flags images whose final subject count exceeds 1; manual overrides win
    over automatic counts. Returns (flag set, {image_id: final count})."""
    overrides = dict(overrides or {})
    known = set(known_ids) if known_ids is not None else set(image_ids)
    for image_id in overrides:
        if image_id not in known:
            raise errors.UnknownImageInOverride(f"override references unknown image {image_id!r}")
    flags = set()
    finals: dict[str, int] = {}
    for image_id in image_ids:
        if image_id in overrides:
            count = int(overrides[image_id])
        elif image_id in counts:
            count = int(counts[image_id])
        else:
            raise errors.MissingCount(f"no subject count for image {image_id!r}")
        finals[image_id] = count
        if count > 1:
            flags.add(image_id)
    return flags, finals


def detect_duplicates(gen: ImageSet, threshold: float, similarity=None):
    """Keep-first duplicate scan in lexicographic image-id order.

    An image is flagged when its similarity to any earlier kept image is
    strictly above the threshold; the first occurrence is always kept.
    `similarity` defaults to pixel SSIM and is injectable for other backends.
    Returns (flag set, {image_id: max similarity vs kept, None for the first}).
    """
    if similarity is None:
        similarity = _SsimScanner(gen)
    flags = set()
    max_sims: dict[str, float | None] = {}
    kept: list[str] = []
    for image_id in sorted(gen.image_ids):
        best = None
        for other in kept:
            s = similarity(image_id, other)
            if best is None or s > best:
                best = s
        max_sims[image_id] = best
        if best is not None and best > threshold:
            flags.add(image_id)
        else:
            kept.append(image_id)
    return flags, max_sims


# ---------------------------------------------------------------------------
# Pipeline


@dataclass(frozen=True)
class ValidityReport:
    image_order: tuple[str, ...]
    statuses: dict[str, str]
    scores: dict[str, dict]
    counts: dict[str, int]
    percentages: dict[str, float]
    invalid_pct: float
    config: dict

    def __post_init__(self):
        total = len(self.image_order)
        if sum(self.counts.values()) != total:
            raise errors.ShapeMismatch("status counts do not partition the image set")
        cat_sum = math.fsum(self.percentages[c] for c in CATEGORY_ORDER)
        if abs(cat_sum - self.invalid_pct) > 1e-9:
            raise errors.ShapeMismatch("category percentages do not sum to the invalid percentage")

    def to_json_dict(self) -> dict:
        return {
            "image_order": list(self.image_order),
            "statuses": self.statuses,
            "scores": self.scores,
            "counts": self.counts,
            "percentages": self.percentages,
            "invalid_pct": self.invalid_pct,
            "config": self.config,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ValidityReport":
        return cls(
            image_order=tuple(doc["image_order"]),
            statuses=dict(doc["statuses"]),
            scores={k: dict(v) for k, v in doc["scores"].items()},
            counts=dict(doc["counts"]),
            percentages=dict(doc["percentages"]),
            invalid_pct=float(doc["invalid_pct"]),
            config=dict(doc["config"]),
        )

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "ValidityReport":
        path = Path(path)
        if not path.exists():
            raise errors.MissingFile(f"validity report not found: {path}")
        return cls.from_json_dict(json.loads(path.read_text()))

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        lines = ["image_id,status,nearest_ref_sim,per_image_fidelity,subject_count,max_ssim"]
        for image_id in self.image_order:
            s = self.scores[image_id]
            cells = [image_id, self.statuses[image_id]]
            for fieldname in SCORE_FIELDS:
                v = s.get(fieldname)
                cells.append("" if v is None else repr(v) if isinstance(v, float) else str(v))
            lines.append(",".join(cells))
        path.write_text("\n".join(lines) + "\n")
        return path


def _subset(imgset: ImageSet, keep_ids: list[str]) -> ImageSet:
    index = {image_id: i for i, image_id in enumerate(imgset.image_ids)}
    rows = [index[i] for i in keep_ids]
    from .store import EmbeddingMatrix

    def take(mat):
        if mat is None or not rows:
            return None
        return EmbeddingMatrix(mat.values[rows], normalized=mat.normalized, role=mat.role)

    pixels = None
    if imgset.pixel_paths is not None:
        pixels = tuple(imgset.pixel_paths[index[i]] for i in keep_ids)
    return ImageSet(tuple(keep_ids), take(imgset.clip_embeddings), take(imgset.style_embeddings), pixels)


def run_pipeline(gen: ImageSet, refs: ImageSet, config: FilterConfig, similarity=None) -> ValidityReport:
    """Run all four stages in order and classify every image exactly once.

    The subject-count stage is skipped when no counts file is configured, and
    the duplicate stage is skipped when the set has no pixel paths and no
    similarity function was injected. Counts and percentages always cover the
    full generated set.
    """
    statuses = {image_id: STATUS_VALID for image_id in gen.image_ids}
    scores: dict[str, dict] = {image_id: dict.fromkeys(SCORE_FIELDS) for image_id in gen.image_ids}

    copy_flags, nearest = detect_copies(gen, refs, config.copy_threshold)
    for image_id, (sim, _idx) in nearest.items():
        scores[image_id]["nearest_ref_sim"] = sim
    for image_id in copy_flags:
        statuses[image_id] = STATUS_COPY
    survivors = [i for i in gen.image_ids if i not in copy_flags]

    if survivors:
        defect_flags, fids = detect_defective(_subset(gen, survivors), refs, config.defective_threshold)
        for image_id, fid in fids.items():
            scores[image_id]["per_image_fidelity"] = fid
        for image_id in defect_flags:
            statuses[image_id] = STATUS_DEFECTIVE
        survivors = [i for i in survivors if i not in defect_flags]

    if survivors and config.subject_counts_path is not None:
        counts = load_count_file(config.subject_counts_path)
        overrides = (
            load_count_file(config.manual_overrides_path)
            if config.manual_overrides_path is not None
            else {}
        )
        multi_flags, finals = apply_subject_counts(survivors, counts, overrides, known_ids=gen.image_ids)
        for image_id, count in finals.items():
            scores[image_id]["subject_count"] = count
        for image_id in multi_flags:
            statuses[image_id] = STATUS_MULTIPLE
        survivors = [i for i in survivors if i not in multi_flags]

    if survivors and (similarity is not None or gen.pixel_paths is not None):
        dup_flags, max_sims = detect_duplicates(_subset(gen, survivors), config.duplicate_threshold, similarity)
        for image_id, s in max_sims.items():
            scores[image_id]["max_ssim"] = s
        for image_id in dup_flags:
            statuses[image_id] = STATUS_DUPLICATE

    total = len(gen.image_ids)
    counts_out = {cat: 0 for cat in (STATUS_VALID, *CATEGORY_ORDER)}
    for image_id in gen.image_ids:
        counts_out[statuses[image_id]] += 1
    percentages = {cat: counts_out[cat] / total * 100.0 for cat in CATEGORY_ORDER}
    invalid_pct = math.fsum(percentages.values())

    return ValidityReport(
        image_order=tuple(gen.image_ids),
        statuses=statuses,
        scores=scores,
        counts=counts_out,
        percentages=percentages,
        invalid_pct=invalid_pct,
        config={
            "copy_threshold": config.copy_threshold,
            "defective_threshold": config.defective_threshold,
            "duplicate_threshold": config.duplicate_threshold,
            "ssim": {
                "window": SSIM_WINDOW,
                "sigma": SSIM_SIGMA,
                "k1": SSIM_K1,
                "k2": SSIM_K2,
                "dynamic_range": SSIM_RANGE,
                "grayscale": "bt601",
            },
        },
    )


def score_histograms(gen: ImageSet, refs: ImageSet, bins: int = 20) -> dict:
    """Histograms of nearest-reference similarity and per-image fidelity, for
    picking thresholds by inspection."""
    out: dict = {}
    if gen.clip_embeddings is not None and refs.clip_embeddings is not None:
        sims = [
            nearest_reference_similarity(gen.clip_embeddings.row(i), refs.clip_embeddings)[0]
            for i in range(len(gen.image_ids))
        ]
        hist, edges = np.histogram(sims, bins=bins, range=(-1.0, 1.0))
        out["nearest_ref_sim"] = {"counts": hist.tolist(), "edges": edges.tolist()}
    if gen.style_embeddings is not None and refs.style_embeddings is not None:
        fids = [
            per_image_fidelity(gen.style_embeddings.row(i), refs.style_embeddings)
            for i in range(len(gen.image_ids))
        ]
        hist, edges = np.histogram(fids, bins=bins, range=(0.0, 1.0))
        out["per_image_fidelity"] = {"counts": hist.tolist(), "edges": edges.tolist()}
    return out
