"""Ingestion and persistence of embeddings, vocabularies, judgments and runs.

Embedding matrices travel as a pair of files: a JSON manifest
{version, role, rows, dim, dtype, normalized, blob} next to a raw blob of
little-endian 32-bit floats in row-major order. The format is endian-fixed so
a save/load round trip is byte-identical on any platform. Plain CSV files are
accepted as small fixtures (64 rows max).

Loading validates, it never repairs: non-finite values, byte-count mismatches
and norm violations each raise a typed error naming the offending location.
All loaded artifacts are immutable.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import errors

FORMAT_VERSION = 1
DTYPE_TAG = "f32le"
NORM_TOLERANCE = 1e-4
CSV_FIXTURE_MAX_ROWS = 64
MANIFEST_SUFFIX = ".manifest.json"

TRAINING_METHODS = ("TI", "DB", "DB_L", "DB_MTC_Reg", "DB_noReg", "DB_MTR_L", "DB_MTC_L")
ABLATION_VARIANTS = ("DB_L", "DB_MTC_Reg", "DB_noReg", "DB_MTC_L")
GENERATION_METHODS = ("Token", "Univar", "Multivar")

COMPARISON_HEADER = ("participant_id", "dataset", "method_a", "method_b", "outcome")
RATING_HEADER = ("rater_id", "dataset", "method", "image_id", "score")
RUNS_HEADER = ("dataset_id", "training_method", "generation_method", "copy_index", "image_set_ref")

OUTCOME_A = "a"
OUTCOME_B = "b"
OUTCOME_TIE = "tie"
OUTCOME_NEITHER = "neither"
OUTCOMES = (OUTCOME_A, OUTCOME_B, OUTCOME_TIE, OUTCOME_NEITHER)


# ---------------------------------------------------------------------------
# Embedding matrices


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Dense rows x dim matrix of 32-bit float embeddings.

    `normalized` asserts that every row has unit Euclidean norm (within
    NORM_TOLERANCE); it is verified at construction, not enforced by mutation.
    """

    values: np.ndarray
    normalized: bool = False
    role: str | None = None

    def __post_init__(self):
        arr = np.ascontiguousarray(self.values, dtype=np.float32)
        if arr.ndim != 2:
            raise errors.ShapeMismatch(f"expected a 2-d matrix, got ndim={arr.ndim}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise errors.ShapeMismatch(f"matrix must be at least 1x1, got {arr.shape[0]}x{arr.shape[1]}")
        bad = ~np.isfinite(arr)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise errors.NonFiniteValue(f"non-finite value at row {r}, col {c}")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)
        if self.normalized:
            _check_unit_rows(arr)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def row(self, i: int) -> np.ndarray:
        return self.values[i]

    def normalized_copy(self) -> "EmbeddingMatrix":
        """L2-normalize every row. Rows of norm zero are rejected."""
        v = self.values.astype(np.float64)
        norms = np.linalg.norm(v, axis=1)
        if (norms == 0).any():
            raise errors.ZeroVector(f"row {int(np.argmin(norms))} has zero norm, cannot normalize")
        out = (v / norms[:, None]).astype(np.float32)
        return EmbeddingMatrix(out, normalized=True, role=self.role)


def _check_unit_rows(arr: np.ndarray) -> None:
    norms = np.linalg.norm(arr.astype(np.float64), axis=1)
    off = np.abs(norms - 1.0)
    if (off > NORM_TOLERANCE).any():
        r = int(np.argmax(off))
        raise errors.NormViolation(f"row {r} has norm {norms[r]:.6f}, expected 1 within {NORM_TOLERANCE}")


def _manifest_paths(path: str | Path) -> tuple[Path, Path]:
    path = Path(path)
    name = path.name
    if name.endswith(MANIFEST_SUFFIX):
        stem = name[: -len(MANIFEST_SUFFIX)]
    else:
        stem = name
    manifest = path.with_name(stem + MANIFEST_SUFFIX)
    blob = path.with_name(stem + ".f32")
    return manifest, blob


def save_matrix(matrix: EmbeddingMatrix, path: str | Path) -> Path:
    """Write manifest + blob; returns the manifest path."""
    manifest_path, blob_path = _manifest_paths(path)
    manifest = {
        "version": FORMAT_VERSION,
        "role": matrix.role,
        "rows": matrix.rows,
        "dim": matrix.dim,
        "dtype": DTYPE_TAG,
        "normalized": matrix.normalized,
        "blob": blob_path.name,
    }
    try:
        blob_path.write_bytes(matrix.values.astype("<f4", copy=False).tobytes(order="C"))
        manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    except OSError as exc:
        raise errors.IoFailure(f"cannot write {manifest_path}: {exc}") from exc
    return manifest_path


def load_matrix(path: str | Path) -> EmbeddingMatrix:
    """Load a manifest+blob pair, or a CSV fixture when path ends in .csv."""
    path = Path(path)
    if path.suffix == ".csv":
        return _load_csv_matrix(path)
    if not path.exists():
        raise errors.MissingFile(f"manifest not found: {path}")
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise errors.IoFailure(f"cannot read manifest {path}: {exc}") from exc
    dtype = manifest.get("dtype")
    if dtype != DTYPE_TAG:
        raise errors.ShapeMismatch(f"{path}: unsupported dtype {dtype!r}, expected {DTYPE_TAG!r}")
    rows, dim = int(manifest["rows"]), int(manifest["dim"])
    blob_path = path.parent / manifest["blob"]
    if not blob_path.exists():
        raise errors.MissingFile(f"blob not found: {blob_path}")
    data = blob_path.read_bytes()
    expected = rows * dim * 4
    if len(data) != expected:
        raise errors.ShapeMismatch(
            f"{blob_path}: declared {rows}x{dim} needs {expected} bytes, found {len(data)}"
        )
    arr = np.frombuffer(data, dtype="<f4").reshape(rows, dim)
    return EmbeddingMatrix(arr, normalized=bool(manifest.get("normalized", False)), role=manifest.get("role"))


def _load_csv_matrix(path: Path) -> EmbeddingMatrix:
    if not path.exists():
        raise errors.MissingFile(f"csv fixture not found: {path}")
    rows: list[list[float]] = []
    with path.open(newline="") as fh:
        for lineno, record in enumerate(csv.reader(fh), start=1):
            if not record:
                continue
            if len(rows) >= CSV_FIXTURE_MAX_ROWS:
                raise errors.ShapeMismatch(f"{path}: csv fixtures are limited to {CSV_FIXTURE_MAX_ROWS} rows")
            try:
                rows.append([float(x) for x in record])
            except ValueError as exc:
                raise errors.ShapeMismatch(f"{path}:{lineno}: non-numeric cell") from exc
            if len(rows[-1]) != len(rows[0]):
                raise errors.ShapeMismatch(
                    f"{path}:{lineno}: {len(rows[-1])} values, expected {len(rows[0])}"
                )
    if not rows:
        raise errors.ShapeMismatch(f"{path}: empty csv fixture")
    arr = np.array(rows, dtype=np.float32)
    if not np.isfinite(arr).all():
        r, c = np.argwhere(~np.isfinite(arr))[0]
        raise errors.NonFiniteValue(f"{path}: non-finite value at row {r}, col {c}")
    norms = np.linalg.norm(arr.astype(np.float64), axis=1)
    normalized = bool(np.all(np.abs(norms - 1.0) <= NORM_TOLERANCE))
    return EmbeddingMatrix(arr, normalized=normalized)


# ---------------------------------------------------------------------------
# Token vocabulary


@dataclass(frozen=True)
class TokenVocabulary:
    """Frequency-ranked tokens; rank 0 is the rarest. Row i of `embeddings`
    belongs to entries[i], whatever order the entries are stored in."""

    entries: tuple[tuple[str, int], ...]
    embeddings: EmbeddingMatrix | None = None

    def __post_init__(self):
        entries = tuple((str(t), int(r)) for t, r in self.entries)
        object.__setattr__(self, "entries", entries)
        texts = [t for t, _ in entries]
        if len(set(texts)) != len(texts):
            raise errors.MalformedRow("vocabulary token texts must be unique")
        ranks = sorted(r for _, r in entries)
        if ranks != list(range(len(entries))):
            raise errors.MalformedRow("vocabulary ranks must be exactly 0..n-1")
        if self.embeddings is not None and self.embeddings.rows != len(entries):
            raise errors.ShapeMismatch(
                f"vocabulary has {len(entries)} entries but {self.embeddings.rows} embedding rows"
            )

    @classmethod
    def from_ranked_tokens(cls, tokens, embeddings: EmbeddingMatrix | None = None) -> "TokenVocabulary":
        return cls(tuple((t, i) for i, t in enumerate(tokens)), embeddings)

    def __len__(self) -> int:
        return len(self.entries)

    def rank_order(self) -> list[tuple[str, int]]:
        """(token_text, row_index) pairs sorted by ascending rank."""
        order = sorted(range(len(self.entries)), key=lambda i: self.entries[i][1])
        return [(self.entries[i][0], i) for i in order]

    def token_at_rank(self, rank: int) -> str:
        for text, r in self.entries:
            if r == rank:
                return text
        raise errors.VocabularyTooSmall(f"no token at rank {rank}")

    def rank_of(self, token: str) -> int:
        for text, r in self.entries:
            if text == token:
                return r
        raise errors.MalformedRow(f"unknown token {token!r}")


def save_vocabulary(vocab: TokenVocabulary, path: str | Path) -> Path:
    """Vocabulary JSON: tokens in rank order plus an optional embeddings manifest."""
    path = Path(path)
    ranked = [t for t, _ in vocab.rank_order()]
    doc: dict = {"tokens": ranked}
    if vocab.embeddings is not None:
        # Reorder embedding rows to rank order so the two files line up.
        order = [i for _, i in vocab.rank_order()]
        mat = EmbeddingMatrix(
            vocab.embeddings.values[order],
            normalized=vocab.embeddings.normalized,
            role=vocab.embeddings.role or "token",
        )
        manifest_path = save_matrix(mat, path.parent / (path.stem + ".embeddings"))
        doc["embeddings"] = manifest_path.name
    try:
        path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    except OSError as exc:
        raise errors.IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def load_vocabulary(path: str | Path) -> TokenVocabulary:
    path = Path(path)
    if not path.exists():
        raise errors.MissingFile(f"vocabulary not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise errors.IoFailure(f"cannot read vocabulary {path}: {exc}") from exc
    tokens = doc.get("tokens")
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise errors.MalformedRow(f"{path}: 'tokens' must be a list of strings")
    embeddings = None
    if doc.get("embeddings"):
        embeddings = load_matrix(path.parent / doc["embeddings"])
    return TokenVocabulary.from_ranked_tokens(tokens, embeddings)


# ---------------------------------------------------------------------------
# Image sets


@dataclass(frozen=True)
class ImageSet:
    """Images with embeddings in up to two spaces plus optional pixel paths."""

    image_ids: tuple[str, ...]
    clip_embeddings: EmbeddingMatrix | None = None
    style_embeddings: EmbeddingMatrix | None = None
    pixel_paths: tuple[Path, ...] | None = None

    def __post_init__(self):
        ids = tuple(str(i) for i in self.image_ids)
        object.__setattr__(self, "image_ids", ids)
        if len(set(ids)) != len(ids):
            raise errors.MalformedRow("image ids must be unique within a set")
        n = len(ids)
        for name, mat in (("clip", self.clip_embeddings), ("style", self.style_embeddings)):
            if mat is not None and mat.rows != n:
                raise errors.ShapeMismatch(f"{name} embeddings have {mat.rows} rows for {n} image ids")
        if self.pixel_paths is not None:
            paths = tuple(Path(p) for p in self.pixel_paths)
            if len(paths) != n:
                raise errors.ShapeMismatch(f"{len(paths)} pixel paths for {n} image ids")
            object.__setattr__(self, "pixel_paths", paths)

    def __len__(self) -> int:
        return len(self.image_ids)

    def index_of(self, image_id: str) -> int:
        return self.image_ids.index(image_id)


def save_image_set(imgset: ImageSet, path: str | Path) -> Path:
    path = Path(path)
    doc: dict = {"image_ids": list(imgset.image_ids), "clip": None, "style": None, "pixels": None}
    if imgset.clip_embeddings is not None:
        doc["clip"] = save_matrix(imgset.clip_embeddings, path.parent / (path.stem + ".clip")).name
    if imgset.style_embeddings is not None:
        doc["style"] = save_matrix(imgset.style_embeddings, path.parent / (path.stem + ".style")).name
    if imgset.pixel_paths is not None:
        doc["pixels"] = [str(p) for p in imgset.pixel_paths]
    try:
        path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    except OSError as exc:
        raise errors.IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def load_image_set(path: str | Path) -> ImageSet:
    path = Path(path)
    if not path.exists():
        raise errors.MissingFile(f"image set not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise errors.IoFailure(f"cannot read image set {path}: {exc}") from exc
    clip = load_matrix(path.parent / doc["clip"]) if doc.get("clip") else None
    style = load_matrix(path.parent / doc["style"]) if doc.get("style") else None
    pixels = None
    if doc.get("pixels") is not None:
        pixels = tuple(path.parent / p if not Path(p).is_absolute() else Path(p) for p in doc["pixels"])
    return ImageSet(tuple(doc["image_ids"]), clip, style, pixels)


# ---------------------------------------------------------------------------
# Judgment records


@dataclass(frozen=True)
class ComparisonRecord:
    participant_id: str
    dataset: str
    method_a: str
    method_b: str
    outcome: str  # one of OUTCOMES

    def __post_init__(self):
        if self.method_a == self.method_b:
            raise errors.MalformedRow("comparison methods must differ")
        if self.outcome not in OUTCOMES:
            raise errors.UnknownOutcome(f"unknown outcome {self.outcome!r}")


@dataclass(frozen=True)
class RatingRecord:
    rater_id: str
    dataset: str
    method: str
    image_id: str
    score: int

    def __post_init__(self):
        if self.score not in (1, 2, 3, 4, 5):
            raise errors.ScoreOutOfRange(f"score {self.score} outside 1..5")


def load_judgments(path: str | Path, kind: str):
    """Parse comparisons.csv or ratings.csv; kind selects the schema."""
    if kind not in ("comparisons", "ratings"):
        raise errors.UsageError(f"unknown judgment kind {kind!r}")
    path = Path(path)
    if not path.exists():
        raise errors.MissingFile(f"judgment file not found: {path}")
    expected_header = COMPARISON_HEADER if kind == "comparisons" else RATING_HEADER
    records = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise errors.MalformedRow(f"{path}:1: missing header") from None
        if tuple(h.strip() for h in header) != expected_header:
            raise errors.MalformedRow(f"{path}:1: header must be {','.join(expected_header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected_header):
                raise errors.MalformedRow(f"{path}:{lineno}: {len(row)} fields, expected {len(expected_header)}")
            try:
                if kind == "comparisons":
                    records.append(ComparisonRecord(row[0], row[1], row[2], row[3], row[4].strip().lower()))
                else:
                    try:
                        score = int(row[4])
                    except ValueError:
                        raise errors.MalformedRow(f"{path}:{lineno}: score {row[4]!r} is not an integer") from None
                    records.append(RatingRecord(row[0], row[1], row[2], row[3], score))
            except (errors.UnknownOutcome, errors.ScoreOutOfRange, errors.MalformedRow) as exc:
                raise type(exc)(f"{path}:{lineno}: {exc}") from None
    return records


# ---------------------------------------------------------------------------
# Run manifests


@dataclass(frozen=True)
class RunManifest:
    dataset_id: str
    training_method: str
    generation_method: str
    copy_index: int
    image_set_ref: str

    def __post_init__(self):
        if self.training_method not in TRAINING_METHODS:
            raise errors.MalformedRow(f"unknown training method {self.training_method!r}")
        if self.generation_method not in GENERATION_METHODS:
            raise errors.MalformedRow(f"unknown generation method {self.generation_method!r}")
        if not 1 <= self.copy_index <= 5:
            raise errors.MalformedRow(f"copy_index {self.copy_index} outside 1..5")

    def artifact_stem(self) -> str:
        return f"{self.dataset_id}__{self.training_method}__{self.generation_method}__{self.copy_index}"


def load_runs(path: str | Path) -> list[RunManifest]:
    path = Path(path)
    if not path.exists():
        raise errors.MissingFile(f"runs file not found: {path}")
    runs = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != RUNS_HEADER:
            raise errors.MalformedRow(f"{path}:1: header must be {','.join(RUNS_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(RUNS_HEADER):
                raise errors.MalformedRow(f"{path}:{lineno}: {len(row)} fields, expected {len(RUNS_HEADER)}")
            try:
                copy_index = int(row[3])
            except ValueError:
                raise errors.MalformedRow(f"{path}:{lineno}: copy_index {row[3]!r} is not an integer") from None
            try:
                runs.append(RunManifest(row[0], row[1], row[2], copy_index, row[4]))
            except errors.MalformedRow as exc:
                raise errors.MalformedRow(f"{path}:{lineno}: {exc}") from None
    return runs


def load_count_file(path: str | Path) -> dict[str, int]:
    """CSV with header image_id,count; used for subject counts and overrides."""
    path = Path(path)
    if not path.exists():
        raise errors.MissingFile(f"count file not found: {path}")
    counts: dict[str, int] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != ("image_id", "count"):
            raise errors.MalformedRow(f"{path}:1: header must be image_id,count")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise errors.MalformedRow(f"{path}:{lineno}: {len(row)} fields, expected 2")
            try:
                counts[row[0]] = int(row[1])
            except ValueError:
                raise errors.MalformedRow(f"{path}:{lineno}: count {row[1]!r} is not an integer") from None
    return counts
