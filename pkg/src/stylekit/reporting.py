"""Report tables: invalid-image breakdowns, metric aggregates, rankings.

Aggregation over model copies uses the sample standard deviation (n-1);
rounding is half-even and happens only at render time. Markdown is the human
format; CSV and JSON carry the same cells for machines. Rendering is a pure
function of the inputs, so a re-render is byte-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from . import errors
from .judgment_aggregator import RankTables
from .store import GENERATION_METHODS, TRAINING_METHODS, RunManifest
from .validity_filter import CATEGORY_ORDER, STATUS_VALID, ValidityReport

BOLD_ABOVE_PCT = 5.0
EXCLUDE_ABOVE_PCT = 95.0

CATEGORY_LABELS = {
    "copy": "Copies",
    "defective": "Defective",
    "multiple_subjects": "Multiple",
    "duplicate": "Duplicate",
}


def fmt(value: float, decimals: int) -> str:
    """Half-even rounding at render time only."""
    return f"{value:.{decimals}f}"


# ---------------------------------------------------------------------------
# Cell/table model


@dataclass(frozen=True)
class Cell:
    text: str
    bold: bool = False


@dataclass(frozen=True)
class Table:
    title: str
    columns: tuple[str, ...]
    rows: tuple[tuple[Cell, ...], ...]

    def render_markdown(self) -> str:
        lines = [f"## {self.title}", ""]
        lines.append("| " + " | ".join(self.columns) + " |")
        lines.append("|" + "|".join([" --- "] * len(self.columns)) + "|")
        for row in self.rows:
            rendered = [f"**{c.text}**" if c.bold else c.text for c in row]
            lines.append("| " + " | ".join(rendered) + " |")
        return "\n".join(lines) + "\n"

    def render_csv(self) -> str:
        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join(c.text for c in row))
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        return {
            "title": self.title,
            "columns": list(self.columns),
            "rows": [[{"text": c.text, "bold": c.bold} for c in row] for row in self.rows],
        }


def render_tables(tables, fmt_name: str) -> str:
    if fmt_name == "markdown":
        return "\n".join(t.render_markdown() for t in tables)
    if fmt_name == "csv":
        return "\n".join(f"# {t.title}\n{t.render_csv()}" for t in tables)
    if fmt_name == "json":
        return json.dumps([t.to_json_dict() for t in tables], sort_keys=True, indent=2) + "\n"
    raise errors.UsageError(f"unknown format {fmt_name!r}")


# ---------------------------------------------------------------------------
# Aggregates


@dataclass(frozen=True)
class AggregateCell:
    mean: float
    std: float
    n_models: int
    excluded: bool = False

    def __post_init__(self):
        if self.std < 0:
            raise errors.EmptyCell("negative std")

    def render(self, decimals: int) -> Cell:
        if self.excluded:
            return Cell("-")
        return Cell(f"{fmt(self.mean, decimals)} ± {fmt(self.std, decimals)}")


def aggregate_cell(values, excluded: bool = False) -> AggregateCell:
    """Mean and sample std (n-1) over per-model values; one model gives std 0."""
    values = [float(v) for v in values]
    n = len(values)
    if n == 0:
        raise errors.EmptyCell("no model values in cell")
    if n > 5:
        raise errors.UsageError(f"{n} model values in one cell, at most 5 expected")
    mean = math.fsum(values) / n
    if n == 1:
        std = 0.0
    else:
        std = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (n - 1))
    return AggregateCell(mean=mean, std=std, n_models=n, excluded=excluded)


@dataclass(frozen=True)
class CategoryBreakdown:
    """Invalid-image counts per category over a pool of generated images."""

    counts: dict[str, int]
    total_images: int

    @classmethod
    def from_report(cls, report: ValidityReport) -> "CategoryBreakdown":
        return cls(
            counts={cat: report.counts.get(cat, 0) for cat in CATEGORY_ORDER},
            total_images=len(report.image_order),
        )

    @classmethod
    def merged(cls, items) -> "CategoryBreakdown":
        items = list(items)
        if not items:
            raise errors.MissingGroup("nothing to merge")
        counts = {cat: sum(b.counts[cat] for b in items) for cat in CATEGORY_ORDER}
        return cls(counts=counts, total_images=sum(b.total_images for b in items))

    def pct(self, category: str) -> float:
        return self.counts[category] / self.total_images * 100.0

    def invalid_pct(self) -> float:
        return math.fsum(self.pct(c) for c in CATEGORY_ORDER)


def _as_breakdown(value) -> CategoryBreakdown:
    if isinstance(value, ValidityReport):
        return CategoryBreakdown.from_report(value)
    return value


def _pct_cell(value: float, decimals: int, bold_above: float) -> Cell:
    text = fmt(value, decimals)
    return Cell(text + "%", bold=float(text) > bold_above)


def canonical_group_order(keys):
    """Sort (dataset, training[, generation]) keys: datasets in first-seen
    order, then canonical training and generation order."""
    keys = list(keys)
    datasets: dict[str, None] = {}
    for key in keys:
        datasets.setdefault(key[0])
    ds_rank = {d: i for i, d in enumerate(datasets)}
    tr_rank = {t: i for i, t in enumerate(TRAINING_METHODS)}
    gen_rank = {g: i for i, g in enumerate(GENERATION_METHODS)}

    def sort_key(key):
        parts = [ds_rank[key[0]], tr_rank.get(key[1], len(tr_rank))]
        if len(key) > 2:
            parts.append(gen_rank.get(key[2], len(gen_rank)))
        return tuple(parts)

    return sorted(keys, key=sort_key)


def invalid_breakdown_table(
    breakdowns,
    groups=None,
    bold_above: float = BOLD_ABOVE_PCT,
    decimals: int = 2,
) -> Table:
    """Percent of invalid images per category for each (dataset, training)
    group. Cells strictly above the bold threshold (after rendering) are bold;
    the Total column is the sum of the rendered category percentages."""
    if groups is None:
        groups = canonical_group_order(breakdowns.keys())
    rows = []
    for key in groups:
        if key not in breakdowns:
            raise errors.MissingGroup(f"no validity report for group {key}")
        b = _as_breakdown(breakdowns[key])
        cells = [Cell(key[0]), Cell(key[1])]
        rendered_values = []
        for cat in CATEGORY_ORDER:
            cell = _pct_cell(b.pct(cat), decimals, bold_above)
            rendered_values.append(float(cell.text[:-1]))
            cells.append(cell)
        total = math.fsum(rendered_values)
        cells.append(_pct_cell(total, decimals, bold_above))
        rows.append(tuple(cells))
    columns = ("Dataset", "Training", *(CATEGORY_LABELS[c] for c in CATEGORY_ORDER), "Total")
    return Table(title="Invalid images by category", columns=columns, rows=tuple(rows))


@dataclass(frozen=True)
class MetricCellValues:
    """Per-model-copy metric values for one (dataset, training, generation)."""

    fidelity: tuple[float, ...]
    diversity: tuple[float, ...]
    invalid_pct: tuple[float, ...]


def metrics_table(
    cells,
    decimals: int = 3,
    invalid_decimals: int = 2,
    exclude_above: float = EXCLUDE_ABOVE_PCT,
) -> Table:
    """Mean ± sample std per cell; cells whose mean invalid percentage is
    strictly above the exclusion threshold render '-'; the best fidelity and
    diversity per dataset are bold among non-excluded cells."""
    keys = canonical_group_order(cells.keys())
    datasets: dict[str, None] = {}
    combos: dict[tuple[str, str], None] = {}
    for ds, tr, gen in keys:
        datasets.setdefault(ds)
        combos.setdefault((tr, gen))
    for ds in datasets:
        for tr, gen in combos:
            if (ds, tr, gen) not in cells:
                raise errors.MissingGroup(f"no metric values for group {(ds, tr, gen)}")

    agg: dict[tuple[str, str, str], dict] = {}
    for key in keys:
        v = cells[key]
        invalid = aggregate_cell(v.invalid_pct)
        excluded = invalid.mean > exclude_above
        agg[key] = {
            "invalid": invalid,
            "fidelity": aggregate_cell(v.fidelity, excluded),
            "diversity": aggregate_cell(v.diversity, excluded),
        }

    best: dict[tuple[str, str], float] = {}
    for (ds, tr, gen), a in agg.items():
        for metric in ("fidelity", "diversity"):
            if not a[metric].excluded:
                cur = best.get((ds, metric))
                if cur is None or a[metric].mean > cur:
                    best[(ds, metric)] = a[metric].mean

    tr_rank = {t: i for i, t in enumerate(TRAINING_METHODS)}
    gen_rank = {g: i for i, g in enumerate(GENERATION_METHODS)}
    combo_order = sorted(
        combos, key=lambda c: (tr_rank.get(c[0], len(tr_rank)), gen_rank.get(c[1], len(gen_rank)))
    )

    columns = ["Training", "Generation"]
    for ds in datasets:
        columns += [f"{ds} Invalid", f"{ds} Fidelity", f"{ds} Diversity"]
    rows = []
    for tr, gen in combo_order:
        cells_out = [Cell(tr), Cell(gen)]
        for ds in datasets:
            a = agg[(ds, tr, gen)]
            cells_out.append(Cell(fmt(a["invalid"].mean, invalid_decimals) + "%"))
            for metric in ("fidelity", "diversity"):
                cell = a[metric].render(decimals)
                if not a[metric].excluded and a[metric].mean == best.get((ds, metric)):
                    cell = Cell(cell.text, bold=True)
                cells_out.append(cell)
        rows.append(tuple(cells_out))
    return Table(title="Fidelity and Diversity by training and generation", columns=tuple(columns), rows=tuple(rows))


def rank_table(tables: RankTables) -> Table:
    """Method rows, one rank+score cell per dataset plus a Global column."""
    decimals = 0 if tables.kind == "comparisons" else 2
    datasets = list(tables.per_dataset)
    by_method: dict[str, dict[str, tuple[int, float]]] = {}
    for ds, entries in tables.per_dataset.items():
        for e in entries:
            by_method.setdefault(e.method, {})[ds] = (e.rank, e.score)
    global_order = sorted(tables.global_ranking, key=lambda e: e.rank)
    rows = []
    for e in global_order:
        cells = [Cell(e.method)]
        for ds in datasets:
            if ds not in by_method.get(e.method, {}):
                raise errors.MissingGroup(f"method {e.method!r} missing from dataset {ds!r}")
            rank, score = by_method[e.method][ds]
            cells.append(Cell(f"{rank} ({fmt(score, decimals)})"))
        cells.append(Cell(f"{e.rank} ({fmt(e.score, decimals)})"))
        rows.append(tuple(cells))
    title = "Rankings from pairwise comparisons" if tables.kind == "comparisons" else "Rankings from expert ratings"
    return Table(title=title, columns=("Method", *datasets, "Global"), rows=tuple(rows))


# ---------------------------------------------------------------------------
# Report assembly from run artifacts


def load_run_artifacts(runs: list[RunManifest], artifacts_dir: str | Path):
    """Collect per-run filter/metrics artifacts into table inputs.

    Expects `{stem}.filter.json` (a saved ValidityReport) and
    `{stem}.metrics.json` for every run, with stem
    `{dataset}__{training}__{generation}__{copy}`.
    """
    artifacts_dir = Path(artifacts_dir)
    breakdown_parts: dict[tuple[str, str], list[CategoryBreakdown]] = {}
    cell_parts: dict[tuple[str, str, str], dict[int, tuple[float, float, float]]] = {}
    for run in runs:
        stem = run.artifact_stem()
        report = ValidityReport.load(artifacts_dir / f"{stem}.filter.json")
        metrics_path = artifacts_dir / f"{stem}.metrics.json"
        if not metrics_path.exists():
            raise errors.MissingFile(f"metrics artifact not found: {metrics_path}")
        metrics = json.loads(metrics_path.read_text())
        breakdown_parts.setdefault((run.dataset_id, run.training_method), []).append(
            CategoryBreakdown.from_report(report)
        )
        key = (run.dataset_id, run.training_method, run.generation_method)
        per_copy = cell_parts.setdefault(key, {})
        if run.copy_index in per_copy:
            raise errors.MalformedRow(f"duplicate run for {key} copy {run.copy_index}")
        per_copy[run.copy_index] = (
            float(metrics["fidelity"]),
            float(metrics["diversity"]),
            report.invalid_pct,
        )
    breakdowns = {k: CategoryBreakdown.merged(v) for k, v in breakdown_parts.items()}
    cells = {}
    for key, per_copy in cell_parts.items():
        ordered = [per_copy[c] for c in sorted(per_copy)]
        cells[key] = MetricCellValues(
            fidelity=tuple(v[0] for v in ordered),
            diversity=tuple(v[1] for v in ordered),
            invalid_pct=tuple(v[2] for v in ordered),
        )
    return breakdowns, cells


def build_report(runs, artifacts_dir, variants=None) -> list[Table]:
    """Breakdown + metrics tables for the given runs, optionally restricted
    to a subset of training variants."""
    if variants is not None:
        runs = [r for r in runs if r.training_method in variants]
        if not runs:
            raise errors.MissingGroup("no runs match the requested training variants")
    breakdowns, cells = load_run_artifacts(runs, artifacts_dir)
    return [invalid_breakdown_table(breakdowns), metrics_table(cells)]
