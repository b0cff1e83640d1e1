import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stylekit import errors
from stylekit.judgment_aggregator import comparison_rank_tables, rating_rank_tables
from stylekit.reporting import (
    AggregateCell,
    CategoryBreakdown,
    MetricCellValues,
    Table,
    aggregate_cell,
    canonical_group_order,
    invalid_breakdown_table,
    metrics_table,
    rank_table,
    render_tables,
)
from stylekit.store import ComparisonRecord, RatingRecord


def breakdown(copies, defective, multiple, duplicate, total):
    return CategoryBreakdown(
        counts={
            "copy": copies,
            "defective": defective,
            "multiple_subjects": multiple,
            "duplicate": duplicate,
        },
        total_images=total,
    )


def cell_texts(table: Table):
    return [[c.text for c in row] for row in table.rows]


def bold_flags(table: Table):
    return [[c.bold for c in row] for row in table.rows]


# ---------------------------------------------------------------------------
# invalid breakdown table


def test_virus_db_row_renders_and_bolds_like_the_fixture():
    b = breakdown(8897, 287, 0, 778, 10000)
    table = invalid_breakdown_table({("Virus", "DB"): b})
    row = table.rows[0]
    assert [c.text for c in row] == ["Virus", "DB", "88.97%", "2.87%", "0.00%", "7.78%", "99.62%"]
    assert [c.bold for c in row] == [False, False, True, False, False, True, True]


def test_all_valid_row_has_no_bold():
    table = invalid_breakdown_table({("ds", "TI"): breakdown(0, 0, 0, 0, 400)})
    row = table.rows[0]
    assert [c.text for c in row][2:] == ["0.00%", "0.00%", "0.00%", "0.00%", "0.00%"]
    assert not any(c.bold for c in row)


def test_exactly_five_percent_is_not_bold():
    table = invalid_breakdown_table({("ds", "TI"): breakdown(20, 0, 0, 0, 400)})
    cell = table.rows[0][2]
    assert cell.text == "5.00%"
    assert cell.bold is False
    above = invalid_breakdown_table({("ds", "TI"): breakdown(21, 0, 0, 0, 400)})
    assert above.rows[0][2].bold is True


def test_total_is_sum_of_rendered_categories():
    rng = np.random.default_rng(8)
    for _ in range(200):
        total = int(rng.integers(1, 5000))
        cuts = np.sort(rng.integers(0, total + 1, size=4))
        counts = [cuts[0], cuts[1] - cuts[0], cuts[2] - cuts[1], cuts[3] - cuts[2]]
        b = breakdown(*counts, total)
        table = invalid_breakdown_table({("ds", "DB"): b})
        row = [c.text[:-1] for c in table.rows[0][2:]]
        rendered_sum = round(sum(float(x) for x in row[:4]), 2)
        assert abs(rendered_sum - float(row[4])) <= 0.01 + 1e-12


def test_missing_group():
    with pytest.raises(errors.MissingGroup):
        invalid_breakdown_table({("ds", "DB"): breakdown(0, 0, 0, 0, 10)}, groups=[("ds", "TI")])


def test_canonical_group_order():
    keys = [("b", "DB_MTC_L"), ("a", "DB"), ("a", "TI"), ("b", "DB_L")]
    assert canonical_group_order(keys) == [("b", "DB_L"), ("b", "DB_MTC_L"), ("a", "TI"), ("a", "DB")]


# ---------------------------------------------------------------------------
# metrics table


def one_cell(fid, div, inv):
    return {("virus", "DB_L", "Token"): MetricCellValues(tuple(fid), tuple(div), tuple(inv))}


def test_mean_and_sample_std_rendering():
    cells = one_cell([0.70, 0.71, 0.72, 0.70, 0.71], [0.3] * 5, [1.0] * 5)
    table = metrics_table(cells)
    assert table.rows[0][3].text == "0.708 ± 0.008"


def test_single_model_std_is_zero():
    cell = aggregate_cell([0.7])
    assert cell.std == 0.0 and cell.n_models == 1


def test_excluded_cell_renders_dash():
    table = metrics_table(one_cell([0.5], [0.2], [99.62]))
    texts = [c.text for c in table.rows[0]]
    assert texts[2] == "99.62%"
    assert texts[3] == "-" and texts[4] == "-"


def test_exclusion_boundary_is_strict():
    kept = metrics_table(one_cell([0.5], [0.2], [95.0]))
    assert kept.rows[0][3].text != "-"
    dropped = metrics_table(one_cell([0.5], [0.2], [96.0]))
    assert dropped.rows[0][3].text == "-"


def test_best_cells_bold_per_dataset():
    cells = {
        ("v", "DB_L", "Token"): MetricCellValues((0.60,), (0.34,), (5.0,)),
        ("v", "DB_L", "Univar"): MetricCellValues((0.62,), (0.30,), (5.0,)),
        ("v", "DB_MTC_L", "Token"): MetricCellValues((0.67,), (0.28,), (2.0,)),
        ("v", "DB_MTC_L", "Univar"): MetricCellValues((0.69,), (0.22,), (99.0,)),
    }
    table = metrics_table(cells)
    flags = {(r[0].text, r[1].text): (r[3].bold, r[4].bold) for r in table.rows}
    # best fidelity among non-excluded is DB_MTC_L/Token; best diversity is DB_L/Token
    assert flags[("DB_MTC_L", "Token")] == (True, False)
    assert flags[("DB_L", "Token")] == (False, True)
    assert flags[("DB_MTC_L", "Univar")] == (False, False)  # excluded cell cannot be best


def test_metrics_table_requires_full_grid():
    cells = {
        ("v", "DB_L", "Token"): MetricCellValues((0.6,), (0.3,), (5.0,)),
        ("w", "DB_L", "Univar"): MetricCellValues((0.6,), (0.3,), (5.0,)),
    }
    with pytest.raises(errors.MissingGroup):
        metrics_table(cells)


def test_empty_cell_rejected():
    with pytest.raises(errors.EmptyCell):
        aggregate_cell([])
    with pytest.raises(errors.UsageError):
        aggregate_cell([0.1] * 6)


def test_render_is_byte_identical():
    cells = {
        ("v", "DB_L", "Token"): MetricCellValues((0.61, 0.62), (0.33, 0.35), (5.0, 6.0)),
        ("v", "DB_MTC_L", "Token"): MetricCellValues((0.67, 0.68), (0.28, 0.29), (2.0, 1.0)),
    }
    tables = [
        invalid_breakdown_table({("v", "DB"): breakdown(8897, 287, 0, 778, 10000)}),
        metrics_table(cells),
    ]
    for fmt_name in ("markdown", "csv", "json"):
        assert render_tables(tables, fmt_name) == render_tables(tables, fmt_name)


@settings(max_examples=40, deadline=None)
@given(
    fid=st.lists(st.floats(0, 1), min_size=1, max_size=5),
    div=st.lists(st.floats(0, 2), min_size=1, max_size=5),
    inv=st.lists(st.floats(0, 100), min_size=1, max_size=5),
)
def test_exclusion_and_bolding_are_pure(fid, div, inv):
    cells = {("d", "DB_L", "Token"): MetricCellValues(tuple(fid), tuple(div), tuple(inv))}
    a = metrics_table(cells)
    b = metrics_table(cells)
    assert a == b
    mean_inv = sum(inv) / len(inv)
    assert (a.rows[0][3].text == "-") == (mean_inv > 95.0)


# ---------------------------------------------------------------------------
# rank table rendering


def test_rank_table_for_comparisons():
    records = []
    for ds in ("virus", "scary"):
        records += [ComparisonRecord("p", ds, "A", "B", "a")] * 2
        records += [ComparisonRecord("p", ds, "A", "B", "b")] * 1
        records += [ComparisonRecord("p", ds, "B", "C", "a")] * 2
        records += [ComparisonRecord("p", ds, "C", "B", "a")] * 1
        records += [ComparisonRecord("p", ds, "C", "A", "a")] * 1
        records += [ComparisonRecord("p", ds, "A", "C", "a")] * 2
    table = rank_table(comparison_rank_tables(records))
    assert table.columns == ("Method", "virus", "scary", "Global")
    assert table.rows[0][0].text == "A"  # global winner listed first
    assert "(" in table.rows[0][1].text and "." not in table.rows[0][1].text  # integer display rating


def test_rank_table_for_ratings():
    records = [
        RatingRecord("r", "virus", "A", "i1", 5),
        RatingRecord("r", "virus", "B", "i2", 3),
        RatingRecord("r", "scary", "A", "i3", 4),
        RatingRecord("r", "scary", "B", "i4", 2),
    ]
    table = rank_table(rating_rank_tables(records))
    assert table.rows[0][0].text == "A"
    assert table.rows[0][1].text == "1 (5.00)"
    assert table.rows[1][3].text == "2 (2.50)"


def test_markdown_render_shape():
    table = invalid_breakdown_table({("v", "DB"): breakdown(8897, 287, 0, 778, 10000)})
    md = table.render_markdown()
    assert "| Dataset | Training | Copies | Defective | Multiple | Duplicate | Total |" in md
    assert "**88.97%**" in md and "**99.62%**" in md and "2.87%" in md
    doc = json.loads(render_tables([table], "json"))
    assert doc[0]["rows"][0][2] == {"text": "88.97%", "bold": True}
