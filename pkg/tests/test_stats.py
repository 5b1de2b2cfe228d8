import json
import random

import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chi2_contingency

from heritage_dq.errors import SamePair, UnknownDimension, ZeroMargin
from heritage_dq.stats import (
    CRITICAL_1PCT,
    ContingencyTable,
    chi_square,
    chi_square_closed_form,
    contingency,
    expected,
    matrix_csv,
    matrix_json,
    pairwise_independence,
    solve_overlap,
    top_pairs,
)
from heritage_dq.taxonomy import DIMENSION_IDS, AssignmentMatrix, table1_fixture

GOLDEN = [
    ((2, 0, 1, 48), 33.31),
    ((4, 4, 0, 43), 23.33),
    ((1, 2, 0, 48), 16.32),
]


def scipy_chi2(t: ContingencyTable) -> float:
    stat, *_ = chi2_contingency([[t.both, t.a_only], [t.b_only, t.neither]], correction=False)
    return float(stat)


@pytest.mark.parametrize("cells,value", GOLDEN)
def test_golden_values(cells, value):
    t = ContingencyTable(*cells)
    assert t.n == 51
    assert chi_square(t) == pytest.approx(value, abs=0.01)
    assert chi_square(t) == pytest.approx(scipy_chi2(t), rel=1e-9)
    assert chi_square(t) == pytest.approx(chi_square_closed_form(t), rel=1e-9)


def test_expected_cells():
    e = expected(ContingencyTable(2, 0, 1, 48))
    assert e[0] == pytest.approx(2 * 3 / 51)
    assert e[0] == pytest.approx(0.1176, abs=1e-4)
    assert sum(e) == pytest.approx(51)


def test_proportional_table():
    t = ContingencyTable(2, 2, 4, 4)
    assert expected(t) == pytest.approx(t.observed())
    assert chi_square(t) < 1e-9


def test_zero_margin():
    with pytest.raises(ZeroMargin):
        expected(ContingencyTable(0, 0, 3, 48))
    with pytest.raises(ZeroMargin):
        chi_square(ContingencyTable(3, 0, 0, 0))


def _two_columns(a_rows, b_rows, n):
    rows = {f"X{i}": [d for d, s in (("causal_traceability", a_rows), ("temporal_traceability", b_rows)) if i in s]
            for i in range(n)}
    return AssignmentMatrix.from_rows(rows, dimensions=("temporal_traceability", "causal_traceability"))


def test_contingency_examples():
    m = _two_columns({0, 1}, {0, 1, 2}, 51)
    assert contingency(m, "causal_traceability", "temporal_traceability").observed() == (2, 0, 1, 48)
    m = _two_columns({0}, {1}, 4)
    assert contingency(m, "causal_traceability", "temporal_traceability").observed() == (0, 1, 1, 2)
    m = _two_columns(set(), {1, 2}, 10)
    assert contingency(m, "causal_traceability", "temporal_traceability").observed() == (0, 0, 2, 8)


def test_contingency_errors():
    m = _two_columns({0}, {1}, 4)
    with pytest.raises(SamePair):
        contingency(m, "causal_traceability", "causal_traceability")
    with pytest.raises(UnknownDimension):
        contingency(m, "causal_traceability", "precision")


def test_solve_overlap():
    assert solve_overlap(2, 3, 51, 33.3, 0.05) == {2}
    assert solve_overlap(8, 4, 51, 23.3, 0.05) == {4}
    assert solve_overlap(3, 1, 51, 16.3, 0.05) == {1}
    # both=0 gives 4/9, both=1 gives 4: nothing near zero
    assert solve_overlap(1, 1, 4, 0, 1e-9) == set()
    assert solve_overlap(2, 2, 4, 0, 1e-9) == {1}


def test_significance_flags():
    for cells, _ in GOLDEN:
        t = ContingencyTable(*cells)
        assert chi_square(t) > CRITICAL_1PCT
    om = pairwise_independence(table1_fixture())
    assert om.get("causal_traceability", "temporal_traceability").significant
    assert chi_square(ContingencyTable(2, 2, 4, 4)) <= CRITICAL_1PCT


def test_table1_orthogonality():
    om = pairwise_independence(table1_fixture())
    assert [d for d, _ in om.excluded] == ["relevance", "confidentiality", "integrity"]
    assert len(om.dimensions) == 20
    assert len(om.results) == 190
    top = top_pairs(om, 3)
    assert [set(r.pair) for r in top] == [
        {"causal_traceability", "temporal_traceability"},
        {"provenance", "trustworthiness"},
        {"data_currency", "data_update_currency"},
    ]
    assert [round(r.statistic, 2) for r in top] == [33.31, 23.33, 16.32]
    # pairs are stored in registry order, so the causal-in-temporal table reads transposed
    assert [r.table.observed() for r in top] == [(2, 1, 0, 48), (4, 0, 4, 43), (1, 2, 0, 48)]


def test_symmetric_access():
    om = pairwise_independence(table1_fixture())
    for a, b in om.results:
        assert om.get(a, b) is om.get(b, a)


def test_top_pairs_edges():
    om = pairwise_independence(table1_fixture())
    assert top_pairs(om, 0) == []
    assert len(top_pairs(om, 1000)) == 190
    ranked = top_pairs(om, 190)
    assert all(x.statistic >= y.statistic for x, y in zip(ranked, ranked[1:]))


def test_full_column_is_excluded():
    rows = {f"X{i}": ["precision"] + (["compliance"] if i % 2 else []) + (["coherence"] if i < 3 else [])
            for i in range(6)}
    om = pairwise_independence(AssignmentMatrix.from_rows(rows))
    assert ("precision", "assigned to every problem") in om.excluded
    assert om.dimensions == ("compliance", "coherence")


def test_workers_do_not_change_results():
    m = table1_fixture()
    assert matrix_json(pairwise_independence(m, workers=4)) == matrix_json(pairwise_independence(m))


def test_matrix_csv_layout():
    om = pairwise_independence(table1_fixture())
    lines = matrix_csv(om).decode().splitlines()
    assert len(lines) == 21
    assert lines[0].split(",")[1:] == list(om.dimensions)
    row = dict(zip(lines[0].split(","), lines[om.dimensions.index("causal_traceability") + 1].split(",")))
    assert row["temporal_traceability"] == "33.31"
    # upper triangle stays empty
    assert lines[1].split(",")[1:] == [""] * 20


def test_matrix_json_precision():
    om = pairwise_independence(table1_fixture())
    doc = json.loads(matrix_json(om))
    assert doc["pair_count"] == 190
    assert doc["significant_count"] == om.significant_count
    best = max(doc["results"], key=lambda r: r["statistic"])
    assert best["statistic"] == om.get(best["a"], best["b"]).statistic


# --- properties -----------------------------------------------------------

tables = st.tuples(*(st.integers(0, 40),) * 4).filter(lambda c: sum(c) > 0).map(
    lambda c: ContingencyTable(*c)
).filter(lambda t: 0 < t.margin_a < t.n and 0 < t.margin_b < t.n)


@settings(max_examples=300)
@given(tables)
def test_range_and_oracle(t):
    x = chi_square(t)
    assert 0 <= x <= t.n * (1 + 1e-12)
    assert x == pytest.approx(chi_square_closed_form(t), rel=1e-9, abs=1e-12)


@settings(max_examples=300)
@given(tables)
def test_swap_symmetry(t):
    swapped = ContingencyTable(t.both, t.b_only, t.a_only, t.neither)
    assert chi_square(swapped) == chi_square(t)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(1, 6))
def test_independent_tables_are_zero(r1, r2, c1, c2):
    t = ContingencyTable(r1 * c1, r1 * c2, r2 * c1, r2 * c2)
    assert chi_square(t) < 1e-9


def random_matrix(rng: random.Random, n_problems: int, n_dims: int = 23) -> AssignmentMatrix:
    dims = DIMENSION_IDS[:n_dims]
    rows = {f"X{i}": [d for d in dims if rng.random() < rng.choice((0.05, 0.2, 0.5))] for i in range(n_problems)}
    return AssignmentMatrix.from_rows(rows, dimensions=dims)


def test_exclusion_iff_degenerate_column():
    rng = random.Random(11)
    for _ in range(40):
        m = random_matrix(rng, rng.randint(2, 15), 8)
        om = pairwise_independence(m)
        excluded = {d for d, _ in om.excluded}
        for d in m.dimensions:
            total = sum(m.column(d))
            assert (d in excluded) == (total in (0, len(m.problems)))


def test_row_permutation_invariance():
    rng = random.Random(5)
    for _ in range(20):
        m = random_matrix(rng, 30, 10)
        problems = list(m.problems)
        rng.shuffle(problems)
        shuffled = AssignmentMatrix(tuple(problems), m.dimensions, dict(m.cells))
        a, b = pairwise_independence(m), pairwise_independence(shuffled)
        assert {k: r.statistic for k, r in a.results.items()} == {k: r.statistic for k, r in b.results.items()}
