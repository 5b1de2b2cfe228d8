"""Pairwise chi-square independence analysis of dimension assignments.

Each dimension is treated as a binary variable over the problem rows of an
:class:`~heritage_dq.taxonomy.AssignmentMatrix`. For every pair of dimensions
with non-zero marginals a 2x2 contingency table is built and the uncorrected
Pearson statistic is compared against a fixed critical value (6.63, the 1%
level for one degree of freedom).
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

from .errors import EmptyMatrix, SamePair, UnknownDimension, ZeroMargin
from .taxonomy import AssignmentMatrix, dimension_index

CRITICAL_1PCT = 6.63


@dataclass(frozen=True)
class ContingencyTable:
    both: int
    a_only: int
    b_only: int
    neither: int

    def __post_init__(self):
        if min(self.both, self.a_only, self.b_only, self.neither) < 0:
            raise ValueError("contingency counts must be non-negative")
        if self.n <= 0:
            raise ValueError("contingency table must have n > 0")

    @property
    def n(self) -> int:
        return self.both + self.a_only + self.b_only + self.neither

    @property
    def margin_a(self) -> int:
        return self.both + self.a_only

    @property
    def margin_b(self) -> int:
        return self.both + self.b_only

    def observed(self) -> tuple[int, int, int, int]:
        """Cells in (a&b, a&~b, ~a&b, ~a&~b) order."""
        return (self.both, self.a_only, self.b_only, self.neither)


@dataclass(frozen=True)
class ChiSquareResult:
    pair: tuple[str, str]
    statistic: float
    critical_value: float
    table: ContingencyTable

    @property
    def significant(self) -> bool:
        return self.statistic > self.critical_value


@dataclass(frozen=True)
class OrthogonalityMatrix:
    dimensions: tuple[str, ...]
    results: dict[tuple[str, str], ChiSquareResult]
    excluded: tuple[tuple[str, str], ...] = field(default=())
    critical_value: float = CRITICAL_1PCT

    def get(self, a: str, b: str) -> ChiSquareResult:
        key = canonical_pair(a, b)
        try:
            return self.results[key]
        except KeyError:
            raise UnknownDimension(f"no result for pair {key}") from None

    def ordered_results(self) -> list[ChiSquareResult]:
        return [self.results[k] for k in sorted(self.results, key=_pair_key)]

    @property
    def significant_count(self) -> int:
        return sum(r.significant for r in self.results.values())


def canonical_pair(a: str, b: str) -> tuple[str, str]:
    """Order a pair by canonical dimension order."""
    return (a, b) if dimension_index(a) <= dimension_index(b) else (b, a)


def _pair_key(pair: tuple[str, str]) -> tuple[int, int]:
    return (dimension_index(pair[0]), dimension_index(pair[1]))


def contingency(m: AssignmentMatrix, a: str, b: str) -> ContingencyTable:
    if a == b:
        raise SamePair(f"cannot cross dimension {a!r} with itself")
    col_a = m.column(a)
    col_b = m.column(b)
    if not m.problems:
        raise EmptyMatrix("matrix has no problem rows")
    both = a_only = b_only = neither = 0
    for x, y in zip(col_a, col_b):
        if x and y:
            both += 1
        elif x:
            a_only += 1
        elif y:
            b_only += 1
        else:
            neither += 1
    return ContingencyTable(both, a_only, b_only, neither)


def expected(t: ContingencyTable) -> tuple[float, float, float, float]:
    """Expected counts under independence: row margin * column margin / n."""
    n = t.n
    rows = (t.margin_a, n - t.margin_a)
    cols = (t.margin_b, n - t.margin_b)
    if 0 in rows or 0 in cols:
        raise ZeroMargin(f"zero margin in table {t.observed()}")
    return tuple(r * c / n for r in rows for c in cols)


def chi_square(t: ContingencyTable) -> float:
    """Pearson statistic summed over the four cells, no continuity correction."""
    both, a_only, b_only, neither = ((o - e) ** 2 / e for o, e in zip(t.observed(), expected(t)))
    # grouped so that swapping a and b yields a bit-identical sum
    return (both + neither) + (a_only + b_only)


def chi_square_closed_form(t: ContingencyTable) -> float:
    """n(ad - bc)^2 / (row1 row2 col1 col2); independent check of :func:`chi_square`."""
    n = t.n
    ra, rb = t.margin_a, n - t.margin_a
    ca, cb = t.margin_b, n - t.margin_b
    denom = ra * rb * ca * cb
    if denom == 0:
        raise ZeroMargin(f"zero margin in table {t.observed()}")
    det = t.both * t.neither - t.a_only * t.b_only
    return n * det * det / denom


def pairwise_independence(
    m: AssignmentMatrix,
    critical: float = CRITICAL_1PCT,
    *,
    workers: int = 1,
) -> OrthogonalityMatrix:
    if not m.problems:
        raise EmptyMatrix("matrix has no problem rows")
    n = len(m.problems)
    retained, excluded = [], []
    for d in sorted(m.dimensions, key=dimension_index):
        total = sum(m.column(d))
        if total == 0:
            excluded.append((d, "zero marginal frequency"))
        elif total == n:
            # assigned to every problem: the complementary margin is zero
            excluded.append((d, "assigned to every problem"))
        else:
            retained.append(d)

    def run(pair):
        a, b = pair
        t = contingency(m, a, b)
        return ChiSquareResult(pair, chi_square(t), critical, t)

    pairs = list(combinations(retained, 2))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, pairs))
    else:
        results = [run(p) for p in pairs]
    return OrthogonalityMatrix(
        dimensions=tuple(retained),
        results={r.pair: r for r in results},
        excluded=tuple(excluded),
        critical_value=critical,
    )


def solve_overlap(margin_a: int, margin_b: int, n: int, target: float, tol: float) -> set[int]:
    """All feasible ``both`` counts whose statistic lies within ``tol`` of ``target``."""
    lo = max(0, margin_a + margin_b - n)
    hi = min(margin_a, margin_b)
    hits = set()
    for both in range(lo, hi + 1):
        t = ContingencyTable(both, margin_a - both, margin_b - both, n - margin_a - margin_b + both)
        if abs(chi_square(t) - target) <= tol:
            hits.add(both)
    return hits


def top_pairs(om: OrthogonalityMatrix, k: int) -> list[ChiSquareResult]:
    if k <= 0:
        return []
    ranked = sorted(om.results.values(), key=lambda r: (-r.statistic, _pair_key(r.pair)))
    return ranked[:k]


def matrix_csv(om: OrthogonalityMatrix) -> bytes:
    """Lower-triangle table with 2-decimal values, dimensions as rows and columns."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    dims = om.dimensions
    writer.writerow(["", *dims])
    for i, row_dim in enumerate(dims):
        cells = [f"{om.get(row_dim, col_dim).statistic:.2f}" for col_dim in dims[:i]]
        writer.writerow([row_dim, *cells, *([""] * (len(dims) - i))])
    return buf.getvalue().encode("utf-8")


def matrix_json(om: OrthogonalityMatrix) -> bytes:
    doc = {
        "critical_value": om.critical_value,
        "dimensions": list(om.dimensions),
        "excluded": [{"dimension": d, "reason": why} for d, why in om.excluded],
        "pair_count": len(om.results),
        "significant_count": om.significant_count,
        "results": [
            {
                "a": r.pair[0],
                "b": r.pair[1],
                "statistic": r.statistic,
                "significant": r.significant,
                "table": list(r.table.observed()),
            }
            for r in om.ordered_results()
        ],
    }
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")
