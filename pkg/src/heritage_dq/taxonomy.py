"""Quality dimensions, the built-in problem catalog and assignment matrices."""

from __future__ import annotations

import csv
import io
import random
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import (
    DuplicateLabel,
    EmptyMatrix,
    MalformedInput,
    MissingPrimary,
    MultiplePrimary,
    UnknownDimension,
    UnknownProblemId,
)

INTRINSIC_PARENTS = frozenset({"Accuracy", "Completeness", "Conciseness", "Consistency"})

# (id, display name, parent, short description); order is the canonical
# dimension order used everywhere (intrinsic block first).
_DIMENSIONS: tuple[tuple[str, str, str, str], ...] = (
    ("syntactic_accuracy", "Syntactic Accuracy", "Accuracy",
     "Data follows the syntax of its description language and data model."),
    ("semantic_accuracy", "Semantic Accuracy", "Accuracy",
     "Data states true facts about the described domain."),
    ("external_accuracy", "External Accuracy", "Accuracy",
     "Interlinks are valid and point at the intended external entities."),
    ("compliance", "Compliance", "Accuracy",
     "Data follows the rules and conventions attached to its language and model."),
    ("precision", "Precision", "Accuracy",
     "Values are as exact as the intended use requires."),
    ("internal_completeness", "Internal Completeness", "Completeness",
     "All needed elements exist and carry their needed properties and links."),
    ("external_completeness", "External Completeness", "Completeness",
     "All needed links to external datasets are present."),
    ("relevance", "Relevance", "Conciseness",
     "Only elements, properties and links needed for the use are present."),
    ("compactness", "Compactness", "Conciseness",
     "No redundant elements; every element is stated compactly."),
    ("logical_consistency", "Logical Consistency", "Consistency",
     "No statements contradict each other."),
    ("coherence", "Coherence", "Consistency",
     "Comparable elements are represented the same way."),
    ("availability", "Availability", "Accessibility",
     "Data and referenced resources can be reached when needed."),
    ("confidentiality", "Confidentiality", "Accessibility",
     "Access is limited to authorized users where required."),
    ("integrity", "Integrity", "Accessibility",
     "Data is protected from unintended or unauthorized change."),
    ("data_currency", "Data Currency", "Currency",
     "Recorded information is up to date."),
    ("data_update_currency", "Data Update Currency", "Currency",
     "Changes in the domain are reflected promptly."),
    ("time_concurrency", "Time Concurrency", "Currency",
     "Elements, values and links refer to one version of the domain."),
    ("provenance", "Provenance", "Plausibility",
     "Origin of elements and values is documented and verifiable."),
    ("trustworthiness", "Trustworthiness", "Plausibility",
     "Data is credible to the community that uses it."),
    ("temporal_traceability", "Temporal Traceability", "Traceability",
     "Access and change history is recorded."),
    ("causal_traceability", "Causal Traceability", "Traceability",
     "Causal dependencies between updates are recorded."),
    ("appropriateness", "Appropriateness", "Understandability",
     "Data can be read without ambiguity."),
    ("versatility", "Versatility", "Understandability",
     "Data is offered in forms suited to different audiences and platforms."),
)

DIMENSION_IDS: tuple[str, ...] = tuple(d[0] for d in _DIMENSIONS)
_DIM_INDEX = {dim_id: i for i, dim_id in enumerate(DIMENSION_IDS)}

# Column sums of the full (primary + secondary) assignment matrix over the
# 51 catalog problems.
TABLE1_COUNTS: Mapping[str, int] = {
    "syntactic_accuracy": 12,
    "semantic_accuracy": 18,
    "external_accuracy": 8,
    "compliance": 25,
    "precision": 8,
    "internal_completeness": 21,
    "external_completeness": 15,
    "relevance": 0,
    "compactness": 4,
    "logical_consistency": 6,
    "coherence": 12,
    "availability": 3,
    "confidentiality": 0,
    "integrity": 0,
    "data_currency": 3,
    "data_update_currency": 1,
    "time_concurrency": 3,
    "provenance": 4,
    "trustworthiness": 8,
    "temporal_traceability": 3,
    "causal_traceability": 2,
    "appropriateness": 24,
    "versatility": 5,
}


@dataclass(frozen=True)
class Dimension:
    id: str
    name: str
    parent: str
    category: str
    definition: str


@dataclass(frozen=True)
class ProblemType:
    id: str
    title: str
    primary_dimension: str
    other_dimensions: frozenset[str] = frozenset()
    detectable: str = "annotation_only"

    def __post_init__(self):
        check_dimension(self.primary_dimension)
        for dim in self.other_dimensions:
            check_dimension(dim)
        if self.primary_dimension in self.other_dimensions:
            raise ValueError(f"{self.id}: primary dimension repeated in other_dimensions")
        if self.detectable not in ("mechanical", "annotation_only"):
            raise ValueError(f"{self.id}: bad detectable value {self.detectable!r}")


@lru_cache(maxsize=None)
def registry() -> tuple[Dimension, ...]:
    return tuple(
        Dimension(
            id=dim_id,
            name=name,
            parent=parent,
            category="intrinsic" if parent in INTRINSIC_PARENTS else "contextual",
            definition=text,
        )
        for dim_id, name, parent, text in _DIMENSIONS
    )


def dimension(dim_id: str) -> Dimension:
    check_dimension(dim_id)
    return registry()[_DIM_INDEX[dim_id]]


def parent_of(dim_id: str) -> str:
    return dimension(dim_id).parent


def check_dimension(dim_id: str) -> str:
    if dim_id not in _DIM_INDEX:
        raise UnknownDimension(f"unknown dimension id: {dim_id!r}")
    return dim_id


def dimension_index(dim_id: str) -> int:
    return _DIM_INDEX[check_dimension(dim_id)]


class Catalog(Sequence[ProblemType]):
    """Ordered, id-indexed collection of problem types."""

    def __init__(self, problems: Iterable[ProblemType]):
        self._problems = tuple(problems)
        self._by_id: dict[str, ProblemType] = {}
        for p in self._problems:
            if p.id in self._by_id:
                raise DuplicateLabel(f"duplicate problem id {p.id!r}")
            self._by_id[p.id] = p

    def __getitem__(self, index):
        return self._problems[index]

    def __len__(self) -> int:
        return len(self._problems)

    def __iter__(self) -> Iterator[ProblemType]:
        return iter(self._problems)

    def __contains__(self, problem_id) -> bool:
        return problem_id in self._by_id

    def __eq__(self, other) -> bool:
        return isinstance(other, Catalog) and self._problems == other._problems

    __hash__ = None

    def lookup(self, problem_id: str) -> ProblemType:
        try:
            return self._by_id[problem_id]
        except KeyError:
            raise UnknownProblemId(f"unknown problem id: {problem_id!r}") from None

    def primary_counts(self) -> dict[str, int]:
        counts = dict.fromkeys(DIMENSION_IDS, 0)
        for p in self._problems:
            counts[p.primary_dimension] += 1
        return counts


CATALOG_HEADER = ["problem_id", "title", "primary_dimension", "other_dimensions", "detectable"]


def load_catalog(data: bytes) -> Catalog:
    """Parse a catalog CSV (see ``CATALOG_HEADER``)."""
    reader = csv.reader(io.StringIO(data.decode("utf-8")))
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedInput("empty catalog file", line=1) from None
    if header != CATALOG_HEADER:
        raise MalformedInput(f"catalog header must be {','.join(CATALOG_HEADER)}", line=1)
    problems = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(CATALOG_HEADER):
            raise MalformedInput(f"expected {len(CATALOG_HEADER)} columns, got {len(row)}", line=lineno)
        pid, title, primary, others, detectable = row
        try:
            problems.append(
                ProblemType(
                    id=pid,
                    title=title,
                    primary_dimension=primary,
                    other_dimensions=frozenset(o for o in others.split("|") if o),
                    detectable=detectable,
                )
            )
        except ValueError as exc:
            raise MalformedInput(str(exc), line=lineno) from None
    return Catalog(problems)


def dump_catalog(catalog: Iterable[ProblemType]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CATALOG_HEADER)
    for p in catalog:
        others = "|".join(sorted(p.other_dimensions, key=dimension_index))
        writer.writerow([p.id, p.title, p.primary_dimension, others, p.detectable])
    return buf.getvalue().encode("utf-8")


@lru_cache(maxsize=None)
def builtin_catalog() -> Catalog:
    data = resources.files("heritage_dq").joinpath("data/catalog.csv").read_bytes()
    return load_catalog(data)


@dataclass(frozen=True)
class AssignmentMatrix:
    """Binary problem x dimension assignments.

    ``cells`` holds only the true cells, mapping ``(problem, dimension)`` to
    ``"P"`` (primary) or ``"1"`` (secondary).
    """

    problems: tuple[str, ...]
    dimensions: tuple[str, ...] = DIMENSION_IDS
    cells: Mapping[tuple[str, str], str] = field(default_factory=dict)

    def __post_init__(self):
        _check_unique(self.problems, "problem")
        _check_unique(self.dimensions, "dimension")
        for dim in self.dimensions:
            check_dimension(dim)
        rows, cols = set(self.problems), set(self.dimensions)
        for (p, d), flag in self.cells.items():
            if p not in rows or d not in cols:
                raise KeyError(f"cell ({p}, {d}) outside matrix labels")
            if flag not in ("P", "1"):
                raise ValueError(f"cell flag must be 'P' or '1', got {flag!r}")

    def has(self, problem: str, dim: str) -> bool:
        return (problem, dim) in self.cells

    def column(self, dim: str) -> list[bool]:
        if dim not in self.dimensions:
            raise UnknownDimension(f"dimension {dim!r} not in matrix")
        return [(p, dim) in self.cells for p in self.problems]

    def primary_of(self, problem: str) -> list[str]:
        return [d for d in self.dimensions if self.cells.get((problem, d)) == "P"]

    def check_primaries(self) -> None:
        for p in self.problems:
            n = len(self.primary_of(p))
            if n > 1:
                raise MultiplePrimary(f"problem {p!r} has {n} primary flags")
            if n == 0:
                raise MissingPrimary(f"problem {p!r} has no primary flag")

    @classmethod
    def from_rows(cls, rows: Mapping[str, Iterable[str]], dimensions: Sequence[str] = DIMENSION_IDS,
                  primaries: Mapping[str, str] | None = None) -> "AssignmentMatrix":
        """Build a matrix from ``{problem: assigned dimensions}``."""
        primaries = primaries or {}
        cells = {}
        for p, dims in rows.items():
            for d in dims:
                cells[(p, d)] = "P" if primaries.get(p) == d else "1"
        return cls(tuple(rows), tuple(dimensions), cells)


def _check_unique(labels: Sequence[str], what: str) -> None:
    seen = set()
    for label in labels:
        if label in seen:
            raise DuplicateLabel(f"duplicate {what} label {label!r}")
        seen.add(label)


def load_matrix(data: bytes, *, require_primary: bool = True) -> AssignmentMatrix:
    reader = csv.reader(io.StringIO(data.decode("utf-8")))
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedInput("empty matrix file", line=1) from None
    if not header or header[0] != "problem_id":
        raise MalformedInput("first column must be problem_id", line=1)
    dims = tuple(header[1:])
    _check_unique(dims, "dimension")
    for d in dims:
        check_dimension(d)
    problems: list[str] = []
    cells: dict[tuple[str, str], str] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise MalformedInput(f"expected {len(header)} columns, got {len(row)}", line=lineno)
        pid = row[0]
        if pid in problems:
            raise DuplicateLabel(f"duplicate problem label {pid!r} (line {lineno})")
        problems.append(pid)
        n_primary = 0
        for d, value in zip(dims, row[1:]):
            value = value.strip()
            if value == "0":
                continue
            if value not in ("1", "P"):
                raise MalformedInput(f"cell value must be 0, 1 or P, got {value!r}", line=lineno)
            n_primary += value == "P"
            cells[(pid, d)] = value
        if n_primary > 1:
            raise MultiplePrimary(f"problem {pid!r} has {n_primary} primary flags (line {lineno})")
        if require_primary and n_primary == 0:
            raise MissingPrimary(f"problem {pid!r} has no primary flag (line {lineno})")
    return AssignmentMatrix(tuple(problems), dims, cells)


def save_matrix(m: AssignmentMatrix) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["problem_id", *m.dimensions])
    for p in m.problems:
        writer.writerow([p, *(m.cells.get((p, d), "0") for d in m.dimensions)])
    return buf.getvalue().encode("utf-8")


def catalog_matrix(catalog: Iterable[ProblemType] | None = None) -> AssignmentMatrix:
    """Matrix with each problem's primary and (if known) other dimensions."""
    catalog = builtin_catalog() if catalog is None else catalog
    rows, primaries = {}, {}
    for p in catalog:
        rows[p.id] = [p.primary_dimension, *sorted(p.other_dimensions, key=dimension_index)]
        primaries[p.id] = p.primary_dimension
    return AssignmentMatrix.from_rows(rows, primaries=primaries)


def marginals(m: AssignmentMatrix) -> dict[str, int]:
    counts = dict.fromkeys(m.dimensions, 0)
    for (_, d) in m.cells:
        counts[d] += 1
    return counts


def distribution(m: AssignmentMatrix) -> dict[str, tuple[int, float]]:
    """Per-dimension ``(count, percent)``; percent of all true cells."""
    counts = marginals(m)
    total = sum(counts.values())
    if total == 0:
        raise EmptyMatrix("matrix has no assignments")
    return {d: (c, 100.0 * c / total) for d, c in counts.items()}


# Problem overlaps the synthetic table1 matrix pins down so that its three
# strongest dimension pairs match the published contingencies:
#   causal_traceability within temporal_traceability (2 of 3),
#   provenance within trustworthiness (4 of 8),
#   data_update_currency within data_currency (1 of 3).
_TABLE1_PINNED: dict[str, tuple[str, ...]] = {
    "D07.1": ("causal_traceability",),
    "D07.2": ("causal_traceability",),
    "D07.3": ("data_update_currency",),
    "D01.1.4": ("trustworthiness",),
    "D01.1.5": ("provenance",),
    "D01.1.8": ("provenance",),
    "D06.1": ("provenance",),
}
_TABLE1_SEED = 20240517


def table1_matrix(seed: int = _TABLE1_SEED) -> AssignmentMatrix:
    """Synthetic full assignment matrix whose column sums equal ``TABLE1_COUNTS``.

    Starts from the built-in primary assignments, adds the pinned overlaps,
    then fills each remaining column greedily: rows with the fewest
    assignments so far first, ties broken by a seeded shuffle. Small-margin
    columns are filled first so they spread over distinct rows. Columns that
    must stay nested (see ``_TABLE1_PINNED``) never receive greedy cells.
    """
    catalog = builtin_catalog()
    rng = random.Random(seed)
    assigned: dict[str, set[str]] = {p.id: {p.primary_dimension} for p in catalog}
    for pid, dims in _TABLE1_PINNED.items():
        assigned[pid].update(dims)
    closed = {"causal_traceability", "provenance", "data_update_currency"}

    def col_count(d: str) -> int:
        return sum(d in dims for dims in assigned.values())

    order = sorted(DIMENSION_IDS, key=lambda d: (TABLE1_COUNTS[d], dimension_index(d)))
    problem_ids = [p.id for p in catalog]
    for d in order:
        need = TABLE1_COUNTS[d] - col_count(d)
        if need < 0 or (need > 0 and d in closed):
            raise AssertionError(f"table1 construction inconsistent at {d}")
        if need == 0:
            continue
        candidates = [pid for pid in problem_ids if d not in assigned[pid] and pid not in _TABLE1_PINNED]
        rng.shuffle(candidates)
        candidates.sort(key=lambda pid: len(assigned[pid]))
        for pid in candidates[:need]:
            assigned[pid].add(d)
    primaries = {p.id: p.primary_dimension for p in catalog}
    rows = {pid: sorted(dims, key=dimension_index) for pid, dims in assigned.items()}
    return AssignmentMatrix.from_rows(rows, primaries=primaries)


def table1_fixture() -> AssignmentMatrix:
    """The shipped copy of :func:`table1_matrix` (``data/table1_matrix.csv``)."""
    data = resources.files("heritage_dq").joinpath("data/table1_matrix.csv").read_bytes()
    return load_matrix(data)
