"""Acceptance gate: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py``; the lines are echoed in the
terminal summary. Running this file directly prints them too.
"""

import json
import random
import time

import pytest

from heritage_dq.cli import main
from heritage_dq.detectors import DETECTORS, run_all
from heritage_dq.model import parse_canonical, parse_xml, serialize_canonical
from heritage_dq.report import aggregate, parse_report, serialize_report
from heritage_dq.stats import (
    CRITICAL_1PCT,
    ContingencyTable,
    chi_square,
    chi_square_closed_form,
    contingency,
    pairwise_independence,
)
from heritage_dq.taxonomy import (
    DIMENSION_IDS,
    AssignmentMatrix,
    builtin_catalog,
    distribution,
    load_matrix,
    save_matrix,
    table1_fixture,
)

from conftest import FIXTURES
from corpus import corpus_xml
from test_detectors import CASES, COMPOSITE_EXPECTED
from test_taxonomy import PRIMARY_TALLY

pytestmark = pytest.mark.acceptance

RESULTS: list[str] = []


def record(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def test_catalog_fidelity():
    with Timer() as t:
        builtin_catalog.cache_clear()
        cat = builtin_catalog()
        counts = {d: c for d, c in cat.primary_counts().items() if c}
    ok = len(cat) == 51 and counts == PRIMARY_TALLY and t.seconds < 1
    record(1, ok, f"51 problems, tallies match ({len(cat)} found, {t.seconds:.3f}s)")


def test_distribution_reproduction():
    expected = {"compliance": 13.51, "appropriateness": 12.97, "internal_completeness": 11.35,
                "syntactic_accuracy": 6.49}
    with Timer() as t:
        dist = distribution(table1_fixture())
    total = sum(c for c, _ in dist.values())
    worst = max(abs(dist[d][1] - pct) for d, pct in expected.items())
    ok = total == 185 and worst <= 0.01 and t.seconds < 1
    record(2, ok, f"total {total}, max deviation {worst:.4f} pp ({t.seconds:.3f}s)")


GOLDEN = [((2, 0, 1, 48), 33.31), ((4, 4, 0, 43), 23.33), ((1, 2, 0, 48), 16.32)]


def test_chi_square_golden_values():
    with Timer() as t:
        got = [chi_square(ContingencyTable(*cells)) for cells, _ in GOLDEN]
    published = [33.3, 23.3, 16.3]
    ok = (all(abs(g - want) <= 0.01 for g, (_, want) in zip(got, GOLDEN))
          and all(abs(g - p) <= 0.05 for g, p in zip(got, published)) and t.seconds < 1)
    record(3, ok, "values " + ", ".join(f"{g:.2f}" for g in got) + f" ({t.seconds:.3f}s)")


def test_significance_gate():
    flags = [chi_square(ContingencyTable(*cells)) > CRITICAL_1PCT for cells, _ in GOLDEN]
    proportional = ContingencyTable(3, 6, 9, 18)
    ok = flags == [True, True, True] and not (chi_square(proportional) > CRITICAL_1PCT)
    record(4, ok, f"golden flags {flags}, proportional table {chi_square(proportional):.3g}")


def test_exclusion_behavior():
    zero = {"relevance", "confidentiality", "integrity"}
    kept = [d for d in DIMENSION_IDS if d not in zero]
    # two dimensions per problem row: every kept column is used, none by all rows
    rows = {f"X{i}": sorted({kept[i % 20], kept[(7 * i + 3) % 20]}) for i in range(51)}
    m = AssignmentMatrix.from_rows(rows)
    om = pairwise_independence(m)
    excluded = [d for d, _ in om.excluded]
    ok = len(om.dimensions) == 20 and set(excluded) == zero and len(excluded) == 3 and len(om.results) == 190
    record(5, ok, f"retained {len(om.dimensions)}, excluded {excluded}")


def _random_matrix(rng: random.Random) -> AssignmentMatrix:
    n = rng.randint(4, 60)
    dims = rng.sample(DIMENSION_IDS, rng.randint(2, 8))
    density = rng.choice((0.1, 0.3, 0.5))
    rows = {f"X{i}": [d for d in dims if rng.random() < density] for i in range(n)}
    return AssignmentMatrix.from_rows(rows, dimensions=dims)


def test_property_suite():
    rng = random.Random(2024)
    checked = tables = 0
    failures = []
    with Timer() as t:
        while checked < 1000:
            m = _random_matrix(rng)
            om = pairwise_independence(m)
            if not om.results:
                continue
            checked += 1
            n = len(m.problems)
            problems = list(m.problems)
            rng.shuffle(problems)
            shuffled = pairwise_independence(AssignmentMatrix(tuple(problems), m.dimensions, dict(m.cells)))
            for (a, b), r in om.results.items():
                tables += 1
                x = r.statistic
                if not 0 <= x <= n * (1 + 1e-12):
                    failures.append(("range", a, b, x))
                if chi_square(contingency(m, b, a)) != x:
                    failures.append(("symmetry", a, b))
                closed = chi_square_closed_form(r.table)
                if abs(x - closed) > 1e-9 * max(abs(closed), 1e-300) and abs(x - closed) > 1e-12:
                    failures.append(("oracle", a, b, x, closed))
                if shuffled.get(a, b).statistic != x:
                    failures.append(("permutation", a, b))
        for r1 in range(1, 8):
            for r2 in range(1, 8):
                for c1, c2 in ((1, 1), (1, 3), (2, 5), (4, 4)):
                    if chi_square(ContingencyTable(r1 * c1, r1 * c2, r2 * c1, r2 * c2)) >= 1e-9:
                        failures.append(("independence", r1, r2, c1, c2))
    ok = not failures and t.seconds < 30
    record(6, ok, f"{checked} matrices, {tables} tables, {len(failures)} failures ({t.seconds:.2f}s)")


def test_detector_suite(descriptor, config):
    problems = []
    with Timer() as t:
        for name, (seeded, expected, clean) in CASES.items():
            found = DETECTORS[name][0](seeded, descriptor, config)
            if {(f.problem_id, str(f.path), f.evidence) for f in found} != expected or len(found) != len(expected):
                problems.append(f"{name}: seeded")
            if DETECTORS[name][0](clean, descriptor, config):
                problems.append(f"{name}: clean")
        composite = parse_xml((FIXTURES / "composite.xml").read_bytes())
        got = [(f.problem_id, f.dimension, str(f.path)) for f in run_all(composite, descriptor, config)]
        if got != COMPOSITE_EXPECTED:
            problems.append("composite")
    ok = not problems and len(CASES) == len(DETECTORS) and t.seconds < 5
    record(7, ok, f"{len(CASES)} detectors + composite ({len(got)} findings), issues {problems} ({t.seconds:.2f}s)")


def test_dimension_mapping(descriptor, config):
    catalog = builtin_catalog()
    datasets = [d for seeded, _, clean in CASES.values() for d in (seeded, clean)]
    datasets += [parse_xml((FIXTURES / f).read_bytes()) for f in ("clean.xml", "composite.xml")]
    datasets.append(parse_xml(corpus_xml(500, seed=3)))
    seen = set()
    bad = []
    for d in datasets:
        for f in run_all(d, descriptor, config):
            seen.add(f.problem_id)
            if f.dimension != catalog.lookup(f.problem_id).primary_dimension:
                bad.append(f)
    producible = {p for _, ps in DETECTORS.values() for p in ps}
    ok = not bad and seen == producible
    record(8, ok, f"{len(seen)} problem ids exercised, {len(bad)} mismatches")


def test_determinism(tmp_path):
    src = tmp_path / "corpus.xml"
    src.write_bytes(corpus_xml(10_000))
    argv = ["validate", str(src), "--model", str(FIXTURES / "descriptor.json"),
            "--config", str(FIXTURES / "config.json"), "--deterministic"]
    outputs, times = [], []
    for i in range(2):
        out = tmp_path / f"run{i}.json"
        with Timer() as t:
            code = main(argv + ["-o", str(out)])
        times.append(t.seconds)
        outputs.append(out.read_bytes())
    elements = json.loads(outputs[0])["totals"]["elements"]
    ok = code == 0 and elements == 10_000 and outputs[0] == outputs[1] and max(times) < 5
    record(9, ok, f"{elements} elements, identical={outputs[0] == outputs[1]}, "
                  f"run times {times[0]:.2f}s / {times[1]:.2f}s")


def test_round_trips(descriptor, config):
    checks = {}
    datasets = [parse_xml((FIXTURES / f).read_bytes(), source=f)
                for f in ("clean.xml", "composite.xml", "three_objects.xml")]
    datasets.append(parse_xml(corpus_xml(300, seed=9)))
    checks["canonical"] = all(parse_canonical(serialize_canonical(d)) == d for d in datasets)
    reports = [aggregate(run_all(d, descriptor, config), d, config_digest="sha256:0",
                         created_at="2026-01-01T00:00:00+00:00") for d in datasets]
    checks["report"] = all(parse_report(serialize_report(r, "json")) == r for r in reports)
    matrix = table1_fixture()
    data = save_matrix(matrix)
    checks["matrix"] = load_matrix(data) == matrix and save_matrix(load_matrix(data)) == data
    record(10, all(checks.values()), ", ".join(f"{k}={v}" for k, v in checks.items()))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
