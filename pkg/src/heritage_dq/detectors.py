"""Rule-based detection of catalog quality problems.

Every detector is a pure function ``(Dataset, ModelDescriptor,
DetectorConfig) -> list[Finding]``. Bad data never raises; it becomes
findings. Each finding carries the catalog id of the problem it reports and
that problem's primary dimension.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path as FsPath
from typing import Callable, Iterable, Mapping, Sequence

from .errors import ConfigError, MalformedInput
from .model import (
    DEFAULT_QUALIFIERS,
    DEFAULT_UNITS,
    ISO_DATE_GRAMMARS,
    LEGACY_DATE_GRAMMARS,
    Dataset,
    DataValue,
    ModelDescriptor,
    Path,
    Property,
    compile_grammars,
    is_absolute_uri,
    is_number,
    parse_date,
    split_qualifiers,
    split_unit,
)
from .taxonomy import Catalog, builtin_catalog

SEVERITIES = ("info", "warning", "error")

# structural and logical breaches are errors, representation issues warnings
SEVERITY = {
    "D01.1.1": "warning",
    "D01.1.6": "error",
    "D02.4.1": "warning",
    "D02.5.1": "error",
    "D03.1": "warning",
    "D03.2": "warning",
    "D04.1": "warning",
    "D04.2": "warning",
    "D05.2": "error",
    "D05.3": "error",
    "D05.5": "warning",
    "D06.5": "warning",
    "D06.8": "warning",
    "D10.1": "error",
    "D10.2": "warning",
    "D11": "warning",
    "D12": "error",
}

BUILTIN_FORMATS = {"iso8601-date"}


@dataclass(frozen=True)
class Finding:
    problem_id: str
    dimension: str
    path: Path
    message: str
    evidence: str = ""
    severity: str = "warning"
    dataset: str = ""

    def sort_key(self) -> tuple:
        return (self.dataset, str(self.path), self.problem_id, self.evidence, self.message)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "path": str(self.path),
            "problem_id": self.problem_id,
            "dimension": self.dimension,
            "severity": self.severity,
            "evidence": self.evidence,
            "message": self.message,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "Finding":
        return cls(
            problem_id=raw["problem_id"],
            dimension=raw["dimension"],
            path=Path.parse(raw["path"]),
            message=raw["message"],
            evidence=raw.get("evidence", ""),
            severity=raw["severity"],
            dataset=raw.get("dataset", ""),
        )


@dataclass(frozen=True)
class DetectorConfig:
    enabled: tuple[str, ...] | None = None
    date_grammars: tuple[str, ...] = ISO_DATE_GRAMMARS
    legacy_date_grammars: tuple[str, ...] = LEGACY_DATE_GRAMMARS
    units: tuple[str, ...] = DEFAULT_UNITS
    uncertainty_lexicon: tuple[str, ...] = DEFAULT_QUALIFIERS
    duplicate_threshold: float = 0.9
    multivalue_separators: tuple[str, ...] = (";",)
    vocabularies: Mapping[str, frozenset[str]] = field(default_factory=dict)
    format_rules: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    disambiguation_suffix: str = r"\s*\([^()]*\)$"
    comma_decimal: bool = False
    date_order_pairs: tuple[tuple[str, str], ...] = (("birthDate", "deathDate"),)

    def __post_init__(self):
        if not 0.0 <= self.duplicate_threshold <= 1.0:
            raise ConfigError("duplicate_threshold must lie in [0, 1]")
        if not self.date_grammars:
            raise ConfigError("at least one date grammar is required")
        if self.enabled is not None:
            unknown = set(self.enabled) - set(DETECTORS)
            if unknown:
                raise ConfigError(f"unknown detector ids: {', '.join(sorted(unknown))}")
        # fail early on bad grammars or patterns
        compile_grammars(self.date_grammars + self.legacy_date_grammars)
        for rule, patterns in self.format_rules.items():
            for p in patterns:
                try:
                    re.compile(p)
                except re.error as exc:
                    raise ConfigError(f"format rule {rule!r}: {exc}") from None

    @property
    def active(self) -> tuple[str, ...]:
        return tuple(DETECTORS) if self.enabled is None else tuple(d for d in DETECTORS if d in self.enabled)

    @classmethod
    def from_dict(cls, raw: Mapping, base_dir: str | FsPath | None = None) -> "DetectorConfig":
        raw = dict(raw)
        known = set(cls.__dataclass_fields__) | {"vocabulary_files"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        vocabs = {k: frozenset(v) for k, v in raw.pop("vocabularies", {}).items()}
        for vocab_id, path in raw.pop("vocabulary_files", {}).items():
            full = FsPath(base_dir or ".") / path
            try:
                vocabs[vocab_id] = load_vocabulary(full.read_bytes())
            except OSError as exc:
                raise ConfigError(f"cannot read vocabulary {vocab_id!r}: {exc}") from None
        kwargs = {}
        for key, val in raw.items():
            if key == "date_order_pairs":
                val = tuple(tuple(p) for p in val)
            elif key == "format_rules":
                val = {k: tuple(v) for k, v in val.items()}
            elif isinstance(val, list):
                val = tuple(val)
            kwargs[key] = val
        return cls(vocabularies=vocabs, **kwargs)

    def to_dict(self) -> dict:
        """JSON-ready form; vocabularies are inlined as sorted term lists."""
        out = {}
        for key in self.__dataclass_fields__:
            val = getattr(self, key)
            if key == "vocabularies":
                val = {k: sorted(v) for k, v in sorted(val.items())}
            elif key == "format_rules":
                val = {k: list(v) for k, v in sorted(val.items())}
            elif key == "date_order_pairs":
                val = [list(p) for p in val]
            elif isinstance(val, tuple):
                val = list(val)
            out[key] = val
        return out


def load_vocabulary(data: bytes) -> frozenset[str]:
    return frozenset(line.rstrip("\r") for line in data.decode("utf-8").split("\n") if line.strip())


def load_config(data: bytes, base_dir: str | FsPath | None = None) -> DetectorConfig:
    try:
        raw = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedInput(f"detector config is not valid JSON: {exc}") from None
    return DetectorConfig.from_dict(raw, base_dir)


def check_descriptor(m: ModelDescriptor, c: DetectorConfig) -> None:
    """Every vocabulary and format rule the descriptor names must be configured."""
    missing_vocab = m.referenced_vocabularies() - set(c.vocabularies)
    if missing_vocab:
        raise ConfigError(f"descriptor references unknown vocabularies: {', '.join(sorted(missing_vocab))}")
    missing_fmt = m.referenced_formats() - set(c.format_rules) - BUILTIN_FORMATS
    if missing_fmt:
        raise ConfigError(f"descriptor references unknown format rules: {', '.join(sorted(missing_fmt))}")


# --- helpers --------------------------------------------------------------

_CATALOG = builtin_catalog()


def _finding(d: Dataset, problem_id: str, path: Path, message: str, evidence: str = "") -> Finding:
    return Finding(
        problem_id=problem_id,
        dimension=_CATALOG.lookup(problem_id).primary_dimension,
        path=path,
        message=message,
        evidence=evidence,
        severity=SEVERITY[problem_id],
        dataset=d.id,
    )


def _core(value: DataValue, c: DetectorConfig) -> str:
    text, _ = split_unit(value.lexical.strip(), (value.unit,) if value.unit else c.units)
    text, _ = split_qualifiers(text, c.uncertainty_lexicon)
    return text


def _kind(p: Property, m: ModelDescriptor) -> str:
    return m.declared_kind(p.name) or p.value.kind


def _props(d: Dataset):
    for el in d.elements:
        for occ, p in el.iter_properties():
            yield el, occ, p


# --- detectors ------------------------------------------------------------


def detect_empty_fields(d: Dataset, m: ModelDescriptor, c: DetectorConfig) -> list[Finding]:
    return [
        _finding(d, "D01.1.1", Path(el.id, p.name, occ), f"property {p.name!r} is empty", p.value.lexical)
        for el, occ, p in _props(d)
        if p.value.is_empty
    ]


def detect_missing_required(d: Dataset, m: ModelDescriptor, c: DetectorConfig) -> list[Finding]:
    out = []
    for el in d.elements:
        present = {p.name for p in el.properties}
        for name in m.required(el.type_name):
            if name not in present:
                out.append(_finding(d, "D01.1.6", Path(el.id), f"required property {name!r} is missing", name))
    return out


def detect_format_violations(d: Dataset, m: ModelDescriptor, c: DetectorConfig) -> list[Finding]:
    iso = compile_grammars(c.date_grammars)
    rules = {k: [re.compile(p) for p in v] for k, v in c.format_rules.items()}
    out = []
    for el, occ, p in _props(d):
        if p.value.is_empty:
            continue
        spec = m.spec(p.name)
        rule = spec.format if spec else None
        core = _core(p.value, c)
        if rule and rule in rules:
            ok = any(rx.fullmatch(core) for rx in rules[rule])
        elif rule or _kind(p, m) == "date":
            ok = parse_date(core, iso) is not None
        else:
            continue
        if not ok:
            out.append(_finding(d, "D11", Path(el.id, p.name, occ),
                                f"{p.name!r} does not follow format {rule or 'iso8601-date'}", p.value.lexical))
    return out


def detect_type_mismatch(d: Dataset, m: ModelDescriptor, c: DetectorConfig) -> list[Finding]:
    out = []
    for el, occ, p in _props(d):
        kind = _kind(p, m)
        if kind not in ("number", "uri") or p.value.is_empty:
            continue
        core = _core(p.value, c)
        ok = is_number(core, comma_decimal=c.comma_decimal) if kind == "number" else is_absolute_uri(core)
        if not ok:
            out.append(_finding(d, "D12", Path(el.id, p.name, occ),
                                f"{p.name!r} is not a valid {kind}", p.value.lexical))
    return out


def detect_vocabulary_violations(d: Dataset, m: ModelDescriptor, c: DetectorConfig) -> list[Finding]:
    out = []
    for el, occ, p in _props(d):
        spec = m.spec(p.name)
        if not spec or not spec.vocabulary or p.value.is_empty:
            continue
        terms = c.vocabularies.get(spec.vocabulary)
        if terms is None:
            raise ConfigError(f"vocabulary {spec.vocabulary!r} is not configured")
        if p.value.lexical not in terms:
            out.append(_finding(d, "D10.1", Path(el.id, p.name, occ),
                                f"{p.value.lexical!r} is not in vocabulary {spec.vocabulary!r}", p.value.lexical))
    return out


def detect_missing_authority_link(d: Dataset, m: ModelDescriptor, c: DetectorConfig) -> list[Finding]:
    suffix = re.compile(c.disambiguation_suffix) if c.disambiguation_suffix else None
    out = []
    for el in d.elements:
        roles = {l.role for l in el.links if l.target_kind == "interlink"}
        for occ, p in el.iter_properties():
            spec = m.spec(p.name)
            if not spec or not spec.authority or p.value.is_empty or p.name in roles:
                continue
            if suffix and suffix.search(p.value.lexical):
                msg = f"{p.name!r} is only locally disambiguated; no authority link"
            else:
                msg = f"{p.name!r} has no authority link"
            out.append(_finding(d, "D10.2", Path(el.id, p.name, occ), msg, p.value.lexical))
    return out


def detect_date_contradictions(d: Dataset, m: ModelDescriptor, c: DetectorConfig) -> list[Finding]:
    grammars = compile_grammars(c.date_grammars + c.legacy_date_grammars)
    out = []
    for el in d.elements:
        for earlier_name, later_name in c.date_order_pairs:
            earlier, later = el.first(earlier_name), el.first(later_name)
            if earlier is None or later is None:
                continue
            a = parse_date(_core(earlier.value, c), grammars)
            b = parse_date(_core(later.value, c), grammars)
            if a is None or b is None:
                continue
            k = min(len(a), len(b))
            if b[:k] < a[:k]:
                out.append(_finding(
                    d, "D02.5.1", Path(el.id, later_name),
                    f"{later_name!r} precedes {earlier_name!r}",
                    f"{earlier_name}={earlier.value.lexical}; {later_name}={later.value.lexical}",
                ))
    return out


def _reference_findings(d: Dataset, want_dangling: bool) -> list[Finding]:
    counts = Counter(el.id for el in d.elements)
    out = []
    for el in d.elements:
        for i, link in enumerate(el.links):
            if link.target_kind != "internal":
                continue
            n = counts.get(link.target, 0)
            if want_dangling and n == 0:
                out.append(_finding(d, "D05.2", Path(el.id, link=i),
                                    f"{link.role!r} points to missing record {link.target!r}", link.target))
            elif not want_dangling and n > 1:
                out.append(_finding(d, "D05.3", Path(el.id, link=i),
                                    f"{link.role!r} target {link.target!r} matches {n} records", link.target))
    return out


def detect_dangling_references(d: Dataset, m: ModelDescriptor, c: DetectorConfig) -> list[Finding]:
    return _reference_findings(d, True)


def detect_ambiguous_references(d: Dataset, m: ModelDescriptor, c: DetectorConfig) -> list[Finding]:
    return _reference_findings(d, False)


_TOKEN_RE = re.compile(r"\w+")


def tokens(el_props: Iterable[Property]) -> frozenset[str]:
    return frozenset(t for p in el_props for t in _TOKEN_RE.findall(p.value.lexical.lower()))


def jaccard(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


def similar_pairs(sets: Sequence[frozenset], threshold: float) -> list[tuple[int, int]]:
    """Index pairs ``(i, j)``, ``i < j``, with Jaccard >= threshold.

    Uses prefix filtering: under a fixed global token order, two sets with
    Jaccard >= t must share a token within their first
    ``|s| - ceil(t|s|) + 1`` tokens. Empty sets never match.
    """
    eps = 1e-12
    live = [i for i, s in enumerate(sets) if s]
    if threshold <= 0:
        return [(i, j) for x, i in enumerate(live) for j in live[x + 1:]]
    freq = Counter(t for i in live for t in sets[i])
    ordered = {i: sorted(sets[i], key=lambda t: (freq[t], t)) for i in live}
    index: dict[str, list[int]] = defaultdict(list)
    pairs = []
    for i in sorted(live, key=lambda i: (len(sets[i]), i)):
        x = ordered[i]
        size = len(x)
        prefix = size - math.ceil(threshold * size - eps) + 1
        seen = set()
        for tok in x[:prefix]:
            for j in index[tok]:
                if j in seen:
                    continue
                seen.add(j)
                if len(sets[j]) + eps < threshold * size:
                    continue
                if jaccard(sets[i], sets[j]) + eps >= threshold:
                    pairs.append((min(i, j), max(i, j)))
        for tok in x[:prefix]:
            index[tok].append(i)
    return sorted(pairs)


def detect_duplicates(d: Dataset, m: ModelDescriptor, c: DetectorConfig) -> list[Finding]:
    by_type: dict[str, list] = defaultdict(list)
    for el in d.elements:
        by_type[el.type_name].append(el)
    out = []
    for group in by_type.values():
        sets = [tokens(el.properties) for el in group]
        for i, j in similar_pairs(sets, c.duplicate_threshold):
            a, b = sorted((group[i].id, group[j].id))
            sim = jaccard(sets[i], sets[j])
            out.append(_finding(d, "D03.1", Path(b), f"{b!r} duplicates {a!r} (similarity {sim:.2f})", f"{a}|{b}"))
    return out


_LEADING_ZERO = re.compile(r"^[+-]?0\d")


def detect_noncompact_values(d: Dataset, m: ModelDescriptor, c: DetectorConfig) -> list[Finding]:
    out = []
    for el, occ, p in _props(d):
        if _kind(p, m) != "number":
            continue
        core = _core(p.value, c)
        if is_number(core, comma_decimal=c.comma_decimal) and _LEADING_ZERO.match(core):
            out.append(_finding(d, "D03.2", Path(el.id, p.name, occ),
                                f"{p.name!r} has unnecessary leading zeros", p.value.lexical))
    return out


def detect_unit_incoherence(d: Dataset, m: ModelDescriptor, c: DetectorConfig) -> list[Finding]:
    first_unit: dict[str, str] = {}
    units: dict[str, set[str]] = defaultdict(set)
    where: dict[str, Path] = {}
    for el, occ, p in _props(d):
        unit = p.value.unit
        if unit is None:
            continue
        units[p.name].add(unit)
        first_unit.setdefault(p.name, unit)
        if unit != first_unit[p.name] and p.name not in where:
            where[p.name] = Path(el.id, p.name, occ)
    return [
        _finding(d, "D04.1", where[name], f"{name!r} uses {len(units[name])} different units",
                 "|".join(sorted(units[name])))
        for name in sorted(where)
    ]


def detect_missing_units(d: Dataset, m: ModelDescriptor, c: DetectorConfig) -> list[Finding]:
    out = []
    for el, occ, p in _props(d):
        spec = m.spec(p.name)
        if spec and spec.units and not p.value.is_empty and p.value.unit is None:
            out.append(_finding(d, "D04.2", Path(el.id, p.name, occ),
                                f"{p.name!r} has no unit of measurement", p.value.lexical))
    return out


def _markers(value: DataValue, c: DetectorConfig) -> list[str]:
    text, _ = split_unit(value.lexical.strip(), (value.unit,) if value.unit else c.units)
    _, found = split_qualifiers(text, c.uncertainty_lexicon)
    return [mk.lower() for mk in found]


def detect_implicit_uncertainty(d: Dataset, m: ModelDescriptor, c: DetectorConfig) -> list[Finding]:
    out = []
    for el, occ, p in _props(d):
        spec = m.spec(p.name)
        if not spec or not spec.qualifier_field:
            continue
        found = _markers(p.value, c)
        if found:
            out.append(_finding(d, "D06.5", Path(el.id, p.name, occ),
                                f"uncertainty marker in {p.name!r} instead of {spec.qualifier_field!r}",
                                p.value.lexical))
    return out


def detect_heterogeneous_uncertainty(d: Dataset, m: ModelDescriptor, c: DetectorConfig) -> list[Finding]:
    qualifier_of = {s.qualifier_field: name for name, s in m.properties.items() if s.qualifier_field}
    lexicon = {mk.lower() for mk in c.uncertainty_lexicon}
    first: dict[str, str] = {}
    seen: dict[str, set[str]] = defaultdict(set)
    where: dict[str, Path] = {}
    for el, occ, p in _props(d):
        if p.name in qualifier_of:
            name = qualifier_of[p.name]
            text = p.value.lexical.strip().lower()
            markers = [text] if text in lexicon else []
        else:
            name = p.name
            markers = _markers(p.value, c)
        for mk in markers:
            seen[name].add(mk)
            first.setdefault(name, mk)
            if mk != first[name] and name not in where:
                where[name] = Path(el.id, p.name, occ)
    return [
        _finding(d, "D06.8", where[name], f"{name!r} mixes {len(seen[name])} uncertainty conventions",
                 "|".join(sorted(seen[name])))
        for name in sorted(where)
    ]


def detect_multivalue_field(d: Dataset, m: ModelDescriptor, c: DetectorConfig) -> list[Finding]:
    seps = [s for s in c.multivalue_separators if s]
    if not seps:
        return []
    out = []
    for el, occ, p in _props(d):
        spec = m.spec(p.name)
        if spec and spec.repeatable and any(s in p.value.lexical for s in seps):
            out.append(_finding(d, "D02.4.1", Path(el.id, p.name, occ),
                                f"repeatable field {p.name!r} packs several values", p.value.lexical))
    return out


Detector = Callable[[Dataset, ModelDescriptor, DetectorConfig], list]

DETECTORS: dict[str, tuple[Detector, tuple[str, ...]]] = {
    "empty_fields": (detect_empty_fields, ("D01.1.1",)),
    "missing_required": (detect_missing_required, ("D01.1.6",)),
    "format_violations": (detect_format_violations, ("D11",)),
    "type_mismatch": (detect_type_mismatch, ("D12",)),
    "vocabulary": (detect_vocabulary_violations, ("D10.1",)),
    "authority_link": (detect_missing_authority_link, ("D10.2",)),
    "date_contradictions": (detect_date_contradictions, ("D02.5.1",)),
    "dangling_references": (detect_dangling_references, ("D05.2",)),
    "ambiguous_references": (detect_ambiguous_references, ("D05.3",)),
    "duplicates": (detect_duplicates, ("D03.1",)),
    "noncompact_values": (detect_noncompact_values, ("D03.2",)),
    "unit_incoherence": (detect_unit_incoherence, ("D04.1",)),
    "missing_units": (detect_missing_units, ("D04.2",)),
    "implicit_uncertainty": (detect_implicit_uncertainty, ("D06.5",)),
    "heterogeneous_uncertainty": (detect_heterogeneous_uncertainty, ("D06.8",)),
    "multivalue_field": (detect_multivalue_field, ("D02.4.1",)),
}


def sort_findings(findings: Iterable[Finding]) -> list[Finding]:
    return sorted(findings, key=Finding.sort_key)


def run_all(
    d: Dataset,
    m: ModelDescriptor,
    c: DetectorConfig,
    *,
    catalog: Catalog | None = None,
    workers: int = 1,
) -> list[Finding]:
    """Run every enabled detector and return findings sorted by (path, problem)."""
    check_descriptor(m, c)
    names = c.active
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(lambda n: DETECTORS[n][0](d, m, c), names))
    else:
        batches = [DETECTORS[n][0](d, m, c) for n in names]
    findings = [f for batch in batches for f in batch]
    if catalog is not None:
        findings = [replace(f, dimension=catalog.lookup(f.problem_id).primary_dimension) for f in findings]
    return sort_findings(findings)


ANNOTATION_HEADER = ["path", "problem_id", "author", "note"]


def ingest_annotations(data: bytes, catalog: Catalog | None = None, dataset: Dataset | None = None) -> list[Finding]:
    """Turn a manual annotation CSV into info-level findings.

    When ``dataset`` is given every path must resolve in it.
    """
    catalog = catalog or builtin_catalog()
    reader = csv.reader(io.StringIO(data.decode("utf-8")))
    out = []
    for lineno, row in enumerate(reader, start=1):
        if not row or (lineno == 1 and row == ANNOTATION_HEADER):
            continue
        if len(row) != 4:
            raise MalformedInput(f"annotation rows need 4 columns, got {len(row)}", line=lineno)
        path_text, pid, author, note = row
        problem = catalog.lookup(pid.strip())
        path = Path.parse(path_text)
        evidence = ""
        if dataset is not None:
            node = path.resolve(dataset)
            if isinstance(node, Property):
                evidence = node.value.lexical
        out.append(Finding(
            problem_id=problem.id,
            dimension=problem.primary_dimension,
            path=path,
            message=f"{note} ({author})" if author else note,
            evidence=evidence,
            severity="info",
            dataset=dataset.id if dataset is not None else "",
        ))
    return sort_findings(out)

