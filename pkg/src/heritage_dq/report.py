"""Per-dimension aggregation of findings and report serialization."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .detectors import Finding, sort_findings
from .errors import ConfigMismatch, DanglingFindingPath, MalformedInput, UnresolvablePath, UnsupportedFormat
from .model import Dataset
from .taxonomy import DIMENSION_IDS, Catalog, dimension_index

FORMATS = ("json", "csv", "text")


@dataclass(frozen=True)
class DimensionProfile:
    dimension: str
    finding_count: int
    affected_elements: int
    density: float  # findings per 1000 properties


@dataclass(frozen=True)
class Totals:
    elements: int = 0
    properties: int = 0
    links: int = 0
    findings: int = 0


@dataclass(frozen=True)
class QualityReport:
    dataset_id: str
    config_digest: str
    profiles: tuple[DimensionProfile, ...] = ()
    findings: tuple[Finding, ...] = ()
    totals: Totals = field(default_factory=Totals)
    created_at: str | None = None

    def profile(self, dim: str) -> DimensionProfile | None:
        for p in self.profiles:
            if p.dimension == dim:
                return p
        return None


def config_digest(*parts) -> str:
    """SHA-256 over the canonical JSON of the given config objects."""
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":"), ensure_ascii=False, default=str)
    return "sha256:" + hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _density(count: int, properties: int) -> float:
    return 1000.0 * count / properties if properties else 0.0


def _profiles(findings: Sequence[Finding], properties: int, include_zero: bool) -> tuple[DimensionProfile, ...]:
    counts: dict[str, int] = {}
    elements: dict[str, set] = {}
    for f in findings:
        counts[f.dimension] = counts.get(f.dimension, 0) + 1
        elements.setdefault(f.dimension, set()).add((f.dataset, f.path.element))
    dims = DIMENSION_IDS if include_zero else sorted(counts, key=dimension_index)
    return tuple(
        DimensionProfile(d, counts.get(d, 0), len(elements.get(d, ())), _density(counts.get(d, 0), properties))
        for d in dims
    )


def aggregate(
    findings: Iterable[Finding],
    dataset: Dataset,
    catalog: Catalog | None = None,
    *,
    config_digest: str = "",
    include_zero: bool = False,
    created_at: str | None = None,
) -> QualityReport:
    findings = sort_findings(findings)
    for f in findings:
        try:
            f.path.resolve(dataset)
        except UnresolvablePath as exc:
            raise DanglingFindingPath(str(exc)) from None
        if catalog is not None:
            catalog.lookup(f.problem_id)
    props = dataset.property_count
    totals = Totals(len(dataset.elements), props, dataset.link_count, len(findings))
    return QualityReport(
        dataset_id=dataset.id,
        config_digest=config_digest,
        profiles=_profiles(findings, props, include_zero),
        findings=tuple(findings),
        totals=totals,
        created_at=created_at,
    )


def merge(reports: Sequence[QualityReport]) -> QualityReport:
    """Combine reports of independently scanned datasets."""
    if not reports:
        raise ValueError("nothing to merge")
    digests = {r.config_digest for r in reports}
    if len(digests) > 1:
        raise ConfigMismatch(f"reports were produced with different configs: {sorted(digests)}")
    findings = sort_findings(f for r in reports for f in r.findings)
    totals = Totals(
        elements=sum(r.totals.elements for r in reports),
        properties=sum(r.totals.properties for r in reports),
        links=sum(r.totals.links for r in reports),
        findings=sum(r.totals.findings for r in reports),
    )
    include_zero = any(len(r.profiles) == len(DIMENSION_IDS) for r in reports)
    stamps = [r.created_at for r in reports if r.created_at]
    return QualityReport(
        dataset_id="+".join(sorted(r.dataset_id for r in reports if r.dataset_id)),
        config_digest=digests.pop(),
        profiles=_profiles(findings, totals.properties, include_zero),
        findings=tuple(findings),
        totals=totals,
        created_at=max(stamps) if stamps and len(stamps) == len(reports) else None,
    )


def empty_report(config_digest: str = "") -> QualityReport:
    return QualityReport(dataset_id="", config_digest=config_digest)


# --- serialization --------------------------------------------------------


def report_to_dict(r: QualityReport) -> dict:
    out = {"dataset_id": r.dataset_id}
    if r.created_at is not None:
        out["created_at"] = r.created_at
    out["config_digest"] = r.config_digest
    out["totals"] = {
        "elements": r.totals.elements,
        "properties": r.totals.properties,
        "links": r.totals.links,
        "findings": r.totals.findings,
    }
    out["profiles"] = [
        {
            "dimension": p.dimension,
            "finding_count": p.finding_count,
            "affected_elements": p.affected_elements,
            "density": p.density,
        }
        for p in r.profiles
    ]
    out["findings"] = [f.to_dict() for f in r.findings]
    return out


def report_from_dict(raw: dict) -> QualityReport:
    return QualityReport(
        dataset_id=raw["dataset_id"],
        config_digest=raw["config_digest"],
        profiles=tuple(DimensionProfile(**p) for p in raw["profiles"]),
        findings=tuple(Finding.from_dict(f) for f in raw["findings"]),
        totals=Totals(**raw["totals"]),
        created_at=raw.get("created_at"),
    )


def parse_report(data: bytes) -> QualityReport:
    try:
        return report_from_dict(json.loads(data.decode("utf-8")))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise MalformedInput(f"not a report document: {exc!r}") from None


CSV_HEADER = [
    "record", "dataset", "path", "problem_id", "dimension", "severity", "evidence", "message",
    "count", "affected_elements", "density",
]


def _csv(r: QualityReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for f in r.findings:
        w.writerow(["finding", f.dataset, str(f.path), f.problem_id, f.dimension, f.severity,
                    f.evidence, f.message, "", "", ""])
    for p in r.profiles:
        w.writerow(["profile", r.dataset_id, "", "", p.dimension, "", "", "",
                    p.finding_count, p.affected_elements, f"{p.density:.4f}"])
    t = r.totals
    w.writerow(["totals", r.dataset_id, "", "", "", "", "", "", t.findings, t.elements,
                f"{_density(t.findings, t.properties):.4f}"])
    return buf.getvalue()


def _text(r: QualityReport) -> str:
    t = r.totals
    lines = [f"Quality report for {r.dataset_id or '(empty)'}"]
    if r.created_at:
        lines.append(f"created: {r.created_at}")
    lines.append(f"config: {r.config_digest}")
    lines.append(f"elements: {t.elements}  properties: {t.properties}  links: {t.links}  findings: {t.findings}")
    lines.append("")
    lines.append(f"{'dimension':<24}{'findings':>9}{'elements':>10}{'per 1000':>10}")
    for p in sorted(r.profiles, key=lambda p: (-p.finding_count, p.dimension)):
        lines.append(f"{p.dimension:<24}{p.finding_count:>9}{p.affected_elements:>10}{p.density:>10.2f}")
    if r.findings:
        lines.append("")
        for f in r.findings:
            where = f"{f.dataset}:{f.path}" if f.dataset else str(f.path)
            lines.append(f"[{f.severity}] {f.problem_id} {f.dimension} {where}: {f.message}")
    return "\n".join(lines) + "\n"


def serialize_report(r: QualityReport, fmt: str = "json") -> bytes:
    if fmt == "json":
        text = json.dumps(report_to_dict(r), indent=2, ensure_ascii=False) + "\n"
    elif fmt == "csv":
        text = _csv(r)
    elif fmt == "text":
        text = _text(r)
    else:
        raise UnsupportedFormat(f"unsupported report format {fmt!r}; use one of {', '.join(FORMATS)}")
    return text.encode("utf-8")
