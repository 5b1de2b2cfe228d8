"""Command-line front end.

Exit codes: 0 pass, 1 quality gate failed, 2 usage error, 3 I/O or parse
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import __version__
from . import taxonomy as tx
from .detectors import SEVERITIES, DetectorConfig, Finding, check_descriptor, ingest_annotations, run_all
from .errors import HeritageDQError, UnknownDimension, UnknownProblemId
from .linkcheck import ResolverConfig, check_dataset, load_fixture
from .model import (
    DEFAULT_MAPPING,
    Dataset,
    ModelDescriptor,
    XmlMapping,
    load_descriptor,
    parse_canonical,
    parse_xml,
    serialize_canonical,
)
from .report import QualityReport, aggregate, config_digest, merge, serialize_report
from .stats import CRITICAL_1PCT, matrix_csv, matrix_json, pairwise_independence, top_pairs

EXIT_OK, EXIT_GATE, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

# config-file keys handled here rather than by DetectorConfig
_RUN_KEYS = ("linkcheck", "fail_on", "format", "jobs")


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


@dataclass(frozen=True)
class FailOn:
    """Gate rule: more than ``max_count`` findings in ``dimension``, or any
    finding at or above ``severity``."""

    dimension: str | None = None
    max_count: int = 0
    severity: str | None = None

    @classmethod
    def parse(cls, text: str) -> "FailOn":
        text = text.strip()
        if text in SEVERITIES:
            return cls(severity=text)
        dim, sep, num = text.partition(":")
        if not sep:
            raise UsageError(f"--fail-on expects <dimension>:<max> or a severity, got {text!r}")
        try:
            tx.check_dimension(dim)
        except UnknownDimension as exc:
            raise UsageError(str(exc)) from None
        try:
            max_count = int(num)
        except ValueError:
            raise UsageError(f"--fail-on max must be an integer, got {num!r}") from None
        return cls(dimension=dim, max_count=max_count)

    def violated(self, findings: Sequence[Finding]) -> bool:
        if self.severity is not None:
            floor = SEVERITIES.index(self.severity)
            return any(SEVERITIES.index(f.severity) >= floor for f in findings)
        return sum(f.dimension == self.dimension for f in findings) > self.max_count


@dataclass
class RunConfig:
    inputs: list[Path] = field(default_factory=list)
    descriptor: ModelDescriptor = field(default_factory=ModelDescriptor)
    detectors: DetectorConfig = field(default_factory=DetectorConfig)
    catalog: tx.Catalog = field(default_factory=tx.builtin_catalog)
    mapping: XmlMapping = DEFAULT_MAPPING
    fmt: str = "json"
    deterministic: bool = False
    jobs: int = 1
    fail_on: FailOn | None = None
    resolver: ResolverConfig | None = None
    annotations: bytes | None = None

    def digest(self) -> str:
        resolver = None
        if self.resolver is not None:
            r = self.resolver
            resolver = {"mode": r.mode, "timeout": r.timeout, "retries": r.retries,
                        "fixture": sorted((k, str(v)) for k, v in (r.fixture_map or {}).items())}
        return config_digest(
            self.detectors.to_dict(),
            self.descriptor.to_dict(),
            tx.dump_catalog(self.catalog).decode("utf-8"),
            resolver,
        )


def _read(path: str | Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None


def _load_json(path: str | Path) -> dict:
    try:
        return json.loads(_read(path).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from None


def build_run_config(args: argparse.Namespace, *, need_inputs: bool = True) -> RunConfig:
    file_cfg: dict = {}
    base_dir = Path(".")
    if args.config:
        file_cfg = _load_json(args.config)
        base_dir = Path(args.config).parent
    run_opts = {k: file_cfg.pop(k) for k in _RUN_KEYS if k in file_cfg}
    rc = RunConfig()
    rc.detectors = DetectorConfig.from_dict(file_cfg, base_dir)
    inputs = [Path(p) for p in getattr(args, "inputs", [])]
    for p in inputs:
        if not p.exists():
            raise InputError(f"input not found: {p}")
    rc.inputs = sorted(inputs, key=str)
    if need_inputs and not rc.inputs:
        raise UsageError("no input files given")
    if args.model:
        rc.descriptor = load_descriptor(_read(args.model))
    if args.catalog:
        rc.catalog = tx.load_catalog(_read(args.catalog))
    if args.mapping:
        rc.mapping = XmlMapping.from_dict(_load_json(args.mapping))
    rc.fmt = args.format or run_opts.get("format") or "json"
    if rc.fmt not in ("json", "csv", "text"):
        raise UsageError(f"unknown format {rc.fmt!r}")
    rc.deterministic = bool(args.deterministic)
    rc.jobs = args.jobs if args.jobs is not None else int(run_opts.get("jobs", 1))
    if rc.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    fail_on = args.fail_on or run_opts.get("fail_on")
    rc.fail_on = FailOn.parse(fail_on) if fail_on else None
    if getattr(args, "annotations", None):
        if len(rc.inputs) != 1:
            raise UsageError("--annotations needs exactly one input file")
        rc.annotations = _read(args.annotations)
    rc.resolver = _resolver(args, run_opts.get("linkcheck", {}), base_dir)
    check_descriptor(rc.descriptor, rc.detectors)
    return rc


def _resolver(args: argparse.Namespace, opts: dict, base_dir: Path) -> ResolverConfig | None:
    fixture_path = args.link_fixture or (str(base_dir / opts["fixture"]) if "fixture" in opts else None)
    live = bool(args.live)
    if live and args.offline:
        raise UsageError("--live and --offline are mutually exclusive")
    if args.offline and not fixture_path:
        raise UsageError("--offline link checking needs --link-fixture")
    if not live and not fixture_path:
        return None
    kwargs = {k: opts[k] for k in ("timeout", "retries", "max_parallel") if k in opts}
    if args.jobs is not None:
        kwargs["max_parallel"] = args.jobs
    if live:
        return ResolverConfig(mode="live", **kwargs)
    return ResolverConfig(mode="offline", fixture_map=load_fixture(_read(fixture_path)), **kwargs)


def load_dataset(path: Path, mapping: XmlMapping = DEFAULT_MAPPING) -> Dataset:
    data = _read(path)
    if path.suffix.lower() == ".json":
        return parse_canonical(data)
    return parse_xml(data, mapping, source=str(path))


def _timestamp(rc: RunConfig) -> str | None:
    if rc.deterministic:
        return None
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat()


def _scan(path: Path, rc: RunConfig, digest: str, include_zero: bool) -> QualityReport:
    ds = load_dataset(path, rc.mapping)
    findings = run_all(ds, rc.descriptor, rc.detectors, catalog=rc.catalog)
    if rc.resolver is not None:
        findings += check_dataset(ds, rc.resolver).findings
    if rc.annotations is not None:
        findings += ingest_annotations(rc.annotations, rc.catalog, ds)
    return aggregate(findings, ds, rc.catalog, config_digest=digest, include_zero=include_zero,
                     created_at=_timestamp(rc))


def run_pipeline(rc: RunConfig, *, include_zero: bool = False) -> QualityReport:
    digest = rc.digest()
    if rc.jobs > 1 and len(rc.inputs) > 1:
        with ThreadPoolExecutor(max_workers=rc.jobs) as pool:
            reports = list(pool.map(lambda p: _scan(p, rc, digest, include_zero), rc.inputs))
    else:
        reports = [_scan(p, rc, digest, include_zero) for p in rc.inputs]
    if len(reports) == 1:
        return reports[0]
    merged = merge(reports)
    return merged if rc.deterministic else _restamp(merged, rc)


def _restamp(r: QualityReport, rc: RunConfig) -> QualityReport:
    return replace(r, created_at=_timestamp(rc))


def _emit(data: bytes, args: argparse.Namespace) -> None:
    if getattr(args, "output", None):
        try:
            Path(args.output).write_bytes(data)
        except OSError as exc:
            raise InputError(f"cannot write {args.output}: {exc.strerror or exc}") from None
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()


# --- commands -------------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    rc = build_run_config(args)
    report = run_pipeline(rc)
    _emit(serialize_report(report, rc.fmt), args)
    if rc.fail_on is not None and rc.fail_on.violated(report.findings):
        return EXIT_GATE
    return EXIT_OK


def cmd_profile(args: argparse.Namespace) -> int:
    rc = build_run_config(args)
    report = run_pipeline(rc, include_zero=True)
    _emit(serialize_report(report, rc.fmt), args)
    return EXIT_OK


def _active_catalog(args: argparse.Namespace) -> tx.Catalog:
    return tx.load_catalog(_read(args.catalog)) if args.catalog else tx.builtin_catalog()


def cmd_catalog(args: argparse.Namespace) -> int:
    catalog = _active_catalog(args)
    fmt = args.format or "text"
    if args.action == "list":
        if fmt == "csv":
            _emit(tx.dump_catalog(catalog), args)
        elif fmt == "json":
            rows = [_problem_dict(p) for p in catalog]
            _emit((json.dumps(rows, indent=2, ensure_ascii=False) + "\n").encode("utf-8"), args)
        else:
            lines = [f"{p.id}\t{p.title}\t{p.primary_dimension}" for p in catalog]
            _emit(("\n".join(lines) + "\n").encode("utf-8"), args)
        return EXIT_OK
    if not args.problem_id:
        raise UsageError("catalog show needs a problem id")
    try:
        p = catalog.lookup(args.problem_id)
    except UnknownProblemId as exc:
        raise UsageError(f"UnknownProblemId: {exc}") from None
    rec = _problem_dict(p)
    if fmt == "json":
        _emit((json.dumps(rec, indent=2, ensure_ascii=False) + "\n").encode("utf-8"), args)
    else:
        dim = tx.dimension(p.primary_dimension)
        lines = [
            f"id: {p.id}",
            f"title: {p.title}",
            f"primary dimension: {p.primary_dimension} ({dim.parent}, {dim.category})",
            f"other dimensions: {', '.join(rec['other_dimensions']) or '-'}",
            f"detectable: {p.detectable}",
        ]
        _emit(("\n".join(lines) + "\n").encode("utf-8"), args)
    return EXIT_OK


def _problem_dict(p: tx.ProblemType) -> dict:
    return {
        "id": p.id,
        "title": p.title,
        "primary_dimension": p.primary_dimension,
        "other_dimensions": sorted(p.other_dimensions, key=tx.dimension_index),
        "detectable": p.detectable,
    }


def cmd_stats(args: argparse.Namespace) -> int:
    if args.matrix:
        m = tx.load_matrix(_read(args.matrix), require_primary=False)
    else:
        m = tx.catalog_matrix(_active_catalog(args))
    om = pairwise_independence(m, args.critical, workers=args.jobs or 1)
    fmt = args.format or "text"
    if fmt == "csv":
        _emit(matrix_csv(om), args)
        return EXIT_OK
    dist = tx.distribution(m)
    top = top_pairs(om, args.top) if args.top else []
    if fmt == "json":
        doc = json.loads(matrix_json(om))
        doc["problems"] = len(m.problems)
        doc["distribution"] = [
            {"dimension": d, "count": c, "percent": pct} for d, (c, pct) in dist.items()
        ]
        doc["top"] = [{"a": r.pair[0], "b": r.pair[1], "statistic": r.statistic} for r in top]
        _emit((json.dumps(doc, indent=2) + "\n").encode("utf-8"), args)
        return EXIT_OK
    total = sum(c for c, _ in dist.values())
    lines = [f"problems: {len(m.problems)}  assignments: {total}", ""]
    for category in ("intrinsic", "contextual"):
        lines.append(f"{category.capitalize()} dimensions")
        lines.append(f"  {'dimension':<24}{'count':>6}{'%':>9}")
        for dim in tx.registry():
            if dim.category == category and dim.id in dist:
                c, pct = dist[dim.id]
                lines.append(f"  {dim.id:<24}{c:>6}{pct:>8.2f}%")
        lines.append("")
    for d, why in om.excluded:
        lines.append(f"excluded: {d} ({why})")
    lines.append(f"retained dimensions: {len(om.dimensions)}  pairs: {len(om.results)}  "
                 f"significant (> {om.critical_value:g}): {om.significant_count}")
    lines.append("")
    lines.append(matrix_csv(om).decode("utf-8").rstrip("\n"))
    if top:
        lines.append("")
        lines.append(f"top {len(top)} pairs")
        for rank, r in enumerate(top, 1):
            mark = "*" if r.significant else " "
            lines.append(f"  {rank:>2}. {r.pair[0]} / {r.pair[1]}  {r.statistic:.2f}{mark}")
    _emit(("\n".join(lines) + "\n").encode("utf-8"), args)
    return EXIT_OK


def cmd_linkcheck(args: argparse.Namespace) -> int:
    rc = build_run_config(args)
    if rc.resolver is None:
        raise UsageError("linkcheck needs --link-fixture (offline) or --live")
    fmt = rc.fmt
    statuses, findings = [], []
    for path in rc.inputs:
        ds = load_dataset(path, rc.mapping)
        res = check_dataset(ds, rc.resolver)
        for st in res.statuses:
            statuses.append((ds.id, st, len(res.references[st.uri])))
        findings += res.findings
    if fmt == "json":
        doc = {
            "statuses": [
                {"dataset": ds_id, "uri": st.uri, "state": st.state, "status_code": st.status_code,
                 "final_uri": st.final_uri, "attempts": st.attempts, "references": refs,
                 **({} if rc.deterministic else {"elapsed_ms": round(st.elapsed_ms, 3)})}
                for ds_id, st, refs in statuses
            ],
            "findings": [f.to_dict() for f in findings],
        }
        out = json.dumps(doc, indent=2, ensure_ascii=False) + "\n"
    else:
        lines = ["dataset,uri,state,status_code,final_uri,attempts,references"]
        for ds_id, st, refs in statuses:
            lines.append(f"{ds_id},{st.uri},{st.state},{st.status_code or ''},{st.final_uri or ''},"
                         f"{st.attempts},{refs}")
        out = "\n".join(lines) + "\n"
    _emit(out.encode("utf-8"), args)
    if rc.fail_on is not None and rc.fail_on.violated(findings):
        return EXIT_GATE
    return EXIT_OK


def cmd_export(args: argparse.Namespace) -> int:
    what = args.what
    if what == "dataset":
        if len(args.inputs) != 1:
            raise UsageError("export dataset needs exactly one input")
        mapping = XmlMapping.from_dict(_load_json(args.mapping)) if args.mapping else DEFAULT_MAPPING
        path = Path(args.inputs[0])
        if not path.exists():
            raise InputError(f"input not found: {path}")
        _emit(serialize_canonical(load_dataset(path, mapping)), args)
    elif what == "catalog":
        _emit(tx.dump_catalog(_active_catalog(args)), args)
    elif what == "matrix":
        _emit(tx.save_matrix(tx.catalog_matrix(_active_catalog(args))), args)
    elif what == "table1":
        _emit(tx.save_matrix(tx.table1_matrix()), args)
    return EXIT_OK


# --- parser ---------------------------------------------------------------


def _add_global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    def d(value):
        return argparse.SUPPRESS if suppress else value

    g = p.add_argument_group("global options")
    g.add_argument("--model", default=d(None), help="model descriptor JSON")
    g.add_argument("--config", default=d(None), help="detector/run config JSON")
    g.add_argument("--catalog", default=d(None), help="problem catalog CSV (default: built-in)")
    g.add_argument("--mapping", default=d(None), help="XML mapping JSON")
    g.add_argument("--format", choices=("json", "csv", "text"), default=d(None))
    g.add_argument("--offline", action="store_true", default=d(False), help="offline link checking only")
    g.add_argument("--live", action="store_true", default=d(False), help="allow live HTTP link checks")
    g.add_argument("--link-fixture", default=d(None), help="CSV uri,status map for offline link checks")
    g.add_argument("--deterministic", action="store_true", default=d(False), help="omit timestamps")
    g.add_argument("--jobs", type=int, default=d(None), metavar="N")
    g.add_argument("--fail-on", default=d(None), metavar="DIM:MAX|SEVERITY")
    g.add_argument("--output", "-o", default=d(None), help="write to file instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heritage-dq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        sp = sub.add_parser(name, help=help_text)
        _add_global_flags(sp, suppress=True)
        sp.set_defaults(func=func)
        return sp

    sp = add("validate", cmd_validate, "scan records and apply the --fail-on gate")
    sp.add_argument("inputs", nargs="+")
    sp.add_argument("--annotations", help="manual annotation CSV (path,problem_id,author,note)")

    sp = add("profile", cmd_profile, "scan records and report all dimensions")
    sp.add_argument("inputs", nargs="+")
    sp.add_argument("--annotations")

    sp = add("catalog", cmd_catalog, "list or show catalog problems")
    sp.add_argument("action", choices=("list", "show"))
    sp.add_argument("problem_id", nargs="?")

    sp = add("stats", cmd_stats, "dimension distribution and pairwise chi-square analysis")
    sp.add_argument("matrix", nargs="?", help="assignment matrix CSV (default: catalog primaries)")
    sp.add_argument("--critical", type=float, default=CRITICAL_1PCT)
    sp.add_argument("--top", type=int, default=0)

    sp = add("linkcheck", cmd_linkcheck, "check interlink targets")
    sp.add_argument("inputs", nargs="+")

    sp = add("export", cmd_export, "write canonical dataset, catalog or matrix files")
    sp.add_argument("what", choices=("dataset", "catalog", "matrix", "table1"))
    sp.add_argument("inputs", nargs="*")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"heritage-dq: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, HeritageDQError) as exc:
        print(f"heritage-dq: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
