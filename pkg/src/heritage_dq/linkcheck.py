"""Resolvability checks for interlink targets.

Offline mode answers from a fixture map and is fully deterministic; live
mode issues HTTP ``HEAD`` requests (``GET`` when the server refuses ``HEAD``)
and follows up to five redirects by hand.
"""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Union
from urllib.parse import urljoin

from . import __version__
from .detectors import Finding, SEVERITY
from .errors import ConfigError, InvalidUri, MalformedInput
from .model import Dataset, Link, Path, is_absolute_uri
from .taxonomy import builtin_catalog

USER_AGENT = f"heritage-dq-linkcheck/{__version__}"
MAX_REDIRECTS = 5

FixtureEntry = Union[int, str, tuple]  # status code, "timeout", or (code, location)


@dataclass(frozen=True)
class LinkStatus:
    uri: str
    state: str  # resolvable | unresolvable | timeout | redirected
    status_code: int | None = None
    final_uri: str | None = None
    elapsed_ms: float = 0.0
    attempts: int = 1

    def __post_init__(self):
        if self.state == "redirected" and not self.final_uri:
            raise ValueError("redirected status needs final_uri")
        if self.state == "resolvable" and not (self.status_code and 200 <= self.status_code < 300):
            raise ValueError("resolvable status needs a 2xx code")

    @property
    def ok(self) -> bool:
        return self.state in ("resolvable", "redirected")


@dataclass(frozen=True)
class ResolverConfig:
    mode: str = "offline"
    timeout: float = 10.0
    retries: int = 1
    max_parallel: int = 4
    fixture_map: Mapping[str, FixtureEntry] | None = None

    def __post_init__(self):
        if self.mode not in ("live", "offline"):
            raise ConfigError(f"unknown resolver mode {self.mode!r}")
        if self.mode == "offline" and self.fixture_map is None:
            raise ConfigError("offline mode requires a fixture map")
        if self.max_parallel < 1:
            raise ConfigError("max_parallel must be >= 1")
        if self.retries < 0:
            raise ConfigError("retries must be >= 0")


def load_fixture(data: bytes) -> dict[str, FixtureEntry]:
    """Read ``uri,status[,location]`` rows; status is a code or ``timeout``."""
    out: dict[str, FixtureEntry] = {}
    reader = csv.reader(io.StringIO(data.decode("utf-8")))
    for lineno, row in enumerate(reader, start=1):
        if not row or (lineno == 1 and row[:2] == ["uri", "status"]):
            continue
        if len(row) not in (2, 3):
            raise MalformedInput("fixture rows are uri,status[,location]", line=lineno)
        uri, status = row[0].strip(), row[1].strip()
        location = row[2].strip() if len(row) == 3 and row[2].strip() else None
        if status == "timeout":
            out[uri] = "timeout"
            continue
        try:
            code = int(status)
        except ValueError:
            raise MalformedInput(f"bad status {status!r}", line=lineno) from None
        out[uri] = (code, location) if location else code
    return out


class _Timeout(Exception):
    pass


Probe = Callable[[str], tuple[int, "str | None"]]
"""One request: returns (status code, Location header) or raises ``_Timeout``."""


def _fixture_probe(fixture: Mapping[str, FixtureEntry]) -> Probe:
    def probe(uri: str):
        entry = fixture.get(uri)
        if entry is None:
            return 0, None
        if entry == "timeout":
            raise _Timeout(uri)
        if isinstance(entry, tuple):
            return entry
        return int(entry), None

    return probe


def _live_probe(cfg: ResolverConfig) -> Probe:
    import httpx

    def probe(uri: str):
        headers = {"User-Agent": USER_AGENT}
        try:
            with httpx.Client(timeout=cfg.timeout, follow_redirects=False, trust_env=True, headers=headers) as client:
                r = client.head(uri)
                if r.status_code in (405, 501):
                    r = client.get(uri)
        except httpx.TimeoutException:
            raise _Timeout(uri) from None
        except httpx.HTTPError:
            return 0, None
        return r.status_code, r.headers.get("location")

    return probe


def check_uri(uri: str, cfg: ResolverConfig, *, probe: Probe | None = None) -> LinkStatus:
    if not is_absolute_uri(uri):
        raise InvalidUri(f"not an absolute URI: {uri!r}")
    if probe is None:
        probe = _fixture_probe(cfg.fixture_map) if cfg.mode == "offline" else _live_probe(cfg)
    clock = time.perf_counter if cfg.mode == "live" else (lambda: 0.0)
    start = clock()
    attempts = 0
    current = uri
    hops = 0
    while True:
        for _ in range(cfg.retries + 1):
            attempts += 1
            try:
                code, location = probe(current)
                break
            except _Timeout:
                continue
        else:
            return LinkStatus(uri, "timeout", None, None, (clock() - start) * 1000, attempts)
        if 300 <= code < 400 and location and hops < MAX_REDIRECTS:
            current = urljoin(current, location)
            hops += 1
            continue
        break
    elapsed = (clock() - start) * 1000
    if 200 <= code < 300:
        if hops:
            return LinkStatus(uri, "redirected", code, current, elapsed, attempts)
        return LinkStatus(uri, "resolvable", code, None, elapsed, attempts)
    return LinkStatus(uri, "unresolvable", code or None, current if hops else None, elapsed, attempts)


@dataclass
class LinkCheckResult:
    statuses: list[LinkStatus] = field(default_factory=list)
    references: dict[str, list[tuple[Path, Link]]] = field(default_factory=dict)
    findings: list[Finding] = field(default_factory=list)
    probes: int = 0


def check_dataset(d: Dataset, cfg: ResolverConfig, *, probe: Probe | None = None) -> LinkCheckResult:
    """Check each distinct interlink URI once; D05.5 finding per failure."""
    refs: dict[str, list[tuple[Path, Link]]] = {}
    for el in d.elements:
        for i, link in enumerate(el.links):
            if link.target_kind == "interlink":
                refs.setdefault(link.target, []).append((Path(el.id, link=i), link))
    uris = sorted(refs)
    with ThreadPoolExecutor(max_workers=cfg.max_parallel) as pool:
        statuses = list(pool.map(lambda u: check_uri(u, cfg, probe=probe), uris))
    problem = builtin_catalog().lookup("D05.5")
    findings = []
    for st in statuses:
        if st.ok:
            continue
        path = refs[st.uri][0][0]
        detail = f"HTTP {st.status_code}" if st.status_code else st.state
        findings.append(Finding(
            problem_id=problem.id,
            dimension=problem.primary_dimension,
            path=path,
            message=f"interlink target is not resolvable ({detail})",
            evidence=st.uri,
            severity=SEVERITY[problem.id],
            dataset=d.id,
        ))
    return LinkCheckResult(statuses, {u: refs[u] for u in uris}, findings, len(uris))
