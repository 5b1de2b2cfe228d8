from pathlib import Path

import pytest

from heritage_dq.detectors import DetectorConfig, load_config
from heritage_dq.model import DataElement, Dataset, Link, ModelDescriptor, Property, load_descriptor, make_value

FIXTURES = Path(__file__).parent / "fixtures"


def build(*elements, dataset_id="t"):
    """Compact dataset builder.

    Each element is ``(id, type, [(name, lexical), ...], [(kind, target, role), ...])``;
    the links list may be omitted.
    """
    out = []
    for spec in elements:
        el_id, type_name, props = spec[:3]
        links = spec[3] if len(spec) > 3 else ()
        out.append(DataElement(
            el_id,
            type_name,
            tuple(Property(n, make_value(v)) for n, v in props),
            tuple(Link(*l) for l in links),
        ))
    return Dataset(dataset_id, tuple(out))


@pytest.fixture
def fixtures():
    return FIXTURES


@pytest.fixture(scope="session")
def descriptor() -> ModelDescriptor:
    return load_descriptor((FIXTURES / "descriptor.json").read_bytes())


@pytest.fixture(scope="session")
def config() -> DetectorConfig:
    return load_config((FIXTURES / "config.json").read_bytes(), FIXTURES)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
