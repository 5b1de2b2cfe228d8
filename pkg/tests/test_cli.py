import csv
import io
import json

import pytest

from heritage_dq.cli import main
from heritage_dq.model import parse_canonical, parse_xml
from heritage_dq.report import parse_report
from heritage_dq.taxonomy import load_matrix, save_matrix, table1_matrix

from conftest import FIXTURES

MODEL = str(FIXTURES / "descriptor.json")
CONFIG = str(FIXTURES / "config.json")
CLEAN = str(FIXTURES / "clean.xml")
COMPOSITE = str(FIXTURES / "composite.xml")
LINKS = str(FIXTURES / "links.csv")


@pytest.fixture
def run(capsysbinary):
    def _run(*argv):
        code = main([str(a) for a in argv])
        out, err = capsysbinary.readouterr()
        return code, out.decode("utf-8"), err.decode("utf-8")

    return _run


def test_validate_clean_passes(run):
    code, out, _ = run("validate", CLEAN, "--model", MODEL, "--config", CONFIG, "--fail-on", "error", "--deterministic")
    assert code == 0
    assert parse_report(out.encode()).totals.findings == 0


def test_validate_gate_fails_on_logical_error(run, tmp_path):
    src = tmp_path / "bad.xml"
    src.write_text('<c id="bad"><person id="p1"><name>X</name><birthDate>1900</birthDate>'
                   "<deathDate>1890</deathDate></person></c>")
    code, out, _ = run("validate", src, "--model", MODEL, "--config", CONFIG, "--fail-on", "error")
    assert code == 1
    [f] = parse_report(out.encode()).findings
    assert (f.problem_id, f.dimension, f.severity) == ("D02.5.1", "logical_consistency", "error")


def test_dimension_gate(run):
    args = ("validate", COMPOSITE, "--model", MODEL, "--config", CONFIG)
    assert run(*args, "--fail-on", "compliance:1")[0] == 0
    assert run(*args, "--fail-on", "compliance:0")[0] == 1
    assert run(*args, "--fail-on", "beauty:1")[0] == 2


def test_flags_after_or_before_subcommand(run):
    a = run("--model", MODEL, "--config", CONFIG, "--deterministic", "validate", COMPOSITE)
    b = run("validate", COMPOSITE, "--model", MODEL, "--config", CONFIG, "--deterministic")
    assert a == b and a[0] == 0


def test_missing_model_file(run):
    code, _, err = run("validate", CLEAN, "--model", "/nonexistent/model.json")
    assert code == 3 and "cannot read" in err


def test_malformed_input(run, tmp_path):
    bad = tmp_path / "bad.xml"
    bad.write_text("<a><b></a>")
    assert run("validate", bad)[0] == 3


def test_usage_errors(run):
    assert run()[0] == 2
    assert run("frobnicate")[0] == 2
    assert run("validate", CLEAN, "--format", "yaml")[0] == 2
    assert run("validate", CLEAN, "--jobs", "0")[0] == 2


def test_deterministic_output_is_stable(run):
    args = ("validate", COMPOSITE, CLEAN, "--model", MODEL, "--config", CONFIG, "--deterministic", "--jobs", "2")
    first, second = run(*args), run(*args)
    assert first == second
    doc = json.loads(first[1])
    assert "created_at" not in doc
    assert doc["dataset_id"] == "clean+composite"


def test_nondeterministic_run_stamps_time(run):
    doc = json.loads(run("validate", CLEAN)[1])
    assert "created_at" in doc


def test_config_digest_tracks_config(run, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"vocabularies": {"technique": ["oil", "tempera", "watercolour"]},
                               "duplicate_threshold": 0.5}))
    a = json.loads(run("validate", CLEAN, "--model", MODEL, "--config", CONFIG, "--deterministic")[1])
    b = json.loads(run("validate", CLEAN, "--model", MODEL, "--config", cfg, "--deterministic")[1])
    assert a["config_digest"] != b["config_digest"]


def test_config_file_run_options(run, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"vocabularies": {"technique": ["oil"]}, "fail_on": "error", "format": "csv"}))
    code, out, _ = run("validate", COMPOSITE, "--model", MODEL, "--config", cfg)
    assert code == 1
    assert out.startswith("record,dataset,path")
    # flags win over the file
    assert run("validate", COMPOSITE, "--model", MODEL, "--config", cfg, "--fail-on", "coherence:0",
               "--format", "text")[0] == 0


def test_profile_lists_every_dimension(run):
    code, out, _ = run("profile", COMPOSITE, "--model", MODEL, "--config", CONFIG, "--deterministic")
    assert code == 0
    report = parse_report(out.encode())
    assert len(report.profiles) == 23
    assert report.profile("compliance").finding_count == 1


def test_annotations(run):
    code, out, _ = run("validate", CLEAN, "--model", MODEL, "--config", CONFIG,
                       "--annotations", FIXTURES / "annotations.csv", "--fail-on", "warning")
    assert code == 0
    [f] = parse_report(out.encode()).findings
    assert (f.problem_id, f.severity) == ("D08", "info")
    assert run("validate", CLEAN, COMPOSITE, "--annotations", FIXTURES / "annotations.csv")[0] == 2


def test_validate_with_offline_links(run):
    code, out, _ = run("validate", CLEAN, "--model", MODEL, "--config", CONFIG,
                       "--offline", "--link-fixture", LINKS, "--deterministic")
    assert code == 0
    assert parse_report(out.encode()).findings == ()


def test_report_formats(run):
    args = ("validate", COMPOSITE, "--model", MODEL, "--config", CONFIG, "--deterministic")
    rows = list(csv.reader(io.StringIO(run(*args, "--format", "csv")[1])))
    assert len(rows) == 1 + 5 + 5 + 1
    text = run(*args, "--format", "text")[1]
    assert text.startswith("Quality report for composite")


def test_output_file(run, tmp_path):
    out = tmp_path / "r.json"
    code, stdout, _ = run("validate", CLEAN, "--deterministic", "-o", out)
    assert code == 0 and stdout == ""
    assert parse_report(out.read_bytes()).dataset_id == "clean"


# --- catalog --------------------------------------------------------------


def test_catalog_list(run):
    code, out, _ = run("catalog", "list")
    assert code == 0
    rows = out.strip().splitlines()
    assert len(rows) == 51
    assert rows[0].split("\t") == ["D01.1.1", "Lack of data — empty fields", "internal_completeness"]
    assert rows[-1].split("\t")[0] == "D12"


def test_catalog_list_formats(run):
    assert len(json.loads(run("catalog", "list", "--format", "json")[1])) == 51
    assert len(run("catalog", "list", "--format", "csv")[1].strip().splitlines()) == 52


def test_catalog_show(run):
    code, out, _ = run("catalog", "show", "D06.2")
    assert code == 0
    assert "title: Imprecision" in out
    assert "primary dimension: precision" in out


def test_catalog_show_unknown(run):
    code, _, err = run("catalog", "show", "D99")
    assert code == 2 and "UnknownProblemId" in err


# --- stats ----------------------------------------------------------------


@pytest.fixture(scope="module")
def table1_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("m") / "table1.csv"
    path.write_bytes(save_matrix(table1_matrix()))
    return path


def test_stats_table1(run, table1_csv):
    code, out, _ = run("stats", table1_csv, "--top", "10")
    assert code == 0
    assert "compliance" in out and "13.51%" in out
    excluded = [line for line in out.splitlines() if line.startswith("excluded:")]
    assert [line.split()[1] for line in excluded] == ["relevance", "confidentiality", "integrity"]
    ranked = [line for line in out.splitlines() if line.strip()[:3] == "1. "]
    assert ranked and "causal_traceability" in ranked[0] and "temporal_traceability" in ranked[0]
    assert "33.31" in ranked[0]


def test_stats_json(run, table1_csv):
    doc = json.loads(run("stats", table1_csv, "--format", "json", "--top", "3")[1])
    assert doc["pair_count"] == 190
    assert doc["problems"] == 51
    assert [round(t["statistic"], 2) for t in doc["top"]] == [33.31, 23.33, 16.32]
    pct = {d["dimension"]: d["percent"] for d in doc["distribution"]}
    assert round(pct["syntactic_accuracy"], 2) == 6.49


def test_stats_csv_and_critical(run, table1_csv):
    out = run("stats", table1_csv, "--format", "csv")[1]
    assert len(out.strip().splitlines()) == 21
    strict = json.loads(run("stats", table1_csv, "--format", "json", "--critical", "30")[1])
    assert strict["significant_count"] == 1


def test_stats_default_matrix(run):
    code, out, _ = run("stats")
    assert code == 0
    assert "problems: 51  assignments: 51" in out


# --- linkcheck ------------------------------------------------------------


def test_linkcheck_requires_resolver(run):
    assert run("linkcheck", CLEAN)[0] == 2
    assert run("linkcheck", CLEAN, "--offline")[0] == 2
    assert run("linkcheck", CLEAN, "--offline", "--live", "--link-fixture", LINKS)[0] == 2


def test_linkcheck_offline(run, tmp_path):
    src = tmp_path / "links.xml"
    src.write_text(
        '<c id="l"><o id="a"><link role="sameAs" href="https://example.org/gone"/>'
        '<link role="doi" href="https://doi.org/10.1000/xyz"/></o>'
        '<o id="b"><link role="sameAs" href="https://example.org/gone"/></o></c>'
    )
    code, out, _ = run("linkcheck", src, "--link-fixture", LINKS, "--deterministic")
    assert code == 0
    doc = json.loads(out)
    assert [(s["uri"], s["state"], s["references"]) for s in doc["statuses"]] == [
        ("https://doi.org/10.1000/xyz", "redirected", 1),
        ("https://example.org/gone", "unresolvable", 2),
    ]
    assert [f["problem_id"] for f in doc["findings"]] == ["D05.5"]
    assert run("linkcheck", src, "--link-fixture", LINKS, "--fail-on", "availability:0")[0] == 1
    csv_out = run("linkcheck", src, "--link-fixture", LINKS, "--format", "csv")[1]
    assert csv_out.splitlines()[0] == "dataset,uri,state,status_code,final_uri,attempts,references"


# --- export ---------------------------------------------------------------


def test_export_dataset(run):
    code, out, _ = run("export", "dataset", FIXTURES / "three_objects.xml")
    assert code == 0
    assert parse_canonical(out.encode()) == parse_xml((FIXTURES / "three_objects.xml").read_bytes(),
                                                      source=str(FIXTURES / "three_objects.xml"))


def test_export_canonical_input_round_trip(run, tmp_path):
    canon = tmp_path / "c.json"
    canon.write_text(run("export", "dataset", COMPOSITE)[1])
    a = run("validate", COMPOSITE, "--model", MODEL, "--config", CONFIG, "--deterministic")[1]
    b = run("validate", canon, "--model", MODEL, "--config", CONFIG, "--deterministic")[1]
    assert json.loads(a)["findings"] == json.loads(b)["findings"]


def test_export_tables(run):
    assert len(run("export", "catalog")[1].strip().splitlines()) == 52
    m = load_matrix(run("export", "matrix")[1].encode())
    assert len(m.problems) == 51 and len(m.cells) == 51
    assert load_matrix(run("export", "table1")[1].encode()) == table1_matrix()


def test_export_usage(run):
    assert run("export", "dataset")[0] == 2
    assert run("export", "dataset", "/nope.xml")[0] == 3


def test_version(run):
    code, out, _ = run("--version")
    assert code == 0 and out.startswith("heritage-dq ")
