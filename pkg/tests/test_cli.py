import json
import shutil

import pytest

from cardsim import cli
from cardsim.metrics import AgreementReport
from cardsim.model import parse_raw_results, parse_study_config
from cardsim.simmatrix import build_similarity, serialize_matrix


def run_cli(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def work(tmp_path, fixtures):
    for name in ("study10.json", "real10.csv", "p3_response.txt", "endpoints.json",
                 "manifest.json"):
        shutil.copy(fixtures / name, tmp_path / name)
    shutil.copytree(fixtures / "problems", tmp_path / "problems")
    return tmp_path


def test_simulate_p3_mock(capsys, work):
    code, out, _ = run_cli(capsys, "simulate", "--study", work / "study10.json", "--variant",
                           "p3", "--model", "mock-p3", "--endpoints", work / "endpoints.json",
                           "--trials", "2", "--out", work / "sim")
    assert code == 0
    written = work / "sim/p3/mock-p3/trial-001.csv"
    assert written.read_text(encoding="utf-8").startswith("categoryName,cardName\n")
    assert len(list((work / "sim/archive").rglob("*.json"))) == 2
    assert json.loads(out)["outputs"][1]["trial"] == 2


def test_simulate_refuses_p1_without_capability(capsys, work):
    code, _, err = run_cli(capsys, "simulate", "--study", work / "study10.json", "--variant",
                           "p1", "--model", "remote", "--endpoints", work / "endpoints.json",
                           "--out", work / "sim")
    assert code == 2 and "large_output" in err


def test_simulate_missing_credentials(capsys, work, monkeypatch):
    monkeypatch.delenv("CARDSIM_TEST_MISSING_KEY", raising=False)
    code, _, err = run_cli(capsys, "simulate", "--study", work / "study10.json", "--variant",
                           "p3", "--model", "remote", "--endpoints", work / "endpoints.json",
                           "--out", work / "sim")
    assert code == 2 and "CARDSIM_TEST_MISSING_KEY" in err


def test_simulate_exhaustion_exit_1(capsys, work):
    (work / "endpoints.json").write_text(json.dumps({"bad": {
        "provider_name": "mock", "response_files": ["problems/row1_omitted.txt"]}}))
    code, _, err = run_cli(capsys, "simulate", "--study", work / "study10.json", "--variant",
                           "p3", "--model", "bad", "--endpoints", work / "endpoints.json",
                           "--out", work / "sim", "--max-regenerations", "1")
    payload = json.loads(err)
    assert code == 1 and payload["attempts"] == [["OMITTED_CARDS"]] * 2


def test_simulate_transport_failure_exit_3(capsys, work, monkeypatch):
    import cardsim.llmgate as lg

    monkeypatch.setattr(lg, "transport_for",
                        lambda ep: lg.MockTransport([lg.AuthenticationError("HTTP 401")]))
    code, _, err = run_cli(capsys, "simulate", "--study", work / "study10.json", "--variant",
                           "p3", "--model", "mock-p3", "--endpoints", work / "endpoints.json",
                           "--out", work / "sim")
    assert code == 3 and json.loads(err)["error"] == "authentication"


def test_compare_identical_clustering(capsys, work, study10):
    ident = "categoryName,cardName\n" + "".join(
        f"g{g},{lab}\n" for g, lab in zip([0, 0, 0, 0, 1, 1, 1, 2, 2, 2], study10.labels))
    (work / "ident.csv").write_text(ident)
    code, out, _ = run_cli(capsys, "compare", "--study", work / "study10.json", "--real",
                           work / "real10.csv", "--synthetic", work / "ident.csv", "--format",
                           "clustering", "--permutations", "199")
    assert code == 0
    row = out.splitlines()[1].split()
    assert row[1:4] == ["1.000", "1.000", "0"]


def test_compare_fixture_matches_oracle(capsys, work):
    code, out, _ = run_cli(capsys, "compare", "--study", work / "study10.json", "--real",
                           work / "real10.csv", "--synthetic", work / "p3_response.txt",
                           "--format", "clustering", "--permutations", "199",
                           "--json", work / "rec.json")
    rec = json.loads((work / "rec.json").read_text())
    assert code == 0
    assert rec["nmi"] == 0.806005970403048
    assert rec["ari"] == pytest.approx(196 / 271, abs=1e-15)
    assert rec["edit_distance"] == 1


def test_compare_surfaces_omitted_cards(capsys, work):
    code, _, err = run_cli(capsys, "compare", "--study", work / "study10.json", "--real",
                           work / "real10.csv", "--synthetic", work / "problems/row1_omitted.txt",
                           "--format", "clustering")
    assert code == 1 and "OMITTED_CARDS" in err


def test_compare_matrix_and_raw(capsys, work, study10):
    real = parse_raw_results((work / "real10.csv").read_text(), study10)
    (work / "m.csv").write_text(serialize_matrix(build_similarity(real), study10))
    code, out, _ = run_cli(capsys, "compare", "--study", work / "study10.json", "--real",
                           work / "real10.csv", "--synthetic", work / "m.csv", "--format",
                           "matrix", "--permutations", "199")
    assert code == 0 and json.loads(out[out.index("{"):])["mantel_r"] == pytest.approx(1.0)
    code, out, _ = run_cli(capsys, "compare", "--study", work / "study10.json", "--real",
                           work / "real10.csv", "--synthetic", work / "real10.csv", "--format",
                           "raw", "--permutations", "199")
    rec = json.loads(out[out.index("{"):])
    assert code == 0 and rec["nmi"] == 1.0 and "co-occurrence" in rec["note"]


def test_compare_repeatable(capsys, work):
    args = ("compare", "--study", work / "study10.json", "--real", work / "real10.csv",
            "--synthetic", work / "p3_response.txt", "--format", "clustering",
            "--permutations", "199", "--seed", "4")
    assert run_cli(capsys, *args) == run_cli(capsys, *args)


def test_validate_and_screen(capsys, work):
    code, out, _ = run_cli(capsys, "validate", "--study", work / "study10.json", "--format",
                           "matrix", "--input", work / "problems/row5_asymmetric.txt")
    assert code == 1 and json.loads(out)["errors"][0]["code"] == "ASYMMETRIC_MATRIX"
    code, out, _ = run_cli(capsys, "screen", "--study", work / "study10.json", "--results",
                           work / "real10.csv")
    assert code == 0 and json.loads(out)["passed"]


def test_report_heatmaps(capsys, work, study10):
    real = parse_raw_results((work / "real10.csv").read_text(), study10)
    (work / "real.csv").write_text(serialize_matrix(build_similarity(real), study10))
    (work / "order.csv").write_text("categoryName,cardName\n" + "".join(
        f"g{i % 2},{lab}\n" for i, lab in enumerate(study10.labels)))
    rep = AgreementReport(0.8, 0.7, 1, 3, 3, 0.75, 0.001)
    (work / "rep.json").write_text(json.dumps(rep.as_record()))
    argv = ("report", "--study", work / "study10.json", "--matrices", work / "real.csv",
            work / "real.csv", "--titles", "real", "copy", "--order-by", work / "order.csv",
            "--reports", work / "rep.json", "--out", work / "fig")
    code, out, _ = run_cli(capsys, *argv)
    assert code == 0 and "0.800" in out
    first = (work / "fig/heatmap.svg").read_bytes()
    run_cli(capsys, *argv)
    assert (work / "fig/heatmap.svg").read_bytes() == first


def test_report_refuses_different_cards(capsys, work, fixtures):
    other = parse_study_config((fixtures / "roundtrip_study.json").read_text(encoding="utf-8"))
    shutil.copy(fixtures / "roundtrip_matrix.csv", work / "other.csv")
    code, _, err = run_cli(capsys, "report", "--study", work / "study10.json", "--matrices",
                           work / "other.csv", "--out", work / "fig")
    assert code == 2 and other.study_id not in err


def test_run_manifest(capsys, work):
    code, out, _ = run_cli(capsys, "run", "--manifest", work / "manifest.json", "--out",
                           work / "run")
    assert code == 0
    assert (work / "run/variability.csv").read_text().count("\n") == 3
    assert len(out.splitlines()) == 9


def test_bad_config_exit_2(capsys, work):
    (work / "bad.json").write_text("{")
    code, _, err = run_cli(capsys, "screen", "--study", work / "bad.json", "--results",
                           work / "real10.csv")
    assert code == 2 and "line 1" in err
    code, _, _ = run_cli(capsys, "screen", "--study", work / "missing.json", "--results", "x")
    assert code == 2
