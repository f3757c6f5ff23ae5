import json
import statistics

import numpy as np
import pytest

from cardsim import llmgate
from cardsim.errors import ScreeningError
from cardsim.llmgate import MockTransport, ModelEndpoint
from cardsim.cluster import kmeans, mds_embed
from cardsim.metrics import nmi
from cardsim.model import Clustering, serialize_raw_results
from cardsim.pipeline import (
    CellResult,
    GroundTruth,
    RunPlan,
    cell_seed,
    evaluate_cell,
    ground_truth_clustering,
    load_manifest,
    run,
    summarize_variability,
)
from cardsim.simmatrix import build_similarity, clustering_to_matrix, complement
from cardsim.validate import validate_clustering_output

from synth import planted_groups, planted_results

TRUTH10 = [0, 0, 0, 0, 1, 1, 1, 2, 2, 2]


def _ground(results, seed=0):
    return GroundTruth(ground_truth_clustering(results, seed),
                       complement(build_similarity(results)))


def _mock(name="mock", responses=("x",), large=False):
    return ModelEndpoint("mock", name, responses=tuple(responses), large_output=large)


def test_ground_truth_planted():
    res = planted_results(n_cards=12, k=3, participants=10)
    lab = ground_truth_clustering(res, 0)
    truth = Clustering.from_labels(res.config.card_ids, planted_groups(12, 3))
    assert nmi(lab.clustering, truth) == 1.0


def test_ground_truth_requires_screening():
    res = planted_results(n_cards=8, k=2, participants=5)
    with pytest.raises(ScreeningError) as exc:
        ground_truth_clustering(res, 0)
    assert exc.value.violations == ["min-participants", "min-cards"]
    assert ground_truth_clustering(res, 0, waive_screening=True).k >= 2


def test_real10_ground_truth(real10):
    g = _ground(real10)
    assert g.clustering.same_partition(Clustering.from_labels(range(10), TRUTH10))


def test_p3_identical_to_ground(real10):
    g = _ground(real10)
    cell = evaluate_cell("p3", "m", 1, g.clustering, g, seed=1, permutations=199)
    a = cell.agreement
    assert (a.nmi, a.ari, a.edit_distance) == (1.0, 1.0, 0)


def test_p2_identical_matrix(real10):
    g = _ground(real10)
    sim = build_similarity(real10)
    cell = evaluate_cell("p2", "m", 1, sim.reorder(tuple(reversed(sim.cards))), g, seed=0,
                         permutations=199)
    assert cell.agreement.mantel_r == pytest.approx(1.0, abs=1e-12)
    assert cell.clustering.same_partition(g.clustering)


def test_p1_path(real10):
    g = _ground(real10)
    cell = evaluate_cell("p1", "m", 1, real10, g, seed=0, permutations=199)
    assert cell.agreement.nmi == 1.0
    assert cell.k == 3 and cell.no_knee is False
    assert cell.knee_curvature is not None and cell.knee_curvature != 0


@pytest.mark.parametrize("k", [2, 3, 4, 6])
def test_reverse_matrix_recovers_partition_at_true_k(k):
    cl = Clustering.from_labels(range(12), planted_groups(12, k))
    km = kmeans(mds_embed(complement(clustering_to_matrix(cl, tuple(range(12))))), k, 0)
    assert km.clustering.same_partition(cl)


def test_cell_seed_stable():
    a = cell_seed(1, "s", "p3", "m", 2)
    assert a == cell_seed(1, "s", "P3", "m", 2)
    assert a != cell_seed(1, "s", "p3", "m", 3)
    assert 0 <= a < 2 ** 63


def _plan(real10, endpoints, variants=("p3",), trials=4, **kw):
    return RunPlan(real10.config, real10, variants, endpoints, trials_per_cell=trials,
                   master_seed=3, permutations=199, **kw)


def test_run_deterministic_mock_zero_sd(real10, fixtures, tmp_path):
    canned = (fixtures / "p3_response.txt").read_text(encoding="utf-8")
    plan = _plan(real10, {"mock": _mock(responses=(canned,))})
    out = run(plan, out_dir=tmp_path / "a")
    assert len(out.cells) == 4 and all(c.ok for c in out.cells)
    recs = {json.dumps(c.agreement.as_record(), sort_keys=True) for c in out.cells}
    assert len({json.dumps({k: v for k, v in json.loads(r).items() if k != "mantel_p"})
                for r in recs}) == 1
    (row,) = out.variability
    assert row.trials == 4
    assert all(row.sd[m] == 0.0 for m in ("nmi", "ari", "edit_distance", "mantel_r"))
    truth = json.loads((tmp_path / "a" / "ground_truth.json").read_text(encoding="utf-8"))
    assert truth["k"] == 3 and isinstance(truth["knee_curvature"], float)
    again = run(plan, out_dir=tmp_path / "b")
    for c in ("cells/p3/mock/trial-001.json", "summary.csv", "variability.csv"):
        assert (tmp_path / "a" / c).read_bytes() == (tmp_path / "b" / c).read_bytes()
    assert [c.as_dict() for c in again.cells] == [c.as_dict() for c in out.cells]


def test_distinct_outputs_sd_matches_hand_computation(real10, fixtures, study10):
    valid = (fixtures / "problems" / "valid_clustering.txt").read_text(encoding="utf-8")
    canned = (fixtures / "p3_response.txt").read_text(encoding="utf-8")
    perfect = "categoryName,cardName\n" + "".join(
        f"g{g},{lab}\n" for g, lab in zip(TRUTH10, study10.labels))
    responses = [valid, canned, perfect, canned]
    plan = _plan(real10, {"mock": _mock(responses=responses)})
    out = run(plan, transports={"mock": MockTransport(responses)})
    nmis = [c.agreement.nmi for c in out.cells]
    edits = [c.agreement.edit_distance for c in out.cells]
    assert edits == [0, 1, 0, 1]
    (row,) = out.variability
    assert row.sd["nmi"] == pytest.approx(statistics.stdev(nmis), abs=1e-15)
    # sample SD of 0, 1, 0, 1 is sqrt(1/3)
    assert row.sd["edit_distance"] == pytest.approx(np.sqrt(1 / 3), abs=1e-15)


def test_failing_endpoint_isolated(real10, fixtures):
    canned = (fixtures / "p3_response.txt").read_text(encoding="utf-8")
    omitted = (fixtures / "problems" / "row1_omitted.txt").read_text(encoding="utf-8")
    plan = _plan(real10, {"good": _mock("good", (canned,)), "bad": _mock("bad", (omitted,))},
                 trials=2)
    out = run(plan)
    status = {(c.model_id, c.trial_index): c.status for c in out.cells}
    assert status == {("good", 1): "ok", ("good", 2): "ok", ("bad", 1): "failed",
                      ("bad", 2): "failed"}
    bad = [c for c in out.cells if c.model_id == "bad"][0]
    assert bad.attempts == [["OMITTED_CARDS"]] * 4
    assert [r.model_id for r in out.variability] == ["good"]


def test_transport_failure_isolated(real10):
    plan = _plan(real10, {"down": _mock("down")}, trials=1)
    out = run(plan, transports={"down": MockTransport([llmgate.AuthenticationError("401")])})
    assert out.cells[0].status == "failed" and "AuthenticationError" in out.cells[0].error


def test_large_output_variants_fail_cleanly(real10):
    plan = _plan(real10, {"m": _mock()}, variants=("p1",), trials=1)
    out = run(plan)
    assert out.cells[0].status == "failed" and "large_output" in out.cells[0].error


def test_p1_run_through_mock(real10, study10):
    raw = serialize_raw_results(real10)
    plan = _plan(real10, {"big": _mock("big", (raw,), large=True)}, variants=("p1",), trials=2)
    out = run(plan)
    assert all(c.ok and c.agreement.nmi == 1.0 for c in out.cells)


def test_resume_skips_completed_cells(real10, fixtures, tmp_path):
    canned = (fixtures / "p3_response.txt").read_text(encoding="utf-8")
    plan = _plan(real10, {"mock": _mock(responses=(canned,))}, trials=2)
    run(plan, out_dir=tmp_path)
    counting = MockTransport([canned])
    (tmp_path / "cells/p3/mock/trial-002.json").unlink()
    out = run(plan, out_dir=tmp_path, transports={"mock": counting})
    assert len(counting.requests) == 1
    assert all(c.ok for c in out.cells)


def test_parallel_matches_serial(real10, fixtures):
    canned = (fixtures / "p3_response.txt").read_text(encoding="utf-8")
    plan = _plan(real10, {"mock": _mock(responses=(canned,))}, variants=("p3", "p4"))
    a = run(plan)
    b = run(plan, workers=4)
    assert [c.as_dict() for c in a.cells] == [c.as_dict() for c in b.cells]


def test_variability_ignores_failed_and_single_trials():
    from cardsim.metrics import AgreementReport
    rep = lambda x: AgreementReport(x, x, 1, 2, 2, None, None)  # noqa: E731
    cells = [CellResult("p3", "m", 1, "ok", agreement=rep(0.5)),
             CellResult("p3", "m", 2, "ok", agreement=rep(0.7)),
             CellResult("p3", "m", 3, "failed"),
             CellResult("p4", "m", 1, "ok", agreement=rep(0.1))]
    (row,) = summarize_variability({"s": cells})
    assert (row.variant, row.trials) == ("p3", 2)
    assert row.sd["nmi"] == pytest.approx(statistics.stdev([0.5, 0.7]))
    assert row.sd["mantel_r"] is None
    two = summarize_variability({"s": cells, "t": cells[:2]})
    assert two[0].sd["nmi"] == pytest.approx(statistics.stdev([0.5, 0.7]))


def test_cell_result_round_trip(real10):
    g = _ground(real10)
    cell = evaluate_cell("p3", "m", 1, g.clustering, g, seed=1, permutations=99)
    assert CellResult.from_dict(json.loads(cell.to_json())).as_dict() == cell.as_dict()


def test_load_manifest(fixtures):
    plan = load_manifest(fixtures / "manifest.json")
    assert plan.trials_per_cell == 4 and list(plan.endpoints) == ["mock-p3"]
    assert [v.value for v in plan.variants] == ["p3", "p4"]
    assert "credentials_ref" in plan.manifest()["endpoints"]["mock-p3"]


def test_plan_rejects_zero_trials(real10):
    from cardsim.errors import ConfigError
    with pytest.raises(ConfigError):
        _plan(real10, {"m": _mock()}, trials=0)
