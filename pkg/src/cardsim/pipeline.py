"""End-to-end runs: simulate, evaluate against ground truth, aggregate trials.

Results directory layout written by :func:`run`::

    <out>/manifest.json                      resolved plan (no secrets)
    <out>/ground_truth.json                  ground-truth clustering and K
    <out>/cells/<variant>/<model>/trial-NNN.json
    <out>/summary.csv                        one row per cell
    <out>/variability.csv                    one row per (variant, model)
    <out>/archive/...                        every LLM request (see llmgate)

A cell file that already exists is loaded instead of recomputed, so an
interrupted run resumes where it stopped.
"""

from __future__ import annotations

import hashlib
import json
import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import csvio, llmgate, validate
from .cluster import ClusterConfig, cluster_cards
from .errors import CardSimError, ConfigError, ScreeningError
from .metrics import AgreementReport, compare
from .model import (
    Clustering,
    filter_complete,
    parse_raw_results,
    parse_study_config,
    screen_study,
)
from .prompts import PromptVariant, render
from .simmatrix import build_similarity, clustering_to_matrix, complement

logger = logging.getLogger(__name__)

DEFAULT_TRIALS = 4
METRICS = ("nmi", "ari", "edit_distance", "mantel_r")


@dataclass(frozen=True)
class RunPlan:
    study: object  # StudyConfig
    ground_truth: object  # StudyResults
    variants: tuple
    endpoints: dict  # name -> ModelEndpoint
    trials_per_cell: int = DEFAULT_TRIALS
    master_seed: int = 0
    permutations: int = 9999
    max_regenerations: int = llmgate.DEFAULT_MAX_REGENERATIONS
    waive_screening: bool = False
    cluster_config: ClusterConfig = field(default_factory=ClusterConfig)

    def __post_init__(self):
        if self.trials_per_cell < 1:
            raise ConfigError("trials_per_cell must be >= 1", location="trials_per_cell")
        object.__setattr__(self, "variants",
                           tuple(PromptVariant.parse(v) for v in self.variants))

    def cells(self):
        """Every (variant, endpoint name, trial) in execution order."""
        return [(v, name, t) for v in self.variants for name in self.endpoints
                for t in range(1, self.trials_per_cell + 1)]

    def manifest(self):
        return {
            "study_id": self.study.study_id,
            "variants": [v.value for v in self.variants],
            "endpoints": {k: e.public_dict() for k, e in self.endpoints.items()},
            "trials_per_cell": self.trials_per_cell,
            "master_seed": self.master_seed,
            "permutations": self.permutations,
            "max_regenerations": self.max_regenerations,
            "waive_screening": self.waive_screening,
            "cluster_config": vars(self.cluster_config),
        }


def load_manifest(path):
    """Build a :class:`RunPlan` from a JSON manifest.

    Paths are relative to the manifest::

        {"study": "study.json", "ground_truth": "real.csv",
         "endpoints": "endpoints.json", "variants": ["p3", "p4"],
         "trials_per_cell": 4, "master_seed": 7}
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed manifest: {exc.msg}", location=f"line {exc.lineno}") from None
    base = path.parent
    for key in ("study", "ground_truth", "endpoints", "variants"):
        if key not in doc:
            raise ConfigError(f"missing manifest field {key!r}", location=key)
    config = parse_study_config((base / doc["study"]).read_text(encoding="utf-8"))
    truth = parse_raw_results((base / doc["ground_truth"]).read_text(encoding="utf-8"), config)
    endpoints_path = base / doc["endpoints"]
    endpoints = llmgate.load_endpoints(endpoints_path.read_text(encoding="utf-8"),
                                       base_dir=endpoints_path.parent)
    wanted = doc.get("models")
    if wanted:
        missing = [m for m in wanted if m not in endpoints]
        if missing:
            raise ConfigError(f"unknown endpoints {missing}", location="models")
        endpoints = {m: endpoints[m] for m in wanted}
    cc = ClusterConfig(**doc.get("cluster_config", {}))
    return RunPlan(config, truth, tuple(doc["variants"]), endpoints,
                   trials_per_cell=doc.get("trials_per_cell", DEFAULT_TRIALS),
                   master_seed=doc.get("master_seed", 0),
                   permutations=doc.get("permutations", 9999),
                   max_regenerations=doc.get("max_regenerations",
                                             llmgate.DEFAULT_MAX_REGENERATIONS),
                   waive_screening=bool(doc.get("waive_screening", False)),
                   cluster_config=cc)


# --------------------------------------------------------------------------
# seeds

def derive_seed(*parts):
    """Stable 63-bit seed from arbitrary parts, independent of execution order."""
    digest = hashlib.sha256(json.dumps([str(p) for p in parts]).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def cell_seed(master_seed, study_id, variant, model_id, trial_index):
    return derive_seed(master_seed, study_id, PromptVariant.parse(variant).value, model_id,
                       trial_index)


# --------------------------------------------------------------------------
# ground truth

@dataclass(frozen=True)
class GroundTruth:
    labeled: object  # LabeledClustering
    distance: object  # DistanceMatrix of the real data

    @property
    def clustering(self):
        return self.labeled.clustering


def ground_truth_clustering(results, seed, config=None, waive_screening=False):
    """Real data path: screen, keep complete sorts, matrix, complement, cluster."""
    if not waive_screening:
        verdict = screen_study(results)
        if not verdict.passed:
            raise ScreeningError(verdict.violations)
    sim = build_similarity(filter_complete(results))
    return cluster_cards(complement(sim), seed, config)


def _ground(results, seed, config, waive):
    labeled = ground_truth_clustering(results, seed, config, waive)
    dist = complement(build_similarity(filter_complete(results)))
    return GroundTruth(labeled, dist)


# --------------------------------------------------------------------------
# cells

@dataclass
class CellResult:
    variant: str
    model_id: str
    trial_index: int
    status: str  # "ok" | "failed"
    clustering: Optional[Clustering] = None
    agreement: Optional[AgreementReport] = None
    k: Optional[int] = None
    no_knee: Optional[bool] = None
    knee_curvature: Optional[float] = None
    attempts: list = field(default_factory=list)  # validation outcome per attempt
    error: Optional[str] = None

    @property
    def ok(self):
        return self.status == "ok"

    def as_dict(self):
        return {
            "variant": self.variant,
            "model_id": self.model_id,
            "trial_index": self.trial_index,
            "status": self.status,
            "clustering": None if self.clustering is None else
            {name: list(ids) for name, ids in self.clustering.clusters.items()},
            "agreement": None if self.agreement is None else self.agreement.as_record(),
            "k": self.k,
            "no_knee": self.no_knee,
            "knee_curvature": self.knee_curvature,
            "attempts": self.attempts,
            "error": self.error,
        }

    def to_json(self):
        return json.dumps(self.as_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, d):
        cl = d.get("clustering")
        ag = d.get("agreement")
        return cls(d["variant"], d["model_id"], d["trial_index"], d["status"],
                   None if cl is None else Clustering(cl),
                   None if ag is None else AgreementReport.from_record(ag),
                   d.get("k"), d.get("no_knee"), d.get("knee_curvature"),
                   d.get("attempts", []), d.get("error"))


VALIDATORS = {
    "raw": validate.validate_raw_output,
    "matrix": validate.validate_matrix_output,
    "clustering": validate.validate_clustering_output,
}


def validator_for(variant, config):
    fn = VALIDATORS[PromptVariant.parse(variant).output_format]
    return lambda text: fn(text, config)


def evaluate_cell(variant, model_id, trial_index, parsed, ground, seed, config=None,
                  permutations=9999):
    """Enter the evaluation pipeline at the stage matching the variant.

    ``parsed`` is the validated synthetic output: StudyResults for P1, a
    SimilarityMatrix for P2 and a Clustering for P3/P4.  ``ground`` is the
    :class:`GroundTruth` computed once per study.
    """
    variant = PromptVariant.parse(variant)
    cards = ground.distance.cards
    k = no_knee = curvature = None
    if variant is PromptVariant.P3 or variant is PromptVariant.P4:
        synthetic = parsed
        dist = complement(clustering_to_matrix(parsed, cards))
    else:
        sim = build_similarity(filter_complete(parsed)) if variant is PromptVariant.P1 \
            else parsed.reorder(cards)
        dist = complement(sim)
        labeled = cluster_cards(dist, seed, config)
        synthetic, k, no_knee = labeled.clustering, labeled.k, labeled.knee.no_knee
        curvature = labeled.knee.curvature
    report = compare(ground.clustering, synthetic, ground.distance, dist, permutations, seed)
    return CellResult(variant.value, model_id, trial_index, "ok", synthetic, report,
                      k if k is not None else synthetic.n_categories(), no_knee, curvature)


def _outcomes(records):
    return [r.validation_outcome for r in records]


def run_cell(plan, ground, variant, name, trial, transport, archive_dir=None):
    endpoint = plan.endpoints[name]
    seed = cell_seed(plan.master_seed, plan.study.study_id, variant, endpoint.model_id, trial)
    prompt = render(plan.study, variant)
    try:
        parsed, records = llmgate.generate_validated(
            prompt, endpoint, validator_for(variant, plan.study), plan.max_regenerations,
            seed=seed, transport=transport, study_id=plan.study.study_id,
            trial_index=trial, archive_dir=archive_dir)
    except llmgate.ExhaustedRetriesError as exc:
        return CellResult(variant.value, endpoint.model_id, trial, "failed",
                          attempts=_outcomes(exc.records), error=str(exc))
    except (CardSimError, ValueError) as exc:
        return CellResult(variant.value, endpoint.model_id, trial, "failed",
                          attempts=_outcomes(getattr(exc, "records", [])),
                          error=f"{type(exc).__name__}: {exc}")
    try:
        cell = evaluate_cell(variant, endpoint.model_id, trial, parsed, ground, seed,
                             plan.cluster_config, plan.permutations)
    except (CardSimError, ValueError) as exc:
        cell = CellResult(variant.value, endpoint.model_id, trial, "failed",
                          error=f"{type(exc).__name__}: {exc}")
    cell.attempts = _outcomes(records)
    return cell


# --------------------------------------------------------------------------
# aggregation

@dataclass(frozen=True)
class VariabilityRow:
    variant: str
    model_id: str
    trials: int  # successful trials that contributed
    sd: dict  # metric -> mean within-study SD, None if undefined


def _sd(values):
    values = [v for v in values if v is not None]
    return statistics.stdev(values) if len(values) >= 2 else None


def summarize_variability(cells_by_study):
    """Mean over studies of within-study sample SDs, per (variant, model).

    ``cells_by_study`` maps study id -> list of CellResult.  Failed cells are
    ignored; a study contributes only when it has at least two successful
    trials.
    """
    per = {}
    for study_id in sorted(cells_by_study):
        groups = {}
        for c in cells_by_study[study_id]:
            if c.ok:
                groups.setdefault((c.variant, c.model_id), []).append(c)
        for key, cs in groups.items():
            if len(cs) < 2:
                continue
            cs = sorted(cs, key=lambda c: c.trial_index)
            entry = per.setdefault(key, {"trials": 0, "sds": {m: [] for m in METRICS}})
            entry["trials"] += len(cs)
            for m in METRICS:
                sd = _sd([getattr(c.agreement, m) for c in cs])
                if sd is not None:
                    entry["sds"][m].append(sd)
    rows = []
    for (variant, model_id) in sorted(per):
        entry = per[(variant, model_id)]
        sd = {m: (statistics.fmean(v) if v else None) for m, v in entry["sds"].items()}
        rows.append(VariabilityRow(variant, model_id, entry["trials"], sd))
    return rows


@dataclass
class RunResult:
    ground: GroundTruth
    cells: list
    variability: list

    @property
    def failed(self):
        return [c for c in self.cells if not c.ok]


def _fmt(v):
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


SUMMARY_HEADER = ["variant", "model_id", "trial_index", "status", "k"] + \
    list(AgreementReport.FIELDS) + ["error"]


def summary_rows(cells):
    rows = [SUMMARY_HEADER]
    for c in cells:
        metrics = c.agreement.as_row() if c.agreement else [""] * len(AgreementReport.FIELDS)
        rows.append([c.variant, c.model_id, str(c.trial_index), c.status, _fmt(c.k)]
                    + metrics + [c.error or ""])
    return rows


def variability_rows(rows):
    out = [["variant", "model_id", "trials"] + [f"sd_{m}" for m in METRICS]]
    for r in rows:
        out.append([r.variant, r.model_id, str(r.trials)] + [_fmt(r.sd[m]) for m in METRICS])
    return out


def _cell_path(out_dir, variant, model_id, trial):
    return (Path(out_dir) / "cells" / llmgate._safe(variant) / llmgate._safe(model_id)
            / f"trial-{trial:03d}.json")


def run(plan, out_dir=None, transports=None, workers=1):
    """Execute every cell of ``plan`` and aggregate.

    ``transports`` optionally maps endpoint name -> Transport (tests, dry
    runs).  Otherwise one transport per (endpoint, variant) is created so
    that mock responses are served per variant in trial order.  Cells never
    abort the run: failures are recorded on the cell.
    """
    ground_seed = derive_seed(plan.master_seed, plan.study.study_id, "ground-truth")
    ground = _ground(plan.ground_truth, ground_seed, plan.cluster_config, plan.waive_screening)
    archive = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        archive = out / "archive"
        (out / "manifest.json").write_text(
            json.dumps(plan.manifest(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (out / "ground_truth.json").write_text(json.dumps({
            "k": ground.labeled.k,
            "no_knee": ground.labeled.knee.no_knee,
            "knee_curvature": ground.labeled.knee.curvature,
            "clustering": {n: list(ids) for n, ids in ground.clustering.clusters.items()},
        }, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    own = {}

    def transport(name, variant):
        if transports and name in transports:
            return transports[name]
        key = (name, variant)
        if key not in own:
            own[key] = llmgate.transport_for(plan.endpoints[name])
        return own[key]

    todo, done = [], {}
    for variant, name, trial in plan.cells():
        model_id = plan.endpoints[name].model_id
        path = _cell_path(out_dir, variant.value, model_id, trial) if out_dir else None
        if path is not None and path.exists():
            try:
                done[(variant, name, trial)] = CellResult.from_dict(
                    json.loads(path.read_text(encoding="utf-8")))
                continue
            except (ValueError, KeyError):
                logger.warning("ignoring unreadable cell file %s", path)
        todo.append((variant, name, trial))

    # transports are bound before any thread starts so mock order stays stable
    jobs = [(v, n, t, transport(n, v)) for v, n, t in todo]

    def work(job):
        v, n, t, tr = job
        cell = run_cell(plan, ground, v, n, t, tr, archive)
        if out_dir is not None:
            p = _cell_path(out_dir, cell.variant, cell.model_id, cell.trial_index)
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text(cell.to_json(), encoding="utf-8")
        return (v, n, t), cell

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            done.update(pool.map(work, jobs))
    else:
        done.update(map(work, jobs))

    cells = [done[key] for key in plan.cells()]
    variability = summarize_variability({plan.study.study_id: cells})
    if out_dir is not None:
        (Path(out_dir) / "summary.csv").write_text(csvio.write_rows(summary_rows(cells)),
                                                   encoding="utf-8")
        (Path(out_dir) / "variability.csv").write_text(
            csvio.write_rows(variability_rows(variability)), encoding="utf-8")
    return RunResult(ground, cells, variability)
