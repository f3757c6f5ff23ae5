"""Command-line interface.

Exit codes: 0 success, 1 validation or screening failure, 2 configuration
or input error, 3 transport failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import llmgate, pipeline
from .cluster import ClusterConfig
from .errors import (
    CardSetMismatchError,
    CardSimError,
    ConfigError,
    EmptyResultsError,
    ParseError,
    ScreeningError,
)
from .heatmap import build_specs, order_by_clustering, render_svg
from .metrics import AgreementReport
from .model import (
    parse_clustering,
    parse_raw_results,
    parse_study_config,
    screen_study,
    serialize_clustering,
    serialize_raw_results,
)
from .prompts import PromptVariant, render
from .simmatrix import parse_matrix, serialize_matrix

EXIT_OK, EXIT_INVALID, EXIT_CONFIG, EXIT_TRANSPORT = 0, 1, 2, 3

FORMAT_VARIANT = {"raw": PromptVariant.P1, "matrix": PromptVariant.P2,
                  "clustering": PromptVariant.P3}


class CommandFailed(Exception):
    def __init__(self, code, payload):
        self.code = code
        self.payload = payload
        super().__init__(payload.get("message", ""))


def _read(path):
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None


def _study(path):
    return parse_study_config(_read(path))


def _emit_json(obj, stream=None):
    (stream or sys.stdout).write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _cluster_config(args):
    return ClusterConfig(dims=args.dims, k_min=args.k_min, k_max=args.k_max,
                         restarts=args.restarts)


# --------------------------------------------------------------------------
# commands

def serialize_output(parsed, variant, config):
    fmt = PromptVariant.parse(variant).output_format
    if fmt == "raw":
        return serialize_raw_results(parsed)
    if fmt == "matrix":
        return serialize_matrix(parsed, config)
    return serialize_clustering(parsed, config)


def cmd_simulate(args):
    config = _study(args.study)
    ep_path = Path(args.endpoints)
    endpoints = llmgate.load_endpoints(_read(ep_path), base_dir=ep_path.parent)
    if args.model not in endpoints:
        raise ConfigError(f"unknown endpoint {args.model!r}", location=str(ep_path))
    endpoint = endpoints[args.model]
    variant = PromptVariant.parse(args.variant)
    prompt = render(config, variant)
    if variant.needs_large_output and not endpoint.large_output:
        raise llmgate.CapabilityError(
            f"{variant.value} needs an endpoint flagged large_output; "
            f"{endpoint.model_id} is not", location=args.model)
    endpoint.credential()  # fail early on a missing variable
    out = Path(args.out)
    transport = llmgate.transport_for(endpoint)
    validator = pipeline.validator_for(variant, config)
    written = []
    for trial in range(1, args.trials + 1):
        seed = pipeline.cell_seed(args.seed, config.study_id, variant, endpoint.model_id, trial)
        try:
            parsed, records = llmgate.generate_validated(
                prompt, endpoint, validator, args.max_regenerations, seed=seed,
                transport=transport, study_id=config.study_id, trial_index=trial,
                archive_dir=out / "archive")
        except llmgate.ExhaustedRetriesError as exc:
            raise CommandFailed(EXIT_INVALID, {
                "error": "validation-exhausted", "trial": trial, "message": str(exc),
                "attempts": [r.validation_outcome for r in exc.records]}) from None
        except llmgate.AuthenticationError as exc:
            raise CommandFailed(EXIT_TRANSPORT, {"error": "authentication", "trial": trial,
                                                 "message": str(exc)}) from None
        except llmgate.TransportError as exc:
            raise CommandFailed(EXIT_TRANSPORT, {"error": exc.kind, "trial": trial,
                                                 "message": str(exc)}) from None
        path = (out / variant.value / llmgate._safe(endpoint.model_id)
                / f"trial-{trial:03d}.csv")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(serialize_output(parsed, variant, config), encoding="utf-8")
        written.append({"trial": trial, "path": str(path), "attempts": len(records)})
    _emit_json({"variant": variant.value, "model": endpoint.model_id, "outputs": written})
    return EXIT_OK


TABLE_FIELDS = ("nmi", "ari", "edit_distance", "n_categories_a", "n_categories_b",
                "mantel_r", "mantel_p")
TABLE_HEADER = ("nmi", "ari", "edit", "k_real", "k_synth", "mantel_r", "mantel_p")


def format_table(reports):
    """Fixed-width text table, one row per ``(name, AgreementReport)``."""
    def cell(v):
        if v is None:
            return "-"
        return f"{v:.3f}" if isinstance(v, float) else str(v)

    rows = [("name",) + TABLE_HEADER]
    rows += [(name,) + tuple(cell(getattr(r, f)) for f in TABLE_FIELDS) for name, r in reports]
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(v.rjust(w) if i else v.ljust(w)
                               for i, (v, w) in enumerate(zip(r, widths))) for r in rows) + "\n"


def cmd_compare(args):
    config = _study(args.study)
    real = parse_raw_results(_read(args.real), config)
    variant = FORMAT_VARIANT[args.format]
    parsed, report = pipeline.validator_for(variant, config)(_read(args.synthetic))
    if not report.passed:
        raise CommandFailed(EXIT_INVALID, {"error": "validation", "message": "synthetic "
                                           "output failed validation", "report": report.as_dict()})
    cc = _cluster_config(args)
    ground = pipeline._ground(real, args.seed, cc, args.waive_screening)
    cell = pipeline.evaluate_cell(variant, "synthetic", 1, parsed, ground, args.seed, cc,
                                  args.permutations)
    sys.stdout.write(format_table([(Path(args.synthetic).name, cell.agreement)]))
    record = dict(cell.agreement.as_record(), k_real=ground.labeled.k,
                  real_no_knee=ground.labeled.knee.no_knee, k_synthetic=cell.k)
    if args.format == "raw":
        record["note"] = ("raw-format distances come from co-occurrence counts, so the Mantel "
                          "r is comparable with matrix-format runs but not clustering-format runs")
    if args.json:
        Path(args.json).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n",
                                   encoding="utf-8")
    else:
        _emit_json(record)
    return EXIT_OK


def cmd_report(args):
    config = _study(args.study)
    matrices = [parse_matrix(_read(p), config) for p in args.matrices]
    titles = args.titles or [Path(p).stem for p in args.matrices]
    if len(titles) != len(matrices):
        raise ConfigError("--titles must name every matrix")
    order = None
    if args.order_by and args.order_by != "none":
        clustering = parse_clustering(_read(args.order_by), config)
        order = order_by_clustering(matrices[0].cards, clustering)
    specs = build_specs(list(zip(titles, matrices)), order)
    labels = {c.id: c.label for c in config.cards}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "heatmap.svg").write_text(render_svg(specs, labels), encoding="utf-8")
    if args.reports:
        reports = [(Path(p).stem, AgreementReport.from_record(json.loads(_read(p))))
                   for p in args.reports]
        table = format_table(reports)
        (out / "summary.txt").write_text(table, encoding="utf-8")
        sys.stdout.write(table)
    _emit_json({"heatmap": str(out / "heatmap.svg"), "panels": titles})
    return EXIT_OK


def cmd_validate(args):
    config = _study(args.study)
    variant = FORMAT_VARIANT[args.format]
    _, report = pipeline.validator_for(variant, config)(_read(args.input))
    sys.stdout.write(report.to_json())
    return EXIT_OK if report.passed else EXIT_INVALID


def cmd_screen(args):
    config = _study(args.study)
    verdict = screen_study(parse_raw_results(_read(args.results), config))
    _emit_json({"passed": verdict.passed, "violations": list(verdict.violations)})
    return EXIT_OK if verdict.passed else EXIT_INVALID


def cmd_run(args):
    plan = pipeline.load_manifest(args.manifest)
    if args.seed is not None:
        plan = pipeline.RunPlan(**{**vars(plan), "master_seed": args.seed})
    result = pipeline.run(plan, out_dir=args.out, workers=args.workers)
    sys.stdout.write(format_table([(f"{c.variant}/{c.model_id}/{c.trial_index}", c.agreement)
                                   for c in result.cells if c.ok]))
    for c in result.failed:
        sys.stderr.write(f"failed: {c.variant}/{c.model_id}/{c.trial_index}: {c.error}\n")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser

def _add_cluster_flags(p):
    p.add_argument("--dims", type=int, default=None, help="MDS axes (default: all)")
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=15)
    p.add_argument("--restarts", type=int, default=10)


def build_parser():
    parser = argparse.ArgumentParser(prog="cardsim",
                                     description="Simulate and evaluate open card sorts.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate validated synthetic outputs")
    p.add_argument("--study", required=True)
    p.add_argument("--variant", required=True, choices=[v.value for v in PromptVariant])
    p.add_argument("--model", required=True, help="endpoint name")
    p.add_argument("--endpoints", default="endpoints.json")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-regenerations", type=int, default=llmgate.DEFAULT_MAX_REGENERATIONS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="agreement between real results and a synthetic output")
    p.add_argument("--study", required=True)
    p.add_argument("--real", required=True, help="raw results CSV")
    p.add_argument("--synthetic", required=True)
    p.add_argument("--format", required=True, choices=sorted(FORMAT_VARIANT))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--permutations", type=int, default=9999)
    p.add_argument("--waive-screening", action="store_true")
    p.add_argument("--json", help="write the structured record here instead of stdout")
    _add_cluster_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="side-by-side SVG heatmaps")
    p.add_argument("--study", required=True)
    p.add_argument("--matrices", nargs="+", required=True)
    p.add_argument("--titles", nargs="+")
    p.add_argument("--order-by", default="none", help="clustering CSV or 'none'")
    p.add_argument("--reports", nargs="+", help="agreement record JSON files")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("validate", help="check one model output")
    p.add_argument("--study", required=True)
    p.add_argument("--format", required=True, choices=sorted(FORMAT_VARIANT))
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("screen", help="check study inclusion criteria")
    p.add_argument("--study", required=True)
    p.add_argument("--results", required=True)
    p.set_defaults(func=cmd_screen)

    p = sub.add_parser("run", help="execute a run manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CommandFailed as exc:
        _emit_json(exc.payload, sys.stderr)
        return exc.code
    except ScreeningError as exc:
        _emit_json({"error": "screening", "violations": exc.violations}, sys.stderr)
        return EXIT_INVALID
    except (ConfigError, ParseError, CardSetMismatchError, EmptyResultsError) as exc:
        _emit_json({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        return EXIT_CONFIG
    except llmgate.TransportError as exc:
        _emit_json({"error": exc.kind, "message": str(exc)}, sys.stderr)
        return EXIT_TRANSPORT
    except CardSimError as exc:
        _emit_json({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
