"""Integrity checks and normalization for model-generated card sorting output.

Every validator takes the *raw* model response (or a bare CSV payload), so
what gets archived is exactly what was checked.  Findings are split into
errors, which fail the output and trigger regeneration, and warnings for
issues that were normalized away.
"""

from __future__ import annotations

import enum
import json
import re
import string
from dataclasses import dataclass, field

import numpy as np

from . import csvio
from .errors import MalformedCSVError
from .model import Clustering, ParticipantSort, Provenance, StudyResults
from .simmatrix import SimilarityMatrix
from .text import canonicalize_label, levenshtein

__all__ = [
    "ErrorCode", "Finding", "ValidationReport", "LabelMatch", "Payload",
    "canonicalize_label", "extract_payload", "match_labels",
    "validate_clustering_output", "validate_raw_output", "validate_matrix_output",
]

FUZZY_BUDGET = 2
OVERCAT_SINGLETON_SHARE = 0.9
LOOP_BLOCKS = 3
MATRIX_TOLERANCE = 0.5

CLUSTERING_HEADER = ("categoryname", "cardname")
RAW_HEADER = ("respondent", "category", "card")


class ErrorCode(str, enum.Enum):
    OMITTED_CARDS = "OMITTED_CARDS"
    DUPLICATE_CARDS = "DUPLICATE_CARDS"
    OVERCATEGORIZATION = "OVERCATEGORIZATION"
    UNDERCATEGORIZATION = "UNDERCATEGORIZATION"
    ASYMMETRIC_MATRIX = "ASYMMETRIC_MATRIX"
    LOOPING = "LOOPING"
    OUTPUT_MISSING = "OUTPUT_MISSING"
    LABEL_MODIFIED = "LABEL_MODIFIED"
    EXTRA_WHITESPACE = "EXTRA_WHITESPACE"
    HALLUCINATED_CARD = "HALLUCINATED_CARD"
    MALFORMED_CSV = "MALFORMED_CSV"
    UNNAMED_CATEGORY = "UNNAMED_CATEGORY"
    INVALID_MATRIX_VALUE = "INVALID_MATRIX_VALUE"
    # warning-only details
    MONOLITH = "MONOLITH"
    PARTICIPANT_COUNT = "PARTICIPANT_COUNT"

    def __str__(self):
        return self.value


# Output-error table rows 1-9 -> code
PROBLEM_ROWS = {
    1: ErrorCode.OMITTED_CARDS,
    2: ErrorCode.DUPLICATE_CARDS,
    3: ErrorCode.OVERCATEGORIZATION,
    4: ErrorCode.UNDERCATEGORIZATION,
    5: ErrorCode.ASYMMETRIC_MATRIX,
    6: ErrorCode.LOOPING,
    7: ErrorCode.OUTPUT_MISSING,
    8: ErrorCode.LABEL_MODIFIED,
    9: ErrorCode.EXTRA_WHITESPACE,
}


@dataclass(frozen=True)
class Finding:
    code: ErrorCode
    detail: str = ""
    location: str = ""

    def as_dict(self):
        return {"code": self.code.value, "detail": self.detail, "location": self.location}


@dataclass
class ValidationReport:
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    normalizations: list = field(default_factory=list)  # (before, after, detail)

    @property
    def passed(self):
        return not self.errors

    @property
    def outcome(self):
        return "pass" if self.passed else "fail"

    def error_codes(self):
        return sorted({f.code.value for f in self.errors})

    def codes(self):
        return sorted({f.code.value for f in self.errors + self.warnings})

    def error(self, code, detail="", location=""):
        self.errors.append(Finding(code, detail, location))

    def warn(self, code, detail="", location=""):
        self.warnings.append(Finding(code, detail, location))

    def as_dict(self):
        return {
            "outcome": self.outcome,
            "errors": [f.as_dict() for f in self.errors],
            "warnings": [f.as_dict() for f in self.warnings],
            "normalizations": [list(n) for n in self.normalizations],
        }

    def to_json(self):
        return json.dumps(self.as_dict(), indent=2, ensure_ascii=False, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# payload extraction

@dataclass(frozen=True)
class Payload:
    text: str
    csv_blocks: int
    fenced: bool


_FENCE_RE = re.compile(r"^[ \t]*```[^\n]*\n(.*?)^[ \t]*```[ \t]*$", re.S | re.M)


def _looks_like_csv(block):
    for line in block.splitlines():
        if line.strip():
            return "," in line
    return False


HEADER_PATTERNS = {
    "clustering": re.compile(r'^\s*"?categoryName"?\s*,\s*"?cardName"?\s*$', re.I | re.M),
    "raw": re.compile(r'^\s*"?respondent"?\s*,\s*"?category"?\s*,\s*"?card"?\s*$',
                      re.I | re.M),
    "matrix": re.compile(r'^\s*(?:"")?\s*,.*,', re.M),
}


def extract_payload(response, kind=None):
    """Pick the CSV payload out of a model response.

    The last complete fenced block whose first non-blank line holds a comma
    wins.  Without fenced blocks, the payload starts at the first header
    line for ``kind`` (``clustering``, ``raw`` or ``matrix``) and trailing
    comma-free lines are dropped; when no header is found either, the whole
    response is returned unless ``kind`` is given, in which case the payload
    is empty.
    """
    blocks = [m.group(1) for m in _FENCE_RE.finditer(response)]
    csv_blocks = [b for b in blocks if _looks_like_csv(b)]
    if csv_blocks:
        return Payload(csv_blocks[-1], len(csv_blocks), True)
    if kind is None:
        return Payload(response, 0, False)
    m = HEADER_PATTERNS[kind].search(response)
    if m is None:
        return Payload("", 0, False)
    lines = response[m.start():].split("\n")
    while lines and "," not in lines[-1]:
        lines.pop()
    return Payload("\n".join(lines) + "\n", 0, False)


# --------------------------------------------------------------------------
# label matching

@dataclass
class LabelMatch:
    mapping: dict  # output label -> card id
    unmatched: list  # labels with no candidate at all
    ambiguous: dict  # label -> candidate card ids (never auto-resolved)
    normalizations: list  # (output label, config label, detail)


_PUNCT = set(string.punctuation) | {"…"}


def _strip_punct(s):
    return "".join(ch for ch in s if ch not in _PUNCT)


def _describe_canonical(out_label, card_label):
    if " ".join(out_label.split()) == " ".join(card_label.split()):
        return "Space removal: extra spaces in card label removed"
    return "Special character replacement: typographic characters replaced"


def match_labels(output_labels, config):
    """Resolve model output labels to card ids.

    Three passes: exact, canonical, then a unique fuzzy match within an edit
    distance of 2 against cards not matched yet.  A fuzzy candidate is only
    accepted when the pairing is unique from both sides.
    """
    labels = list(dict.fromkeys(output_labels))
    exact = {c.label: c.id for c in config.cards}
    canon = config.canonical_index()
    taken = set()
    mapping, normalizations = {}, []
    pending = []
    for lab in labels:
        cid = exact.get(lab)
        if cid is not None and cid not in taken:
            mapping[lab] = cid
            taken.add(cid)
        else:
            pending.append(lab)
    still = []
    for lab in pending:
        cid = canon.get(canonicalize_label(lab))
        if cid is not None and cid not in taken:
            mapping[lab] = cid
            taken.add(cid)
            card = config.label_of(cid)
            normalizations.append((lab, card, _describe_canonical(lab, card)))
        else:
            still.append(lab)
    remaining = [c for c in config.cards if c.id not in taken]
    candidates = {}
    for lab in still:
        key = canonicalize_label(lab)
        candidates[lab] = [c.id for c in remaining
                           if levenshtein(key, canonicalize_label(c.label), FUZZY_BUDGET)
                           <= FUZZY_BUDGET]
    claims = {}
    for lab, cids in candidates.items():
        for cid in cids:
            claims.setdefault(cid, []).append(lab)
    unmatched, ambiguous = [], {}
    for lab in still:
        cids = candidates[lab]
        if len(cids) == 1 and len(claims[cids[0]]) == 1:
            cid = cids[0]
            mapping[lab] = cid
            card = config.label_of(cid)
            if _strip_punct(canonicalize_label(card)) == _strip_punct(canonicalize_label(lab)):
                detail = "Punctuation is removed"
            else:
                detail = "Characters modified"
            normalizations.append((lab, card, detail))
        elif cids:
            ambiguous[lab] = cids
        else:
            unmatched.append(lab)
    return LabelMatch(mapping, unmatched, ambiguous, normalizations)


def _near_matched(label, config, taken_ids):
    key = canonicalize_label(label)
    for c in config.cards:
        if c.id in taken_ids and levenshtein(key, canonicalize_label(c.label),
                                             FUZZY_BUDGET) <= FUZZY_BUDGET:
            return c
    return None


# --------------------------------------------------------------------------
# CSV tolerant reading

def _read_tolerant(payload, report):
    """Rows of ``payload`` with blank-line/whitespace noise removed."""
    text = payload.replace("\r\n", "\n").replace("\r", "\n")
    raw_lines = text.split("\n")
    while raw_lines and raw_lines[-1] == "":
        raw_lines.pop()
    lines = []
    noisy = 0
    for i, ln in enumerate(raw_lines):
        if not ln.strip():
            noisy += 1
            continue
        if ln != ln.strip():
            noisy += 1
        lines.append(ln.strip())
    cleaned = "\n".join(lines) + ("\n" if lines else "")
    try:
        rows = csvio.read_rows(cleaned)
    except MalformedCSVError as exc:
        repaired = csvio.repair_quotes(cleaned)
        rows = None
        if repaired is not None:
            try:
                rows = csvio.read_rows(repaired)
                report.warn(ErrorCode.MALFORMED_CSV, "unescaped quotes repaired", exc.location or "")
            except MalformedCSVError:
                rows = None
        if rows is None:
            report.error(ErrorCode.MALFORMED_CSV, str(exc), exc.location or "")
            return None
    out = []
    for row in rows:
        stripped = [f.strip() for f in row]
        if stripped != row:
            noisy += 1
        out.append(stripped)
    if noisy:
        report.warn(ErrorCode.EXTRA_WHITESPACE, f"{noisy} blank or padded line(s)/field(s) removed")
    return out


def _split_header(rows, header, report):
    if not rows:
        return rows
    first = tuple(f.strip().strip('"').lower() for f in rows[0])
    if first == header:
        return rows[1:]
    report.warn(ErrorCode.MALFORMED_CSV, "header row missing", "row 1")
    return rows


_UNNAMED_RE = re.compile(r"^(unnamed|untitled|no name|category)( category)?\s*\d*$", re.I)


def _check_partition(assign, categories, config, report, where=""):
    """Shared post-checks on one (card id -> category) assignment."""
    loc = f"{where}: " if where else ""
    missing = [c.label for c in config.cards if c.id not in assign]
    if missing:
        report.error(ErrorCode.OMITTED_CARDS,
                     f"{loc}{len(missing)} card(s) missing: " + "; ".join(missing), where)
    for name in categories:
        if not name.strip() or _UNNAMED_RE.match(name.strip()):
            report.error(ErrorCode.UNNAMED_CATEGORY, f"{loc}category {name!r} is not named", where)
    sizes = {}
    for cat in assign.values():
        sizes[cat] = sizes.get(cat, 0) + 1
    k = len(sizes)
    if k < 2:
        report.error(ErrorCode.UNDERCATEGORIZATION, f"{loc}{k} non-empty categor(y/ies)", where)
    else:
        singles = sum(1 for s in sizes.values() if s == 1)
        if singles >= OVERCAT_SINGLETON_SHARE * k and k > len(config.cards) / 2:
            report.error(ErrorCode.OVERCATEGORIZATION,
                         f"{loc}{singles} of {k} categories hold a single card", where)


def _resolve_rows(label_rows, config, report):
    """Match labels of (rownum, label) pairs; report unknown ones once."""
    match = match_labels([lab for _, lab in label_rows], config)
    for before, after, detail in match.normalizations:
        report.normalizations.append((before, after, detail))
        report.warn(ErrorCode.LABEL_MODIFIED, f"{detail}: {before!r} -> {after!r}")
    taken = set(match.mapping.values())
    for lab in match.unmatched:
        near = _near_matched(lab, config, taken)
        if near is not None:
            report.error(ErrorCode.DUPLICATE_CARDS,
                         f"{lab!r} is a modified duplicate of {near.label!r}")
        else:
            report.error(ErrorCode.HALLUCINATED_CARD, f"{lab!r} is not a study card")
    for lab, cids in match.ambiguous.items():
        names = ", ".join(repr(config.label_of(c)) for c in cids)
        report.error(ErrorCode.LABEL_MODIFIED, f"{lab!r} is ambiguous between {names}")
    return match.mapping


def _begin(response, report, kind):
    payload = extract_payload(response, kind)
    if payload.csv_blocks >= LOOP_BLOCKS:
        report.warn(ErrorCode.LOOPING,
                    f"{payload.csv_blocks} CSV blocks in one response; the last one was used")
    if not payload.text.strip():
        report.error(ErrorCode.OUTPUT_MISSING, "response holds no CSV output")
        return None
    return payload


def _data_rows(rows, width, report):
    good = []
    for rownum, row in rows:
        if len(row) != width:
            report.error(ErrorCode.MALFORMED_CSV, f"expected {width} fields, got {len(row)}",
                         f"row {rownum}")
            continue
        good.append((rownum, row))
    return good


def _drop_format_noise(report):
    noise = (ErrorCode.MALFORMED_CSV, ErrorCode.EXTRA_WHITESPACE)
    report.errors = [f for f in report.errors if f.code not in noise]
    report.warnings = [f for f in report.warnings if f.code not in noise]


def _no_output(rows, width):
    return not any(len(r) == width for r in rows)


# --------------------------------------------------------------------------
# validators

def validate_clustering_output(response, config):
    """Check a ``categoryName,cardName`` clustering.

    Returns ``(Clustering, ValidationReport)``; on failure the clustering
    holds whatever could be salvaged.
    """
    report = ValidationReport()
    payload = _begin(response, report, "clustering")
    if payload is None:
        return Clustering({}), report
    rows = _read_tolerant(payload.text, report)
    if rows is None:
        return Clustering({}), report
    if _no_output(rows, 2):
        _drop_format_noise(report)
        report.error(ErrorCode.OUTPUT_MISSING, "no categoryName,cardName rows found")
        return Clustering({}), report
    body = _split_header(rows, CLUSTERING_HEADER, report)
    offset = len(rows) - len(body) + 1
    numbered = _data_rows([(i + offset, r) for i, r in enumerate(body)], 2, report)
    mapping = _resolve_rows([(n, r[1]) for n, r in numbered], config, report)
    assign, groups = {}, {}
    for rownum, (category, label) in numbered:
        groups.setdefault(category, [])
        cid = mapping.get(label)
        if cid is None:
            continue
        if cid in assign:
            report.error(ErrorCode.DUPLICATE_CARDS,
                         f"{config.label_of(cid)!r} already in {assign[cid]!r}", f"row {rownum}")
            continue
        assign[cid] = category
        groups[category].append(cid)
    _check_partition(assign, list(groups), config, report)
    return Clustering(groups), report


def validate_raw_output(response, config, model_id=None, trial_index=None, variant="p1"):
    """Check ``respondent,category,card`` output, each respondent in turn."""
    report = ValidationReport()
    prov = Provenance.simulated(variant, model_id, trial_index)
    empty = StudyResults(config, (), prov)
    payload = _begin(response, report, "raw")
    if payload is None:
        return empty, report
    rows = _read_tolerant(payload.text, report)
    if rows is None:
        return empty, report
    if _no_output(rows, 3):
        _drop_format_noise(report)
        report.error(ErrorCode.OUTPUT_MISSING, "no respondent,category,card rows found")
        return empty, report
    body = _split_header(rows, RAW_HEADER, report)
    offset = len(rows) - len(body) + 1
    numbered = _data_rows([(i + offset, r) for i, r in enumerate(body)], 3, report)
    mapping = _resolve_rows([(n, r[2]) for n, r in numbered], config, report)
    per = {}
    for rownum, (rid, category, label) in numbered:
        assign, cats = per.setdefault(rid, ({}, []))
        if category not in cats:
            cats.append(category)
        cid = mapping.get(label)
        if cid is None:
            continue
        if cid in assign:
            report.error(ErrorCode.DUPLICATE_CARDS,
                         f"respondent {rid}: {config.label_of(cid)!r} already in {assign[cid]!r}",
                         f"row {rownum}")
            continue
        assign[cid] = category
    sorts = []
    for rid, (assign, cats) in per.items():
        _check_partition(assign, cats, config, report, where=f"respondent {rid}")
        sorts.append(ParticipantSort.build(rid, assign, config))
    if len(per) != config.number_of_participants:
        report.warn(ErrorCode.PARTICIPANT_COUNT,
                    f"{len(per)} respondents, expected {config.number_of_participants}")
    if len(sorts) > 1:
        parts = {Clustering(_group(s.assignments)).partition() for s in sorts}
        if len(parts) == 1:
            report.warn(ErrorCode.MONOLITH, "every simulated participant sorted identically")
    return StudyResults(config, tuple(sorts), prov), report


def _group(assignments):
    groups = {}
    for cid, cat in assignments.items():
        groups.setdefault(cat, []).append(cid)
    return groups


def validate_matrix_output(response, config):
    """Check a labeled square similarity matrix.

    The returned matrix covers the cards that could be matched on both axes,
    in study order.
    """
    report = ValidationReport()
    payload = _begin(response, report, "matrix")
    cards = tuple(config.card_ids)
    empty = SimilarityMatrix((), np.zeros((0, 0)), 100)
    if payload is None:
        return empty, report
    rows = _read_tolerant(payload.text, report)
    if rows is None:
        return empty, report
    rows = [r for r in rows if any(r)]
    if len(rows) < 3 or len(rows[0]) < 3:
        _drop_format_noise(report)
        report.error(ErrorCode.OUTPUT_MISSING, "no similarity matrix found")
        return empty, report
    header = rows[0][1:] if rows[0][0] == "" or len(rows[0]) == len(rows[1]) else rows[0]
    body = rows[1:]
    width = len(header) + 1
    numbered = _data_rows([(i + 2, r) for i, r in enumerate(body)], width, report)
    col_map = _resolve_rows([(1, h) for h in header], config, report)
    row_labels = [r[0] for _, r in numbered]
    row_match = match_labels(row_labels, config)
    col_ids = [col_map.get(h) for h in header]
    row_ids = [row_match.mapping.get(lab) for lab in row_labels]
    for ids, axis in ((col_ids, "column"), (row_ids, "row")):
        seen = set()
        for cid in ids:
            if cid is None:
                continue
            if cid in seen:
                report.error(ErrorCode.DUPLICATE_CARDS,
                             f"{config.label_of(cid)!r} appears twice on the {axis} axis")
            seen.add(cid)
    if {c for c in row_ids if c is not None} != {c for c in col_ids if c is not None}:
        report.error(ErrorCode.MALFORMED_CSV, "row and column labels differ")
    missing = [c.label for c in config.cards if c.id not in col_ids]
    if missing:
        report.error(ErrorCode.OMITTED_CARDS,
                     f"{len(missing)} card(s) missing: " + "; ".join(missing))
    full = np.full((len(cards), len(cards)), np.nan)
    pos = {cid: i for i, cid in enumerate(cards)}
    for (rownum, row), rid in zip(numbered, row_ids):
        if rid is None:
            continue
        for j, cell in enumerate(row[1:]):
            cid = col_ids[j]
            if cid is None:
                continue
            try:
                v = float(cell.rstrip("%"))
            except ValueError:
                report.error(ErrorCode.MALFORMED_CSV, f"non-numeric value {cell!r}",
                             f"row {rownum}, column {j + 2}")
                continue
            if np.isnan(full[pos[rid], pos[cid]]):
                full[pos[rid], pos[cid]] = v
    present = [i for i, cid in enumerate(cards)
               if cid in set(row_ids) and cid in set(col_ids)]
    m = full[np.ix_(present, present)]
    sub = tuple(cards[i] for i in present)
    asym = [(sub[i], sub[j]) for i in range(len(sub)) for j in range(i + 1, len(sub))
            if not np.isnan(m[i, j]) and not np.isnan(m[j, i]) and m[i, j] != m[j, i]]
    if asym:
        a, b = asym[0]
        report.error(ErrorCode.ASYMMETRIC_MATRIX,
                     f"{len(asym)} asymmetric pair(s), first {config.label_of(a)!r}/"
                     f"{config.label_of(b)!r}")
    diag = [sub[i] for i in range(len(sub)) if not np.isnan(m[i, i]) and m[i, i] != 0]
    if diag:
        report.error(ErrorCode.INVALID_MATRIX_VALUE,
                     f"{len(diag)} non-zero diagonal entr(y/ies)")
    vals = m[~np.isnan(m)]
    off = vals[(vals < 0) | (vals > 100)]
    if off.size:
        report.error(ErrorCode.INVALID_MATRIX_VALUE, f"{off.size} value(s) outside [0, 100]")
    step = 100.0 / config.number_of_participants
    bad = [v for v in vals if 0 <= v <= 100 and abs(v - step * round(v / step)) > MATRIX_TOLERANCE]
    if bad:
        report.error(ErrorCode.INVALID_MATRIX_VALUE,
                     f"{len(bad)} value(s) not a multiple of {step:g} (e.g. {bad[0]:g})")
    m = np.nan_to_num(m, nan=0.0)
    return SimilarityMatrix(sub, m, 100), report
