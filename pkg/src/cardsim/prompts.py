"""Prompt templates for the four simulation variants and their rendering."""

from __future__ import annotations

import enum
import hashlib
import re
from dataclasses import dataclass
from importlib import resources

TEMPLATE_VERSION = "1"

PLACEHOLDERS = ("numberOfParticipants", "demographicAttributes", "welcomeMessage",
                "instructions", "cards", "numberOfCards")
_PLACEHOLDER_RE = re.compile(r"\{(" + "|".join(PLACEHOLDERS) + r")\}")
_ANY_TOKEN_RE = re.compile(r"\{[A-Za-z_]+\}")

NOT_SPECIFIED = "not specified"

# Lines of the study-context block; P4 is P3 without them.
CONTEXT_BLOCK_PREFIXES = (
    "Group the cards from the perspective of participants with the following context:",
    "- Demographic attributes for respondents are: ",
    "- Welcome message received by participants is: ",
    "- Instructions before the task received by participants are: ",
)


class PromptVariant(enum.Enum):
    P1 = "p1"  # raw data simulation
    P2 = "p2"  # similarity matrix generation
    P3 = "p3"  # clustering generation
    P4 = "p4"  # clustering generation without context

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown prompt variant {value!r}") from None

    @property
    def output_format(self):
        return {"p1": "raw", "p2": "matrix"}.get(self.value, "clustering")

    @property
    def needs_large_output(self):
        return self in (PromptVariant.P1, PromptVariant.P2)


@dataclass(frozen=True)
class Template:
    variant: PromptVariant
    text: str
    checksum: str
    derived_from: str | None = None


def _sha256(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def strip_context_block(text):
    lines = text.split("\n")
    kept = [ln for ln in lines if not ln.startswith(CONTEXT_BLOCK_PREFIXES)]
    return "\n".join(kept)


def _load():
    out = {}
    pkg = resources.files("cardsim") / "templates"
    for v in (PromptVariant.P1, PromptVariant.P2, PromptVariant.P3):
        text = (pkg / f"{v.value}.txt").read_text(encoding="utf-8")
        stray = set(_ANY_TOKEN_RE.findall(text)) - {"{" + p + "}" for p in PLACEHOLDERS}
        if stray:
            raise RuntimeError(f"template {v.value} has unknown placeholders {sorted(stray)}")
        out[v] = Template(v, text, _sha256(text))
    p4 = strip_context_block(out[PromptVariant.P3].text)
    out[PromptVariant.P4] = Template(PromptVariant.P4, p4, _sha256(p4), derived_from="p3")
    return out


TEMPLATES = _load()


@dataclass(frozen=True)
class RenderedPrompt:
    variant: PromptVariant
    text: str
    placeholders_filled: dict
    template_checksum: str

    @property
    def checksum(self):
        return _sha256(self.text)


def _or_unspecified(value):
    return value if value is not None and value.strip() else NOT_SPECIFIED


def render(config, variant):
    """Fill the variant's template from a study config.

    Missing context fields render as ``not specified``; card labels are
    inserted byte for byte, one per line.
    """
    variant = PromptVariant.parse(variant)
    tpl = TEMPLATES[variant]
    values = {
        "numberOfParticipants": str(config.number_of_participants),
        "demographicAttributes": _or_unspecified(config.demographics),
        "welcomeMessage": _or_unspecified(config.welcome_message),
        "instructions": _or_unspecified(config.instructions),
        "cards": "\n".join(config.labels),
        "numberOfCards": str(len(config.cards)),
    }
    used = {}

    def fill(m):
        used[m.group(1)] = values[m.group(1)]
        return values[m.group(1)]

    text = _PLACEHOLDER_RE.sub(fill, tpl.text)
    return RenderedPrompt(variant, text, used, tpl.checksum)
