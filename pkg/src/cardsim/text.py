"""Card label normalization and string distance helpers."""

_TRANSLATE = str.maketrans({
    "’": "'",  # right single quotation mark
    "‘": "'",
    "‛": "'",
    "′": "'",
    "ʼ": "'",
    "“": '"',
    "”": '"',
    "„": '"',
    "″": '"',
    "‐": "-",
    "‑": "-",
    "‒": "-",
    "–": "-",
    "—": "-",
    "−": "-",
})


def canonicalize_label(label):
    """Return the canonical form of a card label.

    Trims the ends, collapses internal whitespace runs to one space and maps
    typographic apostrophes, quotes and dashes to their ASCII equivalents.
    Case and all other punctuation are kept.

    >>> canonicalize_label("  user’s   guide ")
    "user's guide"
    """
    return " ".join(label.translate(_TRANSLATE).split())


def levenshtein(a, b, limit=None):
    """Character edit distance between ``a`` and ``b``.

    With ``limit`` set, returns ``limit + 1`` as soon as the distance is known
    to exceed it.
    """
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if limit is not None and len(a) - len(b) > limit:
        return limit + 1
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        if limit is not None and min(cur) > limit:
            return limit + 1
        prev = cur
    return prev[-1]
