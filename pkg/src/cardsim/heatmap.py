"""Deterministic SVG heatmaps of similarity matrices."""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .errors import CardSetMismatchError

LIGHT = (247, 251, 255)
DARK = (8, 48, 107)


def shade(value, lo=0.0, hi=100.0):
    """Hex colour on a monotone light-to-dark ramp over ``[lo, hi]``."""
    t = 0.0 if hi == lo else min(max((value - lo) / (hi - lo), 0.0), 1.0)
    rgb = [round(a + (b - a) * t) for a, b in zip(LIGHT, DARK)]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def order_by_clustering(cards, clustering):
    """Cards grouped by category (category order, then axis order within)."""
    pos = {c: i for i, c in enumerate(cards)}
    if clustering.card_set() != set(cards):
        raise CardSetMismatchError("ordering clustering does not cover the matrix cards")
    out = []
    for ids in clustering.clusters.values():
        out.extend(sorted(ids, key=pos.__getitem__))
    return tuple(out)


@dataclass(frozen=True)
class HeatmapSpec:
    title: str
    matrix: object  # SimilarityMatrix
    order: tuple

    def __post_init__(self):
        if sorted(self.order) != sorted(self.matrix.cards) or \
                len(set(self.order)) != len(self.order):
            raise CardSetMismatchError("heatmap order is not a permutation of the matrix axis")


def build_specs(named_matrices, order=None):
    """Align several matrices to one shared card order.

    ``named_matrices`` is a list of ``(title, SimilarityMatrix)``.
    """
    if not named_matrices:
        raise ValueError("no matrices to render")
    base = set(named_matrices[0][1].cards)
    for title, m in named_matrices[1:]:
        if set(m.cards) != base or len(m.cards) != len(base):
            raise CardSetMismatchError(f"matrix {title!r} has a different card set")
    order = tuple(order) if order is not None else tuple(named_matrices[0][1].cards)
    return [HeatmapSpec(t, m, order) for t, m in named_matrices]


def render_svg(specs, labels, cell=14, label_width=None, gap=40):
    """Side-by-side heatmaps sharing card order and colour scale.

    ``labels`` maps card id -> display label.  Output depends only on the
    inputs, so repeated renders are byte-identical.
    """
    n = len(specs[0].order)
    longest = max((len(labels[c]) for c in specs[0].order), default=0)
    lw = label_width if label_width is not None else min(6 * longest + 8, 240)
    side = n * cell
    top = 24 + lw
    width = len(specs) * (lw + side) + (len(specs) - 1) * gap + 10
    height = top + side + 10
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">',
    ]
    for p, spec in enumerate(specs):
        x0 = p * (lw + side + gap) + lw
        vals = spec.matrix.reorder(spec.order).values
        out.append(f'<g id="panel-{p + 1}">')
        out.append(f'<text x="{x0}" y="14" font-size="12">{escape(spec.title)}</text>')
        for i, cid in enumerate(spec.order):
            y = top + i * cell
            text = escape(labels[cid])
            out.append(f'<text x="{x0 - 4}" y="{y + cell - 3}" text-anchor="end">{text}</text>')
            cx = x0 + i * cell + cell - 3
            out.append(f'<text x="{cx}" y="{top - 4}" transform="rotate(-90 {cx} {top - 4})">'
                       f'{text}</text>')
        for i in range(n):
            for j in range(n):
                v = float(vals[i, j])
                out.append(f'<rect x="{x0 + j * cell}" y="{top + i * cell}" width="{cell}" '
                           f'height="{cell}" fill="{shade(v)}"><title>{v:g}</title></rect>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def block_means(matrix, clustering):
    """Mean similarity inside vs between categories; handy for sanity checks."""
    lab = np.asarray(clustering.labels_for(matrix.cards))
    same = lab[:, None] == lab[None, :]
    off = ~np.eye(len(lab), dtype=bool)
    v = matrix.values
    inside = v[same & off]
    between = v[~same]
    return (float(inside.mean()) if inside.size else float("nan"),
            float(between.mean()) if between.size else float("nan"))
