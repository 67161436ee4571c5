"""Two-objective Pareto analysis over (efficiency score, accuracy).

Both objectives are maximized. Dominance is strict: ``a`` dominates ``b``
when it is at least as good on both axes and better on one, so exact
duplicates never dominate each other and all survive on the front.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

from .exceptions import ContractError

__all__ = [
    "ParetoPoint",
    "dominates",
    "pareto_front",
    "pareto_front_bruteforce",
    "query_front",
    "points_from_records",
    "emit_front_plot",
    "read_dat",
]


@dataclass(frozen=True)
class ParetoPoint:
    efficiency_score: float
    accuracy: float
    record_id: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.efficiency_score) and math.isfinite(self.accuracy)):
            raise ValueError(f"non-finite Pareto point {self}")


def dominates(a: ParetoPoint, b: ParetoPoint) -> bool:
    return (
        a.efficiency_score >= b.efficiency_score
        and a.accuracy >= b.accuracy
        and (a.efficiency_score > b.efficiency_score or a.accuracy > b.accuracy)
    )


def pareto_front(points):
    """Non-dominated subset, sorted by efficiency ascending.

    Sweeps points in order of decreasing efficiency, keeping a point when its
    accuracy reaches the running maximum. Points with equal efficiency are
    grouped so a same-efficiency, higher-accuracy point still dominates.
    """
    points = list(points)
    if not points:
        raise ContractError("pareto_front needs at least one point")
    ordered = sorted(points, key=lambda p: (-p.efficiency_score, -p.accuracy))
    front = []
    best = -math.inf
    i = 0
    while i < len(ordered):
        eff = ordered[i].efficiency_score
        j = i
        while j < len(ordered) and ordered[j].efficiency_score == eff:
            j += 1
        group = ordered[i:j]
        top = group[0].accuracy
        # only the group's top accuracy can survive, and only if nothing
        # more efficient is at least as accurate and strictly better
        if top > best:
            front.extend(p for p in group if p.accuracy == top)
            best = top
        i = j
    return sorted(front, key=lambda p: (p.efficiency_score, -p.accuracy))


def pareto_front_bruteforce(points):
    """O(n^2) reference: keep every point no other point dominates."""
    points = list(points)
    if not points:
        raise ContractError("pareto_front needs at least one point")
    front = [p for p in points if not any(dominates(q, p) for q in points)]
    return sorted(front, key=lambda p: (p.efficiency_score, -p.accuracy))


def query_front(frontier, min_accuracy=None, min_efficiency=None):
    """Best frontier point meeting a bound, or ``None`` if unattainable.

    With ``min_accuracy`` the most efficient qualifying point is returned;
    with ``min_efficiency`` the most accurate one. Bounds are inclusive.
    """
    if (min_accuracy is None) == (min_efficiency is None):
        raise ValueError("give exactly one of min_accuracy / min_efficiency")
    if min_accuracy is not None:
        ok = [p for p in frontier if p.accuracy >= min_accuracy]
        return max(ok, key=lambda p: (p.efficiency_score, p.accuracy), default=None)
    ok = [p for p in frontier if p.efficiency_score >= min_efficiency]
    return max(ok, key=lambda p: (p.accuracy, p.efficiency_score), default=None)


def points_from_records(records):
    """Pareto points from experiment records, skipping failed ones."""
    out = []
    for r in records:
        if r.failed:
            continue
        if not (math.isfinite(r.efficiency_score) and math.isfinite(r.accuracy_mean)):
            continue
        out.append(ParetoPoint(r.efficiency_score, r.accuracy_mean, r.record_id))
    return out


# plotting ---------------------------------------------------------------------


def _write_dat(points, frontier, path):
    on_front = {id(p) for p in frontier}
    lines = ["# efficiency_score accuracy on_front record_id"]
    for p in points:
        lines.append(f"{p.efficiency_score!r} {p.accuracy!r} {int(id(p) in on_front)} {p.record_id}")
    lines.append("")
    lines.append("")
    lines.append("# frontier polyline")
    for p in frontier:
        lines.append(f"{p.efficiency_score!r} {p.accuracy!r} 1 {p.record_id}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_dat(path):
    """Read back ``(points, frontier)`` written next to a plot."""
    blocks = [[]]
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                if blocks[-1]:
                    blocks.append([])
                continue
            if line.startswith("#"):
                continue
            parts = line.split(maxsplit=3)
            rid = parts[3] if len(parts) > 3 else ""
            blocks[-1].append(ParetoPoint(float(parts[0]), float(parts[1]), rid))
    blocks = [b for b in blocks if b]
    points = blocks[0] if blocks else []
    frontier = blocks[1] if len(blocks) > 1 else []
    return points, frontier


def emit_front_plot(points, frontier, path, title="Pareto front"):
    """Write an SVG scatter of ``points`` with the front highlighted.

    A gnuplot-readable ``.dat`` file with the same data is written next to
    it. The front is drawn as a straight-segment polyline in efficiency order.
    Returns ``(svg_path, dat_path)``.
    """
    points = list(points)
    frontier = list(frontier)
    ids = {id(p) for p in points}
    keys = {(p.efficiency_score, p.accuracy, p.record_id) for p in points}
    for p in frontier:
        if id(p) not in ids and (p.efficiency_score, p.accuracy, p.record_id) not in keys:
            raise ContractError(f"frontier point {p} is not among the plotted points")

    path = str(path)
    dat_path = (path[:-4] if path.endswith(".svg") else path) + ".dat"
    W, H, pad = 640, 480, 60
    xs = [p.efficiency_score for p in points] or [0.0, 1.0]
    ys = [p.accuracy for p in points] or [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5 * abs(x0 or 1), x1 + 0.5 * abs(x1 or 1)
    if y1 == y0:
        y0, y1 = y0 - 0.05, y1 + 0.05

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (W - 2 * pad)

    def sy(y):
        return H - pad - (y - y0) / (y1 - y0) * (H - 2 * pad)

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>',
        f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H - pad}" stroke="black"/>',
        f'<text id="xlabel" x="{W / 2}" y="{H - 15}" text-anchor="middle" font-size="13">efficiency</text>',
        f'<text id="ylabel" x="18" y="{H / 2}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 18 {H / 2})">accuracy</text>',
        f'<text x="{pad}" y="{H - pad + 16}" font-size="10">{x0:.3g}</text>',
        f'<text x="{W - pad}" y="{H - pad + 16}" font-size="10" text-anchor="end">{x1:.3g}</text>',
        f'<text x="{pad - 4}" y="{H - pad}" font-size="10" text-anchor="end">{y0:.3g}</text>',
        f'<text x="{pad - 4}" y="{pad + 4}" font-size="10" text-anchor="end">{y1:.3g}</text>',
        '<g id="points" fill="cyan" stroke="teal">',
    ]
    for p in points:
        out.append(
            f'<circle cx="{sx(p.efficiency_score):.2f}" cy="{sy(p.accuracy):.2f}" r="4">'
            f"<title>{escape(p.record_id)}</title></circle>"
        )
    out.append("</g>")
    verts = " ".join(f"{sx(p.efficiency_score):.2f},{sy(p.accuracy):.2f}" for p in frontier)
    out.append(f'<polyline id="frontier" points="{verts}" fill="none" stroke="blue" stroke-width="2"/>')
    out.append('<g id="front-points" fill="red">')
    for p in frontier:
        out.append(f'<circle cx="{sx(p.efficiency_score):.2f}" cy="{sy(p.accuracy):.2f}" r="5"/>')
    out.append("</g>")
    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")
    _write_dat(points, frontier, dat_path)
    return path, dat_path
