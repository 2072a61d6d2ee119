"""Static SVG space-time diagrams for one-dimensional systems.

Time runs upward at 8 px per unit and sites sit 24 px apart.  Each element
class (``timeline``, ``mark``, ``arrow``, ``infected``) is tagged so that
diagrams can be inspected programmatically.
"""
from __future__ import annotations

from xml.sax.saxutils import quoteattr

import numpy as np

from .graphical import HarrisSystem, active_arrows

PX_PER_TIME = 8.0
PX_PER_SITE = 24.0
MARGIN = 24.0


def _f(v: float) -> str:
    return f"{v:.2f}"


def render_svg(system: HarrisSystem, lam: float, infected=None, title: str | None = None) -> str:
    """SVG text for ``system`` at rate ``lam``; ``infected`` is an optional InfectedIntervalSet."""
    lat = system.lattice
    if lat.d != 1:
        raise ValueError("diagrams are drawn for one-dimensional lattices only")
    lo = lat.lower[0]
    t_lo, t_hi = system.t_lo, system.t_hi
    width = 2 * MARGIN + PX_PER_SITE * (lat.n_sites - 1)
    height = 2 * MARGIN + PX_PER_TIME * (t_hi - t_lo)

    def x_of(site: int) -> float:
        return MARGIN + PX_PER_SITE * (site - lo)

    def y_of(t: float) -> float:
        return MARGIN + PX_PER_TIME * (t_hi - t)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" height="{_f(height)}" '
        f'viewBox="0 0 {_f(width)} {_f(height)}">',
        '<defs><marker id="head" markerWidth="6" markerHeight="6" refX="5" refY="3" orient="auto">'
        '<path d="M0,0 L6,3 L0,6 z" fill="#c0392b"/></marker></defs>',
    ]
    if title:
        out.append(f"<title>{quoteattr(title)[1:-1]}</title>")
    for i in range(lat.n_sites):
        x = x_of(lo + i)
        out.append(f'<line class="timeline" x1="{_f(x)}" y1="{_f(y_of(t_lo))}" x2="{_f(x)}" '
                   f'y2="{_f(y_of(t_hi))}" stroke="#888" stroke-width="1"/>')
    for i in range(lat.n_sites):
        x = x_of(lo + i)
        for t in system.marks_of(i):
            if t_lo <= t <= t_hi:
                y = y_of(float(t))
                out.append(f'<line class="mark" x1="{_f(x - 6)}" y1="{_f(y)}" x2="{_f(x + 6)}" '
                           f'y2="{_f(y)}" stroke="#000" stroke-width="2"/>')
    if infected is not None:
        for site, ivs in sorted(infected.canonical().items()):
            x = x_of(site if np.isscalar(site) else site[0])
            for s, e, _ in ivs:
                out.append(f'<line class="infected" x1="{_f(x)}" y1="{_f(y_of(s))}" x2="{_f(x)}" '
                           f'y2="{_f(y_of(e))}" stroke="#2e86c1" stroke-width="5" stroke-opacity="0.7"/>')
    view = active_arrows(system, lam)
    for e in range(view.edge_src.size):
        xs = x_of(lat.coord(int(view.edge_src[e])))
        xd = x_of(lat.coord(int(view.edge_dst[e])))
        shrink = 3.0 if xd > xs else -3.0
        for t in view.on_edge(e):
            y = y_of(float(t))
            out.append(f'<line class="arrow" x1="{_f(xs)}" y1="{_f(y)}" x2="{_f(xd - shrink)}" y2="{_f(y)}" '
                       f'stroke="#c0392b" stroke-width="1.5" marker-end="url(#head)"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def count_elements(svg: str) -> dict:
    """Number of elements of each tagged class in an SVG produced by :func:`render_svg`."""
    return {k: svg.count(f'class="{k}"') for k in ("timeline", "mark", "arrow", "infected")}


__all__ = ["render_svg", "count_elements", "PX_PER_TIME", "PX_PER_SITE"]
