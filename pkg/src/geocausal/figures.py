"""Deterministic SVG figures: effect-vs-L panels, CATE curves, mediation bars.

Hand-rolled SVG keeps the package free of raster-graphics dependencies and
makes byte-identical output trivial.  Point estimates draw with thick 95%
and thin 90% interval bars; CATE curves draw a banded polygon.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

_W, _H = 640, 420
_MARGIN = 56


def _fmt(x: float) -> str:
    return "%.6g" % float(x)


class _Canvas:
    def __init__(self, title: str, xlabel: str, ylabel: str):
        self.parts = [
            '<svg xmlns="http://www.w3.org/2000/svg" width="%d" height="%d" '
            'viewBox="0 0 %d %d">' % (_W, _H, _W, _H),
            '<rect width="%d" height="%d" fill="white"/>' % (_W, _H),
            '<text x="%d" y="24" font-family="sans-serif" font-size="15" '
            'text-anchor="middle">%s</text>' % (_W // 2, title),
            '<text x="%d" y="%d" font-family="sans-serif" font-size="12" '
            'text-anchor="middle">%s</text>' % (_W // 2, _H - 10, xlabel),
            '<text x="16" y="%d" font-family="sans-serif" font-size="12" '
            'text-anchor="middle" transform="rotate(-90 16 %d)">%s</text>'
            % (_H // 2, _H // 2, ylabel),
        ]
        self.x0, self.y0 = _MARGIN, _H - _MARGIN
        self.x1, self.y1 = _W - 24, 36

    def scales(self, xmin, xmax, ymin, ymax):
        if xmax <= xmin:
            xmax = xmin + 1.0
        if ymax <= ymin:
            ymax = ymin + 1.0
        pad = 0.06 * (ymax - ymin)
        ymin, ymax = ymin - pad, ymax + pad
        self._xmap = lambda x: self.x0 + (x - xmin) / (xmax - xmin) * (self.x1 - self.x0)
        self._ymap = lambda y: self.y0 + (y - ymin) / (ymax - ymin) * (self.y1 - self.y0)
        self._ylim = (ymin, ymax)

    def axes(self):
        self.parts.append(
            '<line x1="%s" y1="%s" x2="%s" y2="%s" stroke="black"/>'
            % (self.x0, self.y0, self.x1, self.y0))
        self.parts.append(
            '<line x1="%s" y1="%s" x2="%s" y2="%s" stroke="black"/>'
            % (self.x0, self.y0, self.x0, self.y1))
        ymin, ymax = self._ylim
        if ymin < 0 < ymax:
            zy = self._ymap(0.0)
            self.parts.append(
                '<line x1="%s" y1="%s" x2="%s" y2="%s" stroke="#999" '
                'stroke-dasharray="4 3"/>' % (self.x0, _fmt(zy), self.x1, _fmt(zy)))

    def vbar(self, x, lo, hi, width, color):
        self.parts.append(
            '<line x1="%s" y1="%s" x2="%s" y2="%s" stroke="%s" stroke-width="%s"/>'
            % (_fmt(self._xmap(x)), _fmt(self._ymap(lo)),
               _fmt(self._xmap(x)), _fmt(self._ymap(hi)), color, width))

    def dot(self, x, y, color="#d95f02", r=3.5):
        self.parts.append(
            '<circle cx="%s" cy="%s" r="%s" fill="%s"/>'
            % (_fmt(self._xmap(x)), _fmt(self._ymap(y)), r, color))

    def polyline(self, xs, ys, color="#1b6ca8", width=1.8):
        pts = " ".join("%s,%s" % (_fmt(self._xmap(x)), _fmt(self._ymap(y)))
                       for x, y in zip(xs, ys))
        self.parts.append(
            '<polyline points="%s" fill="none" stroke="%s" stroke-width="%s"/>'
            % (pts, color, width))

    def band(self, xs, lo, hi, color="#1b6ca8", opacity=0.22):
        fwd = ["%s,%s" % (_fmt(self._xmap(x)), _fmt(self._ymap(y)))
               for x, y in zip(xs, hi)]
        back = ["%s,%s" % (_fmt(self._xmap(x)), _fmt(self._ymap(y)))
                for x, y in zip(reversed(list(xs)), reversed(list(lo)))]
        self.parts.append(
            '<polygon points="%s" fill="%s" fill-opacity="%s" stroke="none"/>'
            % (" ".join(fwd + back), color, opacity))

    def tick_labels(self, xs, ys):
        for x in xs:
            self.parts.append(
                '<text x="%s" y="%s" font-family="sans-serif" font-size="11" '
                'text-anchor="middle">%s</text>'
                % (_fmt(self._xmap(x)), self.y0 + 16, _fmt(x)))
        for y in ys:
            self.parts.append(
                '<text x="%s" y="%s" font-family="sans-serif" font-size="11" '
                'text-anchor="end">%s</text>'
                % (self.x0 - 6, _fmt(self._ymap(y) + 4), _fmt(y)))

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _yticks(ymin, ymax, n=5):
    return list(np.linspace(ymin, ymax, n))


def effect_vs_l_panel(results: list[dict], estimator: str = "hajek",
                      title: str = "Effect by intervention length") -> str:
    """Point estimates over L with thick 95% and thin 90% bars."""
    if not results:
        raise ValueError("no results to plot")
    Ls = [r["L"] for r in results]
    points = [r[estimator] for r in results]
    lo95 = [r["ci95"][0] for r in results]
    hi95 = [r["ci95"][1] for r in results]
    lo90 = [r["ci90"][0] for r in results]
    hi90 = [r["ci90"][1] for r in results]
    canvas = _Canvas(title, "intervention length L", "effect")
    canvas.scales(min(Ls) - 0.5, max(Ls) + 0.5, min(lo95 + [0.0]), max(hi95 + [0.0]))
    canvas.axes()
    canvas.tick_labels(Ls, _yticks(min(lo95 + [0.0]), max(hi95 + [0.0])))
    for L, p, l95, h95, l90, h90 in zip(Ls, points, lo95, hi95, lo90, hi90):
        canvas.vbar(L, l95, h95, 4.5, "#9ecae1")
        canvas.vbar(L, l90, h90, 1.6, "#3182bd")
        canvas.dot(L, p)
    return canvas.render()


def cate_curve_panel(evaluation: dict, title: str = "CATE projection") -> str:
    """Projection curve over moderator values with a 95% band."""
    r = np.asarray(evaluation["r"], dtype=float)
    value = np.asarray(evaluation["value"], dtype=float)
    ci95 = np.asarray(evaluation["ci95"], dtype=float)
    canvas = _Canvas(title, "moderator value", "CATE")
    canvas.scales(float(r.min()), float(r.max()),
                  float(min(ci95[:, 0].min(), 0.0)),
                  float(max(ci95[:, 1].max(), 0.0)))
    canvas.axes()
    canvas.tick_labels(list(np.linspace(r.min(), r.max(), 5)),
                       _yticks(min(ci95[:, 0].min(), 0.0), max(ci95[:, 1].max(), 0.0)))
    canvas.band(r, ci95[:, 0], ci95[:, 1])
    canvas.polyline(r, value)
    return canvas.render()


def mediation_bars(effects: dict, title: str = "Total, direct, indirect effects") -> str:
    """One bar group per contrast with thick 95% / thin 90% interval bars."""
    order = [k for k in ("total", "direct", "indirect") if k in effects]
    if not order:
        raise ValueError("no mediation contrasts to plot")
    canvas = _Canvas(title, "contrast", "effect")
    lo = min(effects[k]["ci95"][0] for k in order)
    hi = max(effects[k]["ci95"][1] for k in order)
    canvas.scales(-0.5, len(order) - 0.5, min(lo, 0.0), max(hi, 0.0))
    canvas.axes()
    for i, key in enumerate(order):
        e = effects[key]
        canvas.vbar(i, e["ci95"][0], e["ci95"][1], 5.0, "#9ecae1")
        canvas.vbar(i, e["ci90"][0], e["ci90"][1], 1.8, "#3182bd")
        canvas.dot(i, e["hajek"])
        canvas.parts.append(
            '<text x="%s" y="%s" font-family="sans-serif" font-size="12" '
            'text-anchor="middle">%s</text>'
            % (_fmt(canvas._xmap(i)), canvas.y0 + 16, key))
    return canvas.render()


def write_svg(text: str, path) -> None:
    Path(path).write_text(text)
