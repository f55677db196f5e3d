"""Sweep report emission: CSV, JSON, and a small self-contained SVG chart.

All three outputs are pure functions of the result, with explicit float
formatting, so identical sweeps always produce identical bytes.
"""

from __future__ import annotations

import json

from .errors import ContractError
from .evaluate import SweepResult

_SVG_W, _SVG_H = 480, 360
_MARGIN = 48


def emit_report(result: SweepResult, fmt: str) -> bytes:
    if fmt == "csv":
        return _csv(result)
    if fmt == "json":
        return _json(result)
    if fmt == "svg":
        return _svg(result)
    raise ContractError(f"unknown report format {fmt!r} (csv, json, svg)")


def _csv(result: SweepResult) -> bytes:
    lines = ["row_type,v_target,v_result,seed,avg_diff,spearman"]
    for t, r, s in result.pairs:
        lines.append(f"pair,{t!r},{r!r},{s},,")
    lines.append(f"summary,,,,{result.avg_diff!r},{result.spearman!r}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _json(result: SweepResult) -> bytes:
    doc = {
        "attribute": result.attribute.value,
        "pairs": [{"v_target": t, "v_result": r, "seed": s} for t, r, s in result.pairs],
        "avg_diff": result.avg_diff,
        "spearman": result.spearman,
    }
    return (json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def _xy(t: float, r: float) -> tuple[float, float]:
    x = _MARGIN + t * (_SVG_W - 2 * _MARGIN)
    y = _SVG_H - _MARGIN - r * (_SVG_H - 2 * _MARGIN)
    return x, y


def _svg(result: SweepResult) -> bytes:
    targets, means = result.per_target_means()
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in (_xy(t, m) for t, m in zip(targets, means)))
    x0, y0 = _xy(0.0, 0.0)
    x1, y1 = _xy(1.0, 1.0)
    circles = "".join(
        f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="#1f6fb2"/>'
        for x, y in (_xy(t, m) for t, m in zip(targets, means))
    )
    title = (
        f"{result.attribute.value}: mean achieved vs target "
        f"(avg_diff={result.avg_diff:.4f}, spearman={result.spearman:.4f})"
    )
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}" '
        f'viewBox="0 0 {_SVG_W} {_SVG_H}">'
        f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="white"/>'
        f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y0:.2f}" stroke="black"/>'
        f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x0:.2f}" y2="{y1:.2f}" stroke="black"/>'
        f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" '
        f'stroke="#999999" stroke-dasharray="4 3"/>'
        f'<polyline points="{pts}" fill="none" stroke="#1f6fb2" stroke-width="1.5"/>'
        f"{circles}"
        f'<text x="{_SVG_W / 2:.0f}" y="20" text-anchor="middle" font-size="12">{title}</text>'
        f'<text x="{_SVG_W / 2:.0f}" y="{_SVG_H - 10}" text-anchor="middle" '
        f'font-size="11">v_target</text>'
        f'<text x="14" y="{_SVG_H / 2:.0f}" text-anchor="middle" font-size="11" '
        f'transform="rotate(-90 14 {_SVG_H / 2:.0f})">mean v_result</text>'
        f"</svg>"
    )
    return svg.encode("utf-8")
