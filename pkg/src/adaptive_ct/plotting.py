"""Dependency-free SVG charts for training curves and policy comparisons."""
from __future__ import annotations

import csv
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .trainer import METRICS_HEADER

WIDTH, HEIGHT = 640, 400
MARGIN = 50
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


class MalformedCSV(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


@dataclass
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None


def read_metrics(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return {k: np.zeros(0) for k in METRICS_HEADER}
    if tuple(rows[0]) != METRICS_HEADER:
        raise MalformedCSV(path, 1, f"expected header {','.join(METRICS_HEADER)}")
    cols: dict[str, list[float]] = {k: [] for k in METRICS_HEADER}
    for lineno, row in enumerate(rows[1:], 2):
        if len(row) != len(METRICS_HEADER):
            raise MalformedCSV(path, lineno, f"expected {len(METRICS_HEADER)} fields, got {len(row)}")
        try:
            for k, v in zip(METRICS_HEADER, row):
                cols[k].append(float(v))
        except ValueError as exc:
            raise MalformedCSV(path, lineno, str(exc)) from None
    return {k: np.asarray(v) for k, v in cols.items()}


def read_report(path: str | Path) -> tuple[list[float], int]:
    """Final PSNR values and horizon from an evaluation CSV."""
    values, horizon = [], 0
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if lineno == 1:
                if row[:2] != ["phantom", "final_psnr"]:
                    raise MalformedCSV(path, 1, "expected an evaluation report header")
                continue
            if len(row) != 3:
                raise MalformedCSV(path, lineno, f"expected 3 fields, got {len(row)}")
            try:
                values.append(float(row[1]))
            except ValueError as exc:
                raise MalformedCSV(path, lineno, str(exc)) from None
            horizon = len(row[2].split())
    return values, horizon


def read_summary(path: str | Path) -> list[tuple[str, int, float, float]]:
    """Rows ``(policy, M, mean_psnr, std_psnr)`` of an evaluation summary."""
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            fields = [f.strip() for f in line.split(",")]
            if lineno == 1:
                if fields != ["policy", "M", "mean_psnr", "std_psnr"]:
                    raise MalformedCSV(path, 1, "expected a summary header")
                continue
            if not line.strip():
                continue
            if len(fields) != 4:
                raise MalformedCSV(path, lineno, f"expected 4 fields, got {len(fields)}")
            try:
                out.append((fields[0], int(fields[1]), float(fields[2]), float(fields[3])))
            except ValueError as exc:
                raise MalformedCSV(path, lineno, str(exc)) from None
    return out


def summary_chart(rows: Sequence[tuple[str, int, float, float]]) -> str:
    """Mean final PSNR against M per policy, with a +-std band."""
    by_policy: dict[str, list[tuple[int, float, float]]] = {}
    for policy, m, mean, std in rows:
        by_policy.setdefault(policy, []).append((m, mean, std))
    series = []
    for policy, pts in by_policy.items():
        pts.sort()
        m, mean, std = (np.array(c, dtype=np.float64) for c in zip(*pts))
        series.append(Series(policy, m, mean, mean - std, mean + std))
    return line_chart(series, "final PSNR by number of angles", "M", "PSNR [dB]")


def rolling_band(y: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Trailing-window mean and std (window shrinks at the start)."""
    if y.size == 0:
        return y.copy(), y.copy()
    c1 = np.concatenate([[0.0], np.cumsum(y)])
    c2 = np.concatenate([[0.0], np.cumsum(y * y)])
    idx = np.arange(1, y.size + 1)
    start = np.maximum(0, idx - window)
    n = idx - start
    mean = (c1[idx] - c1[start]) / n
    var = np.maximum((c2[idx] - c2[start]) / n - mean * mean, 0.0)
    return mean, np.sqrt(var)


def _svg(title: str) -> ET.Element:
    root = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(WIDTH),
                      height=str(HEIGHT), viewBox=f"0 0 {WIDTH} {HEIGHT}")
    ET.SubElement(root, "rect", x="0", y="0", width=str(WIDTH), height=str(HEIGHT), fill="white")
    t = ET.SubElement(root, "text", x=str(WIDTH // 2), y="20", attrib={"text-anchor": "middle"})
    t.text = title
    return root


def _axes(root, xlim, ylim, xlabel, ylabel):
    x0, y0, x1, y1 = MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN // 2, MARGIN
    ET.SubElement(root, "line", x1=str(x0), y1=str(y0), x2=str(x1), y2=str(y0), stroke="black")
    ET.SubElement(root, "line", x1=str(x0), y1=str(y0), x2=str(x0), y2=str(y1), stroke="black")
    for val, pos, anchor, (tx, ty) in (
            (xlim[0], x0, "middle", (x0, y0 + 15)), (xlim[1], x1, "middle", (x1, y0 + 15)),
            (ylim[0], y0, "end", (x0 - 5, y0)), (ylim[1], y1, "end", (x0 - 5, y1))):
        t = ET.SubElement(root, "text", x=f"{tx:.1f}", y=f"{ty:.1f}", attrib={"text-anchor": anchor,
                                                                              "font-size": "10"})
        t.text = f"{val:.4g}"
    lx = ET.SubElement(root, "text", x=str((x0 + x1) // 2), y=str(HEIGHT - 10),
                       attrib={"text-anchor": "middle"})
    lx.text = xlabel
    ly = ET.SubElement(root, "text", x="12", y=str((y0 + y1) // 2),
                       transform=f"rotate(-90 12 {(y0 + y1) // 2})", attrib={"text-anchor": "middle"})
    ly.text = ylabel

    def tx(x):
        return x0 + (x - xlim[0]) / ((xlim[1] - xlim[0]) or 1.0) * (x1 - x0)

    def ty(y):
        return y0 - (y - ylim[0]) / ((ylim[1] - ylim[0]) or 1.0) * (y0 - y1)

    return tx, ty


def _limits(arrays: Sequence[np.ndarray], default=(0.0, 1.0)) -> tuple[float, float]:
    arrays = [a for a in arrays if a is not None and a.size]
    if not arrays:
        return default
    lo = min(float(a.min()) for a in arrays)
    hi = max(float(a.max()) for a in arrays)
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def line_chart(series: Sequence[Series], title: str, xlabel: str, ylabel: str) -> str:
    root = _svg(title)
    xlim = _limits([s.x for s in series])
    ylim = _limits([a for s in series for a in (s.y, s.lo, s.hi)])
    tx, ty = _axes(root, xlim, ylim, xlabel, ylabel)
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        if s.x.size == 0:
            continue
        if s.lo is not None and s.hi is not None:
            pts = [(tx(a), ty(b)) for a, b in zip(s.x, s.hi)]
            pts += [(tx(a), ty(b)) for a, b in zip(s.x[::-1], s.lo[::-1])]
            ET.SubElement(root, "polygon", points=" ".join(f"{a:.2f},{b:.2f}" for a, b in pts),
                          fill=color, attrib={"fill-opacity": "0.2", "stroke": "none"})
        ET.SubElement(root, "polyline",
                      points=" ".join(f"{tx(a):.2f},{ty(b):.2f}" for a, b in zip(s.x, s.y)),
                      fill="none", stroke=color, attrib={"stroke-width": "1.5"})
        lab = ET.SubElement(root, "text", x=str(WIDTH - 200), y=str(40 + 15 * i), fill=color)
        lab.text = s.label
    return ET.tostring(root, encoding="unicode")


def box_chart(groups: dict[str, Sequence[float]], title: str, ylabel: str) -> str:
    """One box (quartiles, whiskers at min/max, mean marker) per labelled group."""
    root = _svg(title)
    arrays = {k: np.asarray(v, dtype=float) for k, v in groups.items()}
    ylim = _limits(list(arrays.values()))
    tx, ty = _axes(root, (0.0, float(max(len(arrays), 1))), ylim, "policy", ylabel)
    for i, (label, vals) in enumerate(arrays.items()):
        color = PALETTE[i % len(PALETTE)]
        cx = tx(i + 0.5)
        half = 0.3 * (tx(1.0) - tx(0.0))
        lab = ET.SubElement(root, "text", x=f"{cx:.2f}", y=str(HEIGHT - MARGIN + 28),
                            attrib={"text-anchor": "middle", "font-size": "10"})
        lab.text = label
        if vals.size == 0:
            continue
        q1, med, q3 = np.percentile(vals, [25, 50, 75])
        ET.SubElement(root, "line", x1=f"{cx:.2f}", y1=f"{ty(vals.min()):.2f}", x2=f"{cx:.2f}",
                      y2=f"{ty(vals.max()):.2f}", stroke=color)
        ET.SubElement(root, "rect", x=f"{cx - half:.2f}", y=f"{ty(q3):.2f}", width=f"{2 * half:.2f}",
                      height=f"{max(ty(q1) - ty(q3), 0.5):.2f}", fill=color,
                      attrib={"fill-opacity": "0.3", "stroke": color})
        ET.SubElement(root, "line", x1=f"{cx - half:.2f}", y1=f"{ty(med):.2f}", x2=f"{cx + half:.2f}",
                      y2=f"{ty(med):.2f}", stroke=color, attrib={"stroke-width": "2"})
        ET.SubElement(root, "circle", cx=f"{cx:.2f}", cy=f"{ty(vals.mean()):.2f}", r="3", fill=color)
    return ET.tostring(root, encoding="unicode")


def training_curve_svg(metrics: dict[str, dict[str, np.ndarray]], window: int = 500,
                       column: str = "final_psnr") -> str:
    series = []
    for label, cols in metrics.items():
        mean, std = rolling_band(cols[column], window)
        series.append(Series(label, cols["episode"], mean, mean - std, mean + std))
    return line_chart(series, f"training {column} ({window}-episode window)", "episode", column)
