"""Trace persistence (CSV, JSON) and dependency-free SVG charts."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import InvalidInput
from .topology import ISOLATED, NOMINAL, RECOVERED, RETRIEVAL

FMT = ".17g"
PHASE_LEVEL = {NOMINAL: 0, ISOLATED: 1, RETRIEVAL: 2, RECOVERED: 3}
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
_GROUPS = ("s", "zeta", "shat", "zetahat", "u")


def trace_header(n: int) -> list[str]:
    return ["t"] + [f"{g}_{i + 1}" for g in _GROUPS for i in range(n)] + ["topology_phase_id"]


def _num(x) -> str:
    return format(float(x), FMT)


def write_trace_csv(trace, path) -> Path:
    path = Path(path)
    n = trace.n
    cols = np.hstack([trace.t[:, None], trace.s, trace.zeta, trace.shat, trace.zetahat, trace.u])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_header(n))
        for row, phase in zip(cols, trace.phase):
            w.writerow([_num(v) for v in row] + [phase])
    return path


def write_events_csv(trace, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "vehicle", "event", "tau_hat"])
        for e in trace.detector_events:
            w.writerow([_num(e.t), e.vehicle + 1, e.event, _num(e.tau_hat)])
    return path


def write_switches_csv(trace, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "from_phase", "to_phase", "reason"])
        for e in trace.switch_events:
            w.writerow([_num(e.t), e.from_phase, e.to_phase, e.reason])
    return path


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return x


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def read_trace_csv(path) -> dict:
    """Columns of a trace file: ``t``, 2-D arrays per group (1-based labels) and ``phase``."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "t" or rows[0][-1] != "topology_phase_id":
        raise InvalidInput(f"{path}: not a trace file")
    header = rows[0]
    n = (len(header) - 2) // len(_GROUPS)
    if header != trace_header(n):
        raise InvalidInput(f"{path}: unexpected trace columns")
    body = rows[1:]
    try:
        data = np.array([[float(v) for v in r[:-1]] for r in body]).reshape(len(body), len(header) - 1)
    except ValueError as exc:
        raise InvalidInput(f"{path}: {exc}") from exc
    out = {"t": data[:, 0], "phase": [r[-1] for r in body], "n": n}
    for k, g in enumerate(_GROUPS):
        out[g] = data[:, 1 + k * n:1 + (k + 1) * n]
    return out


def _decimate(t: np.ndarray, limit: int = 1500) -> np.ndarray:
    stride = max(1, len(t) // limit)
    idx = np.arange(0, len(t), stride)
    if idx[-1] != len(t) - 1:
        idx = np.append(idx, len(t) - 1)
    return idx


def svg_chart(t, series, title: str, ylabel: str, labels, step: bool = False,
              yticks: dict | None = None, width: int = 720, height: int = 360) -> str:
    """Line chart as an SVG document; ``series`` is (samples, lines)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(series, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    idx = _decimate(t)
    ml, mr, mt, mb = 70, 120, 40, 45
    pw, ph = width - ml - mr, height - mt - mb
    t0, t1 = float(t[0]), float(t[-1]) if t[-1] > t[0] else float(t[0]) + 1.0
    lo, hi = float(np.min(y)), float(np.max(y))
    if hi - lo < 1e-12:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad

    def px(v):
        return ml + (v - t0) / (t1 - t0) * pw

    def py(v):
        return mt + (hi - v) / (hi - lo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14">{title}</text>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for v in np.linspace(t0, t1, 6):
        out.append(f'<text x="{px(v):.1f}" y="{mt + ph + 16}" text-anchor="middle">{v:.4g}</text>')
    ticks = yticks or {f"{v:.4g}": v for v in np.linspace(lo, hi, 5)}
    for text, v in ticks.items():
        out.append(f'<text x="{ml - 6}" y="{py(v) + 4:.1f}" text-anchor="end">{text}</text>')
        out.append(f'<line x1="{ml}" x2="{ml + pw}" y1="{py(v):.1f}" y2="{py(v):.1f}" stroke="#ddd"/>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">t [s]</text>')
    out.append(f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{ylabel}</text>')
    for j in range(y.shape[1]):
        pts = []
        prev = None
        for k in idx:
            if step and prev is not None:
                pts.append(f"{px(t[k]):.2f},{py(prev):.2f}")
            pts.append(f"{px(t[k]):.2f},{py(y[k, j]):.2f}")
            prev = y[k, j]
        color = _COLORS[j % len(_COLORS)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(pts)}"/>')
        ly = mt + 14 + 18 * j
        out.append(f'<line x1="{ml + pw + 10}" x2="{ml + pw + 30}" y1="{ly}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 36}" y="{ly + 4}">{labels[j]}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_plots(data: dict, out_dir) -> list[Path]:
    """Positions, velocities and switching signal charts from :func:`read_trace_csv`-style data."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = data["n"]
    labels = [f"vehicle {i + 1}" for i in range(n)]
    level = np.array([PHASE_LEVEL.get(p, -1) for p in data["phase"]], dtype=float)
    charts = {
        "positions.svg": svg_chart(data["t"], data["s"], "Positions", "s [m]", labels),
        "velocities.svg": svg_chart(data["t"], data["zeta"], "Velocities", "zeta [m/s]", labels),
        "spacing_errors.svg": svg_chart(data["t"], data["shat"], "Spacing errors to the leader",
                                        "s_hat [m]", labels),
        "switching.svg": svg_chart(data["t"], level, "Topology phase", "phase", ["phase"], step=True,
                                   yticks={k: float(v) for k, v in PHASE_LEVEL.items()}),
    }
    paths = []
    for name, text in charts.items():
        p = out_dir / name
        p.write_text(text)
        paths.append(p)
    return paths


def trace_columns(trace) -> dict:
    return {"t": trace.t, "s": trace.s, "zeta": trace.zeta, "shat": trace.shat,
            "zetahat": trace.zetahat, "u": trace.u, "phase": trace.phase, "n": trace.n}


def write_all(trace, out_dir) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {
        "trace": write_trace_csv(trace, out_dir / "trace.csv"),
        "events": write_events_csv(trace, out_dir / "events.csv"),
        "switches": write_switches_csv(trace, out_dir / "switches.csv"),
        "summary": write_json(trace.summary, out_dir / "summary.json"),
        "config": write_json(trace.config.to_dict(), out_dir / "config.json"),
    }
    for p in write_plots(trace_columns(trace), out_dir):
        files[p.stem] = p
    return files
