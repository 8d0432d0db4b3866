"""Plain-text run reports.

A report is UTF-8 text made of ``key: value`` header lines followed by
delimited blocks.  The ``metrics`` block holds one ``name = value`` pair per
line and is what :func:`read_metrics` parses back; other blocks are
tab-separated tables with a header row::

    physichm report: eval
    checkpoint: runs/full
    --- metrics ---
    i_auroc = 0.964
    --- end metrics ---
    --- samples ---
    index	kind	label	score
    0	none	0	0.1182
    --- end samples ---
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

Table = tuple[Sequence[str], Sequence[Sequence[object]]]


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def format_report(kind: str, header: Mapping[str, object], metrics: Mapping[str, float],
                  tables: Mapping[str, Table] | None = None) -> str:
    lines = [f"physichm report: {kind}"]
    lines += [f"{k}: {v}" for k, v in header.items()]
    lines.append("--- metrics ---")
    lines += [f"{k} = {_fmt(v)}" for k, v in metrics.items()]
    lines.append("--- end metrics ---")
    for name, (cols, rows) in (tables or {}).items():
        lines.append(f"--- {name} ---")
        lines.append("\t".join(cols))
        lines += ["\t".join(_fmt(v) for v in row) for row in rows]
        lines.append(f"--- end {name} ---")
    return "\n".join(lines) + "\n"


def write_report(path: str | os.PathLike, kind: str, header, metrics, tables=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_report(kind, header, metrics, tables), encoding="utf-8")
    return path


def _block(text: str, name: str) -> list[str]:
    lines = text.splitlines()
    try:
        start = lines.index(f"--- {name} ---")
        end = lines.index(f"--- end {name} ---", start)
    except ValueError:
        raise ValueError(f"report has no '{name}' block") from None
    return lines[start + 1:end]


def parse_metrics(text: str) -> dict[str, float]:
    out = {}
    for line in _block(text, "metrics"):
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = float(value)
    return out


def parse_table(text: str, name: str) -> list[dict[str, str]]:
    rows = [line.split("\t") for line in _block(text, name)]
    return [dict(zip(rows[0], r)) for r in rows[1:]]


def read_metrics(path: str | os.PathLike) -> dict[str, float]:
    return parse_metrics(Path(path).read_text(encoding="utf-8"))


def write_pgm(path: str | os.PathLike, image) -> Path:
    """8-bit binary PGM (P5, maxval 255) of a map with values in [0, 1]."""
    a = np.asarray(image, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("PGM needs a 2-D map")
    px = np.round(np.clip(a, 0.0, 1.0) * 255).astype(np.uint8)
    path = Path(path)
    path.write_bytes(f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii") + px.tobytes())
    return path


def read_pgm(path: str | os.PathLike):
    raw = Path(path).read_bytes()
    magic, dims, maxval, body = raw.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise ValueError(f"{path}: not an 8-bit P5 PGM")
    w, h = map(int, dims.split())
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w)
