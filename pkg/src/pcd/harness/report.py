"""CSV tables, run manifests and the optional SVG line plots derived from them."""

from __future__ import annotations

import hashlib
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, dump_config

CODE_VERSION = "pcd-0.1.0"


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def csv_text(header, rows) -> str:
    """Deterministic CSV: repr floats, LF line endings, no quoting needed."""
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_cell(v) for v in row) + "\n")
    return buf.getvalue()


@dataclass
class Table:
    name: str
    header: tuple
    rows: list = field(default_factory=list)

    def add(self, *row):
        if len(row) != len(self.header):
            raise ValueError(f"{self.name}: row has {len(row)} cells, header has {len(self.header)}")
        self.rows.append(tuple(row))

    def text(self) -> str:
        return csv_text(self.header, self.rows)

    def column(self, name):
        i = self.header.index(name)
        return [r[i] for r in self.rows]


@dataclass
class RunManifest:
    config_hash: str
    code_version: str = CODE_VERSION
    checksums: dict = field(default_factory=dict)
    started: float = 0.0
    finished: float = 0.0

    def to_json(self) -> str:
        return json.dumps(
            {
                "config_hash": self.config_hash,
                "code_version": self.code_version,
                "checksums": dict(sorted(self.checksums.items())),
                "wall_clock": {"started": self.started, "finished": self.finished, "seconds": self.finished - self.started},
            },
            indent=2,
        )


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def write_outputs(out_dir, cfg: ExperimentConfig, tables, started: float, svg: bool = False) -> RunManifest:
    """Write every table as CSV plus config.ini and manifest.json into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest(cfg.digest(), started=started)
    (out / "config.ini").write_text(dump_config(cfg))
    for table in tables:
        text = table.text()
        (out / f"{table.name}.csv").write_text(text)
        man.checksums[f"{table.name}.csv"] = sha256_text(text)
        if svg:
            (out / f"{table.name}.svg").write_text(svg_plot(table))
    man.finished = time.time()
    (out / "manifest.json").write_text(man.to_json())
    return man


def svg_plot(table: Table, width: int = 480, height: int = 320) -> str:
    """Log-scale polyline of every numeric column against the first one."""
    xs = [r[0] for r in table.rows]
    series = []
    for i, name in enumerate(table.header[1:], start=1):
        ys = [r[i] for r in table.rows]
        if all(isinstance(y, float) and y > 0 and isinstance(x, (int, float)) and x > 0 for x, y in zip(xs, ys)):
            series.append((name, ys))
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">']
    if series and len(xs) > 1:
        lx = [math.log(x) for x in xs]
        ly = [math.log(y) for _, ys in series for y in ys]
        x0, x1, y0, y1 = min(lx), max(lx), min(ly), max(ly)
        sx = (width - 40) / ((x1 - x0) or 1.0)
        sy = (height - 40) / ((y1 - y0) or 1.0)
        for n, (name, ys) in enumerate(series):
            pts = " ".join(f"{20 + (math.log(x) - x0) * sx:.2f},{height - 20 - (math.log(y) - y0) * sy:.2f}" for x, y in zip(xs, ys))
            lines.append(f'<polyline fill="none" stroke="hsl({(67 * n) % 360},60%,40%)" points="{pts}"><title>{name}</title></polyline>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
