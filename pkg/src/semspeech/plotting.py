"""Metric-vs-SNR curves from a results CSV."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import ParseError  # noqa: E402

RESULT_COLUMNS = ("snr_db", "channel", "wer", "similarity", "mcd", "symbols_per_sentence")
PLOT_METRICS = ("wer", "similarity", "mcd", "mcd_without_info")
SERIES_KEYS = ("system", "lm_weight")  # optional columns that split a channel into several curves


@dataclass
class ResultRow:
    line: int
    snr_db: float
    channel: str
    values: dict[str, float]
    series: str


def _float(text: str, column: str, line: int) -> float:
    if text == "":
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"column {column!r} is not a number: {text!r}", line) from None


def read_results(path) -> list[ResultRow]:
    """Parse a results CSV; any malformed line raises ``ParseError`` naming it."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file", 1) from None
        missing = [c for c in ("snr_db", "channel") if c not in header]
        if missing:
            raise ParseError(f"missing columns {missing}", 1)
        rows = []
        for record in reader:
            line = reader.line_num
            if not record:
                continue
            if len(record) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(record)}", line)
            d = dict(zip(header, record))
            if not d["channel"]:
                raise ParseError("empty channel", line)
            values = {m: _float(d[m], m, line) for m in PLOT_METRICS if m in d}
            series = " ".join(f"{k}={d[k]}" for k in SERIES_KEYS if d.get(k))
            rows.append(ResultRow(line, _float(d["snr_db"], "snr_db", line), d["channel"], values, series))
    return rows


def plot_results(csv_path, out_dir) -> list[Path]:
    """One PNG per (metric, channel) pair holding any finite values."""
    rows = read_results(csv_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for channel in sorted({r.channel for r in rows}):
        chan_rows = [r for r in rows if r.channel == channel]
        for metric in PLOT_METRICS:
            curves: dict[str, list[tuple[float, float]]] = {}
            for r in chan_rows:
                v = r.values.get(metric, math.nan)
                if not math.isnan(v):
                    curves.setdefault(r.series or channel, []).append((r.snr_db, v))
            if not curves:
                continue
            fig, ax = plt.subplots(figsize=(5, 3.5), dpi=100)
            for label in sorted(curves):
                pts = sorted(curves[label])
                # a noiseless row sits one step past the largest finite SNR
                finite = [x for x, _ in pts if math.isfinite(x)]
                edge = (max(finite) + 5.0) if finite else 0.0
                xs = [x if math.isfinite(x) else edge for x, _ in pts]
                ax.plot(xs, [y for _, y in pts], marker="o", label=label)
            ax.set_xlabel("SNR (dB)")
            ax.set_ylabel(metric)
            ax.set_title(f"{metric} ({channel})")
            ax.grid(True, alpha=0.3)
            ax.legend()
            fig.tight_layout()
            path = out / f"{metric}_{channel}.png"
            # fixed metadata keeps the bytes identical across runs
            fig.savefig(path, format="png", metadata={"Software": None})
            plt.close(fig)
            written.append(path)
    return written
