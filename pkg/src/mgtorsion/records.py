"""Spectrum and time-series records plus their CSV/JSON serialisation."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class SpectrumRecord:
    """One-sided PSD samples on a strictly increasing frequency grid (Hz)."""

    freqs: np.ndarray
    psd: np.ndarray
    unit: str = "rad^2/Hz"
    segments: int = 1

    def __post_init__(self):
        f = np.asarray(self.freqs, dtype=float)
        p = np.asarray(self.psd, dtype=float)
        object.__setattr__(self, "freqs", f)
        object.__setattr__(self, "psd", p)
        if f.ndim != 1 or f.shape != p.shape:
            raise ValueError("freqs and psd must be 1-D arrays of equal length")
        if f.size and np.any(np.diff(f) <= 0):
            raise ValueError("freqs must be strictly increasing")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("psd must be finite and non-negative")
        if self.segments < 1:
            raise ValueError("segments must be >= 1")

    @property
    def df(self) -> float:
        return float(self.freqs[1] - self.freqs[0]) if self.freqs.size > 1 else 0.0

    def band(self, f1: float, f2: float) -> "SpectrumRecord":
        m = (self.freqs >= f1) & (self.freqs <= f2)
        return SpectrumRecord(self.freqs[m], self.psd[m], self.unit, self.segments)

    def scaled(self, k: float) -> "SpectrumRecord":
        return SpectrumRecord(self.freqs, self.psd * k, self.unit, self.segments)

    def binned(self, width: float) -> "SpectrumRecord":
        """Mean PSD inside consecutive bins of ``width`` Hz (display aid)."""
        edges = np.arange(self.freqs[0], self.freqs[-1] + width, width)
        idx = np.digitize(self.freqs, edges) - 1
        fs, ps = [], []
        for k in np.unique(idx):
            m = idx == k
            fs.append(self.freqs[m].mean())
            ps.append(self.psd[m].mean())
        return SpectrumRecord(np.array(fs), np.array(ps), self.unit, self.segments)


@dataclass(frozen=True)
class TimeSeries:
    rate: float
    samples: np.ndarray
    seed: int = 0
    label: str = ""
    unit: str = "rad"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        object.__setattr__(self, "samples", s)
        if not self.rate > 0:
            raise ValueError("rate must be > 0")
        if s.ndim != 1 or s.size < 2:
            raise ValueError("samples must be a 1-D array with at least 2 entries")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.rate

    @property
    def duration(self) -> float:
        return self.samples.size / self.rate


def _header_lines(header: dict | None) -> str:
    if not header:
        return ""
    return "".join(f"# {k}: {v}\n" for k, v in header.items())


def _data_lines(text: str) -> list[str]:
    return [ln for ln in text.splitlines() if ln and not ln.startswith("#")]


def spectrum_to_csv(rec: SpectrumRecord, header: dict | None = None) -> str:
    buf = io.StringIO()
    buf.write(_header_lines(header))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["f_hz", "psd", "unit"])
    for f, p in zip(rec.freqs, rec.psd):
        w.writerow([repr(float(f)), repr(float(p)), rec.unit])
    return buf.getvalue()


def spectrum_from_csv(text: str, segments: int = 1) -> SpectrumRecord:
    rows = list(csv.reader(_data_lines(text)))
    if not rows or rows[0] != ["f_hz", "psd", "unit"]:
        raise ValueError("spectrum CSV must start with header f_hz,psd,unit")
    body = rows[1:]
    units = {r[2] for r in body}
    if len(units) > 1:
        raise ValueError("mixed units in spectrum CSV")
    return SpectrumRecord(np.array([float(r[0]) for r in body]),
                          np.array([float(r[1]) for r in body]),
                          units.pop() if units else "", segments)


def timeseries_to_csv(ts: TimeSeries, header: dict | None = None) -> str:
    buf = io.StringIO()
    buf.write(_header_lines(header))
    buf.write("t_s,value\n")
    t = ts.times
    for ti, v in zip(t, ts.samples):
        buf.write(f"{ti!r},{float(v)!r}\n")
    return buf.getvalue()


def timeseries_sidecar(ts: TimeSeries) -> str:
    d = {"rate": ts.rate, "seed": ts.seed, "label": ts.label, "units": ts.unit,
         "n_samples": int(ts.samples.size)}
    d.update(ts.meta)
    return json.dumps(d, indent=2, sort_keys=True)


def timeseries_from_csv(text: str, sidecar: str) -> TimeSeries:
    meta = json.loads(sidecar)
    rows = list(csv.reader(_data_lines(text)))
    if rows[0] != ["t_s", "value"]:
        raise ValueError("time-series CSV must start with header t_s,value")
    vals = np.array([float(r[1]) for r in rows[1:]])
    return TimeSeries(meta["rate"], vals, meta.get("seed", 0), meta.get("label", ""),
                      meta.get("units", "rad"))


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
