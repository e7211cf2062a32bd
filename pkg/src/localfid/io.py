"""Plain-text tables with a ``# key: value`` header.

Floats are written with 17 significant digits so a file read back gives
the same arrays bit for bit, and identical inputs give identical bytes.
Files ending in ``.gz`` are gzip-compressed with a zero timestamp, which
keeps them byte-reproducible too.
"""

from __future__ import annotations

import gzip
import io
import json
from pathlib import Path

import numpy as np

from .resfit import FitReport
from .spectra import ResonanceSet, SpectrumTrace
from .theory import FidelityCurve

FLOAT_FORMAT = "%.17g"


def _open_write(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".gz":
        raw = open(path, "wb")
        gz = gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0)
        return io.TextIOWrapper(gz, encoding="utf-8", newline="\n"), raw
    return open(path, "w", encoding="utf-8", newline="\n"), None


def _open_read(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing input file: {path}")
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
    return open(path, encoding="utf-8")


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT % value
    if isinstance(value, (np.integer,)):
        return str(int(value))
    if isinstance(value, (list, tuple, dict)):
        return json.dumps(value, sort_keys=True, default=_json_default)
    return str(value)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _parse(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def write_table(path, header, columns):
    """Write ``columns`` (name -> 1-d array) below a ``# key: value`` header."""
    names = list(columns)
    n = len(columns[names[0]]) if names else 0
    if any(len(columns[c]) != n for c in names):
        raise ValueError("all columns need the same length")
    fh, raw = _open_write(path)
    try:
        for key, value in header.items():
            fh.write(f"# {key}: {_fmt(value)}\n")
        fh.write(",".join(names) + "\n")
        cols = []
        for c in names:
            arr = np.asarray(columns[c])
            if arr.dtype.kind == "f":
                cols.append([FLOAT_FORMAT % v for v in arr])
            else:
                cols.append([str(v) for v in arr])
        for row in zip(*cols):
            fh.write(",".join(row) + "\n")
    finally:
        fh.close()
        if raw is not None:
            raw.close()
    return Path(path)


def read_table(path):
    """Inverse of write_table; numeric columns come back as float arrays."""
    header = {}
    with _open_read(path) as fh:
        lines = fh.read().splitlines()
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        key, _, value = lines[i][1:].partition(":")
        header[key.strip()] = _parse(value.strip())
        i += 1
    if i == len(lines):
        raise ValueError(f"{path}: no column header")
    names = lines[i].split(",")
    rows = [ln.split(",") for ln in lines[i + 1:] if ln]
    columns = {}
    for j, name in enumerate(names):
        raw = [r[j] for r in rows]
        try:
            columns[name] = np.array([float(v) for v in raw])
        except ValueError:
            columns[name] = np.array(raw, dtype=object)
    return header, columns


def save_trace(path, trace, header=None):
    meta = {"position_index": trace.position_index, "noise_level": float(trace.noise_level),
            "mean_spacing": float(trace.mean_spacing), **(header or {})}
    return write_table(path, meta, {"freq": trace.freqs, "re_S": trace.s_values.real,
                                    "im_S": trace.s_values.imag})


def load_trace(path):
    header, c = read_table(path)
    return SpectrumTrace(c["freq"], c["re_S"] + 1j * c["im_S"],
                         int(header.get("position_index", 0)),
                         float(header.get("noise_level", 0.0)),
                         float(header.get("mean_spacing", 1.0)), meta=header)


def save_curve(path, curve, header=None):
    nan = np.full(len(curve), np.nan)
    meta = {"label": curve.label, **curve.meta, **(header or {})}
    cols = {"t": curve.times, "re_f": curve.amplitude.real, "im_f": curve.amplitude.imag,
            "stderr": nan if curve.stderr is None else np.asarray(curve.stderr, float),
            "stderr_imag": nan if curve.stderr_imag is None else np.asarray(curve.stderr_imag, float)}
    return write_table(path, meta, cols)


def load_curve(path):
    header, c = read_table(path)
    err = c.get("stderr")
    err_im = c.get("stderr_imag")
    err = None if err is None or np.all(np.isnan(err)) else err
    err_im = None if err_im is None or np.all(np.isnan(err_im)) else err_im
    return FidelityCurve(c["t"], c["re_f"] + 1j * c["im_f"], err, err_im,
                         label=str(header.get("label", "")), meta=header)


def windows_path(path):
    path = Path(path)
    return path.with_name(path.name.split(".")[0] + ".windows.txt")


def save_fit_report(path, report, header=None):
    r = report.resonances
    meta = {"residual_rms": float(report.residual_rms), **report.meta, **(header or {})}
    err = report.errors if len(report.errors) == len(report) else np.full((len(report), 3), np.nan)
    write_table(path, meta, {"E": r.energies, "Gamma": r.widths, "depth": r.depths,
                             "flag": np.array(report.flags, dtype=object),
                             "err_E": err[:, 0], "err_Gamma": err[:, 1], "err_depth": err[:, 2]})
    side = windows_path(path)
    with open(side, "w", encoding="utf-8", newline="\n") as fh:
        for lo, hi in report.windows:
            fh.write(f"{FLOAT_FORMAT % lo} {FLOAT_FORMAT % hi}\n")
    return Path(path)


def load_fit_report(path):
    header, c = read_table(path)
    n = len(c["E"])
    res = ResonanceSet(c["E"], c["Gamma"], c["depth"], provenance="fitted") if n else \
        ResonanceSet(np.zeros(0), np.zeros(0), np.zeros(0), provenance="fitted")
    windows = []
    side = windows_path(path)
    if side.exists():
        for line in side.read_text(encoding="utf-8").splitlines():
            lo, hi = line.split()
            windows.append((float(lo), float(hi)))
    flags = [str(f) for f in c["flag"]] if n else []
    errors = np.column_stack([c["err_E"], c["err_Gamma"], c["err_depth"]]) if n else np.zeros((0, 3))
    rms = float(header.pop("residual_rms", np.nan))
    return FitReport(res, rms, windows, flags, errors, meta=header)
