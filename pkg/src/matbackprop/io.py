"""Matrix CSV files and segmentation-instance directories.

Matrix CSV: first line ``rows,cols`` followed by one comma-separated row per
line, every value written with 17 significant digits.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import CsvFormatError


def format_float(x: float) -> str:
    return f"{x:.17g}"


def write_matrix_csv(path, A) -> None:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    lines = [f"{A.shape[0]},{A.shape[1]}"]
    lines += [",".join(format_float(v) for v in row) for row in A]
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CsvFormatError(path, 0, f"cannot read file: {exc}") from exc
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise CsvFormatError(path, 1, "empty file")
    try:
        rows, cols = (int(t) for t in lines[0].split(","))
    except ValueError:
        raise CsvFormatError(path, 1, f"bad header {lines[0]!r}, expected 'rows,cols'") from None
    if rows < 1 or cols < 1:
        raise CsvFormatError(path, 1, f"nonpositive dimensions {rows},{cols}")
    if len(lines) - 1 != rows:
        raise CsvFormatError(path, len(lines), f"expected {rows} data rows, found {len(lines) - 1}")
    out = np.empty((rows, cols))
    for i, line in enumerate(lines[1:]):
        tokens = line.split(",")
        if len(tokens) != cols:
            raise CsvFormatError(path, i + 2, f"expected {cols} values, found {len(tokens)}")
        try:
            out[i] = [float(t) for t in tokens]
        except ValueError:
            raise CsvFormatError(path, i + 2, "unparseable number") from None
        if not all(math.isfinite(v) for v in out[i]):
            raise CsvFormatError(path, i + 2, "non-finite value")
    return out


def read_key_values(path) -> dict[str, str]:
    """Flat ``key=value`` text; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CsvFormatError(path, lineno, f"expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dump_json(obj, path=None, indent=2) -> str:
    # float repr is the shortest round-trip string, i.e. at most 17 significant digits
    text = json.dumps(to_jsonable(obj), indent=indent)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


def write_jsonl(records, path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(to_jsonable(rec)) + "\n")


def save_instance(directory, inst) -> None:
    """Write ``features.csv``, ``labels.csv`` (m x 1) and ``instance.txt`` (k, height, width)."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(out / "features.csv", inst.F)
    write_matrix_csv(out / "labels.csv", inst.labels.reshape(-1, 1).astype(float))
    header = [f"k={inst.k}"]
    if inst.image_shape is not None:
        header += [f"height={inst.image_shape[0]}", f"width={inst.image_shape[1]}"]
    (out / "instance.txt").write_text("\n".join(header) + "\n")


def load_instance(directory):
    from .ncuts import SegmentationInstance, indicator

    d = Path(directory)
    header = read_key_values(d / "instance.txt")
    F = read_matrix_csv(d / "features.csv")
    raw = read_matrix_csv(d / "labels.csv")
    if raw.shape[1] != 1 or np.any(raw != np.round(raw)) or np.any(raw < 0):
        raise CsvFormatError(d / "labels.csv", 1, "labels must be one nonnegative integer per row")
    k = int(header["k"])
    shape = (int(header["height"]), int(header["width"])) if "height" in header else None
    return SegmentationInstance(F, indicator(raw.ravel().astype(int), k), k, shape)
