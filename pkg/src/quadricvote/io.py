"""Point-cloud files (PLY, XYZ, XYZN), JSON reports and CSV tables."""

from __future__ import annotations

import csv
import json
import math
from io import StringIO
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

from .detector.preprocess import PointCloud
from .errors import FormatUnsupported, ParseError

REPORT_SCHEMA = "quadricvote.report/1"

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}
_NORMAL_NAMES = ("nx", "ny", "nz")


def _format_of(path: Path) -> str:
    ext = path.suffix.lower()
    if ext == ".ply":
        return "ply"
    if ext in (".xyz", ".xyzn"):
        return ext[1:]
    raise FormatUnsupported(f"{path}: unsupported extension {ext!r} (use .ply, .xyz or .xyzn)")


def read_cloud(path: str | Path) -> PointCloud:
    path = Path(path)
    fmt = _format_of(path)
    if fmt == "ply":
        return _read_ply(path)
    return _read_text(path, 6 if fmt == "xyzn" else 3)


def write_cloud(path: str | Path, points, normals=None, binary: bool = True) -> None:
    path = Path(path)
    fmt = _format_of(path)
    P = np.asarray(points, dtype=np.float64)
    N = None if normals is None else np.asarray(normals, dtype=np.float64)
    if fmt == "ply":
        _write_ply(path, P, N, binary)
    elif fmt == "xyzn":
        if N is None:
            raise ValueError("XYZN output needs normals")
        _write_text(path, np.hstack([P, N]))
    else:
        _write_text(path, P)


def _read_text(path: Path, fields: int) -> PointCloud:
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.replace(",", " ").split()
            if len(parts) != fields:
                raise ParseError(f"expected {fields} fields, got {len(parts)}", path, lineno)
            try:
                rows.append([float(v) for v in parts])
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from None
    data = np.array(rows, dtype=np.float64).reshape(-1, fields)
    normals = data[:, 3:6] if fields == 6 else None
    return PointCloud(data[:, :3].copy(), None if normals is None else normals.copy())


def _write_text(path: Path, data: NDArray[np.float64]) -> None:
    with path.open("w") as fh:
        for row in data:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def _parse_ply_header(fh, path: Path):
    """Returns (format, elements, header line count); each element is
    (name, count, [(prop name, dtype or ('list', count dtype, item dtype))])."""
    first = fh.readline()
    if first.strip() != b"ply":
        raise ParseError("missing 'ply' magic", path, 1)
    fmt, elements, lineno = None, [], 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise ParseError("header ended without end_header", path, lineno)
        parts = raw.decode("ascii", errors="replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        key = parts[0]
        if key == "end_header":
            break
        if key == "format":
            if len(parts) < 2 or parts[1] not in ("ascii", "binary_little_endian", "binary_big_endian"):
                raise ParseError(f"bad format line {raw!r}", path, lineno)
            fmt = parts[1]
        elif key == "element":
            try:
                elements.append((parts[1], int(parts[2]), []))
            except (IndexError, ValueError):
                raise ParseError(f"bad element line {raw!r}", path, lineno) from None
        elif key == "property":
            if not elements:
                raise ParseError("property before any element", path, lineno)
            if parts[1] == "list":
                if len(parts) != 5 or parts[2] not in _PLY_TYPES or parts[3] not in _PLY_TYPES:
                    raise ParseError(f"bad list property {raw!r}", path, lineno)
                elements[-1][2].append((parts[4], ("list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]])))
            else:
                if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                    raise ParseError(f"bad property line {raw!r}", path, lineno)
                elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
        else:
            raise ParseError(f"unknown header keyword {key!r}", path, lineno)
    if fmt is None:
        raise ParseError("header has no format line", path, lineno)
    return fmt, elements, lineno


def _vertex_columns(props, path):
    names = [p[0] for p in props]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise ParseError(f"vertex element lacks property {axis!r}", path)
    has_normals = all(n in names for n in _NORMAL_NAMES)
    return names, has_normals


def _read_ply(path: Path) -> PointCloud:
    with path.open("rb") as fh:
        fmt, elements, header_lines = _parse_ply_header(fh, path)
        if fmt == "binary_big_endian":
            raise FormatUnsupported(f"{path}: big-endian binary PLY is not supported")
        names = [e[0] for e in elements]
        if "vertex" not in names:
            raise ParseError("no vertex element", path)
        vi = names.index("vertex")
        _, count, props = elements[vi]
        if any(isinstance(t, tuple) for _, t in props):
            raise FormatUnsupported(f"{path}: list properties on vertices are not supported")
        cols, has_normals = _vertex_columns(props, path)
        if fmt == "ascii":
            data = _read_ply_ascii(fh, path, elements[:vi], count, len(props), header_lines, vi == len(elements) - 1)
            table = {n: data[:, i] for i, n in enumerate(cols)}
        else:
            for name, n_items, eprops in elements[:vi]:
                if any(isinstance(t, tuple) for _, t in eprops):
                    raise FormatUnsupported(f"{path}: list-valued element {name!r} precedes vertices")
                fh.read(n_items * np.dtype([(p, "<" + t) for p, t in eprops]).itemsize)
            dtype = np.dtype([(p, "<" + t) for p, t in props])
            buf = fh.read(count * dtype.itemsize)
            if len(buf) < count * dtype.itemsize:
                raise ParseError(
                    f"vertex count mismatch: header declares {count}, data holds {len(buf) // dtype.itemsize}",
                    path,
                )
            arr = np.frombuffer(buf, dtype=dtype, count=count)
            table = {n: arr[n].astype(np.float64) for n in cols}
            if vi == len(elements) - 1 and fh.read(1):
                raise ParseError(f"vertex count mismatch: data continues after {count} vertices", path)
    P = np.column_stack([table["x"], table["y"], table["z"]])
    N = np.column_stack([table[n] for n in _NORMAL_NAMES]) if has_normals else None
    return PointCloud(P, N)


def _read_ply_ascii(fh, path, before, count, n_props, header_lines, last):
    lineno = header_lines
    lines = (line for line in fh)

    def next_line():
        nonlocal lineno
        for raw in lines:
            lineno += 1
            text = raw.decode("ascii", errors="replace").strip()
            if text:
                return text
        return None

    for _, n_items, _ in before:
        for _ in range(n_items):
            if next_line() is None:
                raise ParseError("file ended inside a preceding element", path, lineno)
    data = np.empty((count, n_props))
    for i in range(count):
        text = next_line()
        if text is None:
            raise ParseError(f"vertex count mismatch: header declares {count}, file has {i}", path, lineno)
        parts = text.split()
        if len(parts) != n_props:
            raise ParseError(f"expected {n_props} vertex fields, got {len(parts)}", path, lineno)
        try:
            data[i] = [float(v) for v in parts]
        except ValueError as exc:
            raise ParseError(str(exc), path, lineno) from None
    if last and next_line() is not None:
        raise ParseError(f"vertex count mismatch: more than {count} vertex lines", path, lineno)
    return data


def _write_ply(path: Path, P, N, binary: bool) -> None:
    names = ["x", "y", "z"] + (list(_NORMAL_NAMES) if N is not None else [])
    data = P if N is None else np.hstack([P, N])
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0", f"element vertex {len(P)}"]
    header += [f"property double {n}" for n in names]
    header.append("end_header")
    with path.open("wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())
        else:
            for row in data:
                fh.write((" ".join(repr(float(v)) for v in row) + "\n").encode("ascii"))


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if not math.isfinite(v):
            return None
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def report_json(report: dict) -> str:
    """Deterministic JSON text; floats use the shortest round-trip repr."""
    body = {"schema": REPORT_SCHEMA, **_jsonable(report)}
    return json.dumps(body, indent=2, allow_nan=False) + "\n"


def write_report(report: dict, path: str | Path) -> None:
    path = Path(path)
    try:
        path.write_text(report_json(report))
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc


def read_report(path: str | Path) -> dict:
    data = json.loads(Path(path).read_text())
    if data.get("schema") != REPORT_SCHEMA:
        raise ParseError(f"unexpected report schema {data.get('schema')!r}", path)
    return data


def _csv_cell(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def csv_text(rows: Iterable[Sequence[Any]], header: Sequence[str]) -> str:
    buf = StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_csv_cell(v) for v in row])
    return buf.getvalue()


def write_csv(rows: Iterable[Sequence[Any]], path: str | Path, header: Sequence[str]) -> None:
    path = Path(path)
    try:
        path.write_text(csv_text(rows, header))
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc
