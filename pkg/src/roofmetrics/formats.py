"""Readers and writers for clouds, meshes, transforms and reports.

Supported cloud formats are PLY (ascii and binary little/big endian) and
XYZ text. Meshes are read from PLY or Wavefront OBJ. Polygons with more
than three corners are fan-triangulated.
"""
from __future__ import annotations

import csv
import io
import json
import warnings
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ParseError
from .geometry import PointCloud, TriangleMesh
from .metrics import FScoreTable, MetricCurve
from .registration import RigidTransform

PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
SCALAR_PROPERTY = "scalar_c2c"

PLY_ASCII = "ply-ascii"
PLY_BINARY = "ply-binary"
XYZ = "xyz"
CLOUD_FORMATS = (PLY_ASCII, PLY_BINARY, XYZ)


class _Element:
    def __init__(self, name, count, line):
        self.name = name
        self.count = count
        self.line = line
        self.props: List[Tuple[str, str, Optional[str]]] = []  # name, dtype, list-count dtype

    @property
    def has_list(self):
        return any(p[2] is not None for p in self.props)


def _parse_header(fh, path):
    magic = fh.readline()
    if magic.strip() != b"ply":
        raise ParseError("missing 'ply' magic line", path, line=1)
    fmt = None
    elements: List[_Element] = []
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise ParseError("header ended without 'end_header'", path, line=lineno)
        try:
            line = raw.decode("ascii").strip()
        except UnicodeDecodeError:
            raise ParseError("non-ascii bytes in header", path, line=lineno)
        if not line or line.startswith(("comment", "obj_info")):
            continue
        tok = line.split()
        if tok[0] == "format":
            if len(tok) != 3 or tok[2] != "1.0":
                raise ParseError(f"unsupported format line {line!r}", path, line=lineno)
            fmt = {"ascii": "ascii", "binary_little_endian": "<", "binary_big_endian": ">"}.get(tok[1])
            if fmt is None:
                raise ParseError(f"unknown PLY format {tok[1]!r}", path, line=lineno)
        elif tok[0] == "element":
            if len(tok) != 3:
                raise ParseError(f"malformed element line {line!r}", path, line=lineno)
            try:
                count = int(tok[2])
            except ValueError:
                raise ParseError(f"bad element count {tok[2]!r}", path, line=lineno)
            elements.append(_Element(tok[1], count, lineno))
        elif tok[0] == "property":
            if not elements:
                raise ParseError("property before any element", path, line=lineno)
            if tok[1] == "list":
                if len(tok) != 5:
                    raise ParseError(f"malformed list property {line!r}", path, line=lineno)
                for t in (tok[2], tok[3]):
                    if t not in PLY_TYPES:
                        raise ParseError(f"unknown type {t!r} for property {tok[4]!r}", path, line=lineno)
                elements[-1].props.append((tok[4], PLY_TYPES[tok[3]], PLY_TYPES[tok[2]]))
            else:
                if len(tok) != 3:
                    raise ParseError(f"malformed property line {line!r}", path, line=lineno)
                if tok[1] not in PLY_TYPES:
                    raise ParseError(f"unknown type {tok[1]!r} for property {tok[2]!r}", path, line=lineno)
                elements[-1].props.append((tok[2], PLY_TYPES[tok[1]], None))
        elif tok[0] == "end_header":
            break
        else:
            raise ParseError(f"unexpected header keyword {tok[0]!r}", path, line=lineno)
    if fmt is None:
        raise ParseError("header has no format line", path, line=lineno)
    return fmt, elements, lineno


def _read_ascii_body(fh, elements, path, header_lines):
    data = {}
    lines = fh.read().decode("ascii", errors="replace").splitlines()
    pos = 0
    for el in elements:
        rows = []
        for k in range(el.count):
            # skip blank lines
            while pos < len(lines) and not lines[pos].strip():
                pos += 1
            if pos >= len(lines):
                raise ParseError(
                    f"element '{el.name}' declares {el.count} entries but body ends after {k}",
                    path, line=header_lines + pos + 1)
            tok = lines[pos].split()
            lineno = header_lines + pos + 1
            pos += 1
            row, i = [], 0
            try:
                for name, dt, cnt in el.props:
                    if cnt is None:
                        row.append(float(tok[i]) if dt[0] == "f" else int(tok[i]))
                        i += 1
                    else:
                        n = int(tok[i])
                        row.append([float(v) if dt[0] == "f" else int(v) for v in tok[i + 1:i + 1 + n]])
                        if len(row[-1]) != n:
                            raise IndexError
                        i += 1 + n
            except (IndexError, ValueError):
                raise ParseError(f"malformed '{el.name}' entry {k}", path, line=lineno)
            if i != len(tok):
                raise ParseError(f"'{el.name}' entry {k} has {len(tok)} fields, expected {i}", path, line=lineno)
            rows.append(row)
        data[el.name] = rows
    while pos < len(lines) and not lines[pos].strip():
        pos += 1
    if pos < len(lines):
        total = sum(e.count for e in elements)
        raise ParseError(f"body has more entries than the {total} declared by element counts", path,
                         line=header_lines + pos + 1)
    return {name: _columns(el, data[name]) for name, el in ((e.name, e) for e in elements)}


def _columns(el, rows):
    cols = {}
    for i, (name, dt, cnt) in enumerate(el.props):
        if cnt is None:
            cols[name] = np.array([r[i] for r in rows], dtype=dt)
        else:
            cols[name] = [np.array(r[i], dtype=dt) for r in rows]
    return cols


def _read_binary_body(buf: bytes, start: int, elements, endian, path):
    pos = start
    out = {}
    for el in elements:
        if not el.has_list:
            dtype = np.dtype([(n, endian + dt) for n, dt, _ in el.props])
            need = dtype.itemsize * el.count
            if pos + need > len(buf):
                have = (len(buf) - pos) // max(dtype.itemsize, 1)
                raise ParseError(f"element '{el.name}' declares {el.count} entries but only {have} present",
                                 path, offset=pos)
            arr = np.frombuffer(buf, dtype=dtype, count=el.count, offset=pos)
            out[el.name] = {n: arr[n].astype(arr[n].dtype.newbyteorder("=")) for n, _, _ in el.props}
            pos += need
            continue
        fast = _try_fixed_lists(buf, pos, el, endian)
        if fast is not None:
            out[el.name], pos = fast
            continue
        cols = {n: [] for n, _, _ in el.props}
        for k in range(el.count):
            for n, dt, cnt in el.props:
                if cnt is None:
                    size = np.dtype(dt).itemsize
                    if pos + size > len(buf):
                        raise ParseError(f"element '{el.name}' truncated at entry {k} of {el.count}", path, offset=pos)
                    cols[n].append(np.frombuffer(buf, endian + dt, 1, pos)[0])
                    pos += size
                else:
                    csize = np.dtype(cnt).itemsize
                    if pos + csize > len(buf):
                        raise ParseError(f"element '{el.name}' truncated at entry {k} of {el.count}", path, offset=pos)
                    m = int(np.frombuffer(buf, endian + cnt, 1, pos)[0])
                    pos += csize
                    size = np.dtype(dt).itemsize * m
                    if pos + size > len(buf):
                        raise ParseError(f"element '{el.name}' truncated at entry {k} of {el.count}", path, offset=pos)
                    cols[n].append(np.frombuffer(buf, endian + dt, m, pos).astype(dt))
                    pos += size
        out[el.name] = {n: (np.array(v, dtype=dt) if cnt is None else v) for (n, dt, cnt), v in
                        zip(el.props, cols.values())}
    if pos != len(buf):
        raise ParseError(f"{len(buf) - pos} trailing bytes after last element", path, offset=pos)
    return out


def _try_fixed_lists(buf, pos, el, endian):
    """Vectorised read when every list in the element has the same length as the first entry's."""
    sizes = []
    p = pos
    for n, dt, cnt in el.props:
        if cnt is None:
            p += np.dtype(dt).itemsize
        else:
            if p + np.dtype(cnt).itemsize > len(buf):
                return None
            m = int(np.frombuffer(buf, endian + cnt, 1, p)[0])
            sizes.append(m)
            p += np.dtype(cnt).itemsize + m * np.dtype(dt).itemsize
    fields, it = [], iter(sizes)
    for n, dt, cnt in el.props:
        if cnt is None:
            fields.append((n, endian + dt))
        else:
            m = next(it)
            if m == 0:
                return None
            fields.append((n + "__count", endian + cnt))
            fields.append((n, endian + dt, (m,)))
    dtype = np.dtype(fields)
    if pos + dtype.itemsize * el.count > len(buf):
        return None
    arr = np.frombuffer(buf, dtype=dtype, count=el.count, offset=pos)
    it = iter(sizes)
    cols = {}
    for n, dt, cnt in el.props:
        if cnt is None:
            cols[n] = arr[n].astype(dt)
        else:
            m = next(it)
            if not np.all(arr[n + "__count"] == m):
                return None
            cols[n] = arr[n].astype(dt)
    return cols, pos + dtype.itemsize * el.count


def read_ply(path) -> Dict[str, Dict[str, object]]:
    """Parse a PLY file into ``{element: {property: column}}``."""
    with open(path, "rb") as fh:
        fmt, elements, header_lines = _parse_header(fh, path)
        if fmt == "ascii":
            return _read_ascii_body(fh, elements, path, header_lines)
        start = fh.tell()
        fh.seek(0)
        buf = fh.read()
    return _read_binary_body(buf, start, elements, fmt, path)


def _vertex_cloud(data, path) -> PointCloud:
    if "vertex" not in data:
        raise ParseError("no 'vertex' element", path)
    v = data["vertex"]
    for k in "xyz":
        if k not in v:
            raise ParseError(f"vertex element lacks property '{k}'", path)
    pts = np.column_stack([np.asarray(v[k], dtype=np.float64) for k in "xyz"])
    colors = None
    if all(k in v for k in ("red", "green", "blue")):
        colors = np.column_stack([np.asarray(v[k]) for k in ("red", "green", "blue")]).astype(np.uint8)
    scalars = np.asarray(v[SCALAR_PROPERTY], dtype=np.float64) if SCALAR_PROPERTY in v else None
    return PointCloud(pts, colors, scalars)


def write_ply(path, cloud: PointCloud, binary: bool = True, triangles=None, precision: str = "float"):
    """Write a cloud (and optionally faces) as PLY.

    Positions are float32 unless ``precision='double'``; colors are
    uchar red/green/blue; a scalar field is written as float32 ``scalar_c2c``.
    """
    ptype = {"float": "float", "double": "double"}[precision]
    pdt = {"float": "f4", "double": "f8"}[precision]
    n = len(cloud)
    header = ["ply", "format binary_little_endian 1.0" if binary else "format ascii 1.0", f"element vertex {n}"]
    header += [f"property {ptype} {k}" for k in "xyz"]
    fields = [(k, "<" + pdt) for k in "xyz"]
    if cloud.colors is not None:
        header += [f"property uchar {k}" for k in ("red", "green", "blue")]
        fields += [(k, "u1") for k in ("red", "green", "blue")]
    if cloud.scalars is not None:
        header.append(f"property float {SCALAR_PROPERTY}")
        fields.append((SCALAR_PROPERTY, "<f4"))
    tris = None if triangles is None else np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if tris is not None:
        header += [f"element face {len(tris)}", "property list uchar int vertex_indices"]
    header.append("end_header")

    rec = np.zeros(n, dtype=np.dtype(fields))
    for i, k in enumerate("xyz"):
        rec[k] = cloud.points[:, i]
    if cloud.colors is not None:
        for i, k in enumerate(("red", "green", "blue")):
            rec[k] = cloud.colors[:, i]
    if cloud.scalars is not None:
        rec[SCALAR_PROPERTY] = cloud.scalars
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(rec.tobytes())
            if tris is not None:
                frec = np.zeros(len(tris), dtype=np.dtype([("n", "u1"), ("v", "<i4", (3,))]))
                frec["n"] = 3
                frec["v"] = tris
                fh.write(frec.tobytes())
        else:
            lines = []
            for r in rec:
                lines.append(" ".join(_ascii_value(r[name]) for name in rec.dtype.names))
            if tris is not None:
                lines += [f"3 {a} {b} {c}" for a, b, c in tris]
            fh.write(("\n".join(lines) + ("\n" if lines else "")).encode("ascii"))


def _ascii_value(v):
    if isinstance(v, np.floating):
        # shortest repr that round-trips at the stored width
        return np.format_float_positional(v, unique=True, trim="-") if np.isfinite(v) else repr(float(v))
    return str(int(v))


def read_xyz(path) -> PointCloud:
    """Whitespace-separated ``x y z [r g b] [scalar]`` rows, one point per line.

    Four columns are read as ``x y z scalar``; six as ``x y z r g b``; seven
    as ``x y z r g b scalar``.
    """
    rows, width = [], None
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            tok = s.replace(",", " ").split()
            if width is None:
                width = len(tok)
                if width not in (3, 4, 6, 7):
                    raise ParseError(f"expected 3, 4, 6 or 7 columns, got {width}", path, line=lineno)
            elif len(tok) != width:
                raise ParseError(f"expected {width} columns, got {len(tok)}", path, line=lineno)
            try:
                rows.append([float(t) for t in tok])
            except ValueError:
                raise ParseError(f"non-numeric value in {s!r}", path, line=lineno)
    if not rows:
        return PointCloud.empty()
    a = np.array(rows, dtype=np.float64)
    colors = a[:, 3:6] if width >= 6 else None
    if colors is not None and (np.any(colors != np.round(colors)) or colors.min() < 0 or colors.max() > 255):
        raise ParseError("color columns must be integers in 0..255", path)
    scalars = a[:, -1] if width in (4, 7) else None
    return PointCloud(a[:, :3], None if colors is None else colors.astype(np.uint8), scalars)


def write_xyz(path, cloud: PointCloud):
    with open(path, "w", newline="\n") as fh:
        for i, p in enumerate(cloud.points):
            parts = [repr(float(v)) for v in p]
            if cloud.colors is not None:
                parts += [str(int(c)) for c in cloud.colors[i]]
            if cloud.scalars is not None:
                parts.append(repr(float(cloud.scalars[i])))
            fh.write(" ".join(parts) + "\n")


def detect_format(path) -> str:
    with open(path, "rb") as fh:
        head = fh.read(512)
    if head.startswith(b"ply"):
        return PLY_BINARY if b"binary" in head.split(b"end_header")[0] else PLY_ASCII
    return XYZ


def read_cloud(path) -> PointCloud:
    fmt = detect_format(path)
    if fmt == XYZ:
        return read_xyz(path)
    return _vertex_cloud(read_ply(path), path)


def write_cloud(cloud: PointCloud, path, fmt: Optional[str] = None, precision: str = "float"):
    """Write ``cloud``; format defaults from the suffix (``.xyz``/``.txt`` or binary PLY)."""
    if fmt is None:
        fmt = XYZ if str(path).lower().endswith((".xyz", ".txt")) else PLY_BINARY
    if fmt == XYZ:
        write_xyz(path, cloud)
    elif fmt in (PLY_ASCII, PLY_BINARY):
        write_ply(path, cloud, binary=fmt == PLY_BINARY, precision=precision)
    else:
        raise ValueError(f"unknown cloud format {fmt!r}")


def _triangulate(faces, path):
    tris = []
    mixed = False
    for f in faces:
        f = [int(v) for v in f]
        if len(f) < 3:
            raise ParseError(f"face with {len(f)} vertices", path)
        if len(f) != 3:
            mixed = True
        for k in range(1, len(f) - 1):
            tris.append((f[0], f[k], f[k + 1]))
    if mixed:
        warnings.warn(f"{path}: non-triangular faces fan-triangulated", stacklevel=3)
    return np.array(tris, dtype=np.int64).reshape(-1, 3)


def read_obj(path) -> TriangleMesh:
    verts, faces = [], []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            try:
                if tok[0] == "v":
                    verts.append([float(t) for t in tok[1:4]])
                    if len(verts[-1]) != 3:
                        raise ValueError
                elif tok[0] == "f":
                    idx = []
                    for t in tok[1:]:
                        k = int(t.split("/")[0])
                        idx.append(k - 1 if k > 0 else len(verts) + k)
                    faces.append(idx)
            except ValueError:
                raise ParseError(f"malformed {tok[0]!r} record", path, line=lineno)
    tris = _triangulate(faces, path)
    if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
        raise ParseError("face index out of range", path)
    return TriangleMesh(np.array(verts, dtype=np.float64).reshape(-1, 3), tris)


def read_mesh(path) -> TriangleMesh:
    if str(path).lower().endswith(".obj"):
        return read_obj(path)
    data = read_ply(path)
    cloud = _vertex_cloud(data, path)
    face = data.get("face")
    if face is None:
        raise ParseError("mesh has no 'face' element", path)
    key = "vertex_indices" if "vertex_indices" in face else "vertex_index" if "vertex_index" in face else None
    if key is None:
        raise ParseError("face element lacks 'vertex_indices'", path)
    lists = face[key]
    if isinstance(lists, np.ndarray) and lists.ndim == 2 and lists.shape[1] == 3:
        tris = lists.astype(np.int64)
    else:
        tris = _triangulate(lists, path)
    if tris.size and (tris.min() < 0 or tris.max() >= len(cloud)):
        raise ParseError("face index out of range", path)
    return TriangleMesh(cloud.points, tris, cloud.colors)


def write_mesh(mesh: TriangleMesh, path, binary: bool = True):
    write_ply(path, PointCloud(mesh.vertices, mesh.colors), binary=binary, triangles=mesh.triangles, precision="double")


def read_pairs(path) -> Tuple[np.ndarray, np.ndarray]:
    """Point-pair CSV with header ``sx,sy,sz,tx,ty,tz`` (metres)."""
    cols = ["sx", "sy", "sz", "tx", "ty", "tz"]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != cols:
            raise ParseError(f"pairs file header must be {','.join(cols)}", path, line=1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 6:
                raise ParseError(f"expected 6 columns, got {len(row)}", path, line=lineno)
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ParseError("non-numeric value", path, line=lineno)
    a = np.array(rows, dtype=float).reshape(-1, 6)
    return a[:, :3], a[:, 3:]


def write_pairs(path, sources, targets):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sx", "sy", "sz", "tx", "ty", "tz"])
        for s, t in zip(np.asarray(sources), np.asarray(targets)):
            w.writerow([repr(float(v)) for v in (*s, *t)])


def read_transform(path) -> RigidTransform:
    try:
        with open(path) as fh:
            return RigidTransform.from_dict(json.load(fh))
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise ParseError(f"invalid transform file: {exc}", path)


def write_transform(path, transform: RigidTransform):
    with open(path, "w", newline="\n") as fh:
        fh.write(transform.to_json())


def _num(v: float) -> str:
    return repr(float(v))


def curve_csv(curve: MetricCurve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold_cm", "precision_pct", "recall_pct", "fscore_pct"])
    for d, p, r, f in curve.rows():
        w.writerow([_num(round(d * 100.0, 10)), _num(p), _num(r), _num(f)])
    return buf.getvalue()


def table_csv(table: FScoreTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["flight", "section", "fscore", "rank"])
    for fl, sec, f, r in table.rows():
        w.writerow([fl, sec, _num(f), _num(r)])
    return buf.getvalue()


def table_summary_csv(table: FScoreTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["flight", "mean_fscore", "mean_rank"])
    for fl, m, r in zip(table.flights, table.mean_score, table.mean_rank):
        w.writerow([fl, _num(m), _num(r)])
    return buf.getvalue()


def _curve_dict(curve: MetricCurve):
    return {"threshold_cm": [round(d * 100.0, 10) for d in curve.thresholds.tolist()],
            "precision_pct": curve.precision.tolist(), "recall_pct": curve.recall.tolist(),
            "fscore_pct": curve.fscore.tolist()}


def _table_dict(table: FScoreTable):
    return {"flights": table.flights, "sections": table.sections, "fscore": table.scores.tolist(),
            "rank": table.ranks.tolist(), "mean_fscore": table.mean_score.tolist(),
            "mean_rank": table.mean_rank.tolist()}


def write_report(obj, path):
    """Write a :class:`MetricCurve` or :class:`FScoreTable` as CSV or JSON (by suffix)."""
    as_json = str(path).lower().endswith(".json")
    if isinstance(obj, MetricCurve):
        text = json.dumps(_curve_dict(obj), indent=2) + "\n" if as_json else curve_csv(obj)
    elif isinstance(obj, FScoreTable):
        text = json.dumps(_table_dict(obj), indent=2) + "\n" if as_json else table_csv(obj)
    else:
        raise TypeError(f"cannot write report for {type(obj).__name__}")
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def read_curve(path) -> MetricCurve:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"threshold_cm", "precision_pct", "recall_pct", "fscore_pct"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ParseError(f"curve CSV needs columns {sorted(need)}", path, line=1)
        rows = [(float(r["threshold_cm"]) / 100.0, float(r["precision_pct"]), float(r["recall_pct"]),
                 float(r["fscore_pct"])) for r in reader]
    a = np.array(rows, dtype=float).reshape(-1, 4)
    return MetricCurve(a[:, 0], a[:, 1], a[:, 2], a[:, 3])


def read_fscore_csv(path) -> List[Tuple[str, str, float]]:
    """Long-format ``flight,section,fscore`` rows (extra columns ignored)."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"flight", "section", "fscore"} <= set(reader.fieldnames):
            raise ParseError("F-score CSV needs columns flight, section, fscore", path, line=1)
        for lineno, r in enumerate(reader, start=2):
            try:
                out.append((r["flight"], r["section"], float(r["fscore"])))
            except (TypeError, ValueError):
                raise ParseError("bad fscore value", path, line=lineno)
    return out
