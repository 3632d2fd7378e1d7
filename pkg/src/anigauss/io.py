"""Reading and writing XYZ, PLY and OBJ files."""

import os

import numpy as np

from .errors import ParseError
from .system import PointCloud

MIN_POINTS = 4

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _check_finite(arr, path):
    bad = np.flatnonzero(~np.all(np.isfinite(arr), axis=1))
    if len(bad):
        raise ParseError(f"non-finite coordinate in point {bad[0]}", path)


def read_xyz(path):
    """``(points, normals or None)`` from whitespace-separated 3 or 6 columns."""
    rows, width = [], None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.replace(",", " ").split()
            if len(parts) not in (3, 6):
                raise ParseError(f"expected 3 or 6 columns, got {len(parts)}", path, lineno)
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise ParseError(f"expected {width} columns, got {len(parts)}", path, lineno)
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise ParseError(f"not a number: {text!r}", path, lineno) from None
            if not all(np.isfinite(vals)):
                raise ParseError("non-finite value", path, lineno)
            rows.append(vals)
    if not rows:
        return np.empty((0, 3)), None
    data = np.array(rows)
    return data[:, :3], (data[:, 3:6] if width == 6 else None)


class _Element:
    def __init__(self, name, count):
        self.name, self.count = name, count
        self.props = []  # (name, dtype) or (name, (count dtype, item dtype))

    @property
    def has_list(self):
        return any(isinstance(t, tuple) for _, t in self.props)


def _read_header(fh, path):
    magic = fh.readline()
    if magic.strip() != b"ply":
        raise ParseError("missing 'ply' magic", path, 1)
    fmt, elements = None, []
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise ParseError("header has no end_header", path, lineno)
        words = raw.decode("ascii", errors="replace").split()
        if not words or words[0] in ("comment", "obj_info"):
            continue
        key = words[0]
        if key == "end_header":
            break
        if key == "format":
            if len(words) < 2 or words[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"unsupported format {' '.join(words[1:])!r}", path, lineno)
            fmt = words[1]
        elif key == "element":
            if len(words) != 3 or not words[2].isdigit():
                raise ParseError("malformed element line", path, lineno)
            elements.append(_Element(words[1], int(words[2])))
        elif key == "property":
            if not elements:
                raise ParseError("property before any element", path, lineno)
            try:
                if words[1] == "list":
                    elements[-1].props.append(
                        (words[4], (_PLY_TYPES[words[2]], _PLY_TYPES[words[3]])))
                else:
                    elements[-1].props.append((words[2], _PLY_TYPES[words[1]]))
            except (KeyError, IndexError):
                raise ParseError("malformed property line", path, lineno) from None
        else:
            raise ParseError(f"unknown header keyword {key!r}", path, lineno)
    if fmt is None:
        raise ParseError("header has no format line", path, lineno)
    return fmt, elements, lineno


def _read_ascii(fh, elements, path, lineno):
    out = {}
    for el in elements:
        if el.has_list:
            rows = []
            for _ in range(el.count):
                lineno += 1
                parts = fh.readline().split()
                try:
                    k = int(parts[0])
                    rows.append([int(p) for p in parts[1 : 1 + k]])
                except (ValueError, IndexError):
                    raise ParseError("malformed list record", path, lineno) from None
                if len(rows[-1]) != k:
                    raise ParseError("short list record", path, lineno)
            out[el.name] = rows
            continue
        data = np.empty((el.count, len(el.props)))
        for r in range(el.count):
            lineno += 1
            parts = fh.readline().split()
            if len(parts) != len(el.props):
                raise ParseError(f"expected {len(el.props)} values, got {len(parts)}",
                                 path, lineno)
            try:
                data[r] = [float(p) for p in parts]
            except ValueError:
                raise ParseError("not a number", path, lineno) from None
        out[el.name] = {name: data[:, k] for k, (name, _) in enumerate(el.props)}
    return out


def _read_binary(fh, elements, path):
    out = {}
    for el in elements:
        if not el.has_list:
            dtype = np.dtype([(name, "<" + t) for name, t in el.props])
            buf = fh.read(dtype.itemsize * el.count)
            if len(buf) != dtype.itemsize * el.count:
                raise ParseError(f"truncated binary data in element {el.name!r}", path)
            rec = np.frombuffer(buf, dtype=dtype)
            out[el.name] = {name: rec[name].astype(np.float64) for name, _ in el.props}
            continue
        rows = []
        for _ in range(el.count):
            row = None
            for name, t in el.props:
                if isinstance(t, tuple):
                    cdt, idt = np.dtype("<" + t[0]), np.dtype("<" + t[1])
                    k = int(np.frombuffer(fh.read(cdt.itemsize), cdt)[0])
                    row = np.frombuffer(fh.read(idt.itemsize * k), idt).tolist()
                else:
                    fh.read(np.dtype(t).itemsize)
            rows.append(row)
        out[el.name] = rows
    return out


def read_ply(path):
    """``dict`` with ``points``, ``normals`` (or None) and ``faces`` (or None)."""
    with open(path, "rb") as fh:
        fmt, elements, lineno = _read_header(fh, path)
        if fmt == "ascii":
            text = _TextReader(fh)
            data = _read_ascii(text, elements, path, lineno)
        else:
            data = _read_binary(fh, elements, path)
    vertex = data.get("vertex")
    if not isinstance(vertex, dict) or not all(k in vertex for k in "xyz"):
        raise ParseError("no vertex element with x, y, z", path)
    points = np.stack([vertex["x"], vertex["y"], vertex["z"]], axis=1)
    normals = None
    if all(k in vertex for k in ("nx", "ny", "nz")):
        normals = np.stack([vertex["nx"], vertex["ny"], vertex["nz"]], axis=1)
    faces = data.get("face")
    if faces is not None:
        faces = _triangulate(faces)
    return {"points": points, "normals": normals, "faces": faces}


class _TextReader:
    def __init__(self, fh):
        self.fh = fh

    def readline(self):
        return self.fh.readline().decode("ascii", errors="replace")


def _triangulate(faces):
    tris = []
    for f in faces:
        for k in range(1, len(f) - 1):
            tris.append((f[0], f[k], f[k + 1]))
    return np.array(tris, dtype=np.int64).reshape(-1, 3)


def read_obj(path):
    verts, tris = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(p) for p in parts[1:4]])
                elif parts[0] == "f":
                    idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                    tris += [(idx[0], idx[k], idx[k + 1]) for k in range(1, len(idx) - 1)]
            except ValueError:
                raise ParseError("malformed record", path, lineno) from None
    return {"points": np.array(verts).reshape(-1, 3), "normals": None,
            "faces": np.array(tris, dtype=np.int64).reshape(-1, 3)}


def read_any(path):
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".ply":
        return read_ply(path)
    if ext == ".obj":
        return read_obj(path)
    points, normals = read_xyz(path)
    return {"points": points, "normals": normals, "faces": None}


def read_points(path):
    """Load a point cloud (XYZ or PLY) and normalize it into the unit box.

    Small clouds are returned as-is; the pipeline enforces ``MIN_POINTS``.
    """
    data = read_any(path)
    points, normals = data["points"], data["normals"]
    _check_finite(points, path)
    if len(points) == 0:
        raise ParseError("no points found", path)
    return PointCloud.normalized(points, normals)


def _fmt(a):
    return "\n".join(" ".join("%.17g" % v for v in row) for row in a)


def write_points_ply(path, points, normals=None):
    points = np.asarray(points, dtype=np.float64)
    header = ["ply", "format ascii 1.0", f"element vertex {len(points)}",
              "property double x", "property double y", "property double z"]
    data = points
    if normals is not None:
        header += ["property double nx", "property double ny", "property double nz"]
        data = np.hstack([points, np.asarray(normals, dtype=np.float64)])
    header.append("end_header")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(header) + "\n")
        if len(data):
            fh.write(_fmt(data) + "\n")
    return path


def write_points_xyz(path, points, normals=None):
    data = np.asarray(points, dtype=np.float64)
    if normals is not None:
        data = np.hstack([data, np.asarray(normals, dtype=np.float64)])
    with open(path, "w", newline="\n") as fh:
        if len(data):
            fh.write(_fmt(data) + "\n")
    return path


def write_points(path, points, normals=None):
    if str(path).lower().endswith(".ply"):
        return write_points_ply(path, points, normals)
    return write_points_xyz(path, points, normals)


def write_mesh_ply(path, mesh):
    v, t = mesh.vertices, np.asarray(mesh.triangles, dtype=np.int64)
    header = ["ply", "format ascii 1.0", f"element vertex {len(v)}",
              "property double x", "property double y", "property double z",
              f"element face {len(t)}", "property list uchar int vertex_indices", "end_header"]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(header) + "\n")
        if len(v):
            fh.write(_fmt(v) + "\n")
        if len(t):
            fh.write("\n".join("3 %d %d %d" % tuple(row) for row in t) + "\n")
    return path


def write_mesh_obj(path, mesh):
    v, t = mesh.vertices, np.asarray(mesh.triangles, dtype=np.int64) + 1
    with open(path, "w", newline="\n") as fh:
        for row in v:
            fh.write("v %.17g %.17g %.17g\n" % tuple(row))
        for row in t:
            fh.write("f %d %d %d\n" % tuple(row))
    return path
