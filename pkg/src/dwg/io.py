"""XYZ / PLY / OBJ readers and writers."""

from __future__ import annotations

import os
import sys
from pathlib import Path

import numpy as np

from .core import EmptyInputError, ParseError, PointCloud, TriangleMesh

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _format_of(path, fmt: str) -> str:
    if fmt != "auto":
        return fmt
    ext = Path(path).suffix.lower().lstrip(".")
    if ext in ("xyz", "txt", "pts", "xyzn"):
        return "xyz"
    if ext in ("ply", "obj"):
        return ext
    raise ParseError(f"cannot infer format from extension {ext!r}")


# ---------------------------------------------------------------------------
# readers

def read_xyz(path):
    pts, nrm = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            parts = s.replace(",", " ").split()
            if len(parts) not in (3, 6):
                raise ParseError(f"expected 3 or 6 numbers, got {len(parts)}", lineno)
            try:
                vals = [float(x) for x in parts]
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            pts.append(vals[:3])
            nrm.append(vals[3:] if len(vals) == 6 else None)
    if not pts:
        raise EmptyInputError(f"{path}: no points")
    normals = None
    if all(n is not None for n in nrm):
        normals = np.array(nrm)
    return np.array(pts), normals


def _parse_ply_header(fh):
    magic = fh.readline()
    if magic.strip() != b"ply":
        raise ParseError("not a PLY file (missing 'ply' magic)", 1)
    fmt = None
    elements = []  # (name, count, [(prop_name, dtype) or (prop_name, ('list', count_t, item_t))])
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise ParseError("unexpected end of file inside header", lineno)
        words = raw.decode("ascii", "replace").split()
        if not words or words[0] in ("comment", "obj_info"):
            continue
        if words[0] == "format":
            if len(words) < 2 or words[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"unsupported PLY format {' '.join(words[1:])!r}", lineno)
            fmt = words[1]
        elif words[0] == "element":
            if len(words) != 3:
                raise ParseError("malformed element line", lineno)
            try:
                elements.append((words[1], int(words[2]), []))
            except ValueError:
                raise ParseError("element count is not an integer", lineno) from None
        elif words[0] == "property":
            if not elements:
                raise ParseError("property before any element", lineno)
            if words[1] == "list":
                if len(words) != 5 or words[2] not in _PLY_TYPES or words[3] not in _PLY_TYPES:
                    raise ParseError("malformed list property", lineno)
                elements[-1][2].append((words[4], ("list", _PLY_TYPES[words[2]], _PLY_TYPES[words[3]])))
            else:
                if len(words) != 3 or words[1] not in _PLY_TYPES:
                    raise ParseError(f"unknown property type {words[1]!r}", lineno)
                elements[-1][2].append((words[2], _PLY_TYPES[words[1]]))
        elif words[0] == "end_header":
            break
        else:
            raise ParseError(f"unexpected header keyword {words[0]!r}", lineno)
    if fmt is None:
        raise ParseError("PLY header has no format line", lineno)
    return fmt, elements, lineno


def _read_exact(fh, nbytes: int, what: str) -> bytes:
    buf = fh.read(nbytes)
    if len(buf) != nbytes:
        raise ParseError(f"truncated binary PLY: {what} needs {nbytes} bytes, found {len(buf)}")
    return buf


def read_ply(path) -> dict:
    """Return ``{element_name: {property: array}}``; list properties become lists of arrays."""
    out = {}
    with open(path, "rb") as fh:
        fmt, elements, lineno = _parse_ply_header(fh)
        if fmt == "ascii":
            lines = fh.read().decode("ascii", "replace").splitlines()
            pos = 0
            for name, count, props in elements:
                data = {p: [] for p, _ in props}
                for _ in range(count):
                    while pos < len(lines) and not lines[pos].strip():
                        pos += 1
                    if pos >= len(lines):
                        raise ParseError(f"expected {count} {name} records", lineno + pos + 1)
                    words = lines[pos].split()
                    k = 0
                    try:
                        for p, t in props:
                            if isinstance(t, tuple):
                                m = int(words[k])
                                data[p].append(np.array(words[k + 1:k + 1 + m], dtype=t[2]))
                                if len(data[p][-1]) != m:
                                    raise IndexError
                                k += 1 + m
                            else:
                                data[p].append(float(words[k]))
                                k += 1
                    except (ValueError, IndexError):
                        raise ParseError(f"malformed {name} record", lineno + pos + 1) from None
                    pos += 1
                out[name] = {p: (v if isinstance(t, tuple) else np.array(v, dtype=t))
                             for (p, t), v in zip(props, data.values())}
        else:
            for name, count, props in elements:
                if all(not isinstance(t, tuple) for _, t in props):
                    dt = np.dtype([(p, "<" + t) for p, t in props])
                    buf = _read_exact(fh, dt.itemsize * count, f"{count} {name} records")
                    arr = np.frombuffer(buf, dtype=dt, count=count)
                    out[name] = {p: arr[p].copy() for p, _ in props}
                else:
                    out[name] = _read_binary_lists(fh, name, count, props)
    return out


def _read_binary_lists(fh, name, count, props):
    data = {p: [] for p, _ in props}
    for _ in range(count):
        for p, t in props:
            if isinstance(t, tuple):
                ct = np.dtype("<" + t[1])
                m = int(np.frombuffer(_read_exact(fh, ct.itemsize, f"{name} list length"), ct)[0])
                it = np.dtype("<" + t[2])
                data[p].append(np.frombuffer(_read_exact(fh, it.itemsize * m, f"{name} list"), it).copy())
            else:
                dt = np.dtype("<" + t)
                data[p].append(np.frombuffer(_read_exact(fh, dt.itemsize, f"{name} {p}"), dt)[0])
    return {p: (v if isinstance(t, tuple) else np.array(v)) for (p, t), v in zip(props, data.values())}


def read_obj(path):
    verts, vnorms, faces = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.split("#", 1)[0].split()
            if not s:
                continue
            try:
                if s[0] == "v":
                    verts.append([float(x) for x in s[1:4]])
                    if len(verts[-1]) != 3:
                        raise ValueError
                elif s[0] == "vn":
                    vnorms.append([float(x) for x in s[1:4]])
                    if len(vnorms[-1]) != 3:
                        raise ValueError
                elif s[0] == "f":
                    idx = [int(tok.split("/")[0]) for tok in s[1:]]
                    idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                    if len(idx) < 3:
                        raise ValueError
                    for j in range(1, len(idx) - 1):
                        faces.append([idx[0], idx[j], idx[j + 1]])
            except ValueError:
                raise ParseError(f"malformed {s[0]!r} line", lineno) from None
    return np.array(verts).reshape(-1, 3), np.array(vnorms).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def read_points(path, format: str = "auto"):
    """Return ``(points, normals_or_None)``."""
    fmt = _format_of(path, format)
    if fmt == "xyz":
        pts, nrm = read_xyz(path)
    elif fmt == "ply":
        v = read_ply(path).get("vertex")
        if v is None or not all(k in v for k in "xyz"):
            raise ParseError("PLY has no vertex x/y/z properties")
        pts = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)
        nrm = None
        if all(k in v for k in ("nx", "ny", "nz")):
            nrm = np.stack([v["nx"], v["ny"], v["nz"]], axis=1).astype(np.float64)
    elif fmt == "obj":
        pts, vn, _ = read_obj(path)
        nrm = vn if len(vn) == len(pts) and len(vn) else None
    else:
        raise ParseError(f"unknown format {fmt!r}")
    if len(pts) == 0:
        raise EmptyInputError(f"{path}: no points")
    return pts, nrm


def read_point_cloud(path, format: str = "auto") -> PointCloud:
    """Load a cloud; missing or zero normals are replaced by +z placeholders."""
    pts, nrm = read_points(path, format)
    if nrm is not None:
        bad = ~(np.linalg.norm(nrm, axis=1) > 0)
        nrm = nrm.copy()
        nrm[bad] = (0.0, 0.0, 1.0)
    return PointCloud.from_points(pts, nrm)


def read_mesh(path, format: str = "auto") -> TriangleMesh:
    fmt = _format_of(path, format)
    if fmt == "obj":
        v, _, f = read_obj(path)
        return TriangleMesh(v, f)
    if fmt != "ply":
        raise ParseError(f"cannot read a mesh from {fmt!r}")
    data = read_ply(path)
    v = data.get("vertex", {})
    verts = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64) if v else np.zeros((0, 3))
    faces = np.zeros((0, 3), dtype=np.int64)
    fe = data.get("face")
    if fe:
        lists = next(iter(fe.values()))
        tris = []
        for poly in lists:
            for j in range(1, len(poly) - 1):
                tris.append((poly[0], poly[j], poly[j + 1]))
        faces = np.array(tris, dtype=np.int64).reshape(-1, 3)
    return TriangleMesh(verts, faces)


# ---------------------------------------------------------------------------
# writers

def _ply_header(n_vertex: int, vprops: list[str], n_face: int | None, fmt="binary_little_endian"):
    lines = ["ply", f"format {fmt} 1.0", f"element vertex {n_vertex}"]
    lines += [f"property float {p}" for p in vprops]
    if n_face is not None:
        lines += [f"element face {n_face}", "property list uchar int vertex_indices"]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def write_mesh(mesh: TriangleMesh, path, format: str = "auto") -> None:
    """Binary little-endian PLY (float32 / int32) or OBJ with 1-based indices."""
    fmt = Path(path).suffix.lower().lstrip(".") if format == "auto" else format
    v, f = mesh.vertices, mesh.faces
    if fmt == "obj":
        with open(path, "w") as fh:
            for x, y, z in v:
                fh.write(f"v {x:.9g} {y:.9g} {z:.9g}\n")
            for a, b, c in f + 1:
                fh.write(f"f {a} {b} {c}\n")
        return
    if fmt != "ply":
        raise ValueError(f"unsupported mesh format {fmt!r}")
    rec = np.zeros(len(f), dtype=[("n", "u1"), ("i", "<i4", (3,))])
    rec["n"] = 3
    rec["i"] = f
    with open(path, "wb") as fh:
        fh.write(_ply_header(len(v), ["x", "y", "z"], len(f)))
        fh.write(v.astype("<f4").tobytes())
        fh.write(rec.tobytes())


def write_oriented_points(cloud: PointCloud, path) -> None:
    """PLY with x, y, z, nx, ny, nz; the input format for screened Poisson tools."""
    data = np.hstack([cloud.points, cloud.normals]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_ply_header(len(cloud), ["x", "y", "z", "nx", "ny", "nz"], None))
        fh.write(data.tobytes())


def write_point_cloud(points, path, normals=None) -> None:
    fmt = _format_of(path, "auto")
    points = np.asarray(points)
    if fmt == "ply":
        if normals is None:
            with open(path, "wb") as fh:
                fh.write(_ply_header(len(points), ["x", "y", "z"], None))
                fh.write(points.astype("<f4").tobytes())
        else:
            write_oriented_points(PointCloud.from_points(points, normals), path)
        return
    if fmt != "xyz":
        raise ValueError(f"unsupported point format {fmt!r}")
    cols = points if normals is None else np.hstack([points, normals])
    np.savetxt(path, cols, fmt="%.17g")
