"""File formats: OBJ and binary PLY geometry, FMAP feature maps, EMIT cost
tables, PGM masks, camera and pose-track JSON.

All distances on disk are meters. PLY files are binary little-endian.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError
from .geometry import Camera, PointCloud, TriangleMesh

FMAP_MAGIC = b"FMAP"
EMIT_MAGIC = b"EMIT"


# ---------------------------------------------------------------------------
# OBJ (ASCII).


def load_obj(path) -> TriangleMesh:
    """ASCII OBJ: `v` and `f` lines, 1-based indices, polygons fan-triangulated."""
    path = Path(path)
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    try:
        text = path.read_text()
    except OSError as e:
        raise ParseError(f"cannot read OBJ file {path}: {e}") from e
    for ln, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            if len(parts) < 4:
                raise ParseError(f"{path}:{ln}: vertex needs 3 coordinates")
            vertices.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = []
            for tok in parts[1:]:
                head = tok.split("/")[0]
                i = int(head)
                if i < 1:
                    raise ParseError(f"{path}:{ln}: face indices must be positive (1-based)")
                idx.append(i - 1)
            if len(idx) < 3:
                raise ParseError(f"{path}:{ln}: face needs at least 3 vertices")
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
    try:
        return TriangleMesh(np.array(vertices, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))
    except ValueError as e:
        raise ParseError(f"{path}: {e}") from e


def save_obj(mesh: TriangleMesh, path) -> None:
    lines = [f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}" for v in mesh.vertices]
    lines += [f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}" for f in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# PLY (binary little-endian).

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _parse_ply_header(blob: bytes, path):
    if not blob.startswith(b"ply"):
        raise ParseError(f"{path}: not a PLY file")
    end = blob.find(b"end_header\n")
    if end < 0:
        raise ParseError(f"{path}: PLY header is not terminated")
    header = blob[: end + len(b"end_header\n")].decode("ascii", errors="replace")
    body = blob[end + len(b"end_header\n"):]
    elements = []  # (name, count, [(prop_name, dtype) or ("list", count_dtype, item_dtype, prop_name)])
    fmt_seen = False
    for line in header.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            if parts[1] != "binary_little_endian":
                raise ParseError(f"{path}: only binary_little_endian PLY is supported")
            fmt_seen = True
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise ParseError(f"{path}: property before any element")
            if parts[1] == "list":
                elements[-1][2].append(("list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]], parts[4]))
            else:
                elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
    if not fmt_seen:
        raise ParseError(f"{path}: PLY format line missing")
    return elements, body


def _read_ply(path):
    """Returns {element_name: dict of property arrays} for vertex/face elements."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise ParseError(f"cannot read PLY file {path}: {e}") from e
    elements, body = _parse_ply_header(blob, path)
    out: dict[str, dict[str, np.ndarray]] = {}
    offset = 0
    for name, count, props in elements:
        if any(p[0] == "list" for p in props):
            if len(props) != 1:
                raise ParseError(f"{path}: mixed list/scalar element '{name}' unsupported")
            _, cnt_t, item_t, prop_name = props[0]
            cnt_dt = np.dtype("<" + cnt_t)
            item_dt = np.dtype("<" + item_t)
            rows = []
            for _ in range(count):
                n = int(np.frombuffer(body, cnt_dt, 1, offset)[0])
                offset += cnt_dt.itemsize
                rows.append(np.frombuffer(body, item_dt, n, offset).astype(np.int64))
                offset += item_dt.itemsize * n
            out.setdefault(name, {})[prop_name] = rows
        else:
            dt = np.dtype([(pn, "<" + pt) for pn, pt in props])
            arr = np.frombuffer(body, dt, count, offset)
            offset += dt.itemsize * count
            out[name] = {pn: arr[pn] for pn, _ in props}
    return out


def load_ply_cloud(path) -> PointCloud:
    """Point cloud with optional uchar red/green/blue and uchar label properties."""
    data = _read_ply(path)
    if "vertex" not in data:
        raise ParseError(f"{path}: PLY has no vertex element")
    v = data["vertex"]
    for k in ("x", "y", "z"):
        if k not in v:
            raise ParseError(f"{path}: vertex element lacks property '{k}'")
    points = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(float)
    colors = None
    if all(k in v for k in ("red", "green", "blue")):
        colors = np.stack([v["red"], v["green"], v["blue"]], axis=1).astype(float) / 255.0
    labels = v["label"].astype(np.int64) if "label" in v else None
    try:
        return PointCloud(points, colors, labels)
    except ValueError as e:
        raise ParseError(f"{path}: {e}") from e


def save_ply_cloud(cloud: PointCloud, path) -> None:
    n = len(cloud)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}",
              "property float x", "property float y", "property float z"]
    fields = [cloud.points.astype("<f4")]
    if cloud.colors is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
        fields.append(np.clip(np.round(cloud.colors * 255.0), 0, 255).astype("u1"))
    if cloud.labels is not None:
        header += ["property uchar label"]
        fields.append(cloud.labels.astype("u1").reshape(-1, 1))
    header += ["end_header"]
    dtype = []
    for k, arr in enumerate(fields):
        for c in range(arr.shape[1]):
            dtype.append((f"p{k}_{c}", arr.dtype.str))
    rec = np.empty(n, dtype=dtype)
    for k, arr in enumerate(fields):
        for c in range(arr.shape[1]):
            rec[f"p{k}_{c}"] = arr[:, c]
    Path(path).write_bytes("\n".join(header).encode("ascii") + b"\n" + rec.tobytes())


def load_ply_mesh(path) -> TriangleMesh:
    data = _read_ply(path)
    if "vertex" not in data or "face" not in data:
        raise ParseError(f"{path}: PLY mesh needs vertex and face elements")
    v = data["vertex"]
    points = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(float)
    rows = data["face"]["vertex_indices" if "vertex_indices" in data["face"] else "vertex_index"]
    faces = []
    for row in rows:
        if len(row) < 3:
            raise ParseError(f"{path}: face with fewer than 3 indices")
        for k in range(1, len(row) - 1):
            faces.append([row[0], row[k], row[k + 1]])
    try:
        return TriangleMesh(points, np.array(faces, dtype=np.int64).reshape(-1, 3))
    except ValueError as e:
        raise ParseError(f"{path}: {e}") from e


def save_ply_mesh(mesh: TriangleMesh, path) -> None:
    nv, nf = len(mesh.vertices), len(mesh.faces)
    header = ("ply\nformat binary_little_endian 1.0\n"
              f"element vertex {nv}\n"
              "property float x\nproperty float y\nproperty float z\n"
              f"element face {nf}\n"
              "property list uchar int vertex_indices\nend_header\n")
    verts = mesh.vertices.astype("<f4").tobytes()
    face_dt = np.dtype([("n", "u1"), ("i", "<i4", (3,))])
    rec = np.empty(nf, dtype=face_dt)
    rec["n"] = 3
    rec["i"] = mesh.faces.astype("<i4")
    Path(path).write_bytes(header.encode("ascii") + verts + rec.tobytes())


def load_mesh(path) -> TriangleMesh:
    """Dispatch on extension: .obj or .ply."""
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        return load_obj(path)
    if suffix == ".ply":
        return load_ply_mesh(path)
    raise ParseError(f"{path}: unsupported mesh format '{suffix}'")


def load_ply_geometry(path):
    """PLY as a TriangleMesh when faces are present, else a PointCloud."""
    data = _read_ply(path)
    if "face" in data and any(len(r) for r in data["face"].get("vertex_indices", data["face"].get("vertex_index", []))):
        return load_ply_mesh(path)
    return load_ply_cloud(path)


# ---------------------------------------------------------------------------
# FMAP: dense feature maps with a silhouette mask.
# Layout: magic 'FMAP', u32 version=1, u32 H, u32 W, u32 C,
#         H*W*C float32 row-major, then H*W uint8 mask (nonzero = in).


def save_fmap(features: np.ndarray, mask: np.ndarray, path) -> None:
    feats = np.ascontiguousarray(features, dtype="<f4")
    h, w, c = feats.shape
    m = np.ascontiguousarray(mask.astype(bool), dtype="u1")
    if m.shape != (h, w):
        raise ValueError("mask shape must match feature grid")
    with open(path, "wb") as fh:
        fh.write(FMAP_MAGIC)
        fh.write(struct.pack("<IIII", 1, h, w, c))
        fh.write(feats.tobytes())
        fh.write(m.tobytes())


def load_fmap(path):
    """Returns (features (H, W, C) float32, mask (H, W) bool)."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise ParseError(f"cannot read feature map {path}: {e}") from e
    if blob[:4] != FMAP_MAGIC:
        raise ParseError(f"{path}: bad FMAP magic")
    if len(blob) < 20:
        raise ParseError(f"{path}: truncated FMAP header")
    version, h, w, c = struct.unpack("<IIII", blob[4:20])
    if version != 1:
        raise ParseError(f"{path}: unsupported FMAP version {version}")
    need = 20 + h * w * c * 4 + h * w
    if len(blob) != need:
        raise ParseError(f"{path}: FMAP payload size mismatch ({len(blob)} != {need})")
    feats = np.frombuffer(blob, "<f4", h * w * c, 20).reshape(h, w, c)
    mask = np.frombuffer(blob, "u1", h * w, 20 + h * w * c * 4).reshape(h, w) != 0
    return feats.copy(), mask


# ---------------------------------------------------------------------------
# EMIT: precomputed emission cost tables.
# Layout: magic 'EMIT', u32 frames T, u32 states S, T*S float32.


def save_emission_table(costs: np.ndarray, path) -> None:
    arr = np.ascontiguousarray(costs, dtype="<f4")
    t, s = arr.shape
    with open(path, "wb") as fh:
        fh.write(EMIT_MAGIC)
        fh.write(struct.pack("<II", t, s))
        fh.write(arr.tobytes())


def load_emission_table(path) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise ParseError(f"cannot read emission table {path}: {e}") from e
    if blob[:4] != EMIT_MAGIC:
        raise ParseError(f"{path}: bad EMIT magic")
    t, s = struct.unpack("<II", blob[4:12])
    if len(blob) != 12 + t * s * 4:
        raise ParseError(f"{path}: EMIT payload size mismatch")
    return np.frombuffer(blob, "<f4", t * s, 12).reshape(t, s).astype(float)


# ---------------------------------------------------------------------------
# PGM (P5) masks: nonzero = in.


def save_pgm_mask(mask: np.ndarray, path) -> None:
    m = np.ascontiguousarray(mask.astype(bool), dtype="u1") * np.uint8(255)
    h, w = m.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + m.tobytes())


def load_pgm_mask(path) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise ParseError(f"cannot read mask {path}: {e}") from e
    if not blob.startswith(b"P5"):
        raise ParseError(f"{path}: only binary PGM (P5) masks are supported")
    # header tokens: P5, width, height, maxval; '#' comments allowed
    tokens: list[bytes] = []
    i = 2
    while len(tokens) < 3 and i < len(blob):
        if blob[i : i + 1].isspace():
            i += 1
        elif blob[i : i + 1] == b"#":
            i = blob.index(b"\n", i) + 1
        else:
            j = i
            while j < len(blob) and not blob[j : j + 1].isspace():
                j += 1
            tokens.append(blob[i:j])
            i = j
    if len(tokens) < 3:
        raise ParseError(f"{path}: truncated PGM header")
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise ParseError(f"{path}: PGM maxval must be 255")
    i += 1  # single whitespace after maxval
    data = blob[i : i + w * h]
    if len(data) != w * h:
        raise ParseError(f"{path}: PGM payload size mismatch")
    return np.frombuffer(data, "u1").reshape(h, w) != 0


# ---------------------------------------------------------------------------
# Camera and pose-track JSON.


def load_camera(path) -> Camera:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
        return Camera(fx=float(obj["fx"]), fy=float(obj["fy"]), cx=float(obj["cx"]),
                      cy=float(obj["cy"]), width=int(obj["width"]), height=int(obj["height"]))
    except OSError as e:
        raise ParseError(f"cannot read camera file {path}: {e}") from e
    except (KeyError, ValueError, json.JSONDecodeError) as e:
        raise ParseError(f"{path}: invalid camera file: {e}") from e


def save_camera(camera: Camera, path) -> None:
    obj = {"fx": camera.fx, "fy": camera.fy, "cx": camera.cx, "cy": camera.cy,
           "width": camera.width, "height": camera.height}
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
