"""
Fuzzy Shape Registration - File Formats
Point sets (xyz, ply, obj vertices), meshes (obj, ply), PGM masks and depth maps,
camera intrinsics and transform documents
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from camera import NO_DATA, CameraIntrinsics, PixelMask
from errors import DegenerateInputError, InvalidParameterError, ParseError
from geometry import SimilarityTransform
from voxelizer import Mesh

logger = logging.getLogger(__name__)

POINTSET_FORMATS = ("xyz", "ply", "obj-vertices")
MESH_FORMATS = ("obj", "ply")
PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror}", path=path) from exc


def _format_from_suffix(path: Path, known: Tuple[str, ...], default_obj: str) -> str:
    suffix = path.suffix.lower().lstrip(".")
    if suffix in ("xyz", "txt", "pts") and "xyz" in known:
        return "xyz"
    if suffix == "ply":
        return "ply"
    if suffix == "obj":
        return default_obj
    raise InvalidParameterError(f"cannot infer a format from {path.name!r}; expected one of {known}")


def read_key_values(path) -> Dict[str, str]:
    """`key = value` lines; '#' starts a comment, blank lines are skipped"""
    path = Path(path)
    text = _read_bytes(path).decode("utf-8", errors="replace")
    params = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", path=path, line=number)
        if key in params:
            raise ParseError(f"duplicate key {key!r}", path=path, line=number)
        params[key] = value
    return params


# Point sets

def _parse_xyz(text: str, path: Path) -> np.ndarray:
    rows = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(f"expected 3 coordinates, got {len(parts)}", path=path, line=number)
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ParseError(f"non-numeric coordinate in {line!r}", path=path, line=number) from None
    return np.array(rows, dtype=float).reshape(-1, 3)


def _parse_obj(text: str, path: Path, with_faces: bool):
    vertices: List[List[float]] = []
    faces: List[List[int]] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        if tag == "v":
            if len(rest) not in (3, 4):
                raise ParseError(f"vertex needs 3 or 4 coordinates, got {len(rest)}", path=path, line=number)
            try:
                vertices.append([float(x) for x in rest[:3]])
            except ValueError:
                raise ParseError(f"non-numeric vertex {line!r}", path=path, line=number) from None
        elif tag == "f" and with_faces:
            if len(rest) < 3:
                raise ParseError("face needs at least 3 vertices", path=path, line=number)
            polygon = []
            for token in rest:
                try:
                    index = int(token.split("/", 1)[0])
                except ValueError:
                    raise ParseError(f"bad face index {token!r}", path=path, line=number) from None
                resolved = index - 1 if index > 0 else len(vertices) + index
                if index == 0 or not 0 <= resolved < len(vertices):
                    raise ParseError(f"face index {index} out of range", path=path, line=number)
                polygon.append(resolved)
            faces.extend([polygon[0], polygon[i], polygon[i + 1]] for i in range(1, len(polygon) - 1))
    V = np.array(vertices, dtype=float).reshape(-1, 3)
    F = np.array(faces, dtype=np.int64).reshape(-1, 3)
    return V, F


class _PlyElement:
    def __init__(self, name: str, count: int):
        self.name = name
        self.count = count
        self.properties: List[Tuple[str, str, Optional[str]]] = []  # (name, type, list count type)


def _parse_ply_header(data: bytes, path: Path):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError("missing ply magic or end_header", path=path)
    body_start = data.index(b"\n", end) + 1 if b"\n" in data[end:] else len(data)
    lines = data[:end].decode("ascii", errors="replace").splitlines()
    fmt, elements = None, []
    for number, raw in enumerate(lines, start=1):
        parts = raw.split()
        if not parts or parts[0] in ("ply", "comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1] if len(parts) > 1 else ""
            if fmt not in ("ascii", "binary_little_endian"):
                raise ParseError(f"unsupported ply format {fmt!r}", path=path, line=number)
        elif parts[0] == "element" and len(parts) == 3:
            if not parts[2].isdigit():
                raise ParseError(f"bad element count in {raw!r}", path=path, line=number)
            elements.append(_PlyElement(parts[1], int(parts[2])))
        elif parts[0] == "property" and elements:
            if parts[1] == "list" and len(parts) == 5:
                if parts[2] not in PLY_TYPES or parts[3] not in PLY_TYPES:
                    raise ParseError(f"unknown ply type in {raw!r}", path=path, line=number)
                elements[-1].properties.append((parts[4], PLY_TYPES[parts[3]], PLY_TYPES[parts[2]]))
            elif len(parts) == 3 and parts[1] in PLY_TYPES:
                elements[-1].properties.append((parts[2], PLY_TYPES[parts[1]], None))
            else:
                raise ParseError(f"bad property line {raw!r}", path=path, line=number)
        else:
            raise ParseError(f"unexpected header line {raw!r}", path=path, line=number)
    if fmt is None:
        raise ParseError("ply header has no format line", path=path)
    return fmt, elements, body_start, len(lines) + 2


def _read_ply_ascii(body: str, elements, path: Path, first_line: int) -> Dict[str, list]:
    lines = body.splitlines()
    cursor = 0
    out = {}
    for element in elements:
        rows = []
        for _ in range(element.count):
            while cursor < len(lines) and not lines[cursor].strip():
                cursor += 1
            if cursor >= len(lines):
                raise ParseError(f"file ends inside element {element.name!r}", path=path)
            number = first_line + cursor
            tokens = lines[cursor].split()
            cursor += 1
            row, pos = {}, 0
            try:
                for name, dtype, count_type in element.properties:
                    if count_type is None:
                        row[name] = float(tokens[pos])
                        pos += 1
                    else:
                        n = int(tokens[pos])
                        row[name] = [int(float(t)) for t in tokens[pos + 1:pos + 1 + n]]
                        if len(row[name]) != n:
                            raise IndexError
                        pos += 1 + n
            except (IndexError, ValueError):
                raise ParseError(f"malformed {element.name} row", path=path, line=number) from None
            if pos != len(tokens):
                raise ParseError(f"extra values in {element.name} row", path=path, line=number)
            rows.append(row)
        out[element.name] = rows
    return out


def _read_ply_binary(body: bytes, elements, path: Path) -> Dict[str, list]:
    offset = 0
    out = {}
    for element in elements:
        if all(count_type is None for _, _, count_type in element.properties):
            dtype = np.dtype([(name, "<" + t) for name, t, _ in element.properties])
            need = dtype.itemsize * element.count
            if offset + need > len(body):
                raise ParseError(f"file ends inside element {element.name!r}", path=path)
            table = np.frombuffer(body, dtype=dtype, count=element.count, offset=offset)
            offset += need
            out[element.name] = table
            continue
        rows = []
        for _ in range(element.count):
            row = {}
            for name, t, count_type in element.properties:
                if count_type is None:
                    size = np.dtype(t).itemsize
                    if offset + size > len(body):
                        raise ParseError(f"file ends inside element {element.name!r}", path=path)
                    row[name] = float(np.frombuffer(body, "<" + t, 1, offset)[0])
                    offset += size
                else:
                    csize = np.dtype(count_type).itemsize
                    if offset + csize > len(body):
                        raise ParseError(f"file ends inside element {element.name!r}", path=path)
                    n = int(np.frombuffer(body, "<" + count_type, 1, offset)[0])
                    offset += csize
                    size = np.dtype(t).itemsize * n
                    if offset + size > len(body):
                        raise ParseError(f"file ends inside element {element.name!r}", path=path)
                    row[name] = np.frombuffer(body, "<" + t, n, offset).astype(np.int64).tolist()
                    offset += size
            rows.append(row)
        out[element.name] = rows
    return out


def _read_ply(path: Path, with_faces: bool):
    data = _read_bytes(path)
    fmt, elements, body_start, first_line = _parse_ply_header(data, path)
    vertex = next((e for e in elements if e.name == "vertex"), None)
    if vertex is None:
        raise ParseError("ply has no vertex element", path=path)
    names = [p[0] for p in vertex.properties]
    if not {"x", "y", "z"} <= set(names):
        raise ParseError("vertex element lacks x/y/z properties", path=path)

    if fmt == "ascii":
        tables = _read_ply_ascii(data[body_start:].decode("ascii", errors="replace"), elements, path, first_line)
    else:
        tables = _read_ply_binary(data[body_start:], elements, path)

    vt = tables["vertex"]
    if isinstance(vt, np.ndarray):
        V = np.column_stack([vt["x"], vt["y"], vt["z"]]).astype(float)
    else:
        V = np.array([[r["x"], r["y"], r["z"]] for r in vt], dtype=float).reshape(-1, 3)
    if not with_faces:
        return V, None

    faces = []
    for row in tables.get("face", []):
        polygon = row.get("vertex_indices", row.get("vertex_index"))
        if polygon is None:
            raise ParseError("face element lacks vertex_indices", path=path)
        if len(polygon) < 3:
            raise ParseError("face needs at least 3 vertices", path=path)
        if min(polygon) < 0 or max(polygon) >= len(V):
            raise ParseError(f"face index out of range for {len(V)} vertices", path=path)
        faces.extend([polygon[0], polygon[i], polygon[i + 1]] for i in range(1, len(polygon) - 1))
    return V, np.array(faces, dtype=np.int64).reshape(-1, 3)


def read_pointset(path, fmt: Optional[str] = None) -> np.ndarray:
    """Points in file order; the format comes from the suffix unless given"""
    path = Path(path)
    fmt = fmt or _format_from_suffix(path, POINTSET_FORMATS, "obj-vertices")
    if fmt == "xyz":
        points = _parse_xyz(_read_bytes(path).decode("utf-8", errors="replace"), path)
    elif fmt == "ply":
        points, _ = _read_ply(path, with_faces=False)
    elif fmt == "obj-vertices":
        points, _ = _parse_obj(_read_bytes(path).decode("utf-8", errors="replace"), path, with_faces=False)
    else:
        raise InvalidParameterError(f"point set format must be one of {POINTSET_FORMATS}, got {fmt!r}")
    if len(points) == 0:
        raise DegenerateInputError(f"{path}: no points")
    if not np.all(np.isfinite(points)):
        raise ParseError("non-finite coordinates", path=path)
    logger.debug("read %d points from %s", len(points), path)
    return points


def write_pointset(path, points, fmt: Optional[str] = None, binary: bool = False) -> None:
    """xyz or ply; ASCII output carries 17 significant digits"""
    path = Path(path)
    fmt = fmt or _format_from_suffix(path, ("xyz", "ply"), "obj")
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "xyz":
        path.write_text("".join(f"{x:.17g} {y:.17g} {z:.17g}\n" for x, y, z in P))
    elif fmt == "ply":
        header = (
            "ply\n"
            f"format {'binary_little_endian' if binary else 'ascii'} 1.0\n"
            f"element vertex {len(P)}\n"
            "property double x\nproperty double y\nproperty double z\n"
            "end_header\n"
        )
        if binary:
            path.write_bytes(header.encode("ascii") + P.astype("<f8").tobytes())
        else:
            path.write_text(header + "".join(f"{x:.17g} {y:.17g} {z:.17g}\n" for x, y, z in P))
    else:
        raise InvalidParameterError(f"cannot write point sets as {fmt!r}")


def read_mesh(path, fmt: Optional[str] = None) -> Mesh:
    """Triangles from obj or ply; polygons are split into fans around their first vertex"""
    path = Path(path)
    fmt = fmt or _format_from_suffix(path, MESH_FORMATS, "obj")
    if fmt == "obj":
        V, F = _parse_obj(_read_bytes(path).decode("utf-8", errors="replace"), path, with_faces=True)
    elif fmt == "ply":
        V, F = _read_ply(path, with_faces=True)
    else:
        raise InvalidParameterError(f"mesh format must be one of {MESH_FORMATS}, got {fmt!r}")
    logger.debug("read mesh %s: %d vertices, %d triangles", path, len(V), len(F))
    return Mesh(V, F)


# Images

def read_pgm(path) -> np.ndarray:
    """P2 or P5 graymap as an integer array indexed [row, column]"""
    path = Path(path)
    data = _read_bytes(path)
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.find(b"\n", pos)
            pos = len(data) if pos < 0 else pos
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated pgm header", path=path)
        tokens.append(data[start:pos].decode("ascii", errors="replace"))
    magic = tokens[0]
    if magic not in ("P2", "P5"):
        raise ParseError(f"not a P2/P5 graymap (magic {magic!r})", path=path)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ParseError("non-integer pgm header field", path=path) from None
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ParseError(f"bad pgm dimensions {width}x{height} maxval {maxval}", path=path)

    count = width * height
    if magic == "P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        body = data[pos + 1:]
        if len(body) < count * dtype.itemsize:
            raise ParseError("pgm pixel data is truncated", path=path)
        pixels = np.frombuffer(body, dtype=dtype, count=count).astype(np.int64)
    else:
        text = data[pos:].decode("ascii", errors="replace")
        words = [w for line in text.splitlines() for w in line.split("#", 1)[0].split()]
        if len(words) != count:
            raise ParseError(f"expected {count} pixel values, got {len(words)}", path=path)
        try:
            pixels = np.array([int(w) for w in words], dtype=np.int64)
        except ValueError:
            raise ParseError("non-integer pixel value", path=path) from None
    if pixels.max(initial=0) > maxval:
        raise ParseError("pixel value exceeds maxval", path=path)
    return pixels.reshape(height, width)


def read_mask(path) -> PixelMask:
    """Nonzero pixels are set"""
    return PixelMask(read_pgm(path))


def write_pgm(path, image, maxval: Optional[int] = None, binary: bool = False, comments=()) -> None:
    path = Path(path)
    pixels = np.asarray(image)
    if pixels.ndim != 2:
        raise InvalidParameterError(f"image must be 2D, got shape {pixels.shape}")
    pixels = pixels.astype(np.int64)
    maxval = int(maxval if maxval is not None else max(1, pixels.max(initial=0)))
    if pixels.min(initial=0) < 0 or pixels.max(initial=0) > maxval or maxval > 65535:
        raise InvalidParameterError("pixel values must lie in [0, maxval] with maxval <= 65535")
    height, width = pixels.shape
    header = "P5\n" if binary else "P2\n"
    header += "".join(f"# {c}\n" for c in comments)
    header += f"{width} {height}\n{maxval}\n"
    path.parent.mkdir(parents=True, exist_ok=True)
    if binary:
        dtype = ">u2" if maxval > 255 else "u1"
        path.write_bytes(header.encode("ascii") + pixels.astype(dtype).tobytes())
    else:
        rows = "\n".join(" ".join(str(v) for v in row) for row in pixels)
        path.write_text(header + rows + "\n")


def write_depth(path, depth: np.ndarray, scale: Optional[float] = None) -> Tuple[Path, Path]:
    """
    Depth map as a 16-bit P2 graymap plus a raw `u v depth` dump

    Stored value = round(depth * scale), 0 for no data. The scale defaults to the
    largest factor keeping the deepest pixel within 65535 and is declared in a
    header comment. Returns (pgm path, dump path).
    """
    path = Path(path)
    depth = np.asarray(depth, dtype=float)
    has_data = depth != NO_DATA
    deepest = float(depth[has_data].max()) if has_data.any() else 1.0
    scale = scale if scale is not None else 65535.0 / deepest
    stored = np.where(has_data, np.clip(np.rint(depth * scale), 1, 65535), 0).astype(np.int64)
    write_pgm(path, stored, maxval=65535, comments=(f"depth_scale {scale!r}", f"no_data {int(NO_DATA)}"))

    dump = path.with_suffix(".txt")
    rows, cols = np.nonzero(has_data)
    dump.write_text("".join(f"{u} {v} {depth[v, u]:.17g}\n" for v, u in zip(rows, cols)))
    return path, dump


def read_intrinsics(path) -> CameraIntrinsics:
    path = Path(path)
    values = read_key_values(path)
    required = ("fx", "fy", "cx", "cy", "width", "height")
    missing = [k for k in required if k not in values]
    unknown = sorted(set(values) - set(required))
    if missing:
        raise ParseError(f"missing intrinsics field(s): {', '.join(missing)}", path=path)
    if unknown:
        raise ParseError(f"unknown intrinsics field(s): {', '.join(unknown)}", path=path)
    try:
        return CameraIntrinsics(
            fx=float(values["fx"]), fy=float(values["fy"]),
            cx=float(values["cx"]), cy=float(values["cy"]),
            width=int(values["width"]), height=int(values["height"]),
        )
    except ValueError as exc:
        raise ParseError(f"bad intrinsics value: {exc}", path=path) from None


# Transforms

def write_transform(path, theta: SimilarityTransform, provenance: Optional[Dict] = None) -> None:
    """
    JSON transform document

    Fields: quaternion [w, x, y, z] (normalized), translation, scale, the
    row-major 4x4 matrix, and a provenance block (config echo, per-level
    energy trace). Floats are written in shortest round-trip form.
    """
    path = Path(path)
    T = theta.normalized()
    document = {
        "quaternion": [float(v) for v in T.q],
        "translation": [float(v) for v in T.t],
        "scale": float(T.s),
        "matrix": [[float(v) for v in row] for row in T.matrix()],
    }
    document.update(provenance or {})
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2, default=_json_default) + "\n")


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, (np.ndarray, tuple)):
        return list(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def read_transform(path) -> SimilarityTransform:
    path = Path(path)
    try:
        document = json.loads(_read_bytes(path).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"not a transform document: {exc}", path=path) from None
    try:
        q = np.asarray(document["quaternion"], dtype=float)
        t = np.asarray(document["translation"], dtype=float)
        s = float(document.get("scale", 1.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"missing or malformed transform field: {exc}", path=path) from None
    if q.shape != (4,) or t.shape != (3,):
        raise ParseError("quaternion must have 4 entries and translation 3", path=path)
    try:
        return SimilarityTransform(q=q, t=t, s=s)
    except InvalidParameterError as exc:
        raise ParseError(str(exc), path=path) from None
