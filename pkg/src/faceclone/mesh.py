"""Triangle mesh container, Wavefront OBJ I/O, normals and per-vertex features."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Faces with area below this are rejected as degenerate (model units squared).
MIN_FACE_AREA = 1e-12


class MeshError(ValueError):
    """Raised for invalid mesh data or unparseable mesh files."""


@dataclass(frozen=True)
class Mesh:
    """Immutable triangle mesh.

    Attributes
    ----------
    vertices : (N, 3) float array
        Vertex positions in model units.
    faces : (F, 3) int array
        Triangle vertex indices, counter-clockwise orientation.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (N, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must be (F, 3), got {f.shape}")
        if v.shape[0] < 4:
            raise MeshError(f"mesh needs at least 4 vertices, got {v.shape[0]}")
        if f.shape[0] < 2:
            raise MeshError(f"mesh needs at least 2 faces, got {f.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise MeshError("non-finite vertex coordinates")
        if f.min() < 0 or f.max() >= v.shape[0]:
            raise MeshError("face index out of range")
        same = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        if same.any():
            raise MeshError(f"face {int(np.flatnonzero(same)[0])} repeats a vertex index")
        areas = face_areas(v, f)
        if areas.min() <= MIN_FACE_AREA:
            raise MeshError(f"face {int(areas.argmin())} is degenerate (area {areas.min():.3e})")
        v.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    @property
    def bbox_diagonal(self) -> float:
        extent = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(extent))

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        """Same topology, new vertex positions."""
        return Mesh(vertices, self.faces)

    def content_hash(self) -> str:
        """SHA-256 over the exact vertex and face bytes."""
        h = hashlib.sha256()
        h.update(self.vertices.tobytes())
        h.update(self.faces.tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class MeshFrame:
    """Similarity mapping between original and normalized coordinates.

    normalized = (original - center) / scale
    """

    center: np.ndarray
    scale: float

    def to_normalized(self, points: np.ndarray) -> np.ndarray:
        return (points - self.center) / self.scale

    def to_original(self, points: np.ndarray) -> np.ndarray:
        return points * self.scale + self.center

    @staticmethod
    def identity() -> "MeshFrame":
        return MeshFrame(center=np.zeros(3), scale=1.0)


def normalize_mesh(mesh: Mesh) -> tuple[Mesh, MeshFrame]:
    """Center the mesh at the origin and scale the bounding-box diagonal to 1.

    Returns the normalized mesh and the frame that undoes the transform.
    A mesh that is already normalized maps to itself (within rounding).
    """
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    center = 0.5 * (lo + hi)
    scale = float(np.linalg.norm(hi - lo))
    if scale <= 0:
        raise MeshError("degenerate bounding box")
    return mesh.with_vertices((mesh.vertices - center) / scale), MeshFrame(center=center, scale=scale)


def face_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Triangle areas, 0.5 * ||e1 x e2||."""
    e1 = vertices[faces[:, 1]] - vertices[faces[:, 0]]
    e2 = vertices[faces[:, 2]] - vertices[faces[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


def face_cross_products(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Unnormalized face normals e1 x e2 (length = 2 * area), CCW outward."""
    e1 = vertices[faces[:, 1]] - vertices[faces[:, 0]]
    e2 = vertices[faces[:, 2]] - vertices[faces[:, 0]]
    return np.cross(e1, e2)


def vertex_normals(mesh: Mesh) -> np.ndarray:
    """Area-weighted unit vertex normals.

    Each face contributes its unnormalized cross product (proportional to
    area) to its three corners. Vertices not referenced by any face get the
    conventional normal (0, 0, 1).

    Returns
    -------
    (N, 3) array of unit vectors.
    """
    return vertex_normals_from_arrays(mesh.vertices, mesh.faces)


def vertex_normals_from_arrays(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    cross = face_cross_products(vertices, faces)
    out = np.zeros_like(vertices, dtype=np.float64)
    for c in range(3):
        np.add.at(out, faces[:, c], cross)
    norms = np.linalg.norm(out, axis=1)
    isolated = norms < 1e-300
    norms[isolated] = 1.0
    out = out / norms[:, None]
    out[isolated] = (0.0, 0.0, 1.0)
    return out


def vertex_features(mesh: Mesh) -> np.ndarray:
    """Per-vertex input features: [position | unit normal], shape (N, 6)."""
    return np.concatenate([mesh.vertices, vertex_normals(mesh)], axis=1)


def _parse_face_token(token: str, n_vertices: int, line_no: int) -> int:
    # OBJ face tokens may carry texture/normal refs: "v", "v/vt", "v/vt/vn", "v//vn".
    head = token.split("/", 1)[0]
    try:
        idx = int(head)
    except ValueError:
        raise MeshError(f"line {line_no}: bad face index {token!r}") from None
    if idx == 0:
        raise MeshError(f"line {line_no}: OBJ face indices are 1-based, got 0")
    if idx < 0:
        idx = n_vertices + 1 + idx  # relative indexing counts from the end
    if idx < 1 or idx > n_vertices:
        raise MeshError(f"line {line_no}: face index {idx} out of range (1..{n_vertices})")
    return idx - 1


def load_mesh(path: str | Path) -> Mesh:
    """Read a triangle mesh from a Wavefront OBJ file.

    Quad faces are fan-triangulated; polygons with more than 4 corners are
    rejected. Vertex order is preserved from the file; coordinates are not
    rescaled (normalization is an explicit, separate step).
    """
    path = Path(path)
    vertices: list[tuple[float, float, float]] = []
    raw_faces: list[tuple[list[str], int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshError(f"line {line_no}: vertex needs 3 coordinates")
                try:
                    vertices.append((float(parts[1]), float(parts[2]), float(parts[3])))
                except ValueError:
                    raise MeshError(f"line {line_no}: bad vertex coordinate") from None
            elif tag == "f":
                corners = parts[1:]
                if len(corners) < 3:
                    raise MeshError(f"line {line_no}: face needs at least 3 corners")
                if len(corners) > 4:
                    raise MeshError(f"line {line_no}: polygon with {len(corners)} corners (only triangles and quads supported)")
                raw_faces.append((corners, line_no))
            # other tags (vn, vt, o, g, s, usemtl, mtllib) are ignored
    n = len(vertices)
    faces: list[tuple[int, int, int]] = []
    for corners, line_no in raw_faces:
        idx = [_parse_face_token(tok, n, line_no) for tok in corners]
        faces.append((idx[0], idx[1], idx[2]))
        if len(idx) == 4:
            faces.append((idx[0], idx[2], idx[3]))
    if n == 0 or not faces:
        raise MeshError(f"{path}: no usable geometry found")
    return Mesh(np.array(vertices, dtype=np.float64), np.array(faces, dtype=np.int64))


def save_mesh(mesh: Mesh, path: str | Path) -> None:
    """Write a triangle mesh as OBJ: 1-based indices, 6 decimal places."""
    path = Path(path)
    lines = []
    for x, y, z in mesh.vertices:
        lines.append(f"v {x:.6f} {y:.6f} {z:.6f}")
    for a, b, c in mesh.faces:
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
