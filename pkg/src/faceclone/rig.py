"""Delta-blendshape rig, facial segmentation maps, and the procedural toy rig.

The rig stores a neutral shape plus identity and expression delta bases.
A deformed face is

    neutral + sum_j w_id[j] * identity_deltas[j] + sum_k w_exp[k] * expression_deltas[k]

which is exact and linear in the coefficients; this is the carrier for every
supervised quantity downstream.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.cluster.hierarchy

from .mesh import Mesh, load_mesh, normalize_mesh, save_mesh
from .spectral import compute_spectral_operators

# FACS-style names for the default K=53 expression basis (ARKit-like set).
EXPRESSION_NAMES_53 = (
    "browDownLeft", "browDownRight", "browInnerUp", "browOuterUpLeft", "browOuterUpRight",
    "cheekPuff", "cheekSquintLeft", "cheekSquintRight",
    "eyeBlinkLeft", "eyeBlinkRight", "eyeLookDownLeft", "eyeLookDownRight",
    "eyeLookInLeft", "eyeLookInRight", "eyeLookOutLeft", "eyeLookOutRight",
    "eyeLookUpLeft", "eyeLookUpRight", "eyeSquintLeft", "eyeSquintRight",
    "eyeWideLeft", "eyeWideRight",
    "jawForward", "jawLeft", "jawOpen", "jawRight",
    "mouthClose", "mouthDimpleLeft", "mouthDimpleRight", "mouthFrownLeft", "mouthFrownRight",
    "mouthFunnel", "mouthLeft", "mouthLowerDownLeft", "mouthLowerDownRight",
    "mouthPressLeft", "mouthPressRight", "mouthPucker", "mouthRight",
    "mouthRollLower", "mouthRollUpper", "mouthShrugLower", "mouthShrugUpper",
    "mouthSmileLeft", "mouthSmileRight", "mouthStretchLeft", "mouthStretchRight",
    "mouthUpperUpLeft", "mouthUpperUpRight",
    "noseSneerLeft", "noseSneerRight", "tongueOut", "jawChew",
)

# Region names for the canonical 24-segment variant; smaller variants merge these.
SEGMENT_NAMES_24 = (
    "forehead_left", "forehead_right", "brow_left", "brow_right",
    "eye_left", "eye_right", "temple_left", "temple_right",
    "nose_bridge", "nose_tip", "cheek_left", "cheek_right",
    "ear_left", "ear_right", "lips_upper", "lips_lower",
    "mouth_corner_left", "mouth_corner_right", "chin", "jaw_left",
    "jaw_right", "scalp", "back_head", "neck",
)


class RigError(ValueError):
    """Raised for invalid rig data or container files."""


@dataclass(frozen=True)
class BlendshapeRig:
    """Neutral shape plus identity/expression delta bases."""

    neutral: Mesh
    identity_deltas: np.ndarray    # (J, N, 3)
    expression_deltas: np.ndarray  # (K, N, 3)
    expression_names: tuple[str, ...]

    def __post_init__(self):
        idd = np.ascontiguousarray(np.asarray(self.identity_deltas, dtype=np.float64))
        exd = np.ascontiguousarray(np.asarray(self.expression_deltas, dtype=np.float64))
        n = self.neutral.n_vertices
        if idd.ndim != 3 or idd.shape[1:] != (n, 3):
            raise RigError(f"identity_deltas must be (J, {n}, 3), got {idd.shape}")
        if exd.ndim != 3 or exd.shape[1:] != (n, 3):
            raise RigError(f"expression_deltas must be (K, {n}, 3), got {exd.shape}")
        if not (np.isfinite(idd).all() and np.isfinite(exd).all()):
            raise RigError("non-finite delta values")
        bound = 0.5 * self.neutral.bbox_diagonal
        if idd.size and np.abs(idd).max() > bound:
            raise RigError(f"identity delta magnitude {np.abs(idd).max():.3g} exceeds half the bbox diagonal")
        if exd.size and np.abs(exd).max() > bound:
            raise RigError(f"expression delta magnitude {np.abs(exd).max():.3g} exceeds half the bbox diagonal")
        names = tuple(str(s) for s in self.expression_names)
        if len(names) != exd.shape[0]:
            raise RigError(f"{len(names)} expression names for {exd.shape[0]} bases")
        if len(set(names)) != len(names):
            raise RigError("expression names must be unique")
        idd.flags.writeable = False
        exd.flags.writeable = False
        object.__setattr__(self, "identity_deltas", idd)
        object.__setattr__(self, "expression_deltas", exd)
        object.__setattr__(self, "expression_names", names)

    @property
    def J(self) -> int:
        return self.identity_deltas.shape[0]

    @property
    def K(self) -> int:
        return self.expression_deltas.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.neutral.n_vertices

    def expression_basis(self) -> np.ndarray:
        """Expression deltas flattened to (K, 3N) for projection losses."""
        return self.expression_deltas.reshape(self.K, -1)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.neutral.vertices.tobytes())
        h.update(self.neutral.faces.tobytes())
        h.update(self.identity_deltas.tobytes())
        h.update(self.expression_deltas.tobytes())
        h.update("\x00".join(self.expression_names).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class SegmentationMap:
    """Per-vertex facial-region labels in [0, L)."""

    labels: np.ndarray
    segment_names: tuple[str, ...]

    def __post_init__(self):
        labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
        names = tuple(str(s) for s in self.segment_names)
        if labels.ndim != 1:
            raise RigError("labels must be a 1-D array")
        if len(set(names)) != len(names):
            raise RigError("segment names must be unique")
        l_count = len(names)
        if labels.min() < 0 or labels.max() >= l_count:
            raise RigError(f"labels out of range [0, {l_count})")
        counts = np.bincount(labels, minlength=l_count)
        if (counts == 0).any():
            raise RigError(f"segment {int(np.flatnonzero(counts == 0)[0])} is empty")
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "segment_names", names)

    @property
    def L(self) -> int:
        return len(self.segment_names)


def evaluate_rig(rig: BlendshapeRig, w_id: np.ndarray, w_exp: np.ndarray) -> np.ndarray:
    """Deformed vertex positions for one coefficient pair (exact linear blend)."""
    w_id = np.asarray(w_id, dtype=np.float64)
    w_exp = np.asarray(w_exp, dtype=np.float64)
    if w_id.shape != (rig.J,):
        raise RigError(f"w_id must have length {rig.J}, got {w_id.shape}")
    if w_exp.shape != (rig.K,):
        raise RigError(f"w_exp must have length {rig.K}, got {w_exp.shape}")
    out = rig.neutral.vertices.copy()
    if rig.J:
        out += np.tensordot(w_id, rig.identity_deltas, axes=1)
    if rig.K:
        out += np.tensordot(w_exp, rig.expression_deltas, axes=1)
    return out


def identity_mesh(rig: BlendshapeRig, w_id: np.ndarray) -> Mesh:
    """Neutral-expression mesh of one identity."""
    return rig.neutral.with_vertices(evaluate_rig(rig, w_id, np.zeros(rig.K)))


# ---------------------------------------------------------------------------
# procedural toy rig
# ---------------------------------------------------------------------------

_ICO_T = (1.0 + np.sqrt(5.0)) / 2.0
_ICO_VERTS = np.array([
    (-1, _ICO_T, 0), (1, _ICO_T, 0), (-1, -_ICO_T, 0), (1, -_ICO_T, 0),
    (0, -1, _ICO_T), (0, 1, _ICO_T), (0, -1, -_ICO_T), (0, 1, -_ICO_T),
    (_ICO_T, 0, -1), (_ICO_T, 0, 1), (-_ICO_T, 0, -1), (-_ICO_T, 0, 1),
], dtype=np.float64)
_ICO_FACES = np.array([
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
], dtype=np.int64)


def icosphere(subdivision: int) -> Mesh:
    """Unit icosphere with 10 * 4**subdivision + 2 vertices."""
    verts = [tuple(v / np.linalg.norm(v)) for v in _ICO_VERTS]
    faces = [tuple(f) for f in _ICO_FACES]
    for _ in range(subdivision):
        midpoint: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                p = np.array(verts[a]) + np.array(verts[b])
                p /= np.linalg.norm(p)
                midpoint[key] = len(verts)
                verts.append(tuple(p))
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
        faces = new_faces
    return Mesh(np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64))


def _head_shape(subdivision: int) -> Mesh:
    """Deformed icosphere standing in for a head: front is +z, up is +y.

    The asymmetric bumps break spectral degeneracies of the sphere.
    """
    sphere = icosphere(subdivision)
    v = sphere.vertices.copy()
    v *= (0.92, 1.18, 1.0)
    x, y, z = v[:, 0], v[:, 1], v[:, 2]
    # nose-ish bump on the front, slight flattening at the back
    nose = 0.22 * np.exp(-((x / 0.28) ** 2 + ((y + 0.18) / 0.30) ** 2)) * np.clip(z, 0.0, None) ** 2
    v[:, 2] += nose
    v[:, 2] -= 0.10 * np.clip(-z, 0.0, None) ** 2
    # low-order asymmetric ripples
    v[:, 2] += 0.035 * np.sin(2.1 * x + 0.7) * np.cos(1.7 * y - 0.4)
    v[:, 1] += 0.03 * np.sin(1.3 * z + 0.9) * np.cos(2.3 * x + 0.2)
    mesh, _ = normalize_mesh(sphere.with_vertices(v))
    return mesh


def _farthest_point_sample(points: np.ndarray, count: int, start: int) -> np.ndarray:
    """Greedy farthest-point vertex selection (Euclidean), deterministic."""
    chosen = [int(start)]
    dist = np.linalg.norm(points - points[start], axis=1)
    for _ in range(count - 1):
        nxt = int(dist.argmax())
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return np.array(chosen, dtype=np.int64)


def _merge_anchor_labels(anchor_points: np.ndarray, target_count: int) -> np.ndarray:
    """Group anchors into target_count clusters by Ward linkage on position."""
    link = scipy.cluster.hierarchy.linkage(anchor_points, method="ward")
    raw = scipy.cluster.hierarchy.fcluster(link, t=target_count, criterion="maxclust")
    # relabel clusters by first appearance so the mapping is stable
    remap: dict[int, int] = {}
    out = np.empty(len(raw), dtype=np.int64)
    for i, r in enumerate(raw):
        if r not in remap:
            remap[r] = len(remap)
        out[i] = remap[r]
    return out


def make_toy_rig(
    seed: int,
    subdivision: int = 3,
    J: int = 100,
    K: int = 53,
    L: int = 20,
    bump_sigma: tuple[float, float] = (0.045, 0.09),
    bump_magnitude: tuple[float, float] = (0.025, 0.05),
    identity_amplitude: float = 0.003,
) -> tuple[BlendshapeRig, SegmentationMap]:
    """Procedural stand-in for a licensed face rig, deterministic in seed.

    Expression bases are localized Gaussian bumps around anchor vertices on
    the front hemisphere (overlapping supports, random unit directions,
    magnitude <= 0.08 of the bounding-box diagonal). Identity bases are
    low-frequency fields built from the first 12 nonconstant Laplacian
    eigenfunctions. Segmentation is the vertex Voronoi partition of anchor
    points, with the canonical 24-anchor set merged down to L regions.
    """
    if subdivision < 2:
        raise RigError("subdivision must be >= 2")
    if min(J, K, L) < 1:
        raise RigError("J, K, L must all be >= 1")
    rng = np.random.default_rng(seed)
    head = _head_shape(subdivision)
    verts = head.vertices
    n = head.n_vertices
    diag = head.bbox_diagonal  # 1.0 after normalization

    # --- expression bases: anchored bumps on the front hemisphere (+z)
    front = np.flatnonzero(verts[:, 2] > 0.02 * diag)
    if front.size < K:
        raise RigError(f"front hemisphere has {front.size} candidate vertices for {K} expression anchors")
    anchors_exp = front[_farthest_point_sample(verts[front], K, start=int(rng.integers(front.size)))]
    sigmas = rng.uniform(bump_sigma[0], bump_sigma[1], size=K) * diag
    magnitudes = rng.uniform(bump_magnitude[0], bump_magnitude[1], size=K) * diag
    directions = rng.normal(size=(K, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    d2 = ((verts[None, :, :] - verts[anchors_exp][:, None, :]) ** 2).sum(axis=2)  # (K, N)
    falloff = np.exp(-d2 / (2.0 * sigmas[:, None] ** 2))
    expression_deltas = falloff[:, :, None] * (magnitudes[:, None] * directions)[:, None, :]

    # --- identity bases: smooth fields from low eigenfunctions
    ops = compute_spectral_operators(head, k=13)
    low_modes = ops.eigenvectors[:, 1:13]  # skip the constant mode
    identity_deltas = np.empty((J, n, 3))
    id_amp = identity_amplitude * diag
    for j in range(J):
        coeffs = rng.normal(size=(12, 3))
        field = low_modes @ coeffs
        peak = np.linalg.norm(field, axis=1).max()
        identity_deltas[j] = field * (id_amp / max(peak, 1e-12))

    # --- segmentation: Voronoi regions of anchor vertices
    if L <= 24:
        anchors_all = _farthest_point_sample(verts, 24, start=int(rng.integers(n)))
        merged = _merge_anchor_labels(verts[anchors_all], L)
        dist = ((verts[:, None, :] - verts[anchors_all][None, :, :]) ** 2).sum(axis=2)
        labels = merged[dist.argmin(axis=1)]
        names = []
        for seg in range(L):
            members = np.flatnonzero(merged == seg)
            names.append(SEGMENT_NAMES_24[int(members[0])])
    else:
        anchors_all = _farthest_point_sample(verts, L, start=int(rng.integers(n)))
        dist = ((verts[:, None, :] - verts[anchors_all][None, :, :]) ** 2).sum(axis=2)
        labels = dist.argmin(axis=1)
        names = [f"region_{i:02d}" for i in range(L)]

    if K == 53:
        expression_names = EXPRESSION_NAMES_53
    else:
        expression_names = tuple(f"expr_{i:03d}" for i in range(K))

    rig = BlendshapeRig(
        neutral=head,
        identity_deltas=identity_deltas,
        expression_deltas=expression_deltas,
        expression_names=expression_names,
    )
    seg = SegmentationMap(labels=labels, segment_names=tuple(names))
    return rig, seg


# ---------------------------------------------------------------------------
# rig container I/O
# ---------------------------------------------------------------------------

def save_rig(rig: BlendshapeRig, seg: SegmentationMap, directory: str | Path) -> None:
    """Write the rig container: neutral.obj, delta arrays, manifest, labels."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_mesh(rig.neutral, directory / "neutral.obj")
    np.save(directory / "identity_deltas.npy", rig.identity_deltas)
    np.save(directory / "expression_deltas.npy", rig.expression_deltas)
    np.save(directory / "labels.npy", seg.labels)
    np.save(directory / "neutral_vertices.npy", rig.neutral.vertices)
    manifest = {
        "J": rig.J,
        "K": rig.K,
        "L": seg.L,
        "n_vertices": rig.n_vertices,
        "expression_names": list(rig.expression_names),
        "segment_names": list(seg.segment_names),
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_external_rig(directory: str | Path) -> tuple[BlendshapeRig, SegmentationMap]:
    """Load a rig container; errors name the missing file or mismatched field."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise RigError(f"missing manifest.json in {directory}")
    manifest = json.loads(manifest_path.read_text())
    for name in ("neutral.obj", "identity_deltas.npy", "expression_deltas.npy"):
        if not (directory / name).exists():
            raise RigError(f"missing {name} in {directory}")
    labels_path = directory / "labels.npy"
    if not labels_path.exists():
        raise RigError(
            f"missing labels.npy in {directory}: supply a per-vertex segmentation array"
        )

    neutral = load_mesh(directory / "neutral.obj")
    # OBJ rounds to 6 decimals; prefer the exact array when present
    exact = directory / "neutral_vertices.npy"
    if exact.exists():
        neutral = neutral.with_vertices(np.load(exact))
    identity_deltas = np.load(directory / "identity_deltas.npy")
    expression_deltas = np.load(directory / "expression_deltas.npy")
    labels = np.load(labels_path)

    if identity_deltas.shape[0] != manifest["J"]:
        raise RigError(f"manifest J={manifest['J']} but identity_deltas has {identity_deltas.shape[0]} bases")
    if expression_deltas.shape[0] != manifest["K"]:
        raise RigError(f"manifest K={manifest['K']} but expression_deltas has {expression_deltas.shape[0]} bases")
    if len(manifest["expression_names"]) != manifest["K"]:
        raise RigError("manifest expression_names length != K")
    if labels.shape[0] != neutral.n_vertices:
        raise RigError(f"labels length {labels.shape[0]} != N={neutral.n_vertices}")

    rig = BlendshapeRig(
        neutral=neutral,
        identity_deltas=identity_deltas,
        expression_deltas=expression_deltas,
        expression_names=tuple(manifest["expression_names"]),
    )
    seg = SegmentationMap(labels=labels, segment_names=tuple(manifest["segment_names"]))
    return rig, seg
