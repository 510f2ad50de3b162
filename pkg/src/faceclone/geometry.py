"""Deformation Jacobians, Procrustes alignment, and vertex MSE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh


@dataclass(frozen=True)
class RigidAlignment:
    """Similarity transform x -> scale * rotation @ x + translation.

    ``translation_only`` flags the degenerate fallback used when the
    cross-covariance between the point sets is rank deficient.
    """

    rotation: np.ndarray
    scale: float
    translation: np.ndarray
    translation_only: bool = False

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * points @ self.rotation.T + self.translation


def triangle_frames(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Per-face frame matrix with columns [e1, e2, n~].

    e1, e2 are the two edge vectors from corner 0; the third column is the
    scaled normal (e1 x e2) / sqrt(||e1 x e2||), which scales linearly under
    uniform scaling so that a uniformly scaled mesh has frame = s * frame.
    """
    e1 = vertices[faces[:, 1]] - vertices[faces[:, 0]]
    e2 = vertices[faces[:, 2]] - vertices[faces[:, 0]]
    cross = np.cross(e1, e2)
    norm = np.linalg.norm(cross, axis=1, keepdims=True)
    scaled_normal = cross / np.sqrt(np.maximum(norm, 1e-300))
    return np.stack([e1, e2, scaled_normal], axis=2)


def deformation_jacobians(rest: Mesh, deformed_vertices: np.ndarray) -> np.ndarray:
    """Per-face linear maps taking the rest frame to the deformed frame.

    J_f = D_f @ R_f^{-1} with R, D the triangle frames of the rest and the
    deformed configuration. Identity deformation gives J = I exactly; a
    global rotation R gives J = R; uniform scaling by s gives J = s * I.

    Returns
    -------
    (F, 3, 3) array.
    """
    deformed_vertices = np.asarray(deformed_vertices, dtype=np.float64)
    if deformed_vertices.shape != rest.vertices.shape:
        raise ValueError(
            f"deformed vertices shape {deformed_vertices.shape} != rest {rest.vertices.shape}"
        )
    rest_frames = triangle_frames(rest.vertices, rest.faces)
    def_frames = triangle_frames(deformed_vertices, rest.faces)
    return def_frames @ np.linalg.inv(rest_frames)


def procrustes_align(source: np.ndarray, target: np.ndarray) -> tuple[RigidAlignment, np.ndarray]:
    """Best-fit similarity transform from source onto target (Umeyama).

    Minimizes sum ||s * R @ x_i + t - y_i||^2 over rotations R, scale s > 0,
    translation t. If the cross-covariance is rank deficient the result
    falls back to translation-only alignment and is flagged.

    Returns
    -------
    (RigidAlignment, aligned) where aligned = transform applied to source.
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.shape != target.shape or source.ndim != 2 or source.shape[1] != 3:
        raise ValueError(f"point sets must share shape (N, 3), got {source.shape} vs {target.shape}")
    n = source.shape[0]
    if n < 3:
        raise ValueError("need at least 3 points")

    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    xs = source - mu_s
    ys = target - mu_t
    cov = ys.T @ xs / n
    var_s = (xs ** 2).sum() / n

    u, d, vt = np.linalg.svd(cov)
    rank = int((d > 1e-12 * max(d[0], 1e-300)).sum())
    if rank < 2 or var_s <= 1e-300:
        align = RigidAlignment(
            rotation=np.eye(3), scale=1.0, translation=mu_t - mu_s, translation_only=True
        )
        return align, align.apply(source)

    s_fix = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_fix[2] = -1.0
    rotation = u @ np.diag(s_fix) @ vt
    scale = float((d * s_fix).sum() / var_s)
    if scale <= 0:
        scale = 1e-12
    translation = mu_t - scale * rotation @ mu_s
    align = RigidAlignment(rotation=rotation, scale=scale, translation=translation)
    return align, align.apply(source)


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean over vertices of the squared Euclidean distance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(((a - b) ** 2).sum(axis=-1).mean())
