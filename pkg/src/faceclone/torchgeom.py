"""Differentiable mesh geometry (torch) mirroring the numpy reference ops."""

from __future__ import annotations

import torch


def t_face_cross(vertices: torch.Tensor, faces: torch.Tensor) -> torch.Tensor:
    e1 = vertices[faces[:, 1]] - vertices[faces[:, 0]]
    e2 = vertices[faces[:, 2]] - vertices[faces[:, 0]]
    return torch.cross(e1, e2, dim=1)


def t_vertex_normals(vertices: torch.Tensor, faces: torch.Tensor) -> torch.Tensor:
    """Area-weighted unit vertex normals; matches mesh.vertex_normals."""
    cross = t_face_cross(vertices, faces)
    out = torch.zeros_like(vertices)
    for c in range(3):
        out = out.index_add(0, faces[:, c], cross)
    norms = out.norm(dim=1, keepdim=True)
    return out / norms.clamp_min(1e-30)


def t_triangle_frames(vertices: torch.Tensor, faces: torch.Tensor) -> torch.Tensor:
    """Per-face frame [e1 | e2 | (e1 x e2)/sqrt(||e1 x e2||)] as columns."""
    e1 = vertices[faces[:, 1]] - vertices[faces[:, 0]]
    e2 = vertices[faces[:, 2]] - vertices[faces[:, 0]]
    cross = torch.cross(e1, e2, dim=1)
    norm = cross.norm(dim=1, keepdim=True)
    scaled_normal = cross / norm.clamp_min(1e-30).sqrt()
    return torch.stack([e1, e2, scaled_normal], dim=2)


def t_deformation_jacobians(
    deformed_vertices: torch.Tensor, faces: torch.Tensor, rest_frames_inv: torch.Tensor
) -> torch.Tensor:
    """Per-face Jacobians given precomputed inverse rest frames (F, 3, 3)."""
    return t_triangle_frames(deformed_vertices, faces) @ rest_frames_inv
