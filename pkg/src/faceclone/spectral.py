"""Cotangent Laplacian, lumped mass, and the truncated spectral basis.

These operators are precomputed per mesh and feed the diffusion backbone.
They depend only on (vertices, faces, k), so they are cached by content hash.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .mesh import Mesh, face_areas

# Below this vertex count the dense generalized eigensolver is both faster
# and more robust than shift-invert Lanczos.
DENSE_EIGH_LIMIT = 1024


class SpectralError(RuntimeError):
    """Raised when operator assembly or the eigensolver fails."""


@dataclass(frozen=True)
class SpectralOperators:
    """Precomputed spectral operators for one mesh.

    Attributes
    ----------
    mass : (N,) array
        Positive lumped (barycentric) vertex masses.
    stiffness : (N, N) sparse CSR
        Symmetric positive semidefinite cotangent matrix with zero row sums.
    eigenvalues : (k,) array
        Generalized eigenvalues of stiffness @ phi = lam * mass * phi,
        ascending and nonnegative; eigenvalues[0] is the constant mode.
    eigenvectors : (N, k) array
        Mass-orthonormal: eigenvectors.T @ diag(mass) @ eigenvectors = I.
    """

    mass: np.ndarray
    stiffness: scipy.sparse.csr_matrix
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.mass.shape[0]

    @property
    def k(self) -> int:
        return self.eigenvalues.shape[0]


def barycentric_mass(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Lumped vertex masses: one third of each incident triangle's area."""
    areas = face_areas(vertices, faces)
    mass = np.zeros(vertices.shape[0], dtype=np.float64)
    for c in range(3):
        np.add.at(mass, faces[:, c], areas / 3.0)
    # isolated vertices get a tiny positive mass to keep the matrix definite
    empty = mass <= 0.0
    if empty.any():
        mass[empty] = 1e-12 * max(mass.max(), 1.0)
    return mass


def cotangent_stiffness(vertices: np.ndarray, faces: np.ndarray) -> scipy.sparse.csr_matrix:
    """Cotangent stiffness matrix (positive semidefinite Dirichlet form).

    Off-diagonal entry for edge (i, j): -(cot a + cot b) / 2 over the one or
    two triangles containing the edge; diagonal entries make row sums zero.
    """
    n = vertices.shape[0]
    v0, v1, v2 = (vertices[faces[:, c]] for c in range(3))
    # cotangent at each corner = dot of adjacent edges / (2 * area)
    rows, cols, vals = [], [], []
    corners = ((v0, v1, v2, faces[:, 1], faces[:, 2]),
               (v1, v2, v0, faces[:, 2], faces[:, 0]),
               (v2, v0, v1, faces[:, 0], faces[:, 1]))
    for apex, p, q, i_idx, j_idx in corners:
        e1 = p - apex
        e2 = q - apex
        cross = np.linalg.norm(np.cross(e1, e2), axis=1)
        cot = (e1 * e2).sum(axis=1) / np.maximum(cross, 1e-300)
        w = 0.5 * cot  # contribution to edge (p, q) opposite this corner
        rows.extend([i_idx, j_idx, i_idx, j_idx])
        cols.extend([j_idx, i_idx, i_idx, j_idx])
        vals.extend([-w, -w, w, w])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    mat = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    return mat


def compute_spectral_operators(mesh: Mesh, k: int, cache: "OperatorCache | None" = None) -> SpectralOperators:
    """Assemble mass/stiffness and solve for the first k generalized eigenpairs.

    Parameters
    ----------
    mesh : Mesh
    k : int
        Number of eigenpairs, 1 <= k <= N - 1.
    cache : OperatorCache, optional
        Content-hash keyed cache; hits skip the eigensolve entirely.
    """
    n = mesh.n_vertices
    if not (1 <= k <= n - 1):
        raise ValueError(f"k={k} must be in [1, N-1] with N={n}")
    if cache is not None:
        hit = cache.get(mesh, k)
        if hit is not None:
            return hit

    mass = barycentric_mass(mesh.vertices, mesh.faces)
    stiffness = cotangent_stiffness(mesh.vertices, mesh.faces)

    try:
        if n <= DENSE_EIGH_LIMIT:
            dense = stiffness.toarray()
            evals, evecs = scipy.linalg.eigh(dense, np.diag(mass))
            evals = evals[:k]
            evecs = evecs[:, :k]
        else:
            m_mat = scipy.sparse.diags(mass)
            # small negative shift keeps (S - sigma M) definite despite the null mode
            evals, evecs = scipy.sparse.linalg.eigsh(
                stiffness.tocsc(), k=k, M=m_mat.tocsc(), sigma=-1e-4, which="LM"
            )
            order = np.argsort(evals)
            evals = evals[order]
            evecs = evecs[:, order]
    except Exception as exc:  # pragma: no cover - solver failure path
        raise SpectralError(
            f"eigensolver failed for mesh with N={n}, F={mesh.n_faces}, k={k}: {exc}"
        ) from exc

    if evals[0] < -1e-8:
        raise SpectralError(f"stiffness not PSD: min eigenvalue {evals[0]:.3e}")
    evals = np.clip(evals, 0.0, None)

    ops = SpectralOperators(
        mass=mass,
        stiffness=stiffness,
        eigenvalues=np.ascontiguousarray(evals),
        eigenvectors=np.ascontiguousarray(evecs),
    )
    if cache is not None:
        cache.put(mesh, k, ops)
    return ops


def operator_key(mesh: Mesh, k: int) -> str:
    """Cache key: content hash of (vertices, faces, k)."""
    h = hashlib.sha256()
    h.update(mesh.vertices.tobytes())
    h.update(mesh.faces.tobytes())
    h.update(str(int(k)).encode())
    return h.hexdigest()


def save_operators(ops: SpectralOperators, path: str | Path) -> None:
    """Write operators to a named-array container (.npz)."""
    csr = ops.stiffness.tocsr()
    np.savez(
        path,
        mass=ops.mass,
        eigenvalues=ops.eigenvalues,
        eigenvectors=ops.eigenvectors,
        stiffness_data=csr.data,
        stiffness_indices=csr.indices,
        stiffness_indptr=csr.indptr,
        stiffness_shape=np.array(csr.shape, dtype=np.int64),
    )


def load_operators(path: str | Path) -> SpectralOperators:
    with np.load(path) as z:
        stiffness = scipy.sparse.csr_matrix(
            (z["stiffness_data"], z["stiffness_indices"], z["stiffness_indptr"]),
            shape=tuple(z["stiffness_shape"]),
        )
        return SpectralOperators(
            mass=z["mass"],
            stiffness=stiffness,
            eigenvalues=z["eigenvalues"],
            eigenvectors=z["eigenvectors"],
        )


class OperatorCache:
    """Two-level operator cache: in-memory dict plus an optional directory.

    Disk entries are .npz files named by content hash, shared across
    processes and training runs.
    """

    def __init__(self, directory: str | Path | None = None, max_memory_items: int = 4096):
        self.directory = Path(directory) if directory is not None else None
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
        self.max_memory_items = max_memory_items
        self._memory: dict[str, SpectralOperators] = {}

    def get(self, mesh: Mesh, k: int) -> SpectralOperators | None:
        key = operator_key(mesh, k)
        if key in self._memory:
            return self._memory[key]
        if self.directory is not None:
            path = self.directory / f"{key}.npz"
            if path.exists():
                ops = load_operators(path)
                self._remember(key, ops)
                return ops
        return None

    def put(self, mesh: Mesh, k: int, ops: SpectralOperators) -> None:
        key = operator_key(mesh, k)
        self._remember(key, ops)
        if self.directory is not None:
            path = self.directory / f"{key}.npz"
            if not path.exists():
                tmp = path.with_suffix(".tmp.npz")
                save_operators(ops, tmp)
                tmp.replace(path)

    def _remember(self, key: str, ops: SpectralOperators) -> None:
        if len(self._memory) >= self.max_memory_items:
            self._memory.pop(next(iter(self._memory)))
        self._memory[key] = ops
