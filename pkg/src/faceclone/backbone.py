"""Spectral-diffusion mesh backbone shared by the three encoders.

Each block diffuses every feature channel with its own learned time
(multiplying spectral coefficients by exp(-lambda * t)), then applies a
pointwise two-layer MLP with a residual connection. Diffusion in the
truncated eigenbasis is discretization agnostic and exactly preserves the
constant (mode 0) component of every channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .spectral import SpectralOperators

CODE_DIM = 128


@dataclass(frozen=True)
class TorchOperators:
    """Spectral operators moved to torch tensors for one mesh."""

    mass: torch.Tensor         # (N,)
    eigenvalues: torch.Tensor  # (k,)
    eigenvectors: torch.Tensor  # (N, k)

    @staticmethod
    def from_numpy(ops: SpectralOperators, dtype: torch.dtype) -> "TorchOperators":
        return TorchOperators(
            mass=torch.from_numpy(np.ascontiguousarray(ops.mass)).to(dtype),
            eigenvalues=torch.from_numpy(np.ascontiguousarray(ops.eigenvalues)).to(dtype),
            eigenvectors=torch.from_numpy(np.ascontiguousarray(ops.eigenvectors)).to(dtype),
        )

    @property
    def n_vertices(self) -> int:
        return self.mass.shape[0]


def spectral_diffuse(x: torch.Tensor, ops: TorchOperators, times: torch.Tensor) -> torch.Tensor:
    """Heat-diffuse each channel of x for its own time.

    x: (N, C); times: (C,) nonnegative. Projects onto the eigenbasis with
    mass-weighted inner products, attenuates coefficient i of channel c by
    exp(-lambda_i * t_c), and reconstructs.
    """
    coeff = ops.eigenvectors.T @ (ops.mass[:, None] * x)          # (k, C)
    decay = torch.exp(-ops.eigenvalues[:, None] * times[None, :])  # (k, C)
    return ops.eigenvectors @ (decay * coeff)


class DiffusionBlock(nn.Module):
    """Per-channel learned diffusion followed by residual pointwise mixing."""

    def __init__(self, width: int, dtype: torch.dtype, time_init: float = 1e-3):
        super().__init__()
        # diffusion times stay nonnegative through softplus; a small init
        # keeps high-frequency surface detail visible at the start
        self.raw_times = nn.Parameter(torch.full((width,), _inverse_softplus(time_init), dtype=dtype))
        self.mix1 = nn.Linear(width, width, dtype=dtype)
        self.mix2 = nn.Linear(width, width, dtype=dtype)

    def diffusion_times(self) -> torch.Tensor:
        return nn.functional.softplus(self.raw_times)

    def forward(self, x: torch.Tensor, ops: TorchOperators) -> torch.Tensor:
        diffused = spectral_diffuse(x, ops, self.diffusion_times())
        return x + self.mix2(torch.relu(self.mix1(diffused)))


class MeshBackbone(nn.Module):
    """Lift [vertex features | global feature] to width, then diffusion blocks."""

    def __init__(
        self,
        n_blocks: int = 4,
        width: int = CODE_DIM,
        in_features: int = 6,
        dtype: torch.dtype = torch.float64,
        time_init: float = 1e-3,
    ):
        super().__init__()
        self.width = width
        self.lift = nn.Linear(in_features + CODE_DIM, width, dtype=dtype)
        self.blocks = nn.ModuleList(
            [DiffusionBlock(width, dtype, time_init) for _ in range(n_blocks)]
        )

    def forward(self, features: torch.Tensor, c: torch.Tensor, ops: TorchOperators) -> torch.Tensor:
        """features: (N, 6); c: (128,) global feature; returns (N, width)."""
        if features.shape[0] != ops.n_vertices:
            raise ValueError(
                f"features for {features.shape[0]} vertices but operators for {ops.n_vertices}"
            )
        x = torch.cat([features, c.expand(features.shape[0], -1)], dim=1)
        x = self.lift(x)
        for block in self.blocks:
            x = block(x, ops)
        return x


class GlobalDescriptor(nn.Module):
    """Optional stand-in for an image feature: pooled shape statistics.

    mode "zero" emits a zero vector (no parameters used); mode
    "pooled-descriptor" maps 12 translation-invariant statistics
    (mass-weighted centroid relative to the bbox center, and the flattened
    mass-weighted covariance of centered positions) through a linear layer.
    """

    MODES = ("zero", "pooled-descriptor")

    def __init__(self, mode: str = "zero", dtype: torch.dtype = torch.float64):
        super().__init__()
        if mode not in self.MODES:
            raise ValueError(f"unknown global feature mode {mode!r}")
        self.mode = mode
        if mode == "pooled-descriptor":
            self.proj = nn.Linear(12, CODE_DIM, dtype=dtype)
        self._dtype = dtype

    def forward(self, vertices: torch.Tensor, mass: torch.Tensor) -> torch.Tensor:
        if self.mode == "zero":
            return torch.zeros(CODE_DIM, dtype=vertices.dtype, device=vertices.device)
        w = mass / mass.sum()
        mu = (w[:, None] * vertices).sum(dim=0)
        bbox_center = 0.5 * (vertices.amax(dim=0) + vertices.amin(dim=0))
        centered = vertices - mu
        cov = centered.T @ (w[:, None] * centered)
        stats = torch.cat([mu - bbox_center, cov.reshape(-1)])
        return self.proj(stats)


def _inverse_softplus(y: float) -> float:
    return float(np.log(np.expm1(y)))


def mass_weighted_mean(x: torch.Tensor, mass: torch.Tensor) -> torch.Tensor:
    """Pooling for global codes: sum(m_i * x_i) / sum(m_i)."""
    return (mass[:, None] * x).sum(dim=0) / mass.sum()
