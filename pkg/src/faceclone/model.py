"""Encoders, skinning localization, displacement decoder, and the two
inference paths (retarget from a source mesh / animate from a code).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from .backbone import CODE_DIM, GlobalDescriptor, MeshBackbone, TorchOperators, mass_weighted_mean
from .mesh import Mesh, normalize_mesh, vertex_features
from .spectral import OperatorCache, SpectralOperators, compute_spectral_operators

PROB_EPS = 1e-7  # skinning probabilities live in [PROB_EPS, 1 - PROB_EPS]


@dataclass
class ModelConfig:
    code_dim: int = CODE_DIM
    semantic_exp: int = 53
    semantic_id: int = 100
    n_labels: int = 20
    k_eig: int = 64
    backbone_blocks: int = 4
    backbone_width: int = CODE_DIM
    decoder_layers: int = 8
    decoder_width: int = 256
    groupnorm_groups: int = 8
    groupnorm_eps: float = 1e-5
    diffusion_time_init: float = 1e-3
    global_mode: str = "zero"
    uniform_pooling: bool = False
    use_skinning_encoder: bool = True
    dtype: str = "float64"

    def torch_dtype(self) -> torch.dtype:
        return {"float32": torch.float32, "float64": torch.float64}[self.dtype]

    def to_dict(self) -> dict:
        return dict(vars(self))

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d)


# --- thin typed wrappers around code tensors -------------------------------

@dataclass(frozen=True)
class IdentityCode:
    values: torch.Tensor  # (128,)
    semantic_dim: int = 100

    @property
    def semantic(self) -> torch.Tensor:
        return self.values[: self.semantic_dim]

    @property
    def extra(self) -> torch.Tensor:
        return self.values[self.semantic_dim:]


@dataclass(frozen=True)
class ExpressionCode:
    values: torch.Tensor  # (128,)
    semantic_dim: int = 53

    @property
    def semantic(self) -> torch.Tensor:
        return self.values[: self.semantic_dim]

    @property
    def extra(self) -> torch.Tensor:
        return self.values[self.semantic_dim:]


@dataclass(frozen=True)
class SkinningField:
    """Per-vertex skinning-encoder output: logits and clamped probabilities."""

    logits: torch.Tensor         # (N, L)
    probabilities: torch.Tensor  # (N, L) in [PROB_EPS, 1 - PROB_EPS]


@dataclass(frozen=True)
class SkinningWeights:
    values: torch.Tensor  # (N, 128) in (0, 1)


@dataclass(frozen=True)
class LocalizedExpressionCode:
    values: torch.Tensor  # (N, 128)


@dataclass(frozen=True)
class Displacement:
    values: torch.Tensor  # (N, 3)


class EncoderHead(nn.Module):
    """Backbone + pooling + linear head producing a global 128-code.

    The head starts at zero so codes ramp up from the origin, which the
    code-supervision and range losses treat as the neutral state.
    """

    def __init__(self, config: ModelConfig, dtype: torch.dtype):
        super().__init__()
        self.backbone = MeshBackbone(config.backbone_blocks, config.backbone_width,
                                     dtype=dtype, time_init=config.diffusion_time_init)
        self.head = nn.Linear(config.backbone_width, config.code_dim, dtype=dtype)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)
        self.uniform_pooling = config.uniform_pooling

    def forward(self, features: torch.Tensor, c: torch.Tensor, ops: TorchOperators) -> torch.Tensor:
        x = self.backbone(features, c, ops)
        pooled = x.mean(dim=0) if self.uniform_pooling else mass_weighted_mean(x, ops.mass)
        return self.head(pooled)


class SkinningEncoder(nn.Module):
    """Backbone + per-vertex linear head; no pooling."""

    def __init__(self, config: ModelConfig, dtype: torch.dtype):
        super().__init__()
        self.backbone = MeshBackbone(config.backbone_blocks, config.backbone_width,
                                     dtype=dtype, time_init=config.diffusion_time_init)
        self.head = nn.Linear(config.backbone_width, config.n_labels, dtype=dtype)

    def forward(self, features: torch.Tensor, c: torch.Tensor, ops: TorchOperators) -> SkinningField:
        logits = self.head(self.backbone(features, c, ops))
        probs = torch.sigmoid(logits).clamp(PROB_EPS, 1.0 - PROB_EPS)
        return SkinningField(logits=logits, probabilities=probs)


class SkinningBlock(nn.Module):
    """Pointwise MLP L -> 128 -> 128 -> 128 with a final sigmoid."""

    def __init__(self, n_labels: int, code_dim: int, dtype: torch.dtype):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(n_labels, code_dim, dtype=dtype),
            nn.ReLU(),
            nn.Linear(code_dim, code_dim, dtype=dtype),
            nn.ReLU(),
            nn.Linear(code_dim, code_dim, dtype=dtype),
        )

    def forward(self, field: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.net(field))


class DisplacementDecoder(nn.Module):
    """Eight pointwise linear layers; group norm + ReLU after layers 1..7.

    Group normalization uses per-vertex sample statistics, so vertices never
    couple: duplicating an input row duplicates its output row exactly.
    """

    def __init__(self, config: ModelConfig, dtype: torch.dtype):
        super().__init__()
        in_dim = 6 + 3 * config.code_dim
        width = config.decoder_width
        layers: list[nn.Module] = []
        for i in range(config.decoder_layers - 1):
            layers.append(nn.Linear(in_dim if i == 0 else width, width, dtype=dtype))
            layers.append(nn.GroupNorm(config.groupnorm_groups, width,
                                       eps=config.groupnorm_eps, dtype=dtype))
            layers.append(nn.ReLU())
        final = nn.Linear(width, 3, dtype=dtype)
        # zero displacement at initialization: training starts from the
        # undeformed target instead of a random warp
        nn.init.zeros_(final.weight)
        nn.init.zeros_(final.bias)
        layers.append(final)
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


def localize(weights: torch.Tensor, z_ge: torch.Tensor) -> torch.Tensor:
    """Hadamard localization: z_le[i] = weights[i] * z_ge (exact)."""
    if weights.ndim != 2 or z_ge.shape != (weights.shape[1],):
        raise ValueError(f"weights {tuple(weights.shape)} incompatible with code {tuple(z_ge.shape)}")
    return weights * z_ge[None, :]


def deform(target: Mesh, displacement: np.ndarray) -> Mesh:
    """Apply a per-vertex displacement to the target mesh (topology unchanged)."""
    displacement = np.asarray(displacement, dtype=np.float64)
    if displacement.shape != target.vertices.shape:
        raise ValueError(f"displacement shape {displacement.shape} != vertices {target.vertices.shape}")
    return target.with_vertices(target.vertices + displacement)


@dataclass
class TargetEncoding:
    """Everything the decoder needs about one target mesh (inference cache)."""

    mesh: Mesh                   # original coordinates
    normalized: Mesh
    scale: float
    features: torch.Tensor       # (N, 6), normalized coordinates
    c_tgt: torch.Tensor          # (128,)
    z_id: torch.Tensor           # (128,)
    weights: Optional[torch.Tensor]  # (N, 128) skinning weights, None without the encoder
    field: Optional[SkinningField]


class ExpressionCloner(nn.Module):
    """Full model: three encoders, skinning block, displacement decoder."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        dtype = config.torch_dtype()
        self.identity_encoder = EncoderHead(config, dtype)
        self.expression_encoder = EncoderHead(config, dtype)
        if config.use_skinning_encoder:
            self.skinning_encoder = SkinningEncoder(config, dtype)
            self.skinning_block = SkinningBlock(config.n_labels, config.code_dim, dtype)
        else:
            self.skinning_encoder = None
            self.skinning_block = None
        self.decoder = DisplacementDecoder(config, dtype)
        self.global_descriptor = GlobalDescriptor(config.global_mode, dtype)

    # --- encoder operations -------------------------------------------------

    def encode_identity(self, features: torch.Tensor, c: torch.Tensor, ops: TorchOperators) -> IdentityCode:
        return IdentityCode(self.identity_encoder(features, c, ops), self.config.semantic_id)

    def encode_expression(self, features: torch.Tensor, c: torch.Tensor, ops: TorchOperators) -> ExpressionCode:
        return ExpressionCode(self.expression_encoder(features, c, ops), self.config.semantic_exp)

    def encode_skinning(self, features: torch.Tensor, c: torch.Tensor, ops: TorchOperators) -> SkinningField:
        if self.skinning_encoder is None:
            raise RuntimeError("model was built without a skinning encoder")
        return self.skinning_encoder(features, c, ops)

    def skinning_weights(self, field: SkinningField) -> SkinningWeights:
        if self.skinning_block is None:
            raise RuntimeError("model was built without a skinning block")
        return SkinningWeights(self.skinning_block(field.probabilities))

    def localized_code(self, z_ge: torch.Tensor, weights: Optional[torch.Tensor], n_vertices: int) -> torch.Tensor:
        """omega * z_ge per vertex; broadcasts the global code when the
        skinning path is disabled (global-code baseline)."""
        if weights is None:
            return z_ge[None, :].expand(n_vertices, -1)
        return localize(weights, z_ge)

    def decode(self, features: torch.Tensor, c_tgt: torch.Tensor,
               z_id: torch.Tensor, z_le: torch.Tensor) -> torch.Tensor:
        n = features.shape[0]
        if z_le.shape != (n, self.config.code_dim):
            raise ValueError(f"z_le shape {tuple(z_le.shape)} != ({n}, {self.config.code_dim})")
        inputs = torch.cat([
            features,
            c_tgt[None, :].expand(n, -1),
            z_id[None, :].expand(n, -1),
            z_le,
        ], dim=1)
        return self.decoder(inputs)

    # --- mesh-level inference -------------------------------------------------

    def _dtype(self) -> torch.dtype:
        return self.config.torch_dtype()

    def mesh_inputs(self, mesh: Mesh, ops: SpectralOperators | TorchOperators) -> tuple[torch.Tensor, torch.Tensor, TorchOperators]:
        """(features, global feature, torch operators) for a normalized mesh."""
        dtype = self._dtype()
        t_ops = ops if isinstance(ops, TorchOperators) else TorchOperators.from_numpy(ops, dtype)
        feats = torch.from_numpy(vertex_features(mesh)).to(dtype)
        c = self.global_descriptor(feats[:, :3], t_ops.mass)
        return feats, c, t_ops

    def _operators(self, mesh: Mesh, cache: OperatorCache | None) -> SpectralOperators:
        k = min(self.config.k_eig, mesh.n_vertices - 1)
        return compute_spectral_operators(mesh, k, cache)

    @torch.no_grad()
    def encode_target(self, target: Mesh, cache: OperatorCache | None = None) -> TargetEncoding:
        """Precompute everything reusable about a target mesh."""
        normalized, frame = normalize_mesh(target)
        ops = self._operators(normalized, cache)
        feats, c_tgt, t_ops = self.mesh_inputs(normalized, ops)
        z_id = self.encode_identity(feats, c_tgt, t_ops).values
        if self.skinning_encoder is not None:
            fieldv = self.encode_skinning(feats, c_tgt, t_ops)
            weights = self.skinning_weights(fieldv).values
        else:
            fieldv = None
            weights = None
        return TargetEncoding(
            mesh=target,
            normalized=normalized,
            scale=frame.scale,
            features=feats,
            c_tgt=c_tgt,
            z_id=z_id,
            weights=weights,
            field=fieldv,
        )

    @torch.no_grad()
    def encode_source(self, source: Mesh, cache: OperatorCache | None = None) -> ExpressionCode:
        """Expression code of a source mesh (normalized internally)."""
        normalized, _ = normalize_mesh(source)
        ops = self._operators(normalized, cache)
        feats, c_src, t_ops = self.mesh_inputs(normalized, ops)
        return self.encode_expression(feats, c_src, t_ops)

    @torch.no_grad()
    def displace(self, encoding: TargetEncoding, z_ge: torch.Tensor) -> np.ndarray:
        """Displacement of the original-coordinate target for a 128-code."""
        z_le = self.localized_code(z_ge, encoding.weights, encoding.normalized.n_vertices)
        d = self.decode(encoding.features, encoding.c_tgt, encoding.z_id, z_le)
        return d.double().numpy() * encoding.scale

    def expand_code(self, code: np.ndarray | torch.Tensor) -> torch.Tensor:
        """Accept a 53-dim semantic code (zero-padded) or a full 128-code."""
        arr = np.asarray(code, dtype=np.float64).reshape(-1)
        if arr.shape[0] == self.config.semantic_exp:
            full = np.zeros(self.config.code_dim)
            full[: self.config.semantic_exp] = arr
        elif arr.shape[0] == self.config.code_dim:
            full = arr
        else:
            raise ValueError(
                f"code must have length {self.config.semantic_exp} or {self.config.code_dim}, got {arr.shape[0]}"
            )
        if not np.isfinite(full).all():
            raise ValueError("code contains non-finite values")
        return torch.from_numpy(full).to(self._dtype())

    def retarget(self, source: Mesh, target: Mesh, cache: OperatorCache | None = None) -> Mesh:
        """Clone the source expression onto the target neutral mesh."""
        code = self.encode_source(source, cache)
        encoding = self.encode_target(target, cache)
        return deform(target, self.displace(encoding, code.values))

    def animate(self, code: np.ndarray | torch.Tensor, target: Mesh,
                cache: OperatorCache | None = None) -> Mesh:
        """Deform the target directly from a user-provided expression code."""
        z_ge = self.expand_code(code)
        encoding = self.encode_target(target, cache)
        return deform(target, self.displace(encoding, z_ge))

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        groups: dict[str, list[nn.Parameter]] = {}
        for name, module in (
            ("identity_encoder", self.identity_encoder),
            ("expression_encoder", self.expression_encoder),
            ("skinning_encoder", self.skinning_encoder),
            ("skinning_block", self.skinning_block),
            ("decoder", self.decoder),
            ("global_descriptor", self.global_descriptor),
        ):
            groups[name] = [] if module is None else list(module.parameters())
        return groups


def build_model(config: ModelConfig, seed: int = 0) -> ExpressionCloner:
    """Construct a model with deterministic parameter initialization."""
    torch.manual_seed(seed)
    return ExpressionCloner(config)
