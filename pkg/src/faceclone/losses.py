"""Training losses: decoder terms, code supervision, range regularization,
blendshape projection/reconstruction, and segmentation NLL.

Reduction convention (applies to every squared norm below): vertex- and
face-valued fields average the squared per-item norm over items; flat code
vectors average over entries. This keeps losses comparable across mesh and
batch sizes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .mesh import Mesh
from .geometry import triangle_frames
from .torchgeom import t_deformation_jacobians, t_vertex_normals

ICT_BRANCH = "ict"
NON_ICT_BRANCH = "non-ict"


@dataclass
class LossWeights:
    lambda_v: float = 10.0
    lambda_n: float = 1.0
    lambda_g: float = 1.0
    lambda_bp: float = 1.0
    lambda_br: float = 1.0
    lambda_nll: float = 1.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"{name} must be nonnegative, got {value}")

    def to_dict(self) -> dict:
        return dict(vars(self))

    @staticmethod
    def from_dict(d: dict) -> "LossWeights":
        return LossWeights(**d)


@dataclass
class LossReport:
    """Scalar values of every tracked term plus the branch taken.

    Untracked terms (wrong branch, or disabled by an ablation flag) are None
    and are omitted from the serialized form.
    """

    branch: str
    l_v: Optional[float] = None
    l_n: Optional[float] = None
    l_g: Optional[float] = None
    l_dec: Optional[float] = None
    l_id: Optional[float] = None
    l_exp: Optional[float] = None
    l_reg: Optional[float] = None
    l_bp: Optional[float] = None
    l_br: Optional[float] = None
    l_nll: Optional[float] = None
    l_total: float = 0.0

    def to_dict(self) -> dict:
        out = {"branch": self.branch}
        for key, value in vars(self).items():
            if key != "branch" and value is not None:
                out[key] = float(value)
        return out


def row_mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean over items of the squared norm of per-item differences."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    diff = (a - b).reshape(a.shape[0], -1)
    return (diff ** 2).sum(dim=1).mean()


@dataclass(frozen=True)
class RestGeometry:
    """Precomputed rest-mesh tensors reused across loss evaluations."""

    faces: torch.Tensor
    frames_inv: torch.Tensor  # (F, 3, 3)

    @staticmethod
    def from_mesh(mesh: Mesh, dtype: torch.dtype) -> "RestGeometry":
        frames = triangle_frames(mesh.vertices, mesh.faces)
        inv = np.linalg.inv(frames)
        return RestGeometry(
            faces=torch.from_numpy(mesh.faces.copy()),
            frames_inv=torch.from_numpy(inv).to(dtype),
        )


def loss_decoder(
    pred_vertices: torch.Tensor,
    gt_vertices: torch.Tensor,
    rest: Mesh | RestGeometry,
    weights: LossWeights,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """(L_v, L_n, L_g, L_dec): vertex, normal, and Jacobian terms.

    L_v compares positions, L_n area-weighted unit vertex normals, L_g the
    per-face deformation Jacobians taken from the shared rest mesh; L_dec is
    their weighted sum (10, 1, 1 by default).
    """
    if isinstance(rest, Mesh):
        rest = RestGeometry.from_mesh(rest, pred_vertices.dtype)
    l_v = row_mse(pred_vertices, gt_vertices)
    l_n = row_mse(
        t_vertex_normals(pred_vertices, rest.faces),
        t_vertex_normals(gt_vertices, rest.faces),
    )
    l_g = row_mse(
        t_deformation_jacobians(pred_vertices, rest.faces, rest.frames_inv),
        t_deformation_jacobians(gt_vertices, rest.faces, rest.frames_inv),
    )
    l_dec = weights.lambda_v * l_v + weights.lambda_n * l_n + weights.lambda_g * l_g
    return l_v, l_n, l_g, l_dec


def _code_values(z) -> torch.Tensor:
    if isinstance(z, torch.Tensor):
        return z
    return z.values  # IdentityCode / ExpressionCode wrappers


def _slice_loss(values: torch.Tensor, gt: torch.Tensor, semantic_dim: int) -> torch.Tensor:
    semantic = values[:semantic_dim]
    extra = values[semantic_dim:]
    loss = ((semantic - gt) ** 2).mean()
    if extra.numel():
        loss = loss + (extra ** 2).mean()
    return loss


def loss_identity(z_id, w_id_gt: torch.Tensor) -> torch.Tensor:
    """Squared error of the identity slice plus pull-to-zero on the extra dims."""
    values = _code_values(z_id)
    gt = torch.as_tensor(w_id_gt, dtype=values.dtype)
    semantic_dim = gt.shape[0]
    if semantic_dim > values.shape[0]:
        raise ValueError(f"ground truth length {semantic_dim} exceeds code length {values.shape[0]}")
    return _slice_loss(values, gt, semantic_dim)


def loss_expression(z_ge, w_exp_gt: torch.Tensor) -> torch.Tensor:
    """Same as loss_identity with the expression slice."""
    values = _code_values(z_ge)
    gt = torch.as_tensor(w_exp_gt, dtype=values.dtype)
    semantic_dim = gt.shape[0]
    if semantic_dim > values.shape[0]:
        raise ValueError(f"ground truth length {semantic_dim} exceeds code length {values.shape[0]}")
    return _slice_loss(values, gt, semantic_dim)


def loss_reg(z) -> torch.Tensor:
    """Distance outside [0, 1], elementwise, mean-reduced.

        -z      for z < 0
         0      for 0 <= z <= 1
         z - 1  for z > 1
    """
    values = _code_values(z)
    zero = torch.zeros_like(values)
    return torch.where(values < 0, -values, torch.where(values > 1, values - 1, zero)).mean()


def loss_bp(z_ge, w_exp_gt: torch.Tensor, basis: torch.Tensor) -> torch.Tensor:
    """Blendshape projection: both codes through the basis, offset-field MSE.

    basis is (K, 3N); the semantic slice of the prediction and the ground
    truth coefficients each produce an (N, 3) offset field.
    """
    values = _code_values(z_ge)
    gt = torch.as_tensor(w_exp_gt, dtype=values.dtype)
    k = basis.shape[0]
    if gt.shape[0] != k:
        raise ValueError(f"coefficients length {gt.shape[0]} != basis rows {k}")
    pred_field = (values[:k] @ basis).reshape(-1, 3)
    gt_field = (gt @ basis).reshape(-1, 3)
    return row_mse(pred_field, gt_field)


def loss_br(model, z_ge, field, features: torch.Tensor, c_tgt: torch.Tensor,
            z_id: torch.Tensor, basis: torch.Tensor) -> torch.Tensor:
    """Blendshape reconstruction with a stop-gradient on the expression code.

    The decoder reproduces the offset field generated by the (detached)
    semantic code through the basis. Gradients reach only the decoder, the
    skinning block, and the skinning encoder; the expression and identity
    encoders see a constant.
    """
    z_values = _code_values(z_ge).detach()
    k = basis.shape[0]
    target_field = (z_values[:k] @ basis).reshape(-1, 3)
    n = features.shape[0]
    if model.skinning_block is not None and field is not None:
        weights = model.skinning_block(field.probabilities)
        z_le = weights * z_values[None, :]
    else:
        z_le = z_values[None, :].expand(n, -1)
    pred = model.decode(features, c_tgt.detach(), z_id.detach(), z_le)
    return row_mse(target_field, pred)


def loss_nll(field, labels: torch.Tensor, categorical: bool = False) -> torch.Tensor:
    """Segmentation supervision for the skinning encoder.

    Default form: per-label Bernoulli log-likelihood with the one-hot
    expansion of the labels, summed over labels and averaged over vertices.
    ``categorical=True`` switches to softmax cross-entropy over the logits.
    """
    labels = torch.as_tensor(labels, dtype=torch.long)
    probs = field.probabilities
    n, l_count = probs.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {tuple(labels.shape)} != ({n},)")
    if labels.min() < 0 or labels.max() >= l_count:
        raise ValueError(f"label out of range [0, {l_count})")
    if categorical:
        return torch.nn.functional.cross_entropy(field.logits, labels)
    one_hot = torch.nn.functional.one_hot(labels, l_count).to(probs.dtype)
    per_entry = one_hot * torch.log(probs) + (1.0 - one_hot) * torch.log(1.0 - probs)
    return -per_entry.sum(dim=1).mean()


def loss_total(
    terms: dict[str, torch.Tensor],
    branch: str,
    weights: LossWeights,
) -> tuple[torch.Tensor, LossReport]:
    """Assemble the branch total and a per-term report.

    ict branch:     L_dec + (L_Exp + L_ID) + bp*L_BP + br*L_BR + nll*L_nll
    non-ict branch: L_dec + L_reg
    Terms absent from ``terms`` (ablations, unsupervised samples) are
    skipped and reported as untracked.
    """
    if branch not in (ICT_BRANCH, NON_ICT_BRANCH):
        raise ValueError(f"unknown branch {branch!r}")
    if "l_dec" not in terms:
        raise ValueError("l_dec is required in every branch")
    total = terms["l_dec"]
    if branch == ICT_BRANCH:
        for required in ("l_exp", "l_id"):
            if required not in terms:
                raise ValueError(f"ict branch requires {required} (blendshape ground truth missing?)")
        total = total + terms["l_exp"] + terms["l_id"]
        if "l_bp" in terms:
            total = total + weights.lambda_bp * terms["l_bp"]
        if "l_br" in terms:
            total = total + weights.lambda_br * terms["l_br"]
        if "l_nll" in terms:
            total = total + weights.lambda_nll * terms["l_nll"]
        forbidden = ("l_reg",)
    else:
        if "l_reg" not in terms:
            raise ValueError("non-ict branch requires l_reg")
        total = total + terms["l_reg"]
        forbidden = ("l_exp", "l_id", "l_bp", "l_br", "l_nll")
    for name in forbidden:
        if name in terms:
            raise ValueError(f"{name} does not belong to the {branch} branch")

    report = LossReport(branch=branch, l_total=float(total.detach()))
    for name, value in terms.items():
        setattr(report, name, float(value.detach()))
    return total, report
