"""Evaluation protocols: aligned self-retargeting MSE, per-segment MSE,
inverse rigging with a closed-form least-squares oracle, ablation tables.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checkpoint import load_checkpoint
from .data import CoefficientSample, RigDataset, materialize, sample_expression_uniform
from .geometry import mse, procrustes_align
from .model import ExpressionCloner
from .rig import BlendshapeRig, SegmentationMap, evaluate_rig
from .spectral import OperatorCache

# MSE floor used when forming encoder/oracle ratios: rig-generated targets
# lie exactly in the basis span, so the oracle residual is zero to machine
# precision and the raw quotient is unbounded.
RATIO_FLOOR = 1e-8


@dataclass
class SegmentReport:
    per_segment: np.ndarray  # (L,)
    segment_mean: float
    whole_mesh: float
    alignment_used: bool

    def to_dict(self) -> dict:
        return {
            "per_segment": [float(v) for v in self.per_segment],
            "segment_mean": self.segment_mean,
            "whole_mesh": self.whole_mesh,
            "alignment_used": self.alignment_used,
        }


def eval_segment_mse(
    pred: np.ndarray,
    gt: np.ndarray,
    seg: SegmentationMap,
    align: bool = True,
) -> SegmentReport:
    """Per-segment MSE with the segment-mean aggregate.

    Static regions dominate a whole-mesh average, so each predefined segment
    is scored separately and the per-segment values are averaged. When
    ``align`` is set, one similarity transform is fitted on all vertices and
    applied before any per-segment computation.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.shape[0] != seg.labels.shape[0]:
        raise ValueError(f"shapes {pred.shape} / {gt.shape} do not match segmentation N={seg.labels.shape[0]}")
    if align:
        _, pred = procrustes_align(pred, gt)
    sq = ((pred - gt) ** 2).sum(axis=1)
    per_segment = np.array([sq[seg.labels == l].mean() for l in range(seg.L)])
    return SegmentReport(
        per_segment=per_segment,
        segment_mean=float(per_segment.mean()),
        whole_mesh=float(sq.mean()),
        alignment_used=align,
    )


def fresh_expression_samples(
    dataset: RigDataset,
    split: str,
    per_identity: int,
    seed: int,
) -> list[CoefficientSample]:
    """Uniform expression draws (disjoint from the build-time samples) on the
    identities of a split; used as held-out test expressions."""
    rng = np.random.default_rng(seed)
    out = []
    for identity in dataset.identities_in(split):
        for u in range(per_identity):
            out.append(CoefficientSample(
                sample_id=f"id{identity:03d}/fresh{u:04d}",
                identity_index=identity,
                w_exp=sample_expression_uniform(dataset.rig.K, rng),
                kind="uniform",
                has_blendshape_gt=True,
            ))
    return out


def _resolve_samples(dataset: RigDataset, samples: str | Sequence[CoefficientSample],
                     limit: Optional[int]) -> list[CoefficientSample]:
    chosen = dataset.samples_in(samples) if isinstance(samples, str) else list(samples)
    return chosen[:limit] if limit else chosen


def eval_self_retarget(
    model: ExpressionCloner,
    dataset: RigDataset,
    samples: str | Sequence[CoefficientSample] = "test",
    align: bool = True,
    limit: Optional[int] = None,
    cache: Optional[OperatorCache] = None,
    segmentation: bool = True,
) -> dict:
    """Retarget each expression mesh onto its own identity's neutral mesh and
    score against the ground-truth deformation (Procrustes-aligned by default).

    Returns {"rows": [...], "mean_mse": float, "mean_segment_mse": float}.
    """
    rows = []
    for sample in _resolve_samples(dataset, samples, limit):
        pair = materialize(dataset, sample)
        pred = model.retarget(pair.source, pair.target, cache)
        pred_v = pred.vertices
        gt_v = pair.gt_vertices
        aligned_v = procrustes_align(pred_v, gt_v)[1] if align else pred_v
        row = {
            "sample_id": sample.sample_id,
            "mse": mse(aligned_v, gt_v),
            "mse_unaligned": mse(pred_v, gt_v),
        }
        if segmentation:
            seg_report = eval_segment_mse(pred_v, gt_v, dataset.segmentation, align=align)
            row["segment_mean_mse"] = seg_report.segment_mean
        rows.append(row)
    out = {
        "rows": rows,
        "mean_mse": float(np.mean([r["mse"] for r in rows])) if rows else float("nan"),
    }
    if segmentation and rows:
        out["mean_segment_mse"] = float(np.mean([r["segment_mean_mse"] for r in rows]))
    return out


# ---------------------------------------------------------------------------
# inverse rigging
# ---------------------------------------------------------------------------

@dataclass
class InvRigSolution:
    coefficients: np.ndarray
    residual_mse: float
    rank_deficient: bool
    box_constrained: bool


def least_squares_invrig(
    rig: BlendshapeRig,
    target_vertices: np.ndarray,
    w_id: np.ndarray,
    box: Optional[tuple[float, float]] = None,
) -> InvRigSolution:
    """Optimal expression coefficients for a target mesh in the least-squares
    sense, with the identity offset folded into the neutral.

    Unconstrained: direct linear least squares (minimum-norm on rank
    deficiency, flagged). With ``box``: projected gradient from the
    unconstrained solution, stopping when the objective improves by less
    than 1e-12 per step.
    """
    target = np.asarray(target_vertices, dtype=np.float64)
    if target.shape != (rig.n_vertices, 3):
        raise ValueError(f"target shape {target.shape} != ({rig.n_vertices}, 3)")
    neutral_id = evaluate_rig(rig, np.asarray(w_id, dtype=np.float64), np.zeros(rig.K))
    a_mat = rig.expression_basis().T          # (3N, K)
    b_vec = (target - neutral_id).reshape(-1)  # (3N,)

    solution, _, rank, _ = np.linalg.lstsq(a_mat, b_vec, rcond=None)
    rank_deficient = rank < rig.K

    if box is not None:
        lo, hi = box
        w = np.clip(solution, lo, hi)
        # Lipschitz step: 1 / ||A||_2^2 guarantees monotone descent
        sigma_max = np.linalg.svd(a_mat, compute_uv=False)[0]
        step = 1.0 / max(sigma_max ** 2, 1e-300)
        prev_obj = float(((a_mat @ w - b_vec) ** 2).sum())
        for _ in range(10000):
            grad = 2.0 * (a_mat.T @ (a_mat @ w - b_vec))
            w = np.clip(w - step * grad, lo, hi)
            obj = float(((a_mat @ w - b_vec) ** 2).sum())
            if prev_obj - obj < 1e-12:
                break
            prev_obj = obj
        solution = w

    recon = neutral_id + (solution @ rig.expression_basis()).reshape(-1, 3)
    return InvRigSolution(
        coefficients=solution,
        residual_mse=mse(recon, target),
        rank_deficient=rank_deficient,
        box_constrained=box is not None,
    )


@dataclass
class InvRigReport:
    encoder_mse: float
    oracle_mse: float
    ratio: float
    ratio_floor: float
    rows: list[dict]

    def to_dict(self) -> dict:
        return {
            "encoder_mse": self.encoder_mse,
            "oracle_mse": self.oracle_mse,
            "ratio": self.ratio,
            "ratio_floor": self.ratio_floor,
            "rows": self.rows,
        }


def eval_inverse_rig(
    model: ExpressionCloner,
    dataset: RigDataset,
    samples: str | Sequence[CoefficientSample] = "test",
    limit: Optional[int] = None,
    cache: Optional[OperatorCache] = None,
    ratio_floor: float = RATIO_FLOOR,
) -> InvRigReport:
    """Reconstruct each source through the blendshape basis from (a) the
    encoder's semantic code and (b) the least-squares oracle, and compare
    MSEs against the source mesh. Requires blendshape-style samples.
    """
    chosen = _resolve_samples(dataset, samples, limit)
    rig = dataset.rig
    basis = rig.expression_basis()
    rows = []
    for sample in chosen:
        if not sample.has_blendshape_gt:
            raise ValueError(f"inverse rigging requires blendshape samples; {sample.sample_id} is scan-style")
        pair = materialize(dataset, sample)
        neutral_id = evaluate_rig(rig, pair.w_id, np.zeros(rig.K))
        code = model.encode_source(pair.source, cache)
        coeffs = code.semantic.double().numpy()
        encoder_recon = neutral_id + (coeffs @ basis).reshape(-1, 3)
        encoder_mse = mse(encoder_recon, pair.source.vertices)
        oracle = least_squares_invrig(rig, pair.source.vertices, pair.w_id)
        rows.append({
            "sample_id": sample.sample_id,
            "encoder_mse": encoder_mse,
            "oracle_mse": oracle.residual_mse,
            "coeff_error": float(np.abs(coeffs - pair.w_exp).max()),
        })
    encoder_mean = float(np.mean([r["encoder_mse"] for r in rows]))
    oracle_mean = float(np.mean([r["oracle_mse"] for r in rows]))
    return InvRigReport(
        encoder_mse=encoder_mean,
        oracle_mse=oracle_mean,
        ratio=encoder_mean / max(oracle_mean, ratio_floor),
        ratio_floor=ratio_floor,
        rows=rows,
    )


# ---------------------------------------------------------------------------
# ablation comparison
# ---------------------------------------------------------------------------

def compare_ablations(
    checkpoints: dict[str, str | Path],
    dataset: RigDataset,
    retarget_samples: Sequence[CoefficientSample],
    invrig_samples: Sequence[CoefficientSample],
    cache: Optional[OperatorCache] = None,
) -> dict:
    """Score every ablation checkpoint with the same protocols.

    Rows are variants; columns are self-retargeting MSE, segment-mean MSE,
    and inverse-rigging MSE. Checkpoints must come from one suite: identical
    seed, budget and rig, differing only in ablation flags.
    """
    reference: dict | None = None
    table = {}
    for name, path in checkpoints.items():
        model, manifest = load_checkpoint(path)
        meta = manifest["metadata"]["train_config"]
        key = {
            "seed": meta["seed"], "steps": meta["steps"],
            "rig_digest": manifest["metadata"]["rig_digest"],
        }
        if reference is None:
            reference = key
        elif key != reference:
            raise ValueError(f"checkpoint {name} was trained under a different seed/budget/rig: {key} != {reference}")
        retarget = eval_self_retarget(model, dataset, retarget_samples, cache=cache)
        invrig = eval_inverse_rig(model, dataset, invrig_samples, cache=cache)
        table[name] = {
            "self_retarget_mse": retarget["mean_mse"],
            "segment_mean_mse": retarget["mean_segment_mse"],
            "invrig_mse": invrig.encoder_mse,
            "checkpoint_digest": manifest["digest"],
        }
    return table


def format_table(table: dict[str, dict], columns: Sequence[str]) -> str:
    """Fixed-width text table: rows = variants, columns = metric names."""
    name_width = max(len(n) for n in table) + 2
    header = "variant".ljust(name_width) + "".join(c.rjust(20) for c in columns)
    lines = [header, "-" * len(header)]
    for name, row in table.items():
        cells = "".join(f"{row[c]:20.3e}" for c in columns)
        lines.append(name.ljust(name_width) + cells)
    return "\n".join(lines)


def write_report(path: str | Path, protocol: str, checkpoint_digest: str,
                 split: str, rows: list[dict], summary: dict | None = None) -> None:
    """eval-report.json: {protocol, checkpoint_digest, split, rows, summary}."""
    payload = {
        "protocol": protocol,
        "checkpoint_digest": checkpoint_digest,
        "split": split,
        "rows": rows,
    }
    if summary:
        payload["summary"] = summary
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
