"""Optimization loop over mixed rig/scan batches, ablation switches,
deterministic seeding, checkpointing and resume.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .backbone import TorchOperators
from .checkpoint import load_checkpoint, restore_optimizer, save_checkpoint
from .data import CoefficientSample, RigDataset, SamplePair, materialize
from .losses import (
    ICT_BRANCH,
    NON_ICT_BRANCH,
    LossReport,
    LossWeights,
    RestGeometry,
    loss_bp,
    loss_br,
    loss_decoder,
    loss_expression,
    loss_identity,
    loss_nll,
    loss_reg,
    loss_total,
)
from .mesh import normalize_mesh, vertex_features
from .model import ModelConfig, build_model
from .spectral import OperatorCache, compute_spectral_operators


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    seed: int = 1
    steps: int = 2000
    batch_size: int = 2
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_schedule: str = "constant"  # "constant" | "cosine"
    final_lr_fraction: float = 0.05
    weights: LossWeights = field(default_factory=LossWeights)
    model: ModelConfig = field(default_factory=lambda: ModelConfig(dtype="float32"))
    use_bp: bool = True
    use_br: bool = True
    nll_fraction: float = 1.0
    scan_probability: float = 0.2  # chance that a batch slot draws a scan sample
    # probability of decoding a blendshape sample from its exact coefficient
    # code instead of the encoder output; trains the direct-drive input mode
    # (user-provided weights) on the same footing as the retarget path
    teacher_forcing: float = 0.5
    checkpoint_every: int = 500
    eval_every: int = 200
    val_sample_limit: int = 8
    early_stop_patience: Optional[int] = None
    torch_threads: Optional[int] = None
    out_dir: str = "runs/default"
    operator_cache_dir: Optional[str] = None

    def to_dict(self) -> dict:
        d = dict(vars(self))
        d["weights"] = self.weights.to_dict()
        d["model"] = self.model.to_dict()
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("weights"), dict):
            d["weights"] = LossWeights.from_dict(d["weights"])
        if isinstance(d.get("model"), dict):
            d["model"] = ModelConfig.from_dict(d["model"])
        return TrainConfig(**d)

    # fields with no effect on the optimization trajectory
    NON_SEMANTIC_FIELDS = ("out_dir", "operator_cache_dir", "torch_threads",
                           "checkpoint_every", "eval_every", "val_sample_limit")

    def digest(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in self.NON_SEMANTIC_FIELDS}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


@dataclass
class SampleTensors:
    """Cached per-sample tensors, all in the normalized target frame."""

    src_features: torch.Tensor
    src_c: torch.Tensor
    src_ops: TorchOperators
    tgt_features: torch.Tensor
    tgt_c: torch.Tensor
    tgt_ops: TorchOperators
    tgt_vertices: torch.Tensor
    tgt_scale: float
    rest: RestGeometry
    gt_vertices: torch.Tensor
    basis_scaled: Optional[torch.Tensor]  # (K, 3N) divided by the target scale
    labels: Optional[torch.Tensor]
    w_id: Optional[torch.Tensor]
    w_exp: Optional[torch.Tensor]
    has_blendshape_gt: bool
    sample_id: str


class TrainState:
    """Model, optimizer, RNG, dataset and the tensor caches for one run."""

    def __init__(self, config: TrainConfig, dataset: RigDataset):
        if config.torch_threads:
            torch.set_num_threads(config.torch_threads)
        if config.model.n_labels != dataset.segmentation.L:
            raise TrainingError(
                f"model expects {config.model.n_labels} segments, dataset has {dataset.segmentation.L}"
            )
        if config.model.semantic_exp != dataset.rig.K:
            raise TrainingError(
                f"model semantic_exp={config.model.semantic_exp} but rig has K={dataset.rig.K} expression bases"
            )
        if config.model.semantic_id != dataset.rig.J:
            raise TrainingError(
                f"model semantic_id={config.model.semantic_id} but rig has J={dataset.rig.J} identity bases"
            )
        self.config = config
        self.dataset = dataset
        self.model = build_model(config.model, seed=config.seed)
        self.model.train()
        self.optimizer = torch.optim.Adam(
            self.model.parameters(),
            lr=config.learning_rate,
            betas=(config.beta1, config.beta2),
            eps=config.adam_eps,
        )
        self.rng = np.random.default_rng(config.seed)
        self.step = 0
        self.op_cache = OperatorCache(config.operator_cache_dir, max_memory_items=16)
        self.dtype = config.model.torch_dtype()
        self._tensor_cache: dict[str, SampleTensors] = {}
        self._tensor_cache_cap = 1400
        self._basis = dataset.rig.expression_basis()
        self._train_ict = [s for s in dataset.samples_in("train") if s.has_blendshape_gt]
        self._train_scan = [s for s in dataset.samples_in("train") if not s.has_blendshape_gt]
        if not self._train_ict and not self._train_scan:
            raise TrainingError("training split is empty")
        self._nll_supervised = _supervised_subset(self._train_ict, config.nll_fraction)

    # --- tensor materialization ------------------------------------------------

    def sample_tensors(self, sample: CoefficientSample) -> SampleTensors:
        cached = self._tensor_cache.get(sample.sample_id)
        if cached is not None:
            return cached
        pair = materialize(self.dataset, sample)
        tensors = self._build_tensors(pair)
        if len(self._tensor_cache) >= self._tensor_cache_cap:
            self._tensor_cache.pop(next(iter(self._tensor_cache)))
        self._tensor_cache[sample.sample_id] = tensors
        return tensors

    def _mesh_tensors(self, mesh) -> tuple[torch.Tensor, torch.Tensor, TorchOperators]:
        k = min(self.config.model.k_eig, mesh.n_vertices - 1)
        ops = compute_spectral_operators(mesh, k, self.op_cache)
        t_ops = TorchOperators.from_numpy(ops, self.dtype)
        feats = torch.from_numpy(vertex_features(mesh)).to(self.dtype)
        with torch.no_grad():
            c = self.model.global_descriptor(feats[:, :3], t_ops.mass)
        return feats, c, t_ops

    def _build_tensors(self, pair: SamplePair) -> SampleTensors:
        src_norm, _ = normalize_mesh(pair.source)
        tgt_norm, tgt_frame = normalize_mesh(pair.target)
        src_features, src_c, src_ops = self._mesh_tensors(src_norm)
        tgt_features, tgt_c, tgt_ops = self._mesh_tensors(tgt_norm)
        gt_norm = tgt_frame.to_normalized(pair.gt_vertices)
        basis_scaled = None
        if pair.has_blendshape_gt:
            basis_scaled = torch.from_numpy(self._basis / tgt_frame.scale).to(self.dtype)
        return SampleTensors(
            src_features=src_features,
            src_c=src_c,
            src_ops=src_ops,
            tgt_features=tgt_features,
            tgt_c=tgt_c,
            tgt_ops=tgt_ops,
            tgt_vertices=torch.from_numpy(tgt_norm.vertices.copy()).to(self.dtype),
            tgt_scale=tgt_frame.scale,
            rest=RestGeometry.from_mesh(tgt_norm, self.dtype),
            gt_vertices=torch.from_numpy(gt_norm).to(self.dtype),
            basis_scaled=basis_scaled,
            labels=None if pair.labels is None else torch.from_numpy(np.array(pair.labels)),
            w_id=torch.from_numpy(pair.w_id.copy()).to(self.dtype),
            w_exp=torch.from_numpy(pair.w_exp.copy()).to(self.dtype),
            has_blendshape_gt=pair.has_blendshape_gt,
            sample_id=pair.sample_id,
        )

    # --- forward + loss ----------------------------------------------------------

    def forward_sample(self, tensors: SampleTensors, with_nll: bool,
                       force_exact_code: bool = False) -> tuple[torch.Tensor, LossReport]:
        model = self.model
        cfg = self.config
        z_ge = model.encode_expression(tensors.src_features, tensors.src_c, tensors.src_ops)
        z_id = model.encode_identity(tensors.tgt_features, tensors.tgt_c, tensors.tgt_ops)
        field_v = None
        weights_t = None
        if model.skinning_encoder is not None:
            field_v = model.encode_skinning(tensors.tgt_features, tensors.tgt_c, tensors.tgt_ops)
            weights_t = model.skinning_block(field_v.probabilities)
        n = tensors.tgt_features.shape[0]
        if force_exact_code and tensors.has_blendshape_gt:
            code = torch.zeros(cfg.model.code_dim, dtype=z_ge.values.dtype)
            code[: tensors.w_exp.shape[0]] = tensors.w_exp
        else:
            code = z_ge.values
        z_le = model.localized_code(code, weights_t, n)
        displacement = model.decode(tensors.tgt_features, tensors.tgt_c, z_id.values, z_le)
        pred_vertices = tensors.tgt_vertices + displacement

        l_v, l_n, l_g, l_dec = loss_decoder(pred_vertices, tensors.gt_vertices, tensors.rest, cfg.weights)
        terms: dict[str, torch.Tensor] = {"l_v": l_v, "l_n": l_n, "l_g": l_g, "l_dec": l_dec}
        if tensors.has_blendshape_gt:
            terms["l_exp"] = loss_expression(z_ge, tensors.w_exp)
            terms["l_id"] = loss_identity(z_id, tensors.w_id)
            if cfg.use_bp:
                terms["l_bp"] = loss_bp(z_ge, tensors.w_exp, tensors.basis_scaled)
            if cfg.use_br:
                terms["l_br"] = loss_br(
                    model, z_ge, field_v, tensors.tgt_features, tensors.tgt_c,
                    z_id.values, tensors.basis_scaled,
                )
            if with_nll and field_v is not None and tensors.labels is not None:
                terms["l_nll"] = loss_nll(field_v, tensors.labels)
            branch = ICT_BRANCH
        else:
            terms["l_reg"] = loss_reg(z_ge) + loss_reg(z_id)
            branch = NON_ICT_BRANCH
        return loss_total(terms, branch, cfg.weights)

    # --- batching ------------------------------------------------------------------

    def draw_batch(self) -> list[CoefficientSample]:
        batch = []
        for _ in range(self.config.batch_size):
            use_scan = (
                bool(self._train_scan)
                and (not self._train_ict or self.rng.random() < self.config.scan_probability)
            )
            pool = self._train_scan if use_scan else self._train_ict
            batch.append(pool[int(self.rng.integers(len(pool)))])
        return batch

    def rng_state(self) -> dict:
        return self.rng.bit_generator.state

    def set_rng_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state

    def learning_rate_at(self, step: int) -> float:
        """Deterministic schedule value (a pure function of the step index,
        so resumed runs reproduce the original trajectory)."""
        cfg = self.config
        if cfg.lr_schedule == "constant":
            return cfg.learning_rate
        if cfg.lr_schedule in ("cosine", "hold-cosine"):
            hold = 0.4 * cfg.steps if cfg.lr_schedule == "hold-cosine" else 0.0
            if step <= hold:
                return cfg.learning_rate
            final = cfg.final_lr_fraction * cfg.learning_rate
            progress = min((step - hold) / max(cfg.steps - hold, 1), 1.0)
            return final + 0.5 * (cfg.learning_rate - final) * (1.0 + np.cos(np.pi * progress))
        raise TrainingError(f"unknown lr_schedule {cfg.lr_schedule!r}")


def _supervised_subset(samples: list[CoefficientSample], fraction: float) -> set[str]:
    """Deterministic NLL-supervised subset: rank sample ids by hash, take the
    lowest ceil(fraction * n). fraction=1 supervises everything."""
    if fraction >= 1.0:
        return {s.sample_id for s in samples}
    if fraction <= 0.0:
        return set()
    ranked = sorted(samples, key=lambda s: hashlib.sha256(s.sample_id.encode()).hexdigest())
    count = int(round(fraction * len(samples)))
    return {s.sample_id for s in ranked[:count]}


def training_step(state: TrainState, batch: list[CoefficientSample]) -> LossReport:
    """One forward/backward/update over a batch; returns the mean report."""
    if not batch:
        raise TrainingError("batch must hold at least one sample")
    state.optimizer.zero_grad(set_to_none=True)
    reports: list[LossReport] = []
    total = None
    for sample in batch:
        tensors = state.sample_tensors(sample)
        with_nll = sample.sample_id in state._nll_supervised
        forced = (
            sample.has_blendshape_gt
            and state.config.teacher_forcing > 0
            and state.rng.random() < state.config.teacher_forcing
        )
        sample_total, report = state.forward_sample(tensors, with_nll, force_exact_code=forced)
        reports.append(report)
        total = sample_total if total is None else total + sample_total
    total = total / len(batch)
    if not torch.isfinite(total):
        dump = json.dumps([r.to_dict() for r in reports], indent=2)
        raise TrainingError(f"non-finite loss at step {state.step}; per-sample terms:\n{dump}")
    total.backward()
    lr = state.learning_rate_at(state.step)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.optimizer.step()
    state.step += 1
    return _mean_report(reports, float(total.detach()))


def _mean_report(reports: list[LossReport], total: float) -> LossReport:
    branches = {r.branch for r in reports}
    merged = LossReport(branch=branches.pop() if len(branches) == 1 else "mixed")
    merged.l_total = total
    for term in ("l_v", "l_n", "l_g", "l_dec", "l_id", "l_exp", "l_reg", "l_bp", "l_br", "l_nll"):
        values = [getattr(r, term) for r in reports if getattr(r, term) is not None]
        if values:
            setattr(merged, term, float(np.mean(values)))
    return merged


def validation_mse(state: TrainState, split: str = "val", limit: Optional[int] = None) -> float:
    """Mean self-reconstruction vertex MSE over a split (no alignment)."""
    samples = state.dataset.samples_in(split)
    if limit:
        samples = samples[:limit]
    if not samples:
        return float("nan")
    errors = []
    state.model.eval()
    with torch.no_grad():
        for sample in samples:
            tensors = state.sample_tensors(sample)
            z_ge = state.model.encode_expression(tensors.src_features, tensors.src_c, tensors.src_ops)
            z_id = state.model.encode_identity(tensors.tgt_features, tensors.tgt_c, tensors.tgt_ops)
            weights_t = None
            if state.model.skinning_encoder is not None:
                field_v = state.model.encode_skinning(tensors.tgt_features, tensors.tgt_c, tensors.tgt_ops)
                weights_t = state.model.skinning_block(field_v.probabilities)
            z_le = state.model.localized_code(z_ge.values, weights_t, tensors.tgt_features.shape[0])
            d = state.model.decode(tensors.tgt_features, tensors.tgt_c, z_id.values, z_le)
            pred = tensors.tgt_vertices + d
            err = ((pred - tensors.gt_vertices) ** 2).sum(dim=1).mean()
            errors.append(float(err) * tensors.tgt_scale ** 2)  # back to input units
    state.model.train()
    return float(np.mean(errors))


@dataclass
class TrainResult:
    checkpoint_path: Path
    log_path: Path
    final_digest: str
    steps: int


def train(
    config: TrainConfig,
    dataset: RigDataset,
    resume_from: str | Path | None = None,
) -> TrainResult:
    """Run the optimization loop; writes checkpoints and an ndjson log."""
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.ndjson"

    state = TrainState(config, dataset)
    log_mode = "w"
    if resume_from is not None:
        model, manifest = load_checkpoint(resume_from)
        if manifest["config_digest"] != config.digest():
            raise TrainingError(
                "checkpoint was trained with a different config "
                f"({manifest['config_digest'][:12]} != {config.digest()[:12]})"
            )
        state.model.load_state_dict(model.state_dict())
        state.model.train()
        restore_optimizer(state.model, state.optimizer, manifest["arrays"])
        state.step = manifest["step"]
        if manifest.get("rng_state"):
            state.set_rng_state(json.loads(manifest["rng_state"]))
        log_mode = "a"

    start = time.time()
    best_val = float("inf")
    stale_evals = 0
    with open(log_path, log_mode, encoding="utf-8") as log:
        while state.step < config.steps:
            report = training_step(state, state.draw_batch())
            row = {"step": state.step, "elapsed_s": round(time.time() - start, 3)}
            row.update(report.to_dict())
            if config.eval_every and state.step % config.eval_every == 0:
                val = validation_mse(state, "val", config.val_sample_limit)
                row["val_mse"] = val
                if config.early_stop_patience is not None and np.isfinite(val):
                    if val < best_val - 1e-12:
                        best_val = val
                        stale_evals = 0
                    else:
                        stale_evals += 1
                        if stale_evals >= config.early_stop_patience:
                            log.write(json.dumps(row, sort_keys=True) + "\n")
                            break
            log.write(json.dumps(row, sort_keys=True) + "\n")
            if config.checkpoint_every and state.step % config.checkpoint_every == 0:
                _write_checkpoint(state, out_dir / f"step_{state.step:06d}.npz")
    final_path = out_dir / "final.npz"
    digest = _write_checkpoint(state, final_path)
    return TrainResult(checkpoint_path=final_path, log_path=log_path, final_digest=digest, steps=state.step)


def _write_checkpoint(state: TrainState, path: Path) -> str:
    return save_checkpoint(
        path,
        state.model,
        optimizer=state.optimizer,
        step=state.step,
        config_digest=state.config.digest(),
        rng_state=json.dumps(state.rng_state()),
        metadata={
            "train_config": state.config.to_dict(),
            "expression_names": list(state.dataset.rig.expression_names),
            "segment_names": list(state.dataset.segmentation.segment_names),
            "rig_digest": state.dataset.rig.digest(),
        },
    )


ABLATION_VARIANTS = ("full", "no-skinning", "no-bp", "no-br")


def ablation_config(config: TrainConfig, variant: str) -> TrainConfig:
    """Derive one ablation variant; seed and budget stay identical."""
    if variant == "full":
        return replace(config, out_dir=str(Path(config.out_dir) / "full"))
    if variant == "no-skinning":
        model = replace(config.model, use_skinning_encoder=False)
        return replace(config, model=model, out_dir=str(Path(config.out_dir) / "no-skinning"))
    if variant == "no-bp":
        return replace(config, use_bp=False, out_dir=str(Path(config.out_dir) / "no-bp"))
    if variant == "no-br":
        return replace(config, use_br=False, out_dir=str(Path(config.out_dir) / "no-br"))
    raise ValueError(f"unknown ablation variant {variant!r}")


def ablation_suite(config: TrainConfig, dataset: RigDataset) -> dict[str, TrainResult]:
    """Train the four ablation variants under identical seed and budget."""
    return {v: train(ablation_config(config, v), dataset) for v in ABLATION_VARIANTS}
