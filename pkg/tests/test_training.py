import json

import numpy as np
import pytest
import torch

from faceclone.checkpoint import load_checkpoint
from faceclone.model import ModelConfig
from faceclone.training import (
    ABLATION_VARIANTS,
    TrainConfig,
    TrainState,
    TrainingError,
    ablation_config,
    train,
    training_step,
    _supervised_subset,
)


def tiny_config(tmp_path=None, **overrides):
    model = ModelConfig(
        semantic_exp=6,
        semantic_id=8,
        n_labels=5,
        k_eig=12,
        backbone_blocks=1,
        dtype="float64",
    )
    defaults = dict(
        seed=9,
        steps=3,
        batch_size=2,
        learning_rate=1e-3,
        model=model,
        checkpoint_every=0,
        eval_every=0,
        out_dir=str(tmp_path / "run") if tmp_path else "run",
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


def param_snapshot(model):
    return {n: p.detach().clone() for n, p in model.named_parameters()}


class TestTrainingStep:
    def test_zero_lr_keeps_parameters(self, tiny_dataset, tmp_path):
        config = tiny_config(tmp_path, learning_rate=0.0)
        state = TrainState(config, tiny_dataset)
        before = param_snapshot(state.model)
        report = training_step(state, state.draw_batch())
        assert np.isfinite(report.l_total)
        for name, param in state.model.named_parameters():
            assert (param == before[name]).all(), name

    def test_update_changes_parameters(self, tiny_dataset, tmp_path):
        config = tiny_config(tmp_path)
        state = TrainState(config, tiny_dataset)
        before = param_snapshot(state.model)
        training_step(state, state.draw_batch())
        changed = sum(
            0 if (p == before[n]).all() else 1 for n, p in state.model.named_parameters()
        )
        assert changed > 0

    def test_empty_batch_rejected(self, tiny_dataset, tmp_path):
        state = TrainState(tiny_config(tmp_path), tiny_dataset)
        with pytest.raises(TrainingError):
            training_step(state, [])

    def test_non_finite_loss_aborts_with_report(self, tiny_dataset, tmp_path):
        state = TrainState(tiny_config(tmp_path), tiny_dataset)
        with torch.no_grad():
            state.model.decoder.net[0].weight.fill_(float("nan"))
        with pytest.raises(TrainingError, match="non-finite"):
            training_step(state, state.draw_batch())

    def test_branch_routing(self, tiny_dataset, tmp_path):
        state = TrainState(tiny_config(tmp_path), tiny_dataset)
        ict = next(s for s in tiny_dataset.samples_in("train") if s.has_blendshape_gt)
        scan = next(s for s in tiny_dataset.samples_in("train") if not s.has_blendshape_gt)
        _, ict_report = state.forward_sample(state.sample_tensors(ict), with_nll=True)
        assert ict_report.branch == "ict"
        assert ict_report.l_exp is not None and ict_report.l_id is not None
        assert ict_report.l_reg is None
        _, scan_report = state.forward_sample(state.sample_tensors(scan), with_nll=True)
        assert scan_report.branch == "non-ict"
        assert scan_report.l_reg is not None
        assert scan_report.l_exp is None and scan_report.l_bp is None and scan_report.l_nll is None

    def test_no_gradient_leak_from_br(self, tiny_dataset, tmp_path):
        # with the reconstruction term as the only backpropagated loss, the
        # expression encoder must receive exactly zero gradient
        state = TrainState(tiny_config(tmp_path), tiny_dataset)
        sample = next(s for s in tiny_dataset.samples_in("train") if s.has_blendshape_gt)
        tensors = state.sample_tensors(sample)
        model = state.model
        # move off the zero-initialized point: with all-zero codes and a
        # zero final decoder layer every BR gradient vanishes identically
        torch.manual_seed(0)
        with torch.no_grad():
            for head in (model.expression_encoder.head, model.identity_encoder.head):
                head.weight.normal_(0, 0.05)
                head.bias.normal_(0, 0.05)
            final = model.decoder.net[-1]
            final.weight.normal_(0, 0.05)
            final.bias.normal_(0, 0.05)
        z_ge = model.encode_expression(tensors.src_features, tensors.src_c, tensors.src_ops)
        z_id = model.encode_identity(tensors.tgt_features, tensors.tgt_c, tensors.tgt_ops)
        field = model.encode_skinning(tensors.tgt_features, tensors.tgt_c, tensors.tgt_ops)
        from faceclone.losses import loss_br

        value = loss_br(model, z_ge, field, tensors.tgt_features, tensors.tgt_c,
                        z_id.values, tensors.basis_scaled)
        value.backward()
        exp_grads = [p.grad for p in model.expression_encoder.parameters()]
        assert all(g is None or g.abs().max() == 0 for g in exp_grads)
        id_grads = [p.grad for p in model.identity_encoder.parameters()]
        assert all(g is None or g.abs().max() == 0 for g in id_grads)
        dec_grad = model.decoder.net[0].weight.grad
        assert dec_grad is not None and dec_grad.abs().max() > 0
        skin_grad = next(model.skinning_encoder.parameters()).grad
        assert skin_grad is not None and skin_grad.abs().max() > 0


class TestDeterminism:
    def test_bitwise_identical_runs(self, tiny_dataset, tmp_path):
        torch.set_num_threads(1)
        losses = []
        for run in range(2):
            config = tiny_config(tmp_path, steps=4, out_dir=str(tmp_path / f"run{run}"))
            result = train(config, tiny_dataset)
            rows = [json.loads(l) for l in open(result.log_path)]
            losses.append([r["l_total"] for r in rows])
        assert losses[0] == losses[1]

    def test_checkpoint_digest_stable(self, tiny_dataset, tmp_path):
        a = train(tiny_config(tmp_path, steps=2, out_dir=str(tmp_path / "a")), tiny_dataset)
        b = train(tiny_config(tmp_path, steps=2, out_dir=str(tmp_path / "b")), tiny_dataset)
        assert a.final_digest == b.final_digest


class TestResume:
    def test_resume_matches_uninterrupted(self, tiny_dataset, tmp_path):
        full_cfg = tiny_config(tmp_path, steps=6, checkpoint_every=3,
                               out_dir=str(tmp_path / "full"))
        full = train(full_cfg, tiny_dataset)
        full_rows = [json.loads(l) for l in open(full.log_path)]

        resumed_cfg = tiny_config(tmp_path, steps=6, checkpoint_every=3,
                                  out_dir=str(tmp_path / "resumed"))
        resumed = train(resumed_cfg, tiny_dataset,
                        resume_from=tmp_path / "full" / "step_000003.npz")
        resumed_rows = [json.loads(l) for l in open(resumed.log_path)]
        full_tail = {r["step"]: r["l_total"] for r in full_rows if r["step"] > 3}
        resumed_tail = {r["step"]: r["l_total"] for r in resumed_rows if r["step"] > 3}
        assert full_tail == resumed_tail
        assert resumed.final_digest == full.final_digest

    def test_config_digest_mismatch_rejected(self, tiny_dataset, tmp_path):
        cfg = tiny_config(tmp_path, steps=2, checkpoint_every=2, out_dir=str(tmp_path / "x"))
        train(cfg, tiny_dataset)
        other = tiny_config(tmp_path, steps=2, learning_rate=5e-4, out_dir=str(tmp_path / "y"))
        with pytest.raises(TrainingError, match="different config"):
            train(other, tiny_dataset, resume_from=tmp_path / "x" / "step_000002.npz")


class TestAblationFlags:
    def test_no_bp_drops_column(self, tiny_dataset, tmp_path):
        config = tiny_config(tmp_path, steps=2, use_bp=False, scan_probability=0.0,
                             out_dir=str(tmp_path / "nobp"))
        result = train(config, tiny_dataset)
        rows = [json.loads(l) for l in open(result.log_path)]
        assert all("l_bp" not in r for r in rows)
        assert all("l_br" in r for r in rows)

    def test_no_skinning_checkpoint_has_no_skinning_params(self, tiny_dataset, tmp_path):
        config = tiny_config(tmp_path, steps=1, out_dir=str(tmp_path / "noskin"))
        config = ablation_config(config, "no-skinning")
        result = train(config, tiny_dataset)
        with np.load(result.checkpoint_path) as z:
            skinning_keys = [k for k in z.files if "skinning" in k]
        assert skinning_keys == []
        model, _ = load_checkpoint(result.checkpoint_path)
        assert model.skinning_encoder is None

    def test_ablation_variants_distinct(self, tiny_dataset, tmp_path):
        digests = set()
        for variant in ABLATION_VARIANTS:
            config = ablation_config(
                tiny_config(tmp_path, steps=2, out_dir=str(tmp_path / "suite")), variant
            )
            result = train(config, tiny_dataset)
            digests.add(result.final_digest)
        assert len(digests) == len(ABLATION_VARIANTS)


class TestNllSubset:
    def test_exact_half(self):
        from faceclone.data import CoefficientSample
        samples = [
            CoefficientSample(sample_id=f"s{i}", identity_index=0, w_exp=np.zeros(2),
                              kind="uniform", has_blendshape_gt=True)
            for i in range(10)
        ]
        chosen = _supervised_subset(samples, 0.5)
        assert len(chosen) == 5
        assert chosen == _supervised_subset(samples, 0.5)  # deterministic

    def test_extremes(self):
        from faceclone.data import CoefficientSample
        samples = [
            CoefficientSample(sample_id=f"s{i}", identity_index=0, w_exp=np.zeros(2),
                              kind="uniform", has_blendshape_gt=True)
            for i in range(4)
        ]
        assert len(_supervised_subset(samples, 1.0)) == 4
        assert len(_supervised_subset(samples, 0.0)) == 0


class TestValidationHooks:
    def test_val_mse_logged(self, tiny_dataset, tmp_path):
        config = tiny_config(tmp_path, steps=4, eval_every=2, out_dir=str(tmp_path / "val"))
        result = train(config, tiny_dataset)
        rows = [json.loads(l) for l in open(result.log_path)]
        val_rows = [r for r in rows if "val_mse" in r]
        assert {r["step"] for r in val_rows} == {2, 4}
        assert all(np.isfinite(r["val_mse"]) for r in val_rows)

    def test_segment_count_mismatch(self, tiny_dataset, tmp_path):
        config = tiny_config(tmp_path)
        config.model.n_labels = 7
        with pytest.raises(TrainingError, match="segments"):
            TrainState(config, tiny_dataset)

    def test_semantic_dim_mismatch(self, tiny_dataset, tmp_path):
        config = tiny_config(tmp_path)
        config.model.semantic_exp = 53
        with pytest.raises(TrainingError, match="semantic_exp"):
            TrainState(config, tiny_dataset)


class TestAblationSuite:
    def test_suite_trains_all_variants(self, tiny_dataset, tmp_path):
        from faceclone.training import ablation_suite

        config = tiny_config(tmp_path, steps=1, out_dir=str(tmp_path / "suite4"))
        results = ablation_suite(config, tiny_dataset)
        assert set(results) == set(ABLATION_VARIANTS)
        digests = {r.final_digest for r in results.values()}
        assert len(digests) == 4
