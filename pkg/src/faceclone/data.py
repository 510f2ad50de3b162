"""Coefficient samplers, synthetic dataset construction, identity splits."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import Mesh
from .rig import BlendshapeRig, RigError, SegmentationMap, evaluate_rig, load_external_rig, save_rig
from .spectral import compute_spectral_operators

# Identity counts of the reference configuration; other totals must be
# explicitly allowed so a typo cannot silently shrink the corpus.
DEFAULT_SPLIT = (100, 1, 10)


def sample_expression_uniform(K: int, rng: np.random.Generator) -> np.ndarray:
    """Expression coefficients i.i.d. Uniform[0, 1]."""
    return rng.uniform(0.0, 1.0, size=K)


def sample_expression_onehot(K: int, k: int) -> np.ndarray:
    """Unit coefficient vector e_k (extreme single-basis expression)."""
    if not 0 <= k < K:
        raise ValueError(f"one-hot index {k} out of range [0, {K})")
    out = np.zeros(K)
    out[k] = 1.0
    return out


def sample_identity_normal(J: int, rng: np.random.Generator, sigma: float = 1.0) -> np.ndarray:
    """Identity coefficients i.i.d. Normal(0, sigma^2); sigma must be > 0."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return rng.normal(0.0, sigma, size=J)


@dataclass(frozen=True)
class CoefficientSample:
    """One training/eval sample: an identity plus an expression draw.

    ``has_blendshape_gt`` distinguishes rig-generated samples (coefficients
    are exact supervision) from scan-style samples (mesh only).
    """

    sample_id: str
    identity_index: int
    w_exp: np.ndarray
    kind: str  # "uniform" | "onehot" | "neutral" | "scan"
    has_blendshape_gt: bool
    scan_seed: int | None = None

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.w_exp, dtype=np.float64))
        w.flags.writeable = False
        object.__setattr__(self, "w_exp", w)


@dataclass
class DatasetConfig:
    seed: int = 1
    n_train_identities: int = 100
    n_val_identities: int = 1
    n_test_identities: int = 10
    uniform_per_identity: int = 20
    include_onehot: bool = True
    neutral_per_identity: int = 0  # copies of the all-zero expression
    scan_per_identity: int = 0
    identity_sigma: float = 1.0
    scan_noise_amplitude: float = 0.01
    allow_nonstandard_split: bool = False

    @property
    def n_identities(self) -> int:
        return self.n_train_identities + self.n_val_identities + self.n_test_identities

    def to_dict(self) -> dict:
        return dict(vars(self))

    @staticmethod
    def from_dict(d: dict) -> "DatasetConfig":
        return DatasetConfig(**d)


@dataclass
class RigDataset:
    """Rig + segmentation + coefficient samples + identity split."""

    rig: BlendshapeRig
    segmentation: SegmentationMap
    identity_coeffs: np.ndarray  # (n_identities, J)
    samples: list[CoefficientSample]
    split: dict[int, str]  # identity index -> "train" | "val" | "test"
    config: DatasetConfig

    def identities_in(self, split: str) -> list[int]:
        return sorted(i for i, s in self.split.items() if s == split)

    def samples_in(self, split: str) -> list[CoefficientSample]:
        wanted = set(self.identities_in(split))
        return [s for s in self.samples if s.identity_index in wanted]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.rig.digest().encode())
        h.update(self.identity_coeffs.tobytes())
        for s in self.samples:
            h.update(s.sample_id.encode())
            h.update(s.w_exp.tobytes())
        h.update(json.dumps(self.split, sort_keys=True).encode())
        return h.hexdigest()


_SCAN_MODE_CACHE: dict[str, np.ndarray] = {}


def _scan_noise(rig: BlendshapeRig, amplitude: float, seed: int) -> np.ndarray:
    """Smooth off-rig perturbation from the first 8 nonconstant eigenfunctions."""
    key = rig.neutral.content_hash()
    modes = _SCAN_MODE_CACHE.get(key)
    if modes is None:
        ops = compute_spectral_operators(rig.neutral, k=9)
        modes = ops.eigenvectors[:, 1:9]
        _SCAN_MODE_CACHE[key] = modes
    rng = np.random.default_rng(seed)
    coeffs = rng.normal(size=(8, 3))
    noise = modes @ coeffs
    peak = np.linalg.norm(noise, axis=1).max()
    return noise * (amplitude * rig.neutral.bbox_diagonal / max(peak, 1e-12))


def build_dataset(rig: BlendshapeRig, seg: SegmentationMap, config: DatasetConfig) -> RigDataset:
    """Deterministic dataset: identity coefficients, per-identity samples, split.

    Each identity gets ``uniform_per_identity`` uniform expression samples,
    all K one-hot samples when ``include_onehot``, and ``scan_per_identity``
    scan-style samples (rig expression plus smooth off-rig noise, no
    blendshape ground truth).
    """
    splits = (config.n_train_identities, config.n_val_identities, config.n_test_identities)
    if splits != DEFAULT_SPLIT and not config.allow_nonstandard_split:
        raise RigError(
            f"identity split {splits} differs from the default {DEFAULT_SPLIT}; "
            "set allow_nonstandard_split=True to override"
        )
    rng = np.random.default_rng(config.seed)
    n_id = config.n_identities
    identity_coeffs = np.stack(
        [sample_identity_normal(rig.J, rng, config.identity_sigma) for _ in range(n_id)]
    )

    split: dict[int, str] = {}
    for i in range(n_id):
        if i < splits[0]:
            split[i] = "train"
        elif i < splits[0] + splits[1]:
            split[i] = "val"
        else:
            split[i] = "test"

    samples: list[CoefficientSample] = []
    for i in range(n_id):
        for u in range(config.uniform_per_identity):
            samples.append(CoefficientSample(
                sample_id=f"id{i:03d}/uniform{u:04d}",
                identity_index=i,
                w_exp=sample_expression_uniform(rig.K, rng),
                kind="uniform",
                has_blendshape_gt=True,
            ))
        if config.include_onehot:
            for k in range(rig.K):
                samples.append(CoefficientSample(
                    sample_id=f"id{i:03d}/onehot{k:03d}",
                    identity_index=i,
                    w_exp=sample_expression_onehot(rig.K, k),
                    kind="onehot",
                    has_blendshape_gt=True,
                ))
        for u in range(config.neutral_per_identity):
            # anchors the code origin: zero coefficients <-> neutral face
            samples.append(CoefficientSample(
                sample_id=f"id{i:03d}/neutral{u:02d}",
                identity_index=i,
                w_exp=np.zeros(rig.K),
                kind="neutral",
                has_blendshape_gt=True,
            ))
        for u in range(config.scan_per_identity):
            samples.append(CoefficientSample(
                sample_id=f"id{i:03d}/scan{u:04d}",
                identity_index=i,
                w_exp=sample_expression_uniform(rig.K, rng),
                kind="scan",
                has_blendshape_gt=False,
                scan_seed=int(rng.integers(2 ** 31 - 1)),
            ))
    return RigDataset(
        rig=rig,
        segmentation=seg,
        identity_coeffs=identity_coeffs,
        samples=samples,
        split=split,
        config=config,
    )


@dataclass(frozen=True)
class SamplePair:
    """Materialized geometry for one sample."""

    source: Mesh          # expression mesh (encoder input)
    target: Mesh          # neutral mesh of the same identity
    gt_vertices: np.ndarray  # ground-truth deformed target vertices
    w_id: np.ndarray
    w_exp: np.ndarray
    has_blendshape_gt: bool
    labels: np.ndarray | None
    sample_id: str


def materialize(dataset: RigDataset, sample: CoefficientSample) -> SamplePair:
    """Build the (source, target, ground truth) meshes for a sample.

    Training is self-retargeting: the target is the sample identity's
    neutral mesh and the ground truth equals the source vertices.
    """
    rig = dataset.rig
    w_id = dataset.identity_coeffs[sample.identity_index]
    neutral_v = evaluate_rig(rig, w_id, np.zeros(rig.K))
    deformed_v = evaluate_rig(rig, w_id, sample.w_exp)
    if sample.kind == "scan":
        deformed_v = deformed_v + _scan_noise(rig, dataset.config.scan_noise_amplitude, sample.scan_seed or 0)
    source = rig.neutral.with_vertices(deformed_v)
    target = rig.neutral.with_vertices(neutral_v)
    labels = dataset.segmentation.labels if sample.has_blendshape_gt else None
    return SamplePair(
        source=source,
        target=target,
        gt_vertices=deformed_v,
        w_id=w_id,
        w_exp=sample.w_exp,
        has_blendshape_gt=sample.has_blendshape_gt,
        labels=labels,
        sample_id=sample.sample_id,
    )


# ---------------------------------------------------------------------------
# on-disk container
# ---------------------------------------------------------------------------

def save_dataset(dataset: RigDataset, directory: str | Path) -> None:
    """Write rig container + arrays + a deterministic JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_rig(dataset.rig, dataset.segmentation, directory / "rig")
    np.save(directory / "identity_coeffs.npy", dataset.identity_coeffs)
    np.save(directory / "expression_coeffs.npy", np.stack([s.w_exp for s in dataset.samples]))
    manifest = {
        "config": dataset.config.to_dict(),
        "split": {str(k): v for k, v in dataset.split.items()},
        "samples": [
            {
                "sample_id": s.sample_id,
                "identity_index": s.identity_index,
                "kind": s.kind,
                "has_blendshape_gt": s.has_blendshape_gt,
                "scan_seed": s.scan_seed,
            }
            for s in dataset.samples
        ],
        "digest": dataset.digest(),
    }
    (directory / "dataset.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_dataset(directory: str | Path) -> RigDataset:
    directory = Path(directory)
    manifest = json.loads((directory / "dataset.json").read_text())
    rig, seg = load_external_rig(directory / "rig")
    identity_coeffs = np.load(directory / "identity_coeffs.npy")
    w_exp = np.load(directory / "expression_coeffs.npy")
    samples = [
        CoefficientSample(
            sample_id=rec["sample_id"],
            identity_index=rec["identity_index"],
            w_exp=w_exp[i],
            kind=rec["kind"],
            has_blendshape_gt=rec["has_blendshape_gt"],
            scan_seed=rec["scan_seed"],
        )
        for i, rec in enumerate(manifest["samples"])
    ]
    dataset = RigDataset(
        rig=rig,
        segmentation=seg,
        identity_coeffs=identity_coeffs,
        samples=samples,
        split={int(k): v for k, v in manifest["split"].items()},
        config=DatasetConfig.from_dict(manifest["config"]),
    )
    if dataset.digest() != manifest["digest"]:
        raise RigError(f"dataset in {directory} does not match its manifest digest")
    return dataset
