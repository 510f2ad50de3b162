import json
from pathlib import Path

import numpy as np
import pytest
import torch

from faceclone.mesh import Mesh

# keep every run reproducible on shared hardware
torch.set_num_threads(1)

# On-disk cache for the expensive acceptance fixtures (operator
# eigendecompositions and trained checkpoints). Entries are keyed by content
# or config digest, so stale artifacts are never reused.
ARTIFACTS = Path(__file__).parent / "_artifacts"


@pytest.fixture(scope="session")
def artifacts_dir(tmp_path_factory):
    """Session-local scratch space for operator caches and checkpoints."""
    return tmp_path_factory.mktemp("artifacts")


@pytest.fixture
def square_mesh():
    """Unit square in the z=0 plane, two CCW triangles."""
    vertices = np.array([
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [1.0, 1.0, 0.0],
        [0.0, 1.0, 0.0],
    ])
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    return Mesh(vertices, faces)


@pytest.fixture
def tetra_mesh():
    vertices = np.array([
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
    ])
    faces = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    return Mesh(vertices, faces)


@pytest.fixture(scope="session")
def small_sphere():
    from faceclone.rig import icosphere
    return icosphere(2)  # 162 vertices


@pytest.fixture(scope="session")
def tiny_rig():
    """Fast rig for unit tests: 162 vertices, few bases."""
    from faceclone.rig import make_toy_rig
    return make_toy_rig(seed=3, subdivision=2, J=8, K=6, L=5)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_rig):
    from faceclone.data import DatasetConfig, build_dataset
    rig, seg = tiny_rig
    config = DatasetConfig(
        seed=5,
        n_train_identities=3,
        n_val_identities=1,
        n_test_identities=1,
        uniform_per_identity=4,
        include_onehot=True,
        scan_per_identity=1,
        allow_nonstandard_split=True,
    )
    return build_dataset(rig, seg, config)


# --------------------------------------------------------------------------
# acceptance fixture: toy rig at subdivision 3, 5 train identities x 200
# expressions (147 uniform + 53 one-hot), seed 1
# --------------------------------------------------------------------------

OVERFIT_STEPS = 2000
ABLATION_STEPS = 700


def fixture_train_config(steps: int, out_dir: Path, **overrides):
    from faceclone.model import ModelConfig
    from faceclone.training import TrainConfig

    defaults = dict(
        seed=1,
        steps=steps,
        batch_size=3,
        learning_rate=2e-3,
        lr_schedule="hold-cosine",
        beta2=0.99,
        model=ModelConfig(dtype="float32"),
        checkpoint_every=0,
        eval_every=500,
        out_dir=str(out_dir),
        operator_cache_dir=str(ARTIFACTS / "opcache"),
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


@pytest.fixture(scope="session")
def fixture_dataset():
    from faceclone.data import DatasetConfig, build_dataset
    from faceclone.rig import make_toy_rig

    rig, seg = make_toy_rig(seed=1, subdivision=3, J=100, K=53, L=20)
    # 200 expressions per identity: 144 uniform draws, the 53 single-basis
    # extremes, and 3 neutral anchors
    config = DatasetConfig(
        seed=1,
        n_train_identities=5,
        n_val_identities=1,
        n_test_identities=2,
        uniform_per_identity=144,
        include_onehot=True,
        neutral_per_identity=3,
        allow_nonstandard_split=True,
    )
    return build_dataset(rig, seg, config)


@pytest.fixture(scope="session")
def fixture_op_cache():
    from faceclone.spectral import OperatorCache

    return OperatorCache(ARTIFACTS / "opcache")


def _cached_checkpoint(config, dataset) -> Path:
    """Train once per config digest; later sessions reuse the checkpoint."""
    from faceclone.training import train

    final = Path(config.out_dir) / "final.npz"
    if final.exists():
        with np.load(final) as z:
            manifest = json.loads(str(z["__manifest__"]))
        if manifest.get("config_digest") == config.digest():
            return final
    result = train(config, dataset)
    return result.checkpoint_path


@pytest.fixture(scope="session")
def overfit_checkpoint(fixture_dataset) -> Path:
    config = fixture_train_config(OVERFIT_STEPS, ARTIFACTS / "overfit")
    return _cached_checkpoint(config, fixture_dataset)


@pytest.fixture(scope="session")
def ablation_checkpoints(fixture_dataset) -> dict:
    from faceclone.training import ABLATION_VARIANTS, ablation_config

    base = fixture_train_config(ABLATION_STEPS, ARTIFACTS / "ablations")
    return {
        variant: _cached_checkpoint(ablation_config(base, variant), fixture_dataset)
        for variant in ABLATION_VARIANTS
    }
