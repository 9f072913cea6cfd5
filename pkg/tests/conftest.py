import numpy as np
import pytest
import torch

from deepdisaster.config import default_config, with_overrides
from deepdisaster.data import SyntheticSpec, make_synthetic_dataset
from deepdisaster.training import pretrain_teacher, restore_pair, train_student


@pytest.fixture
def tiny_config():
    """Smallest legal config: fast enough for per-test training."""
    return with_overrides(
        default_config(),
        image_size=32,
        teacher_base_width=8,
        student_base_width=4,
        latent_dim=16,
        batch_size=8,
        epochs=2,
        seed=7,
    )


@pytest.fixture
def tiny_dataset(tmp_path):
    spec = SyntheticSpec(count_normal=24, count_anomalous=8, image_size=32, seed=1)
    index = make_synthetic_dataset(spec, tmp_path / "data")
    return spec, index


@pytest.fixture(scope="session")
def trained_setup(tmp_path_factory):
    """One small trained student/teacher shared by scoring and saliency tests."""
    root = tmp_path_factory.mktemp("trained")
    config = with_overrides(
        default_config(),
        image_size=32,
        teacher_base_width=8,
        student_base_width=4,
        latent_dim=16,
        batch_size=8,
        epochs=3,
        seed=7,
    )
    spec = SyntheticSpec(count_normal=24, count_anomalous=8, image_size=32, seed=1)
    index = make_synthetic_dataset(spec, root / "data")
    teacher_ckpt, _ = pretrain_teacher(config, index, epochs=3)
    student_ckpt, _ = train_student(config, teacher_ckpt, index, epochs=3)
    student = restore_pair(student_ckpt)
    teacher = restore_pair(teacher_ckpt)
    student.freeze()
    teacher.freeze()
    return {
        "config": config,
        "spec": spec,
        "index": index,
        "root": root / "data",
        "teacher_ckpt": teacher_ckpt,
        "student_ckpt": student_ckpt,
        "student": student,
        "teacher": teacher,
    }


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)
    np.random.seed(0)
