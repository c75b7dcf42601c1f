import numpy as np
import pytest

from mopro import datagen, trainer


def rows_equal(a, b):
    """Dict equality where NaN == NaN (metrics rows carry NaN columns)."""
    if a.keys() != b.keys():
        return False
    for key, va in a.items():
        vb = b[key]
        both_nan = (
            isinstance(va, float) and isinstance(vb, float)
            and np.isnan(va) and np.isnan(vb)
        )
        if not both_nan and va != vb:
            return False
    return True


def records_equal(r1, r2):
    return len(r1) == len(r2) and all(
        rows_equal(a.as_row(), b.as_row()) for a, b in zip(r1, r2)
    )


@pytest.fixture
def tiny_gen_config():
    return datagen.GenConfig(
        num_classes=4, dim=8, per_class=40, cluster_sep=6.0,
        noise_rate=0.3, ood_rate=0.1, ood_clusters=3, seed=3,
    )


@pytest.fixture
def tiny_dataset(tiny_gen_config):
    return datagen.generate(tiny_gen_config)


@pytest.fixture
def tiny_train_config():
    return trainer.TrainConfig(
        num_classes=4, input_dim=8, hidden_dims=(32, 32), embed_dim=16,
        proj_dim=8, queue_size=64, warmup_epochs=2, epochs=6, batch_size=16,
        weak_sigma=0.5, strong_sigma=1.0, seed=1,
    )
