import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from glocalk import data as D  # noqa: E402
from glocalk.pipeline import ExperimentConfig  # noqa: E402

TINY = dict(hidden=6, num_hidden=1, kernel_dim=2, maxiter_p=3, maxiter_f=2,
            pretrain_epochs=3, finetune_epochs=2, seeds=(0, 1))


def synthetic_ratings(n_users=20, n_items=15, n_ratings=160, seed=0):
    """Low-rank ratings on a 1..5 scale so a small model has something to learn."""
    rng = np.random.default_rng(seed)
    pu, qi = rng.normal(size=(n_users, 2)), rng.normal(size=(n_items, 2))
    pairs = rng.choice(n_users * n_items, size=n_ratings, replace=False)
    out = []
    for p in pairs:
        u, i = divmod(int(p), n_items)
        r = float(np.clip(np.rint(3 + pu[u] @ qi[i]), 1, 5))
        out.append(D.RatingTriplet(u + 1, i + 1, r))
    return out


@pytest.fixture
def triplet_dir(tmp_path):
    trip = synthetic_ratings()
    train = D.RatingDataset("train", trip[:130])
    test = D.RatingDataset("test", [t for t in trip[130:]
                                    if t.user_id in train.user_index and t.item_id in train.item_index])
    D.write_triplet_csv(train, str(tmp_path / "train.csv"))
    D.write_triplet_csv(test, str(tmp_path / "test.csv"))
    return tmp_path


@pytest.fixture
def tiny_config(triplet_dir):
    return ExperimentConfig(dataset="triplets", data_path=str(triplet_dir), **TINY)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
