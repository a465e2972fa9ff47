import json

import numpy as np
import pytest

from fedvid.config import from_dict
from fedvid.data import DatasetConfig, make_dataset
from fedvid.model import ModelSpec

# 8 classes, 10 train / 4 test videos each; 32 frames so every task fits.
TINY_DATA = DatasetConfig(n_direction_bins=4, sizes=(2, 3), videos_per_class_train=10,
                          videos_per_class_test=4)
# 8x8 frames and narrow layers keep exhaustive finite differences cheap.
MINI_DATA = DatasetConfig(n_direction_bins=4, sizes=(2, 3), videos_per_class_train=4,
                          videos_per_class_test=2, H=8, W=8)
MINI_SPEC = ModelSpec((8, 8), hidden1=6, embed_dim=4, vcop_hidden=5)

TINY_CONFIG = {
    "dataset": {"n_direction_bins": 4, "sizes": [2, 3], "videos_per_class_train": 10,
                "videos_per_class_test": 4},
    "federation": {"rounds": 3, "n_clients": 4, "clients_per_round": 2},
    "evaluation": {"probe_epochs": 2, "landscape_grid": 3, "landscape_samples": 16,
                   "perturbation_levels": [0.0, 0.1, 0.5]},
}


@pytest.fixture(scope="session")
def tiny_data():
    return make_dataset(TINY_DATA)


@pytest.fixture(scope="session")
def mini_data():
    return make_dataset(MINI_DATA)


@pytest.fixture
def tiny_cfg():
    return from_dict(json.loads(json.dumps(TINY_CONFIG)))


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY_CONFIG))
    return path


def random_weightset(gen, shapes, roles=None):
    from fedvid.params import BACKBONE, WeightSet

    roles = roles or {}
    return WeightSet({n: (roles.get(n, BACKBONE), gen.standard_normal(s)) for n, s in shapes.items()})


@pytest.fixture
def gen():
    return np.random.default_rng(1234)


def fd_relative_errors(w, batch, weight_decay=0.0, h=1e-5, coords=None, gen=None):
    """Analytic gradient of the total loss vs central differences.

    Returns one relative error ``|a - n| / max(|a|, |n|, 1e-8)`` per checked
    coordinate; ``coords`` limits the check to that many random coordinates
    per tensor (all when None).
    """
    from fedvid.model import loss_and_grads
    from fedvid.params import WeightSet

    _, _, grads = loss_and_grads(w, batch, weight_decay=weight_decay)
    base = {n: (r, a) for n, r, a in w.items()}
    errs = []
    for name, role, arr in w.items():
        idx = range(arr.size) if coords is None else gen.choice(arr.size, min(coords, arr.size), replace=False)
        for i in idx:
            vals = []
            for sign in (1.0, -1.0):
                moved = arr.copy().ravel()
                moved[i] += sign * h
                ws = WeightSet({**base, name: (role, moved.reshape(arr.shape))})
                vals.append(loss_and_grads(ws, batch, weight_decay=weight_decay)[1])
            num = (vals[0] - vals[1]) / (2 * h)
            ana = float(grads[name].ravel()[i])
            errs.append(abs(ana - num) / max(abs(ana), abs(num), 1e-8))
    return np.asarray(errs)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
