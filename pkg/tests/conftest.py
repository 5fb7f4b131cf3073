import sys

import numpy as np
import pytest

from mrh.dictionary import TrainConfig, VisualDictionary, train


def two_cluster_dictionary():
    means = np.zeros((2, 15))
    means[0, 0], means[1, 0] = 10.0, -10.0
    return VisualDictionary(np.array([0.5, 0.5]), means, np.ones((2, 15)))


@pytest.fixture(scope="session")
def small_dict():
    rng = np.random.default_rng(123)
    x = rng.standard_normal((2000, 15)) * np.linspace(2.0, 0.2, 15)
    return train(x, TrainConfig(G=16, seed=1, max_em_iters=30))


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


@pytest.fixture(scope="session")
def face_images():
    from mrh.corpus import make_identity, render

    ids = [make_identity(0, k) for k in range(12)]
    return [render(ids[k], [0, k, 1, i]) for k in range(12) for i in range(4)]


@pytest.fixture(scope="session")
def detector_dict(face_images):
    from mrh.dct import feature_matrix
    from mrh.image import degrade

    feats = [feature_matrix(v)[2] for img in face_images[:24] for v in (img, degrade(img, 16))]
    return train(np.concatenate(feats), TrainConfig(G=32, seed=0, max_em_iters=40))


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    from mrh.corpus import format_pairs, generate_corpus, make_pairs

    root = tmp_path_factory.mktemp("corpus")
    layout = generate_corpus(root, n_identities=12, images_per_identity=5, seed=4)
    records = make_pairs(layout, folds=3, pairs_per_fold=40, seed=4)
    (root / "pairs.csv").write_text(format_pairs(records))
    return root, layout


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
