import numpy as np
import pytest

from fingersense import GESTURES, cnn
from fingersense.augment import make_noise_corpus, make_synth_corpus
from fingersense.windows import ClipFeaturizer, training_arrays


@pytest.fixture(scope="session")
def featurizer():
    return ClipFeaturizer()


@pytest.fixture(scope="session")
def small_corpus():
    """40 clips per class, split 28/4/8 per class by index."""
    corpus = make_synth_corpus(per_class=40, seed=5)
    split = {"train": [], "val": [], "test": []}
    for label in GESTURES:
        items = [c for c in corpus if c[1] == label]
        split["train"] += items[:28]
        split["val"] += items[28:32]
        split["test"] += items[32:]
    return split


@pytest.fixture(scope="session")
def noise_corpus():
    return make_noise_corpus(n_clips=6, duration_s=8.0, seed=77)


@pytest.fixture(scope="session")
def trained_model(small_corpus, featurizer):
    """A confidently-converged model on the clean small corpus (~30 s once)."""
    train_x, train_y = training_arrays(
        [(label, clip.samples) for _, label, clip in small_corpus["train"]], featurizer)
    val_x, val_y = training_arrays(
        [(label, clip.samples) for _, label, clip in small_corpus["val"]], featurizer)
    model = cnn.new_model(seed=3)
    cfg = cnn.TrainConfig(max_epochs=40, early_stop_patience=40, seed=3)
    model, history = cnn.train(model, train_x, train_y, val_x, val_y, cfg)
    assert history[-1]["val_acc"] == 1.0, "fixture model failed to converge"
    return model
