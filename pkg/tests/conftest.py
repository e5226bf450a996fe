"""Shared fixtures: a small corpus and a small trained model.

The acceptance suite builds the full-size corpus itself; everything here is
sized for fast unit tests.
"""

import pytest

from agentgate.evaluate import build_dataset
from agentgate.features import FEATURE_NAMES, FeatureExtractor, fit_profile
from agentgate.gbdt import TrainConfig, train
from agentgate.policy import calibrate
from agentgate.tracegen import GenConfig, gen_corpus

SMALL_SEED = 11
SMALL_N = 600


@pytest.fixture(scope="session")
def small_corpus():
    return gen_corpus(GenConfig(seed=SMALL_SEED, n_total=SMALL_N))


@pytest.fixture(scope="session")
def small_profile(small_corpus):
    return fit_profile(small_corpus.train)


@pytest.fixture(scope="session")
def small_extractor(small_profile):
    return FeatureExtractor(small_profile)


@pytest.fixture(scope="session")
def small_datasets(small_corpus, small_extractor):
    return (
        build_dataset(small_corpus.train, small_extractor),
        build_dataset(small_corpus.valid, small_extractor),
        build_dataset(small_corpus.test, small_extractor),
    )


@pytest.fixture(scope="session")
def small_train_config():
    return TrainConfig(n_estimators=60, max_depth=4)


@pytest.fixture(scope="session")
def small_model(small_datasets, small_train_config):
    train_ds, _, _ = small_datasets
    return train(train_ds.X, train_ds.y, small_train_config, list(FEATURE_NAMES))


@pytest.fixture(scope="session")
def small_calibration(small_model, small_datasets):
    _, valid_ds, _ = small_datasets
    scores = small_model.predict(valid_ds.X)
    return calibrate(valid_ds.session_scores(scores))
