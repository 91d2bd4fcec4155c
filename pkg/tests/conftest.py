import time

import numpy as np
import pytest

from ctclass.detector import DetectorParams
from ctclass.features import WindowConfig
from ctclass.pipeline import SelectionCriteria, generate_corpus

CORPUS_SEED = 20240817
CORPUS_BUILD_SECONDS = {"value": 0.0}


@pytest.fixture(scope="session")
def corpus100():
    """Full-size training corpus: 100 transitions per mechanism."""
    start = time.time()
    corpus = generate_corpus(
        100, CORPUS_SEED,
        SelectionCriteria(-30.0, 10.0, require_no_almost=True),
        DetectorParams(), WindowConfig(),
    )
    CORPUS_BUILD_SECONDS["value"] = time.time() - start
    return corpus


@pytest.fixture(scope="session")
def corpus_small():
    """Quick corpus for mechanics tests."""
    return generate_corpus(
        6, 4242,
        SelectionCriteria(-30.0, 10.0, require_no_almost=True),
        DetectorParams(), WindowConfig(),
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
