from __future__ import annotations

import pytest

from fmrbench import LabelSet
from fmrbench.harness.data import load_dataset
from fmrbench.harness.registry import build_generator, build_model, build_oracle

from helpers import DATA_EVAL, DATA_MINI


@pytest.fixture(scope="session")
def eval_dataset():
    return load_dataset(DATA_EVAL)


@pytest.fixture(scope="session")
def mini_dataset():
    return load_dataset(DATA_MINI)


@pytest.fixture(scope="session")
def toy_convnet():
    return build_model("toy-convnet")


@pytest.fixture(scope="session")
def toy_mlp():
    return build_model("toy-mlp")


@pytest.fixture(scope="session")
def toy_mlp_pgd():
    return build_model("toy-mlp-pgd")


@pytest.fixture(scope="session")
def reference_ae():
    return build_generator("reference-ae")


@pytest.fixture(scope="session")
def glyph_labels(eval_dataset):
    return LabelSet(tuple(eval_dataset.class_names))


@pytest.fixture(scope="session")
def surrogate_oracle(glyph_labels):
    return build_oracle("surrogate", glyph_labels)
