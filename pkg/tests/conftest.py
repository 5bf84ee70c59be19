from __future__ import annotations

import pytest

from tiil.backends import synthetic_bundle
from tiil.dataset import build_planted_benchmark
from tiil.pipeline import suggested_config


@pytest.fixture(scope="session")
def bundle():
    return synthetic_bundle(seed=0)


@pytest.fixture(scope="session")
def model(bundle):
    return bundle.text_encoder


@pytest.fixture(scope="session")
def tuned_cfg(bundle):
    return suggested_config(bundle, seed=0)


@pytest.fixture(scope="session")
def benchmark(bundle, tmp_path_factory):
    """50 consistent + 50 inconsistent planted pairs, built once per run."""
    out = tmp_path_factory.mktemp("benchmark")
    records = build_planted_benchmark(out, bundle, seed=0)
    return out, records
