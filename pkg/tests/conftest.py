"""Shared fixtures.

The trained-model fixtures are expensive (tens of seconds), so they are
session-scoped and record their own wall time for the runtime-budget
assertions in the acceptance tests.
"""

import time

import pytest

# one line per acceptance criterion, echoed after the run so the verdicts
# are visible even when pytest captures test output
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)

from proclip.corpus import SynthSpec, synth_corpus
from proclip.model import init_model_params
from proclip.trainer import TrainConfig, train_distill_stage, train_retrieval_stage


@pytest.fixture(scope="session")
def small_corpus():
    """20 videos / 20 queries with a planted relevance structure."""
    return synth_corpus(SynthSpec(n_videos=20, n_queries=20, frames_per_video=12,
                                  d_v=12, d=16, relevance_snr=10.0, seed=3))


@pytest.fixture(scope="session")
def small_model(small_corpus):
    return init_model_params(0, small_corpus.dims["D_v"], small_corpus.dims["D"])


@pytest.fixture(scope="session")
def planted_corpus():
    """The 50-video / 50-query training corpus used by the learning tests."""
    return synth_corpus(SynthSpec(n_videos=50, n_queries=50, frames_per_video=16,
                                  d_v=16, d=32, relevance_snr=10.0, seed=11))


@pytest.fixture(scope="session")
def stage1_trained(planted_corpus):
    """(trained model, loss history, wall seconds) after retrieval training."""
    config = TrainConfig(batch_size=8, epochs=30, seed=0, k_frames=6)
    t0 = time.perf_counter()
    result = train_retrieval_stage(planted_corpus, config)
    return result.model, result.history, time.perf_counter() - t0


@pytest.fixture(scope="session")
def stage2_trained(planted_corpus, stage1_trained):
    """(distilled model, mse trace, wall seconds) after distillation."""
    model, _, _ = stage1_trained
    config = TrainConfig(batch_size=8, epochs=40, seed=0, k_frames=6)
    t0 = time.perf_counter()
    result = train_distill_stage(planted_corpus, model, config)
    return result.model, result.mse_trace, time.perf_counter() - t0
