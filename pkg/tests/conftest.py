import numpy as np
import pytest
import torch

from visualtts.model import ModelConfig, VisualTTSModel
from visualtts.toy import toy_corpus
from visualtts.training import make_item


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


def small_model(variant="visualtts", n_speakers=4, seed=0):
    torch.manual_seed(seed)
    return VisualTTSModel(ModelConfig(variant=variant, n_speakers=n_speakers).shrink(8)).eval()


def toy_items(seed, n, n_speakers=4):
    return [make_item(u.text, u.speaker_id, u.lips, u.mel, u.utt_id) for u in toy_corpus(seed, n, n_speakers)]


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
