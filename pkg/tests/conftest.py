import numpy as np
import pytest
import torch

from gca.model import GCAModel, ModelSpec
from gca.synth import GroundTruthStructure, RawSeries


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model():
    torch.manual_seed(0)
    return GCAModel(ModelSpec(D=3, k=2, d_alpha=4, d_beta=4, d_e=8, enc_hidden=8, pred_hidden=8, d_var=2))


def make_series(values, domain_id="d", truth=None) -> RawSeries:
    return RawSeries(np.asarray(values, dtype=float), domain_id, truth)


def diagonal_structure(D=2, scale=1.0) -> GroundTruthStructure:
    return GroundTruthStructure.from_weights(scale * np.eye(D)[None])


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
