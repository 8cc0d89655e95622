import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from facefit.face_model import FaceParams, build_synthetic_assets  # noqa: E402

SMALL_DIMS = (64, 8, 4, 4, 2)


@pytest.fixture(scope="session")
def small_assets():
    return build_synthetic_assets(0, SMALL_DIMS)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_params(rng, dims, batch=(), scale=0.3):
    return FaceParams(rng.normal(0, scale, batch + (3,)), rng.normal(0, scale, batch + (dims["K_pose"],)),
                      rng.normal(0, scale, batch + (dims["K_shape"],)),
                      rng.normal(0, scale, batch + (dims["K_expr"],)))


ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance_report():
    """Register a one-line pass/fail verdict for an acceptance criterion."""
    def record(number, title, passed, detail):
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
