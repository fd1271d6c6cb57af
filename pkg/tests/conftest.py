import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from simbi.cli.registry import make_simulator  # noqa: E402
from simbi.distributions import GaussianDiag, linear_gaussian_posterior  # noqa: E402
from simbi.inference import InferenceMethod, train_amortized  # noqa: E402
from simbi.simgym import simulate_for_sbi  # noqa: E402

LG_PRIOR = GaussianDiag([0.0, 0.0], [1.0, 1.0])
LG_SIM = make_simulator({"name": "linear-gaussian"}, LG_PRIOR)
LG_NOISE = 0.1 * np.eye(2)

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def lg_oracle(x_o):
    return linear_gaussian_posterior(LG_PRIOR, LG_NOISE, x_o)


@pytest.fixture(scope="session")
def lg_batch():
    return simulate_for_sbi(LG_PRIOR, LG_SIM, 10_000, rng=2024)


@pytest.fixture(scope="session")
def trained(lg_batch):
    """``trained(kind) -> (estimator, method, seconds)`` with default settings, cached per session."""
    cache = {}

    def get(kind):
        if kind not in cache:
            m = InferenceMethod(kind, LG_PRIOR)
            t0 = time.perf_counter()
            est = train_amortized(m, lg_batch)
            cache[kind] = (est, m, time.perf_counter() - t0)
        return cache[kind]

    return get


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} | {detail}")
