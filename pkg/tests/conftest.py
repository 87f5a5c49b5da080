import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest

from sltkit.synth import BenchmarkSpec, gen_benchmark

SMALL_SPEC = dict(n_train=8, n_dev=3, n_test=3, n_tune=3, mt_count=40)


@pytest.fixture(scope="session")
def small_bench(tmp_path_factory):
    """A few-video benchmark for fast end-to-end plumbing tests."""
    root = tmp_path_factory.mktemp("bench")
    gen_benchmark(BenchmarkSpec(**SMALL_SPEC), root)
    return root


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
