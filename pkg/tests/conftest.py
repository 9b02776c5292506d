import copy
import json
from pathlib import Path

import pytest

from delam2d import load_config, parse_config, run_single

REPO_ROOT = Path(__file__).resolve().parents[1]

# Small bar with the benchmark's material data: 10 x 1 cells, 9 glued
# segments, coarse steps.  Fully debonds within T and runs in well under
# a second, so integration tests can afford fresh runs.
SMALL_DOC = {
    "geometry": {"L": 0.25, "H": 0.025, "n_interface": 9},
    "material": {"E": 70e9, "nu": 0.35, "chi": 1e-3},
    "adhesive": {"kappa_n": 150e9, "kappa_t": 75e9, "a_I": 187.5, "lambda": 0.333},
    "loading": {"speed": 3e-4, "direction": [1.0, 0.6]},
    "time": {"T": 1.2, "tau": 0.02},
}


def make_doc(**section_overrides) -> dict:
    doc = copy.deepcopy(SMALL_DOC)
    for section, fields in section_overrides.items():
        doc.setdefault(section, {}).update(fields)
    return doc


@pytest.fixture(scope="session")
def small_config():
    return parse_config(make_doc())


@pytest.fixture(scope="session")
def small_result(small_config, tmp_path_factory):
    """One completed small run with full debonding, shared read-only."""
    out = tmp_path_factory.mktemp("small_run")
    result = run_single(small_config, out)
    assert result.trajectory.t_full_debond is not None
    return result


@pytest.fixture(scope="session")
def benchmark_config():
    return load_config(REPO_ROOT / "benchmark.json")


@pytest.fixture(scope="session")
def benchmark_result(benchmark_config, tmp_path_factory):
    """The full 81-segment benchmark run; shared by the acceptance tests."""
    out = tmp_path_factory.mktemp("benchmark_run")
    return run_single(benchmark_config, out)
