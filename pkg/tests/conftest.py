import json

import pytest

from hmmdetect import reference


@pytest.fixture
def shift_pair():
    return reference.gaussian_shift()


@pytest.fixture
def two_state():
    return reference.two_state_pair()


@pytest.fixture
def ar_pair():
    return reference.two_state_ar_pair()


@pytest.fixture
def scenario_file(tmp_path):
    """Write a scenario JSON for a model pair and return its path."""

    def write(pair, omega=None, name="scenario.json"):
        spec = {"pre": pair[0].to_dict(), "post": pair[1].to_dict()}
        if omega is not None:
            spec["omega"] = omega
        path = tmp_path / name
        path.write_text(json.dumps(spec))
        return str(path)

    return write
