import pathlib

import pytest

from panvox import semantic_kitti

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def taxonomy():
    return semantic_kitti()


@pytest.fixture(scope="session")
def golden_dir():
    return FIXTURES / "golden_merge"
