import numpy as np
import pytest
import torch

from admdp.demogen import generate_dataset, load_dataset
from admdp.simworld.tasks import default_task


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Five lift_bar demonstrations written to disk once per session."""
    root = tmp_path_factory.mktemp("data")
    generate_dataset(default_task("lift_bar"), 5, seed=3, root=root, n_points=64)
    return root / "lift_bar"


@pytest.fixture(scope="session")
def small_demos(small_dataset):
    return load_dataset(small_dataset)


CRITERIA: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    CRITERIA[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[k])
