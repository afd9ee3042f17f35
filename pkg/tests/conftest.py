import pytest
import torch

from dlib.frameworks.pytorch import configure_torch, make_generator
from src.solver import solve_plate


@pytest.fixture(scope="session", autouse=True)
def float64_torch():
    configure_torch()


@pytest.fixture
def generator() -> torch.Generator:
    return make_generator(1234)


@pytest.fixture(scope="session")
def solved_plates():
    """Solved unit plates keyed by n, shared by the solver tests."""
    return {n: solve_plate(n) for n in (1, 2, 4, 8, 16)}


@pytest.fixture(scope="session")
def fine_plate():
    return solve_plate(32)
