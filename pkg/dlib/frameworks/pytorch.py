import contextlib

import torch
from loguru import logger


def configure_torch(threads: int | None = None, deterministic: bool = False) -> None:
    """
    All numerics run in float64 on the CPU. `threads` pins the intra-op thread pool (None keeps the
    torch default). Deterministic mode makes torch raise on ops without a deterministic kernel.
    """
    torch.set_default_dtype(torch.float64)
    if threads is not None:
        torch.set_num_threads(threads)
    if deterministic:
        torch.use_deterministic_algorithms(True)
    logger.debug(
        f"torch {torch.__version__}: float64 default, {torch.get_num_threads()} threads, "
        f"deterministic={deterministic}"
    )


def make_generator(seed: int) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator


@contextlib.contextmanager
def torch_threads(threads: int | None):
    """Run the wrapped code with `threads` intra-op threads and restore the previous count."""
    previous = torch.get_num_threads()
    if threads is not None:
        torch.set_num_threads(threads)
    try:
        yield
    finally:
        torch.set_num_threads(previous)
