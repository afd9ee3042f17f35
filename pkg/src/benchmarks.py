# collection of kernel timing benchmarks
from __future__ import annotations

import time
from dataclasses import dataclass

import pandas as pd
import torch
from loguru import logger

from src.errors import UsageError
from src.kernels import KernelInputs, evaluate
from src.quadrature import QuadratureSpec, centroid_influence, quad_influence
from src.robust import EvalPolicy, LocationKind, classify_batch

DEFAULT_COUNTS = {
    "exact": 100_000,
    "centroid": 100_000,
    "quad10": 10_000,
    "quad100": 1_000,
    "quad500": 100,
}


@dataclass(frozen=True)
class TimingResult:
    method: str
    evaluations: int
    total_seconds: float

    @property
    def mean_ns(self) -> float:
        return 1e9 * self.total_seconds / self.evaluations


class KernelThroughputBenchmark:
    """Mean wall time per influence evaluation (potential and flux) of one element.

    Points are seeded uniform samples of a box around the element, restricted to generic
    locations. Every method runs `warmup` untimed evaluations first and is then timed over its
    evaluation count in batches of `batch_size` points.
    """

    def __init__(
        self,
        z_m: float = 1.0,
        counts: dict[str, int] | None = None,
        warmup: int = 100,
        batch_size: int = 1000,
        box: float = 5.0,
        seed: int = 0,
        policy: EvalPolicy | None = None,
    ):
        if warmup < 100:
            raise UsageError(f"At least 100 warm-up evaluations are required, got {warmup}.")
        self.z_m = z_m
        self.counts = dict(counts or DEFAULT_COUNTS)
        self.warmup = warmup
        self.batch_size = batch_size
        self.box = box
        self.policy = policy or EvalPolicy.for_timing()
        self.generator = torch.Generator().manual_seed(seed)
        self.results: list[TimingResult] = []

    def sample_points(self, count: int) -> torch.Tensor:
        points = []
        collected = 0
        z_m = torch.tensor(self.z_m, dtype=torch.float64)
        while collected < count:
            n = 2 * (count - collected) + 16
            unit = torch.rand(n, 3, generator=self.generator, dtype=torch.float64)
            P = self.box * (2.0 * unit - 1.0)
            kind, _, _ = classify_batch(z_m.expand(n), P, self.policy)
            P = P[kind == LocationKind.GENERIC]
            points.append(P)
            collected += P.shape[0]
        return torch.cat(points)[:count]

    def _method(self, name: str):
        match name:
            case "exact":
                return lambda P: evaluate(KernelInputs.from_points(self.z_m, P))
            case "centroid":
                return lambda P: centroid_influence(self.z_m, P)
            case _ if name.startswith("quad"):
                spec = QuadratureSpec.parse(name)
                return lambda P: quad_influence(self.z_m, P, spec, exact_sum=False)
            case _:
                raise UsageError(f"Cannot time method {name!r}.")

    def time_method(self, name: str, evaluations: int) -> TimingResult:
        fn = self._method(name)
        fn(self.sample_points(self.warmup))
        points = self.sample_points(evaluations)
        start = time.perf_counter()
        for i in range(0, evaluations, self.batch_size):
            fn(points[i : i + self.batch_size])
        elapsed = time.perf_counter() - start
        result = TimingResult(name, evaluations, elapsed)
        logger.info(f"{name}: {evaluations} evaluations, {result.mean_ns:.1f} ns/eval")
        return result

    def run(self) -> pd.DataFrame:
        self.results = [self.time_method(name, count) for name, count in self.counts.items()]
        return self.table()

    def table(self) -> pd.DataFrame:
        table = pd.DataFrame(
            {
                "method": [r.method for r in self.results],
                "evaluations": [r.evaluations for r in self.results],
                "total_seconds": [r.total_seconds for r in self.results],
                "mean_ns": [r.mean_ns for r in self.results],
            }
        )
        exact = table.loc[table["method"] == "exact", "mean_ns"]
        if len(exact):
            table["ratio_to_exact"] = table["mean_ns"] / float(exact.iloc[0])
        return table


def ordering_checks(table: pd.DataFrame) -> dict[str, bool]:
    """Relative timing expectations; absolute times are machine specific."""
    mean = dict(zip(table["method"], table["mean_ns"]))
    checks = {}
    if "exact" in mean and "quad10" in mean:
        checks["exact faster than quad10"] = mean["exact"] < mean["quad10"]
    if "exact" in mean and "quad100" in mean:
        checks["quad100 at least 50x slower than exact"] = mean["quad100"] >= 50 * mean["exact"]
    if "centroid" in mean:
        checks["centroid fastest"] = mean["centroid"] == min(mean.values())
    return checks
