"""
Time the exact element influence against the centroid approximation and product quadratures.

Every method evaluates potential and flux at seeded random generic points around the element
after an untimed warm-up; the table reports mean nanoseconds per evaluation and the ratio to the
exact kernel. Only the ordering of the methods is checked, absolute times are machine specific.

Usage:
    python bench.py
    python bench.py --methods exact centroid quad10 --counts 100000 100000 10000 --threads 1
"""

import sys
from dataclasses import dataclass, replace
from pathlib import Path

from dargparser import dArg
from loguru import logger

from dlib.frameworks.pytorch import torch_threads
from src.benchmarks import DEFAULT_COUNTS, KernelThroughputBenchmark, ordering_checks
from src.errors import UsageError
from src.helpers import MiscArgs, PolicyArgs, require_positive, run_cli, setup_run, write_csv
from src.robust import EvalPolicy
from src.sweeps import parse_method


@dataclass
class Args:
    z_m: float = dArg(default=1.0, help="z-leg length of the timed element.", aliases="--zM")
    methods: list[str] = dArg(default=list(DEFAULT_COUNTS), help="Methods to time.")
    counts: list[int] = dArg(
        default=[],
        help="Evaluations per method, in the order of --methods. Defaults to 1e5 exact and centroid, 1e4 quad10, 1e3 quad100 and 1e2 quad500.",  # noqa: E501
    )
    warmup: int = dArg(default=100, help="Untimed evaluations per method (at least 100).")
    batch_size: int = dArg(default=1000, help="Points per timed call.", aliases="-b")
    box: float = dArg(default=5.0, help="Points are drawn from [-box, box]^3.")

    def __post_init__(self):
        require_positive(zM=self.z_m, batch_size=self.batch_size, box=self.box)
        if self.warmup < 100:
            raise UsageError(f"--warmup must be at least 100, got {self.warmup}.")
        for method in self.methods:
            if parse_method(method).kind == "adaptive":
                raise UsageError("The adaptive oracle is not a timed method.")
        if self.counts and len(self.counts) != len(self.methods):
            raise UsageError("--counts needs one entry per method.")
        for count in self.counts:
            require_positive(counts=count)


@logger.catch(reraise=True)
def main(parsed_arg_groups: tuple[Args, PolicyArgs, MiscArgs]):
    args, policy_args, misc_args = parsed_arg_groups
    setup_run(parsed_arg_groups)
    policy = policy_args.to_policy()
    if policy.far_field is None:
        policy = replace(policy, far_field=EvalPolicy.for_timing().far_field)

    if args.counts:
        counts = dict(zip(args.methods, args.counts))
    else:
        counts = {method: DEFAULT_COUNTS.get(method, 1000) for method in args.methods}
    benchmark = KernelThroughputBenchmark(
        z_m=args.z_m,
        counts=counts,
        warmup=args.warmup,
        batch_size=args.batch_size,
        box=args.box,
        seed=misc_args.seed,
        policy=policy,
    )
    with torch_threads(misc_args.threads):
        table = benchmark.run()
    write_csv(Path(misc_args.out_dir) / "bench.csv", table, "bench")

    logger.info("Mean time per evaluation:")
    for row in table.itertuples():
        ratio = f" ({row.ratio_to_exact:.1f}x exact)" if "ratio_to_exact" in table else ""
        logger.info(f"  {row.method:<12} {row.mean_ns:>14.1f} ns{ratio}")
    for check, passed in ordering_checks(table).items():
        (logger.success if passed else logger.warning)(f"{check}: {'yes' if passed else 'no'}")


if __name__ == "__main__":
    sys.exit(run_cli(main, (Args, PolicyArgs, MiscArgs)))
