"""
Evaluate the potential and flux of a single uniformly charged right-triangular element along a
line, on a plane grid or along one of the validation sweeps, and write them to CSV.

The element is the normalised triangle with corners (0,0,0), (1,0,0) and (0,0,zM); its normal
is the y axis.

Usage:
    python influence.py --zM 1 --line -2,-2,-2 2,2,2 --samples 401
    python influence.py --zM 10 --grid_plane XZ --grid_samples 201
    python influence.py --sweep centroidal --compare quad100 quad500
    python influence.py --config configs/near_field.cfg --samples 801  # flags win over the file
"""

import sys
from dataclasses import dataclass
from pathlib import Path

from dargparser import dArg
from loguru import logger

from src.errors import UsageError
from src.helpers import (
    MiscArgs,
    PolicyArgs,
    parse_line,
    require_positive,
    run_cli,
    setup_run,
    write_csv,
)
from src.sweeps import (
    CANONICAL_SWEEPS,
    canonical_sweep,
    grid_sweep,
    line_sweep,
    parse_method,
    run_sweep,
)


@dataclass
class Args:
    z_m: float = dArg(
        default=1.0, help="z-leg length of the normalised element (x-leg is 1).", aliases="--zM"
    )
    line: str | None = dArg(
        default=None, help="Line endpoints, given as two points: --line x,y,z x,y,z"
    )
    samples: int = dArg(default=401, help="Number of samples along the line.", aliases="-s")
    spacing: str = dArg(
        default="linear",
        help='"linear" or "log" (geometric towards both ends from the line midpoint).',
    )
    grid_plane: str | None = dArg(
        default=None, help="Evaluate on a grid on the XZ, XY or YZ plane.", aliases="--grid-plane"
    )
    grid_samples: int = dArg(default=101, help="Grid samples per axis.")
    grid_margin: float = dArg(default=1.0, help="Grid margin around the element extent.")
    grid_offset: float = dArg(default=0.0, help="Offset of the grid plane along its normal.")
    sweep: str | None = dArg(
        default=None, help=f"Canonical validation sweep, one of {', '.join(CANONICAL_SWEEPS)}."
    )
    compare: list[str] = dArg(
        default=[],
        help="Comparison methods: centroid, adaptive, quad<N>[x<M>][-gl], e.g. quad100 quad500.",
    )
    output: str | None = dArg(default=None, help="Output CSV path. Defaults to the out_dir.")

    def __post_init__(self):
        require_positive(zM=self.z_m, samples=self.samples, grid_samples=self.grid_samples)
        selected = [name for name in ("line", "grid_plane", "sweep") if getattr(self, name)]
        if len(selected) != 1:
            raise UsageError("Specify exactly one of --line, --grid_plane or --sweep.")
        if self.spacing not in ("linear", "log"):
            raise UsageError(f"Unknown spacing {self.spacing}.")
        if self.grid_plane is not None:
            self.grid_plane = self.grid_plane.upper()
            if self.grid_plane not in ("XZ", "XY", "YZ"):
                raise UsageError(f"Unknown grid plane {self.grid_plane}; use XZ, XY or YZ.")
        self.compare = [m for item in self.compare for m in item.split(",") if m]
        for method in self.compare:
            parse_method(method)


@logger.catch(reraise=True)
def main(parsed_arg_groups: tuple[Args, PolicyArgs, MiscArgs]):
    args, policy_args, misc_args = parsed_arg_groups
    setup_run(parsed_arg_groups)
    policy = policy_args.to_policy()
    methods = ("exact", *args.compare)

    ############# Build the sweep ##############
    if args.line:
        start, end = parse_line(args.line)
        sweep = line_sweep(start, end, args.samples, args.z_m, methods, args.spacing)
    elif args.grid_plane:
        sweep = grid_sweep(
            args.grid_plane,
            args.z_m,
            args.grid_samples,
            args.grid_margin,
            args.grid_offset,
            methods,
        )
    else:
        sweep = canonical_sweep(args.sweep, args.samples, methods if args.compare else None)
        logger.info(f"Sweep {sweep.name} runs on its own element, zM={sweep.z_m}")

    ############# Evaluate and write ##############
    table = run_sweep(sweep, policy, progress=misc_args.progress)
    output = args.output or Path(misc_args.out_dir) / f"influence-{sweep.name}.csv"
    write_csv(output, table, "influence")

    flagged = int((table["flags"] != "").sum())
    paths = table["path"].value_counts().to_dict()
    logger.success(
        f"Evaluated {len(table)} points ({paths}); {flagged} points carry approximation flags."
    )


if __name__ == "__main__":
    sys.exit(run_cli(main, (Args, PolicyArgs, MiscArgs)))
