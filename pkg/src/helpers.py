import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import pandas as pd
from dargparser import dArg, dargparse
from lightning import seed_everything
from loguru import logger

from dlib.frameworks.pytorch import configure_torch
from dlib.misc.ddict import load_kv_file, to_cli_flags
from src.errors import NumericalFailure, UsageError
from src.robust import EvalPolicy

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


############# Argument preprocessing ##############
def expand_config_file(argv: Sequence[str]) -> list[str]:
    """Replace `--config path` by the file's `--key=value` flags, placed before all other flags
    so that anything given explicitly on the command line wins."""
    argv = list(argv)
    remaining, injected = [], []
    i = 0
    while i < len(argv):
        token = argv[i]
        if token == "--config":
            if i + 1 >= len(argv):
                raise UsageError("--config expects a path.")
            path, i = argv[i + 1], i + 2
        elif token.startswith("--config="):
            path, i = token.split("=", 1)[1], i + 1
        else:
            remaining.append(token)
            i += 1
            continue
        if not Path(path).is_file():
            raise UsageError(f"Config file {path} does not exist.")
        try:
            entries = load_kv_file(path)
        except ValueError as e:
            raise UsageError(str(e)) from e
        logger.info(f"Loaded {len(entries)} settings from {path}")
        injected += to_cli_flags(entries)
    return injected + remaining


def normalize_line_argument(argv: Sequence[str]) -> list[str]:
    """`--line A B` -> `--line=A;B`, since argparse takes a point like -2,-2,-2 for a flag."""
    argv = list(argv)
    out = []
    i = 0
    while i < len(argv):
        if argv[i] == "--line":
            if i + 2 >= len(argv):
                raise UsageError("--line expects two points, e.g. --line -2,-2,-2 2,2,2")
            out.append(f"--line={argv[i + 1]};{argv[i + 2]}")
            i += 3
        else:
            out.append(argv[i])
            i += 1
    return out


def parse_point(text: str) -> tuple[float, float, float]:
    parts = text.replace(" ", "").split(",")
    try:
        point = tuple(float(p) for p in parts)
    except ValueError:
        raise UsageError(f"Cannot parse point {text!r}; expected x,y,z.")
    if len(point) != 3 or not all(math.isfinite(c) for c in point):
        raise UsageError(f"Cannot parse point {text!r}; expected three finite numbers x,y,z.")
    return point


def parse_line(text: str) -> tuple[tuple[float, float, float], tuple[float, float, float]]:
    start, sep, end = text.partition(";")
    if not sep:
        start, _, end = text.partition(" ")
    if not end:
        raise UsageError(f"Cannot parse line {text!r}; expected two points.")
    return parse_point(start), parse_point(end)


def require_positive(**values: float | int | None) -> None:
    for name, value in values.items():
        if value is None:
            continue
        if not (math.isfinite(value) and value > 0):
            raise UsageError(f"--{name} must be positive and finite, got {value}.")


############# CSV output ##############
def write_csv(path: str | Path, table: pd.DataFrame, schema: str) -> Path:
    """Comma-separated table behind a `# schema: <name>/<version>` line, floats at 17 digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(f"# schema: {schema}/{SCHEMA_VERSION}\n")
        table.to_csv(f, index=False, float_format="%.17g", na_rep="nan")
    logger.info(f"Wrote {len(table)} rows to {path}")
    return path


def read_csv(path: str | Path) -> tuple[str, pd.DataFrame]:
    """Returns the schema tag and the table of a file written by `write_csv`."""
    path = Path(path)
    with open(path) as f:
        header = f.readline().strip()
    if not header.startswith("# schema:"):
        raise UsageError(f"{path} has no schema header line.")
    table = pd.read_csv(path, comment="#", keep_default_na=False, na_values=["nan", "NaN"])
    return header.removeprefix("# schema:").strip(), table


############# Entry points ##############
def parse_args(dataclasses: tuple, argv: Sequence[str] | None = None):
    argv = list(sys.argv[1:] if argv is None else argv)
    argv = normalize_line_argument(expand_config_file(argv))
    # dargparse reads sys.argv
    saved = sys.argv
    sys.argv = [saved[0] if saved else "bem", *argv]
    try:
        return dargparse(dataclasses=dataclasses)
    finally:
        sys.argv = saved


def run_cli(main: Callable, dataclasses: tuple, argv: Sequence[str] | None = None) -> int:
    """Parse the argument groups, run `main` and map the outcome to an exit code:
    0 success, 1 usage error, 2 numerical failure."""
    try:
        parsed_arg_groups = parse_args(dataclasses, argv)
    except UsageError as e:
        logger.error(f"Usage error: {e}")
        return EXIT_USAGE
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    try:
        main(parsed_arg_groups)
    except UsageError as e:
        logger.error(f"Usage error: {e}")
        return EXIT_USAGE
    except NumericalFailure as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    return EXIT_OK


############# Shared argument groups ##############
@dataclass
class PolicyArgs:
    distance_floor: float = dArg(
        default=1e-8, help="Distances below this (normalised units) are treated as zero."
    )
    special_band: float = dArg(
        default=1e-6,
        help="Points closer than this to a corner, an edge or the element plane are special.",
    )
    far_field: float | None = dArg(
        default=None,
        help="Use the centroid approximation beyond this multiple of the longest element side (>= 2). Off by default.",  # noqa: E501
    )
    fallback_tol: float = dArg(default=1e-9, help="Relative tolerance of the fallback quadrature.")
    fallback_max_cells: int = dArg(
        default=4096, help="Level cap of the fallback quadrature (cells per axis)."
    )
    fallback_rule: str = dArg(
        default="gauss-legendre", help='Fallback quadrature rule, "gauss-legendre" or "midpoint".'
    )

    def to_policy(self) -> EvalPolicy:
        if self.fallback_rule not in ("gauss-legendre", "midpoint"):
            raise UsageError(f"Unknown fallback rule {self.fallback_rule}.")
        return EvalPolicy(
            distance_floor=self.distance_floor,
            special_band=self.special_band,
            far_field=self.far_field,
            fallback_tol=self.fallback_tol,
            fallback_max_cells=self.fallback_max_cells,
            fallback_rule=self.fallback_rule,
        )


@dataclass
class MiscArgs:
    seed: int | None = dArg(default=0, help="Seed for every randomised study.")
    threads: int | None = dArg(default=None, help="Number of torch intra-op threads.")
    force_deterministic: bool = dArg(
        default=False, help="Force PyTorch operations to be deterministic."
    )
    out_dir: str = dArg(default="./results", help="Directory for the CSV outputs.", aliases="-o")
    progress: bool = dArg(default=True, help="Show progress bars.")
    config: str | None = dArg(
        default=None,
        help="key=value file whose entries are applied before the command line flags.",
    )

    def __post_init__(self):
        require_positive(threads=self.threads)


def setup_run(parsed_arg_groups: tuple) -> None:
    """Configure torch, seed and echo the configuration."""
    misc_args = next(group for group in parsed_arg_groups if isinstance(group, MiscArgs))
    configure_torch(misc_args.threads, misc_args.force_deterministic)
    misc_args.seed = seed_everything(misc_args.seed)
    for arg_group in parsed_arg_groups:
        logger.info(arg_group)
