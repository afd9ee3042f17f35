"""
Capacitance of a unit square conducting plate at unit potential and the charge density near its
corner, by collocation with exact right-triangle influences.

Each n in --n meshes the plate into n x n squares split into 2 n^2 right triangles, assembles
and solves the dense collocation system with Crout LU, reports C / 4 pi eps0 and fits the
power law sigma ~ r^-s along the corner diagonal. A comparison block with published values is
printed at the end.

Usage:
    python plate.py --n 4 8 16 32
    python plate.py --n 32 --fit_window 0.02 0.3 --dump_matrix
    python plate.py --n 8 16 --mirror_average --orientation main
"""

import math
import sys
from dataclasses import dataclass
from pathlib import Path

import pandas as pd
from dargparser import dArg
from loguru import logger

from src.errors import InsufficientSamples, NumericalFailure, UsageError
from src.helpers import MiscArgs, PolicyArgs, require_positive, run_cli, setup_run, write_csv
from src.solver import (
    BENCHMARK_CAPACITANCE,
    REFERENCE_CAPACITANCES,
    assemble,
    capacitance,
    corner_profile,
    corner_samples,
    corner_stability,
    dump_matrix,
    mesh_table,
    mesh_unit_plate,
    mirror_averaged_solution,
    reflect_mesh,
    solve,
)

MAX_DENSE_N = 64
RESIDUAL_TOL = 1e-8
CAPACITANCE_CORRIDOR = (0.355, 0.368)
BENCHMARK_DEVIATION = 0.008


@dataclass
class Args:
    n: list[int] = dArg(default=[4, 8, 16, 32], help="Squares per plate side, nondecreasing.")
    orientation: str = dArg(default="anti", help='Diagonal split of the squares, "anti" or "main".')
    collocation: list[float] = dArg(
        default=[1 / 3, 1 / 3, 1 / 3],
        help="Barycentric weights of the collocation point over the element vertices.",
    )
    mirror_average: bool = dArg(
        default=False,
        help="Also solve the mirrored mesh and report the mirror-averaged density.",
    )
    fit_window: list[float] = dArg(
        default=[0.02, 0.15], help="Corner distances r_min < r <= r_max used in the slope fit."
    )
    dump_matrix: bool = dArg(default=False, help="Save every influence matrix as .npy.")
    write_mesh: bool = dArg(default=True, help="Write the mesh and solved densities per n.")

    def __post_init__(self):
        if not self.n:
            raise UsageError("--n needs at least one mesh size.")
        for n in self.n:
            require_positive(n=n)
            if n > MAX_DENSE_N:
                raise UsageError(f"n={n} exceeds the dense solve budget of n <= {MAX_DENSE_N}.")
        if any(b < a for a, b in zip(self.n, self.n[1:])):
            raise UsageError(f"--n must be nondecreasing, got {self.n}.")
        if self.orientation not in ("anti", "main"):
            raise UsageError(f"Unknown orientation {self.orientation}.")
        if len(self.fit_window) != 2 or not self.fit_window[0] < self.fit_window[1]:
            raise UsageError(f"--fit_window needs r_min < r_max, got {self.fit_window}.")
        if len(self.collocation) != 3:
            raise UsageError("--collocation needs three barycentric weights.")


def solve_mesh(mesh, policy, progress):
    system = solve(assemble(mesh, policy, progress=progress))
    if system.residual_norm > RESIDUAL_TOL:
        logger.warning(
            f"n={mesh.n}: boundary condition residual {system.residual_norm:.3e} "
            f"exceeds {RESIDUAL_TOL:g}"
        )
    return system


def log_comparison(reports: pd.DataFrame) -> None:
    logger.info("Capacitance of the unit square plate, C / 4 pi eps0:")
    logger.info("  reference values (not used in any computation):")
    for reference in REFERENCE_CAPACITANCES:
        logger.info(f"    {reference}")
    logger.info("  this run:")
    for row in reports.itertuples():
        deviation = (row.capacitance - BENCHMARK_CAPACITANCE) / BENCHMARK_CAPACITANCE
        slope = "" if math.isnan(row.corner_slope) else f", corner slope {row.corner_slope:.6f}"
        logger.info(
            f"    n={row.n:<4} elements={row.elements:<6} {row.capacitance:.7f} "
            f"({100 * deviation:+.3f}% from {BENCHMARK_CAPACITANCE}){slope}"
        )


def log_corridor(reports: pd.DataFrame) -> None:
    """Compare the capacitances with the published corridor. Coarse meshes fall below it."""
    if not reports["capacitance"].diff().dropna().gt(0).all():
        logger.warning("Capacitance does not increase strictly with n.")
    lo, hi = CAPACITANCE_CORRIDOR
    for row in reports.itertuples():
        if not lo <= row.capacitance <= hi:
            logger.warning(f"n={row.n}: C = {row.capacitance:.7f} lies outside [{lo}, {hi}]")
    finest = reports.iloc[-1]
    deviation = abs(finest["capacitance"] - BENCHMARK_CAPACITANCE) / BENCHMARK_CAPACITANCE
    if deviation > BENCHMARK_DEVIATION:
        logger.warning(
            f"n={finest['n']}: {100 * deviation:.3f}% from {BENCHMARK_CAPACITANCE}, "
            f"more than {100 * BENCHMARK_DEVIATION:g}%"
        )


def log_corner_stability(profiles: dict[int, list[tuple[float, float]]]) -> None:
    if len(profiles) < 2:
        return
    try:
        stability = corner_stability(profiles)
    except InsufficientSamples as e:
        logger.warning(f"Skipping corner stability check: {e}")
        return
    for n, monotone in stability.monotone.items():
        if not monotone:
            logger.warning(f"n={n}: corner profile is not monotone in r")
    changes = ", ".join(f"{d:.3e}" for d in stability.differences)
    message = f"Corner profile change between successive meshes: {changes}"
    (logger.success if stability.stable else logger.warning)(message)


@logger.catch(reraise=True)
def main(parsed_arg_groups: tuple[Args, PolicyArgs, MiscArgs]):
    args, policy_args, misc_args = parsed_arg_groups
    setup_run(parsed_arg_groups)
    policy = policy_args.to_policy()
    out_dir = Path(misc_args.out_dir)
    window = tuple(args.fit_window)

    rows, profiles = [], {}
    for n in args.n:
        ############# Mesh, assemble, solve ##############
        mesh = mesh_unit_plate(n, args.orientation, tuple(args.collocation))
        try:
            system = solve_mesh(mesh, policy, misc_args.progress)
        except NumericalFailure:
            logger.error(f"Plate solve failed for n={n} ({mesh.n_elements} elements)")
            raise
        solution = system.solution
        if args.mirror_average:
            mirrored = reflect_mesh(mesh)
            mirrored_system = solve_mesh(mirrored, policy, misc_args.progress)
            solution = mirror_averaged_solution(mesh, solution, mirrored, mirrored_system.solution)
        report = capacitance(mesh, solution, system.residual_norm)

        ############# Corner profile ##############
        slope, intercept, fit_samples = float("nan"), float("nan"), 0
        try:
            profile = corner_profile(mesh, solution, window)
            slope, intercept, fit_samples = (
                profile.fit_slope,
                profile.fit_intercept,
                profile.n_fit_samples,
            )
            samples = profile.samples
        except InsufficientSamples as e:
            logger.warning(f"Skipping corner fit: {e}")
            samples = corner_samples(mesh, solution)
        profiles[n] = samples
        corner = pd.DataFrame(samples, columns=["r", "sigma"])
        corner["in_fit"] = (corner["r"] > window[0]) & (corner["r"] <= window[1])
        write_csv(out_dir / f"plate-corner-n{n}.csv", corner, "plate-corner")

        if args.write_mesh:
            write_csv(out_dir / f"plate-mesh-n{n}.csv", mesh_table(mesh, solution), "plate-mesh")
        if args.dump_matrix:
            dump_matrix(system, out_dir / f"plate-matrix-n{n}.npy")

        logger.info(
            f"n={n}: C/4pi eps0 = {report.cap_over_4pi_eps0:.7f}, "
            f"residual {report.residual_norm:.2e}, corner slope {slope:.6f} ({fit_samples} samples)"
        )
        rows.append(
            {
                "n": n,
                "elements": report.n_elements,
                "capacitance": report.cap_over_4pi_eps0,
                "residual": report.residual_norm,
                "fallbacks": system.fallback_count,
                "corner_slope": slope,
                "corner_intercept": intercept,
                "fit_samples": fit_samples,
                "fit_r_min": window[0],
                "fit_r_max": window[1],
                "mirror_average": args.mirror_average,
            }
        )

    reports = pd.DataFrame(rows)
    write_csv(out_dir / "plate-capacitance.csv", reports, "plate-capacitance")
    log_comparison(reports)
    log_corridor(reports)
    log_corner_stability(profiles)
    logger.success("Plate study finished!")


if __name__ == "__main__":
    sys.exit(run_cli(main, (Args, PolicyArgs, MiscArgs)))
