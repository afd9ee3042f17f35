"""Collocation BEM for a unit square conducting plate held at unit potential.

The plate occupies [0,1] x [0,1] of the global XZ plane (y = 0). Kernels drop 1/(4 pi eps0),
so the total charge sum(sigma_j * area_j) of the unit-volt solution is directly the
capacitance in units of 4 pi eps0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
import pandas as pd
import torch
from loguru import logger

from src.errors import InsufficientSamples, SingularMatrix, UnresolvableEvaluation, UsageError
from src.geometry import (
    DTYPE,
    ElementBatch,
    PanelElement,
    element_from_vertices,
    split_rectangle,
    stack_elements,
)
from src.robust import EvalPolicy, influence_batch

Orientation = Literal["anti", "main"]
PIVOT_TOL = 1e-14
CORNER_BAND = 0.3
# the corner-adjacent element sits below r = 0.02 from n = 32 on and is left out of the fit
DEFAULT_WINDOW = (0.02, 0.15)
STABILITY_RADII = (0.2, 0.3, 0.4, 0.5)


@dataclass(frozen=True, eq=False)
class PlateMesh:
    n: int
    elements: list[PanelElement]
    vertices: torch.Tensor  # (E, 3, 3), right-angle vertex first
    collocation_points: torch.Tensor  # (E, 3)
    orientation: Orientation = "anti"
    collocation: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def areas(self) -> torch.Tensor:
        return torch.tensor([e.area for e in self.elements], dtype=DTYPE)

    @property
    def centroids(self) -> torch.Tensor:
        return self.vertices.mean(dim=1)

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    def batch(self, strengths: torch.Tensor | None = None) -> ElementBatch:
        elements = self.elements
        if strengths is not None:
            elements = [e.with_strength(float(s)) for e, s in zip(elements, strengths)]
        return stack_elements(elements)


@dataclass
class BemSystem:
    matrix: torch.Tensor
    rhs: torch.Tensor
    solution: torch.Tensor | None = None
    residual_norm: float = math.nan
    fallback_count: int = 0


@dataclass(frozen=True)
class CapacitanceReport:
    n: int
    n_elements: int
    cap_over_4pi_eps0: float
    residual_norm: float


@dataclass(frozen=True)
class CornerProfile:
    samples: list[tuple[float, float]]
    fit_slope: float
    fit_window: tuple[float, float]
    fit_intercept: float = math.nan
    n_fit_samples: int = 0


@dataclass
class CornerStability:
    """Corner profiles of a mesh sequence compared at common distances from the corner."""

    monotone: dict[int, bool]
    differences: list[float]  # max |d log sigma| between successive meshes

    @property
    def shrinking(self) -> bool:
        return all(b < a for a, b in zip(self.differences, self.differences[1:]))

    @property
    def stable(self) -> bool:
        return all(self.monotone.values()) and self.shrinking


def mesh_unit_plate(
    n: int,
    orientation: Orientation = "anti",
    collocation: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3),
) -> PlateMesh:
    """n x n squares, each split along the same diagonal into two right triangles.

    "anti" splits every square along its (x+h, z)-(x, z+h) diagonal, so the right angles sit
    at the lower-left and upper-right corners and the mesh is symmetric under x <-> z and under
    rotation by 180 degrees. "main" is its mirror image under x -> 1 - x. `collocation` holds
    barycentric weights of the collocation point over the element vertices.
    """
    if n < 1:
        raise UsageError(f"Mesh size must be at least 1, got {n}.")
    weights = torch.tensor(collocation, dtype=DTYPE)
    if weights.numel() != 3 or bool((weights < 0).any()) or abs(float(weights.sum()) - 1) > 1e-12:
        raise UsageError(f"Collocation weights must be nonnegative and sum to one: {collocation}.")
    h = 1.0 / n
    triples = []
    for j in range(n):
        for i in range(n):
            if orientation == "anti":
                corner, side_a = (i * h, 0.0, j * h), (h, 0.0, 0.0)
            elif orientation == "main":
                corner, side_a = ((i + 1) * h, 0.0, j * h), (-h, 0.0, 0.0)
            else:
                raise UsageError(f"Unknown split orientation {orientation}.")
            triples.extend(split_rectangle(corner, side_a, (0.0, 0.0, h)))
    vertices = torch.stack([torch.stack(t) for t in triples])
    elements = [element_from_vertices(*t) for t in triples]
    collocation_points = torch.einsum("k,ekj->ej", weights, vertices)
    return PlateMesh(n, elements, vertices, collocation_points, orientation, tuple(collocation))


def assemble(
    mesh: PlateMesh, policy: EvalPolicy = EvalPolicy(), progress: bool = False
) -> BemSystem:
    """A_ij = potential at collocation point i of unit density on element j; rhs = 1."""
    logger.info(f"Assembling {mesh.n_elements}x{mesh.n_elements} influence matrix (n={mesh.n})")
    try:
        batch = influence_batch(mesh.batch(), mesh.collocation_points, policy, progress=progress)
    except UnresolvableEvaluation as e:
        raise UnresolvableEvaluation(
            f"Assembly failed at (i, j) = {e.pair} for n={mesh.n}: {e}", e.pair
        ) from e
    counts = batch.flag_counts()
    if counts:
        logger.info(f"Fallback flags during assembly: {dict(counts)}")
    rhs = torch.ones(mesh.n_elements, dtype=DTYPE)
    return BemSystem(batch.potential, rhs, fallback_count=len(batch.flags))


def crout_decompose(matrix: torch.Tensor, pivot_tol: float = PIVOT_TOL):
    """Crout LU with row pivoting, PA = LU, L lower and U unit upper, stored compactly."""
    a = torch.as_tensor(matrix, dtype=DTYPE).clone()
    n = a.shape[0]
    if a.dim() != 2 or a.shape[1] != n:
        raise UsageError(f"Expected a square matrix, got shape {tuple(a.shape)}.")
    if not bool(torch.isfinite(a).all()):
        raise SingularMatrix("Matrix has non-finite entries.")
    row_scale = a.abs().amax(dim=1)
    perm = torch.arange(n)
    for j in range(n):
        if j > 0:
            a[j:, j] -= a[j:, :j] @ a[:j, j]
        p = j + int(torch.argmax(a[j:, j].abs()))
        if p != j:
            a[[j, p]] = a[[p, j]]
            perm[[j, p]] = perm[[p, j]]
        pivot = a[j, j]
        if abs(float(pivot)) < pivot_tol * float(row_scale[perm[j]]) or float(pivot) == 0.0:
            raise SingularMatrix(f"Pivot {float(pivot):.3e} in column {j} is negligible.", j)
        if j + 1 < n:
            if j > 0:
                a[j, j + 1 :] -= a[j, :j] @ a[:j, j + 1 :]
            a[j, j + 1 :] /= pivot
    return a, perm


def solve_crout(matrix: torch.Tensor, rhs: torch.Tensor) -> tuple[torch.Tensor, float]:
    """Solve A x = b by Crout LU; returns x and max_i |A x - b|_i."""
    matrix = torch.as_tensor(matrix, dtype=DTYPE)
    rhs = torch.as_tensor(rhs, dtype=DTYPE)
    lu, perm = crout_decompose(matrix)
    lower = torch.tril(lu)
    upper = torch.triu(lu, diagonal=1) + torch.eye(lu.shape[0], dtype=DTYPE)
    y = torch.linalg.solve_triangular(lower, rhs[perm].unsqueeze(-1), upper=False)
    x = torch.linalg.solve_triangular(upper, y, upper=True, unitriangular=True).squeeze(-1)
    residual_norm = float((matrix @ x - rhs).abs().max())
    return x, residual_norm


def solve(system: BemSystem) -> BemSystem:
    system.solution, system.residual_norm = solve_crout(system.matrix, system.rhs)
    logger.info(f"Solved system of size {system.rhs.numel()}, residual {system.residual_norm:.3e}")
    return system


def capacitance(
    mesh: PlateMesh, solution: torch.Tensor, residual_norm: float = math.nan
) -> CapacitanceReport:
    total = float(torch.dot(solution, mesh.areas))
    return CapacitanceReport(mesh.n, mesh.n_elements, total, residual_norm)


def corner_samples(
    mesh: PlateMesh, solution: torch.Tensor, corner=(0.0, 0.0, 0.0)
) -> list[tuple[float, float]]:
    """(r, sigma) of the elements whose centroids lie in the band along the corner diagonal.

    Only the half diagonal between the corner and the plate centre is sampled.
    """
    corner = torch.as_tensor(corner, dtype=DTYPE)
    inward = torch.tensor([0.5 - float(corner[0]), 0.0, 0.5 - float(corner[2])], dtype=DTYPE)
    half_diagonal = float(torch.linalg.norm(inward))
    inward = inward / half_diagonal
    offset = mesh.centroids - corner
    along = offset @ inward
    across = torch.linalg.norm(offset - along.unsqueeze(-1) * inward, dim=-1)
    selected = (across < CORNER_BAND * mesh.spacing) & (along > 0) & (along < half_diagonal)
    r = torch.linalg.norm(offset[selected], dim=-1)
    sigma = solution[selected]
    order = torch.argsort(r)
    return list(zip(r[order].tolist(), sigma[order].tolist()))


def corner_profile(
    mesh: PlateMesh,
    solution: torch.Tensor,
    window: tuple[float, float] = DEFAULT_WINDOW,
    corner=(0.0, 0.0, 0.0),
) -> CornerProfile:
    """Fit log sigma = a - s log r over the samples with r_min < r <= r_max."""
    r_min, r_max = window
    if not r_min < r_max:
        raise UsageError(f"Corner fit window must satisfy r_min < r_max, got {window}.")
    samples = corner_samples(mesh, solution, corner)
    fit = [(r, sigma) for r, sigma in samples if r_min < r <= r_max]
    if len(fit) < 4:
        raise InsufficientSamples(
            f"Only {len(fit)} corner samples in window {window} for n={mesh.n}; need at least 4."
        )
    log_r = np.log([r for r, _ in fit])
    log_sigma = np.log([sigma for _, sigma in fit])
    slope, intercept = np.polyfit(log_r, log_sigma, 1)
    return CornerProfile(samples, float(-slope), (r_min, r_max), float(intercept), len(fit))


def profile_at(samples: list[tuple[float, float]], radii) -> np.ndarray:
    """log sigma of a corner profile at `radii`, linear in log r between samples."""
    r = np.array([s[0] for s in samples])
    radii = np.asarray(radii, dtype=np.float64)
    if len(r) < 2 or radii.min() < r[0] or radii.max() > r[-1]:
        covered = f"[{r[0]:.3g}, {r[-1]:.3g}]" if len(r) else "nothing"
        raise InsufficientSamples(f"Corner samples cover r in {covered}, not {radii.tolist()}.")
    log_sigma = np.log([s[1] for s in samples])
    return np.interp(np.log(radii), np.log(r), log_sigma)


def corner_stability(
    profiles: dict[int, list[tuple[float, float]]], radii=STABILITY_RADII
) -> CornerStability:
    """Monotonicity of every profile and the change between successive mesh sizes."""
    monotone = {
        n: all(b[1] < a[1] for a, b in zip(samples, samples[1:]))
        for n, samples in profiles.items()
    }
    ordered = [profile_at(profiles[n], radii) for n in sorted(profiles)]
    differences = [float(np.abs(b - a).max()) for a, b in zip(ordered, ordered[1:])]
    return CornerStability(monotone, differences)


def field_at(
    mesh: PlateMesh,
    solution: torch.Tensor,
    P: torch.Tensor,
    policy: EvalPolicy = EvalPolicy(),
    progress: bool = False,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Potential (M,) and flux (M, 3) of the solved charge distribution at points P."""
    batch = influence_batch(mesh.batch(solution), P, policy, progress=progress)
    return batch.potential.sum(dim=1), batch.flux.sum(dim=1)


def reflect_mesh(mesh: PlateMesh) -> PlateMesh:
    """Mirror image of the plate mesh under x -> 1 - x (swaps the split orientation)."""
    other: Orientation = "main" if mesh.orientation == "anti" else "anti"
    return mesh_unit_plate(mesh.n, other, mesh.collocation)


def cell_index(mesh: PlateMesh) -> torch.Tensor:
    """Index j * n + i of the mesh square holding every element."""
    cells = torch.floor(mesh.centroids[:, [0, 2]] * mesh.n).long().clamp(0, mesh.n - 1)
    return cells[:, 1] * mesh.n + cells[:, 0]


def cell_means(mesh: PlateMesh, solution: torch.Tensor) -> torch.Tensor:
    """Area-weighted mean sigma per mesh square, shaped (n, n) and indexed [j, i]."""
    index = cell_index(mesh)
    areas = mesh.areas
    charge = torch.zeros(mesh.n * mesh.n, dtype=DTYPE).index_add_(0, index, solution * areas)
    area = torch.zeros(mesh.n * mesh.n, dtype=DTYPE).index_add_(0, index, areas)
    return (charge / area).reshape(mesh.n, mesh.n)


def mirror_averaged_solution(
    mesh: PlateMesh, solution: torch.Tensor, mirrored: PlateMesh, mirrored_solution: torch.Tensor
) -> torch.Tensor:
    """Average sigma of a mesh and of its mirror image over the same squares, on the first mesh.

    Each element keeps half its own density plus half the mean density the mirrored mesh puts on
    the same square. Square means of the result carry the full symmetry of the plate, which
    neither diagonal split has on its own.
    """
    if mirrored.n != mesh.n or mirrored.orientation == mesh.orientation:
        raise UsageError("The mirrored mesh must have the same n and the other orientation.")
    other = cell_means(mirrored, mirrored_solution).reshape(-1)
    return 0.5 * (solution + other[cell_index(mesh)])


def solve_plate(
    n: int, policy: EvalPolicy = EvalPolicy(), orientation: Orientation = "anti", progress=False
) -> tuple[PlateMesh, BemSystem]:
    mesh = mesh_unit_plate(n, orientation)
    system = solve(assemble(mesh, policy, progress=progress))
    return mesh, system


def mesh_table(mesh: PlateMesh, solution: torch.Tensor) -> pd.DataFrame:
    """Element vertices, centroid, area and sigma, one row per element."""
    vertices = mesh.vertices.reshape(-1, 9).numpy()
    columns = [f"v{k}{axis}" for k in range(3) for axis in "xyz"]
    table = pd.DataFrame(vertices, columns=columns)
    centroids = mesh.centroids.numpy()
    for k, axis in enumerate("xyz"):
        table[f"c{axis}"] = centroids[:, k]
    table["area"] = mesh.areas.numpy()
    table["sigma"] = solution.numpy()
    table.insert(0, "element", np.arange(mesh.n_elements))
    return table


def dump_matrix(system: BemSystem, path: str | Path) -> None:
    np.save(Path(path), system.matrix.numpy())


@dataclass(frozen=True)
class ReferenceValue:
    """Published capacitance of the unit square plate, in units of 4 pi eps0. Reference only."""

    source: str
    method: str
    value: float
    uncertainty: float | None = None

    def __str__(self) -> str:
        value = f"{self.value}"
        if self.uncertainty is not None:
            value += f" +- {self.uncertainty:g}"
        return f"{self.source:<28} {self.method:<44} {value}"


REFERENCE_CAPACITANCES = (
    ReferenceValue("Maxwell", "Surface Charge", 0.3607),
    ReferenceValue("Reitan", "Surface Charge", 0.362),
    ReferenceValue("Solomon", "Surface Charge", 0.367),
    ReferenceValue(
        "Goto et al. (1992)", "Refined Surface Charge and Extrapolation", 0.3667892, 1.1e-6
    ),
    ReferenceValue("Read", "Refined Boundary Element and Extrapolation", 0.3667874, 1e-7),
    ReferenceValue("Mansfield", "Numerical Path Integration", 0.36684),
    ReferenceValue("Wintle (2004)", "Random Walk", 0.36, 0.01),
    ReferenceValue(
        "Exact-kernel triangular BEM", "Exact triangle influences, no extrapolation", 0.3660587
    ),
)
BENCHMARK_CAPACITANCE = 0.3667874
