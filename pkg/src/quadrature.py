"""Brute-force panel quadrature, the centroid point-source approximation and an adaptive oracle.

Cells are built from x-strips: an nx x nz grid on the unit square (x, v) is mapped onto the
triangle by z = v * zM * (1 - x), and every node carries the exact Jacobian of that map, so
each cell is weighted by its true sub-area. The rectangle [0,1] x [0,zM] uses the same grid
with z = v * zM.

Sums run per x-node row (a fixed in-row order) and the row partials of a point are combined
with `math.fsum`, which is exact and therefore independent of chunking and thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal

import numpy as np
import torch
from loguru import logger

from src.errors import NoConvergence, NodeCollision, UsageError

DTYPE = torch.float64
DISTANCE_FLOOR = 1e-8
ON_PLANE_EPS = 1e-6
START_CELLS = 16
MAX_CELLS = 4096
CHUNK_ELEMENTS = 1 << 22

Rule = Literal["midpoint", "gauss-legendre"]
Shape = Literal["triangle", "rectangle"]
Target = Literal["potential", "all"]


@dataclass(frozen=True)
class QuadratureSpec:
    nx: int
    nz: int
    rule: Rule = "midpoint"
    order: int = 3

    def __post_init__(self):
        if self.nx < 1 or self.nz < 1:
            raise UsageError(f"Quadrature grid must be at least 1x1, got {self.nx}x{self.nz}.")
        if self.rule not in ("midpoint", "gauss-legendre"):
            raise UsageError(f"Unknown quadrature rule {self.rule}.")
        if self.order < 1:
            raise UsageError("Gauss-Legendre order must be positive.")

    @property
    def points_per_cell(self) -> int:
        return 1 if self.rule == "midpoint" else self.order

    @classmethod
    def parse(cls, text: str) -> "QuadratureSpec":
        """Parse names like ``quad100``, ``quad10x20`` or ``quad100-gl``."""
        name, _, rule = text.removeprefix("quad").partition("-")
        nx, _, nz = name.partition("x")
        rule = {"": "midpoint", "mid": "midpoint", "gl": "gauss-legendre"}.get(rule)
        if rule is None or not nx.isdigit() or (nz and not nz.isdigit()):
            raise UsageError(f"Cannot parse quadrature spec {text!r}.")
        return cls(int(nx), int(nz or nx), rule)


@dataclass
class OracleResult:
    potential: float
    flux: torch.Tensor
    refinement_levels: int
    estimated_error: float
    cells: int = 0
    converged: bool = True
    history: list[float] = field(default_factory=list)


@lru_cache(maxsize=16)
def _unit_nodes(n: int, rule: Rule, order: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Nodes and weights of a composite rule with n cells on [0, 1]."""
    if rule == "midpoint":
        nodes, weights = np.array([0.0]), np.array([2.0])
    else:
        nodes, weights = np.polynomial.legendre.leggauss(order)
    left = np.arange(n, dtype=np.float64)[:, None] / n
    x = (left + (nodes[None, :] + 1.0) / (2.0 * n)).reshape(-1)
    w = np.tile(weights / (2.0 * n), n)
    return torch.from_numpy(x), torch.from_numpy(w)


def cell_rule(
    zM: float, spec: QuadratureSpec, shape: Shape = "triangle"
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Node coordinates x, z and weights, each of shape (rows, nodes per row)."""
    x, wx = _unit_nodes(spec.nx, spec.rule, spec.order)
    v, wv = _unit_nodes(spec.nz, spec.rule, spec.order)
    height = zM * (1.0 - x) if shape == "triangle" else torch.full_like(x, zM)
    xs = x[:, None].expand(-1, v.numel())
    zs = height[:, None] * v[None, :]
    weights = (wx * height)[:, None] * wv[None, :]
    return xs, zs, weights


def _as_batch(P: torch.Tensor) -> tuple[torch.Tensor, bool]:
    P = torch.as_tensor(P, dtype=DTYPE)
    single = P.dim() == 1
    return P.reshape(-1, 3), single


def _sum_rows(
    P: torch.Tensor,
    xs: torch.Tensor,
    zs: torch.Tensor,
    weights: torch.Tensor,
    with_flux: bool,
    floor: float,
) -> torch.Tensor:
    """Per-row partial sums of shape (M, rows, 4): potential and the three flux components."""
    M, rows, per_row = P.shape[0], xs.shape[0], xs.shape[1]
    rows_per_chunk = max(1, CHUNK_ELEMENTS // max(1, M * per_row))
    partials = []
    for start in range(0, rows, rows_per_chunk):
        sl = slice(start, start + rows_per_chunk)
        dx = P[:, 0, None, None] - xs[None, sl]
        dz = P[:, 2, None, None] - zs[None, sl]
        dy = P[:, 1, None, None].expand_as(dx)
        r2 = dx**2 + dy**2 + dz**2
        if bool((r2 < floor**2).any()):
            raise NodeCollision("Field point coincides with a quadrature node.")
        inv_r = torch.rsqrt(r2)
        w = weights[None, sl]
        parts = [(w * inv_r).sum(dim=-1)]
        if with_flux:
            w_r3 = w * inv_r**3
            parts += [(w_r3 * dx).sum(dim=-1), (w_r3 * dy).sum(dim=-1), (w_r3 * dz).sum(dim=-1)]
        partials.append(torch.stack(parts, dim=-1))
    return torch.cat(partials, dim=1)


def _combine_rows(row_sums: torch.Tensor) -> torch.Tensor:
    M, _, K = row_sums.shape
    columns = row_sums.permute(0, 2, 1).tolist()
    totals = [[math.fsum(columns[m][k]) for k in range(K)] for m in range(M)]
    return torch.tensor(totals, dtype=DTYPE)


def quad_influence(
    zM: float,
    P: torch.Tensor,
    spec: QuadratureSpec,
    shape: Shape = "triangle",
    distance_floor: float = DISTANCE_FLOOR,
    with_flux: bool = True,
    exact_sum: bool = True,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Potential and flux (F = -grad Phi) of a unit source by an nx x nz product rule.

    `exact_sum=False` replaces the exactly rounded row combination by a plain tensor sum; the
    timing harness uses it so that Python-level summation does not dominate the measurement.
    """
    P, single = _as_batch(P)
    xs, zs, weights = cell_rule(zM, spec, shape)
    row_sums = _sum_rows(P, xs, zs, weights, with_flux, distance_floor)
    totals = _combine_rows(row_sums) if exact_sum else row_sums.sum(dim=1)
    potential = totals[:, 0]
    flux = totals[:, 1:] if with_flux else torch.zeros(P.shape[0], 3, dtype=DTYPE)
    if single:
        return potential[0], flux[0]
    return potential, flux


def centroid_influence(
    zM: float | torch.Tensor, P: torch.Tensor, distance_floor: float = DISTANCE_FLOOR
) -> tuple[torch.Tensor, torch.Tensor]:
    """Point-source approximation: the whole charge zM/2 sits at the centroid (1/3, 0, zM/3)."""
    P = torch.as_tensor(P, dtype=DTYPE)
    zM = torch.as_tensor(zM, dtype=DTYPE)
    centroid = torch.stack(
        torch.broadcast_tensors(torch.full_like(zM, 1.0 / 3.0), torch.zeros_like(zM), zM / 3.0),
        dim=-1,
    )
    offset = P - centroid
    distance = torch.linalg.norm(offset, dim=-1)
    if bool((distance < distance_floor).any()):
        raise NodeCollision("Field point coincides with the element centroid.")
    area = 0.5 * zM
    potential = area / distance
    flux = (area / distance**3).unsqueeze(-1) * offset
    return potential, flux


def _on_plane_normal_flux(zM: float, x: float, z: float, floor: float) -> float:
    """Limit of Fy from the +Y side for a point on the element plane."""
    edge_distances = (z, (zM * (1.0 - x) - z) / math.hypot(1.0, zM), x)
    corners = ((0.0, 0.0), (1.0, 0.0), (0.0, zM))
    corner_angles = (0.5 * math.pi, math.atan(zM), math.atan(1.0 / zM))
    for (cx, cz), angle in zip(corners, corner_angles):
        if math.hypot(x - cx, z - cz) < floor:
            return angle
    if min(edge_distances) < -floor:
        return 0.0
    if min(edge_distances) <= floor:
        return math.pi
    return 2.0 * math.pi


def _evaluate_level(
    zM: float,
    P: torch.Tensor,
    spec: QuadratureSpec,
    shape: Shape,
    floor: float,
    with_flux: bool = True,
) -> tuple[float, torch.Tensor | None]:
    if P[1] != 0:
        potential, flux = quad_influence(zM, P, spec, shape, floor, with_flux)
        return float(potential), flux if with_flux else None
    potential, _ = quad_influence(zM, P, spec, shape, floor, with_flux=False)
    if not with_flux:
        return float(potential), None
    # tangential flux from a symmetric pair straddling the plane, normal flux one-sided
    offset = torch.tensor([0.0, ON_PLANE_EPS, 0.0], dtype=DTYPE)
    _, above = quad_influence(zM, P + offset, spec, shape, floor)
    _, below = quad_influence(zM, P - offset, spec, shape, floor)
    flux = 0.5 * (above + below)
    if shape == "triangle":
        flux[1] = _on_plane_normal_flux(zM, float(P[0]), float(P[2]), floor)
    else:
        inside = 0 < float(P[0]) < 1 and 0 < float(P[2]) < zM
        flux[1] = 2.0 * math.pi if inside else 0.0
    return float(potential), flux


def adaptive_oracle(
    zM: float,
    P: torch.Tensor,
    tol: float = 1e-9,
    rule: Rule = "gauss-legendre",
    order: int = 3,
    max_cells: int = MAX_CELLS,
    start_cells: int = START_CELLS,
    target: Target = "all",
    shape: Shape = "triangle",
    distance_floor: float = DISTANCE_FLOOR,
) -> OracleResult:
    """Double the grid from `start_cells` until successive levels agree to `tol`.

    Agreement is measured as max(|dPhi|, |dF|_inf) against tol * max(1, |Phi|, |F|_inf).
    With target="potential" only the potential is compared and the flux is evaluated once,
    on the final grid. Raises `NoConvergence` carrying the last result when the level cap
    is reached.
    """
    if tol < 1e-12:
        raise UsageError(f"Oracle tolerance must be at least 1e-12, got {tol}.")
    if start_cells > max_cells:
        raise UsageError(f"Level cap {max_cells} is below the starting grid {start_cells}.")
    P = torch.as_tensor(P, dtype=DTYPE).reshape(3)
    with_flux = target == "all"
    n, level, change, converged = start_cells, 0, math.inf, False
    previous: tuple[float, torch.Tensor | None] | None = None
    history: list[float] = []
    while True:
        level += 1
        spec = QuadratureSpec(n, n, rule, order)
        potential, flux = _evaluate_level(zM, P, spec, shape, distance_floor, with_flux)
        if previous is not None:
            change = abs(potential - previous[0])
            scale = max(1.0, abs(potential))
            if with_flux:
                change = max(change, float((flux - previous[1]).abs().max()))
                scale = max(scale, float(flux.abs().max()))
            history.append(change)
            logger.debug(f"Oracle level {level} ({n}x{n}): change {change:.3e}")
            converged = change < tol * scale
        if converged or 2 * n > max_cells:
            break
        previous = (potential, flux)
        n *= 2

    if not with_flux:
        _, flux = _evaluate_level(zM, P, spec, shape, distance_floor)
    result = OracleResult(potential, flux, level, change, n, converged, history)
    if not converged:
        raise NoConvergence(
            f"Oracle did not reach tol {tol:.1e} at {n}x{n} cells (estimated error {change:.3e}).",
            result=result,
        )
    return result


def quad_rectangle_influence(
    zM: float, P: torch.Tensor, spec: QuadratureSpec, distance_floor: float = DISTANCE_FLOOR
) -> tuple[torch.Tensor, torch.Tensor]:
    return quad_influence(zM, P, spec, "rectangle", distance_floor)


def adaptive_rectangle_oracle(
    zM: float, P: torch.Tensor, tol: float = 1e-9, **kwargs
) -> OracleResult:
    return adaptive_oracle(zM, P, tol, shape="rectangle", **kwargs)
