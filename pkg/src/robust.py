"""Classify field points, dispatch to the exact kernels and fall back to quadrature.

Every (point, element) pair goes through the same steps:

1. transform the point into the normalised element frame,
2. classify it (corner > edge > plane priority, optional far-field switch),
3. evaluate generic and on-plane points with the exact kernels, far-field points with the
   centroid approximation, special points and failed kernel entries with the adaptive oracle,
4. scale back (potential times frame scale, flux unscaled), rotate to the global frame and
   multiply by the element strength.

Flags are returned with the results and never accumulated in shared state.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum, IntEnum

import torch
from loguru import logger
from tqdm import tqdm

from src.errors import NoConvergence, NodeCollision, UnresolvableEvaluation, UsageError
from src.geometry import (
    DTYPE,
    ElementBatch,
    PanelElement,
    TrianglePrimitive,
    as_points,
    stack_elements,
)
from src.kernels import FailureCode, KernelInputs, evaluate
from src.quadrature import Rule, adaptive_oracle, centroid_influence

PAIRS_PER_CHUNK = 1 << 18


class LocationKind(IntEnum):
    GENERIC = 0
    NEAR_CORNER = 1
    NEAR_EDGE = 2
    ON_PLANE_INSIDE = 3
    ON_PLANE_OUTSIDE = 4
    FAR_FIELD = 5


@dataclass(frozen=True)
class LocationClass:
    kind: LocationKind
    distance_scale: float
    index: int | None = None

    def __str__(self) -> str:
        name = "".join(part.capitalize() for part in self.kind.name.split("_"))
        return f"{name}({self.index})" if self.index is not None else name


class FlagCode(Enum):
    NONE = "None"
    CORNER_LIMIT = "CornerLimit"
    EDGE_LIMIT = "EdgeLimit"
    BRANCH_CUT = "BranchCut"
    ROUND_OFF = "RoundOff"
    NON_FINITE = "NonFiniteResult"
    NEGATIVE_POTENTIAL = "NegativePotential"
    FALLBACK_QUADRATURE = "FallbackQuadrature"


FAILURE_FLAGS = {
    FailureCode.LOG_DOMAIN: FlagCode.EDGE_LIMIT,
    FailureCode.NON_FINITE: FlagCode.NON_FINITE,
    FailureCode.NEGATIVE_POTENTIAL: FlagCode.NEGATIVE_POTENTIAL,
    FailureCode.ROUND_OFF: FlagCode.ROUND_OFF,
    FailureCode.BRANCH_CUT: FlagCode.BRANCH_CUT,
}


@dataclass(frozen=True)
class ApproxFlag:
    code: FlagCode
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.code.value}:{self.detail}" if self.detail else self.code.value


class EvalPath(IntEnum):
    EXACT = 0
    FALLBACK = 1
    FAR_FIELD = 2

    @property
    def label(self) -> str:
        return ("Exact", "Fallback", "FarFieldApprox")[self]


@dataclass(frozen=True)
class EvalPolicy:
    distance_floor: float = 1e-8
    special_band: float = 1e-6
    far_field: float | None = None
    fallback_tol: float = 1e-9
    fallback_max_cells: int = 4096
    fallback_rule: Rule = "gauss-legendre"

    def __post_init__(self):
        for name in ("distance_floor", "special_band", "fallback_tol"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise UsageError(f"{name} must be positive and finite, got {value}.")
        if self.distance_floor >= self.special_band:
            raise UsageError("distance_floor must be smaller than special_band.")
        if self.far_field is not None and not self.far_field >= 2:
            raise UsageError(f"far_field threshold must be at least 2, got {self.far_field}.")
        if self.fallback_max_cells < 16:
            raise UsageError("fallback_max_cells must be at least 16.")

    @classmethod
    def for_timing(cls) -> "EvalPolicy":
        return cls(far_field=20.0)


@dataclass
class InfluenceResult:
    potential: float
    flux: torch.Tensor
    path: EvalPath
    flags: list[ApproxFlag] = field(default_factory=list)
    imag_residue: float = 0.0
    estimated_error: float = 0.0


@dataclass
class InfluenceBatch:
    """Influences of E elements at N points; flags and oracle errors are sparse by pair."""

    potential: torch.Tensor  # (N, E)
    flux: torch.Tensor  # (N, E, 3)
    path: torch.Tensor  # (N, E)
    imag_residue: torch.Tensor  # (N, E)
    flags: dict[tuple[int, int], list[ApproxFlag]] = field(default_factory=dict)
    estimated_error: dict[tuple[int, int], float] = field(default_factory=dict)

    def flag_counts(self) -> Counter:
        return Counter(flag.code.value for flags in self.flags.values() for flag in flags)

    def result(self, i: int, j: int) -> InfluenceResult:
        return InfluenceResult(
            potential=float(self.potential[i, j]),
            flux=self.flux[i, j].clone(),
            path=EvalPath(int(self.path[i, j])),
            flags=list(self.flags.get((i, j), [])),
            imag_residue=float(self.imag_residue[i, j]),
            estimated_error=self.estimated_error.get((i, j), 0.0),
        )


def classify_batch(
    zM: torch.Tensor, P: torch.Tensor, policy: EvalPolicy
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Vectorised classification in normalised units: (kind, index, distance scale)."""
    X, Y, Z = P[..., 0], P[..., 1], P[..., 2]
    abs_y = Y.abs()
    s = torch.sqrt(1.0 + zM**2)
    zero = torch.zeros_like(X)

    corner_x = torch.stack([zero, zero + 1.0, zero], dim=-1)
    corner_z = torch.stack([zero, zero, zero + zM], dim=-1)
    corner_distance = torch.sqrt(
        (X.unsqueeze(-1) - corner_x) ** 2 + (Y**2).unsqueeze(-1) + (Z.unsqueeze(-1) - corner_z) ** 2
    )

    d = torch.stack([Z, ((1.0 - X) * zM - Z) / s, X], dim=-1)
    l_start = torch.stack([-X, (X - 1.0 - zM * Z) / s, Z - zM], dim=-1)
    l_end = torch.stack([1.0 - X, (X + zM**2 - zM * Z) / s, Z], dim=-1)
    along = torch.clamp(l_start, min=0) + torch.clamp(-l_end, min=0)
    edge_distance = torch.sqrt(d**2 + along**2 + (Y**2).unsqueeze(-1))

    inside = (d > 0).all(dim=-1)
    element_distance = torch.where(inside, abs_y, edge_distance.min(dim=-1).values)

    nearest_corner, corner_index = corner_distance.min(dim=-1)
    nearest_edge, edge_index = edge_distance.min(dim=-1)
    band = policy.special_band

    kind = torch.full(X.shape, LocationKind.GENERIC, dtype=torch.int8)
    index = torch.full(X.shape, -1, dtype=torch.int8)
    scale = element_distance.clone()

    if policy.far_field is not None:
        centroid_distance = torch.sqrt((X - 1.0 / 3.0) ** 2 + Y**2 + (Z - zM / 3.0) ** 2)
        far = centroid_distance > policy.far_field * s
        kind[far] = LocationKind.FAR_FIELD
        scale = torch.where(far, centroid_distance, scale)

    # assigned in reverse priority so that corner > edge > plane wins
    on_plane = abs_y < band
    kind[on_plane & inside] = LocationKind.ON_PLANE_INSIDE
    kind[on_plane & ~inside] = LocationKind.ON_PLANE_OUTSIDE
    scale = torch.where(on_plane, abs_y, scale)

    near_edge = nearest_edge < band
    kind[near_edge] = LocationKind.NEAR_EDGE
    index[near_edge] = edge_index[near_edge].to(torch.int8)
    scale = torch.where(near_edge, nearest_edge, scale)

    near_corner = nearest_corner < band
    kind[near_corner] = LocationKind.NEAR_CORNER
    index[near_corner] = corner_index[near_corner].to(torch.int8)
    scale = torch.where(near_corner, nearest_corner, scale)
    return kind, index, scale


def classify_location(
    primitive: TrianglePrimitive, P_local: torch.Tensor, policy: EvalPolicy = EvalPolicy()
) -> LocationClass:
    P = torch.as_tensor(P_local, dtype=DTYPE).reshape(1, 3)
    kind, index, scale = classify_batch(torch.tensor([primitive.zM], dtype=DTYPE), P, policy)
    kind = LocationKind(int(kind[0]))
    special = kind in (LocationKind.NEAR_CORNER, LocationKind.NEAR_EDGE)
    return LocationClass(kind, float(scale[0]), int(index[0]) if special else None)


def _fallback(
    zM: float, P_local: torch.Tensor, policy: EvalPolicy, pair: tuple[int, int]
) -> tuple[float, torch.Tensor, float, bool]:
    """Adaptive quadrature; a capped but finite positive estimate is accepted."""
    target = "potential" if float(P_local[1]) == 0.0 else "all"
    try:
        result = adaptive_oracle(
            zM,
            P_local,
            tol=policy.fallback_tol,
            rule=policy.fallback_rule,
            max_cells=policy.fallback_max_cells,
            target=target,
            distance_floor=policy.distance_floor,
        )
    except NoConvergence as e:
        result = e.result
    except NodeCollision as e:
        raise UnresolvableEvaluation(f"Fallback quadrature failed for pair {pair}: {e}", pair)
    finite = math.isfinite(result.potential) and bool(torch.isfinite(result.flux).all())
    if not finite or result.potential <= 0:
        raise UnresolvableEvaluation(
            f"Fallback quadrature for pair {pair} returned potential {result.potential}.", pair
        )
    return result.potential, result.flux, result.estimated_error, result.converged


def _location_flags(kind: int, index: int) -> list[ApproxFlag]:
    match kind:
        case LocationKind.NEAR_CORNER:
            return [ApproxFlag(FlagCode.CORNER_LIMIT, f"corner{index}")]
        case LocationKind.NEAR_EDGE:
            return [ApproxFlag(FlagCode.EDGE_LIMIT, f"edge{index}")]
        case _:
            return []


def influence_batch(
    elements: ElementBatch | list[PanelElement],
    points: torch.Tensor,
    policy: EvalPolicy = EvalPolicy(),
    pairs_per_chunk: int = PAIRS_PER_CHUNK,
    progress: bool = False,
) -> InfluenceBatch:
    """Influence of every element at every point, vectorised over row chunks."""
    if not isinstance(elements, ElementBatch):
        elements = stack_elements(elements)
    points = as_points(points).reshape(-1, 3)
    N, E = points.shape[0], len(elements)
    potential = torch.empty(N, E, dtype=DTYPE)
    flux = torch.empty(N, E, 3, dtype=DTYPE)
    path = torch.empty(N, E, dtype=torch.int8)
    imag_residue = torch.zeros(N, E, dtype=DTYPE)
    flags: dict[tuple[int, int], list[ApproxFlag]] = {}
    estimated_error: dict[tuple[int, int], float] = {}

    rows_per_chunk = max(1, pairs_per_chunk // E)
    zM = elements.zM.unsqueeze(0)
    chunks = range(0, N, rows_per_chunk)
    for start in tqdm(chunks, desc="Influence", disable=not progress, leave=False):
        rows = slice(start, start + rows_per_chunk)
        offset = points[rows, None, :] - elements.origins[None]
        local = torch.einsum("nej,ekj->nek", offset, elements.bases)
        local = local / elements.scales[None, :, None]
        kind, index, _ = classify_batch(zM, local, policy)

        kernel = evaluate(KernelInputs.from_points(zM, local))
        chunk_potential = kernel.potential.clone()
        chunk_flux = kernel.flux.clone()
        chunk_path = torch.full(kind.shape, EvalPath.EXACT, dtype=torch.int8)
        imag_residue[rows] = kernel.imag_residue

        far = kind == LocationKind.FAR_FIELD
        if bool(far.any()):
            far_potential, far_flux = centroid_influence(zM.expand_as(far)[far], local[far])
            chunk_potential[far] = far_potential
            chunk_flux[far] = far_flux
            chunk_path[far] = EvalPath.FAR_FIELD

        exact_class = (
            (kind == LocationKind.GENERIC)
            | (kind == LocationKind.ON_PLANE_INSIDE)
            | (kind == LocationKind.ON_PLANE_OUTSIDE)
        )
        special = (kind == LocationKind.NEAR_CORNER) | (kind == LocationKind.NEAR_EDGE)
        failed = exact_class & (kernel.failure != FailureCode.NONE)
        for i, j in torch.nonzero(special | failed).tolist():
            pair = (start + i, j)
            if special[i, j]:
                pair_flags = _location_flags(int(kind[i, j]), int(index[i, j]))
            else:
                code = FailureCode(int(kernel.failure[i, j]))
                pair_flags = [ApproxFlag(FAILURE_FLAGS[code], code.name.lower())]
            value, vector, error, converged = _fallback(float(zM[0, j]), local[i, j], policy, pair)
            pair_flags.append(
                ApproxFlag(
                    FlagCode.FALLBACK_QUADRATURE, "converged" if converged else "level-cap"
                )
            )
            logger.debug(f"Fallback for pair {pair}: {', '.join(map(str, pair_flags))}")
            chunk_potential[i, j] = value
            chunk_flux[i, j] = vector
            chunk_path[i, j] = EvalPath.FALLBACK
            flags[pair] = pair_flags
            estimated_error[pair] = error

        scale = elements.scales[None, :]
        strength = elements.strengths[None, :]
        potential[rows] = chunk_potential * scale * strength
        global_flux = torch.einsum("nek,ekj->nej", chunk_flux, elements.bases)
        flux[rows] = global_flux * strength.unsqueeze(-1)
        path[rows] = chunk_path

    return InfluenceBatch(potential, flux, path, imag_residue, flags, estimated_error)


def influence(
    element: PanelElement, P_global: torch.Tensor, policy: EvalPolicy = EvalPolicy()
) -> InfluenceResult:
    batch = influence_batch(stack_elements([element]), as_points(P_global).reshape(1, 3), policy)
    return batch.result(0, 0)
