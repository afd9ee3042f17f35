"""Flat panels, their normalisation to the canonical right triangle and frame transforms.

The canonical triangle lives in the local XZ plane with corners (0,0), (1,0) and (0,zM); the
local Y axis is the panel normal. A physical panel is described by an `ElementFrame`
(origin at the right-angle vertex, orthonormal basis, scale = global length of the unit x-leg).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch

from src.errors import DegenerateTriangle, GeometryError, NotOrthogonalSides, NotRightAngled

DTYPE = torch.float64
DISTANCE_FLOOR = 1e-8
ORTHOGONALITY_TOL = 1e-9
ORTHONORMALITY_TOL = 1e-12

Vector = torch.Tensor | Sequence[float]
VertexTriple = tuple[torch.Tensor, torch.Tensor, torch.Tensor]


def as_vector(p: Vector) -> torch.Tensor:
    return torch.as_tensor(p, dtype=DTYPE).reshape(3)


def as_points(p: Vector | torch.Tensor) -> torch.Tensor:
    """Coerce a point or a batch of points to a float64 tensor of shape (..., 3)."""
    points = torch.as_tensor(p, dtype=DTYPE)
    if points.shape[-1] != 3:
        raise GeometryError(f"Expected points with a trailing dimension of 3, got {points.shape}.")
    return points


@dataclass(frozen=True)
class TrianglePrimitive:
    zM: float

    def __post_init__(self):
        if not (math.isfinite(self.zM) and self.zM > 0):
            raise DegenerateTriangle(f"zM must be positive and finite, got {self.zM}.")

    @property
    def area(self) -> float:
        return 0.5 * self.zM

    @property
    def hypotenuse(self) -> float:
        return math.hypot(1.0, self.zM)

    @property
    def longest_side(self) -> float:
        return max(1.0, self.zM, self.hypotenuse)

    @property
    def corners(self) -> torch.Tensor:
        """Corner coordinates (x, z) in the local plane, indexed 0, 1, 2."""
        return torch.tensor([[0.0, 0.0], [1.0, 0.0], [0.0, self.zM]], dtype=DTYPE)

    @property
    def centroid(self) -> torch.Tensor:
        return torch.tensor([1.0 / 3.0, 0.0, self.zM / 3.0], dtype=DTYPE)


@dataclass(frozen=True, eq=False)
class ElementFrame:
    """Placement of a panel. `basis` holds the rows basisX, basisY, basisZ."""

    origin: torch.Tensor
    basis: torch.Tensor
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "origin", as_vector(self.origin))
        object.__setattr__(self, "basis", torch.as_tensor(self.basis, dtype=DTYPE).reshape(3, 3))
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise GeometryError(f"Frame scale must be positive and finite, got {self.scale}.")
        gram = self.basis @ self.basis.T
        if (gram - torch.eye(3, dtype=DTYPE)).abs().max() > ORTHONORMALITY_TOL:
            raise GeometryError("Frame basis is not orthonormal.")
        if torch.linalg.det(self.basis) <= 0:
            raise GeometryError("Frame basis is not right-handed.")

    @property
    def basisX(self) -> torch.Tensor:
        return self.basis[0]

    @property
    def basisY(self) -> torch.Tensor:
        return self.basis[1]

    @property
    def basisZ(self) -> torch.Tensor:
        return self.basis[2]

    @classmethod
    def identity(cls, scale: float = 1.0) -> "ElementFrame":
        return cls(torch.zeros(3, dtype=DTYPE), torch.eye(3, dtype=DTYPE), scale)


@dataclass(frozen=True, eq=False)
class PanelElement:
    primitive: TrianglePrimitive
    frame: ElementFrame
    strength: float = 1.0

    @property
    def area(self) -> float:
        return self.primitive.area * self.frame.scale**2

    @property
    def vertices(self) -> torch.Tensor:
        return reconstruct_vertices(self.primitive, self.frame)

    @property
    def centroid(self) -> torch.Tensor:
        return transform_point_to_global(self.frame, self.primitive.centroid)

    def with_strength(self, strength: float) -> "PanelElement":
        return PanelElement(self.primitive, self.frame, strength)


@dataclass(frozen=True, eq=False)
class ElementBatch:
    """Stacked element data used by the vectorised evaluation paths."""

    origins: torch.Tensor  # (E, 3)
    bases: torch.Tensor  # (E, 3, 3)
    scales: torch.Tensor  # (E,)
    zM: torch.Tensor  # (E,)
    strengths: torch.Tensor  # (E,)

    def __len__(self) -> int:
        return self.zM.shape[0]

    @property
    def areas(self) -> torch.Tensor:
        return 0.5 * self.zM * self.scales**2


def stack_elements(elements: Sequence[PanelElement]) -> ElementBatch:
    if len(elements) == 0:
        raise GeometryError("Cannot stack an empty element list.")
    return ElementBatch(
        origins=torch.stack([e.frame.origin for e in elements]),
        bases=torch.stack([e.frame.basis for e in elements]),
        scales=torch.tensor([e.frame.scale for e in elements], dtype=DTYPE),
        zM=torch.tensor([e.primitive.zM for e in elements], dtype=DTYPE),
        strengths=torch.tensor([e.strength for e in elements], dtype=DTYPE),
    )


def frame_from_right_triangle(
    v0: Vector, v1: Vector, v2: Vector, distance_floor: float = DISTANCE_FLOOR
) -> tuple[TrianglePrimitive, ElementFrame]:
    """Normalise a right triangle whose right angle sits at `v0`.

    The x-leg runs along v1 - v0 and the z-leg along v2 - v0. The normal is basisZ x basisX so
    that the frame is right-handed and the canonical triangle maps onto the identity frame.
    """
    v0, v1, v2 = as_vector(v0), as_vector(v1), as_vector(v2)
    leg_x, leg_z = v1 - v0, v2 - v0
    len_x, len_z = float(torch.linalg.norm(leg_x)), float(torch.linalg.norm(leg_z))
    if not (math.isfinite(len_x) and math.isfinite(len_z)):
        raise DegenerateTriangle("Triangle has non-finite vertices.")
    if min(len_x, len_z) <= distance_floor * max(len_x, len_z):
        raise DegenerateTriangle(f"Leg lengths {len_x:.3e} and {len_z:.3e} are degenerate.")

    basis_x = leg_x / len_x
    basis_z = leg_z / len_z
    cosine = float(basis_x @ basis_z)
    if abs(cosine) > ORTHOGONALITY_TOL:
        raise NotRightAngled(f"Legs at v0 are not orthogonal (cosine {cosine:.3e}).")
    # remove the sub-tolerance residual so the basis is orthonormal to round-off
    basis_z = basis_z - cosine * basis_x
    basis_z = basis_z / torch.linalg.norm(basis_z)
    basis_y = torch.linalg.cross(basis_z, basis_x)

    primitive = TrianglePrimitive(zM=len_z / len_x)
    frame = ElementFrame(origin=v0, basis=torch.stack([basis_x, basis_y, basis_z]), scale=len_x)
    return primitive, frame


def frame_from_triangle(
    v0: Vector, v1: Vector, v2: Vector, distance_floor: float = DISTANCE_FLOOR
) -> tuple[TrianglePrimitive, ElementFrame]:
    """Like `frame_from_right_triangle` but finds the right-angle vertex itself."""
    vertices = [as_vector(v0), as_vector(v1), as_vector(v2)]
    best, best_cosine = None, math.inf
    for k in range(3):
        a, b, c = vertices[k], vertices[(k + 1) % 3], vertices[(k + 2) % 3]
        u, w = b - a, c - a
        norm = float(torch.linalg.norm(u) * torch.linalg.norm(w))
        if norm == 0:
            raise DegenerateTriangle("Triangle has coincident vertices.")
        cosine = abs(float(u @ w)) / norm
        if cosine < best_cosine:
            best, best_cosine = (a, b, c), cosine
    if best_cosine > ORTHOGONALITY_TOL:
        raise NotRightAngled(f"No vertex has a right angle (best cosine {best_cosine:.3e}).")
    return frame_from_right_triangle(*best, distance_floor=distance_floor)


def reconstruct_vertices(primitive: TrianglePrimitive, frame: ElementFrame) -> torch.Tensor:
    local = torch.tensor([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, primitive.zM]], dtype=DTYPE)
    return transform_point_to_global(frame, local)


def element_from_vertices(
    v0: Vector, v1: Vector, v2: Vector, strength: float = 1.0
) -> PanelElement:
    primitive, frame = frame_from_right_triangle(v0, v1, v2)
    return PanelElement(primitive, frame, strength)


def triangle_area(v0: Vector, v1: Vector, v2: Vector) -> float:
    v0, v1, v2 = as_vector(v0), as_vector(v1), as_vector(v2)
    return 0.5 * float(torch.linalg.norm(torch.linalg.cross(v1 - v0, v2 - v0)))


def split_general_triangle(
    v0: Vector, v1: Vector, v2: Vector, distance_floor: float = DISTANCE_FLOOR
) -> tuple[VertexTriple, VertexTriple]:
    """Split a triangle into two right triangles along an altitude.

    Every side is tried as the base; the side whose altitude foot lies most centrally inside it
    is used (ties go to the earlier side in the order v0v1, v1v2, v2v0). For a non-degenerate
    triangle at least the longest side has an interior foot. Each returned triple lists the
    right-angle vertex (the foot) first.
    """
    vertices = [as_vector(v0), as_vector(v1), as_vector(v2)]
    longest = max(
        float(torch.linalg.norm(vertices[(k + 1) % 3] - vertices[k])) for k in range(3)
    )
    area = triangle_area(*vertices)
    if not math.isfinite(area) or area <= distance_floor * longest**2:
        raise DegenerateTriangle(f"Triangle area {area:.3e} is below the floor.")

    best, best_margin = None, -math.inf
    for k in range(3):
        a, b, apex = vertices[k], vertices[(k + 1) % 3], vertices[(k + 2) % 3]
        side = b - a
        t = float((apex - a) @ side / (side @ side))
        margin = min(t, 1.0 - t)
        if margin > best_margin:
            best, best_margin = (a, b, apex, t), margin
    a, b, apex, t = best
    foot = a + t * (b - a)
    return (foot, a, apex), (foot, b, apex)


def split_rectangle(
    corner: Vector, side_a: Vector, side_b: Vector
) -> tuple[VertexTriple, VertexTriple]:
    """Split the rectangle spanned by `side_a` and `side_b` at `corner` along its diagonal."""
    corner, side_a, side_b = as_vector(corner), as_vector(side_a), as_vector(side_b)
    norm = float(torch.linalg.norm(side_a) * torch.linalg.norm(side_b))
    if norm == 0 or abs(float(side_a @ side_b)) > ORTHOGONALITY_TOL * norm:
        raise NotOrthogonalSides("Rectangle sides must be non-zero and orthogonal.")
    first = (corner, corner + side_a, corner + side_b)
    second = (corner + side_a + side_b, corner + side_b, corner + side_a)
    return first, second


def subdivide_right_triangle(v0: Vector, v1: Vector, v2: Vector) -> list[VertexTriple]:
    """Four half-scale similar children, each with its right-angle vertex first."""
    v0, v1, v2 = as_vector(v0), as_vector(v1), as_vector(v2)
    m01, m02, m12 = 0.5 * (v0 + v1), 0.5 * (v0 + v2), 0.5 * (v1 + v2)
    return [(v0, m01, m02), (m01, v1, m12), (m02, m12, v2), (m12, m02, m01)]


def transform_point_to_local(frame: ElementFrame, p_global: Vector) -> torch.Tensor:
    return ((as_points(p_global) - frame.origin) @ frame.basis.T) / frame.scale


def transform_point_to_global(frame: ElementFrame, p_local: Vector) -> torch.Tensor:
    return frame.origin + frame.scale * (as_points(p_local) @ frame.basis)


def transform_vector_to_global(frame: ElementFrame, v_local: Vector) -> torch.Tensor:
    return as_points(v_local) @ frame.basis


def transform_vector_to_local(frame: ElementFrame, v_global: Vector) -> torch.Tensor:
    return as_points(v_global) @ frame.basis.T
