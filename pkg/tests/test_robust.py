import math

import pytest
import torch

from src.errors import UsageError
from src.geometry import (
    DTYPE,
    ElementFrame,
    PanelElement,
    TrianglePrimitive,
    element_from_vertices,
    transform_point_to_local,
    transform_vector_to_global,
)
from src.kernels import KernelInputs, evaluate
from src.robust import (
    EvalPath,
    EvalPolicy,
    FlagCode,
    LocationKind,
    classify_location,
    influence,
    influence_batch,
)

UNIT = TrianglePrimitive(1.0)
FAST_FALLBACK = EvalPolicy(fallback_max_cells=256)


def canonical(zM: float = 1.0) -> PanelElement:
    return PanelElement(TrianglePrimitive(zM), ElementFrame.identity())


@pytest.mark.parametrize(
    "point, kind, index",
    [
        ((0.3, 0.5, 0.3), LocationKind.GENERIC, None),
        ((1e-8, 1e-8, 0.0), LocationKind.NEAR_CORNER, 0),
        ((1.0, 0.0, 1e-7), LocationKind.NEAR_CORNER, 1),
        ((0.0, 1e-7, 1.0), LocationKind.NEAR_CORNER, 2),
        ((0.5, 1e-8, 1e-9), LocationKind.NEAR_EDGE, 0),
        ((0.5, 0.0, 0.5), LocationKind.NEAR_EDGE, 1),
        ((0.0, 0.0, 0.4), LocationKind.NEAR_EDGE, 2),
        ((0.2, 0.0, 0.2), LocationKind.ON_PLANE_INSIDE, None),
        ((2.0, 0.0, 2.0), LocationKind.ON_PLANE_OUTSIDE, None),
        ((100.0, 100.0, 100.0), LocationKind.GENERIC, None),
    ],
)
def test_classify_location(point, kind, index):
    location = classify_location(UNIT, torch.tensor(point, dtype=DTYPE))
    assert location.kind == kind
    assert location.index == index


def test_far_field_needs_a_threshold():
    policy = EvalPolicy(far_field=20.0)
    location = classify_location(UNIT, torch.tensor([100.0, 100.0, 100.0]), policy)
    assert location.kind == LocationKind.FAR_FIELD
    assert str(location) == "FarField"


def test_policy_validation():
    with pytest.raises(UsageError):
        EvalPolicy(far_field=1.0)
    with pytest.raises(UsageError):
        EvalPolicy(distance_floor=1e-5, special_band=1e-6)
    with pytest.raises(UsageError):
        EvalPolicy(fallback_tol=0.0)


############# Total evaluation ##############
def test_generic_points_are_exact_and_unflagged(generator):
    points = torch.randn(200, 3, generator=generator, dtype=DTYPE) * 2
    points[:, 1] = points[:, 1].abs() + 0.05
    batch = influence_batch([canonical(2.0)], points)
    assert not batch.flags
    assert bool((batch.path == EvalPath.EXACT).all())
    expected = evaluate(KernelInputs.from_points(2.0, points))
    assert torch.allclose(batch.potential[:, 0], expected.potential, rtol=1e-13)


@pytest.mark.parametrize(
    "point, flag",
    [
        ((0.0, 0.0, 0.0), FlagCode.CORNER_LIMIT),
        ((1.0, 0.0, 0.0), FlagCode.CORNER_LIMIT),
        ((0.0, 0.0, 1.0), FlagCode.CORNER_LIMIT),
        ((0.5, 0.0, 0.0), FlagCode.EDGE_LIMIT),
        ((0.5, 0.0, 0.5), FlagCode.EDGE_LIMIT),
        ((0.0, 0.0, 0.5), FlagCode.EDGE_LIMIT),
    ],
)
def test_corners_and_edges_fall_back(point, flag):
    result = influence(canonical(), torch.tensor(point, dtype=DTYPE), FAST_FALLBACK)
    assert result.path == EvalPath.FALLBACK
    assert math.isfinite(result.potential) and result.potential > 0
    assert bool(torch.isfinite(result.flux).all())
    codes = [f.code for f in result.flags]
    assert codes[0] == flag
    assert codes[-1] == FlagCode.FALLBACK_QUADRATURE


def test_on_plane_points_are_total(generator):
    xz = torch.rand(1000, 2, generator=generator, dtype=DTYPE) * 3 - 1
    points = torch.stack([xz[:, 0], torch.zeros(1000, dtype=DTYPE), xz[:, 1]], dim=-1)
    batch = influence_batch([canonical()], points, FAST_FALLBACK)
    assert bool(torch.isfinite(batch.potential).all())
    assert bool((batch.potential > 0).all())
    assert bool(torch.isfinite(batch.flux).all())
    for (m, _), flags in batch.flags.items():
        assert batch.path[m, 0] == EvalPath.FALLBACK
        assert flags[-1].code == FlagCode.FALLBACK_QUADRATURE
    inside = (points[:, 0] > 0.01) & (points[:, 2] > 0.01) & (points.sum(dim=-1) < 0.99)
    assert torch.allclose(batch.flux[inside, 0, 1], torch.tensor(2 * math.pi, dtype=DTYPE))


def test_branch_cut_on_the_plane_falls_back():
    policy = EvalPolicy(distance_floor=1e-16, special_band=1e-15, fallback_max_cells=256)
    point = torch.tensor([0.5, 0.0, 1e-14], dtype=DTYPE)
    assert classify_location(UNIT, point, policy).kind == LocationKind.ON_PLANE_INSIDE
    result = influence(canonical(), point, policy)
    assert result.path == EvalPath.FALLBACK
    assert [f.code for f in result.flags] == [FlagCode.BRANCH_CUT, FlagCode.FALLBACK_QUADRATURE]
    assert result.flags[0].detail == "branch_cut"
    assert math.isfinite(result.potential) and result.potential > 0


def test_far_field_switch_is_continuous():
    threshold = 100.0
    policy = EvalPolicy(far_field=threshold)
    element = canonical()
    centroid = UNIT.centroid
    reach = threshold * UNIT.longest_side
    normal = torch.tensor([0.0, 1.0, 0.0], dtype=DTYPE)
    points = torch.stack([centroid + 0.999 * reach * normal, centroid + 1.001 * reach * normal])
    batch = influence_batch([element], points, policy)
    assert batch.path[:, 0].tolist() == [EvalPath.EXACT, EvalPath.FAR_FIELD]
    exact = evaluate(KernelInputs.from_points(1.0, points)).potential
    jump = (batch.potential[:, 0] - exact).abs() / exact
    assert float(jump.max()) < 1e-5


############# Frames and determinism ##############
def test_global_frame_results():
    element = element_from_vertices((1, 1, 0), (1, 3, 0), (2, 1, 0))
    P = torch.tensor([1.4, 1.7, 0.6], dtype=DTYPE)
    result = influence(element, P)
    local = transform_point_to_local(element.frame, P)
    expected = evaluate(KernelInputs.from_points(element.primitive.zM, local))
    assert result.potential == pytest.approx(2.0 * float(expected.potential), rel=1e-13)
    expected_flux = transform_vector_to_global(element.frame, expected.flux)
    assert torch.allclose(result.flux, expected_flux, rtol=1e-13, atol=1e-15)


def test_strength_scales_linearly():
    element = element_from_vertices((0, 0, 0), (1, 0, 0), (0, 0, 2), strength=3.0)
    P = torch.tensor([0.3, 0.4, 0.5], dtype=DTYPE)
    unit = influence(element.with_strength(1.0), P)
    scaled = influence(element, P)
    assert scaled.potential == pytest.approx(3.0 * unit.potential, rel=1e-15)


def test_repeated_runs_are_identical(generator):
    elements = [
        element_from_vertices((0, 0, 0), (1, 0, 0), (0, 0, 2)),
        element_from_vertices((1, 0, 0), (1, 1, 0), (2, 0, 0)),
    ]
    points = torch.randn(500, 3, generator=generator, dtype=DTYPE)
    first = influence_batch(elements, points)
    second = influence_batch(elements, points)
    assert torch.equal(first.potential, second.potential)
    assert torch.equal(first.flux, second.flux)
    chunked = influence_batch(elements, points, pairs_per_chunk=64)
    assert torch.allclose(chunked.potential, first.potential, rtol=1e-14)
