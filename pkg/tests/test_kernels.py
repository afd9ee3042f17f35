import math

import pytest
import torch

from src.errors import EvaluationFailure, LogDomainFailure
from src.geometry import DTYPE, element_from_vertices, split_rectangle, subdivide_right_triangle
from src.kernels import FailureCode, KernelInputs, evaluate, tri_flux, tri_potential
from src.quadrature import adaptive_oracle, adaptive_rectangle_oracle
from src.robust import EvalPolicy, LocationKind, classify_batch, influence, influence_batch
from src.sweeps import gradient_agreement, oracle_agreement, random_generic_points


def exact(zM, x, y, z):
    return evaluate(KernelInputs(zM, x, y, z))


############# Against the oracle ##############
def test_matches_adaptive_oracle(generator):
    z_m, points = random_generic_points(12, generator, z_m_range=(0.5, 3.0), min_distance=0.3)
    agreement = oracle_agreement(z_m, points, tol=1e-9)
    assert (agreement["failure"] == "NONE").all()
    assert agreement["phi_rel_err"].max() < 1e-8
    assert agreement["flux_rel_err"].max() < 1e-8


@pytest.mark.parametrize(
    "z_m, point",
    [(1.0, (0.3, 0.1, 0.3)), (1.0, (0.5, 0.05, 0.6)), (2.0, (-0.05, 0.06, 0.8))],
)
def test_matches_oracle_close_to_the_element(z_m, point):
    agreement = oracle_agreement(
        torch.tensor([z_m], dtype=DTYPE), torch.tensor([point], dtype=DTYPE), tol=1e-9
    )
    assert agreement.loc[0, "failure"] == "NONE"
    assert agreement.loc[0, "phi_rel_err"] < 1e-8
    assert agreement.loc[0, "flux_rel_err"] < 1e-8


def test_generic_points_respect_the_distance_floor(generator):
    z_m, points = random_generic_points(300, generator, box=5.0, min_distance=0.05)
    assert points.shape == (300, 3)
    assert float(points[:, 1].abs().max()) <= 5.0
    assert float(points[:, 0].min()) >= -5.0 and float(points[:, 0].max()) <= 6.0
    kind, _, scale = classify_batch(z_m, points, EvalPolicy())
    assert bool((kind == LocationKind.GENERIC).all())
    assert float(scale.min()) >= 0.05


def test_unit_triangle_above_corner():
    result = exact(1.0, 0.0, 1.0, 0.0)
    oracle = adaptive_oracle(1.0, torch.tensor([0.0, 1.0, 0.0]), tol=1e-10)
    assert float(result.potential) == pytest.approx(oracle.potential, rel=1e-9)
    assert float(result.potential) == pytest.approx(0.437, abs=2e-3)


def test_on_extension_of_edge():
    result = exact(1.0, 2.0, 0.0, 0.0)
    assert int(result.failure) == FailureCode.NONE
    oracle = adaptive_oracle(1.0, torch.tensor([2.0, 0.0, 0.0]), tol=1e-10, target="potential")
    assert float(result.potential) == pytest.approx(oracle.potential, rel=1e-8)
    assert float(result.flux[1]) == pytest.approx(0.0, abs=1e-12)


def test_flux_is_negative_gradient(generator):
    z_m, points = random_generic_points(30, generator)
    keep = points[:, 1].abs() > 0.01
    agreement = gradient_agreement(z_m[keep], points[keep], step=1e-5)
    assert len(agreement) > 10
    assert agreement["rel_err"].max() < 1e-6


############# Symmetries and scaling ##############
def test_parity_in_y(generator):
    P = torch.randn(100, 3, generator=generator, dtype=DTYPE) * 2
    P[:, 1] = P[:, 1].abs() + 0.1
    mirrored = P * torch.tensor([1.0, -1.0, 1.0], dtype=DTYPE)
    above, below = exact(2.0, *P.T), exact(2.0, *mirrored.T)
    assert torch.allclose(above.potential, below.potential, rtol=1e-13)
    assert torch.allclose(above.flux[:, 1], -below.flux[:, 1], rtol=1e-12, atol=1e-14)
    assert torch.allclose(above.flux[:, [0, 2]], below.flux[:, [0, 2]], rtol=1e-12, atol=1e-14)


def test_mirror_symmetry_of_isosceles_triangle():
    a, b = exact(1.0, 0.7, 0.3, 0.1), exact(1.0, 0.1, 0.3, 0.7)
    assert float(a.potential) == pytest.approx(float(b.potential), rel=1e-13)
    assert float(a.flux[0]) == pytest.approx(float(b.flux[2]), rel=1e-12)
    assert float(a.flux[2]) == pytest.approx(float(b.flux[0]), rel=1e-12)


def test_potential_scales_with_element_size():
    small = element_from_vertices((0, 0, 0), (1, 0, 0), (0, 0, 2))
    large = element_from_vertices((0, 0, 0), (3, 0, 0), (0, 0, 6))
    p = torch.tensor([0.4, 0.7, 1.1], dtype=DTYPE)
    a, b = influence(small, p), influence(large, 3 * p)
    assert b.potential == pytest.approx(3 * a.potential, rel=1e-13)
    assert torch.allclose(b.flux, a.flux, rtol=1e-12)


def test_rectangle_from_two_triangles():
    triangles = split_rectangle((0, 0, 0), (1, 0, 0), (0, 0, 2))
    elements = [element_from_vertices(*triangle) for triangle in triangles]
    P = torch.tensor([0.4, 0.7, 1.1], dtype=DTYPE)
    batch = influence_batch(elements, P)
    oracle = adaptive_rectangle_oracle(2.0, P, tol=1e-10)
    assert float(batch.potential.sum()) == pytest.approx(oracle.potential, rel=1e-8)
    assert torch.allclose(batch.flux[0].sum(dim=0), oracle.flux, rtol=1e-8, atol=1e-10)


@pytest.mark.parametrize("point", [(0.3, 0.5, 0.8), (2.0, -1.0, 4.0), (0.2, 0.05, 0.3)])
def test_subdivision_is_additive(point):
    parent = element_from_vertices((0, 0, 0), (1, 0, 0), (0, 0, 3))
    children = [element_from_vertices(*c) for c in subdivide_right_triangle(*parent.vertices)]
    P = torch.tensor(point, dtype=DTYPE)
    whole = influence(parent, P)
    parts = influence_batch(children, P)
    assert float(parts.potential.sum()) == pytest.approx(whole.potential, rel=1e-10)
    assert torch.allclose(parts.flux[0].sum(dim=0), whole.flux, rtol=1e-10, atol=1e-12)


############# Physical limits ##############
def test_potential_is_positive(generator):
    P = 4 * torch.randn(1000, 3, generator=generator, dtype=DTYPE)
    result = exact(0.7, *P.T)
    ok = result.failure == FailureCode.NONE
    assert bool(ok.all())
    assert bool((result.potential > 0).all())


def test_monopole_limit():
    zM = 2.0
    direction = torch.tensor([1.0, 2.0, -2.0], dtype=DTYPE) / 3.0
    centroid = torch.tensor([1 / 3, 0.0, zM / 3], dtype=DTYPE)
    P = centroid + 1e4 * direction
    result = exact(zM, *P)
    area = 0.5 * zM
    assert float(result.potential) == pytest.approx(area / 1e4, rel=1e-6)
    assert torch.allclose(result.flux, area / 1e8 * direction, rtol=1e-5)


def test_normal_flux_jumps_across_interior():
    above = exact(1.0, 0.2, 1e-9, 0.3)
    below = exact(1.0, 0.2, -1e-9, 0.3)
    on_plane = exact(1.0, 0.2, 0.0, 0.3)
    assert float(above.flux[1]) == pytest.approx(2 * math.pi, abs=1e-6)
    assert float(below.flux[1]) == pytest.approx(-2 * math.pi, abs=1e-6)
    assert float(on_plane.flux[1]) == pytest.approx(2 * math.pi, abs=1e-12)


def test_normal_flux_vanishes_on_plane_outside():
    result = exact(1.0, 2.0, 0.0, 2.0)
    assert float(result.flux[1]) == pytest.approx(0.0, abs=1e-12)
    assert int(result.failure) == FailureCode.NONE


############# Paths and failures ##############
def test_full_and_folded_paths_agree(generator):
    z_m, points = random_generic_points(200, generator)
    inputs = KernelInputs.from_points(z_m, points)
    folded, full = evaluate(inputs, "folded"), evaluate(inputs, "full")
    assert torch.allclose(folded.potential, full.potential, rtol=1e-10)
    assert torch.allclose(folded.flux, full.flux, rtol=1e-8, atol=1e-10)
    assert float(full.imag_residue.max()) < 1e-10


def test_conjugate_solid_angle_logs():
    terms = exact(2.0, 0.3, 0.4, 0.5).terms
    assert torch.allclose(terms.lp, terms.lm.conj())
    for k in range(3):
        assert torch.allclose(getattr(terms, f"LP{k}"), getattr(terms, f"LM{k}").conj())


def test_edge_grazing_point_is_a_branch_cut():
    # on the plane, 1e-14 inside edge 0: the solid-angle log sits on its cut
    result = exact(1.0, 0.5, 0.0, 1e-14)
    assert bool(result.terms.branch_ambiguity)
    assert int(result.failure) == FailureCode.BRANCH_CUT
    assert math.isfinite(float(result.potential))
    assert not bool(exact(1.0, 0.5, 0.0, 0.3).terms.branch_ambiguity)


def test_point_on_edge_is_a_log_domain_failure():
    with pytest.raises(LogDomainFailure) as info:
        tri_potential(KernelInputs(1.0, 0.5, 0.0, 0.0))
    assert info.value.code == FailureCode.LOG_DOMAIN
    assert info.value.indices == [0]
    result = exact(1.0, torch.tensor([0.5, 0.3]), 0.0, torch.tensor([0.0, 0.3]))
    assert result.failure.tolist() == [FailureCode.LOG_DOMAIN, FailureCode.NONE]


def test_tri_flux_returns_components():
    fx, fy, fz = tri_flux(KernelInputs(1.0, 0.3, 0.5, 0.2), with_diagnostics=True)
    assert fx.diagnostics is not None
    full = exact(1.0, 0.3, 0.5, 0.2)
    assert torch.equal(torch.stack([fx.value, fy.value, fz.value]), full.flux)


def test_rejects_bad_inputs():
    with pytest.raises(EvaluationFailure):
        KernelInputs(0.0, 1.0, 1.0, 1.0)
    with pytest.raises(EvaluationFailure):
        KernelInputs(1.0, math.nan, 1.0, 1.0)
