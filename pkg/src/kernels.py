"""Closed-form potential and flux of a unit uniform source on the canonical right triangle.

The triangle has corners 0 = (0,0), 1 = (1,0), 2 = (0,zM) in the local XZ plane and the
field point is P = (X, Y, Z). Edge k runs from corner k to corner k+1 (edge 0 is the x-leg,
edge 1 the hypotenuse, edge 2 the z-leg), counter-clockwise in (x, z).

For every edge the kernel needs the in-plane distance `d` of P from the edge line (positive
on the element side), the tangential offsets `l1`, `l2` of the edge end points, the corner
distances and two groups built from them:

* the edge logarithm `F = log((R2 + l2) / (R1 + l1))`, evaluated in a cancellation-free form
  on either side of the edge,
* the complex pair `LP = log(C + iS)`, `LM = log(C - iS)` whose argument is the solid angle
  the edge subtends at P.

With these, ``Phi = sum_k d_k F_k + i|Y|/2 sum_k (LP_k - LM_k)`` and
``Fx = sum_k mx_k F_k``, ``Fz = sum_k mz_k F_k``, ``Fy = Sn(Y) sum_k Im LP_k``, where `m`
is the outward in-plane edge normal. Integration constants are zero. The x-leg and
hypotenuse groups equal ``Z log((D21 - X + 1)/(D11 - X))`` and
``G/s log((s D12 - E1)/(s D21 - E2))`` (s = sqrt(1 + zM^2)), and Fz reduces to the purely
logarithmic expression in those two groups.

Every function is vectorised over broadcastable float64 tensors. Batched evaluations never
raise; they attach a `FailureCode` per entry. `tri_potential` and `tri_flux` raise on any
failed entry.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Literal

import torch

from src.errors import EvaluationFailure, LogDomainFailure

DTYPE = torch.float64
IMAG_RESIDUE_TOL = 1e-10
BRANCH_TOL = 1e-12

KernelPath = Literal["folded", "full"]


class FailureCode(IntEnum):
    NONE = 0
    LOG_DOMAIN = 1
    NON_FINITE = 2
    NEGATIVE_POTENTIAL = 3
    ROUND_OFF = 4
    BRANCH_CUT = 5


@dataclass
class KernelInputs:
    zM: torch.Tensor
    X: torch.Tensor
    Y: torch.Tensor
    Z: torch.Tensor

    def __post_init__(self):
        zM, X, Y, Z = (torch.as_tensor(v, dtype=DTYPE) for v in (self.zM, self.X, self.Y, self.Z))
        self.zM, self.X, self.Y, self.Z = torch.broadcast_tensors(zM, X, Y, Z)
        finite = torch.stack([torch.isfinite(v) for v in (self.zM, self.X, self.Y, self.Z)])
        if not bool(finite.all()):
            raise EvaluationFailure("Kernel inputs must be finite.", code=FailureCode.NON_FINITE)
        if bool((self.zM <= 0).any()):
            raise EvaluationFailure("zM must be positive.", code=FailureCode.NON_FINITE)

    @classmethod
    def from_points(cls, zM: float | torch.Tensor, points: torch.Tensor) -> "KernelInputs":
        points = torch.as_tensor(points, dtype=DTYPE)
        return cls(zM, points[..., 0], points[..., 1], points[..., 2])

    @property
    def shape(self) -> torch.Size:
        return self.X.shape


@dataclass
class KernelTerms:
    """Auxiliary symbols of one (batched) evaluation.

    The named scalars follow the usual closed-form notation (corner distances D11, D21, D12
    to corners (0,0), (1,0), (0,zM); I1 = X|Y|, I2 = (X-1)|Y|; S1 = sign(-Z); R1 = Y^2 + Z^2;
    E1, E2, G, H1, H2 of the hypotenuse groups). The edge-resolved tensors carry a trailing
    dimension of size 3 indexed by edge.
    """

    D11: torch.Tensor
    D12: torch.Tensor
    D21: torch.Tensor
    I1: torch.Tensor
    I2: torch.Tensor
    S1: torch.Tensor
    R1: torch.Tensor
    E1: torch.Tensor
    E2: torch.Tensor
    G: torch.Tensor
    H1: torch.Tensor
    H2: torch.Tensor
    edge_distance: torch.Tensor
    l_start: torch.Tensor
    l_end: torch.Tensor
    g2: torch.Tensor
    r_start: torch.Tensor
    r_end: torch.Tensor
    edge_log: torch.Tensor
    lp: torch.Tensor
    lm: torch.Tensor
    log_domain: torch.Tensor
    branch_ambiguity: torch.Tensor

    @property
    def LP0(self) -> torch.Tensor:
        return self.lp[..., 0]

    @property
    def LM0(self) -> torch.Tensor:
        return self.lm[..., 0]

    @property
    def LP1(self) -> torch.Tensor:
        return self.lp[..., 1]

    @property
    def LM1(self) -> torch.Tensor:
        return self.lm[..., 1]

    @property
    def LP2(self) -> torch.Tensor:
        return self.lp[..., 2]

    @property
    def LM2(self) -> torch.Tensor:
        return self.lm[..., 2]

    @property
    def solid_angle(self) -> torch.Tensor:
        return self.lp.imag.sum(dim=-1)


@dataclass
class KernelOutput:
    value: torch.Tensor
    imag_residue: torch.Tensor
    failure: torch.Tensor
    diagnostics: KernelTerms | None = None

    @property
    def ok(self) -> torch.Tensor:
        return self.failure == FailureCode.NONE


@dataclass
class KernelEvaluation:
    """Potential and local flux of one batched evaluation, with per-entry failure codes."""

    potential: torch.Tensor
    flux: torch.Tensor
    imag_residue: torch.Tensor
    failure: torch.Tensor
    terms: KernelTerms


def _edge_normals(zM: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Outward in-plane normals (mx, mz) per edge."""
    s = torch.sqrt(1.0 + zM**2)
    zero, one = torch.zeros_like(zM), torch.ones_like(zM)
    mx = torch.stack([zero, zM / s, -one], dim=-1)
    mz = torch.stack([-one, one / s, zero], dim=-1)
    return mx, mz


def eval_terms(inputs: KernelInputs) -> KernelTerms:
    zM, X, Y, Z = inputs.zM, inputs.X, inputs.Y, inputs.Z
    abs_y = Y.abs()
    y2 = Y**2
    s = torch.sqrt(1.0 + zM**2)

    D11 = torch.sqrt(X**2 + y2 + Z**2)
    D21 = torch.sqrt((X - 1.0) ** 2 + y2 + Z**2)
    D12 = torch.sqrt(X**2 + y2 + (Z - zM) ** 2)
    G = zM * (X - 1.0) + Z
    E1 = X + zM**2 - zM * Z
    E2 = X - 1.0 - zM * Z

    d = torch.stack([Z, -G / s, X], dim=-1)
    l_start = torch.stack([-X, E2 / s, Z - zM], dim=-1)
    l_end = torch.stack([1.0 - X, E1 / s, Z], dim=-1)
    r_start = torch.stack([D11, D21, D12], dim=-1)
    r_end = torch.stack([D21, D12, D11], dim=-1)
    g2 = d**2 + y2.unsqueeze(-1)

    # edge logarithm: reflected form behind the edge, product form alongside it
    alongside = (l_start < 0) & (l_end > 0)
    arg_alongside = (r_start - l_start) * (r_end + l_end) / g2
    arg_beyond = (r_end + l_end.abs()) / (r_start + l_start.abs())
    log_arg = torch.where(alongside, arg_alongside, arg_beyond)
    log_domain = ~torch.isfinite(log_arg) | (log_arg <= 0)
    direction = torch.sign(l_start + l_end)
    edge_log = torch.where(alongside, torch.log(arg_alongside), direction * torch.log(arg_beyond))

    # solid-angle factors of each edge
    abs_y_edge = abs_y.unsqueeze(-1)
    c1 = g2 + abs_y_edge * r_start
    c2 = g2 + abs_y_edge * r_end
    sine = d * (l_end * c1 - l_start * c2)
    cosine = c1 * c2 + d**2 * l_start * l_end
    lp = torch.log(torch.complex(cosine, sine))
    lm = torch.log(torch.complex(cosine, -sine))
    branch_ambiguity = ((cosine < 0) & (sine.abs() <= BRANCH_TOL * cosine.abs())).any(dim=-1)

    return KernelTerms(
        D11=D11,
        D12=D12,
        D21=D21,
        I1=X * abs_y,
        I2=(X - 1.0) * abs_y,
        S1=torch.sign(-Z),
        R1=y2 + Z**2,
        E1=E1,
        E2=E2,
        G=G,
        H1=y2 + G * (Z - zM),
        H2=y2 + G * Z,
        edge_distance=d,
        l_start=l_start,
        l_end=l_end,
        g2=g2,
        r_start=r_start,
        r_end=r_end,
        edge_log=edge_log,
        lp=lp,
        lm=lm,
        log_domain=log_domain,
        branch_ambiguity=branch_ambiguity,
    )


def _complex_atanh(w: torch.Tensor) -> torch.Tensor:
    w = w.to(torch.complex128)
    return 0.5 * torch.log((1.0 + w) / (1.0 - w))


def _assemble_folded(inputs: KernelInputs, terms: KernelTerms):
    d, edge_log = terms.edge_distance, terms.edge_log
    abs_y = inputs.Y.abs()
    # groups with a zero multiplier are skipped, their interior may be singular
    log_groups = torch.where(d == 0, torch.zeros_like(d), d * edge_log).sum(dim=-1)
    angle = terms.lp.imag.sum(dim=-1)
    angle_group = torch.where(abs_y == 0, torch.zeros_like(abs_y), abs_y * angle)
    potential = log_groups - angle_group
    return potential, torch.zeros_like(potential), angle


def _assemble_full(inputs: KernelInputs, terms: KernelTerms):
    d = terms.edge_distance
    abs_y = inputs.Y.abs()
    edge_log = _complex_atanh(terms.l_end / terms.r_end) - _complex_atanh(
        terms.l_start / terms.r_start
    )
    zero = torch.zeros_like(edge_log)
    log_groups = torch.where(d == 0, zero, d.to(torch.complex128) * edge_log).sum(dim=-1)
    pair = (terms.lp - terms.lm).sum(dim=-1)
    angle_group = 0.5j * abs_y.to(torch.complex128) * pair
    angle_group = torch.where(abs_y == 0, torch.zeros_like(angle_group), angle_group)
    total = log_groups + angle_group
    angle = (pair / 2j).real
    return total.real, total.imag.abs(), angle, edge_log.real


def evaluate(inputs: KernelInputs, path: KernelPath = "folded") -> KernelEvaluation:
    """Potential and local flux with per-entry failure codes; never raises on bad entries."""
    terms = eval_terms(inputs)
    match path:
        case "folded":
            potential, imag_residue, angle = _assemble_folded(inputs, terms)
            edge_log = terms.edge_log
        case "full":
            potential, imag_residue, angle, edge_log = _assemble_full(inputs, terms)
        case _:
            raise ValueError(f"Unknown kernel path {path}.")

    mx, mz = _edge_normals(inputs.zM)
    ones = torch.ones_like(inputs.Y)
    side = torch.where(inputs.Y >= 0, ones, -ones)
    flux = torch.stack(
        [(mx * edge_log).sum(dim=-1), side * angle, (mz * edge_log).sum(dim=-1)], dim=-1
    )

    failure = torch.full(potential.shape, FailureCode.NONE, dtype=torch.int8)
    tolerance = IMAG_RESIDUE_TOL * torch.clamp(potential.abs(), min=1.0)
    # lowest priority first so the most specific code wins
    failure[terms.branch_ambiguity] = FailureCode.BRANCH_CUT
    failure[imag_residue > tolerance] = FailureCode.ROUND_OFF
    failure[potential <= 0] = FailureCode.NEGATIVE_POTENTIAL
    failure[~torch.isfinite(potential) | ~torch.isfinite(flux).all(dim=-1)] = FailureCode.NON_FINITE
    failure[terms.log_domain.any(dim=-1)] = FailureCode.LOG_DOMAIN
    return KernelEvaluation(potential, flux, imag_residue, failure, terms)


def _raise_on_failure(failure: torch.Tensor, what: str, terms: KernelTerms) -> None:
    bad = torch.nonzero(failure.reshape(-1) != FailureCode.NONE).reshape(-1)
    if bad.numel() == 0:
        return
    code = FailureCode(int(failure.reshape(-1)[bad[0]]))
    indices = bad.tolist()
    message = (
        f"{what} failed with {code.name} at {len(indices)} entries, first at index {indices[0]}."
    )
    error = LogDomainFailure if code == FailureCode.LOG_DOMAIN else EvaluationFailure
    raise error(message, code=code, indices=indices, diagnostics=terms)


def tri_potential(
    inputs: KernelInputs, path: KernelPath = "folded", with_diagnostics: bool = False
) -> KernelOutput:
    result = evaluate(inputs, path)
    _raise_on_failure(result.failure, "Potential", result.terms)
    return KernelOutput(
        result.potential,
        result.imag_residue,
        result.failure,
        result.terms if with_diagnostics else None,
    )


def tri_flux(
    inputs: KernelInputs, path: KernelPath = "folded", with_diagnostics: bool = False
) -> tuple[KernelOutput, KernelOutput, KernelOutput]:
    result = evaluate(inputs, path)
    _raise_on_failure(result.failure, "Flux", result.terms)
    diagnostics = result.terms if with_diagnostics else None
    return tuple(
        KernelOutput(result.flux[..., k], result.imag_residue, result.failure, diagnostics)
        for k in range(3)
    )
