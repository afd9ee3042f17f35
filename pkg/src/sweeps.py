"""Field-point sweeps over a single canonical element and the comparison methods run on them.

Sweeps are defined in the normalised frame of the element (x-leg 1, z-leg zM, identity frame),
so a sweep point is both a global and a local point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
import pandas as pd
import torch
from loguru import logger
from tqdm import tqdm

from src.errors import NoConvergence, NodeCollision, UsageError
from src.geometry import DTYPE, ElementFrame, PanelElement, TrianglePrimitive
from src.kernels import FailureCode, KernelInputs, evaluate
from src.quadrature import QuadratureSpec, adaptive_oracle, centroid_influence, quad_influence
from src.robust import EvalPath, EvalPolicy, LocationKind, classify_batch, influence_batch

Plane = Literal["XZ", "XY", "YZ"]
Spacing = Literal["linear", "log"]
CANONICAL_SWEEPS = ("diagonal", "centroidal", "piercing", "far")
CENTROID_FRACTION = 1.0 / 3.0


@dataclass
class SweepSpec:
    name: str
    points: torch.Tensor  # (M, 3)
    z_m: float
    methods: tuple[str, ...] = ("exact",)
    parameter: torch.Tensor | None = None  # (M,) plot abscissa
    parameter_name: str = "t"
    grid_shape: tuple[int, int] | None = None

    def __post_init__(self):
        self.points = torch.as_tensor(self.points, dtype=DTYPE).reshape(-1, 3)
        if not (math.isfinite(self.z_m) and self.z_m > 0):
            raise UsageError(f"zM must be positive and finite, got {self.z_m}.")
        if self.parameter is None:
            self.parameter = torch.arange(self.points.shape[0], dtype=DTYPE)
        for method in self.methods:
            parse_method(method)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def element(self) -> PanelElement:
        return PanelElement(TrianglePrimitive(self.z_m), ElementFrame.identity())

    def centroid_distance(self) -> torch.Tensor:
        centroid = torch.tensor([CENTROID_FRACTION, 0.0, self.z_m / 3.0], dtype=DTYPE)
        return torch.linalg.norm(self.points - centroid, dim=-1)


@dataclass(frozen=True)
class MethodSpec:
    kind: Literal["exact", "centroid", "quad", "adaptive"]
    quadrature: QuadratureSpec | None = None


def parse_method(name: str) -> MethodSpec:
    match name:
        case "exact":
            return MethodSpec("exact")
        case "centroid":
            return MethodSpec("centroid")
        case "adaptive":
            return MethodSpec("adaptive")
        case _ if name.startswith("quad"):
            return MethodSpec("quad", QuadratureSpec.parse(name))
        case _:
            raise UsageError(
                f"Unknown method {name!r}; use exact, centroid, adaptive or quad<N>[x<M>][-gl]."
            )


############# Point sets ##############
def line_points(
    start, end, samples: int, spacing: Spacing = "linear", log_min_fraction: float = 1e-4
) -> tuple[torch.Tensor, torch.Tensor]:
    """Points on the segment start -> end and their signed distance from the segment midpoint.

    Log spacing clusters samples geometrically towards both ends from the midpoint outwards,
    the smallest offset being `log_min_fraction` of the half length.
    """
    if samples < 2:
        raise UsageError(f"A line needs at least 2 samples, got {samples}.")
    start = torch.as_tensor(start, dtype=DTYPE)
    end = torch.as_tensor(end, dtype=DTYPE)
    half_length = 0.5 * float(torch.linalg.norm(end - start))
    if half_length == 0:
        raise UsageError("Line start and end coincide.")
    if spacing == "linear":
        t = torch.linspace(-1.0, 1.0, samples, dtype=DTYPE)
    elif spacing == "log":
        if not 0 < log_min_fraction < 1:
            raise UsageError(f"log_min_fraction must lie in (0, 1), got {log_min_fraction}.")
        half = torch.logspace(math.log10(log_min_fraction), 0.0, samples // 2, dtype=DTYPE)
        middle = torch.zeros(samples % 2, dtype=DTYPE)
        t = torch.cat([-half.flip(0), middle, half])
    else:
        raise UsageError(f"Unknown spacing {spacing}.")
    midpoint = 0.5 * (start + end)
    points = midpoint + 0.5 * t[:, None] * (end - start)
    return points, t * half_length


def grid_points(
    plane: Plane,
    lower: tuple[float, float],
    upper: tuple[float, float],
    samples: tuple[int, int],
    offset: float = 0.0,
) -> torch.Tensor:
    """Row-major (first axis slowest) grid on a coordinate plane at `offset` along its normal."""
    if min(samples) < 2:
        raise UsageError(f"A grid needs at least 2 samples per axis, got {samples}.")
    axes = {"XZ": (0, 2, 1), "XY": (0, 1, 2), "YZ": (1, 2, 0)}.get(plane)
    if axes is None:
        raise UsageError(f"Unknown grid plane {plane}; use XZ, XY or YZ.")
    first, second, normal = axes
    u = torch.linspace(lower[0], upper[0], samples[0], dtype=DTYPE)
    v = torch.linspace(lower[1], upper[1], samples[1], dtype=DTYPE)
    uu, vv = torch.meshgrid(u, v, indexing="ij")
    points = torch.empty(uu.numel(), 3, dtype=DTYPE)
    points[:, first] = uu.reshape(-1)
    points[:, second] = vv.reshape(-1)
    points[:, normal] = offset
    return points


def line_sweep(
    start,
    end,
    samples: int,
    z_m: float,
    methods=("exact",),
    spacing: Spacing = "linear",
    name: str = "line",
) -> SweepSpec:
    points, parameter = line_points(start, end, samples, spacing)
    return SweepSpec(name, points, z_m, tuple(methods), parameter, "s")


def grid_sweep(
    plane: Plane,
    z_m: float,
    samples: int = 101,
    margin: float = 1.0,
    offset: float = 0.0,
    methods=("exact",),
) -> SweepSpec:
    """Plane grid covering the element's extent on that plane plus `margin` on every side."""
    extents = {"X": (-margin, 1.0 + margin), "Y": (-margin - 0.5 * z_m, margin + 0.5 * z_m)}
    extents["Z"] = (-margin, z_m + margin)
    first, second = plane[0], plane[1]
    lower = (extents[first][0], extents[second][0])
    upper = (extents[first][1], extents[second][1])
    points = grid_points(plane, lower, upper, (samples, samples), offset)
    return SweepSpec(
        f"grid-{plane}", points, z_m, tuple(methods), grid_shape=(samples, samples)
    )


def canonical_sweep(
    name: str, samples: int | None = None, methods: tuple[str, ...] | None = None
) -> SweepSpec:
    """The validation lines: through the zM = 1 element, along the zM = 10 element plane,
    piercing the zM = 10 element, and the far-field diagonal."""
    match name:
        case "diagonal":
            methods = methods or ("exact", "centroid", "quad100")
            return line_sweep((-2, -2, -2), (2, 2, 2), samples or 401, 1.0, methods, name=name)
        case "centroidal":
            z = torch.linspace(-5.0, 15.0, samples or 401, dtype=DTYPE)
            x = torch.full_like(z, CENTROID_FRACTION)
            points = torch.stack([x, torch.zeros_like(z), z], dim=-1)
            methods = methods or ("exact", "quad100", "quad500")
            return SweepSpec(name, points, 10.0, methods, z, "z")
        case "piercing":
            methods = methods or ("exact", "quad100")
            return line_sweep((-10,) * 3, (10,) * 3, samples or 401, 10.0, methods, name=name)
        case "far":
            methods = methods or ("exact", "centroid", "quad10", "quad100")
            return line_sweep(
                (-1000,) * 3, (1000,) * 3, samples or 2000, 10.0, methods, "log", name=name
            )
        case _:
            raise UsageError(f"Unknown sweep {name!r}; choose from {', '.join(CANONICAL_SWEEPS)}.")


############# Method evaluation ##############
def _pointwise(fn, points: torch.Tensor, what: str) -> tuple[torch.Tensor, torch.Tensor]:
    """Evaluate `fn` point by point, NaN where a node or centroid collides with the point."""
    potential = torch.full((points.shape[0],), math.nan, dtype=DTYPE)
    flux = torch.full((points.shape[0], 3), math.nan, dtype=DTYPE)
    collisions = 0
    for m in range(points.shape[0]):
        try:
            potential[m], flux[m] = fn(points[m])
        except NodeCollision:
            collisions += 1
    logger.warning(f"{what}: {collisions} points coincide with a node and are reported as NaN")
    return potential, flux


def evaluate_method(
    method: str,
    z_m: float,
    points: torch.Tensor,
    policy: EvalPolicy = EvalPolicy(),
    progress: bool = False,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Potential (M,) and flux (M, 3) of the unit-strength canonical element by one method."""
    spec = parse_method(method)
    points = torch.as_tensor(points, dtype=DTYPE).reshape(-1, 3)
    match spec.kind:
        case "exact":
            element = PanelElement(TrianglePrimitive(z_m), ElementFrame.identity())
            batch = influence_batch([element], points, policy, progress=progress)
            return batch.potential[:, 0], batch.flux[:, 0]
        case "centroid":
            try:
                return centroid_influence(z_m, points, policy.distance_floor)
            except NodeCollision:
                return _pointwise(
                    lambda p: centroid_influence(z_m, p, policy.distance_floor), points, method
                )
        case "quad":
            try:
                return quad_influence(
                    z_m, points, spec.quadrature, distance_floor=policy.distance_floor
                )
            except NodeCollision:
                return _pointwise(
                    lambda p: quad_influence(
                        z_m, p, spec.quadrature, distance_floor=policy.distance_floor
                    ),
                    points,
                    method,
                )
        case "adaptive":
            potential = torch.empty(points.shape[0], dtype=DTYPE)
            flux = torch.empty(points.shape[0], 3, dtype=DTYPE)
            capped = 0
            rows = tqdm(range(points.shape[0]), desc="Adaptive", disable=not progress, leave=False)
            for m in rows:
                try:
                    result = adaptive_oracle(
                        z_m,
                        points[m],
                        tol=policy.fallback_tol,
                        rule=policy.fallback_rule,
                        max_cells=policy.fallback_max_cells,
                        distance_floor=policy.distance_floor,
                    )
                except NoConvergence as e:
                    result = e.result
                    capped += 1
                potential[m], flux[m] = result.potential, result.flux
            if capped:
                logger.warning(f"Adaptive oracle hit the level cap at {capped} points")
            return potential, flux


def run_sweep(
    sweep: SweepSpec, policy: EvalPolicy = EvalPolicy(), progress: bool = False
) -> pd.DataFrame:
    """One row per point: coordinates, robust exact values with path and flags, then the
    potential and flux of every comparison method in `<quantity>_<method>` columns."""
    logger.info(f"Sweep {sweep.name}: {len(sweep)} points, zM={sweep.z_m}, methods {sweep.methods}")
    batch = influence_batch([sweep.element], sweep.points, policy, progress=progress)
    table = pd.DataFrame(
        {
            sweep.parameter_name: sweep.parameter.numpy(),
            "x": sweep.points[:, 0].numpy(),
            "y": sweep.points[:, 1].numpy(),
            "z": sweep.points[:, 2].numpy(),
            "phi": batch.potential[:, 0].numpy(),
            "fx": batch.flux[:, 0, 0].numpy(),
            "fy": batch.flux[:, 0, 1].numpy(),
            "fz": batch.flux[:, 0, 2].numpy(),
            "path": [EvalPath(int(p)).label for p in batch.path[:, 0]],
            "flags": [";".join(map(str, batch.flags.get((m, 0), []))) for m in range(len(sweep))],
        }
    )
    if sweep.grid_shape is not None:
        rows, cols = sweep.grid_shape
        table.insert(0, "j", [m % cols for m in range(len(sweep))])
        table.insert(0, "i", [m // cols for m in range(len(sweep))])
    for method in sweep.methods:
        if method == "exact":
            continue
        potential, flux = evaluate_method(method, sweep.z_m, sweep.points, policy, progress)
        table[f"phi_{method}"] = potential.numpy()
        for k, axis in enumerate("xyz"):
            table[f"f{axis}_{method}"] = flux[:, k].numpy()
    counts = batch.flag_counts()
    if counts:
        logger.info(f"Sweep {sweep.name} flags: {dict(counts)}")
    return table


############# Error studies ##############
def relative_errors(table: pd.DataFrame, methods) -> pd.DataFrame:
    """|phi_method - phi| / |phi| per point for every comparison method."""
    errors = pd.DataFrame(index=table.index)
    if "distance" in table:
        errors["distance"] = table["distance"]
    for method in methods:
        if method == "exact":
            continue
        errors[method] = (table[f"phi_{method}"] - table["phi"]).abs() / table["phi"].abs()
    return errors


def crossing_distance(distance, error, level: float = 0.01) -> float:
    """Smallest distance beyond which every sample's error stays below `level`.

    Returns 0 when no sample reaches the level and inf when the outermost sample does.
    """
    distance = torch.from_numpy(np.array(distance, dtype=np.float64))
    error = torch.from_numpy(np.array(error, dtype=np.float64))
    above = (error >= level) | ~torch.isfinite(error)
    if not bool(above.any()):
        return 0.0
    outermost = float(distance[above].max())
    if outermost >= float(distance.max()):
        return math.inf
    return outermost


def random_generic_points(
    count: int,
    generator: torch.Generator,
    z_m_range: tuple[float, float] = (0.2, 10.0),
    box: float = 3.0,
    min_distance: float = 0.2,
    policy: EvalPolicy = EvalPolicy(),
) -> tuple[torch.Tensor, torch.Tensor]:
    """Random (zM, P) pairs in normalised units whose points stay `min_distance` away from the
    element. zM is log-uniform, P uniform in a box around the element."""
    log_lo, log_hi = math.log(z_m_range[0]), math.log(z_m_range[1])
    z_ms, points = [], []
    collected = 0
    while collected < count:
        n = 2 * (count - collected) + 16
        u = torch.rand(n, generator=generator, dtype=DTYPE)
        z_m = torch.exp(log_lo + (log_hi - log_lo) * u)
        unit = torch.rand(n, 3, generator=generator, dtype=DTYPE)
        lower = torch.tensor([-box, -box, -box], dtype=DTYPE)
        width = torch.tensor([1 + 2 * box, 2 * box, 1 + 2 * box], dtype=DTYPE)
        P = lower + unit * width
        P[:, 2] *= z_m.clamp(min=1.0)
        kind, _, scale = classify_batch(z_m, P, policy)
        keep = (kind == LocationKind.GENERIC) & (scale >= min_distance)
        z_ms.append(z_m[keep])
        points.append(P[keep])
        collected += int(keep.sum())
    return torch.cat(z_ms)[:count], torch.cat(points)[:count]


def oracle_agreement(
    z_m: torch.Tensor, points: torch.Tensor, tol: float = 1e-9, progress: bool = False
) -> pd.DataFrame:
    """Relative difference of the exact kernel against the adaptive oracle, per point."""
    kernel = evaluate(KernelInputs.from_points(z_m, points))
    rows = []
    for m in tqdm(range(points.shape[0]), desc="Oracle", disable=not progress, leave=False):
        oracle = adaptive_oracle(float(z_m[m]), points[m], tol=tol)
        scale = max(abs(oracle.potential), float(oracle.flux.abs().max()))
        rows.append(
            {
                "z_m": float(z_m[m]),
                "x": float(points[m, 0]),
                "y": float(points[m, 1]),
                "z": float(points[m, 2]),
                "phi_rel_err": abs(float(kernel.potential[m]) - oracle.potential)
                / abs(oracle.potential),
                "flux_rel_err": float((kernel.flux[m] - oracle.flux).abs().max()) / scale,
                "failure": FailureCode(int(kernel.failure[m])).name,
            }
        )
    return pd.DataFrame(rows)


def gradient_agreement(
    z_m: torch.Tensor, points: torch.Tensor, step: float = 1e-5
) -> pd.DataFrame:
    """Flux against a central difference of the potential, F = -grad phi."""
    kernel = evaluate(KernelInputs.from_points(z_m, points))
    difference = torch.empty_like(points)
    for k in range(3):
        shift = torch.zeros(3, dtype=DTYPE)
        shift[k] = step
        plus = evaluate(KernelInputs.from_points(z_m, points + shift)).potential
        minus = evaluate(KernelInputs.from_points(z_m, points - shift)).potential
        difference[:, k] = -(plus - minus) / (2 * step)
    scale = kernel.flux.abs().amax(dim=-1).clamp(min=1e-12)
    error = (kernel.flux - difference).abs().amax(dim=-1) / scale
    return pd.DataFrame(
        {
            "z_m": z_m.numpy(),
            "x": points[:, 0].numpy(),
            "y": points[:, 1].numpy(),
            "z": points[:, 2].numpy(),
            "rel_err": error.numpy(),
        }
    )
