"""Ground-truth deformations: Euler-Bernoulli beams and Winkler foam.

Deflections are positive downward throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .condition import FORCE_BINS, LOCATION_BINS, Condition
from .voxel import DEFAULT_PITCH, GridSpec, HeightField, OrthoCamera, VoxelGrid, depth_to_grid, render_depth, voxelize

GRAVITY = 9.81
ROBOT_MASS = 6.3
PAYLOAD_MASS = 5.0

#: Force bin levels in newtons: robot alone, robot with full payload.
FORCE_LEVELS = (ROBOT_MASS * GRAVITY, (ROBOT_MASS + PAYLOAD_MASS) * GRAVITY)

#: Load positions as fractions of span, one per location bin.
LOCATION_FRACTIONS = tuple((k + 1) / 8 for k in range(LOCATION_BINS))


@dataclass(frozen=True)
class MaterialSpec:
    name: str
    young_modulus: float
    foundation_modulus: float | None = None

    def __post_init__(self):
        if self.name not in ("wood", "aluminium", "foam"):
            raise ValueError(f"unknown material {self.name!r}")
        if not self.young_modulus > 0:
            raise ValueError("young_modulus must be positive")
        if self.foundation_modulus is not None and not self.foundation_modulus > 0:
            raise ValueError("foundation_modulus must be positive")


MATERIALS = {
    "wood": MaterialSpec("wood", 9e9),
    "aluminium": MaterialSpec("aluminium", 69e9),
    "foam": MaterialSpec("foam", 1e6, foundation_modulus=1e5),
}

# material bin per scene family; foam scenes are trained as their own family
BEAM_MATERIAL_BINS = {"wood": 0, "aluminium": 1}
FOAM_MATERIAL_BINS = {"foam": 0}


@dataclass(frozen=True)
class BeamSpec:
    """Simply supported rectangular beam."""

    span: float
    width: float = 0.15
    thickness: float = 0.006
    material: MaterialSpec = field(default_factory=lambda: MATERIALS["wood"])

    def __post_init__(self):
        for name in ("span", "width", "thickness"):
            if not getattr(self, name) > 0:
                raise ValueError(f"beam {name} must be positive")

    @property
    def second_moment(self) -> float:
        return self.width * self.thickness**3 / 12.0

    @property
    def flexural_rigidity(self) -> float:
        return self.material.young_modulus * self.second_moment


@dataclass(frozen=True)
class LoadCase:
    force: float
    application_point: float = 0.5
    patch_width: float = 0.0

    def __post_init__(self):
        if not self.force >= 0:
            raise ValueError("force must be non-negative")
        if not 0 < self.application_point < 1:
            raise ValueError("application_point must lie strictly inside (0, 1)")
        if not self.patch_width >= 0:
            raise ValueError("patch_width must be non-negative")


def beam_deflection(beam: BeamSpec, load: LoadCase, x):
    """Closed-form deflection of a simply supported beam under a point load."""
    if load.patch_width != 0:
        raise ValueError("closed form covers point loads only; use beam_deflection_fd")
    L = beam.span
    xs = np.asarray(x, dtype=float)
    if (xs < 0).any() or (xs > L).any():
        raise ValueError(f"x outside the span [0, {L}]")
    F, EI = load.force, beam.flexural_rigidity
    a = load.application_point * L
    b = L - a
    left = F * b * xs * (L**2 - b**2 - xs**2) / (6 * L * EI)
    r = L - xs
    right = F * a * r * (L**2 - a**2 - r**2) / (6 * L * EI)
    out = np.where(xs <= a, left, right)
    return float(out) if out.ndim == 0 else out


def _hat_integrals(nodes: np.ndarray, h: float, s: float, e: float) -> np.ndarray:
    """Integral of each node's unit hat function over [s, e]."""
    lo = np.clip(s, nodes - h, nodes)
    hi = np.clip(e, nodes - h, nodes)
    rising = ((hi - nodes + h) ** 2 - (lo - nodes + h) ** 2) / (2 * h)
    lo = np.clip(s, nodes, nodes + h)
    hi = np.clip(e, nodes, nodes + h)
    falling = ((nodes + h - lo) ** 2 - (nodes + h - hi) ** 2) / (2 * h)
    return rising + falling


def beam_deflection_fd(beam: BeamSpec, load: LoadCase, n_nodes: int = 201):
    """Finite-difference solution of ``EI w'''' = q`` with simply supported ends.

    Returns ``(x, w)`` at ``n_nodes`` equally spaced nodes including both
    supports. Point loads are lumped onto the two neighbouring nodes;
    patch loads are spread uniformly over ``patch_width``.
    """
    if n_nodes < 16:
        raise ValueError("n_nodes must be at least 16")
    L, EI = beam.span, beam.flexural_rigidity
    if not (np.isfinite(L) and np.isfinite(EI) and L > 0 and EI > 0):
        raise ValueError("degenerate beam: span and flexural rigidity must be positive and finite")
    x = np.linspace(0.0, L, n_nodes)
    h = x[1] - x[0]
    inner = x[1:-1]
    a = load.application_point * L
    if load.patch_width > 0:
        s, e = max(0.0, a - load.patch_width / 2), min(L, a + load.patch_width / 2)
        nodal = load.force / load.patch_width * _hat_integrals(inner, h, s, e)
    else:
        nodal = load.force * np.clip(1 - np.abs(inner - a) / h, 0.0, None)
    rhs = nodal / h * h**4 / EI

    # (second difference)^2 with w = w'' = 0 at both ends: pentadiagonal
    m = n_nodes - 2
    ab = np.zeros((5, m))
    ab[0, 2:] = 1.0
    ab[1, 1:] = -4.0
    ab[2, :] = 6.0
    ab[2, 0] = ab[2, -1] = 5.0
    ab[3, :-1] = -4.0
    ab[4, :-2] = 1.0
    w = np.zeros(n_nodes)
    w[1:-1] = solve_banded((2, 2), ab, rhs)
    return x, w


@dataclass(frozen=True)
class PressurePatch:
    """Uniform pressure over an axis-aligned rectangle (world metres)."""

    pressure: float
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not self.pressure >= 0:
            raise ValueError("pressure must be non-negative")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("footprint rectangle is empty")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


def foam_indentation(material: MaterialSpec, patch: PressurePatch, spec: GridSpec, taper: float | None = None) -> HeightField:
    """Winkler settlement ``pressure / foundation_modulus`` on the grid's columns.

    The returned field's ``z`` holds settlement (downward positive). Outside
    the footprint it falls off linearly to zero over ``taper`` metres
    (default: one voxel pitch).
    """
    if material.name != "foam" or material.foundation_modulus is None:
        raise ValueError(f"foam indentation needs a foam material, got {material.name!r}")
    taper = spec.pitch if taper is None else taper
    w0 = patch.pressure / material.foundation_modulus
    cx = spec.centers(0)[:, None]
    cy = spec.centers(1)[None, :]
    dx = np.maximum(np.maximum(patch.x_min - cx, cx - patch.x_max), 0.0)
    dy = np.maximum(np.maximum(patch.y_min - cy, cy - patch.y_max), 0.0)
    d = np.hypot(dx, dy)
    w = w0 * np.clip(1.0 - d / taper, 0.0, 1.0)
    return HeightField.on_grid(spec, w, 0.0)


@dataclass(frozen=True)
class Wheel:
    name: str
    load_share: float
    footprint: tuple[float, float]


#: Effective contact footprints (x by y, metres) and static load shares.
WHEELS = (
    Wheel("front castor", 0.1, (0.06, 0.075)),
    Wheel("left wheel", 0.4, (0.2, 0.2)),
    Wheel("rear castor", 0.1, (0.06, 0.075)),
    Wheel("right wheel", 0.4, (0.2, 0.2)),
)


@dataclass(frozen=True)
class BeamScene:
    beam: BeamSpec
    support_level: float = 0.75

    kind = "beam"

    def support_height(self, spec: GridSpec) -> float:
        """Beam top at the supports, snapped to a voxel boundary."""
        return spec.origin[2] + round(self.support_level * spec.resolution) * spec.pitch


@dataclass(frozen=True)
class FoamScene:
    wheel: int
    board_thickness: float = 0.05
    material: MaterialSpec = field(default_factory=lambda: MATERIALS["foam"])
    surface_level: float = 0.5

    kind = "foam"

    def __post_init__(self):
        if not 0 <= self.wheel < len(WHEELS):
            raise ValueError(f"wheel index {self.wheel} outside [0, {len(WHEELS)})")
        if not self.board_thickness > 0:
            raise ValueError("board_thickness must be positive")

    def surface_height(self, spec: GridSpec) -> float:
        return spec.origin[2] + round(self.surface_level * spec.resolution) * spec.pitch


@dataclass
class Sample:
    input_grid: VoxelGrid
    condition: Condition
    target_grid: VoxelGrid
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.input_grid.spec.resolution != self.target_grid.spec.resolution or not np.isclose(
            self.input_grid.pitch, self.target_grid.pitch
        ):
            raise ValueError("input and target grids must share resolution and pitch")


def nearest_force_bin(force: float) -> int:
    return int(np.argmin([abs(force - f) for f in FORCE_LEVELS]))


def nearest_location_bin(fraction: float) -> int:
    return int(np.argmin([abs(fraction - f) for f in LOCATION_FRACTIONS]))


def _beam_field(scene: BeamScene, spec: GridSpec, deflection) -> HeightField:
    beam = scene.beam
    cx, cy = spec.centers(0), spec.centers(1)
    x0 = spec.origin[0] + (spec.extent - beam.span) / 2
    y0 = spec.origin[1] + (spec.extent - beam.width) / 2
    s = cx - x0
    in_x = (s >= 0) & (s <= beam.span)
    in_y = (cy >= y0) & (cy <= y0 + beam.width)
    if beam.span > spec.extent or beam.width > spec.extent:
        raise ValueError("beam does not fit inside the grid along x or y")
    z_top = scene.support_height(spec)
    drop = np.zeros_like(cx)
    if deflection is not None:
        drop[in_x] = deflection(s[in_x])
    z = np.broadcast_to((z_top - drop)[:, None], (spec.resolution, spec.resolution))
    support = np.where(in_x[:, None] & in_y[None, :], beam.thickness, 0.0)
    return HeightField.on_grid(spec, z, support)


def beam_profile(beam: BeamSpec, load: LoadCase):
    """Deflection as a callable of position along the span."""
    if load.patch_width == 0:
        return lambda s: beam_deflection(beam, load, np.clip(s, 0.0, beam.span))
    x, w = beam_deflection_fd(beam, load, 401)
    return lambda s: np.interp(s, x, w)


def _foam_fields(scene: FoamScene, load: LoadCase, spec: GridSpec):
    wheel = WHEELS[scene.wheel]
    lx, ly = wheel.footprint
    cx = spec.origin[0] + spec.extent / 2
    cy = spec.origin[1] + spec.extent / 2
    force = wheel.load_share * load.force
    patch = PressurePatch(force / (lx * ly), cx - lx / 2, cx + lx / 2, cy - ly / 2, cy + ly / 2)
    settle = foam_indentation(scene.material, patch, spec)
    top = scene.surface_height(spec)
    flat = HeightField.on_grid(spec, top, scene.board_thickness)
    # bottom of the board stays put
    sunk = HeightField.on_grid(spec, top - settle.z, np.maximum(scene.board_thickness - settle.z, 0.0))
    return flat, sunk, patch


def default_condition(scene, load: LoadCase) -> Condition:
    if scene.kind == "beam":
        return Condition(
            nearest_force_bin(load.force),
            nearest_location_bin(load.application_point),
            BEAM_MATERIAL_BINS[scene.beam.material.name],
        )
    return Condition(nearest_force_bin(load.force), scene.wheel, FOAM_MATERIAL_BINS[scene.material.name])


def generate_sample(scene, load: LoadCase, spec: GridSpec, view: str = "+y", condition: Condition | None = None) -> Sample:
    """Build one (undeformed depth shell, condition, deformed solid) triple.

    For foam scenes ``load.force`` is the robot's total weight; the wheel's
    share of it presses on the wheel's footprint centred in the grid.
    """
    condition = default_condition(scene, load) if condition is None else condition
    if scene.kind == "beam":
        beam = scene.beam
        undeformed = _beam_field(scene, spec, None)
        profile = beam_profile(beam, load)
        deformed = _beam_field(scene, spec, profile)
        meta = {
            "scene": "beam",
            "span": beam.span,
            "material": beam.material.name,
            "force": load.force,
            "location": load.application_point,
            "oracle_max_deflection": float(np.max(profile(np.linspace(0, beam.span, 401)))),
        }
    elif scene.kind == "foam":
        undeformed, deformed, patch = _foam_fields(scene, load, spec)
        meta = {
            "scene": "foam",
            "wheel": scene.wheel,
            "material": scene.material.name,
            "force": load.force,
            "pressure": patch.pressure,
            "oracle_max_deflection": patch.pressure / scene.material.foundation_modulus,
        }
    else:
        raise ValueError(f"unknown scene kind {scene.kind!r}")
    solid = voxelize(undeformed, spec)
    cam = OrthoCamera.facing(spec, view)
    input_grid = depth_to_grid(render_depth(solid, cam), spec)
    target_grid = voxelize(deformed, spec)
    return Sample(input_grid, condition, target_grid, meta)


def default_pitch(scene_kind: str, resolution: int) -> float:
    """Beam grids keep the 64-voxel world cube at any resolution; foam patches keep the pitch."""
    if scene_kind == "beam":
        return DEFAULT_PITCH * 64 / resolution
    return DEFAULT_PITCH


def check_bins(forces, locations) -> None:
    for f in forces:
        if not 0 <= f < FORCE_BINS:
            raise ValueError(f"force bin {f} outside [0, {FORCE_BINS})")
    for loc in locations:
        if not 0 <= loc < LOCATION_BINS:
            raise ValueError(f"location bin {loc} outside [0, {LOCATION_BINS})")
