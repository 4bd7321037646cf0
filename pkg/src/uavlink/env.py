"""Urban building environment, line-of-sight queries, and UAV trajectories.

Buildings are axis-aligned squares on a regular grid whose side is chosen so
that built-area fraction and building density match the requested statistics.
Heights follow a clipped Rayleigh distribution. All geometry is exact: the
LoS test clips the 3-D segment against every footprint it crosses.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

CIRCULAR = "c2t"
VERTICAL_ASCENT = "vat"


@dataclass(frozen=True)
class Position:
    """A point [x, y, g] in km; g is height above ground."""

    x_km: float
    y_km: float
    g_km: float

    def __post_init__(self):
        if self.g_km < 0:
            raise ValueError(f"altitude must be nonnegative, got {self.g_km} km")

    def as_array_m(self) -> np.ndarray:
        return np.array([self.x_km, self.y_km, self.g_km]) * 1000.0

    def distance_m(self, other: "Position") -> float:
        return float(np.linalg.norm(self.as_array_m() - other.as_array_m()))


@dataclass(frozen=True)
class BuildingParams:
    """Statistical parameters of the urban building layout."""

    alpha: float = 0.3            # built-area fraction
    beta_per_km2: float = 300.0   # building density
    sigma_m: float = 30.0         # Rayleigh height scale
    height_clip_m: float = 40.0   # max height after clipping
    area_side_km: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.beta_per_km2 < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta_per_km2}")
        if self.sigma_m <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma_m}")
        if self.height_clip_m <= 0:
            raise ValueError(f"height clip must be > 0, got {self.height_clip_m}")
        if self.area_side_km <= 0:
            raise ValueError(f"area side must be > 0, got {self.area_side_km}")


@dataclass
class EnvMap:
    """Realized building map: square footprints (meters) plus region size."""

    centers_m: np.ndarray          # (N, 2) footprint centers
    sides_m: np.ndarray            # (N,) footprint side lengths
    heights_m: np.ndarray          # (N,) building heights
    region_km: float
    seed: int

    @property
    def n_buildings(self) -> int:
        return len(self.heights_m)

    @property
    def max_height_m(self) -> float:
        return float(self.heights_m.max()) if self.n_buildings else 0.0

    def built_fraction(self) -> float:
        area_m2 = (self.region_km * 1000.0) ** 2
        return float(np.sum(self.sides_m**2)) / area_m2

    def to_dict(self) -> dict:
        return {
            "region_km": self.region_km,
            "seed": self.seed,
            "buildings": [
                {
                    "cx_m": float(cx),
                    "cy_m": float(cy),
                    "side_m": float(s),
                    "height_m": float(h),
                }
                for (cx, cy), s, h in zip(self.centers_m, self.sides_m, self.heights_m)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnvMap":
        bld = d["buildings"]
        centers = np.array([[b["cx_m"], b["cy_m"]] for b in bld], dtype=float)
        centers = centers.reshape(len(bld), 2)
        return cls(
            centers_m=centers,
            sides_m=np.array([b["side_m"] for b in bld], dtype=float),
            heights_m=np.array([b["height_m"] for b in bld], dtype=float),
            region_km=float(d["region_km"]),
            seed=int(d["seed"]),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=1)

    @classmethod
    def load(cls, path) -> "EnvMap":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class Trajectory:
    """UAV flight path over a horizon of T slots.

    Circular: one pass of `revolutions` turns around `center` at fixed
    altitude.  Vertical ascent: linear interpolation start -> end.
    """

    kind: str
    horizon: int
    center: Position | None = None
    radius_km: float = 0.0
    revolutions: float = 1.0
    start: Position | None = None
    end: Position | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.kind == CIRCULAR:
            if self.center is None or self.radius_km <= 0:
                raise ValueError("circular trajectory needs a center and radius > 0")
        elif self.kind == VERTICAL_ASCENT:
            if self.start is None or self.end is None or self.start == self.end:
                raise ValueError("ascent trajectory needs distinct start and end")
        else:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")

    @classmethod
    def circular(cls, center: Position, radius_km: float, horizon: int,
                 revolutions: float = 1.0) -> "Trajectory":
        return cls(kind=CIRCULAR, horizon=horizon, center=center,
                   radius_km=radius_km, revolutions=revolutions)

    @classmethod
    def vertical(cls, start: Position, end: Position, horizon: int) -> "Trajectory":
        return cls(kind=VERTICAL_ASCENT, horizon=horizon, start=start, end=end)


def generate_env(params: BuildingParams, seed: int) -> EnvMap:
    """Realize a building map for the given statistics, deterministically.

    Building count is round(beta * area); footprints are squares of side
    1000*sqrt(alpha/beta) m centered on a regular grid; heights are i.i.d.
    Rayleigh(sigma) clipped to the height cap.

    Raises ValueError when the footprint side exceeds the grid pitch
    (footprints would overlap).
    """
    area_km2 = params.area_side_km**2
    count = int(round(params.beta_per_km2 * area_km2))
    if count == 0:
        return EnvMap(
            centers_m=np.zeros((0, 2)),
            sides_m=np.zeros(0),
            heights_m=np.zeros(0),
            region_km=params.area_side_km,
            seed=seed,
        )

    side_m = params.area_side_km * 1000.0
    width = 1000.0 * math.sqrt(params.alpha / params.beta_per_km2)
    nx = math.ceil(math.sqrt(count))
    ny = math.ceil(count / nx)
    pitch_x = side_m / nx
    pitch_y = side_m / ny
    if width > min(pitch_x, pitch_y) + 1e-9:
        raise ValueError(
            f"footprint side {width:.2f} m exceeds grid pitch "
            f"{min(pitch_x, pitch_y):.2f} m; alpha/beta combination overlaps"
        )

    idx = np.arange(count)
    cx = (idx % nx + 0.5) * pitch_x
    cy = (idx // nx + 0.5) * pitch_y

    rng = np.random.default_rng(seed)
    heights = np.minimum(rng.rayleigh(params.sigma_m, count), params.height_clip_m)

    return EnvMap(
        centers_m=np.column_stack([cx, cy]),
        sides_m=np.full(count, width),
        heights_m=heights,
        region_km=params.area_side_km,
        seed=seed,
    )


def _slab_interval(p0: float, d: float, lo: np.ndarray, hi: np.ndarray):
    """Parameter interval where p0 + t*d lies inside [lo, hi], per building."""
    if abs(d) < 1e-12:
        inside = (p0 >= lo) & (p0 <= hi)
        t0 = np.where(inside, -np.inf, np.inf)
        t1 = np.where(inside, np.inf, -np.inf)
        return t0, t1
    ta = (lo - p0) / d
    tb = (hi - p0) / d
    return np.minimum(ta, tb), np.maximum(ta, tb)


def is_los(a: Position, b: Position, env: EnvMap) -> bool:
    """True iff the 3-D segment a->b clears every building footprint it crosses.

    The segment altitude is linear, so checking both ends of each crossing
    interval is exact. Symmetric in (a, b).
    """
    if env.n_buildings == 0:
        return True
    p = a.as_array_m()
    q = b.as_array_m()
    d = q - p

    half = env.sides_m / 2.0
    tx0, tx1 = _slab_interval(p[0], d[0], env.centers_m[:, 0] - half,
                              env.centers_m[:, 0] + half)
    ty0, ty1 = _slab_interval(p[1], d[1], env.centers_m[:, 1] - half,
                              env.centers_m[:, 1] + half)
    t0 = np.maximum(np.maximum(tx0, ty0), 0.0)
    t1 = np.minimum(np.minimum(tx1, ty1), 1.0)
    crossing = t1 >= t0
    if not crossing.any():
        return True

    z0 = p[2] + d[2] * t0[crossing]
    z1 = p[2] + d[2] * t1[crossing]
    zmin = np.minimum(z0, z1)
    blocked = zmin <= env.heights_m[crossing]
    return not bool(blocked.any())


def position_at(traj: Trajectory, t: int) -> Position:
    """UAV position at slot t (1-based, 1 <= t <= horizon)."""
    if not 1 <= t <= traj.horizon:
        raise ValueError(f"slot {t} outside [1, {traj.horizon}]")
    if traj.kind == CIRCULAR:
        ang = 2.0 * math.pi * traj.revolutions * (t - 1) / traj.horizon
        return Position(
            traj.center.x_km + traj.radius_km * math.cos(ang),
            traj.center.y_km + traj.radius_km * math.sin(ang),
            traj.center.g_km,
        )
    frac = 0.0 if traj.horizon == 1 else (t - 1) / (traj.horizon - 1)
    return Position(
        traj.start.x_km + frac * (traj.end.x_km - traj.start.x_km),
        traj.start.y_km + frac * (traj.end.y_km - traj.start.y_km),
        traj.start.g_km + frac * (traj.end.g_km - traj.start.g_km),
    )
