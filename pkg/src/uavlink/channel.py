"""Ground-truth air-ground channel synthesis.

Per-antenna channels combine the BS element pattern (for BS-to-UAV), fixed
dBi gains, urban-Macro aerial path loss, and per-slot small-scale fading.
All factors are amplitude-domain: |h|^2 carries the link power budget. The
distance-normalized coefficient theta = h * D^2 is what the estimators
regress.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import EnvMap, Position, Trajectory, is_los, position_at

BTU = "btu"  # BS -> UAV (uplink control)
UTB = "utb"  # UAV -> BS (downlink payload)

# 3GPP-style element pattern constants
_GAIN_MAX_DBI = 8.0
_ANGLE_3DB_DEG = 65.0
_FLOOR_DB = 30.0

# Height used in the NLoS path-loss form when the UAV sits on the ground.
_MIN_PATHLOSS_HEIGHT_M = 1.5


@dataclass(frozen=True)
class RadioConfig:
    """Radio-side constants: array size, gains, carrier, BS placement.

    azimuth_omni models a vertically stacked array of azimuth-omnidirectional
    elements (the default): the element pattern then varies only with
    elevation. Disable it to add the azimuth parabola around boresight_deg.
    """

    bs_pos: Position
    fc_ghz: float = 2.0
    n_antennas: int = 8
    gt_dbi: float = 1.0
    gr_dbi: float = 1.0
    rician_db: float = 15.0
    downtilt_deg: float = 0.0
    boresight_deg: float = 0.0
    azimuth_omni: bool = True
    los_exponent: float = 2.2

    def __post_init__(self):
        if self.n_antennas < 1:
            raise ValueError(f"antenna count must be >= 1, got {self.n_antennas}")
        if self.fc_ghz <= 0:
            raise ValueError(f"carrier frequency must be > 0, got {self.fc_ghz}")


@dataclass
class ChannelVector:
    """Per-antenna channel h and coefficient theta = h * D^2 for one slot."""

    direction: str
    t: int
    h: np.ndarray          # (K,) complex amplitudes
    theta: np.ndarray      # (K,) complex, h * d_bv_m^2
    d_bv_m: float
    los: bool


def path_loss_db(d3d_m: float, h_uav_m: float, los: bool, fc_ghz: float,
                 los_exponent: float = 2.2) -> float:
    """Urban-Macro aerial path loss in dB.

    LoS:  28 + 10*n*log10(d) + 20*log10(fc), n defaulting to 2.2.
    NLoS: -17.5 + (46 - 7*log10(h))*log10(d) + 20*log10(40*pi*fc/3).
    """
    if d3d_m <= 0:
        raise ValueError(f"3-D distance must be > 0, got {d3d_m}")
    if h_uav_m <= 0:
        raise ValueError(f"UAV height must be > 0, got {h_uav_m}")
    if los:
        return 28.0 + 10.0 * los_exponent * math.log10(d3d_m) + 20.0 * math.log10(fc_ghz)
    return (
        -17.5
        + (46.0 - 7.0 * math.log10(h_uav_m)) * math.log10(d3d_m)
        + 20.0 * math.log10(40.0 * math.pi * fc_ghz / 3.0)
    )


def bs_element_gain_db(bs: Position, uav: Position, cfg: RadioConfig) -> float:
    """BS element-pattern gain toward the UAV, in dBi.

    Pattern: G_max - min(A_V + A_H, A_m) with A_V/A_H the 12*(angle/65)^2
    parabolas clamped at 30 dB, G_max = 8 dBi. Vertical offset is measured
    from a boresight tilted down by `downtilt_deg`; azimuth offset from
    `boresight_deg`.
    """
    dx = (uav.x_km - bs.x_km) * 1000.0
    dy = (uav.y_km - bs.y_km) * 1000.0
    dz = (uav.g_km - bs.g_km) * 1000.0
    d2d = math.hypot(dx, dy)
    if d2d == 0.0 and dz == 0.0:
        raise ValueError("BS and UAV positions coincide")

    elev_deg = math.degrees(math.atan2(dz, d2d))
    v_off = elev_deg + cfg.downtilt_deg
    if cfg.azimuth_omni:
        az_off = 0.0
    else:
        az_deg = math.degrees(math.atan2(dy, dx)) if d2d > 0 else 0.0
        az_off = (az_deg - cfg.boresight_deg + 180.0) % 360.0 - 180.0

    a_v = min(12.0 * (v_off / _ANGLE_3DB_DEG) ** 2, _FLOOR_DB)
    a_h = min(12.0 * (az_off / _ANGLE_3DB_DEG) ** 2, _FLOOR_DB)
    return _GAIN_MAX_DBI - min(a_v + a_h, _FLOOR_DB)


def sample_fading(los: bool, rician_db: float, rng: np.random.Generator,
                  size: int | None = None) -> complex | np.ndarray:
    """Unit-mean-square small-scale fading: Rician under LoS, Rayleigh otherwise."""
    n = 1 if size is None else size
    if los and math.isinf(rician_db):
        f = np.ones(n, dtype=complex)
    else:
        scatter = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2.0)
        if los:
            kappa = 10.0 ** (rician_db / 10.0)
            f = math.sqrt(kappa / (kappa + 1.0)) + math.sqrt(1.0 / (kappa + 1.0)) * scatter
        else:
            f = scatter
    return complex(f[0]) if size is None else f


def _amp(dbi_or_db: float) -> float:
    return 10.0 ** (dbi_or_db / 20.0)


def channel_at(pos: Position, direction: str, env: EnvMap, cfg: RadioConfig,
               rng: np.random.Generator | None, t: int = 0,
               include_fading: bool = True) -> ChannelVector:
    """Synthesize the channel for an arbitrary UAV position.

    With include_fading=False the small-scale term is pinned to 1, leaving
    the deterministic large-scale channel (the default estimator target).
    """
    if direction not in (BTU, UTB):
        raise ValueError(f"unknown direction {direction!r}")
    bs = cfg.bs_pos
    d_m = bs.distance_m(pos)
    if d_m <= 0:
        raise ValueError("UAV is at the BS position")
    los = is_los(bs, pos, env)
    h_uav_m = max(pos.g_km * 1000.0, _MIN_PATHLOSS_HEIGHT_M)
    pl_db = path_loss_db(d_m, h_uav_m, los, cfg.fc_ghz, cfg.los_exponent)
    g_path = _amp(-pl_db)

    if direction == BTU:
        a_tx = _amp(bs_element_gain_db(bs, pos, cfg))
    else:
        a_tx = _amp(cfg.gt_dbi)
    a_rx = _amp(cfg.gr_dbi)

    scale = a_tx * a_rx * g_path
    if include_fading:
        f = sample_fading(los, cfg.rician_db, rng, size=cfg.n_antennas)
    else:
        f = np.ones(cfg.n_antennas, dtype=complex)
    h = scale * f
    return ChannelVector(
        direction=direction,
        t=t,
        h=h,
        theta=h * d_m**2,
        d_bv_m=d_m,
        los=los,
    )


def true_channel(t: int, direction: str, env: EnvMap, traj: Trajectory,
                 cfg: RadioConfig, rng: np.random.Generator) -> ChannelVector:
    """Ground-truth faded channel at slot t of the trajectory."""
    return channel_at(position_at(traj, t), direction, env, cfg, rng, t=t)


TRACE_HEADER = "t,dir,k,re_h,im_h,re_theta,im_theta,D_m,los"


def write_channel_trace(vectors: list[ChannelVector], path) -> None:
    """Dump channel vectors to CSV, one row per (slot, direction, antenna)."""
    lines = [TRACE_HEADER]
    for vec in vectors:
        for k in range(len(vec.h)):
            lines.append(
                f"{vec.t},{vec.direction},{k + 1},"
                f"{vec.h[k].real!r},{vec.h[k].imag!r},"
                f"{vec.theta[k].real!r},{vec.theta[k].imag!r},"
                f"{vec.d_bv_m!r},{int(vec.los)}"
            )
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
