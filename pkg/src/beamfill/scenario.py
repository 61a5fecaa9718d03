"""Synthetic distributed-MIMO scenario generation.

Produces per-UE grids of L1-RSRP values (dB) over every access-point beam.
The channel is a parametric stand-in for ray tracing: free-space path loss
at the carrier frequency, Gaussian-shaped beam lobes, and log-normal
shadowing drawn once per (UE, AP) link.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError

SPEED_OF_LIGHT_M_S = 299_792_458.0
MIN_PROPAGATION_DISTANCE_M = 1.0  # clamps the d -> 0 path-loss singularity
LOBE_FLOOR_DB = 30.0  # max attenuation relative to the lobe peak

UE_ANTENNA_KINDS = ("omni", "directional")


@dataclass(frozen=True)
class ScenarioConfig:
    """Geometry, radio and sampling parameters for one synthetic deployment."""

    num_aps: int = 10
    beams_per_ap: int = 32
    area: tuple[float, float] = (200.0, 200.0)  # rectangle (width, height) in meters
    ap_positions: object = "auto-grid"  # "auto-grid" or sequence of (x, y) points
    ue_count: int = 200
    carrier_freq_ghz: float = 28.0
    tx_power_dbm: float = 30.0
    shadowing_sigma_db: float = 4.0
    ue_antenna: str = "omni"
    ue_antenna_gain_db: float = 9.0
    beamwidth_deg: float = 20.0  # 3 dB beamwidth of AP lobes
    ue_beamwidth_deg: float = 90.0  # 3 dB beamwidth of the directional UE lobe
    noise_floor_dbm: float = -120.0
    seed: int = 0

    def __post_init__(self):
        if self.num_aps < 1:
            raise ConfigurationError("num_aps must be >= 1")
        if self.beams_per_ap < 2:
            raise ConfigurationError("beams_per_ap must be >= 2")
        w, h = self.area
        if w <= 0 or h <= 0:
            raise ConfigurationError(f"area must have positive extent, got {self.area}")
        if self.ue_count < 1:
            raise ConfigurationError("ue_count must be >= 1")
        if self.carrier_freq_ghz <= 0:
            raise ConfigurationError("carrier_freq_ghz must be positive")
        if self.shadowing_sigma_db < 0:
            raise ConfigurationError("shadowing_sigma_db must be >= 0")
        if not 0.0 < self.beamwidth_deg < 180.0:
            raise ConfigurationError("beamwidth_deg must lie in (0, 180)")
        if not 0.0 < self.ue_beamwidth_deg < 180.0:
            raise ConfigurationError("ue_beamwidth_deg must lie in (0, 180)")
        if self.ue_antenna not in UE_ANTENNA_KINDS:
            raise ConfigurationError(
                f"ue_antenna must be one of {UE_ANTENNA_KINDS}, got {self.ue_antenna!r}"
            )
        if not isinstance(self.ap_positions, str):
            if len(self.ap_positions) != self.num_aps:
                raise ConfigurationError(
                    "ap_positions must list exactly num_aps points or be 'auto-grid'"
                )
        elif self.ap_positions != "auto-grid":
            raise ConfigurationError(f"unknown ap_positions mode {self.ap_positions!r}")

    @property
    def total_beams(self) -> int:
        return self.num_aps * self.beams_per_ap

    def to_dict(self) -> dict:
        d = asdict(self)
        d["area"] = list(self.area)
        if not isinstance(self.ap_positions, str):
            d["ap_positions"] = [list(p) for p in self.ap_positions]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        d["area"] = tuple(d["area"])
        if not isinstance(d.get("ap_positions", "auto-grid"), str):
            d["ap_positions"] = tuple(tuple(p) for p in d["ap_positions"])
        return cls(**d)


@dataclass(frozen=True)
class BeamIndex:
    """One beam identified by (access point, beam) and its flat grid position."""

    ap: int
    beam: int
    flat: int

    @classmethod
    def from_flat(cls, flat: int, beams_per_ap: int) -> "BeamIndex":
        if flat < 0:
            raise ValueError(f"flat index must be >= 0, got {flat}")
        return cls(ap=flat // beams_per_ap, beam=flat % beams_per_ap, flat=flat)

    @classmethod
    def from_pair(cls, ap: int, beam: int, beams_per_ap: int) -> "BeamIndex":
        if not 0 <= beam < beams_per_ap:
            raise ValueError(f"beam {beam} outside [0, {beams_per_ap})")
        return cls(ap=ap, beam=beam, flat=ap * beams_per_ap + beam)


@dataclass
class RsrpSample:
    """One UE position with its full measurement grid (dB, length M*N)."""

    ue_id: int
    position: tuple[float, float]
    orientation_deg: float
    grid: np.ndarray


def wrap_angle_deg(angle):
    """Wrap an angle (scalar or array) into [-180, 180)."""
    return (np.asarray(angle) + 180.0) % 360.0 - 180.0


def free_space_path_loss_db(distance_m, carrier_freq_ghz):
    """Free-space path loss 20*log10(4*pi*d*f/c), distance clamped at 1 m."""
    d = np.maximum(np.asarray(distance_m, dtype=float), MIN_PROPAGATION_DISTANCE_M)
    f_hz = carrier_freq_ghz * 1e9
    return 20.0 * np.log10(4.0 * np.pi * d * f_hz / SPEED_OF_LIGHT_M_S)


def lobe_gain_db(offset_deg, peak_gain_db, beamwidth_deg):
    """Gaussian-shaped lobe in dB: peak - min(12*(offset/bw)^2, 30).

    ``beamwidth_deg`` is the full 3 dB beamwidth, so the attenuation at
    +/- beamwidth/2 is exactly 3 dB.
    """
    off = np.asarray(offset_deg, dtype=float)
    attenuation = np.minimum(12.0 * (off / beamwidth_deg) ** 2, LOBE_FLOOR_DB)
    return peak_gain_db - attenuation


def beam_boresights_deg(beams_per_ap: int) -> np.ndarray:
    """Boresight azimuths: N directions uniformly spaced over 360 degrees."""
    return np.arange(beams_per_ap) * (360.0 / beams_per_ap)


def ap_positions_m(config: ScenarioConfig) -> np.ndarray:
    """AP coordinates, either as configured or on an automatic grid."""
    if not isinstance(config.ap_positions, str):
        return np.asarray(config.ap_positions, dtype=float).reshape(config.num_aps, 2)
    w, h = config.area
    m = config.num_aps
    cols = max(1, math.ceil(math.sqrt(m * w / h)))
    rows = math.ceil(m / cols)
    pts = []
    for j in range(rows):
        for i in range(cols):
            if len(pts) == m:
                break
            pts.append(((i + 0.5) * w / cols, (j + 0.5) * h / rows))
    return np.asarray(pts, dtype=float)


def _ue_gain_db(config: ScenarioConfig, bearing_ue_to_ap_deg, orientation_deg):
    if config.ue_antenna == "omni":
        return np.zeros_like(np.asarray(bearing_ue_to_ap_deg, dtype=float))
    offset = wrap_angle_deg(np.asarray(bearing_ue_to_ap_deg) - orientation_deg)
    return lobe_gain_db(offset, config.ue_antenna_gain_db, config.ue_beamwidth_deg)


def rsrp_of(config, ap_pos, beam, ue_position, ue_orientation_deg, shadow_db):
    """RSRP (dB) of one beam at one UE: tx - PL(d) + beam lobe + UE lobe + shadow.

    Distances below 1 m are clamped to 1 m; the result is clamped below
    at the configured noise floor.
    """
    ax, ay = float(ap_pos[0]), float(ap_pos[1])
    ux, uy = float(ue_position[0]), float(ue_position[1])
    d = np.hypot(ux - ax, uy - ay)
    pl = free_space_path_loss_db(d, config.carrier_freq_ghz)
    bearing_ap_to_ue = np.degrees(np.arctan2(uy - ay, ux - ax))
    boresight = beam.beam * (360.0 / config.beams_per_ap)
    g_beam = lobe_gain_db(wrap_angle_deg(bearing_ap_to_ue - boresight), 0.0, config.beamwidth_deg)
    bearing_ue_to_ap = wrap_angle_deg(bearing_ap_to_ue + 180.0)
    g_ue = _ue_gain_db(config, bearing_ue_to_ap, ue_orientation_deg)
    value = config.tx_power_dbm - pl + g_beam + g_ue + shadow_db
    return float(np.maximum(value, config.noise_floor_dbm))


def compute_grid(config, ap_xy, position, orientation_deg, shadows_db):
    """Full M*N grid for one UE; ``shadows_db`` holds one draw per AP.

    Flat ordering is AP-major: flat = ap * beams_per_ap + beam.
    """
    ux, uy = float(position[0]), float(position[1])
    d = np.hypot(ux - ap_xy[:, 0], uy - ap_xy[:, 1])
    pl = free_space_path_loss_db(d, config.carrier_freq_ghz)
    bearing_ap_to_ue = np.degrees(np.arctan2(uy - ap_xy[:, 1], ux - ap_xy[:, 0]))
    boresights = beam_boresights_deg(config.beams_per_ap)
    offsets = wrap_angle_deg(bearing_ap_to_ue[:, None] - boresights[None, :])
    g_beam = lobe_gain_db(offsets, 0.0, config.beamwidth_deg)
    bearing_ue_to_ap = wrap_angle_deg(bearing_ap_to_ue + 180.0)
    g_ue = _ue_gain_db(config, bearing_ue_to_ap, orientation_deg)
    grid = (
        config.tx_power_dbm
        - pl[:, None]
        + g_beam
        + g_ue[:, None]
        + np.asarray(shadows_db, dtype=float)[:, None]
    )
    return np.maximum(grid, config.noise_floor_dbm).reshape(-1)


def _row_rng(seed: int, row: int) -> np.random.Generator:
    # Independent per-row streams keep generation order-independent.
    return np.random.default_rng((seed & 0xFFFFFFFFFFFFFFFF, row))


def generate_scenario(config: ScenarioConfig):
    """Generate ``config.ue_count`` measurement rows, deterministic per seed."""
    from .dataio import Dataset  # local import: dataio holds the container types

    ap_xy = ap_positions_m(config)
    w, h = config.area
    rows = []
    for ue_id in range(config.ue_count):
        rng = _row_rng(config.seed, ue_id)
        # Fixed draw order: x, y, orientation, per-AP shadows.
        x = rng.uniform(0.0, w)
        y = rng.uniform(0.0, h)
        orientation = rng.uniform(0.0, 360.0)
        shadows = rng.normal(0.0, config.shadowing_sigma_db, size=config.num_aps)
        grid = compute_grid(config, ap_xy, (x, y), orientation, shadows)
        rows.append(RsrpSample(ue_id=ue_id, position=(x, y), orientation_deg=orientation, grid=grid))
    meta = {
        "format_version": 1,
        "m": config.num_aps,
        "n": config.beams_per_ap,
        "seed": config.seed,
        "config": config.to_dict(),
    }
    return Dataset(meta=meta, rows=rows, split_tag="unsplit")
