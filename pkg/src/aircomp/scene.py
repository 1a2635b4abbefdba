"""System configuration, deterministic seeding and random drop generation.

A *drop* is one random realization of network geometry, multipath angles
and fading gains. Randomness comes from counter-based Philox streams
spawned from a single master seed with fixed spawn keys, so geometry,
angles and gains can be resampled independently of one another and every
draw is reproducible across runs and platforms.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

__all__ = [
    "SPEED_OF_LIGHT",
    "SystemConfig",
    "Drop",
    "dbm_to_watt",
    "db_to_linear",
    "substream",
    "sample_drop",
    "initial_layout",
    "check_layout_feasible",
]

SPEED_OF_LIGHT = 299_792_458.0

# Fixed spawn keys for the independent random sub-streams.
STREAM_GEOMETRY = 0
STREAM_ANGLES = 1
STREAM_GAINS = 2
STREAM_SINGLE_CELL = 3
STREAM_SOLVER = 4
STREAM_MONTE_CARLO = 5
STREAM_DEMO = 6


def dbm_to_watt(p_dbm):
    return 10.0 ** ((p_dbm - 30.0) / 10.0)


def db_to_linear(x_db):
    return 10.0 ** (x_db / 10.0)


def substream(seed, *key):
    """Philox generator for sub-stream ``key`` of master ``seed``.

    Distinct keys give statistically independent, individually reproducible
    streams; the same (seed, key) always yields the same draws.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SystemConfig:
    """All scalar physical and simulation parameters.

    Units: distances in meters, powers in linear watts, frequencies in Hz.
    ``lambda_m``, ``D0`` and ``region_half_width`` are derived from the
    carrier when left as None (wavelength, half wavelength, four
    wavelengths respectively).
    """

    B: int = 3
    K: int = 8
    M: int = 4
    L: int = 3
    carrier_hz: float = 3e9
    lambda_m: float = None
    P: float = 1.0
    sigma_n2: float = dbm_to_watt(-94.0)
    sigma_I2: float = dbm_to_watt(-88.0)
    region_half_width: float = None
    D0: float = None
    K0_db: float = -40.0
    d0: float = 1.0
    beta: float = 1.5
    rician_r: float = 1.0
    d_min_bs: float = 200.0
    user_annulus: tuple = (20.0, 50.0)
    rng_seed: int = 0

    def __post_init__(self):
        if self.lambda_m is None:
            object.__setattr__(self, "lambda_m", SPEED_OF_LIGHT / self.carrier_hz)
        if self.D0 is None:
            object.__setattr__(self, "D0", self.lambda_m / 2.0)
        if self.region_half_width is None:
            object.__setattr__(self, "region_half_width", 4.0 * self.lambda_m)
        object.__setattr__(self, "user_annulus", tuple(float(x) for x in self.user_annulus))
        self.validate()

    def validate(self):
        for name in ("B", "K", "M", "L"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.P <= 0:
            raise ConfigError(f"P must be positive, got {self.P}")
        if self.carrier_hz <= 0 or self.lambda_m <= 0:
            raise ConfigError("carrier frequency and wavelength must be positive")
        if self.sigma_n2 < 0 or self.sigma_I2 < 0:
            raise ConfigError("noise and interference powers must be nonnegative")
        if self.D0 <= 0:
            raise ConfigError("minimum antenna spacing D0 must be positive")
        if self.region_half_width < self.D0:
            raise ConfigError(
                f"region half-width {self.region_half_width} is smaller than "
                f"the minimum spacing {self.D0}"
            )
        lo, hi = self.user_annulus
        if not (0 < lo < hi):
            raise ConfigError(f"user annulus must satisfy 0 < inner < outer, got {self.user_annulus}")
        if self.d_min_bs <= 0:
            raise ConfigError("minimum base-station spacing must be positive")
        if self.beta < 0:
            raise ConfigError("path-loss exponent must be nonnegative")
        if self.rician_r < 0:
            raise ConfigError("Rician factor must be nonnegative")
        # A half-wavelength-spaced square grid of M points must fit the region.
        n = math.ceil(math.sqrt(self.M))
        if (n - 1) / 2.0 * self.D0 > self.region_half_width + 1e-12:
            raise ConfigError(
                f"no feasible layout: a {n}x{n} grid at spacing {self.D0} "
                f"does not fit in half-width {self.region_half_width}"
            )

    @property
    def sigma2(self):
        """Noise-plus-interference power at each station."""
        return self.sigma_n2 + self.sigma_I2

    @property
    def K0(self):
        """Linear reference path gain at distance d0."""
        return db_to_linear(self.K0_db)

    def path_gain(self, distance_m):
        """Mean link power K0 * (d / d0)^(-beta)."""
        return self.K0 * (np.asarray(distance_m) / self.d0) ** (-self.beta)

    def replace(self, **kw):
        """Return a copy with the given fields replaced.

        Derived fields (lambda_m, D0, region_half_width) are kept unless
        explicitly overridden; pass None to re-derive them, which is done
        automatically when carrier_hz changes.
        """
        if "carrier_hz" in kw:
            kw.setdefault("lambda_m", None)
            kw.setdefault("D0", None)
            kw.setdefault("region_half_width", None)
        return dataclasses.replace(self, **kw)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["user_annulus"] = list(self.user_annulus)
        return d

    def to_json(self, path=None, **kw):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True, **kw)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError(f"configuration must be a JSON object, got {type(data).__name__}")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown configuration fields: {sorted(unknown)}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc

    @classmethod
    def from_json(cls, path):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read configuration file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"configuration file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)


def _freeze(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Drop:
    """One random realization of geometry, path angles and path gains.

    Angle arrays hold (elevation, azimuth) pairs in radians. The diagonal
    slots of the station-to-station arrays are zero and never read: a
    station has no propagation link to itself.
    """

    bs_positions: np.ndarray    # (B, 2) meters, global frame
    user_positions: np.ndarray  # (B, K, 2) meters, global frame
    user_angles: np.ndarray     # (B, K, L, 2)
    bs_tx_angles: np.ndarray    # (B, B, L, 2), [i, j] = departure angles at station j
    bs_rx_angles: np.ndarray    # (B, B, L, 2), [i, j] = arrival angles at station i
    user_gains: np.ndarray      # (B, K, L) complex
    bs_gain_diag: np.ndarray    # (B, B, L) complex, diagonal of the fading matrix

    def __post_init__(self):
        for name in (
            "bs_positions", "user_positions", "user_angles",
            "bs_tx_angles", "bs_rx_angles", "user_gains", "bs_gain_diag",
        ):
            object.__setattr__(self, name, _freeze(getattr(self, name)))

    @property
    def shape(self):
        b, k, l = self.user_gains.shape
        return b, k, l


def bs_layout_positions(cfg):
    """Deterministic station placement: regular polygon, min chord d_min_bs."""
    b = cfg.B
    if b == 1:
        return np.zeros((1, 2))
    radius = cfg.d_min_bs / (2.0 * math.sin(math.pi / b))
    ang = 2.0 * math.pi * np.arange(b) / b
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def _complex_normal(rng, shape, std):
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return z * (np.asarray(std) / np.sqrt(2.0))


def sample_drop(cfg, drop_index=0, realization=0):
    """Draw one drop.

    ``drop_index`` selects an independent geometry; ``realization`` redraws
    angles and gains while keeping the geometry fixed, which is what the
    statistical-channel experiments need. Sub-streams guarantee that
    resampling gains never perturbs the geometry.
    """
    cfg.validate()
    b, k, l = cfg.B, cfg.K, cfg.L

    geo = substream(cfg.rng_seed, STREAM_GEOMETRY, drop_index)
    ang = substream(cfg.rng_seed, STREAM_ANGLES, drop_index, realization)
    gai = substream(cfg.rng_seed, STREAM_GAINS, drop_index, realization)

    bs_pos = bs_layout_positions(cfg)

    lo, hi = cfg.user_annulus
    radii = np.sqrt(geo.uniform(lo**2, hi**2, size=(b, k)))
    theta = geo.uniform(-math.pi, math.pi, size=(b, k))
    user_pos = bs_pos[:, None, :] + radii[..., None] * np.stack(
        [np.cos(theta), np.sin(theta)], axis=-1
    )

    def draw_angles(shape):
        el = ang.uniform(-math.pi / 2.0, math.pi / 2.0, size=shape)
        az = ang.uniform(-math.pi, math.pi, size=shape)
        return np.stack([el, az], axis=-1)

    user_angles = draw_angles((b, k, l))
    bs_tx = draw_angles((b, b, l))
    bs_rx = draw_angles((b, b, l))
    eye = np.arange(b)
    bs_tx[eye, eye] = 0.0
    bs_rx[eye, eye] = 0.0

    # User link: total link power follows the distance law; it is split
    # evenly across the L paths.
    d_user = np.linalg.norm(user_pos - bs_pos[:, None, :], axis=-1)
    u_std = np.sqrt(cfg.path_gain(d_user) / l)[..., None]
    user_gains = _complex_normal(gai, (b, k, l), u_std)

    # Station link: Rician split, dominant path power r/(1+r), the other
    # L-1 paths share the rest evenly.
    bs_gain = np.zeros((b, b, l), dtype=complex)
    r = cfg.rician_r
    raw = _complex_normal(gai, (b, b, l), 1.0)
    if b > 1:
        d_bs = np.linalg.norm(bs_pos[:, None, :] - bs_pos[None, :, :], axis=-1)
        np.fill_diagonal(d_bs, cfg.d0)  # placeholder, masked below
        link = cfg.path_gain(d_bs)
        std = np.zeros((b, b, l))
        std[:, :, 0] = np.sqrt(link * r / (1.0 + r))
        if l > 1:
            std[:, :, 1:] = np.sqrt(link / ((1.0 + r) * (l - 1)))[..., None]
        bs_gain = raw * std
        bs_gain[eye, eye] = 0.0

    return Drop(
        bs_positions=bs_pos,
        user_positions=user_pos,
        user_angles=user_angles,
        bs_tx_angles=bs_tx,
        bs_rx_angles=bs_rx,
        user_gains=user_gains,
        bs_gain_diag=bs_gain,
    )


def initial_layout(cfg):
    """Feasible starting layout: the same centered square grid at every station.

    A ceil(sqrt(M)) x ceil(sqrt(M)) grid with spacing D0 centered on the
    local origin, truncated row-major to M points.
    """
    m = cfg.M
    n = math.ceil(math.sqrt(m))
    s = cfg.D0
    coords = (np.arange(n) - (n - 1) / 2.0) * s
    grid = [(coords[ix], coords[iy]) for iy in range(n) for ix in range(n)]
    pts = np.array(grid[:m])
    layout = np.broadcast_to(pts, (cfg.B, m, 2)).copy()
    if not check_layout_feasible(layout, cfg):
        raise ConfigError("initial grid layout is infeasible for this configuration")
    return layout


def check_layout_feasible(layout, cfg, slack=1e-12):
    """True when every antenna is inside the region and pairwise spacing holds.

    The spacing rule is plain Euclidean distance >= D0 between any two
    antennas of the same station; the region is the square
    [-A, A]^2 per coordinate with A = region_half_width.
    """
    layout = np.asarray(layout, dtype=float)
    if layout.shape != (cfg.B, cfg.M, 2):
        raise ValueError(f"layout must have shape {(cfg.B, cfg.M, 2)}, got {layout.shape}")
    a = cfg.region_half_width
    if np.any(np.abs(layout) > a + slack):
        return False
    if cfg.M > 1:
        diff = layout[:, :, None, :] - layout[:, None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        iu = np.triu_indices(cfg.M, k=1)
        if np.any(dist[:, iu[0], iu[1]] < cfg.D0 * (1.0 - 1e-12) - slack):
            return False
    return True
