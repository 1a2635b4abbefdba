"""Comparison schemes sharing the optimization machinery.

Fixed-position array: dual polarization stays active, the layout is frozen
at the initial grid, which isolates the gain of antenna movement.
Single-polarized movable array: the polarization factor is pinned at one
(channels are the unpolarized ones) and only W, a and the positions are
optimized, isolating the polarization gain.
Single-cell topology: all users of a multi-cell drop are reassigned to one
station at their centroid, for paired multi-cell versus single-cell
comparisons at fixed user populations.
"""

from __future__ import annotations

import numpy as np

from .orchestrator import AOOptions, alternating_optimize
from .scene import STREAM_SINGLE_CELL, Drop, substream

__all__ = ["solve_fpa", "solve_ma", "single_cell_scenario"]


def solve_fpa(drop, cfg, opts=None):
    """Dual-polarized solve with the antenna layout frozen at the grid."""
    opts = (opts or AOOptions()).replace(move_antennas=False, polarized=True)
    return alternating_optimize(drop, cfg, opts)


def solve_ma(drop, cfg, opts=None):
    """Single-polarized movable solve: unpolarized channels, no m or varpi
    updates, combining matrix, coefficients and positions optimized."""
    opts = (opts or AOOptions()).replace(polarized=False, move_antennas=True)
    return alternating_optimize(drop, cfg, opts)


def single_cell_scenario(drop_multi, cfg, drop_index=0, realization=0):
    """Collapse a multi-cell drop into one cell with the same users.

    The lone station sits at the centroid of all user positions and serves
    every user; angles and gains are redrawn for the new links from a
    dedicated sub-stream of the same master seed, so the construction is
    deterministic and leaves the source drop untouched. A single-cell
    input is returned unchanged.
    """
    if cfg.B == 1:
        return drop_multi, cfg
    b, k, l = drop_multi.shape
    users = drop_multi.user_positions.reshape(1, b * k, 2)
    centroid = users.mean(axis=1)

    ang = substream(cfg.rng_seed, STREAM_SINGLE_CELL, drop_index, realization, 0)
    gai = substream(cfg.rng_seed, STREAM_SINGLE_CELL, drop_index, realization, 1)

    el = ang.uniform(-np.pi / 2.0, np.pi / 2.0, size=(1, b * k, l))
    az = ang.uniform(-np.pi, np.pi, size=(1, b * k, l))
    user_angles = np.stack([el, az], axis=-1)

    d_user = np.linalg.norm(users - centroid[:, None, :], axis=-1)
    std = np.sqrt(cfg.path_gain(d_user) / l)[..., None]
    raw = gai.standard_normal((1, b * k, l)) + 1j * gai.standard_normal((1, b * k, l))
    user_gains = raw / np.sqrt(2.0) * std

    cfg_single = cfg.replace(B=1, K=b * k)
    drop_single = Drop(
        bs_positions=centroid,
        user_positions=users,
        user_angles=user_angles,
        bs_tx_angles=np.zeros((1, 1, l, 2)),
        bs_rx_angles=np.zeros((1, 1, l, 2)),
        user_gains=user_gains,
        bs_gain_diag=np.zeros((1, 1, l), dtype=complex),
    )
    return drop_single, cfg_single
