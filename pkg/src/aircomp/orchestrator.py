"""Alternating optimization of all five variable blocks.

One outer round updates, in order: combining matrix, transmit
coefficients, user polarization, station polarization, antenna positions.
Each update is individually non-increasing in the sum MSE, which makes the
outer objective trace monotone; the loop stops when the relative change
falls below tolerance or the round cap is reached.

The statistical-channel variant splits the work into two stages: the
short-time-scale blocks adapt to one instantaneous realization at a frozen
layout, then the layout alone descends on a sample-average objective over
many realizations.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .channel import LinkGeometry, build_channel_set, refresh_effective
from .errors import MonotonicityError, SolverError
from .objective import DecisionVars, initial_vars, mse_closed_form, mse_grad_positions, validate_vars
from .scene import STREAM_SOLVER, check_layout_feasible, initial_layout, substream
from .subsolvers import (
    descend_positions,
    sca_update_m,
    update_W,
    update_a,
    update_positions,
    update_varpi,
)

__all__ = ["AOOptions", "SolveReport", "alternating_optimize", "two_timescale_optimize"]

MONOTONE_SLACK = 1e-9


@dataclass(frozen=True)
class AOOptions:
    """Tolerances, iteration caps and feature switches of the outer loop."""

    eps: float = 1e-5            # relative outer stopping tolerance
    max_rounds: int = 50
    m_tol: float = 1e-6
    m_max_iters: int = 200
    varpi_tol: float = 1e-6
    varpi_max_iters: int = 30
    n_randomizations: int = 100
    pos_tol: float = 1e-6
    pos_max_iters: int = 200
    pos_alpha0: float = None     # defaults to 0.1 * wavelength
    move_antennas: bool = True
    polarized: bool = True
    seed: int = None             # defaults to cfg.rng_seed
    check_monotone: bool = True
    check_feasible: bool = True

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


@dataclass
class SolveReport:
    """Outcome of one solve: objective trace, flags, timing, final point."""

    mse_trace: list
    converged: bool
    iters: int
    wall_time: float
    final_vars: DecisionVars
    inner_iters_trace: list = field(default_factory=list)
    stage1_trace: list = None

    @property
    def final_mse(self):
        return self.mse_trace[-1]

    def to_dict(self):
        def cplx(a):
            a = np.asarray(a)
            return np.stack([a.real, a.imag], axis=-1).tolist()

        return {
            "mse_trace": [float(x) for x in self.mse_trace],
            "converged": bool(self.converged),
            "iters": int(self.iters),
            "wall_time": float(self.wall_time),
            "inner_iters_trace": [int(x) for x in self.inner_iters_trace],
            "stage1_trace": None if self.stage1_trace is None
            else [float(x) for x in self.stage1_trace],
            "final_vars": {
                "W": cplx(self.final_vars.W),
                "a": cplx(self.final_vars.a),
                "layout": np.asarray(self.final_vars.layout).tolist(),
                "varpi": cplx(self.final_vars.pol.varpi),
                "m": cplx(self.final_vars.pol.m),
            },
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), sort_keys=True)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text


def _guard(mse_before, mse_after, block, round_idx, enabled):
    if enabled and mse_after > mse_before + MONOTONE_SLACK * max(1.0, abs(mse_before)):
        raise MonotonicityError(
            f"{block} update increased the MSE from {mse_before:.12e} to "
            f"{mse_after:.12e}",
            iteration=round_idx,
        )


def _round(vars_, ch, drop, cfg, opts, rng, round_idx, geom):
    """One outer round; returns (vars, ch, mse, inner iteration count)."""
    inner = 0
    mse = mse_closed_form(vars_, ch, cfg)
    try:
        vars_.W = update_W(vars_, ch, cfg)
        new = mse_closed_form(vars_, ch, cfg)
        _guard(mse, new, "combining", round_idx, opts.check_monotone)
        mse = new

        vars_.a = update_a(vars_, ch, cfg)
        new = mse_closed_form(vars_, ch, cfg)
        _guard(mse, new, "coefficient", round_idx, opts.check_monotone)
        mse = new

        if opts.polarized:
            new_m, it_m = sca_update_m(vars_, ch, cfg, tol=opts.m_tol, t_max=opts.m_max_iters)
            inner += it_m
            vars_.pol = vars_.pol.with_m(new_m)
            ch = refresh_effective(ch, vars_.pol)
            new = mse_closed_form(vars_, ch, cfg)
            _guard(mse, new, "user polarization", round_idx, opts.check_monotone)
            mse = new

            _, ch, it_v = update_varpi(
                vars_, ch, cfg, tol=opts.varpi_tol, t_max=opts.varpi_max_iters,
                n_samples=opts.n_randomizations, rng=rng,
            )
            inner += it_v
            new = mse_closed_form(vars_, ch, cfg)
            _guard(mse, new, "station polarization", round_idx, opts.check_monotone)
            mse = new

        if opts.move_antennas:
            layout, ch, it_p, new = update_positions(
                vars_, drop, cfg, alpha0=opts.pos_alpha0, tol=opts.pos_tol,
                t_max=opts.pos_max_iters, geom=geom, polarized=opts.polarized,
            )
            inner += it_p
            vars_.layout = layout
            _guard(mse, new, "position", round_idx, opts.check_monotone)
            mse = new

        if opts.check_feasible:
            validate_vars(vars_, cfg)
    except SolverError as exc:
        if exc.iteration is None:
            exc.iteration = round_idx
        raise
    return vars_, ch, mse, inner


def alternating_optimize(drop, cfg, opts=None):
    """Full alternating minimization on one drop.

    Starts from the grid layout, full-power zero-phase coefficients, zero
    combining matrix and all-ones polarization vectors, then loops the
    block updates until the relative objective change drops below
    ``opts.eps`` or the round cap is hit.
    """
    opts = opts or AOOptions()
    t0 = time.perf_counter()
    seed = cfg.rng_seed if opts.seed is None else opts.seed
    rng = substream(seed, STREAM_SOLVER)
    geom = LinkGeometry.from_drop(drop)

    vars_ = initial_vars(cfg)
    ch = build_channel_set(drop, cfg, vars_.layout, pol=vars_.pol,
                           polarized=opts.polarized, geom=geom)
    trace = [mse_closed_form(vars_, ch, cfg)]
    inner_trace = []
    converged = False
    rounds = 0
    for t in range(opts.max_rounds):
        vars_, ch, mse, inner = _round(vars_, ch, drop, cfg, opts, rng, t, geom)
        trace.append(mse)
        inner_trace.append(inner)
        rounds = t + 1
        if abs(trace[-1] - trace[-2]) <= opts.eps * max(abs(trace[-2]), 1e-30):
            converged = True
            break
    return SolveReport(
        mse_trace=trace, converged=converged, iters=rounds,
        wall_time=time.perf_counter() - t0, final_vars=vars_,
        inner_iters_trace=inner_trace,
    )


def sample_average_mse(vars_, drops, cfg, polarized=True, geoms=None):
    """Mean closed-form MSE of one decision point over several drops."""
    if geoms is None:
        geoms = [None] * len(drops)
    vals = []
    for drop, geom in zip(drops, geoms):
        ch = build_channel_set(drop, cfg, vars_.layout, pol=vars_.pol,
                               polarized=polarized, geom=geom)
        vals.append(mse_closed_form(vars_, ch, cfg))
    return float(np.mean(vals))


def two_timescale_optimize(drops, cfg, opts=None, eps_in=1e-5, eps_out=1e-4,
                           t_in=30, t_out=100):
    """Two-stage optimization against statistical channel knowledge.

    Stage I adapts W, a and the polarization vectors to ``drops[0]`` at the
    frozen initial layout. Stage II freezes those blocks and descends the
    antenna layout on the sample-average MSE over all of ``drops``.
    """
    if len(drops) < 1:
        raise ValueError("need at least one channel realization")
    opts = opts or AOOptions()
    t0 = time.perf_counter()
    seed = cfg.rng_seed if opts.seed is None else opts.seed
    rng = substream(seed, STREAM_SOLVER, 1)

    geoms = [LinkGeometry.from_drop(d) for d in drops]
    train = drops[0]
    inner_opts = opts.replace(move_antennas=False, max_rounds=t_in, eps=eps_in)

    vars_ = initial_vars(cfg)
    ch = build_channel_set(train, cfg, vars_.layout, pol=vars_.pol,
                           polarized=opts.polarized, geom=geoms[0])
    stage1 = [mse_closed_form(vars_, ch, cfg)]
    inner_trace = []
    for t in range(t_in):
        vars_, ch, mse, inner = _round(vars_, ch, train, cfg, inner_opts, rng, t, geoms[0])
        stage1.append(mse)
        inner_trace.append(inner)
        if abs(stage1[-1] - stage1[-2]) <= eps_in * max(abs(stage1[-2]), 1e-30):
            break

    # Stage II: layout only, against the sample average.
    probe = vars_.copy()

    def avg_mse_fn(lay):
        probe.layout = lay
        return sample_average_mse(probe, drops, cfg, polarized=opts.polarized, geoms=geoms)

    def avg_grad_fn(lay):
        probe.layout = lay
        grads = [mse_grad_positions(probe, d, cfg, geom=g, polarized=opts.polarized)
                 for d, g in zip(drops, geoms)]
        return np.mean(grads, axis=0)

    layout, _, _, stage2 = descend_positions(
        vars_.layout, cfg, avg_mse_fn, avg_grad_fn,
        alpha0=opts.pos_alpha0, tol=eps_out, t_max=t_out,
    )
    converged = True
    vars_.layout = layout
    return SolveReport(
        mse_trace=stage2, converged=converged, iters=len(stage2) - 1,
        wall_time=time.perf_counter() - t0, final_vars=vars_,
        inner_iters_trace=inner_trace, stage1_trace=stage1,
    )
