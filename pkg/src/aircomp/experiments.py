"""Experiment runner: seeded Monte-Carlo sweeps, the distributed
gradient-descent demo and CSV emission.

Each experiment sweeps one parameter, runs the selected schemes on paired
drops (all schemes at one sweep point consume identical drops, and drop
``d`` has the same geometry at every sweep point that shares cell and user
counts) and aggregates final objectives. CSV output is byte-identical for
a fixed seed; wall-clock timing lives in the JSON run manifest only, so it
does not break reproducibility.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import subprocess
import time
from dataclasses import dataclass, field

import numpy as np

from .baselines import single_cell_scenario, solve_fpa, solve_ma
from .channel import build_channel_set
from .errors import ConfigError, DivergenceError
from .objective import _gamma, mse_closed_form
from .orchestrator import (
    AOOptions,
    alternating_optimize,
    sample_average_mse,
    two_timescale_optimize,
)
from .scene import STREAM_DEMO, SystemConfig, dbm_to_watt, sample_drop, substream

__all__ = [
    "EXPERIMENT_NAMES",
    "CSV_COLUMNS",
    "ExperimentSpec",
    "DemoProblem",
    "DemoResult",
    "make_quadratic_demo",
    "distributed_demo",
    "run_experiment",
    "emit_csv",
    "write_manifest",
    "desk_config",
    "full_scale_config",
]

EXPERIMENT_NAMES = (
    "convergence",
    "vs_antennas",
    "vs_cells",
    "vs_users",
    "vs_power",
    "vs_paths",
    "vs_region",
    "multicell_vs_singlecell",
    "statistical",
    "distributed_demo",
)

CSV_COLUMNS = ("sweep_value", "scheme", "mean_mse", "std_err", "mean_iters", "n_drops", "error")

_SWEEP_FIELDS = {
    "vs_antennas": "M",
    "vs_cells": "B",
    "vs_users": "K",
    "vs_paths": "L",
}

_DESK_SWEEPS = {
    "convergence": [0],
    "vs_antennas": [4, 6],
    "vs_cells": [2, 3, 4],
    "vs_users": [4, 8],
    "vs_power": [20, 25, 30],
    "vs_paths": [2, 3, 4],
    "vs_region": [1, 2, 4],
    "multicell_vs_singlecell": [20, 25, 30],
    "statistical": [30],
    "distributed_demo": [0],
}

_FULL_SWEEPS = {
    **_DESK_SWEEPS,
    "vs_antennas": [4, 6, 8, 10],
    "vs_cells": [2, 3, 4, 5],
    "vs_users": [4, 8, 12],
    "statistical": [20, 30],
}

_RUNNERS = {"dpma": alternating_optimize, "ma": solve_ma, "fpa": solve_fpa}


def desk_config(seed=0):
    """Small configuration for fast runs: two cells of four users."""
    return SystemConfig(B=2, K=4, M=4, L=3, rng_seed=seed)


def full_scale_config(seed=0):
    """Simulation-scale configuration: three cells of eight users."""
    return SystemConfig(B=3, K=8, M=4, L=3, rng_seed=seed)


@dataclass(frozen=True)
class ExperimentSpec:
    """What to run: experiment name, sweep, drop count, schemes, seed."""

    name: str
    sweep: tuple
    n_drops: int = 10
    schemes: tuple = ("dpma", "ma", "fpa")
    seed: int = 0
    out_dir: str = "."
    solver: AOOptions = field(default_factory=AOOptions)

    def __post_init__(self):
        if self.name not in EXPERIMENT_NAMES:
            raise ConfigError(f"unknown experiment {self.name!r}; "
                              f"choose from {', '.join(EXPERIMENT_NAMES)}")
        if len(self.sweep) == 0:
            raise ConfigError("sweep must not be empty")
        if self.n_drops < 1:
            raise ConfigError("n_drops must be at least 1")
        bad = set(self.schemes) - set(_RUNNERS)
        if bad:
            raise ConfigError(f"unknown schemes: {sorted(bad)}")

    @classmethod
    def default_for(cls, name, seed=0, full_scale=False, schemes=None, n_drops=None, out_dir="."):
        sweeps = _FULL_SWEEPS if full_scale else _DESK_SWEEPS
        if name not in sweeps:
            raise ConfigError(f"unknown experiment {name!r}; "
                              f"choose from {', '.join(EXPERIMENT_NAMES)}")
        return cls(
            name=name,
            sweep=tuple(sweeps[name]),
            n_drops=10 if n_drops is None else n_drops,
            schemes=tuple(schemes or ("dpma", "ma", "fpa")),
            seed=seed,
            out_dir=out_dir,
        )


# ---------------------------------------------------------------------------
# Distributed gradient-descent demo
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DemoProblem:
    """Per-user local least-squares objectives for the aggregation demo.

    The global objective is the average of the local ones:
    F(x) = (1/(BK)) sum 0.5 ||A_{i,k} x - b_{i,k}||^2.
    """

    a_mats: np.ndarray  # (B, K, p, d)
    b_vecs: np.ndarray  # (B, K, p)
    alpha: float = 0.05
    eps: float = 1e-12
    max_rounds: int = 500

    @property
    def dim(self):
        return self.a_mats.shape[-1]

    def local_grad(self, i, k, x):
        a = self.a_mats[i, k]
        return a.T @ (a @ x - self.b_vecs[i, k])

    def global_objective(self, x):
        resid = np.einsum("ikpd,d->ikp", self.a_mats, x) - self.b_vecs
        b, k = self.b_vecs.shape[:2]
        return 0.5 * float(np.sum(resid**2)) / (b * k)

    def centralized_solution(self):
        gram = np.einsum("ikpd,ikpe->de", self.a_mats, self.a_mats)
        rhs = np.einsum("ikpd,ikp->d", self.a_mats, self.b_vecs)
        return np.linalg.solve(gram, rhs)


def make_quadratic_demo(rng, b, k, dim=3, rows=4, alpha=0.05, eps=1e-12, max_rounds=500):
    a_mats = rng.standard_normal((b, k, rows, dim))
    b_vecs = rng.standard_normal((b, k, rows))
    return DemoProblem(a_mats=a_mats, b_vecs=b_vecs, alpha=alpha, eps=eps,
                       max_rounds=max_rounds)


@dataclass
class DemoResult:
    rounds: int
    consensus_error: float
    distance_to_centralized: float
    converged: bool
    objective_trace: list
    iterates: np.ndarray  # (B, d)

    @property
    def relative_distance(self):
        return self.distance_to_centralized


def distributed_demo(demo, vars_, ch, cfg, rng):
    """Run analog gradient aggregation rounds over the solved channels.

    Each round every user encodes one coordinate of its local gradient per
    aggregation slot, scaled by a shared running max-abs normalizer; each
    station decodes the mean with its combining vector, rescales and takes
    a descent step. Stops when the summed squared iterate change falls
    below ``demo.eps``. Raises :class:`DivergenceError` when the objective
    grows a thousandfold.
    """
    b, k = cfg.B, cfg.K
    d = demo.dim
    gam_a = _gamma(vars_.W, ch) * vars_.a[None]  # (B, B, K)
    x = np.zeros((b, d))
    x_star = demo.centralized_solution()
    obj0 = max(np.mean([demo.global_objective(x[i]) for i in range(b)]), 1e-30)
    trace = []
    converged = False
    rounds = 0
    for _ in range(demo.max_rounds):
        grads = np.empty((b, k, d))
        for i in range(b):
            for kk in range(k):
                grads[i, kk] = demo.local_grad(i, kk, x[i])
        norm_g = max(float(np.max(np.abs(grads))), 1e-12)
        s = grads / norm_g  # (B, K, d): one aggregation slot per coordinate

        noise = rng.standard_normal((b, cfg.M, d)) + 1j * rng.standard_normal((b, cfg.M, d))
        noise *= np.sqrt(cfg.sigma2 / 2.0)
        agg_noise = noise.sum(axis=0)  # (M, d)

        est = np.empty((b, d))
        for i in range(b):
            filt = np.einsum("jk,jkc->c", gam_a[i], s) + vars_.W[:, i].conj() @ agg_noise
            est[i] = norm_g * filt.real
        x_new = x - demo.alpha * est
        rounds += 1
        obj = float(np.mean([demo.global_objective(x_new[i]) for i in range(b)]))
        trace.append(obj)
        if obj > 1e3 * max(obj0, trace[0]):
            raise DivergenceError(f"demo diverged: objective {obj:.3e} after {rounds} rounds")
        delta = float(np.sum(np.abs(x_new - x) ** 2))
        x = x_new
        if delta <= demo.eps:
            converged = True
            break
    consensus = 0.0
    for i in range(b):
        for j in range(i + 1, b):
            consensus = max(consensus, float(np.linalg.norm(x[i] - x[j])))
    dist = max(float(np.linalg.norm(x[i] - x_star)) for i in range(b))
    scale = max(float(np.linalg.norm(x_star)), 1e-30)
    return DemoResult(
        rounds=rounds, consensus_error=consensus,
        distance_to_centralized=dist / scale, converged=converged,
        objective_trace=trace, iterates=x,
    )


# ---------------------------------------------------------------------------
# Experiment dispatch
# ---------------------------------------------------------------------------

def _row(sweep_value, scheme, values, iters, n, error=""):
    if error or not values:
        return (sweep_value, scheme, "", "", "", n, error)
    vals = np.asarray(values, dtype=float)
    se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
    mean_it = float(np.mean(iters)) if iters else 0.0
    return (sweep_value, scheme, float(vals.mean()), se, mean_it, n, error)


def _cfg_for(base, name, value):
    if name in _SWEEP_FIELDS:
        return base.replace(**{_SWEEP_FIELDS[name]: int(value)})
    if name in ("vs_power", "multicell_vs_singlecell", "statistical"):
        return base.replace(P=dbm_to_watt(float(value)))
    if name == "vs_region":
        return base.replace(region_half_width=float(value) * base.lambda_m)
    return base


def _run_point(cfg, spec, schemes, rows, sweep_value):
    """Paired solves of every scheme on the same drops at one sweep point."""
    results = {s: [] for s in schemes}
    iters = {s: [] for s in schemes}
    errors = {s: None for s in schemes}
    for d in range(spec.n_drops):
        drop = sample_drop(cfg, drop_index=d)
        for s in schemes:
            try:
                rep = _RUNNERS[s](drop, cfg, spec.solver)
                results[s].append(rep.final_mse)
                iters[s].append(rep.iters)
            except Exception as exc:  # recorded, run continues
                errors[s] = f"drop {d}: {exc}"
    for s in schemes:
        rows.append(_row(sweep_value, s, results[s], iters[s], spec.n_drops,
                         errors[s] or ""))


def _run_sweep_experiment(spec, cfg):
    rows = []
    for value in spec.sweep:
        cfg_v = _cfg_for(cfg, spec.name, value)
        schemes = list(spec.schemes)
        if spec.name == "vs_region":
            # A frozen grid never moves, so the region size cannot affect it.
            schemes = [s for s in schemes if s != "fpa"] or ["dpma"]
        _run_point(cfg_v, spec, schemes, rows, value)
    return rows


def _run_convergence(spec, cfg):
    rows = []
    schemes = [s for s in spec.schemes if s in ("dpma", "ma")] or ["dpma"]
    for scheme in schemes:
        traces = []
        inner = []
        for d in range(spec.n_drops):
            drop = sample_drop(cfg, drop_index=d)
            rep = _RUNNERS[scheme](drop, cfg, spec.solver)
            traces.append(rep.mse_trace)
            inner.append(np.cumsum([0] + rep.inner_iters_trace))
        depth = max(len(t) for t in traces)
        padded = np.array([t + [t[-1]] * (depth - len(t)) for t in traces])
        pad_in = np.array([np.concatenate([c, [c[-1]] * (depth - len(c))]) for c in inner])
        for it in range(depth):
            vals = padded[:, it]
            se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
            rows.append((it, scheme, float(vals.mean()), se,
                         float(pad_in[:, it].mean()), spec.n_drops, ""))
    return rows


def _run_multicell_vs_singlecell(spec, cfg):
    rows = []
    for p_dbm in spec.sweep:
        cfg_v = _cfg_for(cfg, spec.name, p_dbm)
        multi, single, it_m, it_s = [], [], [], []
        err = None
        for d in range(spec.n_drops):
            drop = sample_drop(cfg_v, drop_index=d)
            try:
                rep_m = alternating_optimize(drop, cfg_v, spec.solver)
                drop_s, cfg_s = single_cell_scenario(drop, cfg_v, drop_index=d)
                rep_s = alternating_optimize(drop_s, cfg_s, spec.solver)
                multi.append(rep_m.final_mse)
                single.append(rep_s.final_mse)
                it_m.append(rep_m.iters)
                it_s.append(rep_s.iters)
            except Exception as exc:
                err = f"drop {d}: {exc}"
        rows.append(_row(p_dbm, "multicell", multi, it_m, spec.n_drops, err or ""))
        rows.append(_row(p_dbm, "singlecell", single, it_s, spec.n_drops, err or ""))
    return rows


def _run_statistical(spec, cfg, n_train=5):
    rows = []
    held_out = max(spec.n_drops, 1)
    for p_dbm in spec.sweep:
        cfg_v = _cfg_for(cfg, "statistical", p_dbm)
        train = [sample_drop(cfg_v, drop_index=0, realization=r) for r in range(n_train)]
        test = [sample_drop(cfg_v, drop_index=0, realization=n_train + r)
                for r in range(held_out)]
        for scheme in ("dpma", "ma"):
            if scheme not in spec.schemes:
                continue
            opts = spec.solver.replace(polarized=(scheme == "dpma"))
            rep_inst = alternating_optimize(train[0], cfg_v, opts)
            rep_stat = two_timescale_optimize(train, cfg_v, opts)
            held = [
                sample_average_mse(rep_stat.final_vars, [t], cfg_v,
                                   polarized=(scheme == "dpma"))
                for t in test
            ]
            rows.append(_row(p_dbm, f"{scheme}_inst", [rep_inst.final_mse],
                             [rep_inst.iters], 1))
            rows.append(_row(p_dbm, f"{scheme}_stat", held, [rep_stat.iters], held_out))
    return rows


def _run_demo_experiment(spec, cfg):
    drop = sample_drop(cfg, drop_index=0)
    rep = alternating_optimize(drop, cfg, spec.solver)
    ch = build_channel_set(drop, cfg, rep.final_vars.layout, pol=rep.final_vars.pol)
    rng = substream(spec.seed, STREAM_DEMO)
    demo = make_quadratic_demo(rng, cfg.B, cfg.K)
    result = distributed_demo(demo, rep.final_vars, ch, cfg, rng)
    rows = []
    for it, obj in enumerate(result.objective_trace):
        rows.append((it + 1, "distributed_demo", float(obj),
                     float(result.consensus_error), it + 1, 1, ""))
    return rows


def run_experiment(spec, cfg):
    """Run one experiment and return the CSV rows (no I/O)."""
    cfg = cfg.replace(rng_seed=spec.seed)
    if spec.name == "convergence":
        return _run_convergence(spec, cfg)
    if spec.name in _SWEEP_FIELDS or spec.name in ("vs_power", "vs_region"):
        return _run_sweep_experiment(spec, cfg)
    if spec.name == "multicell_vs_singlecell":
        return _run_multicell_vs_singlecell(spec, cfg)
    if spec.name == "statistical":
        return _run_statistical(spec, cfg)
    if spec.name == "distributed_demo":
        return _run_demo_experiment(spec, cfg)
    raise ConfigError(f"unknown experiment {spec.name!r}")


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def emit_csv(rows, path):
    """Write rows under the fixed header; UTF-8, RFC-4180 quoting.

    Identical rows produce byte-identical files; floats are written with
    shortest round-trip precision and never in locale-dependent form.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, quoting=csv.QUOTE_MINIMAL)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([repr(x) if isinstance(x, float) else x for x in row])


def git_describe():
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=10, check=False,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_manifest(path, cfg, spec, wall_time_s, n_rows):
    payload = {
        "experiment": spec.name,
        "sweep": list(spec.sweep),
        "n_drops": spec.n_drops,
        "schemes": list(spec.schemes),
        "seed": spec.seed,
        "config": cfg.to_dict(),
        "git_describe": git_describe(),
        "wall_time_s": wall_time_s,
        "rows": n_rows,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return payload


def run_and_write(spec, cfg, out_dir):
    """Run one experiment, writing ``<name>.csv`` and a JSON manifest."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    rows = run_experiment(spec, cfg)
    wall = time.perf_counter() - t0
    csv_path = os.path.join(out_dir, f"{spec.name}.csv")
    manifest_path = os.path.join(out_dir, f"{spec.name}_manifest.json")
    emit_csv(rows, csv_path)
    write_manifest(manifest_path, cfg.replace(rng_seed=spec.seed), spec, wall, len(rows))
    return csv_path, manifest_path, rows
