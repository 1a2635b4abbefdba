"""Sum-MSE objective: closed form, Monte-Carlo estimate and position gradient.

The objective is the sum over stations of the expected squared error
between each station's filtered received signal and the arithmetic mean of
all transmitted symbols. Inter-cell interference is folded into the noise
power, and the aggregate relayed noise is modeled with identical per-cell
statistics at every station, which yields the B*sigma^2*||w||^2 noise term
of the closed form; the Monte-Carlo oracle simulates the same model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .channel import LinkGeometry, PolarizationState, build_channel_set
from .scene import check_layout_feasible

__all__ = [
    "DecisionVars",
    "initial_vars",
    "validate_vars",
    "mse_closed_form",
    "MonteCarloEstimate",
    "mse_monte_carlo",
    "mse_grad_positions",
]


@dataclass
class DecisionVars:
    """The five optimization variable blocks.

    ``W`` columns are the per-station combining vectors, ``a`` the user
    transmit coefficients, ``layout`` the local antenna coordinates per
    station, ``pol`` the polarization vectors.
    """

    W: np.ndarray       # (M, B) complex
    a: np.ndarray       # (B, K) complex
    layout: np.ndarray  # (B, M, 2) real, meters
    pol: PolarizationState

    def copy(self):
        return DecisionVars(
            W=self.W.copy(), a=self.a.copy(), layout=self.layout.copy(),
            pol=PolarizationState(varpi=self.pol.varpi.copy(), m=self.pol.m.copy()),
        )


def initial_vars(cfg, layout=None):
    """Feasible starting point: zero W, full-power coefficients with zero
    phase, the grid layout and all-ones polarization vectors."""
    from .scene import initial_layout

    if layout is None:
        layout = initial_layout(cfg)
    a = np.sqrt(cfg.P) * np.ones((cfg.B, cfg.K), dtype=complex)
    return DecisionVars(
        W=np.zeros((cfg.M, cfg.B), dtype=complex),
        a=a,
        layout=np.asarray(layout, dtype=float),
        pol=PolarizationState.all_ones(cfg.B, cfg.K),
    )


def validate_vars(vars_, cfg, tol=1e-12):
    """Check power budget, layout feasibility and unit-modulus polarization."""
    if np.any(np.abs(vars_.a) ** 2 > cfg.P + tol):
        worst = float(np.max(np.abs(vars_.a) ** 2))
        raise ValueError(f"transmit power {worst:.6e} exceeds budget {cfg.P:.6e}")
    if not check_layout_feasible(vars_.layout, cfg):
        raise ValueError("antenna layout violates region or spacing constraints")
    vars_.pol.validate()


def _gamma(w, ch):
    """gamma[i, j, k] = w_i^H H[i, j]^H h[j, k] for all triples."""
    # (H[i,j] @ w_i) then conjugated inner product with h[j,k].
    hw = np.einsum("ijmn,ni->ijm", ch.H, w)
    return np.einsum("ijm,jkm->ijk", hw.conj(), ch.h)


def mse_closed_form(vars_, ch, cfg):
    """Closed-form sum MSE.

    1/K + sum |a_{j,k} w_i^H H_{i,j}^H h_{j,k}|^2 + B sigma^2 sum ||w_i||^2
        - (2/(BK)) Re sum w_i^H H_{i,j}^H h_{j,k} a_{j,k}
    """
    b, k = cfg.B, cfg.K
    if vars_.W.shape != (cfg.M, b):
        raise ValueError(f"W must have shape {(cfg.M, b)}, got {vars_.W.shape}")
    if vars_.a.shape != (b, k):
        raise ValueError(f"a must have shape {(b, k)}, got {vars_.a.shape}")
    if ch.h.shape != (b, k, cfg.M) or ch.H.shape != (b, b, cfg.M, cfg.M):
        raise ValueError("channel set dimensions do not match the configuration")
    gam = _gamma(vars_.W, ch)
    ga = gam * vars_.a[None, :, :]
    quad = float(np.sum(np.abs(ga) ** 2))
    noise = b * cfg.sigma2 * float(np.sum(np.abs(vars_.W) ** 2))
    cross = (2.0 / (b * k)) * float(np.sum(ga).real)
    return 1.0 / k + quad + noise - cross


class MonteCarloEstimate(NamedTuple):
    mean: float
    stderr: float
    n_draws: int


def mse_monte_carlo(vars_, ch, cfg, n_draws, rng, symbols="gaussian", chunk=20000):
    """Monte-Carlo estimate of the sum MSE with a standard error.

    Draws unit-variance symbols (circularly symmetric Gaussian by default,
    ``"pm1"`` for random signs), forms each station's received signal
    through the channels, adds the aggregate noise (one CN(0, sigma^2 I)
    term per cell, summed), applies the combining vectors and averages the
    squared error against the mean of all symbols. Independent of the
    closed-form algebra apart from the shared channel objects.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be at least 1")
    b, k, m = ch.h.shape
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_draws:
        c = min(chunk, n_draws - done)
        if symbols == "gaussian":
            s = (rng.standard_normal((b, k, c)) + 1j * rng.standard_normal((b, k, c))) / np.sqrt(2.0)
        elif symbols == "pm1":
            s = rng.choice([-1.0, 1.0], size=(b, k, c)).astype(complex)
        else:
            raise ValueError(f"unknown symbol model {symbols!r}")
        target = s.mean(axis=(0, 1))
        # Per-cell transmitted superposition, then the station exchange.
        sig = np.einsum("jkm,jk,jkc->jmc", ch.h, vars_.a, s)
        noise = (rng.standard_normal((b, m, c)) + 1j * rng.standard_normal((b, m, c)))
        noise *= np.sqrt(cfg.sigma2 / 2.0)
        agg_noise = noise.sum(axis=0)
        err = np.zeros(c)
        for i in range(b):
            y_i = np.einsum("jnm,jnc->mc", ch.H[i].conj(), sig) + agg_noise
            filt = vars_.W[:, i].conj() @ y_i
            err += np.abs(target - filt) ** 2
        total += float(err.sum())
        total_sq += float((err**2).sum())
        done += c
    mean = total / n_draws
    var = max(total_sq / n_draws - mean**2, 0.0)
    if n_draws > 1:
        var *= n_draws / (n_draws - 1)
    return MonteCarloEstimate(mean=mean, stderr=float(np.sqrt(var / n_draws)), n_draws=n_draws)


def _pol_factors(vars_, ch):
    """Scalar polarization factors (pU, pB); unity when running unpolarized."""
    b, k, _ = ch.h.shape
    if not ch.polarized:
        return np.ones((b, k), dtype=complex), np.ones((b, b), dtype=complex)
    p_u = np.einsum("bi,bkij,bkj->bk", vars_.pol.varpi.conj(), ch.A_u, vars_.pol.m)
    p_b = np.einsum("bi,bcij,cj->bc", vars_.pol.varpi.conj(), ch.A_b, vars_.pol.varpi)
    return p_u, p_b


def mse_grad_positions(vars_, drop, cfg, geom=None, polarized=True):
    """Analytic gradient of the closed-form MSE in the antenna coordinates.

    Every field-response entry exp(j*kappa*v^T r) has coordinate partials
    j*kappa*v_x (resp. v_y) times the entry; the chain rule is assembled
    through h_gen (serving links) and through the arrival / departure
    responses of the station links. Returned shape (B, M, 2); flattening
    row-major gives the stacked coordinate vector.
    """
    if geom is None:
        geom = LinkGeometry.from_drop(drop)
    b, k, l = drop.shape
    m = cfg.M
    lam = cfg.lambda_m
    kappa = 2.0 * np.pi / lam
    layout = np.asarray(vars_.layout, dtype=float)

    ch = build_channel_set(drop, cfg, layout, pol=vars_.pol, polarized=polarized, geom=geom)
    gam = _gamma(vars_.W, ch)
    # d(MSE) = sum Re{ kt[i,j,k] * d(gamma[i,j,k]) }
    kt = 2.0 * np.abs(vars_.a[None]) ** 2 * gam.conj() - (2.0 / (b * k)) * vars_.a[None]
    p_u, p_b = _pol_factors(vars_, ch)

    # Serving-link pieces: conj(Q) and the per-coordinate derivative of h_gen.
    phase_u = kappa * np.einsum("bkla,bma->bklm", geom.v_user, layout)
    q_conj = np.exp(-1j * phase_u)                          # (B,K,L,M)
    dh_gen = -1j * kappa * np.einsum("bkl,bkla,bklm->bkma", drop.user_gains, geom.v_user, q_conj)

    grad = np.zeros((b, m, 2))
    w = vars_.W

    # Self links: gamma[i,i,k] = pU[i,k] * w_i^H h_gen[i,k].
    wt_self = kt[np.arange(b), np.arange(b)] * p_u          # (B,K)
    acc = np.einsum("bk,bkma->bma", wt_self, dh_gen)
    grad += np.real(acc * w.conj().T[:, :, None])

    if b > 1:
        for i in range(b):
            for j in range(b):
                if i == j:
                    continue
                f = np.exp(1j * kappa * geom.f_bs[i, j] @ layout[j].T)   # (L,M)
                g = np.exp(1j * kappa * geom.g_bs[i, j] @ layout[i].T)   # (L,M)
                sigma = drop.bs_gain_diag[i, j]                          # (L,)
                left = g.conj() @ w[:, i].conj()                         # (L,) w_i^H G^H
                lm = left * sigma
                pb_c = np.conj(p_b[i, j])
                wt = kt[i, j] * p_u[j]                                   # (K,)

                # Receive-side route (station i moves, through G).
                fh_w = f @ np.einsum("k,km->m", wt, ch.h_gen[j])         # (L,) weighted F h_gen
                r1 = np.einsum("l,la,lm->ma", sigma * fh_w, geom.g_bs[i, j], g.conj())
                grad[i] += np.real(pb_c * (-1j * kappa) * w[:, i].conj()[:, None] * r1)

                # Transmit-side route (station j moves, through F and h_gen).
                hw = np.einsum("k,km->m", wt, ch.h_gen[j])               # (M,)
                dhw = np.einsum("k,kma->ma", wt, dh_gen[j])              # (M,2)
                a1 = np.einsum("l,la,lm->ma", lm, geom.f_bs[i, j], f)
                a0 = lm @ f                                              # (M,)
                grad[j] += np.real(pb_c * (1j * kappa * hw[:, None] * a1 + dhw * a0[:, None]))
    return grad
