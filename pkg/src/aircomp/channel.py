"""Field-response channel construction for movable dual-polarized arrays.

Each antenna contributes a unit-modulus phase term exp(j*(2*pi/lambda)*v^T r)
per propagation path, where v is the path direction and r the antenna
position in the local station frame. Dual polarization multiplies the
unpolarized channel by the scalar varpi^H A m, where A is the 2x2
polarization field-response matrix of the link and varpi / m are the
receive / transmit polarization vectors (unit-modulus entries).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .numerics import check_finite

__all__ = [
    "PolarizationState",
    "ChannelSet",
    "LinkGeometry",
    "field_response_rx_user",
    "field_response_bs",
    "unpolarized_channels",
    "polarization_matrices",
    "effective_channels",
    "build_channel_set",
    "refresh_effective",
    "channel_set_to_json",
    "channel_set_from_json",
]

UNIT_MODULUS_TOL = 1e-12

E_V = np.array([0.0, 1.0, 0.0])  # vertical element axis
E_H = np.array([1.0, 0.0, 0.0])  # horizontal element axis


@dataclass(frozen=True)
class PolarizationState:
    """Per-station receive vectors and per-user transmit vectors.

    All entries must be unit modulus: the polarization units are passive
    phase shifters and cannot amplify.
    """

    varpi: np.ndarray  # (B, 2) complex
    m: np.ndarray      # (B, K, 2) complex

    def __post_init__(self):
        object.__setattr__(self, "varpi", np.asarray(self.varpi, dtype=complex))
        object.__setattr__(self, "m", np.asarray(self.m, dtype=complex))
        self.validate()

    def validate(self, tol=UNIT_MODULUS_TOL):
        for name in ("varpi", "m"):
            arr = getattr(self, name)
            dev = float(np.max(np.abs(np.abs(arr) - 1.0))) if arr.size else 0.0
            if dev > tol:
                raise ValueError(f"{name} entries deviate from unit modulus by {dev:.3e}")

    @classmethod
    def all_ones(cls, b, k):
        return cls(varpi=np.ones((b, 2), dtype=complex), m=np.ones((b, k, 2), dtype=complex))

    def with_varpi(self, i, new_varpi):
        v = self.varpi.copy()
        v[i] = new_varpi
        return PolarizationState(varpi=v, m=self.m)

    def with_m(self, new_m):
        return PolarizationState(varpi=self.varpi, m=np.asarray(new_m, dtype=complex))


@dataclass(frozen=True)
class ChannelSet:
    """Unpolarized channels, polarization matrices and effective channels.

    ``H`` and ``H_gen`` carry the identity at the diagonal slots: a station
    aggregates its own received signal directly, without a propagation hop.
    """

    h_gen: np.ndarray  # (B, K, M) user -> serving station, unpolarized
    H_gen: np.ndarray  # (B, B, M, M) station j -> station i, unpolarized
    A_u: np.ndarray    # (B, K, 2, 2) user-link polarization response
    A_b: np.ndarray    # (B, B, 2, 2) station-link polarization response
    h: np.ndarray      # (B, K, M) effective
    H: np.ndarray      # (B, B, M, M) effective
    polarized: bool = True


@dataclass(frozen=True)
class LinkGeometry:
    """Unit direction vectors of every propagation path (drop-constant)."""

    v_user: np.ndarray  # (B, K, L, 2)
    f_bs: np.ndarray    # (B, B, L, 2) departure directions at station j
    g_bs: np.ndarray    # (B, B, L, 2) arrival directions at station i

    @classmethod
    def from_drop(cls, drop):
        return cls(
            v_user=direction_vectors(drop.user_angles),
            f_bs=direction_vectors(drop.bs_tx_angles),
            g_bs=direction_vectors(drop.bs_rx_angles),
        )


def direction_vectors(angles):
    """Map (elevation, azimuth) pairs to planar directions (cos(el)sin(az), sin(el))."""
    el = angles[..., 0]
    az = angles[..., 1]
    return np.stack([np.cos(el) * np.sin(az), np.sin(el)], axis=-1)


def _response(directions, layout, lam):
    """Phase matrix exp(j*(2*pi/lam) * v_l^T r_m), shape (L, M)."""
    phase = (2.0 * np.pi / lam) * (directions @ layout.T)
    return np.exp(1j * phase)


def field_response_rx_user(layout_i, angles, lam):
    """Receive field-response matrix of one user link, shape (L, M)."""
    return _response(direction_vectors(np.asarray(angles)), np.asarray(layout_i, dtype=float), lam)


def field_response_bs(layout_tx, layout_rx, tx_angles, rx_angles, lam):
    """Departure and arrival response matrices (F, G) of one station link."""
    f = _response(direction_vectors(np.asarray(tx_angles)), np.asarray(layout_tx, dtype=float), lam)
    g = _response(direction_vectors(np.asarray(rx_angles)), np.asarray(layout_rx, dtype=float), lam)
    return f, g


def unpolarized_channels(drop, layout, lam, geom=None):
    """Assemble h_gen and H_gen for every link at the given layout.

    h_gen[i, k] = Q_{i,k}^H u_{i,k};  H_gen[i, j]^H = G^H diag(sigma) F.
    The diagonal H_gen[i, i] is set to the identity; downstream code never
    evaluates a propagation matrix for a station with itself.
    """
    layout = np.asarray(layout, dtype=float)
    if geom is None:
        geom = LinkGeometry.from_drop(drop)
    b, k, l = drop.shape
    m = layout.shape[1]
    kappa = 2.0 * np.pi / lam

    # Q phases for all user links at once: (B, K, L, M)
    phase_u = kappa * np.einsum("bkla,bma->bklm", geom.v_user, layout)
    h_gen = np.einsum("bklm,bkl->bkm", np.exp(-1j * phase_u), drop.user_gains)

    h_big = np.zeros((b, b, m, m), dtype=complex)
    h_big[np.arange(b), np.arange(b)] = np.eye(m)
    for i in range(b):
        for j in range(b):
            if i == j:
                continue
            f = _response(geom.f_bs[i, j], layout[j], lam)
            g = _response(geom.g_bs[i, j], layout[i], lam)
            h_adj = g.conj().T @ (drop.bs_gain_diag[i, j][:, None] * f)
            h_big[i, j] = h_adj.conj().T
    return h_gen, h_big


def _pol_basis(el, az):
    """Orthonormal electric-field basis pair for mean angles (el, az)."""
    z = np.array([np.sin(el) * np.sin(az), -np.cos(el), np.sin(el) * np.cos(az)])
    zbar = np.array([np.cos(az), 0.0, -np.sin(az)])
    return z, zbar


def _tx_pol_matrix(el, az):
    z, zbar = _pol_basis(el, az)
    return np.array([[z @ E_V, z @ E_H], [zbar @ E_V, zbar @ E_H]], dtype=complex)


def _rx_pol_matrix(el, az):
    z, zbar = _pol_basis(el, az)
    return np.array([[E_V @ z, E_V @ zbar], [E_H @ z, E_H @ zbar]], dtype=complex)


def polarization_matrices(drop):
    """2x2 polarization field-response matrices for all links.

    The basis vectors use the arithmetic per-link mean of the path angles.
    A = Q_rx @ P_tx; user links share one angle set for both sides, station
    links use arrival angles on the receive side and departure angles on
    the transmit side. Station self-links carry the identity.
    """
    b, k, _ = drop.shape
    mean_u = drop.user_angles.mean(axis=2)   # (B, K, 2)
    mean_t = drop.bs_tx_angles.mean(axis=2)  # (B, B, 2)
    mean_r = drop.bs_rx_angles.mean(axis=2)

    a_u = np.empty((b, k, 2, 2), dtype=complex)
    for i in range(b):
        for kk in range(k):
            el, az = mean_u[i, kk]
            a_u[i, kk] = _rx_pol_matrix(el, az) @ _tx_pol_matrix(el, az)

    a_b = np.empty((b, b, 2, 2), dtype=complex)
    for i in range(b):
        for j in range(b):
            if i == j:
                a_b[i, j] = np.eye(2)
                continue
            el_t, az_t = mean_t[i, j]
            el_r, az_r = mean_r[i, j]
            a_b[i, j] = _rx_pol_matrix(el_r, az_r) @ _tx_pol_matrix(el_t, az_t)
    return a_u, a_b


def effective_channels(h_gen, h_big, a_u, a_b, pol):
    """Scale the unpolarized channels by their polarization factors.

    h[i, k] = h_gen[i, k] * (varpi_i^H A_u[i, k] m_{i,k});
    H[i, j] = H_gen[i, j] * (varpi_i^H A_b[i, j] varpi_j) off the diagonal,
    and the identity on it.
    """
    pol.validate()
    factor_u = np.einsum("bi,bkij,bkj->bk", pol.varpi.conj(), a_u, pol.m)
    h = h_gen * factor_u[..., None]
    factor_b = np.einsum("bi,bcij,cj->bc", pol.varpi.conj(), a_b, pol.varpi)
    h_eff = h_big * factor_b[..., None, None]
    b, m = h_gen.shape[0], h_gen.shape[2]
    h_eff[np.arange(b), np.arange(b)] = np.eye(m)
    return h, h_eff


def build_channel_set(drop, cfg, layout, pol=None, polarized=True, geom=None):
    """Full channel assembly for one drop, layout and polarization state."""
    h_gen, h_big = unpolarized_channels(drop, layout, cfg.lambda_m, geom=geom)
    a_u, a_b = polarization_matrices(drop)
    if polarized:
        if pol is None:
            raise ValueError("polarized channels need a PolarizationState")
        h, h_eff = effective_channels(h_gen, h_big, a_u, a_b, pol)
    else:
        h = h_gen.copy()
        h_eff = h_big.copy()
        b, m = h_gen.shape[0], h_gen.shape[2]
        h_eff[np.arange(b), np.arange(b)] = np.eye(m)
    return ChannelSet(h_gen=h_gen, H_gen=h_big, A_u=a_u, A_b=a_b, h=h, H=h_eff,
                      polarized=polarized)


def refresh_effective(ch, pol):
    """Re-apply polarization factors without rebuilding the field responses."""
    if not ch.polarized:
        return ch
    h, h_eff = effective_channels(ch.h_gen, ch.H_gen, ch.A_u, ch.A_b, pol)
    return ChannelSet(h_gen=ch.h_gen, H_gen=ch.H_gen, A_u=ch.A_u, A_b=ch.A_b,
                      h=h, H=h_eff, polarized=True)


def _c2pairs(a):
    a = np.asarray(a, dtype=complex)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def _pairs2c(x):
    arr = np.asarray(x, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def channel_set_to_json(ch, path=None):
    """Serialize a channel set with complex numbers as [re, im] pairs."""
    payload = {
        "h_gen": _c2pairs(ch.h_gen),
        "H_gen": _c2pairs(ch.H_gen),
        "A_u": _c2pairs(ch.A_u),
        "A_b": _c2pairs(ch.A_b),
        "h": _c2pairs(ch.h),
        "H": _c2pairs(ch.H),
        "polarized": bool(ch.polarized),
    }
    text = json.dumps(payload, sort_keys=True)
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return text


def channel_set_from_json(text):
    data = json.loads(text)
    return ChannelSet(
        h_gen=check_finite(_pairs2c(data["h_gen"])),
        H_gen=check_finite(_pairs2c(data["H_gen"])),
        A_u=_pairs2c(data["A_u"]),
        A_b=_pairs2c(data["A_b"]),
        h=_pairs2c(data["h"]),
        H=_pairs2c(data["H"]),
        polarized=bool(data["polarized"]),
    )
