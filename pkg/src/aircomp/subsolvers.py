"""Per-block update rules for the alternating minimization.

Five blocks: combining matrix W (closed form), transmit coefficients a
(closed form via the KKT system), user polarization m (iterated
closed-form majorization steps), station polarization varpi (lift to a
3x3 positive semidefinite matrix, convex step, Gaussian randomization with
incumbent inclusion) and antenna positions (gradient descent with
feasibility backtracking). Every update leaves the sum MSE no larger than
before the call.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .channel import build_channel_set, refresh_effective
from .errors import AssemblyError, SolverError
from .numerics import hermitian_eig, hermitianize, max_eig_general, solve_hpd, unvec, vec
from .objective import _gamma, mse_closed_form, mse_grad_positions
from .scene import check_layout_feasible

__all__ = [
    "update_W",
    "update_a",
    "MSubproblemData",
    "build_m_data",
    "sca_update_m",
    "VarpiSubproblemData",
    "build_varpi_data",
    "solve_p44",
    "gaussian_randomize",
    "update_varpi",
    "update_positions",
]

# Floor used when the nonnegative curvature bound degenerates to zero.
LAMBDA_FLOOR = 1e-9


# ---------------------------------------------------------------------------
# Combining matrix
# ---------------------------------------------------------------------------

def update_W(vars_, ch, cfg):
    """Closed-form combining update, one regularized solve per station.

    w_i = (1/(BK)) (sum |a|^2 t t^H + B sigma^2 I)^{-1} sum t a with
    t = H[i,j]^H h[j,k]. With zero noise a tiny ridge keeps the system
    solvable; a warning is emitted because the result is then the limit of
    the noisy solution rather than an exact stationary point.
    """
    b, k, m = cfg.B, cfg.K, cfg.M
    t = np.einsum("ijnm,jkn->ijkm", ch.H.conj(), ch.h)  # t[i,j,k] = H[i,j]^H h[j,k]
    w_new = np.empty((m, b), dtype=complex)
    sigma2 = cfg.sigma2
    for i in range(b):
        ti = t[i].reshape(b * k, m)
        weights = (np.abs(vars_.a) ** 2).reshape(b * k)
        mat = (ti.T * weights) @ ti.conj() + b * sigma2 * np.eye(m)
        rhs = ti.T @ vars_.a.reshape(b * k) / (b * k)
        mat = hermitianize(mat, tol=1e-8)
        evals = np.linalg.eigvalsh(mat)
        if sigma2 == 0.0 and evals[0] <= 1e-12 * max(evals[-1], 1e-300):
            warnings.warn(
                "zero noise with a rank-deficient signal matrix; "
                "regularizing the combining solve with 1e-12 I",
                RuntimeWarning,
            )
            mat = mat + 1e-12 * np.eye(m)
        w_new[:, i] = solve_hpd(mat, rhs)
    return w_new


# ---------------------------------------------------------------------------
# Transmit coefficients
# ---------------------------------------------------------------------------

def update_a(vars_, ch, cfg):
    """Closed-form per-user coefficient update from the KKT conditions.

    With c[i,j,k] = w_i^H H[i,j]^H h[j,k], the unconstrained minimizer
    b/r is kept when it fits the power budget, otherwise the coefficient
    is projected to the power circle while keeping the phase (maximum
    ratio alignment with the composite channel).
    """
    b, k = cfg.B, cfg.K
    gam = _gamma(vars_.W, ch)
    r = np.sum(np.abs(gam) ** 2, axis=0)              # (B, K), diagonal of the quadratic form
    bvec = np.sum(gam.conj(), axis=0) / (b * k)       # (B, K)
    a_new = np.zeros((b, k), dtype=complex)
    sqrt_p = np.sqrt(cfg.P)
    abs_b = np.abs(bvec)
    interior = (abs_b <= sqrt_p * r) & (r > 0)
    a_new[interior] = bvec[interior] / r[interior]
    boundary = ~interior & (abs_b > 0)
    a_new[boundary] = sqrt_p * bvec[boundary] / abs_b[boundary]
    return a_new


# ---------------------------------------------------------------------------
# User polarization (majorized closed-form iterations)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MSubproblemData:
    """Quadratic form of the user-polarization subproblem.

    ``d_l`` is block diagonal with 2x2 blocks sum_i iota iota^H, ``nu``
    stacks the per-user sums of iota, ``lam_max`` is the largest
    eigenvalue of ``d_l`` (clamped at zero).
    """

    d_l: np.ndarray      # (2BK, 2BK) Hermitian PSD
    nu: np.ndarray       # (2BK,)
    lam_max: float
    bk: int

    def f_true(self, m_vec):
        quad = float(np.real(m_vec.conj() @ (self.d_l @ m_vec)))
        return quad - (2.0 / self.bk) * float(np.real(m_vec.conj() @ self.nu))

    def f_surrogate(self, m_vec, m_t):
        lam = self.lam_max
        val = lam * float(np.linalg.norm(m_vec) ** 2)
        val += 2.0 * float(np.real(m_vec.conj() @ ((self.d_l @ m_t) - lam * m_t)))
        val += float(np.real(m_t.conj() @ (lam * m_t - self.d_l @ m_t)))
        val -= (2.0 / self.bk) * float(np.real(m_vec.conj() @ self.nu))
        return val


def build_m_data(vars_, ch, cfg):
    """Assemble the user-polarization quadratic form at fixed other blocks.

    iota^H = a_{j,k} w_i^H H[i,j]^H h_gen[j,k] varpi_j^H A_u[j,k]; the
    station channels do not depend on m and stay fixed.
    """
    b, k = cfg.B, cfg.K
    # s[i,j,k] = w_i^H H[i,j]^H h_gen[j,k]
    hw = np.einsum("ijmn,ni->ijm", ch.H, vars_.W)
    s = np.einsum("ijm,jkm->ijk", hw.conj(), ch.h_gen)
    avarpi = np.einsum("jkab,ja->jkb", ch.A_u.conj().transpose(0, 1, 3, 2), vars_.pol.varpi)
    # iota[i,j,k] = conj(a[j,k] * s[i,j,k]) * (A_u[j,k]^H varpi_j)
    iota = (vars_.a[None] * s).conj()[..., None] * avarpi[None]
    d_l = np.zeros((2 * b * k, 2 * b * k), dtype=complex)
    nu = np.zeros(2 * b * k, dtype=complex)
    for j in range(b):
        for kk in range(k):
            blk = slice(2 * (j * k + kk), 2 * (j * k + kk) + 2)
            vecs = iota[:, j, kk, :]
            d_l[blk, blk] = vecs.T @ vecs.conj()
            nu[blk] = vecs.sum(axis=0)
    d_l = hermitianize(d_l, tol=1e-8)
    evals, _ = hermitian_eig(d_l)
    return MSubproblemData(d_l=d_l, nu=nu, lam_max=max(float(evals[-1]), 0.0), bk=b * k)


def sca_update_m(vars_, ch, cfg, tol=1e-6, t_max=200):
    """Iterated closed-form user-polarization update.

    Starts from the all-ones vector and applies
    m <- exp(j angle(2 (lam_max I - D) m_t + (2/(BK)) nu)) until the
    surrogate value stalls. The phase of a zero entry is taken as zero, so
    the output always has unit-modulus entries. Because the iteration
    restarts from all-ones, the incumbent is kept whenever it already
    scores at least as well on the true objective.
    """
    b, k = cfg.B, cfg.K
    data = build_m_data(vars_, ch, cfg)
    m_vec = np.ones(2 * b * k, dtype=complex)
    f_prev = data.f_surrogate(m_vec, m_vec)
    iters = 0
    for _ in range(t_max):
        direction = 2.0 * (data.lam_max * m_vec - data.d_l @ m_vec) + (2.0 / data.bk) * data.nu
        m_next = np.exp(1j * np.angle(direction))
        f_next = data.f_surrogate(m_next, m_vec)
        m_vec = m_next
        iters += 1
        if abs(f_next - f_prev) <= tol * max(abs(f_prev), 1e-30):
            f_prev = f_next
            break
        f_prev = f_next
    incumbent = vars_.pol.m.reshape(-1)
    if data.f_true(incumbent) <= data.f_true(m_vec):
        m_vec = incumbent.copy()
    return m_vec.reshape(b, k, 2), iters


# ---------------------------------------------------------------------------
# Station polarization (lifted convex steps + randomization)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VarpiSubproblemData:
    """All terms of the single-station polarization objective.

    The objective restricted to station ``m_idx`` is

        g(x) = x^H (D_mm + N_m) x + 2 Re{(rho + c)^H x}
             + sum_{i != m} sum_k (x^H F_im x)(x^H D_imk x)
             - (2/(BK)) sum_{i != m} sum_k Re{(x^H u_i)(x^H eps_imk)}

    and equals the full sum MSE up to terms that do not involve x. The
    printed sesquilinear form E_m + E_m^H is retained in ``r_mm`` and the
    lifted quadratic ``g_big`` for the convex search step, while the exact
    mixed term above is used whenever g itself is evaluated, so candidate
    selection always tracks the true objective.
    """

    m_idx: int
    bk: int
    eps_col: np.ndarray    # (B, K, 2)  eps[i, m_idx, k]
    eps_row: np.ndarray    # (B, K, 2)  eps[m_idx, j, k]
    e_m: np.ndarray        # (2, 2)
    d_mm: np.ndarray       # (2, 2) Hermitian PSD
    n_m: np.ndarray        # (2, 2) Hermitian PSD
    r_mm: np.ndarray       # (2, 2) Hermitian
    rho: np.ndarray        # (2,)
    c: np.ndarray          # (2,)
    f_im: np.ndarray       # (B, 2, 2), zero at i = m_idx
    d_imk: np.ndarray      # (B, K, 2, 2), zero at i = m_idx
    j_mm: np.ndarray       # (3, 3) Hermitian, zero bottom-right entry
    g_big: np.ndarray      # (9, 9)
    lam_max_g: float
    cross_u: np.ndarray    # (B, 2), zero at i = m_idx

    def g_values(self, cands):
        """True objective at each candidate row of ``cands`` (n, 2)."""
        x = np.atleast_2d(np.asarray(cands, dtype=complex))
        xc = x.conj()
        quad_mat = self.d_mm + self.n_m
        quad = np.einsum("ni,ij,nj->n", xc, quad_mat, x).real
        lin = 2.0 * (xc @ (self.rho + self.c)).real
        xfx = np.einsum("ni,bij,nj->nb", xc, self.f_im, x).real
        xdx = np.einsum("ni,bkij,nj->nbk", xc, self.d_imk, x).real
        quart = np.einsum("nb,nbk->n", xfx, xdx)
        s_u = np.einsum("ni,bi->nb", xc, self.cross_u)
        s_v = np.einsum("ni,bki->nbk", xc, self.eps_col * self.quartic_mask[:, None, None])
        cross = -(2.0 / self.bk) * np.einsum("nb,nbk->n", s_u, s_v).real
        return quad + lin + quart + cross

    @property
    def quartic_mask(self):
        mask = np.ones(self.f_im.shape[0])
        mask[self.m_idx] = 0.0
        return mask

    def g_value(self, x):
        return float(self.g_values(np.asarray(x)[None, :])[0])


def _lift3(mat2):
    out = np.zeros((3, 3), dtype=complex)
    out[:2, :2] = mat2
    return out


def build_varpi_data(vars_, ch, m_idx, lemma_tol=1e-6):
    """Assemble the station-``m_idx`` polarization subproblem.

    eps[i,j,k] = (w_i^H H_gen[i,j]^H h_gen[j,k]) A_u[j,k] m_{j,k} a_{j,k};
    the self link carries no propagation hop and uses a fixed gain of one
    half, which combined with varpi^H varpi = 2 keeps the effective self
    channel at the identity for every feasible polarization vector.
    The largest eigenvalue of the lifted quadratic operator must be a
    nonnegative real number; a violation beyond tolerance indicates an
    assembly bug and raises :class:`AssemblyError`.
    """
    b, k, _ = ch.h.shape
    bk = b * k
    varpi = vars_.pol.varpi

    # s_gen[i,j] (K,): w_i^H H_gen[i,j]^H h_gen[j,k], self links at gain 1/2.
    s_gen = np.empty((b, b, k), dtype=complex)
    for i in range(b):
        for j in range(b):
            if i == j:
                s_gen[i, j] = 0.5 * (vars_.W[:, i].conj() @ ch.h_gen[i].T)
            else:
                s_gen[i, j] = vars_.W[:, i].conj() @ ch.H_gen[i, j].conj().T @ ch.h_gen[j].T

    am = np.einsum("jkab,jkb->jka", ch.A_u, vars_.pol.m)        # A_u m, (B,K,2)
    eps = s_gen[..., None] * (am * vars_.a[..., None])[None]    # (B,B,K,2) over (i,j,k)

    eps_col = eps[:, m_idx]          # (B, K, 2): eps[i, m, k]
    eps_row = eps[m_idx]             # (B, K, 2): eps[m, j, k]

    others = [i for i in range(b) if i != m_idx]

    e_m = np.zeros((2, 2), dtype=complex)
    for i in others:
        row = varpi[i].conj() @ ch.A_b[i, m_idx]
        e_m += np.einsum("ka,b->ab", eps_col[i], row)
    e_m *= -1.0 / bk

    d_mm = 4.0 * np.einsum("ka,kb->ab", eps_col[m_idx], eps_col[m_idx].conj())

    n_m = np.zeros((2, 2), dtype=complex)
    rho = np.zeros(2, dtype=complex)
    for j in others:
        av = ch.A_b[m_idx, j] @ varpi[j]
        scal = eps_row[j].conj() @ varpi[j]                     # (K,)
        n_vecs = av[None, :] * scal[:, None]                    # (K, 2)
        n_m += np.einsum("ka,kb->ab", n_vecs, n_vecs.conj())
        rho += n_vecs.sum(axis=0)
    rho *= -1.0 / bk

    c = -(2.0 / bk) * eps_col[m_idx].sum(axis=0)

    f_im = np.zeros((b, 2, 2), dtype=complex)
    d_imk = np.zeros((b, k, 2, 2), dtype=complex)
    cross_u = np.zeros((b, 2), dtype=complex)
    for i in others:
        u = ch.A_b[i, m_idx].conj().T @ varpi[i]
        cross_u[i] = u
        f_im[i] = np.outer(u, u.conj())
        d_imk[i] = np.einsum("ka,kb->kab", eps_col[i], eps_col[i].conj())

    r_mm = hermitianize(e_m + e_m.conj().T + d_mm + n_m, tol=1e-8)
    j_mm = np.zeros((3, 3), dtype=complex)
    j_mm[:2, :2] = r_mm
    j_mm[:2, 2] = rho + c
    j_mm[2, :2] = (rho + c).conj()

    g_big = np.zeros((9, 9), dtype=complex)
    for i in others:
        vf = vec(_lift3(f_im[i]).conj().T)
        for kk in range(k):
            vd = vec(_lift3(d_imk[i, kk]).conj().T)
            g_big += np.outer(vf, vd.conj())

    lam = max_eig_general(g_big) if others else 0.0 + 0.0j
    scale = max(1.0, float(np.max(np.abs(g_big))) if others else 0.0)
    if abs(lam.imag) > lemma_tol * scale or lam.real < -lemma_tol * scale:
        raise AssemblyError(
            f"largest eigenvalue of the lifted quadratic operator is not "
            f"nonnegative real: {lam!r}"
        )
    return VarpiSubproblemData(
        m_idx=m_idx, bk=bk, eps_col=eps_col, eps_row=eps_row, e_m=e_m,
        d_mm=hermitianize(d_mm, tol=1e-8), n_m=hermitianize(n_m, tol=1e-8),
        r_mm=r_mm, rho=rho, c=c, f_im=f_im, d_imk=d_imk, j_mm=j_mm,
        g_big=g_big, lam_max_g=max(float(lam.real), 0.0), cross_u=cross_u,
    )


def _project_psd(mat):
    w, v = np.linalg.eigh(0.5 * (mat + mat.conj().T))
    w = np.clip(w, 0.0, None)
    out = (v * w) @ v.conj().T
    return 0.5 * (out + out.conj().T)


def _project_unit_diag(mat):
    out = mat.copy()
    np.fill_diagonal(out, 1.0)
    return 0.5 * (out + out.conj().T)


def dykstra_psd_unit_diag(target, tol=1e-10, max_sweeps=5000):
    """Projection onto {PSD} intersect {unit diagonal} via Dykstra's method."""
    x = 0.5 * (np.asarray(target, dtype=complex) + np.asarray(target, dtype=complex).conj().T)
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    converged = False
    for _ in range(max_sweeps):
        y = _project_psd(x + p)
        p = x + p - y
        x_new = _project_unit_diag(y + q)
        q = y + q - x_new
        gap = float(np.linalg.norm(x_new - y))
        x = x_new
        if gap <= tol:
            converged = True
            break
    return x, converged


def project_psd_unit_diag(target, tol=1e-12, max_iter=200):
    """Frobenius projection onto Hermitian PSD matrices with unit diagonal.

    Solves the dual equation diag(clip(T + Diag(y))) = 1 for the real
    shift vector y with a semismooth Newton iteration, which stays fast
    and exact even when the target is many orders of magnitude outside
    the feasible set (alternating projections crawl there). Falls back to
    Dykstra sweeps if Newton stalls.
    """
    t = 0.5 * (np.asarray(target, dtype=complex) + np.asarray(target, dtype=complex).conj().T)
    n = t.shape[0]
    y = 1.0 - np.diag(t).real
    best = None
    best_gap = np.inf
    stall = 0
    for _ in range(max_iter):
        w, u = np.linalg.eigh(t + np.diag(y))
        wp = np.clip(w, 0.0, None)
        v = (u * wp) @ u.conj().T
        g = np.diag(v).real - 1.0
        gap = float(np.max(np.abs(g)))
        if gap < best_gap:
            best, best_gap = v, gap
            stall = 0
        else:
            stall += 1
        # Quadratic convergence near the solution; the stall exit covers
        # the rounding floor of ill-scaled targets.
        if best_gap <= tol or stall >= 8:
            break
        # Generalized Jacobian of y -> diag(clip(T + Diag(y))); full
        # (undamped) steps, the iteration is non-monotone but locally
        # quadratic.
        omega = np.empty((n, n))
        for a in range(n):
            for b in range(n):
                if w[a] == w[b]:
                    omega[a, b] = 1.0 if w[a] > 0 else 0.0
                else:
                    omega[a, b] = (wp[a] - wp[b]) / (w[a] - w[b])
        rows = np.einsum("pa,pb->pab", u, u.conj())
        jac = np.real(np.einsum("pab,ab,qab->pq", rows, omega, rows.conj()))
        try:
            dy = np.linalg.solve(jac + 1e-12 * np.eye(n), -g)
        except np.linalg.LinAlgError:
            dy = -g
        y = y + dy
    if best_gap > 1e-9 * max(1.0, float(np.max(np.abs(best)))):
        fallback, _ = dykstra_psd_unit_diag(t)
        w_f = np.linalg.eigvalsh(fallback)
        fb_gap = max(float(np.max(np.abs(np.diag(fallback).real - 1.0))),
                     max(0.0, -float(w_f[0])))
        if fb_gap < best_gap:
            best = fallback
    out = best.copy()
    np.fill_diagonal(out, 1.0)
    return 0.5 * (out + out.conj().T)


def solve_p44(data, x_t, kkt_tol=1e-7, max_iters=50):
    """Convex step of the lifted station-polarization search.

    Minimizes lam ||vec(V)||^2 + Re{vec(V)^H q(x_t)} over Hermitian PSD V
    with unit diagonal, q = 2 G x_t - 2 lam x_t + vec(J^H). The quadratic
    has spherical curvature, so the minimizer is the Dykstra projection of
    -herm(Q)/(2 lam); a projected-gradient polish verifies the fixed point.
    Returns (V, converged); on hitting the iteration cap the best iterate
    is returned with the flag cleared.
    """
    lam = max(data.lam_max_g, LAMBDA_FLOOR)
    q = 2.0 * (data.g_big @ x_t) - 2.0 * lam * x_t + vec(data.j_mm.conj().T)
    q_mat = unvec(q, (3, 3))
    q_h = 0.5 * (q_mat + q_mat.conj().T)
    # Spherical curvature: the constrained minimizer is the projection of
    # the unconstrained one; projected-gradient steps then verify the
    # fixed point.
    v = project_psd_unit_diag(-q_h / (2.0 * lam))
    eta = 1.0 / (2.0 * lam + LAMBDA_FLOOR)
    converged = False
    for _ in range(max_iters):
        step = v - eta * (2.0 * lam * v + q_h)
        v_next = project_psd_unit_diag(step)
        resid = float(np.linalg.norm(v_next - v))
        v = v_next
        if resid <= kkt_tol:
            converged = True
            break
    return v, converged


def p44_objective(data, x_t, v):
    """Lifted convex objective lam ||vec(V)||^2 + Re{vec(V)^H q(x_t)}."""
    lam = max(data.lam_max_g, LAMBDA_FLOOR)
    q = 2.0 * (data.g_big @ x_t) - 2.0 * lam * x_t + vec(data.j_mm.conj().T)
    v_vec = vec(v)
    return lam * float(np.linalg.norm(v_vec) ** 2) + float(np.real(v_vec.conj() @ q))


def gaussian_randomize(v_bar, data, n_samples, rng, incumbent):
    """Recover a unit-modulus candidate from the lifted matrix.

    Draws complex Gaussian vectors with covariance ``v_bar``, maps each to
    unit modulus entrywise, rotates so the third entry equals one and
    keeps the first two entries. The incumbent joins the candidate pool,
    so the returned vector never scores worse than it.
    """
    w, u = np.linalg.eigh(0.5 * (v_bar + v_bar.conj().T))
    w = np.clip(w, 0.0, None)
    root = u * np.sqrt(w)
    z = root @ ((rng.standard_normal((3, n_samples)) + 1j * rng.standard_normal((3, n_samples))) / np.sqrt(2.0))
    unit = np.exp(1j * np.angle(z))
    unit = unit * np.exp(-1j * np.angle(unit[2]))[None, :]
    cands = np.concatenate([unit[:2].T, np.asarray(incumbent, dtype=complex)[None, :]], axis=0)
    values = data.g_values(cands)
    best = int(np.argmin(values))
    return cands[best], float(values[best])


def update_varpi(vars_, ch, cfg, tol=1e-6, t_max=30, n_samples=100, rng=None):
    """Sweep the stations, refining each receive polarization vector in turn.

    For each station: assemble the subproblem, then alternate the convex
    lifted step and Gaussian randomization until the objective stalls.
    Incumbent inclusion makes the full-sweep MSE non-increasing. Returns
    the new (B, 2) polarization block, the refreshed channel set and the
    number of inner iterations.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    b = cfg.B
    pol = vars_.pol
    total_inner = 0
    for m_idx in range(b):
        data = build_varpi_data(vars_, ch, m_idx)
        incumbent = pol.varpi[m_idx].copy()
        h_prev = data.g_value(incumbent)
        lifted = np.append(incumbent, 1.0)
        x_t = vec(np.outer(lifted, lifted.conj()))
        for _ in range(t_max):
            v_bar, _ = solve_p44(data, x_t)
            cand, h_new = gaussian_randomize(v_bar, data, n_samples, rng, incumbent)
            total_inner += 1
            incumbent = cand
            lifted = np.append(cand, 1.0)
            x_t = vec(np.outer(lifted, lifted.conj()))
            if abs(h_new - h_prev) <= tol * max(abs(h_prev), 1e-30):
                h_prev = h_new
                break
            h_prev = h_new
        pol = pol.with_varpi(m_idx, incumbent)
        vars_.pol = pol
        ch = refresh_effective(ch, pol)
    return pol.varpi, ch, total_inner


# ---------------------------------------------------------------------------
# Antenna positions
# ---------------------------------------------------------------------------

def project_direction(direction, layout, cfg, sweeps=12, active_tol=1e-9):
    """Remove first-order constraint violations from a movement direction.

    At a layout where spacing or region constraints are active (the grid
    starts at exactly the minimum spacing), the raw descent direction
    usually compresses some tight pair, so every step length is infeasible
    and plain backtracking freezes the layout. Neutralizing the inward
    component of each active pair and the outward component at the region
    walls yields a direction that is feasible to first order; backtracking
    still validates the actual step.
    """
    d = np.asarray(direction, dtype=float).copy()
    layout = np.asarray(layout, dtype=float)
    a = cfg.region_half_width
    for _ in range(sweeps):
        changed = False
        for b in range(cfg.B):
            for mth in range(cfg.M):
                for nth in range(mth + 1, cfg.M):
                    rel_pos = layout[b, mth] - layout[b, nth]
                    dist = float(np.linalg.norm(rel_pos))
                    if dist > cfg.D0 * (1.0 + active_tol):
                        continue
                    u = rel_pos / max(dist, 1e-300)
                    rate = float((d[b, mth] - d[b, nth]) @ u)
                    if rate < -1e-15:
                        d[b, mth] -= 0.5 * rate * u
                        d[b, nth] += 0.5 * rate * u
                        changed = True
        at_wall = np.abs(layout) >= a * (1.0 - 1e-12)
        outward = at_wall & (d * np.sign(layout) > 0)
        if np.any(outward):
            d[outward] = 0.0
            changed = True
        if not changed:
            break
    return d


def descend_positions(layout, cfg, mse_fn, grad_fn, alpha0=None, tol=1e-6,
                      t_max=200, alpha_floor_factor=1e-12):
    """Backtracking gradient descent on antenna coordinates.

    ``mse_fn(layout)`` and ``grad_fn(layout)`` evaluate the objective and
    its gradient. The step is halved until the candidate is feasible and
    does not increase the objective (monotone descent is part of the
    contract, so an increasing feasible step is treated like an infeasible
    one). Hitting the step floor keeps the current layout. Returns
    (layout, iterations, final objective value, accepted-value trace).
    """
    if alpha0 is None:
        alpha0 = 0.1 * cfg.lambda_m
    alpha = float(alpha0)
    floor = alpha_floor_factor * cfg.lambda_m
    layout = np.asarray(layout, dtype=float).copy()
    current = mse_fn(layout)
    trace = [current]
    iters = 0
    for _ in range(t_max):
        grad = grad_fn(layout)
        iters += 1
        if not np.any(grad):
            break
        direction = project_direction(-grad, layout, cfg)
        if not np.any(direction):
            break
        moved = False
        while alpha >= floor:
            cand = layout + alpha * direction
            if check_layout_feasible(cand, cfg):
                value = mse_fn(cand)
                if value <= current:
                    moved = True
                    break
            alpha *= 0.5
        if not moved:
            break
        delta = current - value
        layout = cand
        current = value
        trace.append(current)
        if abs(delta) <= tol * max(abs(current), 1e-30):
            break
    return layout, iters, current, trace


def update_positions(vars_, drop, cfg, alpha0=None, tol=1e-6, t_max=200,
                     geom=None, polarized=True):
    """Antenna-position update on one drop.

    Returns (layout, channel set, iterations, final mse).
    """

    def channels_at(lay):
        return build_channel_set(drop, cfg, lay, pol=vars_.pol, polarized=polarized, geom=geom)

    probe = vars_.copy()

    def mse_fn(lay):
        probe.layout = lay
        return mse_closed_form(probe, channels_at(lay), cfg)

    def grad_fn(lay):
        probe.layout = lay
        return mse_grad_positions(probe, drop, cfg, geom=geom, polarized=polarized)

    layout, iters, final, _ = descend_positions(
        vars_.layout, cfg, mse_fn, grad_fn, alpha0=alpha0, tol=tol, t_max=t_max,
    )
    return layout, channels_at(layout), iters, final
