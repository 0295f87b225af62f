"""Pure-Python stepping core (numpy + scipy.sparse).

Same entry points and discrete equations as the compiled ``_core``
extension; used when the extension is not built, and as the reference
implementation in tests.

Per step, an outer fixed-point loop over the three fields:
porosity from its closed-form implicit update, moisture by damped Newton
with a sparse direct solve, acid by one sparse linear solve.
"""

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

OK, MOVED, FAILED = 0, 1, 2
INTERNAL, GHOST = 1, 2
IMPLEMENTATION = "python"


def law_eval(law_id, prm, s):
    """B(s) and B'(s) for the kernel law encoding."""
    s = np.asarray(s, dtype=float)
    if law_id == 0:
        sR, sS, D = prm[0], prm[1], prm[2]
        sc = np.clip(s, sR, sS)
        d2 = (sR - sS) ** 2
        B = -(2.0 * D * (sR - sc) ** 2 * (sR - 3.0 * sS + 2.0 * sc)) / (3.0 * d2)
        u = (2.0 * s - (sR + sS)) / (sS - sR)
        dB = np.maximum(0.0, D * (1.0 - u * u))
        return B, dB
    if law_id == 1:
        sR, sS, a, c, Ks, g, mu = prm[:7]
        d = sS - sR
        x = g - a
        K = Ks * c / (mu * d**g)
        w = np.clip(s, sR, sS) - sR
        pos = w > 0.0
        wx = np.zeros_like(w)
        wx[pos] = np.exp(x * np.log(w[pos]))
        B = K * wx * (
            (a - 2.0) * w * w / (x + 2.0) - (2.0 * a - 2.0) * d * w / (x + 1.0) + a * d * d / x
        )
        inside = (s > sR) & (s < sS)
        wp = np.zeros_like(w)
        wp[inside & pos] = np.exp((x - 1.0) * np.log(w[inside & pos]))
        dB = K * wp * (s - sS) * (2.0 * sR + s * (a - 2.0) - a * sS)
        dB = np.where(inside, np.maximum(0.0, dB), 0.0)
        return B, dB
    if law_id == 2:
        return prm[0] * s, np.full_like(s, prm[0])
    raise ValueError(f"unknown law id {law_id}")


class Problem:
    """Arrays describing one classification of the grid, shared by both cores."""

    def __init__(self, *, kind, nbr, pidx, ghost, g_ptr, g_nodes, g_alpha, g_omega,
                 E_node, C_node, S_theta, S_c, law_id, law_params,
                 n_tilde, D_c, K_c, K_n, rho_0, K_w, K_a, h, n_max):
        self.kind = np.ascontiguousarray(kind, dtype=np.int8)
        self.nbr = np.ascontiguousarray(nbr, dtype=np.int64)
        self.pidx = np.ascontiguousarray(pidx, dtype=np.int64)
        self.ghost = np.ascontiguousarray(ghost, dtype=np.int64)
        self.g_ptr = np.ascontiguousarray(g_ptr, dtype=np.int64)
        self.g_nodes = np.ascontiguousarray(g_nodes, dtype=np.int64)
        self.g_alpha = np.ascontiguousarray(g_alpha, dtype=float)
        self.g_omega = np.ascontiguousarray(g_omega, dtype=float)
        self.E_node = np.ascontiguousarray(E_node, dtype=float)
        self.C_node = np.ascontiguousarray(C_node, dtype=float)
        self.S_theta = np.ascontiguousarray(S_theta, dtype=float)
        self.S_c = np.ascontiguousarray(S_c, dtype=float)
        self.law_id = int(law_id)
        self.law_params = np.ascontiguousarray(law_params, dtype=float)
        self.n_tilde, self.D_c, self.K_c, self.K_n = n_tilde, D_c, K_c, K_n
        self.rho_0, self.K_w, self.K_a, self.h, self.n_max = rho_0, K_w, K_a, h, n_max
        self.internal = np.flatnonzero(self.kind == INTERNAL)
        self.active = np.flatnonzero(self.kind != 0)
        self.row = np.full(self.kind.size, -1, dtype=np.int64)
        self.row[self.active] = np.arange(self.active.size)
        # internal-node face list: (i, j) for every axis neighbour
        ii = np.repeat(self.internal, self.nbr.shape[1])
        jj = self.nbr[self.internal].ravel()
        self.face_i, self.face_j = ii, jj
        gi = np.repeat(np.arange(self.ghost.size), np.diff(self.g_ptr))
        self.g_owner = self.ghost[gi] if self.ghost.size else np.zeros(0, np.int64)


def _fields(pb, theta, n):
    npor = n[pb.pidx]
    R = (npor / pb.n_tilde) ** 2
    B, dB = law_eval(pb.law_id, pb.law_params, theta / npor)
    return npor, R, B, dB


def _ghost_sums(pb, values):
    """Per ghost: (sum alpha*v, sum omega*v)."""
    a = np.add.reduceat(pb.g_alpha * values[pb.g_nodes], pb.g_ptr[:-1]) if pb.ghost.size else np.zeros(0)
    w = np.add.reduceat(pb.g_omega * values[pb.g_nodes], pb.g_ptr[:-1]) if pb.ghost.size else np.zeros(0)
    return a, w


def theta_system(pb, theta, theta_old, n, dt, jacobian=True):
    """Residual of the moisture equations on active rows and its Jacobian."""
    npor, R, B, dB = _fields(pb, theta, n)
    h2 = 2.0 * pb.h * pb.h
    i, j = pb.face_i, pb.face_j
    wf = dt * (R[i] + R[j]) / h2
    F = np.zeros(pb.kind.size)
    F[pb.internal] = theta[pb.internal] - theta_old[pb.internal] - dt * pb.S_theta[pb.internal]
    np.add.at(F, i, -wf * (B[j] - B[i]))
    if pb.ghost.size:
        thB, _ = _ghost_sums(pb, theta)
        _, wB = _ghost_sums(pb, B)
        F[pb.ghost] = R[pb.ghost] * wB - pb.K_w * (pb.E_node[pb.ghost] - thB)
    F = F[pb.active]
    if not jacobian:
        return F, None
    rows, cols, vals = [], [], []
    rows.append(pb.row[pb.internal]); cols.append(pb.row[pb.internal]); vals.append(np.ones(pb.internal.size))
    rows.append(pb.row[i]); cols.append(pb.row[i]); vals.append(wf * dB[i] / npor[i])
    rows.append(pb.row[i]); cols.append(pb.row[j]); vals.append(-wf * dB[j] / npor[j])
    if pb.ghost.size:
        p = pb.g_nodes
        rows.append(pb.row[pb.g_owner]); cols.append(pb.row[p])
        vals.append(R[pb.g_owner] * pb.g_omega * dB[p] / npor[p] + pb.K_w * pb.g_alpha)
    m = pb.active.size
    J = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m)
    )
    return F, J


def c_system(pb, theta, theta_old, c_old, n, dt):
    """Linear system A c = b for the acid concentration on active rows."""
    npor, R, B, _ = _fields(pb, theta, n)
    h2 = 2.0 * pb.h * pb.h
    i, j = pb.face_i, pb.face_j
    rows, cols, vals = [], [], []
    b = np.zeros(pb.kind.size)
    sink = pb.K_c * pb.K_n * pb.rho_0
    ii = pb.internal
    rows.append(pb.row[ii]); cols.append(pb.row[ii])
    vals.append(theta[ii] + dt * sink * (1.0 - n[ii]))
    dif = pb.D_c * (theta[i] + theta[j]) / h2
    rows.append(pb.row[i]); cols.append(pb.row[i]); vals.append(dt * (-R[i] * (B[j] - B[i]) / h2 + dif))
    rows.append(pb.row[i]); cols.append(pb.row[j]); vals.append(-dt * (R[j] * (B[j] - B[i]) / h2 + dif))
    b[ii] = theta_old[ii] * c_old[ii] + dt * pb.S_c[ii]
    if pb.ghost.size:
        thB, _ = _ghost_sums(pb, theta)
        _, wB = _ghost_sums(pb, B)
        W = R[pb.ghost] * wB
        cnt = np.diff(pb.g_ptr)
        W_e, thB_e = np.repeat(W, cnt), np.repeat(thB, cnt)
        rows.append(pb.row[pb.g_owner]); cols.append(pb.row[pb.g_nodes])
        vals.append(pb.g_alpha * (W_e + pb.K_a) + pb.D_c * thB_e * pb.g_omega)
        b[pb.ghost] = pb.K_a * pb.C_node[pb.ghost]
    m = pb.active.size
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m)
    )
    return A, b[pb.active]


def row_scale(M):
    """Per-row residual scale: |diagonal|, floored at 1e-3 of the row's largest entry."""
    M = sp.csr_matrix(M)
    rowmax = abs(M).max(axis=1).toarray().ravel()
    return np.maximum(np.maximum(np.abs(M.diagonal()), 1e-3 * rowmax), 1e-300)


def porosity_update(pb, c, n_old, dt):
    k = dt * pb.K_c * c
    return (n_old + k) / (1.0 + k)


def _refs(pb, theta_old, c_old):
    th = pb.E_node[pb.ghost].max() if pb.ghost.size else 0.0
    cr = pb.C_node[pb.ghost].max() if pb.ghost.size else 0.0
    if pb.internal.size:
        th = max(th, np.abs(theta_old[pb.internal]).max())
        cr = max(cr, np.abs(c_old[pb.internal]).max())
    return max(th, 1e-300), max(cr, 1e-300)


def residuals(pb, theta, c, n, theta_old, c_old, n_old, dt):
    """Scaled max-norm residuals (theta, c, n) of the implicit step."""
    th_ref, c_ref = _refs(pb, theta_old, c_old)
    F, J = theta_system(pb, theta, theta_old, n, dt)
    rt = np.max(np.abs(F) / row_scale(J)) / th_ref if F.size else 0.0
    A, b = c_system(pb, theta, theta_old, c_old, n, dt)
    rc = np.max(np.abs(A @ c[pb.active] - b) / row_scale(A)) / c_ref if b.size else 0.0
    ii = pb.internal
    rn = np.max(np.abs(n[ii] - porosity_update(pb, c[ii], n_old[ii], dt))) / pb.n_tilde if ii.size else 0.0
    return rt, rc, rn


def _newton_theta(pb, theta, theta_old, n, dt, th_ref, tol, max_newton=50):
    act = pb.active
    for it in range(max_newton + 1):
        F, J = theta_system(pb, theta, theta_old, n, dt)
        scale = row_scale(J)
        r = np.max(np.abs(F) / scale) / th_ref
        if r <= tol:
            return it, r
        if it == max_newton:
            return -1, r
        J = J + sp.diags(np.full(act.size, 1e-14))
        delta = spsolve(J.tocsc(), -F)
        lam = 1.0
        base = theta[act].copy()
        for _ in range(12):
            theta[act] = base + lam * delta
            F2, _ = theta_system(pb, theta, theta_old, n, dt, jacobian=False)
            if np.max(np.abs(F2) / scale) / th_ref < r or lam < 1e-3:
                break
            lam *= 0.5
    return -1, r


def step(pb, theta, c, n, theta_old, c_old, n_old, dt, tol, max_iter):
    """One implicit step in place. Returns (outer_iterations, residual, ok)."""
    th_ref, c_ref = _refs(pb, theta_old, c_old)
    ii, act = pb.internal, pb.active
    res = np.inf
    for outer in range(1, max_iter + 1):
        n[ii] = porosity_update(pb, c[ii], n_old[ii], dt)
        its, _ = _newton_theta(pb, theta, theta_old, n, dt, th_ref, 0.1 * tol)
        if its < 0:
            return outer, np.inf, False
        A, b = c_system(pb, theta, theta_old, c_old, n, dt)
        c[act] = spsolve(A.tocsc(), b)
        res = max(residuals(pb, theta, c, n, theta_old, c_old, n_old, dt))
        if not np.isfinite(res):
            return outer, res, False
        if res <= tol:
            return outer, res, True
    return max_iter, res, False


def advance(pb, theta, c, n, nsteps, dt, tol, max_iter, stats):
    """Take up to ``nsteps`` steps; stop early on failure or once a node erodes.

    ``stats`` (float64[3]) receives (total outer iterations, last residual,
    max outer iterations of a step). Returns (steps_done, status).
    """
    ii = pb.internal
    for k in range(nsteps):
        theta_old, c_old, n_old = theta.copy(), c.copy(), n.copy()
        its, res, ok = step(pb, theta, c, n, theta_old, c_old, n_old, dt, tol, max_iter)
        stats[0] += its
        stats[1] = res
        stats[2] = max(stats[2], its)
        if not ok:
            theta[:], c[:], n[:] = theta_old, c_old, n_old
            return k, FAILED
        if np.any(n[ii] >= pb.n_max):
            return k + 1, MOVED
    return nsteps, OK
