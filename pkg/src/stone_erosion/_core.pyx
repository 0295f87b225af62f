# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stepping core.

Same entry points and discrete equations as ``_core_py``. In 1D the
moisture Newton systems and the acid system are solved with a banded LU
(LAPACK dgbsv); in 2D both are relaxed by pointwise nonlinear
Gauss-Seidel. A step that the compiled path cannot finish is retried with
the pure-Python direct solver before it is reported as failed.
"""

import numpy as np
from libc.math cimport exp, fabs, log
from libc.stdint cimport int64_t
from libc.stdlib cimport free, malloc
from libc.string cimport memcpy
from scipy.linalg.cython_lapack cimport dgbsv

from . import _core_py

OK, MOVED, FAILED = 0, 1, 2
IMPLEMENTATION = "compiled"

cdef enum:
    KL = 2
    LDAB = 7  # 2*KL + KU + 1 with KU = KL
    GS_MAX_SWEEPS = 4000
    NEWTON_MAX = 50


cdef struct Prob:
    int size
    int nd
    int law_id
    const signed char* kind
    const int64_t* nbr
    const int64_t* pidx
    int64_t nint
    const int64_t* internal
    int64_t ng
    const int64_t* ghost
    const int64_t* gptr
    const int64_t* gnodes
    const double* galpha
    const double* gomega
    const double* E
    const double* C
    const double* Sth
    const double* Sc
    const double* lp
    double ntil, Dc, Kc, Kn, rho0, Kw, Ka, h, nmax


cdef struct Work:
    double* B
    double* dB
    double* R
    double* npor
    double* F
    double* scale
    double* theta_old
    double* c_old
    double* n_old
    double* tmp
    double* ab
    double* rhs
    int* ipiv


# --- absorption laws -------------------------------------------------------

cdef inline double _clip(double s, double a, double b) noexcept nogil:
    return a if s < a else (b if s > b else s)


cdef inline void law(int law_id, const double* p, double s, double* B, double* dB) noexcept nogil:
    cdef double sR, sS, D, d2, sc, a, c, Ks, g, mu, d, x, K, w, wx, wp, v
    if law_id == 0:
        sR = p[0]; sS = p[1]; D = p[2]
        d2 = (sR - sS) * (sR - sS)
        sc = _clip(s, sR, sS)
        B[0] = -(2.0 * D * (sR - sc) * (sR - sc) * (sR - 3.0 * sS + 2.0 * sc)) / (3.0 * d2)
        x = (2.0 * s - (sR + sS)) / (sS - sR)
        v = D * (1.0 - x * x)
        dB[0] = v if v > 0.0 else 0.0
    elif law_id == 1:
        sR = p[0]; sS = p[1]; a = p[2]; c = p[3]; Ks = p[4]; g = p[5]; mu = p[6]
        d = sS - sR
        x = g - a
        K = Ks * c / (mu * exp(g * log(d)))
        w = _clip(s, sR, sS) - sR
        wx = exp(x * log(w)) if w > 0.0 else 0.0
        B[0] = K * wx * ((a - 2.0) * w * w / (x + 2.0) - (2.0 * a - 2.0) * d * w / (x + 1.0) + a * d * d / x)
        if s > sR and s < sS and w > 0.0:
            wp = exp((x - 1.0) * log(w))
            v = K * wp * (s - sS) * (2.0 * sR + s * (a - 2.0) - a * sS)
            dB[0] = v if v > 0.0 else 0.0
        else:
            dB[0] = 0.0
    else:
        B[0] = p[0] * s
        dB[0] = p[0]


# --- shared pieces ---------------------------------------------------------

cdef inline double porosity(double n_old, double c, double dt, double Kc) noexcept nogil:
    cdef double k = dt * Kc * c
    return (n_old + k) / (1.0 + k)


cdef void eval_node(Prob* P, Work* W, const double* theta, const double* n, int64_t k) noexcept nogil:
    cdef double np_ = n[P.pidx[k]]
    W.npor[k] = np_
    W.R[k] = (np_ / P.ntil) * (np_ / P.ntil)
    law(P.law_id, P.lp, theta[k] / np_, &W.B[k], &W.dB[k])


cdef void eval_all(Prob* P, Work* W, const double* theta, const double* n) noexcept nogil:
    cdef int64_t k
    for k in range(P.size):
        if P.kind[k] != 0:
            eval_node(P, W, theta, n, k)


cdef double theta_row(Prob* P, Work* W, const double* theta, int64_t k, double dt, int ghost_slot,
                      double* diag, double* rowmax) noexcept nogil:
    """Residual of the moisture equation of node k, with its Jacobian diagonal and row max."""
    cdef double h2 = 2.0 * P.h * P.h
    cdef double F, wf, d, off, m, sB, sa
    cdef int64_t j, q, p
    cdef int dd
    if ghost_slot < 0:
        F = theta[k] - W.theta_old[k] - dt * P.Sth[k]
        d = 1.0
        m = 0.0
        for dd in range(P.nd):
            j = P.nbr[k * P.nd + dd]
            wf = dt * (W.R[k] + W.R[j]) / h2
            F -= wf * (W.B[j] - W.B[k])
            d += wf * W.dB[k] / W.npor[k]
            off = fabs(wf * W.dB[j] / W.npor[j])
            if off > m:
                m = off
        diag[0] = d
        rowmax[0] = m if m > fabs(d) else fabs(d)
        return F
    sB = 0.0
    sa = 0.0
    d = 0.0
    m = 0.0
    for q in range(P.gptr[ghost_slot], P.gptr[ghost_slot + 1]):
        p = P.gnodes[q]
        sB += P.gomega[q] * W.B[p]
        sa += P.galpha[q] * theta[p]
        off = W.R[k] * P.gomega[q] * W.dB[p] / W.npor[p] + P.Kw * P.galpha[q]
        if p == k:
            d = off
        if fabs(off) > m:
            m = fabs(off)
    diag[0] = d
    rowmax[0] = m
    return W.R[k] * sB - P.Kw * (P.E[k] - sa)


cdef inline double row_scale(double diag, double rowmax) noexcept nogil:
    cdef double s = fabs(diag)
    if 1e-3 * rowmax > s:
        s = 1e-3 * rowmax
    return s if s > 1e-300 else 1e-300


cdef double c_row(Prob* P, Work* W, const double* theta, const double* c, const double* n,
                  int64_t k, double dt, int ghost_slot, double* diag, double* rowmax) noexcept nogil:
    """Residual A c - b of the acid equation of node k, with diagonal and row max of A."""
    cdef double h2 = 2.0 * P.h * P.h
    cdef double res, d, a, m, dif, sB, thB, Wg, acc
    cdef int64_t j, q, p
    cdef int dd
    if ghost_slot < 0:
        d = theta[k] + dt * P.Kc * P.Kn * P.rho0 * (1.0 - n[k])
        res = -(W.theta_old[k] * W.c_old[k] + dt * P.Sc[k])
        m = 0.0
        acc = 0.0
        for dd in range(P.nd):
            j = P.nbr[k * P.nd + dd]
            dif = P.Dc * (theta[k] + theta[j]) / h2
            d += dt * (-W.R[k] * (W.B[j] - W.B[k]) / h2 + dif)
            a = -dt * (W.R[j] * (W.B[j] - W.B[k]) / h2 + dif)
            acc += a * c[j]
            if fabs(a) > m:
                m = fabs(a)
        res += d * c[k] + acc
        diag[0] = d
        rowmax[0] = m if m > fabs(d) else fabs(d)
        return res
    sB = 0.0
    thB = 0.0
    for q in range(P.gptr[ghost_slot], P.gptr[ghost_slot + 1]):
        p = P.gnodes[q]
        sB += P.gomega[q] * W.B[p]
        thB += P.galpha[q] * theta[p]
    Wg = W.R[k] * sB
    res = -P.Ka * P.C[k]
    d = 0.0
    m = 0.0
    for q in range(P.gptr[ghost_slot], P.gptr[ghost_slot + 1]):
        p = P.gnodes[q]
        a = P.galpha[q] * (Wg + P.Ka) + P.Dc * thB * P.gomega[q]
        res += a * c[p]
        if p == k:
            d = a
        if fabs(a) > m:
            m = fabs(a)
    diag[0] = d
    rowmax[0] = m
    return res


cdef void refs(Prob* P, Work* W, double* th_ref, double* c_ref) noexcept nogil:
    cdef double t = 0.0, cr = 0.0
    cdef int64_t q, k
    for q in range(P.ng):
        k = P.ghost[q]
        if P.E[k] > t:
            t = P.E[k]
        if P.C[k] > cr:
            cr = P.C[k]
    for q in range(P.nint):
        k = P.internal[q]
        if fabs(W.theta_old[k]) > t:
            t = fabs(W.theta_old[k])
        if fabs(W.c_old[k]) > cr:
            cr = fabs(W.c_old[k])
    th_ref[0] = t if t > 1e-300 else 1e-300
    c_ref[0] = cr if cr > 1e-300 else 1e-300


cdef double theta_resid_max(Prob* P, Work* W, const double* theta, double dt, double th_ref) noexcept nogil:
    cdef double r = 0.0, F, d, m
    cdef int64_t q, k
    for q in range(P.nint):
        k = P.internal[q]
        F = theta_row(P, W, theta, k, dt, -1, &d, &m)
        W.scale[k] = row_scale(d, m)
        W.F[k] = F
        if fabs(F) / W.scale[k] > r:
            r = fabs(F) / W.scale[k]
    for q in range(P.ng):
        k = P.ghost[q]
        F = theta_row(P, W, theta, k, dt, <int>q, &d, &m)
        W.scale[k] = row_scale(d, m)
        W.F[k] = F
        if fabs(F) / W.scale[k] > r:
            r = fabs(F) / W.scale[k]
    return r / th_ref


cdef double c_resid_max(Prob* P, Work* W, const double* theta, const double* c, const double* n,
                        double dt, double c_ref) noexcept nogil:
    cdef double r = 0.0, F, d, m
    cdef int64_t q, k
    for q in range(P.nint):
        k = P.internal[q]
        F = c_row(P, W, theta, c, n, k, dt, -1, &d, &m)
        if fabs(F) / row_scale(d, m) > r:
            r = fabs(F) / row_scale(d, m)
    for q in range(P.ng):
        k = P.ghost[q]
        F = c_row(P, W, theta, c, n, k, dt, <int>q, &d, &m)
        if fabs(F) / row_scale(d, m) > r:
            r = fabs(F) / row_scale(d, m)
    return r / c_ref


cdef double n_resid_max(Prob* P, Work* W, const double* c, const double* n, double dt) noexcept nogil:
    cdef double r = 0.0, v
    cdef int64_t q, k
    for q in range(P.nint):
        k = P.internal[q]
        v = fabs(n[k] - porosity(W.n_old[k], c[k], dt, P.Kc))
        if v > r:
            r = v
    return r / P.ntil


# --- 1D: banded direct solves ------------------------------------------------

cdef inline void band_add(double* ab, int64_t i, int64_t j, double v) noexcept nogil:
    # LAPACK band storage, column major: ab[KL + KU + i - j, j]
    ab[(2 * KL + i - j) + j * LDAB] += v


cdef int band_solve(Prob* P, Work* W) noexcept nogil:
    cdef int n = P.size, kl = KL, ku = KL, nrhs = 1, ldab = LDAB, ldb = P.size, info = 0
    dgbsv(&n, &kl, &ku, &nrhs, W.ab, &ldab, W.ipiv, W.rhs, &ldb, &info)
    return info


cdef void clear_band(Prob* P, Work* W) noexcept nogil:
    cdef int64_t k
    for k in range(P.size * LDAB):
        W.ab[k] = 0.0
    for k in range(P.size):
        W.rhs[k] = 0.0
        if P.kind[k] == 0:
            band_add(W.ab, k, k, 1.0)


cdef void theta_jacobian_band(Prob* P, Work* W, const double* theta, double dt) noexcept nogil:
    cdef double h2 = 2.0 * P.h * P.h, wf
    cdef int64_t q, k, j, p, r
    cdef int dd
    clear_band(P, W)
    for q in range(P.nint):
        k = P.internal[q]
        band_add(W.ab, k, k, 1.0 + 1e-14)
        for dd in range(P.nd):
            j = P.nbr[k * P.nd + dd]
            wf = dt * (W.R[k] + W.R[j]) / h2
            band_add(W.ab, k, k, wf * W.dB[k] / W.npor[k])
            band_add(W.ab, k, j, -wf * W.dB[j] / W.npor[j])
    for q in range(P.ng):
        k = P.ghost[q]
        band_add(W.ab, k, k, 1e-14)
        for r in range(P.gptr[q], P.gptr[q + 1]):
            p = P.gnodes[r]
            band_add(W.ab, k, p, W.R[k] * P.gomega[r] * W.dB[p] / W.npor[p] + P.Kw * P.galpha[r])


cdef int newton_theta_1d(Prob* P, Work* W, double* theta, const double* n, double dt,
                         double th_ref, double tol) noexcept nogil:
    cdef int it, ls, info
    cdef double r, r2, lam
    cdef int64_t k, q
    eval_all(P, W, theta, n)
    for it in range(NEWTON_MAX + 1):
        r = theta_resid_max(P, W, theta, dt, th_ref)
        if r <= tol:
            return it
        if it == NEWTON_MAX or r != r:
            return -1
        theta_jacobian_band(P, W, theta, dt)
        for q in range(P.nint):
            k = P.internal[q]
            W.rhs[k] = -W.F[k]
        for q in range(P.ng):
            k = P.ghost[q]
            W.rhs[k] = -W.F[k]
        info = band_solve(P, W)
        if info != 0:
            return -1
        memcpy(W.tmp, theta, P.size * sizeof(double))
        lam = 1.0
        for ls in range(12):
            for k in range(P.size):
                if P.kind[k] != 0:
                    theta[k] = W.tmp[k] + lam * W.rhs[k]
                    eval_node(P, W, theta, n, k)
            r2 = line_resid(P, W, theta, dt, th_ref)
            if r2 < r or lam < 1e-3:
                break
            lam *= 0.5
    return -1


cdef double line_resid(Prob* P, Work* W, const double* theta, double dt, double th_ref) noexcept nogil:
    # residual against the row scales of the current Newton iterate
    cdef double r = 0.0, F, d, m
    cdef int64_t q, k
    for q in range(P.nint):
        k = P.internal[q]
        F = theta_row(P, W, theta, k, dt, -1, &d, &m)
        if fabs(F) / W.scale[k] > r:
            r = fabs(F) / W.scale[k]
    for q in range(P.ng):
        k = P.ghost[q]
        F = theta_row(P, W, theta, k, dt, <int>q, &d, &m)
        if fabs(F) / W.scale[k] > r:
            r = fabs(F) / W.scale[k]
    return r / th_ref


cdef int solve_c_1d(Prob* P, Work* W, const double* theta, double* c, const double* n, double dt) noexcept nogil:
    cdef double h2 = 2.0 * P.h * P.h, dif, Wg, sB, thB
    cdef int64_t q, k, j, p, r
    cdef int dd, info
    clear_band(P, W)
    for q in range(P.nint):
        k = P.internal[q]
        band_add(W.ab, k, k, theta[k] + dt * P.Kc * P.Kn * P.rho0 * (1.0 - n[k]))
        for dd in range(P.nd):
            j = P.nbr[k * P.nd + dd]
            dif = P.Dc * (theta[k] + theta[j]) / h2
            band_add(W.ab, k, k, dt * (-W.R[k] * (W.B[j] - W.B[k]) / h2 + dif))
            band_add(W.ab, k, j, -dt * (W.R[j] * (W.B[j] - W.B[k]) / h2 + dif))
        W.rhs[k] = W.theta_old[k] * W.c_old[k] + dt * P.Sc[k]
    for q in range(P.ng):
        k = P.ghost[q]
        sB = 0.0
        thB = 0.0
        for r in range(P.gptr[q], P.gptr[q + 1]):
            p = P.gnodes[r]
            sB += P.gomega[r] * W.B[p]
            thB += P.galpha[r] * theta[p]
        Wg = W.R[k] * sB
        for r in range(P.gptr[q], P.gptr[q + 1]):
            p = P.gnodes[r]
            band_add(W.ab, k, p, P.galpha[r] * (Wg + P.Ka) + P.Dc * thB * P.gomega[r])
        W.rhs[k] = P.Ka * P.C[k]
    info = band_solve(P, W)
    if info != 0:
        return -1
    for k in range(P.size):
        if P.kind[k] != 0:
            c[k] = W.rhs[k]
    return 0


# --- 2D: pointwise nonlinear Gauss-Seidel -----------------------------------

cdef int gs_theta(Prob* P, Work* W, double* theta, const double* n, double dt,
                  double th_ref, double tol) noexcept nogil:
    cdef int sweep, inner, slot
    cdef int64_t q, k, m_all = P.nint + P.ng
    cdef double F, d, m, rmax, x0, F0, step_, lam
    eval_all(P, W, theta, n)
    for sweep in range(GS_MAX_SWEEPS):
        rmax = 0.0
        for q in range(m_all):
            if q < P.nint:
                k = P.internal[q]
                slot = -1
            else:
                k = P.ghost[q - P.nint]
                slot = <int>(q - P.nint)
            F = theta_row(P, W, theta, k, dt, slot, &d, &m)
            if fabs(F) / row_scale(d, m) > rmax:
                rmax = fabs(F) / row_scale(d, m)
            for inner in range(4):
                if fabs(F) <= 1e-3 * tol * th_ref * row_scale(d, m) or d <= 0.0:
                    break
                x0 = theta[k]
                F0 = F
                step_ = -F / d
                lam = 1.0
                while True:
                    theta[k] = x0 + lam * step_
                    eval_node(P, W, theta, n, k)
                    F = theta_row(P, W, theta, k, dt, slot, &d, &m)
                    if fabs(F) < fabs(F0) or lam < 1e-4:
                        break
                    lam *= 0.5
        if rmax / th_ref <= tol:
            return sweep
        if rmax != rmax:
            return -1
    return -1


cdef int gs_c(Prob* P, Work* W, const double* theta, double* c, const double* n, double dt,
              double c_ref, double tol) noexcept nogil:
    cdef int sweep, slot
    cdef int64_t q, k, m_all = P.nint + P.ng
    cdef double F, d, m, rmax
    for sweep in range(GS_MAX_SWEEPS):
        rmax = 0.0
        for q in range(m_all):
            if q < P.nint:
                k = P.internal[q]
                slot = -1
            else:
                k = P.ghost[q - P.nint]
                slot = <int>(q - P.nint)
            F = c_row(P, W, theta, c, n, k, dt, slot, &d, &m)
            if fabs(F) / row_scale(d, m) > rmax:
                rmax = fabs(F) / row_scale(d, m)
            if fabs(d) > 1e-300:
                c[k] -= F / d
        if rmax / c_ref <= tol:
            return sweep
        if rmax != rmax or rmax / c_ref > 1e30:
            return -1
    return -1


# --- driver -----------------------------------------------------------------

cdef int native_step(Prob* P, Work* W, double* theta, double* c, double* n, double dt,
                     double tol, int max_iter, int banded, double* res_out) noexcept nogil:
    cdef double th_ref, c_ref, rt, rc, rn, res = 1e300
    cdef int outer, its
    cdef int64_t q, k
    refs(P, W, &th_ref, &c_ref)
    for outer in range(1, max_iter + 1):
        for q in range(P.nint):
            k = P.internal[q]
            n[k] = porosity(W.n_old[k], c[k], dt, P.Kc)
        if banded:
            its = newton_theta_1d(P, W, theta, n, dt, th_ref, 0.1 * tol)
        else:
            its = gs_theta(P, W, theta, n, dt, th_ref, 0.1 * tol)
        if its < 0:
            res_out[0] = 1e300
            return -outer
        eval_all(P, W, theta, n)
        if banded:
            if solve_c_1d(P, W, theta, c, n, dt) != 0:
                res_out[0] = 1e300
                return -outer
        else:
            if gs_c(P, W, theta, c, n, dt, c_ref, 0.1 * tol) < 0:
                res_out[0] = 1e300
                return -outer
        rt = theta_resid_max(P, W, theta, dt, th_ref)
        rc = c_resid_max(P, W, theta, c, n, dt, c_ref)
        rn = n_resid_max(P, W, c, n, dt)
        res = rt
        if rc > res:
            res = rc
        if rn > res:
            res = rn
        res_out[0] = res
        if res != res:
            return -outer
        if res <= tol:
            return outer
    return -max_iter


cdef int check_banded(Prob* P) noexcept nogil:
    cdef int64_t q, r, k
    if P.nd != 2:
        return 0
    for q in range(P.ng):
        k = P.ghost[q]
        for r in range(P.gptr[q], P.gptr[q + 1]):
            if P.gnodes[r] - k > KL or k - P.gnodes[r] > KL:
                return 0
    return 1


cdef int check_gs(Prob* P) noexcept nogil:
    # every ghost row must depend monotonically on its own value
    cdef int64_t q, r, k
    cdef int found
    for q in range(P.ng):
        k = P.ghost[q]
        found = 0
        for r in range(P.gptr[q], P.gptr[q + 1]):
            if P.gnodes[r] == k and P.galpha[r] >= 0.0 and P.gomega[r] >= 0.0 and (P.galpha[r] > 0.0 or P.gomega[r] > 0.0):
                found = 1
        if not found:
            return 0
    return 1


def _gather(pb):
    """Contiguous arrays of a Problem, kept alive by the caller."""
    return dict(
        kind=np.ascontiguousarray(pb.kind, dtype=np.int8),
        nbr=np.ascontiguousarray(pb.nbr, dtype=np.int64).ravel(),
        pidx=np.ascontiguousarray(pb.pidx, dtype=np.int64),
        internal=np.ascontiguousarray(pb.internal, dtype=np.int64),
        ghost=np.ascontiguousarray(pb.ghost, dtype=np.int64),
        gptr=np.ascontiguousarray(pb.g_ptr, dtype=np.int64),
        gnodes=np.ascontiguousarray(pb.g_nodes, dtype=np.int64),
        galpha=np.ascontiguousarray(pb.g_alpha, dtype=float),
        gomega=np.ascontiguousarray(pb.g_omega, dtype=float),
        E=np.ascontiguousarray(pb.E_node, dtype=float),
        C=np.ascontiguousarray(pb.C_node, dtype=float),
        Sth=np.ascontiguousarray(pb.S_theta, dtype=float),
        Sc=np.ascontiguousarray(pb.S_c, dtype=float),
        lp=np.ascontiguousarray(pb.law_params, dtype=float),
        # padded so that empty arrays still yield a valid pointer
        pad_i=np.zeros(1, dtype=np.int64),
        pad_d=np.zeros(1),
    )


cdef const int64_t* _iptr(int64_t[::1] a, int64_t[::1] pad):
    return &a[0] if a.shape[0] else &pad[0]


cdef const double* _dptr(double[::1] a, double[::1] pad):
    return &a[0] if a.shape[0] else &pad[0]


def advance(pb, theta, c, n, long nsteps, double dt, double tol, int max_iter, double[::1] stats):
    """Take up to ``nsteps`` steps in place; same contract as ``_core_py.advance``."""
    cdef double[::1] th = theta, ca = c, nn = n
    arrs = _gather(pb)
    cdef signed char[::1] kind = arrs["kind"]
    cdef int64_t[::1] pad_i = arrs["pad_i"]
    cdef double[::1] pad_d = arrs["pad_d"]
    cdef Prob P
    cdef Work W
    cdef int size = kind.shape[0]
    cdef long s
    cdef int64_t q, k
    cdef int its, banded, native, moved
    cdef double res = 0.0
    P.size = size
    P.nd = pb.nbr.shape[1]
    P.law_id = pb.law_id
    P.kind = &kind[0]
    P.nbr = _iptr(arrs["nbr"], pad_i)
    P.pidx = _iptr(arrs["pidx"], pad_i)
    P.nint = arrs["internal"].shape[0]
    P.internal = _iptr(arrs["internal"], pad_i)
    P.ng = arrs["ghost"].shape[0]
    P.ghost = _iptr(arrs["ghost"], pad_i)
    P.gptr = _iptr(arrs["gptr"], pad_i)
    P.gnodes = _iptr(arrs["gnodes"], pad_i)
    P.galpha = _dptr(arrs["galpha"], pad_d)
    P.gomega = _dptr(arrs["gomega"], pad_d)
    P.E = _dptr(arrs["E"], pad_d)
    P.C = _dptr(arrs["C"], pad_d)
    P.Sth = _dptr(arrs["Sth"], pad_d)
    P.Sc = _dptr(arrs["Sc"], pad_d)
    P.lp = _dptr(arrs["lp"], pad_d)
    P.ntil, P.Dc, P.Kc, P.Kn, P.rho0 = pb.n_tilde, pb.D_c, pb.K_c, pb.K_n, pb.rho_0
    P.Kw, P.Ka, P.h, P.nmax = pb.K_w, pb.K_a, pb.h, pb.n_max

    banded = check_banded(&P)
    native = banded or check_gs(&P)
    cdef double* block = <double*> malloc((10 * size + LDAB * size) * sizeof(double))
    cdef int* ipiv = <int*> malloc(size * sizeof(int))
    if block == NULL or ipiv == NULL:
        free(block)
        free(ipiv)
        raise MemoryError()
    W.B = block
    W.dB = block + size
    W.R = block + 2 * size
    W.npor = block + 3 * size
    W.F = block + 4 * size
    W.scale = block + 5 * size
    W.theta_old = block + 6 * size
    W.c_old = block + 7 * size
    W.n_old = block + 8 * size
    W.tmp = block + 9 * size
    W.ab = block + 10 * size
    W.ipiv = ipiv
    cdef double* rhs_buf = <double*> malloc(size * sizeof(double))
    if rhs_buf == NULL:
        free(block)
        free(ipiv)
        raise MemoryError()
    W.rhs = rhs_buf
    try:
        for s in range(nsteps):
            memcpy(W.theta_old, &th[0], size * sizeof(double))
            memcpy(W.c_old, &ca[0], size * sizeof(double))
            memcpy(W.n_old, &nn[0], size * sizeof(double))
            its = -1
            if native:
                with nogil:
                    its = native_step(&P, &W, &th[0], &ca[0], &nn[0], dt, tol, max_iter, banded, &res)
            if its < 0:
                memcpy(&th[0], W.theta_old, size * sizeof(double))
                memcpy(&ca[0], W.c_old, size * sizeof(double))
                memcpy(&nn[0], W.n_old, size * sizeof(double))
                old = (theta.copy(), c.copy(), n.copy())
                its, res, ok = _core_py.step(pb, theta, c, n, old[0], old[1], old[2], dt, tol, max_iter)
                if not ok:
                    theta[:], c[:], n[:] = old
                    stats[0] += its
                    stats[1] = res
                    return s, FAILED
            stats[0] += its
            stats[1] = res
            if its > stats[2]:
                stats[2] = its
            moved = 0
            for q in range(P.nint):
                k = P.internal[q]
                if nn[k] >= P.nmax:
                    moved = 1
                    break
            if moved:
                return s + 1, MOVED
        return nsteps, OK
    finally:
        free(block)
        free(ipiv)
        free(rhs_buf)
