# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Mirrors ``_kernels_py`` function for function."""

import numpy as np

from libc.math cimport fabs

BACKEND = "cython"


cdef Py_ssize_t _solve_bd(Py_ssize_t n, const double* sub, const double* diag, const double* sup,
                          const double* W, const double* rhs, double* x,
                          double* cp, double* dp, double* Wp) noexcept nogil:
    """Tridiagonal plus dense last four columns (``W`` is n x 4, row-major).

    Returns 0 on success, ``i + 1`` for a zero pivot in band row ``i`` and
    ``n + 1`` for a singular trailing block.
    """
    cdef Py_ssize_t k = n - 4
    cdef Py_ssize_t i, c, r, p, best
    cdef double s, denom, inv, tmp, f
    cdef double blk[4][4]
    cdef double bz[4]
    cdef double z[4]
    cdef double wrow[4]

    for i in range(k):
        for c in range(4):
            wrow[c] = W[4 * i + c]
        if i == k - 1:
            wrow[0] += sup[i]
        if i > 0:
            s = sub[i]
            denom = diag[i] - s * cp[i - 1]
        else:
            s = 0.0
            denom = diag[i]
        if denom == 0.0:
            return i + 1
        inv = 1.0 / denom
        cp[i] = sup[i] * inv if i < k - 1 else 0.0
        if i > 0:
            dp[i] = (rhs[i] - s * dp[i - 1]) * inv
            for c in range(4):
                Wp[4 * i + c] = (wrow[c] - s * Wp[4 * (i - 1) + c]) * inv
        else:
            dp[i] = rhs[i] * inv
            for c in range(4):
                Wp[c] = wrow[c] * inv

    for r in range(4):
        i = k + r
        for c in range(4):
            blk[r][c] = W[4 * i + c]
        bz[r] = rhs[i]
        blk[r][r] += diag[i]
        if r < 3:
            blk[r][r + 1] += sup[i]
        if r > 0:
            blk[r][r - 1] += sub[i]
        elif k > 0:
            s = sub[i]
            for c in range(4):
                blk[0][c] -= s * Wp[4 * (k - 1) + c]
            bz[0] -= s * dp[k - 1]

    for p in range(4):
        best = p
        for r in range(p + 1, 4):
            if fabs(blk[r][p]) > fabs(blk[best][p]):
                best = r
        if blk[best][p] == 0.0:
            return n + 1
        if best != p:
            for c in range(4):
                tmp = blk[p][c]
                blk[p][c] = blk[best][c]
                blk[best][c] = tmp
            tmp = bz[p]
            bz[p] = bz[best]
            bz[best] = tmp
        for r in range(p + 1, 4):
            f = blk[r][p] / blk[p][p]
            for c in range(p, 4):
                blk[r][c] -= f * blk[p][c]
            bz[r] -= f * bz[p]
    for p in range(3, -1, -1):
        tmp = bz[p]
        for c in range(p + 1, 4):
            tmp -= blk[p][c] * z[c]
        z[p] = tmp / blk[p][p]

    for r in range(4):
        x[k + r] = z[r]
    for i in range(k - 1, -1, -1):
        tmp = dp[i] - Wp[4 * i] * z[0] - Wp[4 * i + 1] * z[1] - Wp[4 * i + 2] * z[2] - Wp[4 * i + 3] * z[3]
        if i < k - 1:
            tmp -= cp[i] * x[i + 1]
        x[i] = tmp
    return 0


def solve_banded_dense(const double[::1] sub, const double[::1] diag, const double[::1] sup,
                       const double[:, ::1] dense, const double[::1] rhs):
    cdef Py_ssize_t n = diag.shape[0]
    cdef double[::1] x = np.empty(n)
    cdef double[::1] cp = np.empty(n)
    cdef double[::1] dp = np.empty(n)
    cdef double[::1] Wp = np.empty(4 * n)
    cdef Py_ssize_t code
    with nogil:
        code = _solve_bd(n, &sub[0], &diag[0], &sup[0], &dense[0, 0], &rhs[0], &x[0], &cp[0], &dp[0], &Wp[0])
    return np.asarray(x), int(code)


def forward_layer_march(const double[::1] K, const double[::1] mu, const double[:, ::1] bco,
                        const double[:, ::1] cco, const double[::1] tscale, const double[:, ::1] F, const double[::1] psi,
                        int use_phi, const double[::1] phi_w, const double[::1] dts,
                        const double[::1] thetas, double dk, double[:, ::1] U):
    """theta-march one barrier layer; ``U[0, :n]`` holds the initial values.

    ``phi_w`` are the weights of the boundary third difference on the last
    four nodes, before division by ``dk^3``. ``bco`` and ``cco`` rows are
    multiplied by ``tscale[s]`` at step ``s``. Returns 0 or ``-(step + 1)`` for
    the first step whose solve broke down.
    """
    cdef Py_ssize_t n = K.shape[0]
    cdef Py_ssize_t nt = mu.shape[0]
    cdef Py_ssize_t bs = 1 if bco.shape[0] > 1 else 0
    cdef Py_ssize_t cs = 1 if cco.shape[0] > 1 else 0
    cdef double[::1] sub = np.zeros(n)
    cdef double[::1] diag = np.zeros(n)
    cdef double[::1] sup = np.zeros(n)
    cdef double[::1] W = np.zeros(4 * n)
    cdef double[::1] rhs = np.zeros(n)
    cdef double[::1] x = np.zeros(n)
    cdef double[::1] cp = np.zeros(n)
    cdef double[::1] dp = np.zeros(n)
    cdef double[::1] Wp = np.zeros(4 * n)
    cdef double inv1 = 1.0 / dk, half1 = 0.5 / dk, inv2 = 1.0 / (dk * dk), inv3 = 1.0 / (dk * dk * dk)
    cdef Py_ssize_t s, i, tb, tc
    cdef double dt, th, ex, im, a, b, c, lu, phi_old, fo, fn_
    cdef double PHI0 = phi_w[0], PHI1 = phi_w[1], PHI2 = phi_w[2], PHI3 = phi_w[3]
    cdef Py_ssize_t code, status = 0
    with nogil:
        for s in range(nt - 1):
            dt = dts[s]
            th = thetas[s]
            ex = (1.0 - th) * dt
            im = th * dt
            tb = s * bs
            tc = s * cs
            phi_old = (PHI0 * U[s, n - 4] + PHI1 * U[s, n - 3] + PHI2 * U[s, n - 2] + PHI3 * U[s, n - 1]) * inv3
            for i in range(n - 1):
                a = mu[s] * K[i]
                c = cco[tc, i] * tscale[s]
                if i == 0:
                    lu = a * (U[s, 1] - U[s, 0]) * inv1
                else:
                    b = bco[tb, i] * tscale[s]
                    lu = a * (U[s, i + 1] - U[s, i - 1]) * half1 + b * (U[s, i + 1] - 2.0 * U[s, i] + U[s, i - 1]) * inv2
                if use_phi:
                    lu = lu + c * phi_old
                    fo = F[s, i]
                else:
                    fo = F[s, i] - c * psi[s]
                rhs[i] = U[s, i] - ex * lu + ex * fo
            tb = (s + 1) * bs
            tc = (s + 1) * cs
            for i in range(n - 1):
                a = mu[s + 1] * K[i]
                c = cco[tc, i] * tscale[s + 1]
                if i == 0:
                    sub[i] = 0.0
                    diag[i] = 1.0 - im * a * inv1
                    sup[i] = im * a * inv1
                else:
                    b = bco[tb, i] * tscale[s + 1]
                    sub[i] = im * (-a * half1 + b * inv2)
                    diag[i] = 1.0 - 2.0 * im * b * inv2
                    sup[i] = im * (a * half1 + b * inv2)
                if use_phi:
                    W[4 * i] = im * c * PHI0 * inv3
                    W[4 * i + 1] = im * c * PHI1 * inv3
                    W[4 * i + 2] = im * c * PHI2 * inv3
                    W[4 * i + 3] = im * c * PHI3 * inv3
                    fn_ = F[s + 1, i]
                else:
                    fn_ = F[s + 1, i] - c * psi[s + 1]
                rhs[i] = rhs[i] + im * fn_
            sub[n - 1] = 0.0
            diag[n - 1] = 1.0
            sup[n - 1] = 0.0
            W[4 * (n - 1)] = 0.0
            W[4 * (n - 1) + 1] = 0.0
            W[4 * (n - 1) + 2] = 0.0
            W[4 * (n - 1) + 3] = 0.0
            rhs[n - 1] = 0.0
            code = _solve_bd(n, &sub[0], &diag[0], &sup[0], &W[0], &rhs[0], &x[0], &cp[0], &dp[0], &Wp[0])
            if code != 0:
                status = -(s + 1)
                break
            for i in range(n - 1):
                U[s + 1, i] = x[i]
            U[s + 1, n - 1] = 0.0
    return status


def accumulate_source(double[:, ::1] F, const double[:, ::1] U, const double[::1] K,
                      const double[:, ::1] dsig, const double[::1] tscale, double dk):
    """Add one layer's trapezoid term ``-K^2/2 dKK u dsigma2/dB dB`` to ``F``.

    Row ``s`` of ``dsig`` (or its only row) is multiplied by ``tscale[s]``.
    """
    cdef Py_ssize_t n = K.shape[0]
    cdef Py_ssize_t nt = F.shape[0]
    cdef Py_ssize_t ds = 1 if dsig.shape[0] > 1 else 0
    cdef Py_ssize_t s, i
    cdef double w = -0.5 / dk, ws
    with nogil:
        for s in range(nt):
            ws = w * tscale[s]
            for i in range(1, n - 1):
                F[s, i] += ws * K[i] * K[i] * (U[s, i + 1] - 2.0 * U[s, i] + U[s, i - 1]) * dsig[s * ds, i]
    return 0


def backward_layer_march(const double[::1] x, const double[::1] mu, const double[::1] rr,
                         const double[:, ::1] sig2, const double[::1] dts, const double[::1] thetas,
                         double[:, ::1] V, const double[:, ::1] G, double[:, :, ::1] top):
    """Backward theta-march of one running-maximum layer for a batch of payoffs.

    ``V`` is (n, nk) holding terminal values and receives the t=0 values.
    ``G`` (nt, nk) is the Dirichlet series at the top node; ``top`` (nt, 2, nk)
    receives the series at the two nodes below it. Time runs in
    time-to-maturity, so index 0 is maturity.
    """
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t nk = V.shape[1]
    cdef Py_ssize_t nt = dts.shape[0] + 1
    cdef Py_ssize_t ss = 1 if sig2.shape[0] > 1 else 0
    cdef double[::1] al = np.zeros(n), be = np.zeros(n), ga = np.zeros(n)
    cdef double[::1] al2 = np.zeros(n), be2 = np.zeros(n), ga2 = np.zeros(n)
    cdef double[::1] ls = np.zeros(n), ld = np.zeros(n), lu = np.zeros(n)
    cdef double[::1] cp = np.zeros(n), inv = np.zeros(n), msub = np.zeros(n)
    cdef double[:, ::1] R = np.zeros((n, nk))
    cdef Py_ssize_t s, j, k, ts
    cdef double hm, hp, dt, th, ex, im, drift, diff, md, den
    cdef Py_ssize_t status = 0
    for j in range(1, n - 1):
        hm = x[j] - x[j - 1]
        hp = x[j + 1] - x[j]
        al[j] = -hp / (hm * (hm + hp))
        be[j] = (hp - hm) / (hm * hp)
        ga[j] = hm / (hp * (hm + hp))
        al2[j] = 2.0 / (hm * (hm + hp))
        be2[j] = -2.0 / (hm * hp)
        ga2[j] = 2.0 / (hp * (hm + hp))
    with nogil:
        for k in range(nk):
            V[0, k] = 0.0
            V[n - 1, k] = G[0, k]
            top[0, 0, k] = V[n - 2, k]
            top[0, 1, k] = V[n - 3, k]
        for s in range(nt - 1):
            dt = dts[s]
            th = thetas[s]
            ex = (1.0 - th) * dt
            im = th * dt
            ts = s * ss
            for j in range(1, n - 1):
                drift = mu[s] * x[j]
                diff = 0.5 * sig2[ts, j] * x[j] * x[j]
                ls[j] = -(drift * al[j] + diff * al2[j])
                ld[j] = -(drift * be[j] + diff * be2[j]) + rr[s]
                lu[j] = -(drift * ga[j] + diff * ga2[j])
            for j in range(1, n - 1):
                for k in range(nk):
                    R[j, k] = V[j, k] - ex * (ls[j] * V[j - 1, k] + ld[j] * V[j, k] + lu[j] * V[j + 1, k])
            ts = (s + 1) * ss
            for j in range(1, n - 1):
                drift = mu[s + 1] * x[j]
                diff = 0.5 * sig2[ts, j] * x[j] * x[j]
                ls[j] = -im * (drift * al[j] + diff * al2[j])
                ld[j] = 1.0 + im * (-(drift * be[j] + diff * be2[j]) + rr[s + 1])
                lu[j] = -im * (drift * ga[j] + diff * ga2[j])
            for k in range(nk):
                R[n - 2, k] -= lu[n - 2] * G[s + 1, k]
            for j in range(1, n - 1):
                if j == 1:
                    den = ld[j]
                else:
                    den = ld[j] - ls[j] * cp[j - 1]
                if den == 0.0:
                    status = -(s + 1)
                    break
                inv[j] = 1.0 / den
                cp[j] = lu[j] * inv[j]
            if status != 0:
                break
            for j in range(1, n - 1):
                if j == 1:
                    for k in range(nk):
                        R[j, k] = R[j, k] * inv[j]
                else:
                    md = ls[j]
                    for k in range(nk):
                        R[j, k] = (R[j, k] - md * R[j - 1, k]) * inv[j]
            for k in range(nk):
                V[n - 1, k] = G[s + 1, k]
                V[n - 2, k] = R[n - 2, k]
            for j in range(n - 3, 0, -1):
                md = cp[j]
                for k in range(nk):
                    V[j, k] = R[j, k] - md * V[j + 1, k]
            for k in range(nk):
                top[s + 1, 0, k] = V[n - 2, k]
                top[s + 1, 1, k] = V[n - 3, k]
    return status


def density_layer_march(double dx, double y, const double[::1] mu, const double[:, ::1] sx2,
                        const double[::1] dts, const double[::1] thetas, double[:, ::1] P,
                        const double[::1] g1, const double[::1] g2, double e0, double e1, double e2,
                        int corner, double[::1] gout, double clip_floor):
    """Implicit march of the joint density on one running-maximum level.

    Nodes are ``x_i = i dx`` up to the diagonal ``x = y``. ``sx2`` holds
    ``sigma^2 x^2``. The diagonal row enforces the transport relation
    ``e0 g + e1 g1 + e2 g2 = 2 mu y phi - d/dx(sigma^2 x^2 phi)`` with
    ``g = sigma^2 y^2 phi(y, y)``; at the corner level it is ``phi = 0``.
    Negative values are clipped to zero; returns the number of clipped
    values below ``clip_floor`` or ``-(step + 1)`` on breakdown.
    """
    cdef Py_ssize_t n = P.shape[1]
    cdef Py_ssize_t nt = dts.shape[0] + 1
    cdef Py_ssize_t ss = 1 if sx2.shape[0] > 1 else 0
    cdef double[::1] sub = np.zeros(n), diag = np.zeros(n), sup = np.zeros(n)
    cdef double[::1] W = np.zeros(4 * n)
    cdef double[::1] rhs = np.zeros(n), xs = np.zeros(n)
    cdef double[::1] cp = np.zeros(n), dp = np.zeros(n), Wp = np.zeros(4 * n)
    cdef Py_ssize_t s, i, ts, clipped = 0
    cdef double dt, th, ex, im, m_, half = 0.5 / dx, inv2 = 1.0 / (dx * dx), xm, xp
    cdef double lsub, ldiag, lsup
    cdef Py_ssize_t code, status = 0
    with nogil:
        ts = 0
        gout[0] = sx2[0, n - 1] * P[0, n - 1]
        for s in range(nt - 1):
            dt = dts[s]
            th = thetas[s]
            ex = (1.0 - th) * dt
            im = th * dt
            ts = s * ss
            m_ = mu[s]
            rhs[0] = 0.0
            for i in range(1, n - 1):
                xm = (i - 1) * dx
                xp = (i + 1) * dx
                lsub = -m_ * xm * half - 0.5 * sx2[ts, i - 1] * inv2
                ldiag = sx2[ts, i] * inv2
                lsup = m_ * xp * half - 0.5 * sx2[ts, i + 1] * inv2
                rhs[i] = P[s, i] - ex * (lsub * P[s, i - 1] + ldiag * P[s, i] + lsup * P[s, i + 1])
            ts = (s + 1) * ss
            m_ = mu[s + 1]
            sub[0] = 0.0
            diag[0] = 1.0
            sup[0] = 0.0
            for i in range(4 * n):
                W[i] = 0.0
            for i in range(1, n - 1):
                xm = (i - 1) * dx
                xp = (i + 1) * dx
                sub[i] = im * (-m_ * xm * half - 0.5 * sx2[ts, i - 1] * inv2)
                diag[i] = 1.0 + im * sx2[ts, i] * inv2
                sup[i] = im * (m_ * xp * half - 0.5 * sx2[ts, i + 1] * inv2)
            sup[n - 1] = 0.0
            if corner:
                sub[n - 1] = 0.0
                diag[n - 1] = 1.0
                rhs[n - 1] = 0.0
            else:
                sub[n - 1] = -2.0 * sx2[ts, n - 2] / dx
                diag[n - 1] = e0 * sx2[ts, n - 1] - 2.0 * m_ * y + 1.5 * sx2[ts, n - 1] / dx
                W[4 * (n - 1) + 1] = 0.5 * sx2[ts, n - 3] / dx
                rhs[n - 1] = -e1 * g1[s + 1] - e2 * g2[s + 1]
            code = _solve_bd(n, &sub[0], &diag[0], &sup[0], &W[0], &rhs[0], &xs[0], &cp[0], &dp[0], &Wp[0])
            if code != 0:
                status = -(s + 1)
                break
            for i in range(n):
                if xs[i] < 0.0:
                    if xs[i] < clip_floor:
                        clipped += 1
                    xs[i] = 0.0
                P[s + 1, i] = xs[i]
            P[s + 1, 0] = 0.0
            gout[s + 1] = sx2[ts, n - 1] * P[s + 1, n - 1]
    return status if status != 0 else clipped
