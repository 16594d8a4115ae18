"""Pure numpy/scipy implementation of the inner loops.

Function for function this mirrors the compiled ``_kernels`` module and is
used when the extension is unavailable or ``FWDBARRIER_PURE_PYTHON`` is set.
Same argument conventions, same return codes.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded

BACKEND = "python"

def _solve_bd(sub, diag, sup, dense, rhs):
    """Block elimination of a tridiagonal matrix plus four dense trailing columns.

    Returns ``(x, code)`` with the same codes as the compiled solver.
    """
    n = diag.shape[0]
    k = n - 4
    a12 = dense[:k].copy()
    a12[k - 1, 0] += sup[k - 1]
    ab = np.zeros((3, k))
    ab[0, 1:] = sup[: k - 1]
    ab[1] = diag[:k]
    ab[2, :-1] = sub[1:k]
    try:
        with np.errstate(all="raise"):
            sol = solve_banded((1, 1), ab, np.column_stack((rhs[:k], a12)), check_finite=False)
    except (np.linalg.LinAlgError, FloatingPointError):
        return np.zeros(n), 1
    y, Y = sol[:, 0], sol[:, 1:]
    a22 = dense[k:].copy()
    idx = np.arange(4)
    a22[idx, idx] += diag[k:]
    a22[idx[:-1], idx[1:]] += sup[k:n - 1]
    a22[idx[1:], idx[:-1]] += sub[k + 1:]
    b2 = rhs[k:].copy()
    a22[0] -= sub[k] * Y[k - 1]
    b2[0] -= sub[k] * y[k - 1]
    try:
        z = np.linalg.solve(a22, b2)
    except np.linalg.LinAlgError:
        return np.zeros(n), n + 1
    if not np.all(np.isfinite(z)):
        return np.zeros(n), n + 1
    x = np.empty(n)
    x[k:] = z
    x[:k] = y - Y @ z
    return x, 0


def solve_banded_dense(sub, diag, sup, dense, rhs):
    return _solve_bd(np.asarray(sub, float), np.asarray(diag, float), np.asarray(sup, float),
                     np.asarray(dense, float), np.asarray(rhs, float))


def _row(arr, s):
    return arr[s] if arr.shape[0] > 1 else arr[0]


def forward_layer_march(K, mu, bco, cco, tscale, F, psi, use_phi, phi_w, dts, thetas, dk, U):
    n = K.shape[0]
    nt = mu.shape[0]
    inv1, half1, inv2, inv3 = 1.0 / dk, 0.5 / dk, 1.0 / dk ** 2, 1.0 / dk ** 3
    Ki = K[: n - 1]
    phi = np.asarray(phi_w, dtype=float) * inv3
    for s in range(nt - 1):
        dt, th = dts[s], thetas[s]
        ex, im = (1.0 - th) * dt, th * dt
        u = U[s, :n]
        a = mu[s] * Ki
        b = _row(bco, s)[: n - 1] * tscale[s]
        c = _row(cco, s)[: n - 1] * tscale[s]
        lu = np.empty(n - 1)
        lu[0] = a[0] * (u[1] - u[0]) * inv1
        lu[1:] = a[1:] * (u[2:n] - u[: n - 2]) * half1 + b[1:] * (u[2:n] - 2.0 * u[1: n - 1] + u[: n - 2]) * inv2
        if use_phi:
            lu += c * (phi @ u[n - 4:])
            fo = F[s, : n - 1]
        else:
            fo = F[s, : n - 1] - c * psi[s]
        rhs = np.zeros(n)
        rhs[: n - 1] = u[: n - 1] - ex * lu + ex * fo

        a = mu[s + 1] * Ki
        b = _row(bco, s + 1)[: n - 1] * tscale[s + 1]
        c = _row(cco, s + 1)[: n - 1] * tscale[s + 1]
        sub = np.zeros(n)
        diag = np.ones(n)
        sup = np.zeros(n)
        diag[0] = 1.0 - im * a[0] * inv1
        sup[0] = im * a[0] * inv1
        sub[1: n - 1] = im * (-a[1:] * half1 + b[1:] * inv2)
        diag[1: n - 1] = 1.0 - 2.0 * im * b[1:] * inv2
        sup[1: n - 1] = im * (a[1:] * half1 + b[1:] * inv2)
        W = np.zeros((n, 4))
        if use_phi:
            W[: n - 1] = im * c[:, None] * phi[None, :]
            fn = F[s + 1, : n - 1]
        else:
            fn = F[s + 1, : n - 1] - c * psi[s + 1]
        rhs[: n - 1] += im * fn
        x, code = _solve_bd(sub, diag, sup, W, rhs)
        if code != 0:
            return -(s + 1)
        U[s + 1, : n - 1] = x[: n - 1]
        U[s + 1, n - 1] = 0.0
    return 0


def accumulate_source(F, U, K, dsig, tscale, dk):
    n = K.shape[0]
    w = -0.5 / dk
    K2 = K[1: n - 1] ** 2
    d2 = U[:, 2:n] - 2.0 * U[:, 1: n - 1] + U[:, : n - 2]
    ds = dsig[:, 1: n - 1] * np.asarray(tscale)[:, None]
    F[:, 1: n - 1] += w * K2[None, :] * d2 * ds
    return 0


def backward_layer_march(x, mu, rr, sig2, dts, thetas, V, G, top):
    n = x.shape[0]
    nt = dts.shape[0] + 1
    hm = x[1: n - 1] - x[: n - 2]
    hp = x[2:] - x[1: n - 1]
    al = -hp / (hm * (hm + hp))
    be = (hp - hm) / (hm * hp)
    ga = hm / (hp * (hm + hp))
    al2 = 2.0 / (hm * (hm + hp))
    be2 = -2.0 / (hm * hp)
    ga2 = 2.0 / (hp * (hm + hp))
    xi = x[1: n - 1]
    V[0] = 0.0
    V[n - 1] = G[0]
    top[0, 0] = V[n - 2]
    top[0, 1] = V[n - 3]
    for s in range(nt - 1):
        dt, th = dts[s], thetas[s]
        ex, im = (1.0 - th) * dt, th * dt
        drift = mu[s] * xi
        diff = 0.5 * _row(sig2, s)[1: n - 1] * xi * xi
        ls = -(drift * al + diff * al2)
        ld = -(drift * be + diff * be2) + rr[s]
        lu = -(drift * ga + diff * ga2)
        R = V[1: n - 1] - ex * (ls[:, None] * V[: n - 2] + ld[:, None] * V[1: n - 1] + lu[:, None] * V[2:])
        drift = mu[s + 1] * xi
        diff = 0.5 * _row(sig2, s + 1)[1: n - 1] * xi * xi
        ls = -im * (drift * al + diff * al2)
        ld = 1.0 + im * (-(drift * be + diff * be2) + rr[s + 1])
        lu = -im * (drift * ga + diff * ga2)
        R[-1] -= lu[-1] * G[s + 1]
        ab = np.zeros((3, n - 2))
        ab[0, 1:] = lu[:-1]
        ab[1] = ld
        ab[2, :-1] = ls[1:]
        try:
            V[1: n - 1] = solve_banded((1, 1), ab, R, check_finite=False)
        except np.linalg.LinAlgError:
            return -(s + 1)
        V[n - 1] = G[s + 1]
        top[s + 1, 0] = V[n - 2]
        top[s + 1, 1] = V[n - 3]
    return 0


def density_layer_march(dx, y, mu, sx2, dts, thetas, P, g1, g2, e0, e1, e2, corner, gout, clip_floor):
    n = P.shape[1]
    nt = dts.shape[0] + 1
    xs = np.arange(n) * dx
    half, inv2 = 0.5 / dx, 1.0 / dx ** 2
    clipped = 0
    gout[0] = _row(sx2, 0)[n - 1] * P[0, n - 1]
    for s in range(nt - 1):
        dt, th = dts[s], thetas[s]
        ex, im = (1.0 - th) * dt, th * dt
        sv = _row(sx2, s)
        m_ = mu[s]
        lsub = -m_ * xs[: n - 2] * half - 0.5 * sv[: n - 2] * inv2
        ldiag = sv[1: n - 1] * inv2
        lsup = m_ * xs[2:] * half - 0.5 * sv[2:] * inv2
        p = P[s]
        rhs = np.zeros(n)
        rhs[1: n - 1] = p[1: n - 1] - ex * (lsub * p[: n - 2] + ldiag * p[1: n - 1] + lsup * p[2:])
        sv = _row(sx2, s + 1)
        m_ = mu[s + 1]
        sub = np.zeros(n)
        diag = np.ones(n)
        sup = np.zeros(n)
        W = np.zeros((n, 4))
        sub[1: n - 1] = im * (-m_ * xs[: n - 2] * half - 0.5 * sv[: n - 2] * inv2)
        diag[1: n - 1] = 1.0 + im * sv[1: n - 1] * inv2
        sup[1: n - 1] = im * (m_ * xs[2:] * half - 0.5 * sv[2:] * inv2)
        if not corner:
            sub[n - 1] = -2.0 * sv[n - 2] / dx
            diag[n - 1] = e0 * sv[n - 1] - 2.0 * m_ * y + 1.5 * sv[n - 1] / dx
            W[n - 1, 1] = 0.5 * sv[n - 3] / dx
            rhs[n - 1] = -e1 * g1[s + 1] - e2 * g2[s + 1]
        x, code = _solve_bd(sub, diag, sup, W, rhs)
        if code != 0:
            return -(s + 1)
        neg = x < 0.0
        clipped += int(np.count_nonzero(x < clip_floor))
        x[neg] = 0.0
        x[0] = 0.0
        P[s + 1] = x
        gout[s + 1] = sv[n - 1] * x[n - 1]
    return clipped
