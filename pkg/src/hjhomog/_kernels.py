"""Numba inner loops for the grid solvers.

Shared conventions:
  * H(q, y) = coef(y) * |q|^gamma - off(y), optionally truncated from below
    by tc0 * |q|^gamma - tk (tk = +inf disables truncation).
  * The flux argument q = p + central difference is clamped componentwise to
    +-cap_i(y); the per-axis dissipation alpha_i(y) dominates |dH/dq_i| on
    the clamped box, which keeps every update monotone even far from the
    fixed point.  At the fixed point the clamp is inactive (converged
    gradients sit below the caps), so the discrete equation is the plain
    Lax-Friedrichs one.
  * Jacobi-style kernels run an even number of steps per call so the result
    lands back in the input buffer.
"""
import numba as nb
import numpy as np

_SIG_CACHE = dict(cache=True, fastmath=True, nogil=True)


@nb.njit(**_SIG_CACHE)
def _hval(qsq, coef, off, gamma, tc0, tk):
    if gamma == 2.0:
        qp = qsq
    else:
        qp = qsq ** (0.5 * gamma)
    h = coef * qp - off
    if tk != np.inf:
        t = tc0 * qp - tk
        if t > h:
            h = t
    return h


@nb.njit(**_SIG_CACHE)
def _clamp(x, c):
    if x > c:
        return c
    if x < -c:
        return -c
    return x


# ---------------------------------------------------------------------------
# Resolvent problem, pseudo-time relaxation (Jacobi, double buffered)
# ---------------------------------------------------------------------------

@nb.njit(**_SIG_CACHE)
def _delta_step_2d(v, out, coef, off, gamma, tc0, tk, p0, p1, delta, sig2,
                   h, alpha0, alpha1, cap0, cap1, dt):
    n0, n1 = v.shape
    maxres = 0.0
    sumres = 0.0
    for i in range(n0):
        im = i - 1 if i > 0 else n0 - 1
        ip = i + 1 if i < n0 - 1 else 0
        for j in range(n1):
            jm = j - 1 if j > 0 else n1 - 1
            jp = j + 1 if j < n1 - 1 else 0
            vc = v[i, j]
            v0m = v[im, j]
            v0p = v[ip, j]
            v1m = v[i, jm]
            v1p = v[i, jp]
            q0 = _clamp((v0p - v0m) / (2.0 * h) + p0, cap0[i, j])
            q1 = _clamp((v1p - v1m) / (2.0 * h) + p1, cap1[i, j])
            hv = _hval(q0 * q0 + q1 * q1, coef[i, j], off[i, j], gamma, tc0, tk)
            diss = alpha0[i, j] * (v0p + v0m - 2.0 * vc) / (2.0 * h) \
                 + alpha1[i, j] * (v1p + v1m - 2.0 * vc) / (2.0 * h)
            lap = (v0p + v0m + v1p + v1m - 4.0 * vc) / (h * h)
            r = delta * vc - sig2 * lap + hv - diss
            out[i, j] = vc - dt * r
            ar = abs(r)
            if ar > maxres:
                maxres = ar
            sumres += r
    return maxres, sumres / (n0 * n1)


@nb.njit(**_SIG_CACHE)
def delta_chunk_2d(v, buf, coef, off, gamma, tc0, tk, p0, p1, delta, sig2,
                   h, alpha0, alpha1, cap0, cap1, dt, npairs, mean_shift):
    maxres = 0.0
    for _ in range(npairs):
        maxres, meanres = _delta_step_2d(v, buf, coef, off, gamma, tc0, tk,
                                         p0, p1, delta, sig2, h, alpha0,
                                         alpha1, cap0, cap1, dt)
        if mean_shift and delta > 0.0:
            s = -meanres * (1.0 - dt * delta) / delta
            for i in range(buf.shape[0]):
                for j in range(buf.shape[1]):
                    buf[i, j] += s
        maxres, meanres = _delta_step_2d(buf, v, coef, off, gamma, tc0, tk,
                                         p0, p1, delta, sig2, h, alpha0,
                                         alpha1, cap0, cap1, dt)
        if mean_shift and delta > 0.0:
            s = -meanres * (1.0 - dt * delta) / delta
            for i in range(v.shape[0]):
                for j in range(v.shape[1]):
                    v[i, j] += s
    return maxres


@nb.njit(**_SIG_CACHE)
def _delta_step_1d(v, out, coef, off, gamma, tc0, tk, p0, delta, sig2,
                   h, alpha, qcap, dt):
    n = v.shape[0]
    maxres = 0.0
    sumres = 0.0
    for i in range(n):
        im = i - 1 if i > 0 else n - 1
        ip = i + 1 if i < n - 1 else 0
        vc = v[i]
        vm = v[im]
        vp = v[ip]
        q0 = _clamp((vp - vm) / (2.0 * h) + p0, qcap[i])
        hv = _hval(q0 * q0, coef[i], off[i], gamma, tc0, tk)
        diss = alpha[i] * (vp + vm - 2.0 * vc) / (2.0 * h)
        lap = (vp + vm - 2.0 * vc) / (h * h)
        r = delta * vc - sig2 * lap + hv - diss
        out[i] = vc - dt * r
        ar = abs(r)
        if ar > maxres:
            maxres = ar
        sumres += r
    return maxres, sumres / n


@nb.njit(**_SIG_CACHE)
def delta_chunk_1d(v, buf, coef, off, gamma, tc0, tk, p0, delta, sig2,
                   h, alpha, qcap, dt, npairs, mean_shift):
    maxres = 0.0
    for _ in range(npairs):
        maxres, meanres = _delta_step_1d(v, buf, coef, off, gamma, tc0, tk,
                                         p0, delta, sig2, h, alpha, qcap, dt)
        if mean_shift and delta > 0.0:
            s = -meanres * (1.0 - dt * delta) / delta
            for i in range(buf.shape[0]):
                buf[i] += s
        maxres, meanres = _delta_step_1d(buf, v, coef, off, gamma, tc0, tk,
                                         p0, delta, sig2, h, alpha, qcap, dt)
        if mean_shift and delta > 0.0:
            s = -meanres * (1.0 - dt * delta) / delta
            for i in range(v.shape[0]):
                v[i] += s
    return maxres


# ---------------------------------------------------------------------------
# Metric problem, Gauss-Seidel fast sweeping on a padded array with
# linearly extrapolated outflow ghosts
# ---------------------------------------------------------------------------

@nb.njit(**_SIG_CACHE)
def _refresh_ghosts_2d(vp):
    n0 = vp.shape[0] - 2
    n1 = vp.shape[1] - 2
    for j in range(1, n1 + 1):
        vp[0, j] = 2.0 * vp[1, j] - vp[2, j]
        vp[n0 + 1, j] = 2.0 * vp[n0, j] - vp[n0 - 1, j]
    for i in range(1, n0 + 1):
        vp[i, 0] = 2.0 * vp[i, 1] - vp[i, 2]
        vp[i, n1 + 1] = 2.0 * vp[i, n1] - vp[i, n1 - 1]


@nb.njit(**_SIG_CACHE)
def sweep_round_2d(vp, coef, off, gamma, tc0, tk, p0, p1, mu, delta, sig2,
                   h, alpha0, alpha1, cap0, cap1, src, pinned, omega):
    n0 = vp.shape[0] - 2
    n1 = vp.shape[1] - 2
    maxchg = 0.0
    for ordering in range(4):
        _refresh_ghosts_2d(vp)
        if ordering == 0:
            i0, i1, istep = 1, n0 + 1, 1
            j0, j1, jstep = 1, n1 + 1, 1
        elif ordering == 1:
            i0, i1, istep = n0, 0, -1
            j0, j1, jstep = 1, n1 + 1, 1
        elif ordering == 2:
            i0, i1, istep = 1, n0 + 1, 1
            j0, j1, jstep = n1, 0, -1
        else:
            i0, i1, istep = n0, 0, -1
            j0, j1, jstep = n1, 0, -1
        for i in range(i0, i1, istep):
            for j in range(j0, j1, jstep):
                if src[i - 1, j - 1]:
                    vp[i, j] = pinned[i - 1, j - 1]
                    continue
                v0m = vp[i - 1, j]
                v0p = vp[i + 1, j]
                v1m = vp[i, j - 1]
                v1p = vp[i, j + 1]
                q0 = _clamp((v0p - v0m) / (2.0 * h) + p0, cap0[i - 1, j - 1])
                q1 = _clamp((v1p - v1m) / (2.0 * h) + p1, cap1[i - 1, j - 1])
                hv = _hval(q0 * q0 + q1 * q1, coef[i - 1, j - 1],
                           off[i - 1, j - 1], gamma, tc0, tk)
                a0 = alpha0[i - 1, j - 1]
                a1 = alpha1[i - 1, j - 1]
                num = mu - hv + a0 * (v0p + v0m) / (2.0 * h) \
                    + a1 * (v1p + v1m) / (2.0 * h) \
                    + sig2 * (v0p + v0m + v1p + v1m) / (h * h)
                den = delta + (a0 + a1) / h + 4.0 * sig2 / (h * h)
                cand = (1.0 - omega) * vp[i, j] + omega * num / den
                chg = abs(cand - vp[i, j])
                if chg > maxchg:
                    maxchg = chg
                vp[i, j] = cand
    return maxchg


@nb.njit(**_SIG_CACHE)
def sweep_round_1d(vp, coef, off, gamma, tc0, tk, p0, mu, delta, sig2,
                   h, alpha, qcap, src, pinned, omega):
    n = vp.shape[0] - 2
    maxchg = 0.0
    for ordering in range(2):
        vp[0] = 2.0 * vp[1] - vp[2]
        vp[n + 1] = 2.0 * vp[n] - vp[n - 1]
        if ordering == 0:
            i0, i1, istep = 1, n + 1, 1
        else:
            i0, i1, istep = n, 0, -1
        for i in range(i0, i1, istep):
            if src[i - 1]:
                vp[i] = pinned[i - 1]
                continue
            vm = vp[i - 1]
            vpp = vp[i + 1]
            q0 = _clamp((vpp - vm) / (2.0 * h) + p0, qcap[i - 1])
            hv = _hval(q0 * q0, coef[i - 1], off[i - 1], gamma, tc0, tk)
            a = alpha[i - 1]
            num = mu - hv + a * (vpp + vm) / (2.0 * h) \
                + sig2 * (vpp + vm) / (h * h)
            den = delta + a / h + 2.0 * sig2 / (h * h)
            cand = (1.0 - omega) * vp[i] + omega * num / den
            chg = abs(cand - vp[i])
            if chg > maxchg:
                maxchg = chg
            vp[i] = cand
    return maxchg


# ---------------------------------------------------------------------------
# Time-dependent problem, forward Euler (periodic)
# ---------------------------------------------------------------------------

@nb.njit(**_SIG_CACHE)
def _time_step_2d(u, out, coef, off, gamma, tc0, tk, eps_diff, h,
                  alpha0, alpha1, cap0, cap1, dt, qmax0, qmax1):
    n0, n1 = u.shape
    maxq = 0.0
    for i in range(n0):
        im = i - 1 if i > 0 else n0 - 1
        ip = i + 1 if i < n0 - 1 else 0
        for j in range(n1):
            jm = j - 1 if j > 0 else n1 - 1
            jp = j + 1 if j < n1 - 1 else 0
            uc = u[i, j]
            u0m = u[im, j]
            u0p = u[ip, j]
            u1m = u[i, jm]
            u1p = u[i, jp]
            q0 = (u0p - u0m) / (2.0 * h)
            q1 = (u1p - u1m) / (2.0 * h)
            aq0 = abs(q0)
            aq1 = abs(q1)
            if aq0 > qmax0[i, j]:
                qmax0[i, j] = aq0
            if aq1 > qmax1[i, j]:
                qmax1[i, j] = aq1
            qsq = q0 * q0 + q1 * q1
            if qsq > maxq:
                maxq = qsq
            q0 = _clamp(q0, cap0[i, j])
            q1 = _clamp(q1, cap1[i, j])
            hv = _hval(q0 * q0 + q1 * q1, coef[i, j], off[i, j], gamma, tc0, tk)
            diss = alpha0[i, j] * (u0p + u0m - 2.0 * uc) / (2.0 * h) \
                 + alpha1[i, j] * (u1p + u1m - 2.0 * uc) / (2.0 * h)
            lap = (u0p + u0m + u1p + u1m - 4.0 * uc) / (h * h)
            out[i, j] = uc - dt * (hv - diss - eps_diff * lap)
    return maxq


@nb.njit(**_SIG_CACHE)
def time_chunk_2d(u, buf, coef, off, gamma, tc0, tk, eps_diff, h,
                  alpha0, alpha1, cap0, cap1, dt, npairs, qmax0, qmax1):
    maxq = 0.0
    for _ in range(npairs):
        m1 = _time_step_2d(u, buf, coef, off, gamma, tc0, tk, eps_diff, h,
                           alpha0, alpha1, cap0, cap1, dt, qmax0, qmax1)
        m2 = _time_step_2d(buf, u, coef, off, gamma, tc0, tk, eps_diff, h,
                           alpha0, alpha1, cap0, cap1, dt, qmax0, qmax1)
        if m1 > maxq:
            maxq = m1
        if m2 > maxq:
            maxq = m2
    return maxq


@nb.njit(**_SIG_CACHE)
def _time_step_1d(u, out, coef, off, gamma, tc0, tk, eps_diff, h, alpha,
                  qcap, dt, qmax):
    n = u.shape[0]
    maxq = 0.0
    for i in range(n):
        im = i - 1 if i > 0 else n - 1
        ip = i + 1 if i < n - 1 else 0
        uc = u[i]
        um = u[im]
        up = u[ip]
        q0 = (up - um) / (2.0 * h)
        aq0 = abs(q0)
        if aq0 > qmax[i]:
            qmax[i] = aq0
        qsq = q0 * q0
        if qsq > maxq:
            maxq = qsq
        q0 = _clamp(q0, qcap[i])
        hv = _hval(q0 * q0, coef[i], off[i], gamma, tc0, tk)
        diss = alpha[i] * (up + um - 2.0 * uc) / (2.0 * h)
        lap = (up + um - 2.0 * uc) / (h * h)
        out[i] = uc - dt * (hv - diss - eps_diff * lap)
    return maxq


@nb.njit(**_SIG_CACHE)
def time_chunk_1d(u, buf, coef, off, gamma, tc0, tk, eps_diff, h, alpha,
                  qcap, dt, npairs, qmax):
    maxq = 0.0
    for _ in range(npairs):
        m1 = _time_step_1d(u, buf, coef, off, gamma, tc0, tk, eps_diff, h,
                           alpha, qcap, dt, qmax)
        m2 = _time_step_1d(buf, u, coef, off, gamma, tc0, tk, eps_diff, h,
                           alpha, qcap, dt, qmax)
        if m1 > maxq:
            maxq = m1
        if m2 > maxq:
            maxq = m2
    return maxq
