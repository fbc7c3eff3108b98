"""Numba kernels: Dormand-Prince 5(4) integration, PDMP and jump-process loops.

Parameters arrive packed in the order of ``model.PARAM_NAMES``. The ODE
state carries a fourth component, the cumulative switching hazard, which
accrues at rate q_M(x2, x3) only in regime 1.

Every stochastic kernel reseeds the (thread-local) numba generator from its
``seed`` argument, so a replicate's stream depends only on its seed and not
on which worker thread runs it.
"""
import numpy as np
from numba import njit

A, AM, Q1, Q2, Q3, Q1M, Q2M, Q3M, C1, C2, C3, C1M, C2M, C3M, D, DM, ALPHA, BETA = range(18)

OK = 0
STEP_UNDERFLOW = 1
RATE_OVERFLOW = 2
INVALID_STATE = 3
LOCALIZATION_FAILED = 4

SWITCH_TIME_TOL = 1e-10

# Dormand-Prince tableau
C2_, C3_, C4_, C5_ = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = 9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0
A71, A73, A74, A75, A76 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
E1, E3, E4, E5, E6, E7 = (71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0,
                          -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0)
# continuous extension (Hairer & Wanner, dopri5)
D1 = -12715105075.0 / 11282082432.0
D3 = 87487479700.0 / 32700410799.0
D4 = -10690763975.0 / 1880347072.0
D5 = 701980252875.0 / 199316789632.0
D6 = -1453857185.0 / 822651844.0
D7 = 69997945.0 / 29380423.0

NY = 4


@njit(cache=True, nogil=True)
def rhs(P, y, i, out):
    x1, x2, x3 = y[0], y[1], y[2]
    q = P[Q1] + P[Q2] * x2 + P[Q3] * x3
    r = P[C1] / (1.0 + P[C2] * x2 + P[C3] * x3)
    rM = P[C1M] / (1.0 + P[C2M] * x2 + P[C3M] * x3)
    out[0] = P[A] - (P[A] + q) * x1
    out[1] = r * x1 - P[D] * x2
    out[2] = rM * i - P[DM] * x3
    out[3] = (P[Q1M] + P[Q2M] * x2 + P[Q3M] * x3) * i


@njit(cache=True, nogil=True)
def dp_step(P, y, i, h, k1, ynew, k7, rcont, K, tmp, rtol, atol):
    """One Dormand-Prince step from y with FSAL derivative k1.

    Fills ynew, k7 (derivative at ynew) and the 5 x NY dense-output
    coefficients; returns the scaled RMS error estimate.
    """
    for j in range(NY):
        tmp[j] = y[j] + h * A21 * k1[j]
    rhs(P, tmp, i, K[0])
    for j in range(NY):
        tmp[j] = y[j] + h * (A31 * k1[j] + A32 * K[0, j])
    rhs(P, tmp, i, K[1])
    for j in range(NY):
        tmp[j] = y[j] + h * (A41 * k1[j] + A42 * K[0, j] + A43 * K[1, j])
    rhs(P, tmp, i, K[2])
    for j in range(NY):
        tmp[j] = y[j] + h * (A51 * k1[j] + A52 * K[0, j] + A53 * K[1, j] + A54 * K[2, j])
    rhs(P, tmp, i, K[3])
    for j in range(NY):
        tmp[j] = y[j] + h * (A61 * k1[j] + A62 * K[0, j] + A63 * K[1, j] + A64 * K[2, j]
                             + A65 * K[3, j])
    rhs(P, tmp, i, K[4])
    for j in range(NY):
        ynew[j] = y[j] + h * (A71 * k1[j] + A73 * K[1, j] + A74 * K[2, j] + A75 * K[3, j]
                              + A76 * K[4, j])
    rhs(P, ynew, i, k7)
    err = 0.0
    for j in range(NY):
        e = h * (E1 * k1[j] + E3 * K[1, j] + E4 * K[2, j] + E5 * K[3, j] + E6 * K[4, j] + E7 * k7[j])
        sc = atol + rtol * max(abs(y[j]), abs(ynew[j]))
        err += (e / sc) ** 2
        ydiff = ynew[j] - y[j]
        bspl = h * k1[j] - ydiff
        rcont[0, j] = y[j]
        rcont[1, j] = ydiff
        rcont[2, j] = bspl
        rcont[3, j] = ydiff - h * k7[j] - bspl
        rcont[4, j] = h * (D1 * k1[j] + D3 * K[1, j] + D4 * K[2, j] + D5 * K[3, j]
                           + D6 * K[4, j] + D7 * k7[j])
    return np.sqrt(err / NY)


@njit(cache=True, nogil=True)
def dense_eval(rcont, theta, j):
    t1 = 1.0 - theta
    return rcont[0, j] + theta * (rcont[1, j] + t1 * (rcont[2, j] + theta * (rcont[3, j]
                                                                            + t1 * rcont[4, j])))


@njit(cache=True, nogil=True)
def _step_factor(err):
    if err == 0.0:
        return 5.0
    return min(5.0, max(0.2, 0.9 * err ** -0.2))


@njit(cache=True, nogil=True)
def _grow2(arr, n):
    out = np.empty((2 * arr.shape[0],) + arr.shape[1:], dtype=arr.dtype)
    out[:n] = arr[:n]
    return out


@njit(cache=True, nogil=True)
def flow_kernel(P, x0, i, t_end, rtol, atol, record):
    """Integrate dx/dt = g(x, i) on [0, t_end]; optionally keep accepted nodes."""
    y = np.zeros(NY)
    y[:3] = x0
    ynew = np.zeros(NY)
    k1 = np.zeros(NY)
    k7 = np.zeros(NY)
    rcont = np.zeros((5, NY))
    K = np.zeros((5, NY))
    tmp = np.zeros(NY)
    cap = 64 if record else 1
    path_t = np.empty(cap)
    path_x = np.empty((cap, 3))
    n = 0
    if record:
        path_t[0] = 0.0
        path_x[0] = y[:3]
        n = 1
    rhs(P, y, i, k1)
    t = 0.0
    h = min(1e-3, t_end) if t_end > 0 else 0.0
    status = OK
    nsteps = 0
    while t < t_end:
        remaining = t_end - t
        hit = h >= remaining
        h_try = remaining if hit else h
        err = dp_step(P, y, i, h_try, k1, ynew, k7, rcont, K, tmp, rtol, atol)
        fac = _step_factor(err)
        if err <= 1.0:
            t = t_end if hit else t + h_try
            y[:] = ynew
            k1[:] = k7
            nsteps += 1
            if record:
                if n == path_t.shape[0]:
                    path_t = _grow2(path_t, n)
                    path_x = _grow2(path_x, n)
                path_t[n] = t
                path_x[n] = y[:3]
                n += 1
            h = max(h, h_try * fac) if hit else h_try * fac
        else:
            h = h_try * fac
            if h < 1e-14 * max(1.0, t):
                status = STEP_UNDERFLOW
                break
    return y[:3].copy(), status, nsteps, path_t[:n].copy(), path_x[:n].copy()


@njit(cache=True, nogil=True)
def pdmp_kernel(P, x0, i0, T, rtol, atol, out_times, store_dense, seed):
    """Simulate the switching process on [0, T].

    Regime 0 -> 1 after an Exp(a_M) sojourn; regime 1 -> 0 when the
    integrated hazard crosses an Exp(1) threshold, located by bisection on
    the continuous extension and then re-stepped exactly to that time.
    """
    np.random.seed(seed)
    aM = P[AM]
    y = np.zeros(NY)
    y[:3] = x0
    ynew = np.zeros(NY)
    k1 = np.zeros(NY)
    k7 = np.zeros(NY)
    rcont = np.zeros((5, NY))
    K = np.zeros((5, NY))
    tmp = np.zeros(NY)

    n_out = out_times.shape[0]
    out_x = np.zeros((n_out, 3))
    out_i = np.zeros(n_out, dtype=np.int64)
    k_out = 0

    sw_t = np.empty(16)
    sw_r = np.empty(16, dtype=np.int64)
    nsw = 0

    dcap = 256 if store_dense else 1
    d_t = np.empty(dcap)
    d_h = np.empty(dcap)
    d_r = np.empty(dcap, dtype=np.int64)
    d_c = np.empty((dcap, 5, 3))
    nd = 0

    i = i0
    t = 0.0
    inf = np.inf
    if i == 0:
        t_sw = np.random.exponential(1.0 / aM)
        thr = inf
    else:
        t_sw = inf
        thr = np.random.exponential(1.0)
    rhs(P, y, i, k1)
    h = 1e-3
    status = OK
    nsteps = 0
    nrej = 0
    while True:
        if t >= t_sw and t_sw <= T:
            i = 1 - i
            if nsw == sw_t.shape[0]:
                sw_t = _grow2(sw_t, nsw)
                sw_r = _grow2(sw_r, nsw)
            sw_t[nsw] = t
            sw_r[nsw] = i
            nsw += 1
            y[3] = 0.0
            if i == 1:
                t_sw = inf
                thr = np.random.exponential(1.0)
            else:
                t_sw = t + np.random.exponential(1.0 / aM)
                thr = inf
            rhs(P, y, i, k1)
            continue
        if t >= T:
            break
        t_stop = min(T, t_sw)
        remaining = t_stop - t
        hit = h >= remaining
        h_try = remaining if hit else h
        err = dp_step(P, y, i, h_try, k1, ynew, k7, rcont, K, tmp, rtol, atol)
        fac = _step_factor(err)
        if err > 1.0:
            nrej += 1
            h = h_try * fac
            if h < 1e-14 * max(1.0, t):
                status = STEP_UNDERFLOW
                break
            continue
        h_used = h_try
        t_new = t_stop if hit else t + h_try
        crossed = False
        if i == 1 and ynew[3] >= thr:
            lo = 0.0
            hi = 1.0
            it = 0
            while h_try * (hi - lo) > SWITCH_TIME_TOL and it < 200:
                mid = 0.5 * (lo + hi)
                if dense_eval(rcont, mid, 3) >= thr:
                    hi = mid
                else:
                    lo = mid
                it += 1
            if it >= 200:
                status = LOCALIZATION_FAILED
                break
            h_used = hi * h_try
            dp_step(P, y, i, h_used, k1, ynew, k7, rcont, K, tmp, rtol, atol)
            t_new = t + h_used
            crossed = True
        while k_out < n_out and out_times[k_out] < t_new:
            theta = (out_times[k_out] - t) / h_used
            for j in range(3):
                out_x[k_out, j] = dense_eval(rcont, theta, j)
            out_i[k_out] = i
            k_out += 1
        if store_dense:
            if nd == d_t.shape[0]:
                d_t = _grow2(d_t, nd)
                d_h = _grow2(d_h, nd)
                d_r = _grow2(d_r, nd)
                d_c = _grow2(d_c, nd)
            d_t[nd] = t
            d_h[nd] = h_used
            d_r[nd] = i
            d_c[nd] = rcont[:, :3]
            nd += 1
        t = t_new
        y[:] = ynew
        k1[:] = k7
        nsteps += 1
        if crossed:
            t_sw = t
        elif not hit:
            h = h_try * fac
        else:
            h = max(h, h_try * fac)
    while k_out < n_out:
        out_x[k_out] = y[:3]
        out_i[k_out] = i
        k_out += 1
    return (out_x, out_i, sw_t[:nsw].copy(), sw_r[:nsw].copy(),
            d_t[:nd].copy(), d_h[:nd].copy(), d_r[:nd].copy(), d_c[:nd].copy(),
            y[:3].copy(), i, status, nsteps, nrej)


@njit(cache=True, nogil=True)
def _jump_rates(P, K, Ka, K1a, Kb, N1, N2, N3, I, rates):
    x2 = N2 / K1a
    x3 = N3 / Kb
    q = P[Q1] + P[Q2] * x2 + P[Q3] * x3
    qM = P[Q1M] + P[Q2M] * x2 + P[Q3M] * x3
    r = P[C1] / (1.0 + P[C2] * x2 + P[C3] * x3)
    rM = P[C1M] / (1.0 + P[C2M] * x2 + P[C3M] * x3)
    rates[0] = P[A] * (K - N1)
    rates[1] = q * N1
    rates[2] = Ka * r * N1
    rates[3] = P[D] * N2
    rates[4] = Kb * rM * I
    rates[5] = P[DM] * N3
    rates[6] = P[AM] * (1 - I)
    rates[7] = qM * I
    total = 0.0
    for c in range(8):
        total += rates[c]
    return total


@njit(cache=True, nogil=True)
def ssa_kernel(P, K, n0, T, out_times, seed, log_events):
    """Direct-method simulation of the four-component jump process."""
    np.random.seed(seed)
    Ka = K ** P[ALPHA]
    K1a = K ** (1.0 + P[ALPHA])
    Kb = K ** P[BETA]
    N1, N2, N3, I = n0[0], n0[1], n0[2], n0[3]
    rates = np.zeros(8)
    n_out = out_times.shape[0]
    out = np.zeros((n_out, 4), dtype=np.int64)
    k = 0
    sw_t = np.empty(16)
    sw_r = np.empty(16, dtype=np.int64)
    nsw = 0
    ecap = 1024 if log_events else 1
    ev_t = np.empty(ecap)
    ev_c = np.empty(ecap, dtype=np.int64)
    nev = 0
    t = 0.0
    status = OK
    while True:
        total = _jump_rates(P, K, Ka, K1a, Kb, N1, N2, N3, I, rates)
        if not np.isfinite(total):
            status = RATE_OVERFLOW
            break
        if total > 0.0:
            t_next = t + np.random.exponential(1.0 / total)
        else:
            t_next = np.inf
        while k < n_out and out_times[k] < t_next:
            out[k, 0] = N1
            out[k, 1] = N2
            out[k, 2] = N3
            out[k, 3] = I
            k += 1
        if t_next > T:
            break
        u = np.random.random() * total
        c = 7
        acc = 0.0
        for cc in range(8):
            acc += rates[cc]
            if u < acc:
                c = cc
                break
        while rates[c] == 0.0:
            c -= 1
        if c == 0:
            N1 += 1
        elif c == 1:
            N1 -= 1
        elif c == 2:
            N2 += 1
        elif c == 3:
            N2 -= 1
        elif c == 4:
            N3 += 1
        elif c == 5:
            N3 -= 1
        elif c == 6:
            I = 1
        else:
            I = 0
        t = t_next
        if c >= 6:
            if nsw == sw_t.shape[0]:
                sw_t = _grow2(sw_t, nsw)
                sw_r = _grow2(sw_r, nsw)
            sw_t[nsw] = t
            sw_r[nsw] = I
            nsw += 1
        if log_events:
            if nev == ev_t.shape[0]:
                ev_t = _grow2(ev_t, nev)
                ev_c = _grow2(ev_c, nev)
            ev_t[nev] = t
            ev_c[nev] = c
        nev += 1
        if N1 < 0 or N1 > K or N2 < 0 or N3 < 0 or I < 0 or I > 1:
            status = INVALID_STATE
            break
    final = np.array([N1, N2, N3, I], dtype=np.int64)
    n_log = nev if log_events else 0
    return out, sw_t[:nsw].copy(), sw_r[:nsw].copy(), ev_t[:n_log].copy(), ev_c[:n_log].copy(), \
        final, nev, status


@njit(cache=True, nogil=True)
def tau_leap_kernel(P, K, n0, T, leap_dt, out_times, seed):
    """Poisson leaping with rates frozen over each step; the regime flips by
    thinning with probability 1 - exp(-rate dt). Returns clamp statistics."""
    np.random.seed(seed)
    Ka = K ** P[ALPHA]
    K1a = K ** (1.0 + P[ALPHA])
    Kb = K ** P[BETA]
    N1, N2, N3, I = n0[0], n0[1], n0[2], n0[3]
    rates = np.zeros(8)
    n_out = out_times.shape[0]
    out = np.zeros((n_out, 4), dtype=np.int64)
    k = 0
    while k < n_out and out_times[k] <= 0.0:
        out[k, 0] = N1
        out[k, 1] = N2
        out[k, 2] = N3
        out[k, 3] = I
        k += 1
    sw_t = np.empty(16)
    sw_r = np.empty(16, dtype=np.int64)
    nsw = 0
    t = 0.0
    nsteps = 0
    nclamp = 0
    status = OK
    eps = 1e-12 * max(1.0, T)
    while t < T - eps:
        dt = min(leap_dt, T - t)
        if k < n_out and out_times[k] > t and out_times[k] - t < dt:
            dt = out_times[k] - t
        total = _jump_rates(P, K, Ka, K1a, Kb, N1, N2, N3, I, rates)
        if not np.isfinite(total):
            status = RATE_OVERFLOW
            break
        dn = np.zeros(6, dtype=np.int64)
        for c in range(6):
            lam = rates[c] * dt
            if lam > 0.0:
                dn[c] = np.random.poisson(lam)
        N1 += dn[0] - dn[1]
        N2 += dn[2] - dn[3]
        N3 += dn[4] - dn[5]
        clamped = False
        if N1 < 0:
            N1 = 0
            clamped = True
        elif N1 > K:
            N1 = K
            clamped = True
        if N2 < 0:
            N2 = 0
            clamped = True
        if N3 < 0:
            N3 = 0
            clamped = True
        rate_sw = rates[6] if I == 0 else rates[7]
        t += dt
        if rate_sw > 0.0 and np.random.random() < -np.expm1(-rate_sw * dt):
            I = 1 - I
            if nsw == sw_t.shape[0]:
                sw_t = _grow2(sw_t, nsw)
                sw_r = _grow2(sw_r, nsw)
            sw_t[nsw] = t
            sw_r[nsw] = I
            nsw += 1
        nsteps += 1
        if clamped:
            nclamp += 1
        while k < n_out and out_times[k] <= t + eps:
            out[k, 0] = N1
            out[k, 1] = N2
            out[k, 2] = N3
            out[k, 3] = I
            k += 1
    while k < n_out:
        out[k, 0] = N1
        out[k, 1] = N2
        out[k, 2] = N3
        out[k, 3] = I
        k += 1
    final = np.array([N1, N2, N3, I], dtype=np.int64)
    return out, sw_t[:nsw].copy(), sw_r[:nsw].copy(), final, nsteps, nclamp, status
