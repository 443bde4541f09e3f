"""Compiled inner loops.

Densities live in a co-moving frame: array cell ``i`` of the bid side holds
the relative cell ``j = zlo + i + m`` where ``m`` is the number of ticks the
bid has moved, and on the ask side ``j = zlo + i - m``. A price change then
touches no array data.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# indices into the constants vector
DX, DT, DV, DP, H, GAMMA1, ETA1, ETA2, KAPPA, SIGMA = range(10)
LAM_BP, LAM_BM, LAM_AP, LAM_AM = 10, 11, 12, 13
J_BP, J_BM, J_AP, J_AM = 14, 15, 16, 17
OMEGA, PHI_MODE, MBOUND, GUARD, DELTA_N = 18, 19, 20, 21, 22
N_CONST = 23

# kernel status codes
OK, OVERFLOW, FAULT = 0, 1, 2

_SNAP = 1e-9


@njit(cache=True)
def snap_floor(q):
    r = np.floor(q + 0.5)
    if abs(q - r) <= _SNAP * max(1.0, abs(q)):
        return int(r)
    return int(math.floor(q))


@njit(cache=True)
def top_volume(W, base, jh, frac, dx):
    """Integral over relative cells ``0 .. jh - 1`` plus a fraction of cell ``jh``.

    ``base`` is the array index of relative cell 0; returns -1 on overflow.
    """
    n = W.shape[0]
    if base < 0 or base + jh >= n:
        return -1.0
    s = 0.0
    for j in range(jh):
        s += W[base + j]
    if frac > _SNAP:
        s += frac * W[base + jh]
    return s * dx


@njit(cache=True)
def event_law(c, bt, st, volb, vola, y, out_p, out_j):
    """Fill the twelve event-category probabilities and four jump sizes.

    Categories: small A+, A-, C+, C-; large bid up, bid down, ask up, ask
    down; bid placement, bid cancellation, ask placement, ask cancellation.
    Jump sizes are in ticks. Returns the imbalance.
    """
    dx = c[DX]
    dt = c[DT]
    dp = c[DP]
    im = volb / (volb + vola)
    sp = st * dx
    e = math.exp(-c[GAMMA1] * (sp - dx))
    q = 1.0 - e
    a_up = dp * (dx * im * q + q)
    c_up = dp * (dx * im * e + q)
    a_dn = dp * (dx * (1.0 - im) * e + q)
    c_dn = dp * (dx * (1.0 - im) * q + q)
    if c[GUARD] > 0.0 and bt <= 1:
        a_dn = 0.0
    small = a_up + c_up + a_dn + c_dn
    lam_tot = c[LAM_BP] + c[LAM_BM] + c[LAM_AP] + c[LAM_AM]
    if small + dt * lam_tot > 1.0:
        r = (1.0 - dt * lam_tot) / small
        a_up *= r
        c_up *= r
        a_dn *= r
        c_dn *= r
        small = a_up + c_up + a_dn + c_dn
    out_p[0] = a_up
    out_p[1] = a_dn
    out_p[2] = c_up
    out_p[3] = c_dn
    out_p[4] = dt * c[LAM_BP]
    out_p[5] = dt * c[LAM_BM]
    out_p[6] = dt * c[LAM_AP]
    out_p[7] = dt * c[LAM_AM]
    rest = 1.0 - small - dt * lam_tot
    if rest < 0.0:
        rest = 0.0
    out_p[8] = 0.5 * rest * (1.0 - im)
    out_p[9] = 0.5 * rest * im
    out_p[10] = 0.5 * rest * im
    out_p[11] = 0.5 * rest * (1.0 - im)

    rho = 1.0
    if y > c[KAPPA]:
        rho = 1.0 + c[ETA1]
    mt = snap_floor(c[MBOUND] / dx)
    # bid up
    jb = int(np.floor(rho * c[J_BP] / dx + 0.5))
    jb = min(jb, st - 1, mt)
    out_j[0] = jb
    # bid down
    if volb > 0.0:
        qv = rho * c[ETA2] * c[J_BM] / (volb * dx)
        jm = -mt if qv < -mt else int(math.floor(qv))
    else:
        jm = -mt
    jm = max(jm, -mt)
    if c[GUARD] > 0.0:
        jm = max(jm, -(bt - 1))
    out_j[1] = jm
    # ask up
    if vola > 0.0:
        qv = rho * c[ETA2] * c[J_AP] / (vola * dx)
        ja = mt if qv > mt else int(math.floor(qv))
    else:
        ja = mt
    out_j[2] = min(ja, mt)
    # ask down
    jd = int(np.floor(rho * c[J_AM] / dx + 0.5))
    jd = max(jd, -(st - 1), -mt)
    out_j[3] = jd
    return im


@njit(cache=True, nogil=True)
def simulate_micro(
    c,
    bt0,
    at0,
    Wb,
    Wa,
    zlo_b,
    zlo_a,
    U,
    rec_bt,
    rec_at,
    rec_tau,
    rec_vb,
    rec_va,
    rec_y,
    ev_kind,
    ev_xi,
    ev_omega,
    ev_pi,
    ev_phi,
    probe_t,
    probe_k,
    probe_b,
    probe_a,
    snap_k,
    snap_b,
    snap_a,
    track_rem,
    g_rel,
    g_lo,
    Rb,
    Ra,
    stats,
):
    """Run ``U.shape[0]`` events of the simulation-study model in place.

    ``stats`` receives: min spread (ticks), min bid (ticks), min touched
    density value, sup |R_phi|, sup ||R_b||^2, sup ||R_a||^2, failing tick.
    Returns a status code.
    """
    K = U.shape[0]
    dx = c[DX]
    dt = c[DT]
    dv = c[DV]
    h = c[H]
    jh = snap_floor(h / dx)
    frac = h / dx - jh
    nb = Wb.shape[0]
    na = Wa.shape[0]
    ng = g_rel.shape[0]
    pr = np.zeros(12)
    js = np.zeros(4, np.int64)

    bt = bt0
    at = at0
    y = 0
    tau = 0.0
    rphi = 0.0
    nrb = 0.0
    nra = 0.0
    stats[0] = at - bt
    stats[1] = bt
    stats[2] = np.inf
    stats[3] = 0.0
    stats[4] = 0.0
    stats[5] = 0.0
    stats[6] = -1.0

    n_probe = probe_t.shape[0]
    pidx = 0
    n_snap = snap_k.shape[0]
    sidx = 0
    while sidx < n_snap and snap_k[sidx] == 0:
        snap_b[sidx, :] = Wb
        snap_a[sidx, :] = Wa
        sidx += 1

    rec_bt[0] = bt
    rec_at[0] = at
    rec_tau[0] = 0.0
    rec_y[0] = 0

    for k in range(1, K + 1):
        mb = bt - bt0
        ma = at - at0
        base_b = -zlo_b - mb
        base_a = -zlo_a + ma
        volb = top_volume(Wb, base_b, jh, frac, dx)
        vola = top_volume(Wa, base_a, jh, frac, dx)
        if volb < 0.0 or vola < 0.0:
            stats[6] = k
            return OVERFLOW
        rec_vb[k - 1] = volb
        rec_va[k - 1] = vola
        if not volb + vola > 0.0:
            stats[6] = k
            return FAULT
        im = event_law(c, bt, at - bt, volb, vola, y, pr, js)

        u = U[k - 1]
        # category
        cat = 11
        acc = 0.0
        for i in range(11):
            acc += pr[i]
            if u[0] < acc:
                cat = i
                break
        z = math.sqrt(-2.0 * math.log(1.0 - u[1])) * math.cos(2.0 * math.pi * u[2])
        pi = z / math.sqrt(2.0)
        if c[PHI_MODE] > 0.0:
            phi = -math.log(1.0 - u[3])
            if not phi > 0.0:
                phi = 1e-300
        else:
            phi = 1.0

        # physical-time probes see the state before this event
        tau_new = tau + phi * dt
        while pidx < n_probe and probe_t[pidx] < tau_new:
            probe_k[pidx] = k - 1
            probe_b[pidx, :] = Wb
            probe_a[pidx, :] = Wa
            pidx += 1

        kind = 0
        xi = 0
        omega = 0.0
        jcell = 0
        if cat == 0:
            xi = 1
        elif cat == 1:
            xi = -1
        elif cat == 2:
            kind = 2
            xi = 1
        elif cat == 3:
            kind = 2
            xi = -1
        elif cat == 4:
            xi = js[0]
        elif cat == 5:
            xi = js[1]
        elif cat == 6:
            kind = 2
            xi = js[2]
        elif cat == 7:
            kind = 2
            xi = js[3]
        else:
            kind = 1 if cat <= 9 else 3
            jcell = snap_floor(pi / dx)

        # remainder increments use the state before the event
        if track_rem:
            rest = pr[8] + pr[9] + pr[10] + pr[11]
            c1b = rest * 5.0 * (1.0 - im)
            c2b = rest * 0.25 * im
            c1a = rest * 5.0 * im
            c2a = rest * 0.25 * (1.0 - im)
            ib0 = base_b + g_lo
            ia0 = base_a + g_lo
            if ib0 < 0 or ib0 + ng > nb or ia0 < 0 or ia0 + ng > na:
                stats[6] = k
                return OVERFLOW
            for j in range(ng):
                g = g_rel[j]
                if g == 0.0:
                    continue
                ib = ib0 + j
                old = Rb[ib]
                new = old - dv * g * (c1b - c2b * Wb[ib])
                Rb[ib] = new
                nrb += (new * new - old * old) * dx
                ia = ia0 + j
                old = Ra[ia]
                new = old - dv * g * (c1a - c2a * Wa[ia])
                Ra[ia] = new
                nra += (new * new - old * old) * dx

        if kind == 1 or kind == 3:
            if kind == 1:
                idx = base_b + jcell
                if idx < 0 or idx >= nb:
                    stats[6] = k
                    return OVERFLOW
                v = Wb[idx]
            else:
                idx = base_a + jcell
                if idx < 0 or idx >= na:
                    stats[6] = k
                    return OVERFLOW
                v = Wa[idx]
            if cat == 8 or cat == 10:
                omega = c[OMEGA]
            else:
                omega = -u[4] * v
            amount = dv * omega / dx
            if kind == 1:
                Wb[idx] = Wb[idx] + amount
                nv = Wb[idx]
                if track_rem:
                    old = Rb[idx]
                    new = old + amount
                    Rb[idx] = new
                    nrb += (new * new - old * old) * dx
            else:
                Wa[idx] = Wa[idx] + amount
                nv = Wa[idx]
                if track_rem:
                    old = Ra[idx]
                    new = old + amount
                    Ra[idx] = new
                    nra += (new * new - old * old) * dx
            if nv < stats[2]:
                stats[2] = nv
        elif kind == 0:
            bt += xi
        else:
            at += xi

        if u[5] < c[SIGMA] * dt:
            y += 1
        tau = tau_new
        rphi += dt * (phi - 1.0)

        ev_kind[k - 1] = kind
        ev_xi[k - 1] = xi
        ev_omega[k - 1] = omega
        ev_pi[k - 1] = pi if (kind == 1 or kind == 3) else 0.0
        ev_phi[k - 1] = phi
        rec_bt[k] = bt
        rec_at[k] = at
        rec_tau[k] = tau
        rec_y[k] = y

        if at - bt < stats[0]:
            stats[0] = at - bt
        if bt < stats[1]:
            stats[1] = bt
        if abs(rphi) > stats[3]:
            stats[3] = abs(rphi)
        if nrb > stats[4]:
            stats[4] = nrb
        if nra > stats[5]:
            stats[5] = nra
        while sidx < n_snap and snap_k[sidx] == k:
            snap_b[sidx, :] = Wb
            snap_a[sidx, :] = Wa
            sidx += 1

    mb = bt - bt0
    ma = at - at0
    volb = top_volume(Wb, -zlo_b - mb, jh, frac, dx)
    vola = top_volume(Wa, -zlo_a + ma, jh, frac, dx)
    rec_vb[K] = volb
    rec_va[K] = vola
    while pidx < n_probe:
        probe_k[pidx] = K
        probe_b[pidx, :] = Wb
        probe_a[pidx, :] = Wa
        pidx += 1
    return OK


@njit(cache=True)
def cell_integral(W, zlo, dz, a, b):
    """Exact integral over ``[a, b]`` of the step function with cells ``(zlo + i) * dz``."""
    qa = a / dz - zlo
    qb = b / dz - zlo
    ja = snap_floor(qa)
    jb = snap_floor(qb)
    n = W.shape[0]
    if ja < 0 or jb >= n:
        return -1.0
    if ja == jb:
        return W[ja] * (qb - qa) * dz
    s = W[ja] * (ja + 1 - qa) * dz
    for i in range(ja + 1, jb):
        s += W[i] * dz
    fr = qb - jb
    if fr > _SNAP:
        s += W[jb] * fr * dz
    return s


@njit(cache=True)
def _inject(W, zlo, dz, off, cut, hstep, c1, c2):
    """``W[i] += hstep * g(x_i + off) * (c1 - c2 * W[i])`` on cells near the quote."""
    i_lo = int(math.floor((-cut - off) / dz)) - zlo
    i_hi = int(math.ceil((cut - off) / dz)) - zlo
    if i_lo < 0 or i_hi > W.shape[0]:
        return False
    left = math.erf((zlo + i_lo) * dz + off)
    inv = 1.0 / (2.0 * dz)
    for i in range(i_lo, i_hi):
        right = math.erf((zlo + i + 1) * dz + off)
        g = (right - left) * inv
        left = right
        W[i] += hstep * g * (c1 - c2 * W[i])
    return True


@njit(cache=True, nogil=True)
def simulate_limit(
    c,
    hstep,
    B0,
    A0,
    Wb,
    Wa,
    zlo_b,
    zlo_a,
    dz,
    cut,
    G,
    N,
    marks,
    yinc,
    probe_m,
    probe_b,
    probe_a,
    rec_B,
    rec_A,
    rec_vb,
    rec_va,
    rec_y,
    jl_step,
    jl_side,
    jl_mark,
    jl_size,
):
    """Euler scheme of the simulation-study limit; returns (status, failing step)."""
    steps = G.shape[0]
    h = c[H]
    M = c[MBOUND]
    sqh = math.sqrt(hstep)
    lb_tot = c[LAM_BM] + c[LAM_BP]
    la_tot = c[LAM_AM] + c[LAM_AP]
    B = B0
    A = A0
    y = 0
    mk = 0
    pidx = 0
    n_probe = probe_m.shape[0]
    while pidx < n_probe and probe_m[pidx] == 0:
        probe_b[pidx, :] = Wb
        probe_a[pidx, :] = Wa
        pidx += 1
    rec_B[0] = B
    rec_A[0] = A
    for m in range(steps):
        ob = B - B0
        oa = A - A0
        volb = cell_integral(Wb, zlo_b, dz, -ob, h - ob)
        vola = cell_integral(Wa, zlo_a, dz, oa, h + oa)
        if volb < 0.0 or vola < 0.0:
            return OVERFLOW, m
        if not volb + vola > 0.0:
            return FAULT, m
        rec_vb[m] = volb
        rec_va[m] = vola
        im = volb / (volb + vola)
        sp = A - B
        spp = sp if sp > 0.0 else 0.0
        e = math.exp(-c[GAMMA1] * spp)
        pb = im - e
        pa = im - (1.0 - e)
        r = math.sqrt(2.0 * (1.0 - e))
        rho = 1.0
        if y > c[KAPPA]:
            rho = 1.0 + c[ETA1]

        jb = 0.0
        for _ in range(N[m, 0]):
            u = marks[mk]
            mk += 1
            if u * lb_tot < c[LAM_BM]:
                mark = -1.0
                if volb > 0.0:
                    size = rho * c[ETA2] * c[J_BM] / volb
                else:
                    size = -M
                size = max(size, -M)
                if c[GUARD] > 0.0:
                    size = max(size, -max(B, 0.0))
            else:
                mark = 1.0
                size = min(rho * c[J_BP], spp, M)
            jl_step[mk - 1] = m + 1
            jl_side[mk - 1] = 0
            jl_mark[mk - 1] = mark
            jl_size[mk - 1] = size
            jb += size
        ja = 0.0
        for _ in range(N[m, 1]):
            u = marks[mk]
            mk += 1
            if u * la_tot < c[LAM_AM]:
                mark = -1.0
                size = max(rho * c[J_AM], -spp, -M)
            else:
                mark = 1.0
                if vola > 0.0:
                    size = rho * c[ETA2] * c[J_AP] / vola
                else:
                    size = M
                size = min(size, M)
            jl_step[mk - 1] = m + 1
            jl_side[mk - 1] = 1
            jl_mark[mk - 1] = mark
            jl_size[mk - 1] = size
            ja += size

        ok_b = _inject(Wb, zlo_b, dz, ob, cut, hstep, 5.0 * (1.0 - im), 0.25 * im)
        ok_a = _inject(Wa, zlo_a, dz, -oa, cut, hstep, 5.0 * im, 0.25 * (1.0 - im))
        if not (ok_b and ok_a):
            return OVERFLOW, m
        B = B + pb * hstep + r * sqh * G[m, 0] + jb
        A = A + pa * hstep + r * sqh * G[m, 1] + ja
        y += yinc[m]
        rec_B[m + 1] = B
        rec_A[m + 1] = A
        rec_y[m + 1] = y
        while pidx < n_probe and probe_m[pidx] == m + 1:
            probe_b[pidx, :] = Wb
            probe_a[pidx, :] = Wa
            pidx += 1
    ob = B - B0
    oa = A - A0
    rec_vb[steps] = cell_integral(Wb, zlo_b, dz, -ob, h - ob)
    rec_va[steps] = cell_integral(Wa, zlo_a, dz, oa, h + oa)
    return OK, steps
