"""Pure-Python step kernel: residual and analytic Jacobian of the step MNCP.

All quantities are dense and indexed by the flat unknown vector ``z``; see
``stepper.StepLayout`` for the layout. The compiled kernel mirrors this file.
"""

from __future__ import annotations

import numpy as np

from .algebra import quat_to_rotation, rate_matrix, rotation_derivatives, skew, tangent_axis

_EYE = np.eye(3)


def pose_plus(q0, c0, nu, h):
    """End-of-step CM, rotation and dR/dω (shape (3, 3, 3), first index ω_k)."""
    c = c0 + h * nu[:3]
    E = rate_matrix(q0)
    qt = q0 + 0.5 * h * (E @ nu[3:])
    norm = np.linalg.norm(qt)
    q = qt / norm
    dq = (np.eye(4) - np.outer(q, q)) @ (0.5 * h * E) / norm
    dR = np.einsum("mij,mk->kij", rotation_derivatives(q), dq)
    return c, quat_to_rotation(q), dR


def constraints_at(ctx, poses, body, x, xcol, n):
    """Values, world gradients and their z-derivatives of one body's constraints at x."""
    lo, hi = ctx.con_start[body], ctx.con_start[body + 1]
    Q, b, cc = ctx.Q[lo:hi], ctx.b[lo:hi], ctx.c[lo:hi]
    c, R, dR, dyn = poses[body]
    rel = x - c
    y = R.T @ rel
    gy = Q @ y + b
    f = 0.5 * np.einsum("kij,i,j->k", Q, y, y) + b @ y + cc
    g = gy @ R.T
    H = np.einsum("ia,kab,jb->kij", R, Q, R)
    m = hi - lo
    df = np.zeros((m, n))
    dg = np.zeros((m, 3, n))
    df[:, xcol:xcol + 3] = g
    dg[:, :, xcol:xcol + 3] = H
    if dyn >= 0:
        v = 6 * dyn
        df[:, v:v + 3] = -ctx.h * g
        dg[:, :, v:v + 3] = -ctx.h * H
        dy = np.einsum("kji,j->ki", dR, rel)
        df[:, v + 3:v + 6] = gy @ dy.T
        dg[:, :, v + 3:v + 6] = np.einsum("kia,ma->mik", dR, gy) + np.einsum("ia,mab,kb->mik", R, Q, dy)
    return f, g, df, dg


def _unit(vec, dvec):
    norm = np.linalg.norm(vec)
    n = vec / norm
    return n, (_EYE - np.outer(n, n)) @ dvec / norm


def evaluate(ctx, z):
    """Stacked residual ``[F_eq; F_comp]`` and its Jacobian for unknowns ``z``."""
    n = z.size
    F = np.zeros(n)
    J = np.zeros((n, n))
    h = ctx.h

    poses = []
    for body in range(ctx.n_bodies):
        d = ctx.dyn_index[body]
        if d >= 0:
            c, R, dR = pose_plus(ctx.q0[d], ctx.c0[d], z[6 * d:6 * d + 6], h)
        else:
            c, R, dR = ctx.static_c[body], ctx.static_R[body], None
        poses.append((c, R, dR, d))

    for d in range(ctx.n_dyn):
        rows = slice(6 * d, 6 * d + 6)
        nu = z[rows]
        I = ctx.inertia[d]
        w = nu[3:]
        Iw = I @ w
        F[6 * d:6 * d + 3] = -ctx.mass[d] * (nu[:3] - ctx.nu0[d, :3]) + ctx.p_app[d, :3]
        F[6 * d + 3:6 * d + 6] = -I @ (w - ctx.nu0[d, 3:]) - h * np.cross(w, Iw) + ctx.p_app[d, 3:]
        J[6 * d:6 * d + 3, 6 * d:6 * d + 3] = -ctx.mass[d] * _EYE
        J[6 * d + 3:6 * d + 6, 6 * d + 3:6 * d + 6] = -I - h * (skew(w) @ I - skew(Iw))

    n_eq = ctx.n_eq
    for k in range(ctx.n_contacts):
        bf, bg = ctx.body_f[k], ctx.body_g[k]
        mu, et, eo, er = ctx.friction[k]
        k1 = ctx.k1[k]
        iu = ctx.off_u[k]
        iv = n_eq + ctx.off_v[k]
        ie = ctx.off_eq[k]
        mf = ctx.con_start[bf + 1] - ctx.con_start[bf]
        mg = ctx.con_start[bg + 1] - ctx.con_start[bg]
        ia1, ia2 = iu, iu + 3
        ipt, ipo, ipr = iu + 6, iu + 7, iu + 8
        ilf, ilg = iv, iv + mf
        ipn, isg = iv + mf + mg, iv + mf + mg + 1

        a1, a2 = z[ia1:ia1 + 3], z[ia2:ia2 + 3]
        pt, po, pr = z[ipt], z[ipo], z[ipr]
        lf, lg = z[ilf:ilf + mf], z[ilg:ilg + mg]
        pn, sg = z[ipn], z[isg]

        f1, g1, df1, dg1 = constraints_at(ctx, poses, bf, a1, ia1, n)
        f2, g2, df2, dg2 = constraints_at(ctx, poses, bg, a2, ia2, n)

        # normal-cone combinations
        wf = lf.copy()
        wf[k1] = 1.0
        S = wf @ g1
        dS = np.einsum("m,min->in", wf, dg1)
        for i in range(mf):
            if i != k1:
                dS[:, ilf + i] += g1[i]
        C = lg @ g2
        dC = np.einsum("m,min->in", lg, dg2)
        dC[:, ilg:ilg + mg] += g2.T

        F[ie:ie + 3] = a1 - a2 + lf[k1] * S
        dE1 = lf[k1] * dS
        dE1[:, ia1:ia1 + 3] += _EYE
        dE1[:, ia2:ia2 + 3] -= _EYE
        dE1[:, ilf + k1] += S
        J[ie:ie + 3] = dE1
        F[ie + 3:ie + 6] = S + C
        J[ie + 3:ie + 6] = dS + dC

        # complementarity functions
        F[ilf:ilf + mf] = -f1
        J[ilf:ilf + mf] = -df1
        F[ilg:ilg + mg] = -f2
        J[ilg:ilg + mg] = -df2
        # the anchor row is an equation (free row); the normal impulse pairs
        # with the signed separation carried by its multiplier
        F[ipn] = lf[k1]
        J[ipn, ilf + k1] = 1.0

        # contact frame
        if ctx.normal_mode[k] == 0:
            nvec, dn = ctx.fixed_normal[k], np.zeros((3, n))
        elif np.linalg.norm(C) > 1e-12:
            nvec, dn = _unit(C, dC)
        else:
            nvec, dn = _unit(-S, -dS)
        axis = tangent_axis(nvec)
        ex = skew(_EYE[axis])
        t, dt = _unit(ex @ nvec, ex @ dn)
        o = np.cross(nvec, t)
        do = skew(nvec) @ dt - skew(t) @ dn

        # wrench on F (and reaction on G)
        A = pn * nvec + pt * t + po * o
        dA = pn * dn + pt * dt + po * do
        dA[:, ipn] += nvec
        dA[:, ipt] += t
        dA[:, ipo] += o
        cf = poses[bf][0]
        rf = a2 - cf
        drf = np.zeros((3, n))
        drf[:, ia2:ia2 + 3] = _EYE
        df_dyn = ctx.dyn_index[bf]
        if df_dyn >= 0:
            drf[:, 6 * df_dyn:6 * df_dyn + 3] -= h * _EYE
        mom = np.cross(rf, A) + pr * nvec
        dmom = -skew(A) @ drf + skew(rf) @ dA + pr * dn
        dmom[:, ipr] += nvec
        if df_dyn >= 0:
            F[6 * df_dyn:6 * df_dyn + 3] += A
            F[6 * df_dyn + 3:6 * df_dyn + 6] += mom
            J[6 * df_dyn:6 * df_dyn + 3] += dA
            J[6 * df_dyn + 3:6 * df_dyn + 6] += dmom

        # relative velocity at the contact point
        vrel = np.zeros(3)
        dvrel = np.zeros((3, n))
        wrel = np.zeros(3)
        dwrel = np.zeros((3, n))
        if df_dyn >= 0:
            v, w = z[6 * df_dyn:6 * df_dyn + 3], z[6 * df_dyn + 3:6 * df_dyn + 6]
            vrel += v + np.cross(w, rf)
            dvrel[:, 6 * df_dyn:6 * df_dyn + 3] += _EYE
            dvrel[:, 6 * df_dyn + 3:6 * df_dyn + 6] -= skew(rf)
            dvrel += skew(w) @ drf
            wrel += w
            dwrel[:, 6 * df_dyn + 3:6 * df_dyn + 6] += _EYE
        dg_dyn = ctx.dyn_index[bg]
        if dg_dyn >= 0:
            rg = a2 - poses[bg][0]
            drg = np.zeros((3, n))
            drg[:, ia2:ia2 + 3] = _EYE
            drg[:, 6 * dg_dyn:6 * dg_dyn + 3] -= h * _EYE
            momg = np.cross(rg, A) + pr * nvec
            dmomg = -skew(A) @ drg + skew(rg) @ dA + pr * dn
            dmomg[:, ipr] += nvec
            F[6 * dg_dyn:6 * dg_dyn + 3] -= A
            F[6 * dg_dyn + 3:6 * dg_dyn + 6] -= momg
            J[6 * dg_dyn:6 * dg_dyn + 3] -= dA
            J[6 * dg_dyn + 3:6 * dg_dyn + 6] -= dmomg
            v, w = z[6 * dg_dyn:6 * dg_dyn + 3], z[6 * dg_dyn + 3:6 * dg_dyn + 6]
            vrel -= v + np.cross(w, rg)
            dvrel[:, 6 * dg_dyn:6 * dg_dyn + 3] -= _EYE
            dvrel[:, 6 * dg_dyn + 3:6 * dg_dyn + 6] += skew(rg)
            dvrel -= skew(w) @ drg
            wrel -= w
            dwrel[:, 6 * dg_dyn + 3:6 * dg_dyn + 6] -= _EYE

        vt, vo, vr = t @ vrel, o @ vrel, nvec @ wrel
        dvt = vrel @ dt + t @ dvrel
        dvo = vrel @ do + o @ dvrel
        dvr = wrel @ dn + nvec @ dwrel

        # friction: Fritz-John equalities and ellipsoid slack
        for row, e, vel, dvel, p, ip in (
            (ie + 6, et, vt, dvt, pt, ipt),
            (ie + 7, eo, vo, dvo, po, ipo),
            (ie + 8, er, vr, dvr, pr, ipr),
        ):
            F[row] = e * e * mu * pn * vel + p * sg
            J[row] = e * e * mu * pn * dvel
            J[row, ipn] += e * e * mu * vel
            J[row, ip] += sg
            J[row, isg] += p
        F[isg] = (mu * pn) ** 2 - (pt / et) ** 2 - (po / eo) ** 2 - (pr / er) ** 2
        J[isg, ipn] = 2 * mu * mu * pn
        J[isg, ipt] = -2 * pt / et**2
        J[isg, ipo] = -2 * po / eo**2
        J[isg, ipr] = -2 * pr / er**2

    return F, J
