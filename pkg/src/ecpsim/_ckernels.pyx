# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled step kernel: the same residual and Jacobian as ``_pykernels.evaluate``.

Derivative blocks are dense over the unknowns, as in the Python version, but
assembled with plain loops instead of temporary numpy expressions.
"""

import numpy as np

from libc.math cimport sqrt, fabs


cdef inline void _cross(const double* a, const double* b, double* out) noexcept nogil:
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


cdef inline double _dot(const double* a, const double* b) noexcept nogil:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


cdef void _skew_apply(const double* a, double[:, ::1] D, double[:, ::1] out, double sign, Py_ssize_t n) noexcept nogil:
    """out += sign · skew(a) @ D for a (3, n) block."""
    cdef Py_ssize_t k
    for k in range(n):
        out[0, k] += sign * (a[1] * D[2, k] - a[2] * D[1, k])
        out[1, k] += sign * (a[2] * D[0, k] - a[0] * D[2, k])
        out[2, k] += sign * (a[0] * D[1, k] - a[1] * D[0, k])


cdef void _unit(const double* v, double[:, ::1] dv, double* u, double[:, ::1] du, Py_ssize_t n) noexcept nogil:
    """u = v/|v| and du = (I − u uᵀ) dv / |v|."""
    cdef double norm = sqrt(_dot(v, v))
    cdef Py_ssize_t i, k
    cdef double proj
    for i in range(3):
        u[i] = v[i] / norm
    for k in range(n):
        proj = u[0] * dv[0, k] + u[1] * dv[1, k] + u[2] * dv[2, k]
        for i in range(3):
            du[i, k] = (dv[i, k] - u[i] * proj) / norm


cdef void _pose_plus(const double[::1] q0, const double[::1] c0, const double[::1] z, Py_ssize_t off, double h,
                     double* c, double[:, ::1] R, double[:, :, ::1] dR) noexcept nogil:
    """End-of-step CM, rotation and dR/dω (index order ω_k, i, j)."""
    cdef double E[4][3]
    cdef double qt[4]
    cdef double q[4]
    cdef double dq[4][3]
    cdef double D[4][3][3]
    cdef double norm, w, x, y, zz, s
    cdef Py_ssize_t i, j, k, m
    for i in range(3):
        c[i] = c0[i] + h * z[off + i]
    w, x, y, zz = q0[0], q0[1], q0[2], q0[3]
    E[0][0], E[0][1], E[0][2] = -x, -y, -zz
    E[1][0], E[1][1], E[1][2] = w, zz, -y
    E[2][0], E[2][1], E[2][2] = -zz, w, x
    E[3][0], E[3][1], E[3][2] = y, -x, w
    for m in range(4):
        qt[m] = q0[m] + 0.5 * h * (E[m][0] * z[off + 3] + E[m][1] * z[off + 4] + E[m][2] * z[off + 5])
    norm = sqrt(qt[0] * qt[0] + qt[1] * qt[1] + qt[2] * qt[2] + qt[3] * qt[3])
    for m in range(4):
        q[m] = qt[m] / norm
    for m in range(4):
        for k in range(3):
            s = 0.0
            for j in range(4):
                s += ((1.0 if j == m else 0.0) - q[m] * q[j]) * 0.5 * h * E[j][k]
            dq[m][k] = s / norm
    w, x, y, zz = q[0], q[1], q[2], q[3]
    R[0, 0] = w * w + x * x - y * y - zz * zz
    R[0, 1] = 2 * (x * y - w * zz)
    R[0, 2] = 2 * (x * zz + w * y)
    R[1, 0] = 2 * (x * y + w * zz)
    R[1, 1] = w * w - x * x + y * y - zz * zz
    R[1, 2] = 2 * (y * zz - w * x)
    R[2, 0] = 2 * (x * zz - w * y)
    R[2, 1] = 2 * (y * zz + w * x)
    R[2, 2] = w * w - x * x - y * y + zz * zz
    D[0][0][0], D[0][0][1], D[0][0][2] = w, -zz, y
    D[0][1][0], D[0][1][1], D[0][1][2] = zz, w, -x
    D[0][2][0], D[0][2][1], D[0][2][2] = -y, x, w
    D[1][0][0], D[1][0][1], D[1][0][2] = x, y, zz
    D[1][1][0], D[1][1][1], D[1][1][2] = y, -x, -w
    D[1][2][0], D[1][2][1], D[1][2][2] = zz, w, -x
    D[2][0][0], D[2][0][1], D[2][0][2] = -y, x, w
    D[2][1][0], D[2][1][1], D[2][1][2] = x, y, zz
    D[2][2][0], D[2][2][1], D[2][2][2] = -w, zz, -y
    D[3][0][0], D[3][0][1], D[3][0][2] = -zz, -w, x
    D[3][1][0], D[3][1][1], D[3][1][2] = w, -zz, y
    D[3][2][0], D[3][2][1], D[3][2][2] = x, y, zz
    for k in range(3):
        for i in range(3):
            for j in range(3):
                s = 0.0
                for m in range(4):
                    s += 2.0 * D[m][i][j] * dq[m][k]
                dR[k, i, j] = s


cdef void _constraints_at(Py_ssize_t lo, Py_ssize_t hi,
                          const double[:, :, ::1] Q, const double[:, ::1] b, const double[::1] cc,
                          const double* c, double[:, ::1] R, double[:, :, ::1] dR, Py_ssize_t dyn,
                          const double* x, Py_ssize_t xcol, double h, Py_ssize_t n,
                          double[::1] f, double[:, ::1] g, double[:, ::1] df, double[:, :, ::1] dg) noexcept nogil:
    """Values, world gradients and z-derivatives of constraints lo..hi of one body at x."""
    cdef double rel[3]
    cdef double y[3]
    cdef double gy[3]
    cdef double dy[3][3]
    cdef double H[3][3]
    cdef double QR[3][3]
    cdef double s
    cdef Py_ssize_t m, i, j, a, k, v
    for i in range(3):
        rel[i] = x[i] - c[i]
    for i in range(3):
        y[i] = R[0, i] * rel[0] + R[1, i] * rel[1] + R[2, i] * rel[2]
    if dyn >= 0:
        for k in range(3):
            for i in range(3):
                dy[k][i] = dR[k, 0, i] * rel[0] + dR[k, 1, i] * rel[1] + dR[k, 2, i] * rel[2]
    for m in range(hi - lo):
        s = cc[lo + m]
        for i in range(3):
            gy[i] = b[lo + m, i]
            for j in range(3):
                gy[i] += Q[lo + m, i, j] * y[j]
            s += b[lo + m, i] * y[i]
            for j in range(3):
                s += 0.5 * y[i] * Q[lo + m, i, j] * y[j]
        f[m] = s
        for i in range(3):
            g[m, i] = R[i, 0] * gy[0] + R[i, 1] * gy[1] + R[i, 2] * gy[2]
        # H = R Q Rᵀ
        for i in range(3):
            for j in range(3):
                QR[i][j] = Q[lo + m, i, 0] * R[j, 0] + Q[lo + m, i, 1] * R[j, 1] + Q[lo + m, i, 2] * R[j, 2]
        for i in range(3):
            for j in range(3):
                H[i][j] = R[i, 0] * QR[0][j] + R[i, 1] * QR[1][j] + R[i, 2] * QR[2][j]
        for k in range(n):
            df[m, k] = 0.0
            for i in range(3):
                dg[m, i, k] = 0.0
        for i in range(3):
            df[m, xcol + i] = g[m, i]
            for j in range(3):
                dg[m, i, xcol + j] = H[i][j]
        if dyn >= 0:
            v = 6 * dyn
            for i in range(3):
                df[m, v + i] = -h * g[m, i]
                for j in range(3):
                    dg[m, i, v + j] = -h * H[i][j]
            for k in range(3):
                df[m, v + 3 + k] = gy[0] * dy[k][0] + gy[1] * dy[k][1] + gy[2] * dy[k][2]
                for i in range(3):
                    s = 0.0
                    for a in range(3):
                        s += dR[k, i, a] * gy[a]
                        for j in range(3):
                            s += R[i, a] * Q[lo + m, a, j] * dy[k][j]
                    dg[m, i, v + 3 + k] = s


def evaluate(ctx, z_in):
    """Stacked residual ``[F_eq; F_comp]`` and its Jacobian for unknowns ``z``."""
    cdef double[::1] z = np.ascontiguousarray(z_in, dtype=np.float64)
    cdef Py_ssize_t n = z.shape[0]
    F_arr = np.zeros(n)
    J_arr = np.zeros((n, n))
    cdef double[::1] F = F_arr
    cdef double[:, ::1] J = J_arr
    cdef double h = ctx.h
    cdef Py_ssize_t n_bodies = ctx.n_bodies, n_dyn = ctx.n_dyn, n_contacts = ctx.n_contacts, n_eq = ctx.n_eq
    cdef const long long[::1] dyn_index = np.ascontiguousarray(ctx.dyn_index, dtype=np.int64)
    cdef const double[:, ::1] q0 = np.ascontiguousarray(ctx.q0, dtype=np.float64)
    cdef const double[:, ::1] c0 = np.ascontiguousarray(ctx.c0, dtype=np.float64)
    cdef const double[:, ::1] nu0 = np.ascontiguousarray(ctx.nu0, dtype=np.float64)
    cdef const double[::1] mass = np.ascontiguousarray(ctx.mass, dtype=np.float64)
    cdef const double[:, :, ::1] inertia = np.ascontiguousarray(ctx.inertia, dtype=np.float64)
    cdef const double[:, ::1] p_app = np.ascontiguousarray(ctx.p_app, dtype=np.float64)
    cdef const double[:, ::1] static_c = np.ascontiguousarray(ctx.static_c, dtype=np.float64)
    cdef const double[:, :, ::1] static_R = np.ascontiguousarray(ctx.static_R, dtype=np.float64)
    cdef const long long[::1] con_start = np.ascontiguousarray(ctx.con_start, dtype=np.int64)
    cdef const double[:, :, ::1] Q = np.ascontiguousarray(ctx.Q, dtype=np.float64)
    cdef const double[:, ::1] bq = np.ascontiguousarray(ctx.b, dtype=np.float64)
    cdef const double[::1] cq = np.ascontiguousarray(ctx.c, dtype=np.float64)
    cdef const long long[::1] body_f = np.ascontiguousarray(ctx.body_f, dtype=np.int64)
    cdef const long long[::1] body_g = np.ascontiguousarray(ctx.body_g, dtype=np.int64)
    cdef const double[:, ::1] friction = np.ascontiguousarray(ctx.friction, dtype=np.float64)
    cdef const long long[::1] k1s = np.ascontiguousarray(ctx.k1, dtype=np.int64)
    cdef const long long[::1] off_u = np.ascontiguousarray(ctx.off_u, dtype=np.int64)
    cdef const long long[::1] off_v = np.ascontiguousarray(ctx.off_v, dtype=np.int64)
    cdef const long long[::1] off_eq = np.ascontiguousarray(ctx.off_eq, dtype=np.int64)
    cdef const long long[::1] normal_mode = np.ascontiguousarray(ctx.normal_mode, dtype=np.int64)
    cdef const double[:, ::1] fixed_normal = np.ascontiguousarray(ctx.fixed_normal, dtype=np.float64)

    # end-of-step poses of every body
    cdef double[:, ::1] pos = np.zeros((n_bodies, 3))
    cdef double[:, :, ::1] rot = np.zeros((n_bodies, 3, 3))
    cdef double[:, :, :, ::1] drot = np.zeros((n_bodies, 3, 3, 3))
    cdef Py_ssize_t body, d, i, j, k, m, row
    for body in range(n_bodies):
        d = dyn_index[body]
        if d >= 0:
            _pose_plus(q0[d], c0[d], z, 6 * d, h, &pos[body, 0], rot[body], drot[body])
        else:
            for i in range(3):
                pos[body, i] = static_c[body, i]
                for j in range(3):
                    rot[body, i, j] = static_R[body, i, j]

    # dynamics rows
    cdef double w[3]
    cdef double Iw[3]
    cdef double wxIw[3]
    cdef double Iwi
    for d in range(n_dyn):
        for i in range(3):
            w[i] = z[6 * d + 3 + i]
        for i in range(3):
            Iw[i] = inertia[d, i, 0] * w[0] + inertia[d, i, 1] * w[1] + inertia[d, i, 2] * w[2]
        _cross(w, Iw, wxIw)
        for i in range(3):
            F[6 * d + i] = -mass[d] * (z[6 * d + i] - nu0[d, i]) + p_app[d, i]
            Iwi = 0.0
            for j in range(3):
                Iwi += inertia[d, i, j] * (w[j] - nu0[d, 3 + j])
            F[6 * d + 3 + i] = -Iwi - h * wxIw[i] + p_app[d, 3 + i]
            J[6 * d + i, 6 * d + i] = -mass[d]
        # −I − h (skew(w) I − skew(Iw))
        for j in range(3):
            # column j of skew(w) @ I is w × I[:, j]
            J[6 * d + 3 + 0, 6 * d + 3 + j] = -inertia[d, 0, j] - h * (w[1] * inertia[d, 2, j] - w[2] * inertia[d, 1, j])
            J[6 * d + 3 + 1, 6 * d + 3 + j] = -inertia[d, 1, j] - h * (w[2] * inertia[d, 0, j] - w[0] * inertia[d, 2, j])
            J[6 * d + 3 + 2, 6 * d + 3 + j] = -inertia[d, 2, j] - h * (w[0] * inertia[d, 1, j] - w[1] * inertia[d, 0, j])
        # + h skew(Iw)
        J[6 * d + 3 + 0, 6 * d + 3 + 1] += -h * Iw[2]
        J[6 * d + 3 + 0, 6 * d + 3 + 2] += h * Iw[1]
        J[6 * d + 3 + 1, 6 * d + 3 + 0] += h * Iw[2]
        J[6 * d + 3 + 1, 6 * d + 3 + 2] += -h * Iw[0]
        J[6 * d + 3 + 2, 6 * d + 3 + 0] += -h * Iw[1]
        J[6 * d + 3 + 2, 6 * d + 3 + 1] += h * Iw[0]

    # per-contact scratch, sized for the largest constraint set
    cdef Py_ssize_t max_m = 1
    for body in range(n_bodies):
        if con_start[body + 1] - con_start[body] > max_m:
            max_m = con_start[body + 1] - con_start[body]
    cdef double[::1] f1 = np.zeros(max_m)
    cdef double[::1] f2 = np.zeros(max_m)
    cdef double[:, ::1] g1 = np.zeros((max_m, 3))
    cdef double[:, ::1] g2 = np.zeros((max_m, 3))
    cdef double[:, ::1] df1 = np.zeros((max_m, n))
    cdef double[:, ::1] df2 = np.zeros((max_m, n))
    cdef double[:, :, ::1] dg1 = np.zeros((max_m, 3, n))
    cdef double[:, :, ::1] dg2 = np.zeros((max_m, 3, n))
    cdef double[:, ::1] dS = np.zeros((3, n))
    cdef double[:, ::1] dC = np.zeros((3, n))
    cdef double[:, ::1] dn = np.zeros((3, n))
    cdef double[:, ::1] dt = np.zeros((3, n))
    cdef double[:, ::1] dtraw = np.zeros((3, n))
    cdef double[:, ::1] do_ = np.zeros((3, n))
    cdef double[:, ::1] dA = np.zeros((3, n))
    cdef double[:, ::1] drf = np.zeros((3, n))
    cdef double[:, ::1] drg = np.zeros((3, n))
    cdef double[:, ::1] dmom = np.zeros((3, n))
    cdef double[:, ::1] dvrel = np.zeros((3, n))
    cdef double[:, ::1] dwrel = np.zeros((3, n))
    cdef double[:, ::1] neg = np.zeros((3, n))

    cdef Py_ssize_t bf, bg, k1, iu, iv, ie, mf, mg, ia1, ia2, ipt, ipo, ipr, ilf, ilg, ipn, isg, axis
    cdef Py_ssize_t df_dyn, dg_dyn, ip, col
    cdef double mu, e, vel, p, pt, po, pr, pn, sg, wk, normC, et, eo, er
    cdef double a1[3]
    cdef double a2[3]
    cdef double S[3]
    cdef double Cv[3]
    cdef double nvec[3]
    cdef double traw[3]
    cdef double t[3]
    cdef double o[3]
    cdef double A[3]
    cdef double rf[3]
    cdef double rg[3]
    cdef double mom[3]
    cdef double vrel[3]
    cdef double wrel[3]
    cdef double tmp[3]
    cdef double absn[3]
    cdef double vt, vo, vr
    cdef double dvel_k
    cdef double* fvec
    cdef double[:, ::1] dfr

    for k in range(n_contacts):
        bf = body_f[k]
        bg = body_g[k]
        mu = friction[k, 0]
        et = friction[k, 1]
        eo = friction[k, 2]
        er = friction[k, 3]
        k1 = k1s[k]
        iu = off_u[k]
        iv = n_eq + off_v[k]
        ie = off_eq[k]
        mf = con_start[bf + 1] - con_start[bf]
        mg = con_start[bg + 1] - con_start[bg]
        ia1 = iu
        ia2 = iu + 3
        ipt = iu + 6
        ipo = iu + 7
        ipr = iu + 8
        ilf = iv
        ilg = iv + mf
        ipn = iv + mf + mg
        isg = ipn + 1
        for i in range(3):
            a1[i] = z[ia1 + i]
            a2[i] = z[ia2 + i]
        pt = z[ipt]
        po = z[ipo]
        pr = z[ipr]
        pn = z[ipn]
        sg = z[isg]

        _constraints_at(con_start[bf], con_start[bf + 1], Q, bq, cq, &pos[bf, 0], rot[bf], drot[bf],
                        dyn_index[bf], a1, ia1, h, n, f1, g1, df1, dg1)
        _constraints_at(con_start[bg], con_start[bg + 1], Q, bq, cq, &pos[bg, 0], rot[bg], drot[bg],
                        dyn_index[bg], a2, ia2, h, n, f2, g2, df2, dg2)

        # normal-cone combinations
        for i in range(3):
            S[i] = 0.0
            Cv[i] = 0.0
            for col in range(n):
                dS[i, col] = 0.0
                dC[i, col] = 0.0
        for m in range(mf):
            wk = 1.0 if m == k1 else z[ilf + m]
            for i in range(3):
                S[i] += wk * g1[m, i]
                for col in range(n):
                    dS[i, col] += wk * dg1[m, i, col]
            if m != k1:
                for i in range(3):
                    dS[i, ilf + m] += g1[m, i]
        for m in range(mg):
            wk = z[ilg + m]
            for i in range(3):
                Cv[i] += wk * g2[m, i]
                for col in range(n):
                    dC[i, col] += wk * dg2[m, i, col]
            for i in range(3):
                dC[i, ilg + m] += g2[m, i]

        wk = z[ilf + k1]
        for i in range(3):
            F[ie + i] = a1[i] - a2[i] + wk * S[i]
            for col in range(n):
                J[ie + i, col] = wk * dS[i, col]
            J[ie + i, ia1 + i] += 1.0
            J[ie + i, ia2 + i] -= 1.0
            J[ie + i, ilf + k1] += S[i]
            F[ie + 3 + i] = S[i] + Cv[i]
            for col in range(n):
                J[ie + 3 + i, col] = dS[i, col] + dC[i, col]

        # complementarity functions
        for m in range(mf):
            F[ilf + m] = -f1[m]
            for col in range(n):
                J[ilf + m, col] = -df1[m, col]
        for m in range(mg):
            F[ilg + m] = -f2[m]
            for col in range(n):
                J[ilg + m, col] = -df2[m, col]
        # the anchor row is an equation; the normal impulse pairs with the separation
        F[ipn] = z[ilf + k1]
        J[ipn, ilf + k1] = 1.0

        # contact frame
        normC = sqrt(_dot(Cv, Cv))
        if normal_mode[k] == 0:
            for i in range(3):
                nvec[i] = fixed_normal[k, i]
                for col in range(n):
                    dn[i, col] = 0.0
        elif normC > 1e-12:
            _unit(Cv, dC, nvec, dn, n)
        else:
            for i in range(3):
                tmp[i] = -S[i]
                for col in range(n):
                    neg[i, col] = -dS[i, col]
            _unit(tmp, neg, nvec, dn, n)
        for i in range(3):
            absn[i] = fabs(nvec[i])
        axis = 2
        for i in (1, 0):
            if absn[i] < absn[axis]:
                axis = i
        for i in range(3):
            tmp[i] = 1.0 if i == axis else 0.0
        _cross(tmp, nvec, traw)
        for col in range(n):
            for i in range(3):
                dtraw[i, col] = 0.0
        _skew_apply(tmp, dn, dtraw, 1.0, n)
        _unit(traw, dtraw, t, dt, n)
        _cross(nvec, t, o)
        for i in range(3):
            for col in range(n):
                do_[i, col] = 0.0
        _skew_apply(nvec, dt, do_, 1.0, n)
        _skew_apply(t, dn, do_, -1.0, n)

        # wrench on F (and reaction on G)
        for i in range(3):
            A[i] = pn * nvec[i] + pt * t[i] + po * o[i]
            for col in range(n):
                dA[i, col] = pn * dn[i, col] + pt * dt[i, col] + po * do_[i, col]
            dA[i, ipn] += nvec[i]
            dA[i, ipt] += t[i]
            dA[i, ipo] += o[i]
        df_dyn = dyn_index[bf]
        for i in range(3):
            rf[i] = a2[i] - pos[bf, i]
            for col in range(n):
                drf[i, col] = 0.0
            drf[i, ia2 + i] = 1.0
            if df_dyn >= 0:
                drf[i, 6 * df_dyn + i] -= h
        _cross(rf, A, mom)
        for i in range(3):
            mom[i] += pr * nvec[i]
            for col in range(n):
                dmom[i, col] = pr * dn[i, col]
            dmom[i, ipr] += nvec[i]
        _skew_apply(A, drf, dmom, -1.0, n)
        _skew_apply(rf, dA, dmom, 1.0, n)
        if df_dyn >= 0:
            for i in range(3):
                F[6 * df_dyn + i] += A[i]
                F[6 * df_dyn + 3 + i] += mom[i]
                for col in range(n):
                    J[6 * df_dyn + i, col] += dA[i, col]
                    J[6 * df_dyn + 3 + i, col] += dmom[i, col]

        # relative velocity at the contact point
        for i in range(3):
            vrel[i] = 0.0
            wrel[i] = 0.0
            for col in range(n):
                dvrel[i, col] = 0.0
                dwrel[i, col] = 0.0
        if df_dyn >= 0:
            for i in range(3):
                w[i] = z[6 * df_dyn + 3 + i]
            _cross(w, rf, tmp)
            for i in range(3):
                vrel[i] += z[6 * df_dyn + i] + tmp[i]
                dvrel[i, 6 * df_dyn + i] += 1.0
                wrel[i] += w[i]
                dwrel[i, 6 * df_dyn + 3 + i] += 1.0
            # −skew(rf) on the ω columns
            dvrel[0, 6 * df_dyn + 4] -= -rf[2]
            dvrel[0, 6 * df_dyn + 5] -= rf[1]
            dvrel[1, 6 * df_dyn + 3] -= rf[2]
            dvrel[1, 6 * df_dyn + 5] -= -rf[0]
            dvrel[2, 6 * df_dyn + 3] -= -rf[1]
            dvrel[2, 6 * df_dyn + 4] -= rf[0]
            _skew_apply(w, drf, dvrel, 1.0, n)
        dg_dyn = dyn_index[bg]
        if dg_dyn >= 0:
            for i in range(3):
                rg[i] = a2[i] - pos[bg, i]
                for col in range(n):
                    drg[i, col] = 0.0
                drg[i, ia2 + i] = 1.0
                drg[i, 6 * dg_dyn + i] -= h
            _cross(rg, A, mom)
            for i in range(3):
                mom[i] += pr * nvec[i]
                for col in range(n):
                    dmom[i, col] = pr * dn[i, col]
                dmom[i, ipr] += nvec[i]
            _skew_apply(A, drg, dmom, -1.0, n)
            _skew_apply(rg, dA, dmom, 1.0, n)
            for i in range(3):
                F[6 * dg_dyn + i] -= A[i]
                F[6 * dg_dyn + 3 + i] -= mom[i]
                for col in range(n):
                    J[6 * dg_dyn + i, col] -= dA[i, col]
                    J[6 * dg_dyn + 3 + i, col] -= dmom[i, col]
            for i in range(3):
                w[i] = z[6 * dg_dyn + 3 + i]
            _cross(w, rg, tmp)
            for i in range(3):
                vrel[i] -= z[6 * dg_dyn + i] + tmp[i]
                dvrel[i, 6 * dg_dyn + i] -= 1.0
                wrel[i] -= w[i]
                dwrel[i, 6 * dg_dyn + 3 + i] -= 1.0
            dvrel[0, 6 * dg_dyn + 4] += -rg[2]
            dvrel[0, 6 * dg_dyn + 5] += rg[1]
            dvrel[1, 6 * dg_dyn + 3] += rg[2]
            dvrel[1, 6 * dg_dyn + 5] += -rg[0]
            dvrel[2, 6 * dg_dyn + 3] += -rg[1]
            dvrel[2, 6 * dg_dyn + 4] += rg[0]
            _skew_apply(w, drg, dvrel, -1.0, n)

        vt = _dot(t, vrel)
        vo = _dot(o, vrel)
        vr = _dot(nvec, wrel)

        # friction: Fritz-John equalities and ellipsoid slack
        for row in range(3):
            if row == 0:
                e, vel, p, ip = et, vt, pt, ipt
            elif row == 1:
                e, vel, p, ip = eo, vo, po, ipo
            else:
                e, vel, p, ip = er, vr, pr, ipr
            F[ie + 6 + row] = e * e * mu * pn * vel + p * sg
            for col in range(n):
                if row == 0:
                    dvel_k = vrel[0] * dt[0, col] + vrel[1] * dt[1, col] + vrel[2] * dt[2, col] \
                        + t[0] * dvrel[0, col] + t[1] * dvrel[1, col] + t[2] * dvrel[2, col]
                elif row == 1:
                    dvel_k = vrel[0] * do_[0, col] + vrel[1] * do_[1, col] + vrel[2] * do_[2, col] \
                        + o[0] * dvrel[0, col] + o[1] * dvrel[1, col] + o[2] * dvrel[2, col]
                else:
                    dvel_k = wrel[0] * dn[0, col] + wrel[1] * dn[1, col] + wrel[2] * dn[2, col] \
                        + nvec[0] * dwrel[0, col] + nvec[1] * dwrel[1, col] + nvec[2] * dwrel[2, col]
                J[ie + 6 + row, col] = e * e * mu * pn * dvel_k
            J[ie + 6 + row, ipn] += e * e * mu * vel
            J[ie + 6 + row, ip] += sg
            J[ie + 6 + row, isg] += p
        F[isg] = (mu * pn) ** 2 - (pt / et) ** 2 - (po / eo) ** 2 - (pr / er) ** 2
        for col in range(n):
            J[isg, col] = 0.0
        J[isg, ipn] = 2 * mu * mu * pn
        J[isg, ipt] = -2 * pt / (et * et)
        J[isg, ipo] = -2 * po / (eo * eo)
        J[isg, ipr] = -2 * pr / (er * er)

    return F_arr, J_arr
