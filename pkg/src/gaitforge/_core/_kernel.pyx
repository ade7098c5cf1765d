# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled simulation kernels (hot twin of fallback.py).

Mirrors the NumPy fallback function-for-function; the 480 Hz integration
loop (substep_block) runs entirely in C.  Model sizes are bounded by the
MAX* constants below, which comfortably cover the planar biped.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, exp, fabs, hypot, isfinite, sin, sqrt

from gaitforge._core.fallback import SimulationDiverged

cnp.import_array()

BACKEND_NAME = "cython"

DEF MAXL = 16   # links
DEF MAXQ = 24   # generalized coordinates
DEF MAXM = 40   # muscles
DEF MAXP = 160  # waypoints
DEF MAXC = 16   # contact points


cdef struct Model:
    int nL
    int nJ
    int nq
    int nM
    int nC
    int nP
    int parent[MAXL]
    int jointq[MAXL]
    double anchor[MAXL][2]
    double mass[MAXL]
    double inertia[MAXL]
    double com[MAXL][2]
    signed char ang_mask[MAXL][MAXQ]
    double gravity
    int cp_link[MAXC]
    double cp_pos[MAXC][2]
    double kn, cn, mu, vslip, ground_y
    int wp_link[MAXP]
    double wp_pos[MAXP][2]
    int m_start[MAXM + 1]
    double f_max[MAXM]
    double f_pas[MAXM]
    double l_opt[MAXM]
    double v_max[MAXM]
    double p_thresh[MAXM]
    double fl_width[MAXM]
    double fv_k[MAXM]
    double fv_n[MAXM]
    double p_scale[MAXM]
    double p_exp[MAXM]
    signed char dldq_mask[MAXM][MAXQ]
    double kp[MAXQ]
    double kd[MAXQ]


cdef int _load(object pm, Model* m) except -1:
    cdef int i, k
    m.nL = pm.n_links
    m.nJ = pm.n_joints
    m.nq = pm.nq
    m.nM = pm.n_muscles
    m.nC = len(pm.cp_link)
    m.nP = len(pm.wp_link)
    if m.nL > MAXL or m.nq > MAXQ or m.nM > MAXM or m.nP > MAXP or m.nC > MAXC:
        raise ValueError("model exceeds compiled kernel size limits")
    cdef cnp.int32_t[:] parent = pm.parent
    cdef cnp.int32_t[:] jointq = pm.jointq
    cdef double[:, :] anchor = pm.anchor
    cdef double[:] mass = pm.mass
    cdef double[:] inertia = pm.inertia
    cdef double[:, :] com = pm.com
    cdef signed char[:, :] ang_mask = pm.ang_mask
    for i in range(m.nL):
        m.parent[i] = parent[i]
        m.jointq[i] = jointq[i]
        m.anchor[i][0] = anchor[i, 0]
        m.anchor[i][1] = anchor[i, 1]
        m.mass[i] = mass[i]
        m.inertia[i] = inertia[i]
        m.com[i][0] = com[i, 0]
        m.com[i][1] = com[i, 1]
        for k in range(m.nq):
            m.ang_mask[i][k] = ang_mask[i, k]
    m.gravity = pm.gravity
    cdef cnp.int32_t[:] cp_link = pm.cp_link
    cdef double[:, :] cp_pos = pm.cp_pos
    for i in range(m.nC):
        m.cp_link[i] = cp_link[i]
        m.cp_pos[i][0] = cp_pos[i, 0]
        m.cp_pos[i][1] = cp_pos[i, 1]
    m.kn = pm.kn
    m.cn = pm.cn
    m.mu = pm.mu
    m.vslip = pm.vslip
    m.ground_y = pm.ground_y
    cdef cnp.int32_t[:] wp_link = pm.wp_link
    cdef double[:, :] wp_pos = pm.wp_pos
    for i in range(m.nP):
        m.wp_link[i] = wp_link[i]
        m.wp_pos[i][0] = wp_pos[i, 0]
        m.wp_pos[i][1] = wp_pos[i, 1]
    cdef cnp.int32_t[:] m_start = pm.m_start
    cdef double[:] f_max = pm.f_max
    cdef double[:] f_pas = pm.f_pas
    cdef double[:] l_opt = pm.l_opt
    cdef double[:] v_max = pm.v_max
    cdef double[:] p_thresh = pm.p_thresh
    cdef double[:] fl_width = pm.fl_width
    cdef double[:] fv_k = pm.fv_k
    cdef double[:] fv_n = pm.fv_n
    cdef double[:] p_scale = pm.p_scale
    cdef double[:] p_exp = pm.p_exp
    cdef signed char[:, :] dldq_mask = pm.dldq_mask
    for i in range(m.nM):
        m.m_start[i] = m_start[i]
        m.f_max[i] = f_max[i]
        m.f_pas[i] = f_pas[i]
        m.l_opt[i] = l_opt[i]
        m.v_max[i] = v_max[i]
        m.p_thresh[i] = p_thresh[i]
        m.fl_width[i] = fl_width[i]
        m.fv_k[i] = fv_k[i]
        m.fv_n[i] = fv_n[i]
        m.p_scale[i] = p_scale[i]
        m.p_exp[i] = p_exp[i]
        for k in range(m.nq):
            m.dldq_mask[i][k] = dldq_mask[i, k]
    m.m_start[m.nM] = m_start[m.nM]
    cdef double[:] kp = pm.kp
    cdef double[:] kd = pm.kd
    for i in range(m.nJ):
        m.kp[i] = kp[i]
        m.kd[i] = kd[i]
    return 0


# -- forward kinematics (C core) ----------------------------------------------


cdef void _fk(Model* m, double* q, double* qdot,
              double origins[MAXL][2], double* thetas,
              double v_origins[MAXL][2], double* omegas) noexcept nogil:
    cdef int i, p, jq
    cdef double c, s, wax, way
    origins[0][0] = q[0]
    origins[0][1] = q[1]
    thetas[0] = q[2]
    v_origins[0][0] = qdot[0]
    v_origins[0][1] = qdot[1]
    omegas[0] = qdot[2]
    for i in range(1, m.nL):
        p = m.parent[i]
        jq = m.jointq[i]
        c = cos(thetas[p])
        s = sin(thetas[p])
        wax = c * m.anchor[i][0] - s * m.anchor[i][1]
        way = s * m.anchor[i][0] + c * m.anchor[i][1]
        origins[i][0] = origins[p][0] + wax
        origins[i][1] = origins[p][1] + way
        thetas[i] = thetas[p] + q[jq]
        v_origins[i][0] = v_origins[p][0] - omegas[p] * way
        v_origins[i][1] = v_origins[p][1] + omegas[p] * wax
        omegas[i] = omegas[p] + qdot[jq]


cdef void _pivots(Model* m, double* q, double origins[MAXL][2], double piv[MAXQ][2]) noexcept nogil:
    cdef int i, jq
    piv[2][0] = q[0]
    piv[2][1] = q[1]
    for i in range(m.nL):
        jq = m.jointq[i]
        if jq >= 0:
            piv[jq][0] = origins[i][0]
            piv[jq][1] = origins[i][1]


cdef void _com_world(Model* m, double origins[MAXL][2], double* thetas,
                     double com_w[MAXL][2]) noexcept nogil:
    cdef int i
    cdef double c, s
    for i in range(m.nL):
        c = cos(thetas[i])
        s = sin(thetas[i])
        com_w[i][0] = origins[i][0] + c * m.com[i][0] - s * m.com[i][1]
        com_w[i][1] = origins[i][1] + s * m.com[i][0] + c * m.com[i][1]


cdef void _mass_matrix_c(Model* m, double* q, double M[MAXQ][MAXQ]) noexcept nogil:
    cdef double origins[MAXL][2]
    cdef double thetas[MAXL]
    cdef double v0[MAXL][2]
    cdef double om[MAXL]
    cdef double piv[MAXQ][2]
    cdef double com_w[MAXL][2]
    cdef double J[2][MAXQ]
    cdef double zero[MAXQ]
    cdef int i, k, r, cidx
    cdef double mi, Ii
    for k in range(m.nq):
        zero[k] = 0.0
    _fk(m, q, zero, origins, thetas, v0, om)
    _pivots(m, q, origins, piv)
    _com_world(m, origins, thetas, com_w)
    for r in range(m.nq):
        for cidx in range(m.nq):
            M[r][cidx] = 0.0
    for i in range(m.nL):
        mi = m.mass[i]
        Ii = m.inertia[i]
        J[0][0] = 1.0
        J[1][0] = 0.0
        J[0][1] = 0.0
        J[1][1] = 1.0
        for k in range(2, m.nq):
            if m.ang_mask[i][k]:
                J[0][k] = -(com_w[i][1] - piv[k][1])
                J[1][k] = com_w[i][0] - piv[k][0]
            else:
                J[0][k] = 0.0
                J[1][k] = 0.0
        for r in range(m.nq):
            for cidx in range(r, m.nq):
                M[r][cidx] += mi * (J[0][r] * J[0][cidx] + J[1][r] * J[1][cidx])
        for r in range(2, m.nq):
            if m.ang_mask[i][r]:
                for cidx in range(r, m.nq):
                    if m.ang_mask[i][cidx]:
                        M[r][cidx] += Ii
    for r in range(m.nq):
        for cidx in range(r):
            M[r][cidx] = M[cidx][r]


cdef void _bias_c(Model* m, double* q, double* qdot, double* out) noexcept nogil:
    cdef double origins[MAXL][2]
    cdef double thetas[MAXL]
    cdef double v0[MAXL][2]
    cdef double om[MAXL]
    cdef double piv[MAXQ][2]
    cdef double acc[MAXL][2]
    cdef double com_w[MAXL][2]
    cdef int i, p, k
    cdef double c, s, wax, way, rx, ry, fx, fy, ax, ay
    _fk(m, q, qdot, origins, thetas, v0, om)
    _pivots(m, q, origins, piv)
    acc[0][0] = 0.0
    acc[0][1] = 0.0
    for i in range(1, m.nL):
        p = m.parent[i]
        c = cos(thetas[p])
        s = sin(thetas[p])
        wax = c * m.anchor[i][0] - s * m.anchor[i][1]
        way = s * m.anchor[i][0] + c * m.anchor[i][1]
        acc[i][0] = acc[p][0] - wax * om[p] * om[p]
        acc[i][1] = acc[p][1] - way * om[p] * om[p]
    for k in range(m.nq):
        out[k] = 0.0
    for i in range(m.nL):
        c = cos(thetas[i])
        s = sin(thetas[i])
        rx = c * m.com[i][0] - s * m.com[i][1]
        ry = s * m.com[i][0] + c * m.com[i][1]
        com_w[i][0] = origins[i][0] + rx
        com_w[i][1] = origins[i][1] + ry
        ax = acc[i][0] - rx * om[i] * om[i]
        ay = acc[i][1] - ry * om[i] * om[i]
        fx = m.mass[i] * ax
        fy = m.mass[i] * ay - m.mass[i] * m.gravity
        out[0] += fx
        out[1] += fy
        for k in range(2, m.nq):
            if m.ang_mask[i][k]:
                out[k] += -(com_w[i][1] - piv[k][1]) * fx + (com_w[i][0] - piv[k][0]) * fy


cdef void _contact_c(Model* m, double* q, double* qdot, double* tau, double forces[MAXC][2]) noexcept nogil:
    cdef double origins[MAXL][2]
    cdef double thetas[MAXL]
    cdef double v0[MAXL][2]
    cdef double om[MAXL]
    cdef double piv[MAXQ][2]
    cdef int k, link, j
    cdef double c, s, rx, ry, px, py, pen, vx, vy, fn, slip, ft
    _fk(m, q, qdot, origins, thetas, v0, om)
    _pivots(m, q, origins, piv)
    for j in range(m.nq):
        tau[j] = 0.0
    for k in range(m.nC):
        forces[k][0] = 0.0
        forces[k][1] = 0.0
        link = m.cp_link[k]
        c = cos(thetas[link])
        s = sin(thetas[link])
        rx = c * m.cp_pos[k][0] - s * m.cp_pos[k][1]
        ry = s * m.cp_pos[k][0] + c * m.cp_pos[k][1]
        px = origins[link][0] + rx
        py = origins[link][1] + ry
        pen = m.ground_y - py
        if pen <= 0.0:
            continue
        vx = v0[link][0] - om[link] * ry
        vy = v0[link][1] + om[link] * rx
        fn = m.kn * pen - m.cn * vy
        if fn < 0.0:
            fn = 0.0
        slip = vx / m.vslip
        if slip > 1.0:
            slip = 1.0
        elif slip < -1.0:
            slip = -1.0
        ft = -m.mu * fn * slip
        forces[k][0] = ft
        forces[k][1] = fn
        tau[0] += ft
        tau[1] += fn
        for j in range(2, m.nq):
            if m.ang_mask[link][j]:
                tau[j] += -(py - piv[j][1]) * ft + (px - piv[j][0]) * fn


cdef void _muscle_geom_c(Model* m, double* q, double* qdot,
                         double* lengths, double* ldot,
                         double dldq[MAXM][MAXQ]) noexcept nogil:
    cdef double origins[MAXL][2]
    cdef double thetas[MAXL]
    cdef double v0[MAXL][2]
    cdef double om[MAXL]
    cdef double piv[MAXQ][2]
    cdef double pw[MAXP][2]
    cdef int mi, a, b, k, link
    cdef double c, s, segx, segy, seg_len, ux, uy, dax, day, dbx, dby, ja, jb
    _fk(m, q, qdot, origins, thetas, v0, om)
    _pivots(m, q, origins, piv)
    for a in range(m.nP):
        link = m.wp_link[a]
        c = cos(thetas[link])
        s = sin(thetas[link])
        pw[a][0] = origins[link][0] + c * m.wp_pos[a][0] - s * m.wp_pos[a][1]
        pw[a][1] = origins[link][1] + s * m.wp_pos[a][0] + c * m.wp_pos[a][1]
    for mi in range(m.nM):
        lengths[mi] = 0.0
        for k in range(m.nq):
            dldq[mi][k] = 0.0
        for a in range(m.m_start[mi], m.m_start[mi + 1] - 1):
            b = a + 1
            segx = pw[b][0] - pw[a][0]
            segy = pw[b][1] - pw[a][1]
            seg_len = hypot(segx, segy)
            lengths[mi] += seg_len
            ux = segx / seg_len
            uy = segy / seg_len
            for k in range(3, m.nq):
                if not m.dldq_mask[mi][k]:
                    continue
                if m.ang_mask[m.wp_link[a]][k]:
                    dax = -(pw[a][1] - piv[k][1])
                    day = pw[a][0] - piv[k][0]
                else:
                    dax = 0.0
                    day = 0.0
                if m.ang_mask[m.wp_link[b]][k]:
                    dbx = -(pw[b][1] - piv[k][1])
                    dby = pw[b][0] - piv[k][0]
                else:
                    dbx = 0.0
                    dby = 0.0
                dldq[mi][k] += ux * (dbx - dax) + uy * (dby - day)
        ldot[mi] = 0.0
        for k in range(3, m.nq):
            ldot[mi] += dldq[mi][k] * qdot[k]


cdef void _hill_c(Model* m, double* lengths, double* ldot, double* g_c, double* g_p) noexcept nogil:
    cdef int i
    cdef double l, v, fl, fv, over
    for i in range(m.nM):
        l = lengths[i] / m.l_opt[i]
        v = ldot[i] / (m.l_opt[i] * m.v_max[i])
        fl = exp(-((l - 1.0) * (l - 1.0)) / m.fl_width[i])
        if v <= 0.0:
            fv = (1.0 + v) / (1.0 - v / m.fv_k[i])
            if fv < 0.0:
                fv = 0.0
        else:
            fv = (m.fv_n[i] * v + m.fv_k[i]) / (v + m.fv_k[i])
        g_c[i] = fl * fv
        over = l - m.p_thresh[i]
        if over > 0.0:
            g_p[i] = m.p_scale[i] * (exp(m.p_exp[i] * over) - 1.0)
        else:
            g_p[i] = 0.0


cdef int _chol_solve(int n, double A[MAXQ][MAXQ], double* b, double* x) noexcept nogil:
    """Solves A x = b for SPD A in place; returns 0 on success."""
    cdef double L[MAXQ][MAXQ]
    cdef double y[MAXQ]
    cdef int i, j, k
    cdef double s
    for i in range(n):
        for j in range(i + 1):
            s = A[i][j]
            for k in range(j):
                s -= L[i][k] * L[j][k]
            if i == j:
                if s <= 0.0 or not isfinite(s):
                    return -1
                L[i][i] = sqrt(s)
            else:
                L[i][j] = s / L[j][j]
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i][k] * y[k]
        y[i] = s / L[i][i]
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k][i] * x[k]
        x[i] = s / L[i][i]
    return 0


cdef void _wrap_joints_c(Model* m, double* q) noexcept nogil:
    cdef int k
    cdef double twopi = 6.283185307179586476925286766559
    cdef double pi = 3.1415926535897932384626433832795
    cdef double x
    for k in range(3, m.nq):
        x = q[k]
        if x > pi or x <= -pi:
            x = x - twopi * ((x + pi) // twopi)
            if x <= -pi:
                x = pi
            q[k] = x


cdef int _step_c(Model* m, double* q, double* qdot, double* tau, double dt,
                 double forces[MAXC][2]) noexcept nogil:
    """One semi-implicit Euler step; returns -1 on divergence."""
    cdef double tau_c[MAXQ]
    cdef double h[MAXQ]
    cdef double rhs[MAXQ]
    cdef double qdd[MAXQ]
    cdef double M[MAXQ][MAXQ]
    cdef int k
    _contact_c(m, q, qdot, tau_c, forces)
    _bias_c(m, q, qdot, h)
    _mass_matrix_c(m, q, M)
    for k in range(m.nq):
        rhs[k] = tau[k] + tau_c[k] - h[k]
    if _chol_solve(m.nq, M, rhs, qdd) != 0:
        return -1
    for k in range(m.nq):
        if not isfinite(qdd[k]):
            return -1
    for k in range(m.nq):
        qdot[k] += dt * qdd[k]
        q[k] += dt * qdot[k]
    _wrap_joints_c(m, q)
    return 0


# -- Python-visible API (mirrors fallback) ------------------------------------


def link_kinematics(pm, q, qdot):
    cdef Model m
    _load(pm, &m)
    cdef double cq[MAXQ]
    cdef double cqd[MAXQ]
    cdef double[:] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef double[:] qdv = np.ascontiguousarray(qdot, dtype=np.float64)
    cdef int k
    for k in range(m.nq):
        cq[k] = qv[k]
        cqd[k] = qdv[k]
    cdef double origins[MAXL][2]
    cdef double thetas[MAXL]
    cdef double v0[MAXL][2]
    cdef double om[MAXL]
    _fk(&m, cq, cqd, origins, thetas, v0, om)
    o = np.empty((m.nL, 2))
    t = np.empty(m.nL)
    v = np.empty((m.nL, 2))
    w = np.empty(m.nL)
    for k in range(m.nL):
        o[k, 0] = origins[k][0]
        o[k, 1] = origins[k][1]
        t[k] = thetas[k]
        v[k, 0] = v0[k][0]
        v[k, 1] = v0[k][1]
        w[k] = om[k]
    return o, t, v, w


def point_state(pm, q, qdot, int link, local):
    o, t, v, w = link_kinematics(pm, q, qdot)
    lx, ly = float(local[0]), float(local[1])
    c, s = np.cos(t[link]), np.sin(t[link])
    rx = c * lx - s * ly
    ry = s * lx + c * ly
    p = o[link] + np.array([rx, ry])
    vel = v[link] + w[link] * np.array([-ry, rx])
    return p, vel


def point_jacobian(pm, q, int link, local):
    cdef Model m
    _load(pm, &m)
    q = np.ascontiguousarray(q, dtype=np.float64)
    o, t, _, _ = link_kinematics(pm, q, np.zeros(m.nq))
    piv = np.zeros((m.nq, 2))
    piv[2] = q[0:2]
    for i in range(m.nL):
        if m.jointq[i] >= 0:
            piv[m.jointq[i]] = o[i]
    lx, ly = float(local[0]), float(local[1])
    c, s = np.cos(t[link]), np.sin(t[link])
    p = o[link] + np.array([c * lx - s * ly, s * lx + c * ly])
    J = np.zeros((2, m.nq))
    J[0, 0] = 1.0
    J[1, 1] = 1.0
    for k in range(2, m.nq):
        if m.ang_mask[link][k]:
            d = p - piv[k]
            J[0, k] = -d[1]
            J[1, k] = d[0]
    return J


def link_com_states(pm, q, qdot):
    o, t, v, w = link_kinematics(pm, q, qdot)
    c, s = np.cos(t), np.sin(t)
    com = np.asarray(pm.com)
    rx = c * com[:, 0] - s * com[:, 1]
    ry = s * com[:, 0] + c * com[:, 1]
    com_w = o + np.stack([rx, ry], axis=1)
    v_com = v + w[:, None] * np.stack([-ry, rx], axis=1)
    return com_w, v_com, t, w


def mass_matrix(pm, q):
    cdef Model m
    _load(pm, &m)
    cdef double cq[MAXQ]
    cdef double[:] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef int k
    for k in range(m.nq):
        cq[k] = qv[k]
    cdef double M[MAXQ][MAXQ]
    _mass_matrix_c(&m, cq, M)
    out = np.empty((m.nq, m.nq))
    cdef int r, cidx
    for r in range(m.nq):
        for cidx in range(m.nq):
            out[r, cidx] = M[r][cidx]
    return out


def bias_forces(pm, q, qdot):
    cdef Model m
    _load(pm, &m)
    cdef double cq[MAXQ]
    cdef double cqd[MAXQ]
    cdef double ob[MAXQ]
    cdef double[:] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef double[:] qdv = np.ascontiguousarray(qdot, dtype=np.float64)
    cdef int k
    for k in range(m.nq):
        cq[k] = qv[k]
        cqd[k] = qdv[k]
    _bias_c(&m, cq, cqd, ob)
    out = np.empty(m.nq)
    for k in range(m.nq):
        out[k] = ob[k]
    return out


def contact_forces(pm, q, qdot):
    cdef Model m
    _load(pm, &m)
    cdef double cq[MAXQ]
    cdef double cqd[MAXQ]
    cdef double tau[MAXQ]
    cdef double forces[MAXC][2]
    cdef double[:] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef double[:] qdv = np.ascontiguousarray(qdot, dtype=np.float64)
    cdef int k
    for k in range(m.nq):
        cq[k] = qv[k]
        cqd[k] = qdv[k]
    _contact_c(&m, cq, cqd, tau, forces)
    t = np.empty(m.nq)
    f = np.empty((m.nC, 2))
    for k in range(m.nq):
        t[k] = tau[k]
    for k in range(m.nC):
        f[k, 0] = forces[k][0]
        f[k, 1] = forces[k][1]
    return t, f


def muscle_geometry(pm, q, qdot):
    cdef Model m
    _load(pm, &m)
    cdef double cq[MAXQ]
    cdef double cqd[MAXQ]
    cdef double[:] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef double[:] qdv = np.ascontiguousarray(qdot, dtype=np.float64)
    cdef int k, mi
    for k in range(m.nq):
        cq[k] = qv[k]
        cqd[k] = qdv[k]
    cdef double lengths[MAXM]
    cdef double ldot[MAXM]
    cdef double dldq[MAXM][MAXQ]
    _muscle_geom_c(&m, cq, cqd, lengths, ldot, dldq)
    L = np.empty(m.nM)
    Ld = np.empty(m.nM)
    D = np.zeros((m.nM, m.nq))
    for mi in range(m.nM):
        L[mi] = lengths[mi]
        Ld[mi] = ldot[mi]
        for k in range(m.nq):
            D[mi, k] = dldq[mi][k]
    return L, Ld, D


def hill_curves(pm, lengths, ldot):
    cdef Model m
    _load(pm, &m)
    cdef double cl[MAXM]
    cdef double cld[MAXM]
    cdef double gc[MAXM]
    cdef double gp[MAXM]
    cdef double[:] lv = np.ascontiguousarray(lengths, dtype=np.float64)
    cdef double[:] ldv = np.ascontiguousarray(ldot, dtype=np.float64)
    cdef int i
    for i in range(m.nM):
        cl[i] = lv[i]
        cld[i] = ldv[i]
    _hill_c(&m, cl, cld, gc, gp)
    g_c = np.empty(m.nM)
    g_p = np.empty(m.nM)
    for i in range(m.nM):
        g_c[i] = gc[i]
        g_p[i] = gp[i]
    return g_c, g_p


def muscle_torque_terms(pm, q, qdot):
    lengths, ldot, dldq = muscle_geometry(pm, q, qdot)
    g_c, g_p = hill_curves(pm, lengths, ldot)
    J_c = -dldq.T * (np.asarray(pm.f_max) * g_c)[None, :]
    F_p = -(dldq.T * (np.asarray(pm.f_pas) * g_p)[None, :]).sum(axis=1)
    return J_c, F_p, lengths, ldot, dldq


def spd_tau(pm, q, qdot, target, double dt):
    cdef Model m
    _load(pm, &m)
    q = np.ascontiguousarray(q, dtype=np.float64)
    qdot = np.ascontiguousarray(qdot, dtype=np.float64)
    target = np.ascontiguousarray(target, dtype=np.float64)
    tau = np.zeros(m.nq)
    kp = np.asarray(pm.kp)
    kd = np.asarray(pm.kd)
    tau[3:] = -kp * (q[3:] + qdot[3:] * dt - target) - kd * qdot[3:]
    return tau


def step(pm, q, qdot, tau, double dt):
    cdef Model m
    _load(pm, &m)
    cdef double cq[MAXQ]
    cdef double cqd[MAXQ]
    cdef double ct[MAXQ]
    cdef double forces[MAXC][2]
    cdef double[:] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef double[:] qdv = np.ascontiguousarray(qdot, dtype=np.float64)
    cdef double[:] tv = np.ascontiguousarray(tau, dtype=np.float64)
    cdef int k
    for k in range(m.nq):
        cq[k] = qv[k]
        cqd[k] = qdv[k]
        ct[k] = tv[k]
    if _step_c(&m, cq, cqd, ct, dt, forces) != 0:
        raise SimulationDiverged("non-finite joint acceleration")
    qo = np.empty(m.nq)
    qdo = np.empty(m.nq)
    f = np.empty((m.nC, 2))
    for k in range(m.nq):
        qo[k] = cq[k]
        qdo[k] = cqd[k]
    for k in range(m.nC):
        f[k, 0] = forces[k][0]
        f[k, 1] = forces[k][1]
    return qo, qdo, f


def substep_block(pm, q, qdot, activations, int n_sub, double dt):
    """n_sub muscle-driven steps with held activations (the hot loop)."""
    cdef Model m
    _load(pm, &m)
    cdef double cq[MAXQ]
    cdef double cqd[MAXQ]
    cdef double act[MAXM]
    cdef double[:] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef double[:] qdv = np.ascontiguousarray(qdot, dtype=np.float64)
    cdef double[:] av = np.ascontiguousarray(activations, dtype=np.float64)
    cdef int k, mi, sub, jq
    for k in range(m.nq):
        cq[k] = qv[k]
        cqd[k] = qdv[k]
    cdef double act_cost = 0.0
    for mi in range(m.nM):
        act[mi] = av[mi]
        act_cost += av[mi] * av[mi]
    normals = np.empty((n_sub, m.nC))
    cdef double[:, ::1] normals_v = normals
    cdef double lengths[MAXM]
    cdef double ldot[MAXM]
    cdef double dldq[MAXM][MAXQ]
    cdef double gc[MAXM]
    cdef double gp[MAXM]
    cdef double tau[MAXQ]
    cdef double forces[MAXC][2]
    cdef double fm
    cdef int ok = 0
    with nogil:
        for sub in range(n_sub):
            _muscle_geom_c(&m, cq, cqd, lengths, ldot, dldq)
            _hill_c(&m, lengths, ldot, gc, gp)
            for k in range(m.nq):
                tau[k] = 0.0
            for mi in range(m.nM):
                fm = m.f_max[mi] * gc[mi] * act[mi] + m.f_pas[mi] * gp[mi]
                for k in range(3, m.nq):
                    if m.dldq_mask[mi][k]:
                        tau[k] -= dldq[mi][k] * fm
            if _step_c(&m, cq, cqd, tau, dt, forces) != 0:
                ok = -1
                break
            for k in range(m.nC):
                normals_v[sub, k] = forces[k][1]
    if ok != 0:
        raise SimulationDiverged("non-finite joint acceleration")
    qo = np.empty(m.nq)
    qdo = np.empty(m.nq)
    for k in range(m.nq):
        qo[k] = cq[k]
        qdo[k] = cqd[k]
    return qo, qdo, normals, act_cost


def com_state(pm, q, qdot):
    com_w, v_com, _, _ = link_com_states(pm, q, qdot)
    mass = np.asarray(pm.mass)
    total = mass.sum()
    return (mass[:, None] * com_w).sum(axis=0) / total, (mass[:, None] * v_com).sum(axis=0) / total


def kinetic_energy(pm, q, qdot):
    _, v_com, _, omegas = link_com_states(pm, q, qdot)
    mass = np.asarray(pm.mass)
    inertia = np.asarray(pm.inertia)
    return float(0.5 * np.sum(mass * (v_com**2).sum(axis=1)) + 0.5 * np.sum(inertia * omegas**2))


def potential_energy(pm, q):
    com_w, _, _, _ = link_com_states(pm, q, np.zeros(pm.nq))
    mass = np.asarray(pm.mass)
    return float(-pm.gravity * np.sum(mass * com_w[:, 1]))
