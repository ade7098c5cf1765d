"""Pure-NumPy simulation kernels (reference twin of the compiled core).

Each function mirrors one entry point of the Cython kernel.  The compiled
core is preferred at import time; this module keeps the package fully
functional without a compiler and doubles as the readable specification of
the kernel math.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "fallback"


class SimulationDiverged(RuntimeError):
    """Integration produced a non-finite acceleration."""


def _rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def link_kinematics(pm, q, qdot):
    """Forward kinematics of every link frame.

    Returns (origins (nL,2), thetas (nL,), v_origins (nL,2), omegas (nL,)).
    Links are in packed (parent-before-child) order.
    """
    nL = pm.n_links
    origins = np.zeros((nL, 2))
    thetas = np.zeros(nL)
    v_origins = np.zeros((nL, 2))
    omegas = np.zeros(nL)
    origins[0] = q[0:2]
    thetas[0] = q[2]
    v_origins[0] = qdot[0:2]
    omegas[0] = qdot[2]
    for i in range(1, nL):
        p = pm.parent[i]
        jq = pm.jointq[i]
        world_anchor = _rot(thetas[p]) @ pm.anchor[i]
        origins[i] = origins[p] + world_anchor
        thetas[i] = thetas[p] + q[jq]
        v_origins[i] = v_origins[p] + omegas[p] * np.array([-world_anchor[1], world_anchor[0]])
        omegas[i] = omegas[p] + qdot[jq]
    return origins, thetas, v_origins, omegas


def _pivots(pm, q, origins):
    """World position of each angular dof's rotation axis (cols 0..1 unused)."""
    piv = np.zeros((pm.nq, 2))
    piv[2] = q[0:2]
    for i in range(pm.n_links):
        jq = pm.jointq[i]
        if jq >= 0:
            piv[jq] = origins[i]
    return piv


def _point_jacobian_from(pm, link, p_world, pivots):
    J = np.zeros((2, pm.nq))
    J[0, 0] = 1.0
    J[1, 1] = 1.0
    mask = pm.ang_mask[link]
    for k in range(2, pm.nq):
        if mask[k]:
            d = p_world - pivots[k]
            J[0, k] = -d[1]
            J[1, k] = d[0]
    return J


def point_state(pm, q, qdot, link, local):
    """World position and velocity of a point fixed in a link frame."""
    origins, thetas, v_origins, omegas = link_kinematics(pm, q, qdot)
    r = _rot(thetas[link]) @ np.asarray(local, dtype=float)
    p = origins[link] + r
    v = v_origins[link] + omegas[link] * np.array([-r[1], r[0]])
    return p, v


def point_jacobian(pm, q, link, local):
    origins, thetas, _, _ = link_kinematics(pm, q, np.zeros(pm.nq))
    p = origins[link] + _rot(thetas[link]) @ np.asarray(local, dtype=float)
    return _point_jacobian_from(pm, link, p, _pivots(pm, q, origins))


def link_com_states(pm, q, qdot):
    """Per-link COM world positions and velocities, plus angles and rates."""
    origins, thetas, v_origins, omegas = link_kinematics(pm, q, qdot)
    c, s = np.cos(thetas), np.sin(thetas)
    rx = c * pm.com[:, 0] - s * pm.com[:, 1]
    ry = s * pm.com[:, 0] + c * pm.com[:, 1]
    com_w = origins + np.stack([rx, ry], axis=1)
    v_com = v_origins + omegas[:, None] * np.stack([-ry, rx], axis=1)
    return com_w, v_com, thetas, omegas


def _com_jacobians(pm, q):
    """Stacked COM point Jacobians (nL, 2, nq) plus helper FK products."""
    origins, thetas, _, _ = link_kinematics(pm, q, np.zeros(pm.nq))
    pivots = _pivots(pm, q, origins)
    c, s = np.cos(thetas), np.sin(thetas)
    rx = c * pm.com[:, 0] - s * pm.com[:, 1]
    ry = s * pm.com[:, 0] + c * pm.com[:, 1]
    com_w = origins + np.stack([rx, ry], axis=1)
    d = com_w[:, None, :] - pivots[None, :, :]  # (nL, nq, 2)
    mask = pm.ang_mask.astype(float)
    J = np.zeros((pm.n_links, 2, pm.nq))
    J[:, 0, :] = -d[:, :, 1] * mask
    J[:, 1, :] = d[:, :, 0] * mask
    J[:, 0, 0] = 1.0
    J[:, 1, 1] = 1.0
    return J, origins, thetas, com_w


def mass_matrix(pm, q):
    """Joint-space inertia matrix via COM point Jacobians (symmetric PD)."""
    J, _, _, _ = _com_jacobians(pm, q)
    mask = pm.ang_mask.astype(float)
    M = np.einsum("laq,lar,l->qr", J, J, pm.mass)
    M += np.einsum("lq,lr,l->qr", mask, mask, pm.inertia)
    return M


def bias_forces(pm, q, qdot):
    """Coriolis/centrifugal plus gravity generalized forces.

    Returns h with the convention M qddot = tau_total - h.
    """
    origins, thetas, v_origins, omegas = link_kinematics(pm, q, qdot)
    nL = pm.n_links
    acc = np.zeros((nL, 2))
    for i in range(1, nL):
        p = pm.parent[i]
        wa = _rot(thetas[p]) @ pm.anchor[i]
        acc[i] = acc[p] - wa * omegas[p] ** 2
    c, s = np.cos(thetas), np.sin(thetas)
    rx = c * pm.com[:, 0] - s * pm.com[:, 1]
    ry = s * pm.com[:, 0] + c * pm.com[:, 1]
    a_com = acc - np.stack([rx, ry], axis=1) * omegas[:, None] ** 2
    J, _, _, _ = _com_jacobians(pm, q)
    f = pm.mass[:, None] * a_com
    f[:, 1] -= pm.mass * pm.gravity  # subtract gravity force (0, m*g), g < 0
    return np.einsum("laq,la->q", J, f)


def contact_forces(pm, q, qdot):
    """Penalty ground contact with regularized Coulomb friction.

    Returns (generalized forces (nq,), per-point forces (nC,2)).
    """
    origins, thetas, v_origins, omegas = link_kinematics(pm, q, qdot)
    pivots = _pivots(pm, q, origins)
    tau = np.zeros(pm.nq)
    forces = np.zeros((len(pm.cp_link), 2))
    for k in range(len(pm.cp_link)):
        link = pm.cp_link[k]
        r = _rot(thetas[link]) @ pm.cp_pos[k]
        p = origins[link] + r
        pen = pm.ground_y - p[1]
        if pen <= 0.0:
            continue
        v = v_origins[link] + omegas[link] * np.array([-r[1], r[0]])
        fn = pm.kn * pen - pm.cn * v[1]
        if fn < 0.0:
            fn = 0.0
        slip = v[0] / pm.vslip
        if slip > 1.0:
            slip = 1.0
        elif slip < -1.0:
            slip = -1.0
        ft = -pm.mu * fn * slip
        F = np.array([ft, fn])
        forces[k] = F
        J = _point_jacobian_from(pm, link, p, pivots)
        tau += J.T @ F
    return tau, forces


def muscle_geometry(pm, q, qdot):
    """Muscle path lengths, lengthening rates, and length Jacobians.

    Returns (lengths (nM,) in m, ldot (nM,) in m/s, dldq (nM, nq) in m/rad).
    Root columns of dldq are identically zero (rigid-motion invariance).
    """
    origins, thetas, _, _ = link_kinematics(pm, q, qdot)
    pivots = _pivots(pm, q, origins)
    nP = len(pm.wp_link)
    pw = np.zeros((nP, 2))
    for p in range(nP):
        link = pm.wp_link[p]
        pw[p] = origins[link] + _rot(thetas[link]) @ pm.wp_pos[p]
    nM = pm.n_muscles
    lengths = np.zeros(nM)
    dldq = np.zeros((nM, pm.nq))
    for m in range(nM):
        s0, s1 = pm.m_start[m], pm.m_start[m + 1]
        for a in range(s0, s1 - 1):
            b = a + 1
            seg = pw[b] - pw[a]
            seg_len = float(np.hypot(seg[0], seg[1]))
            lengths[m] += seg_len
            u = seg / seg_len
            Ja = _point_jacobian_from(pm, pm.wp_link[a], pw[a], pivots)
            Jb = _point_jacobian_from(pm, pm.wp_link[b], pw[b], pivots)
            dldq[m] += u @ (Jb - Ja)
    # entries off the declared crossing pattern (and root columns) are
    # structurally zero by rigid-motion invariance; clear rounding residue
    dldq *= pm.dldq_mask
    ldot = dldq @ qdot
    return lengths, ldot, dldq


def hill_curves(pm, lengths, ldot):
    """Normalized contractile and passive force factors per muscle.

    Returns (g_c, g_p) evaluated at normalized length l = length/l_opt and
    normalized rate v = ldot/(l_opt * v_max).
    """
    l = np.asarray(lengths / pm.l_opt)
    v = np.asarray(ldot / (pm.l_opt * pm.v_max))
    fl = np.exp(-((l - 1.0) ** 2) / pm.fl_width)
    fv = np.empty_like(l)
    neg = v <= 0.0
    fv[neg] = np.maximum(0.0, (1.0 + v[neg]) / (1.0 - v[neg] / pm.fv_k[neg]))
    pos = ~neg
    fv[pos] = (pm.fv_n[pos] * v[pos] + pm.fv_k[pos]) / (v[pos] + pm.fv_k[pos])
    g_c = fl * fv
    over = np.maximum(l - pm.p_thresh, 0.0)
    g_p = pm.p_scale * (np.exp(pm.p_exp * over) - 1.0)
    return g_c, g_p


def muscle_torque_terms(pm, q, qdot):
    """Activation-to-torque map at the current state.

    Returns (J_c (nq, nM), F_p (nq,), lengths, ldot, dldq): joint torque is
    J_c @ A + F_p for activations A.
    """
    lengths, ldot, dldq = muscle_geometry(pm, q, qdot)
    g_c, g_p = hill_curves(pm, lengths, ldot)
    J_c = -dldq.T * (pm.f_max * g_c)[None, :]
    F_p = -(dldq.T * (pm.f_pas * g_p)[None, :]).sum(axis=1)
    return J_c, F_p, lengths, ldot, dldq


def spd_tau(pm, q, qdot, target, dt):
    """Stable PD torques on actuated joints (root rows zero)."""
    tau = np.zeros(pm.nq)
    qa = q[3:]
    qda = qdot[3:]
    tau[3:] = -pm.kp * (qa + qda * dt - target) - pm.kd * qda
    return tau


def _wrap_joint_angles(pm, q):
    # identity (bit-exact) for angles already in (-pi, pi]
    qj = q[3:]
    out = (qj > np.pi) | (qj <= -np.pi)
    if np.any(out):
        wrapped = np.mod(qj[out] + np.pi, 2.0 * np.pi) - np.pi
        wrapped[wrapped == -np.pi] = np.pi
        qj[out] = wrapped
        q[3:] = qj
    return q


def step(pm, q, qdot, tau, dt):
    """One semi-implicit Euler step under external generalized torques.

    Returns (q, qdot, point_forces).  Raises SimulationDiverged on
    non-finite acceleration.
    """
    tau_c, forces = contact_forces(pm, q, qdot)
    h = bias_forces(pm, q, qdot)
    M = mass_matrix(pm, q)
    qddot = np.linalg.solve(M, tau + tau_c - h)
    if not np.all(np.isfinite(qddot)):
        raise SimulationDiverged("non-finite joint acceleration")
    qdot = qdot + dt * qddot
    q = q + dt * qdot
    q = _wrap_joint_angles(pm, q)
    return q, qdot, forces


def substep_block(pm, q, qdot, activations, n_sub, dt):
    """Integrate n_sub physics steps with held muscle activations.

    Muscle forces are re-evaluated from the Hill model every substep; the
    activation vector stays fixed for the block.  Returns
    (q, qdot, normal_forces (n_sub, nC), act_cost) where act_cost is the
    squared-activation norm (constant over the block, returned for reward
    bookkeeping symmetry with the compiled kernel).
    """
    q = q.copy()
    qdot = qdot.copy()
    nC = len(pm.cp_link)
    normals = np.zeros((n_sub, nC))
    for k in range(n_sub):
        J_c, F_p, _, _, _ = muscle_torque_terms(pm, q, qdot)
        tau = J_c @ activations + F_p
        tau[0:3] = 0.0
        q, qdot, forces = step(pm, q, qdot, tau, dt)
        normals[k] = forces[:, 1]
    act_cost = float(activations @ activations)
    return q, qdot, normals, act_cost


def com_state(pm, q, qdot):
    """Whole-body center of mass position and velocity."""
    com_w, v_com, _, _ = link_com_states(pm, q, qdot)
    total = pm.mass.sum()
    return (pm.mass[:, None] * com_w).sum(axis=0) / total, (pm.mass[:, None] * v_com).sum(axis=0) / total


def kinetic_energy(pm, q, qdot):
    """Sum of per-link translational and rotational kinetic energy."""
    _, v_com, _, omegas = link_com_states(pm, q, qdot)
    return float(0.5 * np.sum(pm.mass * (v_com**2).sum(axis=1)) + 0.5 * np.sum(pm.inertia * omegas**2))


def potential_energy(pm, q):
    com_w, _, _, _ = link_com_states(pm, q, np.zeros(pm.nq))
    return float(-pm.gravity * np.sum(pm.mass * com_w[:, 1]))
