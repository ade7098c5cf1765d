"""Packs a model into flat arrays consumed by both simulation backends."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import ModelSpec, ScaledModel, ModelError


@dataclass
class PackedModel:
    """Flat-array view of a model for the numeric kernels.

    Generalized coordinates: q = [root_x, root_y, root_angle, joint angles...]
    in the order the joints appear in the model file.  Links are ordered so
    a parent always precedes its children.
    """

    n_links: int
    n_joints: int
    nq: int
    parent: np.ndarray  # (nL,) int32, -1 for root
    jointq: np.ndarray  # (nL,) int32, q index driving the link, -1 for root
    anchor: np.ndarray  # (nL,2) joint anchor in parent frame (root row unused)
    mass: np.ndarray  # (nL,)
    inertia: np.ndarray  # (nL,)
    com: np.ndarray  # (nL,2)
    ang_mask: np.ndarray  # (nL,nq) int8: q index affects link pose
    gravity: float
    # contact
    cp_link: np.ndarray  # (nC,) int32
    cp_pos: np.ndarray  # (nC,2)
    kn: float
    cn: float
    mu: float
    vslip: float
    ground_y: float
    # muscles
    n_muscles: int
    wp_link: np.ndarray  # (nP,) int32
    wp_pos: np.ndarray  # (nP,2)
    m_start: np.ndarray  # (nM+1,) int32 waypoint ranges
    f_max: np.ndarray
    f_pas: np.ndarray
    l_opt: np.ndarray
    v_max: np.ndarray
    p_thresh: np.ndarray
    fl_width: np.ndarray
    fv_k: np.ndarray
    fv_n: np.ndarray
    p_scale: np.ndarray
    p_exp: np.ndarray
    # activation packing pattern: (joint index 0..nJ-1, muscle index) pairs
    pat_joint: np.ndarray  # (nZ,) int32
    pat_muscle: np.ndarray  # (nZ,) int32
    dldq_mask: np.ndarray  # (nM, nq) int8, structurally nonzero length-Jacobian entries
    # pd gains over actuated joints
    kp: np.ndarray  # (nJ,)
    kd: np.ndarray  # (nJ,)
    link_names: tuple[str, ...] = ()
    joint_names: tuple[str, ...] = ()
    muscle_names: tuple[str, ...] = ()
    contact_names: tuple[str, ...] = ()


def pack_model(model) -> PackedModel:
    """Build a PackedModel from a ModelSpec or ScaledModel."""
    if isinstance(model, ScaledModel):
        spec = model.spec
    elif isinstance(model, ModelSpec):
        spec = model
    else:
        raise TypeError("expected ModelSpec or ScaledModel")

    sk = spec.skeleton
    order = [sk.root]
    joints_by_parent: dict[str, list] = {}
    for j in sk.joints:
        joints_by_parent.setdefault(j.parent, []).append(j)
    cursor = 0
    while cursor < len(order):
        for j in joints_by_parent.get(order[cursor], []):
            order.append(j.child)
        cursor += 1
    if len(order) != len(sk.links):
        raise ModelError("skeleton tree does not reach every link")

    lidx = {name: i for i, name in enumerate(order)}
    links = {l.name: l for l in sk.links}
    nL = len(order)
    joint_names = tuple(j.name for j in sk.joints)
    jidx = {name: i for i, name in enumerate(joint_names)}
    nJ = len(joint_names)
    nq = 3 + nJ

    parent = np.full(nL, -1, dtype=np.int32)
    jointq = np.full(nL, -1, dtype=np.int32)
    anchor = np.zeros((nL, 2))
    for j in sk.joints:
        c = lidx[j.child]
        parent[c] = lidx[j.parent]
        jointq[c] = 3 + jidx[j.name]
        anchor[c] = j.anchor

    mass = np.array([links[n].mass for n in order])
    inertia = np.array([links[n].inertia for n in order])
    com = np.array([links[n].com for n in order])

    ang_mask = np.zeros((nL, nq), dtype=np.int8)
    ang_mask[:, 2] = 1
    for i in range(nL):
        k = i
        while k != -1:
            if jointq[k] >= 0:
                ang_mask[i, jointq[k]] = 1
            k = parent[k]

    c = spec.contact
    cp_link = np.array([lidx[p.link] for p in c.points], dtype=np.int32)
    cp_pos = np.array([p.pos for p in c.points]) if c.points else np.zeros((0, 2))

    wp_link, wp_pos, m_start = [], [], [0]
    for m in spec.muscles:
        for wp in m.path:
            wp_link.append(lidx[wp.link])
            wp_pos.append(wp.pos)
        m_start.append(len(wp_link))

    pat_joint, pat_muscle = [], []
    dldq_mask = np.zeros((len(spec.muscles), nq), dtype=np.int8)
    for mi, m in enumerate(spec.muscles):
        for jname in m.joints:
            pat_joint.append(jidx[jname])
            pat_muscle.append(mi)
            dldq_mask[mi, 3 + jidx[jname]] = 1

    kp = np.zeros(nJ)
    kd = np.zeros(nJ)
    for name, p, d in zip(spec.pd.joints, spec.pd.kp, spec.pd.kd):
        kp[jidx[name]] = p
        kd[jidx[name]] = d

    hill = lambda attr: np.array([getattr(m.hill, attr) for m in spec.muscles])

    return PackedModel(
        n_links=nL,
        n_joints=nJ,
        nq=nq,
        parent=parent,
        jointq=jointq,
        anchor=anchor,
        mass=mass,
        inertia=inertia,
        com=com,
        ang_mask=ang_mask,
        gravity=spec.gravity,
        cp_link=cp_link,
        cp_pos=cp_pos,
        kn=c.normal_stiffness,
        cn=c.normal_damping,
        mu=c.friction,
        vslip=c.friction_smoothing,
        ground_y=c.ground_height,
        n_muscles=len(spec.muscles),
        wp_link=np.array(wp_link, dtype=np.int32),
        wp_pos=np.array(wp_pos) if wp_pos else np.zeros((0, 2)),
        m_start=np.array(m_start, dtype=np.int32),
        f_max=hill("f_max"),
        f_pas=hill("f_passive_max"),
        l_opt=hill("l_opt"),
        v_max=hill("v_max"),
        p_thresh=hill("passive_threshold"),
        fl_width=hill("fl_width"),
        fv_k=hill("fv_shorten"),
        fv_n=hill("fv_lengthen_max"),
        p_scale=hill("passive_scale"),
        p_exp=hill("passive_exponent"),
        pat_joint=np.array(pat_joint, dtype=np.int32),
        pat_muscle=np.array(pat_muscle, dtype=np.int32),
        dldq_mask=dldq_mask,
        kp=kp,
        kd=kd,
        link_names=tuple(order),
        joint_names=joint_names,
        muscle_names=tuple(m.name for m in spec.muscles),
        contact_names=tuple(p.name for p in c.points),
    )
