"""Planar articulated rigid-body dynamics with ground contact and stable PD.

Wraps the selected numeric backend (compiled kernel or NumPy fallback)
behind the simulation API used by the environment, tests and service.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _core
from ._core import SimulationDiverged, pack_model
from .model import ModelSpec, ScaledModel

PHYSICS_HZ = 480
CONTROL_HZ = 30
PHYSICS_DT = 1.0 / PHYSICS_HZ
CONTROL_DT = 1.0 / CONTROL_HZ
SUBSTEPS = PHYSICS_HZ // CONTROL_HZ


@dataclass
class DynState:
    """Generalized state: q = (root x, root y, root angle, 6 joint angles)."""

    q: np.ndarray
    qdot: np.ndarray
    time: float = 0.0

    def copy(self) -> "DynState":
        return DynState(self.q.copy(), self.qdot.copy(), self.time)


@dataclass
class HeelStrikeDetector:
    """Edge detector over recorded heel normal forces.

    Fires when a heel's normal force crosses the threshold upward after the
    heel spent at least `refractory` seconds below it.
    """

    threshold: float
    refractory: float = 0.1
    _airborne: dict = field(default_factory=dict)
    _contact: dict = field(default_factory=dict)

    def update(self, side: str, t: float, force: float, dt: float):
        """Feed one sample; returns an event time or None."""
        air = self._airborne.get(side, float("inf"))
        contact = self._contact.get(side, False)
        event = None
        if force >= self.threshold:
            if not contact and air >= self.refractory:
                event = t
            self._contact[side] = True
            self._airborne[side] = 0.0
        else:
            self._contact[side] = False
            self._airborne[side] = (0.0 if contact else air) + dt
        return event


def heel_strike_events(times, heel_normals, sides, threshold, refractory=0.1):
    """Scan recorded contact history for heel-strike events.

    times: (T,) sample times; heel_normals: (T, n_heels) normal forces;
    sides: names per column.  Returns a list of (side, time), ordered.
    """
    times = np.asarray(times, dtype=float)
    heel_normals = np.asarray(heel_normals, dtype=float)
    events = []
    dt = float(times[1] - times[0]) if len(times) > 1 else 0.0
    det = HeelStrikeDetector(threshold=threshold, refractory=refractory)
    # seed as "long airborne" so an initial contact is a strike
    for t_idx in range(len(times)):
        for c, side in enumerate(sides):
            ev = det.update(side, float(times[t_idx]), float(heel_normals[t_idx, c]), dt)
            if ev is not None:
                events.append((side, ev))
    events.sort(key=lambda e: e[1])
    return events


class Engine:
    """Simulation engine bound to one concrete (scaled) model."""

    def __init__(self, model: ScaledModel | ModelSpec, locked_root: bool = False):
        self.spec = model.spec if isinstance(model, ScaledModel) else model
        self.scaled = model if isinstance(model, ScaledModel) else None
        self.pm = pack_model(model)
        self.backend = _core.backend
        self.locked_root = locked_root
        self._head_link = self.pm.link_names.index(self.spec.skeleton.root)
        root_link = next(l for l in self.spec.skeleton.links if l.name == self.spec.skeleton.root)
        self._head_local = np.array([0.0, root_link.length])
        self.total_mass = float(self.pm.mass.sum())
        self.weight = self.total_mass * abs(self.pm.gravity)

    # -- kinematic queries ------------------------------------------------

    def forward_kinematics(self, q, qdot=None):
        """Per-link world poses and velocities.

        Returns dict arrays: origin (nL,2), theta (nL,), v_origin (nL,2),
        omega (nL,), com (nL,2), v_com (nL,2) in packed link order.
        """
        if qdot is None:
            qdot = np.zeros(self.pm.nq)
        origins, thetas, v_origins, omegas = self.backend.link_kinematics(self.pm, q, qdot)
        com_w, v_com, _, _ = self.backend.link_com_states(self.pm, q, qdot)
        return {
            "origin": origins,
            "theta": thetas,
            "v_origin": v_origins,
            "omega": omegas,
            "com": com_w,
            "v_com": v_com,
        }

    def point_state(self, q, qdot, link_name: str, local):
        link = self.pm.link_names.index(link_name)
        return self.backend.point_state(self.pm, q, qdot, link, np.asarray(local, dtype=float))

    def point_jacobian(self, q, link_name: str, local):
        link = self.pm.link_names.index(link_name)
        return self.backend.point_jacobian(self.pm, q, link, np.asarray(local, dtype=float))

    def mass_matrix(self, q):
        return self.backend.mass_matrix(self.pm, q)

    def bias_forces(self, q, qdot):
        return self.backend.bias_forces(self.pm, q, qdot)

    def contact_forces(self, q, qdot):
        return self.backend.contact_forces(self.pm, q, qdot)

    def com_state(self, state: DynState):
        return self.backend.com_state(self.pm, state.q, state.qdot)

    def head_state(self, state: DynState):
        """Head reference point (top of HAT): position, velocity,
        orientation (wrapped) and angular velocity."""
        pos, vel = self.backend.point_state(self.pm, state.q, state.qdot, self._head_link, self._head_local)
        theta = float(state.q[2])
        theta = (theta + np.pi) % (2.0 * np.pi) - np.pi
        return pos, vel, theta, float(state.qdot[2])

    def kinetic_energy(self, state: DynState) -> float:
        return self.backend.kinetic_energy(self.pm, state.q, state.qdot)

    def potential_energy(self, state: DynState) -> float:
        return self.backend.potential_energy(self.pm, state.q)

    # -- control / integration --------------------------------------------

    def stable_pd(self, state: DynState, target, dt: float = PHYSICS_DT):
        """Velocity-extrapolated PD torques; root rows always zero."""
        target = np.asarray(target, dtype=float)
        if target.shape != (self.pm.n_joints,):
            raise ValueError(f"target must cover the {self.pm.n_joints} actuated joints")
        return self.backend.spd_tau(self.pm, state.q, state.qdot, target, dt)

    def step(self, state: DynState, tau, dt: float = PHYSICS_DT) -> tuple[DynState, np.ndarray]:
        """One semi-implicit Euler step; tau root entries must be zero."""
        tau = np.asarray(tau, dtype=float)
        if np.any(tau[0:3] != 0.0):
            raise ValueError("root entries of tau must be zero")
        if self.locked_root:
            q, qdot, forces = _locked_root_step(self, state.q, state.qdot, tau, dt)
        else:
            q, qdot, forces = self.backend.step(self.pm, state.q.copy(), state.qdot.copy(), tau, dt)
        return DynState(q, qdot, state.time + dt), forces

    def substep_block(self, state: DynState, activations, n_sub: int = SUBSTEPS, dt: float = PHYSICS_DT):
        """n_sub physics steps with held activations (the 480 Hz hot path).

        Returns (DynState, normal forces per substep (n_sub, nC), act_cost).
        """
        activations = np.asarray(activations, dtype=float)
        q, qdot, normals, act_cost = self.backend.substep_block(
            self.pm, state.q, state.qdot, activations, n_sub, dt
        )
        return DynState(q, qdot, state.time + n_sub * dt), normals, act_cost

    def muscle_torque_terms(self, q, qdot):
        """(J_c, F_p, lengths, ldot, dldq) at the given state."""
        return self.backend.muscle_torque_terms(self.pm, q, qdot)

    def heel_indices(self) -> dict[str, int]:
        """Contact point column index of each heel, keyed 'l'/'r'."""
        out = {}
        for i, name in enumerate(self.pm.contact_names):
            if name.startswith("heel_"):
                out[name.split("_", 1)[1]] = i
        return out

    def standing_state(self, root_height_margin: float = 0.0) -> DynState:
        """Reference standing pose: all angles zero, feet on the ground."""
        q = np.zeros(self.pm.nq)
        q[1] = self._root_height_for_ground_contact(q) + root_height_margin
        return DynState(q, np.zeros(self.pm.nq), 0.0)

    def _root_height_for_ground_contact(self, q) -> float:
        """Root y placing the lowest contact point exactly at ground height."""
        q = q.copy()
        q[1] = 0.0
        origins, thetas, _, _ = self.backend.link_kinematics(self.pm, q, np.zeros(self.pm.nq))
        lowest = np.inf
        for k in range(len(self.pm.cp_link)):
            link = self.pm.cp_link[k]
            c, s = np.cos(thetas[link]), np.sin(thetas[link])
            py = origins[link][1] + s * self.pm.cp_pos[k][0] + c * self.pm.cp_pos[k][1]
            lowest = min(lowest, py)
        return float(self.pm.ground_y - lowest)


def _locked_root_step(engine: Engine, q, qdot, tau, dt):
    """Integration variant with the root frame welded in place (test rigs)."""
    pm = engine.pm
    backend = engine.backend
    tau_c, forces = backend.contact_forces(pm, q, qdot)
    h = backend.bias_forces(pm, q, qdot)
    M = backend.mass_matrix(pm, q)
    rhs = (tau + tau_c - h)[3:]
    qddot_j = np.linalg.solve(M[3:, 3:], rhs)
    if not np.all(np.isfinite(qddot_j)):
        raise SimulationDiverged("non-finite joint acceleration")
    qdot = qdot.copy()
    q = q.copy()
    qdot[3:] = qdot[3:] + dt * qddot_j
    qdot[0:3] = 0.0
    q[3:] = q[3:] + dt * qdot[3:]
    return q, qdot, forces
