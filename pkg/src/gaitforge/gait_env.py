"""The walking environment: observations, action decoding, rewards, resets.

One environment instance simulates one anatomy/gait condition at a time.
Control runs at 30 Hz over a 480 Hz physics core.  Activations come from a
pluggable coordinator callable (regression net in training, QP oracle in
tests) evaluated once per control tick from the stable-PD desired torque.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as anatomy
from .coordination import JacobianPacking
from .dynamics import CONTROL_DT, PHYSICS_DT, SUBSTEPS, DynState, Engine, HeelStrikeDetector
from ._core import SimulationDiverged
from .muscle import force_capacity

GAIT_FILE_MAGIC = "# gaitforge-reference-gait v1"

# observation normalization constants (fixed, part of the layout contract)
VEL_SCALE = 3.0  # m/s
OMEGA_SCALE = 10.0  # rad/s
TORQUE_SCALE = 300.0  # N m


@dataclass(frozen=True)
class ReferenceGait:
    """Cyclic joint-angle table: one gait cycle starting at left heel strike.

    stride is the distance covered per step (m); cadence in steps/s; the
    cycle spans two steps.
    """

    phases: np.ndarray  # (n,), uniform in [0, 1)
    angles: np.ndarray  # (n, 6) joint order: hip_l knee_l ankle_l hip_r knee_r ankle_r
    stride: float
    cadence: float

    def target(self, phi: float) -> np.ndarray:
        """Cyclic linear interpolation M_o(phi); M_o(0) == M_o(1)."""
        n = len(self.phases)
        x = (phi % 1.0) * n
        i0 = int(x) % n
        i1 = (i0 + 1) % n
        w = x - int(x)
        return (1.0 - w) * self.angles[i0] + w * self.angles[i1]

    def rate(self, phi: float) -> np.ndarray:
        """dM_o/dphi by the same piecewise-linear interpolation."""
        n = len(self.phases)
        i0 = int((phi % 1.0) * n) % n
        i1 = (i0 + 1) % n
        return (self.angles[i1] - self.angles[i0]) * n


def generate_reference_gait(model: anatomy.ModelSpec, n_samples: int = 60) -> ReferenceGait:
    """Procedural smooth planar walking cycle from the model's gait curves.

    The stride value is measured kinematically (heel separation at heel
    strike) so the stored gait scalars are self-consistent with the table.
    """
    phases = np.arange(n_samples) / n_samples
    angles = anatomy.gait_angle_table(n_samples)
    ref = ReferenceGait(phases, angles, stride=0.0, cadence=model.gait.cadence)
    eng = Engine(anatomy.apply_anatomy(model, model.healthy_condition()))
    st = eng.standing_state()
    q = st.q.copy()
    q[3:] = ref.target(0.0)
    heel_l, _ = eng.point_state(q, st.qdot, "foot_l", eng.spec.contact.points[0].pos)
    heel_r, _ = eng.point_state(q, st.qdot, "foot_r", eng.spec.contact.points[2].pos)
    stride = float(heel_l[0] - heel_r[0])
    return replace(ref, stride=stride)


def write_reference_gait(path, ref: ReferenceGait, joint_names):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(GAIT_FILE_MAGIC + "\n")
        fh.write(f"# stride {ref.stride!r} cadence {ref.cadence!r}\n")
        fh.write("# phase " + " ".join(joint_names) + "\n")
        for phi, row in zip(ref.phases, ref.angles):
            fh.write(" ".join(repr(float(v)) for v in (phi, *row)) + "\n")


def read_reference_gait(path) -> ReferenceGait:
    with open(path, "r", encoding="utf-8") as fh:
        if fh.readline().strip() != GAIT_FILE_MAGIC:
            raise ValueError("not a reference gait file")
        meta = fh.readline().split()
        stride, cadence = float(meta[2]), float(meta[4])
        fh.readline()
        rows = [[float(v) for v in ln.split()] for ln in fh if ln.strip()]
    table = np.asarray(rows)
    return ReferenceGait(table[:, 0], table[:, 1:], stride, cadence)


@dataclass(frozen=True)
class GaitCondition:
    """Commanded gait: stride and cadence scale factors over the reference."""

    stride_factor: float = 1.0
    cadence_factor: float = 1.0

    def derived(self, ref: ReferenceGait):
        stride = ref.stride * self.stride_factor
        cadence = ref.cadence * self.cadence_factor
        speed = stride * cadence
        cycle_time = 2.0 / cadence
        return stride, cadence, speed, cycle_time


@dataclass(frozen=True)
class RewardWeights:
    sigma_v: float = 0.2  # (m/s)^2, head velocity change
    sigma_r: float = 0.1  # rad^2, head orientation
    sigma_stride: float = 0.05  # m^2, foothold error
    sigma_vel: float = 0.3  # (m/s)^2, COM speed error
    sigma_energy: float = 16.0  # squared-activation scale
    w_energy: float = 0.1

    def validate(self):
        for name in ("sigma_v", "sigma_r", "sigma_stride", "sigma_vel", "sigma_energy", "w_energy"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class EnvConfig:
    horizon: float = 10.0  # s
    dm_clamp: float = 0.5  # rad
    fall_com_fraction: float = 0.6
    fall_pitch: float = 1.0  # rad
    strike_force_fraction: float = 0.05  # of body weight
    strike_refractory: float = 0.1  # s
    w_com: float = 5000.0  # pose optimization balance weight
    pose_iters: int = 500
    pose_step_tol: float = 1e-6
    root_start_speed: bool = True  # seed root x velocity with the desired speed


def head_stability_reward(dv_head, theta_head, w: RewardWeights) -> float:
    """exp penalty on per-tick head velocity change and head tilt."""
    dv = np.asarray(dv_head, dtype=float)
    return math.exp(-float(dv @ dv) / w.sigma_v - (theta_head**2) / w.sigma_r)


def stride_reward(foothold_error, w: RewardWeights) -> float:
    return math.exp(-(foothold_error**2) / w.sigma_stride)


def velocity_reward(v_mean, v_desired, w: RewardWeights) -> float:
    return math.exp(-((v_mean - v_desired) ** 2) / w.sigma_vel)


def energy_reward(act_sq_norm, w: RewardWeights) -> float:
    return math.exp(-act_sq_norm / w.sigma_energy)


def combine_reward(r_head, r_stride, r_vel, r_energy, w: RewardWeights) -> float:
    """Multiplicative task terms plus a small additive energy bonus."""
    return r_head * r_stride * r_vel + w.w_energy * r_energy


def clip_phase(phi: float, dphi_eff: float, t_hat: float) -> float:
    """Phase clipping: never past 1, jump to 1 when normalized time ends."""
    phi_new = min(phi + dphi_eff, 1.0)
    if t_hat >= 1.0 and phi_new < 1.0:
        phi_new = 1.0
    return phi_new


def decode_action(action, phi, alpha, reference: ReferenceGait, dphi_max, dm_clamp=0.5):
    """PD target from a raw action: M_o(phi + a*dphi) (+) a*dM.

    The raw displacement and phase increment are clamped before use.
    Returns (target (6,), effective phase increment).
    """
    action = np.asarray(action, dtype=float)
    dm = np.clip(action[:6], -dm_clamp, dm_clamp)
    dphi = float(np.clip(action[6], 0.0, dphi_max))
    target = reference.target(phi + alpha * dphi) + alpha * dm
    return target, alpha * dphi


def compose_action(actions_with_alpha, phi, reference: ReferenceGait, dphi_max, dm_clamp=0.5):
    """Overlayed PD target for a cascade path.

    actions_with_alpha: [(alpha, action), ...] ordered base first; the base
    entry carries alpha = 1.  Phase argument and displacement are the
    confidence-weighted sums of the per-level clamped actions.
    """
    dphi_eff = 0.0
    dm = np.zeros(6)
    for alpha, action in actions_with_alpha:
        action = np.asarray(action, dtype=float)
        dm += alpha * np.clip(action[:6], -dm_clamp, dm_clamp)
        dphi_eff += alpha * float(np.clip(action[6], 0.0, dphi_max))
    target = reference.target(phi + dphi_eff) + dm
    return target, dphi_eff


class ObservationLayout:
    """Fixed observation vector layout plus its mirror permutation.

    Mirroring shifts the gait phase by half a cycle (sign flip of the
    sin/cos phase channels) and swaps every left/right channel pair, which
    makes the mirror map an exact involution.
    """

    def __init__(self, pm, muscle_names, joint_names):
        self.link_names = list(pm.link_names)
        self.muscle_names = list(muscle_names)
        self.joint_names = list(joint_names)
        nL, nM, nJ = len(self.link_names), len(self.muscle_names), len(self.joint_names)
        self.dim = 2 + 6 * nL + 2 * nM + 3 * nJ + 8
        perm = np.arange(self.dim)
        sign = np.ones(self.dim)

        def swap(a, b, width):
            perm[a : a + width], perm[b : b + width] = np.arange(b, b + width), np.arange(a, a + width)

        base = 2
        for i, name in enumerate(self.link_names):
            if name.endswith("_l"):
                j = self.link_names.index(name[:-2] + "_r")
                swap(base + 6 * i, base + 6 * j, 6)
        base = 2 + 6 * nL
        for block in range(2):  # weakness, contracture
            off = base + block * nM
            for i, name in enumerate(self.muscle_names):
                if name.endswith("_l"):
                    j = self.muscle_names.index(name[:-2] + "_r")
                    swap(off + i, off + j, 1)
        base = 2 + 6 * nL + 2 * nM
        for i, name in enumerate(self.joint_names):
            if name.endswith("_l"):
                j = self.joint_names.index(name[:-2] + "_r")
                swap(base + 3 * i, base + 3 * j, 3)
        gait = 2 + 6 * nL + 2 * nM + 3 * nJ
        sign[gait : gait + 4] = -1.0  # sin/cos of phase and normalized time
        self.mirror_perm = perm
        self.mirror_sign = sign
        self.gait_offset = gait

    def mirror(self, obs):
        return obs[..., self.mirror_perm] * self.mirror_sign


def mirror_action(action):
    """Swap left/right displacement triples; phase increment and threshold
    are side-agnostic."""
    out = np.asarray(action).copy()
    out[..., 0:3], out[..., 3:6] = action[..., 3:6], action[..., 0:3]
    return out


@dataclass
class EpisodeLog:
    """Per-tick quantities recorded during an episode."""

    time: list = field(default_factory=list)
    q: list = field(default_factory=list)
    qdot: list = field(default_factory=list)
    contact: list = field(default_factory=list)
    activations: list = field(default_factory=list)
    reward_terms: list = field(default_factory=list)
    revision: list = field(default_factory=list)


class GaitEnv:
    """One walking episode simulator bound to a reference model."""

    def __init__(
        self,
        model: anatomy.ModelSpec,
        reference: ReferenceGait,
        weights: RewardWeights | None = None,
        config: EnvConfig | None = None,
    ):
        self.model = model
        self.reference = reference
        self.weights = weights or RewardWeights()
        self.weights.validate()
        self.config = config or EnvConfig()
        self._pose_cache: dict[bytes, np.ndarray] = {}
        self._stand_cache: dict[bytes, float] = {}
        self.engine: Engine | None = None
        self.packing: JacobianPacking | None = None
        base_engine = Engine(anatomy.apply_anatomy(model, model.healthy_condition()))
        self.layout = ObservationLayout(base_engine.pm, model.muscle_names, model.joint_names)
        self.obs_dim = self.layout.dim
        self.act_dim = 8  # 6 joint displacements, phase increment, threshold

    # -- episode lifecycle ------------------------------------------------

    def reset(self, condition: anatomy.AnatomyCondition, gait: GaitCondition, seed=0):
        scaled = anatomy.apply_anatomy(self.model, condition)
        self.engine = Engine(scaled)
        self.packing = JacobianPacking.from_packed_model(self.engine.pm)
        self.condition = condition
        self.gait = gait
        self.rng = np.random.default_rng(seed)

        stride, cadence, speed, cycle_time = gait.derived(self.reference)
        self.stride_m = stride
        self.speed = speed
        self.cycle_time = cycle_time
        self.dphi_max = 2.0 * CONTROL_DT / cycle_time

        key = condition.key()
        if key not in self._stand_cache:
            stand = self.engine.standing_state()
            self._stand_cache[key] = float(self.engine.com_state(stand)[0][1])
        self.standing_com_height = self._stand_cache[key]

        q_joints = self._optimized_pose(key)
        st = self.engine.standing_state()
        q = st.q.copy()
        q[2] = q_joints[6]
        q[3:] = q_joints[:6]
        # seat the feet slightly into the penalty ground so stance loads
        q[1] = self.engine._root_height_for_ground_contact(q) - 0.002
        qdot = np.zeros_like(q)
        qdot[3:] = np.clip(self.reference.rate(0.0) / cycle_time, -1.5, 1.5)
        if self.config.root_start_speed:
            qdot[0] = speed
        self.state = DynState(q, qdot, 0.0)

        self.phi = 0.0
        self.t_hat = 0.0
        self.tick = 0
        heel_l, _ = self._heel_pos("l")
        self.last_strike_x = float(heel_l[0])
        self.last_strike_side = "l"
        self.h_desired = self.last_strike_x + stride
        self.r_stride_held = 1.0
        self.detector = HeelStrikeDetector(
            threshold=self.config.strike_force_fraction * self.engine.weight,
            refractory=self.config.strike_refractory,
        )
        self.detector._contact["l"] = True  # stance heel starts loaded
        self.detector._airborne["l"] = 0.0
        self.strikes: list[tuple[str, float]] = []
        self.prev_head_vel = np.array(self.engine.head_state(self.state)[1])
        self.diverged = False
        return self.observe()

    def _optimized_pose(self, key: bytes) -> np.ndarray:
        if key not in self._pose_cache:
            q0 = np.concatenate([self.reference.target(0.0), [0.0]])
            self._pose_cache[key] = pose_optimize(self.engine, q0, self.config)
        return self._pose_cache[key]

    def _heel_pos(self, side):
        name = f"foot_{side}"
        idx = 0 if side == "l" else 2
        return self.engine.point_state(self.state.q, self.state.qdot, name, self.engine.spec.contact.points[idx].pos)

    # -- observation -------------------------------------------------------

    def observe(self) -> np.ndarray:
        eng = self.engine
        st = self.state
        com, com_v = eng.com_state(st)
        fk = eng.forward_kinematics(st.q, st.qdot)
        nL = len(eng.pm.link_names)
        parts = [com_v / VEL_SCALE]
        theta = (fk["theta"] + np.pi) % (2.0 * np.pi) - np.pi
        link_block = np.empty((nL, 6))
        link_block[:, 0:2] = fk["com"] - com[None, :]
        link_block[:, 2:4] = (fk["v_com"] - com_v[None, :]) / VEL_SCALE
        link_block[:, 4] = theta
        link_block[:, 5] = fk["omega"] / OMEGA_SCALE
        parts.append(link_block.ravel())
        parts.append(self.condition.weakness)
        parts.append(self.condition.contracture)
        _, J_c, F_p = self._torque_terms()
        cap = force_capacity(J_c, F_p)
        joint_block = np.stack([cap.f_min, cap.f_max, cap.f_p], axis=1) / TORQUE_SCALE
        parts.append(joint_block.ravel())
        two_pi = 2.0 * np.pi
        parts.append(
            np.array(
                [
                    math.sin(two_pi * self.phi),
                    math.cos(two_pi * self.phi),
                    math.sin(two_pi * self.t_hat),
                    math.cos(two_pi * self.t_hat),
                    self.gait.stride_factor,
                    self.gait.cadence_factor,
                    self.speed,
                    self.h_desired - com[0],
                ]
            )
        )
        return np.concatenate(parts)

    def _torque_terms(self):
        J_c, F_p, _, _, _ = self.engine.muscle_torque_terms(self.state.q, self.state.qdot)
        return None, J_c, F_p

    # -- stepping ----------------------------------------------------------

    def coordination_inputs(self, target):
        """Stable-PD desired torque and packed Jacobian at the tick start."""
        tau_pd = self.engine.stable_pd(self.state, target, PHYSICS_DT)
        J_c, F_p, _, _, _ = self.engine.muscle_torque_terms(self.state.q, self.state.qdot)
        j_packed = self.packing.pack(J_c[3:, :])
        return j_packed, F_p[3:], tau_pd[3:]

    def step_decoded(self, target, dphi_eff, coordinator):
        """Advance one control tick with an already-composed PD target."""
        cfg = self.config
        eng = self.engine
        j_packed, f_p, tau_d = self.coordination_inputs(target)
        activations = np.clip(np.asarray(coordinator(j_packed, f_p, tau_d), dtype=float), 0.0, 1.0)

        com_before, _ = eng.com_state(self.state)
        try:
            self.state, normals, act_cost = eng.substep_block(self.state, activations, SUBSTEPS, PHYSICS_DT)
        except SimulationDiverged:
            self.diverged = True
            obs = np.zeros(self.obs_dim)
            info = {
                "diverged": True,
                "tuple": (j_packed, f_p, tau_d),
                "activations": activations,
                "reward_terms": {},
                "events": [],
                "heel_normals": np.zeros(2),
            }
            return obs, 0.0, True, False, info

        # heel strike detection at physics rate
        heel_idx = eng.heel_indices()
        events = []
        for k in range(SUBSTEPS):
            t_sub = self.state.time - (SUBSTEPS - 1 - k) * PHYSICS_DT
            for side, col in heel_idx.items():
                ev = self.detector.update(side, t_sub, normals[k, col], PHYSICS_DT)
                if ev is not None:
                    events.append((side, ev))
        stride_err = None
        for side, t_ev in events:
            heel, _ = self._heel_pos(side)
            stride_err = float(heel[0]) - self.h_desired
            self.r_stride_held = stride_reward(stride_err, self.weights)
            self.last_strike_x = float(heel[0])
            self.last_strike_side = side
            self.h_desired = self.last_strike_x + self.stride_m
            self.strikes.append((side, t_ev))

        com_after, com_v = eng.com_state(self.state)
        head_pos, head_vel, head_theta, _ = eng.head_state(self.state)
        head_vel = np.asarray(head_vel)
        w = self.weights
        dv_head = head_vel - self.prev_head_vel
        self.prev_head_vel = head_vel
        r_head = head_stability_reward(dv_head, head_theta, w)
        v_mean = (com_after[0] - com_before[0]) / CONTROL_DT
        r_vel = velocity_reward(v_mean, self.speed, w)
        r_energy = energy_reward(act_cost, w)
        reward = combine_reward(r_head, self.r_stride_held, r_vel, r_energy, w)

        # phase bookkeeping
        self.tick += 1
        t_hat_new = self.t_hat + CONTROL_DT / self.cycle_time
        phi_new = clip_phase(self.phi, dphi_eff, t_hat_new)
        if t_hat_new >= 1.0:
            self.phi = 0.0
            self.t_hat = 0.0
        else:
            self.phi = phi_new
            self.t_hat = t_hat_new

        terminated, truncated = self.terminate()
        obs = self.observe()
        info = {
            "diverged": False,
            "tuple": (j_packed, f_p, tau_d),
            "activations": activations,
            "reward_terms": {
                "head": r_head,
                "stride": self.r_stride_held,
                "vel": r_vel,
                "energy": r_energy,
                "stride_err": stride_err,
            },
            "events": events,
            "heel_normals": normals[-1, [heel_idx["l"], heel_idx["r"]]],
            "contact_normals": normals[-1],
            "com": com_after,
            "speed_mean": v_mean,
        }
        return obs, reward, terminated, truncated, info

    def step(self, action, coordinator, alpha=1.0):
        """Decode a single-policy action (Eq-style, confidence alpha) and step."""
        target, dphi_eff = decode_action(
            action, self.phi, alpha, self.reference, self.dphi_max, self.config.dm_clamp
        )
        return self.step_decoded(target, dphi_eff, coordinator)

    def terminate(self):
        """(terminated, truncated): fall ends the episode, the horizon truncates it."""
        if self.diverged:
            return True, False
        com, _ = self.engine.com_state(self.state)
        com_height = com[1] - self.engine.pm.ground_y
        if com_height < self.config.fall_com_fraction * self.standing_com_height:
            return True, False
        pitch = (self.state.q[2] + np.pi) % (2.0 * np.pi) - np.pi
        if abs(pitch) > self.config.fall_pitch:
            return True, False
        if self.state.time >= self.config.horizon - 0.5 * PHYSICS_DT:
            return False, True
        return False, False

    def walked_distance(self) -> float:
        com, _ = self.engine.com_state(self.state)
        return float(com[0])


def pose_optimize(engine: Engine, x0: np.ndarray, config: EnvConfig) -> np.ndarray:
    """Initial-pose optimization over the 6 joint angles plus root pitch.

    Minimizes per-joint squared passive torque (weighted) plus a balance
    term pulling the COM over the support centroid.  Projected gradient
    descent with numerically differentiated gradients and a backtracking
    line search; joint angles stay inside their declared limits.  Returns
    the best iterate (never raises on slow convergence).
    """
    pm = engine.pm
    limits = np.array([j.limits for j in engine.spec.skeleton.joints])
    lo = np.concatenate([limits[:, 0], [-0.6]])
    hi = np.concatenate([limits[:, 1], [0.6]])

    def build_q(x):
        q = np.zeros(pm.nq)
        q[1] = 1.0  # free standing height; objective is translation-invariant
        q[2] = x[6]
        q[3:] = x[:6]
        return q

    n_contacts = len(pm.cp_link)

    def objective(x):
        q = build_q(x)
        zero = np.zeros(pm.nq)
        _, F_p, _, _, _ = engine.muscle_torque_terms(q, zero)
        fp_j = F_p[3:]
        e_passive = float(fp_j @ fp_j)
        if n_contacts == 0:
            return e_passive
        com, _ = engine.backend.com_state(pm, q, zero)
        origins, thetas, _, _ = engine.backend.link_kinematics(pm, q, zero)
        xs = []
        for k in range(n_contacts):
            link = pm.cp_link[k]
            c, s = np.cos(thetas[link]), np.sin(thetas[link])
            xs.append(origins[link][0] + c * pm.cp_pos[k][0] - s * pm.cp_pos[k][1])
        # off-balance means COM outside the support interval (small margin)
        lo_x, hi_x = min(xs), max(xs)
        margin = 0.1 * (hi_x - lo_x)
        excess = max(0.0, (lo_x + margin) - com[0], com[0] - (hi_x - margin))
        return e_passive + config.w_com * excess * excess

    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    f = objective(x)
    best_x, best_f = x.copy(), f
    h = 1e-5
    step = 1e-4
    for _ in range(config.pose_iters):
        grad = np.zeros_like(x)
        for i in range(len(x)):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            grad[i] = (objective(xp) - objective(xm)) / (2.0 * h)
        gnorm = float(np.linalg.norm(grad))
        if gnorm == 0.0 or not np.isfinite(gnorm):
            break
        accepted = False
        for _ in range(30):
            x_new = np.clip(x - step * grad, lo, hi)
            f_new = objective(x_new)
            if f_new <= f - 1e-4 * step * gnorm * gnorm:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        move = float(np.linalg.norm(x_new - x))
        x, f = x_new, f_new
        if f < best_f:
            best_x, best_f = x.copy(), f
        step *= 1.5
        if move < config.pose_step_tol:
            break
    return best_x
