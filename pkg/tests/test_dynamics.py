import numpy as np
import pytest

import gaitforge as gf
from gaitforge.dynamics import (
    CONTROL_DT,
    PHYSICS_DT,
    DynState,
    Engine,
    HeelStrikeDetector,
    heel_strike_events,
)
from gaitforge._core import SimulationDiverged

from conftest import chain_model


@pytest.fixture(scope="module")
def engine(healthy_scaled):
    return Engine(healthy_scaled)


def random_state(engine, seed, root_y_offset=0.2):
    rng = np.random.default_rng(seed)
    st = engine.standing_state()
    q = st.q.copy()
    q[0] = rng.uniform(-1, 1)
    q[1] += root_y_offset
    q[2] = rng.uniform(-0.3, 0.3)
    q[3:] = rng.uniform(-0.6, 0.6, size=6)
    qd = rng.uniform(-1.0, 1.0, size=engine.pm.nq)
    return DynState(q, qd)


# -- forward kinematics -------------------------------------------------------


def test_fk_zero_pose_accumulates_anchors(engine):
    st = engine.standing_state()
    fk = engine.forward_kinematics(st.q)
    names = engine.pm.link_names
    hip_y = st.q[1]
    thigh = names.index("thigh_l")
    shank = names.index("shank_l")
    assert fk["origin"][thigh] == pytest.approx([0.0, hip_y], abs=1e-12)
    thigh_len = engine.spec.skeleton.links[1].length
    assert fk["origin"][shank][1] == pytest.approx(hip_y - thigh_len, abs=1e-12)
    assert np.all(fk["theta"] == 0.0)


def test_fk_root_translation_moves_every_point(engine):
    st = random_state(engine, 0)
    fk1 = engine.forward_kinematics(st.q)
    q2 = st.q.copy()
    q2[0] += 1.0
    fk2 = engine.forward_kinematics(q2)
    assert np.allclose(fk2["origin"] - fk1["origin"], [1.0, 0.0], atol=1e-12)
    assert np.allclose(fk2["com"] - fk1["com"], [1.0, 0.0], atol=1e-12)


def test_point_velocity_matches_finite_difference(engine):
    # central difference of position along the state flow, dt = 1e-6
    dt = 1e-6
    for seed in range(10):
        st = random_state(engine, seed)
        p_plus, _ = engine.point_state(st.q + 0.5 * dt * st.qdot, st.qdot, "foot_l", (0.1, -0.02))
        p_minus, _ = engine.point_state(st.q - 0.5 * dt * st.qdot, st.qdot, "foot_l", (0.1, -0.02))
        v_fd = (p_plus - p_minus) / dt
        _, v = engine.point_state(st.q, st.qdot, "foot_l", (0.1, -0.02))
        assert np.linalg.norm(v - v_fd) / max(np.linalg.norm(v), 1e-9) < 1e-5


# -- mass matrix --------------------------------------------------------------


def test_mass_matrix_symmetric_and_pd(engine):
    for seed in range(50):
        st = random_state(engine, seed)
        M = engine.mass_matrix(st.q)
        assert np.abs(M - M.T).max() <= 1e-12
        assert np.linalg.eigvalsh(M).min() > 0.0


def test_mass_matrix_spd_many_poses(engine):
    rng = np.random.default_rng(1234)
    for _ in range(1000):
        q = np.concatenate([rng.uniform(-1, 1, 2), rng.uniform(-np.pi, np.pi, 7)])
        M = engine.mass_matrix(q)
        assert np.linalg.eigvalsh(M).min() > 0.0


def two_link_closed_form(m1, m2, I1, I2, L1, lc1, lc2, q2):
    """Textbook planar 2-link mass matrix about the first pivot."""
    M11 = I1 + I2 + m1 * lc1**2 + m2 * (L1**2 + lc2**2 + 2 * L1 * lc2 * np.cos(q2))
    M12 = I2 + m2 * (lc2**2 + L1 * lc2 * np.cos(q2))
    M22 = I2 + m2 * lc2**2
    return np.array([[M11, M12], [M12, M22]])


def test_mass_matrix_matches_two_link_closed_form():
    model = chain_model(2)
    eng = Engine(model)
    seg = model.skeleton.links[1]
    L1, lc = seg.length, abs(seg.com[1])
    for q1, q2 in [(0.0, 0.0), (0.4, -0.9), (-1.2, 0.7), (2.0, 2.5)]:
        q = np.array([0.0, 0.0, 0.0, q1, q2])
        M = eng.mass_matrix(q)
        expected = two_link_closed_form(seg.mass, seg.mass, seg.inertia, seg.inertia, L1, lc, lc, q2)
        assert np.abs(M[3:, 3:] - expected).max() < 1e-9


def test_kinetic_energy_matches_mass_matrix(engine):
    for seed in range(20):
        st = random_state(engine, seed)
        M = engine.mass_matrix(st.q)
        ke_quad = 0.5 * st.qdot @ M @ st.qdot
        ke_links = engine.kinetic_energy(st)
        assert ke_quad == pytest.approx(ke_links, abs=1e-9, rel=1e-9)


# -- stepping -----------------------------------------------------------------


def test_free_fall_from_rest_is_analytic(engine):
    st = engine.standing_state()
    st.q[1] += 10.0  # well above ground
    st.q[3:] = [0.3, -0.4, 0.2, -0.1, -0.6, 0.3]
    n = 200
    for _ in range(n):
        st, _ = engine.step(st, np.zeros(engine.pm.nq))
    assert st.qdot[1] == pytest.approx(-9.81 * n * PHYSICS_DT, abs=1e-9)
    assert np.abs(st.qdot[3:]).max() < 1e-9


def test_step_requires_zero_root_torque(engine):
    st = engine.standing_state()
    tau = np.zeros(engine.pm.nq)
    tau[0] = 1.0
    with pytest.raises(ValueError):
        engine.step(st, tau)


def test_step_deterministic_bitwise(engine):
    st = random_state(engine, 3)
    tau = np.zeros(engine.pm.nq)
    tau[3:] = [1.0, -2.0, 0.5, 0.3, -0.2, 0.8]
    a1, _ = engine.step(st.copy(), tau)
    a2, _ = engine.step(st.copy(), tau)
    assert np.array_equal(a1.q, a2.q) and np.array_equal(a1.qdot, a2.qdot)


def test_divergence_raises(engine):
    st = engine.standing_state()
    st.q[:] = np.nan
    with pytest.raises(SimulationDiverged):
        engine.step(st, np.zeros(engine.pm.nq))


def test_momentum_conserved_in_free_flight(engine):
    # thrown without spin: x momentum machine-exact under the integrator
    st = engine.standing_state()
    st.q[1] += 20.0
    st.q[3:] = [0.3, -0.5, 0.1, -0.2, -0.8, 0.2]
    st.qdot[0] = 2.0
    st.qdot[1] = 1.0

    def px(s):
        _, vcom = engine.com_state(s)
        return engine.total_mass * vcom[0]

    p0 = px(st)
    for _ in range(480):  # one second
        st, _ = engine.step(st, np.zeros(engine.pm.nq))
    assert abs(px(st) - p0) < 1e-6


def test_damped_pendulum_energy_non_increasing():
    model = chain_model(2)
    eng = Engine(model, locked_root=True)
    st = DynState(np.zeros(5), np.zeros(5))
    st.q[1] = 2.0
    st.q[3], st.q[4] = 1.2, 0.4
    b = 1.0
    prev = eng.kinetic_energy(st) + eng.potential_energy(st)
    for _ in range(4800):  # 10 s at 480 Hz
        tau = np.zeros(5)
        tau[3:] = -b * st.qdot[3:]
        st, _ = eng.step(st, tau)
        e = eng.kinetic_energy(st) + eng.potential_energy(st)
        assert e <= prev + 1e-12
        prev = e


def test_penetrating_foot_gets_proportional_normal_force(engine):
    st = engine.standing_state()
    st.q[1] -= 0.002  # push feet 2 mm into the ground
    tau_c, forces = engine.contact_forces(st.q, st.qdot)
    assert np.all(forces[:, 1] > 0.0)
    assert forces[:, 1] == pytest.approx(engine.pm.kn * 0.002, rel=1e-9)
    assert tau_c[1] == pytest.approx(forces[:, 1].sum(), rel=1e-9)


# -- stable PD ----------------------------------------------------------------


def test_spd_zero_at_target(engine):
    st = engine.standing_state()
    target = st.q[3:].copy()
    tau = engine.stable_pd(st, target)
    assert np.all(tau == 0.0)


def test_spd_linear_in_kp(engine, healthy_scaled):
    from dataclasses import replace

    st = random_state(engine, 5)
    st.qdot[:] = 0.0
    target = np.zeros(6)
    tau1 = engine.stable_pd(st, target)

    spec2 = replace(
        healthy_scaled.spec,
        pd=replace(healthy_scaled.spec.pd, kp=tuple(2 * k for k in healthy_scaled.spec.pd.kp)),
    )
    eng2 = Engine(spec2)
    tau2 = eng2.stable_pd(st, target)
    assert np.allclose(tau2[3:], 2.0 * tau1[3:], rtol=1e-12)


def test_spd_root_rows_always_zero(engine):
    for seed in range(20):
        st = random_state(engine, seed)
        tau = engine.stable_pd(st, np.random.default_rng(seed).uniform(-1, 1, 6))
        assert np.all(tau[0:3] == 0.0)


def test_spd_tracks_constant_target_without_gravity():
    from dataclasses import replace

    model = chain_model(2)
    model = replace(model, gravity=0.0)
    eng = Engine(model, locked_root=True)
    st = DynState(np.zeros(5), np.zeros(5))
    target = np.array([0.8, -0.5])
    for _ in range(2 * 480):
        tau = np.zeros(5)
        tau[3:] = eng.stable_pd(st, target)[3:]
        st, _ = eng.step(st, tau)
    # steady-state error well under 1% of the commanded deflection
    assert np.abs(st.q[3:] - target).max() < 0.01 * np.abs(target).max()


# -- COM / head ---------------------------------------------------------------


def test_symmetric_standing_com_between_feet(engine):
    st = engine.standing_state()
    com, _ = engine.com_state(st)
    fk = engine.forward_kinematics(st.q)
    foot_l = fk["origin"][engine.pm.link_names.index("foot_l")]
    foot_r = fk["origin"][engine.pm.link_names.index("foot_r")]
    assert com[0] == pytest.approx(0.5 * (foot_l[0] + foot_r[0]) + 0.0, abs=0.02)
    # left-right exact symmetry: both feet at identical x
    assert foot_l[0] == foot_r[0]


def test_com_velocity_matches_finite_difference(engine):
    dt = 1e-6
    for seed in range(10):
        st = random_state(engine, seed)
        cp, _ = engine.com_state(DynState(st.q + 0.5 * dt * st.qdot, st.qdot))
        cm, _ = engine.com_state(DynState(st.q - 0.5 * dt * st.qdot, st.qdot))
        v_fd = (cp - cm) / dt
        _, v = engine.com_state(st)
        assert np.linalg.norm(v - v_fd) / np.linalg.norm(v) < 1e-5


def test_upright_head_orientation_zero(engine):
    st = engine.standing_state()
    pos, vel, theta, omega = engine.head_state(st)
    assert theta == 0.0 and omega == 0.0
    assert pos[1] == pytest.approx(st.q[1] + 0.793, abs=1e-3)


# -- heel strikes -------------------------------------------------------------


def test_heel_constant_contact_single_event():
    times = np.arange(0.0, 2.0, CONTROL_DT)
    normals = np.full((len(times), 1), 100.0)
    events = heel_strike_events(times, normals, ["l"], threshold=30.0)
    assert len(events) == 1 and events[0][0] == "l" and events[0][1] == 0.0


def test_heel_square_wave_one_event_per_period():
    dt = CONTROL_DT
    times = np.arange(0.0, 5.0, dt)
    normals = (np.sin(2 * np.pi * 1.0 * times) > 0).astype(float)[:, None] * 100.0
    events = heel_strike_events(times, normals, ["l"], threshold=30.0)
    assert len(events) == 5


def test_heel_refractory_suppresses_chatter():
    det = HeelStrikeDetector(threshold=10.0, refractory=0.1)
    dt = 1.0 / 30.0
    assert det.update("l", 0.0, 50.0, dt) == 0.0
    assert det.update("l", dt, 0.0, dt) is None
    # re-contact after only one tick below: suppressed
    assert det.update("l", 2 * dt, 50.0, dt) is None
