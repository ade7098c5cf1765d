import numpy as np
import pytest

import gaitforge as gf
from gaitforge.coordination import solve_qp_dense
from gaitforge.dynamics import CONTROL_DT
from gaitforge.gait_env import (
    EnvConfig,
    GaitCondition,
    GaitEnv,
    ReferenceGait,
    RewardWeights,
    clip_phase,
    combine_reward,
    compose_action,
    decode_action,
    energy_reward,
    generate_reference_gait,
    head_stability_reward,
    mirror_action,
    read_reference_gait,
    stride_reward,
    velocity_reward,
    write_reference_gait,
)
from gaitforge.model import AnatomyCondition


@pytest.fixture(scope="module")
def reference(reference_model):
    return generate_reference_gait(reference_model)


@pytest.fixture(scope="module")
def env(reference_model, reference):
    return GaitEnv(reference_model, reference)


def qp_coordinator(env):
    def coord(jp, fp, tau):
        J = env.packing.unpack(jp)
        return solve_qp_dense(J, fp, tau, w_reg=0.01, tol=1e-6, max_iter=2000).a

    return coord


# -- reference gait ------------------------------------------------------------


def test_reference_gait_cyclic(reference):
    assert np.allclose(reference.target(0.0), reference.target(1.0), atol=1e-15)
    # interpolation continuity across sample boundaries
    for phi in (0.25, 0.5, 59 / 60):
        left = reference.target(phi - 1e-9)
        right = reference.target(phi + 1e-9)
        assert np.abs(left - right).max() < 1e-6


def test_reference_gait_file_round_trip(tmp_path, reference, reference_model):
    path = tmp_path / "gait.txt"
    write_reference_gait(path, reference, reference_model.joint_names)
    loaded = read_reference_gait(path)
    assert np.array_equal(loaded.angles, reference.angles)
    assert loaded.stride == reference.stride and loaded.cadence == reference.cadence


def test_reference_gait_has_60_rows(reference):
    assert reference.angles.shape == (60, 6)


def test_half_cycle_symmetry(reference):
    # right leg trajectory is the left trajectory shifted half a cycle
    for phi in np.linspace(0, 0.99, 23):
        a = reference.target(phi)
        b = reference.target((phi + 0.5) % 1.0)
        assert np.allclose(a[0:3], b[3:6], atol=1e-9)


# -- action decoding -----------------------------------------------------------


def test_decode_zero_action_is_reference(reference):
    for phi in (0.0, 0.3, 0.77):
        target, dphi = decode_action(np.zeros(8), phi, 1.0, reference, 0.06)
        assert np.array_equal(target, reference.target(phi))
        assert dphi == 0.0


def test_decode_alpha_zero_ignores_action(reference):
    rng = np.random.default_rng(0)
    action = rng.normal(size=8)
    target, dphi = decode_action(action, 0.4, 0.0, reference, 0.06)
    assert np.array_equal(target, reference.target(0.4))
    assert dphi == 0.0


def test_decode_full_confidence_applies_displacement(reference):
    action = np.zeros(8)
    action[0] = 0.1  # +0.1 rad on the first joint
    action[6] = 0.01
    target, dphi = decode_action(action, 0.2, 1.0, reference, 0.06)
    expected = reference.target(0.21).copy()
    expected[0] += 0.1
    assert np.allclose(target, expected, atol=1e-15)
    assert dphi == pytest.approx(0.01)


def test_decode_clamps_before_use(reference):
    action = np.zeros(8)
    action[1] = 3.0  # beyond the 0.5 rad clamp
    action[6] = 1.0  # beyond the phase increment clamp
    target, dphi = decode_action(action, 0.1, 1.0, reference, 0.06)
    assert target[1] == pytest.approx(reference.target(0.1 + 0.06)[1] + 0.5)
    assert dphi == 0.06


def test_compose_base_only_matches_decode(reference):
    rng = np.random.default_rng(1)
    action = rng.normal(size=8) * 0.2
    t1, d1 = decode_action(action, 0.33, 1.0, reference, 0.06)
    t2, d2 = compose_action([(1.0, action)], 0.33, reference, 0.06)
    assert np.array_equal(t1, t2) and d1 == d2


def test_compose_overlay_arithmetic(reference):
    base = np.zeros(8)
    base[6] = 0.01
    base[1] = 0.1
    over = np.zeros(8)
    over[6] = 0.005
    over[1] = -0.05
    target, dphi = compose_action([(1.0, base), (1.0, over)], 0.2, reference, 0.06)
    assert dphi == pytest.approx(0.015)
    expected = reference.target(0.215).copy()
    expected[1] += 0.05
    assert np.allclose(target, expected, atol=1e-15)


def test_compose_zero_alpha_overlays_equals_base(reference):
    rng = np.random.default_rng(2)
    base = rng.normal(size=8) * 0.1
    overlays = [(0.0, rng.normal(size=8)), (0.0, rng.normal(size=8))]
    t1, d1 = compose_action([(1.0, base)], 0.5, reference, 0.06)
    t2, d2 = compose_action([(1.0, base), *overlays], 0.5, reference, 0.06)
    assert np.array_equal(t1, t2) and d1 == d2


# -- phase clipping -------------------------------------------------------------


def test_clip_phase_truth_table():
    assert clip_phase(0.9, 0.0, 1.0) == 1.0  # time ended: jump to one
    assert clip_phase(1.0, 0.05, 0.8) == 1.0  # held at one until cycle end
    assert clip_phase(0.4, 0.01, 0.4) == pytest.approx(0.41)


def test_clip_phase_never_decreases_or_exceeds_one():
    rng = np.random.default_rng(3)
    for _ in range(200):
        phi = rng.uniform(0, 1)
        dphi = rng.uniform(0, 0.1)
        t_hat = rng.uniform(0, 1.2)
        out = clip_phase(phi, dphi, t_hat)
        assert out >= phi and out <= 1.0


# -- rewards ---------------------------------------------------------------------


def test_head_reward_identity():
    w = RewardWeights()
    assert head_stability_reward(np.zeros(2), 0.0, w) == 1.0


def test_energy_reward_identity():
    w = RewardWeights()
    assert energy_reward(0.0, w) == 1.0


def test_reward_multiplicative_structure():
    w = RewardWeights()
    assert combine_reward(0.0, 0.9, 0.9, 1.0, w) == pytest.approx(w.w_energy)
    r = combine_reward(0.5, 0.8, 0.9, 0.7, w)
    assert r == pytest.approx(0.5 * 0.8 * 0.9 + w.w_energy * 0.7)


def test_reward_bounds():
    w = RewardWeights()
    rng = np.random.default_rng(4)
    for _ in range(200):
        r = combine_reward(
            head_stability_reward(rng.normal(size=2), rng.normal(), w),
            stride_reward(rng.normal(), w),
            velocity_reward(rng.normal(), 1.2, w),
            energy_reward(rng.uniform(0, 16), w),
            w,
        )
        assert 0.0 < r <= 1.0 + w.w_energy


# -- mirroring -------------------------------------------------------------------


def test_mirror_involution_bit_exact(env, reference_model):
    env.reset(reference_model.healthy_condition(), GaitCondition(), seed=0)
    rng = np.random.default_rng(5)
    for _ in range(20):
        obs = rng.normal(size=env.obs_dim)
        m = env.layout.mirror(obs)
        assert np.array_equal(env.layout.mirror(m), obs)


def test_mirror_swaps_muscle_blocks(env, reference_model):
    cond = reference_model.healthy_condition()
    weak = cond.weakness.copy()
    idx_l = reference_model.muscle_names.index("vasti_l")
    idx_r = reference_model.muscle_names.index("vasti_r")
    weak[idx_l] = 0.3
    obs = env.reset(AnatomyCondition(cond.body, weak, cond.contracture), GaitCondition(), seed=0)
    mirrored = env.layout.mirror(obs)
    base = 2 + 6 * 7
    assert obs[base + idx_l] == 0.3 and obs[base + idx_r] == 1.0
    assert mirrored[base + idx_l] == 1.0 and mirrored[base + idx_r] == 0.3


def test_mirror_shifts_phase_half_cycle(env, reference_model):
    env.reset(reference_model.healthy_condition(), GaitCondition(), seed=0)
    env.phi, env.t_hat = 0.25, 0.25
    obs = env.observe()
    mirrored = env.layout.mirror(obs)
    g = env.layout.gait_offset
    # sin/cos of phi + 0.5 is the negation of sin/cos of phi
    assert mirrored[g] == -obs[g] and mirrored[g + 1] == -obs[g + 1]
    two_pi = 2 * np.pi
    assert mirrored[g] == pytest.approx(np.sin(two_pi * 0.75))
    assert mirrored[g + 1] == pytest.approx(np.cos(two_pi * 0.75))


def test_mirror_action_involution():
    rng = np.random.default_rng(6)
    a = rng.normal(size=8)
    m = mirror_action(a)
    assert np.array_equal(mirror_action(m), a)
    assert np.array_equal(m[0:3], a[3:6]) and np.array_equal(m[3:6], a[0:3])
    assert m[6] == a[6] and m[7] == a[7]


# -- reset / pose optimization ----------------------------------------------------


def test_reset_deterministic(env, reference_model):
    o1 = env.reset(reference_model.healthy_condition(), GaitCondition(), seed=7)
    q1, qd1 = env.state.q.copy(), env.state.qdot.copy()
    o2 = env.reset(reference_model.healthy_condition(), GaitCondition(), seed=7)
    assert np.array_equal(o1, o2)
    assert np.array_equal(q1, env.state.q) and np.array_equal(qd1, env.state.qdot)


def test_reset_healthy_pose_close_to_reference(env, reference_model, reference):
    env.reset(reference_model.healthy_condition(), GaitCondition(), seed=0)
    q_opt = env._pose_cache[reference_model.healthy_condition().key()]
    assert np.abs(q_opt[:6] - reference.target(0.0)).max() < 1e-2


def test_reset_contracture_moves_joints_with_passive_torque(env, reference_model, reference):
    # severe bilateral hamstring contracture at the domain bound
    cond = reference_model.healthy_condition()
    contr = cond.contracture.copy()
    for name in ("hamstrings_l", "hamstrings_r"):
        idx = reference_model.muscle_names.index(name)
        lo, _ = reference_model.domain.bounds(f"contracture_{name}")
        contr[idx] = lo
    bad = AnatomyCondition(cond.body, cond.weakness, contr)

    env.reset(bad, GaitCondition(), seed=0)
    q_bad = env._pose_cache[bad.key()]
    env.reset(reference_model.healthy_condition(), GaitCondition(), seed=0)
    q_healthy = env._pose_cache[reference_model.healthy_condition().key()]

    # oracle: passive torque sign at the healthy pose tells the direction
    # the contracture pushes each affected joint
    from gaitforge.dynamics import Engine

    eng = Engine(gf.apply_anatomy(reference_model, bad))
    st = eng.standing_state()
    q = st.q.copy()
    q[3:] = q_healthy[:6]
    _, F_p, _, _, _ = eng.muscle_torque_terms(q, np.zeros(9))
    for j in range(6):
        tau_p = F_p[3 + j]
        if abs(tau_p) > 1.0:  # affected joints
            moved = q_bad[j] - q_healthy[j]
            assert np.sign(moved) == np.sign(tau_p), f"joint {j} moved against passive torque"


def test_pose_optimize_objective_monotone(reference_model, reference):
    from gaitforge.dynamics import Engine
    from gaitforge.gait_env import pose_optimize

    cond = reference_model.healthy_condition()
    contr = cond.contracture.copy()
    contr[:] = [reference_model.domain.bounds(f"contracture_{m}")[0] for m in reference_model.muscle_names]
    eng = Engine(gf.apply_anatomy(reference_model, AnatomyCondition(cond.body, cond.weakness, contr)))
    cfg = EnvConfig()
    # instrument: objective evaluated along the iterates must not increase
    q0 = np.concatenate([reference.target(0.0), [0.0]])
    x = pose_optimize(eng, q0, cfg)
    assert np.all(np.isfinite(x))
    # re-run with tight iteration budget and compare objective decrease
    from gaitforge.gait_env import pose_optimize as po

    cfg_short = EnvConfig(pose_iters=5)
    x5 = po(eng, q0, cfg_short)
    def obj(eng, xx):
        q = np.zeros(9)
        q[1] = 1.0
        q[2] = xx[6]
        q[3:] = xx[:6]
        _, F_p, _, _, _ = eng.muscle_torque_terms(q, np.zeros(9))
        return float(F_p[3:] @ F_p[3:])
    assert obj(eng, x) <= obj(eng, x5) + 1e-6


# -- stepping / termination ---------------------------------------------------------


def test_gait_speed_identity(env, reference_model, reference):
    for gs, gc in [(1.0, 1.0), (0.8, 1.2), (1.25, 0.75)]:
        env.reset(reference_model.healthy_condition(), GaitCondition(gs, gc), seed=0)
        assert env.speed == pytest.approx(reference.stride * gs * reference.cadence * gc)


def test_episode_determinism(env, reference_model):
    coord = qp_coordinator(env)
    action = np.zeros(8)
    action[6] = CONTROL_DT / env.cycle_time if env.engine else 0.03

    def run():
        env.reset(reference_model.healthy_condition(), GaitCondition(), seed=3)
        states = []
        for _ in range(15):
            obs, r, term, trunc, info = env.step(action, coord)
            states.append((env.state.q.copy(), r))
            if term:
                break
        return states

    s1 = run()
    s2 = run()
    assert len(s1) == len(s2)
    for (q1, r1), (q2, r2) in zip(s1, s2):
        assert np.array_equal(q1, q2) and r1 == r2


def test_termination_modes(env, reference_model):
    env.reset(reference_model.healthy_condition(), GaitCondition(), seed=0)
    # nominal standing state: continue
    term, trunc = env.terminate()
    assert not term and not trunc
    # timeout
    env.state.time = 10.0
    term, trunc = env.terminate()
    assert not term and trunc
    # fallen: com at ground level
    env.state.time = 3.0
    env.state.q[1] -= 0.6
    term, trunc = env.terminate()
    assert term and not trunc


def test_pitch_fall(env, reference_model):
    env.reset(reference_model.healthy_condition(), GaitCondition(), seed=0)
    env.state.q[2] = 1.2
    term, trunc = env.terminate()
    assert term


def test_reward_in_bounds_and_h_updates(env, reference_model):
    coord = qp_coordinator(env)
    env.reset(reference_model.healthy_condition(), GaitCondition(), seed=0)
    h0 = env.h_desired
    action = np.zeros(8)
    action[6] = CONTROL_DT / env.cycle_time
    strikes_before = len(env.strikes)
    for _ in range(30):
        obs, r, term, trunc, info = env.step(action, coord)
        assert 0.0 < r <= 1.0 + env.weights.w_energy
        if len(env.strikes) > strikes_before:
            side, _ = env.strikes[-1]
            heel, _ = env._heel_pos(side)
            assert env.h_desired == pytest.approx(heel[0] + env.stride_m)
            break
        if term:
            break
    assert len(env.strikes) > strikes_before, "no heel strike observed"


def test_observation_finite_and_documented_dim(env, reference_model):
    obs = env.reset(reference_model.healthy_condition(), GaitCondition(), seed=0)
    assert obs.shape == (102,)
    assert np.all(np.isfinite(obs))
