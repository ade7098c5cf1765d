import itertools

import numpy as np
import pytest

from gaitforge._core import pack_model
from gaitforge.coordination import (
    JacobianPacking,
    PackingError,
    QpInstance,
    compose_presigmoid,
    projected_gradient_residual,
    qp_objective,
    read_dataset,
    solve_qp,
    solve_qp_batch,
    solve_qp_dense,
    write_dataset,
)


@pytest.fixture(scope="module")
def packing(healthy_scaled):
    return JacobianPacking.from_packed_model(pack_model(healthy_scaled))


# -- solver ---------------------------------------------------------------


def test_single_muscle_interior_minimum():
    sol = solve_qp_dense(np.array([[1.0]]), np.zeros(1), np.array([0.5]), w_reg=0.0)
    assert sol.converged
    assert sol.a[0] == pytest.approx(0.5, abs=1e-6)


def test_single_muscle_clamped_at_box():
    sol = solve_qp_dense(np.array([[1.0]]), np.zeros(1), np.array([2.0]), w_reg=0.0)
    assert sol.converged
    assert sol.a[0] == pytest.approx(1.0, abs=1e-9)


def test_matches_grid_oracle_on_2_muscle_instances():
    rng = np.random.default_rng(0)
    grid = np.linspace(0.0, 1.0, 201)  # resolution 0.005
    pairs = np.array(list(itertools.product(grid, grid)))
    for _ in range(50):
        J = rng.normal(size=(2, 2))
        f_p = rng.normal(size=2)
        tau = rng.normal(size=2) * 2.0
        w = 0.01
        sol = solve_qp_dense(J, f_p, tau, w_reg=w)
        # exhaustive search over the same (normalized) objective
        s = np.linalg.norm(J, 2)
        r = (tau[None, :] - (pairs @ J.T + f_p[None, :])) / s
        objs = (r**2).sum(axis=1) + w * (pairs**2).sum(axis=1)
        assert sol.objective <= objs.min() + 1e-4


def test_kkt_conditions_on_16_muscle_instances(healthy_scaled, packing):
    from gaitforge.dynamics import Engine

    eng = Engine(healthy_scaled)
    rng = np.random.default_rng(1)
    st = eng.standing_state()
    for trial in range(20):
        q = st.q.copy()
        q[3:] = rng.uniform(-0.5, 0.3, 6)
        J_c, F_p, _, _, _ = eng.muscle_torque_terms(q, rng.uniform(-1, 1, 9))
        J = J_c[3:, :]
        tau = rng.normal(size=6) * 80.0
        sol = solve_qp_dense(J, F_p[3:], tau, w_reg=0.01, tol=1e-6)
        assert sol.converged
        pg, grad = projected_gradient_residual(J, F_p[3:], tau, 0.01, sol.a)
        assert np.linalg.norm(pg) < 1e-5
        # explicit KKT cases
        interior = (sol.a > 0) & (sol.a < 1)
        assert np.all(np.abs(grad[interior]) < 1e-5)
        assert np.all(grad[sol.a <= 0] >= -1e-5)
        assert np.all(grad[sol.a >= 1] <= 1e-5)


def test_strictly_convex_solution_unique():
    rng = np.random.default_rng(2)
    J = rng.normal(size=(6, 16))
    f_p = rng.normal(size=6)
    tau = rng.normal(size=6) * 50
    tol = 1e-8
    a1 = solve_qp_dense(J, f_p, tau, w_reg=0.05, tol=tol, a0=np.zeros(16)).a
    a2 = solve_qp_dense(J, f_p, tau, w_reg=0.05, tol=tol, a0=np.ones(16)).a
    assert np.abs(a1 - a2).max() < 10 * tol * 100  # scaled by problem conditioning


def test_nonconvergence_flagged_not_raised():
    rng = np.random.default_rng(42)
    J = rng.normal(size=(6, 16))
    sol = solve_qp_dense(J, rng.normal(size=6), rng.normal(size=6) * 30, w_reg=0.01, tol=1e-12, max_iter=2)
    assert not sol.converged
    assert np.all((sol.a >= 0) & (sol.a <= 1))


def test_batch_solver_matches_scalar_path():
    rng = np.random.default_rng(3)
    B = 32
    J = rng.normal(size=(B, 6, 16))
    f_p = rng.normal(size=(B, 6))
    tau = rng.normal(size=(B, 6)) * 40
    A, conv = solve_qp_batch(J, f_p, tau, w_reg=0.01, tol=1e-6, max_iter=4000)
    assert conv.all()
    for b in range(0, B, 5):
        ref = solve_qp_dense(J[b], f_p[b], tau[b], w_reg=0.01, tol=1e-8)
        assert qp_objective(J[b], f_p[b], tau[b], 0.01, A[b]) <= ref.objective + 1e-6


def test_rejects_negative_regularizer():
    with pytest.raises(ValueError):
        solve_qp_dense(np.eye(2), np.zeros(2), np.zeros(2), w_reg=-1.0)


# -- packing ----------------------------------------------------------------


def test_pack_unpack_round_trip(packing):
    rng = np.random.default_rng(4)
    dense = np.zeros((packing.n_joints, packing.n_muscles))
    dense[packing.joints, packing.muscles] = rng.normal(size=packing.size)
    packed = packing.pack(dense)
    assert np.array_equal(packing.unpack(packed), dense)


def test_pack_zero_matrix(packing):
    packed = packing.pack(np.zeros((packing.n_joints, packing.n_muscles)))
    assert np.array_equal(packed, np.zeros(packing.size))


def test_pattern_size_matches_topology(healthy_scaled, packing):
    # count (joint, crossing muscle) pairs straight from the muscle routes
    expected = sum(len(m.joints) for m in healthy_scaled.spec.muscles)
    assert packing.size == expected == 22


def test_off_pattern_entry_raises(packing):
    dense = np.zeros((packing.n_joints, packing.n_muscles))
    on_pattern = set(zip(packing.joints.tolist(), packing.muscles.tolist()))
    for j in range(packing.n_joints):
        for m_i in range(packing.n_muscles):
            if (j, m_i) not in on_pattern:
                dense[j, m_i] = 1e-6
                with pytest.raises(PackingError):
                    packing.pack(dense)
                return


def test_real_jacobians_fit_pattern(healthy_scaled, packing):
    from gaitforge.dynamics import Engine

    eng = Engine(healthy_scaled)
    rng = np.random.default_rng(5)
    st = eng.standing_state()
    for _ in range(10):
        q = st.q.copy()
        q[3:] = rng.uniform(-0.6, 0.4, 6)
        J_c, _, _, _, _ = eng.muscle_torque_terms(q, rng.uniform(-1, 1, 9))
        packed = packing.pack(J_c[3:, :])  # must not raise
        assert np.array_equal(packing.unpack(packed), J_c[3:, :])


# -- pre-sigmoid composition --------------------------------------------------


def test_compose_zero_alphas_is_base():
    rng = np.random.default_rng(6)
    base = rng.normal(size=16)
    overlays = [(0.0, rng.normal(size=16)), (0.0, rng.normal(size=16))]
    out = compose_presigmoid(base, overlays)
    expected = 1.0 / (1.0 + np.exp(-base))
    assert np.array_equal(out, expected)


def test_compose_single_net_is_its_sigmoid():
    z = np.linspace(-5, 5, 16)
    assert np.allclose(compose_presigmoid(z), 1.0 / (1.0 + np.exp(-z)), atol=0)


def test_compose_two_nets_alpha_one():
    rng = np.random.default_rng(7)
    z0, z1 = rng.normal(size=16), rng.normal(size=16)
    out = compose_presigmoid(z0, [(1.0, z1)])
    assert np.allclose(out, 1.0 / (1.0 + np.exp(-(z0 + z1))), atol=1e-15)


def test_compose_output_in_unit_interval():
    rng = np.random.default_rng(8)
    for _ in range(100):
        base = rng.normal(size=16) * 10
        overlays = [(rng.uniform(), rng.normal(size=16) * 10) for _ in range(3)]
        out = compose_presigmoid(base, overlays)
        assert np.all((out > 0.0) & (out < 1.0))


def test_compose_monotone_in_alpha_for_sign_uniform_logits():
    base = np.zeros(4)
    pos = np.array([0.5, 1.0, 2.0, 0.1])
    prev = compose_presigmoid(base, [(0.0, pos)])
    for alpha in np.linspace(0.1, 1.0, 10):
        cur = compose_presigmoid(base, [(alpha, pos)])
        assert np.all(cur >= prev)
        prev = cur


# -- dataset IO ----------------------------------------------------------------


def test_dataset_round_trip(tmp_path, packing):
    rng = np.random.default_rng(9)
    n = 50
    j = rng.normal(size=(n, packing.size))
    f_p = rng.normal(size=(n, packing.n_joints))
    tau = rng.normal(size=(n, packing.n_joints))
    a = rng.uniform(0, 1, size=(n, packing.n_muscles))
    path = tmp_path / "tuples.csv"
    write_dataset(path, j, f_p, tau, a)
    j2, f2, t2, a2 = read_dataset(path, packing)
    assert np.allclose(j, j2, atol=0) and np.allclose(a, a2, atol=0)
    assert np.allclose(f_p, f2, atol=0) and np.allclose(tau, t2, atol=0)
