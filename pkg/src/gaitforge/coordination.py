"""Muscle coordination: activation QP, input packing, and net composition.

The coordinator answers "which activations realize a desired joint torque":

    min_A ||tau_desired - (J_c A + F_p)||^2 + w_reg ||A||^2,  0 <= a_i <= 1

solved by accelerated projected gradient descent.  A regression network is
distilled from solved instances (see cascade/training code); stacked
networks combine before the output sigmoid so composed activations stay in
(0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelError


class PackingError(ModelError):
    """A dense Jacobian carries weight outside the declared sparsity."""


@dataclass(frozen=True)
class JacobianPacking:
    """Fixed (joint, muscle) sparsity pattern of the contractile Jacobian.

    Packing order follows the model file: muscles in file order, each
    contributing its crossing joints in skeleton joint order.  This layout
    is the regression networks' input contract.
    """

    n_joints: int
    n_muscles: int
    joints: np.ndarray  # (nZ,) actuated joint indices
    muscles: np.ndarray  # (nZ,) muscle indices

    @classmethod
    def from_packed_model(cls, pm) -> "JacobianPacking":
        return cls(
            n_joints=pm.n_joints,
            n_muscles=pm.n_muscles,
            joints=np.asarray(pm.pat_joint, dtype=np.int64),
            muscles=np.asarray(pm.pat_muscle, dtype=np.int64),
        )

    @property
    def size(self) -> int:
        return len(self.joints)

    def pack(self, J_act: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        """Vectorize the actuated-joint Jacobian block (nJ, nM) losslessly."""
        J_act = np.asarray(J_act, dtype=float)
        if J_act.shape != (self.n_joints, self.n_muscles):
            raise PackingError(f"expected shape {(self.n_joints, self.n_muscles)}, got {J_act.shape}")
        off = J_act.copy()
        off[self.joints, self.muscles] = 0.0
        worst = float(np.abs(off).max()) if off.size else 0.0
        if worst > tol:
            j, m = np.unravel_index(int(np.abs(off).argmax()), off.shape)
            raise PackingError(f"entry ({j}, {m}) = {worst:g} lies off the declared pattern")
        return J_act[self.joints, self.muscles].copy()

    def unpack(self, packed: np.ndarray) -> np.ndarray:
        packed = np.asarray(packed, dtype=float)
        if packed.shape[-1] != self.size:
            raise PackingError(f"expected {self.size} packed entries, got {packed.shape[-1]}")
        dense = np.zeros(packed.shape[:-1] + (self.n_joints, self.n_muscles))
        dense[..., self.joints, self.muscles] = packed
        return dense


@dataclass(frozen=True)
class QpInstance:
    """One coordination problem in packed form."""

    j_packed: np.ndarray  # (nZ,)
    f_p: np.ndarray  # (nJ,)
    tau_desired: np.ndarray  # (nJ,)
    w_reg: float = 0.01


@dataclass
class QpSolution:
    a: np.ndarray
    converged: bool
    iterations: int
    pg_norm: float
    objective: float


def _torque_scale(J):
    """Per-instance normalization: the spectral norm of the Jacobian."""
    s = float(np.linalg.norm(J, 2)) if np.asarray(J).size else 0.0
    return s if s > 0.0 else 1.0


def qp_objective(J, f_p, tau, w_reg, a):
    """Scale-normalized objective: the torque residual is measured relative
    to the instance's Jacobian norm so the regularizer weight is
    dimensionless and conditioning is uniform across instances."""
    s = _torque_scale(J)
    r = (tau - (J @ a + f_p)) / s
    return float(r @ r + w_reg * (a @ a))


def projected_gradient_residual(J, f_p, tau, w_reg, a):
    """KKT residual of the normalized objective: gradient components
    pointing into the feasible box."""
    s = _torque_scale(J)
    Jn = J / s
    grad = 2.0 * (Jn.T @ (Jn @ a + f_p / s - tau / s)) + 2.0 * w_reg * a
    pg = grad.copy()
    pg[(a <= 0.0) & (grad > 0.0)] = 0.0
    pg[(a >= 1.0) & (grad < 0.0)] = 0.0
    return pg, grad


def solve_qp_dense(J, f_p, tau, w_reg=0.01, tol=1e-6, max_iter=10_000, a0=None) -> QpSolution:
    """Accelerated projected gradient descent on the box-constrained QP.

    The instance is normalized by its Jacobian spectral norm before
    solving, which makes w_reg a relative weight and keeps the iteration
    well conditioned regardless of torque units.  Step size 1/L from the
    Lipschitz constant; Nesterov momentum with restart on objective
    increase.  Terminates when the projected-gradient norm (normalized
    units) drops below tol.  Never raises on non-convergence: the flag on
    the result tells the caller.
    """
    J = np.asarray(J, dtype=float)
    f_p = np.asarray(f_p, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if w_reg < 0.0:
        raise ValueError("w_reg must be >= 0")
    n = J.shape[1]
    a = np.clip(a0, 0.0, 1.0).astype(float) if a0 is not None else np.full(n, 0.5)
    s = _torque_scale(J)
    Jn = J / s
    fn = f_p / s
    tn = tau / s
    L = 2.0 * (1.0 + w_reg)  # spectral norm of Jn is 1 by construction
    step = 1.0 / L
    y = a.copy()
    t = 1.0
    f_prev = qp_objective(J, f_p, tau, w_reg, a)
    for it in range(1, max_iter + 1):
        grad_y = 2.0 * (Jn.T @ (Jn @ y + fn - tn)) + 2.0 * w_reg * y
        a_new = np.clip(y - step * grad_y, 0.0, 1.0)
        pg, _ = projected_gradient_residual(J, f_p, tau, w_reg, a_new)
        pg_norm = float(np.linalg.norm(pg))
        if pg_norm < tol:
            return QpSolution(a_new, True, it, pg_norm, qp_objective(J, f_p, tau, w_reg, a_new))
        f_new = qp_objective(J, f_p, tau, w_reg, a_new)
        if f_new > f_prev:  # momentum restart
            y = a_new.copy()
            t = 1.0
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = a_new + ((t - 1.0) / t_new) * (a_new - a)
            t = t_new
        a = a_new
        f_prev = f_new
    pg, _ = projected_gradient_residual(J, f_p, tau, w_reg, a)
    return QpSolution(a, False, max_iter, float(np.linalg.norm(pg)), qp_objective(J, f_p, tau, w_reg, a))


def solve_qp(inst: QpInstance, packing: JacobianPacking, tol=1e-6, max_iter=10_000) -> QpSolution:
    J = packing.unpack(inst.j_packed)
    return solve_qp_dense(J, inst.f_p, inst.tau_desired, inst.w_reg, tol, max_iter)


def solve_qp_batch(J, f_p, tau, w_reg=0.01, tol=1e-6, max_iter=2_000, check_every=25):
    """Vectorized projected-gradient solve of many instances at once.

    J: (B, nJ, nM); f_p, tau: (B, nJ).  Returns (A (B, nM), converged (B,)).
    Used for distillation dataset generation where per-instance Python
    overhead would dominate.
    """
    J = np.asarray(J, dtype=float)
    f_p = np.asarray(f_p, dtype=float)
    tau = np.asarray(tau, dtype=float)
    B, nJ, nM = J.shape
    sigma = np.linalg.norm(J, ord=2, axis=(1, 2))
    sigma = np.where(sigma > 0.0, sigma, 1.0)
    # normalize each instance as in solve_qp_dense
    J = J / sigma[:, None, None]
    f_p = f_p / sigma[:, None]
    tau = tau / sigma[:, None]
    L = 2.0 * (1.0 + w_reg)
    step = np.full((B, 1), 1.0 / L)
    a = np.full((B, nM), 0.5)
    y = a.copy()
    t = np.ones(B)
    JT = np.transpose(J, (0, 2, 1))
    resid = np.einsum("bjm,bm->bj", J, y) + f_p - tau
    f_prev = np.einsum("bj,bj->b", resid, resid) + w_reg * np.einsum("bm,bm->b", y, y)
    converged = np.zeros(B, dtype=bool)
    for it in range(1, max_iter + 1):
        resid = np.einsum("bjm,bm->bj", J, y) + f_p - tau
        grad = 2.0 * np.einsum("bmj,bj->bm", JT, resid) + 2.0 * w_reg * y
        a_new = np.clip(y - step * grad, 0.0, 1.0)
        resid_a = np.einsum("bjm,bm->bj", J, a_new) + f_p - tau
        f_new = np.einsum("bj,bj->b", resid_a, resid_a) + w_reg * np.einsum("bm,bm->b", a_new, a_new)
        restart = f_new > f_prev
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        beta = np.where(restart, 0.0, (t - 1.0) / t_new)
        y = a_new + beta[:, None] * (a_new - a)
        t = np.where(restart, 1.0, t_new)
        a = a_new
        f_prev = f_new
        if it % check_every == 0 or it == max_iter:
            grad_a = 2.0 * np.einsum("bmj,bj->bm", JT, resid_a) + 2.0 * w_reg * a
            pg = grad_a.copy()
            pg[(a <= 0.0) & (grad_a > 0.0)] = 0.0
            pg[(a >= 1.0) & (grad_a < 0.0)] = 0.0
            converged = np.linalg.norm(pg, axis=1) < tol
            if converged.all():
                break
    return a, converged


def compose_presigmoid(base_logits, overlays=()):
    """Activations from stacked coordinator outputs.

    base_logits: (nM,) pre-sigmoid output of the base network (weight 1);
    overlays: iterable of (alpha, logits) with alpha in [0, 1].  The sum
    passes through one sigmoid, guaranteeing outputs in (0, 1).
    """
    z = np.asarray(base_logits, dtype=float).copy()
    for alpha, logits in overlays:
        z += float(alpha) * np.asarray(logits, dtype=float)
    # cap saturation so the output stays strictly inside (0, 1) in floats
    z = np.clip(z, -30.0, 30.0)
    return 1.0 / (1.0 + np.exp(-z))


# -- activation tuple dataset (line-delimited text) ----------------------------

DATASET_MAGIC = "# gaitforge-activation-tuples v1"


def write_dataset(path, j_packed, f_p, tau, a_star):
    """Write solved coordination tuples: one CSV row per tuple.

    Columns: j_packed entries, F_p entries, tau_desired entries, then the
    QP solution activations.
    """
    j_packed = np.asarray(j_packed)
    f_p = np.asarray(f_p)
    tau = np.asarray(tau)
    a_star = np.asarray(a_star)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(DATASET_MAGIC + "\n")
        fh.write(f"# columns: j[{j_packed.shape[1]}] f_p[{f_p.shape[1]}] tau[{tau.shape[1]}] a[{a_star.shape[1]}]\n")
        block = np.hstack([j_packed, f_p, tau, a_star])
        np.savetxt(fh, block, fmt="%.17g", delimiter=",")


def read_dataset(path, packing: JacobianPacking):
    with open(path, "r", encoding="utf-8") as fh:
        magic = fh.readline().strip()
        if magic != DATASET_MAGIC:
            raise ValueError(f"not an activation tuple dataset: {magic!r}")
        fh.readline()
        block = np.loadtxt(fh, delimiter=",", ndmin=2)
    nz, nj, nm = packing.size, packing.n_joints, packing.n_muscles
    if block.shape[1] != nz + 2 * nj + nm:
        raise ValueError("dataset column count does not match the model packing")
    j = block[:, :nz]
    f_p = block[:, nz : nz + nj]
    tau = block[:, nz + nj : nz + 2 * nj]
    a = block[:, nz + 2 * nj :]
    return j, f_p, tau, a
