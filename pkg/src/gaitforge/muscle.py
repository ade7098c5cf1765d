"""Hill-type musculotendon mechanics: lengths, moment arms, forces, capacity.

Sign convention: the moment arm of muscle m about joint j is -dl_m/dq_j, so
a muscle that shortens as a joint angle increases produces positive torque
at that joint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import HillParams


@dataclass(frozen=True)
class MuscleState:
    """Normalized muscle state: l in optimal lengths, ldot per v_max."""

    l: float
    ldot: float
    a: float


@dataclass(frozen=True)
class ForceCapacity:
    """Per-joint contractile torque bounds and aggregate passive torque."""

    f_min: np.ndarray  # (nJ,) <= 0
    f_max: np.ndarray  # (nJ,) >= 0
    f_p: np.ndarray  # (nJ,)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.f_min, self.f_max, self.f_p])


def contractile_curve(hill: HillParams, l: float, ldot: float) -> float:
    """g_c(l, ldot): force-length Gaussian times hyperbolic force-velocity.

    Normalized so g_c(1, 0) = 1 exactly.
    """
    fl = math.exp(-((l - 1.0) ** 2) / hill.fl_width)
    if ldot <= 0.0:
        fv = max(0.0, (1.0 + ldot) / (1.0 - ldot / hill.fv_shorten))
    else:
        fv = (hill.fv_lengthen_max * ldot + hill.fv_shorten) / (ldot + hill.fv_shorten)
    return fl * fv


def passive_curve(hill: HillParams, l: float) -> float:
    """g_p(l): zero at or below the passive threshold, exponential above."""
    over = l - hill.passive_threshold
    if over <= 0.0:
        return 0.0
    return hill.passive_scale * (math.exp(hill.passive_exponent * over) - 1.0)


def hill_force(hill: HillParams, l: float, ldot: float, a: float) -> tuple[float, float]:
    """Muscle force decomposed as (contractile, passive), both >= 0 N.

    The contractile component is f_max * a * g_c(l, ldot); the passive
    component f_passive_max * g_p(l) is anchored to the reference strength
    so that weakness does not soften passive stretch response.
    """
    if not (0.0 <= a <= 1.0):
        raise ValueError(f"activation {a} outside [0, 1]")
    fc = hill.f_max * a * contractile_curve(hill, l, ldot)
    fp = hill.f_passive_max * passive_curve(hill, l)
    return fc, fp


def muscle_length(engine, q, muscle, qdot=None):
    """Path length of one muscle: (length m, normalized l, normalized ldot).

    `muscle` is a name or index.  Normalized rate is per v_max and needs
    qdot; it is 0.0 when qdot is omitted.
    """
    idx = muscle if isinstance(muscle, int) else engine.pm.muscle_names.index(muscle)
    if qdot is None:
        qdot = np.zeros(engine.pm.nq)
    lengths, ldot, _ = engine.backend.muscle_geometry(engine.pm, q, qdot)
    l_opt = engine.pm.l_opt[idx]
    v_max = engine.pm.v_max[idx]
    return float(lengths[idx]), float(lengths[idx] / l_opt), float(ldot[idx] / (l_opt * v_max))


def muscle_jacobian(engine, q):
    """d(path length)/dq for all muscles, shape (nM, nq), m/rad.

    Root columns are identically zero; moment arms are the negatives of the
    actuated-joint columns.
    """
    _, _, dldq = engine.backend.muscle_geometry(engine.pm, q, np.zeros(engine.pm.nq))
    return dldq


def joint_torques(engine, q, qdot, activations):
    """Muscle-generated generalized torques.

    Returns (tau (nq,), J_c (nq, nM), F_p (nq,)) with
    tau = J_c @ activations + F_p.  Column m of J_c is the moment-arm
    vector of muscle m times its current contractile force at a = 1.
    """
    activations = np.asarray(activations, dtype=float)
    if activations.shape != (engine.pm.n_muscles,):
        raise ValueError("activation vector length mismatch")
    if np.any(activations < 0.0) or np.any(activations > 1.0):
        raise ValueError("activations must lie in [0, 1]")
    J_c, F_p, _, _, _ = engine.backend.muscle_torque_terms(engine.pm, q, qdot)
    tau = J_c @ activations + F_p
    return tau, J_c, F_p


def force_capacity(J_c, F_p, n_root: int = 3) -> ForceCapacity:
    """Exact per-joint contractile torque range under activations in [0,1].

    Row-wise positive/negative sums of the actuated rows of J_c; the root
    rows are excluded.
    """
    J = np.asarray(J_c, dtype=float)[n_root:, :]
    fp = np.asarray(F_p, dtype=float)[n_root:]
    f_max = np.maximum(J, 0.0).sum(axis=1)
    f_min = np.minimum(J, 0.0).sum(axis=1)
    return ForceCapacity(f_min=f_min, f_max=f_max, f_p=fp)
