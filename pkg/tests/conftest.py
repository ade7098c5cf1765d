import numpy as np
import pytest

from gaitforge.model import (
    ContactParams,
    ContactPoint,
    GaitBasics,
    HillParams,
    JointSpec,
    LinkSpec,
    ModelSpec,
    MuscleUnit,
    ParameterDomain,
    PdGains,
    SkeletonSpec,
    Waypoint,
    build_reference_model,
    apply_anatomy,
)


def default_hill(f_max=1000.0, l_opt=0.3):
    return HillParams(
        f_max=f_max,
        l_opt=l_opt,
        v_max=10.0,
        passive_threshold=1.0,
        fl_width=0.45,
        fv_shorten=0.25,
        fv_lengthen_max=1.5,
        passive_scale=0.05,
        passive_exponent=4.0,
        f_passive_max=f_max,
    )


def chain_model(n_segments=2, muscles=(), contact_points=(), seg_len=0.4, seg_mass=5.0):
    """Small fixed-base chain used by dynamics oracles: a stationary 'base'
    root link with n_segments pendulum links hanging from it."""
    links = [LinkSpec("base", 0.3, 4.0, 0.08, (0.0, 0.1))]
    joints = []
    for i in range(1, n_segments + 1):
        links.append(
            LinkSpec(f"seg{i}", seg_len, seg_mass, seg_mass * (0.3 * seg_len) ** 2, (0.0, -0.45 * seg_len))
        )
        parent = "base" if i == 1 else f"seg{i-1}"
        anchor = (0.0, 0.0) if i == 1 else (0.0, -seg_len)
        joints.append(JointSpec(f"j{i}", parent, f"seg{i}", anchor, (-3.0, 3.0)))
    sk = SkeletonSpec(tuple(links), tuple(joints), "base")
    contact = ContactParams(0.0, 1.0e5, 1.0e3, 0.9, 0.03, tuple(contact_points))
    pd = PdGains(tuple(j.name for j in joints), tuple(80.0 for _ in joints), tuple(8.0 for _ in joints))
    dom = ParameterDomain((), np.zeros(0), np.zeros(0))
    model = ModelSpec("chain", -9.81, sk, tuple(muscles), contact, pd, GaitBasics(0.72, 1.8), dom)
    model.validate()
    return model


@pytest.fixture(scope="session")
def reference_model():
    return build_reference_model()


@pytest.fixture(scope="session")
def healthy_scaled(reference_model):
    return apply_anatomy(reference_model, reference_model.healthy_condition())
