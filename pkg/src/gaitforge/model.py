"""Planar musculoskeletal model: reference anatomy, condition scaling, file IO.

The model is a sagittal-plane biped: a head-arms-trunk (HAT) link on a 3-DoF
floating root plus left/right thigh, shank and foot connected by revolute
hips, knees and ankles, actuated by 16 path-routed Hill-type muscles.

Anatomy conditions scale the reference model: per-segment size factors
(length x c, mass x c^3, inertia x c^5) and per-muscle weakness (scales
maximal isometric force) and contracture (scales optimal length).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

MODEL_FORMAT_VERSION = 1

BODY_PARAM_NAMES = (
    "c_HAT",
    "c_thigh_l",
    "c_shank_l",
    "c_foot_l",
    "c_thigh_r",
    "c_shank_r",
    "c_foot_r",
)

# Link whose size each body parameter controls.
_BODY_PARAM_LINK = {
    "c_HAT": "HAT",
    "c_thigh_l": "thigh_l",
    "c_shank_l": "shank_l",
    "c_foot_l": "foot_l",
    "c_thigh_r": "thigh_r",
    "c_shank_r": "shank_r",
    "c_foot_r": "foot_r",
}

GAIT_PARAM_NAMES = ("stride", "cadence")


class ModelError(Exception):
    """Malformed model definition or model file."""


class DomainViolationError(ValueError):
    """A condition parameter is outside its declared bounds."""

    def __init__(self, violations):
        self.violations = list(violations)
        parts = [f"{name}={value:g} outside [{lo:g}, {hi:g}]" for name, value, lo, hi in self.violations]
        super().__init__("; ".join(parts))


@dataclass(frozen=True)
class LinkSpec:
    name: str
    length: float  # m
    mass: float  # kg
    inertia: float  # kg m^2 about COM
    com: tuple[float, float]  # m, in link frame


@dataclass(frozen=True)
class JointSpec:
    name: str
    parent: str
    child: str
    anchor: tuple[float, float]  # m, joint position in parent frame
    limits: tuple[float, float]  # rad


@dataclass(frozen=True)
class SkeletonSpec:
    links: tuple[LinkSpec, ...]
    joints: tuple[JointSpec, ...]
    root: str

    def link_index(self, name: str) -> int:
        for i, link in enumerate(self.links):
            if link.name == name:
                return i
        raise ModelError(f"unknown link {name!r}")

    def validate(self) -> None:
        names = [l.name for l in self.links]
        if len(set(names)) != len(names):
            raise ModelError("duplicate link names")
        if self.root not in names:
            raise ModelError(f"root link {self.root!r} not defined")
        for link in self.links:
            if link.mass <= 0.0:
                raise ModelError(f"link {link.name}: mass must be > 0")
            if link.length <= 0.0:
                raise ModelError(f"link {link.name}: length must be > 0")
        parent_of: dict[str, str] = {}
        for j in self.joints:
            if j.child in parent_of:
                raise ModelError(f"link {j.child} has more than one parent joint")
            if j.child == self.root:
                raise ModelError("root link cannot be a joint child")
            parent_of[j.child] = j.parent
        for name in names:
            if name != self.root and name not in parent_of:
                raise ModelError(f"link {name} is not connected to the tree")
        # reject cycles / unreachable parents
        for name in names:
            seen = set()
            cur = name
            while cur != self.root:
                if cur in seen:
                    raise ModelError(f"kinematic loop through link {cur}")
                seen.add(cur)
                cur = parent_of[cur]


@dataclass(frozen=True)
class HillParams:
    """Hill-type musculotendon constants.

    Force model: f = f_max * (a * g_c(l, ldot) + g_p(l)) with l the path
    length normalized by l_opt and ldot the normalized lengthening rate per
    v_max.  g_c(1, 0) = 1 and g_p vanishes at or below passive_threshold.
    """

    f_max: float  # N, contractile strength (weakness scales this)
    l_opt: float  # m
    v_max: float  # optimal lengths per second
    passive_threshold: float  # normalized length where passive force starts
    fl_width: float  # force-length Gaussian width
    fv_shorten: float  # force-velocity curvature on the shortening side
    fv_lengthen_max: float  # eccentric force plateau (multiple of f_max)
    passive_scale: float  # passive force scale (multiple of f_passive_max)
    passive_exponent: float  # passive force exponential rate
    f_passive_max: float  # N, passive strength (independent of weakness)

    def validate(self, name: str) -> None:
        for attr in ("f_max", "l_opt", "v_max", "f_passive_max"):
            if getattr(self, attr) <= 0.0:
                raise ModelError(f"muscle {name}: {attr} must be > 0")


@dataclass(frozen=True)
class Waypoint:
    link: str
    pos: tuple[float, float]  # m, in link frame


@dataclass(frozen=True)
class MuscleUnit:
    name: str
    hill: HillParams
    path: tuple[Waypoint, ...]  # origin first, insertion last
    joints: tuple[str, ...]  # actuated joints the path crosses (packing order)

    def validate(self) -> None:
        if len(self.path) < 2:
            raise ModelError(f"muscle {self.name}: path needs >= 2 waypoints")
        self.hill.validate(self.name)


@dataclass(frozen=True)
class ContactPoint:
    link: str
    name: str
    pos: tuple[float, float]


@dataclass(frozen=True)
class ContactParams:
    ground_height: float
    normal_stiffness: float  # N/m
    normal_damping: float  # N s/m
    friction: float
    friction_smoothing: float  # m/s, slip speed where friction saturates
    points: tuple[ContactPoint, ...]

    def validate(self) -> None:
        if self.normal_stiffness < 0 or self.normal_damping < 0 or self.friction < 0:
            raise ModelError("contact stiffness/damping/friction must be >= 0")


@dataclass(frozen=True)
class PdGains:
    joints: tuple[str, ...]
    kp: tuple[float, ...]  # N m / rad
    kd: tuple[float, ...]  # N m s / rad

    def validate(self) -> None:
        if any(k <= 0 for k in self.kp) or any(k <= 0 for k in self.kd):
            raise ModelError("PD gains must be > 0")


@dataclass(frozen=True)
class GaitBasics:
    """Reference gait scalars: stride is the distance covered per step
    (successive heel strikes of opposite feet), cadence is steps per second.
    One gait cycle is two steps."""

    stride: float  # m per step
    cadence: float  # steps per second

    @property
    def cycle_duration(self) -> float:
        return 2.0 / self.cadence

    @property
    def speed(self) -> float:
        return self.stride * self.cadence


@dataclass(frozen=True)
class ParameterDomain:
    """Per-parameter bounds for anatomy (7 body + 16 weakness + 16
    contracture) and gait (stride, cadence) entries."""

    names: tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))
        if not (len(self.names) == self.lower.shape[0] == self.upper.shape[0]):
            raise ModelError("domain names/bounds length mismatch")
        if np.any(self.lower > self.upper):
            bad = self.names[int(np.argmax(self.lower > self.upper))]
            raise ModelError(f"domain bound lower > upper for {bad}")

    def __eq__(self, other):
        if not isinstance(other, ParameterDomain):
            return NotImplemented
        return (
            self.names == other.names
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ModelError(f"unknown domain parameter {name!r}") from None

    def bounds(self, name: str) -> tuple[float, float]:
        i = self.index(name)
        return float(self.lower[i]), float(self.upper[i])


@dataclass(frozen=True)
class AnatomyCondition:
    """Body scale factors plus per-muscle weakness and contracture."""

    body: np.ndarray  # (7,) order: BODY_PARAM_NAMES
    weakness: np.ndarray  # (n_muscles,) in (0, 1]
    contracture: np.ndarray  # (n_muscles,) in (0, 1]

    def __post_init__(self):
        object.__setattr__(self, "body", np.asarray(self.body, dtype=float))
        object.__setattr__(self, "weakness", np.asarray(self.weakness, dtype=float))
        object.__setattr__(self, "contracture", np.asarray(self.contracture, dtype=float))
        if self.body.shape != (len(BODY_PARAM_NAMES),):
            raise ModelError(f"body must have {len(BODY_PARAM_NAMES)} entries")
        if self.weakness.shape != self.contracture.shape:
            raise ModelError("weakness/contracture length mismatch")

    def __eq__(self, other):
        if not isinstance(other, AnatomyCondition):
            return NotImplemented
        return (
            np.array_equal(self.body, other.body)
            and np.array_equal(self.weakness, other.weakness)
            and np.array_equal(self.contracture, other.contracture)
        )

    @classmethod
    def healthy(cls, n_muscles: int) -> "AnatomyCondition":
        return cls(np.ones(len(BODY_PARAM_NAMES)), np.ones(n_muscles), np.ones(n_muscles))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.body, self.weakness, self.contracture])

    @classmethod
    def from_vector(cls, vec) -> "AnatomyCondition":
        vec = np.asarray(vec, dtype=float)
        nb = len(BODY_PARAM_NAMES)
        nm = (vec.shape[0] - nb) // 2
        if vec.shape[0] != nb + 2 * nm:
            raise ModelError("condition vector length must be 7 + 2*n_muscles")
        return cls(vec[:nb], vec[nb : nb + nm], vec[nb + nm :])

    def key(self) -> bytes:
        """Stable hash key (used to cache per-condition work)."""
        return self.as_vector().tobytes()


@dataclass(frozen=True)
class ModelSpec:
    """The full parsed model definition (reference anatomy + constants)."""

    name: str
    gravity: float
    skeleton: SkeletonSpec
    muscles: tuple[MuscleUnit, ...]
    contact: ContactParams
    pd: PdGains
    gait: GaitBasics
    domain: ParameterDomain
    version: int = MODEL_FORMAT_VERSION

    def validate(self) -> None:
        self.skeleton.validate()
        self.contact.validate()
        self.pd.validate()
        names = set()
        actuated = {j.name for j in self.skeleton.joints}
        for m in self.muscles:
            m.validate()
            if m.name in names:
                raise ModelError(f"duplicate muscle name {m.name}")
            names.add(m.name)
            for wp in m.path:
                self.skeleton.link_index(wp.link)
            declared = set(m.joints)
            derived = set(_crossing_joints(self.skeleton, m))
            if declared != derived:
                raise ModelError(
                    f"muscle {m.name}: declared joints {sorted(declared)} do not match "
                    f"path topology {sorted(derived)}"
                )
            if not declared <= actuated:
                raise ModelError(f"muscle {m.name}: unknown joint in declaration")
        if set(self.pd.joints) != actuated:
            raise ModelError("PD gains must cover exactly the actuated joints")

    @property
    def muscle_names(self) -> tuple[str, ...]:
        return tuple(m.name for m in self.muscles)

    @property
    def joint_names(self) -> tuple[str, ...]:
        return tuple(j.name for j in self.skeleton.joints)

    def healthy_condition(self) -> AnatomyCondition:
        return AnatomyCondition.healthy(len(self.muscles))


@dataclass(frozen=True)
class ScaledModel:
    """A concrete simulation model: the reference with a condition applied."""

    spec: ModelSpec  # scaled copies of skeleton/muscles/contact live here
    condition: AnatomyCondition
    reference: ModelSpec


def _link_chain_to_root(skeleton: SkeletonSpec, link: str) -> list[str]:
    parent_of = {j.child: j.parent for j in skeleton.joints}
    chain = [link]
    while chain[-1] != skeleton.root:
        chain.append(parent_of[chain[-1]])
    return chain


def _crossing_joints(skeleton: SkeletonSpec, muscle: MuscleUnit) -> list[str]:
    """Actuated joints whose angle changes the muscle's path length: the
    joints on the tree path between consecutive waypoint links."""
    joint_of_child = {j.child: j.name for j in skeleton.joints}
    crossed: list[str] = []
    for a, b in zip(muscle.path[:-1], muscle.path[1:]):
        ca = _link_chain_to_root(skeleton, a.link)
        cb = _link_chain_to_root(skeleton, b.link)
        shared = set(ca) & set(cb)
        # walk each chain until the first shared ancestor
        for chain in (ca, cb):
            for name in chain:
                if name in shared:
                    break
                crossed.append(joint_of_child[name])
    out = []
    for j in (j.name for j in skeleton.joints):
        if j in crossed and j not in out:
            out.append(j)
    return out


def zero_pose_link_origins(skeleton: SkeletonSpec) -> dict[str, tuple[float, float]]:
    """Link frame origins in the reference standing pose (all angles zero),
    with the root frame at (0, 0)."""
    origins = {skeleton.root: (0.0, 0.0)}
    pending = list(skeleton.joints)
    while pending:
        progressed = False
        for j in list(pending):
            if j.parent in origins:
                px, py = origins[j.parent]
                origins[j.child] = (px + j.anchor[0], py + j.anchor[1])
                pending.remove(j)
                progressed = True
        if not progressed:
            raise ModelError("disconnected joint definitions")
    return origins


def muscle_path_length_zero_pose(skeleton: SkeletonSpec, muscle: MuscleUnit) -> float:
    origins = zero_pose_link_origins(skeleton)
    pts = []
    for wp in muscle.path:
        ox, oy = origins[wp.link]
        pts.append((ox + wp.pos[0], oy + wp.pos[1]))
    total = 0.0
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        total += math.hypot(x1 - x0, y1 - y0)
    return total


def link_frames_at_pose(skeleton: SkeletonSpec, joint_angles: dict[str, float]):
    """World frame (origin, angle) per link with the root at the origin."""
    frames = {skeleton.root: (0.0, 0.0, 0.0)}
    pending = list(skeleton.joints)
    while pending:
        progressed = False
        for j in list(pending):
            if j.parent in frames:
                px, py, pth = frames[j.parent]
                c, s = math.cos(pth), math.sin(pth)
                ox = px + c * j.anchor[0] - s * j.anchor[1]
                oy = py + s * j.anchor[0] + c * j.anchor[1]
                frames[j.child] = (ox, oy, pth + joint_angles.get(j.name, 0.0))
                pending.remove(j)
                progressed = True
        if not progressed:
            raise ModelError("disconnected joint definitions")
    return frames


def muscle_path_length_at_pose(skeleton: SkeletonSpec, muscle: MuscleUnit, joint_angles: dict[str, float]) -> float:
    frames = link_frames_at_pose(skeleton, joint_angles)
    pts = []
    for wp in muscle.path:
        ox, oy, th = frames[wp.link]
        c, s = math.cos(th), math.sin(th)
        pts.append((ox + c * wp.pos[0] - s * wp.pos[1], oy + s * wp.pos[0] + c * wp.pos[1]))
    total = 0.0
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        total += math.hypot(x1 - x0, y1 - y0)
    return total


def _periodic_spline(points):
    """Catmull-Rom interpolation through (phase, value) points, period 1."""
    pts = sorted(points)
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    n = len(xs)

    def f(psi: float) -> float:
        psi = psi % 1.0
        k = n - 1
        for i in range(n):
            if xs[i] > psi:
                k = i - 1
                break
        x0, y0 = xs[k], ys[k]
        k1 = (k + 1) % n
        x1 = xs[k1] if k1 > 0 else xs[0] + 1.0
        y1 = ys[k1]
        km, kp = (k - 1) % n, (k + 2) % n
        xm = xs[km] if km < k else xs[km] - 1.0
        xp = xs[kp] if kp > k1 else xs[kp] + (1.0 if k1 > 0 else 2.0)
        h = x1 - x0
        t = (psi - x0) / h
        m0 = (y1 - ys[km]) / (x1 - xm)
        m1 = (ys[kp] - y0) / (xp - x0)
        return (
            (2 * t**3 - 3 * t**2 + 1) * y0
            + (t**3 - 2 * t**2 + t) * h * m0
            + (-2 * t**3 + 3 * t**2) * y1
            + (t**3 - t**2) * h * m1
        )

    return f


# Reference-gait control points per leg joint (phase from that leg's heel
# strike).  Chosen so at heel strike the leading heel and trailing toe land
# together, the swing foot clears the ground, and every angle stays inside
# the declared range of motion.
_HIP_CURVE = _periodic_spline(
    [(0.00, 0.36), (0.12, 0.28), (0.30, 0.02), (0.50, -0.20), (0.62, -0.12), (0.75, 0.25), (0.87, 0.39)]
)
_KNEE_CURVE = _periodic_spline(
    [(0.00, -0.09), (0.12, -0.30), (0.30, -0.12), (0.42, -0.25), (0.52, -0.70), (0.65, -1.08), (0.78, -0.72), (0.90, -0.15)]
)
_ANKLE_CURVE = _periodic_spline(
    [(0.00, 0.12), (0.07, -0.05), (0.30, 0.10), (0.46, 0.15), (0.58, -0.33), (0.72, 0.06), (0.82, 0.16), (0.92, 0.13)]
)


def leg_gait_curves(psi: float) -> tuple[float, float, float]:
    """Per-leg (hip, knee, ankle) reference-gait angles at leg phase psi,
    with psi = 0 at that leg's heel strike."""
    return _HIP_CURVE(psi), _KNEE_CURVE(psi), _ANKLE_CURVE(psi)


def gait_angle_table(n_samples: int = 60) -> np.ndarray:
    """(n, 6) reference-gait joint angles over one cycle; left leg leads."""
    table = np.zeros((n_samples, 6))
    for i in range(n_samples):
        phi = i / n_samples
        table[i, 0:3] = leg_gait_curves(phi)
        table[i, 3:6] = leg_gait_curves((phi + 0.5) % 1.0)
    return table


def validate_condition(
    cond: AnatomyCondition,
    domain: ParameterDomain,
    gait: tuple[float, float] | None = None,
) -> list[tuple[str, float, float, float]]:
    """Check a condition (and optionally gait factors) against the domain.

    Returns a list of (name, value, lower, upper) violations; empty when ok.
    """
    violations = []
    values = dict(zip(BODY_PARAM_NAMES, cond.body))
    nm = cond.weakness.shape[0]
    for i in range(nm):
        values[f"weakness[{i}]"] = cond.weakness[i]
        values[f"contracture[{i}]"] = cond.contracture[i]
    if gait is not None:
        values["stride"] = gait[0]
        values["cadence"] = gait[1]
    for name, value in values.items():
        if name.startswith("weakness["):
            key = "weakness_" + _muscle_param_suffix(domain, int(name[9:-1]))
        elif name.startswith("contracture["):
            key = "contracture_" + _muscle_param_suffix(domain, int(name[12:-1]))
        else:
            key = name
        lo, hi = domain.bounds(key)
        if not (lo <= value <= hi):
            violations.append((key, float(value), lo, hi))
    return violations


def _muscle_param_suffix(domain: ParameterDomain, idx: int) -> str:
    # muscle-parameter names in the domain are weakness_<muscle>/contracture_<muscle>
    weak = [n for n in domain.names if n.startswith("weakness_")]
    return weak[idx][len("weakness_") :]


def condition_param_names(model: ModelSpec) -> tuple[str, ...]:
    """Canonical per-parameter names matching AnatomyCondition.as_vector()."""
    names = list(BODY_PARAM_NAMES)
    names += [f"weakness_{m}" for m in model.muscle_names]
    names += [f"contracture_{m}" for m in model.muscle_names]
    return tuple(names)


def default_domain(model_muscles: tuple[str, ...], contracture_lb: dict[str, float], weakness_lb: float = 0.05) -> ParameterDomain:
    names: list[str] = list(BODY_PARAM_NAMES)
    lower = [0.85] + [0.9] * 6
    upper = [1.15] + [1.1] * 6
    for m in model_muscles:
        names.append(f"weakness_{m}")
        lower.append(weakness_lb)
        upper.append(1.0)
    for m in model_muscles:
        names.append(f"contracture_{m}")
        lower.append(contracture_lb[m])
        upper.append(1.0)
    names += list(GAIT_PARAM_NAMES)
    lower += [0.75, 0.75]
    upper += [1.25, 1.25]
    return ParameterDomain(tuple(names), np.array(lower), np.array(upper))


def sample_condition(
    model: ModelSpec,
    seed,
    p_healthy: float = 0.2,
    subset: set[str] | None = None,
) -> tuple[AnatomyCondition, tuple[float, float]]:
    """Draw a uniform condition + gait factors within the domain.

    Each dimension independently snaps to its healthy value 1 with
    probability p_healthy.  When `subset` is given, only the named
    parameters (plus body/gait entries named in it) vary; everything else
    stays at 1.  Deterministic for a fixed seed.
    """
    domain = model.domain
    if np.any(domain.upper < domain.lower):
        raise ModelError("empty domain interval")
    rng = np.random.default_rng(seed)
    values = rng.uniform(domain.lower, domain.upper)
    snap = rng.random(len(domain.names)) < p_healthy
    values = np.where(snap, 1.0, values)
    if subset is not None:
        keep = np.array([n in subset for n in domain.names])
        values = np.where(keep, values, 1.0)
    by_name = dict(zip(domain.names, values))
    body = np.array([by_name[n] for n in BODY_PARAM_NAMES])
    weak = np.array([by_name[f"weakness_{m}"] for m in model.muscle_names])
    contr = np.array([by_name[f"contracture_{m}"] for m in model.muscle_names])
    gait = (float(by_name["stride"]), float(by_name["cadence"]))
    return AnatomyCondition(body, weak, contr), gait


def apply_anatomy(model: ModelSpec, cond: AnatomyCondition) -> ScaledModel:
    """Apply a condition to the reference model.

    Geometry scales with the owning segment's factor; mass scales with the
    cube and rotational inertia with the fifth power of it (geometric
    similarity).  f_max scales by weakness.  l_opt scales by contracture
    and additionally by the ratio of standing-pose path lengths, so a
    healthy scaled model is passive-force free in the standing pose.
    Raises DomainViolationError when the condition is out of bounds.
    """
    violations = validate_condition(cond, model.domain)
    if violations:
        raise DomainViolationError(violations)

    factor = {_BODY_PARAM_LINK[n]: float(c) for n, c in zip(BODY_PARAM_NAMES, cond.body)}

    links = tuple(
        replace(
            l,
            length=l.length * factor[l.name],
            mass=l.mass * factor[l.name] ** 3,
            inertia=l.inertia * factor[l.name] ** 5,
            com=(l.com[0] * factor[l.name], l.com[1] * factor[l.name]),
        )
        for l in model.skeleton.links
    )
    joints = tuple(
        replace(j, anchor=(j.anchor[0] * factor[j.parent], j.anchor[1] * factor[j.parent]))
        for j in model.skeleton.joints
    )
    skeleton = SkeletonSpec(links, joints, model.skeleton.root)

    contact_points = tuple(
        replace(p, pos=(p.pos[0] * factor[p.link], p.pos[1] * factor[p.link]))
        for p in model.contact.points
    )
    contact = replace(model.contact, points=contact_points)

    muscles = []
    for i, m in enumerate(model.muscles):
        path = tuple(
            replace(wp, pos=(wp.pos[0] * factor[wp.link], wp.pos[1] * factor[wp.link]))
            for wp in m.path
        )
        scaled = replace(m, path=path)
        ref_len = muscle_path_length_zero_pose(model.skeleton, m)
        new_len = muscle_path_length_zero_pose(skeleton, scaled)
        hill = replace(
            m.hill,
            f_max=m.hill.f_max * float(cond.weakness[i]),
            l_opt=m.hill.l_opt * (new_len / ref_len) * float(cond.contracture[i]),
        )
        muscles.append(replace(scaled, hill=hill))

    spec = replace(model, skeleton=skeleton, contact=contact, muscles=tuple(muscles))
    return ScaledModel(spec=spec, condition=cond, reference=model)


# ---------------------------------------------------------------------------
# Reference model construction
# ---------------------------------------------------------------------------

TOTAL_HEIGHT = 1.687  # m
TOTAL_MASS = 72.9  # kg

# Anthropometric segment fractions (standard gait-analysis tables).
_SEG_LEN_FRAC = {"thigh": 0.245, "shank": 0.246, "foot": 0.152}
_SEG_MASS_FRAC = {"HAT": 0.678, "thigh": 0.100, "shank": 0.0465, "foot": 0.0145}
_SEG_GYRATION = {"HAT": 0.50, "thigh": 0.323, "shank": 0.302, "foot": 0.475}

# Contracture lower bounds per muscle, capping neutral-pose passive force.
_CONTRACTURE_LB = {
    "hip_flexor": 0.6,
    "hip_extensor": 0.6,
    "hamstrings": 0.7,
    "rectus_femoris": 0.7,
    "vasti": 0.65,
    "gastrocnemius": 0.75,
    "soleus": 0.6,
    "tibialis_anterior": 0.5,
}

_FMAX = {
    "hip_flexor": 2000.0,
    "hip_extensor": 2500.0,
    "hamstrings": 2800.0,
    "rectus_femoris": 1500.0,
    "vasti": 5000.0,
    "gastrocnemius": 2500.0,
    "soleus": 3500.0,
    "tibialis_anterior": 1500.0,
}


def _leg_muscle_paths(side: str, thigh_len: float, shank_len: float) -> dict[str, list[Waypoint]]:
    """Waypoint routes for one leg, in owning-link frames.

    Via points near each joint keep moment arms in the 1-6 cm range and
    sign-constant over the declared ranges of motion.
    """
    t, s, f = f"thigh_{side}", f"shank_{side}", f"foot_{side}"
    return {
        "hip_flexor": [
            Waypoint("HAT", (0.05, 0.10)),
            Waypoint(t, (0.035, -0.06)),
            Waypoint(t, (0.02, -0.13)),
        ],
        "hip_extensor": [
            Waypoint("HAT", (-0.06, 0.10)),
            Waypoint("HAT", (-0.085, -0.02)),
            Waypoint(t, (-0.02, -0.18)),
        ],
        "hamstrings": [
            Waypoint("HAT", (-0.05, 0.08)),
            Waypoint("HAT", (-0.08, -0.01)),
            Waypoint(s, (-0.035, -0.06)),
        ],
        "rectus_femoris": [
            Waypoint("HAT", (0.045, 0.04)),
            Waypoint(t, (0.055, -0.93 * thigh_len)),
            Waypoint(s, (0.05, -0.05)),
        ],
        "vasti": [
            Waypoint(t, (0.03, -0.29 * thigh_len)),
            Waypoint(t, (0.055, -0.93 * thigh_len)),
            Waypoint(s, (0.05, -0.05)),
        ],
        "gastrocnemius": [
            Waypoint(t, (-0.03, -0.87 * thigh_len)),
            Waypoint(f, (-0.055, -0.045)),
        ],
        "soleus": [
            Waypoint(s, (-0.025, -0.24 * shank_len)),
            Waypoint(f, (-0.055, -0.045)),
        ],
        "tibialis_anterior": [
            Waypoint(s, (0.035, -0.34 * shank_len)),
            Waypoint(s, (0.035, -0.94 * shank_len)),
            Waypoint(f, (0.10, -0.035)),
        ],
    }


def build_reference_model() -> ModelSpec:
    """Construct the reference planar model (1.687 m, 72.9 kg, 16 muscles)."""
    H, M = TOTAL_HEIGHT, TOTAL_MASS
    thigh_len = _SEG_LEN_FRAC["thigh"] * H
    shank_len = _SEG_LEN_FRAC["shank"] * H
    foot_len = _SEG_LEN_FRAC["foot"] * H
    ankle_h = 0.530 * H - thigh_len - shank_len
    hat_len = H - 0.530 * H

    def link(name, kind, length, com):
        m = _SEG_MASS_FRAC[kind] * M
        r = _SEG_GYRATION[kind] * length
        return LinkSpec(name, length, m, m * r * r, com)

    links = [link("HAT", "HAT", hat_len, (0.0, 0.35 * hat_len))]
    for side in ("l", "r"):
        links.append(link(f"thigh_{side}", "thigh", thigh_len, (0.0, -0.433 * thigh_len)))
        links.append(link(f"shank_{side}", "shank", shank_len, (0.0, -0.433 * shank_len)))
        links.append(link(f"foot_{side}", "foot", foot_len, (0.19 * foot_len, -0.5 * ankle_h)))

    joints = []
    for side in ("l", "r"):
        joints.append(JointSpec(f"hip_{side}", "HAT", f"thigh_{side}", (0.0, 0.0), (-0.8, 1.2)))
        joints.append(JointSpec(f"knee_{side}", f"thigh_{side}", f"shank_{side}", (0.0, -thigh_len), (-1.5, 0.05)))
        joints.append(JointSpec(f"ankle_{side}", f"shank_{side}", f"foot_{side}", (0.0, -shank_len), (-0.9, 0.7)))
    skeleton = SkeletonSpec(tuple(links), tuple(joints), "HAT")

    heel_x, toe_x = -0.27 * foot_len, 0.73 * foot_len
    points = []
    for side in ("l", "r"):
        points.append(ContactPoint(f"foot_{side}", f"heel_{side}", (heel_x, -ankle_h)))
        points.append(ContactPoint(f"foot_{side}", f"toe_{side}", (toe_x, -ankle_h)))
    contact = ContactParams(
        ground_height=0.0,
        normal_stiffness=1.2e5,
        normal_damping=1.2e3,
        friction=0.9,
        friction_smoothing=0.03,
        points=tuple(points),
    )

    pd = PdGains(
        joints=tuple(j.name for j in joints),
        kp=(250.0, 250.0, 120.0, 250.0, 250.0, 120.0),
        kd=(25.0, 25.0, 12.0, 25.0, 25.0, 12.0),
    )

    muscles = []
    for side in ("l", "r"):
        paths = _leg_muscle_paths(side, thigh_len, shank_len)
        for base in (
            "hip_flexor",
            "hip_extensor",
            "hamstrings",
            "rectus_femoris",
            "vasti",
            "gastrocnemius",
            "soleus",
            "tibialis_anterior",
        ):
            path = tuple(paths[base])
            m = MuscleUnit(
                name=f"{base}_{side}",
                hill=HillParams(
                    f_max=_FMAX[base],
                    l_opt=1.0,  # placeholder, set below from standing length
                    v_max=10.0,
                    passive_threshold=1.0,
                    fl_width=0.45,
                    fv_shorten=0.25,
                    fv_lengthen_max=1.5,
                    passive_scale=0.05,
                    passive_exponent=4.0,
                    f_passive_max=_FMAX[base],
                ),
                path=path,
                joints=tuple(_crossing_joints(skeleton, MuscleUnit(f"{base}_{side}", HillParams(1, 1, 1, 1, 1, 1, 1, 1, 1, 1), path, ()))),
            )
            muscles.append(m)

    # Optimal lengths calibrated to the longest path over the reference gait
    # cycle (small margin), so healthy walking poses carry no passive force
    # and contracture alone shifts the passive onset into the working range.
    joint_names_all = tuple(j.name for j in joints)
    gait_table = gait_angle_table(60)
    calibrated = []
    for m in muscles:
        longest = muscle_path_length_zero_pose(skeleton, m)
        for row in gait_table:
            pose = dict(zip(joint_names_all, row))
            longest = max(longest, muscle_path_length_at_pose(skeleton, m, pose))
        calibrated.append(replace(m, hill=replace(m.hill, l_opt=1.02 * longest)))
    muscles = calibrated

    muscle_names = tuple(m.name for m in muscles)
    contracture_lb = {m.name: _CONTRACTURE_LB[m.name.rsplit("_", 1)[0]] for m in muscles}
    domain = default_domain(muscle_names, contracture_lb)

    gait = GaitBasics(stride=0.72, cadence=1.80)

    spec = ModelSpec(
        name="planar-biped-16",
        gravity=-9.81,
        skeleton=skeleton,
        muscles=tuple(muscles),
        contact=contact,
        pd=pd,
        gait=gait,
        domain=domain,
    )
    spec.validate()
    return spec


# ---------------------------------------------------------------------------
# Model file IO (key-value text, versioned, bit-exact round trip)
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def serialize_model(model: ModelSpec) -> str:
    out = []
    out.append(f"model_version = {model.version}")
    out.append(f"name = {model.name}")
    out.append(f"gravity = {_fmt(model.gravity)}")
    out.append("")
    out.append("[skeleton]")
    out.append(f"root {model.skeleton.root}")
    for l in model.skeleton.links:
        out.append(
            f"link {l.name} {_fmt(l.length)} {_fmt(l.mass)} {_fmt(l.inertia)} "
            f"{_fmt(l.com[0])} {_fmt(l.com[1])}"
        )
    for j in model.skeleton.joints:
        out.append(
            f"joint {j.name} {j.parent} {j.child} {_fmt(j.anchor[0])} {_fmt(j.anchor[1])} "
            f"{_fmt(j.limits[0])} {_fmt(j.limits[1])}"
        )
    out.append("")
    out.append("[contact]")
    c = model.contact
    out.append(f"ground_height = {_fmt(c.ground_height)}")
    out.append(f"normal_stiffness = {_fmt(c.normal_stiffness)}")
    out.append(f"normal_damping = {_fmt(c.normal_damping)}")
    out.append(f"friction = {_fmt(c.friction)}")
    out.append(f"friction_smoothing = {_fmt(c.friction_smoothing)}")
    for p in c.points:
        out.append(f"point {p.link} {p.name} {_fmt(p.pos[0])} {_fmt(p.pos[1])}")
    out.append("")
    out.append("[pd]")
    for name, kp, kd in zip(model.pd.joints, model.pd.kp, model.pd.kd):
        out.append(f"gains {name} {_fmt(kp)} {_fmt(kd)}")
    out.append("")
    out.append("[gait]")
    out.append(f"stride = {_fmt(model.gait.stride)}")
    out.append(f"cadence = {_fmt(model.gait.cadence)}")
    for m in model.muscles:
        out.append("")
        out.append(f"[muscle {m.name}]")
        h = m.hill
        out.append(f"f_max = {_fmt(h.f_max)}")
        out.append(f"l_opt = {_fmt(h.l_opt)}")
        out.append(f"v_max = {_fmt(h.v_max)}")
        out.append(f"passive_threshold = {_fmt(h.passive_threshold)}")
        out.append(f"fl_width = {_fmt(h.fl_width)}")
        out.append(f"fv_shorten = {_fmt(h.fv_shorten)}")
        out.append(f"fv_lengthen_max = {_fmt(h.fv_lengthen_max)}")
        out.append(f"passive_scale = {_fmt(h.passive_scale)}")
        out.append(f"passive_exponent = {_fmt(h.passive_exponent)}")
        out.append(f"f_passive_max = {_fmt(h.f_passive_max)}")
        out.append("joints = " + " ".join(m.joints))
        for wp in m.path:
            out.append(f"waypoint {wp.link} {_fmt(wp.pos[0])} {_fmt(wp.pos[1])}")
    out.append("")
    out.append("[domain]")
    for name, lo, hi in zip(model.domain.names, model.domain.lower, model.domain.upper):
        out.append(f"bounds {name} {_fmt(lo)} {_fmt(hi)}")
    out.append("")
    return "\n".join(out)


def parse_model(text: str) -> ModelSpec:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or not lines[0].startswith("model_version"):
        raise ModelError("model file must start with model_version")
    version = int(lines[0].split("=", 1)[1])
    if version != MODEL_FORMAT_VERSION:
        raise ModelError(f"unsupported model_version {version}")

    name = "unnamed"
    gravity = -9.81
    root = None
    links: list[LinkSpec] = []
    joints: list[JointSpec] = []
    contact_kv: dict[str, float] = {}
    contact_points: list[ContactPoint] = []
    pd_rows: list[tuple[str, float, float]] = []
    gait_kv: dict[str, float] = {}
    muscles: list[MuscleUnit] = []
    domain_rows: list[tuple[str, float, float]] = []

    section = None
    m_name = None
    m_kv: dict[str, float] = {}
    m_joints: tuple[str, ...] = ()
    m_path: list[Waypoint] = []

    def flush_muscle():
        nonlocal m_name, m_kv, m_joints, m_path
        if m_name is None:
            return
        hill = HillParams(
            f_max=m_kv["f_max"],
            l_opt=m_kv["l_opt"],
            v_max=m_kv["v_max"],
            passive_threshold=m_kv["passive_threshold"],
            fl_width=m_kv["fl_width"],
            fv_shorten=m_kv["fv_shorten"],
            fv_lengthen_max=m_kv["fv_lengthen_max"],
            passive_scale=m_kv["passive_scale"],
            passive_exponent=m_kv["passive_exponent"],
            f_passive_max=m_kv["f_passive_max"],
        )
        muscles.append(MuscleUnit(m_name, hill, tuple(m_path), m_joints))
        m_name, m_kv, m_joints, m_path = None, {}, (), []

    for ln in lines[1:]:
        if ln.startswith("["):
            flush_muscle()
            section = ln.strip("[]")
            if section.startswith("muscle "):
                m_name = section.split(None, 1)[1]
                section = "muscle"
            continue
        if section is None:
            key, _, val = ln.partition("=")
            key = key.strip()
            if key == "name":
                name = val.strip()
            elif key == "gravity":
                gravity = float(val)
            else:
                raise ModelError(f"unknown header key {key!r}")
        elif section == "skeleton":
            parts = ln.split()
            if parts[0] == "root":
                root = parts[1]
            elif parts[0] == "link":
                links.append(
                    LinkSpec(parts[1], float(parts[2]), float(parts[3]), float(parts[4]), (float(parts[5]), float(parts[6])))
                )
            elif parts[0] == "joint":
                joints.append(
                    JointSpec(parts[1], parts[2], parts[3], (float(parts[4]), float(parts[5])), (float(parts[6]), float(parts[7])))
                )
            else:
                raise ModelError(f"unknown skeleton row {parts[0]!r}")
        elif section == "contact":
            if ln.startswith("point "):
                parts = ln.split()
                contact_points.append(ContactPoint(parts[1], parts[2], (float(parts[3]), float(parts[4]))))
            else:
                key, _, val = ln.partition("=")
                contact_kv[key.strip()] = float(val)
        elif section == "pd":
            parts = ln.split()
            if parts[0] != "gains":
                raise ModelError(f"unknown pd row {parts[0]!r}")
            pd_rows.append((parts[1], float(parts[2]), float(parts[3])))
        elif section == "gait":
            key, _, val = ln.partition("=")
            gait_kv[key.strip()] = float(val)
        elif section == "muscle":
            if ln.startswith("waypoint "):
                parts = ln.split()
                m_path.append(Waypoint(parts[1], (float(parts[2]), float(parts[3]))))
            elif ln.startswith("joints"):
                _, _, val = ln.partition("=")
                m_joints = tuple(val.split())
            else:
                key, _, val = ln.partition("=")
                m_kv[key.strip()] = float(val)
        elif section == "domain":
            parts = ln.split()
            if parts[0] != "bounds":
                raise ModelError(f"unknown domain row {parts[0]!r}")
            domain_rows.append((parts[1], float(parts[2]), float(parts[3])))
        else:
            raise ModelError(f"unknown section {section!r}")
    flush_muscle()

    if root is None:
        raise ModelError("skeleton section must declare a root link")
    skeleton = SkeletonSpec(tuple(links), tuple(joints), root)
    contact = ContactParams(
        ground_height=contact_kv["ground_height"],
        normal_stiffness=contact_kv["normal_stiffness"],
        normal_damping=contact_kv["normal_damping"],
        friction=contact_kv["friction"],
        friction_smoothing=contact_kv["friction_smoothing"],
        points=tuple(contact_points),
    )
    pd = PdGains(
        joints=tuple(r[0] for r in pd_rows),
        kp=tuple(r[1] for r in pd_rows),
        kd=tuple(r[2] for r in pd_rows),
    )
    gait = GaitBasics(stride=gait_kv["stride"], cadence=gait_kv["cadence"])
    domain = ParameterDomain(
        tuple(r[0] for r in domain_rows),
        np.array([r[1] for r in domain_rows]),
        np.array([r[2] for r in domain_rows]),
    )
    model = ModelSpec(
        name=name,
        gravity=gravity,
        skeleton=skeleton,
        muscles=tuple(muscles),
        contact=contact,
        pd=pd,
        gait=gait,
        domain=domain,
        version=version,
    )
    model.validate()
    return model


def load_model(path) -> ModelSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_model(fh.read())


def save_model(model: ModelSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_model(model))
