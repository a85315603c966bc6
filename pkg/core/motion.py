"""
Internal replacement of the CAD motion simulation.

Two passes per design: the kinematic pass turns the imposed output motion psi(t)
into the driver profile theta(t); the inverse-dynamics pass turns it into the
driving torque at O through a virtual-work balance in the single coordinate theta.
Geometry is in mm, dynamics in SI (positions converted to m before use).
"""
import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.integrate import trapezoid

from core.errors import BranchJumpError, NearSingularError
from core.fourbar import FourBarDesign, elbow_input_angle, elbow_sign, wrap_angle
from policy.feasibility import PtpTask, classify

logger = logging.getLogger(__name__)

SIM_VERSION = "fourbar-sim/1"
PROFILES = ("cubic", "quintic", "cycloidal")
LOAD_STROKES = ("forward", "return", "both", "none")

_H1 = 1e-6   # first-derivative step of the pose map
_H2 = 1e-4   # second-derivative step of the pose map
_MM = 1e-3
_MIN_RATE = 1e-9
_JUMP_FACTOR = 10.0


# -----------------------------
# Domain types
# -----------------------------
@dataclass(frozen=True)
class MotionLaw:
    task: PtpTask
    period: float = 1.0
    profile: str = "quintic"
    n_samples: int = 400

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError("motion: period must be > 0")
        if self.profile not in PROFILES:
            raise ValueError(f"motion: profile must be one of {PROFILES}, got {self.profile!r}")
        if self.n_samples < 64:
            raise ValueError("motion: n_samples must be >= 64")


@dataclass(frozen=True)
class MassModel:
    link_density: Tuple[float, float, float] = (0.0, 0.0, 0.0)   # kg/m for OA, AB, BC
    end_effector_mass: float = 0.0                                  # kg
    end_effector_offset: float = 0.0                                # rad, beam vs BC
    gravity: Tuple[float, float] = (0.0, -9.81)                     # m/s^2
    joint_damping: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)  # N m s/rad at O, A, B, C
    external_load_torque: float = 0.0                               # N m on BC
    load_stroke: str = "return"

    def __post_init__(self):
        if len(self.link_density) != 3 or any(d < 0 for d in self.link_density):
            raise ValueError("mass: link_density needs three values >= 0")
        if self.end_effector_mass < 0:
            raise ValueError("mass: end_effector_mass must be >= 0")
        if len(self.joint_damping) != 4 or any(c < 0 for c in self.joint_damping):
            raise ValueError("mass: joint_damping needs four values >= 0")
        if self.load_stroke not in LOAD_STROKES:
            raise ValueError(f"mass: load_stroke must be one of {LOAD_STROKES}")


@dataclass
class ProfileSamples:
    t: np.ndarray
    psi: np.ndarray
    psi_dot: np.ndarray
    psi_ddot: np.ndarray


@dataclass
class IkTrace:
    t: np.ndarray
    psi: np.ndarray
    psi_dot: np.ndarray
    psi_ddot: np.ndarray
    theta: np.ndarray
    theta_dot: np.ndarray
    theta_ddot: np.ndarray
    rate: np.ndarray          # d(theta)/d(psi)
    load_active: Optional[np.ndarray] = None


@dataclass
class TorqueTrace:
    t: np.ndarray
    theta: np.ndarray
    theta_dot: np.ndarray
    theta_ddot: np.ndarray
    torque: np.ndarray

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "theta", "theta_dot", "theta_ddot", "torque"])
            for row in zip(self.t, self.theta, self.theta_dot, self.theta_ddot, self.torque):
                writer.writerow([repr(float(x)) for x in row])


@dataclass(frozen=True)
class ObjectiveSample:
    t_rms: float
    t_max: float
    reason: str = "ok"

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.t_rms)


def infeasible(reason: str) -> ObjectiveSample:
    return ObjectiveSample(math.inf, math.inf, reason)


# -----------------------------
# Imposed output motion
# -----------------------------
def _shape(profile: str, tau: np.ndarray):
    if profile == "cubic":
        return 3 * tau**2 - 2 * tau**3, 6 * tau - 6 * tau**2, 6 - 12 * tau
    if profile == "quintic":
        return (
            10 * tau**3 - 15 * tau**4 + 6 * tau**5,
            30 * tau**2 - 60 * tau**3 + 30 * tau**4,
            60 * tau - 180 * tau**2 + 120 * tau**3,
        )
    two_pi = 2.0 * math.pi
    return tau - np.sin(two_pi * tau) / two_pi, 1 - np.cos(two_pi * tau), two_pi * np.sin(two_pi * tau)


def generate_profile(law: MotionLaw) -> ProfileSamples:
    t = np.linspace(0.0, law.period, law.n_samples)
    s, ds, dds = _shape(law.profile, t / law.period)
    span = law.task.psi_e - law.task.psi_i
    return ProfileSamples(
        t=t,
        psi=law.task.psi_i + span * s,
        psi_dot=span * ds / law.period,
        psi_ddot=span * dds / law.period**2,
    )


def reciprocal_cycle(stroke: ProfileSamples) -> Tuple[ProfileSamples, np.ndarray]:
    """Forward stroke followed by its mirror image; second value flags return-stroke samples."""
    period = stroke.t[-1]
    back = slice(-2, None, -1)
    cycle = ProfileSamples(
        t=np.concatenate([stroke.t, 2.0 * period - stroke.t[back]]),
        psi=np.concatenate([stroke.psi, stroke.psi[back]]),
        psi_dot=np.concatenate([stroke.psi_dot, -stroke.psi_dot[back]]),
        psi_ddot=np.concatenate([stroke.psi_ddot, stroke.psi_ddot[back]]),
    )
    is_return = np.zeros(cycle.t.size, dtype=bool)
    is_return[stroke.t.size:] = True
    return cycle, is_return


# -----------------------------
# Kinematic pass
# -----------------------------
def _theta_of(design: FourBarDesign, psi):
    xc, yc = design.pivot_c
    return elbow_input_angle(design.oa_len, design.ab_len, design.bc_len, xc, yc, psi, elbow_sign(design.elbow))


def inverse_kinematics_trace(design: FourBarDesign, profile: ProfileSamples) -> IkTrace:
    psi = profile.psi
    theta = _theta_of(design, psi)
    lo, hi = _theta_of(design, psi - _H1), _theta_of(design, psi + _H1)
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise BranchJumpError("linkage cannot be assembled along the imposed motion")

    rate = wrap_angle(hi - lo) / (2.0 * _H1)
    lo2, hi2 = _theta_of(design, psi - _H2), _theta_of(design, psi + _H2)
    curvature = (wrap_angle(hi2 - theta) - wrap_angle(theta - lo2)) / _H2**2

    theta = np.unwrap(theta)
    theta_dot = rate * profile.psi_dot
    theta_ddot = curvature * profile.psi_dot**2 + rate * profile.psi_ddot

    step = np.abs(np.diff(theta))
    dt = np.diff(profile.t)
    bound = _JUMP_FACTOR * np.maximum(np.abs(theta_dot[:-1]), np.abs(theta_dot[1:])) * dt
    jumps = np.nonzero(step > bound + 1e-12)[0]
    if jumps.size:
        k = int(jumps[0])
        raise BranchJumpError(f"theta jumps by {step[k]:.3e} rad between samples {k} and {k + 1}")

    moving = np.abs(profile.psi_dot) > 0.0
    signs = np.sign(theta_dot[moving] * np.sign(profile.psi_dot[moving]))
    if signs.size and (np.any(signs == 0) or np.any(signs != signs[0])):
        raise BranchJumpError("input direction reverses inside a stroke")

    return IkTrace(profile.t, psi, profile.psi_dot, profile.psi_ddot, theta, theta_dot, theta_ddot, rate)


# -----------------------------
# Inverse-dynamics pass
# -----------------------------
def _pose_points(design: FourBarDesign, mass: MassModel, psi) -> Dict[str, np.ndarray]:
    """Link centres of mass (m) and link angles for output angle psi."""
    xc, yc = design.pivot_c
    theta = _theta_of(design, psi)
    ax, ay = design.oa_len * np.cos(theta), design.oa_len * np.sin(theta)
    bx, by = xc + design.bc_len * np.cos(psi), yc + design.bc_len * np.sin(psi)
    if design.ee_map is not None:
        reach, beam = design.ee_map.b, psi + mass.end_effector_offset
        ex, ey = xc + reach * np.cos(beam), yc + reach * np.sin(beam)
    else:
        ex, ey = bx, by
    return {
        "oa_x": 0.5 * ax * _MM, "oa_y": 0.5 * ay * _MM, "oa_phi": theta,
        "ab_x": 0.5 * (ax + bx) * _MM, "ab_y": 0.5 * (ay + by) * _MM, "ab_phi": np.arctan2(by - ay, bx - ax),
        "bc_x": 0.5 * (bx + xc) * _MM, "bc_y": 0.5 * (by + yc) * _MM, "bc_phi": np.asarray(psi, dtype=float),
        "ee_x": ex * _MM, "ee_y": ey * _MM,
    }


def _sensitivities(design: FourBarDesign, mass: MassModel, psi: np.ndarray):
    """First and second derivatives of every pose quantity with respect to psi."""
    mid = _pose_points(design, mass, psi)
    p1, m1 = _pose_points(design, mass, psi + _H1), _pose_points(design, mass, psi - _H1)
    p2, m2 = _pose_points(design, mass, psi + _H2), _pose_points(design, mass, psi - _H2)
    d1, d2 = {}, {}
    for key in mid:
        if key.endswith("_phi"):
            d1[key] = wrap_angle(p1[key] - m1[key]) / (2.0 * _H1)
            d2[key] = (wrap_angle(p2[key] - mid[key]) - wrap_angle(mid[key] - m2[key])) / _H2**2
        else:
            d1[key] = (p1[key] - m1[key]) / (2.0 * _H1)
            d2[key] = (p2[key] - 2.0 * mid[key] + m2[key]) / _H2**2
    return mid, d1, d2


def link_masses(design: FourBarDesign, mass: MassModel) -> Dict[str, Tuple[float, float]]:
    """(mass kg, centroidal inertia kg m^2) per link, uniform slender rods."""
    out = {}
    for name, rho, length in zip(("oa", "ab", "bc"), mass.link_density,
                                 (design.oa_len, design.ab_len, design.bc_len)):
        L = length * _MM
        m = rho * L
        out[name] = (m, m * L * L / 12.0)
    return out


def energies(design: FourBarDesign, mass: MassModel, ik: IkTrace) -> Tuple[np.ndarray, np.ndarray]:
    """Kinetic and gravitational potential energy (J) of the moving links along a trace."""
    mid, d1, _ = _sensitivities(design, mass, ik.psi)
    gx, gy = mass.gravity
    wd = ik.psi_dot
    kinetic = np.zeros_like(ik.psi)
    potential = np.zeros_like(ik.psi)
    for name, (m, inertia) in link_masses(design, mass).items():
        speed2 = (d1[f"{name}_x"] ** 2 + d1[f"{name}_y"] ** 2) * wd**2
        kinetic += 0.5 * m * speed2 + 0.5 * inertia * (d1[f"{name}_phi"] * wd) ** 2
        potential -= m * (gx * mid[f"{name}_x"] + gy * mid[f"{name}_y"])
    if mass.end_effector_mass > 0.0:
        m = mass.end_effector_mass
        kinetic += 0.5 * m * (d1["ee_x"] ** 2 + d1["ee_y"] ** 2) * wd**2
        potential -= m * (gx * mid["ee_x"] + gy * mid["ee_y"])
    return kinetic, potential


def _load_mask(ik: IkTrace, mass: MassModel) -> np.ndarray:
    if ik.load_active is not None:
        return ik.load_active
    if mass.load_stroke in ("forward", "both"):
        return np.ones(ik.t.size, dtype=bool)
    return np.zeros(ik.t.size, dtype=bool)


def inverse_dynamics_torque(design: FourBarDesign, mass: MassModel, ik: IkTrace) -> TorqueTrace:
    rate = ik.rate
    if np.any(np.abs(rate) < _MIN_RATE):
        raise NearSingularError("d(theta)/d(psi) vanishes: |d(psi)/d(theta)| unbounded near a fold")

    _, d1, d2 = _sensitivities(design, mass, ik.psi)
    wd, wdd = ik.psi_dot, ik.psi_ddot
    gx, gy = mass.gravity
    bodies = link_masses(design, mass)

    # generalized force in the psi coordinate
    q_psi = np.zeros_like(ik.psi)
    for name, (m, inertia) in bodies.items():
        rx, ry, phi = d1[f"{name}_x"], d1[f"{name}_y"], d1[f"{name}_phi"]
        acc_x = d2[f"{name}_x"] * wd**2 + rx * wdd
        acc_y = d2[f"{name}_y"] * wd**2 + ry * wdd
        alpha = d2[f"{name}_phi"] * wd**2 + phi * wdd
        q_psi += m * (acc_x * rx + acc_y * ry) + inertia * alpha * phi - m * (gx * rx + gy * ry)

    if mass.end_effector_mass > 0.0:
        rx, ry = d1["ee_x"], d1["ee_y"]
        acc_x = d2["ee_x"] * wd**2 + rx * wdd
        acc_y = d2["ee_y"] * wd**2 + ry * wdd
        q_psi += mass.end_effector_mass * (acc_x * rx + acc_y * ry - gx * rx - gy * ry)

    torque = q_psi / rate

    c_o, c_a, c_b, c_c = mass.joint_damping
    if any(c > 0.0 for c in mass.joint_damping):
        phi_ab = d1["ab_phi"]
        w_o = rate * wd
        w_a = (phi_ab - rate) * wd
        w_b = (1.0 - phi_ab) * wd
        w_c = wd
        torque = torque + (
            c_o * w_o
            + c_a * w_a * (phi_ab / rate - 1.0)
            + c_b * w_b * (1.0 - phi_ab) / rate
            + c_c * w_c / rate
        )

    if mass.external_load_torque != 0.0:
        active = _load_mask(ik, mass)
        torque = torque + np.where(active, mass.external_load_torque * np.sign(wd) / rate, 0.0)

    return TorqueTrace(ik.t, ik.theta, ik.theta_dot, ik.theta_ddot, torque)


# -----------------------------
# Objective
# -----------------------------
def rms_torque(trace: TorqueTrace) -> float:
    tau = np.asarray(trace.torque, dtype=float)
    if tau.size == 0:
        raise ValueError("empty torque trace")
    if tau.size == 1:
        return float(abs(tau[0]))
    t = np.asarray(trace.t, dtype=float)
    return float(math.sqrt(trapezoid(tau * tau, t) / (t[-1] - t[0])))


def max_torque(trace: TorqueTrace) -> float:
    tau = np.asarray(trace.torque, dtype=float)
    if tau.size == 0:
        raise ValueError("empty torque trace")
    return float(np.max(np.abs(tau)))


def simulate_cycle(design: FourBarDesign, law: MotionLaw, mass: MassModel) -> TorqueTrace:
    """Kinematic and dynamic pass over one reciprocal cycle (no feasibility gate)."""
    cycle, is_return = reciprocal_cycle(generate_profile(law))
    ik = inverse_kinematics_trace(design, cycle)
    if mass.load_stroke == "return":
        ik.load_active = is_return
    elif mass.load_stroke == "forward":
        ik.load_active = ~is_return
    elif mass.load_stroke == "both":
        ik.load_active = np.ones_like(is_return)
    else:
        ik.load_active = np.zeros_like(is_return)
    return inverse_dynamics_torque(design, mass, ik)


def sample_objective(design: FourBarDesign, task: PtpTask, law: MotionLaw, mass: MassModel) -> ObjectiveSample:
    report = classify(design, task)
    if not report.feasible:
        return infeasible(report.reason)
    try:
        trace = simulate_cycle(design, law, mass)
    except (BranchJumpError, NearSingularError) as exc:
        logger.debug("design %s rejected: %s", design.vector.tolist(), exc)
        return infeasible(f"simulation: {exc}")
    if not np.all(np.isfinite(trace.torque)):
        return infeasible("simulation: pose derivatives undefined near an assembly limit")
    return ObjectiveSample(rms_torque(trace), max_torque(trace))
