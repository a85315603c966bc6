"""
Closed-form position analysis of the planar four-bar OABC.

Ground pivots O=(0,0) and C=(x_C, y_C); input link OA at angle theta, coupler AB,
output link BC at angle psi. Lengths are in mm, angles in rad.

Every function that takes raw link lengths broadcasts over numpy arrays, so the
feasibility gate and the optimizer grid use the same formulas as the scalar API.
"""
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from core.errors import DegenerateError, DomainError

ELBOW_UP = "elbow_up"
ELBOW_DOWN = "elbow_down"
ELBOWS = (ELBOW_UP, ELBOW_DOWN)

# A ties to the diagonal OB below this fraction of |OA|*|OB|
_DEGENERATE_CROSS = 1e-12


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    return math.pi - np.mod(math.pi - np.asarray(a, dtype=float), 2.0 * math.pi)


def elbow_sign(elbow: str) -> float:
    if elbow not in ELBOWS:
        raise ValueError(f"elbow must be one of {ELBOWS}, got {elbow!r}")
    return 1.0 if elbow == ELBOW_UP else -1.0


# -----------------------------
# Domain types
# -----------------------------
@dataclass(frozen=True)
class EndEffectorMap:
    k: float
    b: float

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError("end_effector: b must be > 0")
        if abs(self.k) > self.b:
            raise ValueError("end_effector: |k| must be <= b")


@dataclass(frozen=True)
class FourBarDesign:
    oa_len: float
    ab_len: float
    bc_len: float
    pivot_c: Tuple[float, float]
    elbow: str = ELBOW_UP
    ee_map: Optional[EndEffectorMap] = None

    def __post_init__(self):
        for name in ("oa_len", "ab_len", "bc_len"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"design: {name} must be a finite length > 0, got {value!r}")
        xc, yc = self.pivot_c
        if xc == 0 and yc == 0:
            raise ValueError("design: pivot_c must differ from O=(0,0)")
        elbow_sign(self.elbow)
        object.__setattr__(self, "pivot_c", (float(xc), float(yc)))

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.oa_len, self.ab_len, self.bc_len], dtype=float)


@dataclass(frozen=True)
class LinkagePose:
    theta: float
    psi: float
    a_pt: Tuple[float, float]
    b_pt: Tuple[float, float]
    degenerate: bool = False


def design_from_vector(
    u: Sequence[float],
    pivot_c: Tuple[float, float],
    elbow: str = ELBOW_UP,
    ee_map: Optional[EndEffectorMap] = None,
) -> FourBarDesign:
    oa, ab, bc = (float(x) for x in u)
    return FourBarDesign(oa, ab, bc, tuple(pivot_c), elbow, ee_map)


# -----------------------------
# End-effector angle -> output angle
# -----------------------------
def end_effector_to_output(delta: float, ee_map: EndEffectorMap) -> float:
    if not np.isfinite(delta):
        raise DomainError("end-effector angle must be finite", delta)
    k, b = ee_map.k, ee_map.b
    # sin(d)*(k/tan(d) + sqrt(b^2-k^2)) written without the division; d=0 is the limit
    arg = (k * math.cos(delta) + math.sin(delta) * math.sqrt(b * b - k * k)) / b
    if abs(arg) > 1.0 + 1e-12:
        raise DomainError("arcsine argument outside [-1, 1]", arg)
    return math.asin(max(-1.0, min(1.0, arg)))


# -----------------------------
# Loop closure
# -----------------------------
def uvw(oa, ab, bc, xc, yc, psi):
    """U, V, W of the loop-closure equation U cos(theta) + V sin(theta) + W = 0."""
    c, s = np.cos(psi), np.sin(psi)
    u = -2.0 * xc * oa - 2.0 * oa * bc * c
    v = -2.0 * yc * oa - 2.0 * oa * bc * s
    w = xc * xc + yc * yc + oa * oa + bc * bc - ab * ab + 2.0 * c * xc * bc + 2.0 * s * yc * bc
    return u, v, w


def input_angle_roots(oa, ab, bc, xc, yc, psi):
    """Both roots (theta_1, theta_2) of the loop-closure equation, NaN where the linkage cannot be assembled."""
    u, v, w = uvw(oa, ab, bc, xc, yc, psi)
    r = np.sqrt(u * u + v * v)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = w / r
        ok = np.abs(ratio) <= 1.0
        gamma = np.arccos(np.clip(ratio, -1.0, 1.0))
    base = np.arctan2(v, u) + math.pi
    th1 = np.where(ok, wrap_angle(base - gamma), np.nan)
    th2 = np.where(ok, wrap_angle(base + gamma), np.nan)
    return th1, th2


def elbow_input_angle(oa, ab, bc, xc, yc, psi, sign: float = 1.0):
    """Input angle on the elbow branch: sign=+1 puts A on the positive side of diagonal OB."""
    th1, th2 = input_angle_roots(oa, ab, bc, xc, yc, psi)
    bx = xc + bc * np.cos(psi)
    by = yc + bc * np.sin(psi)
    cross2 = bx * np.sin(th2) - by * np.cos(th2)
    return np.where(sign * cross2 >= 0.0, th2, th1)


def output_to_input_angles(design: FourBarDesign, psi: float) -> Tuple[float, ...]:
    if not np.isfinite(psi):
        raise ValueError(f"psi must be finite, got {psi!r}")
    xc, yc = design.pivot_c
    th1, th2 = input_angle_roots(design.oa_len, design.ab_len, design.bc_len, xc, yc, psi)
    if np.isnan(th1):
        return ()
    return float(th1), float(th2)


def pose_for_output(design: FourBarDesign, psi: float, strict: bool = False) -> Optional[LinkagePose]:
    """
    Full pose for output angle psi on the design's elbow branch, or None when
    unassemblable. At the stretched/folded boundary A lies on OB; the pose is then
    flagged degenerate, and `strict=True` raises DegenerateError carrying it.
    """
    roots = output_to_input_angles(design, psi)
    if not roots:
        return None

    xc, yc = design.pivot_c
    bx = xc + design.bc_len * math.cos(psi)
    by = yc + design.bc_len * math.sin(psi)
    ob = math.hypot(bx, by)

    def cross(theta: float) -> float:
        return bx * math.sin(theta) - by * math.cos(theta)

    sign = elbow_sign(design.elbow)
    crosses = [cross(t) for t in roots]
    theta = roots[0] if sign * crosses[0] > sign * crosses[1] else roots[1]
    degenerate = abs(cross(theta)) <= _DEGENERATE_CROSS * max(ob, 1.0)

    pose = LinkagePose(
        theta=float(theta),
        psi=float(psi),
        a_pt=(design.oa_len * math.cos(theta), design.oa_len * math.sin(theta)),
        b_pt=(bx, by),
        degenerate=degenerate,
    )
    if degenerate and strict:
        raise DegenerateError("A lies on the diagonal OB (coincident roots)", pose)
    return pose
