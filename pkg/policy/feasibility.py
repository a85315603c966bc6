import math
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from core.errors import NearSingularError
from core.fourbar import FourBarDesign, elbow_input_angle, elbow_sign, uvw, wrap_angle

RATE_STEP = 1e-6
# relative margin (U^2+V^2-W^2)/(U^2+V^2) below which a rate is not trusted
SINGULAR_MARGIN = 1e-12


@dataclass(frozen=True)
class PtpTask:
    psi_i: float
    psi_e: float

    def __post_init__(self):
        for name in ("psi_i", "psi_e"):
            value = getattr(self, name)
            if not np.isfinite(value) or not (-math.pi < value <= math.pi):
                raise ValueError(f"task: {name} must lie in (-pi, pi], got {value!r}")
        if self.psi_i == self.psi_e:
            raise ValueError("task: psi_i must differ from psi_e")


@dataclass(frozen=True)
class FeasibilityReport:
    """
    Gate decision for one design and task: assembly margins at both endpoints, then input rates.
    Failures are encoded here rather than raised; `reason` says which check failed.
    """
    static_i: bool
    static_e: bool
    dynamic_ok: bool
    margin_i: float
    margin_e: float
    rate_i: float = math.nan
    rate_e: float = math.nan
    reason: str = "Allowed"

    @property
    def feasible(self) -> bool:
        return self.static_i and self.static_e and self.dynamic_ok

    def as_dict(self) -> Dict[str, object]:
        return {
            "feasible": self.feasible,
            "static_i": self.static_i,
            "static_e": self.static_e,
            "dynamic_ok": self.dynamic_ok,
            "margin_i": self.margin_i,
            "margin_e": self.margin_e,
            "rate_i": None if math.isnan(self.rate_i) else self.rate_i,
            "rate_e": None if math.isnan(self.rate_e) else self.rate_e,
            "reason": self.reason,
        }


# -----------------------------
# Vectorized core (shared by the scalar API and the optimizer grid)
# -----------------------------
def margin_array(oa, ab, bc, xc, yc, psi):
    u, v, w = uvw(oa, ab, bc, xc, yc, psi)
    return u * u + v * v - w * w


def _relative_margin(oa, ab, bc, xc, yc, psi):
    u, v, w = uvw(oa, ab, bc, xc, yc, psi)
    r2 = u * u + v * v
    return (r2 - w * w) / r2


def rate_array(oa, ab, bc, xc, yc, psi, sign: float = 1.0, h: float = RATE_STEP) -> Tuple[np.ndarray, np.ndarray]:
    """Central-difference d(theta)/d(psi) on the elbow branch plus a mask of trusted entries."""
    lo = elbow_input_angle(oa, ab, bc, xc, yc, psi - h, sign)
    hi = elbow_input_angle(oa, ab, bc, xc, yc, psi + h, sign)
    rate = wrap_angle(hi - lo) / (2.0 * h)
    with np.errstate(invalid="ignore"):
        trusted = (
            np.isfinite(rate)
            & (_relative_margin(oa, ab, bc, xc, yc, psi - h) >= SINGULAR_MARGIN)
            & (_relative_margin(oa, ab, bc, xc, yc, psi + h) >= SINGULAR_MARGIN)
        )
    return rate, trusted


def feasibility_mask(oa, ab, bc, xc, yc, task: PtpTask, sign: float = 1.0) -> Dict[str, np.ndarray]:
    """Boolean masks per check; `feasible` is their conjunction."""
    static_i = margin_array(oa, ab, bc, xc, yc, task.psi_i) > 0.0
    static_e = margin_array(oa, ab, bc, xc, yc, task.psi_e) > 0.0
    rate_i, ok_i = rate_array(oa, ab, bc, xc, yc, task.psi_i, sign)
    rate_e, ok_e = rate_array(oa, ab, bc, xc, yc, task.psi_e, sign)
    with np.errstate(invalid="ignore"):
        dynamic = ok_i & ok_e & (rate_i != 0.0) & (rate_e != 0.0) & (np.sign(rate_i) == np.sign(rate_e))
    static = static_i & static_e
    return {
        "static_i": static_i,
        "static_e": static_e,
        "dynamic": dynamic,
        "feasible": static & dynamic,
    }


# -----------------------------
# Scalar operations
# -----------------------------
def _args(design: FourBarDesign):
    xc, yc = design.pivot_c
    return design.oa_len, design.ab_len, design.bc_len, xc, yc


def static_margin(design: FourBarDesign, psi: float) -> float:
    return float(margin_array(*_args(design), psi))


def is_static_feasible(design: FourBarDesign, task: PtpTask) -> bool:
    # zero-margin (fold) designs are rejected: strict inequality
    return static_margin(design, task.psi_i) > 0.0 and static_margin(design, task.psi_e) > 0.0


def input_rate(design: FourBarDesign, psi: float) -> float:
    rate, trusted = rate_array(*_args(design), psi, elbow_sign(design.elbow))
    if not bool(trusted):
        raise NearSingularError(f"d(theta)/d(psi) unreliable at psi={psi!r}: unassemblable or at a fold")
    return float(rate)


def is_dynamic_feasible(design: FourBarDesign, task: PtpTask) -> bool:
    try:
        rate_i = input_rate(design, task.psi_i)
        rate_e = input_rate(design, task.psi_e)
    except NearSingularError:
        return False
    return rate_i != 0.0 and rate_e != 0.0 and math.copysign(1.0, rate_i) == math.copysign(1.0, rate_e)


def classify(design: FourBarDesign, task: PtpTask) -> FeasibilityReport:
    margin_i = static_margin(design, task.psi_i)
    margin_e = static_margin(design, task.psi_e)
    static_i, static_e = margin_i > 0.0, margin_e > 0.0

    if not (static_i and static_e):
        where = [name for name, ok in (("psi_i", static_i), ("psi_e", static_e)) if not ok]
        return FeasibilityReport(
            static_i, static_e, False, margin_i, margin_e,
            reason=f"static: cannot be assembled at {', '.join(where)}",
        )

    try:
        rate_i = input_rate(design, task.psi_i)
        rate_e = input_rate(design, task.psi_e)
    except NearSingularError as exc:
        return FeasibilityReport(True, True, False, margin_i, margin_e, reason=f"dynamic: {exc}")

    if rate_i == 0.0 or rate_e == 0.0:
        return FeasibilityReport(True, True, False, margin_i, margin_e, rate_i, rate_e,
                                 reason="dynamic: input rate vanishes at an endpoint")
    if math.copysign(1.0, rate_i) != math.copysign(1.0, rate_e):
        return FeasibilityReport(True, True, False, margin_i, margin_e, rate_i, rate_e,
                                 reason="dynamic: input direction reverses (branch or circuit defect)")
    return FeasibilityReport(True, True, True, margin_i, margin_e, rate_i, rate_e)
