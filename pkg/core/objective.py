"""
Objective functions sampled by the pipeline.

Both kinds map a design vector U = (|OA|, |AB|, |BC|) in mm to an ObjectiveSample
and expose `gate`, the vectorized feasibility check the planner and the grid use.
"""
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from core.fourbar import EndEffectorMap, design_from_vector
from core.motion import SIM_VERSION, MassModel, MotionLaw, ObjectiveSample, infeasible, sample_objective
from core.optimizer import Box, FeasibilityGate
from policy.feasibility import PtpTask

SYNTHETIC_VERSION = "synthetic/1"


def in_box(box: Box, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    return np.all((pts >= lo) & (pts <= hi), axis=1)


@dataclass(frozen=True)
class SimulatorObjective:
    box: Box
    pivot_c: Tuple[float, float]
    elbow: str
    task: PtpTask
    law: MotionLaw
    mass: MassModel
    ee_map: Optional[EndEffectorMap] = None
    version: str = SIM_VERSION

    @property
    def gate(self) -> FeasibilityGate:
        return FeasibilityGate(self.pivot_c, self.elbow, self.task)

    def design(self, u: Sequence[float]):
        return design_from_vector(u, self.pivot_c, self.elbow, self.ee_map)

    def __call__(self, u: Sequence[float]) -> ObjectiveSample:
        if not in_box(self.box, u)[0]:
            return infeasible("outside design box")
        try:
            design = self.design(u)
        except ValueError as exc:
            return infeasible(f"invalid design: {exc}")
        return sample_objective(design, self.task, self.law, self.mass)

    def value(self, u: Sequence[float]) -> float:
        return self(u).t_rms


@dataclass(frozen=True)
class SyntheticObjective:
    """sum_j c_j exp(<phi_j, U>), constrained by the design box only."""
    box: Box
    coefficients: Tuple[float, ...]
    exponents: Tuple[Tuple[float, float, float], ...]
    version: str = SYNTHETIC_VERSION
    gate: None = None

    def values(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.exp(pts @ np.asarray(self.exponents, dtype=float).T) @ np.asarray(self.coefficients, dtype=float)

    def __call__(self, u: Sequence[float]) -> ObjectiveSample:
        if not in_box(self.box, u)[0]:
            return infeasible("outside design box")
        value = float(self.values(u)[0])
        if not math.isfinite(value):
            return infeasible("synthetic objective overflow")
        return ObjectiveSample(value, value)

    def value(self, u: Sequence[float]) -> float:
        return self(u).t_rms
