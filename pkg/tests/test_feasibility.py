import itertools
import math

import numpy as np
import pytest

from core.errors import NearSingularError
from core.fourbar import FourBarDesign
from policy import feasibility
from policy.feasibility import (
    PtpTask,
    classify,
    feasibility_mask,
    input_rate,
    is_dynamic_feasible,
    is_static_feasible,
    static_margin,
)

TASK = PtpTask(1.2, 1.8)


def _sweep_oracle(oa, ab, bc, xc, yc, task, steps=200):
    """Circle-intersection sweep: assemblable everywhere and theta strictly monotone (elbow up)."""
    psi = np.linspace(task.psi_i, task.psi_e, steps)
    bx = xc + bc[:, None] * np.cos(psi)
    by = yc + bc[:, None] * np.sin(psi)
    d = np.hypot(bx, by)
    oa, ab = oa[:, None], ab[:, None]
    reach = (d <= oa + ab) & (d >= np.abs(oa - ab))
    a = (oa**2 - ab**2 + d**2) / (2.0 * d)
    h = np.sqrt(np.clip(oa**2 - a**2, 0.0, None))
    ax = a * bx / d - h * by / d
    ay = a * by / d + h * bx / d
    steps_theta = np.diff(np.unwrap(np.arctan2(ay, ax), axis=1), axis=1)
    monotone = np.all(steps_theta > 0, axis=1) | np.all(steps_theta < 0, axis=1)
    return reach.all(axis=1) & monotone


def test_parallelogram_is_feasible():
    report = classify(FourBarDesign(1.0, 2.0, 1.0, (2.0, 0.0)), PtpTask(0.5, 2.0))
    assert report.feasible
    assert report.reason == "Allowed"
    assert report.rate_i == pytest.approx(1.0, rel=1e-6)
    assert report.rate_e == pytest.approx(1.0, rel=1e-6)


def test_static_margin_value():
    design = FourBarDesign(1.0, 2.0, 1.0, (2.0, 0.0))
    assert static_margin(design, math.pi / 2) == pytest.approx(16.0)


def test_static_margin_sign_examples():
    assert static_margin(FourBarDesign(0.5, 1.0, 1.0, (2.0, 0.0)), math.pi / 2) < 0.0
    assert static_margin(FourBarDesign(1.0, math.sqrt(2.0), 1.0, (2.0, 0.0)), math.pi / 2) > 0.0
    # |OA| + |AB| = |OB|: stretched flat, the two roots coincide
    stretched = FourBarDesign(1.0, math.sqrt(5.0) - 1.0, 1.0, (2.0, 0.0))
    assert abs(static_margin(stretched, math.pi / 2)) <= 1e-9 * 20.0


def test_unassemblable_design_is_statically_rejected():
    design = FourBarDesign(1.0, 0.5, 1.0, (10.0, 0.0))
    report = classify(design, TASK)
    assert not report.feasible
    assert not is_static_feasible(design, TASK)
    assert report.reason.startswith("static")
    assert report.as_dict()["rate_i"] is None


def test_direction_reversal_is_dynamically_rejected():
    design = FourBarDesign(math.sqrt(8.0), 1.0, 1.0, (2.0, 0.0))
    task = PtpTask(math.pi / 2 - 0.2, math.pi / 2 + 0.2)
    assert is_static_feasible(design, task)
    assert not is_dynamic_feasible(design, task)
    report = classify(design, task)
    assert not report.feasible
    assert report.reason.startswith("dynamic")
    assert math.copysign(1.0, report.rate_i) != math.copysign(1.0, report.rate_e)


def test_rate_at_an_unassemblable_angle_is_untrusted():
    design = FourBarDesign(1.0, 0.5, 1.0, (10.0, 0.0))
    with pytest.raises(NearSingularError):
        input_rate(design, 1.0)


def test_task_validation():
    with pytest.raises(ValueError):
        PtpTask(1.0, 1.0)
    with pytest.raises(ValueError):
        PtpTask(-math.pi, 1.0)
    with pytest.raises(ValueError):
        PtpTask(0.0, float("nan"))


def test_vectorized_mask_matches_scalar_classify():
    axis_oa = np.linspace(0.5, 3.0, 6)
    axis_ab = np.linspace(0.5, 3.0, 6)
    axis_bc = np.linspace(0.3, 1.5, 6)
    oa, ab, bc = np.meshgrid(axis_oa, axis_ab, axis_bc, indexing="ij")
    mask = feasibility_mask(oa, ab, bc, 2.0, 0.0, TASK)
    for idx in itertools.product(range(6), repeat=3):
        design = FourBarDesign(oa[idx], ab[idx], bc[idx], (2.0, 0.0))
        assert bool(mask["feasible"][idx]) == classify(design, TASK).feasible, idx


def test_vanishing_end_rate_is_rejected(monkeypatch):
    design = FourBarDesign(1.0, 2.0, 1.0, (2.0, 0.0))
    task = PtpTask(0.5, 2.0)
    monkeypatch.setattr(feasibility, "input_rate", lambda d, psi: 1.0 if psi == task.psi_i else 0.0)
    assert not feasibility.is_dynamic_feasible(design, task)
    report = classify(design, task)
    assert not report.feasible
    assert report.reason == "dynamic: input rate vanishes at an endpoint"


def test_classifier_agrees_with_sweep_oracle():
    shape = (30, 30, 30)
    axes = (np.linspace(0.5, 3.0, 30), np.linspace(0.5, 3.0, 30), np.linspace(0.3, 1.5, 30))
    oa, ab, bc = (g.ravel() for g in np.meshgrid(*axes, indexing="ij"))
    predicted = feasibility_mask(oa, ab, bc, 2.0, 0.0, TASK)["feasible"].reshape(shape)
    oracle = _sweep_oracle(oa, ab, bc, 2.0, 0.0, TASK).reshape(shape)
    assert predicted.any() and (~predicted).any()
    assert np.mean(predicted == oracle) >= 0.995
    # every disagreement sits next to a node on the other side of a region boundary
    for idx in zip(*np.nonzero(predicted != oracle)):
        window = tuple(slice(max(i - 1, 0), i + 2) for i in idx)
        assert np.any(oracle[window] != oracle[idx]) or np.any(predicted[window] != predicted[idx]), idx
