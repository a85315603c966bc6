import csv
import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from core.errors import BranchJumpError, NearSingularError
from core.fourbar import EndEffectorMap, FourBarDesign, pose_for_output, wrap_angle
from core.motion import (
    IkTrace,
    MassModel,
    MotionLaw,
    ProfileSamples,
    TorqueTrace,
    energies,
    generate_profile,
    inverse_dynamics_torque,
    inverse_kinematics_trace,
    max_torque,
    reciprocal_cycle,
    rms_torque,
    sample_objective,
    simulate_cycle,
)
from policy.feasibility import PtpTask, classify

TASK = PtpTask(1.2, 1.8)
CONSERVATIVE = MassModel(
    link_density=(0.8, 0.8, 1.2),
    end_effector_mass=1.5,
    gravity=(0.0, -9.81),
)
MM = 1e-3

# configs/ventilator.json geometry and loads
VENT_TASK = PtpTask(1.40, 1.72)
VENT_BOX = ((25.0, 60.0), (55.0, 100.0), (250.0, 300.0))
VENT_MASS = MassModel(
    link_density=(0.8, 0.8, 1.2),
    end_effector_mass=1.5,
    joint_damping=(0.01, 0.005, 0.005, 0.01),
    external_load_torque=2.0,
)


def _ventilator_design(u):
    oa, ab, bc = (float(x) for x in u)
    return FourBarDesign(oa, ab, bc, (40.0, -210.0), ee_map=EndEffectorMap(0.0, 320.0))


def test_quintic_profile_is_rest_to_rest():
    law = MotionLaw(PtpTask(0.0, 1.0), period=1.0, profile="quintic", n_samples=101)
    prof = generate_profile(law)
    assert prof.psi[50] == pytest.approx(0.5)
    assert prof.psi[0] == 0.0 and prof.psi[-1] == pytest.approx(1.0)
    np.testing.assert_allclose(prof.psi_dot[[0, -1]], 0.0, atol=1e-12)
    np.testing.assert_allclose(prof.psi_ddot[[0, -1]], 0.0, atol=1e-12)
    assert prof.psi_dot.max() == pytest.approx(1.875)


def test_cubic_peak_velocity():
    law = MotionLaw(PtpTask(0.0, 0.6), period=2.0, profile="cubic", n_samples=101)
    prof = generate_profile(law)
    assert prof.psi_dot.max() == pytest.approx(1.5 * 0.6 / 2.0)


def test_cycloidal_profile_ends_at_rest():
    prof = generate_profile(MotionLaw(TASK, profile="cycloidal", n_samples=65))
    assert prof.psi[-1] == pytest.approx(TASK.psi_e)
    np.testing.assert_allclose(prof.psi_ddot[[0, -1]], 0.0, atol=1e-9)


def test_motion_law_validation():
    with pytest.raises(ValueError):
        MotionLaw(TASK, n_samples=10)
    with pytest.raises(ValueError):
        MotionLaw(TASK, profile="trapezoid")
    with pytest.raises(ValueError):
        MotionLaw(TASK, period=0.0)


def test_reciprocal_cycle_mirrors_the_stroke():
    stroke = generate_profile(MotionLaw(TASK, n_samples=101))
    cycle, is_return = reciprocal_cycle(stroke)
    assert cycle.t.size == 201
    assert cycle.t[-1] == pytest.approx(2.0)
    np.testing.assert_allclose(cycle.psi, cycle.psi[::-1])
    np.testing.assert_allclose(cycle.psi_dot, -cycle.psi_dot[::-1], atol=1e-12)
    assert not is_return[100] and is_return[101]


def test_rms_and_max_of_a_sine():
    t = np.linspace(0.0, 1.0, 2000)
    trace = TorqueTrace(t, t, t, t, np.sin(2 * math.pi * t))
    assert rms_torque(trace) == pytest.approx(1 / math.sqrt(2), abs=1e-4)
    assert max_torque(trace) == pytest.approx(1.0, abs=1e-5)


def test_single_sample_rms_is_its_magnitude():
    trace = TorqueTrace(np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1), np.array([-3.0]))
    assert rms_torque(trace) == 3.0


def test_parallelogram_driver_follows_output():
    design = FourBarDesign(100.0, 200.0, 100.0, (200.0, 0.0))
    prof = generate_profile(MotionLaw(TASK, n_samples=200))
    ik = inverse_kinematics_trace(design, prof)
    np.testing.assert_allclose(ik.theta, prof.psi, atol=1e-8)
    np.testing.assert_allclose(ik.rate, 1.0, atol=1e-6)


def _potential(design, mass, psi):
    """Gravitational potential (J) of rods and end-effector, from the closed-form pose."""
    pose = pose_for_output(design, psi)
    ay, by = pose.a_pt[1], pose.b_pt[1]
    yc = design.pivot_c[1]
    heights = (ay / 2, (ay + by) / 2, (by + yc) / 2)
    lengths = (design.oa_len, design.ab_len, design.bc_len)
    rods = sum(rho * length * MM * y * MM for rho, length, y in zip(mass.link_density, lengths, heights))
    tip = mass.end_effector_mass * (yc + design.ee_map.b * math.sin(psi)) * MM
    return -mass.gravity[1] * (rods + tip)


def test_energy_balance_over_ventilator_designs():
    rng = np.random.default_rng(11)
    prof = generate_profile(MotionLaw(VENT_TASK, period=1.0, n_samples=2000))
    lo, hi = np.array(VENT_BOX).T
    checked = 0
    for _ in range(20000):
        if checked == 100:
            break
        design = _ventilator_design(rng.uniform(lo, hi))
        if not classify(design, VENT_TASK).feasible:
            continue
        try:
            ik = inverse_kinematics_trace(design, prof)
            torque = inverse_dynamics_torque(design, CONSERVATIVE, ik)
        except (BranchJumpError, NearSingularError):
            continue
        kinetic, potential = energies(design, CONSERVATIVE, ik)
        work = trapezoid(torque.torque * ik.theta_dot, ik.t)
        assert work == pytest.approx(potential[-1] - potential[0], abs=1e-3 * kinetic.max()), design
        checked += 1
    assert checked == 100


def test_static_torque_balances_gravity():
    design = _ventilator_design((53.0, 65.0, 282.0))
    h = 1e-5
    for psi in np.linspace(VENT_TASK.psi_i, VENT_TASK.psi_e, 7):
        rest = ProfileSamples(np.zeros(1), np.array([psi]), np.zeros(1), np.zeros(1))
        torque = inverse_dynamics_torque(design, CONSERVATIVE, inverse_kinematics_trace(design, rest)).torque[0]
        dv = _potential(design, CONSERVATIVE, psi + h) - _potential(design, CONSERVATIVE, psi - h)
        dtheta = wrap_angle(pose_for_output(design, psi + h).theta - pose_for_output(design, psi - h).theta)
        assert torque == pytest.approx(dv / dtheta, rel=1e-6, abs=1e-9), psi


def test_input_velocity_matches_finite_difference():
    design = _ventilator_design((53.0, 65.0, 282.0))
    ik = inverse_kinematics_trace(design, generate_profile(MotionLaw(VENT_TASK, n_samples=2000)))
    numeric = np.gradient(ik.theta, ik.t)
    scale = np.max(np.abs(ik.theta_dot))
    np.testing.assert_allclose(ik.theta_dot[1:-1], numeric[1:-1], atol=1e-4 * scale)


def test_objective_is_continuous_between_neighbouring_designs():
    law = MotionLaw(VENT_TASK)
    reference = np.array([53.0, 65.0, 282.0])
    base = sample_objective(_ventilator_design(reference), VENT_TASK, law, VENT_MASS)
    assert base.feasible
    for axis in range(3):
        for step in (1e-2, 1e-3):
            u = reference.copy()
            u[axis] += step
            near = sample_objective(_ventilator_design(u), VENT_TASK, law, VENT_MASS)
            assert near.t_rms == pytest.approx(base.t_rms, rel=step), (axis, step)


def test_simulation_is_deterministic():
    design = _ventilator_design((53.0, 65.0, 282.0))
    law = MotionLaw(VENT_TASK)
    first, second = (simulate_cycle(design, law, VENT_MASS) for _ in range(2))
    np.testing.assert_array_equal(first.torque, second.torque)
    np.testing.assert_array_equal(first.theta, second.theta)
    assert sample_objective(design, VENT_TASK, law, VENT_MASS) == sample_objective(design, VENT_TASK, law, VENT_MASS)


def test_damping_only_adds_dissipation():
    design = FourBarDesign(105.0, 195.0, 98.0, (200.0, 0.0))
    law = MotionLaw(TASK, period=0.5, n_samples=400)
    damped = MassModel(link_density=(0.8, 0.8, 1.2), joint_damping=(0.05, 0.02, 0.02, 0.05), gravity=(0.0, 0.0))
    ik = inverse_kinematics_trace(design, generate_profile(law))
    torque = inverse_dynamics_torque(design, damped, ik)
    free = inverse_dynamics_torque(design, MassModel(link_density=(0.8, 0.8, 1.2), gravity=(0.0, 0.0)), ik)
    lost = trapezoid((torque.torque - free.torque) * ik.theta_dot, ik.t)
    assert lost > 0.0


def test_load_acts_on_the_return_stroke_only():
    design = FourBarDesign(100.0, 200.0, 100.0, (200.0, 0.0))
    law = MotionLaw(TASK, n_samples=200)
    bare = simulate_cycle(design, law, MassModel(gravity=(0.0, 0.0)))
    loaded = simulate_cycle(design, law, MassModel(gravity=(0.0, 0.0), external_load_torque=2.0))
    extra = loaded.torque - bare.torque
    np.testing.assert_allclose(extra[:200], 0.0, atol=1e-12)
    # parallelogram: theta' = 1, psi_dot < 0 on the way back
    np.testing.assert_allclose(extra[201:-1], -2.0, rtol=1e-6)


def test_time_step_convergence():
    design = FourBarDesign(53.0, 65.0, 282.0, (40.0, -210.0))
    task = PtpTask(1.40, 1.72)
    mass = MassModel(link_density=(0.8, 0.8, 1.2), end_effector_mass=1.5, joint_damping=(0.01, 0.005, 0.005, 0.01))
    coarse = rms_torque(simulate_cycle(design, MotionLaw(task, n_samples=400), mass))
    fine = rms_torque(simulate_cycle(design, MotionLaw(task, n_samples=800), mass))
    assert fine == pytest.approx(coarse, rel=5e-4)


def test_reversing_driver_raises_branch_jump():
    design = FourBarDesign(math.sqrt(8.0), 1.0, 1.0, (2.0, 0.0))
    task = PtpTask(math.pi / 2 - 0.2, math.pi / 2 + 0.2)
    with pytest.raises(BranchJumpError):
        inverse_kinematics_trace(design, generate_profile(MotionLaw(task, n_samples=200)))
    sample = sample_objective(design, task, MotionLaw(task), MassModel())
    assert not sample.feasible
    assert sample.reason.startswith("dynamic")
    assert sample.t_rms == math.inf


def test_vanishing_rate_is_near_singular():
    design = FourBarDesign(100.0, 200.0, 100.0, (200.0, 0.0))
    n = 8
    ik = IkTrace(*(np.linspace(0, 1, n) for _ in range(7)), rate=np.zeros(n))
    with pytest.raises(NearSingularError):
        inverse_dynamics_torque(design, MassModel(), ik)


def test_objective_of_the_reference_design():
    design = FourBarDesign(53.0, 65.0, 282.0, (40.0, -210.0))
    task = PtpTask(1.40, 1.72)
    sample = sample_objective(design, task, MotionLaw(task), MassModel(link_density=(0.8, 0.8, 1.2),
                                                                        end_effector_mass=1.5))
    assert sample.feasible
    assert 0.0 < sample.t_rms <= sample.t_max < math.inf


def test_trace_csv_export(tmp_path):
    design = FourBarDesign(100.0, 200.0, 100.0, (200.0, 0.0))
    trace = simulate_cycle(design, MotionLaw(TASK, n_samples=64), CONSERVATIVE)
    path = tmp_path / "traces" / "design.csv"
    trace.to_csv(path)
    with path.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "theta", "theta_dot", "theta_ddot", "torque"]
    assert len(rows) == 1 + trace.t.size
    assert float(rows[5][4]) == trace.torque[4]
