"""
Line planning: where the parallel sample lines go, how far each runs, and where
the holdout lines for validation lie.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.blended import SamplingPlan
from core.errors import ConfigError
from core.motion import ObjectiveSample
from core.objective import in_box
from core.optimizer import Box, TrustRegion, hull_mask

logger = logging.getLogger(__name__)

MAX_COS_TO_DELTA = 0.95
_ROUND = 9

Gate = Optional[Callable]
Key = Tuple[int, int]


def _admissible(points: np.ndarray, box: Box, gate: Gate) -> np.ndarray:
    ok = in_box(box, points)
    if gate is not None and np.any(ok):
        masks = gate(points[:, 0], points[:, 1], points[:, 2])
        ok &= masks["feasible"]
    return ok


def predicted_runs(
    delta: Sequence[float],
    origin_shift: Sequence[float],
    shifts: np.ndarray,
    box: Box,
    gate: Gate,
    max_steps: int,
) -> np.ndarray:
    """Leading run of box-and-gate admissible steps k = 0, 1, ... on each line."""
    shifts = np.atleast_2d(np.asarray(shifts, dtype=float))
    k = np.arange(max_steps, dtype=float)
    pts = (np.asarray(origin_shift) + shifts)[:, None, :] + k[None, :, None] * np.asarray(delta)
    ok = _admissible(pts.reshape(-1, 3), box, gate).reshape(len(shifts), max_steps)
    runs = np.where(ok.all(axis=1), max_steps, np.argmin(ok, axis=1))
    return runs.astype(int)


def candidate_shifts(delta, origin_shift, box: Box, grid: int) -> np.ndarray:
    """Projections onto the plane p = 0 of a regular grid over the design box."""
    axes = [np.linspace(lo, hi, grid) for lo, hi in box]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    d = np.asarray(delta, dtype=float)
    rel = pts - np.asarray(origin_shift)
    proj = rel - np.outer(rel @ d / float(d @ d), d)
    return np.unique(np.round(proj, _ROUND), axis=0)


def place_shifts(
    delta,
    origin_shift,
    n_lines: int,
    box: Box,
    gate: Gate,
    candidate_grid: int = 9,
    max_steps: int = 100,
    min_run: int = 12,
    spacing: float = 0.0,
) -> List[Tuple[float, float, float]]:
    """
    Greedy farthest-point choice of line shifts among feasible candidates, starting
    from the unshifted line. Candidates need a predicted run of at least `min_run`
    steps and must lie `spacing` mm or more from every chosen shift.
    """
    origin_run = predicted_runs(delta, origin_shift, np.zeros((1, 3)), box, gate, max_steps)[0]
    if origin_run < min_run:
        raise ConfigError(
            f"sampling.origin_shift: the unshifted line has only {origin_run} admissible steps (< min_run={min_run})"
        )
    candidates = candidate_shifts(delta, origin_shift, box, candidate_grid)
    runs = predicted_runs(delta, origin_shift, candidates, box, gate, max_steps)
    pool = candidates[runs >= min_run]

    chosen = [np.zeros(3)]
    nearest = np.linalg.norm(pool, axis=1)
    while len(chosen) < n_lines:
        if pool.size == 0:
            break
        best = int(np.argmax(nearest))
        if nearest[best] < max(spacing, 1e-9):
            break
        chosen.append(pool[best])
        nearest = np.minimum(nearest, np.linalg.norm(pool - pool[best], axis=1))
    if len(chosen) < n_lines:
        raise ConfigError(
            f"sampling.lines: only {len(chosen)} line(s) with a run of >= {min_run} admissible steps "
            f"could be placed {spacing} mm apart; requested {n_lines}"
        )
    shifts = [tuple(float(x) for x in s) for s in chosen]
    logger.info("placed %d line shifts (candidate pool %d)", len(shifts), len(pool))
    return shifts


# -----------------------------
# Running the lines
# -----------------------------
@dataclass
class LineRun:
    rows: Dict[Key, ObjectiveSample]
    counts: List[int]
    simulated: int


def _evaluate_all(objective: Callable, points: Dict[Key, np.ndarray], workers: int) -> Dict[Key, ObjectiveSample]:
    keys = sorted(points)
    if workers > 1 and len(keys) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(lambda key: objective(points[key]), keys))
    else:
        values = [objective(points[key]) for key in keys]
    return dict(zip(keys, values))


def run_lines(
    objective: Callable,
    plan: SamplingPlan,
    box: Box,
    gate: Gate,
    max_steps: int,
    known: Optional[Dict[Key, ObjectiveSample]] = None,
    workers: int = 1,
) -> LineRun:
    """
    Sample every line from k = 0 until the first infeasible point or `max_steps`.
    Known samples are reused; the terminating infeasible sample is kept as a row.
    """
    known = dict(known or {})
    shifts = np.asarray(plan.shifts, dtype=float)
    predicted = predicted_runs(plan.delta, plan.origin_shift, shifts, box, gate, max_steps)

    todo: Dict[Key, np.ndarray] = {}
    for i, run in enumerate(predicted):
        for k in range(min(int(run) + 1, max_steps)):
            if (i, k) not in known:
                todo[(i, k)] = plan.sample_point(i, k)
    fresh = _evaluate_all(objective, todo, workers)
    known.update(fresh)

    rows: Dict[Key, ObjectiveSample] = {}
    counts = []
    for i in range(plan.n_lines):
        n = 0
        while n < max_steps and (i, n) in known:
            rows[(i, n)] = known[(i, n)]
            if not known[(i, n)].feasible:
                break
            n += 1
        counts.append(n)
        logger.info("line %d: N=%d feasible samples", i, n)
    return LineRun(rows, counts, len(fresh))


# -----------------------------
# Holdout lines
# -----------------------------
@dataclass(frozen=True)
class HoldoutLine:
    start: Tuple[float, float, float]
    direction: Tuple[float, float, float]
    points: np.ndarray


def holdout_lines(
    region: TrustRegion,
    shifts: Sequence[Sequence[float]],
    box: Box,
    gate: Gate,
    n_lines: int,
    points_per_line: int,
    seed: int,
    max_attempts: int = 200,
) -> List[HoldoutLine]:
    """
    Chords of the trust region through random interior points along random unit
    directions making an angle with delta of more than arccos(0.95).
    """
    rng = np.random.default_rng(seed)
    delta = np.asarray(region.delta, dtype=float)
    unit_delta = delta / np.linalg.norm(delta)
    origin = np.asarray(region.origin_shift)
    shifts = np.asarray(shifts, dtype=float)
    p_shift = shifts @ delta / float(delta @ delta)
    diag = float(np.linalg.norm([hi - lo for lo, hi in box]))
    ts = np.linspace(-diag, diag, 2001)

    lines: List[HoldoutLine] = []
    for _ in range(max_attempts):
        if len(lines) == n_lines:
            break
        weights = rng.dirichlet(np.ones(len(shifts)))
        p = rng.uniform(*region.p_range)
        start = origin + weights @ shifts + (p - weights @ p_shift) * delta
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        if abs(direction @ unit_delta) >= MAX_COS_TO_DELTA:
            continue
        pts = start + np.outer(ts, direction)
        ok = hull_mask(region, pts) & _admissible(pts, box, gate)
        centre = ts.size // 2
        if not ok[centre]:
            continue
        lo = centre - int(np.argmin(ok[centre::-1])) + 1 if not ok[: centre + 1].all() else 0
        hi = centre + int(np.argmin(ok[centre:])) if not ok[centre:].all() else ts.size
        if hi - lo < 2:
            continue
        segment = np.linspace(ts[lo], ts[hi - 1], points_per_line)
        lines.append(HoldoutLine(tuple(start), tuple(direction), start + np.outer(segment, direction)))
    if len(lines) < n_lines:
        logger.warning("placed only %d of %d holdout lines", len(lines), n_lines)
    return lines

