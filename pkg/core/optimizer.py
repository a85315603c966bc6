"""
Global search of the blended surrogate and the local pattern-search baseline.

The surrogate is trusted only inside the trust region: the 2D convex hull of the
line anchors in the normal plane, bounded along delta by the sampled k-ranges.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from core.blended import BlendedModel, SamplingPlan, evaluate_many, line_coordinates, select_line_pair
from core.errors import EmptyRegionError
from core.fourbar import elbow_sign
from policy.feasibility import PtpTask, feasibility_mask

logger = logging.getLogger(__name__)

Box = Tuple[Tuple[float, float], Tuple[float, float], Tuple[float, float]]

_HULL_TOL = 1e-9
SLAB_NODES = 1 << 18


# -----------------------------
# Trust region
# -----------------------------
@dataclass(frozen=True)
class TrustRegion:
    anchors: np.ndarray                     # (l, 2) line coordinates of the shifts
    p_range: Tuple[float, float]
    delta: Tuple[float, float, float]
    origin_shift: Tuple[float, float, float]
    pair: Tuple[int, int]
    equations: Optional[np.ndarray] = field(default=None, repr=False)   # hull facets a.x + b <= 0

    @property
    def scale(self) -> float:
        spread = float(np.ptp(self.anchors, axis=0).max()) if len(self.anchors) > 1 else 0.0
        return max(spread, float(np.abs(self.anchors).max(initial=0.0)), 1.0)


def build_trust_region(plan: SamplingPlan, pair: Optional[Sequence[int]] = None) -> TrustRegion:
    if not plan.counts:
        raise ValueError("trust region needs per-line sample counts")
    chosen = select_line_pair(plan.delta, pair)
    shifts = np.asarray(plan.shifts, dtype=float)
    anchors = np.atleast_2d(line_coordinates(plan.delta, shifts, chosen))

    delta = np.asarray(plan.delta)
    p_shift = shifts @ delta / float(delta @ delta)
    counts = np.asarray(plan.counts, dtype=float)
    p_range = (float(p_shift.min()), float((counts - 1.0 + p_shift).max()))

    equations = None
    if len(anchors) >= 3:
        try:
            equations = ConvexHull(anchors).equations
        except QhullError:
            logger.warning("line anchors are collinear: trust region degenerates to a segment")
    return TrustRegion(anchors, p_range, plan.delta, plan.origin_shift, chosen, equations)


def _segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    t = np.zeros(len(points)) if denom == 0.0 else np.clip((points - a) @ ab / denom, 0.0, 1.0)
    return np.linalg.norm(points - (a + np.outer(t, ab)), axis=1)


def hull_mask(region: TrustRegion, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    rel = pts - np.asarray(region.origin_shift)
    delta = np.asarray(region.delta)
    p = rel @ delta / float(delta @ delta)
    span = max(region.p_range[1] - region.p_range[0], 1.0)
    inside_p = (p >= region.p_range[0] - _HULL_TOL * span) & (p <= region.p_range[1] + _HULL_TOL * span)

    pq = line_coordinates(region.delta, rel, region.pair)
    tol = _HULL_TOL * region.scale
    if region.equations is not None:
        inside_pq = np.all(pq @ region.equations[:, :2].T + region.equations[:, 2] <= tol, axis=1)
    else:
        # l < 3 or collinear anchors: segment between the extreme anchors
        order = np.lexsort(region.anchors.T[::-1])
        a, b = region.anchors[order[0]], region.anchors[order[-1]]
        inside_pq = _segment_distance(pq, a, b) <= tol
    return inside_p & inside_pq


def hull_membership(region: TrustRegion, point) -> bool:
    return bool(hull_mask(region, np.asarray(point, dtype=float).reshape(1, 3))[0])


# -----------------------------
# Feasibility gate for grids
# -----------------------------
@dataclass(frozen=True)
class FeasibilityGate:
    pivot_c: Tuple[float, float]
    elbow: str
    task: PtpTask

    def __call__(self, oa, ab, bc) -> Dict[str, np.ndarray]:
        xc, yc = self.pivot_c
        return feasibility_mask(oa, ab, bc, xc, yc, self.task, elbow_sign(self.elbow))


# -----------------------------
# Reports
# -----------------------------
@dataclass
class OptimumReport:
    argmin: Tuple[float, float, float]
    value: float
    grid_resolution: Tuple[int, ...] = ()
    evaluated: int = 0
    feasible_evaluated: int = 0
    top_k: List[Tuple[Tuple[float, float, float], float]] = field(default_factory=list)
    rejections: Dict[str, int] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "argmin": list(self.argmin),
            "value": self.value,
            "grid_resolution": list(self.grid_resolution),
            "evaluated": self.evaluated,
            "feasible_evaluated": self.feasible_evaluated,
            "top_k": [{"design": list(u), "value": v} for u, v in self.top_k],
            "rejections": dict(sorted(self.rejections.items())),
        }


# -----------------------------
# Grid search
# -----------------------------
def _evaluate(model, points: np.ndarray) -> np.ndarray:
    if isinstance(model, BlendedModel):
        return evaluate_many(model, points)
    return np.asarray(model(points), dtype=float)


def _distinct_minima(values: np.ndarray, axes, k: int) -> List[Tuple[Tuple[float, float, float], float]]:
    flat = values.ravel()
    finite = np.nonzero(np.isfinite(flat))[0]
    order = finite[np.argsort(flat[finite], kind="stable")]
    picked: List[np.ndarray] = []
    out = []
    for idx in order:
        cell = np.array(np.unravel_index(idx, values.shape))
        if any(np.max(np.abs(cell - other)) <= 1 for other in picked):
            continue
        picked.append(cell)
        out.append((tuple(float(axes[a][cell[a]]) for a in range(3)), float(flat[idx])))
        if len(out) == k:
            break
    return out


def grid_search(
    model,
    region: Optional[TrustRegion],
    box: Box,
    resolution: Sequence[int],
    gate: Optional[Callable] = None,
    top_k: int = 10,
    workers: int = 1,
) -> OptimumReport:
    """
    Exhaustive model evaluation over a regular grid of the design box, restricted to
    nodes passing the feasibility gate and the trust region. Ties go to the
    lexicographically smallest design.
    """
    resolution = tuple(int(r) for r in resolution)
    if len(resolution) != 3 or min(resolution) < 2:
        raise ValueError("resolution must give >= 2 nodes on each of the three axes")
    axes = [np.linspace(lo, hi, r) for (lo, hi), r in zip(box, resolution)]
    values = np.full(resolution, np.inf)
    counts = {"static": 0, "dynamic": 0, "hull": 0, "model": 0}

    plane = resolution[1] * resolution[2]
    step = max(1, SLAB_NODES // plane)
    slabs = [slice(i, min(i + step, resolution[0])) for i in range(0, resolution[0], step)]

    def run(slab: slice) -> Dict[str, int]:
        oa, ab, bc = np.meshgrid(axes[0][slab], axes[1], axes[2], indexing="ij")
        local = {"static": 0, "dynamic": 0, "hull": 0, "model": 0}
        ok = np.ones(oa.shape, dtype=bool)
        if gate is not None:
            masks = gate(oa, ab, bc)
            static = masks["static_i"] & masks["static_e"]
            local["static"] = int(np.count_nonzero(~static))
            local["dynamic"] = int(np.count_nonzero(static & ~masks["dynamic"]))
            ok = static & masks["dynamic"]
        points = np.stack([oa[ok], ab[ok], bc[ok]], axis=1)
        if region is not None and len(points):
            inside = hull_mask(region, points)
            local["hull"] = int(np.count_nonzero(~inside))
            ok[ok] = inside
            points = points[inside]
        block = np.full(oa.shape, np.inf)
        if len(points):
            result = _evaluate(model, points)
            bad = ~np.isfinite(result)
            local["model"] = int(np.count_nonzero(bad))
            block[ok] = np.where(bad, np.inf, result)
        values[slab] = block
        return local

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, slabs))
    else:
        results = [run(s) for s in slabs]
    for local in results:
        for key, n in local.items():
            counts[key] += n

    total = int(np.prod(resolution))
    admitted = total - counts["static"] - counts["dynamic"] - counts["hull"]
    if not np.any(np.isfinite(values)):
        raise EmptyRegionError("no grid node is feasible and inside the trust region", {**counts, "total": total})

    best = int(np.argmin(values))
    cell = np.unravel_index(best, resolution)
    argmin = tuple(float(axes[a][cell[a]]) for a in range(3))
    report = OptimumReport(
        argmin=argmin,
        value=float(values.flat[best]),
        grid_resolution=resolution,
        evaluated=total,
        feasible_evaluated=admitted,
        top_k=_distinct_minima(values, axes, top_k),
        rejections=counts,
    )
    logger.info(
        "grid %s: %d of %d nodes admitted, minimum %.6g at %s",
        "x".join(map(str, resolution)), admitted, total, report.value, argmin,
    )
    return report


# -----------------------------
# Local baseline
# -----------------------------
def local_search_baseline(
    objective: Callable[[np.ndarray], float],
    start: Sequence[float],
    box: Box,
    initial_fraction: float = 0.05,
    stop_fraction: float = 1e-4,
    max_evaluations: int = 5000,
) -> OptimumReport:
    """
    Compass search from `start`: poll +/- step on each axis, move to the best
    improving trial point, halve the steps when none improves. Trial points
    outside the box or with infinite objective are rejected.
    """
    lo = np.array([b[0] for b in box], dtype=float)
    hi = np.array([b[1] for b in box], dtype=float)
    span = hi - lo
    cache: Dict[Tuple[float, ...], float] = {}
    rejected = {"box": 0, "infeasible": 0}

    def f(u: np.ndarray) -> float:
        key = tuple(float(x) for x in u)
        if key not in cache:
            cache[key] = float(objective(u))
        return cache[key]

    x = np.asarray(start, dtype=float)
    fx = f(x)
    if not math.isfinite(fx):
        raise ValueError(f"local search start {x.tolist()} is infeasible")
    steps = initial_fraction * span
    stop = stop_fraction * span

    while np.any(steps >= stop) and len(cache) < max_evaluations:
        best_x, best_f = None, fx
        for axis in range(3):
            for sign in (1.0, -1.0):
                trial = x.copy()
                trial[axis] += sign * steps[axis]
                if trial[axis] < lo[axis] or trial[axis] > hi[axis]:
                    rejected["box"] += 1
                    continue
                value = f(trial)
                if not math.isfinite(value):
                    rejected["infeasible"] += 1
                elif value < best_f:
                    best_x, best_f = trial, value
        if best_x is None:
            steps = steps * 0.5
        else:
            x, fx = best_x, best_f

    logger.info("local search: %d evaluations, minimum %.6g at %s", len(cache), fx, x.tolist())
    return OptimumReport(
        argmin=tuple(float(v) for v in x),
        value=fx,
        evaluated=len(cache),
        feasible_evaluated=sum(1 for v in cache.values() if math.isfinite(v)),
        rejections=rejected,
    )
