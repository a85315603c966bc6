"""
Blended 3D surrogate built from l parallel-line exponential models.

For a design point U (absolute, mm) with U' = U - origin_shift:

    p(U)       = <delta, U'> / |delta|^2             position along the lines
    (pl, ql)   = two normal-plane line coordinates    constant on every line
    model(U)   = Re sum_i sum_j a_ij(pl, ql) exp(p(U) lambda_ij)

The coefficient functions a_ij are bivariate Chebyshev expansions fitted so that
a_ij equals alpha_ij on line i and vanishes on every other line; the model then
coincides with the 1D model of each line.
"""
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import chebyshev

from core.errors import CollocationSingularError, ConditioningWarning, ConfigError, DegeneratePairError
from core.expfit import LineExpModel

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAX_CONDITION = 1e12
EVAL_CHUNK = 65536
_IMAG_TOL = 1e-6
_PAIR_TOL = 1e-9

# the three normal-plane line coordinates, as rows acting on (u, v, w)
PAIR_NAMES = ("e1", "e2", "e3")
PAIRS: Tuple[Tuple[int, int], ...] = ((0, 1), (0, 2), (1, 2))

Term = Tuple[Tuple[int, int], ...]


# -----------------------------
# Domain types
# -----------------------------
@dataclass(frozen=True)
class SamplingPlan:
    delta: Tuple[float, float, float]
    shifts: Tuple[Tuple[float, float, float], ...]
    origin_shift: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    counts: Tuple[int, ...] = ()

    def __post_init__(self):
        delta = tuple(float(x) for x in self.delta)
        if len(delta) != 3 or not any(delta):
            raise ValueError("plan: delta must be a non-zero 3D vector")
        shifts = tuple(tuple(float(x) for x in s) for s in self.shifts)
        if not shifts or any(len(s) != 3 for s in shifts):
            raise ValueError("plan: shifts must be a non-empty list of 3D vectors")
        if len(set(shifts)) != len(shifts):
            raise ValueError("plan: shifts must be pairwise distinct")
        counts = tuple(int(c) for c in self.counts)
        if counts and len(counts) != len(shifts):
            raise ValueError("plan: one count per line required")
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "shifts", shifts)
        object.__setattr__(self, "origin_shift", tuple(float(x) for x in self.origin_shift))
        object.__setattr__(self, "counts", counts)

    @property
    def n_lines(self) -> int:
        return len(self.shifts)

    def sample_point(self, line: int, step: float) -> np.ndarray:
        """Absolute design point origin_shift + delta^(i) + k * delta."""
        return np.add(self.origin_shift, self.shifts[line]) + step * np.asarray(self.delta)

    def with_counts(self, counts: Sequence[int]) -> "SamplingPlan":
        return SamplingPlan(self.delta, self.shifts, self.origin_shift, tuple(counts))


@dataclass(frozen=True)
class NormalPlaneCoords:
    p: float
    q_pair: Tuple[float, float]
    which_pair: Tuple[int, int]


@dataclass(frozen=True)
class BlendedModel:
    plan: SamplingPlan
    line_models: Tuple[LineExpModel, ...]
    pair: Tuple[int, int]
    pq_scaling: Tuple[float, float, float, float]     # centre_p, half_p, centre_q, half_q
    basis: Tuple[Term, ...]
    tau: np.ndarray = field(repr=False)                # (n_basis, n_terms) complex

    @property
    def n_terms(self) -> int:
        return sum(m.n_terms for m in self.line_models)

    @property
    def log_nodes(self) -> np.ndarray:
        return np.concatenate([m.log_nodes for m in self.line_models]) if self.line_models else np.zeros(0, complex)

    def __call__(self, points) -> np.ndarray:
        return evaluate_many(self, points)


@dataclass(frozen=True)
class ValidationReport:
    rmse: float
    rmse_below: Optional[float]
    threshold: float
    n_points: int
    n_below: int
    residuals: np.ndarray = field(repr=False)

    def as_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "rmse_below": self.rmse_below,
            "threshold": self.threshold,
            "n_points": self.n_points,
            "n_below": self.n_below,
        }


# -----------------------------
# Normal-plane geometry
# -----------------------------
def normal_projection(delta, point) -> Tuple[float, np.ndarray]:
    d = np.asarray(delta, dtype=float)
    nn = float(d @ d)
    if nn == 0.0:
        raise ValueError("delta must be non-zero")
    u = np.asarray(point, dtype=float)
    p = float(d @ u) / nn
    return p, u - p * d


def _line_rows(delta) -> np.ndarray:
    du, dv, dw = (float(x) for x in delta)
    return np.array([
        [dv, -du, 0.0],    # e1 = dv*u - du*v
        [dw, 0.0, -du],    # e2 = dw*u - du*w
        [0.0, dw, -dv],    # e3 = dw*v - dv*w
    ])


def _pair_ok(rows: np.ndarray, pair: Tuple[int, int]) -> bool:
    a, b = rows[pair[0]], rows[pair[1]]
    scale = np.linalg.norm(a) * np.linalg.norm(b)
    return scale > 0.0 and np.linalg.norm(np.cross(a, b)) > _PAIR_TOL * scale


def select_line_pair(delta, pair: Optional[Sequence[int]] = None) -> Tuple[int, int]:
    """First independent pair in the order (e1, e2), (e1, e3), (e2, e3), or the checked explicit pair."""
    rows = _line_rows(delta)
    if pair is not None:
        pair = (int(pair[0]), int(pair[1]))
        if pair not in PAIRS:
            raise ValueError(f"pair must be one of {PAIRS}")
        if not _pair_ok(rows, pair):
            names = f"({PAIR_NAMES[pair[0]]}, {PAIR_NAMES[pair[1]]})"
            raise DegeneratePairError(f"line coordinates {names} are dependent for delta={tuple(delta)}")
        return pair
    for candidate in PAIRS:
        if _pair_ok(rows, candidate):
            return candidate
    raise DegeneratePairError(f"no independent pair of line coordinates for delta={tuple(delta)}")


def line_coordinates(delta, point, pair: Optional[Sequence[int]] = None) -> np.ndarray:
    """(p_line, q_line) for one point or an (P, 3) array of points."""
    chosen = select_line_pair(delta, pair)
    rows = _line_rows(delta)[list(chosen)]
    return np.asarray(point, dtype=float) @ rows.T


def normal_plane_coords(delta, point, pair: Optional[Sequence[int]] = None) -> NormalPlaneCoords:
    chosen = select_line_pair(delta, pair)
    p, _ = normal_projection(delta, point)
    pl, ql = line_coordinates(delta, point, chosen)
    return NormalPlaneCoords(p, (float(pl), float(ql)), chosen)


# -----------------------------
# Bivariate Chebyshev basis
# -----------------------------
def basis(size: int) -> Tuple[Term, ...]:
    """
    Lowest-total-degree products T_m(p) T_n(q) in graded order. A partially used
    degree takes symmetric combinations first (most balanced first), then single
    products.
    """
    if size < 1:
        raise ValueError("basis size must be >= 1")
    terms: List[Term] = []
    degree = 0
    while len(terms) < size:
        left = size - len(terms)
        full = [((m, degree - m),) for m in range(degree, -1, -1)]
        if left >= len(full):
            terms.extend(full)
        else:
            symmetric: List[Term] = []
            singles: List[Term] = []
            for m in range((degree + 1) // 2, degree + 1):
                n = degree - m
                if m == n:
                    symmetric.append(((m, n),))
                elif m > n:
                    symmetric.append(((m, n), (n, m)))
                    singles.append(((m, n),))
            symmetric.sort(key=lambda t: abs(t[0][0] - t[0][1]))
            singles.sort(key=lambda t: abs(t[0][0] - t[0][1]))
            terms.extend((symmetric + singles)[:left])
        degree += 1
    return tuple(terms)


def basis_matrix(terms: Sequence[Term], p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """(P, len(terms)) values of each basis term at scaled (p, q)."""
    top = max(max(max(m, n) for m, n in term) for term in terms)
    tp = chebyshev.chebvander(p, top)
    tq = chebyshev.chebvander(q, top)
    out = np.zeros((np.size(p), len(terms)))
    for b, term in enumerate(terms):
        for m, n in term:
            out[:, b] += tp[:, m] * tq[:, n]
    return out


def pq_scaling_for(anchors: np.ndarray) -> Tuple[float, float, float, float]:
    lo, hi = anchors.min(axis=0), anchors.max(axis=0)
    centre = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    half = np.where(half > 0.0, half, 1.0)
    return float(centre[0]), float(half[0]), float(centre[1]), float(half[1])


def _scale(pq: np.ndarray, scaling) -> Tuple[np.ndarray, np.ndarray]:
    cp, hp, cq, hq = scaling
    pq = np.atleast_2d(pq)
    return (pq[:, 0] - cp) / hp, (pq[:, 1] - cq) / hq


# -----------------------------
# Construction
# -----------------------------
def build_blended(
    plan: SamplingPlan,
    line_models: Sequence[LineExpModel],
    pair: Optional[Sequence[int]] = None,
    terms: Optional[Sequence[Term]] = None,
) -> BlendedModel:
    if len(line_models) != plan.n_lines:
        raise ValueError(f"{len(line_models)} line models for {plan.n_lines} lines")
    chosen = select_line_pair(plan.delta, pair)
    shifts = np.asarray(plan.shifts, dtype=float)

    anchors = line_coordinates(plan.delta, shifts, chosen)
    if len({tuple(a) for a in np.round(anchors, 12)}) != len(anchors):
        raise CollocationSingularError("two lines share the same anchor (p, q)", math.inf)
    scaling = pq_scaling_for(anchors)

    if terms is None:
        terms = basis(plan.n_lines)
    terms = tuple(tuple(tuple(mn) for mn in term) for term in terms)
    if len(terms) != plan.n_lines:
        raise ValueError(f"basis has {len(terms)} terms for {plan.n_lines} lines")

    colloc = basis_matrix(terms, *_scale(anchors, scaling))
    condition = float(np.linalg.cond(colloc))
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        raise CollocationSingularError("anchors are in degenerate position for the chosen basis", condition)
    cardinal = np.linalg.solve(colloc, np.eye(plan.n_lines))

    columns = []
    for i, line in enumerate(line_models):
        p_shift, _ = normal_projection(plan.delta, shifts[i])
        alpha = line.coefficients * np.exp(-p_shift * line.log_nodes)
        columns.append(np.outer(cardinal[:, i], alpha))
    tau = np.hstack(columns) if columns else np.zeros((len(terms), 0), dtype=complex)

    logger.info(
        "blended model: %d lines, %d terms, pair %s, collocation condition %.3e",
        plan.n_lines, tau.shape[1], chosen, condition,
    )
    return BlendedModel(plan, tuple(line_models), chosen, scaling, terms, tau.astype(complex))


def alphas(model: BlendedModel) -> np.ndarray:
    """alpha_ij = beta_ij exp(-p(delta^(i)) lambda_ij), flattened in term order."""
    out = []
    for i, line in enumerate(model.line_models):
        p_shift, _ = normal_projection(model.plan.delta, model.plan.shifts[i])
        out.append(line.coefficients * np.exp(-p_shift * line.log_nodes))
    return np.concatenate(out) if out else np.zeros(0, dtype=complex)


def coefficient_functions(model: BlendedModel, points) -> np.ndarray:
    """a_ij at absolute design points, shape (P, n_terms)."""
    rel = np.atleast_2d(np.asarray(points, dtype=float)) - np.asarray(model.plan.origin_shift)
    pq = line_coordinates(model.plan.delta, rel, model.pair)
    return basis_matrix(model.basis, *_scale(pq, model.pq_scaling)) @ model.tau


# -----------------------------
# Evaluation
# -----------------------------
def _evaluate_terms(model: BlendedModel, points: np.ndarray) -> np.ndarray:
    """Complex term contributions a_ij(q) exp(p lambda_ij), shape (P, n_terms)."""
    rel = points - np.asarray(model.plan.origin_shift)
    delta = np.asarray(model.plan.delta)
    p = rel @ delta / float(delta @ delta)
    return coefficient_functions(model, points) * np.exp(np.multiply.outer(p, model.log_nodes))


def evaluate_many(model: BlendedModel, points, chunk: int = EVAL_CHUNK) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[-1] != 3:
        raise ValueError("points must have shape (P, 3)")
    out = np.empty(pts.shape[0])
    worst = 0.0
    for start in range(0, pts.shape[0], chunk):
        terms = _evaluate_terms(model, pts[start:start + chunk])
        values = terms.sum(axis=1)
        out[start:start + chunk] = values.real
        # imaginary residue relative to the summed term magnitudes
        scale = np.maximum(np.abs(values), np.abs(terms).sum(axis=1))
        live = scale > 0.0
        if np.any(live):
            worst = max(worst, float(np.max(np.abs(values.imag[live]) / scale[live])))
    if worst > _IMAG_TOL:
        warnings.warn(f"model imaginary residual up to {worst:.3e} of the term magnitude", ConditioningWarning, stacklevel=2)
    return out


def evaluate_model(model: BlendedModel, point) -> float:
    return float(evaluate_many(model, np.asarray(point, dtype=float).reshape(1, 3))[0])


def validate_model(
    model: Callable,
    holdout: Sequence[Tuple[Sequence[float], float]],
    threshold: float = 5.0,
) -> ValidationReport:
    """RMSE over all holdout points and over those whose simulated value is below `threshold`."""
    if not holdout:
        raise ValueError("holdout set is empty")
    points = np.array([u for u, _ in holdout], dtype=float)
    truth = np.array([t for _, t in holdout], dtype=float)
    predicted = model(points)
    residuals = np.asarray(predicted, dtype=float) - truth
    below = truth < threshold
    rmse = float(np.sqrt(np.mean(residuals**2)))
    rmse_below = float(np.sqrt(np.mean(residuals[below] ** 2))) if np.any(below) else None
    return ValidationReport(rmse, rmse_below, float(threshold), int(truth.size), int(below.sum()), residuals)


# -----------------------------
# Model file
# -----------------------------
def _complex_out(values: np.ndarray) -> dict:
    values = np.asarray(values, dtype=complex)
    return {"re": values.real.tolist(), "im": values.imag.tolist()}


def _complex_in(blob: dict) -> np.ndarray:
    return np.asarray(blob["re"], dtype=float) + 1j * np.asarray(blob["im"], dtype=float)


def model_to_dict(model: BlendedModel) -> dict:
    plan = model.plan
    return {
        "format_version": FORMAT_VERSION,
        "delta": list(plan.delta),
        "origin_shift": list(plan.origin_shift),
        "shifts": [list(s) for s in plan.shifts],
        "counts": list(plan.counts),
        "pair": list(model.pair),
        "pq_scaling": list(model.pq_scaling),
        "basis": [[list(mn) for mn in term] for term in model.basis],
        "lines": [
            {
                "line_index": m.line_index,
                "residual": m.residual,
                "beta": _complex_out(m.coefficients),
                "nodes": _complex_out(m.nodes),
                "lambda": _complex_out(m.log_nodes),
            }
            for m in model.line_models
        ],
        "tau": _complex_out(model.tau.ravel()),
        "tau_shape": list(model.tau.shape),
    }


def model_from_dict(blob: dict) -> BlendedModel:
    if blob.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported model format_version {blob.get('format_version')!r}")
    try:
        plan = SamplingPlan(blob["delta"], blob["shifts"], blob["origin_shift"], blob["counts"])
        lines = tuple(
            LineExpModel(int(m["line_index"]), _complex_in(m["beta"]), _complex_in(m["nodes"]), float(m["residual"]))
            for m in blob["lines"]
        )
        terms = tuple(tuple((int(a), int(b)) for a, b in term) for term in blob["basis"])
        tau = _complex_in(blob["tau"]).reshape(blob["tau_shape"])
        pair = (int(blob["pair"][0]), int(blob["pair"][1]))
        scaling = tuple(float(x) for x in blob["pq_scaling"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed model file: {exc}") from exc
    return BlendedModel(plan, lines, pair, scaling, terms, tau)


def save_model(model: BlendedModel, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_dict(model), indent=2, sort_keys=True))
    logger.info("model written to %s (%d terms)", path, model.n_terms)


def load_model(path) -> BlendedModel:
    path = Path(path)
    try:
        blob = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"model file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"model file {path} is not valid JSON: {exc}") from exc
    return model_from_dict(blob)
