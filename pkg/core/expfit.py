"""
One-dimensional exponential fitting of equidistant line samples.

    T_k ~ sum_j beta_j * mu_j**k,    k = 0..N-1

Nodes come from the matrix pencil of the sample Hankel matrix and are then
polished by Levenberg-Marquardt on the joint (beta, mu) residual. Coefficients
come from the Vandermonde least-squares system on the final nodes.
Continuation to non-integer k uses the principal logarithm lambda_j = log(mu_j).
"""
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.optimize import least_squares

from core.errors import ConditioningWarning, RankError

logger = logging.getLogger(__name__)

DEFAULT_SVD_TOL = 1e-8
_RESIDUAL_TOL = 1e-6
_REAL_SNAP = 1e-12
_REFINE_REACH = 1e-2   # largest relative node move taken from the polish step
_REFINE_TOL = 1e-15


@dataclass(frozen=True)
class LineSamples:
    line_index: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if np.iscomplexobj(values):
            raise ValueError(f"line {self.line_index}: samples must be real, got dtype {values.dtype}")
        values = values.astype(float)
        if values.ndim != 1 or values.size == 0:
            raise ValueError(f"line {self.line_index}: samples must be a non-empty 1D array")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"line {self.line_index}: samples must be finite")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class LineExpModel:
    line_index: int
    coefficients: np.ndarray   # beta_j, complex
    nodes: np.ndarray          # mu_j, complex
    residual: float = 0.0      # ||V beta - T||_2

    @property
    def n_terms(self) -> int:
        return int(self.nodes.size)

    @property
    def log_nodes(self) -> np.ndarray:
        return np.log(self.nodes.astype(complex))

    def evaluate(self, k) -> np.ndarray:
        """Complex continuation sum_j beta_j exp(k lambda_j) at (possibly fractional) k."""
        k = np.asarray(k, dtype=float)
        if self.n_terms == 0:
            return np.zeros(k.shape, dtype=complex)
        return np.exp(np.multiply.outer(k, self.log_nodes)) @ self.coefficients


def hankel_matrix(values: np.ndarray) -> np.ndarray:
    """(N-L) x (L+1) Hankel matrix Y[i, j] = T[i+j] with L = N // 2."""
    n = values.size
    pencil = n // 2
    return linalg.hankel(values[: n - pencil], values[n - pencil - 1:])


def _numerical_rank(s: np.ndarray, shape) -> int:
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > s[0] * max(shape) * np.finfo(float).eps))


def _snap_conjugates(nodes: np.ndarray) -> np.ndarray:
    """Nodes of real data: drop round-off imaginary parts of real nodes."""
    nodes = nodes.astype(complex)
    real = np.abs(nodes.imag) <= _REAL_SNAP * np.maximum(np.abs(nodes), 1.0)
    nodes[real] = nodes[real].real
    return nodes


def _vandermonde(nodes: np.ndarray, n: int) -> np.ndarray:
    """(n, m) matrix with column j = mu_j**k, k = 0..n-1."""
    return np.vander(nodes, n, increasing=True).T


def _refine_nodes(values: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """
    Levenberg-Marquardt on ||V(mu) beta - T|| over real and imaginary parts of
    (beta, mu), started from the pencil nodes. The pencil estimate is returned
    unchanged when the polished nodes leave its neighbourhood.
    """
    m, n = nodes.size, values.size
    k = np.arange(n)

    def unpack(p):
        return p[:m] + 1j * p[m:2 * m], p[2 * m:3 * m] + 1j * p[3 * m:]

    def residual(p):
        beta, mu = unpack(p)
        r = _vandermonde(mu, n) @ beta - values
        return np.concatenate([r.real, r.imag])

    def jacobian(p):
        beta, mu = unpack(p)
        v = _vandermonde(mu, n)
        d = np.zeros_like(v)
        d[1:] = k[1:, None] * v[:-1] * beta   # d(beta_j mu_j^k)/d(mu_j)
        blocks = np.hstack([v, 1j * v, d, 1j * d])
        return np.vstack([blocks.real, blocks.imag])

    beta0, *_ = linalg.lstsq(_vandermonde(nodes, n), values.astype(complex))
    p0 = np.concatenate([beta0.real, beta0.imag, nodes.real, nodes.imag])
    fit = least_squares(
        residual, p0, jac=jacobian, method="lm", x_scale="jac",
        ftol=_REFINE_TOL, xtol=_REFINE_TOL, gtol=_REFINE_TOL,
    )
    _, refined = unpack(fit.x)
    reach = _REFINE_REACH * max(float(np.max(np.abs(nodes))), 1.0)
    if not np.all(np.isfinite(refined)) or node_distance(refined, nodes) > reach:
        logger.debug("node polish moved beyond %.3e, keeping pencil nodes", reach)
        return nodes
    return refined


def fit_line_exponential(
    samples: LineSamples,
    order: Optional[int] = None,
    svd_tol: float = DEFAULT_SVD_TOL,
) -> LineExpModel:
    values = samples.values
    n = values.size
    if order is not None:
        if order < 1:
            raise ValueError(f"line {samples.line_index}: order must be >= 1")
        if n < 2 * order:
            raise ValueError(f"line {samples.line_index}: {n} samples cannot fix {order} exponential terms")
    if n < 2:
        raise ValueError(f"line {samples.line_index}: need at least 2 samples")

    y = hankel_matrix(values)
    _, s, vh = linalg.svd(y, full_matrices=False)
    rank = _numerical_rank(s, y.shape)

    if order is None:
        if rank == 0:
            logger.warning("line %d: all samples are zero, empty model", samples.line_index)
            return LineExpModel(samples.line_index, np.zeros(0, dtype=complex), np.zeros(0, dtype=complex))
        order = int(np.sum(s / s[0] > svd_tol))
    elif order > rank:
        raise RankError(
            f"line {samples.line_index}: Hankel matrix has numerical rank {rank}, below requested order {order}"
        )
    order = min(order, y.shape[1] - 1)

    w = vh[:order]
    pencil, *_ = linalg.lstsq(w[:, :-1].T, w[:, 1:].T)
    nodes = _snap_conjugates(linalg.eigvals(pencil.T))
    nodes = _snap_conjugates(_refine_nodes(values, nodes))
    nodes = nodes[np.lexsort((np.angle(nodes), -np.abs(nodes)))]

    on_cut = (np.abs(nodes.imag) <= _REAL_SNAP * np.abs(nodes)) & (nodes.real < 0)
    if np.any(on_cut):
        warnings.warn(
            f"line {samples.line_index}: node(s) {nodes[on_cut].real.tolist()} on the negative real axis; "
            "principal-log continuation is branch dependent",
            ConditioningWarning,
            stacklevel=2,
        )

    vander = _vandermonde(nodes, n)
    beta, *_ = linalg.lstsq(vander, values.astype(complex))
    residual = float(np.linalg.norm(vander @ beta - values))
    scale = float(np.linalg.norm(values))
    if residual > _RESIDUAL_TOL * scale:
        warnings.warn(
            f"line {samples.line_index}: Vandermonde residual {residual:.3e} exceeds {_RESIDUAL_TOL:g} x ||T|| = {scale:.3e}",
            ConditioningWarning,
            stacklevel=2,
        )
    logger.debug("line %d: %d terms, residual %.3e", samples.line_index, order, residual)
    return LineExpModel(samples.line_index, beta, nodes, residual)


def node_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Largest distance between two node sets after greedy nearest matching."""
    a, b = list(np.asarray(a, dtype=complex)), list(np.asarray(b, dtype=complex))
    if len(a) != len(b):
        return math.inf
    worst = 0.0
    for x in a:
        k = int(np.argmin([abs(x - y) for y in b]))
        worst = max(worst, abs(x - b.pop(k)))
    return worst
