import csv
import json
import logging
from typing import Any, Dict, List, Tuple

import numpy as np

from core.blended import load_model, validate_model
from core.errors import EmptyRegionError
from core.models import PipelineConfig
from core.optimizer import build_trust_region, hull_mask
from core.sampling import holdout_lines
from memory.sample_cache import SampleCache

logger = logging.getLogger(__name__)


def _write_residuals(path, rows: List[Tuple]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["line", "point", "oa", "ab", "bc", "simulated", "model", "residual"])
        for line, point, u, truth, predicted in rows:
            writer.writerow([line, point, *(repr(float(x)) for x in u),
                             repr(float(truth)), repr(float(predicted)), repr(float(predicted - truth))])


def handle(cfg: PipelineConfig, opts) -> Dict[str, Any]:
    model = load_model(opts.model_path(cfg))
    objective = cfg.build_objective()
    region = build_trust_region(model.plan, model.pair)
    seed = cfg.validation.seed if opts.seed is None else opts.seed

    lines = holdout_lines(
        region, model.plan.shifts, cfg.box(), objective.gate,
        cfg.validation.lines, cfg.validation.points_per_line, seed,
    )
    for j, line in enumerate(lines):
        if not np.all(hull_mask(region, line.points)):
            logger.warning("holdout line %d leaves the trust region", j)

    points = {(j, k): u for j, line in enumerate(lines) for k, u in enumerate(line.points)}
    cache = SampleCache.load(opts.holdout_cache_path(cfg))
    known = cache.known(objective.version, lambda j, k: points[(j, k)] if (j, k) in points else np.full(3, np.nan))
    for key in sorted(points):
        sample = known.get(key) or objective(points[key])
        cache.record(key, points[key], sample, objective.version)
    cache.retain(points)
    cache.save()

    holdout, rows = [], []
    dropped = 0
    for key in sorted(points):
        row = cache.rows[key]
        if not np.isfinite(row.t_rms):
            dropped += 1
            continue
        holdout.append((points[key], row.t_rms))
        rows.append((key[0], key[1], points[key], row.t_rms))
    if dropped:
        logger.warning("%d holdout points are infeasible and left out", dropped)

    if not holdout:
        raise EmptyRegionError("no feasible holdout point to validate against", {"dropped": dropped})

    report = validate_model(model, holdout, cfg.validation.threshold)
    _write_residuals(cfg.path("residuals"), [(*r, r[3] + res) for r, res in zip(rows, report.residuals)])

    result = {
        **report.as_dict(),
        "seed": seed,
        "holdout_lines": [{"start": list(l.start), "direction": list(l.direction)} for l in lines],
        "dropped": dropped,
    }
    path = cfg.path("validation_report")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(result, indent=2, sort_keys=True))

    below = "n/a" if report.rmse_below is None else f"{report.rmse_below:.4g}"
    logger.info("validation: RMSE %.4g over %d points, below %g: %s", report.rmse, report.n_points,
                report.threshold, below)
    return {"summary": f"RMSE {report.rmse:.4g} (below {report.threshold:g}: {below})", **result}
