import json
import logging
import math
from typing import Any, Dict, Optional, Sequence

from core.blended import evaluate_model, load_model
from core.errors import BranchJumpError, NearSingularError
from core.models import PipelineConfig
from core.motion import simulate_cycle
from core.objective import SimulatorObjective
from core.optimizer import build_trust_region, grid_search, local_search_baseline

logger = logging.getLogger(__name__)

DISCREPANCY_FACTOR = 3.0


def savings(original: Optional[float], optimum: float) -> Optional[float]:
    """Percentage reduction (T_orig - T_opt) / T_orig."""
    if original is None or not math.isfinite(original) or original == 0.0 or not math.isfinite(optimum):
        return None
    return 100.0 * (original - optimum) / original


def _row(objective, design: Sequence[float], model_value: Optional[float] = None) -> Dict[str, Any]:
    sample = objective(design)
    return {
        "design": [float(x) for x in design],
        "t_rms": sample.t_rms if sample.feasible else None,
        "t_max": sample.t_max if sample.feasible else None,
        "reason": sample.reason,
        "model": model_value,
    }


def _with_savings(row: Dict[str, Any], original: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    base = original or {}
    row["savings_t_rms_pct"] = savings(base.get("t_rms"), row["t_rms"] if row["t_rms"] is not None else math.inf)
    row["savings_t_max_pct"] = savings(base.get("t_max"), row["t_max"] if row["t_max"] is not None else math.inf)
    return row


def _validation_rmse(cfg: PipelineConfig) -> Optional[float]:
    path = cfg.path("validation_report")
    if not path.exists():
        return None
    return json.loads(path.read_text()).get("rmse")


def _export_traces(cfg: PipelineConfig, objective: SimulatorObjective, rows: Dict[str, Dict[str, Any]]) -> None:
    folder = cfg.path("traces")
    for name, row in rows.items():
        if row is None or row["t_rms"] is None:
            continue
        try:
            trace = simulate_cycle(objective.design(row["design"]), objective.law, objective.mass)
        except (BranchJumpError, NearSingularError) as exc:
            logger.warning("trace of %s design not exported: %s", name, exc)
            continue
        trace.to_csv(folder / f"{name}.csv")


def handle(cfg: PipelineConfig, opts) -> Dict[str, Any]:
    model = load_model(opts.model_path(cfg))
    objective = cfg.build_objective()
    region = build_trust_region(model.plan, model.pair)
    opt = cfg.optimization

    best = grid_search(
        model, region, cfg.box(), opt.resolution, gate=objective.gate, top_k=opt.top_k, workers=opts.workers,
    )
    global_row = _row(objective, best.argmin, best.value)

    flagged = None
    rmse = _validation_rmse(cfg)
    if rmse is not None and global_row["t_rms"] is not None:
        flagged = abs(global_row["t_rms"] - best.value) > DISCREPANCY_FACTOR * rmse
        if flagged:
            logger.warning(
                "re-simulated optimum %.6g differs from the model value %.6g by more than %g x RMSE",
                global_row["t_rms"], best.value, DISCREPANCY_FACTOR,
            )

    original_row = None
    if opt.original_design is not None:
        original_row = _row(objective, opt.original_design, evaluate_model(model, opt.original_design))

    local_row, local_report = None, None
    start = opt.local_start or opt.original_design
    if opt.run_local and start is not None:
        local_report = local_search_baseline(objective.value, start, cfg.box())
        local_row = _row(objective, local_report.argmin)

    rows = {"original": original_row, "local": local_row, "global": global_row}
    for name in ("local", "global"):
        if rows[name] is not None:
            _with_savings(rows[name], original_row)

    report = {
        "name": cfg.name,
        "rows": rows,
        "grid": best.as_dict(),
        "local_search": local_report.as_dict() if local_report is not None else None,
        "discrepancy_flag": flagged,
        "validation_rmse": rmse,
    }
    path = cfg.path("report")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True))
    if isinstance(objective, SimulatorObjective):
        _export_traces(cfg, objective, rows)

    logger.info("optimum %.6g (model) at %s", best.value, best.argmin)
    return {"summary": f"global optimum {best.value:.4g} at {list(best.argmin)}", **report}
