import logging
from typing import Any, Dict

from core.blended import SamplingPlan
from core.models import PipelineConfig
from core.sampling import place_shifts, run_lines
from memory.sample_cache import SampleCache

logger = logging.getLogger(__name__)


def plan_for(cfg: PipelineConfig) -> SamplingPlan:
    """Line layout of the config; deterministic, so every command can rebuild it."""
    s = cfg.sampling
    if s.shifts is not None:
        shifts = [tuple(x) for x in s.shifts]
    else:
        objective = cfg.build_objective()
        shifts = place_shifts(
            s.delta, s.origin_shift, s.lines, cfg.box(), objective.gate,
            candidate_grid=s.candidate_grid, max_steps=s.max_steps, min_run=s.min_run, spacing=s.spacing,
        )
    return SamplingPlan(tuple(s.delta), tuple(shifts), tuple(s.origin_shift))


def handle(cfg: PipelineConfig, opts) -> Dict[str, Any]:
    objective = cfg.build_objective()
    plan = plan_for(cfg)
    cache = SampleCache.load(opts.cache_path(cfg))
    known = cache.known(objective.version, plan.sample_point)

    run = run_lines(
        objective, plan, cfg.box(), objective.gate, cfg.sampling.max_steps, known=known, workers=opts.workers,
    )
    for key, sample in run.rows.items():
        cache.record(key, plan.sample_point(*key), sample, objective.version)
    cache.retain(run.rows)
    cache.save()

    short = [i for i, n in enumerate(run.counts) if n < cfg.sampling.min_run]
    if short:
        logger.warning("lines %s ended before min_run=%d feasible samples", short, cfg.sampling.min_run)
    total = sum(run.counts)
    logger.info("sampling: %d new simulations, %d feasible training samples", run.simulated, total)
    return {
        "summary": f"{total} training samples on {plan.n_lines} lines ({run.simulated} simulated)",
        "counts": run.counts,
        "simulated": run.simulated,
        "rows": len(cache),
        "shifts": [list(s) for s in plan.shifts],
        "cache": str(cache.path),
    }
