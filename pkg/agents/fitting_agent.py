import logging
from typing import Any, Dict

from agents.sampling_agent import plan_for
from core.blended import build_blended, save_model
from core.errors import CacheIntegrityError, RankError
from core.expfit import LineSamples, fit_line_exponential
from core.models import PipelineConfig
from memory.sample_cache import SampleCache

logger = logging.getLogger(__name__)


def handle(cfg: PipelineConfig, opts) -> Dict[str, Any]:
    objective = cfg.build_objective()
    plan = plan_for(cfg)
    cache = SampleCache.load(opts.cache_path(cfg))
    known = cache.known(objective.version, plan.sample_point)

    line_models, counts = [], []
    for i in range(plan.n_lines):
        values = []
        while (i, len(values)) in known and known[(i, len(values))].feasible:
            values.append(known[(i, len(values))].t_rms)
        if not values:
            raise CacheIntegrityError(f"cache {cache.path} holds no samples for line {i}; run 'sample' first")
        try:
            model = fit_line_exponential(LineSamples(i, values), order=cfg.fitting.order, svd_tol=cfg.fitting.svd_tol)
        except ValueError as exc:
            raise RankError(str(exc)) from exc
        logger.info("line %d: N=%d samples, n=%d terms, residual %.3e", i, len(values), model.n_terms, model.residual)
        line_models.append(model)
        counts.append(len(values))

    blended = build_blended(plan.with_counts(counts), line_models)
    logger.info("model holds %d terms", blended.n_terms)
    path = opts.model_path(cfg)
    save_model(blended, path)
    return {
        "summary": f"model holds {blended.n_terms} terms",
        "n_terms": blended.n_terms,
        "terms_per_line": [m.n_terms for m in line_models],
        "counts": counts,
        "pair": list(blended.pair),
        "model": str(path),
    }
