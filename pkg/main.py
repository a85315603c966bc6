import logging
from pathlib import Path
from typing import Any, Dict

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from core.blended import evaluate_many, load_model
from core.errors import CacheIntegrityError, ConfigError, NumericError
from core.fourbar import FourBarDesign
from core.models import ClassifyRequest, ModelEvaluateRequest, ObjectiveRequest, PipelineRequest, load_config
from core.motion import SIM_VERSION, simulate_cycle
from core.router import COMMAND_NAMES, RunOptions, dispatch, make_trace
from policy.feasibility import PtpTask, classify

logger = logging.getLogger(__name__)

app = FastAPI(title="Four-bar PTP Design Optimizer", version="1.0")

# -----------------------------
# CORS
# -----------------------------
app.add_middleware(
    CORSMiddleware,
    allow_origins=[
        "http://localhost:3000",
        "http://127.0.0.1:3000",
    ],
    allow_credentials=False,
    allow_methods=["*"],
    allow_headers=["*"],
)


# -----------------------------
# Error mapping
# -----------------------------
@app.exception_handler(ConfigError)
@app.exception_handler(CacheIntegrityError)
async def config_error_handler(request: Request, exc: Exception):
    return JSONResponse(status_code=400, content={"error": type(exc).__name__, "detail": str(exc)})


@app.exception_handler(NumericError)
async def numeric_error_handler(request: Request, exc: NumericError):
    return JSONResponse(status_code=422, content={"error": type(exc).__name__, "detail": str(exc)})


@app.exception_handler(ValueError)
async def value_error_handler(request: Request, exc: ValueError):
    return JSONResponse(status_code=400, content={"error": "ValueError", "detail": str(exc)})


@app.get("/health")
def health():
    return {"ok": True, "sim_version": SIM_VERSION}


# -----------------------------
# Feasibility gate
# -----------------------------
@app.post("/classify")
def classify_design(req: ClassifyRequest) -> Dict[str, Any]:
    design = FourBarDesign(req.oa, req.ab, req.bc, tuple(req.pivot_c), req.elbow)
    report = classify(design, PtpTask(req.psi_i, req.psi_e))
    return {
        "policy": {"allow": report.feasible, "reason": report.reason},
        "report": report.as_dict(),
        "agent_trace": make_trace(
            decision="classify",
            reason="feasibility requested for one design",
            agent="feasibility",
            capability="classify",
            result="feasible" if report.feasible else "rejected",
        ),
    }


# -----------------------------
# Objective and model
# -----------------------------
@app.post("/objective")
def objective_value(req: ObjectiveRequest) -> Dict[str, Any]:
    cfg = load_config(req.config)
    objective = cfg.build_objective()
    sample = objective(req.design)
    body: Dict[str, Any] = {
        "design": list(req.design),
        "feasible": sample.feasible,
        "t_rms": sample.t_rms if sample.feasible else None,
        "t_max": sample.t_max if sample.feasible else None,
        "reason": sample.reason,
        "version": objective.version,
    }
    if req.trace and sample.feasible and hasattr(objective, "law"):
        trace = simulate_cycle(objective.design(req.design), objective.law, objective.mass)
        body["trace"] = {
            "t": trace.t.tolist(),
            "theta": trace.theta.tolist(),
            "torque": trace.torque.tolist(),
        }
    return body


@app.post("/model/evaluate")
def model_evaluate(req: ModelEvaluateRequest) -> Dict[str, Any]:
    model = load_model(Path(req.model))
    values = evaluate_many(model, np.asarray(req.points, dtype=float)) if req.points else np.zeros(0)
    return {"values": values.tolist(), "n_terms": model.n_terms}


# -----------------------------
# Pipeline commands
# -----------------------------
@app.post("/pipeline/{command}")
def pipeline(command: str, req: PipelineRequest) -> Dict[str, Any]:
    if command not in COMMAND_NAMES:
        return JSONResponse(status_code=404, content={"error": "unknown command", "detail": command})
    cfg = load_config(req.config)
    opts = RunOptions(
        cache=Path(req.cache) if req.cache else None,
        model=Path(req.model) if req.model else None,
        seed=req.seed,
        workers=req.workers,
    )
    return dispatch(command, cfg, opts)
