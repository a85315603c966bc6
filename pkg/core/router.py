import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional

from core.models import PipelineConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunOptions:
    """Per-invocation overrides of the config's output paths and seeds."""
    cache: Optional[Path] = None
    model: Optional[Path] = None
    seed: Optional[int] = None
    workers: int = 1

    def cache_path(self, cfg: PipelineConfig) -> Path:
        return self.cache or cfg.path("cache")

    def model_path(self, cfg: PipelineConfig) -> Path:
        return self.model or cfg.path("model")

    def holdout_cache_path(self, cfg: PipelineConfig) -> Path:
        cache = self.cache_path(cfg)
        return cache.with_name(cache.stem + ".holdout" + cache.suffix)


# -----------------------------
# Trace helper (Planner -> Delegate -> Act)
# -----------------------------
def make_trace(
    decision: str,
    reason: str,
    agent: str,
    capability: str,
    result: str,
    confidence: str = "high",
) -> Dict[str, Any]:
    return {
        "planner": {"decision": decision, "reason": reason},
        "delegate": {"agent": agent, "capability": capability},
        "act": {"result": result, "confidence": confidence},
    }


def _commands() -> Dict[str, Callable]:
    from agents import fitting_agent, optimization_agent, report_agent, sampling_agent, validation_agent

    return {
        "sample": sampling_agent.handle,
        "fit": fitting_agent.handle,
        "validate": validation_agent.handle,
        "optimize": optimization_agent.handle,
        "report": report_agent.handle,
    }


COMMAND_NAMES = ("sample", "fit", "validate", "optimize", "report")


def dispatch(command: str, cfg: PipelineConfig, opts: Optional[RunOptions] = None) -> Dict[str, Any]:
    commands = _commands()
    if command not in commands:
        raise ValueError(f"unknown command {command!r}; expected one of {COMMAND_NAMES}")
    opts = opts or RunOptions()
    handler = commands[command]
    agent = handler.__module__.rsplit(".", 1)[-1]
    logger.info("%s: running %s for config %r", command, agent, cfg.name)
    result = handler(cfg, opts)
    return {
        "command": command,
        "result": result,
        "agent_trace": make_trace(
            decision=command,
            reason=f"pipeline command '{command}' requested",
            agent=agent,
            capability=command,
            result=result.get("summary", "done"),
        ),
    }
