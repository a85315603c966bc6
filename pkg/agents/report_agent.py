import json
from typing import Any, Dict, Optional

from core.errors import ConfigError
from core.models import PipelineConfig


def _num(value: Optional[float], fmt: str = "{:.4f}") -> str:
    return "-" if value is None else fmt.format(value)


def render(report: Dict[str, Any]) -> str:
    """Original / local / global rows with T_RMS, T_max and savings."""
    header = f"{'':<10}{'|OA|':>10}{'|AB|':>10}{'|BC|':>10}{'T_RMS':>10}{'saving':>9}{'T_max':>10}{'saving':>9}"
    lines = [f"Design optimization report: {report.get('name', '')}", header, "-" * len(header)]
    for name in ("original", "local", "global"):
        row = report["rows"].get(name)
        if row is None:
            continue
        oa, ab, bc = row["design"]
        lines.append(
            f"{name:<10}{oa:>10.3f}{ab:>10.3f}{bc:>10.3f}"
            f"{_num(row['t_rms']):>10}{_num(row.get('savings_t_rms_pct'), '{:.0f}%'):>9}"
            f"{_num(row['t_max']):>10}{_num(row.get('savings_t_max_pct'), '{:.0f}%'):>9}"
        )
    grid = report.get("grid", {})
    if grid:
        res = "x".join(str(r) for r in grid.get("grid_resolution", []))
        lines.append("")
        lines.append(f"grid {res}: {grid.get('feasible_evaluated')} of {grid.get('evaluated')} nodes admitted, "
                     f"model minimum {grid.get('value'):.4f}")
    if report.get("discrepancy_flag"):
        lines.append("WARNING: re-simulated optimum disagrees with the model beyond 3 x validation RMSE")
    return "\n".join(lines) + "\n"


def handle(cfg: PipelineConfig, opts) -> Dict[str, Any]:
    path = cfg.path("report")
    if not path.exists():
        raise ConfigError(f"no optimization report at {path}; run 'optimize' first")
    text = render(json.loads(path.read_text()))
    out = cfg.path("report_text")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    return {"summary": f"report written to {out}", "text": text}
