import json
import math
from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, field_validator, model_validator

from core.errors import ConfigError, DomainError
from core.fourbar import ELBOW_UP, EndEffectorMap, end_effector_to_output
from core.motion import MassModel, MotionLaw
from core.objective import SimulatorObjective, SyntheticObjective
from policy.feasibility import PtpTask

FORMAT_VERSION = 1

Vec3 = Tuple[float, float, float]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# -----------------------------
# Config sections
# -----------------------------
class ExpTerm(_Strict):
    coef: float
    phi: Vec3


class ObjectiveConfig(_Strict):
    kind: Literal["simulator", "synthetic"] = "simulator"
    terms: List[ExpTerm] = Field(default_factory=list)


class DesignBox(_Strict):
    oa: Tuple[float, float]
    ab: Tuple[float, float]
    bc: Tuple[float, float]

    @model_validator(mode="after")
    def check_axes(self):
        for name in ("oa", "ab", "bc"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"design_box.{name}: min must be < max")
            if lo <= 0:
                raise ValueError(f"design_box.{name}: lengths must be > 0")
        return self

    def as_tuple(self):
        return (tuple(self.oa), tuple(self.ab), tuple(self.bc))


class EndEffectorConfig(_Strict):
    k: float = 0.0
    b: float

    @model_validator(mode="after")
    def check_map(self):
        if not self.b > 0:
            raise ValueError("end_effector: b must be > 0")
        if abs(self.k) > self.b:
            raise ValueError("end_effector: |k| must be <= b")
        return self


class GeometryConfig(_Strict):
    pivot_c: Tuple[float, float]
    elbow: Literal["elbow_up", "elbow_down"] = ELBOW_UP
    end_effector: Optional[EndEffectorConfig] = None

    @field_validator("pivot_c")
    @classmethod
    def pivot_not_at_origin(cls, v):
        if v[0] == 0 and v[1] == 0:
            raise ValueError("geometry.pivot_c: must differ from O=(0,0)")
        return v


class TaskConfig(_Strict):
    psi_i: Optional[float] = None
    psi_e: Optional[float] = None
    delta_i: Optional[float] = None
    delta_e: Optional[float] = None

    @model_validator(mode="after")
    def one_pair(self):
        by_psi = self.psi_i is not None and self.psi_e is not None
        by_delta = self.delta_i is not None and self.delta_e is not None
        if by_psi == by_delta:
            raise ValueError("task: give exactly one of (psi_i, psi_e) or (delta_i, delta_e)")
        if by_psi:
            for name in ("psi_i", "psi_e"):
                value = getattr(self, name)
                if not -math.pi < value <= math.pi:
                    raise ValueError(f"task: {name} must lie in (-pi, pi]")
            if self.psi_i == self.psi_e:
                raise ValueError("task: psi_i must differ from psi_e")
        elif self.delta_i == self.delta_e:
            raise ValueError("task: delta_i must differ from delta_e")
        return self


class MotionConfig(_Strict):
    period: float = Field(default=1.0, gt=0)
    profile: Literal["cubic", "quintic", "cycloidal"] = "quintic"
    n_samples: int = Field(default=400, ge=64)


class MassConfig(_Strict):
    link_density: Vec3 = (0.0, 0.0, 0.0)
    end_effector_mass: float = Field(default=0.0, ge=0)
    end_effector_offset: float = 0.0
    gravity: Tuple[float, float] = (0.0, -9.81)
    joint_damping: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    external_load_torque: float = 0.0
    load_stroke: Literal["forward", "return", "both", "none"] = "return"

    @field_validator("link_density")
    @classmethod
    def densities_non_negative(cls, v):
        if any(d < 0 for d in v):
            raise ValueError("mass.link_density: densities must be >= 0")
        return v

    @field_validator("joint_damping")
    @classmethod
    def damping_non_negative(cls, v):
        if any(c < 0 for c in v):
            raise ValueError("mass.joint_damping: damping must be >= 0")
        return v


class SamplingConfig(_Strict):
    delta: Vec3
    lines: int = Field(default=7, ge=1)
    shifts: Optional[List[Vec3]] = None
    origin_shift: Vec3
    spacing: float = Field(default=0.0, ge=0)
    max_steps: int = Field(default=100, ge=2)
    min_run: int = Field(default=12, ge=2)
    candidate_grid: int = Field(default=9, ge=2)

    @model_validator(mode="after")
    def check_plan(self):
        if not any(self.delta):
            raise ValueError("sampling.delta: must be a non-zero vector")
        if self.shifts is not None:
            if len(self.shifts) != self.lines:
                raise ValueError(f"sampling.shifts: {len(self.shifts)} shifts given for {self.lines} lines")
            if len(set(map(tuple, self.shifts))) != len(self.shifts):
                raise ValueError("sampling.shifts: shifts must be pairwise distinct")
        return self


class FittingConfig(_Strict):
    order: Optional[int] = Field(default=None, ge=1)
    svd_tol: float = Field(default=1e-8, gt=0, lt=1)


class ValidationConfig(_Strict):
    lines: int = Field(default=10, ge=0)
    points_per_line: int = Field(default=60, ge=2)
    threshold: float = 5.0
    seed: int = 0


class OptimizationConfig(_Strict):
    resolution: Tuple[int, int, int] = (215, 215, 215)
    top_k: int = Field(default=10, ge=1)
    original_design: Optional[Vec3] = None
    local_start: Optional[Vec3] = None
    run_local: bool = True

    @field_validator("resolution")
    @classmethod
    def resolution_at_least_two(cls, v):
        if min(v) < 2:
            raise ValueError("optimization.resolution: need >= 2 nodes per axis")
        return v


class OutputConfig(_Strict):
    cache: str = "out/samples.csv"
    model: str = "out/model.json"
    validation_report: str = "out/validation.json"
    residuals: str = "out/residuals.csv"
    report: str = "out/report.json"
    report_text: str = "out/report.txt"
    traces: str = "out/traces"


# -----------------------------
# Pipeline config
# -----------------------------
class PipelineConfig(_Strict):
    name: str = "fourbar"
    format_version: int = FORMAT_VERSION
    objective: ObjectiveConfig = Field(default_factory=ObjectiveConfig)
    design_box: DesignBox
    geometry: Optional[GeometryConfig] = None
    task: Optional[TaskConfig] = None
    motion: MotionConfig = Field(default_factory=MotionConfig)
    mass: MassConfig = Field(default_factory=MassConfig)
    sampling: SamplingConfig
    fitting: FittingConfig = Field(default_factory=FittingConfig)
    validation: ValidationConfig = Field(default_factory=ValidationConfig)
    optimization: OptimizationConfig = Field(default_factory=OptimizationConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    _base_dir: Path = PrivateAttr(default_factory=Path.cwd)

    @model_validator(mode="after")
    def check_cross_sections(self):
        if self.format_version != FORMAT_VERSION:
            raise ValueError(f"format_version: unsupported value {self.format_version}")
        if self.objective.kind == "simulator":
            if self.geometry is None or self.task is None:
                raise ValueError("objective: the simulator needs geometry and task sections")
            if self.task.delta_i is not None and self.geometry.end_effector is None:
                raise ValueError("task: end-effector angles need geometry.end_effector")
        elif not self.objective.terms:
            raise ValueError("objective.terms: a synthetic objective needs at least one term")

        box = self.design_box.as_tuple()
        if not all(lo <= x <= hi for x, (lo, hi) in zip(self.sampling.origin_shift, box)):
            raise ValueError("sampling.origin_shift: must lie inside design_box")
        order = self.fitting.order
        if order is not None and self.sampling.min_run < 2 * order:
            raise ValueError(f"sampling.min_run: must be >= 2 x fitting.order = {2 * order}")
        for name in ("original_design", "local_start"):
            point = getattr(self.optimization, name)
            if point is not None and not all(lo <= x <= hi for x, (lo, hi) in zip(point, box)):
                raise ValueError(f"optimization.{name}: must lie inside design_box")
        return self

    # -----------------------------
    # Builders
    # -----------------------------
    @property
    def base_dir(self) -> Path:
        return self._base_dir

    def path(self, name: str) -> Path:
        p = Path(getattr(self.output, name))
        return p if p.is_absolute() else self._base_dir / p

    def box(self):
        return self.design_box.as_tuple()

    def ee_map(self) -> Optional[EndEffectorMap]:
        if self.geometry is None or self.geometry.end_effector is None:
            return None
        return EndEffectorMap(self.geometry.end_effector.k, self.geometry.end_effector.b)

    def ptp_task(self) -> PtpTask:
        t = self.task
        if t.psi_i is not None:
            return PtpTask(t.psi_i, t.psi_e)
        ee = self.ee_map()
        return PtpTask(end_effector_to_output(t.delta_i, ee), end_effector_to_output(t.delta_e, ee))

    def motion_law(self) -> MotionLaw:
        m = self.motion
        return MotionLaw(self.ptp_task(), m.period, m.profile, m.n_samples)

    def mass_model(self) -> MassModel:
        m = self.mass
        return MassModel(
            link_density=tuple(m.link_density),
            end_effector_mass=m.end_effector_mass,
            end_effector_offset=m.end_effector_offset,
            gravity=tuple(m.gravity),
            joint_damping=tuple(m.joint_damping),
            external_load_torque=m.external_load_torque,
            load_stroke=m.load_stroke,
        )

    def build_objective(self):
        if self.objective.kind == "synthetic":
            return SyntheticObjective(
                self.box(),
                tuple(t.coef for t in self.objective.terms),
                tuple(tuple(t.phi) for t in self.objective.terms),
            )
        return SimulatorObjective(
            box=self.box(),
            pivot_c=tuple(self.geometry.pivot_c),
            elbow=self.geometry.elbow,
            task=self.ptp_task(),
            law=self.motion_law(),
            mass=self.mass_model(),
            ee_map=self.ee_map(),
        )


def _format_errors(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        where = ".".join(str(x) for x in err["loc"])
        msg = err["msg"].removeprefix("Value error, ")
        parts.append(f"{where}: {msg}" if where else msg)
    return "; ".join(parts)


def parse_config(blob: dict, base_dir: Optional[Path] = None) -> PipelineConfig:
    try:
        cfg = PipelineConfig.model_validate(blob)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {_format_errors(exc)}") from exc
    # invariants of the domain types (e.g. the arcsine domain for end-effector tasks)
    try:
        if cfg.objective.kind == "simulator":
            cfg.motion_law()
            cfg.mass_model()
    except (ValueError, DomainError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    if base_dir is not None:
        cfg._base_dir = Path(base_dir)
    return cfg


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        blob = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return parse_config(blob, path.resolve().parent)


# -----------------------------
# HTTP request bodies
# -----------------------------
class ClassifyRequest(BaseModel):
    oa: float = Field(gt=0)
    ab: float = Field(gt=0)
    bc: float = Field(gt=0)
    pivot_c: Tuple[float, float]
    elbow: Literal["elbow_up", "elbow_down"] = ELBOW_UP
    psi_i: float
    psi_e: float


class ObjectiveRequest(BaseModel):
    config: str
    design: Vec3
    trace: bool = False


class ModelEvaluateRequest(BaseModel):
    model: str
    points: List[Vec3]


class PipelineRequest(BaseModel):
    config: str
    cache: Optional[str] = None
    model: Optional[str] = None
    seed: Optional[int] = None
    workers: int = Field(default=1, ge=1)
