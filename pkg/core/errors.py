from typing import Any, Dict, Optional


class FourBarError(Exception):
    """Root of every error raised by the toolkit."""


class ConfigError(FourBarError):
    pass


class CacheIntegrityError(FourBarError):
    pass


# -----------------------------
# Numeric failures (CLI exit code 2)
# -----------------------------
class NumericError(FourBarError):
    pass


class DomainError(NumericError):
    def __init__(self, message: str, value: float):
        super().__init__(f"{message} (value={value!r})")
        self.value = value


class DegenerateError(NumericError):
    def __init__(self, message: str, pose: Any = None):
        super().__init__(message)
        self.pose = pose


class NearSingularError(NumericError):
    pass


class BranchJumpError(NumericError):
    pass


class RankError(NumericError):
    pass


class DegeneratePairError(NumericError):
    pass


class CollocationSingularError(NumericError):
    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition number {condition:.3e})")
        self.condition = condition


class EmptyRegionError(NumericError):
    def __init__(self, message: str, rejections: Optional[Dict[str, int]] = None):
        self.rejections = dict(rejections or {})
        detail = ", ".join(f"{k}={v}" for k, v in sorted(self.rejections.items()))
        super().__init__(f"{message} [{detail}]" if detail else message)


class ConditioningWarning(UserWarning):
    pass
