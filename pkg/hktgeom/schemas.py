# hktgeom/schemas.py
from datetime import datetime
from typing import Dict, List, Optional, Union

from pydantic import BaseModel, Field

from . import config

Measured = Union[float, int, str, bool, None, List[float], List[int]]


class NumericConfig(BaseModel):
    order: int = Field(default=config.JET_ORDER, ge=1, le=8)
    points: int = Field(default=config.SAMPLE_POINTS, ge=1)
    seed: int = Field(default=config.SAMPLE_SEED, ge=0)
    tolerance_scale: float = Field(default=1.0, gt=0)
    level: float = Field(default=config.DEFAULT_LEVEL)
    beta_normalization: float = Field(default=config.BETA_NORMALIZATION)
    directions: int = Field(default=config.RANDOM_DIRECTIONS, ge=1)

    def tolerance(self, name: str = 'base') -> float:
        return config.TOLERANCES[name] * self.tolerance_scale


class CheckRecord(BaseModel):
    check_id: str = Field(..., min_length=1)
    anchor: str = ''
    residual: Optional[float] = None
    tolerance: Optional[float] = None
    passed: bool
    points: int = Field(default=0, ge=0)
    message: str = ''
    skipped: bool = False


class Environment(BaseModel):
    jet_order: int
    seed: int
    points: int
    tolerance_scale: float
    version: str


class Report(BaseModel):
    scenario: str
    environment: Environment
    checks: List[CheckRecord] = Field(default_factory=list)
    measured: Dict[str, Measured] = Field(default_factory=dict)
    generated_at: Optional[datetime] = None

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> List[CheckRecord]:
        return [check for check in self.checks if not check.passed]

    def body(self) -> dict:
        """Everything except the timestamp."""
        return self.model_dump(exclude={'generated_at'})
