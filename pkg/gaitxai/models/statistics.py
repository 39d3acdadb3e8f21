from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field


class AnalysisUnit(str, Enum):
    """One curve per trial, or one mean curve per subject"""
    TRIAL = "trial"
    SUBJECT = "subject"


class CurveGroup(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    label: str
    curves: np.ndarray

    @property
    def n(self) -> int:
        return int(self.curves.shape[0])

    @property
    def Q(self) -> int:
        return int(self.curves.shape[1])


class TCurve(BaseModel):
    """Pointwise two-sample t statistic; degenerate nodes hold a signed infinity"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    t: np.ndarray
    df: float
    degenerate: np.ndarray

    @property
    def has_degenerate(self) -> bool:
        return bool(self.degenerate.any())


class Cluster(BaseModel):
    model_config = ConfigDict(frozen=True)

    start: int
    end: int
    peak_t: float

    @property
    def extent(self) -> int:
        return self.end - self.start + 1

    def as_triple(self) -> str:
        return f"{self.start}-{self.end}:{self.peak_t!r}"


class PermutationThreshold(BaseModel):
    model_config = ConfigDict(frozen=True)

    t_star: float
    alpha: float
    n_perm: int
    degenerate: bool = False


class SpmConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(default=0.05, gt=0, lt=1)
    two_tailed: bool = True
    unit: AnalysisUnit = AnalysisUnit.TRIAL
    normalized: bool = False


class SpmResult(BaseModel):
    """Complete two-group SPM inference for one curve domain"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    channel: str
    t_curve: np.ndarray
    df: float
    fwhm: float
    resels: float
    alpha: float
    two_tailed: bool
    t_star: float
    clusters: List[Cluster]
    d_curve: np.ndarray
    degenerate: np.ndarray
    n_a: int
    n_b: int
    note: Optional[str] = None

    @property
    def Q(self) -> int:
        return int(self.t_curve.shape[0])
