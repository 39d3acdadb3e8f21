from enum import Enum
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class LrpRule(str, Enum):
    """Redistribution rule applied to weighted (dense and conv) layers"""
    EPSILON = "epsilon"
    ALPHABETA = "alphabeta"


class TargetConvention(str, Enum):
    """Which class a trial is explained for"""
    TRUE = "true"
    PREDICTED = "predicted"


class RelevanceGrouping(str, Enum):
    """Which class a map is averaged under"""
    TARGET = "target"
    LABEL = "label"


class LrpConfig(BaseModel):
    """Rule stack: one weighted-layer rule; max pooling is winner-take-all,
    global average pooling proportional, ReLU passes relevance through"""
    model_config = ConfigDict(frozen=True)

    rule: LrpRule = LrpRule.EPSILON
    epsilon: float = Field(default=1e-6, ge=0)
    alpha: float = 1.0
    beta: float = 0.0
    target: TargetConvention = TargetConvention.TRUE
    grouping: RelevanceGrouping = RelevanceGrouping.TARGET

    @model_validator(mode="after")
    def _check_alphabeta(self) -> "LrpConfig":
        if self.rule is LrpRule.ALPHABETA:
            if abs(self.alpha - self.beta - 1.0) > 1e-12:
                raise ValueError(f"alpha - beta must equal 1, got alpha={self.alpha}, beta={self.beta}")
            if self.alpha < 1:
                raise ValueError(f"alpha must be >= 1, got {self.alpha}")
        return self


class RelevanceMap(BaseModel):
    """Input-node relevance for one sample and one target class"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    origin: Tuple[str, str]
    label: int
    target_class: int
    R: np.ndarray
    output_score: float
    channel_names: Tuple[str, ...]
    # Relevance taken up by biases and epsilon stabilizers on the way down
    absorbed: float = 0.0

    @property
    def residual(self) -> float:
        """Explained logit minus total input relevance"""
        return float(self.output_score - self.R.sum())

    @property
    def unaccounted(self) -> float:
        """Residual not explained by bias or stabilizer absorption; zero up to rounding unless
        relevance met a zero denominator"""
        return self.residual - self.absorbed
