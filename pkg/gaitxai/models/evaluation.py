from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class Provenance(str, Enum):
    LRP = "lrp"
    SPM = "spm"
    LITERATURE = "literature"


class Region(BaseModel):
    """Inclusive node interval on one channel"""
    model_config = ConfigDict(frozen=True)

    name: str
    channel: str
    start: int = Field(ge=0)
    end: int = Field(ge=0)

    @model_validator(mode="after")
    def _check_order(self) -> "Region":
        if self.end < self.start:
            raise ValueError(f"region {self.name}: end {self.end} < start {self.start}")
        return self

    def nodes(self) -> range:
        return range(self.start, self.end + 1)


class RegionSet(BaseModel):
    model_config = ConfigDict(frozen=True)

    provenance: Provenance
    regions: List[Region] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_names(self) -> "RegionSet":
        names = [r.name for r in self.regions]
        if len(names) != len(set(names)):
            raise ValueError("region names must be unique within a set")
        return self

    def channels(self) -> List[str]:
        return sorted({r.channel for r in self.regions})

    def covered(self, channel: str) -> set:
        nodes: set = set()
        for region in self.regions:
            if region.channel == channel:
                nodes.update(region.nodes())
        return nodes


class ConfusionCounts(BaseModel):
    """Rows are true classes, columns predicted classes"""
    true_0_pred_0: int = 0
    true_0_pred_1: int = 0
    true_1_pred_0: int = 0
    true_1_pred_1: int = 0

    def add(self, true_label: int, predicted: int) -> None:
        name = f"true_{true_label}_pred_{predicted}"
        setattr(self, name, getattr(self, name) + 1)


class FoldResult(BaseModel):
    fold: int
    n_train: int
    n_test: int
    accuracy: float = Field(ge=0, le=1)
    final_loss: float
    checkpoint: Optional[str] = None
    test_subjects: List[str] = Field(default_factory=list)


class EvalReport(BaseModel):
    """Cross-validated accuracy with its zero-rule reference"""
    folds: List[FoldResult]
    mean_accuracy: float
    std_accuracy: float
    std_convention: str = "population"
    zero_rule_accuracy: float
    confusion: ConfusionCounts
    k: int
    seed: int
    config_echo: Dict[str, Any] = Field(default_factory=dict)
    metrics: Dict[str, Any] = Field(default_factory=dict)

    @property
    def fold_accuracies(self) -> List[float]:
        return [f.accuracy for f in self.folds]

    @property
    def checkpoints(self) -> List[Optional[str]]:
        return [f.checkpoint for f in self.folds]
