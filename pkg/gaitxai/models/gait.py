from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from gaitxai.core.errors import EmptyDataset


class Side(str, Enum):
    LEFT = "left"
    RIGHT = "right"


class Component(str, Enum):
    """GRF force components, in the fixed order used for network inputs"""
    V = "V"
    AP = "AP"
    ML = "ML"


class Sex(str, Enum):
    FEMALE = "F"
    MALE = "M"

    @property
    def class_index(self) -> int:
        return 0 if self is Sex.FEMALE else 1

    @classmethod
    def from_class_index(cls, index: int) -> "Sex":
        return cls.FEMALE if index == 0 else cls.MALE


class ChannelId(str, Enum):
    """The six bilateral GRF curves of a trial"""
    L_V = "L_V"
    L_AP = "L_AP"
    L_ML = "L_ML"
    R_V = "R_V"
    R_AP = "R_AP"
    R_ML = "R_ML"

    @property
    def side(self) -> Side:
        return Side.LEFT if self.value.startswith("L_") else Side.RIGHT

    @property
    def component(self) -> Component:
        return Component(self.value.split("_", 1)[1])

    @classmethod
    def of(cls, side: Side, component: Component) -> "ChannelId":
        prefix = "L" if side is Side.LEFT else "R"
        return cls(f"{prefix}_{component.value}")


COMPONENT_ORDER: Tuple[Component, ...] = (Component.V, Component.AP, Component.ML)
SIDE_ORDER: Tuple[Side, ...] = (Side.LEFT, Side.RIGHT)
CHANNEL_ORDER: Tuple[ChannelId, ...] = tuple(ChannelId)


class CsvSchema(str, Enum):
    """Column layout of an input CSV stream"""
    CANONICAL = "canonical"
    GAITREC_ADAPTER = "gaitrec_adapter"


class InputLayout(str, Enum):
    """How the six curves are arranged into network input channels"""
    TEMPORAL_CONCAT = "temporal_concat"
    CHANNEL_STACK = "channel_stack"


class GaitTrial(BaseModel):
    """One walking trial: six time-normalized GRF curves plus subject metadata"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    subject_id: str
    trial_id: str
    sex: Sex
    body_mass_kg: float = Field(gt=0)
    curves: Dict[ChannelId, np.ndarray]

    @field_validator("curves", mode="before")
    @classmethod
    def _coerce_curves(cls, curves: Dict[ChannelId, np.ndarray]) -> Dict[ChannelId, np.ndarray]:
        coerced = {}
        for channel in CHANNEL_ORDER:
            if channel not in curves:
                raise ValueError(f"missing channel {channel.value}")
            values = np.asarray(curves[channel], dtype=np.float64)
            if values.ndim != 1 or values.shape[0] < 2:
                raise ValueError(f"channel {channel.value} must be a series of length >= 2")
            if not np.all(np.isfinite(values)):
                raise ValueError(f"channel {channel.value} contains non-finite values")
            values.setflags(write=False)
            coerced[channel] = values
        if len(curves) != len(CHANNEL_ORDER):
            raise ValueError("unexpected channels present")
        lengths = {v.shape[0] for v in coerced.values()}
        if len(lengths) != 1:
            raise ValueError(f"curves differ in length: {sorted(lengths)}")
        return coerced

    @property
    def length(self) -> int:
        return next(iter(self.curves.values())).shape[0]

    @property
    def label(self) -> int:
        return self.sex.class_index

    @property
    def origin(self) -> Tuple[str, str]:
        return (self.subject_id, self.trial_id)


class Dataset(BaseModel):
    """Ordered collection of trials sharing one series length"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    trials: List[GaitTrial]
    T: int = Field(ge=2)

    @model_validator(mode="after")
    def _check_consistency(self) -> "Dataset":
        if not self.trials:
            raise EmptyDataset("dataset has no trials")
        sexes: Dict[str, Sex] = {}
        for trial in self.trials:
            if trial.length != self.T:
                raise ValueError(f"trial {trial.origin} has length {trial.length}, expected {self.T}")
            if sexes.setdefault(trial.subject_id, trial.sex) is not trial.sex:
                raise ValueError(f"subject {trial.subject_id} carries two sex labels")
        return self

    def subjects(self) -> List[str]:
        """Subject ids in order of first appearance"""
        seen: Dict[str, None] = {}
        for trial in self.trials:
            seen.setdefault(trial.subject_id, None)
        return list(seen)

    def subject_labels(self) -> Dict[str, int]:
        return {trial.subject_id: trial.label for trial in self.trials}

    def class_counts(self) -> Dict[int, int]:
        counts = {0: 0, 1: 0}
        for trial in self.trials:
            counts[trial.label] += 1
        return counts

    def subset(self, subject_ids) -> "Dataset":
        wanted = set(subject_ids)
        return Dataset(trials=[t for t in self.trials if t.subject_id in wanted], T=self.T)

    def of_class(self, label: int) -> List[GaitTrial]:
        return [t for t in self.trials if t.label == label]


class InputSample(BaseModel):
    """Normalized, concatenated network input paired with its label"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    channels: np.ndarray
    label: int = Field(ge=0, le=1)
    origin: Tuple[str, str]
    channel_names: Tuple[str, ...]

    @property
    def shape(self) -> Tuple[int, int]:
        return tuple(self.channels.shape)


class FoldPlan(BaseModel):
    """Subject-to-fold assignment"""
    model_config = ConfigDict(frozen=True)

    k: int = Field(ge=1)
    assignments: Dict[str, int]

    def subjects_in(self, fold: int) -> List[str]:
        return [s for s, f in self.assignments.items() if f == fold]

    def subjects_outside(self, fold: int) -> List[str]:
        return [s for s, f in self.assignments.items() if f != fold]


class SyntheticSpec(BaseModel):
    """Planted-feature dataset description: a Gaussian bump on the left vertical GRF of class 1"""
    n_subjects_per_class: int = Field(default=20, ge=1)
    n_female_subjects: Optional[int] = Field(default=None, ge=1)
    n_male_subjects: Optional[int] = Field(default=None, ge=1)
    trials_per_subject: int = Field(default=5, ge=1)
    T: int = Field(default=101, ge=2)
    bump_center: int = 20
    bump_width: int = Field(default=8, ge=1)
    bump_amplitude: float = 0.3
    noise_sd: float = Field(default=0.05, ge=0)

    @model_validator(mode="after")
    def _check_window(self) -> "SyntheticSpec":
        if self.bump_center - self.bump_width < 0 or self.bump_center + self.bump_width >= self.T:
            raise ValueError(
                f"bump window [{self.bump_center - self.bump_width}, {self.bump_center + self.bump_width}] "
                f"does not fit in [0, {self.T})"
            )
        return self

    @property
    def female_subjects(self) -> int:
        return self.n_female_subjects or self.n_subjects_per_class

    @property
    def male_subjects(self) -> int:
        return self.n_male_subjects or self.n_subjects_per_class

    @property
    def window(self) -> Tuple[int, int]:
        return (self.bump_center - self.bump_width, self.bump_center + self.bump_width)
