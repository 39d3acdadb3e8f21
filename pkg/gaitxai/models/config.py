"""
Run configuration: one model per config section
"""

from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from gaitxai.models.explanation import LrpConfig
from gaitxai.models.gait import COMPONENT_ORDER, Component, CsvSchema, InputLayout, SyntheticSpec
from gaitxai.models.network import TrainConfig
from gaitxai.models.statistics import SpmConfig


class DataConfig(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    path: Optional[str] = None
    schema_kind: CsvSchema = Field(default=CsvSchema.CANONICAL, alias="schema")
    mapping: Optional[str] = None


class InputConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    layout: InputLayout = InputLayout.TEMPORAL_CONCAT
    channels: Tuple[Component, ...] = COMPONENT_ORDER

    @field_validator("channels", mode="before")
    @classmethod
    def _split_channels(cls, value):
        if isinstance(value, str):
            value = [part.strip() for part in value.split(",") if part.strip()]
        return value

    @field_validator("channels")
    @classmethod
    def _check_channels(cls, value: Tuple[Component, ...]) -> Tuple[Component, ...]:
        if not value:
            raise ValueError("channel subset must not be empty")
        if len(set(value)) != len(value):
            raise ValueError("channel subset lists a component twice")
        # Fixed component order regardless of how the subset was written
        return tuple(c for c in COMPONENT_ORDER if c in value)


class ModelConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    # None selects the default architecture for the input shape
    architecture: Optional[str] = None


class CvConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    k: int = Field(default=10, ge=1)


class RegionsConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    path: Optional[str] = None
    mass_fraction: float = Field(default=0.5, gt=0, le=1)


class RunConfig(BaseModel):
    """Everything a pipeline subcommand needs, validated as a whole"""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    data: DataConfig = Field(default_factory=DataConfig)
    input: InputConfig = Field(default_factory=InputConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    lrp: LrpConfig = Field(default_factory=LrpConfig)
    spm: SpmConfig = Field(default_factory=SpmConfig)
    cv: CvConfig = Field(default_factory=CvConfig)
    regions: RegionsConfig = Field(default_factory=RegionsConfig)
    synth: SyntheticSpec = Field(default_factory=SyntheticSpec)
    seed: int = Field(default=42, ge=0)
    out: str = "outputs"
