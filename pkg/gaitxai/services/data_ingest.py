"""
GRF trial ingestion: CSV parsing (canonical and GAITREC-style layouts), normalization,
network input assembly, subject-disjoint stratified folds and synthetic planted-feature data
"""

import io
import logging
import re
from pathlib import Path
from typing import BinaryIO, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from sklearn.model_selection import StratifiedKFold

from gaitxai.core.errors import (
    DataNotFound,
    LabelConflict,
    LengthMismatch,
    NonFiniteValue,
    SchemaError,
    ShapeMismatch,
    TooFewSubjects,
)
from gaitxai.models.gait import (
    CHANNEL_ORDER,
    COMPONENT_ORDER,
    SIDE_ORDER,
    ChannelId,
    Component,
    CsvSchema,
    Dataset,
    FoldPlan,
    GaitTrial,
    InputLayout,
    InputSample,
    Sex,
    SyntheticSpec,
)

logger = logging.getLogger(__name__)

META_COLUMNS = ["subject_id", "trial_id", "sex", "body_mass_kg", "channel"]

Source = Union[bytes, str, Path, BinaryIO]


class GaitrecMapping(BaseModel):
    """Column mapping from the public GAITREC exports onto the canonical schema"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    subject_column: str = "SUBJECT_ID"
    trial_columns: Tuple[str, ...] = ("SESSION_ID", "TRIAL_ID")
    sex_column: str = "SEX"
    sex_female: str = "0"
    sex_male: str = "1"
    body_mass_column: str = "BODY_WEIGHT"
    channel_column: str = "CHANNEL"
    channel_codes: Dict[ChannelId, str] = Field(default_factory=lambda: {
        ChannelId.L_V: "F_V_PRO_left",
        ChannelId.L_AP: "F_AP_PRO_left",
        ChannelId.L_ML: "F_ML_PRO_left",
        ChannelId.R_V: "F_V_PRO_right",
        ChannelId.R_AP: "F_AP_PRO_right",
        ChannelId.R_ML: "F_ML_PRO_right",
    })
    # One capture group holding the sample index
    value_pattern: str = r"^F_\w+?_PRO_(\d+)$"
    value_index_base: int = 1
    files: Dict[ChannelId, str] = Field(default_factory=lambda: {
        ChannelId.L_V: "GRF_F_V_PRO_left.csv",
        ChannelId.L_AP: "GRF_F_AP_PRO_left.csv",
        ChannelId.L_ML: "GRF_F_ML_PRO_left.csv",
        ChannelId.R_V: "GRF_F_V_PRO_right.csv",
        ChannelId.R_AP: "GRF_F_AP_PRO_right.csv",
        ChannelId.R_ML: "GRF_F_ML_PRO_right.csv",
    })
    metadata_file: str = "GRF_metadata.csv"


def load_gaitrec_mapping(path: Union[str, Path]) -> GaitrecMapping:
    """Read a key=value mapping file; keys not given keep the GAITREC defaults"""
    path = Path(path)
    if not path.is_file():
        raise DataNotFound(f"mapping file not found: {path}")
    fields: Dict[str, object] = {}
    channel_codes: Dict[str, str] = {}
    files: Dict[str, str] = {}
    for number, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SchemaError(f"{path}:{number}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("channel."):
            channel_codes[key.split(".", 1)[1]] = value
        elif key.startswith("file."):
            files[key.split(".", 1)[1]] = value
        elif key == "sex.female":
            fields["sex_female"] = value
        elif key == "sex.male":
            fields["sex_male"] = value
        elif key == "trial_columns":
            fields["trial_columns"] = tuple(part.strip() for part in value.split(",") if part.strip())
        else:
            fields[key] = value
    defaults = GaitrecMapping()
    if channel_codes:
        fields["channel_codes"] = {**{k.value: v for k, v in defaults.channel_codes.items()}, **channel_codes}
    if files:
        fields["files"] = {**{k.value: v for k, v in defaults.files.items()}, **files}
    try:
        return GaitrecMapping(**fields)
    except ValidationError as e:
        raise SchemaError(f"invalid mapping file {path}: {e.errors()[0]['msg']}")


def _read_text(source: Source) -> str:
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.is_file():
            raise DataNotFound(f"data file not found: {path}")
        raw = path.read_bytes()
    elif isinstance(source, bytes):
        raw = source
    else:
        raw = source.read()
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise SchemaError(f"input is not valid UTF-8: {e}")


def _read_frame(text: str) -> pd.DataFrame:
    # The header is read as a data row so pandas never infers an index column from ragged rows
    try:
        raw = pd.read_csv(io.StringIO(text), header=None, dtype=str, keep_default_na=False, na_filter=False)
    except pd.errors.EmptyDataError:
        raise SchemaError("input contains no header")
    except pd.errors.ParserError as e:
        raise LengthMismatch(f"row has more fields than the header: {e}")
    frame = raw.iloc[1:].reset_index(drop=True)
    frame.columns = [str(c).strip() for c in raw.iloc[0]]
    return frame


def _value_columns(columns: Sequence[str], pattern: str, base: int) -> List[str]:
    regex = re.compile(pattern)
    indexed = []
    for column in columns:
        match = regex.match(column)
        if match:
            indexed.append((int(match.group(1)), column))
    indexed.sort()
    indices = [i for i, _ in indexed]
    if indices != list(range(base, base + len(indices))):
        raise SchemaError(f"value columns are not contiguous from {base}: {indices[:5]}...")
    return [column for _, column in indexed]


def _frame_to_dataset(frame: pd.DataFrame) -> Dataset:
    """Validate a canonical string frame and build the Dataset"""
    columns = list(frame.columns)
    if columns[: len(META_COLUMNS)] != META_COLUMNS:
        raise SchemaError(f"header must start with {','.join(META_COLUMNS)}, got {','.join(columns[:5])}")
    value_columns = columns[len(META_COLUMNS):]
    T = len(value_columns)
    if value_columns != [f"v_{i}" for i in range(T)]:
        raise SchemaError("value columns must be v_0..v_{T-1} in order")
    if T < 2:
        raise SchemaError(f"series length must be >= 2, header declares {T}")
    if frame.empty:
        raise SchemaError("input contains no data rows")

    block = frame[value_columns]
    # Short rows come back as missing cells
    if block.isna().any().any() or (block == "").any().any():
        bad = int(np.flatnonzero((block.isna() | (block == "")).any(axis=1).to_numpy())[0])
        raise LengthMismatch(f"data row {bad + 1} is shorter than the header length T={T}")
    if frame[META_COLUMNS].isna().any().any():
        raise LengthMismatch("data row is missing metadata fields")
    try:
        values = block.to_numpy(dtype=np.float64)
    except ValueError as e:
        raise SchemaError(f"non-numeric curve value: {e}")
    finite = np.isfinite(values)
    if not finite.all():
        row = int(np.flatnonzero(~finite.all(axis=1))[0])
        raise NonFiniteValue(f"data row {row + 1} contains a non-finite value")

    valid_channels = {c.value for c in CHANNEL_ORDER}
    trials: Dict[Tuple[str, str], Dict[str, object]] = {}
    subject_sex: Dict[str, str] = {}
    for row, (subject_id, trial_id, sex, mass, channel) in enumerate(frame[META_COLUMNS].itertuples(index=False)):
        if channel not in valid_channels:
            raise SchemaError(f"data row {row + 1}: unknown channel {channel!r}")
        if sex not in ("F", "M"):
            raise SchemaError(f"data row {row + 1}: sex must be F or M, got {sex!r}")
        if subject_sex.setdefault(subject_id, sex) != sex:
            raise LabelConflict(f"subject {subject_id} appears with sex {subject_sex[subject_id]} and {sex}")
        try:
            mass_value = float(mass)
        except ValueError:
            raise SchemaError(f"data row {row + 1}: body_mass_kg is not a number: {mass!r}")
        if not np.isfinite(mass_value):
            raise NonFiniteValue(f"data row {row + 1}: body_mass_kg is not finite")
        if mass_value <= 0:
            raise SchemaError(f"data row {row + 1}: body_mass_kg must be positive")
        entry = trials.setdefault((subject_id, trial_id), {"sex": sex, "mass": mass_value, "curves": {}})
        if entry["mass"] != mass_value:
            raise SchemaError(f"trial {subject_id}/{trial_id}: body_mass_kg differs between rows")
        curves = entry["curves"]
        if channel in curves:
            raise SchemaError(f"trial {subject_id}/{trial_id}: channel {channel} given twice")
        curves[channel] = values[row]

    built = []
    for (subject_id, trial_id) in sorted(trials):
        entry = trials[(subject_id, trial_id)]
        missing = valid_channels - set(entry["curves"])
        if missing:
            raise SchemaError(f"trial {subject_id}/{trial_id}: missing channels {sorted(missing)}")
        built.append(GaitTrial(
            subject_id=subject_id,
            trial_id=trial_id,
            sex=Sex(entry["sex"]),
            body_mass_kg=entry["mass"],
            curves={ChannelId(c): v for c, v in entry["curves"].items()},
        ))
    logger.info(f"Parsed {len(built)} trials of {len(subject_sex)} subjects, T={T}")
    return Dataset(trials=built, T=T)


def _adapter_to_canonical(frame: pd.DataFrame, mapping: GaitrecMapping) -> pd.DataFrame:
    required = [mapping.subject_column, *mapping.trial_columns, mapping.sex_column,
                mapping.body_mass_column, mapping.channel_column]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise SchemaError(f"GAITREC columns missing: {missing}")
    value_columns = _value_columns(frame.columns, mapping.value_pattern, mapping.value_index_base)
    extra = set(frame.columns) - set(required) - set(value_columns)
    if extra:
        raise SchemaError(f"unexpected GAITREC columns: {sorted(extra)}")

    sex_codes = {mapping.sex_female: Sex.FEMALE.value, mapping.sex_male: Sex.MALE.value}
    channel_codes = {code: channel.value for channel, code in mapping.channel_codes.items()}
    unknown_sex = set(frame[mapping.sex_column]) - set(sex_codes)
    if unknown_sex:
        raise SchemaError(f"unmapped sex codes: {sorted(unknown_sex)}")
    unknown_channels = set(frame[mapping.channel_column]) - set(channel_codes)
    if unknown_channels:
        raise SchemaError(f"unmapped channel codes: {sorted(unknown_channels)}")

    canonical = pd.DataFrame({
        "subject_id": frame[mapping.subject_column],
        "trial_id": frame[list(mapping.trial_columns)].agg("_".join, axis=1),
        "sex": frame[mapping.sex_column].map(sex_codes),
        "body_mass_kg": frame[mapping.body_mass_column],
        "channel": frame[mapping.channel_column].map(channel_codes),
    })
    values = frame[value_columns].copy()
    values.columns = [f"v_{i}" for i in range(len(value_columns))]
    return pd.concat([canonical, values], axis=1)


def parse_trials(source: Source, schema: CsvSchema = CsvSchema.CANONICAL,
                 mapping: Optional[GaitrecMapping] = None) -> Dataset:
    """Parse GRF trials from a UTF-8 CSV stream; trials come back ordered by (subject_id, trial_id)"""
    frame = _read_frame(_read_text(source))
    if CsvSchema(schema) is CsvSchema.GAITREC_ADAPTER:
        frame = _adapter_to_canonical(frame, mapping or GaitrecMapping())
    return _frame_to_dataset(frame)


def load_gaitrec_directory(directory: Union[str, Path], mapping: Optional[GaitrecMapping] = None) -> Dataset:
    """Join the per-channel GAITREC files with the metadata file into one Dataset"""
    mapping = mapping or GaitrecMapping()
    directory = Path(directory)
    metadata_path = directory / mapping.metadata_file
    if not metadata_path.is_file():
        raise DataNotFound(f"GAITREC metadata file not found: {metadata_path}")
    metadata = _read_frame(_read_text(metadata_path))
    keep = [mapping.subject_column, mapping.sex_column, mapping.body_mass_column]
    missing = [c for c in keep if c not in metadata.columns]
    if missing:
        raise SchemaError(f"GAITREC metadata columns missing: {missing}")
    metadata = metadata[keep].drop_duplicates()
    sexes_per_subject = metadata.groupby(mapping.subject_column)[mapping.sex_column].nunique()
    if (sexes_per_subject > 1).any():
        conflicted = sorted(sexes_per_subject[sexes_per_subject > 1].index)
        raise LabelConflict(f"subjects with two sex codes in GAITREC metadata: {conflicted[:5]}")
    # Sessions may record different body weights; the first one is kept
    metadata = metadata.drop_duplicates(subset=[mapping.subject_column], keep="first")

    parts = []
    for channel in CHANNEL_ORDER:
        path = directory / mapping.files[channel]
        if not path.is_file():
            raise DataNotFound(f"GAITREC channel file not found: {path}")
        frame = _read_frame(_read_text(path))
        frame = frame.merge(metadata, on=mapping.subject_column, how="inner", validate="many_to_one")
        frame[mapping.channel_column] = mapping.channel_codes[channel]
        value_columns = _value_columns(frame.columns, mapping.value_pattern, mapping.value_index_base)
        ordered = [mapping.subject_column, *mapping.trial_columns, mapping.sex_column,
                   mapping.body_mass_column, mapping.channel_column]
        parts.append(frame[ordered + value_columns].rename(
            columns={old: f"v_{i}" for i, old in enumerate(value_columns)}))
    lengths = {len(p.columns) for p in parts}
    if len(lengths) != 1:
        raise LengthMismatch("GAITREC channel files differ in series length")
    # All parts share canonical value names, so the adapter sees one pattern
    stacked = pd.concat(parts, ignore_index=True)
    relabelled = mapping.model_copy(update={"value_pattern": r"^v_(\d+)$", "value_index_base": 0})
    return _frame_to_dataset(_adapter_to_canonical(stacked, relabelled))


def _format_float(value: float) -> str:
    return repr(float(value))


def trials_to_csv(dataset: Dataset) -> str:
    """Canonical CSV text; values use the shortest round-trip float representation"""
    header = META_COLUMNS + [f"v_{i}" for i in range(dataset.T)]
    rows = []
    for trial in dataset.trials:
        for channel in CHANNEL_ORDER:
            rows.append([trial.subject_id, trial.trial_id, trial.sex.value, _format_float(trial.body_mass_kg),
                         channel.value, *(_format_float(v) for v in trial.curves[channel])])
    frame = pd.DataFrame(rows, columns=header, dtype=object)
    return frame.to_csv(index=False, lineterminator="\n")


def write_trials(dataset: Dataset, sink: Union[str, Path, BinaryIO]) -> None:
    data = trials_to_csv(dataset).encode("utf-8")
    if isinstance(sink, (str, Path)):
        Path(sink).write_bytes(data)
    else:
        sink.write(data)


def min_max_normalize(series: Iterable[float]) -> np.ndarray:
    """Affine map onto [0, 1]; a constant series maps to all 0.5"""
    x = np.asarray(series, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteValue("cannot normalize a series with non-finite values")
    if x.size == 0:
        return x.copy()
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.full_like(x, 0.5)
    return (x - lo) / (hi - lo)


def _ordered_subset(channel_subset: Iterable[Component]) -> Tuple[Component, ...]:
    subset = {Component(c) for c in channel_subset}
    if not subset:
        raise SchemaError("channel subset must not be empty")
    return tuple(c for c in COMPONENT_ORDER if c in subset)


def input_channel_names(layout: InputLayout, channel_subset: Iterable[Component]) -> Tuple[str, ...]:
    components = _ordered_subset(channel_subset)
    if InputLayout(layout) is InputLayout.TEMPORAL_CONCAT:
        return tuple(c.value for c in components)
    return tuple(ChannelId.of(side, c).value for c in components for side in SIDE_ORDER)


def input_segments(layout: InputLayout, channel_subset: Iterable[Component],
                   T: int) -> List[Tuple[int, int, ChannelId]]:
    """(input channel index, first input node, GRF channel) for every T-long segment of the input"""
    components = _ordered_subset(channel_subset)
    segments = []
    if InputLayout(layout) is InputLayout.TEMPORAL_CONCAT:
        for index, component in enumerate(components):
            for offset, side in enumerate(SIDE_ORDER):
                segments.append((index, offset * T, ChannelId.of(side, component)))
    else:
        index = 0
        for component in components:
            for side in SIDE_ORDER:
                segments.append((index, 0, ChannelId.of(side, component)))
                index += 1
    return segments


def input_to_grf(values: np.ndarray, layout: InputLayout, channel_subset: Iterable[Component],
                 T: int) -> Dict[ChannelId, np.ndarray]:
    """Split an input-shaped array (C, L) back into per-GRF-channel curves of length T"""
    return {channel: values[index, start:start + T]
            for index, start, channel in input_segments(layout, channel_subset, T)}


def node_to_grf(layout: InputLayout, channel_subset: Iterable[Component], T: int,
                channel_index: int, node: int) -> Tuple[ChannelId, int]:
    """GRF (channel, node) coordinate of one input node"""
    for index, start, channel in input_segments(layout, channel_subset, T):
        if index == channel_index and start <= node < start + T:
            return channel, node - start
    raise ShapeMismatch(f"input node ({channel_index}, {node}) is outside the assembled input")


def assemble_input(trial: GaitTrial, layout: InputLayout = InputLayout.TEMPORAL_CONCAT,
                   channel_subset: Iterable[Component] = COMPONENT_ORDER) -> InputSample:
    """Min-max normalize every curve independently, then arrange them into input channels"""
    components = _ordered_subset(channel_subset)
    normalized = {channel: min_max_normalize(trial.curves[channel]) for channel in CHANNEL_ORDER
                  if channel.component in components}
    if InputLayout(layout) is InputLayout.TEMPORAL_CONCAT:
        rows = [np.concatenate([normalized[ChannelId.of(side, c)] for side in SIDE_ORDER]) for c in components]
    else:
        rows = [normalized[ChannelId.of(side, c)] for c in components for side in SIDE_ORDER]
    channels = np.stack(rows)
    channels.setflags(write=False)
    return InputSample(
        channels=channels,
        label=trial.label,
        origin=trial.origin,
        channel_names=input_channel_names(layout, components),
    )


def assemble_inputs(trials: Sequence[GaitTrial], layout: InputLayout = InputLayout.TEMPORAL_CONCAT,
                    channel_subset: Iterable[Component] = COMPONENT_ORDER) -> List[InputSample]:
    components = _ordered_subset(channel_subset)
    return [assemble_input(trial, layout, components) for trial in trials]


def stack_inputs(samples: Sequence[InputSample]) -> Tuple[np.ndarray, np.ndarray]:
    """(N, C, L) inputs and (N,) labels"""
    x = np.stack([s.channels for s in samples]).astype(np.float64)
    y = np.asarray([s.label for s in samples], dtype=np.int64)
    return x, y


def make_folds(dataset: Dataset, k: int, seed: int) -> FoldPlan:
    """Subject-disjoint folds whose per-class subject counts are within one of the ideal share"""
    subjects = dataset.subjects()
    labels_by_subject = dataset.subject_labels()
    labels = np.asarray([labels_by_subject[s] for s in subjects])
    if k < 1:
        raise TooFewSubjects(f"fold count must be >= 1, got {k}")
    if k == 1:
        return FoldPlan(k=1, assignments={s: 0 for s in subjects})
    minority = min(int((labels == 0).sum()), int((labels == 1).sum()))
    if k > minority:
        raise TooFewSubjects(f"k={k} folds need at least {k} subjects per class; the minority class has {minority}")
    splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    assignments: Dict[str, int] = {}
    for fold, (_, test_index) in enumerate(splitter.split(np.zeros(len(subjects)), labels)):
        for i in test_index:
            assignments[subjects[i]] = fold
    # Keep dataset order in the mapping
    ordered = {s: assignments[s] for s in subjects}
    logger.debug(f"Built {k} folds over {len(subjects)} subjects (seed {seed})")
    return FoldPlan(k=k, assignments=ordered)


def base_templates(T: int) -> Dict[Component, np.ndarray]:
    """Double-hump vertical, braking/propulsion anterior-posterior and small medio-lateral curves"""
    s = np.linspace(0.0, 1.0, T)
    return {
        Component.V: np.sin(np.pi * s) + 0.25 * np.sin(3 * np.pi * s),
        Component.AP: -0.2 * np.sin(2 * np.pi * s),
        Component.ML: 0.06 * np.sin(np.pi * s) + 0.02 * np.sin(3 * np.pi * s),
    }


def planted_bump(spec: SyntheticSpec) -> np.ndarray:
    """Class-1 additive bump: Gaussian (sd = width / 2) on [center - width, center + width], zero elsewhere"""
    bump = np.zeros(spec.T)
    lo, hi = spec.window
    q = np.arange(lo, hi + 1)
    bump[lo:hi + 1] = spec.bump_amplitude * np.exp(-0.5 * ((q - spec.bump_center) / (spec.bump_width / 2.0)) ** 2)
    return bump


def generate_synthetic(spec: SyntheticSpec, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    templates = base_templates(spec.T)
    bump = planted_bump(spec)
    trials = []
    subject_number = 0
    for sex, n_subjects, mass_mean, mass_sd in (
        (Sex.FEMALE, spec.female_subjects, 65.2, 11.8),
        (Sex.MALE, spec.male_subjects, 80.9, 14.0),
    ):
        for _ in range(n_subjects):
            subject_number += 1
            subject_id = f"S{subject_number:03d}"
            body_mass = round(float(max(40.0, rng.normal(mass_mean, mass_sd))), 1)
            for trial_number in range(1, spec.trials_per_subject + 1):
                noise = rng.normal(0.0, 1.0, size=(len(CHANNEL_ORDER), spec.T)) * spec.noise_sd
                curves = {}
                for row, channel in enumerate(CHANNEL_ORDER):
                    curve = templates[channel.component] + noise[row]
                    if sex is Sex.MALE and channel is ChannelId.L_V:
                        curve = curve + bump
                    curves[channel] = curve
                trials.append(GaitTrial(
                    subject_id=subject_id,
                    trial_id=f"T{trial_number:02d}",
                    sex=sex,
                    body_mass_kg=body_mass,
                    curves=curves,
                ))
    logger.info(
        f"Generated synthetic dataset: {spec.female_subjects}+{spec.male_subjects} subjects, "
        f"{spec.trials_per_subject} trials each, bump {spec.bump_amplitude} at {spec.bump_center}±{spec.bump_width}"
    )
    return Dataset(trials=trials, T=spec.T)
