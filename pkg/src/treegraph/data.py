"""Loading, alignment, normalization, splitting and synthesis of multi-omics data."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .config import MODALITIES, SynthConfig
from .error_handling import DataError
from .report import atomic_write_text

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


def _first_duplicate(items: Sequence[str]) -> Union[str, None]:
    seen = set()
    for item in items:
        if item in seen:
            return item
        seen.add(item)
    return None


@dataclass(frozen=True)
class OmicsMatrix:
    """One modality: samples x features block with names."""

    values: np.ndarray
    feature_names: Tuple[str, ...]
    sample_ids: Tuple[str, ...]

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError(f"Omics values must be 2-D, got shape {values.shape}", error_code="BAD_SHAPE")
        n, p = values.shape
        if len(self.feature_names) != p or len(self.sample_ids) != n:
            raise DataError(
                f"Names do not match values: {n}x{p} values, {len(self.sample_ids)} sample ids, "
                f"{len(self.feature_names)} feature names",
                error_code="BAD_SHAPE",
            )
        if not np.all(np.isfinite(values)):
            raise DataError("Omics values contain NaN or inf", error_code="NON_FINITE")
        dup = _first_duplicate(self.feature_names)
        if dup is not None:
            raise DataError(f"Duplicate feature name: {dup}", error_code="DUPLICATE_FEATURE", details={"feature": dup})
        dup = _first_duplicate(self.sample_ids)
        if dup is not None:
            raise DataError(f"Duplicate sample id: {dup}", error_code="DUPLICATE_SAMPLE", details={"sample_id": dup})
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def take_rows(self, rows: Sequence[int]) -> "OmicsMatrix":
        rows = list(rows)
        return OmicsMatrix(self.values[rows], self.feature_names, tuple(self.sample_ids[r] for r in rows))


@dataclass(frozen=True)
class MultiOmicsDataset:
    """Three aligned modalities plus binary labels."""

    modalities: Tuple[OmicsMatrix, OmicsMatrix, OmicsMatrix]
    labels: np.ndarray
    modality_names: Tuple[str, str, str] = MODALITIES

    def __post_init__(self) -> None:
        if len(self.modalities) != 3:
            raise DataError(f"Expected 3 modalities, got {len(self.modalities)}", error_code="BAD_MODALITIES")
        ids = self.modalities[0].sample_ids
        for name, m in zip(self.modality_names[1:], self.modalities[1:]):
            if m.sample_ids != ids:
                raise DataError(f"Modality '{name}' is not aligned with '{self.modality_names[0]}'",
                                error_code="UNALIGNED")
        labels = np.asarray(self.labels)
        if labels.shape != (len(ids),):
            raise DataError(f"Labels length {labels.shape} does not match {len(ids)} samples", error_code="BAD_LABELS")
        if not np.all(np.isin(labels, (0, 1))):
            raise DataError("Labels must be 0 or 1", error_code="BAD_LABELS")
        if np.unique(labels).size < 2:
            raise DataError("Labels contain a single class", error_code="SINGLE_CLASS")
        object.__setattr__(self, "modalities", tuple(self.modalities))
        object.__setattr__(self, "labels", _frozen(labels.astype(np.int64)))

    @property
    def n_samples(self) -> int:
        return self.labels.shape[0]

    @property
    def sample_ids(self) -> Tuple[str, ...]:
        return self.modalities[0].sample_ids

    def with_labels(self, labels: np.ndarray) -> "MultiOmicsDataset":
        return MultiOmicsDataset(self.modalities, labels, self.modality_names)


@dataclass(frozen=True)
class SplitIndices:
    """Disjoint train/validation/test row indices."""

    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    def __post_init__(self) -> None:
        for name in ("train", "validation", "test"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=np.int64)))


@dataclass(frozen=True)
class NormalizationStats:
    """Per-column min and max used by min-max scaling."""

    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self) -> None:
        if np.any(self.minimum > self.maximum):
            raise ValueError("min must not exceed max")


def _read_raw(path: Path) -> pd.DataFrame:
    if not path.exists():
        raise DataError(f"File not found: {path}", error_code="FILE_NOT_FOUND", details={"path": str(path)})
    try:
        raw = pd.read_csv(path, header=None, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.ParserError as e:
        raise DataError(f"Ragged rows in {path}: {e}", error_code="RAGGED_ROWS", details={"path": str(path)}) from e
    except pd.errors.EmptyDataError as e:
        raise DataError(f"Empty file: {path}", error_code="EMPTY_FILE", details={"path": str(path)}) from e
    short = raw.isna().any(axis=1).to_numpy()
    if short.any():
        line = int(np.flatnonzero(short)[0])
        raise DataError(f"Ragged row {line} in {path}: fewer fields than the header",
                        error_code="RAGGED_ROWS", details={"path": str(path), "row": line})
    return raw


def _parse_numeric(block: pd.DataFrame, columns: List[str], path: Path) -> np.ndarray:
    numeric = block.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    bad = ~np.isfinite(numeric)
    if bad.any():
        r, c = (int(v) for v in np.argwhere(bad)[0])
        cell = block.iat[r, c]
        raise DataError(
            f"Non-numeric value {cell!r} at row {r + 1}, column '{columns[c]}' in {path}",
            error_code="NON_NUMERIC",
            details={"path": str(path), "row": r + 1, "column": columns[c], "value": cell},
        )
    # float() on the raw strings is correctly rounded, so written files load back bit-exactly
    return block.to_numpy(dtype=object).astype(np.float64)


def load_omics_csv(path: PathLike) -> OmicsMatrix:
    """Load one modality; header ``sample_id,<feat1>,...``, rows are samples.

    Rows in error messages are 1-based data rows (the header is not counted).
    """
    path = Path(path)
    raw = _read_raw(path)
    header = [str(h).strip() for h in raw.iloc[0].tolist()]
    if len(header) < 2:
        raise DataError(f"{path} has no feature columns", error_code="NO_FEATURES", details={"path": str(path)})
    features = header[1:]
    dup = _first_duplicate(features)
    if dup is not None:
        raise DataError(f"Duplicate feature name '{dup}' in {path}", error_code="DUPLICATE_FEATURE",
                        details={"path": str(path), "feature": dup})

    body = raw.iloc[1:]
    if len(body) < 2:
        raise DataError(f"{path} needs at least 2 samples, found {len(body)}", error_code="TOO_FEW_SAMPLES",
                        details={"path": str(path)})
    sample_ids = [s.strip() for s in body.iloc[:, 0].tolist()]
    dup = _first_duplicate(sample_ids)
    if dup is not None:
        raise DataError(f"Duplicate sample id '{dup}' in {path}", error_code="DUPLICATE_SAMPLE",
                        details={"path": str(path), "sample_id": dup})

    values = _parse_numeric(body.iloc[:, 1:].reset_index(drop=True), features, path)
    logger.debug(f"Loaded {path}: {values.shape[0]} samples x {values.shape[1]} features")
    return OmicsMatrix(values, tuple(features), tuple(sample_ids))


def load_labels_csv(path: PathLike) -> Dict[str, int]:
    """Load ``sample_id,label`` with label in {0, 1}."""
    path = Path(path)
    raw = _read_raw(path)
    header = [str(h).strip() for h in raw.iloc[0].tolist()]
    if len(header) != 2:
        raise DataError(f"{path} must have exactly two columns (sample_id,label)", error_code="BAD_LABELS",
                        details={"path": str(path)})
    labels: Dict[str, int] = {}
    for row, (sample_id, label) in enumerate(raw.iloc[1:].itertuples(index=False), start=1):
        sample_id, label = sample_id.strip(), label.strip()
        if label not in ("0", "1"):
            raise DataError(f"Label {label!r} at row {row} in {path} is not 0 or 1", error_code="BAD_LABELS",
                            details={"path": str(path), "row": row, "column": header[1], "value": label})
        if sample_id in labels:
            raise DataError(f"Duplicate sample id '{sample_id}' in {path}", error_code="DUPLICATE_SAMPLE",
                            details={"path": str(path), "sample_id": sample_id})
        labels[sample_id] = int(label)
    return labels


def write_omics_csv(matrix: OmicsMatrix, path: PathLike) -> None:
    frame = pd.DataFrame(matrix.values, columns=list(matrix.feature_names))
    frame.insert(0, "sample_id", list(matrix.sample_ids))
    # shortest round-trip repr keeps the file lossless
    atomic_write_text(path, frame.to_csv(index=False, float_format=None))


def write_labels_csv(sample_ids: Sequence[str], labels: np.ndarray, path: PathLike) -> None:
    frame = pd.DataFrame({"sample_id": list(sample_ids), "label": np.asarray(labels, dtype=np.int64)})
    atomic_write_text(path, frame.to_csv(index=False))


def align_samples(m1: OmicsMatrix, m2: OmicsMatrix, m3: OmicsMatrix, labels: Mapping[str, int],
                  modality_names: Tuple[str, str, str] = MODALITIES) -> MultiOmicsDataset:
    """Keep the samples present in all three modalities and the labels, sorted by id."""
    matrices = (m1, m2, m3)
    common = set(labels)
    for m in matrices:
        common &= set(m.sample_ids)
    if not common:
        raise DataError("No sample id is shared by all modalities and the labels", error_code="EMPTY_INTERSECTION")
    order = sorted(common)

    aligned = []
    for name, m in zip(modality_names, matrices):
        dropped = m.n_samples - len(order)
        if dropped:
            logger.warning(f"Dropping {dropped} sample(s) from {name} not shared by every modality")
        else:
            logger.info(f"{name}: all {m.n_samples} samples retained")
        position = {sid: i for i, sid in enumerate(m.sample_ids)}
        aligned.append(m.take_rows([position[sid] for sid in order]))
    extra_labels = len(labels) - len(order)
    if extra_labels:
        logger.warning(f"Dropping {extra_labels} label(s) without matching omics samples")

    y = np.array([labels[sid] for sid in order], dtype=np.int64)
    if np.unique(y).size < 2:
        raise DataError("Aligned samples contain a single class", error_code="SINGLE_CLASS")
    return MultiOmicsDataset(tuple(aligned), y, modality_names)  # type: ignore[arg-type]


def minmax_normalize(m: OmicsMatrix) -> Tuple[OmicsMatrix, NormalizationStats]:
    """Scale every column to [0, 1]; constant columns become all zeros."""
    x = m.values
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    span = hi - lo
    scaled = np.zeros_like(x)
    varying = span > 0
    scaled[:, varying] = (x[:, varying] - lo[varying]) / span[varying]
    np.clip(scaled, 0.0, 1.0, out=scaled)
    return OmicsMatrix(scaled, m.feature_names, m.sample_ids), NormalizationStats(_frozen(lo), _frozen(hi))


def _allocate(count: int, ratios: Sequence[float]) -> List[int]:
    """Largest-remainder allocation; every part gets at least one sample."""
    quotas = np.asarray(ratios, dtype=np.float64) * count
    parts = np.floor(quotas).astype(int)
    remainder = count - int(parts.sum())
    fractions = quotas - parts
    for idx in sorted(range(len(parts)), key=lambda i: (-fractions[i], i))[:remainder]:
        parts[idx] += 1
    while (parts == 0).any():
        parts[int(np.argmax(parts))] -= 1
        parts[int(np.flatnonzero(parts == 0)[0])] += 1
    return parts.tolist()


def stratified_split(labels: np.ndarray, ratios: Tuple[float, float, float] = (0.6, 0.2, 0.2),
                     seed: int = 0) -> SplitIndices:
    """Per-class seeded shuffle followed by proportional allocation."""
    labels = np.asarray(labels)
    if len(ratios) != 3 or not np.isclose(sum(ratios), 1.0) or min(ratios) <= 0:
        raise ValueError(f"ratios must be three positive values summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    parts: List[List[np.ndarray]] = [[], [], []]
    for cls in (0, 1):
        members = np.flatnonzero(labels == cls)
        if members.size < 3:
            raise DataError(
                f"Class {cls} has {members.size} sample(s); at least 3 are needed to populate every part",
                error_code="CLASS_TOO_SMALL", details={"class": cls, "count": int(members.size)})
        shuffled = rng.permutation(members)
        start = 0
        for i, size in enumerate(_allocate(members.size, ratios)):
            parts[i].append(shuffled[start:start + size])
            start += size
    train, validation, test = (np.sort(np.concatenate(p)) for p in parts)
    return SplitIndices(train, validation, test)


def dataset_from_arrays(arrays: Sequence[np.ndarray], labels: np.ndarray,
                        modality_names: Tuple[str, str, str] = MODALITIES) -> MultiOmicsDataset:
    """Wrap raw arrays with generated sample ids and feature names."""
    n = len(labels)
    sample_ids = tuple(f"S{i:05d}" for i in range(n))
    matrices = tuple(
        OmicsMatrix(a, tuple(f"{name}_{j:05d}" for j in range(a.shape[1])), sample_ids)
        for name, a in zip(modality_names, arrays)
    )
    return MultiOmicsDataset(matrices, labels, modality_names)  # type: ignore[arg-type]


@dataclass(frozen=True)
class SyntheticTruth:
    """Ground-truth planted column indices per modality."""

    informative: Tuple[np.ndarray, np.ndarray, np.ndarray]
    modality_names: Tuple[str, str, str] = field(default=MODALITIES)

    def as_dict(self) -> Dict[str, List[int]]:
        return {name: [int(j) for j in idx] for name, idx in zip(self.modality_names, self.informative)}


def generate_synthetic(config: SynthConfig, seed: int) -> Tuple[MultiOmicsDataset, SyntheticTruth]:
    """Gaussian noise with class-conditional mean shifts on planted columns, min-max scaled."""
    n = config.n_samples
    if n < 10:
        raise DataError(f"n_samples must be at least 10, got {n}", error_code="BAD_SYNTH")
    for k, p in zip(config.n_informative, config.n_features):
        if k > p:
            raise DataError(f"Cannot plant {k} informative features among {p}", error_code="BAD_SYNTH")

    rng = np.random.default_rng(seed)
    n_neg = int(round(n * config.imbalance / (config.imbalance + 1.0)))
    n_neg = min(max(n_neg, 3), n - 3)
    labels = np.zeros(n, dtype=np.int64)
    labels[n_neg:] = 1
    labels = rng.permutation(labels)

    arrays = []
    planted = []
    for p, k in zip(config.n_features, config.n_informative):
        x = rng.standard_normal((n, p))
        cols = np.sort(rng.choice(p, size=k, replace=False))
        x[:, cols] += config.effect_size * labels[:, None]
        planted.append(cols.astype(np.int64))
        arrays.append(x)

    raw = dataset_from_arrays(arrays, labels)
    normalized = tuple(minmax_normalize(m)[0] for m in raw.modalities)
    dataset = MultiOmicsDataset(normalized, labels, raw.modality_names)  # type: ignore[arg-type]
    logger.info(f"Generated synthetic dataset: n={n} ({n_neg}:{n - n_neg}), p={tuple(config.n_features)}, "
                f"k={tuple(config.n_informative)}, effect={config.effect_size}")
    return dataset, SyntheticTruth(tuple(planted))  # type: ignore[arg-type]


def load_multiomics(methylation_path: PathLike, mrna_path: PathLike, mirna_path: PathLike,
                    labels_path: PathLike) -> MultiOmicsDataset:
    """Load, align and min-max scale the three modality files against a labels file."""
    matrices = [load_omics_csv(p) for p in (methylation_path, mrna_path, mirna_path)]
    aligned = align_samples(*matrices, load_labels_csv(labels_path))
    scaled = tuple(minmax_normalize(m)[0] for m in aligned.modalities)
    dataset = MultiOmicsDataset(scaled, aligned.labels, aligned.modality_names)  # type: ignore[arg-type]
    counts = np.bincount(dataset.labels, minlength=2)
    logger.info(f"Loaded {dataset.n_samples} aligned samples ({counts[0]}:{counts[1]}), "
                f"features {tuple(m.n_features for m in dataset.modalities)}")
    return dataset
