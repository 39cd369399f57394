"""Configuration management for treegraph runs."""

import logging
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple

from dotenv import dotenv_values
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, ValidationError, field_validator, model_validator

from .error_handling import ConfigurationError

logger = logging.getLogger(__name__)

MODALITIES: Tuple[str, str, str] = ("methylation", "mrna", "mirna")


def _split_triple(v: Any) -> Any:
    """Accept ``"2000,2000,400"`` for three-valued settings."""
    if isinstance(v, str):
        return tuple(part.strip() for part in v.split(","))
    return v


IntTriple = Annotated[Tuple[int, int, int], BeforeValidator(_split_triple)]


class GBTConfig(BaseModel):
    """Gradient-boosted tree settings (booster defaults, tuned tree count)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    num_trees: int = Field(default=100, ge=1, description="Number of boosting rounds (grid: 100, 1000)")
    max_depth: int = Field(default=6, ge=1, description="Maximum tree depth")
    reg_lambda: float = Field(default=1.0, ge=0.0, description="L2 regularization on leaf weights")
    gamma: float = Field(default=0.0, ge=0.0, description="Minimum split gain")
    learning_rate: float = Field(default=0.3, gt=0.0, le=1.0, description="Shrinkage per round")
    min_child_hessian: float = Field(default=1.0, ge=0.0, description="Minimum hessian sum per child")


class TrainConfig(BaseModel):
    """Neural training settings; defaults are the selected grid values."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    learning_rate: float = Field(default=0.0001, gt=0.0, description="Adam step size")
    batch_size: int = Field(default=16, ge=2, description="Mini-batch size")
    max_epochs: int = Field(default=500, ge=1, description="Upper bound on training epochs")
    dropout: float = Field(default=0.5, ge=0.0, lt=1.0, description="Dropout rate")
    l2_lambda: float = Field(default=0.01, ge=0.0, description="L2 penalty on weight matrices")
    patience: int = Field(default=10, ge=1, description="Early stopping patience in epochs")
    min_delta: float = Field(default=0.001, ge=0.0, description="Minimum validation loss improvement")
    hidden_width: int = Field(default=64, ge=1, description="Branch embedding and fusion layer width")
    fusion_depth: int = Field(default=2, ge=1, description="Number of hidden fusion layers")
    activation: Literal["relu", "leaky_relu"] = Field(default="relu", description="Hidden activation")
    seed: int = Field(default=0, ge=0, description="Seed for initialization, shuffling and dropout")


class SynthConfig(BaseModel):
    """Planted-signal synthetic dataset settings."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    n_samples: int = Field(default=300, ge=10, description="Number of samples")
    n_features: IntTriple = Field(default=(2000, 2000, 400), description="Features per modality")
    n_informative: IntTriple = Field(default=(30, 30, 10), description="Planted features per modality")
    effect_size: float = Field(default=1.5, ge=0.0, description="Class-conditional mean shift")
    imbalance: float = Field(default=3.0, gt=0.0, description="Class 0 to class 1 ratio")
    seed: int = Field(default=0, ge=0, description="Generator seed used by experiment runs")

    @field_validator("n_features")
    @classmethod
    def validate_features(cls, v: Tuple[int, int, int]) -> Tuple[int, int, int]:
        if any(p < 1 for p in v):
            raise ValueError("every modality needs at least one feature")
        return v

    @model_validator(mode="after")
    def validate_informative(self) -> "SynthConfig":
        for i, (k, p) in enumerate(zip(self.n_informative, self.n_features)):
            if k < 0 or k > p:
                raise ValueError(f"n_informative[{i}]={k} must lie in [0, {p}]")
        return self


class RunConfig(BaseModel):
    """Everything a CLI run needs."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    methylation_path: Optional[Path] = Field(default=None, description="Methylation CSV")
    mrna_path: Optional[Path] = Field(default=None, description="mRNA expression CSV")
    mirna_path: Optional[Path] = Field(default=None, description="miRNA expression CSV")
    labels_path: Optional[Path] = Field(default=None, description="Labels CSV (sample_id,label)")
    synth: Optional[SynthConfig] = Field(default=None, description="Synthetic data block")
    gbt: GBTConfig = Field(default_factory=GBTConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    n_repeats: int = Field(default=20, ge=2, description="Independent stratified splits")
    top_k: int = Field(default=30, ge=1, description="Biomarkers reported per modality")
    biomarker_mode: Literal["consensus", "best_run"] = Field(default="consensus", description="Ranking aggregation")
    output_dir: Path = Field(default=Path("results"), description="Artifact directory")
    log_level: str = Field(default="INFO", description="Logging level")

    @field_validator('log_level')
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Validate log level."""
        valid_levels = ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']
        if v.upper() not in valid_levels:
            raise ValueError(f"Log level must be one of: {valid_levels}")
        return v.upper()

    @model_validator(mode="after")
    def validate_source(self) -> "RunConfig":
        paths = self.data_paths()
        given = [p for p in paths.values() if p is not None]
        if self.synth is not None and given:
            raise ValueError("give either data file paths or a synth block, not both")
        if self.synth is None and len(given) != len(paths):
            missing = [name for name, p in paths.items() if p is None]
            raise ValueError(f"missing data paths: {', '.join(missing)}")
        return self

    def data_paths(self) -> Dict[str, Optional[Path]]:
        return {
            "methylation_path": self.methylation_path,
            "mrna_path": self.mrna_path,
            "mirna_path": self.mirna_path,
            "labels_path": self.labels_path,
        }


_SECTIONS = {"synth": SynthConfig, "gbt": GBTConfig, "train": TrainConfig}


class ConfigManager:
    """Loads flat ``key = value`` run configs into a validated RunConfig."""

    def __init__(self, config_file: Optional[Path] = None):
        self.config_file = Path(config_file) if config_file is not None else None
        self._config: Optional[RunConfig] = None

    def _resolve_path(self, key: str, value: str) -> str:
        """Relative data paths are taken relative to the config file."""
        if key.endswith("_path") and self.config_file is not None and not Path(value).is_absolute():
            return str(self.config_file.parent / value)
        return value

    def parse(self, raw: Dict[str, Optional[str]]) -> RunConfig:
        """Validate a flat mapping, reporting every problem at once."""
        errors: List[str] = []
        data: Dict[str, Any] = {}
        top_level = set(RunConfig.model_fields) - set(_SECTIONS)

        for key, value in raw.items():
            if value is None:
                errors.append(f"{key}: missing value")
                continue
            section, _, field = key.partition(".")
            if field:
                model = _SECTIONS.get(section)
                if model is None or field not in model.model_fields:
                    errors.append(f"{key}: unknown key")
                    continue
                data.setdefault(section, {})[field] = value
            elif key in top_level:
                data[key] = self._resolve_path(key, value)
            else:
                errors.append(f"{key}: unknown key")

        config: Optional[RunConfig] = None
        try:
            config = RunConfig(**data)
        except ValidationError as e:
            for err in e.errors():
                loc = ".".join(str(part) for part in err["loc"]) or "config"
                errors.append(f"{loc}: {err['msg']}")

        for name in RunConfig.model_fields:
            if name.endswith("_path") and name in data and not Path(data[name]).exists():
                errors.append(f"{name}: file not found: {data[name]}")

        if errors:
            raise ConfigurationError(
                f"Invalid configuration ({len(errors)} problem{'s' if len(errors) > 1 else ''}): "
                + "; ".join(errors),
                error_code="INVALID_CONFIG",
                details={"errors": errors, "file": str(self.config_file) if self.config_file else None},
            )
        assert config is not None
        return config

    def load_config(self) -> RunConfig:
        """Load configuration from file."""
        if self.config_file is None:
            self._config = self.parse({})
            return self._config
        if not self.config_file.exists():
            raise ConfigurationError(
                f"Configuration file not found: {self.config_file}",
                error_code="CONFIG_NOT_FOUND",
                details={"errors": [f"file not found: {self.config_file}"]},
            )
        raw = dotenv_values(self.config_file)
        logger.info(f"Loaded configuration from {self.config_file}")
        self._config = self.parse(dict(raw))
        return self._config

    def get_config(self) -> RunConfig:
        if self._config is None:
            self._config = self.load_config()
        return self._config

    def update_config(self, **kwargs: Any) -> RunConfig:
        """Return the loaded config with top-level overrides applied and revalidated."""
        config_data = self.get_config().model_dump()
        config_data.update({k: v for k, v in kwargs.items() if v is not None})
        try:
            self._config = RunConfig(**config_data)
        except ValidationError as e:
            errors = [f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()]
            raise ConfigurationError(
                "Invalid configuration override: " + "; ".join(errors),
                error_code="INVALID_CONFIG",
                details={"errors": errors},
            ) from e
        return self._config


def resolved_config(config: RunConfig) -> Dict[str, Any]:
    """JSON-ready dump of the fully resolved config, for report provenance."""
    return config.model_dump(mode="json")
