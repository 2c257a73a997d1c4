"""Pipeline configuration: one human-readable JSON file with per-stage blocks.

Unknown keys are rejected so typos fail fast; paths are resolved relative to
the config file's directory and validated when a stage needs them.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .classify import ClassifierConfig
from .fitting import FittingParams
from .labels import GraphCutParams
from .registration import RegistrationParams


@dataclass(frozen=True)
class ClassifierSection(ClassifierConfig):
    """Classifier thresholds plus the provider selection (classifier.provider)."""

    provider: str = "baseline"         # "baseline" | "external"

    def __post_init__(self):
        if self.provider not in ("baseline", "external"):
            raise ValueError(f"unknown classifier provider {self.provider!r}")

    def thresholds(self) -> ClassifierConfig:
        return ClassifierConfig(
            full_span_deg=self.full_span_deg,
            center_band_deg=self.center_band_deg,
            span_bins=self.span_bins,
            span_mass_threshold=self.span_mass_threshold,
            span_radial_power=self.span_radial_power,
            occlusal_dot_min=self.occlusal_dot_min,
            min_points=self.min_points,
        )


@dataclass(frozen=True)
class SegmentationConfig:
    provider: str = "corruptor"        # "corruptor" | "file"
    flip_fraction: float = 0.05
    softness: float = 0.3
    probabilities_path: str | None = None

    def __post_init__(self):
        if self.provider not in ("corruptor", "file"):
            raise ValueError(f"unknown segmentation provider {self.provider!r}")


@dataclass(frozen=True)
class RetrievalConfig:
    jaw_store: str | None = None       # donor-jaw embedding store
    crown_dir: str | None = None       # crown library directory


@dataclass(frozen=True)
class AlignmentConfig:
    tau: float = 0.6

    def __post_init__(self):
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")


@dataclass(frozen=True)
class RefineConfig:
    smoothness: float = 30.0
    dihedral_sharpness: float = 5.0
    min_component_faces: int = 10

    def graphcut_params(self) -> GraphCutParams:
        return GraphCutParams(self.smoothness, self.dihedral_sharpness)


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    output_dir: str = "out"
    template_dir: str | None = None
    classifier: ClassifierSection = field(default_factory=ClassifierSection)
    registration: RegistrationParams = field(default_factory=RegistrationParams)
    refine: RefineConfig = field(default_factory=RefineConfig)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    fitting: FittingParams = field(default_factory=FittingParams)


_SECTIONS = {
    "classifier": ClassifierSection,
    "registration": RegistrationParams,
    "refine": RefineConfig,
    "segmentation": SegmentationConfig,
    "retrieval": RetrievalConfig,
    "alignment": AlignmentConfig,
    "fitting": FittingParams,
}
_SCALARS = ("seed", "output_dir", "template_dir")


def config_from_dict(payload: dict, base_dir: Path | None = None) -> PipelineConfig:
    payload = dict(payload)
    kwargs = {}
    for key in list(payload):
        if key in _SCALARS:
            kwargs[key] = payload.pop(key)
        elif key in _SECTIONS:
            section_cls = _SECTIONS[key]
            section = payload.pop(key)
            allowed = {f.name for f in fields(section_cls)}
            unknown = set(section) - allowed
            if unknown:
                raise ValueError(f"unknown keys in config section {key!r}: {sorted(unknown)}")
            kwargs[key] = section_cls(**section)
        else:
            raise ValueError(f"unknown config key {key!r}")
    cfg = PipelineConfig(**kwargs)
    if base_dir is not None:
        cfg = _resolve_paths(cfg, base_dir)
    return cfg


def _resolve_paths(cfg: PipelineConfig, base: Path) -> PipelineConfig:
    def resolve(p):
        if p is None:
            return None
        path = Path(p)
        return str(path if path.is_absolute() else base / path)

    from dataclasses import replace

    return replace(
        cfg,
        output_dir=resolve(cfg.output_dir),
        template_dir=resolve(cfg.template_dir),
        segmentation=replace(
            cfg.segmentation,
            probabilities_path=resolve(cfg.segmentation.probabilities_path),
        ),
        retrieval=replace(
            cfg.retrieval,
            jaw_store=resolve(cfg.retrieval.jaw_store),
            crown_dir=resolve(cfg.retrieval.crown_dir),
        ),
    )


def load_config(path) -> PipelineConfig:
    path = Path(path)
    return config_from_dict(json.loads(path.read_text()), base_dir=path.parent)


def save_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True))
