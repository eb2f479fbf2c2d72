"""Run configuration: every tunable of the pipeline, with strict loading.

Defaults match the reference operating point (16 ms / 8 ms STFT, Q = 8
filter taps, 72-direction grid, the published update factors and tracker
constants).  Loading rejects unknown keys; individual values can be
overridden through dotted paths (``localizer.eta=0.1``), which is also
how command-line flags are mapped.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .errors import InputError


@dataclass
class StftSection:
    window_ms: float = 16.0
    hop_ms: float = 8.0
    sample_rate: int = 16000
    window: str = "hamming"


@dataclass
class FeatureSection:
    ctf_frames: int = 8                 # Q, sub-band filter length in frames
    rho: float = 1.0                    # estimation-window factor for lambda
    forgetting: float | None = None     # explicit lambda override
    psd_beta: float = 0.9
    classify_kappa: float = 3.0
    classify_window_s: float = 1.5
    consistency_threshold: float = 0.75
    noise_handling: bool = True


@dataclass
class GridSection:
    directions: int = 72
    predicted_magnitude: float = 0.5


@dataclass
class LocalizerSection:
    sigma2: float = 0.1
    eta: float = 0.07
    entropy_gamma: float = 0.1
    silent_eta: float = 0.065
    smooth_weight: float = 0.02
    peak_threshold: float = 0.05
    peak_min_separation_deg: float = 15.0
    band_low_hz: float | None = None    # None: all bins except DC
    band_high_hz: float | None = None


@dataclass
class TrackerSection:
    obs_var: float = 0.03
    max_speakers: int = 5
    step_frames: int = 4                # one tracker step per 4 STFT frames
    vem_iterations: int = 5
    outlier_density: float = 1.5
    birth_window: int = 3
    birth_threshold: float = 0.75
    birth_min_weight: float | None = None
    birth_guard_deg: float = 20.0
    birth_prior_var: float = 1e4
    birth_dynamics_var: float = 1e-3
    activity_window: int = 3
    activity_threshold: float = 0.15


@dataclass
class Config:
    stft: StftSection = field(default_factory=StftSection)
    features: FeatureSection = field(default_factory=FeatureSection)
    grid: GridSection = field(default_factory=GridSection)
    localizer: LocalizerSection = field(default_factory=LocalizerSection)
    tracker: TrackerSection = field(default_factory=TrackerSection)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        config = cls()
        _merge_section(config, data, path="")
        return config

    @classmethod
    def from_json(cls, path) -> "Config":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def apply_override(self, dotted: str, raw_value) -> None:
        """Set one value by dotted path, e.g. ``localizer.eta=0.1``."""
        parts = dotted.split(".")
        target = self
        for part in parts[:-1]:
            if not hasattr(target, part):
                raise InputError(f"unknown config section: {dotted!r}")
            target = getattr(target, part)
        name = parts[-1]
        declared = {f.name: f for f in fields(target)}
        if name not in declared:
            raise InputError(f"unknown config key: {dotted!r}")
        setattr(target, name, _coerce(raw_value, getattr(target, name), dotted))


def _merge_section(target, data: dict, path: str) -> None:
    if not isinstance(data, dict):
        raise InputError(f"config section {path or '<root>'} must be an object")
    declared = {f.name for f in fields(target)}
    unknown = set(data) - declared
    if unknown:
        where = f" in section {path}" if path else ""
        raise InputError(f"unknown config keys{where}: {sorted(unknown)}")
    for key, value in data.items():
        current = getattr(target, key)
        child_path = f"{path}.{key}" if path else key
        if hasattr(current, "__dataclass_fields__"):
            _merge_section(current, value, child_path)
        else:
            setattr(target, key, _coerce(value, current, child_path))


def _coerce(value, current, path: str):
    """Coerce a raw (possibly string) value to the type of the default."""
    if value is None or str(value).lower() in ("none", "null"):
        return None
    if isinstance(current, bool) or (current is None and str(value).lower()
                                     in ("true", "false")):
        if isinstance(value, bool):
            return value
        if str(value).lower() in ("true", "1", "yes"):
            return True
        if str(value).lower() in ("false", "0", "no"):
            return False
        raise InputError(f"{path}: expected a boolean, got {value!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        try:
            as_float = float(value)
        except (TypeError, ValueError) as exc:
            raise InputError(f"{path}: expected an integer, got {value!r}") from exc
        if as_float != int(as_float):
            raise InputError(f"{path}: expected an integer, got {value!r}")
        return int(as_float)
    if isinstance(current, float) or current is None:
        try:
            return float(value)
        except (TypeError, ValueError) as exc:
            raise InputError(f"{path}: expected a number, got {value!r}") from exc
    if isinstance(current, str):
        return str(value)
    raise InputError(f"{path}: unsupported value {value!r}")


def dotted_paths() -> list[str]:
    """All overridable config paths (used to generate CLI flags)."""
    paths = []
    for section_field in fields(Config):
        section = section_field.default_factory()  # type: ignore[misc]
        for leaf in fields(section):
            paths.append(f"{section_field.name}.{leaf.name}")
    return paths
