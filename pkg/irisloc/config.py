import configparser
import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Tuple

from irisloc import coarse, imgcore, providers, track
from irisloc.coarse import ConfigurationError
from irisloc.gaze import ScreenGeometry
from irisloc.refine import RansacConfig, RefineConfig

log = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (0.05, 0.10, 0.15, 0.20)


class ConfigError(ConfigurationError):
    pass


@dataclass(frozen=True)
class AnnulusSection:
    """Coarse-stage settings; r_min = r_max = 0 selects the face-ratio radius range."""
    r_min: float = 0.0
    r_max: float = 0.0
    ratio_min: float = coarse.FACE_RATIO_MIN
    ratio_max: float = coarse.FACE_RATIO_MAX
    beta: float = coarse.DEFAULT_BETA
    lam: float = coarse.DEFAULT_LAMBDA
    candidates: int = coarse.DEFAULT_CANDIDATES
    mode: str = imgcore.FFT
    min_psr: float = 0.0

    def __post_init__(self):
        if (self.r_min > 0) != (self.r_max > 0):
            raise ConfigError("annulus.r_min and annulus.r_max must be pinned together")
        if self.r_min > 0 and self.r_min >= self.r_max:
            raise ConfigError("need annulus.r_min < annulus.r_max")
        if not 0 < self.ratio_min < self.ratio_max:
            raise ConfigError("need 0 < annulus.ratio_min < annulus.ratio_max")
        if self.beta <= 0 or not 0.0 <= self.lam <= 1.0:
            raise ConfigError("need annulus.beta > 0 and annulus.lam in [0, 1]")
        if self.candidates < 1:
            raise ConfigError("annulus.candidates must be at least 1")
        if self.mode not in (imgcore.FFT, imgcore.SPATIAL):
            raise ConfigError("annulus.mode must be %r or %r" % (imgcore.FFT, imgcore.SPATIAL))

    @property
    def pinned(self) -> bool:
        return self.r_max > 0


@dataclass(frozen=True)
class TrackerSection:
    """Kalman and corner-template settings; r = 0 estimates R from the first frames."""
    q_pos: float = track.DEFAULT_Q[0]
    q_vel: float = track.DEFAULT_Q[2]
    r: float = 0.0
    calibration_frames: int = 10
    ncc_threshold: float = track.DEFAULT_NCC_THRESHOLD
    template_size: int = track.DEFAULT_TEMPLATE_SIZE
    search_radius: int = track.DEFAULT_SEARCH_RADIUS
    limit_search: bool = True

    def __post_init__(self):
        if self.q_pos < 0 or self.q_vel < 0 or self.r < 0:
            raise ConfigError("tracker noise variances must be non-negative")
        if self.calibration_frames < 2:
            raise ConfigError("tracker.calibration_frames must be at least 2")
        if not -1.0 <= self.ncc_threshold <= 1.0:
            raise ConfigError("tracker.ncc_threshold must lie in [-1, 1]")
        if self.template_size < 3 or self.template_size % 2 == 0 or self.search_radius < 1:
            raise ConfigError("tracker.template_size must be odd and >= 3, search_radius >= 1")

    @property
    def q(self) -> Tuple[float, float, float, float]:
        return self.q_pos, self.q_pos, self.q_vel, self.q_vel


@dataclass(frozen=True)
class ClosureSection:
    cell_size: int = 4
    c: float = 1.0
    epochs: int = 50
    folds: int = 10
    repeats: int = 10

    def __post_init__(self):
        if self.cell_size < 1 or self.c <= 0 or self.epochs < 1 or self.folds < 2 or self.repeats < 1:
            raise ConfigError("invalid closure settings %r" % (self,))


@dataclass(frozen=True)
class EyeLayout:
    """Eye ROIs as fractions of the face box."""
    left_x0: float = 0.12
    left_x1: float = 0.45
    right_x0: float = 0.55
    right_x1: float = 0.88
    y_top: float = 0.22
    y_bottom: float = 0.52

    def __post_init__(self):
        ordered = (0.0 <= self.left_x0 < self.left_x1 <= self.right_x0 < self.right_x1 <= 1.0
                   and 0.0 <= self.y_top < self.y_bottom <= 1.0)
        if not ordered:
            raise ConfigError("eye layout fractions must be ordered inside [0, 1]: %r" % (self,))


@dataclass(frozen=True)
class GazeSection:
    model: str = 'rbf'
    sigma_k: float = 0.0
    grid: int = 3
    width_px: float = 1366.0
    height_px: float = 768.0
    width_mm: float = 344.0
    height_mm: float = 193.0
    head_distance_mm: float = 600.0

    def __post_init__(self):
        if self.model not in ('poly', 'rbf'):
            raise ConfigError("gaze.model must be 'poly' or 'rbf', got %r" % self.model)
        if self.sigma_k < 0 or self.grid not in (3, 4):
            raise ConfigError("need gaze.sigma_k >= 0 and a 3x3 or 4x4 grid")

    @property
    def geometry(self) -> ScreenGeometry:
        return ScreenGeometry(self.width_px, self.height_px, self.width_mm, self.height_mm, self.head_distance_mm)


@dataclass(frozen=True)
class DatasetSection:
    """Gi4E label columns as `name=pair` entries, pairs counted from 1."""
    gi4e_columns: str = 'left=2,right=5,left_corner=3,right_corner=4'

    def __post_init__(self):
        try:
            providers.parse_column_map(self.gi4e_columns)
        except ValueError as e:
            raise ConfigError("dataset.gi4e_columns: %s" % e)

    @property
    def column_map(self) -> Dict[str, int]:
        return providers.parse_column_map(self.gi4e_columns)


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    workers: int = 1
    thresholds: Tuple[float, ...] = DEFAULT_THRESHOLDS

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("run.workers must be at least 1")
        if not self.thresholds or any(t <= 0 for t in self.thresholds):
            raise ConfigError("run.thresholds must be positive")


SECTIONS = {
    'annulus': AnnulusSection,
    'refine': RefineConfig,
    'ransac': RansacConfig,
    'tracker': TrackerSection,
    'closure': ClosureSection,
    'layout': EyeLayout,
    'gaze': GazeSection,
    'dataset': DatasetSection,
    'run': RunSection,
}


def _coerce(value, typ, name: str):
    if not isinstance(value, str):
        if typ is float and isinstance(value, int) and not isinstance(value, bool):
            return float(value)
        if typ in (tuple, Tuple[float, ...]) and isinstance(value, (list, tuple)):
            return tuple(float(v) for v in value)
        return value
    text = value.strip()
    try:
        if typ is bool:
            lowered = text.lower()
            if lowered in ('1', 'true', 'yes', 'on'):
                return True
            if lowered in ('0', 'false', 'no', 'off'):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        if typ is str:
            return text
        return tuple(float(part) for part in text.replace(';', ',').split(',') if part.strip())
    except ValueError:
        raise ConfigError("cannot read %s = %r" % (name, value))


def _build_section(name: str, values: Dict[str, object]):
    cls = SECTIONS[name]
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError("unknown keys in [%s]: %s" % (name, ', '.join(sorted(unknown))))
    kwargs = {key: _coerce(value, known[key].type, '%s.%s' % (name, key)) for key, value in values.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError("[%s]: %s" % (name, e))


@dataclass(frozen=True)
class RunConfig:
    annulus: AnnulusSection = field(default_factory=AnnulusSection)
    refine: RefineConfig = field(default_factory=RefineConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    tracker: TrackerSection = field(default_factory=TrackerSection)
    closure: ClosureSection = field(default_factory=ClosureSection)
    layout: EyeLayout = field(default_factory=EyeLayout)
    gaze: GazeSection = field(default_factory=GazeSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    run: RunSection = field(default_factory=RunSection)

    @classmethod
    def from_dict(cls, tree: Dict[str, Dict[str, object]]) -> 'RunConfig':
        unknown = set(tree) - set(SECTIONS)
        if unknown:
            raise ConfigError("unknown sections: %s" % ', '.join(sorted(unknown)))
        return cls(**{name: _build_section(name, dict(values)) for name, values in tree.items()})

    @classmethod
    def from_file(cls, path) -> 'RunConfig':
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as f:
                parser.read_file(f)
        except configparser.Error as e:
            raise ConfigError("%s: %s" % (path, e))
        return cls.from_dict({name: dict(parser.items(name)) for name in parser.sections()})

    @classmethod
    def from_json(cls, j: dict) -> 'RunConfig':
        return cls.from_dict(j)

    @classmethod
    def from_json_file(cls, json_file: str) -> 'RunConfig':
        with open(json_file) as f:
            try:
                return cls.from_json(json.loads(f.read()))
            except json.JSONDecodeError as e:
                raise ConfigError("%s: %s" % (json_file, e))

    @classmethod
    def load(cls, path) -> 'RunConfig':
        if str(path).endswith('.json'):
            return cls.from_json_file(path)
        return cls.from_file(path)

    def as_dict(self) -> Dict[str, Dict[str, object]]:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def with_overrides(self, overrides: Iterable[Tuple[str, str]]) -> 'RunConfig':
        """Apply dotted `section.key` overrides on top of this configuration."""
        tree = self.as_dict()
        for dotted, value in overrides:
            section, _, key = dotted.partition('.')
            if section not in SECTIONS or not key:
                raise ConfigError("override %r is not of the form section.key" % dotted)
            tree[section][key] = value
        return RunConfig.from_dict(tree)

    def stage_seed(self, stage: str) -> int:
        return derive_seed(self.run.seed, stage)


def derive_seed(seed: int, stage: str) -> int:
    """Stage seed: first 8 bytes of sha256("<seed>:<stage>")."""
    digest = hashlib.sha256(('%d:%s' % (seed, stage)).encode('utf8')).digest()
    return int.from_bytes(digest[:8], 'little')
