"""Pipeline configuration: defaults, range checks and a content fingerprint."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class PipelineConfig:
    # Gaussian blur and Canny (thresholds on the 8-bit scale, x257 for 16-bit input)
    blur_sigma: float = 1.4
    canny_low: float = 50.0
    canny_high: float = 150.0
    # Hough transform
    rho_step: float = 1.0
    theta_step_deg: float = 1.0
    vote_threshold: int = 60
    # proposal grouping and grid fitting
    group_theta_tol_deg: float = 2.0
    group_rho_tol: float = 10.0
    split_angle_deg: float = 20.0
    # rectification and contrast stretch
    rect_width: int = 120
    rect_height: int = 200
    stretch_lo_pct: float = 1.0
    stretch_hi_pct: float = 99.0
    # hotspot cells
    cell_rows: int = 10
    cell_cols: int = 6
    hotspot_delta_c: float = 4.0
    min_valid_fraction: float = 0.5
    # evaluation
    eps_tp: float = 5.0
    eps_err: float = 15.0
    eval_theta_tol_deg: float = 5.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.type == "int":
                if isinstance(v, bool) or not isinstance(v, int):
                    if isinstance(v, float) and v.is_integer():
                        object.__setattr__(self, f.name, int(v))
                    else:
                        raise ConfigError(f"{f.name} must be an integer, got {v!r}")
            else:
                if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                    raise ConfigError(f"{f.name} must be a finite number, got {v!r}")
                object.__setattr__(self, f.name, float(v))
        self._check()

    def _check(self):
        positive = ("blur_sigma", "canny_low", "rho_step", "theta_step_deg",
                    "group_theta_tol_deg", "group_rho_tol", "hotspot_delta_c",
                    "eps_tp", "eval_theta_tol_deg")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.canny_low > self.canny_high:
            raise ConfigError("canny_low must not exceed canny_high")
        if self.vote_threshold < 1:
            raise ConfigError("vote_threshold must be >= 1")
        if not 0 < self.split_angle_deg < 45:
            raise ConfigError("split_angle_deg must lie in (0, 45)")
        if self.theta_step_deg > 90:
            raise ConfigError("theta_step_deg must be <= 90")
        if self.rect_width < 2 or self.rect_height < 2:
            raise ConfigError("rect_width and rect_height must be >= 2")
        if not 0 <= self.stretch_lo_pct < self.stretch_hi_pct <= 100:
            raise ConfigError("need 0 <= stretch_lo_pct < stretch_hi_pct <= 100")
        if self.cell_rows < 1 or self.cell_cols < 1:
            raise ConfigError("cell_rows and cell_cols must be >= 1")
        if self.cell_rows > self.rect_height or self.cell_cols > self.rect_width:
            raise ConfigError("cell grid is finer than the rectified panel")
        if not 0 <= self.min_valid_fraction <= 1:
            raise ConfigError("min_valid_fraction must lie in [0, 1]")
        if not self.eps_tp < self.eps_err:
            raise ConfigError("eps_tp must be smaller than eps_err")

    # radians views used by the algorithms
    @property
    def theta_step(self) -> float:
        return math.radians(self.theta_step_deg)

    @property
    def group_theta_tol(self) -> float:
        return math.radians(self.group_theta_tol_deg)

    @property
    def split_angle(self) -> float:
        return math.radians(self.split_angle_deg)

    @property
    def eval_theta_tol(self) -> float:
        return math.radians(self.eval_theta_tol_deg)

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def updated(self, **overrides) -> "PipelineConfig":
        unknown = set(overrides) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return replace(self, **overrides)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        return cls().updated(**doc)


def field_names() -> list[str]:
    return [f.name for f in fields(PipelineConfig)]


def field_type(name: str) -> type:
    return int if {f.name: f.type for f in fields(PipelineConfig)}[name] == "int" else float


def load_config_dict(path) -> dict:
    """Raw key/value pairs of a JSON config file, not yet validated."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc


def load_config(path) -> PipelineConfig:
    return PipelineConfig.from_dict(load_config_dict(path))
