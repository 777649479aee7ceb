import os
import sys
from enum import Enum
from pathlib import Path
from typing import Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from midlines import constants as C
from midlines.exception.exception import ConfigValidationError, ContainerError, MidlinesException
from midlines.logging.logger import logging


class APMode(str, Enum):
    ALL_POINT = "all-point"
    ELEVEN_POINT = "11-point"


class LossWeights(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha_focal: float = C.ALPHA_FOCAL
    alpha: float = C.ALPHA
    beta: float = C.BETA
    gamma: float = C.GAMMA
    text_mode: bool = False

    @field_validator("alpha_focal", "alpha", "beta", "gamma")
    @classmethod
    def _non_negative(cls, value: float) -> float:
        if value < 0:
            raise ValueError("loss weights must be >= 0")
        return value

    @classmethod
    def endpoint_only(cls, **kwargs) -> "LossWeights":
        """Line Loss reduced to the endpoint term (collinear and vertical terms off)."""
        return cls(alpha=0.0, beta=0.0, **kwargs)


class TileSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    window: int = C.TILE_WINDOW
    overlap_fraction: float = C.TILE_OVERLAP

    @field_validator("window")
    @classmethod
    def _window(cls, value: int) -> int:
        if value < 1:
            raise ValueError("window must be >= 1")
        return value

    @field_validator("overlap_fraction")
    @classmethod
    def _overlap(cls, value: float) -> float:
        if not 0.0 <= value < 1.0:
            raise ValueError("overlap_fraction must be in [0, 1)")
        return value

    @property
    def step(self) -> int:
        return max(int(self.window * (1.0 - self.overlap_fraction)), 1)


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    stride: int = C.STRIDE
    drift_r: float = C.DRIFT_R
    threshold: float = C.THRESHOLD
    branch_low: float = C.BRANCH_LOW
    branch_high: float = C.BRANCH_HIGH
    weights: LossWeights = Field(default_factory=LossWeights)
    ap_mode: APMode = APMode.ALL_POINT
    seed: int = 0
    merge_iou: float = C.MERGE_IOU
    eval_iou: float = C.EVAL_IOU
    single_branch: bool = False
    roundtrip_bar: float = C.ROUNDTRIP_BAR
    min_side: float = C.MIN_RESOLVED_SIDE
    jobs: int = 1

    @field_validator("stride", "jobs")
    @classmethod
    def _positive_int(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @field_validator("drift_r")
    @classmethod
    def _positive(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("drift_r must be > 0")
        return value

    @field_validator("threshold", "merge_iou")
    @classmethod
    def _open_unit(cls, value: float) -> float:
        if not 0.0 < value < 1.0:
            raise ValueError("must be in (0, 1)")
        return value

    @field_validator("eval_iou", "roundtrip_bar")
    @classmethod
    def _half_open_unit(cls, value: float) -> float:
        if not 0.0 < value <= 1.0:
            raise ValueError("must be in (0, 1]")
        return value

    @model_validator(mode="after")
    def _branch_window(self) -> "RunConfig":
        if not self.branch_low < self.branch_high:
            raise ValueError("branch_low must be < branch_high")
        return self

    @property
    def branch_range(self) -> tuple:
        return (self.branch_low, self.branch_high)


def load_run_config(path: Optional[Path] = None, **overrides) -> RunConfig:
    """Build a RunConfig from an optional YAML file, explicit overrides and O2_SEED.

    Overrides whose value is None are ignored so CLI flags can be passed through as-is.
    """
    try:
        data = {}
        if path is not None:
            with open(path, "r", encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
            if not isinstance(data, dict):
                raise ConfigValidationError(f"config file {path} must hold a mapping")
        weights = dict(data.pop("weights", {}) or {})
        for key in ("alpha_focal", "alpha", "beta", "gamma", "text_mode"):
            if overrides.get(key) is not None:
                weights[key] = overrides.pop(key)
            else:
                overrides.pop(key, None)
        data.update({k: v for k, v in overrides.items() if v is not None})
        env_seed = os.environ.get(C.SEED_ENV)
        if env_seed is not None:
            data["seed"] = int(env_seed)
        config = RunConfig(weights=LossWeights(**weights), **data)
        logging.info("config stride=%s drift_r=%s threshold=%s seed=%s",
                     config.stride, config.drift_r, config.threshold, config.seed)
        return config
    except (ValidationError, ValueError) as e:
        raise ConfigValidationError(e, sys) from e
    except OSError as e:
        raise ContainerError(e, sys) from e
    except MidlinesException:
        raise
    except Exception as e:
        raise MidlinesException(e, sys) from e
