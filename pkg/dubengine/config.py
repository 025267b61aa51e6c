"""
Конфигурация запуска DubEngine
Один JSON документ с секциями, проверяемый pydantic до начала работы
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .core.frames import FrameArithmetic
from .errors import ConfigError, DubEngineError
from .training.references import ReferenceStrategy

logger = logging.getLogger(__name__)

StrategyKind = Literal["m0", "m1", "m2", "m3"]
SampleMode = Literal["streaming", "i2v", "fl2v"]


class StrictModel(BaseModel):
    """Секция конфигурации: неизвестные ключи запрещены"""

    model_config = ConfigDict(extra="forbid")


class FramesConfig(StrictModel):
    temporal_stride: int = Field(4, ge=1)
    chunk_pixel_len: int = Field(81, ge=2)
    context_pixel_len: int = Field(9, ge=1)

    def arithmetic(self) -> FrameArithmetic:
        try:
            return FrameArithmetic(self.temporal_stride, self.chunk_pixel_len, self.context_pixel_len)
        except DubEngineError as e:
            raise ConfigError(str(e)) from e


class WorldConfig(StrictModel):
    n_clips: int = Field(16, ge=0)
    clip_len: int = Field(405, ge=1)
    d_audio: int = Field(8, ge=1)
    eval_tracks: int = Field(8, ge=0)
    dataset_path: Optional[str] = None


class ModelConfig(StrictModel):
    depth: int = Field(4, ge=0)
    width: int = Field(128, ge=2)
    heads: int = Field(4, ge=1)
    d_ref: int = Field(64, ge=1)
    audio_window: int = Field(2, ge=0)
    m_ch: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _heads_divide_width(self):
        if self.width % self.heads != 0:
            raise ValueError(f"width={self.width} должен делиться на heads={self.heads}")
        return self

    def hparams(self, d_audio: int, c_lat: int = 12) -> Dict[str, Any]:
        """Гиперпараметры VelocityModel"""
        return {
            "c_lat": c_lat,
            "m_ch": self.m_ch,
            "d_audio_tokens": d_audio * (2 * self.audio_window + 1),
            "d_ref": self.d_ref,
            "depth": self.depth,
            "width": self.width,
            "heads": self.heads,
            "audio_window": self.audio_window,
        }


class TrainConfig(StrictModel):
    steps: int = Field(2000, ge=0)
    batch_size: int = Field(16, ge=1)
    learning_rate: float = Field(3e-4, gt=0)
    seed: Optional[int] = None
    strategy: StrategyKind = "m3"
    near_radius_px: int = Field(25, ge=1)
    far_min_px: int = Field(125, ge=1)
    context_dropout_prob: float = Field(0.1, ge=0.0, le=1.0)
    grad_clip: float = Field(1.0, gt=0)
    log_every: int = Field(50, ge=1)
    checkpoint_every: int = Field(0, ge=0)
    threads: Optional[int] = Field(1, ge=1)
    divergence_threshold: float = Field(1e3, gt=0)

    @model_validator(mode="after")
    def _radii_ordered(self):
        if self.near_radius_px >= self.far_min_px:
            raise ValueError("near_radius_px должен быть меньше far_min_px")
        return self

    def reference_strategy(self) -> ReferenceStrategy:
        return ReferenceStrategy(self.strategy, self.near_radius_px, self.far_min_px)


class SamplerConfig(StrictModel):
    ode_steps: int = Field(20, ge=1)
    mode: SampleMode = "streaming"
    # 0 - копирование источника; (0, 1] - старт SDEdit с t0
    sdedit_t0: Optional[float] = Field(None, ge=0.0, le=1.0)
    seed: int = 0


class AblationConfig(StrictModel):
    strategies: List[StrategyKind] = ["m0", "m1", "m2", "m3"]
    modes: List[SampleMode] = ["streaming", "i2v", "fl2v"]
    seeds: int = Field(10, ge=1)
    n_chunks: int = Field(10, ge=2)
    sdedit_t0s: List[float] = [0.2, 0.4, 0.6, 0.8, 1.0]
    concurrent: bool = False


class RunConfig(StrictModel):
    """Полная конфигурация запуска"""

    seed: int = 0
    out_dir: str = "runs/default"
    frames: FramesConfig = FramesConfig()
    world: WorldConfig = WorldConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    sample: SamplerConfig = SamplerConfig()
    ablation: AblationConfig = AblationConfig()

    def resolved_train(self) -> TrainConfig:
        """Секция обучения с зерном запуска, если свое не задано"""
        if self.train.seed is not None:
            return self.train
        return self.train.model_copy(update={"seed": self.seed})


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Переопределения вида section.key=value; последнее побеждает"""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"Переопределение должно иметь вид key=value: {item}")
        dotted, raw = item.split("=", 1)
        keys = dotted.strip().split(".")
        node = data
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"Ключ {dotted} указывает внутрь скалярного значения")
        value = _parse_value(raw)
        logger.info("Переопределение конфигурации: %s = %r", dotted, value)
        node[keys[-1]] = value
    return data


def load_config(path: Optional[Union[str, Path]] = None, overrides: Sequence[str] = ()) -> RunConfig:
    """Загрузка и проверка конфигурации"""
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"Не удалось прочитать конфигурацию {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"Конфигурация {path} не является корректным JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("Конфигурация должна быть JSON объектом")
    data = apply_overrides(data, overrides)
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Ошибка схемы конфигурации:\n{e}") from e
    config.frames.arithmetic()
    return config


def dump_config(config: RunConfig) -> str:
    """Канонический JSON конфигурации"""
    return json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True)
