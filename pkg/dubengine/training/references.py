"""
Стратегии позиционирования референсного кадра при обучении (M0-M3)
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..errors import ConfigError, DataError, InfeasibleReferenceError

STRATEGY_KINDS = ("m0", "m1", "m2", "m3")


@dataclass(frozen=True)
class ReferenceStrategy:
    """Откуда брать референс относительно обучающего чанка

    m0 - равномерно внутри чанка; m1 - первый или последний кадр чанка;
    m2 - далекие кадры (дальше far_min_px); m3 - соседние кадры (до near_radius_px).
    """

    kind: str = "m3"
    near_radius_px: int = 25  # ≈1 с при 25 fps
    far_min_px: int = 125  # ≈5 с

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ConfigError(f"Неизвестная стратегия референса: {self.kind}")
        if not 0 < self.near_radius_px < self.far_min_px:
            raise ConfigError("Требуется 0 < near_radius_px < far_min_px")


def span_distance(frames: np.ndarray, span: Tuple[int, int]) -> np.ndarray:
    """Расстояние в пиксельных кадрах от кадров до промежутка [s, e)"""
    start, end = span
    return np.where(frames < start, start - frames, np.where(frames >= end, frames - (end - 1), 0))


def admissible_frames(strategy: ReferenceStrategy, clip_len_px: int, span: Tuple[int, int]) -> np.ndarray:
    """Множество допустимых индексов референса"""
    start, end = span
    if not 0 <= start < end <= clip_len_px:
        raise DataError(f"Промежуток {span} выходит за пределы клипа длины {clip_len_px}")

    if strategy.kind == "m0":
        return np.arange(start, end)
    if strategy.kind == "m1":
        return np.array(sorted({start, end - 1}))

    frames = np.arange(clip_len_px)
    distance = span_distance(frames, span)
    if strategy.kind == "m2":
        return frames[distance > strategy.far_min_px]
    return frames[(distance > 0) & (distance <= strategy.near_radius_px)]


def sample_reference(strategy: ReferenceStrategy, clip_len_px: int, chunk_span: Tuple[int, int],
                     rng: np.random.Generator) -> int:
    """Выбор пиксельного индекса референса по стратегии"""
    candidates = admissible_frames(strategy, clip_len_px, chunk_span)
    if len(candidates) == 0:
        raise InfeasibleReferenceError(
            f"Стратегия {strategy.kind}: нет допустимых кадров для промежутка {tuple(chunk_span)} "
            f"в клипе из {clip_len_px} кадров; используйте более длинные клипы"
        )
    return int(candidates[rng.integers(len(candidates))])
