"""
Синтетический "говорящий актер" для DubEngine
Латентное видео из факторов: рот, голова, жесты, идентичность, камера, стиль
"""

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from scipy.signal import lfilter

from ..core.frames import DEFAULT_ARITHMETIC, FrameArithmetic
from ..errors import DataError, LengthMismatchError
from .audio import AudioTrack

# Раскладка факторов в векторе латентного кадра
FACTOR_LAYOUT: Dict[str, slice] = {
    "mouth": slice(0, 1),
    "head": slice(1, 3),
    "gesture": slice(3, 5),
    "identity": slice(5, 9),
    "camera": slice(9, 11),
    "style": slice(11, 12),
}
C_LAT = 12
CAMERA_KINDS = ("static", "pan", "piecewise-smooth")
HEAD_SMOOTHING = 0.8


@dataclass
class LatentVideo:
    """Латентное видео: один вектор факторов на латентный кадр"""

    frames: np.ndarray  # [T_lat, C_lat]
    fps_pixel: float = 25.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise DataError(f"Латентное видео должно иметь форму [T >= 1, C], получено {self.frames.shape}")
        if self.frames.shape[1] != C_LAT:
            raise DataError(f"Ожидалось {C_LAT} каналов, получено {self.frames.shape[1]}")
        if not np.all(np.isfinite(self.frames)):
            raise DataError("Латентное видео содержит нечисловые значения")

    def __len__(self) -> int:
        return self.frames.shape[0]

    def factor(self, name: str) -> np.ndarray:
        return self.frames[:, FACTOR_LAYOUT[name]]

    @property
    def mouth(self) -> np.ndarray:
        return self.frames[:, FACTOR_LAYOUT["mouth"]][:, 0]

    @property
    def identity(self) -> np.ndarray:
        return self.factor("identity")

    @property
    def camera(self) -> np.ndarray:
        return self.factor("camera")

    def pixel_len(self, arith: FrameArithmetic = DEFAULT_ARITHMETIC) -> int:
        return arith.latent_to_pixel(len(self))


@dataclass
class ActorSpec:
    """Параметры актера: код идентичности и динамика головы и жестов"""

    identity_code: np.ndarray
    head_lag: int = 3
    gesture_threshold: float = 0.7
    gesture_decay: float = 0.85

    def __post_init__(self):
        self.identity_code = np.asarray(self.identity_code, dtype=np.float64)
        if self.identity_code.shape != (4,):
            raise DataError("Код идентичности должен содержать 4 числа")
        if abs(np.linalg.norm(self.identity_code) - 1.0) > 1e-6:
            raise DataError("Код идентичности должен лежать на единичной сфере")
        if not 0.0 < self.gesture_threshold < 1.0 or not 0.0 < self.gesture_decay < 1.0:
            raise DataError("gesture_threshold и gesture_decay должны лежать в (0, 1)")
        if self.head_lag < 0:
            raise DataError("head_lag не может быть отрицательным")

    @classmethod
    def random(cls, rng: np.random.Generator, **kwargs) -> "ActorSpec":
        code = rng.normal(size=4)
        return cls(identity_code=code / np.linalg.norm(code), **kwargs)


@dataclass
class CameraTrajectory:
    """Смещения камеры по пиксельным кадрам"""

    offsets: np.ndarray  # [N_pixel, 2]
    kind: str = "static"

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        if self.kind not in CAMERA_KINDS:
            raise DataError(f"Неизвестный тип траектории камеры: {self.kind}")
        if self.offsets.ndim != 2 or self.offsets.shape[1] != 2 or not np.all(np.isfinite(self.offsets)):
            raise DataError("Смещения камеры должны иметь форму [N, 2] и быть конечными")
        if self.kind == "static" and not np.all(self.offsets == self.offsets[0]):
            raise DataError("Статичная камера должна иметь одинаковые смещения")

    def __len__(self) -> int:
        return self.offsets.shape[0]


def gen_camera(n_pixel: int, kind: str, rng: np.random.Generator) -> CameraTrajectory:
    """Генерация траектории камеры заданного типа"""
    start = rng.uniform(-0.5, 0.5, size=2)
    if kind == "static":
        offsets = np.tile(start, (n_pixel, 1))
    elif kind == "pan":
        end = start + rng.uniform(-1.0, 1.0, size=2)
        ramp = np.linspace(0.0, 1.0, n_pixel)[:, None]
        offsets = start + ramp * (end - start)
    elif kind == "piecewise-smooth":
        n_knots = max(2, n_pixel // 80 + 1)
        knots = np.concatenate([start[None, :], start + np.cumsum(rng.uniform(-0.4, 0.4, size=(n_knots - 1, 2)), axis=0)])
        positions = np.linspace(0, n_pixel - 1, n_knots)
        frames = np.arange(n_pixel)
        seg = np.clip(np.searchsorted(positions, frames, side="right") - 1, 0, n_knots - 2)
        local = (frames - positions[seg]) / (positions[seg + 1] - positions[seg])
        # Косинусная интерполяция между узлами
        weight = (0.5 - 0.5 * np.cos(np.pi * local))[:, None]
        offsets = knots[seg] * (1 - weight) + knots[seg + 1] * weight
    else:
        raise DataError(f"Неизвестный тип траектории камеры: {kind}")
    return CameraTrajectory(offsets=offsets, kind=kind)


def pool_to_latent(values: np.ndarray, arith: FrameArithmetic = DEFAULT_ARITHMETIC) -> np.ndarray:
    """Усреднение пиксельных значений по латентным шагам"""
    n_pixel = values.shape[0]
    t_lat = arith.pixel_to_latent(n_pixel)
    stride = arith.temporal_stride
    first = values[:1]
    if t_lat == 1:
        return first.astype(np.float64)
    rest = values[1:].reshape((t_lat - 1, stride) + values.shape[1:]).mean(axis=1)
    return np.concatenate([first, rest], axis=0).astype(np.float64)


def gesture_track(envelope_latent: np.ndarray, threshold: float, decay: float) -> np.ndarray:
    """Всплески при пересечении порога снизу вверх с геометрическим затуханием"""
    gesture = np.zeros_like(envelope_latent)
    above_prev = False
    level = 0.0
    for i, value in enumerate(envelope_latent):
        above = value > threshold
        level = 1.0 if above and not above_prev else level * decay
        gesture[i] = level
        above_prev = above
    return gesture


def simulate_actor(
    audio: AudioTrack,
    actor: ActorSpec,
    camera: CameraTrajectory,
    seed: int,
    arith: FrameArithmetic = DEFAULT_ARITHMETIC,
    style: Optional[float] = None,
) -> LatentVideo:
    """Эталонное латентное видео актера, синхронное с аудио по построению"""
    n_pixel = len(audio)
    if (n_pixel - 1) % arith.temporal_stride != 0:
        raise DataError(f"Длина аудио {n_pixel} не выровнена по шагу {arith.temporal_stride}")
    if len(camera) != n_pixel:
        raise LengthMismatchError(f"Камера ({len(camera)}) и аудио ({n_pixel}) разной длины")

    rng = np.random.default_rng(seed)
    envelope = audio.envelope.astype(np.float64)
    mouth = pool_to_latent(envelope, arith)

    # Голова: запаздывающая и сглаженная огибающая
    lagged = np.concatenate([np.full(actor.head_lag, envelope[0]), envelope])[:n_pixel]
    smoothed = lfilter([1.0 - HEAD_SMOOTHING], [1.0, -HEAD_SMOOTHING], lagged, zi=[HEAD_SMOOTHING * lagged[0]])[0]
    velocity = np.diff(smoothed, prepend=smoothed[0]) * arith.temporal_stride
    head = pool_to_latent(np.stack([smoothed - 0.35, velocity], axis=1), arith)

    direction = rng.normal(size=2)
    direction /= np.linalg.norm(direction)
    gesture = gesture_track(mouth, actor.gesture_threshold, actor.gesture_decay)[:, None] * direction[None, :]

    t_lat = len(mouth)
    identity = np.tile(actor.identity_code, (t_lat, 1))
    cam = pool_to_latent(camera.offsets, arith)
    style_value = rng.uniform(-1.0, 1.0) if style is None else style

    frames = np.concatenate(
        [mouth[:, None], head, gesture, identity, cam, np.full((t_lat, 1), style_value)], axis=1
    )
    return LatentVideo(frames=frames, fps_pixel=audio.fps)
