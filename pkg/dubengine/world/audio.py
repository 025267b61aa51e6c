"""
Синтетическая аудиодорожка для DubEngine
Огибающая из плавных синусоид и акцентных всплесков, признаки - случайная проекция
"""

from dataclasses import dataclass

import numpy as np

from ..errors import DataError

DEFAULT_D_AUDIO = 8
DEFAULT_FPS = 25.0
# Общая для всех дорожек проекция: играет роль фиксированного аудио-энкодера
EMBEDDER_SEED = 20250


@dataclass
class AudioTrack:
    """Покадровые аудиопризнаки и скалярная огибающая"""

    features: np.ndarray  # [N_pixel, D_audio]
    envelope: np.ndarray  # [N_pixel], значения в [0, 1]
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.envelope = np.asarray(self.envelope, dtype=np.float32)
        if self.features.ndim != 2 or self.envelope.ndim != 1:
            raise DataError("Аудио: ожидались features [N, D] и envelope [N]")
        if len(self.envelope) < 1 or len(self.features) != len(self.envelope):
            raise DataError(
                f"Аудио: длины признаков ({len(self.features)}) и огибающей ({len(self.envelope)}) не совпадают"
            )
        if not np.all(np.isfinite(self.features)):
            raise DataError("Аудио: признаки содержат нечисловые значения")

    def __len__(self) -> int:
        return len(self.envelope)

    @property
    def d_audio(self) -> int:
        return self.features.shape[1]


def _envelope(duration_frames: int, fps: float, rng: np.random.Generator):
    """Огибающая и фаза доминирующей синусоиды"""
    time = np.arange(duration_frames) / fps
    n_waves = int(rng.integers(3, 7))
    freqs = rng.uniform(0.2, 3.0, size=n_waves)
    amps = rng.uniform(0.05, 0.15, size=n_waves)
    phases = rng.uniform(0.0, 2 * np.pi, size=n_waves)
    waves = amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * time[None, :] + phases[:, None])
    envelope = 0.35 + waves.sum(axis=0)

    # Акцентные всплески (эмфаза в речи)
    n_bumps = max(1, duration_frames // 50)
    centers = rng.uniform(0, duration_frames, size=n_bumps)
    heights = rng.uniform(0.3, 0.6, size=n_bumps)
    widths = rng.uniform(2.0, 6.0, size=n_bumps)
    frames = np.arange(duration_frames)
    bumps = heights[:, None] * np.exp(-0.5 * ((frames[None, :] - centers[:, None]) / widths[:, None]) ** 2)
    envelope = np.clip(envelope + bumps.sum(axis=0), 0.0, 1.0)

    dominant = int(np.argmax(amps))
    phase = 2 * np.pi * freqs[dominant] * time + phases[dominant]
    return envelope, phase


def features_from_envelope(envelope: np.ndarray, phase: np.ndarray, projection: np.ndarray, fps: float) -> np.ndarray:
    """Проекция [огибающая, производная, sin фазы, cos фазы] в пространство признаков"""
    derivative = np.gradient(envelope) * fps / 10.0 if len(envelope) > 1 else np.zeros_like(envelope)
    basis = np.stack([envelope, derivative, np.sin(phase), np.cos(phase)], axis=1)
    return basis @ projection


def embedder_projection(d_audio: int) -> np.ndarray:
    """Фиксированная матрица проекции 4 -> d_audio"""
    return np.random.default_rng(EMBEDDER_SEED).normal(0.0, 0.5, size=(4, d_audio))


def gen_audio(duration_frames: int, seed: int, d_audio: int = DEFAULT_D_AUDIO, fps: float = DEFAULT_FPS) -> AudioTrack:
    """Детерминированная генерация аудиодорожки по зерну"""
    if duration_frames < 1:
        raise DataError(f"Длительность должна быть >= 1 кадра, получено {duration_frames}")
    rng = np.random.default_rng(seed)
    envelope, phase = _envelope(duration_frames, fps, rng)
    projection = embedder_projection(d_audio)
    features = features_from_envelope(envelope, phase, projection, fps)
    return AudioTrack(features=features, envelope=envelope, fps=fps)
