"""
Поле скоростей v_θ для DubEngine
Небольшой трансформер по латентным кадрам с аудио и референсным кросс-вниманием
"""

import logging
import math
import threading
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from ..core.conditioning import ConditioningBundle
from ..core.frames import DEFAULT_ARITHMETIC, FrameArithmetic
from ..database.container import ContainerRecord, read_container, write_container
from ..errors import AssemblyError, ContainerError, LengthMismatchError, NumericalError
from ..world.audio import AudioTrack

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = "checkpoint"

# Инициализация весов идет через глобальный RNG torch; конструирование сериализуется
_INIT_LOCK = threading.Lock()


def align_audio(audio: AudioTrack, latent_len: int, window: int = 2,
                arith: FrameArithmetic = DEFAULT_ARITHMETIC) -> np.ndarray:
    """Аудио-токены по латентным кадрам с окном ±window

    Латентный кадр 0 берет пиксель 0, кадр i >= 1 - среднее по пикселям [4i − 3, 4i].
    Соседи за краями берутся с отсечением по границе.
    """
    needed = arith.latent_to_pixel(latent_len)
    if len(audio) < needed:
        raise LengthMismatchError(f"Аудио покрывает {len(audio)} кадров, нужно {needed}")
    if window < 0:
        raise LengthMismatchError(f"Окно не может быть отрицательным: {window}")

    features = audio.features[:needed].astype(np.float64)
    pooled = np.empty((latent_len, features.shape[1]))
    pooled[0] = features[0]
    if latent_len > 1:
        stride = arith.temporal_stride
        pooled[1:] = features[1:].reshape(latent_len - 1, stride, -1).mean(axis=1)

    offsets = np.arange(-window, window + 1)
    index = np.clip(np.arange(latent_len)[:, None] + offsets[None, :], 0, latent_len - 1)
    return pooled[index].reshape(latent_len, -1).astype(np.float32)


def sinusoidal_embedding(values: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Синусоидальные признаки для скаляров (время или позиция)"""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=values.dtype, device=values.device) / half)
    args = values[..., None] * freqs
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[..., :1])], dim=-1)
    return emb


class TimeEmbedding(nn.Module):
    """Синусоидальное вложение t ∈ [0, 1] и двухслойная проекция"""

    def __init__(self, width: int):
        super().__init__()
        self.width = width
        self.mlp = nn.Sequential(nn.Linear(width, width), nn.SiLU(), nn.Linear(width, width))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        return self.mlp(sinusoidal_embedding(t * 1000.0, self.width))


class ReferenceEmbedding(nn.Module):
    """Обучаемая проекция референсного латентного кадра в токен z_ref"""

    def __init__(self, c_lat: int, d_ref: int):
        super().__init__()
        self.proj = nn.Linear(c_lat, d_ref)

    def forward(self, reference: torch.Tensor) -> torch.Tensor:
        return self.proj(reference)


class VelocityBlock(nn.Module):
    """Самовнимание по времени, аудио и референсное кросс-внимание, MLP"""

    def __init__(self, width: int, heads: int, d_audio_tokens: int, d_ref: int):
        super().__init__()
        self.norm_self = nn.LayerNorm(width)
        self.self_attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm_audio = nn.LayerNorm(width)
        self.audio_attn = nn.MultiheadAttention(width, heads, kdim=d_audio_tokens, vdim=d_audio_tokens, batch_first=True)
        self.norm_ref = nn.LayerNorm(width)
        self.ref_attn = nn.MultiheadAttention(width, heads, kdim=d_ref, vdim=d_ref, batch_first=True)
        self.norm_ff = nn.LayerNorm(width)
        self.ff = nn.Sequential(nn.Linear(width, 4 * width), nn.GELU(), nn.Linear(4 * width, width))

    def forward(self, x: torch.Tensor, audio: torch.Tensor, ref: torch.Tensor,
                audio_mask: torch.Tensor) -> torch.Tensor:
        h = self.norm_self(x)
        x = x + self.self_attn(h, h, h, need_weights=False)[0]
        h = self.norm_audio(x)
        x = x + self.audio_attn(h, audio, audio, attn_mask=audio_mask, need_weights=False)[0]
        h = self.norm_ref(x)
        x = x + self.ref_attn(h, ref, ref, need_weights=False)[0]
        return x + self.ff(self.norm_ff(x))


class VelocityModel(nn.Module):
    """Оценщик поля скоростей v_θ(x_t | c)"""

    def __init__(
        self,
        c_lat: int = 12,
        m_ch: int = 1,
        d_audio_tokens: int = 40,
        d_ref: int = 64,
        depth: int = 4,
        width: int = 128,
        heads: int = 4,
        audio_window: int = 2,
    ):
        super().__init__()
        if width % heads != 0:
            raise ValueError(f"width={width} должен делиться на heads={heads}")
        self.hparams: Dict[str, Any] = {
            "c_lat": c_lat,
            "m_ch": m_ch,
            "d_audio_tokens": d_audio_tokens,
            "d_ref": d_ref,
            "depth": depth,
            "width": width,
            "heads": heads,
            "audio_window": audio_window,
        }
        self.c_lat = c_lat
        self.m_ch = m_ch
        self.width = width
        self.audio_window = audio_window

        self.input_proj = nn.Linear(2 * c_lat + m_ch, width)
        self.blocks = nn.ModuleList(
            [VelocityBlock(width, heads, d_audio_tokens, d_ref) for _ in range(depth)]
        )
        # Условия нужны только блокам; при depth = 0 модель - две проекции
        if depth > 0:
            self.time_embedder = TimeEmbedding(width)
            self.ref_embedder = ReferenceEmbedding(c_lat, d_ref)
            self.final_norm = nn.LayerNorm(width)
        else:
            self.time_embedder = None
            self.ref_embedder = None
            self.final_norm = None
        self.output_proj = nn.Linear(width, c_lat)

    def count_params(self) -> int:
        """Точное число параметров"""
        return sum(p.numel() for p in self.parameters())

    def audio_mask(self, length: int, device: torch.device) -> torch.Tensor:
        """Маска окна: позиция i видит аудио-токены |i − j| <= window"""
        positions = torch.arange(length, device=device)
        return (positions[:, None] - positions[None, :]).abs() > self.audio_window

    def forward(self, bundle: ConditioningBundle, t: Union[float, torch.Tensor]) -> torch.Tensor:
        """Скорость для каждой временной позиции z: [..., T, C_lat]"""
        z = bundle.z
        unbatched = z.dim() == 2
        if unbatched:
            z = z.unsqueeze(0)
        audio = bundle.audio_tokens if not unbatched else bundle.audio_tokens.unsqueeze(0)
        reference = bundle.reference if not unbatched else bundle.reference.unsqueeze(0)

        if z.shape[-1] != 2 * self.c_lat + self.m_ch:
            raise AssemblyError(
                f"Ожидалось {2 * self.c_lat + self.m_ch} входных каналов, получено {z.shape[-1]}"
            )
        batch, length, _ = z.shape
        if audio.shape[:2] != (batch, length):
            raise AssemblyError("Аудио-токены не совпадают с z по батчу или длине")

        t = torch.as_tensor(t, dtype=z.dtype, device=z.device)
        if t.dim() == 0:
            t = t.expand(batch)
        if not torch.all(torch.isfinite(t)):
            raise NumericalError("Нечисловое значение времени t")

        positions = torch.arange(length, dtype=z.dtype, device=z.device)
        x = self.input_proj(z) + sinusoidal_embedding(positions, self.width)
        if self.blocks:
            x = x + self.time_embedder(t)[:, None, :]
            ref = self.ref_embedder(reference)
            mask = self.audio_mask(length, z.device)
            for block in self.blocks:
                x = block(x, audio, ref, mask)
            x = self.final_norm(x)
        out = self.output_proj(x)
        return out[0] if unbatched else out


def build_model(hparams: Dict[str, Any], seed: Optional[int] = None) -> VelocityModel:
    """Создание модели с детерминированной инициализацией

    Потокобезопасно: глобальное состояние RNG torch восстанавливается после сборки.
    """
    with _INIT_LOCK, torch.random.fork_rng(devices=[]):
        if seed is not None:
            torch.manual_seed(seed)
        return VelocityModel(**hparams)


def save_checkpoint(model: VelocityModel, path: Union[str, Path], step: int, seed: int,
                    extra: Optional[Dict[str, Any]] = None) -> int:
    """Чекпоинт: заголовок с гиперпараметрами + именованные блоки float32"""
    arrays = {name: tensor.detach().cpu().float().numpy() for name, tensor in model.state_dict().items()}
    attrs = {"hparams": model.hparams, "step": step, "seed": seed, "n_params": model.count_params()}
    if extra:
        attrs.update(extra)
    return write_container(path, CHECKPOINT_KIND, [ContainerRecord(name="params", arrays=arrays)], attrs)


def load_checkpoint(path: Union[str, Path]) -> Tuple[VelocityModel, Dict[str, Any]]:
    """Загрузка модели и атрибутов чекпоинта"""
    header, records = read_container(path, kind=CHECKPOINT_KIND)
    if len(records) != 1:
        raise ContainerError("Чекпоинт должен содержать одну запись параметров")
    attrs = header["attrs"]
    model = build_model(attrs["hparams"])
    state = {name: torch.from_numpy(array.copy()) for name, array in records[0].arrays.items()}
    try:
        model.load_state_dict(state)
    except RuntimeError as e:
        raise ContainerError(f"Параметры чекпоинта не подходят к архитектуре: {e}") from e
    model.eval()
    return model, attrs
