"""
ODE сэмплер и потоковый дубляж длинных последовательностей
Режимы: streaming (контекст + референс из источника), i2v и fl2v (базовые линии)
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import torch

from ..config import SamplerConfig
from ..core.conditioning import ConditioningBundle, assemble_conditioning
from ..core.frames import DEFAULT_ARITHMETIC, ChunkPlan, FrameArithmetic, build_chunk_plan
from ..errors import AlignmentError, DataError, LengthMismatchError, NumericalError
from ..model.velocity import align_audio
from ..world.actor import LatentVideo
from ..world.audio import AudioTrack

logger = logging.getLogger(__name__)

MODES = ("streaming", "i2v", "fl2v")


@dataclass
class DubRequest:
    """Исходное видео, новое аудио и план чанков"""

    source_video: LatentVideo
    new_audio: AudioTrack
    plan: ChunkPlan

    def __post_init__(self):
        arith = self.plan.arith
        pixel_len = self.source_video.pixel_len(arith)
        if len(self.new_audio) != pixel_len:
            raise LengthMismatchError(
                f"Аудио ({len(self.new_audio)} кадров) не совпадает с видео ({pixel_len} кадров)"
            )
        if self.plan.total_pixel_frames != pixel_len:
            raise LengthMismatchError(
                f"План построен для {self.plan.total_pixel_frames} кадров, видео - {pixel_len}"
            )
        if not self.plan.aligned:
            raise AlignmentError("План чанков не выровнен по латентной сетке")

    @classmethod
    def build(cls, source_video: LatentVideo, new_audio: AudioTrack,
              arith: FrameArithmetic = DEFAULT_ARITHMETIC) -> "DubRequest":
        plan = build_chunk_plan(source_video.pixel_len(arith), arith)
        return cls(source_video=source_video, new_audio=new_audio, plan=plan)


@dataclass
class ChunkTrace:
    """Что получил и что выдал один чанк"""

    index: int
    latent_span: Tuple[int, int]
    noisy_span: Tuple[int, int]
    emit_span: Tuple[int, int]
    reference: np.ndarray
    reference_latent_index: Optional[int]  # None, если референс взят из сгенерированного
    context: Optional[np.ndarray] = None


@dataclass
class DubResult:
    video: LatentVideo
    plan: ChunkPlan
    mode: str
    traces: List[ChunkTrace] = field(default_factory=list)


def chunk_generator(seed: int, chunk_index: int) -> torch.Generator:
    """Генератор шума чанка: зависит только от (seed, номер чанка)"""
    state = np.random.SeedSequence([seed, chunk_index]).generate_state(1)[0]
    return torch.Generator().manual_seed(int(state))


def sdedit_init(source_chunk: torch.Tensor, t0: float, generator: torch.Generator,
                noise: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Стартовое состояние SDEdit: (1 − t0)·source + t0·noise"""
    if not 0.0 <= t0 <= 1.0:
        raise DataError(f"t0 должно лежать в [0, 1], получено {t0}")
    if noise is None:
        noise = torch.randn(source_chunk.shape, generator=generator, dtype=source_chunk.dtype)
    return (1.0 - t0) * source_chunk + t0 * noise


@torch.no_grad()
def ode_solve(model, cond: ConditioningBundle, steps: int, generator: torch.Generator,
              t_start: float = 1.0, source: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Явный Эйлер на равномерной сетке от t_start до 0

    Контекстные позиции z₁ остаются чистыми на всех шагах. Возвращает x̂_0 шумного участка.
    """
    if steps < 1:
        raise DataError(f"Число шагов должно быть >= 1, получено {steps}")
    if not 0.0 <= t_start <= 1.0:
        raise DataError(f"t_start должно лежать в [0, 1], получено {t_start}")
    if t_start < 1.0 and source is None:
        raise DataError("Для старта с t < 1 нужен исходный фрагмент")
    if t_start == 0.0:
        return source.clone()

    start, end = cond.noisy_span
    template = cond.noisy
    noise = torch.randn(template.shape, generator=generator, dtype=template.dtype)
    x = sdedit_init(source, t_start, generator, noise=noise) if source is not None and t_start < 1.0 else noise

    grid = torch.linspace(t_start, 0.0, steps + 1, dtype=torch.float64)
    for i in range(steps):
        h = float(grid[i] - grid[i + 1])
        velocity = model(cond.with_noisy(x), float(grid[i]))[..., start:end, :]
        if not torch.all(torch.isfinite(velocity)):
            raise NumericalError(f"NaN/Inf в поле скоростей на шаге {i} (t = {float(grid[i]):.4f})")
        x = x + h * velocity
    return x


def run_dub(request: DubRequest, model, config: SamplerConfig, mode: Optional[str] = None) -> DubResult:
    """Генерация всей последовательности по чанкам"""
    mode = mode or config.mode
    if mode not in MODES:
        raise DataError(f"Неизвестный режим дубляжа: {mode}")
    plan = request.plan
    arith = plan.arith
    source = torch.from_numpy(request.source_video.frames.copy())
    n_frames, c_lat = source.shape

    if config.sdedit_t0 is not None and config.sdedit_t0 == 0.0:
        logger.info("sdedit_t0 = 0: копирование источника без генерации")
        return DubResult(video=LatentVideo(request.source_video.frames.copy(), request.source_video.fps_pixel),
                         plan=plan, mode=mode)

    tokens = torch.from_numpy(align_audio(request.new_audio, n_frames, model.audio_window, arith))
    t_c = arith.context_latent_len
    t_start = 1.0 if config.sdedit_t0 is None else float(config.sdedit_t0)
    output = torch.zeros_like(source)
    traces = []

    for chunk in plan.chunks:
        a, b = chunk.latent_span
        emit_a, emit_b = chunk.emit_latent_span
        use_context = mode != "fl2v" and chunk.index > 0
        # Весь уже выпущенный участок [a, emit_a) держится чистым; последние t_c его кадров - контекст
        held = output[a:emit_a].clone() if use_context else None
        context = held[-t_c:] if use_context else None
        noisy = (emit_a, b) if use_context else (a, b)

        if mode == "i2v" and chunk.index > 0:
            # Последний сгенерированный кадр предыдущего чанка
            reference = output[emit_a - 1].clone()
            ref_index = None
        else:
            ref_index = arith.latent_index(chunk.reference_pixel_index)
            reference = source[ref_index]
        reference_end = source[b - 1] if mode == "fl2v" else None

        placeholder = torch.zeros(noisy[1] - noisy[0], c_lat, dtype=source.dtype)
        cond = assemble_conditioning(placeholder, held, reference, tokens[a:b], m_ch=model.m_ch,
                                     t_c=t_c if held is None else len(held),
                                     x_ref_end=reference_end)
        sdedit_source = source[noisy[0] : noisy[1]] if t_start < 1.0 else None
        generated = ode_solve(model, cond, config.ode_steps, chunk_generator(config.seed, chunk.index),
                              t_start=t_start, source=sdedit_source)
        output[emit_a:emit_b] = generated[emit_a - noisy[0] : emit_b - noisy[0]]

        traces.append(ChunkTrace(
            index=chunk.index,
            latent_span=(a, b),
            noisy_span=noisy,
            emit_span=(emit_a, emit_b),
            reference=reference.numpy().copy(),
            reference_latent_index=ref_index,
            context=None if context is None else context.numpy().copy(),
        ))
        logger.debug("Чанк %d (%s): латентные кадры [%d, %d)", chunk.index, mode, emit_a, emit_b)

    video = LatentVideo(output.numpy(), request.source_video.fps_pixel)
    return DubResult(video=video, plan=plan, mode=mode, traces=traces)


def dub_streaming(request: DubRequest, model, config: SamplerConfig) -> LatentVideo:
    """Потоковый дубляж: контекст из выхода, референс - кадр источника в начале чанка"""
    return run_dub(request, model, config, "streaming").video


def dub_i2v(request: DubRequest, model, config: SamplerConfig) -> LatentVideo:
    """Базовая линия I2V: референс - последний сгенерированный кадр"""
    return run_dub(request, model, config, "i2v").video


def dub_fl2v(request: DubRequest, model, config: SamplerConfig) -> LatentVideo:
    """Базовая линия FL2V: первый и последний кадр чанка, без контекста"""
    return run_dub(request, model, config, "fl2v").video
