"""
Временная арифметика кадров и планирование чанков для DubEngine
Общая для обучения и сэмплирования
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from ..errors import AlignmentError, TooShortError

# Константы реализации: t_c = 3, чанк 81 кадр, 72 новых кадра за шаг
DEFAULT_STRIDE = 4
DEFAULT_CHUNK_PIXEL_LEN = 81
DEFAULT_CONTEXT_PIXEL_LEN = 9


@dataclass(frozen=True)
class FrameArithmetic:
    """Соотношения между пиксельными и латентными кадрами"""

    temporal_stride: int = DEFAULT_STRIDE
    chunk_pixel_len: int = DEFAULT_CHUNK_PIXEL_LEN
    context_pixel_len: int = DEFAULT_CONTEXT_PIXEL_LEN

    def __post_init__(self):
        if self.temporal_stride < 1:
            raise AlignmentError(f"temporal_stride должен быть >= 1, получено {self.temporal_stride}")
        if self.chunk_pixel_len % self.temporal_stride != 1 % self.temporal_stride:
            raise AlignmentError(
                f"chunk_pixel_len={self.chunk_pixel_len} не сравним с 1 по модулю {self.temporal_stride}"
            )
        if self.context_pixel_len % self.temporal_stride != 1 % self.temporal_stride:
            raise AlignmentError(
                f"context_pixel_len={self.context_pixel_len} не имеет вида "
                f"{self.temporal_stride}·(t_c − 1) + 1"
            )
        if not 1 <= self.context_pixel_len < self.chunk_pixel_len:
            raise AlignmentError("Контекст должен быть короче чанка")

    def pixel_to_latent(self, n_pixel: int) -> int:
        """Число латентных кадров для n_pixel пиксельных кадров"""
        if n_pixel < 1 or (n_pixel - 1) % self.temporal_stride != 0:
            raise AlignmentError(
                f"{n_pixel} пиксельных кадров не выровнены: нужна длина ≡ 1 (mod {self.temporal_stride})"
            )
        return (n_pixel - 1) // self.temporal_stride + 1

    def latent_to_pixel(self, t_lat: int) -> int:
        """Число пиксельных кадров для t_lat латентных кадров"""
        if t_lat < 1:
            raise AlignmentError(f"Нужен хотя бы один латентный кадр, получено {t_lat}")
        return self.temporal_stride * (t_lat - 1) + 1

    def latent_index(self, pixel_index: int) -> int:
        """Латентный кадр, покрывающий пиксельный кадр pixel_index"""
        # кадр 0 покрывает пиксель 0, кадр i >= 1 покрывает [4i − 3, 4i]
        if pixel_index < 0:
            raise AlignmentError(f"Отрицательный индекс кадра: {pixel_index}")
        return math.ceil(pixel_index / self.temporal_stride)

    def pixel_span_of_latent(self, latent_index: int) -> Tuple[int, int]:
        """Пиксельные кадры [start, end), покрываемые латентным кадром"""
        if latent_index == 0:
            return 0, 1
        return self.temporal_stride * latent_index - self.temporal_stride + 1, self.temporal_stride * latent_index + 1

    @property
    def context_latent_len(self) -> int:
        return self.pixel_to_latent(self.context_pixel_len)

    @property
    def chunk_latent_len(self) -> int:
        return self.pixel_to_latent(self.chunk_pixel_len)

    @property
    def new_pixel_frames(self) -> int:
        return self.chunk_pixel_len - self.context_pixel_len

    @property
    def noisy_latent_len(self) -> int:
        return self.chunk_latent_len - self.context_latent_len


DEFAULT_ARITHMETIC = FrameArithmetic()


def pixel_to_latent(n_pixel: int, arith: FrameArithmetic = DEFAULT_ARITHMETIC) -> int:
    """(n_pixel − 1) / stride + 1"""
    return arith.pixel_to_latent(n_pixel)


def latent_to_pixel(t_lat: int, arith: FrameArithmetic = DEFAULT_ARITHMETIC) -> int:
    """stride·(t_lat − 1) + 1"""
    return arith.latent_to_pixel(t_lat)


@dataclass(frozen=True)
class ChunkSpan:
    """Один шаг авторегрессионной генерации"""

    index: int
    pixel_span: Tuple[int, int]
    latent_span: Optional[Tuple[int, int]]
    context_source: str  # 'none' | 'previous_output'
    reference_pixel_index: int
    # Часть чанка, которая попадает в выход; остальное отбрасывается
    emit_pixel_span: Tuple[int, int]
    emit_latent_span: Optional[Tuple[int, int]]

    @property
    def new_pixel_frames(self) -> int:
        return self.emit_pixel_span[1] - self.emit_pixel_span[0]


@dataclass(frozen=True)
class ChunkPlan:
    """Детерминированное расписание чанков для длинной последовательности"""

    chunks: Tuple[ChunkSpan, ...]
    total_pixel_frames: int
    arith: FrameArithmetic = field(default=DEFAULT_ARITHMETIC)

    def __len__(self) -> int:
        return len(self.chunks)

    @property
    def aligned(self) -> bool:
        return all(chunk.latent_span is not None for chunk in self.chunks)

    @property
    def total_latent_frames(self) -> int:
        return self.arith.pixel_to_latent(self.total_pixel_frames)

    def seam_latent_indices(self) -> List[int]:
        """Первые латентные кадры, записанные чанками k >= 1"""
        seams = []
        for chunk in self.chunks[1:]:
            if chunk.emit_latent_span is None:
                raise AlignmentError("План не выровнен по латентной сетке")
            seams.append(chunk.emit_latent_span[0])
        return seams

    def to_dict(self) -> dict:
        return {
            "total_pixel_frames": self.total_pixel_frames,
            "chunks": [
                {
                    "index": c.index,
                    "pixel_span": list(c.pixel_span),
                    "latent_span": list(c.latent_span) if c.latent_span else None,
                    "context_source": c.context_source,
                    "reference_pixel_index": c.reference_pixel_index,
                    "emit_pixel_span": list(c.emit_pixel_span),
                }
                for c in self.chunks
            ],
        }


def _latent_span(start: int, end: int, arith: FrameArithmetic) -> Optional[Tuple[int, int]]:
    if start % arith.temporal_stride != 0:
        return None
    first = start // arith.temporal_stride
    return first, first + arith.pixel_to_latent(end - start)


def build_chunk_plan(total_pixel_frames: int, arith: FrameArithmetic = DEFAULT_ARITHMETIC) -> ChunkPlan:
    """Построение плана чанков с выравниванием последнего чанка по правому краю"""
    chunk_len = arith.chunk_pixel_len
    if total_pixel_frames < chunk_len:
        raise TooShortError(
            f"Последовательность из {total_pixel_frames} кадров короче одного чанка ({chunk_len})"
        )

    n_chunks = math.ceil((total_pixel_frames - arith.context_pixel_len) / arith.new_pixel_frames)
    chunks = []
    prev_end = 0
    for k in range(n_chunks):
        start = min(k * arith.new_pixel_frames, total_pixel_frames - chunk_len)
        end = start + chunk_len
        emit = (prev_end, end)
        latent_span = _latent_span(start, end, arith)
        emit_latent = None
        if latent_span is not None and (k == 0 or prev_end % arith.temporal_stride == 1 % arith.temporal_stride):
            emit_latent = (0 if k == 0 else arith.latent_index(prev_end), latent_span[1])
        chunks.append(ChunkSpan(
            index=k,
            pixel_span=(start, end),
            latent_span=latent_span,
            context_source="none" if k == 0 else "previous_output",
            reference_pixel_index=start,
            emit_pixel_span=emit,
            emit_latent_span=emit_latent,
        ))
        prev_end = end

    return ChunkPlan(chunks=tuple(chunks), total_pixel_frames=total_pixel_frames, arith=arith)
