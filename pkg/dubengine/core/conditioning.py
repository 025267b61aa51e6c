"""
Сборка тензора условий z = [z₁ | z₂ | m] для поля скоростей
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import torch

from ..errors import AssemblyError


@dataclass(frozen=True)
class ConditioningBundle:
    """Собранные условия одного чанка (или батча чанков)"""

    z: torch.Tensor  # [..., T, 2·C_lat + m_ch]
    audio_tokens: torch.Tensor  # [..., T, D_tokens]
    reference: torch.Tensor  # [..., n_ref, C_lat]
    noisy_span: Tuple[int, int]
    c_lat: int
    m_ch: int
    context_dropped: bool = False

    @property
    def length(self) -> int:
        return self.z.shape[-2]

    @property
    def z1(self) -> torch.Tensor:
        return self.z[..., : self.c_lat]

    @property
    def z2(self) -> torch.Tensor:
        return self.z[..., self.c_lat : 2 * self.c_lat]

    @property
    def mask(self) -> torch.Tensor:
        return self.z[..., 2 * self.c_lat :]

    @property
    def noisy(self) -> torch.Tensor:
        start, end = self.noisy_span
        return self.z1[..., start:end, :]

    def with_noisy(self, x_t: torch.Tensor) -> "ConditioningBundle":
        """Копия с замененным шумным участком z₁; контекст не трогается"""
        start, end = self.noisy_span
        z1 = torch.cat([self.z1[..., :start, :], x_t, self.z1[..., end:, :]], dim=-2)
        z = torch.cat([z1, self.z[..., self.c_lat :]], dim=-1)
        return ConditioningBundle(
            z=z,
            audio_tokens=self.audio_tokens,
            reference=self.reference,
            noisy_span=self.noisy_span,
            c_lat=self.c_lat,
            m_ch=self.m_ch,
            context_dropped=self.context_dropped,
        )


def zero_context(like: torch.Tensor, t_c: int) -> torch.Tensor:
    """Нулевой контекстный блок (режим без контекста)"""
    shape = like.shape[:-2] + (t_c, like.shape[-1])
    return torch.zeros(shape, dtype=like.dtype, device=like.device)


def assemble_conditioning(
    x_t: torch.Tensor,
    x_context: Optional[torch.Tensor],
    x_ref: torch.Tensor,
    audio_tokens: torch.Tensor,
    m_ch: int = 1,
    t_c: int = 3,
    x_ref_end: Optional[torch.Tensor] = None,
) -> ConditioningBundle:
    """Сборка z = concat(z₁, z₂, m) по каналам

    x_context=None означает нулевой контекст: в z₁ подставляются t_c нулевых
    кадров, а audio_tokens покрывают только кадры x_t и дополняются нулями слева.
    x_ref_end задает второй референсный слот в последней позиции z₂.
    """
    if x_t.dim() < 2:
        raise AssemblyError(f"x_t должен иметь форму [..., t, C], получено {tuple(x_t.shape)}")
    t = x_t.shape[-2]
    c_lat = x_t.shape[-1]
    if t < 1:
        raise AssemblyError("Пустая шумная область: t должно быть >= 1")
    if m_ch < 1:
        raise AssemblyError(f"m_ch должен быть >= 1, получено {m_ch}")

    context_dropped = x_context is None
    if context_dropped:
        x_context = zero_context(x_t, t_c)
    elif x_context.shape[-2] != t_c:
        raise AssemblyError(f"Контекст должен содержать {t_c} кадров, получено {x_context.shape[-2]}")

    for name, tensor in (("x_context", x_context), ("x_ref", x_ref), ("x_ref_end", x_ref_end)):
        if tensor is not None and tensor.shape[-1] != c_lat:
            raise AssemblyError(f"Каналы {name} ({tensor.shape[-1]}) не совпадают с x_t ({c_lat})")

    total = t_c + t
    batch_shape = x_t.shape[:-2]
    if x_context.shape[:-2] != batch_shape or x_ref.shape[:-1] != batch_shape:
        raise AssemblyError("Пакетные размерности входов не совпадают")

    z1 = torch.cat([x_context, x_t], dim=-2)

    # z₂: копия референса в слоте 0, нули в остальных позициях
    ref_slot = x_ref.unsqueeze(-2)
    z2_parts = [ref_slot, x_t.new_zeros(batch_shape + (total - 1, c_lat))]
    mask = x_t.new_zeros(batch_shape + (total, m_ch))
    mask[..., 0, :] = 1.0
    references = [x_ref]
    if x_ref_end is not None:
        if total < 2:
            raise AssemblyError("Для второго референса нужно минимум две позиции")
        z2_parts = [ref_slot, x_t.new_zeros(batch_shape + (total - 2, c_lat)), x_ref_end.unsqueeze(-2)]
        mask[..., -1, :] = 1.0
        references.append(x_ref_end)
    z2 = torch.cat(z2_parts, dim=-2)

    expected_audio = t if context_dropped else total
    if audio_tokens.shape[-2] != expected_audio:
        raise AssemblyError(
            f"Аудио-токены покрывают {audio_tokens.shape[-2]} позиций, ожидалось {expected_audio}"
        )
    if context_dropped:
        pad = audio_tokens.new_zeros(audio_tokens.shape[:-2] + (t_c, audio_tokens.shape[-1]))
        audio_tokens = torch.cat([pad, audio_tokens], dim=-2)

    z = torch.cat([z1, z2, mask], dim=-1)
    return ConditioningBundle(
        z=z,
        audio_tokens=audio_tokens,
        reference=torch.stack(references, dim=-2),
        noisy_span=(t_c, t_c + t),
        c_lat=c_lat,
        m_ch=m_ch,
        context_dropped=context_dropped,
    )
