"""
Обучение поля скоростей условным flow matching

Соглашение по времени: t = 0 - данные, t = 1 - шум.
x_t = (1 − t)·x_0 + t·noise, цель скорости - (x_0 − noise);
сэмплер интегрирует от t = 1 к t = 0 шагом x ← x + h·v.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from ..config import TrainConfig
from ..core.conditioning import assemble_conditioning
from ..core.frames import DEFAULT_ARITHMETIC, FrameArithmetic
from ..errors import DataError, DivergenceError, NumericalError, TooShortError
from ..model.velocity import VelocityModel, align_audio, build_model, save_checkpoint
from ..world.dataset import Clip
from .references import ReferenceStrategy, sample_reference

logger = logging.getLogger(__name__)

SMOOTH_WINDOW = 50


@dataclass
class TrainingWindow:
    """Обучающее окно одного чанка"""

    x_context: np.ndarray  # [t_c, C]; нули при отброшенном контексте
    x_0: np.ndarray  # [t, C]
    audio_tokens: np.ndarray  # токены реальных позиций окна
    chunk_span: Tuple[int, int]  # пиксельный промежуток чанка
    latent_start: int
    context_dropped: bool = False


def sample_training_window(
    clip: Clip,
    rng: np.random.Generator,
    arith: FrameArithmetic = DEFAULT_ARITHMETIC,
    context_dropout_prob: float = 0.1,
    clip_tokens: Optional[np.ndarray] = None,
    audio_window: int = 2,
    latent_start: Optional[int] = None,
) -> TrainingWindow:
    """Случайное выровненное окно из chunk_pixel_len кадров

    Контекст - первые t_c латентных кадров окна, x_0 - остальные. При отбрасывании
    контекста x_0 покрывает все окно, а контекст заменяется нулями.
    """
    frames = clip.video.frames
    chunk_lat = arith.chunk_latent_len
    t_c = arith.context_latent_len
    if clip.pixel_len < arith.chunk_pixel_len or len(frames) < chunk_lat:
        raise TooShortError(f"Клип из {clip.pixel_len} кадров короче чанка ({arith.chunk_pixel_len})")
    if clip_tokens is None:
        clip_tokens = align_audio(clip.audio, len(frames), audio_window, arith)

    if latent_start is None:
        latent_start = int(rng.integers(0, len(frames) - chunk_lat + 1))
    elif not 0 <= latent_start <= len(frames) - chunk_lat:
        raise DataError(f"Начало окна {latent_start} вне клипа")
    end = latent_start + chunk_lat
    pixel_start = latent_start * arith.temporal_stride
    span = (pixel_start, pixel_start + arith.chunk_pixel_len)

    dropped = bool(rng.random() < context_dropout_prob)
    if dropped:
        return TrainingWindow(
            x_context=np.zeros((t_c, frames.shape[1]), dtype=np.float32),
            x_0=frames[latent_start:end],
            audio_tokens=clip_tokens[latent_start:end],
            chunk_span=span,
            latent_start=latent_start,
            context_dropped=True,
        )
    return TrainingWindow(
        x_context=frames[latent_start : latent_start + t_c],
        x_0=frames[latent_start + t_c : end],
        audio_tokens=clip_tokens[latent_start:end],
        chunk_span=span,
        latent_start=latent_start,
    )


def interpolate(x_0: torch.Tensor, noise: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    """x_t = (1 − t)·x_0 + t·noise"""
    t = t.reshape(t.shape + (1,) * (x_0.dim() - t.dim()))
    return (1.0 - t) * x_0 + t * noise


def velocity_target(x_0: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
    """Скорость, направленная к данным"""
    return x_0 - noise


def fm_loss(
    model: VelocityModel,
    x_0: torch.Tensor,
    x_context: Optional[torch.Tensor],
    x_ref: torch.Tensor,
    audio_tokens: torch.Tensor,
    t: torch.Tensor,
    noise: torch.Tensor,
    t_c: int = 3,
) -> torch.Tensor:
    """Среднеквадратичная ошибка скорости только на шумном участке"""
    if noise.shape != x_0.shape:
        raise DataError(f"Форма шума {tuple(noise.shape)} не совпадает с x_0 {tuple(x_0.shape)}")
    t = torch.as_tensor(t, dtype=x_0.dtype, device=x_0.device)
    if t.dim() == 0 and x_0.dim() == 3:
        t = t.expand(x_0.shape[0])
    x_t = interpolate(x_0, noise, t)
    bundle = assemble_conditioning(x_t, x_context, x_ref, audio_tokens, m_ch=model.m_ch, t_c=t_c)
    velocity = model(bundle, t)
    if not torch.all(torch.isfinite(velocity)):
        raise NumericalError(f"NaN/Inf в выходе модели (t ∈ [{float(t.min()):.3f}, {float(t.max()):.3f}])")
    start, end = bundle.noisy_span
    return F.mse_loss(velocity[..., start:end, :], velocity_target(x_0, noise))


@dataclass
class TrainResult:
    """Результат обучения"""

    model: VelocityModel
    losses: List[float]
    n_params: int
    checkpoint_path: Optional[Path] = None
    log_path: Optional[Path] = None
    history: List[Dict[str, float]] = field(default_factory=list)

    @property
    def initial_loss(self) -> float:
        return float(np.mean(self.losses[:SMOOTH_WINDOW])) if self.losses else float("nan")

    @property
    def final_loss(self) -> float:
        return float(np.mean(self.losses[-SMOOTH_WINDOW:])) if self.losses else float("nan")


def _batch_tensors(windows: Sequence[TrainingWindow], refs: Sequence[np.ndarray]):
    x_0 = torch.from_numpy(np.stack([w.x_0 for w in windows])).float()
    context = torch.from_numpy(np.stack([w.x_context for w in windows])).float()
    tokens = torch.from_numpy(np.stack([w.audio_tokens for w in windows])).float()
    x_ref = torch.from_numpy(np.stack(refs)).float()
    return x_0, context, tokens, x_ref


class FlowMatchingTrainer:
    """Цикл обучения: выбор окон и референсов, шаг Adam, журнал и чекпоинты"""

    def __init__(self, config: TrainConfig, hparams: Dict, arith: FrameArithmetic = DEFAULT_ARITHMETIC):
        self.config = config
        self.hparams = hparams
        self.arith = arith
        self.seed = config.seed if config.seed is not None else 0
        self.strategy: ReferenceStrategy = config.reference_strategy()

    def _generators(self) -> Tuple[np.random.Generator, torch.Generator]:
        # Подпоток 0 - выбор окон и референсов, подпоток 1 - шум и t
        data_seq, noise_seq = np.random.SeedSequence(self.seed).spawn(2)
        torch_gen = torch.Generator().manual_seed(int(noise_seq.generate_state(1)[0]))
        return np.random.default_rng(data_seq), torch_gen

    def _draw_batch(self, clips: List[Clip], tokens: List[np.ndarray], rng: np.random.Generator):
        windows, refs = [], []
        for _ in range(self.config.batch_size):
            clip_index = int(rng.integers(len(clips)))
            clip = clips[clip_index]
            window = sample_training_window(
                clip, rng, self.arith, self.config.context_dropout_prob,
                clip_tokens=tokens[clip_index], audio_window=self.hparams["audio_window"],
            )
            ref_px = sample_reference(self.strategy, clip.pixel_len, window.chunk_span, rng)
            windows.append(window)
            refs.append(clip.video.frames[self.arith.latent_index(ref_px)])
        return windows, refs

    def _step_loss(self, model, windows, refs, torch_gen) -> torch.Tensor:
        """Потеря батча; окна с контекстом и без считаются отдельными группами"""
        total = None
        for dropped in (False, True):
            group = [i for i, w in enumerate(windows) if w.context_dropped == dropped]
            if not group:
                continue
            x_0, context, tokens, x_ref = _batch_tensors([windows[i] for i in group], [refs[i] for i in group])
            t = torch.rand(len(group), generator=torch_gen)
            noise = torch.randn(x_0.shape, generator=torch_gen)
            loss = fm_loss(
                model, x_0, None if dropped else context, x_ref, tokens, t, noise,
                t_c=self.arith.context_latent_len,
            )
            weighted = loss * (len(group) / len(windows))
            total = weighted if total is None else total + weighted
        return total

    def fit(self, clips: List[Clip], out_dir: Optional[Path] = None, progress: bool = False) -> TrainResult:
        """Обучение на списке клипов"""
        if self.config.steps > 0 and not clips:
            raise DataError("Пустой датасет: обучать не на чем")
        if self.config.threads:
            torch.set_num_threads(self.config.threads)

        model = build_model(self.hparams, seed=self.seed)
        n_params = model.count_params()
        logger.info("Модель: %d параметров, стратегия %s, зерно %d", n_params, self.strategy.kind, self.seed)

        optimizer = torch.optim.Adam(model.parameters(), lr=self.config.learning_rate)
        rng, torch_gen = self._generators()
        tokens = [align_audio(c.audio, len(c.video), self.hparams["audio_window"], self.arith) for c in clips]

        log_path = checkpoint_path = None
        log_file = None
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            log_path = out_dir / "train_log.jsonl"
            checkpoint_path = out_dir / "checkpoint.dubc"
            log_file = open(log_path, "w", encoding="utf-8")

        losses: List[float] = []
        history: List[Dict[str, float]] = []
        model.train()
        try:
            with tqdm(total=self.config.steps, disable=not progress, desc=f"train[{self.strategy.kind}]") as pbar:
                for step in range(1, self.config.steps + 1):
                    windows, refs = self._draw_batch(clips, tokens, rng)
                    loss = self._step_loss(model, windows, refs, torch_gen)
                    value = float(loss.detach())
                    if not np.isfinite(value) or value > self.config.divergence_threshold:
                        raise DivergenceError(
                            f"Расходимость на шаге {step}: потеря {value:.4g} "
                            f"(порог {self.config.divergence_threshold:g}, lr {self.config.learning_rate:g})"
                        )

                    optimizer.zero_grad()
                    loss.backward()
                    torch.nn.utils.clip_grad_norm_(model.parameters(), self.config.grad_clip)
                    optimizer.step()
                    losses.append(value)

                    if step % self.config.log_every == 0 or step == 1:
                        entry = {
                            "step": step,
                            "loss": value,
                            "smoothed_loss": float(np.mean(losses[-SMOOTH_WINDOW:])),
                            "lr": self.config.learning_rate,
                            "strategy": self.strategy.kind,
                            "seed": self.seed,
                        }
                        history.append(entry)
                        if log_file is not None:
                            log_file.write(json.dumps(entry, sort_keys=True) + "\n")
                            log_file.flush()
                        logger.info("step %d loss %.5f (сглаж. %.5f)", step, value, entry["smoothed_loss"])

                    if checkpoint_path is not None and self.config.checkpoint_every and step % self.config.checkpoint_every == 0:
                        save_checkpoint(model, out_dir / f"checkpoint_{step:06d}.dubc", step, self.seed,
                                        {"strategy": self.strategy.kind})
                    pbar.set_postfix({"loss": f"{value:.4f}"})
                    pbar.update(1)
        finally:
            if log_file is not None:
                log_file.close()

        model.eval()
        if checkpoint_path is not None:
            save_checkpoint(model, checkpoint_path, self.config.steps, self.seed, {"strategy": self.strategy.kind})
        return TrainResult(model=model, losses=losses, n_params=n_params, checkpoint_path=checkpoint_path,
                           log_path=log_path, history=history)


def train(clips: List[Clip], config: TrainConfig, hparams: Dict, arith: FrameArithmetic = DEFAULT_ARITHMETIC,
          out_dir: Optional[Path] = None, progress: bool = False) -> TrainResult:
    """Обучение модели по конфигурации"""
    return FlowMatchingTrainer(config, hparams, arith).fit(clips, out_dir=out_dir, progress=progress)
