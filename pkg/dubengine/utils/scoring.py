"""
Система оценки дубляжа для DubEngine
Аналоги метрик в пространстве латентных факторов: синхронизация, идентичность,
гладкость стыков, сила контроля референса, сохранение камеры
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.frames import DEFAULT_ARITHMETIC, ChunkPlan, FrameArithmetic
from ..errors import DataError, LengthMismatchError
from ..world.actor import LatentVideo, pool_to_latent
from ..world.audio import AudioTrack

logger = logging.getLogger(__name__)

_EPS = 1e-12


def _pearson(a: np.ndarray, b: np.ndarray) -> Optional[float]:
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    if denom < _EPS:
        return None
    return float((a * b).sum() / denom)


def lagged_correlation(signal: np.ndarray, response: np.ndarray, max_lag: int = 2) -> Tuple[float, bool]:
    """Максимум корреляции Пирсона по циклическим сдвигам |ℓ| <= max_lag

    Возвращает (значение, вырожденность). Нулевая дисперсия дает 0.
    """
    signal = np.asarray(signal, dtype=np.float64)
    response = np.asarray(response, dtype=np.float64)
    if signal.shape != response.shape:
        raise LengthMismatchError(f"Длины сигналов не совпадают: {signal.shape} и {response.shape}")
    best = None
    for lag in range(-max_lag, max_lag + 1):
        value = _pearson(signal, np.roll(response, lag))
        if value is not None and (best is None or value > best):
            best = value
    if best is None:
        logger.warning("Нулевая дисперсия сигнала: корреляция принята равной 0")
        return 0.0, True
    return best, False


def latent_envelope(audio: AudioTrack, video: LatentVideo, arith: FrameArithmetic = DEFAULT_ARITHMETIC) -> np.ndarray:
    """Огибающая, усредненная до латентной частоты"""
    needed = video.pixel_len(arith)
    if len(audio) != needed:
        raise LengthMismatchError(f"Аудио ({len(audio)}) и видео ({needed} кадров) не выровнены")
    return pool_to_latent(audio.envelope.astype(np.float64), arith)


def sync_score(video: LatentVideo, audio: AudioTrack, max_lag: int = 2,
               arith: FrameArithmetic = DEFAULT_ARITHMETIC) -> float:
    """Синхронизация рта с огибающей (аналог Sync-C, безразмерная)"""
    return sync_score_detail(video, audio, max_lag, arith)[0]


def sync_score_detail(video: LatentVideo, audio: AudioTrack, max_lag: int = 2,
                      arith: FrameArithmetic = DEFAULT_ARITHMETIC) -> Tuple[float, bool]:
    """sync_score вместе с флагом вырожденности"""
    return lagged_correlation(latent_envelope(audio, video, arith), video.mouth, max_lag)


def sync_distance(video: LatentVideo, audio: AudioTrack, arith: FrameArithmetic = DEFAULT_ARITHMETIC) -> float:
    """Среднее |рот − огибающая| (аналог Sync-D, меньше - лучше)"""
    envelope = latent_envelope(audio, video, arith)
    return float(np.mean(np.abs(video.mouth.astype(np.float64) - envelope)))


def gesture_sync(video: LatentVideo, audio: AudioTrack, threshold: float = 0.7, max_lag: int = 2,
                 arith: FrameArithmetic = DEFAULT_ARITHMETIC) -> float:
    """Прокси синхронизации тела: жесты против надпороговой огибающей"""
    envelope = latent_envelope(audio, video, arith)
    drive = np.maximum(envelope - threshold, 0.0)
    magnitude = np.linalg.norm(video.factor("gesture").astype(np.float64), axis=1)
    return lagged_correlation(drive, magnitude, max_lag)[0]


def identity_drift(video: LatentVideo, ref_identity: Sequence[float]) -> Tuple[float, float]:
    """Отклонение факторов идентичности от эталона: (среднее, максимум)"""
    ref = np.asarray(ref_identity, dtype=np.float64)
    distance = np.linalg.norm(video.identity.astype(np.float64) - ref[None, :], axis=1)
    return float(distance.mean()), float(distance.max())


def second_difference_norms(frames: np.ndarray) -> np.ndarray:
    """‖x[i+1] − 2x[i] + x[i−1]‖ для i = 1..T−2 (индекс массива = i − 1)"""
    frames = np.asarray(frames, dtype=np.float64)
    return np.linalg.norm(frames[2:] - 2 * frames[1:-1] + frames[:-2], axis=1)


def boundary_jerk(video: LatentVideo, plan: ChunkPlan) -> float:
    """Рывок на стыках чанков относительно внутренних кадров; 1.0 - стыки как середина"""
    if len(plan) < 2:
        raise DataError("Рывок на стыках не определен для одного чанка")
    if len(video) != plan.total_latent_frames:
        raise LengthMismatchError("Длина видео не совпадает с планом")
    norms = second_difference_norms(video.frames)
    valid = np.arange(1, len(video) - 1)
    boundary = set()
    for seam in plan.seam_latent_indices():
        # Две вторые разности, захватывающие переход seam − 1 → seam
        boundary.update(i for i in (seam - 1, seam) if 1 <= i <= len(video) - 2)
    is_boundary = np.isin(valid, sorted(boundary))
    boundary_mean = float(norms[is_boundary].mean()) if is_boundary.any() else 0.0
    interior_mean = float(norms[~is_boundary].mean()) if (~is_boundary).any() else 0.0
    if boundary_mean < _EPS and interior_mean < _EPS:
        return 1.0
    return boundary_mean / max(interior_mean, _EPS)


def control_strength(video: LatentVideo, ref_frame: Sequence[float], ref_latent_index: int) -> float:
    """Сходство exp(−‖x[i] − ref‖): 1 - жесткое копирование, 0 - свободное движение"""
    if not 0 <= ref_latent_index < len(video):
        raise DataError(f"Индекс {ref_latent_index} вне видео длины {len(video)}")
    distance = np.linalg.norm(video.frames[ref_latent_index].astype(np.float64) - np.asarray(ref_frame, dtype=np.float64))
    return float(np.exp(-distance))


def camera_error(video: LatentVideo, source: LatentVideo) -> float:
    """Средняя ошибка факторов камеры относительно источника"""
    if len(video) != len(source):
        raise LengthMismatchError(f"Длины видео ({len(video)}) и источника ({len(source)}) не совпадают")
    diff = video.camera.astype(np.float64) - source.camera.astype(np.float64)
    return float(np.linalg.norm(diff, axis=1).mean())


def adaptive_control(distances: Sequence[float], strengths: Sequence[float]) -> float:
    """Корреляция между удаленностью референса от контекста и силой контроля

    Положительное значение - контроль сильнее, когда референс далек от контекста.
    """
    if len(distances) != len(strengths):
        raise LengthMismatchError("Длины рядов не совпадают")
    if len(distances) < 2:
        return 0.0
    value = _pearson(np.asarray(distances, dtype=np.float64), np.asarray(strengths, dtype=np.float64))
    return 0.0 if value is None else value


@dataclass
class DubReport:
    """Отчет по одному запуску дубляжа"""

    sync_corr: float
    sync_distance: float
    gesture_sync: float
    identity_drift_mean: float
    identity_drift_max: float
    boundary_jerk_ratio: float
    control_strength: float
    camera_error: float
    adaptive_control: float
    chunk_identity_drift: List[float] = field(default_factory=list)
    chunk_control_strength: List[float] = field(default_factory=list)
    chunk_reference_distance: List[float] = field(default_factory=list)
    degenerate_sync: bool = False
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("sync_corr", "sync_distance", "identity_drift_mean", "identity_drift_max",
                     "boundary_jerk_ratio", "control_strength", "camera_error"):
            if not np.isfinite(getattr(self, name)):
                raise DataError(f"Метрика {name} не конечна")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


class DubScorer:
    """Расчет отчета и уровней качества дубляжа"""

    def __init__(self, arith: FrameArithmetic = DEFAULT_ARITHMETIC, max_lag: int = 2):
        self.arith = arith
        self.max_lag = max_lag
        # Пороговые уровни по метрикам: (good, warning)
        self.levels = {
            "sync_corr": (0.8, 0.6),
            "identity_drift_mean": (0.1, 0.3),
            "boundary_jerk_ratio": (1.5, 3.0),
            "camera_error": (0.1, 0.3),
        }
        self.higher_is_better = {"sync_corr"}

    def evaluate(self, result, source: LatentVideo, audio: AudioTrack,
                 ref_identity: Optional[Sequence[float]] = None) -> DubReport:
        """Полный отчет по результату run_dub"""
        video = result.video
        plan = result.plan
        if ref_identity is None:
            ref_identity = source.identity[0]

        sync, degenerate = sync_score_detail(video, audio, self.max_lag, self.arith)
        drift_mean, drift_max = identity_drift(video, ref_identity)
        jerk = boundary_jerk(video, plan) if len(plan) > 1 else 1.0

        chunk_drift, chunk_control, chunk_distance = [], [], []
        for trace in result.traces:
            emit_a, emit_b = trace.emit_span
            segment = LatentVideo(video.frames[emit_a:emit_b], video.fps_pixel)
            chunk_drift.append(identity_drift(segment, ref_identity)[0])
            first = trace.noisy_span[0]
            last = trace.latent_span[1] - 1
            chunk_control.append(max(control_strength(video, trace.reference, first),
                                     control_strength(video, trace.reference, last)))
            if trace.context is not None:
                chunk_distance.append(float(np.linalg.norm(trace.reference - trace.context.mean(axis=0))))

        with_context = [c for c, t in zip(chunk_control, result.traces) if t.context is not None]
        return DubReport(
            sync_corr=sync,
            sync_distance=sync_distance(video, audio, self.arith),
            gesture_sync=gesture_sync(video, audio, max_lag=self.max_lag, arith=self.arith),
            identity_drift_mean=drift_mean,
            identity_drift_max=drift_max,
            boundary_jerk_ratio=jerk,
            control_strength=float(np.mean(chunk_control)) if chunk_control else 0.0,
            camera_error=camera_error(video, source),
            adaptive_control=adaptive_control(chunk_distance, with_context),
            chunk_identity_drift=chunk_drift,
            chunk_control_strength=chunk_control,
            chunk_reference_distance=chunk_distance,
            degenerate_sync=degenerate,
            meta={"mode": result.mode, "n_chunks": len(plan)},
        )

    def metric_level(self, name: str, value: float) -> str:
        """Уровень метрики: good / warning / critical"""
        good, warning = self.levels[name]
        if name in self.higher_is_better:
            return "good" if value >= good else "warning" if value >= warning else "critical"
        return "good" if value <= good else "warning" if value <= warning else "critical"

    def get_summary(self, report: DubReport) -> Dict[str, Any]:
        """Сводка: уровни, проблемы и рекомендации"""
        levels = {name: self.metric_level(name, getattr(report, name)) for name in self.levels}
        issues = []
        recommendations = []

        if levels["sync_corr"] != "good":
            issues.append(f"Слабая синхронизация рта с аудио: {report.sync_corr:.3f}")
            recommendations.append("Увеличьте число шагов обучения или окно аудио")
        if levels["identity_drift_mean"] != "good":
            issues.append(f"Дрейф идентичности: {report.identity_drift_mean:.3f}")
            recommendations.append("Используйте потоковый режим с референсом из источника (M3)")
        if levels["boundary_jerk_ratio"] != "good":
            issues.append(f"Рывки на стыках чанков: {report.boundary_jerk_ratio:.2f}")
            recommendations.append("Передавайте контекстные кадры между чанками")
        if levels["camera_error"] != "good":
            issues.append(f"Камера отклоняется от источника: {report.camera_error:.3f}")
            recommendations.append("Уменьшите sdedit_t0 для сохранения траектории камеры")
        if report.degenerate_sync:
            issues.append("Рот или огибающая не меняются: синхронизация не определена")

        # Удаляем дубликаты
        unique_recommendations = list(dict.fromkeys(recommendations))
        overall = "critical" if "critical" in levels.values() else "warning" if "warning" in levels.values() else "good"
        return {
            "status": overall,
            "levels": levels,
            "issues": issues,
            "recommendations": unique_recommendations,
        }
