"""
Датасет синтетических клипов (аудио, эталонное латентное видео, актер, камера)
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from ..core.frames import DEFAULT_ARITHMETIC, FrameArithmetic
from ..database.container import ContainerRecord, read_container, write_container
from ..errors import AlignmentError, DataError
from .actor import CAMERA_KINDS, ActorSpec, CameraTrajectory, LatentVideo, gen_camera, simulate_actor
from .audio import DEFAULT_D_AUDIO, AudioTrack, gen_audio

logger = logging.getLogger(__name__)

DATASET_KIND = "dataset"


@dataclass
class Clip:
    """Одна запись датасета"""

    audio: AudioTrack
    video: LatentVideo
    actor: ActorSpec
    camera: CameraTrajectory
    seed: int = 0

    @property
    def pixel_len(self) -> int:
        return len(self.audio)


def clip_seeds(seed: int, n_clips: int) -> List[int]:
    """Независимые зерна клипов из одного корневого зерна"""
    children = np.random.SeedSequence(seed).spawn(n_clips)
    return [int(child.generate_state(1)[0]) for child in children]


def make_clip(clip_len: int, seed: int, kind_index: int = 0, d_audio: int = DEFAULT_D_AUDIO,
              arith: FrameArithmetic = DEFAULT_ARITHMETIC) -> Clip:
    """Генерация одного клипа; чистая функция от аргументов"""
    audio_seed, actor_seed, camera_seed, sim_seed = np.random.SeedSequence(seed).generate_state(4)
    audio = gen_audio(clip_len, int(audio_seed), d_audio=d_audio)
    actor = ActorSpec.random(np.random.default_rng(actor_seed))
    camera = gen_camera(clip_len, CAMERA_KINDS[kind_index % len(CAMERA_KINDS)], np.random.default_rng(camera_seed))
    video = simulate_actor(audio, actor, camera, int(sim_seed), arith)
    return Clip(audio=audio, video=video, actor=actor, camera=camera, seed=seed)


def validate_clip_len(clip_len: int, arith: FrameArithmetic = DEFAULT_ARITHMETIC) -> None:
    """Проверка длины клипа: выравнивание и минимум два чанка"""
    if (clip_len - 1) % arith.temporal_stride != 0:
        raise AlignmentError(f"Длина клипа {clip_len} не сравнима с 1 по модулю {arith.temporal_stride}")
    if clip_len < 2 * arith.chunk_pixel_len:
        raise DataError(
            f"Длина клипа {clip_len} меньше двух чанков ({2 * arith.chunk_pixel_len}): "
            "стратегиям M2/M3 нужны соседние кадры"
        )


def clip_to_record(clip: Clip, index: int) -> ContainerRecord:
    return ContainerRecord(
        name=f"clip_{index:05d}",
        arrays={
            "audio_features": clip.audio.features,
            "audio_envelope": clip.audio.envelope,
            "latent": clip.video.frames,
            "camera_offsets": clip.camera.offsets,
            "identity_code": clip.actor.identity_code,
        },
        meta={
            "seed": clip.seed,
            "fps": clip.audio.fps,
            "head_lag": clip.actor.head_lag,
            "gesture_threshold": clip.actor.gesture_threshold,
            "gesture_decay": clip.actor.gesture_decay,
            "camera_kind": clip.camera.kind,
        },
    )


def record_to_clip(record: ContainerRecord) -> Clip:
    meta = record.meta
    arrays = record.arrays
    code = arrays["identity_code"].astype(np.float64)
    # float32 хранение: повторная нормировка в пределах допуска
    code = code / np.linalg.norm(code)
    return Clip(
        audio=AudioTrack(arrays["audio_features"], arrays["audio_envelope"], fps=meta["fps"]),
        video=LatentVideo(arrays["latent"], fps_pixel=meta["fps"]),
        actor=ActorSpec(code, meta["head_lag"], meta["gesture_threshold"], meta["gesture_decay"]),
        camera=CameraTrajectory(arrays["camera_offsets"], kind=meta["camera_kind"]),
        seed=meta["seed"],
    )


def make_dataset(n_clips: int, clip_len: int, seed: int, out_path: Union[str, Path],
                 d_audio: int = DEFAULT_D_AUDIO, arith: FrameArithmetic = DEFAULT_ARITHMETIC) -> Tuple[Path, int]:
    """Генерация датасета и запись в контейнер; возвращает (путь, размер в байтах)"""
    if n_clips < 0:
        raise DataError(f"Число клипов не может быть отрицательным: {n_clips}")
    validate_clip_len(clip_len, arith)

    seeds = clip_seeds(seed, n_clips)
    clips = [make_clip(clip_len, clip_seed, index, d_audio, arith) for index, clip_seed in enumerate(seeds)]
    records = [clip_to_record(clip, index) for index, clip in enumerate(clips)]
    attrs = {
        "seed": seed,
        "n_clips": n_clips,
        "clip_len": clip_len,
        "latent_len": arith.pixel_to_latent(clip_len),
        "d_audio": d_audio,
        "c_lat": 12,
        "temporal_stride": arith.temporal_stride,
        "clip_seeds": seeds,
    }
    out_path = Path(out_path)
    size = write_container(out_path, DATASET_KIND, records, attrs)
    logger.info("Датасет: %d клипов по %d кадров, %d байт -> %s", n_clips, clip_len, size, out_path)
    return out_path, size


def load_dataset(path: Union[str, Path]) -> List[Clip]:
    """Чтение датасета из контейнера"""
    _, records = read_container(path, kind=DATASET_KIND)
    return [record_to_clip(record) for record in records]


def permute_audio_pairs(clips: List[Clip], seed: int) -> List[Tuple[Clip, AudioTrack]]:
    """Пары (исходное видео, чужое аудио) для оценки дубляжа

    Аудиодорожки переставляются без неподвижных точек, так что ни одно видео
    не получает собственное аудио.
    """
    n = len(clips)
    if n < 2:
        raise DataError("Для перестановки аудио нужно минимум два клипа")
    rng = np.random.default_rng(seed)
    shift = int(rng.integers(1, n))
    order = rng.permutation(n)
    pairs = []
    for position, index in enumerate(order):
        donor = clips[order[(position + shift) % n]]
        source = clips[index]
        if len(donor.audio) != len(source.audio):
            raise DataError("Для перестановки аудио все клипы должны быть одной длины")
        pairs.append((source, donor.audio))
    return pairs
