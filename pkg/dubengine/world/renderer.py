"""
Рендер латентного видео в PNG кадры для визуального контроля
Использует Pillow
"""

import colorsys
import logging
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from PIL import Image, ImageDraw

from ..errors import DataError
from .actor import LatentVideo

logger = logging.getLogger(__name__)

FRAME_SIZE = 64
HEAD_RADIUS = 14
MOUTH_MAX_HEIGHT = 10
MOUTH_WIDTH = 12


class FrameRenderer:
    """Рендерер кадров 64×64 RGB"""

    def __init__(self, size: int = FRAME_SIZE):
        self.size = size
        self.center = size / 2.0
        # Масштабы смещений в пикселях
        self.camera_scale = 8.0
        self.head_scale = 4.0
        self.gesture_scale = 6.0

    def identity_color(self, identity: np.ndarray) -> Tuple[int, int, int]:
        """Цвет головы: оттенок из кода идентичности"""
        hue = (np.arctan2(identity[1], identity[0]) / (2 * np.pi)) % 1.0
        value = 0.6 + 0.3 * (0.5 + 0.5 * np.tanh(identity[2]))
        saturation = 0.5 + 0.4 * (0.5 + 0.5 * np.tanh(identity[3]))
        r, g, b = colorsys.hsv_to_rgb(hue, saturation, value)
        return int(r * 255), int(g * 255), int(b * 255)

    def head_center(self, frame: np.ndarray) -> Tuple[float, float]:
        camera = frame[9:11]
        head = frame[1:3]
        x = self.center + self.camera_scale * camera[0] + self.head_scale * head[0]
        y = self.center + self.camera_scale * camera[1] + self.head_scale * head[1]
        return float(x), float(y)

    def mouth_height(self, frame: np.ndarray) -> int:
        return int(round(MOUTH_MAX_HEIGHT * float(np.clip(frame[0], 0.0, 1.0))))

    def draw_frame(self, frame: np.ndarray) -> Image.Image:
        """Отрисовка одного латентного кадра"""
        gray = int(np.clip(128 + 60 * frame[11], 0, 255))
        image = Image.new("RGB", (self.size, self.size), (gray, gray, gray))
        draw = ImageDraw.Draw(image)

        cx, cy = self.head_center(frame)
        color = self.identity_color(frame[5:9])
        draw.ellipse([cx - HEAD_RADIUS, cy - HEAD_RADIUS, cx + HEAD_RADIUS, cy + HEAD_RADIUS], fill=color)

        # Жесты - две "руки" по бокам
        for side in (-1, 1):
            hx = cx + side * (HEAD_RADIUS + 4) + self.gesture_scale * frame[3]
            hy = cy + HEAD_RADIUS - self.gesture_scale * abs(frame[4])
            draw.ellipse([hx - 3, hy - 3, hx + 3, hy + 3], fill=color)

        height = self.mouth_height(frame)
        if height > 0:
            my = cy + HEAD_RADIUS / 2
            draw.ellipse(
                [cx - MOUTH_WIDTH / 2, my - height / 2, cx + MOUTH_WIDTH / 2, my + height / 2],
                fill=(40, 10, 10),
            )
        return image

    def render(self, video: LatentVideo, out_path: Union[str, Path]) -> List[Path]:
        """Запись последовательности PNG кадров в каталог"""
        out_dir = Path(out_path)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            paths = []
            for index, frame in enumerate(video.frames):
                path = out_dir / f"frame_{index:05d}.png"
                self.draw_frame(frame).save(path, format="PNG")
                paths.append(path)
        except OSError as e:
            raise DataError(f"Невозможно записать кадры в {out_dir}: {e}") from e
        logger.info("Записано %d кадров в %s", len(paths), out_dir)
        return paths


def render(video: LatentVideo, out_path: Union[str, Path]) -> List[Path]:
    """Рендер видео рендерером по умолчанию"""
    return FrameRenderer().render(video, out_path)
