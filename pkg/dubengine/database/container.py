"""
Контейнер данных DubEngine
Заголовок JSON с префиксом длины + блоки float32 little-endian по записям.
Используется для датасетов, результатов дубляжа и чекпоинтов.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from ..errors import ContainerError

MAGIC = b"DUBC"
SCHEMA_VERSION = 1
_LENGTH = struct.Struct("<Q")
_DTYPE = np.dtype("<f4")


@dataclass
class ContainerRecord:
    """Одна запись контейнера: именованные массивы и метаданные"""

    name: str
    arrays: Dict[str, np.ndarray]
    meta: Dict[str, Any] = field(default_factory=dict)


def encode_container(kind: str, records: List[ContainerRecord], attrs: Dict[str, Any]) -> bytes:
    """Сериализация записей в байты (детерминированно)"""
    blobs = []
    entries = []
    offset = 0
    for record in records:
        blocks = {}
        for key in sorted(record.arrays):
            array = np.ascontiguousarray(record.arrays[key], dtype=_DTYPE)
            data = array.tobytes(order="C")
            blocks[key] = {"offset": offset, "shape": list(array.shape)}
            blobs.append(data)
            offset += len(data)
        entries.append({"name": record.name, "meta": record.meta, "blocks": blocks})

    header = {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "attrs": attrs,
        "counts": {"records": len(records), "data_bytes": offset},
        "records": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + _LENGTH.pack(len(header_bytes)) + header_bytes + b"".join(blobs)


def decode_container(payload: bytes) -> Tuple[Dict[str, Any], List[ContainerRecord]]:
    """Разбор байтов контейнера: (заголовок, записи)"""
    if payload[:4] != MAGIC:
        raise ContainerError("Неверная сигнатура контейнера")
    try:
        (header_len,) = _LENGTH.unpack_from(payload, 4)
        start = 4 + _LENGTH.size
        header = json.loads(payload[start : start + header_len].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError(f"Поврежденный заголовок контейнера: {e}") from e

    if header.get("schema_version") != SCHEMA_VERSION:
        raise ContainerError(f"Неподдерживаемая версия схемы: {header.get('schema_version')}")

    data = memoryview(payload)[start + header_len :]
    if len(data) != header["counts"]["data_bytes"]:
        raise ContainerError("Размер блока данных не совпадает с заголовком")

    records = []
    for entry in header["records"]:
        arrays = {}
        for key, block in entry["blocks"].items():
            count = int(np.prod(block["shape"])) if block["shape"] else 1
            if count == 0:
                arrays[key] = np.zeros(block["shape"], dtype=np.float32)
                continue
            array = np.frombuffer(data, dtype=_DTYPE, count=count, offset=block["offset"])
            arrays[key] = array.reshape(block["shape"]).astype(np.float32)
        records.append(ContainerRecord(name=entry["name"], arrays=arrays, meta=entry["meta"]))
    return header, records


def write_container(
    path: Union[str, Path], kind: str, records: List[ContainerRecord], attrs: Dict[str, Any]
) -> int:
    """Запись контейнера на диск, возвращает размер в байтах"""
    payload = encode_container(kind, records, attrs)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
    except OSError as e:
        raise ContainerError(f"Не удалось записать {path}: {e}") from e
    return len(payload)


def read_container(path: Union[str, Path], kind: Optional[str] = None) -> Tuple[Dict[str, Any], List[ContainerRecord]]:
    """Чтение контейнера с проверкой типа"""
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise ContainerError(f"Не удалось прочитать {path}: {e}") from e
    header, records = decode_container(payload)
    if kind is not None and header["kind"] != kind:
        raise ContainerError(f"Ожидался контейнер '{kind}', получен '{header['kind']}'")
    return header, records


def file_sha256(path: Union[str, Path]) -> str:
    """Хеш содержимого файла для сводки запуска"""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()
