"""
DubEngine - потоковый дубляж видео по аудио на синтетическом латентном мире
Точка входа командной строки: dub-engine <command> --config <path> [--set key=value ...]
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from . import __version__
from .ablation import run_ablation
from .config import RunConfig, dump_config, load_config
from .core.frames import build_chunk_plan
from .database.container import ContainerRecord, file_sha256, read_container, write_container
from .errors import ConfigError, DataError, DubEngineError
from .model.velocity import load_checkpoint
from .reports.report_writer import ReportWriter
from .sampling.sampler import DubRequest, DubResult, run_dub
from .training.trainer import train
from .utils.scoring import DubScorer
from .world.actor import LatentVideo
from .world.audio import AudioTrack
from .world.dataset import DATASET_KIND, Clip, load_dataset, make_dataset, record_to_clip
from .world.renderer import render

logger = logging.getLogger("dubengine")

LATENT_KIND = "latent"
DATASET_FILE = "dataset.dubc"
DUB_FILE = "dub.dubc"


def setup_logging(verbose: bool = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        force=True,
    )


def prepare_run(args: argparse.Namespace) -> Tuple[RunConfig, Path]:
    """Конфигурация с переопределениями из флагов и каталог вывода"""
    overrides: List[str] = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"out_dir={json.dumps(str(args.out))}")
    if getattr(args, "mode", None) is not None:
        overrides.append(f"sample.mode={json.dumps(args.mode)}")
    if getattr(args, "sdedit_t0", None) is not None:
        overrides.append(f"sample.sdedit_t0={args.sdedit_t0}")
    config = load_config(args.config, overrides)

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(dump_config(config) + "\n", encoding="utf-8")
    return config, out_dir


def write_summary(out_dir: Path, command: str, config: RunConfig, artifacts: Dict[str, Path],
                  extra: Optional[Dict[str, Any]] = None) -> Path:
    """summary.json: артефакты запуска с их sha256"""
    payload = {
        "command": command,
        "version": __version__,
        "seed": config.seed,
        "artifacts": {
            name: {"path": str(path), "sha256": file_sha256(path), "bytes": Path(path).stat().st_size}
            for name, path in sorted(artifacts.items())
        },
    }
    if extra:
        payload.update(extra)
    path = out_dir / "summary.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def dataset_path(config: RunConfig, out_dir: Path) -> Path:
    return Path(config.world.dataset_path) if config.world.dataset_path else out_dir / DATASET_FILE


def require_dataset(config: RunConfig, out_dir: Path) -> List[Clip]:
    path = dataset_path(config, out_dir)
    if not path.exists():
        raise DataError(f"Датасет {path} не найден: сначала выполните generate-data или задайте world.dataset_path")
    clips = load_dataset(path)
    logger.info("Датасет %s: %d клипов", path, len(clips))
    return clips


def load_video(path: Path, index: int) -> LatentVideo:
    """Латентное видео из датасета (запись index) или из результата дубляжа"""
    header, records = read_container(path)
    if header["kind"] == DATASET_KIND:
        if not 0 <= index < len(records):
            raise DataError(f"В датасете {path} нет клипа {index} (всего {len(records)})")
        return record_to_clip(records[index]).video
    if header["kind"] == LATENT_KIND:
        record = records[0]
        return LatentVideo(record.arrays["latent"], fps_pixel=record.meta["fps_pixel"])
    raise DataError(f"Контейнер {path} ('{header['kind']}') не содержит латентного видео")


def load_audio(path: Path, index: int) -> AudioTrack:
    _, records = read_container(path, kind=DATASET_KIND)
    if not 0 <= index < len(records):
        raise DataError(f"В датасете {path} нет клипа {index} (всего {len(records)})")
    return record_to_clip(records[index]).audio


def write_latent(video: LatentVideo, path: Path, attrs: Dict[str, Any]) -> int:
    record = ContainerRecord(name="video", arrays={"latent": video.frames}, meta={"fps_pixel": video.fps_pixel})
    return write_container(path, LATENT_KIND, [record], attrs)


def cmd_generate_data(args: argparse.Namespace) -> int:
    config, out_dir = prepare_run(args)
    world = config.world
    path, size = make_dataset(world.n_clips, world.clip_len, config.seed, dataset_path(config, out_dir),
                              d_audio=world.d_audio, arith=config.frames.arithmetic())
    if world.n_clips == 0:
        logger.warning("n_clips = 0: записан пустой датасет")
        print("ВНИМАНИЕ: датасет пуст (n_clips = 0)", file=sys.stderr)
    write_summary(out_dir, "generate-data", config, {"dataset": path})
    print(f"Клипов: {world.n_clips}, кадров на клип: {world.clip_len}, байт: {size} -> {path}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config, out_dir = prepare_run(args)
    clips = require_dataset(config, out_dir)
    result = train(clips, config.resolved_train(), config.model.hparams(config.world.d_audio),
                   config.frames.arithmetic(), out_dir=out_dir, progress=not args.no_progress)
    extra = {"n_params": result.n_params, "steps": len(result.losses)}
    if result.losses:
        extra.update(initial_loss=result.initial_loss, final_loss=result.final_loss)
    write_summary(out_dir, "train", config,
                  {"checkpoint": result.checkpoint_path, "train_log": result.log_path}, extra)
    print(f"Чекпоинт: {result.checkpoint_path} ({result.n_params} параметров)")
    return 0


def _dub_inputs(args: argparse.Namespace, config: RunConfig, out_dir: Path) -> Tuple[LatentVideo, AudioTrack]:
    default = dataset_path(config, out_dir)
    source = load_video(Path(args.source) if args.source else default, args.source_index)
    audio = load_audio(Path(args.audio) if args.audio else default, args.audio_index)
    return source, audio


def cmd_dub(args: argparse.Namespace) -> int:
    config, out_dir = prepare_run(args)
    checkpoint = Path(args.checkpoint) if args.checkpoint else out_dir / "checkpoint.dubc"
    model, checkpoint_attrs = load_checkpoint(checkpoint)
    source, audio = _dub_inputs(args, config, out_dir)

    arith = config.frames.arithmetic()
    request = DubRequest.build(source, audio, arith)
    result = run_dub(request, model, config.sample)
    logger.info("Дубляж (%s): %d чанков, %d латентных кадров", result.mode, len(result.plan), len(result.video))

    output = out_dir / DUB_FILE
    write_latent(result.video, output, {
        "mode": result.mode,
        "seed": config.sample.seed,
        "ode_steps": config.sample.ode_steps,
        "sdedit_t0": config.sample.sdedit_t0,
        "checkpoint_step": checkpoint_attrs.get("step"),
    })
    writer = ReportWriter()
    report = DubScorer(arith).evaluate(result, source, audio)
    artifacts = {"dub": output, "report": writer.write_report(report, out_dir / "report.json")}
    if args.render:
        render(result.video, out_dir / "frames")
    write_summary(out_dir, "dub", config, artifacts)
    print(f"Результат: {output} (sync {report.sync_corr:.3f}, drift {report.identity_drift_mean:.3f})")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    config, out_dir = prepare_run(args)
    if not args.output:
        raise ConfigError("Для evaluate нужен --output с результатом дубляжа")
    header, _ = read_container(args.output, kind=LATENT_KIND)
    video = load_video(Path(args.output), 0)
    source, audio = _dub_inputs(args, config, out_dir)

    arith = config.frames.arithmetic()
    plan = build_chunk_plan(source.pixel_len(arith), arith)
    result = DubResult(video=video, plan=plan, mode=header["attrs"].get("mode", config.sample.mode))
    scorer = DubScorer(arith)
    report = scorer.evaluate(result, source, audio)
    writer = ReportWriter()
    path = writer.write_report(report, out_dir / "report.json")
    summary = scorer.get_summary(report)
    write_summary(out_dir, "evaluate", config, {"report": path}, {"status": summary["status"]})
    print(f"Статус: {summary['status']}")
    for issue in summary["issues"]:
        print(f"  - {issue}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    config, out_dir = prepare_run(args)
    clips = require_dataset(config, out_dir)
    outcome = run_ablation(config, clips, out_dir)
    passed = sum(1 for check in outcome.checks if check["passed"])
    write_summary(out_dir, "ablate", config, outcome.artifacts,
                  {"checks_passed": passed, "checks_total": len(outcome.checks)})
    print(f"Абляция: {len(outcome.runs)} запусков, проверок выполнено {passed}/{len(outcome.checks)}")
    return 0


COMMANDS = {
    "generate-data": cmd_generate_data,
    "train": cmd_train,
    "dub": cmd_dub,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="JSON файл конфигурации")
    common.add_argument("--out", type=str, default=None, help="Каталог вывода (out_dir)")
    common.add_argument("--seed", type=int, default=None, help="Корневое зерно запуска")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="Переопределение ключа конфигурации, например train.steps=0")
    common.add_argument("--verbose", "-v", action="store_true", help="Подробный лог (DEBUG)")

    inputs = argparse.ArgumentParser(add_help=False)
    inputs.add_argument("--source", type=str, default=None, help="Контейнер с исходным видео")
    inputs.add_argument("--source-index", type=int, default=0)
    inputs.add_argument("--audio", type=str, default=None, help="Датасет с новым аудио")
    inputs.add_argument("--audio-index", type=int, default=1)

    parser = argparse.ArgumentParser(prog="dub-engine", description="Потоковый дубляж видео по аудио")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("generate-data", parents=[common], help="Синтетический датасет")
    train_parser = sub.add_parser("train", parents=[common], help="Обучение модели")
    train_parser.add_argument("--no-progress", action="store_true", help="Без индикатора прогресса")

    dub = sub.add_parser("dub", parents=[common, inputs], help="Дубляж последовательности")
    dub.add_argument("--checkpoint", type=str, default=None)
    dub.add_argument("--mode", choices=["streaming", "i2v", "fl2v"], default=None)
    dub.add_argument("--sdedit-t0", type=float, default=None)
    dub.add_argument("--render", action="store_true", help="Записать PNG кадры")

    evaluate = sub.add_parser("evaluate", parents=[common, inputs], help="Оценка результата дубляжа")
    evaluate.add_argument("--output", type=str, default=None, help="Контейнер результата дубляжа")

    sub.add_parser("ablate", parents=[common], help="Абляция стратегий M0-M3 и режимов")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)
    try:
        return COMMANDS[args.command](args)
    except DubEngineError as e:
        logger.error("%s: %s", type(e).__name__, e)
        print(f"Ошибка ({type(e).__name__}): {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception("Непредвиденная ошибка")
        print(f"Ошибка: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
