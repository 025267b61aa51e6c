"""
Абляция стратегий референса и режимов дубляжа на парных зернах

Для каждой стратегии M0-M3 обучается (или загружается) модель, затем все режимы
запускаются на одних и тех же запросах и зернах. Итог - таблицы и проверки
направленных неравенств знаковым тестом.
"""

import asyncio
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import binomtest

from .config import RunConfig, SamplerConfig
from .core.frames import FrameArithmetic
from .model.velocity import VelocityModel, load_checkpoint
from .reports.report_writer import ReportWriter
from .sampling.sampler import DubRequest, run_dub
from .training.trainer import train
from .utils.scoring import DubReport, DubScorer, camera_error
from .world.dataset import Clip, clip_seeds, make_clip, permute_audio_pairs

logger = logging.getLogger(__name__)

STRATEGY_COLUMNS = ["strategy", "sync_corr", "sync_distance", "identity_drift_mean",
                    "boundary_jerk_ratio", "control_strength", "gesture_sync"]
SDEDIT_COLUMNS = ["sdedit_t0", "camera_error"]
SIGNIFICANCE = 0.05


@dataclass
class AblationRun:
    strategy: str
    mode: str
    seed: int
    report: DubReport


@dataclass
class AblationOutcome:
    runs: List[AblationRun]
    strategy_rows: List[Dict[str, Any]]
    sdedit_rows: List[Dict[str, Any]]
    checks: List[Dict[str, Any]]
    artifacts: Dict[str, Path] = field(default_factory=dict)


def sign_test_greater(a: Sequence[float], b: Sequence[float]) -> float:
    """p-значение одностороннего знакового теста для H1: a > b (парные значения)"""
    diffs = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    nonzero = diffs[diffs != 0]
    if len(nonzero) == 0:
        return 1.0
    return float(binomtest(int((nonzero > 0).sum()), len(nonzero), 0.5, alternative="greater").pvalue)


def eval_length(n_chunks: int, arith: FrameArithmetic) -> int:
    """Длина источника в пиксельных кадрах ровно на n_chunks чанков"""
    return arith.chunk_pixel_len + arith.new_pixel_frames * (n_chunks - 1)


def build_eval_requests(config: RunConfig, arith: FrameArithmetic) -> List[DubRequest]:
    """Отложенные длинные клипы с переставленным аудио"""
    length = eval_length(config.ablation.n_chunks, arith)
    n_sources = max(2, config.world.eval_tracks)
    seeds = clip_seeds(config.seed + 1_000_003, n_sources)
    clips = [make_clip(length, seed, index, config.world.d_audio, arith) for index, seed in enumerate(seeds)]
    pairs = permute_audio_pairs(clips, config.seed)
    return [DubRequest.build(source.video, audio, arith) for source, audio in pairs]


def _strategy_seed(run_seed: int, strategy: str) -> int:
    index = ["m0", "m1", "m2", "m3"].index(strategy)
    return int(np.random.SeedSequence([run_seed, index]).generate_state(1)[0] % (2**31))


def _train_strategy(strategy: str, clips: List[Clip], config: RunConfig, arith: FrameArithmetic,
                    out_dir: Path) -> VelocityModel:
    checkpoint = out_dir / strategy / "checkpoint.dubc"
    if checkpoint.exists():
        logger.info("Стратегия %s: загрузка %s", strategy, checkpoint)
        return load_checkpoint(checkpoint)[0]
    train_config = config.resolved_train().model_copy(
        update={"strategy": strategy, "seed": _strategy_seed(config.seed, strategy)}
    )
    hparams = config.model.hparams(config.world.d_audio)
    result = train(clips, train_config, hparams, arith, out_dir=out_dir / strategy)
    logger.info("Стратегия %s: потеря %.4f -> %.4f", strategy, result.initial_loss, result.final_loss)
    return result.model


async def _train_concurrently(strategies, clips, config, arith, out_dir) -> List[VelocityModel]:
    tasks = [asyncio.to_thread(_train_strategy, s, clips, config, arith, out_dir) for s in strategies]
    return list(await asyncio.gather(*tasks))


def train_strategies(strategies: Sequence[str], clips: List[Clip], config: RunConfig, arith: FrameArithmetic,
                     out_dir: Path) -> Dict[str, VelocityModel]:
    """Обучение моделей всех стратегий (последовательно или параллельно)"""
    if config.ablation.concurrent:
        models = asyncio.run(_train_concurrently(strategies, clips, config, arith, out_dir))
    else:
        models = [_train_strategy(s, clips, config, arith, out_dir) for s in strategies]
    return dict(zip(strategies, models))


def _mean_metric(runs: List[AblationRun], strategy: str, mode: str, metric: str) -> List[float]:
    return [getattr(r.report, metric) for r in runs if r.strategy == strategy and r.mode == mode]


def _check(name: str, a: List[float], b: List[float], rule: str = "significant") -> Dict[str, Any]:
    """rule: significant (среднее больше и p < 0.05), greater (строго больше), at_least (не меньше)"""
    mean_a, mean_b = float(np.mean(a)), float(np.mean(b))
    p_value = sign_test_greater(a, b)
    if rule == "significant":
        passed = mean_a > mean_b and p_value < SIGNIFICANCE
    elif rule == "greater":
        passed = mean_a > mean_b
    else:
        passed = mean_a >= mean_b
    return {"name": name, "mean_a": mean_a, "mean_b": mean_b, "p_value": p_value, "passed": bool(passed)}


def directional_checks(runs: List[AblationRun], sdedit_rows: List[Dict[str, Any]], main: str = "m3") -> List[Dict[str, Any]]:
    """Проверки направленных неравенств между режимами и стратегиями"""
    checks = []
    streaming = "streaming"
    if _mean_metric(runs, main, "i2v", "identity_drift_mean"):
        checks.append(_check("identity_drift(i2v) > identity_drift(streaming)",
                             _mean_metric(runs, main, "i2v", "identity_drift_mean"),
                             _mean_metric(runs, main, streaming, "identity_drift_mean")))
    if _mean_metric(runs, main, "fl2v", "boundary_jerk_ratio"):
        checks.append(_check("boundary_jerk(fl2v) > boundary_jerk(streaming)",
                             _mean_metric(runs, main, "fl2v", "boundary_jerk_ratio"),
                             _mean_metric(runs, main, streaming, "boundary_jerk_ratio")))
    strategies = {r.strategy for r in runs}
    if {"m1", "m3"} <= strategies:
        checks.append(_check("control_strength(m1) > control_strength(m3)",
                             _mean_metric(runs, "m1", streaming, "control_strength"),
                             _mean_metric(runs, "m3", streaming, "control_strength"), rule="greater"))
        checks.append(_check("sync(m3) >= sync(m1)",
                             _mean_metric(runs, "m3", streaming, "sync_corr"),
                             _mean_metric(runs, "m1", streaming, "sync_corr"), rule="at_least"))
    if {"m2", "m3"} <= strategies:
        checks.append(_check("identity_drift(m2) > identity_drift(m3)",
                             _mean_metric(runs, "m2", streaming, "identity_drift_mean"),
                             _mean_metric(runs, "m3", streaming, "identity_drift_mean"), rule="greater"))
    if len(sdedit_rows) > 1:
        errors = [row["camera_error"] for row in sdedit_rows]
        monotone = all(b >= a for a, b in zip(errors, errors[1:]))
        checks.append({"name": "camera_error non-decreasing in sdedit_t0", "mean_a": errors[0],
                       "mean_b": errors[-1], "p_value": None, "passed": monotone})
    return checks


def run_ablation(config: RunConfig, clips: List[Clip], out_dir: Path,
                 writer: Optional[ReportWriter] = None) -> AblationOutcome:
    """Полная абляция: обучение, парные запуски, таблицы и проверки"""
    arith = config.frames.arithmetic()
    writer = writer or ReportWriter()
    scorer = DubScorer(arith)
    out_dir = Path(out_dir)
    strategies = list(dict.fromkeys(config.ablation.strategies))
    modes = list(dict.fromkeys(config.ablation.modes))

    models = train_strategies(strategies, clips, config, arith, out_dir)
    requests = build_eval_requests(config, arith)

    runs: List[AblationRun] = []
    for strategy in strategies:
        for mode in modes:
            for seed in range(config.ablation.seeds):
                request = requests[seed % len(requests)]
                sampler = SamplerConfig(ode_steps=config.sample.ode_steps, mode=mode, seed=seed)
                result = run_dub(request, models[strategy], sampler)
                report = scorer.evaluate(result, request.source_video, request.new_audio)
                runs.append(AblationRun(strategy=strategy, mode=mode, seed=seed, report=report))
            logger.info("Абляция: %s/%s - %d запусков", strategy, mode, config.ablation.seeds)

    main = "m3" if "m3" in strategies else strategies[-1]
    sdedit_rows = []
    for t0 in sorted(config.ablation.sdedit_t0s):
        errors = []
        for seed in range(config.ablation.seeds):
            request = requests[seed % len(requests)]
            sampler = SamplerConfig(ode_steps=config.sample.ode_steps, mode="streaming", seed=seed, sdedit_t0=t0)
            video = run_dub(request, models[main], sampler).video
            errors.append(camera_error(video, request.source_video))
        sdedit_rows.append({"sdedit_t0": float(t0), "camera_error": float(np.mean(errors))})

    strategy_rows = []
    for strategy in strategies:
        row: Dict[str, Any] = {"strategy": strategy}
        for column in STRATEGY_COLUMNS[1:]:
            row[column] = float(np.mean(_mean_metric(runs, strategy, "streaming", column) or [np.nan]))
        strategy_rows.append(row)

    checks = directional_checks(runs, sdedit_rows, main)
    all_rows = writer.table_rows([{"mode": r.mode, "strategy": r.strategy, "seed": r.seed, "report": r.report}
                                  for r in runs])
    artifacts = {
        "ablation_runs": writer.write_table(all_rows, out_dir / "ablation_runs.csv"),
        "ablation_strategies": writer.write_table(strategy_rows, out_dir / "ablation.csv", STRATEGY_COLUMNS),
        "sdedit": writer.write_table(sdedit_rows, out_dir / "sdedit.csv", SDEDIT_COLUMNS),
        "checks": writer.write_json({"checks": checks}, out_dir / "checks.json"),
    }
    summaries = [scorer.get_summary(r.report) for r in runs if r.strategy == main and r.mode == "streaming"]
    recommendations = list(dict.fromkeys(item for s in summaries for item in s["recommendations"]))
    artifacts["summary_html"] = writer.write_summary(
        out_dir / "ablation.html", title="Абляция стратегий референса", rows=strategy_rows,
        columns=STRATEGY_COLUMNS, checks=checks, recommendations=recommendations,
    )
    for check in checks:
        logger.info("%s: %s (%.4f vs %.4f)", check["name"], "OK" if check["passed"] else "FAIL",
                    check["mean_a"], check["mean_b"])
    return AblationOutcome(runs=runs, strategy_rows=strategy_rows, sdedit_rows=sdedit_rows, checks=checks,
                           artifacts=artifacts)
