"""
Tests for dubbing metrics, DubScorer summaries, report writing and sign tests
"""

import json

import numpy as np
import pytest

from dubengine.ablation import directional_checks, eval_length, sign_test_greater, AblationRun
from dubengine.core.frames import build_chunk_plan
from dubengine.errors import DataError, LengthMismatchError
from dubengine.reports.report_writer import TABLE_COLUMNS, ReportWriter
from dubengine.sampling.sampler import DubResult
from dubengine.utils.scoring import (
    DubReport,
    DubScorer,
    adaptive_control,
    boundary_jerk,
    camera_error,
    control_strength,
    identity_drift,
    lagged_correlation,
    sync_distance,
    sync_score,
    sync_score_detail,
)
from dubengine.world.actor import LatentVideo
from dubengine.world.dataset import make_clip


def _with_mouth(video, mouth):
    frames = video.frames.copy()
    frames[:, 0] = mouth
    return LatentVideo(frames, video.fps_pixel)


def _report(**overrides):
    values = dict(sync_corr=0.9, sync_distance=0.01, gesture_sync=0.5, identity_drift_mean=0.0,
                  identity_drift_max=0.0, boundary_jerk_ratio=1.0, control_strength=0.5,
                  camera_error=0.0, adaptive_control=0.0)
    values.update(overrides)
    return DubReport(**values)


def test_sync_ground_truth():
    clip = make_clip(405, seed=8)
    assert sync_score(clip.video, clip.audio) == pytest.approx(1.0, abs=1e-6)
    assert sync_distance(clip.video, clip.audio) == pytest.approx(0.0, abs=1e-6)


def test_sync_noise_mouth_is_low():
    hits = 0
    n_seeds = 40
    for seed in range(n_seeds):
        clip = make_clip(397, seed=seed)
        noise = np.random.default_rng(1000 + seed).normal(size=len(clip.video))
        if abs(sync_score(_with_mouth(clip.video, noise), clip.audio)) < 0.2:
            hits += 1
    assert hits >= 0.8 * n_seeds


def test_sync_time_reversed_mouth_is_worse():
    clip = make_clip(405, seed=9)
    reversed_video = _with_mouth(clip.video, clip.video.mouth[::-1])
    assert sync_score(reversed_video, clip.audio) < sync_score(clip.video, clip.audio)


def test_sync_constant_mouth_is_degenerate():
    clip = make_clip(405, seed=10)
    value, degenerate = sync_score_detail(_with_mouth(clip.video, 0.3), clip.audio)
    assert value == 0.0
    assert degenerate


def test_lagged_correlation_finds_shift():
    signal = np.sin(np.linspace(0, 8 * np.pi, 100, endpoint=False))
    value, degenerate = lagged_correlation(signal, np.roll(signal, 2))
    assert value == pytest.approx(1.0)
    assert not degenerate
    with pytest.raises(LengthMismatchError):
        lagged_correlation(signal, signal[:50])


def test_identity_drift():
    clip = make_clip(165, seed=3)
    assert identity_drift(clip.video, clip.actor.identity_code) == pytest.approx((0.0, 0.0), abs=1e-6)
    frames = clip.video.frames.copy()
    frames[10:, 5] += 0.5
    mean, maximum = identity_drift(LatentVideo(frames), clip.actor.identity_code)
    assert maximum == pytest.approx(0.5, abs=1e-6)
    assert 0.0 < mean < 0.5


def _circle_video(n):
    frames = np.zeros((n, 12))
    angle = 0.3 * np.arange(n)
    frames[:, 1] = np.cos(angle)
    frames[:, 2] = np.sin(angle)
    return LatentVideo(frames)


def test_boundary_jerk_smooth_signal():
    plan = build_chunk_plan(153)
    assert boundary_jerk(_circle_video(39), plan) == pytest.approx(1.0, abs=1e-4)


def test_boundary_jerk_step_discontinuity():
    plan = build_chunk_plan(153)
    video = _circle_video(39)
    frames = video.frames.copy()
    frames[21:, 3] += 5.0
    assert boundary_jerk(LatentVideo(frames), plan) > 3.0


def test_boundary_jerk_needs_two_chunks():
    with pytest.raises(DataError):
        boundary_jerk(_circle_video(21), build_chunk_plan(81))


def test_control_strength():
    clip = make_clip(165, seed=4)
    frame = clip.video.frames[5]
    assert control_strength(clip.video, frame, 5) == pytest.approx(1.0)
    assert control_strength(clip.video, frame + 10.0, 5) < 1e-6
    with pytest.raises(DataError):
        control_strength(clip.video, frame, len(clip.video))


def test_camera_error():
    clip = make_clip(165, seed=5)
    assert camera_error(clip.video, clip.video) == 0.0
    frames = clip.video.frames.copy()
    frames[:, 9] += 0.3
    assert camera_error(LatentVideo(frames), clip.video) == pytest.approx(0.3, abs=1e-6)
    with pytest.raises(LengthMismatchError):
        camera_error(LatentVideo(frames[:10]), clip.video)


def test_adaptive_control():
    assert adaptive_control([0.1, 0.5, 1.0], [0.2, 0.4, 0.9]) > 0.9
    assert adaptive_control([0.1], [0.2]) == 0.0
    with pytest.raises(LengthMismatchError):
        adaptive_control([0.1, 0.2], [0.3])


def test_report_rejects_nonfinite():
    with pytest.raises(DataError):
        _report(sync_corr=float("nan"))


def test_scorer_on_ground_truth():
    clip = make_clip(153, seed=6)
    result = DubResult(video=clip.video, plan=build_chunk_plan(153), mode="streaming")
    scorer = DubScorer()
    report = scorer.evaluate(result, clip.video, clip.audio)
    assert report.sync_corr == pytest.approx(1.0, abs=1e-6)
    assert report.identity_drift_mean == pytest.approx(0.0, abs=1e-6)
    assert report.camera_error == 0.0
    assert report.meta == {"mode": "streaming", "n_chunks": 2}


def test_scorer_summary_levels():
    scorer = DubScorer()
    good = scorer.get_summary(_report())
    assert good["status"] == "good"
    assert good["issues"] == []
    bad = scorer.get_summary(_report(sync_corr=0.1, identity_drift_mean=0.5, boundary_jerk_ratio=5.0))
    assert bad["status"] == "critical"
    assert bad["levels"]["sync_corr"] == "critical"
    assert len(bad["issues"]) == 3
    assert len(bad["recommendations"]) == len(set(bad["recommendations"]))
    assert scorer.metric_level("identity_drift_mean", 0.2) == "warning"


def test_report_writer_csv_and_json(tmp_path):
    writer = ReportWriter()
    rows = writer.table_rows([{"mode": "streaming", "strategy": "m3", "seed": 0, "report": _report()}])
    text = writer.render_csv(rows)
    header, line = text.strip().split("\n")
    assert header.split(",") == TABLE_COLUMNS
    assert line.startswith("streaming,m3,0,0.900000")
    path = writer.write_report(_report(), tmp_path / "report.json")
    assert json.loads(path.read_text())["sync_corr"] == 0.9


def test_report_writer_summary_html(tmp_path):
    writer = ReportWriter()
    checks = [{"name": "a > b", "mean_a": 1.0, "mean_b": 0.5, "p_value": 0.01, "passed": True}]
    path = writer.write_summary(tmp_path / "summary.html", title="Ablation", rows=[{"strategy": "m3", "x": 0.5}],
                                columns=["strategy", "x"], checks=checks, recommendations=["<more steps>"])
    html = path.read_text(encoding="utf-8")
    assert "a &gt; b" in html
    assert "0.5000" in html
    assert "&lt;more steps&gt;" in html


def test_sign_test():
    assert sign_test_greater([2.0] * 10, [1.0] * 10) == pytest.approx(0.5**10)
    assert sign_test_greater([1.0] * 5, [1.0] * 5) == 1.0
    assert sign_test_greater([0.0] * 10, [1.0] * 10) == pytest.approx(1.0)


def test_eval_length():
    assert eval_length(10, build_chunk_plan(81).arith) == 729
    assert len(build_chunk_plan(729)) == 10


def test_directional_checks():
    runs = []
    for seed in range(10):
        runs.append(AblationRun("m3", "streaming", seed, _report(identity_drift_mean=0.1, boundary_jerk_ratio=1.0)))
        runs.append(AblationRun("m3", "i2v", seed, _report(identity_drift_mean=0.4)))
        runs.append(AblationRun("m3", "fl2v", seed, _report(boundary_jerk_ratio=4.0)))
    sdedit_rows = [{"sdedit_t0": 0.2, "camera_error": 0.1}, {"sdedit_t0": 1.0, "camera_error": 0.5}]
    checks = {c["name"]: c for c in directional_checks(runs, sdedit_rows)}
    assert checks["identity_drift(i2v) > identity_drift(streaming)"]["passed"]
    assert checks["boundary_jerk(fl2v) > boundary_jerk(streaming)"]["passed"]
    assert checks["camera_error non-decreasing in sdedit_t0"]["passed"]


def _strategy_runs(m1, m2, m3):
    runs = []
    for seed in range(4):
        runs.append(AblationRun("m1", "streaming", seed, _report(**m1)))
        runs.append(AblationRun("m2", "streaming", seed, _report(**m2)))
        runs.append(AblationRun("m3", "streaming", seed, _report(**m3)))
    return runs


def test_strategy_checks_reject_ties():
    tied = dict(control_strength=0.5, identity_drift_mean=0.1, sync_corr=0.8)
    checks = {c["name"]: c for c in directional_checks(_strategy_runs(tied, tied, tied), [])}
    assert not checks["control_strength(m1) > control_strength(m3)"]["passed"]
    assert not checks["identity_drift(m2) > identity_drift(m3)"]["passed"]
    assert checks["sync(m3) >= sync(m1)"]["passed"]


def test_strategy_checks_pass_on_strict_ordering():
    runs = _strategy_runs(dict(control_strength=0.9, sync_corr=0.7), dict(identity_drift_mean=0.3),
                          dict(control_strength=0.4, identity_drift_mean=0.1, sync_corr=0.8))
    assert all(c["passed"] for c in directional_checks(runs, []))


def test_checks_serialize_as_strict_json(tmp_path):
    sdedit_rows = [{"sdedit_t0": 0.2, "camera_error": 0.1}, {"sdedit_t0": 1.0, "camera_error": 0.1}]
    checks = directional_checks([], sdedit_rows)
    assert checks[0]["p_value"] is None
    assert checks[0]["passed"]
    path = ReportWriter().write_json({"checks": checks}, tmp_path / "checks.json")

    def reject(constant):
        raise ValueError(constant)

    assert json.loads(path.read_text(), parse_constant=reject)["checks"][0]["p_value"] is None
    html = ReportWriter().render_summary(title="t", rows=[], columns=[], checks=checks, recommendations=[])
    assert "None" not in html
