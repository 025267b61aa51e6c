"""
End-to-end checks on trained models: sign convention, ablation inequalities, SDEdit and conditioning sensitivity
"""

import json

import numpy as np
import pytest
import torch

from dubengine.ablation import run_ablation
from dubengine.config import SamplerConfig, load_config
from dubengine.core.conditioning import ConditioningBundle, assemble_conditioning
from dubengine.model.velocity import align_audio, build_model, load_checkpoint
from dubengine.sampling.sampler import DubRequest, ode_solve, run_dub
from dubengine.training.trainer import fm_loss
from dubengine.world.dataset import clip_seeds, make_clip

pytestmark = pytest.mark.slow


def test_fm_loss_and_ode_solve_share_sign_convention():
    model = build_model({"c_lat": 1, "m_ch": 1, "d_audio_tokens": 1, "d_ref": 4, "depth": 1, "width": 32,
                         "heads": 2, "audio_window": 2}, seed=0)
    optimizer = torch.optim.Adam(model.parameters(), lr=3e-3)
    gen = torch.Generator().manual_seed(0)
    batch = 256
    data_mean = 0.7
    for _ in range(1500):
        x_0 = data_mean + 0.1 * torch.randn(batch, 1, 1, generator=gen)
        noise = torch.randn(batch, 1, 1, generator=gen)
        t = torch.rand(batch, generator=gen)
        loss = fm_loss(model, x_0, None, torch.zeros(batch, 1), torch.zeros(batch, 1, 1), t, noise)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

    model.eval()
    n = 2048
    cond = assemble_conditioning(torch.zeros(n, 1, 1), None, torch.zeros(n, 1), torch.zeros(n, 1, 1))
    samples = ode_solve(model, cond, 50, torch.Generator().manual_seed(1))
    assert abs(float(samples.mean()) - data_mean) < 0.05


@pytest.fixture(scope="module")
def ablation(tmp_path_factory):
    config = load_config()
    out = tmp_path_factory.mktemp("ablation")
    seeds = clip_seeds(config.seed, config.world.n_clips)
    clips = [make_clip(config.world.clip_len, seed, index) for index, seed in enumerate(seeds)]
    outcome = run_ablation(config, clips, out)
    return config, outcome, out


def _checks(outcome):
    return {check["name"]: check for check in outcome.checks}


def test_ablation_trains_synced_model(ablation):
    _, outcome, _ = ablation
    row = next(r for r in outcome.strategy_rows if r["strategy"] == "m3")
    assert row["sync_corr"] >= 0.6


def test_i2v_drifts_more_than_streaming(ablation):
    _, outcome, _ = ablation
    check = _checks(outcome)["identity_drift(i2v) > identity_drift(streaming)"]
    assert check["passed"]
    assert check["p_value"] < 0.05


def test_fl2v_jerks_more_than_streaming(ablation):
    _, outcome, _ = ablation
    check = _checks(outcome)["boundary_jerk(fl2v) > boundary_jerk(streaming)"]
    assert check["passed"]
    assert check["p_value"] < 0.05


def test_reference_strategy_ordering(ablation):
    _, outcome, _ = ablation
    checks = _checks(outcome)
    assert checks["control_strength(m1) > control_strength(m3)"]["passed"]
    assert checks["identity_drift(m2) > identity_drift(m3)"]["passed"]
    assert checks["sync(m3) >= sync(m1)"]["passed"]


def test_sdedit_camera_error_grows_with_t0(ablation):
    config, outcome, out = ablation
    assert [row["sdedit_t0"] for row in outcome.sdedit_rows] == sorted(config.ablation.sdedit_t0s)
    assert _checks(outcome)["camera_error non-decreasing in sdedit_t0"]["passed"]
    json.loads((out / "checks.json").read_text())


def test_sdedit_zero_returns_source_with_trained_model(ablation):
    _, _, out = ablation
    model, _ = load_checkpoint(out / "m3" / "checkpoint.dubc")
    source = make_clip(153, seed=77)
    donor = make_clip(153, seed=78, kind_index=1)
    request = DubRequest.build(source.video, donor.audio)
    result = run_dub(request, model, SamplerConfig(sdedit_t0=0.0))
    assert np.array_equal(result.video.frames, source.video.frames)


@pytest.fixture(scope="module")
def trained_bundle(ablation):
    _, _, out = ablation
    model, _ = load_checkpoint(out / "m3" / "checkpoint.dubc")
    model.eval()
    clip = make_clip(405, seed=91)
    frames = torch.from_numpy(clip.video.frames[:21].copy())
    tokens = torch.from_numpy(align_audio(clip.audio, len(clip.video), model.audio_window)[:21].copy())
    x_t = torch.randn(18, 12, generator=torch.Generator().manual_seed(3))
    bundle = assemble_conditioning(x_t, frames[:3], frames[0], tokens)
    return model, bundle, frames, tokens, x_t


def _l2(a, b):
    return float(torch.linalg.norm(a - b))


@torch.no_grad()
def test_trained_model_depends_on_audio(trained_bundle):
    model, bundle, frames, tokens, x_t = trained_bundle
    silent = assemble_conditioning(x_t, frames[:3], frames[0], torch.zeros_like(tokens))
    assert _l2(model(bundle, 0.5), model(silent, 0.5)) > 0


@torch.no_grad()
def test_trained_model_is_not_permutation_equivariant(trained_bundle):
    model, bundle, _, _, _ = trained_bundle
    order = torch.randperm(bundle.length, generator=torch.Generator().manual_seed(4))
    permuted = ConditioningBundle(z=bundle.z[order], audio_tokens=bundle.audio_tokens[order],
                                  reference=bundle.reference, noisy_span=bundle.noisy_span,
                                  c_lat=bundle.c_lat, m_ch=bundle.m_ch)
    assert _l2(model(permuted, 0.5), model(bundle, 0.5)[order]) > 0


@torch.no_grad()
def test_trained_model_depends_on_reference(trained_bundle):
    model, bundle, frames, tokens, x_t = trained_bundle
    other = torch.from_numpy(make_clip(81, seed=92, kind_index=2).video.frames[0].copy())
    swapped = assemble_conditioning(x_t, frames[:3], other, tokens)
    assert _l2(model(bundle, 0.5), model(swapped, 0.5)) > 0
