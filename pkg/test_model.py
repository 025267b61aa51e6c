"""
Tests for the velocity model, audio alignment and checkpoints
"""

import asyncio

import numpy as np
import pytest
import torch

from dubengine.core.conditioning import assemble_conditioning
from dubengine.errors import AssemblyError, LengthMismatchError, NumericalError
from dubengine.model.velocity import (
    VelocityModel,
    align_audio,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from dubengine.training.trainer import fm_loss
from dubengine.world.audio import gen_audio

SMALL = {"c_lat": 12, "m_ch": 1, "d_audio_tokens": 40, "d_ref": 16, "depth": 1, "width": 32, "heads": 2,
         "audio_window": 2}


def _bundle(batch=(), t=18, seed=0, dtype=torch.float32):
    gen = torch.Generator().manual_seed(seed)
    x_t = torch.randn(batch + (t, 12), generator=gen, dtype=dtype)
    context = torch.randn(batch + (3, 12), generator=gen, dtype=dtype)
    ref = torch.randn(batch + (12,), generator=gen, dtype=dtype)
    tokens = torch.randn(batch + (t + 3, 40), generator=gen, dtype=dtype)
    return assemble_conditioning(x_t, context, ref, tokens)


def test_align_audio_shape():
    audio = gen_audio(81, 0, d_audio=8)
    tokens = align_audio(audio, 21, window=2)
    assert tokens.shape == (21, 40)
    assert tokens.dtype == np.float32


def test_align_audio_pooling_and_edges():
    audio = gen_audio(81, 1, d_audio=8)
    tokens = align_audio(audio, 21, window=2).reshape(21, 5, 8)
    pooled_1 = audio.features[1:5].astype(np.float64).mean(axis=0)
    assert np.allclose(tokens[1, 2], pooled_1, atol=1e-6)
    assert np.allclose(tokens[0, 2], audio.features[0], atol=1e-6)
    # Соседи за левым краем повторяют кадр 0
    assert np.array_equal(tokens[0, 0], tokens[0, 2])
    assert np.array_equal(tokens[20, 4], tokens[20, 2])
    assert np.array_equal(tokens[5, 3], tokens[6, 2])


def test_align_audio_too_short():
    with pytest.raises(LengthMismatchError):
        align_audio(gen_audio(80, 0), 21)


def test_golden_parameter_count():
    assert VelocityModel().count_params() == 1_206_860
    assert VelocityModel(depth=0).count_params() == 4876


def test_parameter_count_grows_with_width():
    assert VelocityModel(width=256).count_params() > VelocityModel(width=128).count_params()


def test_forward_shapes():
    model = build_model(SMALL, seed=0)
    assert model(_bundle(), 0.5).shape == (21, 12)
    assert model(_bundle(batch=(3,)), torch.rand(3)).shape == (3, 21, 12)


def test_depth_zero_forward():
    model = VelocityModel(depth=0, width=32, heads=2)
    assert model(_bundle(), 0.3).shape == (21, 12)


def test_initialization_deterministic():
    first = build_model(SMALL, seed=5)
    second = build_model(SMALL, seed=5)
    bundle = _bundle()
    assert torch.equal(first(bundle, 0.4), second(bundle, 0.4))


def test_batch_duplication_consistent():
    model = build_model(SMALL, seed=1).eval()
    single = _bundle()
    batched = assemble_conditioning(
        single.noisy.expand(2, -1, -1), single.z1[:3].expand(2, -1, -1),
        single.reference[0].expand(2, -1), single.audio_tokens.expand(2, -1, -1),
    )
    with torch.no_grad():
        out_single = model(single, 0.7)
        out_batched = model(batched, 0.7)
    assert torch.allclose(out_batched[0], out_single, atol=1e-5)
    assert torch.allclose(out_batched[1], out_single, atol=1e-5)


def test_audio_window_limits_receptive_field():
    model = build_model(SMALL, seed=2).eval()
    bundle = _bundle()
    tokens = bundle.audio_tokens.clone()
    tokens[15] += 10.0
    changed = assemble_conditioning(bundle.noisy, bundle.z1[:3], bundle.reference[0], tokens)
    with torch.no_grad():
        before = model(bundle, 0.5)
        after = model(changed, 0.5)
    assert torch.allclose(before[:13], after[:13], atol=1e-6)
    assert not torch.allclose(before[15], after[15])


def test_gradient_check_double():
    hparams = dict(SMALL, d_ref=8, width=16)
    model = build_model(hparams, seed=3).double().eval()
    bundle = _bundle(t=2, dtype=torch.float64)
    x_t = bundle.noisy.clone().requires_grad_(True)

    def velocity(x):
        return model(bundle.with_noisy(x), 0.5)

    assert torch.autograd.gradcheck(velocity, (x_t,), eps=1e-6, atol=1e-4)


def test_invalid_inputs():
    model = build_model(SMALL, seed=0)
    with pytest.raises(NumericalError):
        model(_bundle(), float("nan"))
    bundle = _bundle()
    with pytest.raises(AssemblyError):
        model(assemble_conditioning(bundle.noisy, bundle.z1[:3], bundle.reference[0], bundle.audio_tokens,
                                    m_ch=2), 0.5)


def test_checkpoint_round_trip(tmp_path):
    model = build_model(SMALL, seed=4)
    path = tmp_path / "model.dubc"
    save_checkpoint(model, path, step=7, seed=4, extra={"strategy": "m3"})
    loaded, attrs = load_checkpoint(path)
    assert attrs["step"] == 7
    assert attrs["strategy"] == "m3"
    assert attrs["n_params"] == model.count_params()
    for (name, original), (_, restored) in zip(model.state_dict().items(), loaded.state_dict().items()):
        assert torch.equal(original, restored), name


def test_fm_loss_parameter_gradients_match_finite_differences():
    model = build_model(dict(SMALL, width=32, depth=2), seed=5).double()
    gen = torch.Generator().manual_seed(11)
    x_0 = torch.randn(18, 12, generator=gen, dtype=torch.float64)
    context = torch.randn(3, 12, generator=gen, dtype=torch.float64)
    ref = torch.randn(12, generator=gen, dtype=torch.float64)
    tokens = torch.randn(21, 40, generator=gen, dtype=torch.float64)
    noise = torch.randn(18, 12, generator=gen, dtype=torch.float64)
    t = torch.tensor(0.4, dtype=torch.float64)

    def loss():
        return fm_loss(model, x_0, context, ref, tokens, t, noise)

    model.zero_grad()
    loss().backward()

    params = [p for p in model.parameters()]
    sizes = np.array([p.numel() for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    picks = np.random.default_rng(0).choice(int(offsets[-1]), size=64, replace=False)
    eps = 1e-3
    analytic, numeric = [], []
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        i = int(flat - offsets[k])
        values = params[k].data.view(-1)
        analytic.append(float(params[k].grad.view(-1)[i]))
        original = float(values[i])
        with torch.no_grad():
            values[i] = original + eps
            plus = float(loss())
            values[i] = original - eps
            minus = float(loss())
            values[i] = original
        numeric.append((plus - minus) / (2 * eps))

    analytic, numeric = np.array(analytic), np.array(numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    assert scale > 0
    assert np.linalg.norm(analytic - numeric) / scale < 1e-2


def test_build_model_restores_global_rng():
    state = torch.get_rng_state()
    build_model(SMALL, seed=9)
    assert torch.equal(state, torch.get_rng_state())


def test_concurrent_builds_match_serial():
    seeds = list(range(8))
    serial = [build_model(SMALL, seed=s).state_dict() for s in seeds]

    async def build_all():
        return await asyncio.gather(*(asyncio.to_thread(build_model, SMALL, s) for s in seeds))

    for _ in range(3):
        for expected, model in zip(serial, asyncio.run(build_all())):
            for name, tensor in model.state_dict().items():
                assert torch.equal(expected[name], tensor), name
