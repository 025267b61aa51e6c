"""
Tests for frame arithmetic and chunk planning
"""

import pytest

from dubengine.core.frames import (
    DEFAULT_ARITHMETIC,
    FrameArithmetic,
    build_chunk_plan,
    latent_to_pixel,
    pixel_to_latent,
)
from dubengine.errors import AlignmentError, TooShortError


def test_pixel_latent_constants():
    """Test the context and chunk sizes"""
    assert pixel_to_latent(9) == 3
    assert pixel_to_latent(81) == 21
    assert latent_to_pixel(3) == 9
    assert latent_to_pixel(21) == 81
    assert DEFAULT_ARITHMETIC.context_latent_len == 3
    assert DEFAULT_ARITHMETIC.noisy_latent_len == 18
    assert DEFAULT_ARITHMETIC.new_pixel_frames == 72


def test_round_trip_up_to_ten_thousand():
    for t_lat in range(1, 10_001):
        assert pixel_to_latent(latent_to_pixel(t_lat)) == t_lat


def test_unaligned_length_rejected():
    with pytest.raises(AlignmentError):
        pixel_to_latent(80)
    with pytest.raises(AlignmentError):
        pixel_to_latent(0)
    with pytest.raises(AlignmentError):
        latent_to_pixel(0)


def test_invalid_arithmetic_rejected():
    with pytest.raises(AlignmentError):
        FrameArithmetic(temporal_stride=4, chunk_pixel_len=80)
    with pytest.raises(AlignmentError):
        FrameArithmetic(temporal_stride=4, chunk_pixel_len=81, context_pixel_len=81)


def test_latent_index_uses_ceiling():
    arith = DEFAULT_ARITHMETIC
    assert arith.latent_index(0) == 0
    assert arith.latent_index(1) == 1
    assert arith.latent_index(4) == 1
    assert arith.latent_index(5) == 2
    assert arith.latent_index(81) == 21
    for index in range(1, 30):
        start, end = arith.pixel_span_of_latent(index)
        assert all(arith.latent_index(p) == index for p in range(start, end))


def test_plan_two_chunks():
    plan = build_chunk_plan(153)
    assert len(plan) == 2
    first, second = plan.chunks
    assert first.pixel_span == (0, 81)
    assert first.latent_span == (0, 21)
    assert first.context_source == "none"
    assert second.pixel_span == (72, 153)
    assert second.latent_span == (18, 39)
    assert second.context_source == "previous_output"
    assert second.emit_pixel_span == (81, 153)
    assert second.emit_latent_span == (21, 39)
    assert plan.seam_latent_indices() == [21]
    assert plan.total_latent_frames == 39


def test_plan_single_chunk():
    plan = build_chunk_plan(81)
    assert len(plan) == 1
    assert plan.chunks[0].context_source == "none"
    assert plan.chunks[0].emit_latent_span == (0, 21)


def test_plan_unaligned_total():
    plan = build_chunk_plan(200)
    assert [c.pixel_span for c in plan.chunks] == [(0, 81), (72, 153), (119, 200)]
    assert plan.chunks[2].latent_span is None
    assert not plan.aligned


def test_plan_right_aligned_final_chunk():
    plan = build_chunk_plan(405)
    assert len(plan) == 6
    last = plan.chunks[-1]
    assert last.pixel_span == (324, 405)
    assert last.latent_span == (81, 102)
    assert last.emit_pixel_span == (369, 405)
    assert last.emit_latent_span == (93, 102)
    assert all(c.reference_pixel_index == c.pixel_span[0] for c in plan.chunks)


def test_plan_too_short():
    with pytest.raises(TooShortError):
        build_chunk_plan(80)


@pytest.mark.parametrize("total", list(range(81, 1200, 4)) + [82, 100, 200, 333, 1001])
def test_plan_emits_every_frame_once(total):
    plan = build_chunk_plan(total)
    covered = []
    for chunk in plan.chunks:
        start, end = chunk.emit_pixel_span
        assert chunk.pixel_span[0] <= start < end == chunk.pixel_span[1]
        covered.extend(range(start, end))
    assert covered == list(range(total))


@pytest.mark.parametrize("total", range(81, 1200, 4))
def test_aligned_plan_emits_every_latent_frame_once(total):
    plan = build_chunk_plan(total)
    assert plan.aligned
    covered = []
    for chunk in plan.chunks:
        covered.extend(range(*chunk.emit_latent_span))
    assert covered == list(range(plan.total_latent_frames))


def test_plan_to_dict():
    data = build_chunk_plan(153).to_dict()
    assert data["total_pixel_frames"] == 153
    assert data["chunks"][1]["latent_span"] == [18, 39]
