"""Tests for augmentation baselines and selective expansion.

The selection tests use a stub embedder/head pair whose predictions are a
fixed function of two pixel slots, so qualification and ranking outcomes
are derivable by hand instead of depending on the toy renderer.
"""

import numpy as np
import pytest

import expandforge.augment as ag
import expandforge.backends as bk
import expandforge.latentmath as lm
from expandforge.errors import ParameterError, ShapeError
from expandforge.rng import RngStream


def _stream(*parts):
    return RngStream.root(0).child("aug", *parts)


def _const_image(value=0.9, side=16, channels=1):
    return bk.Image(np.full((side, side, channels), value))


# ------------------------------------------------------------------ cutout


def test_cutout_masks_exact_square():
    img = _const_image(0.9, side=16)
    out = ag.cutout(img, 0.5, _stream("co"))
    changed = out.pixels != img.pixels
    # side = round(0.5 * 16) = 8, so exactly 64 pixels flip to 0.5
    assert int(changed.sum()) == 64
    ys, xs, _ = np.nonzero(changed)
    assert ys.max() - ys.min() + 1 == 8 and xs.max() - xs.min() + 1 == 8
    assert np.all(out.pixels[changed] == 0.5)
    assert np.array_equal(out.pixels[~changed], img.pixels[~changed])


def test_cutout_full_frac_blanks_everything():
    out = ag.cutout(_const_image(0.9, side=8), 1.0, _stream("co-full"))
    assert np.all(out.pixels == 0.5)


def test_cutout_deterministic():
    img = _const_image(0.8, side=12)
    a = ag.cutout(img, 0.4, _stream("co-det"))
    b = ag.cutout(img, 0.4, _stream("co-det"))
    c = ag.cutout(img, 0.4, _stream("co-det-alt"))
    assert np.array_equal(a.pixels, b.pixels)
    assert not np.array_equal(a.pixels, c.pixels)


def test_cutout_zero_frac_is_identity():
    img = _const_image(0.9, side=16)
    out = ag.cutout(img, 0.0, _stream("co-zero"))
    assert np.array_equal(out.pixels, img.pixels)
    # a frac whose side rounds to zero is also an identity
    tiny = ag.cutout(img, 0.01, _stream("co-tiny"))
    assert np.array_equal(tiny.pixels, img.pixels)


def test_cutout_rejects_out_of_range_fracs():
    img = _const_image()
    for frac in (-0.2, 1.5):
        with pytest.raises(ParameterError):
            ag.cutout(img, frac, _stream("co-bad"))


# ---------------------------------------------------------------- gridmask


def test_gridmask_reference_count():
    # 16x16, period 8, keep 0.5: holes are 4x4 at each of the 2x2 cell
    # corners per axis pair, 8 masked rows x 8 masked cols = 64 pixels
    img = _const_image(0.9, side=16)
    out = ag.gridmask(img, period=8, keep_ratio=0.5, phase=(0, 0))
    changed = out.pixels != img.pixels
    assert int(changed.sum()) == 64
    assert np.all(out.pixels[changed] == 0.5)
    yy = (np.arange(16)[:, None]) % 8 < 4
    xx = (np.arange(16)[None, :]) % 8 < 4
    assert np.array_equal(changed[:, :, 0], yy & xx)


def test_gridmask_phase_shifts_the_grid():
    img = _const_image(0.9, side=16)
    base = ag.gridmask(img, 8, 0.5, phase=(0, 0))
    moved = ag.gridmask(img, 8, 0.5, phase=(3, 5))
    assert int((moved.pixels != img.pixels).sum()) == 64
    rolled = np.roll(base.pixels, shift=(-3, -5), axis=(0, 1))
    assert np.array_equal(moved.pixels, rolled)


def test_gridmask_keep_one_is_identity():
    img = _const_image(0.7, side=12)
    out = ag.gridmask(img, 4, 1.0)
    assert np.array_equal(out.pixels, img.pixels)


def test_gridmask_rejects_bad_params():
    img = _const_image()
    with pytest.raises(ParameterError):
        ag.gridmask(img, 1, 0.5)
    with pytest.raises(ParameterError):
        ag.gridmask(img, 8, 0.0)
    with pytest.raises(ParameterError):
        ag.gridmask(img, 8, 1.5)
    with pytest.raises(ParameterError):
        ag.gridmask(img, 8, 0.5, phase=(1,))


# --------------------------------------------------------------- rand_lite


def test_translate_paste_arithmetic():
    px = np.arange(9, dtype=np.float64).reshape(3, 3, 1) / 10.0
    out = ag._translate(px, 1, 0)
    assert np.all(out[0] == 0.5)
    assert np.array_equal(out[1:], px[:2])
    out = ag._translate(px, 0, -1)
    assert np.all(out[:, 2] == 0.5)
    assert np.array_equal(out[:, :2], px[:, 1:])


def test_rand_lite_deterministic_and_bounded():
    data = bk.gen_toy_dataset(4, 2, 16, seed=3)
    img = data.images[0]
    a = ag.rand_lite(img, _stream("rl"))
    b = ag.rand_lite(img, _stream("rl"))
    assert np.array_equal(a.pixels, b.pixels)
    assert a.pixels.shape == img.pixels.shape
    assert np.all(a.pixels >= 0.0) and np.all(a.pixels <= 1.0)
    outputs = [ag.rand_lite(img, _stream("rl", i)) for i in range(10)]
    distinct = sum(
        not np.array_equal(out.pixels, img.pixels) for out in outputs
    )
    assert distinct >= 8


def test_rand_lite_requires_square_images():
    img = bk.Image(np.full((8, 12, 1), 0.5))
    with pytest.raises(ShapeError):
        ag.rand_lite(img, _stream("rl-rect"))


# ------------------------------------------------------ selective expansion


class _StubAugmenter:
    """Writes one uniform draw into pixel (0, 0, 0) and leaves the rest."""

    def __call__(self, image, rng_stream):
        px = image.pixels.astype(np.float64).copy()
        px[0, 0, 0] = rng_stream.generator().uniform()
        return bk.Image(px)


class _StubEmbedder:
    def embed(self, image):
        return np.array([image.pixels[0, 0, 0], image.pixels[1, 1, 0]], dtype=np.float64)


class _StubHead:
    """Marker pixel selects the regime: marker 0 seeds qualify more with
    larger u (entropy rises toward uniform), marker 1 seeds never qualify
    (entropy falls as u grows)."""

    def predict(self, e):
        u, marker = float(e[0]), float(e[1])
        if marker < 0.5:
            p = 0.9 - 0.4 * u
        else:
            p = 0.35 - 0.1 * u
        return lm.Prediction.from_probs(np.array([p, 1.0 - p]))


def _stub_seeds():
    # the noise slot starts at exactly zero so every candidate's draw moves
    # the stub prediction in the intended direction
    a = np.full((4, 4, 1), 0.2)
    a[0, 0, 0] = 0.0
    b = a.copy()
    b[1, 1, 0] = 1.0
    return [bk.Image(a), bk.Image(b)]


def _stub_u(stream, j, c):
    return stream.child("seed", j, "cand", c).generator().uniform()


def test_sample_wise_fills_exact_quota_per_seed():
    seeds = _stub_seeds()
    stream = _stream("sw")
    images, records = ag.selective_expand(
        seeds, _StubAugmenter(), _StubEmbedder(), _StubHead(), 2, stream,
        mode="sample_wise", candidate_budget=6,
    )
    assert len(images) == 4 and len(records) == 4
    assert [r.seed_index for r in records] == [0, 0, 1, 1]
    # seed 0 candidates all qualify; top 2 are the largest noise draws
    u0 = sorted((_stub_u(stream, 0, c) for c in range(6)), reverse=True)
    picked0 = sorted(img.pixels[0, 0, 0] for img in images[:2])
    assert np.allclose(sorted(u0[:2]), picked0)
    assert all(r.qualified for r in records[:2])
    # seed 1 has no qualified candidates: consistent ones pad the quota,
    # best (least negative) gain first, which means the smallest draws
    u1 = sorted(_stub_u(stream, 1, c) for c in range(6))
    picked1 = sorted(img.pixels[0, 0, 0] for img in images[2:])
    assert np.allclose(u1[:2], picked1)
    assert all(r.consistent and not r.qualified for r in records[2:])


def test_sample_agnostic_can_starve_a_seed():
    seeds = _stub_seeds()
    stream = _stream("sa")
    images, records = ag.selective_expand(
        seeds, _StubAugmenter(), _StubEmbedder(), _StubHead(), 2, stream,
        mode="sample_agnostic", candidate_budget=6,
    )
    assert len(images) == 4
    # the global pool ranks seed 0's qualified candidates above everything
    # from seed 1, so seed 1 gets nothing
    assert [r.seed_index for r in records] == [0, 0, 0, 0]
    u0 = sorted((_stub_u(stream, 0, c) for c in range(6)), reverse=True)
    picked = sorted(img.pixels[0, 0, 0] for img in images)
    assert np.allclose(sorted(u0[:4]), picked)
    assert all(r.qualified for r in records)


def test_selective_expand_deterministic():
    seeds = _stub_seeds()
    run = lambda s: ag.selective_expand(
        seeds, _StubAugmenter(), _StubEmbedder(), _StubHead(), 2, s,
        candidate_budget=6,
    )
    images_a, _ = run(_stream("det"))
    images_b, _ = run(_stream("det"))
    images_c, _ = run(_stream("det-alt"))
    for a, b in zip(images_a, images_b):
        assert np.array_equal(a.pixels, b.pixels)
    assert any(not np.array_equal(a.pixels, c.pixels)
               for a, c in zip(images_a, images_c))


def test_selective_expand_validation():
    seeds = _stub_seeds()
    args = (_StubAugmenter(), _StubEmbedder(), _StubHead())
    with pytest.raises(ParameterError):
        ag.selective_expand(seeds, *args, 0, _stream("v"))
    with pytest.raises(ParameterError):
        ag.selective_expand(seeds, *args, 2, _stream("v"), mode="greedy")
    with pytest.raises(ParameterError):
        ag.selective_expand(seeds, *args, 4, _stream("v"), candidate_budget=3)
    with pytest.raises(ParameterError):
        ag.selective_expand([], *args, 2, _stream("v"))


def test_selective_expand_on_real_backends():
    data = bk.gen_toy_dataset(4, 25, 16, seed=7)
    embedder = bk.make_embedder(data.images[0].pixels.shape, 64, seed=0)
    exemplars = bk.gen_toy_dataset(4, 8, 16, seed=101)
    head = bk.fit_prototype_head(exemplars, embedder)
    seeds = [data.images[i] for i in (0, 30, 60)]
    images, records = ag.selective_expand(
        seeds, ag.rand_lite, embedder, head, 2, _stream("real")
    )
    assert len(images) == 6
    assert [r.seed_index for r in records] == [0, 0, 1, 1, 2, 2]
    for img in images:
        assert img.pixels.shape == (16, 16, 1)
        assert np.all(img.pixels >= 0.0) and np.all(img.pixels <= 1.0)
