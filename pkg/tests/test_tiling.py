"""Tiling tests: HSV conversion, masks, grid extraction, monotonicity."""

import numpy as np
import pytest

from slideqa.tiling import (
    EmptySlide,
    SlideImage,
    TileSet,
    foreground_mask,
    rgb_to_hsv,
    tile,
)


def solid_image(slide_id, h, w, rgb):
    px = np.zeros((h, w, 3), dtype=np.uint8)
    px[:, :] = rgb
    return SlideImage(slide_id, px)


def test_rgb_to_hsv_white():
    h, s, v = rgb_to_hsv(np.array([255, 255, 255]))
    assert (h, s, v) == (0.0, 0.0, 1.0)


def test_rgb_to_hsv_pure_red():
    h, s, v = rgb_to_hsv(np.array([255, 0, 0]))
    assert (h, s, v) == (0.0, 1.0, 1.0)


def test_rgb_to_hsv_hand_applied_hexcone():
    # (128, 64, 64): max 128, min 64 -> s = 64/128, v = 128/255, hue 0
    h, s, v = rgb_to_hsv(np.array([128, 64, 64]))
    assert h == 0.0
    assert s == pytest.approx(0.5)
    assert v == pytest.approx(128.0 / 255.0)


def test_rgb_to_hsv_secondary_hues():
    h, _, _ = rgb_to_hsv(np.array([0, 255, 0]))
    assert h == pytest.approx(120.0)
    h, _, _ = rgb_to_hsv(np.array([0, 0, 255]))
    assert h == pytest.approx(240.0)
    # hue wraps into [0, 360)
    hsv = rgb_to_hsv(np.array([255, 0, 1]))
    assert 0.0 <= hsv[0] < 360.0


def test_foreground_mask_all_white_is_false():
    img = solid_image("w", 8, 8, (255, 255, 255))
    assert not foreground_mask(img, 0.05).any()


def test_foreground_mask_pure_red_is_true():
    img = solid_image("r", 8, 8, (200, 0, 0))
    assert foreground_mask(img, 0.05).all()


def test_foreground_mask_half_and_half():
    px = np.full((10, 10, 3), 255, dtype=np.uint8)
    px[:, :5] = (200, 0, 0)
    mask = foreground_mask(SlideImage("hw", px), 0.05)
    assert mask[:, :5].all() and not mask[:, 5:].any()
    assert int(mask.sum()) == 50


def test_tile_full_grid():
    img = solid_image("red", 512, 512, (200, 0, 0))
    ts = tile(img, patch_size_px=256, keep_threshold=0.5)
    assert len(ts) == 4
    assert [(p.row, p.col) for p in ts.patches] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert all(p.foreground_fraction == 1.0 for p in ts.patches)


def test_tile_all_white_raises():
    img = solid_image("white", 512, 512, (255, 255, 255))
    with pytest.raises(EmptySlide):
        tile(img, patch_size_px=256)


def test_tile_left_half_red_keeps_left_column():
    px = np.full((512, 512, 3), 255, dtype=np.uint8)
    px[:, :256] = (200, 0, 0)
    ts = tile(SlideImage("half", px), patch_size_px=256, keep_threshold=0.5)
    assert [(p.row, p.col) for p in ts.patches] == [(0, 0), (1, 0)]


def test_tile_discards_incomplete_border():
    img = solid_image("odd", 300, 520, (180, 20, 20))
    ts = tile(img, patch_size_px=256)
    # only one full 256x256 patch fits vertically, two horizontally
    assert [(p.row, p.col) for p in ts.patches] == [(0, 0), (0, 1)]
    for p in ts.patches:
        assert p.x0_px + 256 <= 520 and p.y0_px + 256 <= 300


def test_tile_deterministic():
    rng = np.random.default_rng(7)
    px = rng.integers(0, 256, size=(200, 200, 3), dtype=np.uint8)
    img = SlideImage("rand", px)
    a = tile(img, patch_size_px=50)
    b = tile(img, patch_size_px=50)
    assert a.to_json_dict() == b.to_json_dict()


def test_kept_count_monotone_in_thresholds():
    rng = np.random.default_rng(11)
    base = np.full((128, 128, 3), 255, dtype=np.uint8)
    blob = rng.integers(0, 200, size=(90, 90, 3), dtype=np.uint8)
    base[10:100, 20:110] = blob
    img = SlideImage("blob", base)

    def kept(sat_t, keep_t):
        try:
            return len(tile(img, patch_size_px=32, sat_threshold=sat_t, keep_threshold=keep_t))
        except EmptySlide:
            return 0

    sat_counts = [kept(t, 0.3) for t in (0.02, 0.1, 0.3, 0.6, 0.9)]
    assert sat_counts == sorted(sat_counts, reverse=True)
    keep_counts = [kept(0.05, t) for t in (0.0, 0.25, 0.5, 0.75, 1.0)]
    assert keep_counts == sorted(keep_counts, reverse=True)


def test_tileset_json_round_trip():
    img = solid_image("rt", 64, 96, (150, 10, 10))
    ts = tile(img, patch_size_px=32)
    again = TileSet.from_json_dict(ts.to_json_dict())
    assert again.to_json_dict() == ts.to_json_dict()
