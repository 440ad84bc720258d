"""Sprite rendering, pairing, and dataset serialization."""

import numpy as np
import pytest

from framegate.sprites import (FACTORS, FRAMES_NAME, MANIFEST_NAME, FactorVector,
                               brightness_levels, generate_dataset, load_dataset,
                               read_manifest, render, sample_pair)
from framegate.streams import stream


# ---- rendering ----

def test_render_places_square_at_expected_pixels():
    frame = render(FactorVector(x=2, y=1, brightness=0.6), n=5, s=2)
    lit = {1 * 5 + 2, 1 * 5 + 3, 2 * 5 + 2, 2 * 5 + 3}
    for idx in range(25):
        assert frame[idx] == (0.6 if idx in lit else 0.0)


def test_render_corner_positions():
    top_left = render(FactorVector(x=0, y=0, brightness=1.0), n=4, s=2)
    assert top_left[0] == 1.0 and top_left[5] == 1.0
    bottom_right = render(FactorVector(x=2, y=2, brightness=1.0), n=4, s=2)
    assert bottom_right[15] == 1.0 and bottom_right[10] == 1.0
    assert top_left.sum() == bottom_right.sum() == 4.0


def test_render_rejects_out_of_frame_sprite():
    with pytest.raises(ValueError, match="leaves the"):
        render(FactorVector(x=3, y=0, brightness=0.5), n=4, s=2)
    with pytest.raises(ValueError, match="leaves the"):
        render(FactorVector(x=0, y=-1, brightness=0.5), n=4, s=2)


def test_render_rejects_bad_geometry_and_brightness():
    with pytest.raises(ValueError, match="does not fit"):
        render(FactorVector(x=0, y=0, brightness=0.5), n=4, s=5)
    with pytest.raises(ValueError, match="brightness"):
        render(FactorVector(x=0, y=0, brightness=1.2), n=4, s=2)


def test_brightness_levels_are_evenly_spaced():
    assert np.allclose(brightness_levels(5), [0.2, 0.4, 0.6, 0.8, 1.0])
    assert np.allclose(brightness_levels(2), [0.2, 1.0])
    with pytest.raises(ValueError, match="levels"):
        brightness_levels(1)


# ---- pair sampling ----

def test_sample_pair_changes_exactly_the_named_factor():
    rng = np.random.default_rng(3)
    for trial in range(100):
        factor = FACTORS[trial % 3]
        pair = sample_pair(np.random.default_rng(trial), factor, n=8, s=3, levels=4)
        assert pair.changed_factor == factor
        assert not np.array_equal(pair.x_prev, pair.x_curr)
        if factor == "brightness":
            # Same support, different level.
            assert np.array_equal(pair.x_prev > 0, pair.x_curr > 0)
            assert pair.x_prev.max() != pair.x_curr.max()
        else:
            # Same brightness, moved support.
            assert pair.x_prev.max() == pair.x_curr.max()
            assert not np.array_equal(pair.x_prev > 0, pair.x_curr > 0)


def test_sample_pair_x_move_stays_in_row():
    # A pure horizontal move keeps the set of occupied rows fixed.
    for trial in range(50):
        pair = sample_pair(np.random.default_rng(trial), "x", n=8, s=2, levels=3)
        prev_rows = np.where(pair.x_prev.reshape(8, 8).any(axis=1))[0]
        curr_rows = np.where(pair.x_curr.reshape(8, 8).any(axis=1))[0]
        assert np.array_equal(prev_rows, curr_rows)


def test_sample_pair_rejects_unknown_factor_and_frozen_geometry():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError, match="unknown factor"):
        sample_pair(rng, "rotation", n=8, s=2, levels=3)
    with pytest.raises(ValueError, match="no room"):
        sample_pair(rng, "x", n=4, s=4, levels=3)


# ---- dataset files ----

def test_generate_is_byte_identical_across_runs(tmp_path):
    generate_dataset(tmp_path / "a", count=12, seed=5, n=8, s=2, levels=3)
    generate_dataset(tmp_path / "b", count=12, seed=5, n=8, s=2, levels=3)
    for name in (MANIFEST_NAME, FRAMES_NAME):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_generate_prefix_property(tmp_path):
    # Pair i depends only on (seed, i), so a shorter dataset is a prefix.
    generate_dataset(tmp_path / "short", count=5, seed=9, n=8, s=2, levels=3)
    generate_dataset(tmp_path / "long", count=10, seed=9, n=8, s=2, levels=3)
    short = (tmp_path / "short" / FRAMES_NAME).read_bytes()
    long = (tmp_path / "long" / FRAMES_NAME).read_bytes()
    assert long[:len(short)] == short


def test_labels_cycle_through_factors(tmp_path):
    generate_dataset(tmp_path, count=7, seed=1, n=8, s=2, levels=3)
    _, labels = read_manifest(tmp_path / MANIFEST_NAME)
    assert labels == ["x", "y", "brightness", "x", "y", "brightness", "x"]
    pairs = load_dataset(tmp_path)
    assert [p.changed_factor for p in pairs] == labels


def test_quantization_error_is_bounded(tmp_path):
    generate_dataset(tmp_path, count=9, seed=4, n=8, s=2, levels=3)
    loaded = load_dataset(tmp_path)
    for i, pair in enumerate(loaded):
        fresh = sample_pair(stream(4, i), FACTORS[i % 3], n=8, s=2, levels=3)
        assert np.abs(pair.x_prev - fresh.x_prev).max() <= 1 / 510 + 1e-12
        assert np.abs(pair.x_curr - fresh.x_curr).max() <= 1 / 510 + 1e-12


def test_loaded_frames_are_float_unit_interval(tmp_path):
    generate_dataset(tmp_path, count=3, seed=2, n=8, s=3, levels=4)
    for pair in load_dataset(tmp_path):
        for frame in (pair.x_prev, pair.x_curr):
            assert frame.dtype == np.float64
            assert frame.shape == (64,)
            assert frame.min() >= 0.0 and frame.max() <= 1.0
            frame[0] = 0.5  # loaded frames must be writable copies


def test_generate_rejects_nonpositive_count(tmp_path):
    with pytest.raises(ValueError, match="count"):
        generate_dataset(tmp_path, count=0, seed=0)


def test_load_rejects_wrong_version_byte(tmp_path):
    generate_dataset(tmp_path, count=2, seed=0, n=8, s=2, levels=3)
    blob = bytearray((tmp_path / FRAMES_NAME).read_bytes())
    blob[0] = 99
    (tmp_path / FRAMES_NAME).write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="version"):
        load_dataset(tmp_path)


def test_load_rejects_truncated_binary(tmp_path):
    generate_dataset(tmp_path, count=2, seed=0, n=8, s=2, levels=3)
    blob = (tmp_path / FRAMES_NAME).read_bytes()
    (tmp_path / FRAMES_NAME).write_bytes(blob[:-10])
    with pytest.raises(ValueError, match="bytes"):
        load_dataset(tmp_path)


def test_manifest_validation(tmp_path):
    generate_dataset(tmp_path, count=2, seed=0, n=8, s=2, levels=3)
    manifest = tmp_path / MANIFEST_NAME
    original = manifest.read_text()

    manifest.write_text(original.replace("n=8\n", ""))
    with pytest.raises(ValueError, match="missing"):
        read_manifest(manifest)

    manifest.write_text(original.replace("labels=x,y", "labels=x,spin"))
    with pytest.raises(ValueError, match="spin"):
        read_manifest(manifest)

    manifest.write_text(original.replace("count=2", "count=3"))
    with pytest.raises(ValueError, match="labels"):
        read_manifest(manifest)

    manifest.write_text("no separators here\n")
    with pytest.raises(ValueError, match="key=value"):
        read_manifest(manifest)
