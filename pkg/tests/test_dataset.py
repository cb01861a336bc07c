"""Dataset serialization: PPM codec and manifest round trips."""

import json
import os

import numpy as np
import pytest

from deskgrasp.dataset import (image_to_pixels, load_dataset, pixels_to_image,
                               read_ppm, save_dataset, write_ppm)
from deskgrasp.errors import InputError
from deskgrasp.scene import Demo, generate_demos


def test_ppm_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, size=(13, 17, 3), dtype=np.uint8)
    path = tmp_path / "img.ppm"
    write_ppm(path, pixels)
    assert np.array_equal(read_ppm(path), pixels)


def test_ppm_header_format(tmp_path):
    pixels = np.zeros((4, 6, 3), dtype=np.uint8)
    path = tmp_path / "img.ppm"
    write_ppm(path, pixels)
    blob = path.read_bytes()
    assert blob.startswith(b"P6\n6 4\n255\n")
    assert len(blob) == len(b"P6\n6 4\n255\n") + 4 * 6 * 3


def test_ppm_comment_and_whitespace_tolerated(tmp_path):
    raster = bytes(range(2 * 2 * 3))
    path = tmp_path / "img.ppm"
    path.write_bytes(b"P6\n# a comment\n 2\t2\n255\n" + raster)
    arr = read_ppm(path)
    assert np.array_equal(arr.reshape(-1), np.frombuffer(raster, dtype=np.uint8))


def test_ppm_rejects_bad_inputs(tmp_path):
    path = tmp_path / "img.ppm"
    path.write_bytes(b"P5\n2 2\n255\n" + bytes(12))
    with pytest.raises(InputError, match="P6"):
        read_ppm(path)
    path.write_bytes(b"P6\n2 2\n65535\n" + bytes(24))
    with pytest.raises(InputError, match="maxval"):
        read_ppm(path)
    path.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
    with pytest.raises(InputError, match="truncated"):
        read_ppm(path)
    with pytest.raises(InputError, match="uint8"):
        write_ppm(path, np.zeros((2, 2, 3)))


def test_pixel_image_conversions_inverse_on_grid():
    rng = np.random.default_rng(1)
    pixels = rng.integers(0, 256, size=(8, 9, 3), dtype=np.uint8)
    assert np.array_equal(image_to_pixels(pixels_to_image(pixels)), pixels)


def test_dataset_round_trip_bitwise(tmp_path):
    demos = generate_demos(6, seed=2)
    save_dataset(tmp_path / "d", demos)
    back = load_dataset(tmp_path / "d")
    assert len(back) == 6
    for a, b in zip(demos, back):
        assert np.array_equal(a.image, b.image)          # every pixel
        assert np.array_equal(a.action, b.action)        # every action bit
        assert b.meta["seed"] == a.meta["seed"]


def test_manifest_layout(tmp_path):
    demos = generate_demos(3, seed=5)
    save_dataset(tmp_path / "d", demos)
    with open(tmp_path / "d" / "manifest.json") as f:
        manifest = json.load(f)
    assert manifest["version"] == 1
    assert manifest["image_size"] == [64, 64]
    assert manifest["action_dim"] == 6
    assert len(manifest["entries"]) == 3
    for e in manifest["entries"]:
        assert os.path.exists(tmp_path / "d" / e["image"])


def test_load_rejects_bad_manifests(tmp_path):
    demos = generate_demos(2, seed=0)
    d = tmp_path / "d"
    save_dataset(d, demos)
    manifest_path = d / "manifest.json"
    good = json.loads(manifest_path.read_text())

    with pytest.raises(InputError, match="manifest.json"):
        load_dataset(tmp_path / "nonexistent")

    bad = dict(good); bad["version"] = 99
    manifest_path.write_text(json.dumps(bad))
    with pytest.raises(InputError, match="version"):
        load_dataset(d)

    bad = dict(good); del bad["action_dim"]
    manifest_path.write_text(json.dumps(bad))
    with pytest.raises(InputError, match="action_dim"):
        load_dataset(d)

    bad = json.loads(json.dumps(good)); bad["entries"][0]["action"] = [1.0, 2.0]
    manifest_path.write_text(json.dumps(bad))
    with pytest.raises(InputError, match="dims"):
        load_dataset(d)

    bad = json.loads(json.dumps(good)); bad["image_size"] = [32, 32]
    manifest_path.write_text(json.dumps(bad))
    with pytest.raises(InputError, match="manifest says"):
        load_dataset(d)


def test_save_rejects_empty_and_inconsistent(tmp_path):
    with pytest.raises(InputError, match="empty"):
        save_dataset(tmp_path / "d", [])
    demos = generate_demos(2, seed=1)
    demos[1] = Demo(image=demos[1].image[:, :32, :], action=demos[1].action,
                    meta={})
    with pytest.raises(InputError, match="inconsistent"):
        save_dataset(tmp_path / "d", demos)


def test_actions_round_trip_through_json_repr(tmp_path):
    # JSON number serialization must preserve float64 exactly.
    demos = generate_demos(4, seed=8)
    save_dataset(tmp_path / "d", demos)
    with open(tmp_path / "d" / "manifest.json") as f:
        manifest = json.load(f)
    for demo, entry in zip(demos, manifest["entries"]):
        assert np.array_equal(np.asarray(entry["action"]), demo.action)
