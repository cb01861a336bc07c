"""Demonstration datasets on disk: binary PPM images plus a JSON manifest.

Layout:
    DIR/manifest.json   {"version": 1, "image_size": [H, W], "action_dim": 6,
                         "entries": [{"image": rel_path, "action": [...], "meta": {...}}]}
    DIR/images/NNNNN.ppm

Images are stored as 8-bit P6 PPM; because rendered images are quantized to
the 1/255 grid before use, save -> load reproduces the training tensors
bit-for-bit.  Actions are stored as JSON numbers (repr round-trips float64).
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import InputError
from .fileio import atomic_write_bytes, atomic_write_json
from .scene import Demo

MANIFEST_VERSION = 1


def write_ppm(path: str, pixels: np.ndarray):
    """Write (H, W, 3) uint8 pixels as binary P6 with maxval 255."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
        raise InputError(
            f"expected (H, W, 3) uint8 pixels, got {pixels.shape} {pixels.dtype}")
    h, w = pixels.shape[:2]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + pixels.tobytes())


def read_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # then a single whitespace byte before the raster.
    tokens, i = [], 0
    while len(tokens) < 4:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if i < len(data) and data[i:i + 1] == b"#":      # comment line
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        if j == i:
            raise InputError(f"truncated PPM header in {path}")
        tokens.append(data[i:j])
        i = j
    i += 1                                               # raster delimiter
    if tokens[0] != b"P6":
        raise InputError(f"{path} is not a binary P6 PPM (magic {tokens[0]!r})")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise InputError(f"unsupported PPM maxval {maxval} in {path}")
    raster = data[i:i + 3 * w * h]
    if len(raster) != 3 * w * h:
        raise InputError(
            f"PPM raster truncated in {path}: need {3 * w * h} bytes, "
            f"have {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3).copy()


def image_to_pixels(image: np.ndarray) -> np.ndarray:
    """(3, H, W) float64 in [0, 1] -> (H, W, 3) uint8."""
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    return arr.transpose(1, 2, 0)


def pixels_to_image(pixels: np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8 -> (3, H, W) float64 in [0, 1]."""
    return (np.asarray(pixels).astype(np.float64) / 255.0).transpose(2, 0, 1)


def save_dataset(directory: str, demos: list[Demo]):
    if not demos:
        raise InputError("refusing to save an empty dataset")
    h, w = demos[0].image.shape[1:]
    dim = demos[0].action.shape[0]
    img_dir = os.path.join(directory, "images")
    os.makedirs(img_dir, exist_ok=True)
    entries = []
    for i, demo in enumerate(demos):
        if demo.image.shape != (3, h, w) or demo.action.shape != (dim,):
            raise InputError(f"demo {i} has inconsistent shapes")
        rel = f"images/{i:05d}.ppm"
        write_ppm(os.path.join(directory, rel), image_to_pixels(demo.image))
        entries.append({"image": rel,
                        "action": [float(a) for a in demo.action],
                        "meta": demo.meta})
    manifest = {"version": MANIFEST_VERSION, "image_size": [h, w],
                "action_dim": dim, "entries": entries}
    atomic_write_json(os.path.join(directory, "manifest.json"), manifest)


def load_dataset(directory: str) -> list[Demo]:
    manifest_path = os.path.join(directory, "manifest.json")
    if not os.path.exists(manifest_path):
        raise InputError(f"no manifest.json in {directory}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    if manifest.get("version") != MANIFEST_VERSION:
        raise InputError(f"unsupported dataset version {manifest.get('version')!r}")
    for key in ("image_size", "action_dim", "entries"):
        if key not in manifest:
            raise InputError(f"manifest missing key {key!r}")
    h, w = manifest["image_size"]
    dim = manifest["action_dim"]
    demos = []
    for i, entry in enumerate(manifest["entries"]):
        for key in ("image", "action"):
            if key not in entry:
                raise InputError(f"entry {i} missing key {key!r}")
        pixels = read_ppm(os.path.join(directory, entry["image"]))
        if pixels.shape != (h, w, 3):
            raise InputError(
                f"entry {i}: image is {pixels.shape[:2]}, manifest says {(h, w)}")
        action = np.asarray(entry["action"], dtype=np.float64)
        if action.shape != (dim,):
            raise InputError(
                f"entry {i}: action has {action.shape[0]} dims, manifest says {dim}")
        demos.append(Demo(image=pixels_to_image(pixels), action=action,
                          meta=entry.get("meta", {})))
    return demos
