"""Synthetic tabletop benchmark: a planar 2-link arm reaching a rendered disk.

Each demonstration is a 64x64 RGB image of a colored target disk (plus
distractor rectangles) together with the 6-dof action that grasps it:
joints 1-2 come from closed-form inverse kinematics of the arm, joints 3-6
from a size-conditioned grasp profile.  Rendering is antialiased and then
quantized to the 8-bit grid so saved and in-memory images agree exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputError

L1 = 1.0
L2 = 0.8
ACTION_DIM = 6


@dataclass
class SceneConfig:
    """Benchmark geometry.

    Targets are presented on a narrow radial band straddling the arm's
    maximum-manipulability radius sqrt(L1^2 + L2^2) ~= 1.2806, where the elbow
    sits near 90 degrees and the inverse kinematics is best conditioned (the
    usual way a fixed workstation is laid out in front of an arm).  On this
    band q2 stays within +/-0.05 rad of pi/2, so grasp success hinges on how
    precisely the policy localizes the target along the band - a pure vision
    problem - rather than on the steep radial gradient of the elbow angle
    that dominates elsewhere in the annulus.
    """

    height: int = 64
    width: int = 64
    scale: float = 20.0                 # pixels per world unit
    rho_range: tuple = (1.25, 1.31)     # target distance from arm base
    phi_range: tuple = (0.2, math.pi - 0.2)
    radius_range: tuple = (2.0, 4.0)    # disk radius in pixels
    max_distractors: int = 3

    def validate(self):
        if self.height < 16 or self.width < 16:
            raise ConfigurationError("scene must be at least 16x16 pixels")
        lo, hi = self.rho_range
        if not (abs(L1 - L2) < lo <= hi < L1 + L2):
            raise ConfigurationError(
                f"rho_range {self.rho_range} must lie strictly inside the "
                f"reachable annulus ({abs(L1 - L2)}, {L1 + L2})")
        return self

    @property
    def base_px(self) -> tuple[float, float]:
        """(col, row) of the arm base: bottom-center of the image."""
        return (self.width / 2.0, float(self.height - 1))


def forward_kinematics(q1: float, q2: float) -> tuple[float, float]:
    x = L1 * math.cos(q1) + L2 * math.cos(q1 + q2)
    y = L1 * math.sin(q1) + L2 * math.sin(q1 + q2)
    return x, y


def inverse_kinematics(x: float, y: float) -> tuple[float, float]:
    """Elbow-down closed form; raises InputError outside the reachable annulus."""
    rho2 = x * x + y * y
    c2 = (rho2 - L1 * L1 - L2 * L2) / (2.0 * L1 * L2)
    if c2 > 1.0 + 1e-12 or c2 < -1.0 - 1e-12:
        raise InputError(
            f"target ({x:.4f}, {y:.4f}) is outside the reachable annulus "
            f"[{abs(L1 - L2):.2f}, {L1 + L2:.2f}]")
    c2 = min(1.0, max(-1.0, c2))
    q2 = math.acos(c2)
    q1 = math.atan2(y, x) - math.atan2(L2 * math.sin(q2), L1 + L2 * math.cos(q2))
    return q1, q2


def grasp_profile(radius_px: float) -> tuple[float, float, float, float]:
    """Wrist/finger joints as an affine function of apparent target size."""
    r = (radius_px - 2.0) / 2.0
    return (0.3 + 0.3 * r, 1.1 - 0.25 * r, 0.45 + 0.2 * r, 0.8 + 0.15 * r)


def action_for_target(x: float, y: float, radius_px: float) -> np.ndarray:
    q1, q2 = inverse_kinematics(x, y)
    return np.array([q1, q2, *grasp_profile(radius_px)], dtype=np.float64)


def _disk_coverage(height: int, width: int, col: float, row: float,
                   radius: float) -> np.ndarray:
    """Per-pixel coverage of a disk: clip(radius + 0.5 - center distance, 0, 1)."""
    rows = np.arange(height, dtype=np.float64)[:, None]
    cols = np.arange(width, dtype=np.float64)[None, :]
    dist = np.sqrt((rows - row) ** 2 + (cols - col) ** 2)
    return np.clip(radius + 0.5 - dist, 0.0, 1.0)


def _vivid_color(rng: np.random.Generator) -> np.ndarray:
    """Random saturated color: one channel in [0.80, 0.95], the rest in [0.05, 0.30].

    The target is the only saturated object in a scene (background tint tops out
    at 0.5 and distractors at 0.55), which guarantees a channel gap >= 0.30 to
    the background and >= 0.25 to every distractor while the hue stays random.
    """
    color = rng.uniform(0.05, 0.30, size=3)
    dominant = int(rng.integers(0, 3))
    color[dominant] = rng.uniform(0.80, 0.95)
    return color


def _muted_color(rng: np.random.Generator) -> np.ndarray:
    """Random mid-tone used for distractors; never saturated like the target."""
    return rng.uniform(0.25, 0.55, size=3)


@dataclass
class Demo:
    image: np.ndarray            # (3, H, W) float64 in [0, 1], on the 1/255 grid
    action: np.ndarray           # (6,)
    meta: dict = field(default_factory=dict)


def generate_demo(seed: int, config: SceneConfig | None = None) -> Demo:
    """Render one demonstration; deterministic for a fixed seed."""
    cfg = (config or SceneConfig()).validate()
    rng = np.random.default_rng(seed)
    H, W = cfg.height, cfg.width
    base_col, base_row = cfg.base_px

    background = rng.uniform(0.1, 0.5, size=3)
    img = np.broadcast_to(background, (H, W, 3)).copy()

    # Target geometry: resample until the disk sits fully inside the frame.
    while True:
        rho = rng.uniform(*cfg.rho_range)
        phi = rng.uniform(*cfg.phi_range)
        radius = rng.uniform(*cfg.radius_range)
        x, y = rho * math.cos(phi), rho * math.sin(phi)
        col = base_col + cfg.scale * x
        row = base_row - cfg.scale * y
        if (radius + 1.0 <= col <= W - 2 - radius
                and radius + 1.0 <= row <= H - 2 - radius):
            break

    disk_color = _vivid_color(rng)
    coverage = _disk_coverage(H, W, col, row, radius)
    disk_pixels = coverage > 0.0
    disk_area = int(disk_pixels.sum())

    n_distractors = int(rng.integers(0, cfg.max_distractors + 1))
    rects = []
    for _ in range(n_distractors):
        for _attempt in range(50):
            rw = int(rng.integers(4, 17))
            rh = int(rng.integers(4, 17))
            c0 = int(rng.integers(0, W - rw + 1))
            r0 = int(rng.integers(0, H - rh + 1))
            overlap = int(disk_pixels[r0:r0 + rh, c0:c0 + rw].sum())
            if overlap <= 0.25 * disk_area:
                color = _muted_color(rng)
                img[r0:r0 + rh, c0:c0 + rw] = color
                rects.append([c0, r0, rw, rh])
                break

    # Target drawn last so it is never occluded.
    img = coverage[:, :, None] * disk_color + (1.0 - coverage[:, :, None]) * img

    # Quantize to the 8-bit grid; training and saved copies are then identical.
    img_u8 = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    image = (img_u8.astype(np.float64) / 255.0).transpose(2, 0, 1)

    action = action_for_target(x, y, radius)
    meta = {
        "seed": int(seed),
        "target_xy": [x, y],            # workspace units, arm-base frame
        "target_px": [col, row],
        "radius_px": radius,
        "rho": rho,
        "phi": phi,
        "background": background.tolist(),
        "disk_color": disk_color.tolist(),
        "distractors": rects,
    }
    return Demo(image=image, action=action, meta=meta)


def generate_demos(n: int, seed: int, config: SceneConfig | None = None) -> list[Demo]:
    """n demos with per-demo seeds seed*100000 + i, so sets nest as supersets."""
    if n < 1:
        raise InputError(f"demo count must be >= 1, got {n}")
    return [generate_demo(seed * 100000 + i, config) for i in range(n)]


def demos_to_arrays(demos: list[Demo]) -> tuple[np.ndarray, np.ndarray]:
    images = np.stack([d.image for d in demos])
    actions = np.stack([d.action for d in demos])
    return images, actions
