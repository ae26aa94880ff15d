"""Synthetic low-rank background + moving small-target sequences.

Backgrounds are sums of ``bg_rank`` separable products of smooth positive
profiles, so every unfolding has rank at most ``bg_rank``.  Targets are
``s x s`` squares whose footprint is the exact ground-truth mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SynthConfig:
    height: int = 64
    width: int = 64
    frames: int = 20
    bg_rank: int = 2
    target_size: int = 3
    amplitude: float = 0.5
    start: tuple | None = None  # (row, col) of the target center in frame 0
    velocity: tuple | None = None  # (rows, cols) per frame
    drift: float = 0.0
    noise_snr_db: float = math.inf
    cross_lines: int = 0
    vertical_lines: int = 0
    seed: int = 0

    @property
    def dims(self):
        return (self.height, self.width, self.frames)

    def trajectory(self) -> np.ndarray:
        """Rounded (row, col) target centers, one per frame."""
        n1, n2, n3 = self.dims
        start = self.start if self.start is not None else (0.25 * n1, 0.2 * n2)
        vel = self.velocity if self.velocity is not None else (0.5 * n1 / n3, 0.6 * n2 / n3)
        k = np.arange(n3)[:, None]
        pos = np.asarray(start, dtype=float)[None, :] + k * np.asarray(vel, dtype=float)[None, :]
        return np.rint(pos).astype(int)


def _validate(cfg: SynthConfig):
    if min(cfg.dims) < 1:
        raise ValueError(f"dims must be >= 1, got {cfg.dims}")
    if cfg.bg_rank < 1:
        raise ValueError("bg_rank must be >= 1")
    if cfg.target_size < 1 or cfg.target_size % 2 == 0:
        raise ValueError(f"target size must be odd and >= 1, got {cfg.target_size}")
    if not 0.0 <= cfg.amplitude <= 1.0:
        raise ValueError(f"amplitude must lie in [0, 1], got {cfg.amplitude}")
    half = cfg.target_size // 2
    traj = cfg.trajectory()
    for k, (r, c) in enumerate(traj):
        if r - half < 0 or c - half < 0 or r + half >= cfg.height or c + half >= cfg.width:
            raise ValueError(f"target leaves the frame at frame {k} (center {r}, {c})")


def _profile(rng, n):
    # smooth positive profile in [0.5, 1]
    x = np.arange(n) / max(n, 1)
    freq = rng.uniform(0.3, 1.5)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    return 0.75 + 0.25 * np.sin(2.0 * np.pi * freq * x + phase)


def make_background(cfg: SynthConfig) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, 0])
    n1, n2, n3 = cfg.dims
    k = np.arange(n3) / max(n3 - 1, 1)
    b = np.zeros(cfg.dims)
    for _ in range(cfg.bg_rank):
        u = _profile(rng, n1)
        v = _profile(rng, n2)
        weight = rng.uniform(0.5, 1.0)
        direction = rng.choice([-1.0, 1.0])
        w = 1.0 + cfg.drift * direction * k
        b += weight * np.einsum("i,j,k->ijk", u, v, w)
    # positive scaling only, so the rank is preserved; range stays inside [0.1, 0.6]
    return b * (0.6 / b.max())


def target_masks(cfg: SynthConfig) -> np.ndarray:
    half = cfg.target_size // 2
    gt = np.zeros(cfg.dims, dtype=np.uint8)
    for k, (r, c) in enumerate(cfg.trajectory()):
        gt[r - half:r + half + 1, c - half:c + half + 1, k] = 1
    return gt


def generate(cfg: SynthConfig = SynthConfig()):
    """Return ``(d, gt)``: observation in [0, 1] and binary target masks."""
    _validate(cfg)
    b = make_background(cfg)
    gt = target_masks(cfg)
    d = np.clip(b + cfg.amplitude * gt, 0.0, 1.0)
    if math.isfinite(cfg.noise_snr_db):
        d = add_gaussian_noise(d, cfg.noise_snr_db, seed=[cfg.seed, 1])
    if cfg.vertical_lines:
        d = add_line_artifacts(d, "vertical", cfg.vertical_lines, seed=[cfg.seed, 2])
    if cfg.cross_lines:
        d = add_line_artifacts(d, "cross", cfg.cross_lines, seed=[cfg.seed, 3])
    return d, gt


def add_gaussian_noise(d, snr_db, seed=0) -> np.ndarray:
    """White Gaussian noise at ``snr_db`` relative to the mean-square signal, then clip."""
    d = np.asarray(d, dtype=np.float64)
    if math.isinf(snr_db) and snr_db > 0:
        return d.copy()
    if not math.isfinite(snr_db):
        raise ValueError(f"snr_db must be finite or +inf, got {snr_db}")
    power = float(np.mean(d * d)) / 10.0 ** (snr_db / 10.0)
    rng = np.random.default_rng(seed)
    return np.clip(d + rng.normal(0.0, math.sqrt(power), size=d.shape), 0.0, 1.0)


def add_line_artifacts(d, kind, count, seed=0) -> np.ndarray:
    """Saturated 1-px line segments, fixed across all frames."""
    if kind not in ("cross", "vertical"):
        raise ValueError(f"kind must be 'cross' or 'vertical', got {kind!r}")
    if count < 0:
        raise ValueError("count must be >= 0")
    out = np.array(d, dtype=np.float64, copy=True)
    n1, n2 = out.shape[:2]
    rng = np.random.default_rng(seed)
    for _ in range(count):
        r, c = int(rng.integers(n1)), int(rng.integers(n2))
        length = int(rng.integers(max(1, n1 // 8), max(1, n1 // 2) + 1))
        top = min(max(0, r - length // 2), n1 - length)
        out[top:top + length, c, :] = 1.0
        if kind == "cross":
            length = int(rng.integers(max(1, n2 // 8), max(1, n2 // 2) + 1))
            left = min(max(0, c - length // 2), n2 - length)
            out[r, left:left + length, :] = 1.0
    return out
