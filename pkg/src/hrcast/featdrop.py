"""Curriculum channel dropout: a per-sample binary mask over feature channels,
drop probability ramping linearly over training epochs. Main channels are never
dropped, at least K observed channels always survive, and masks are constant
along time. Evaluation applies no mask.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np


@dataclass
class DropoutConfig:
    p_min: float = 0.1
    p_max: float = 0.5
    epochs: int = 20  # curriculum length E
    min_keep: int = 2  # K
    main_channels: tuple[str, ...] = ("speed", "altitude")

    def __post_init__(self):
        if not (0.0 <= self.p_min <= self.p_max <= 1.0):
            raise ValueError("need 0 <= p_min <= p_max <= 1")
        if self.min_keep < 1:
            raise ValueError("min_keep must be >= 1")


def dropout_prob(epoch: int, cfg: DropoutConfig) -> float:
    """p(e) = p_min + (p_max - p_min) * min(e/E, 1)."""
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    frac = min(epoch / cfg.epochs, 1.0) if cfg.epochs > 0 else 1.0
    return cfg.p_min + (cfg.p_max - cfg.p_min) * frac


def sample_mask(observed: np.ndarray, p: float, cfg: DropoutConfig,
                rng: np.random.Generator, main_indices) -> tuple[np.ndarray, bool]:
    """One channel mask: main channels kept, droppable channels dropped i.i.d.
    with probability p, then random reinstatement until exactly K survive if the
    draw went below K. Unobserved channels stay 0 and never count toward K.

    Returns (mask, flagged); flagged is True when fewer than K channels were
    observed at all (everything observed is then kept).
    """
    observed = np.asarray(observed, bool)
    main = np.zeros_like(observed)
    main[list(main_indices)] = True
    mask = observed.copy()
    if int(observed.sum()) < cfg.min_keep:
        return mask, True
    droppable = observed & ~main
    drop = droppable & (rng.random(observed.shape) < p)
    mask = mask & ~drop
    short = cfg.min_keep - int(mask.sum())
    if short > 0:
        dropped_idx = np.flatnonzero(drop)
        revive = rng.choice(dropped_idx, size=short, replace=False)
        mask[revive] = True
    return mask, False


def apply_mask(channels: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero whole channel rows where mask is 0; (D,T) in, (D,T) out."""
    return channels * np.asarray(mask, channels.dtype)[:, None]


def _example_key(example_id: str) -> int:
    return zlib.crc32(example_id.encode("utf-8"))


def mask_rng(seed: int, epoch: int, example_id: str) -> np.random.Generator:
    """Fresh stream per (seed, epoch, example): masks are reproducible and
    independent across examples and epochs."""
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, _example_key(example_id)]))


@dataclass
class MaskSampler:
    """Draws the mask set for one example: one mask for the current segment and
    one, independently, for every history segment."""

    cfg: DropoutConfig
    main_indices: tuple[int, ...]
    seed: int
    counters: dict = field(default_factory=lambda: {"masks_sampled": 0, "flagged": 0})

    def masks_for_example(self, example, epoch: int, training: bool) -> list[np.ndarray]:
        """Masks ordered [current, hist_0, ..., hist_{n-1}]; identity at eval."""
        segs = [example.current] + list(example.history)
        if not training:
            return [np.asarray(s.observed, bool).copy() for s in segs]
        p = dropout_prob(epoch, self.cfg)
        rng = mask_rng(self.seed, epoch, example.example_id)
        out = []
        for seg in segs:
            mask, flagged = sample_mask(seg.observed, p, self.cfg, rng, self.main_indices)
            self.counters["masks_sampled"] += 1
            if flagged:
                self.counters["flagged"] += 1
            out.append(mask)
        return out
