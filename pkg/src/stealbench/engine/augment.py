"""Random shift/flip augmentation for channels-last image batches."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AugmentPolicy:
    max_shift: int = 0
    allow_flip: bool = False

    @property
    def active(self):
        return self.max_shift > 0 or self.allow_flip


NO_AUGMENT = AugmentPolicy()


def shift_image(img, dy, dx):
    """Translate one (H, W, ...) image by whole pixels, zero-filling the gap."""
    out = np.zeros_like(img)
    h, w = img.shape[:2]
    src_y = slice(max(0, -dy), min(h, h - dy))
    dst_y = slice(max(0, dy), min(h, h + dy))
    src_x = slice(max(0, -dx), min(w, w - dx))
    dst_x = slice(max(0, dx), min(w, w + dx))
    out[dst_y, dst_x] = img[src_y, src_x]
    return out


def shift_images(batch, offsets):
    return np.stack([shift_image(img, int(dy), int(dx)) for img, (dy, dx) in zip(batch, offsets)])


def flip_images(batch):
    """Horizontal flip of every image in the batch."""
    return np.asarray(batch)[:, :, ::-1].copy()


def augment_batch(batch, policy, rng):
    batch = np.asarray(batch, dtype=np.float64)
    if not policy.active:
        return batch.copy()
    if batch.ndim != 4 or batch.shape[1] != batch.shape[2]:
        raise ValueError("augmentation expects square channels-last images (N, H, W, C)")
    if policy.max_shift >= batch.shape[1]:
        raise ValueError("max_shift must be smaller than the image side")
    n = len(batch)
    s = policy.max_shift
    offsets = rng.integers(-s, s + 1, size=(n, 2))
    flips = rng.random(n) < 0.5 if policy.allow_flip else np.zeros(n, dtype=bool)
    out = shift_images(batch, offsets) if s > 0 else batch.copy()
    if flips.any():
        out[flips] = flip_images(out[flips])
    return out
