"""Training loop: Adam with bias correction and a cosine learning-rate ramp.

Also hosts the synthetic toy set used for smoke training. The toy images are
smooth colored gradients; a rectangle is darkened by a per-image factor to
fabricate the shadowed input, so the clean image is exactly recoverable.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import GradTape, Tensor, backward
from .blocks import ShadowNet
from .errors import ValidationError
from .imageio import read_image, read_mask


def cosine_lr(step: int, total_steps: int, lr_max: float = 2e-4, lr_min: float = 1e-6) -> float:
    """Cosine ramp from lr_max at step 0 down to lr_min at the last step."""
    if total_steps <= 1:
        return lr_max
    t = min(max(step, 0), total_steps - 1)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / (total_steps - 1)))


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def init_adam(params: list[Tensor]) -> AdamState:
    state = AdamState()
    state.m = [np.zeros_like(p.data) for p in params]
    state.v = [np.zeros_like(p.data) for p in params]
    return state


def adam_step(params: list[Tensor], state: AdamState, lr: float) -> None:
    state.step += 1
    t = state.step
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


Pair = tuple[np.ndarray, np.ndarray, np.ndarray]  # shadowed (3,H,W), mask (H,W), clean (3,H,W)


def batch_loss(model: ShadowNet, batch: list[Pair], training: bool) -> Tensor:
    """Mean absolute error between predictions and clean images, averaged
    over the batch. Must run inside a GradTape when used for a step."""
    total = None
    for shadowed, mask, clean in batch:
        pred = model.forward(shadowed, mask, training=training)
        err = ad.mean_all(ad.absolute(ad.sub(pred, Tensor(clean))))
        total = err if total is None else ad.add(total, err)
    return ad.mul(total, 1.0 / len(batch))


def dataset_loss(model: ShadowNet, pairs: list[Pair]) -> float:
    return float(batch_loss(model, pairs, training=False).data)


def train_step(model: ShadowNet, state: AdamState, batch: list[Pair], lr: float) -> float:
    model.zero_grads()
    tape = GradTape()
    with tape:
        loss = batch_loss(model, batch, training=True)
    backward(loss, tape)
    adam_step(model.params(), state, lr)
    return float(loss.data)


def train(
    model: ShadowNet,
    pairs: list[Pair],
    steps: int,
    batch_size: int = 4,
    lr_max: float = 2e-4,
    lr_min: float = 1e-6,
    log_fn=None,
) -> list[float]:
    """Run `steps` updates, cycling through `pairs` in fixed order. Returns
    the per-step training losses."""
    if not pairs:
        raise ValidationError("training requires at least one image pair")
    state = init_adam(model.params())
    losses = []
    cursor = 0
    for step in range(steps):
        batch = []
        for _ in range(min(batch_size, len(pairs))):
            batch.append(pairs[cursor])
            cursor = (cursor + 1) % len(pairs)
        lr = cosine_lr(step, steps, lr_max, lr_min)
        loss = train_step(model, state, batch, lr)
        losses.append(loss)
        if log_fn is not None:
            log_fn(step, lr, loss)
    return losses


def make_toy_pairs(count: int = 8, size: int = 32, seed: int = 0) -> list[Pair]:
    """Synthetic shadow-removal pairs: colored gradient images with one
    rectangular region multiplied by a darkening factor in [0.3, 0.6]."""
    rng = np.random.default_rng(seed)
    ys = np.linspace(0.0, 1.0, size)[None, :, None]
    xs = np.linspace(0.0, 1.0, size)[None, None, :]
    pairs = []
    for _ in range(count):
        base = rng.uniform(0.35, 0.65, size=(3, 1, 1))
        slope_y = rng.uniform(-0.25, 0.25, size=(3, 1, 1))
        slope_x = rng.uniform(-0.25, 0.25, size=(3, 1, 1))
        clean = base + slope_y * ys + slope_x * xs
        clean += rng.normal(0.0, 0.01, size=(3, size, size))
        clean = np.clip(clean, 0.02, 0.98)
        h = int(rng.integers(size // 3, 2 * size // 3 + 1))
        w = int(rng.integers(size // 3, 2 * size // 3 + 1))
        top = int(rng.integers(0, size - h + 1))
        left = int(rng.integers(0, size - w + 1))
        mask = np.zeros((size, size))
        mask[top : top + h, left : left + w] = 1.0
        factor = float(rng.uniform(0.3, 0.6))
        shadowed = clean * (1.0 - (1.0 - factor) * mask[None, :, :])
        pairs.append((shadowed, mask, clean))
    return pairs


_SHADOW_RE = re.compile(r"^(?P<stem>.+)_shadow\.(ppm|png)$")


def load_dir_pairs(data_dir: str) -> list[Pair]:
    """Load (shadowed, mask, clean) triples named <stem>_shadow.*,
    <stem>_mask.*, <stem>_gt.* from one directory, sorted by stem."""
    stems = []
    for entry in sorted(os.listdir(data_dir)):
        m = _SHADOW_RE.match(entry)
        if m:
            stems.append((m.group("stem"), entry))
    if not stems:
        raise ValidationError(f"no *_shadow.ppm or *_shadow.png files in {data_dir}")
    pairs = []
    for stem, shadow_name in stems:
        shadowed = read_image(os.path.join(data_dir, shadow_name))
        mask = read_mask(_find(data_dir, stem + "_mask", ("pgm", "png")))
        clean = read_image(_find(data_dir, stem + "_gt", ("ppm", "png")))
        pairs.append((shadowed, mask, clean))
    return pairs


def _find(data_dir: str, base: str, extensions: tuple[str, ...]) -> str:
    for ext in extensions:
        path = os.path.join(data_dir, f"{base}.{ext}")
        if os.path.exists(path):
            return path
    raise ValidationError(f"missing companion file {base}.{{{','.join(extensions)}}} in {data_dir}")
