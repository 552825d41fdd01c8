"""Shared fixtures: the tiny encoder, a synthetic smoke corpus, a short
trained run for inference-path tests, and the finite-difference helper."""
from __future__ import annotations

import numpy as np
import pytest
import torch
from PIL import Image

from ibstyle.encoder import build_tiny_encoder
from ibstyle.model import build_model
from ibstyle.training import TrainConfig, train

SMOKE_SIZE = 64
SMOKE_COUNT = 16


def _content_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """Photo-like synthetic content: smooth gradients and hard-edged shapes."""
    x, y = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size))
    base = np.stack([
        0.25 + 0.5 * x * rng.uniform(0.5, 1.0),
        0.25 + 0.5 * y * rng.uniform(0.5, 1.0),
        0.35 + 0.25 * np.sin(2 * np.pi * (x + y) * rng.uniform(0.5, 1.5)),
    ], axis=-1)
    for _ in range(3):
        cx, cy = rng.uniform(0.2, 0.8, 2)
        r = rng.uniform(0.08, 0.25)
        mask = (x - cx) ** 2 + (y - cy) ** 2 < r**2
        base[mask] = rng.uniform(0.1, 0.9, 3)
    x0, y0 = rng.integers(5, size // 2, 2)
    w, h = rng.integers(8, size // 2, 2)
    base[y0 : y0 + h, x0 : x0 + w] = rng.uniform(0.1, 0.9, 3)
    return np.clip(base + rng.normal(0, 0.01, base.shape), 0, 1)


def _style_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """Art-like synthetic style: strong palettes and repeated textures."""
    x, y = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size))
    f1, f2 = rng.uniform(3, 9, 2)
    phase = rng.uniform(0, 2 * np.pi, 3)
    palette = rng.uniform(0.15, 0.95, (2, 3))
    waves = 0.5 + 0.5 * np.sin(2 * np.pi * (f1 * x + f2 * y) + phase[0])
    tex = np.stack([
        waves * palette[0, 0] + (1 - waves) * palette[1, 0],
        (0.5 + 0.5 * np.sin(2 * np.pi * f2 * y + phase[1])) * palette[0, 1]
        + 0.2 * waves,
        (0.5 + 0.5 * np.cos(2 * np.pi * f1 * x + phase[2])) * palette[0, 2],
    ], axis=-1)
    speckle = rng.uniform(0, 1, (size, size, 1)) < 0.05
    tex = np.where(speckle, rng.uniform(0, 1, 3), tex)
    return np.clip(tex + rng.normal(0, 0.02, tex.shape), 0, 1)


def write_corpus(content_dir, style_dir, count: int = SMOKE_COUNT, size: int = SMOKE_SIZE,
                 seed: int = 0) -> None:
    content_dir.mkdir(parents=True, exist_ok=True)
    style_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(count):
        arr = (_content_image(rng, size) * 255).astype(np.uint8)
        Image.fromarray(arr).save(content_dir / f"content_{i:02d}.png")
    for i in range(count):
        arr = (_style_image(rng, size) * 255).astype(np.uint8)
        Image.fromarray(arr).save(style_dir / f"style_{i:02d}.png")


@pytest.fixture(scope="session")
def tiny_encoder():
    return build_tiny_encoder()


@pytest.fixture(scope="session")
def smoke_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    content, style = root / "content", root / "style"
    write_corpus(content, style)
    return content, style


@pytest.fixture(scope="session")
def smoke_config(smoke_corpus, tmp_path_factory):
    """Baseline config for short desk-scale runs (steps overridden per test)."""
    content, style = smoke_corpus

    def make(out_name: str, **overrides) -> TrainConfig:
        out = tmp_path_factory.mktemp(out_name)
        defaults = dict(
            content_dir=str(content),
            style_dir=str(style),
            steps=25,
            batch=2,
            crop=SMOKE_SIZE,
            resize=SMOKE_SIZE,
            seed=0,
            encoder="tiny",
            checkpoint_every=0,
            out_dir=str(out),
        )
        defaults.update(overrides)
        return TrainConfig(**defaults)

    return make


@pytest.fixture(scope="session")
def trained_run(smoke_config):
    """A short trained run shared by inference-path tests."""
    cfg = smoke_config("trained_run", steps=30)
    state, reports = train(cfg)
    ckpt = f"{cfg.out_dir}/checkpoints/step_{state.step:06d}.ckpt"
    return {"state": state, "reports": reports, "checkpoint": ckpt, "config": cfg}


@pytest.fixture
def tiny_model(tiny_encoder):
    return build_model(tiny_encoder, seed=0)


def finite_difference_check(
    loss_fn,
    tensors: list[torch.Tensor],
    coords_per_tensor: int = 6,
    h: float = 1e-5,
    rel_tol: float = 1e-4,
    seed: int = 0,
) -> None:
    """Compare autograd gradients of scalar `loss_fn()` against central
    finite differences at a sample of coordinates of each tensor.

    Tensors must be float64 leaves with requires_grad; loss_fn must rebuild
    the graph on every call.
    """
    for t in tensors:
        assert t.dtype == torch.float64, "finite differences need float64"
        if t.grad is not None:
            t.grad = None
    loss = loss_fn()
    loss.backward()
    rng = np.random.default_rng(seed)
    for t in tensors:
        assert t.grad is not None, "no gradient reached a checked tensor"
        flat = t.data.view(-1)
        grads = t.grad.view(-1)
        n = flat.numel()
        indices = rng.choice(n, size=min(coords_per_tensor, n), replace=False)
        for idx in indices:
            idx = int(idx)
            original = flat[idx].item()
            flat[idx] = original + h
            with torch.no_grad():
                plus = float(loss_fn())
            flat[idx] = original - h
            with torch.no_grad():
                minus = float(loss_fn())
            flat[idx] = original
            fd = (plus - minus) / (2 * h)
            ag = float(grads[idx])
            denom = max(abs(fd), abs(ag))
            if denom < 1e-7:
                assert abs(fd - ag) < 1e-7
            else:
                assert abs(fd - ag) / denom <= rel_tol, (
                    f"gradient mismatch at flat index {idx}: fd={fd!r} autograd={ag!r}"
                )
