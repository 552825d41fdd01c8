"""Quantitative evaluation: feature-space content loss, windowed SSIM, Gram
texture distance, per-layer mutual-information tables, and the two
disentanglement probes (line-art style, black content).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .bottleneck import NoiseSpec
from .core import LEVEL_TAGS, ImageTensor, bilinear_resize
from .decoder import clamp_to_image
from .encoder import EncoderWeights, encode
from .errors import IngestionError
from .model import StyleModel
from .training import ImageFolder

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

# ITU-R 601 luma coefficients.
_LUMA = (0.299, 0.587, 0.114)


@dataclass
class MetricReport:
    content_loss: float | None = None
    ssim: float | None = None
    gram_loss: float | None = None
    per_pair_rows: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "aggregate": {
                "content_loss": self.content_loss,
                "ssim": self.ssim,
                "gram_loss": self.gram_loss,
            },
            "pairs": self.per_pair_rows,
        }


def metric_content_loss(
    I_out: ImageTensor, I_c: ImageTensor, weights: EncoderWeights
) -> float:
    """MSE between encoder features of the two images, averaged over levels."""
    if I_out.shape != I_c.shape:
        raise ValueError(
            f"images must have the same size: {tuple(I_out.shape)} vs {tuple(I_c.shape)}"
        )
    pyr_out = encode(I_out, weights)
    pyr_c = encode(I_c, weights)
    losses = [
        F.mse_loss(out.data, ref.data) for out, ref in zip(pyr_out.maps, pyr_c.maps)
    ]
    return float(torch.stack(losses).mean())


def _to_luma(image: ImageTensor) -> torch.Tensor:
    coeffs = image.new_tensor(_LUMA).view(1, 3, 1, 1)
    return (image * coeffs).sum(dim=1, keepdim=True)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> torch.Tensor:
    """Normalized 2D Gaussian window, float64."""
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(coords**2) / (2.0 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def metric_ssim(I_out: ImageTensor, I_c: ImageTensor) -> float:
    """Windowed SSIM on luminance, mean over valid window positions."""
    if I_out.shape != I_c.shape:
        raise ValueError(
            f"images must have the same size: {tuple(I_out.shape)} vs {tuple(I_c.shape)}"
        )
    h, w = I_out.shape[-2:]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(
            f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM, got {h}x{w}"
        )
    x = _to_luma(I_out.detach().double())
    y = _to_luma(I_c.detach().double())
    kernel = gaussian_window().view(1, 1, SSIM_WINDOW, SSIM_WINDOW)

    def win(t: torch.Tensor) -> torch.Tensor:
        return F.conv2d(t, kernel)

    mu_x, mu_y = win(x), win(y)
    sxx = win(x * x) - mu_x * mu_x
    syy = win(y * y) - mu_y * mu_y
    sxy = win(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mu_x**2 + mu_y**2 + SSIM_C1) * (sxx + syy + SSIM_C2)
    return float((num / den).mean())


def gram_matrix(features: torch.Tensor) -> torch.Tensor:
    """Size-normalized Gram: F~ F~^T / (C * H * W) per batch item."""
    b, c, h, w = features.shape
    flat = features.reshape(b, c, h * w)
    return torch.bmm(flat, flat.transpose(1, 2)) / (c * h * w)


def metric_gram_loss(
    I_out: ImageTensor, I_s: ImageTensor, weights: EncoderWeights
) -> float:
    """Sum over levels of the MSE between Gram matrices of the two images."""
    pyr_out = encode(I_out, weights)
    pyr_s = encode(I_s, weights)
    total = 0.0
    for out, ref in zip(pyr_out.maps, pyr_s.maps):
        total += float(F.mse_loss(gram_matrix(out.data), gram_matrix(ref.data)))
    return total


def mi_table(
    model: StyleModel, images: list[ImageTensor], kind: str
) -> dict[str, float]:
    """Per-layer mean MI (nats) over an image set for one branch."""
    if kind not in ("content", "style"):
        raise ValueError(f"kind must be content|style, got {kind!r}")
    sums = np.zeros(len(LEVEL_TAGS))
    spec = NoiseSpec("expectation")
    with torch.no_grad():
        for image in images:
            pyr = model.encode_image(image)
            cp = (
                model.compress_content(pyr, spec)
                if kind == "content"
                else model.compress_style(pyr, spec)
            )
            sums += np.array([float(m) for m in cp.mi_means()])
    means = sums / max(len(images), 1)
    return dict(zip(LEVEL_TAGS, means.tolist()))


def write_mi_table_csv(tables: dict[str, dict[str, float]], path) -> None:
    """Rows = branches, columns = tap levels (Table-style layout)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["branch", *LEVEL_TAGS])
        for branch, row in tables.items():
            writer.writerow([branch, *[f"{row[tag]:.9f}" for tag in LEVEL_TAGS]])


def center_crop_load(path, size: int, dtype=torch.float32) -> ImageTensor:
    """Deterministic eval-time loading: short-side resize then center crop."""
    from PIL import Image as PILImage

    try:
        with PILImage.open(path) as img:
            rgb = img.convert("RGB")
            w, h = rgb.size
            if min(w, h) != size:
                if w <= h:
                    new_w, new_h = size, int(round(h * size / w))
                else:
                    new_w, new_h = int(round(w * size / h)), size
                rgb = rgb.resize((new_w, new_h), PILImage.BILINEAR)
            arr = np.asarray(rgb, dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise IngestionError(f"cannot decode image {path}: {exc}") from exc
    top = (arr.shape[0] - size) // 2
    left = (arr.shape[1] - size) // 2
    patch = arr[top : top + size, left : left + size]
    return torch.from_numpy(patch).permute(2, 0, 1).unsqueeze(0).to(dtype)


def _select(folder: ImageFolder, n: int, rng: np.random.Generator) -> list[int]:
    replace = len(folder) < n
    return [int(i) for i in rng.choice(len(folder), size=n, replace=replace)]


def run_evaluation(
    model: StyleModel,
    content_dir,
    style_dir,
    n_content: int = 20,
    n_style: int = 20,
    seed: int = 0,
    size: int = 256,
) -> MetricReport:
    """Seeded n_content x n_style stylization protocol with all three metrics."""
    rng = np.random.default_rng(seed)
    content_folder = ImageFolder(content_dir)
    style_folder = ImageFolder(style_dir)
    content_ids = _select(content_folder, n_content, rng)
    style_ids = _select(style_folder, n_style, rng)
    contents = [
        (content_folder.paths[i], center_crop_load(content_folder.paths[i], size))
        for i in content_ids
    ]
    styles = [
        (style_folder.paths[i], center_crop_load(style_folder.paths[i], size))
        for i in style_ids
    ]
    rows = []
    spec = NoiseSpec("expectation")
    with torch.no_grad():
        for c_path, I_c in contents:
            for s_path, I_s in styles:
                I_out = clamp_to_image(model.stylize(I_c, I_s, spec))
                rows.append(
                    {
                        "content": str(c_path),
                        "style": str(s_path),
                        "content_loss": metric_content_loss(I_out, I_c, model.encoder),
                        "ssim": metric_ssim(I_out, I_c),
                        "gram_loss": metric_gram_loss(I_out, I_s, model.encoder),
                    }
                )
    return MetricReport(
        content_loss=float(np.mean([r["content_loss"] for r in rows])),
        ssim=float(np.mean([r["ssim"] for r in rows])),
        gram_loss=float(np.mean([r["gram_loss"] for r in rows])),
        per_pair_rows=rows,
    )


def probe_asset_path(name: str) -> Path:
    """Path to a bundled probe image ('black_line' or 'black')."""
    path = Path(__file__).parent / "assets" / f"{name}.png"
    if not path.is_file():
        raise IngestionError(f"bundled probe asset missing: {path}")
    return path


def disentanglement_probe(
    model: StyleModel,
    probe: str,
    inputs: list[ImageTensor],
    probe_image: ImageTensor | None = None,
) -> MetricReport:
    """Stress the two halves of the disentanglement.

    blackline_style: the style is a line drawing; structure preservation is
    scored against each content input (content loss down, SSIM up is better).
    black_content: the content is a black image; style fidelity is scored
    against each style input (Gram loss down is better).
    """
    if probe not in ("blackline_style", "black_content"):
        raise ValueError(f"unknown probe {probe!r}")
    spec = NoiseSpec("expectation")
    rows = []
    with torch.no_grad():
        if probe == "blackline_style":
            if probe_image is None:
                size = inputs[0].shape[-1]
                probe_image = center_crop_load(probe_asset_path("black_line"), size)
            for i, I_c in enumerate(inputs):
                I_out = clamp_to_image(model.stylize(I_c, probe_image, spec))
                rows.append(
                    {
                        "index": i,
                        "content_loss": metric_content_loss(I_out, I_c, model.encoder),
                        "ssim": metric_ssim(I_out, I_c),
                    }
                )
            return MetricReport(
                content_loss=float(np.mean([r["content_loss"] for r in rows])),
                ssim=float(np.mean([r["ssim"] for r in rows])),
                per_pair_rows=rows,
            )
        if probe_image is None:
            size = inputs[0].shape[-1]
            probe_image = center_crop_load(probe_asset_path("black"), size)
        for i, I_s in enumerate(inputs):
            I_out = clamp_to_image(model.stylize(probe_image, I_s, spec))
            rows.append(
                {"index": i, "gram_loss": metric_gram_loss(I_out, I_s, model.encoder)}
            )
        return MetricReport(
            gram_loss=float(np.mean([r["gram_loss"] for r in rows])),
            per_pair_rows=rows,
        )


def write_report_json(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def write_report_csv(rows: list[dict], path) -> None:
    if not rows:
        Path(path).write_text("")
        return
    keys = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)
