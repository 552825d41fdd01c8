"""Training harness: dataset ingestion and augmentation, the in-domain
forward pass, the cross-domain cycle pass, optimization, checkpointing, and
the JSON-line step log.

The in-domain and cross-domain passes share the exact same parameter
objects; the whole loop is deterministic given the config seed (bit-identical
with expectation-mode noise, seeded otherwise).
"""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .bottleneck import CompressedPyramid, NoiseSpec
from .core import FeaturePyramid, ImageTensor, save_image
from .decoder import clamp_to_image
from .encoder import (
    PROVENANCE_RANDOM,
    TINY_SEED,
    EncoderWeights,
    build_encoder,
    build_tiny_encoder,
    load_encoder,
)
from .errors import ConfigMismatchError, FormatError, IngestionError, NumericError
from .losses import (
    LossReport,
    LossWeights,
    content_loss_from_features,
    info_loss,
    rec_loss,
    style_loss_from_features,
    total_loss,
)
from .model import ModelConfig, StyleModel, build_model
from .archive import load_archive, save_archive

CHECKPOINT_VERSION = 1
_IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg"}


@dataclass
class TrainConfig:
    content_dir: str = ""
    style_dir: str = ""
    steps: int = 1000
    batch: int = 2
    crop: int = 256
    resize: int = 512
    lambda_info: float = 5.0
    lambda_content: float = 3.0
    lambda_style: float = 10.0
    lambda_rec: float = 10.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    lr: float = 1e-4
    seed: int = 0
    apply_info_loss_cross_domain: bool = False
    noise_mode: str = "sample"
    encoder: str = "tiny"  # "tiny" | "full-random" | path to an archive
    use_cib: bool = True
    use_sib: bool = True
    use_rec_content: bool = True
    use_rec_style: bool = True
    kv_pool_limit: int = 64
    checkpoint_every: int = 1000
    preview_every: int = 0
    out_dir: str = "run"

    def __post_init__(self) -> None:
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.crop > self.resize:
            raise ValueError(f"crop ({self.crop}) must be <= resize ({self.resize})")
        if self.noise_mode not in ("sample", "expectation"):
            raise ValueError(f"noise_mode must be sample|expectation, got {self.noise_mode!r}")
        for name in ("lambda_info", "lambda_content", "lambda_style", "lambda_rec"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def lambdas(self) -> LossWeights:
        return LossWeights(
            info=self.lambda_info,
            content=self.lambda_content,
            style=self.lambda_style,
            rec=self.lambda_rec,
        )


def parse_config_file(path) -> dict[str, str]:
    """Flat `key = value` file; '#' starts a comment."""
    values: dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _coerce(value: str, target_type):
    if target_type is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"cannot parse boolean from {value!r}")
    return target_type(value)


def make_config(config_file=None, **overrides) -> TrainConfig:
    """Build a TrainConfig from an optional file with CLI overrides on top."""
    hints = typing.get_type_hints(TrainConfig)
    values: dict = {}
    if config_file is not None:
        for key, raw in parse_config_file(config_file).items():
            if key not in hints:
                raise ValueError(f"unknown config key {key!r} in {config_file}")
            values[key] = _coerce(raw, hints[key])
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in hints:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = value
    return TrainConfig(**values)


class ImageFolder:
    """Sorted view of the decodable images directly inside a directory."""

    def __init__(self, root):
        self.root = Path(root)
        if not self.root.is_dir():
            raise IngestionError(f"not a directory: {self.root}")
        self.paths = sorted(
            p for p in self.root.iterdir()
            if p.is_file() and p.suffix.lower() in _IMAGE_EXTENSIONS
        )
        if not self.paths:
            raise IngestionError(f"no decodable images in {self.root}")

    def __len__(self) -> int:
        return len(self.paths)

    def load_augmented(
        self, index: int, resize: int, crop: int, rng: np.random.Generator
    ) -> torch.Tensor:
        """Short-side resize then random crop; returns (3, crop, crop)."""
        path = self.paths[index]
        try:
            with Image.open(path) as img:
                rgb = img.convert("RGB")
                w, h = rgb.size
                if min(w, h) != resize:
                    if w <= h:
                        new_w, new_h = resize, int(round(h * resize / w))
                    else:
                        new_w, new_h = int(round(w * resize / h)), resize
                    rgb = rgb.resize((new_w, new_h), Image.BILINEAR)
                arr = np.asarray(rgb, dtype=np.float32) / 255.0
        except (OSError, ValueError) as exc:
            raise IngestionError(f"cannot decode image {path}: {exc}") from exc
        top = int(rng.integers(0, arr.shape[0] - crop + 1))
        left = int(rng.integers(0, arr.shape[1] - crop + 1))
        patch = arr[top : top + crop, left : left + crop]
        return torch.from_numpy(patch).permute(2, 0, 1)


@dataclass
class Corpus:
    content: ImageFolder
    style: ImageFolder

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "Corpus":
        return cls(ImageFolder(cfg.content_dir), ImageFolder(cfg.style_dir))


def sample_batch(
    corpus: Corpus, cfg: TrainConfig, rng: np.random.Generator
) -> tuple[ImageTensor, ImageTensor]:
    """One augmented (content, style) batch pair."""
    def draw(folder: ImageFolder) -> torch.Tensor:
        indices = rng.integers(0, len(folder), size=cfg.batch)
        return torch.stack(
            [folder.load_augmented(int(i), cfg.resize, cfg.crop, rng) for i in indices]
        )

    return draw(corpus.content), draw(corpus.style)


def resolve_encoder(spec: str) -> EncoderWeights:
    """Map an encoder config string to weights: builtin names or a path."""
    if spec == "tiny":
        return build_tiny_encoder()
    if spec == "full-random":
        return build_encoder(PROVENANCE_RANDOM, width_divisor=1, seed=TINY_SEED)
    return load_encoder(spec)


@dataclass
class TrainState:
    model: StyleModel
    optimizer: torch.optim.Adam
    config: TrainConfig
    corpus: Corpus | None = None
    step: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)


def init_train_state(
    cfg: TrainConfig, encoder: EncoderWeights | None = None, with_corpus: bool = True
) -> TrainState:
    encoder = encoder or resolve_encoder(cfg.encoder)
    model = build_model(
        encoder,
        ModelConfig(
            use_cib=cfg.use_cib, use_sib=cfg.use_sib, kv_pool_limit=cfg.kv_pool_limit
        ),
        seed=cfg.seed,
    )
    optimizer = torch.optim.Adam(
        model.trainables().parameters(),
        lr=cfg.lr,
        betas=(cfg.adam_beta1, cfg.adam_beta2),
    )
    corpus = Corpus.from_config(cfg) if with_corpus else None
    return TrainState(
        model=model,
        optimizer=optimizer,
        config=cfg,
        corpus=corpus,
        rng=np.random.default_rng(cfg.seed),
    )


def _step_generator(cfg: TrainConfig, step: int) -> torch.Generator | None:
    """Fresh, deterministic noise source per training step."""
    if cfg.noise_mode != "sample":
        return None
    gen = torch.Generator()
    gen.manual_seed(((cfg.seed + 1) * 1_000_003 + step) % (2**63 - 1))
    return gen


@dataclass
class InDomainResult:
    I_cs: ImageTensor
    cp_c: CompressedPyramid
    cp_s: CompressedPyramid
    F_c: FeaturePyramid
    F_s: FeaturePyramid
    pyr_cs: FeaturePyramid
    info: torch.Tensor
    content: torch.Tensor
    style: torch.Tensor


def forward_in_domain(
    I_c: ImageTensor,
    I_s: ImageTensor,
    state: TrainState,
    generator: torch.Generator | None = None,
) -> InDomainResult:
    """Encode, compress, transfer, decode; info/content/style loss parts."""
    cfg = state.config
    model = state.model
    if generator is None:
        generator = _step_generator(cfg, state.step)
    spec = NoiseSpec(cfg.noise_mode)
    F_c = model.encode_image(I_c)
    F_s = model.encode_image(I_s)
    cp_c = model.compress_content(F_c, spec, generator)
    cp_s = model.compress_style(F_s, spec, generator)
    I_cs = model.render(cp_c, cp_s)
    pyr_cs = model.encode_image(I_cs)
    info = info_loss(cp_c, cp_s)
    content = content_loss_from_features(pyr_cs, F_c, F_s, model.t_prime)
    style = style_loss_from_features(pyr_cs, F_s)
    return InDomainResult(I_cs, cp_c, cp_s, F_c, F_s, pyr_cs, info, content, style)


@dataclass
class CrossDomainResult:
    I_c_hat: ImageTensor
    I_s_hat: ImageTensor
    rec: torch.Tensor
    info_cross: torch.Tensor


def forward_cross_domain(
    I_c: ImageTensor,
    I_s: ImageTensor,
    I_cs: ImageTensor,
    state: TrainState,
    in_res: InDomainResult | None = None,
    generator: torch.Generator | None = None,
) -> CrossDomainResult:
    """Cycle pass: swap input domains, re-encode the output, reconstruct both.

    Gradients flow through I_cs; all trainable parameters are the very same
    objects the in-domain pass used.
    """
    cfg = state.config
    model = state.model
    if generator is None:
        generator = _step_generator(cfg, state.step)
    spec = NoiseSpec(cfg.noise_mode)
    F_c = in_res.F_c if in_res is not None else model.encode_image(I_c)
    F_s = in_res.F_s if in_res is not None else model.encode_image(I_s)
    pyr_cs = in_res.pyr_cs if in_res is not None else model.encode_image(I_cs)
    cp_c_from_s = model.compress_content(F_s, spec, generator)
    cp_s_from_c = model.compress_style(F_c, spec, generator)
    cp_c_from_cs = model.compress_content(pyr_cs, spec, generator)
    cp_s_from_cs = model.compress_style(pyr_cs, spec, generator)
    I_c_hat = model.render(cp_c_from_cs, cp_s_from_c)
    I_s_hat = model.render(cp_c_from_s, cp_s_from_cs)
    rec = rec_loss(
        I_c_hat, I_c, I_s_hat, I_s,
        content_weight=1.0 if cfg.use_rec_content else 0.0,
        style_weight=1.0 if cfg.use_rec_style else 0.0,
    )
    info_cross = (
        info_loss(cp_c_from_s, cp_s_from_c) + info_loss(cp_c_from_cs, cp_s_from_cs)
    )
    return CrossDomainResult(I_c_hat, I_s_hat, rec, info_cross)


def train_step(state: TrainState, capture: dict | None = None) -> LossReport:
    """One optimization step over a freshly sampled batch."""
    cfg = state.config
    if state.corpus is None:
        raise ValueError("train state has no corpus attached")
    I_c, I_s = sample_batch(state.corpus, cfg, state.rng)
    generator = _step_generator(cfg, state.step)
    in_res = forward_in_domain(I_c, I_s, state, generator)
    info = in_res.info
    run_cross = cfg.lambda_rec > 0
    if run_cross:
        cross = forward_cross_domain(I_c, I_s, in_res.I_cs, state, in_res, generator)
        rec = cross.rec
        if cfg.apply_info_loss_cross_domain:
            info = info + cross.info_cross
    else:
        cross = None
        rec = in_res.info.new_zeros(())
    try:
        total, report = total_loss(
            info,
            in_res.content,
            in_res.style,
            rec,
            lambdas=cfg.lambdas,
            per_layer_mi_content=[float(m.detach()) for m in in_res.cp_c.mi_means()],
            per_layer_mi_style=[float(m.detach()) for m in in_res.cp_s.mi_means()],
            step=state.step,
        )
    except NumericError as exc:
        raise NumericError(f"training diverged at step {state.step}: {exc}") from exc
    state.optimizer.zero_grad()
    total.backward()
    state.optimizer.step()
    state.step += 1
    if capture is not None:
        capture["I_c"] = I_c.detach()
        capture["I_s"] = I_s.detach()
        capture["I_cs"] = in_res.I_cs.detach()
        if cross is not None:
            capture["I_c_hat"] = cross.I_c_hat.detach()
            capture["I_s_hat"] = cross.I_s_hat.detach()
    return report


def _optimizer_tensors(state: TrainState) -> dict[str, torch.Tensor]:
    tensors: dict[str, torch.Tensor] = {}
    for pname, param in state.model.trainables().named_parameters():
        opt_state = state.optimizer.state.get(param)
        if not opt_state:
            continue
        for key in ("step", "exp_avg", "exp_avg_sq"):
            value = opt_state[key]
            if not torch.is_tensor(value):
                value = torch.tensor(float(value))
            tensors[f"optim.{pname}.{key}"] = value
    return tensors


def save_checkpoint(state: TrainState, path) -> None:
    """Named-tensor archive of all trainables, moments, and the config."""
    tensors = {
        f"model.{name}": t
        for name, t in state.model.trainables().state_dict().items()
    }
    tensors.update(_optimizer_tensors(state))
    enc = state.model.encoder
    metadata = {
        "kind": "checkpoint",
        "version": CHECKPOINT_VERSION,
        "step": state.step,
        "config": dataclasses.asdict(state.config),
        "encoder": {
            "provenance": enc.provenance,
            "width_divisor": enc.width_divisor,
            "seed": enc.seed,
            "arch_version": enc.arch_version,
            "checksum": enc.checksum(),
        },
        "rng_state": state.rng.bit_generator.state,
    }
    save_archive(path, tensors, metadata)


def load_checkpoint(
    path, encoder: EncoderWeights | None = None, with_corpus: bool = False
) -> TrainState:
    """Rebuild a TrainState; round-trips parameters bit-identically."""
    tensors, metadata = load_archive(path)
    if metadata.get("kind") != "checkpoint":
        raise FormatError(f"{path} is not a checkpoint archive")
    if metadata.get("version") != CHECKPOINT_VERSION:
        raise FormatError(
            f"checkpoint version {metadata.get('version')!r} is not supported"
        )
    cfg = TrainConfig(**metadata["config"])
    enc_meta = metadata["encoder"]
    if encoder is None:
        if enc_meta["provenance"] in ("tiny-random", PROVENANCE_RANDOM):
            encoder = build_encoder(
                enc_meta["provenance"], enc_meta["width_divisor"], enc_meta["seed"]
            )
        else:
            raise ConfigMismatchError(
                "checkpoint was trained with a pretrained encoder; pass its archive"
            )
    if encoder.width_divisor != enc_meta["width_divisor"]:
        raise ConfigMismatchError(
            f"checkpoint expects encoder width divisor {enc_meta['width_divisor']}, "
            f"got {encoder.width_divisor}"
        )
    if encoder.checksum() != enc_meta["checksum"]:
        raise ConfigMismatchError(
            "encoder checksum does not match the one recorded in the checkpoint"
        )
    state = init_train_state(cfg, encoder=encoder, with_corpus=with_corpus)
    expected = state.model.trainables().state_dict()
    with torch.no_grad():
        for name, target in expected.items():
            key = f"model.{name}"
            if key not in tensors:
                raise FormatError(f"checkpoint is missing tensor '{key}'")
            if tuple(tensors[key].shape) != tuple(target.shape):
                raise FormatError(
                    f"checkpoint tensor '{key}' has shape {tuple(tensors[key].shape)}, "
                    f"expected {tuple(target.shape)}"
                )
            target.copy_(tensors[key])
    for pname, param in state.model.trainables().named_parameters():
        step_key = f"optim.{pname}.step"
        if step_key not in tensors:
            continue
        state.optimizer.state[param] = {
            "step": tensors[step_key].clone(),
            "exp_avg": tensors[f"optim.{pname}.exp_avg"].clone(),
            "exp_avg_sq": tensors[f"optim.{pname}.exp_avg_sq"].clone(),
        }
    state.step = metadata["step"]
    state.rng = np.random.default_rng()
    state.rng.bit_generator.state = metadata["rng_state"]
    return state


def _write_preview(capture: dict, path: Path) -> None:
    keys = ["I_c", "I_s", "I_cs", "I_c_hat", "I_s_hat"]
    panels = [clamp_to_image(capture[k][:1]) for k in keys if k in capture]
    save_image(torch.cat(panels, dim=3), path)


def train(cfg: TrainConfig, quiet: bool = True) -> tuple[TrainState, list[LossReport]]:
    """Run the full loop; writes logs, previews, and checkpoints under out_dir."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(exist_ok=True)
    state = init_train_state(cfg)
    reports: list[LossReport] = []
    log_path = out / "train_log.jsonl"

    def checkpoint(tag: str) -> None:
        ckpt_path = out / "checkpoints" / f"step_{state.step:06d}.ckpt"
        save_checkpoint(state, ckpt_path)
        (out / "checkpoints" / "LATEST").write_text(ckpt_path.name + "\n")
        if not quiet:
            print(f"[{tag}] wrote {ckpt_path}")

    with open(log_path, "w") as log:
        for _ in range(cfg.steps):
            want_preview = cfg.preview_every > 0 and (state.step + 1) % cfg.preview_every == 0
            capture: dict | None = {} if want_preview else None
            report = train_step(state, capture)
            reports.append(report)
            log.write(report.to_json_line() + "\n")
            if want_preview:
                previews = out / "previews"
                previews.mkdir(exist_ok=True)
                _write_preview(capture, previews / f"step_{state.step:06d}.png")
            if cfg.checkpoint_every > 0 and state.step % cfg.checkpoint_every == 0:
                checkpoint("periodic")
            if not quiet and state.step % 10 == 0:
                print(f"step {state.step}: total={report.total:.4f}")
    checkpoint("final")
    return state, reports
