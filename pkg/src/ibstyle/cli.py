"""Command-line surface: train, stylize, interpolate, inspect-info, evaluate.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric error.
Every subcommand writes only inside its --out directory.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import torch
import torch.nn.functional as F

from .bottleneck import NoiseSpec, export_info_outputs
from .core import ImageTensor, load_image, save_image
from .decoder import clamp_to_image
from .errors import FormatError, IngestionError, NumericError
from .evaluation import (
    disentanglement_probe,
    mi_table,
    run_evaluation,
    write_mi_table_csv,
    write_report_csv,
    write_report_json,
)
from .model import StyleModel
from .training import load_checkpoint, make_config, resolve_encoder, train
from .transfer import InterpolationWeights


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage problems; the CLI contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _noise_spec(args) -> NoiseSpec:
    if getattr(args, "sample", False):
        return NoiseSpec("sample", seed=args.seed)
    return NoiseSpec("expectation")


def _load_model(args) -> StyleModel:
    encoder = resolve_encoder(args.encoder) if args.encoder else None
    state = load_checkpoint(args.checkpoint, encoder=encoder)
    return state.model


def _pad_to_multiple(image: ImageTensor, multiple: int = 16) -> tuple[ImageTensor, int, int]:
    h, w = image.shape[-2:]
    pad_h = (-h) % multiple
    pad_w = (-w) % multiple
    if pad_h or pad_w:
        image = F.pad(image, (0, pad_w, 0, pad_h), mode="reflect")
    return image, h, w


def _stylize_file_pair(model, content_path, style_path, spec) -> ImageTensor:
    I_c = load_image(content_path)
    I_s = load_image(style_path)
    I_c_pad, h, w = _pad_to_multiple(I_c)
    I_s_pad, _, _ = _pad_to_multiple(I_s)
    with torch.no_grad():
        out = model.stylize(I_c_pad, I_s_pad, spec)
    return clamp_to_image(out)[..., :h, :w]


def cmd_train(args) -> int:
    overrides = {
        "content_dir": args.content_dir,
        "style_dir": args.style_dir,
        "steps": args.steps,
        "batch": args.batch,
        "crop": args.size if args.size else args.crop,
        "resize": args.size if args.size else args.resize,
        "lr": args.lr,
        "seed": args.seed,
        "encoder": args.encoder,
        "noise_mode": args.noise_mode,
        "lambda_info": args.lambda_info,
        "lambda_content": args.lambda_content,
        "lambda_style": args.lambda_style,
        "lambda_rec": args.lambda_rec,
        "apply_info_loss_cross_domain": args.info_loss_cross_domain or None,
        "use_cib": False if args.no_cib else None,
        "use_sib": False if args.no_sib else None,
        "use_rec_content": False if args.no_rec_content else None,
        "use_rec_style": False if args.no_rec_style else None,
        "kv_pool_limit": args.kv_pool_limit,
        "checkpoint_every": args.checkpoint_every,
        "preview_every": args.preview_every,
        "out_dir": args.out,
    }
    cfg = make_config(args.config, **overrides)
    _, reports = train(cfg, quiet=args.quiet)
    if reports:
        print(f"trained {len(reports)} steps; final total loss {reports[-1].total:.6f}")
    print(f"outputs in {cfg.out_dir}")
    return 0


def cmd_stylize(args) -> int:
    model = _load_model(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = _stylize_file_pair(model, args.content, args.style, _noise_spec(args))
    name = f"{Path(args.content).stem}__{Path(args.style).stem}.png"
    out_path = out_dir / name
    save_image(result, out_path)
    print(out_path)
    return 0


def cmd_interpolate(args) -> int:
    model = _load_model(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    style_paths = [p for p in args.styles.split(",") if p]
    spec = _noise_spec(args)

    I_c = load_image(args.content)
    I_c_pad, h, w = _pad_to_multiple(I_c)
    styles = []
    for p in style_paths:
        padded, _, _ = _pad_to_multiple(load_image(p))
        styles.append(padded)

    def render(weights: list[float]) -> ImageTensor:
        with torch.no_grad():
            out = model.stylize_interpolated(
                I_c_pad, styles, InterpolationWeights(weights), spec
            )
        return clamp_to_image(out)[..., :h, :w]

    written = []
    if args.sweep:
        k = args.sweep
        if k < 2:
            raise ValueError("--sweep needs at least 2 points")
        if len(style_paths) == 2:
            for i in range(k):
                t = i / (k - 1)
                path = out_dir / f"interp_{i:02d}.png"
                save_image(render([1.0 - t, t]), path)
                written.append(path)
        elif len(style_paths) == 4:
            for r in range(k):
                u = r / (k - 1)
                for c in range(k):
                    v = c / (k - 1)
                    weights = [
                        (1 - u) * (1 - v), (1 - u) * v, u * (1 - v), u * v,
                    ]
                    path = out_dir / f"grid_{r:02d}_{c:02d}.png"
                    save_image(render(weights), path)
                    written.append(path)
        else:
            raise ValueError("--sweep supports exactly 2 or 4 styles")
    else:
        if args.weights is None:
            raise ValueError("provide --weights or --sweep")
        weights = [float(x) for x in args.weights.split(",") if x]
        path = out_dir / "interp.png"
        save_image(render(weights), path)
        written.append(path)
    for path in written:
        print(path)
    return 0


def cmd_inspect_info(args) -> int:
    model = _load_model(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    image, _, _ = _pad_to_multiple(load_image(args.image))
    with torch.no_grad():
        pyramid = model.encode_image(image)
        if args.branch == "content":
            cp = model.compress_content(pyramid, NoiseSpec("expectation"))
        else:
            cp = model.compress_style(pyramid, NoiseSpec("expectation"))
    for path in export_info_outputs(cp, out_dir, args.branch):
        print(path)
    return 0


def cmd_evaluate(args) -> int:
    model = _load_model(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = run_evaluation(
        model,
        args.content_dir,
        args.style_dir,
        n_content=args.n_content,
        n_style=args.n_style,
        seed=args.seed,
        size=args.size,
    )
    payload = report.to_dict()
    if args.probe in ("blackline", "both"):
        from .evaluation import center_crop_load

        contents = [center_crop_load(r["content"], args.size) for r in report.per_pair_rows[:: args.n_style]]
        probe = disentanglement_probe(model, "blackline_style", contents)
        payload["probe_blackline_style"] = probe.to_dict()
    if args.probe in ("black", "both"):
        from .evaluation import center_crop_load

        styles = [center_crop_load(r["style"], args.size) for r in report.per_pair_rows[: args.n_style]]
        probe = disentanglement_probe(model, "black_content", styles)
        payload["probe_black_content"] = probe.to_dict()
    if args.mi_table:
        from .evaluation import center_crop_load

        contents = [center_crop_load(r["content"], args.size) for r in report.per_pair_rows[:: args.n_style]]
        styles = [center_crop_load(r["style"], args.size) for r in report.per_pair_rows[: args.n_style]]
        tables = {
            "cib": mi_table(model, contents, "content"),
            "sib": mi_table(model, styles, "style"),
        }
        write_mi_table_csv(tables, out_dir / "mi_table.csv")
        payload["mi_table"] = tables
    write_report_json(payload, out_dir / "report.json")
    write_report_csv(report.per_pair_rows, out_dir / "report.csv")
    print(out_dir / "report.json")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="ibstyle", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", parents=[], help="train a model")
    p_train.add_argument("--content-dir", required=True, help="directory of content images")
    p_train.add_argument("--style-dir", required=True, help="directory of style images")
    p_train.add_argument("--steps", type=int, default=None, help="training steps (default 1000)")
    p_train.add_argument("--batch", type=int, default=None, help="batch size (default 2)")
    p_train.add_argument("--crop", type=int, default=None, help="crop size (default 256)")
    p_train.add_argument("--resize", type=int, default=None, help="short-side resize (default 512)")
    p_train.add_argument("--size", type=int, default=None,
                         help="set crop and resize together (e.g. 64 for smoke runs)")
    p_train.add_argument("--lr", type=float, default=None, help="learning rate (default 1e-4)")
    p_train.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
    p_train.add_argument("--encoder", default=None,
                         help="encoder: 'tiny', 'full-random', or an archive path (default tiny)")
    p_train.add_argument("--noise-mode", choices=["sample", "expectation"], default=None,
                         help="bottleneck noise mode during training (default sample)")
    p_train.add_argument("--lambda-info", type=float, default=None, help="info loss weight (default 5)")
    p_train.add_argument("--lambda-content", type=float, default=None, help="content loss weight (default 3)")
    p_train.add_argument("--lambda-style", type=float, default=None, help="style loss weight (default 10)")
    p_train.add_argument("--lambda-rec", type=float, default=None, help="reconstruction loss weight (default 10)")
    p_train.add_argument("--no-cib", action="store_true", help="ablation: drop content bottlenecks")
    p_train.add_argument("--no-sib", action="store_true", help="ablation: drop style bottlenecks")
    p_train.add_argument("--no-rec-content", action="store_true",
                         help="ablation: drop the content half of the reconstruction loss")
    p_train.add_argument("--no-rec-style", action="store_true",
                         help="ablation: drop the style half of the reconstruction loss")
    p_train.add_argument("--info-loss-cross-domain", action="store_true",
                         help="also apply the info loss to cross-domain compressions")
    p_train.add_argument("--kv-pool-limit", type=int, default=None,
                         help="max attended style positions per axis (default 64)")
    p_train.add_argument("--checkpoint-every", type=int, default=None,
                         help="checkpoint cadence in steps (default 1000)")
    p_train.add_argument("--preview-every", type=int, default=None,
                         help="preview PNG cadence in steps (default off)")
    p_train.add_argument("--config", default=None, help="key = value config file")
    p_train.add_argument("--quiet", action="store_true", help="suppress progress lines")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.set_defaults(func=cmd_train)

    def add_inference_args(p, with_noise=True):
        p.add_argument("--checkpoint", required=True, help="checkpoint archive")
        p.add_argument("--encoder", default=None,
                       help="encoder override: path or builtin name (default: from checkpoint)")
        p.add_argument("--out", required=True, help="output directory")
        if with_noise:
            p.add_argument("--deterministic", dest="sample", action="store_false",
                           help="expectation-mode noise (default)")
            p.add_argument("--sample", dest="sample", action="store_true",
                           help="sampled noise (seeded)")
            p.add_argument("--seed", type=int, default=0, help="noise seed (default 0)")
            p.set_defaults(sample=False)

    p_sty = sub.add_parser("stylize", help="stylize one content image with one style image")
    p_sty.add_argument("--content", required=True, help="content image path")
    p_sty.add_argument("--style", required=True, help="style image path")
    add_inference_args(p_sty)
    p_sty.set_defaults(func=cmd_stylize)

    p_int = sub.add_parser("interpolate", help="blend several styles with convex weights")
    p_int.add_argument("--content", required=True, help="content image path")
    p_int.add_argument("--styles", required=True, help="comma-separated style image paths")
    p_int.add_argument("--weights", default=None,
                       help="comma-separated weights summing to 1")
    p_int.add_argument("--sweep", type=int, default=None,
                       help="K evenly spaced weight vectors (2 styles: strip; 4: KxK grid)")
    add_inference_args(p_int)
    p_int.set_defaults(func=cmd_interpolate)

    p_ins = sub.add_parser("inspect-info", help="export per-level information maps")
    p_ins.add_argument("--image", required=True, help="input image path")
    p_ins.add_argument("--branch", choices=["content", "style"], required=True,
                       help="which bottleneck branch to inspect")
    add_inference_args(p_ins, with_noise=False)
    p_ins.set_defaults(func=cmd_inspect_info)

    p_eval = sub.add_parser("evaluate", help="run the seeded pairwise metric protocol")
    p_eval.add_argument("--content-dir", required=True, help="directory of content images")
    p_eval.add_argument("--style-dir", required=True, help="directory of style images")
    p_eval.add_argument("--n-content", type=int, default=20, help="content sample count (default 20)")
    p_eval.add_argument("--n-style", type=int, default=20, help="style sample count (default 20)")
    p_eval.add_argument("--size", type=int, default=256, help="evaluation resolution (default 256)")
    p_eval.add_argument("--seed", type=int, default=0, help="sampling seed (default 0)")
    p_eval.add_argument("--probe", choices=["none", "blackline", "black", "both"],
                        default="none", help="disentanglement probes to run (default none)")
    p_eval.add_argument("--mi-table", action="store_true",
                        help="also export the per-layer MI table CSV")
    add_inference_args(p_eval, with_noise=False)
    p_eval.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (IngestionError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
