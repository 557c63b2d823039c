"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
inconsistent inputs), 3 a check that ran but failed (gradcheck).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .codec.degrade import degrade
from .codec.imageio import ImageFormatError, list_images, read_image, write_image
from .codec.jpeg import JpegError
from .model import ConfigError, ModelConfig, count_macs, count_params, mac_breakdown, output_to_input_size, preset
from .tensor import ShapeError, UsageError
from .train import TrainingError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3
DATA_ERRORS = (ImageFormatError, JpegError, checkpoint.CheckpointError, ConfigError, ShapeError,
               TrainingError, OSError)


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise _Usage(message)


def env_seed() -> int:
    return int(os.environ.get("S2SR_SEED", "0"))


def env_threads() -> int:
    return max(1, int(os.environ.get("S2SR_THREADS", "1")))


def load_config(spec: str, **overrides) -> ModelConfig:
    """A JSON file path, or the name of a preset."""
    path = Path(spec)
    if path.suffix == ".json" or path.exists():
        cfg = ModelConfig.from_json(path.read_text())
        return cfg.replace(**overrides) if overrides else cfg
    return preset(spec, **overrides)


def _quality(text: str):
    if text.lower() == "none":
        return None
    vals = [int(v) for v in text.split(",")]
    if any(not 1 <= v <= 100 for v in vals):
        raise argparse.ArgumentTypeError("quality must lie in 1..100")
    return vals[0] if len(vals) == 1 else tuple(vals)


def _load_corpus(spec: str) -> list[np.ndarray]:
    if spec.startswith("synthetic:"):
        from .data import synthetic_corpus

        parts = [int(p) for p in spec.split(":")[1:]]
        n, size = parts[0], (parts[1] if len(parts) > 1 else 96)
        return synthetic_corpus(n, size, size, seed=0)
    files = list_images(spec)
    if not files:
        raise ImageFormatError(f"no images found in {spec}")
    return [read_image(f) for f in files]


# -- subcommands -----------------------------------------------------------
def cmd_degrade(a) -> int:
    src, dst = Path(a.inp), Path(a.out)
    pairs = [(src, dst)]
    if src.is_dir():
        dst.mkdir(parents=True, exist_ok=True)
        pairs = [(f, dst / (f.stem + ".png")) for f in list_images(src)]
    for s, d in pairs:
        img = read_image(s)
        H, W = img.shape[:2]
        img = img[: H - H % a.scale, : W - W % a.scale]  # crop to a multiple of the scale
        write_image(d, degrade(img, a.scale, a.quality))
    print(f"degraded {len(pairs)} image(s)")
    return EXIT_OK


def cmd_train(a) -> int:
    from .train import TrainConfig, train, write_loss_csv

    cfg = load_config(a.config)
    corpus = _load_corpus(a.data)
    tc = TrainConfig(iters=a.iters, batch_size=a.batch, hr_size=a.patch, quality=a.quality,
                     lambda_aux=a.lambda_aux, lambda_hf=a.lambda_hf, seed=a.seed,
                     workers=env_threads(), scales=tuple(a.scales or ()))
    resume = None
    if a.resume:
        resume, rcfg = checkpoint.load(a.resume)
        if rcfg != cfg:
            raise ConfigError("resume checkpoint was trained with a different config")
    res = train(cfg, corpus, tc, resume=resume, log_every=a.log_every)
    res.save(a.out)
    csv_path = a.loss_csv or str(Path(a.out).with_suffix(".loss.csv"))
    write_loss_csv(res.history, csv_path)
    if res.history:
        print(f"iters {tc.iters} final loss {res.history[-1]['total']:.5f}; wrote {a.out} and {csv_path}")
    return EXIT_OK


def cmd_restore(a) -> int:
    from .inference import restore

    model = checkpoint.load_model(a.ckpt)
    img = read_image(a.inp)
    out = restore(model, img, ensemble=a.ensemble, tile=a.tile, overlap=a.overlap, scale=a.scale, blend=a.blend)
    write_image(a.out, out)
    print(f"{img.shape[1]}x{img.shape[0]} -> {out.shape[1]}x{out.shape[0]}")
    return EXIT_OK


def cmd_eval(a) -> int:
    from .inference import restore
    from .metrics import psnr_y, ssim_y, write_metrics_csv

    model = checkpoint.load_model(a.ckpt)
    r = a.scale or model.config.scale
    lq_files = {f.stem: f for f in list_images(a.lq_dir)}
    rows = []
    for hr_file in list_images(a.hr_dir):
        if hr_file.stem not in lq_files:
            raise ImageFormatError(f"no LQ counterpart for {hr_file.name}")
        hr = read_image(hr_file)
        sr = restore(model, read_image(lq_files[hr_file.stem]), ensemble=a.ensemble,
                     tile=a.tile, overlap=a.overlap, scale=a.scale, blend=a.blend)
        if sr.shape != hr.shape:
            raise ShapeError(f"{hr_file.name}: restored {sr.shape[:2]} vs reference {hr.shape[:2]}")
        rows.append((hr_file.stem, psnr_y(sr, hr, r), ssim_y(sr, hr, r)))
    if not rows:
        raise ImageFormatError(f"no reference images in {a.hr_dir}")
    write_metrics_csv(rows, a.csv)
    print(f"{'image_id':<24}{'psnr_y':>10}{'ssim_y':>10}")
    for name, p, s in rows:
        print(f"{name:<24}{p:>10.4f}{s:>10.6f}")
    print(f"{'mean':<24}{np.mean([r[1] for r in rows]):>10.4f}{np.mean([r[2] for r in rows]):>10.6f}")
    return EXIT_OK


def cmd_flops(a) -> int:
    cfg = load_config(a.config, **({"scale": a.scale} if a.scale else {}))
    h, w = output_to_input_size(cfg, a.height, a.width)
    macs = count_macs(cfg, h, w)
    parts = mac_breakdown(cfg, h, w)
    print(f"macs {macs} ({macs / 1e9:.2f}G) for a {a.width}x{a.height} output ({w}x{h} input)")
    print(f"params {count_params(cfg)}")
    for k, v in parts.items():
        print(f"  {k:<10}{v / 1e9:>10.3f}G")
    print(f"  macs without attention products {(macs - parts['attention']) / 1e9:.2f}G")
    return EXIT_OK


def cmd_gradcheck(a) -> int:
    from .gradcheck import run_suite

    def show(name, rep):
        status = "ok " if rep.passed else "FAIL"
        print(f"{status} {name:<40} max rel err {rep.max_rel_err:.3e} {rep.message}")

    reports = run_suite(a.module, seed=a.seed, callback=show)
    worst = max(r.max_rel_err for r in reports.values())
    ok = all(r.passed for r in reports.values())
    print(f"{'passed' if ok else 'FAILED'}: {len(reports)} checks, max rel err {worst:.3e}")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_ci2(a) -> int:
    from .inference import pipeline_ci2, to_image, to_input

    s1, s2 = checkpoint.load_model(a.stage1), checkpoint.load_model(a.stage2)
    img = read_image(a.inp)
    out = pipeline_ci2(s1, s2, to_input(img), a.ensemble, a.ensemble)
    write_image(a.out, to_image(out))
    return EXIT_OK


def build_parser() -> _Parser:
    p = _Parser(prog="swin2sr", description="Compressed-image super-resolution toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("degrade", help="bicubic downscale then JPEG (file or directory)")
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--scale", type=int, required=True, choices=(1, 2, 3, 4))
    d.add_argument("--quality", type=_quality, default=None, help="1..100 or 'none'")
    d.set_defaults(fn=cmd_degrade)

    t = sub.add_parser("train", help="train from scratch or resume")
    t.add_argument("--config", required=True, help="JSON file or preset name")
    t.add_argument("--data", required=True, help="image directory or synthetic:N[:SIZE]")
    t.add_argument("--iters", type=int, required=True)
    t.add_argument("--seed", type=int, default=env_seed())
    t.add_argument("--out", required=True)
    t.add_argument("--batch", type=int, default=4)
    t.add_argument("--patch", type=int, default=192, help="HR crop size")
    t.add_argument("--quality", type=_quality, default=None, help="q, q1,q2,... or 'none'")
    t.add_argument("--lambda-aux", type=float, default=0.1)
    t.add_argument("--lambda-hf", type=float, default=0.1)
    t.add_argument("--scales", type=int, nargs="*", help="factors to mix (dynamic upsampler)")
    t.add_argument("--resume")
    t.add_argument("--loss-csv")
    t.add_argument("--log-every", type=int, default=0)
    t.set_defaults(fn=cmd_train)

    r = sub.add_parser("restore", help="restore one image")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--ensemble", action="store_true")
    r.add_argument("--tile", type=int)
    r.add_argument("--overlap", type=int, default=0)
    r.add_argument("--blend", choices=("seam", "mean"), default="seam",
                   help="how overlapping tiles are merged")
    r.add_argument("--scale", type=int, help="factor for the dynamic upsampler")
    r.set_defaults(fn=cmd_restore)

    e = sub.add_parser("eval", help="PSNR-Y / SSIM-Y over paired directories")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--hr-dir", required=True)
    e.add_argument("--lq-dir", required=True)
    e.add_argument("--csv", required=True)
    e.add_argument("--ensemble", action="store_true")
    e.add_argument("--tile", type=int)
    e.add_argument("--overlap", type=int, default=0)
    e.add_argument("--blend", choices=("seam", "mean"), default="seam",
                   help="how overlapping tiles are merged")
    e.add_argument("--scale", type=int)
    e.set_defaults(fn=cmd_eval)

    f = sub.add_parser("flops", help="parameter and MAC counts for an output size")
    f.add_argument("--config", required=True)
    f.add_argument("--height", type=int, required=True, help="output height")
    f.add_argument("--width", type=int, required=True, help="output width")
    f.add_argument("--scale", type=int)
    f.set_defaults(fn=cmd_flops)

    g = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    g.add_argument("--module", nargs="*", choices=("tensor", "attention", "losses", "model"))
    g.add_argument("--seed", type=int, default=env_seed())
    g.set_defaults(fn=cmd_gradcheck)

    c = sub.add_parser("ci2", help="two-stage restore: artifact removal then x4")
    c.add_argument("--stage1", required=True)
    c.add_argument("--stage2", required=True)
    c.add_argument("--in", dest="inp", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--ensemble", action="store_true")
    c.set_defaults(fn=cmd_ci2)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _Usage:
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"swin2sr: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"swin2sr: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
