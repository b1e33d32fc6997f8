"""Command-line entry point: synthesis, training, evaluation, ablation sweeps,
and standalone SR inference."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np
import torch
from PIL import Image

from . import checkpoint as ckpt
from . import data as D
from . import evaluation as E
from . import trainer as T

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NO_CONFIG = 2
EXIT_NO_DATASET = 3
EXIT_BAD_CHECKPOINT = 4

_VARIANT_NAMES = {"base": "Base", "sam": "Base+SAM", "srm": "Base+SRM", "full": "SRCDNet"}

_CONFIG_HELP = ("config file keys: " + ", ".join(sorted(T._CONFIG_KEYS)))


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--mode", choices=["X1", "X4", "X8"], help="resolution-difference mode")
    p.add_argument("--seed", type=int, help="rng seed")
    p.add_argument("--epochs", type=int, help="training epochs")
    p.add_argument("--data-root", help="dataset root (A/B/label layout); "
                                       "falls back to $SRCD_DATA_ROOT")
    p.add_argument("--out", default="out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="srcd", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="write a synthetic change dataset",
                       epilog=_CONFIG_HELP)
    g.add_argument("--pairs", type=int, default=8)
    g.add_argument("--size", type=int, default=64, help="scene side length")
    g.add_argument("--change-prob", type=float, default=0.5)
    g.add_argument("--noise-amp", type=float, default=0.01)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="out")

    t = sub.add_parser("train", help="train one configuration", epilog=_CONFIG_HELP)
    _add_common(t)
    t.add_argument("--variant", choices=sorted(_VARIANT_NAMES), default="full")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a split", epilog=_CONFIG_HELP)
    _add_common(e)
    e.add_argument("--checkpoint", required=True, help="checkpoint directory")
    e.add_argument("--split", choices=["train", "val", "test"], default="test")
    e.add_argument("--panels", type=int, default=4, help="number of patch panels to render")

    a = sub.add_parser("ablate", help="run the four ablation variants", epilog=_CONFIG_HELP)
    _add_common(a)
    a.add_argument("--modes", default=None,
                   help="comma-separated mode list (overrides --mode), e.g. X4,X8")

    s = sub.add_parser("sr-infer", help="upscale rasters with a generator checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True, help="PNG file or directory of PNGs")
    s.add_argument("--out", default="out")
    s.add_argument("--config")
    return ap


def _load_config(args) -> T.ExperimentConfig:
    values = {}
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise FileNotFoundError(f"config file {args.config!r} not found")
        with open(args.config) as fh:
            values = T.parse_config_text(fh.read())
    for key in ("mode", "seed", "epochs"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    data_root = getattr(args, "data_root", None) or values.get("data_root") \
        or os.environ.get("SRCD_DATA_ROOT", "")
    values["data_root"] = data_root
    return T.config_from_dict(values)


def _write_effective_config(cfg: T.ExperimentConfig, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "effective_config.txt"), "w") as fh:
        for key, val in sorted(T.config_to_dict(cfg).items()):
            fh.write(f"{key}={val}\n")


def cmd_gen_synth(args) -> int:
    cfg = D.SynthConfig(n_pairs=args.pairs, scene_size=args.size,
                        change_prob=args.change_prob, noise_amp=args.noise_amp)
    scenes = D.synth_generate(cfg, seed=args.seed)
    D.write_dataset_dir(scenes, args.out)
    with open(os.path.join(args.out, "effective_config.txt"), "w") as fh:
        for key in ("pairs", "size", "change_prob", "noise_amp", "seed"):
            fh.write(f"{key}={getattr(args, key)}\n")
    print(f"wrote {len(scenes)} synthetic pairs to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    cfg = T.configure_ablation(cfg, _VARIANT_NAMES[args.variant])
    cfg.checkpoint_dir = os.path.join(args.out, "checkpoints")
    _write_effective_config(cfg, args.out)
    state = T.train(cfg)
    print(f"trained {state.iteration} iterations; best val F1 {state.best_f1:.4f}")
    return EXIT_OK


def _render_panels(models, pairs, cfg, theta, out_dir, count) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for pair in pairs[:count]:
        dt, pred, sr = E.infer_patch(models, pair, cfg, theta)
        h, w = pair.gt.shape
        panels = [pair.hr_t1, pair.hr_t2, _up(pair.lr_t2, (h, w)), pair.bicubic_t2]
        if sr is not None:
            panels.append(sr)
        panels.append(np.repeat(pair.gt[:, :, None], 3, axis=2).astype(np.float32))
        panels.append(np.repeat(pred[:, :, None], 3, axis=2).astype(np.float32))
        strip = np.concatenate(panels, axis=1)
        D._save_png(strip, os.path.join(out_dir, f"{pair.patch_id}_panel.png"))
        E.save_distance_png(dt, cfg.weights.margin_m,
                            os.path.join(out_dir, f"{pair.patch_id}_dt.png"))
        E.save_mask_png(pred, os.path.join(out_dir, f"{pair.patch_id}_pred.png"))


def _up(img, size):
    t = torch.from_numpy(np.ascontiguousarray(img)).permute(2, 0, 1)[None]
    out = torch.nn.functional.interpolate(t, size=size, mode="nearest")
    return out[0].permute(1, 2, 0).numpy()


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    manifest = ckpt.read_manifest(args.checkpoint)
    saved = manifest.get("config", {})
    for key in ("mode", "use_srm", "use_sam", "base_width"):
        if key in saved:
            setattr(cfg, key, saved[key])
    _write_effective_config(cfg, args.out)
    state = T.init_state(cfg)
    for name, module in state.models.named_sets().items():
        ckpt.load_param_set(args.checkpoint, name, module)
    split = T.load_split(cfg)
    pairs = getattr(split, args.split)
    report = E.evaluate_split(state.models, pairs, cfg, cfg.theta)
    row = {"variant": "SRCDNet" if (cfg.use_srm and cfg.use_sam) else "custom",
           "mode": cfg.mode, "precision": report.precision, "recall": report.recall,
           "f1": report.f1, "iou": report.iou, "psnr_sr": report.psnr_sr,
           "ssim_sr": report.ssim_sr, "psnr_bicubic": report.psnr_bicubic,
           "ssim_bicubic": report.ssim_bicubic}
    E.write_report_csv(os.path.join(args.out, "report.csv"), [row])
    E.write_report_text(os.path.join(args.out, "report.txt"), [row])
    _render_panels(state.models, pairs, cfg, cfg.theta,
                   os.path.join(args.out, "panels"), args.panels)
    print(f"P={report.precision:.4f} R={report.recall:.4f} "
          f"F1={report.f1:.4f} IoU={report.iou:.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    base_cfg = _load_config(args)
    modes = (args.modes.split(",") if args.modes else [base_cfg.mode])
    rows = []
    for mode in modes:
        for variant in T.ABLATION_VARIANTS:
            cfg = T.configure_ablation(
                T.config_from_dict({**T.config_to_dict(base_cfg), "mode": mode}), variant)
            cfg.checkpoint_dir = os.path.join(args.out, f"{mode}_{variant.replace('+', '_')}")
            split = T.load_split(cfg)
            T.train(cfg, split=split)
            state = T.load_train_state(os.path.join(cfg.checkpoint_dir, "best"), cfg)
            report = E.evaluate_split(state.models, split.test or split.train,
                                      cfg, cfg.theta)
            rows.append({"variant": variant, "mode": mode,
                         "precision": report.precision, "recall": report.recall,
                         "f1": report.f1, "iou": report.iou,
                         "psnr_sr": report.psnr_sr, "ssim_sr": report.ssim_sr,
                         "psnr_bicubic": report.psnr_bicubic,
                         "ssim_bicubic": report.ssim_bicubic})
    os.makedirs(args.out, exist_ok=True)
    _write_effective_config(base_cfg, args.out)
    E.write_report_csv(os.path.join(args.out, "ablation.csv"), rows)
    E.write_report_text(os.path.join(args.out, "ablation.txt"), rows)
    print(f"wrote {len(rows)} ablation rows to {args.out}")
    return EXIT_OK


def cmd_sr_infer(args) -> int:
    cfg = _load_config(args) if args.config else T.ExperimentConfig()
    manifest = ckpt.read_manifest(args.checkpoint)
    saved = manifest.get("config", {})
    for key in ("mode", "base_channels", "n_residual_blocks"):
        if key in saved:
            setattr(cfg, key, saved[key])
    from .sr import Generator, GeneratorConfig
    gen = Generator(GeneratorConfig(scale_n=cfg.scale_n,
                                    base_channels=cfg.base_channels,
                                    n_residual_blocks=cfg.n_residual_blocks))
    ckpt.load_param_set(args.checkpoint, "generator", gen)
    gen.eval()
    paths = ([os.path.join(args.input, f) for f in sorted(os.listdir(args.input))
              if f.lower().endswith(".png")]
             if os.path.isdir(args.input) else [args.input])
    if not paths:
        raise FileNotFoundError(f"no PNG inputs under {args.input!r}")
    os.makedirs(args.out, exist_ok=True)
    for path in paths:
        img = D._load_png(path)
        with torch.no_grad():
            t = torch.from_numpy(img).permute(2, 0, 1)[None]
            sr = gen(t)[0].permute(1, 2, 0).numpy()
        D._save_png(sr, os.path.join(args.out, os.path.basename(path)))
    print(f"upscaled {len(paths)} rasters to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sr-infer": cmd_sr_infer,
}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    seed = getattr(args, "seed", None)
    if seed is not None:
        torch.manual_seed(seed)
        np.random.seed(seed)
    try:
        return _COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        msg = str(exc)
        print(f"error: {msg}", file=sys.stderr)
        if "config" in msg:
            return EXIT_NO_CONFIG
        return EXIT_NO_DATASET
    except ckpt.CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CHECKPOINT
    except (ValueError, T.TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
