"""Command-line entry point: the full pipeline as subcommands.

    spsr grad       gradient-map visualization of input images
    spsr train-nse  self-supervised structure-extractor training
    spsr eval-nse   pretext-task accuracy of a trained extractor
    spsr pretrain   PSNR-oriented generator pre-training
    spsr train      adversarial SR training (spsr-g / spsr-p / spsr-j)
    spsr sr         super-resolve images with a trained checkpoint
    spsr eval       PSNR/SSIM reports for SR results against references

Exit codes: 0 success, 1 runtime failure, 2 usage, 3 config/data problems.
All artifacts land under --out-dir: config.echo, log.txt, ckpt/, images/,
reports/. --set section.key=value overrides any config entry, --dry-run
prints the resolved config and stops, and --seed pins every rng.
"""

import argparse
import csv
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .blocks import seeded_rng
from .checkpointing import load_checkpoint, pack_models, save_checkpoint, unpack_models
from .config import (RunConfig, apply_overrides, dump_config,
                     effective_config_dict, load_config)
from .critics import DiscriminatorConfig, PerceptualExtractor, build_discriminator
from .data_pipeline import (IMAGE_EXTENSIONS, load_dataset, load_image,
                            save_image)
from .errors import (CheckpointError, ConfigError, DataError, SpsrError)
from .generator import Generator, GeneratorConfig, build_generator, super_resolve
from .gradient_ops import extract_gradient_map
from .metrics import evaluate_pairs
from .ssl_pretext import (JigsawClassifier, JigsawClassifierConfig, Predictor,
                          PredictorConfig, STRATEGIES, evaluate_contrastive_top1,
                          evaluate_jigsaw_accuracy, train_nse_contrastive,
                          train_nse_jigsaw)
from .trainer import (TrainSession, format_log_line, load_frozen_nse,
                      pretrain_psnr, train_spsr)

SSL_TASKS = ("predict", "jigsaw")
_STRATEGY_ALIASES = {"h": "horizontal", "v": "vertical", "c": "cross"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spsr",
                                     description="structure-preserving super-resolution")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config (defaults apply when omitted)")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override one config entry")
    common.add_argument("--seed", type=int, help="pin all rngs for this run")
    common.add_argument("--out-dir", default="spsr_out", help="artifact directory")
    common.add_argument("--dry-run", action="store_true",
                        help="validate and print the effective config, then stop")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("grad", parents=[common],
                       help="write gradient-map images for inputs")
    p.add_argument("--in", dest="input", help="input image file or directory")

    p = sub.add_parser("train-nse", parents=[common],
                       help="train the structure extractor on a pretext task")
    p.add_argument("--task", choices=SSL_TASKS, default="predict")
    p.add_argument("--strategy", default=None,
                   help="sampling strategy for predict: h/horizontal, v/vertical, c/cross")
    p.add_argument("--init-nse", help="start from this extractor checkpoint")
    p.add_argument("--freeze-extractor", action="store_true",
                   help="only finetune the head (for evaluation heads)")
    p.add_argument("--checkpoint-every", type=int, default=0,
                   help="also save a checkpoint every N steps")

    p = sub.add_parser("eval-nse", parents=[common],
                       help="evaluate a trained extractor on a pretext task")
    p.add_argument("--ckpt", help="extractor checkpoint")
    p.add_argument("--head-from", help="take the task head from this checkpoint "
                                       "(defaults to --ckpt)")
    p.add_argument("--task", choices=SSL_TASKS, default=None,
                   help="defaults to the task recorded in the head checkpoint")
    p.add_argument("--patch-size", type=int, default=0,
                   help="evaluation patch side (default 200 predict / 84 jigsaw)")
    p.add_argument("--num-negatives", type=int, default=0,
                   help="contrastive candidate cap (default: all disjoint)")

    p = sub.add_parser("pretrain", parents=[common],
                       help="PSNR-oriented generator pre-training")

    p = sub.add_parser("train", parents=[common], help="adversarial SR training")
    p.add_argument("--resume", help="continue from a full training checkpoint")

    p = sub.add_parser("sr", parents=[common], help="super-resolve images")
    p.add_argument("--ckpt", help="generator checkpoint")
    p.add_argument("--in", dest="input", help="LR image file or directory")
    p.add_argument("--out", dest="output",
                   help="output file (single input only; default under --out-dir)")
    p.add_argument("--emit-grad", action="store_true",
                   help="also write the predicted gradient maps")

    p = sub.add_parser("eval", parents=[common], help="score SR results against references")
    p.add_argument("--sr-dir", help="directory of super-resolved images")
    p.add_argument("--hr-dir", help="directory of reference images")
    p.add_argument("--border-crop", type=int, default=4)
    p.add_argument("--channel-mode", choices=("y", "rgb"), default="y")
    return parser


def _resolve_config(args) -> RunConfig:
    config = load_config(args.config)
    config = apply_overrides(config, args.overrides)
    if args.seed is not None:
        config.train.seed = args.seed
        config.ssl.seed = args.seed
    config.validate()
    return config


class _OutDir:
    def __init__(self, root: Path, config: RunConfig):
        self.root = Path(root)
        for sub in ("ckpt", "images", "reports"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        (self.root / "config.echo").write_text(dump_config(config))
        self._log = open(self.root / "log.txt", "a")

    def log(self, line: str) -> None:
        self._log.write(line + "\n")
        self._log.flush()
        print(line)

    def path(self, *parts) -> Path:
        return self.root.joinpath(*parts)


def _require(value, flag: str):
    if not value:
        raise ConfigError(f"missing required option {flag}")
    return value


def _input_paths(arg: str) -> list[Path]:
    path = Path(arg)
    if path.is_dir():
        found = sorted(p for p in path.iterdir()
                       if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS)
        if not found:
            raise DataError(f"no images in {path}")
        return found
    if path.is_file():
        return [path]
    raise DataError(f"input not found: {path}")


def cmd_grad(args, config: RunConfig, out: _OutDir) -> int:
    for path in _input_paths(_require(args.input, "--in")):
        img = load_image(path)
        gm = extract_gradient_map(img.unsqueeze(0))[0]
        target = out.path("images", f"{path.stem}_grad.png")
        save_image(gm, target)
        out.log(f"grad {path} -> {target}")
    return 0


def _head_name(task: str) -> str:
    return "predictor" if task == "predict" else "jigsaw_classifier"


def _save_ssl_checkpoint(path: Path, result, task: str, config: RunConfig,
                         step: int) -> None:
    state = {
        "iteration": step,
        "tensors": pack_models({"nse": result.nse, _head_name(task): result.head}),
        "optim": {},
        "rng": {},
        "config": {**effective_config_dict(config), "task": task,
                   "head": asdict(result.head.config)},
        "loss_history": list(result.loss_history),
    }
    save_checkpoint(state, path)


def cmd_train_nse(args, config: RunConfig, out: _OutDir) -> int:
    from .ssl_pretext import SSLTrainResult

    if args.strategy:
        config.ssl.strategy = _STRATEGY_ALIASES.get(args.strategy, args.strategy)
        if config.ssl.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {args.strategy!r}")
    dataset = load_dataset(config.data.to_spec())
    start_nse = load_frozen_nse(args.init_nse) if args.init_nse else None
    if start_nse is not None and not args.freeze_extractor:
        for p in start_nse.parameters():
            p.requires_grad_(True)

    loss_label = "infonce" if args.task == "predict" else "xent"

    def callback(step, nse, head, loss):
        n = step + 1
        if config.ssl.log_every and n % config.ssl.log_every == 0:
            out.log(format_log_line(n, {loss_label: loss,
                                        "lr": _ssl_lr(config, n, len(dataset))}))
        if args.checkpoint_every and n % args.checkpoint_every == 0:
            _save_ssl_checkpoint(out.path("ckpt", f"nse_{args.task}_step{n}.pt"),
                                 SSLTrainResult(nse, head, []), args.task, config, n)

    trainer = train_nse_contrastive if args.task == "predict" else train_nse_jigsaw
    result = trainer(dataset, config.nse, None, config.ssl, nse=start_nse,
                     freeze_extractor=args.freeze_extractor, callback=callback)
    final = out.path("ckpt", f"nse_{args.task}.pt")
    _save_ssl_checkpoint(final, result, args.task, config, config.ssl.total_steps)
    with open(out.path("reports", "loss.csv"), "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["step", "loss"])
        writer.writerows(enumerate(result.loss_history, start=1))
    out.log(f"saved extractor checkpoint {final}")
    return 0


def _ssl_lr(config: RunConfig, step: int, n_images: int) -> float:
    from .ssl_pretext import _lr_at
    return _lr_at(config.ssl, step - 1, n_images)


def _load_head(state: dict, task: str):
    echo = state.get("config", {})
    head_echo = echo.get("head", {})
    if task == "predict":
        head = Predictor(PredictorConfig(**head_echo) if head_echo
                         else PredictorConfig.for_strategy(echo.get("ssl", {})
                                                           .get("strategy", "horizontal")))
    else:
        head = JigsawClassifier(JigsawClassifierConfig(**head_echo)
                                if head_echo else JigsawClassifierConfig())
    unpack_models(state["tensors"], {_head_name(task): head})
    head.eval()
    return head


def cmd_eval_nse(args, config: RunConfig, out: _OutDir) -> int:
    ckpt_path = _require(args.ckpt, "--ckpt")
    nse = load_frozen_nse(ckpt_path)
    head_state = load_checkpoint(args.head_from or ckpt_path)
    task = args.task or head_state.get("config", {}).get("task")
    if task not in SSL_TASKS:
        raise ConfigError("cannot determine the task; pass --task predict|jigsaw")
    head = _load_head(head_state, task)
    dataset = load_dataset(config.data.to_spec())
    rng = seeded_rng(config.ssl.seed)
    if task == "predict":
        patch = args.patch_size or 200
        strategy = head_state.get("config", {}).get("ssl", {}).get("strategy",
                                                                   config.ssl.strategy)
        accuracy, n_samples = evaluate_contrastive_top1(
            nse, head, dataset, rng, patch_size=patch, strategy=strategy,
            num_negatives=args.num_negatives or None)
    else:
        patch = args.patch_size or 84
        accuracy, n_samples = evaluate_jigsaw_accuracy(nse, head, dataset, rng,
                                                       patch_size=patch)
    report = out.path("reports", "nse_eval.csv")
    with open(report, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["dataset", "task", "accuracy", "n_samples"])
        writer.writerow([Path(config.data.root).name, task,
                         f"{accuracy:.6f}", n_samples])
    out.log(f"task={task} accuracy={accuracy:.4f} n={n_samples} -> {report}")
    return 0


def cmd_pretrain(args, config: RunConfig, out: _OutDir) -> int:
    dataset = load_dataset(config.data.to_spec())
    generator = build_generator(config.generator, config.train.seed)
    state = pretrain_psnr(generator, dataset, config.train,
                          batch_size=config.data.batch_size,
                          lr_patch=config.data.lr_patch, scale=config.data.scale,
                          augment=config.data.augment, log_fn=out.log)
    state["config"] = effective_config_dict(config)
    target = out.path("ckpt", "pretrain_final.pt")
    save_checkpoint(state, target)
    out.log(f"saved pretrain checkpoint {target}")
    return 0


def build_session(config: RunConfig, dataset) -> TrainSession:
    """Assemble generator, critics, and extractor for config.train.variant."""
    seed = config.train.seed
    generator = build_generator(config.generator, seed)
    perceptual = PerceptualExtractor(config.critics.perceptual_layer,
                                     config.critics.perceptual_weights)
    hr_patch = config.hr_patch_size()
    discs = {}
    if config.train.variant == "spsr-g":
        kinds = {"disc_image": "image", "disc_gm": "gradient_map"}
    else:
        kinds = {"disc_sf": "structure_feature"}
    for offset, (name, kind) in enumerate(sorted(kinds.items()), start=11):
        discs[name] = build_discriminator(
            DiscriminatorConfig.for_kind(kind, hr_patch), seed + offset)
    nse = None
    if config.train.variant in ("spsr-p", "spsr-j"):
        nse = load_frozen_nse(config.train.nse_checkpoint)
    return TrainSession(config=config.train, weights=config.losses,
                        generator=generator, perceptual=perceptual, dataset=dataset,
                        nse=nse, batch_size=config.data.batch_size,
                        lr_patch=config.data.lr_patch, scale=config.data.scale,
                        augment=config.data.augment, **discs)


def cmd_train(args, config: RunConfig, out: _OutDir) -> int:
    dataset = load_dataset(config.data.to_spec())
    session = build_session(config, dataset)
    if args.resume:
        session.load_state(load_checkpoint(args.resume))
        out.log(f"resumed from {args.resume} at iteration {session.iteration}")
    last = None
    for state in train_spsr(session, log_fn=out.log):
        state["config"] = effective_config_dict(config)
        last = out.path("ckpt", f"iter_{state['iteration']:07d}.pt")
        save_checkpoint(state, last)
    final = out.path("ckpt", "final.pt")
    save_checkpoint(session.checkpoint_state() | {
        "config": effective_config_dict(config)}, final)
    out.log(f"saved final checkpoint {final} (last scheduled: {last})")
    return 0


def _load_generator(ckpt_path: str) -> Generator:
    state = load_checkpoint(ckpt_path)
    echo = state.get("config", {}).get("generator")
    gen_config = GeneratorConfig(**echo) if echo else GeneratorConfig()
    generator = Generator(gen_config)
    unpack_models(state["tensors"], {"generator": generator})
    generator.eval()
    return generator


def cmd_sr(args, config: RunConfig, out: _OutDir) -> int:
    generator = _load_generator(_require(args.ckpt, "--ckpt"))
    paths = _input_paths(_require(args.input, "--in"))
    if args.output and len(paths) != 1:
        raise ConfigError("--out needs exactly one input image")
    for path in paths:
        lr = load_image(path)
        result = super_resolve(generator, lr.unsqueeze(0))
        target = Path(args.output) if args.output else out.path("images",
                                                                f"{path.stem}_sr.png")
        save_image(result.sr_image[0], target)
        out.log(f"sr {path} -> {target}")
        if args.emit_grad:
            grad_target = target.with_name(f"{target.stem}_grad.png")
            save_image(result.predicted_gradient_map[0], grad_target)
            out.log(f"predicted gradient map -> {grad_target}")
    return 0


def cmd_eval(args, config: RunConfig, out: _OutDir) -> int:
    sr_dir = Path(_require(args.sr_dir, "--sr-dir"))
    hr_dir = Path(_require(args.hr_dir, "--hr-dir"))
    sr_files = {p.stem: p for p in _input_paths(sr_dir)}
    hr_files = {p.stem: p for p in _input_paths(hr_dir)}
    missing_sr = sorted(set(hr_files) - set(sr_files))
    missing_hr = sorted(set(sr_files) - set(hr_files))
    if missing_sr or missing_hr:
        raise DataError(
            "file sets differ: "
            + (f"missing under --sr-dir: {', '.join(missing_sr)}" if missing_sr else "")
            + ("; " if missing_sr and missing_hr else "")
            + (f"missing under --hr-dir: {', '.join(missing_hr)}" if missing_hr else "")
        )
    pairs = []
    for stem in sorted(sr_files):
        sr_img = load_image(sr_files[stem])
        hr_img = load_image(hr_files[stem])
        height = min(sr_img.shape[-2], hr_img.shape[-2])
        width = min(sr_img.shape[-1], hr_img.shape[-1])
        pairs.append((stem, sr_img[..., :height, :width], hr_img[..., :height, :width]))
    report = evaluate_pairs(pairs, border_crop=args.border_crop,
                            channel_mode=args.channel_mode)
    target = out.path("reports", "metrics.csv")
    report.write_csv(target)
    out.log(f"psnr={report.mean_psnr:.4f} ssim={report.mean_ssim:.5f} "
            f"n={len(report.rows)} -> {target}")
    return 0


_COMMANDS = {
    "grad": cmd_grad,
    "train-nse": cmd_train_nse,
    "eval-nse": cmd_eval_nse,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "sr": cmd_sr,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_request:
        return int(exit_request.code or 0)
    try:
        config = _resolve_config(args)
        if args.dry_run:
            print(dump_config(config), end="")
            return 0
        out = _OutDir(args.out_dir, config)
        return _COMMANDS[args.command](args, config, out)
    except (ConfigError, DataError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except SpsrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
