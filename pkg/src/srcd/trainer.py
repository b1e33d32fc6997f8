"""Adversarial training orchestration: per-iteration update order
discriminator -> change network -> generator, experiment configs, ablation
variants, checkpointing, and the epoch loop."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace

import numpy as np
import torch

from . import checkpoint as ckpt
from .cd import ChangeNet, distance_map, threshold_segment
from .data import DatasetSplit, augment_rotations, build_patch_pairs, load_dataset_dir, split_dataset
from .evaluation import ConfusionCounts, confusion, metrics
from .losses import (LossBundle, LossWeights, adversarial_loss, content_loss,
                     contrastive_loss, discriminator_loss, generator_loss,
                     image_mse_loss, make_perceptual_extractor)
from .sr import Discriminator, Generator, GeneratorConfig

_MODE_SCALE = {"X1": 1, "X4": 4, "X8": 8}
ABLATION_VARIANTS = ("Base", "Base+SAM", "Base+SRM", "SRCDNet")
_PROB_EPS = 1e-6
DIVERGENCE_LIMIT = 1e4


class TrainingError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    mode: str = "X4"
    use_srm: bool = True
    use_sam: bool = True
    epochs: int = 100
    batch_size: int = 8
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_dir: str = "checkpoints"
    data_root: str = ""
    patch_size: int = 64
    augment: bool = False
    base_width: int = 64
    blocks_per_stage: int = 2
    base_channels: int = 64
    n_residual_blocks: int = 5

    def __post_init__(self):
        if self.mode not in _MODE_SCALE:
            raise ValueError(f"mode must be one of {sorted(_MODE_SCALE)}, got {self.mode!r}")
        if self.mode == "X1":
            self.use_srm = False  # no resolution gap to bridge

    @property
    def scale_n(self) -> int:
        return _MODE_SCALE[self.mode]

    @property
    def theta(self) -> float:
        return self.weights.margin_m / 2.0


# flat key=value config files; CLI flags override file values
_CONFIG_KEYS = {
    "mode": str, "use_srm": bool, "use_sam": bool, "epochs": int, "batch_size": int,
    "learning_rate": float, "beta1": float, "beta2": float, "seed": int,
    "checkpoint_dir": str, "data_root": str, "patch_size": int, "augment": bool,
    "base_width": int, "blocks_per_stage": int, "base_channels": int,
    "n_residual_blocks": int,
    "alpha": float, "beta": float, "lambda_cd": float, "margin_m": float,
}


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        typ = _CONFIG_KEYS[key]
        out[key] = val.lower() in ("1", "true", "yes") if typ is bool else typ(val)
    return out


def config_from_dict(values: dict) -> ExperimentConfig:
    weight_keys = {"alpha", "beta", "lambda_cd", "margin_m"}
    w = LossWeights(**{k: values[k] for k in weight_keys & values.keys()})
    rest = {k: v for k, v in values.items() if k not in weight_keys}
    return ExperimentConfig(weights=w, **rest)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {}
    for f in fields(cfg):
        if f.name == "weights":
            out.update(alpha=cfg.weights.alpha, beta=cfg.weights.beta,
                       lambda_cd=cfg.weights.lambda_cd, margin_m=cfg.weights.margin_m)
        else:
            out[f.name] = getattr(cfg, f.name)
    return out


def configure_ablation(base_cfg: ExperimentConfig, variant: str) -> ExperimentConfig:
    """Map a named ablation variant to its (use_srm, use_sam) flag pair."""
    flags = {"Base": (False, False), "Base+SAM": (False, True),
             "Base+SRM": (True, False), "SRCDNet": (True, True)}
    if variant not in flags:
        raise ValueError(f"unknown ablation variant {variant!r}")
    use_srm, use_sam = flags[variant]
    if base_cfg.mode == "X1":
        use_srm = False
    return replace(base_cfg, use_srm=use_srm, use_sam=use_sam)


@dataclass
class ModelBundle:
    change_net: ChangeNet
    generator: Generator | None = None
    discriminator: Discriminator | None = None
    perceptual: object = None

    def named_sets(self) -> dict:
        sets = {"change": self.change_net}
        if self.generator is not None:
            sets["generator"] = self.generator
        if self.discriminator is not None:
            sets["discriminator"] = self.discriminator
        return sets


@dataclass
class TrainState:
    models: ModelBundle
    optimizers: dict
    iteration: int = 0
    epoch: int = 0
    data_rng: np.random.Generator = None
    best_f1: float = -1.0
    log: list = field(default_factory=list)
    last_update_order: list = field(default_factory=list)
    last_bundle: LossBundle = None


def build_models(cfg: ExperimentConfig) -> ModelBundle:
    torch.manual_seed(cfg.seed)
    change_net = ChangeNet(base_width=cfg.base_width,
                           blocks_per_stage=cfg.blocks_per_stage,
                           use_sam=cfg.use_sam)
    bundle = ModelBundle(change_net=change_net)
    if cfg.use_srm:
        gcfg = GeneratorConfig(scale_n=cfg.scale_n, base_channels=cfg.base_channels,
                               n_residual_blocks=cfg.n_residual_blocks)
        bundle.generator = Generator(gcfg)
        bundle.discriminator = Discriminator()
        bundle.perceptual = make_perceptual_extractor(seed=cfg.seed)
    return bundle


def build_optimizers(models: ModelBundle, cfg: ExperimentConfig) -> dict:
    make = lambda m: torch.optim.Adam(m.parameters(), lr=cfg.learning_rate,
                                      betas=(cfg.beta1, cfg.beta2))
    return {name: make(mod) for name, mod in models.named_sets().items()}


def init_state(cfg: ExperimentConfig) -> TrainState:
    torch.manual_seed(cfg.seed)
    models = build_models(cfg)
    return TrainState(models=models, optimizers=build_optimizers(models, cfg),
                      data_rng=np.random.default_rng(cfg.seed))


def _stack_batch(pairs):
    def imgs(key):
        arr = np.stack([getattr(p, key) for p in pairs]).astype(np.float32)
        return torch.from_numpy(arr).permute(0, 3, 1, 2)

    gt = torch.from_numpy(np.stack([p.gt for p in pairs])[:, None].astype(np.float32))
    return imgs("hr_t1"), imgs("hr_t2"), imgs("lr_t2"), imgs("bicubic_t2"), gt


def _set_requires_grad(module, flag: bool):
    for p in module.parameters():
        p.requires_grad_(flag)


def _clamp_prob(d: torch.Tensor) -> torch.Tensor:
    # keeps sigmoid saturation from violating the strict (0,1) loss domain
    return d.clamp(_PROB_EPS, 1.0 - _PROB_EPS)


def _guard(value: torch.Tensor, name: str) -> None:
    v = float(value.detach())
    if v != v:
        raise TrainingError(f"{name} became NaN; aborting the step")
    if abs(v) > DIVERGENCE_LIMIT:
        raise TrainingError(f"{name} diverged to {v}")


def train_step(batch, state: TrainState, cfg: ExperimentConfig,
               probe=None) -> TrainState:
    """One training iteration.

    With the SR module: update the discriminator, then the change network (on
    the SR image treated as a fixed input), then the generator, whose change
    term backpropagates through the frozen change network. Without the SR
    module only the change-network update runs. `probe(name, models)` is
    invoked after each sub-update for instrumentation.
    """
    models = state.models
    hr1, hr2, lr2, bic2, gt = _stack_batch(batch)
    bundle = LossBundle()
    state.last_update_order = []
    m = cfg.weights.margin_m

    if cfg.use_srm:
        models.generator.train()
        models.discriminator.train()
        sr = models.generator(lr2)

        # (1) discriminator on Loss_D
        d_hr = _clamp_prob(models.discriminator(hr2))
        d_sr = _clamp_prob(models.discriminator(sr.detach()))
        loss_d = discriminator_loss(d_hr, d_sr)
        _guard(loss_d, "loss_D")
        state.optimizers["discriminator"].zero_grad()
        loss_d.backward()
        state.optimizers["discriminator"].step()
        bundle.loss_d = float(loss_d.detach())
        state.last_update_order.append("discriminator")
        if probe is not None:
            probe("discriminator", models)
        t2_in = sr.detach()
    else:
        t2_in = hr2 if cfg.scale_n == 1 else bic2

    # (2) change network on Loss_CD, SR input held fixed
    models.change_net.train()
    f1 = models.change_net(hr1)
    f2 = models.change_net(t2_in)
    dt = distance_map(f1, f2, out_size=gt.shape[2:])
    loss_cd = contrastive_loss(dt, gt, m)
    _guard(loss_cd, "loss_CD")
    state.optimizers["change"].zero_grad()
    loss_cd.backward()
    state.optimizers["change"].step()
    bundle.loss_cd = float(loss_cd.detach())
    state.last_update_order.append("change")
    if probe is not None:
        probe("change", models)

    if cfg.use_srm:
        # (3) generator on Loss_G; discriminator and change network frozen
        _set_requires_grad(models.discriminator, False)
        _set_requires_grad(models.change_net, False)
        try:
            l_mse = image_mse_loss(sr, hr2)
            l_vgg = content_loss(sr, hr2, models.perceptual)
            d_sr_live = _clamp_prob(models.discriminator(sr))
            l_d = adversarial_loss(d_sr_live)
            f1g = models.change_net(hr1)
            f2g = models.change_net(sr)
            dtg = distance_map(f1g, f2g, out_size=gt.shape[2:])
            loss_cd_g = contrastive_loss(dtg, gt, m)
            loss_g = generator_loss(l_mse, l_vgg, l_d, loss_cd_g, cfg.weights)
            _guard(loss_g, "loss_G")
            state.optimizers["generator"].zero_grad()
            loss_g.backward()
            state.optimizers["generator"].step()
        finally:
            _set_requires_grad(models.discriminator, True)
            _set_requires_grad(models.change_net, True)
        bundle.l_mse = float(l_mse.detach())
        bundle.l_mse_vgg = float(l_vgg.detach())
        bundle.l_d = float(l_d.detach())
        bundle.loss_g = float(loss_g.detach())
        state.last_update_order.append("generator")
        if probe is not None:
            probe("generator", models)

    state.iteration += 1
    state.last_bundle = bundle
    return state


def _validation_f1(models: ModelBundle, pairs, cfg: ExperimentConfig, theta: float) -> float:
    total = ConfusionCounts()
    models.change_net.eval()
    if models.generator is not None:
        models.generator.eval()
    with torch.no_grad():
        for pair in pairs:
            hr1, hr2, lr2, bic2, gt = _stack_batch([pair])
            if cfg.use_srm:
                t2_in = models.generator(lr2)
            else:
                t2_in = hr2 if cfg.scale_n == 1 else bic2
            f1 = models.change_net(hr1)
            f2 = models.change_net(t2_in)
            dt = distance_map(f1, f2, out_size=gt.shape[2:])
            pred = threshold_segment(dt, theta).squeeze(0).squeeze(0).numpy()
            total = total + confusion(pred, pair.gt)
    return metrics(total)[2]


def load_split(cfg: ExperimentConfig) -> DatasetSplit:
    """Build the patch split from the dataset directory named in the config."""
    scenes = load_dataset_dir(cfg.data_root)
    pairs = build_patch_pairs(scenes, cfg.patch_size, cfg.scale_n)
    split = split_dataset(pairs, seed=cfg.seed)
    if cfg.augment:
        train = []
        for p in split.train:
            train.extend(augment_rotations(p))
        split.train = train
    return split


def train(cfg: ExperimentConfig, split: DatasetSplit | None = None,
          max_iterations: int | None = None, stop_f1: float | None = None,
          validate_on: str = "val", state: TrainState | None = None,
          validate_every: int = 1) -> TrainState:
    """Run the epoch loop; keeps the best-validation-F1 checkpoint.

    stop_f1, when set, ends training once the monitored F1 reaches it
    (checked once per epoch). validate_on selects the monitored split.
    Passing a restored state resumes from its recorded epoch.
    """
    if split is None:
        split = load_split(cfg)
    if not split.train:
        raise TrainingError("training split is empty")
    if state is None:
        state = init_state(cfg)
    os.makedirs(cfg.checkpoint_dir, exist_ok=True)
    theta = cfg.theta
    val_pairs = getattr(split, validate_on) or split.train

    stop = False
    for epoch in range(state.epoch, cfg.epochs):
        order = state.data_rng.permutation(len(split.train))
        n = len(split.train)
        bs = cfg.batch_size
        for start in range(0, n, bs):
            batch = [split.train[i] for i in order[start:start + bs]]
            train_step(batch, state, cfg)
            b = state.last_bundle
            state.log.append({
                "iteration": state.iteration, "epoch": epoch,
                "loss_d": b.loss_d, "loss_cd": b.loss_cd, "l_mse": b.l_mse,
                "l_mse_vgg": b.l_mse_vgg, "l_d": b.l_d, "loss_g": b.loss_g,
                "val_f1": float("nan"),
            })
            if max_iterations is not None and state.iteration >= max_iterations:
                stop = True
                break
        state.epoch = epoch + 1
        if (epoch + 1) % validate_every == 0 or stop or epoch + 1 == cfg.epochs:
            val_f1 = _validation_f1(state.models, val_pairs, cfg, theta)
            if state.log:
                state.log[-1]["val_f1"] = val_f1
            if val_f1 > state.best_f1:
                state.best_f1 = val_f1
                save_train_state(os.path.join(cfg.checkpoint_dir, "best"), state, cfg)
            if stop_f1 is not None and val_f1 >= stop_f1:
                stop = True
        if stop:
            break
    save_train_state(os.path.join(cfg.checkpoint_dir, "last"), state, cfg)
    write_log(os.path.join(cfg.checkpoint_dir, "train_log.csv"), state.log)
    return state


def write_log(path: str, log: list) -> None:
    cols = ["iteration", "epoch", "loss_d", "loss_cd", "l_mse", "l_mse_vgg",
            "l_d", "loss_g", "val_f1"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for rec in log:
            fh.write(",".join(repr(rec[c]) for c in cols) + "\n")


def save_train_state(directory: str, state: TrainState, cfg: ExperimentConfig) -> None:
    os.makedirs(directory, exist_ok=True)
    sets = {}
    for name, module in state.models.named_sets().items():
        sets[name] = ckpt.save_param_set(directory, name, module)
        ckpt.save_optimizer(directory, name, state.optimizers[name])
    ckpt.write_manifest(directory, sets, extra={"config": config_to_dict(cfg)})
    meta = {
        "iteration": state.iteration,
        "epoch": state.epoch,
        "best_f1": state.best_f1,
        "rng": ckpt.rng_state_to_json(),
        "data_rng": state.data_rng.bit_generator.state,
    }
    with open(os.path.join(directory, "state.json"), "w") as fh:
        json.dump(meta, fh)


def load_train_state(directory: str, cfg: ExperimentConfig) -> TrainState:
    manifest = ckpt.read_manifest(directory)
    saved_cfg = manifest.get("config", {})
    for key in ("mode", "use_srm", "use_sam", "base_width", "base_channels"):
        if key in saved_cfg and saved_cfg[key] != getattr(cfg, key):
            raise ckpt.CheckpointError(
                f"checkpoint {key}={saved_cfg[key]!r} does not match config "
                f"{getattr(cfg, key)!r}")
    state = init_state(cfg)
    for name, module in state.models.named_sets().items():
        ckpt.load_param_set(directory, name, module)
        ckpt.load_optimizer(directory, name, state.optimizers[name])
    with open(os.path.join(directory, "state.json")) as fh:
        meta = json.load(fh)
    state.iteration = meta["iteration"]
    state.epoch = meta["epoch"]
    state.best_f1 = meta["best_f1"]
    ckpt.restore_rng_state(meta["rng"])
    state.data_rng = np.random.default_rng()
    state.data_rng.bit_generator.state = meta["data_rng"]
    return state
