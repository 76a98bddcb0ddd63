"""Two-phase training: generator pretraining, then joint image-level training.

One *iteration* consumes one FoV pair: its 64 matched patch pairs are pushed
through the generator in mini-batches of ``batch_size`` patches (one
optimizer update each), the outputs are stitched into the full image, and
the image-level losses are evaluated on it. In the adversarial phase the
image-level objective also drives one extra generator update, and the critic
is updated when ``adv_bce`` is on.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .backbone import PerceptualBackbone, load_backbone
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ModelConfig, TrainConfig, config_hash, dump_config, parse_config
from .data import FoVPair, curriculum_order
from .errors import NonFiniteLossError
from .generator import Generator
from .imaging import PatchGrid, assemble_tensor, bicubic_resize, partition
from .losses import (
    Critic,
    backbone_layer,
    content_latent,
    content_loss,
    critic_bce,
    discriminator_loss,
    generator_adv,
    generator_loss,
    layer_grams,
    match_size,
    perceptual_loss,
    seam_loss,
    visual_loss,
)
from .matching import PatchMatch, match_patches

log = logging.getLogger(__name__)

LOSS_FIELDS = ("L_content", "L_visual", "L_G", "L_seam", "L_perceptual", "L_D")
CSV_FIELDS = ("iteration",) + LOSS_FIELDS


def _stack(patches) -> torch.Tensor:
    return torch.from_numpy(np.stack([p.pixels for p in patches])).permute(0, 3, 1, 2).contiguous()


@dataclass
class PatchPool:
    """Everything about one pair that does not depend on generator weights."""

    matches: list[PatchMatch]
    wide: torch.Tensor
    narrow: torch.Tensor
    target: torch.Tensor
    target_image: torch.Tensor
    pair_weights: torch.Tensor
    narrow_grams: list[torch.Tensor]
    grid: PatchGrid


def build_pool(pair: FoVPair, tau: float, upscale: int, backbone: PerceptualBackbone) -> PatchPool:
    wide_p = partition(pair.wide)
    narrow_p = partition(pair.narrow)
    matches = match_patches(wide_p, narrow_p, tau, backbone)
    by_pos = {p.grid_pos: p for p in narrow_p}
    narrow = _stack([by_pos[m.narrow_pos] for m in matches])
    h, w = pair.gt.shape[:2]
    gt_up = bicubic_resize(pair.gt, h * upscale, w * upscale)
    out_size = (wide_p[0].pixels.shape[0] * upscale, wide_p[0].pixels.shape[1] * upscale)
    with torch.no_grad():
        grams = layer_grams(match_size(narrow, out_size), backbone)
    return PatchPool(
        matches=matches,
        wide=_stack(wide_p),
        narrow=narrow,
        target=_stack(partition(gt_up)),
        target_image=torch.from_numpy(gt_up).permute(2, 0, 1)[None].contiguous(),
        pair_weights=torch.tensor([float(m.above_threshold) for m in matches]),
        narrow_grams=grams,
        grid=PatchGrid.for_shape(h * upscale, w * upscale),
    )


def set_deterministic(flag: bool, seed: int):
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(flag)


class Trainer:
    def __init__(self, cfg: TrainConfig, backbone: PerceptualBackbone | None = None,
                 log_path=None):
        self.cfg = cfg
        set_deterministic(cfg.deterministic, cfg.seed)
        self.backbone = backbone or load_backbone(cfg.model.backbone, cfg.model.backbone_seed)
        self.generator = Generator(cfg.model, seed=cfg.seed)
        self.critic = Critic(seed=cfg.seed + 1)
        self.opt_g = torch.optim.Adam(self.generator.parameters(), lr=cfg.lr, betas=(0.9, 0.999))
        self.opt_d = torch.optim.Adam(self.critic.parameters(), lr=cfg.lr, betas=(0.9, 0.999))
        self.iteration = 0
        self.phi = backbone_layer(self.backbone, cfg.seam_layer)
        self.log_path = Path(log_path) if log_path else None
        self.history: list[dict] = []
        self._pools: dict[str, PatchPool] = {}

    @property
    def config_hash(self) -> str:
        return config_hash(self.cfg.model)

    # schedule -----------------------------------------------------------

    def epoch_draw(self, epoch: int, n_items: int) -> list[int]:
        """Dataset indices for one epoch, sorted so the curriculum order is kept."""
        rng = np.random.default_rng([self.cfg.seed, epoch])
        k = self.cfg.samples_per_epoch
        idx = rng.choice(n_items, size=k, replace=n_items < k)
        return sorted(int(i) for i in idx)

    def pair_for(self, iteration: int, dataset: Sequence[FoVPair]) -> FoVPair:
        epoch, k = divmod(iteration, self.cfg.samples_per_epoch)
        return dataset[self.epoch_draw(epoch, len(dataset))[k]]

    def set_lr(self, epoch: int):
        lr = self.cfg.lr_at(epoch)
        for opt in (self.opt_g, self.opt_d):
            for group in opt.param_groups:
                group["lr"] = lr

    # one pair -------------------------------------------------------------

    def pool(self, pair: FoVPair) -> PatchPool:
        if pair.source_id not in self._pools:
            self._pools[pair.source_id] = build_pool(pair, self.cfg.tau, self.cfg.model.upscale, self.backbone)
        return self._pools[pair.source_id]

    def _check(self, loss: torch.Tensor, batch_id: str):
        if not torch.isfinite(loss):
            raise NonFiniteLossError(f"non-finite loss in batch {batch_id}", batch_id=batch_id)

    def _check_params(self):
        for module in (self.generator, self.critic):
            for name, p in module.named_parameters():
                assert torch.isfinite(p).all(), f"parameter {name} became non-finite"

    def training_step(self, pair: FoVPair, adversarial: bool = False) -> dict:
        """Run the full reconstruction pipeline for one pair and update the generator."""
        cfg = self.cfg
        try:
            pool = self.pool(pair)
        except Exception as exc:
            raise type(exc)(f"pair {pair.source_id}: {exc}") from exc
        gen = self.generator
        gen.train()
        n = pool.wide.shape[0]
        outputs = []
        sums = {"L_content": 0.0, "L_visual": 0.0}
        for start in range(0, n, cfg.batch_size):
            sl = slice(start, start + cfg.batch_size)
            out = gen(pool.wide[sl], gen.encode_narrow(pool.narrow[sl]))
            batch_id = f"{pair.source_id}:{start // cfg.batch_size}"
            self._check(out.detach().sum(), batch_id)
            lc = content_loss(content_latent(pool.target[sl]), content_latent(out))
            lv = visual_loss(out, None, cfg.layer_weights, self.backbone,
                             pair_weights=pool.pair_weights[sl],
                             narrow_grams=[g[sl] for g in pool.narrow_grams])
            lg = generator_loss(lc, lv)
            self._check(lg, batch_id)
            self.opt_g.zero_grad(set_to_none=True)
            lg.backward()
            self.opt_g.step()
            if __debug__:
                self._check_params()
            size = out.shape[0]
            sums["L_content"] += lc.item() * size
            sums["L_visual"] += lv.item() * size
            outputs.append(out.detach())
        record = {k: v / n for k, v in sums.items()}
        record["L_G"] = record["L_content"] + record["L_visual"]

        if adversarial:
            out = gen(pool.wide, gen.encode_narrow(pool.narrow))
            self._check(out.detach().sum(), f"{pair.source_id}:image")
            img = assemble_tensor(out, cfg.blend_width)
            ls = seam_loss(img, pool.grid, cfg.blend_width, self.phi)
            lp = perceptual_loss(img, pool.target_image, cfg.layer_weights, self.backbone)
            ld = discriminator_loss(ls, lp)
            total = ld + generator_adv(self.critic(img)) if cfg.adv_bce else ld
            self._check(total, f"{pair.source_id}:image")
            self.opt_g.zero_grad(set_to_none=True)
            total.backward()
            self.opt_g.step()
            if cfg.adv_bce:
                d_loss = critic_bce(self.critic(pool.target_image), self.critic(img.detach()))
                self.opt_d.zero_grad(set_to_none=True)
                d_loss.backward()
                self.opt_d.step()
            if __debug__:
                self._check_params()
        else:
            with torch.no_grad():
                img = assemble_tensor(torch.cat(outputs).clamp(0.0, 1.0), cfg.blend_width)
                ls = seam_loss(img, pool.grid, cfg.blend_width, self.phi)
                lp = perceptual_loss(img, pool.target_image, cfg.layer_weights, self.backbone)
                ld = discriminator_loss(ls, lp)
        record.update(L_seam=ls.item(), L_perceptual=lp.item(), L_D=ld.item())
        return record

    # loops ------------------------------------------------------------------

    def run(self, dataset: Sequence[FoVPair], iterations: int, adversarial: bool,
            out_dir=None) -> list[dict]:
        dataset = curriculum_order(dataset)
        records = []
        for _ in range(iterations):
            it = self.iteration
            self.set_lr(it // self.cfg.samples_per_epoch)
            rec = {"iteration": it, **self.training_step(self.pair_for(it, dataset), adversarial)}
            self.iteration += 1
            records.append(rec)
            self.history.append(rec)
            self._log(rec)
            if out_dir and self.iteration % self.cfg.checkpoint_every == 0:
                self.save(Path(out_dir) / f"ckpt_{self.iteration}.bin")
        return records

    def _log(self, rec: dict):
        if self.log_path is None:
            return
        new = not self.log_path.exists()
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.log_path, "a", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
            if new:
                writer.writeheader()
            writer.writerow({k: rec[k] for k in CSV_FIELDS})

    # persistence ------------------------------------------------------------

    def _opt_tensors(self, prefix: str, opt: torch.optim.Optimizer):
        tensors, steps = {}, {}
        state = opt.state_dict()
        for idx, st in state["state"].items():
            steps[str(idx)] = float(st["step"])
            tensors[f"{prefix}.{idx}.exp_avg"] = st["exp_avg"]
            tensors[f"{prefix}.{idx}.exp_avg_sq"] = st["exp_avg_sq"]
        groups = [{k: v for k, v in g.items() if k != "params"} for g in state["param_groups"]]
        return tensors, {"steps": steps, "groups": groups}

    def save(self, path) -> Path:
        tensors = {f"generator.{k}": v for k, v in self.generator.state_dict().items()}
        tensors.update({f"critic.{k}": v for k, v in self.critic.state_dict().items()})
        tg, meta_g = self._opt_tensors("opt_g", self.opt_g)
        td, meta_d = self._opt_tensors("opt_d", self.opt_d)
        tensors.update(tg)
        tensors.update(td)
        meta = {
            "config_hash": self.config_hash,
            "train_config": dump_config(self.cfg),
            "iteration": self.iteration,
            "backbone": self.backbone.label,
            "optimizers": {"opt_g": meta_g, "opt_d": meta_d},
        }
        return save_checkpoint(path, tensors, meta)

    def _load_opt(self, prefix: str, opt: torch.optim.Optimizer, tensors: dict, meta: dict):
        template = opt.state_dict()
        state = {}
        for idx, step in meta["steps"].items():
            state[int(idx)] = {
                "step": torch.tensor(step),
                "exp_avg": tensors[f"{prefix}.{idx}.exp_avg"],
                "exp_avg_sq": tensors[f"{prefix}.{idx}.exp_avg_sq"],
            }
        groups = []
        for g_tmpl, g_saved in zip(template["param_groups"], meta["groups"]):
            g = dict(g_saved)
            g["betas"] = tuple(g["betas"])
            g["params"] = g_tmpl["params"]
            groups.append(g)
        opt.load_state_dict({"state": state, "param_groups": groups})

    @classmethod
    def load(cls, path, cfg: TrainConfig | None = None, backbone: PerceptualBackbone | None = None,
             log_path=None) -> "Trainer":
        """Restore a trainer; ``cfg`` must describe the same model architecture."""
        tensors, manifest = load_checkpoint(path)
        stored = parse_config(manifest["train_config"])
        cfg = cfg or stored
        if config_hash(cfg.model) != manifest["config_hash"]:
            raise CheckpointError(
                f"{path}: checkpoint config hash {manifest['config_hash']} "
                f"does not match {config_hash(cfg.model)}; refusing to resume"
            )
        trainer = cls(cfg, backbone=backbone, log_path=log_path)
        trainer.generator.load_state_dict(
            {k[len("generator."):]: v for k, v in tensors.items() if k.startswith("generator.")})
        trainer.critic.load_state_dict(
            {k[len("critic."):]: v for k, v in tensors.items() if k.startswith("critic.")})
        opts = manifest["optimizers"]
        trainer._load_opt("opt_g", trainer.opt_g, tensors, opts["opt_g"])
        trainer._load_opt("opt_d", trainer.opt_d, tensors, opts["opt_d"])
        trainer.iteration = int(manifest["iteration"])
        return trainer


def pretrain(cfg: TrainConfig, dataset: Sequence[FoVPair], out_dir=None,
             backbone: PerceptualBackbone | None = None) -> Trainer:
    """Generator-only phase: ``pretrain_epochs * samples_per_epoch`` iterations on content + visual loss."""
    if not dataset:
        raise ValueError("pretraining needs a nonempty dataset")
    log_path = Path(out_dir) / "losses.csv" if out_dir else None
    trainer = Trainer(cfg, backbone=backbone, log_path=log_path)
    trainer.run(dataset, cfg.pretrain_iterations, adversarial=False, out_dir=out_dir)
    if out_dir:
        trainer.save(Path(out_dir) / f"ckpt_{trainer.iteration}.bin")
    return trainer


def train_adversarial(cfg: TrainConfig, dataset: Sequence[FoVPair], ckpt, out_dir=None,
                      backbone: PerceptualBackbone | None = None) -> Trainer:
    """Joint phase resuming from a pretrained trainer or checkpoint path."""
    if not dataset:
        raise ValueError("training needs a nonempty dataset")
    log_path = Path(out_dir) / "losses.csv" if out_dir else None
    if isinstance(ckpt, Trainer):
        if ckpt.config_hash != config_hash(cfg.model):
            raise CheckpointError("trainer config hash does not match; refusing to resume")
        trainer = ckpt
        trainer.cfg = cfg
        if log_path:
            trainer.log_path = log_path
    else:
        trainer = Trainer.load(ckpt, cfg, backbone=backbone, log_path=log_path)
    if trainer.iteration < cfg.pretrain_iterations:
        raise ValueError(
            f"checkpoint at iteration {trainer.iteration} has not finished pretraining "
            f"({cfg.pretrain_iterations} iterations)"
        )
    remaining = cfg.total_iterations - trainer.iteration
    trainer.run(dataset, remaining, adversarial=True, out_dir=out_dir)
    if out_dir:
        trainer.save(Path(out_dir) / f"ckpt_{trainer.iteration}.bin")
    return trainer


def load_generator(path) -> tuple[Generator, dict]:
    """Generator weights plus manifest from a training checkpoint."""
    tensors, manifest = load_checkpoint(path)
    cfg = parse_config(manifest["train_config"])
    if config_hash(cfg.model) != manifest["config_hash"]:
        raise CheckpointError(f"{path}: stored config does not match its hash")
    gen = Generator(cfg.model)
    gen.load_state_dict({k[len("generator."):]: v for k, v in tensors.items() if k.startswith("generator.")})
    gen.eval()
    manifest["model"] = cfg.model
    manifest["train"] = cfg
    return gen, manifest


__all__ = [
    "CSV_FIELDS", "LOSS_FIELDS", "ModelConfig", "PatchPool", "Trainer", "build_pool",
    "load_generator", "pretrain", "train_adversarial",
]
