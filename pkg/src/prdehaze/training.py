"""Optimization of the full cascade with checkpointing and resume."""

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import torch

from prdehaze import checkpoint as ckpt
from prdehaze.evaluation import psnr
from prdehaze.losses import (Discriminator, FeatureExtractor, LossWeights, NonFiniteLoss,
                             discriminator_loss, total_loss)
from prdehaze.model import ModelConfig
from prdehaze.physics import NonFiniteInput

log = logging.getLogger(__name__)

LAST = "last.ckpt"
LOSS_LOG = "loss_log.csv"
VAL_LOG = "val_log.csv"


@dataclass
class TrainConfig:
    lr: float = 2e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 4
    patch: int = 64
    steps: int = 20000
    seed: int = 0
    checkpoint_every: int = 1000
    adversarial: bool = True
    light_lr_scale: float = 0.1
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        self.betas = tuple(self.betas)
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0 < self.light_lr_scale <= 1:
            raise ValueError(f"light_lr_scale must lie in (0, 1], got {self.light_lr_scale}")

    @property
    def uses_discriminator(self):
        return self.adversarial and self.weights.alpha3 > 0


def set_strict(enabled=True):
    """Single-threaded, deterministic kernels for bit-reproducible runs."""
    torch.use_deterministic_algorithms(enabled)
    if enabled:
        torch.set_num_threads(1)


def _stack(samples):
    if not samples:
        return None
    out = {"I": [s.I for s in samples], "J": [s.J for s in samples]}
    if all(s.t is not None for s in samples):
        out["t"] = [s.t for s in samples]
    return out


def _flatten_optimizer(opt, prefix):
    sd = opt.state_dict()
    arrays = {}
    for idx, state in sd["state"].items():
        for key, value in state.items():
            arrays[f"{prefix}.{idx}.{key}"] = torch.as_tensor(value)
    return arrays, sd["param_groups"]


def _unflatten_optimizer(arrays, prefix, param_groups):
    state = {}
    for name, value in arrays.items():
        if name.startswith(prefix + "."):
            idx, key = name[len(prefix) + 1:].split(".", 1)
            state.setdefault(int(idx), {})[key] = value
    groups = [dict(g, betas=tuple(g["betas"])) if "betas" in g else g for g in param_groups]
    return {"state": state, "param_groups": groups}


class Trainer:
    def __init__(self, config, model_config, train_samples, val_samples=None):
        self.config = config
        self.model_config = model_config
        if not train_samples:
            raise ValueError("training set is empty")
        self.train = _stack(list(train_samples))
        self.val = list(val_samples or [])
        self.has_transmission = "t" in self.train

        torch.manual_seed(config.seed)
        self.model = model_config.build()
        self.D = Discriminator() if config.uses_discriminator else None
        self.weights = config.weights if self.D else replace(config.weights, alpha3=0.0)
        self.extractor = FeatureExtractor(seed=config.seed) if config.weights.alpha2 > 0 else None
        adam = dict(lr=config.lr, betas=config.betas, eps=config.eps)
        # The light estimator drifts coherently under full-size Adam steps and
        # can slide into the saturated low-light basin, so it steps slower.
        light = list(self.model.physics.light.parameters())
        light_ids = {id(p) for p in light}
        rest = [p for p in self.model.parameters() if id(p) not in light_ids]
        self.opt_g = torch.optim.Adam(
            [{"params": rest}, {"params": light, "lr": config.lr * config.light_lr_scale}], **adam)
        self.opt_d = torch.optim.Adam(self.D.parameters(), **adam) if self.D else None
        self.data_rng = torch.Generator().manual_seed(config.seed)
        self.step = 0
        log.info("model parameters: %d", sum(p.numel() for p in self.model.parameters()))

    # -- data ----------------------------------------------------------------

    def _crop(self, x, top, left):
        p = self.config.patch
        return x[..., top:top + p, left:left + p] if p else x

    def sample_batch(self):
        n = len(self.train["I"])
        idx = torch.randint(n, (self.config.batch_size,), generator=self.data_rng).tolist()
        p = self.config.patch
        I, J, t = [], [], []
        for i in idx:
            h, w = self.train["I"][i].shape[-2:]
            if p and (p > h or p > w):
                raise ValueError(f"patch {p} larger than training image {h}x{w}")
            top = int(torch.randint(h - p + 1, (1,), generator=self.data_rng)) if p else 0
            left = int(torch.randint(w - p + 1, (1,), generator=self.data_rng)) if p else 0
            I.append(self._crop(self.train["I"][i], top, left))
            J.append(self._crop(self.train["J"][i], top, left))
            if self.has_transmission:
                t.append(self._crop(self.train["t"][i], top, left))
        return torch.stack(I), torch.stack(J), torch.stack(t) if t else None

    # -- optimization ----------------------------------------------------------

    def train_step(self):
        """One discriminator update (if enabled) then one generator update."""
        self.model.train()
        I, J, t = self.sample_batch()
        try:
            trace, stages = self.model(I)
        except NonFiniteInput as exc:
            raise NonFiniteLoss(f"scattering stage input {exc.name}") from exc
        disc = None
        if self.D is not None:
            self.D.requires_grad_(True)
            disc = sum(discriminator_loss(self.D, J, J_k) for J_k, _ in trace) / len(trace)
            if not torch.isfinite(disc):
                raise NonFiniteLoss("disc_loss", disc.item())
            self.opt_d.zero_grad(set_to_none=True)
            disc.backward()
            self.opt_d.step()
            self.D.requires_grad_(False)
        total, report = total_loss(trace, stages, I, J, self.weights, t,
                                   self.extractor, self.D)
        self.opt_g.zero_grad(set_to_none=True)
        total.backward()
        self.opt_g.step()
        self.step += 1
        row = {"step": self.step}
        row.update((k, float(v.detach())) for k, v in report.items())
        if disc is not None:
            row["disc_loss"] = float(disc.detach())
        return row

    @torch.no_grad()
    def validate(self):
        self.model.eval()
        free, refine = [], []
        for s in self.val:
            trace, stages = self.model.dehaze(s.I[None])
            free.append(psnr(trace[-1][0][0], s.J))
            refine.append(psnr(stages.J_refine[0], s.J))
        return {"step": self.step, "psnr_free": sum(free) / len(free),
                "psnr_refine": sum(refine) / len(refine)}

    # -- checkpoints -----------------------------------------------------------

    def state(self):
        arrays = {f"model.{k}": v for k, v in self.model.state_dict().items()}
        opt_arrays, g_groups = _flatten_optimizer(self.opt_g, "opt_g")
        arrays.update(opt_arrays)
        d_groups = None
        if self.D is not None:
            arrays.update({f"disc.{k}": v for k, v in self.D.state_dict().items()})
            opt_arrays, d_groups = _flatten_optimizer(self.opt_d, "opt_d")
            arrays.update(opt_arrays)
        arrays["rng.data"] = self.data_rng.get_state()
        arrays["rng.torch"] = torch.get_rng_state()
        metadata = {
            "step": self.step,
            "train_config": json.loads(json.dumps(asdict(self.config))),
            "model_config": json.loads(json.dumps(asdict(self.model_config))),
            "opt_g_groups": g_groups,
            "opt_d_groups": d_groups,
        }
        return arrays, metadata

    def save(self, path):
        ckpt.save(path, *self.state())

    def load_state(self, arrays, metadata):
        sub = lambda prefix: {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
        self.model.load_state_dict(sub("model."))
        self.opt_g.load_state_dict(_unflatten_optimizer(arrays, "opt_g", metadata["opt_g_groups"]))
        if self.D is not None:
            self.D.load_state_dict(sub("disc."))
            self.opt_d.load_state_dict(_unflatten_optimizer(arrays, "opt_d", metadata["opt_d_groups"]))
        self.data_rng.set_state(arrays["rng.data"])
        torch.set_rng_state(arrays["rng.torch"])
        self.step = metadata["step"]

    @classmethod
    def from_checkpoint(cls, path, train_samples, val_samples=None, steps=None):
        arrays, metadata = ckpt.load(path)
        config = TrainConfig(**metadata["train_config"])
        if steps is not None:
            config.steps = steps
        trainer = cls(config, ModelConfig(**metadata["model_config"]), train_samples, val_samples)
        trainer.load_state(arrays, metadata)
        return trainer


def load_model(path):
    """Rebuild the cascade from a checkpoint, in eval mode."""
    arrays, metadata = ckpt.load(path)
    model = ModelConfig(**metadata["model_config"]).build()
    model.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("model.")})
    return model.eval(), metadata


def _truncate_log(path, step):
    """Drop rows written after ``step`` (left behind by an interrupted run)."""
    if not path.exists():
        return
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    keep = rows[:1] + [r for r in rows[1:] if int(r[0]) <= step]
    with open(path, "w", newline="") as f:
        csv.writer(f).writerows(keep)


def _append_row(path, row):
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as f:
        writer = csv.writer(f)
        if new:
            writer.writerow(list(row))
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row.values()])


def train(config, model_config, train_set, val_set=None, out_dir="run", resume_from=None):
    """Train for ``config.steps`` total steps, logging every step to ``loss_log.csv``.

    With ``resume_from`` the run continues from that checkpoint; the loss log
    is trimmed to the checkpoint step and appended to. Returns the trainer.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / LOSS_LOG
    if resume_from is not None:
        trainer = Trainer.from_checkpoint(resume_from, train_set, val_set, steps=config.steps)
        _truncate_log(log_path, trainer.step)
        _truncate_log(out_dir / VAL_LOG, trainer.step)
        log.info("resumed from %s at step %d", resume_from, trainer.step)
    else:
        trainer = Trainer(config, model_config, train_set, val_set)
        for stale in (log_path, out_dir / VAL_LOG):
            stale.unlink(missing_ok=True)
    cfg = trainer.config
    # Adam state of near-idle weights decays into denormals, which slow CPU
    # kernels by more than 2x late in a run. Flushing them keeps step time flat
    # and stays deterministic; the flag is process-wide, so it is scoped here.
    torch.set_flush_denormal(True)
    try:
        while trainer.step < cfg.steps:
            try:
                row = trainer.train_step()
            except NonFiniteLoss as exc:
                log.error("halting at step %d: %s", trainer.step + 1, exc)
                raise
            _append_row(log_path, row)
            if trainer.step % 100 == 0 or trainer.step == 1:
                log.info("step %d total %.5f", trainer.step, row["total"])
            if trainer.step % cfg.checkpoint_every == 0 or trainer.step == cfg.steps:
                trainer.save(out_dir / LAST)
                if trainer.val:
                    val = trainer.validate()
                    _append_row(out_dir / VAL_LOG, val)
                    log.info("step %d val psnr free %.2f refine %.2f", trainer.step,
                             val["psnr_free"], val["psnr_refine"])
    finally:
        torch.set_flush_denormal(False)
    return trainer
