"""Adam, step learning-rate schedule, the epoch loop and patch evaluation."""

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from .checkpoint import read_blobs, save_checkpoint
from .errors import ConfigError, ContractError, NumericalError
from .losses import DEFAULT_ALPHA, combined_loss
from .metrics import MetricsReport, all_metrics
from .model import Pgnet
from .tensor import Tensor, backward, clear_tape, no_grad

log = logging.getLogger(__name__)

DECAY_MODES = ("multiply", "reduce_by")


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 15
    lr0: float = 0.002
    lr_decay_factor: float = 0.05
    lr_decay_every: int = 100
    # "multiply": lr *= factor; "reduce_by": lr *= 1 - factor
    lr_decay_mode: str = "multiply"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    alpha: float = DEFAULT_ALPHA
    seed: int = 0
    val_fraction: float = 0.1
    val_every: int = 1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr0 <= 0:
            raise ConfigError("epochs and batch_size must be >= 1 and lr0 > 0")
        if self.lr_decay_mode not in DECAY_MODES:
            raise ConfigError(f"lr_decay_mode must be one of {DECAY_MODES}")
        if self.lr_decay_every < 1 or self.val_every < 1:
            raise ConfigError("lr_decay_every and val_every must be >= 1")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must be in [0, 1)")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise ConfigError("epoch must be >= 0")
    factor = cfg.lr_decay_factor if cfg.lr_decay_mode == "multiply" else 1.0 - cfg.lr_decay_factor
    return cfg.lr0 * factor ** (epoch // cfg.lr_decay_every)


class Adam:
    """Adam with bias correction; moments are float32 and keyed by parameter name."""

    def __init__(self, named_params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = OrderedDict(named_params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = OrderedDict((n, np.zeros_like(p.data)) for n, p in self.params.items())
        self.v = OrderedDict((n, np.zeros_like(p.data)) for n, p in self.params.items())
        self.step_count = 0

    def step(self, lr: float) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                raise ContractError(f"parameter {name} has no gradient")
            if not np.all(np.isfinite(p.grad)):
                raise NumericalError(f"non-finite gradient in parameter {name}")
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for name, p in self.params.items():
            g = p.grad.astype(p.dtype, copy=False)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def adam_step(params, state: Optional[Adam], lr: float) -> Adam:
    """One Adam update of ``params``; pass the returned state to the next call."""
    params = list(params)
    if state is None:
        state = Adam((p.name or str(i), p) for i, p in enumerate(params))
    tracked = {id(p) for p in state.params.values()}
    if any(id(p) not in tracked for p in params):
        raise ContractError("parameters are not tracked by this optimizer state")
    state.step(lr)
    return state


@dataclass
class TrainLog:
    rows: List[Dict] = field(default_factory=list)
    validation: List[Dict] = field(default_factory=list)
    steps: int = 0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("epoch,loss,lr\n")
            for r in self.rows:
                fh.write(f"{r['epoch']},{r['loss']:.9g},{r['lr']:.9g}\n")


def stack_patches(patches: Sequence) -> Dict[str, np.ndarray]:
    hr = np.stack([p[0] for p in patches]).astype(np.float32)
    pan = np.stack([np.asarray(p[1]).reshape(1, *np.asarray(p[1]).shape[-2:]) for p in patches]).astype(np.float32)
    lr = np.stack([p[2] for p in patches]).astype(np.float32)
    return {"hr": hr, "pan": pan, "lr": lr}


def predict(model: Pgnet, lr: np.ndarray, pan: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Eval-mode fusion of stacked (n, bands, h, w) / (n, 1, H, W) arrays."""
    was_training = model.training
    model.eval()
    outs = []
    with no_grad():
        for i in range(0, lr.shape[0], batch_size):
            outs.append(model(Tensor(lr[i:i + batch_size]), Tensor(pan[i:i + batch_size])).data)
    model.train(was_training)
    return np.concatenate(outs, axis=0)


Fuser = Union[Pgnet, Callable[[np.ndarray, np.ndarray], np.ndarray]]


def evaluate(fuser: Fuser, patches: Sequence, ratio: int, names: Sequence[str] = None) -> MetricsReport:
    """Fuse every (hr, pan, lr) patch and score it against its hr reference.

    ``fuser`` is a Pgnet (run in eval mode) or any ``f(lr, pan) -> hr`` on
    single (bands, h, w) / (H, W) arrays.
    """
    report = MetricsReport()
    if not patches:
        return report
    if isinstance(fuser, Pgnet):
        data = stack_patches(patches)
        preds = list(predict(fuser, data["lr"], data["pan"]))
    else:
        preds = [fuser(p[2], np.asarray(p[1]).reshape(np.asarray(p[1]).shape[-2:])) for p in patches]
    for i, (pred, p) in enumerate(zip(preds, patches)):
        report.add(names[i] if names else f"patch{i:04d}", all_metrics(pred, p[0], ratio))
    return report


def split_validation(n: int, fraction: float):
    n_val = int(math.floor(fraction * n))
    if n - n_val < 1:
        n_val = n - 1
    return n - n_val, n_val


def train(model: Pgnet, patches: Sequence, cfg: TrainConfig, out_dir=None, resume_from=None,
          meta: Optional[Dict] = None) -> TrainLog:
    """Train in place. With ``out_dir``, writes best.ckpt, last.ckpt and train_log.csv.

    The last ``val_fraction`` of the patches (fixed order) are held out and
    only used to pick the best checkpoint by PSNR. Shuffling is seeded per
    epoch so a resumed run replays the same batches.
    """
    if len(patches) < 1:
        raise ConfigError("training needs at least one patch")
    data = stack_patches(patches)
    n_train, n_val = split_validation(len(patches), cfg.val_fraction)
    val_patches = list(patches[n_train:])
    ratio = model.cfg.ratio
    opt = Adam(model.named_parameters(), cfg.beta1, cfg.beta2, cfg.adam_eps)
    tlog = TrainLog()
    start = 0
    best = -math.inf
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    base_meta = {"train_config": asdict(cfg), **(meta or {})}

    if resume_from is not None:
        header, blobs = read_blobs(resume_from)
        model.load_state_dict({k: v for k, v in blobs.items() if not k.startswith("adam.")})
        rmeta = header.get("meta", {})
        opt.step_count = int(rmeta.get("adam_step", 0))
        for k in opt.m:
            opt.m[k][...] = blobs[f"adam.m.{k}"]
            opt.v[k][...] = blobs[f"adam.v.{k}"]
        start = int(rmeta.get("epoch", 0))
        best = float(rmeta.get("best_psnr", -math.inf))
        tlog.rows = list(rmeta.get("log", []))
        tlog.steps = opt.step_count

    for epoch in range(start, cfg.epochs):
        lr = lr_at(epoch, cfg)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n_train)
        model.train()
        total, count = 0.0, 0
        for bi, s in enumerate(range(0, n_train, cfg.batch_size)):
            idx = order[s:s + cfg.batch_size]
            model.zero_grad()
            clear_tape()
            try:
                pred = model(Tensor(data["lr"][idx]), Tensor(data["pan"][idx]))
                loss = combined_loss(pred, Tensor(data["hr"][idx]), cfg.alpha)
                backward(loss)
                opt.step(lr)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch} batch {bi}: {exc}") from exc
            total += loss.item() * len(idx)
            count += len(idx)
            tlog.steps += 1
        tlog.rows.append({"epoch": epoch, "loss": total / count, "lr": lr})
        log.info("epoch %d loss %.6g lr %.3g", epoch, total / count, lr)

        last_epoch = epoch == cfg.epochs - 1
        if n_val and ((epoch + 1) % cfg.val_every == 0 or last_epoch):
            rep = evaluate(model, val_patches, ratio)
            score = rep["psnr"]
            tlog.validation.append({"epoch": epoch, **rep.mean})
            if score > best:
                best = score
                if out is not None:
                    save_checkpoint(out / "best.ckpt", model, {**base_meta, "epoch": epoch + 1, "best_psnr": best})
        if out is not None and last_epoch:
            save_checkpoint(out / "last.ckpt", model,
                            {**base_meta, "epoch": epoch + 1, "best_psnr": best, "log": tlog.rows}, opt)
            if not n_val:
                save_checkpoint(out / "best.ckpt", model, {**base_meta, "epoch": epoch + 1})
    if out is not None:
        tlog.to_csv(out / "train_log.csv")
    return tlog

