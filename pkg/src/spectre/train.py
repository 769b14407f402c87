"""Masking, objectives, AdamW with warm-up + cosine schedule, metrics and loops."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import kernels
from .errors import ConfigError, NumericalError, ShapeMismatchError
from .nn import ModelConfig, SpectreModel

PRETRAIN_TARGETS = ("stft_clusters", "raw_clusters", "none")


# -- masking ---------------------------------------------------------------------

@dataclass(frozen=True)
class MaskPlan:
    masked: np.ndarray
    n_tokens: int
    ratio: float
    seed: object

    @property
    def flags(self) -> np.ndarray:
        f = np.zeros(self.n_tokens, dtype=bool)
        f[self.masked] = True
        return f


def mask_count(n: int, ratio: float) -> int:
    # Python's round() is ties-to-even
    return int(round(ratio * n))


def sample_mask(n: int, ratio: float, seed) -> MaskPlan:
    """Uniformly choose round(ratio * n) distinct token indices (sorted)."""
    if n <= 0 or not 0 <= ratio <= 1:
        raise ConfigError("sample_mask needs n > 0 and ratio in [0, 1]")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, mask_count(n, ratio), replace=False))
    return MaskPlan(idx, n, ratio, seed)


# -- objectives ------------------------------------------------------------------

def ssl_loss(logits, labels):
    """Mean cross-entropy over masked positions. logits [..., M, K], labels [..., M]."""
    if logits.shape[-2] == 0:
        raise ConfigError("empty mask set: the SSL loss is undefined")
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), labels.reshape(-1))


def ssl_step(model: SpectreModel, x, labels, masked):
    """Loss on one batch; ``labels`` [B, N] holds every patch's pseudo-label.

    Only the labels at ``masked`` [B, M] enter the loss.
    """
    masked = torch.as_tensor(masked, dtype=torch.long)
    if masked.shape[-1] == 0:
        raise ConfigError("empty mask set: the SSL loss is undefined")
    logits = model.ssl_logits(x, masked)
    target = torch.gather(torch.as_tensor(labels, dtype=torch.long), 1, masked)
    return ssl_loss(logits, target)


def mse_loss(pred, target):
    return ((pred - target) ** 2).mean()


def finetune_step(model: SpectreModel, x, y):
    return mse_loss(model.kinematics(x), y)


# -- optimizer -------------------------------------------------------------------

@dataclass
class OptimConfig:
    steps: int = 200
    warmup_steps: int = 20
    batch_size: int = 8
    lr_peak: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01

    def validate(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be positive")
        if not 0 <= self.warmup_steps <= self.steps:
            raise ConfigError("warmup_steps must lie in [0, steps]")
        if self.lr_peak < 0 or self.eps <= 0 or self.weight_decay < 0:
            raise ConfigError("invalid optimizer hyperparameters")
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        return self


@dataclass
class OptimState:
    cfg: OptimConfig
    step: int = 0
    exp_avg: dict = field(default_factory=dict)
    exp_avg_sq: dict = field(default_factory=dict)


def lr_at(step: int, cfg: OptimConfig) -> float:
    """Linear warm-up to ``lr_peak`` then half-cosine decay to 0 at ``cfg.steps``."""
    if step < cfg.warmup_steps:
        return cfg.lr_peak * step / cfg.warmup_steps
    span = cfg.steps - cfg.warmup_steps
    if span <= 0:
        return cfg.lr_peak if step <= cfg.steps else 0.0
    frac = min(1.0, (step - cfg.warmup_steps) / span)
    return max(0.0, cfg.lr_peak * 0.5 * (1 + math.cos(math.pi * frac)))


def decays(name: str) -> bool:
    """Weight decay applies to everything except biases and norm gains."""
    return not (name.endswith("bias") or name.endswith("gain"))


@torch.no_grad()
def adamw_step(params: dict, grads: dict, state: OptimState, lr: float | None = None) -> float:
    """One decoupled-weight-decay Adam update, in place. Returns the lr used."""
    cfg = state.cfg
    state.step += 1
    if lr is None:
        lr = lr_at(state.step, cfg)
    b1, b2 = cfg.betas
    bc1 = 1 - b1 ** state.step
    bc2 = 1 - b2 ** state.step
    for name in sorted(params):
        p = params[name]
        g = grads.get(name)
        if g is None:
            g = torch.zeros_like(p)
        if name not in state.exp_avg:
            state.exp_avg[name] = torch.zeros_like(p)
            state.exp_avg_sq[name] = torch.zeros_like(p)
        m, v = state.exp_avg[name], state.exp_avg_sq[name]
        if cfg.weight_decay and decays(name):
            p.mul_(1 - lr * cfg.weight_decay)
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        denom = (v / bc2).sqrt_().add_(cfg.eps)
        p.addcdiv_(m / bc1, denom, value=-lr)
    return lr


# -- metrics ---------------------------------------------------------------------

def regression_metrics(pred: np.ndarray, target: np.ndarray) -> dict:
    """MSE, MAE and per-DoF R^2 over segments; R^2 averaged over defined DoFs.

    A DoF whose targets have zero variance has no R^2; it is left out of the
    average and listed in ``r2_undefined_dof``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"prediction shape {pred.shape} != target shape {target.shape}")
    err = pred - target
    ss_res = (err ** 2).sum(axis=0)
    ss_tot = ((target - target.mean(axis=0)) ** 2).sum(axis=0)
    defined = ss_tot > 0
    r2 = np.full(target.shape[1], np.nan)
    r2[defined] = 1 - ss_res[defined] / ss_tot[defined]
    return {
        "mse": float((err ** 2).mean(axis=1).mean()),
        "mae": float(np.abs(err).mean(axis=1).mean()),
        "r2": float(r2[defined].mean()) if defined.any() else float("nan"),
        "r2_per_dof": [None if np.isnan(v) else float(v) for v in r2],
        "r2_undefined_dof": int((~defined).sum()),
    }


@torch.no_grad()
def predict(model: SpectreModel, x: np.ndarray, batch_size: int = 32) -> np.ndarray:
    model.eval()
    out = []
    for i in range(0, len(x), batch_size):
        out.append(model.kinematics(torch.as_tensor(x[i:i + batch_size])).numpy())
    return np.concatenate(out).astype(np.float64)


def evaluate(model: SpectreModel, x: np.ndarray, y: np.ndarray, batch_size: int = 32) -> dict:
    return regression_metrics(predict(model, x, batch_size), y)


# -- reports ---------------------------------------------------------------------

@dataclass
class RunReport:
    mode: str
    pretrain_target: str
    pe_type: str
    mask_style: str
    config_hash: str
    seeds: dict
    loss_curve: list = field(default_factory=list)
    lr_curve: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    wall_time_s: float = 0.0
    backend: str = kernels.BACKEND
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True))
        if self.loss_curve:
            with open(path.with_suffix(".csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["step", "lr", "loss"])
                for i, (lr, loss) in enumerate(zip(self.lr_curve, self.loss_curve), start=1):
                    w.writerow([i, repr(lr), repr(loss)])

    @classmethod
    def read(cls, path) -> "RunReport":
        return cls(**json.loads(Path(path).read_text()))


# -- loops -----------------------------------------------------------------------

def _batches(n: int, batch_size: int, seed: int):
    """Endless stream of index batches; each epoch reshuffled from (seed, epoch)."""
    batch_size = min(batch_size, n)
    epoch = 0
    while True:
        order = np.random.default_rng([seed, epoch]).permutation(n)
        for i in range(0, n - batch_size + 1, batch_size):
            yield order[i:i + batch_size]
        epoch += 1


def _check_data(cfg: ModelConfig, x: np.ndarray):
    if x.ndim != 3 or x.shape[1] != cfg.channels or x.shape[2] != cfg.segment_len:
        raise ShapeMismatchError(
            f"data shape {x.shape[1:]} does not match model (C={cfg.channels}, L={cfg.segment_len})")


def _train(model, opt_cfg, step_fn, n, data_seed, log_every=0, log=None):
    opt_cfg.validate()
    params = dict(model.named_parameters())
    state = OptimState(opt_cfg)
    losses, lrs = [], []
    model.train()
    batches = _batches(n, opt_cfg.batch_size, data_seed)
    for step in range(opt_cfg.steps):
        idx = next(batches)
        for p in params.values():
            p.grad = None
        loss = step_fn(idx, step)
        if not torch.isfinite(loss):
            raise NumericalError(f"non-finite loss at step {step + 1}")
        loss.backward()
        lr = adamw_step(params, {k: p.grad for k, p in params.items()}, state)
        losses.append(float(loss.item()))
        lrs.append(lr)
        if log and log_every and (step + 1) % log_every == 0:
            log(f"step {step + 1}/{opt_cfg.steps} lr {lr:.3g} loss {losses[-1]:.4f}")
    model.eval()
    return losses, lrs


def pretrain_loop(cfg: ModelConfig, opt_cfg: OptimConfig, x: np.ndarray, labels: np.ndarray,
                  seeds: dict, pretrain_target: str = "stft_clusters",
                  model: SpectreModel | None = None, log=None, log_every: int = 0):
    """Masked pseudo-label pre-training. ``labels`` is [S, N] per-patch targets."""
    if pretrain_target not in PRETRAIN_TARGETS or pretrain_target == "none":
        raise ConfigError(f"pretrain_target {pretrain_target!r} has no pre-training stage")
    _check_data(cfg, x)
    if labels.shape != (x.shape[0], cfg.n_tokens):
        raise ShapeMismatchError(f"labels shape {labels.shape} != ({x.shape[0]}, {cfg.n_tokens})")
    if labels.min() < 0 or labels.max() >= cfg.k:
        raise ShapeMismatchError("pseudo-labels fall outside [0, K)")
    if mask_count(cfg.n_tokens, cfg.mask_ratio) == 0:
        raise ConfigError("mask_ratio selects no tokens: the SSL loss is undefined")
    model = model or SpectreModel(cfg, seed=seeds["model"])
    model.set_dropout_seed(seeds["model"])
    xt = torch.as_tensor(np.asarray(x, dtype=np.float32))
    lt = torch.as_tensor(np.asarray(labels, dtype=np.int64))

    def step_fn(idx, step):
        masked = np.stack([sample_mask(cfg.n_tokens, cfg.mask_ratio, [seeds["mask"], step, b]).masked
                           for b in range(len(idx))])
        return ssl_step(model, xt[idx], lt[idx], masked)

    t0 = time.perf_counter()
    losses, lrs = _train(model, opt_cfg, step_fn, len(x), seeds["data"], log_every, log)
    report = RunReport("pretrain", pretrain_target, cfg.pe_type, cfg.mask_style,
                       cfg.config_hash(), dict(seeds), losses, lrs,
                       {"final_loss": losses[-1], "chance_loss": math.log(cfg.k)},
                       time.perf_counter() - t0)
    return model, report


def finetune_loop(cfg: ModelConfig, opt_cfg: OptimConfig, x: np.ndarray, y: np.ndarray,
                  seeds: dict, model: SpectreModel | None = None,
                  eval_data: tuple | None = None, pretrain_target: str = "none",
                  log=None, log_every: int = 0):
    """Supervised kinematics regression; ``model`` carries pre-trained weights if any."""
    _check_data(cfg, x)
    if y is None or y.shape != (x.shape[0], cfg.dof):
        raise ShapeMismatchError(f"targets must be [{x.shape[0]}, {cfg.dof}]")
    model = model or SpectreModel(cfg, seed=seeds["model"])
    model.set_dropout_seed(seeds["model"])
    xt = torch.as_tensor(np.asarray(x, dtype=np.float32))
    yt = torch.as_tensor(np.asarray(y, dtype=np.float32))

    def step_fn(idx, step):
        return finetune_step(model, xt[idx], yt[idx])

    t0 = time.perf_counter()
    losses, lrs = _train(model, opt_cfg, step_fn, len(x), seeds["data"], log_every, log)
    metrics = {"train": evaluate(model, x, y)}
    if eval_data is not None:
        metrics["test"] = evaluate(model, *eval_data)
    report = RunReport("finetune", pretrain_target, cfg.pe_type, cfg.mask_style,
                       cfg.config_hash(), dict(seeds), losses, lrs, metrics,
                       time.perf_counter() - t0)
    return model, report
