"""Training: loss with noise-std regularization, Adam updates, checkpoints.

The loss is the mean squared error between predicted and drawn noise
plus ``lambda * smooth_l1(std(eps_hat) - 1)``, where the standard
deviation is the population std over every predicted entry. The
regularizer keeps the predicted noise close to a unit-variance
distribution; its trajectory (``observed_std`` per step) is recorded in
the loss history for plotting.

Per-step randomness is derived statelessly from (seed, step index), so
a run resumed from any checkpoint replays the exact same draws.
"""

import csv
import os
from dataclasses import asdict, dataclass

import numpy as np

from .diffusion import NoiseSchedule, forward_noise
from .flatconfig import sub_seed
from .net import autodiff as ad
from .net.autodiff import Var, backward
from .net.config import DenoiserConfig
from .net.denoiser import denoise
from .net.params import audit_manifest, init_params, load_archive, save_archive, zero_grads


def smooth_l1(x: float) -> float:
    """0.5 x^2 inside |x| < 1, |x| - 0.5 outside; both branches give 0.5 at 1."""
    x = float(x)
    return 0.5 * x * x if abs(x) < 1.0 else abs(x) - 0.5


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    mse: float
    std_reg: float
    observed_std: float


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 2
    lr: float = 1e-4
    lr_halving_period_epochs: int = 5
    weight_decay: float = 1e-4
    lam: float = 1.0
    p_uncond: float = 0.1
    rate: int = 10
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "lr", "lr_halving_period_epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0 or self.lam < 0:
            raise ValueError("weight_decay and lam must be >= 0")
        if not 0.0 <= self.p_uncond < 1.0:
            raise ValueError(f"p_uncond must lie in [0, 1), got {self.p_uncond}")
        if self.rate < 1:
            raise ValueError("rate must be >= 1")

    def lr_at(self, epoch: int) -> float:
        return self.lr * 0.5 ** (epoch // self.lr_halving_period_epochs)


def _loss_graph(eps_hat: Var, eps: np.ndarray, lam: float):
    """Build the differentiable loss; returns (total Var, LossBreakdown)."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps_hat.shape != eps.shape:
        raise ValueError(f"eps_hat shape {eps_hat.shape} != eps shape {eps.shape}")
    if eps_hat.value.size < 2:
        raise ValueError("std is undefined for fewer than 2 entries")
    diff = ad.sub(eps_hat, Var(eps))
    mse = ad.mean_all(ad.mul(diff, diff))
    mu = ad.mean_all(eps_hat)
    second = ad.mean_all(ad.mul(eps_hat, eps_hat))
    std = ad.sqrt(ad.sub(second, ad.mul(mu, mu)))
    reg = ad.smooth_l1(ad.sub(std, Var(1.0)))
    total = ad.add(mse, ad.scale(reg, lam))
    breakdown = LossBreakdown(
        total=float(total.value),
        mse=float(mse.value),
        std_reg=float(reg.value),
        observed_std=float(std.value),
    )
    return total, breakdown


def loss(eps_hat, eps, lam: float) -> LossBreakdown:
    """Loss analytics on plain arrays (no gradients)."""
    var = eps_hat if isinstance(eps_hat, Var) else Var(np.asarray(eps_hat, dtype=np.float64))
    _, breakdown = _loss_graph(var, eps, lam)
    return breakdown


# -- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p.value) for k, p in params.items()},
        v={k: np.zeros_like(p.value) for k, p in params.items()},
    )


def adam_update(params, state: AdamState, lr: float, weight_decay: float):
    """One adaptive-moment step with decoupled weight decay."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.value)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        p.value -= lr * (m_hat / (np.sqrt(v_hat) + state.eps) + weight_decay * p.value)


# -- steps and epochs ---------------------------------------------------------

def _accumulate_batch(params, batch, sched, tcfg, ncfg, rng):
    """Backprop the mean batch loss into param grads; returns mean breakdown.

    Per pair the draws are, in order: a uniform step t, the noise tensor,
    and the condition-dropout coin.
    """
    zero_grads(params)
    sums = np.zeros(4)
    for pair in batch:
        t = int(rng.integers(sched.T))
        eps = rng.standard_normal(pair.input.points.shape)
        drop = rng.random() < tcfg.p_uncond
        noisy = forward_noise(pair.input, t, sched, eps)
        condition = None if drop else pair.condition
        eps_hat = denoise(noisy, condition, t, params, ncfg)
        total, br = _loss_graph(eps_hat, eps, tcfg.lam)
        backward(ad.scale(total, 1.0 / len(batch)))
        sums += (br.total, br.mse, br.std_reg, br.observed_std)
    sums /= len(batch)
    return LossBreakdown(*sums)


def train_step(params, opt: AdamState, pair, sched: NoiseSchedule, tcfg: TrainConfig,
               ncfg: DenoiserConfig, rng, lr: float | None = None) -> LossBreakdown:
    """One single-pair optimization step; deterministic under the given rng."""
    br = _accumulate_batch(params, [pair], sched, tcfg, ncfg, rng)
    adam_update(params, opt, tcfg.lr if lr is None else lr, tcfg.weight_decay)
    return br


def _step_rng(seed, step):
    return np.random.Generator(np.random.PCG64(sub_seed(seed, f"step:{step}")))


def train(params, opt, dataset, sched: NoiseSchedule, tcfg: TrainConfig,
          ncfg: DenoiserConfig, manifest=None, out_dir=None, start_epoch: int = 0,
          start_step: int = 0):
    """Epoch loop with periodic lr halving and per-epoch checkpoints.

    Returns (params, history); history rows are dicts keyed
    step/epoch/lr/mse/std_reg/observed_std/total. Pass ``start_epoch`` /
    ``start_step`` from a loaded checkpoint to resume; per-step seeding
    makes the continuation identical to the uninterrupted run.
    """
    if not dataset:
        raise ValueError("training needs a non-empty dataset")
    counts = {p.input.count for p in dataset}
    if len(counts) > 1:
        raise ValueError(f"pairs must share one input point count, got {sorted(counts)}")
    history = []
    step = start_step
    for epoch in range(start_epoch, tcfg.epochs):
        lr = tcfg.lr_at(epoch)
        shuffle = np.random.Generator(np.random.PCG64(sub_seed(tcfg.seed, f"shuffle:{epoch}")))
        order = shuffle.permutation(len(dataset))
        for lo in range(0, len(order), tcfg.batch_size):
            batch = [dataset[i] for i in order[lo : lo + tcfg.batch_size]]
            rng = _step_rng(tcfg.seed, step)
            br = _accumulate_batch(params, batch, sched, tcfg, ncfg, rng)
            adam_update(params, opt, lr, tcfg.weight_decay)
            history.append(
                {
                    "step": step,
                    "epoch": epoch,
                    "lr": lr,
                    "mse": br.mse,
                    "std_reg": br.std_reg,
                    "observed_std": br.observed_std,
                    "total": br.total,
                }
            )
            step += 1
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            save_checkpoint(
                params, opt, manifest or [],
                os.path.join(out_dir, f"checkpoint_epoch{epoch:04d}.ckpt"),
                step=step, epoch=epoch + 1, train_config=tcfg,
            )
            write_history_csv(history, os.path.join(out_dir, "loss_history.csv"))
    return params, history


def write_history_csv(history, path):
    fields = ["step", "epoch", "lr", "mse", "std_reg", "observed_std", "total"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(history)


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(params, opt: AdamState, manifest, path, step: int = 0,
                    epoch: int = 0, train_config: TrainConfig | None = None):
    """Lossless archive of parameters, optimizer moments, and counters."""
    arrays = {f"param/{k}": p.value for k, p in params.items()}
    arrays.update({f"adam_m/{k}": v for k, v in opt.m.items()})
    arrays.update({f"adam_v/{k}": v for k, v in opt.v.items()})
    extra = {
        "step": int(step),
        "epoch": int(epoch),
        "adam_step": int(opt.step),
        "adam_beta1": opt.beta1,
        "adam_beta2": opt.beta2,
        "adam_eps": opt.eps,
        "train_config": None if train_config is None else asdict(train_config),
    }
    save_archive(path, arrays, manifest, extra)


def load_checkpoint(path, config: DenoiserConfig):
    """Restore (params, opt, extra); refuses archives whose manifest
    disagrees with the given config."""
    arrays, manifest, extra = load_archive(path)
    params, expected = init_params(config, seed=0)
    if manifest != expected:
        raise ValueError(
            f"checkpoint {path} was written for a different architecture; "
            f"manifest mismatch against the current config"
        )
    problems = audit_manifest(manifest)
    if problems:
        raise ValueError(f"checkpoint manifest violates structural constraints: {problems}")
    for name, p in params.items():
        key = f"param/{name}"
        if key not in arrays:
            raise ValueError(f"checkpoint {path} lacks parameter {name}")
        if arrays[key].shape != p.value.shape:
            raise ValueError(
                f"checkpoint {path}: parameter {name} has shape {arrays[key].shape}, "
                f"expected {p.value.shape}"
            )
        p.value = arrays[key].astype(np.float64)
    opt = adam_init(params)
    for name in params:
        opt.m[name] = arrays[f"adam_m/{name}"].astype(np.float64)
        opt.v[name] = arrays[f"adam_v/{name}"].astype(np.float64)
    opt.step = int(extra.get("adam_step", 0))
    opt.beta1 = float(extra.get("adam_beta1", 0.9))
    opt.beta2 = float(extra.get("adam_beta2", 0.999))
    opt.eps = float(extra.get("adam_eps", 1e-8))
    return params, opt, extra
