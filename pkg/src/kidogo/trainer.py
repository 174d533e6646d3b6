"""Autoregressive pretraining loop.

AdamW with decoupled weight decay, linear warmup into cosine decay, gradient
accumulation with a fixed reduction order, global-norm clipping, periodic
checkpoints, and a (step, loss, lr) trace that is a pure function of the
seed. Batch order is stateless: the shuffle permutation is derived from
(seed, epoch), so resuming from a checkpoint at step k replays steps k+1...
exactly as the uninterrupted run would.

Multi-device gradient sharding is out of scope, but the loop accepts an
all-reduce hook (grads dict -> grads dict, identity by default) so a sharded
runner can be slotted in without touching the step logic.

The carbon estimator prices a training footprint as
gpus x hours x device-kW x PUE x grid intensity.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, fields

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .configio import read_kv, write_kv
from .errors import ConfigInvalid, NumericalDivergence, VocabMismatch
from .model import (ModelConfig, ParamStore, TokenBatch, init_params,
                    loss_and_grads, target_count)


@dataclass
class TrainConfig:
    peak_lr: float = 3e-4
    warmup_steps: int = 100
    total_steps: int = 1000
    min_lr_ratio: float = 0.1
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.95
    adam_eps: float = 1e-8
    batch_size: int = 8
    grad_accum_steps: int = 1
    seed: int = 0
    checkpoint_every: int = 0  # 0 disables periodic checkpoints
    clip_norm: float = 1.0

    def validate(self) -> "TrainConfig":
        if self.warmup_steps > self.total_steps:
            raise ConfigInvalid("warmup_steps must be <= total_steps")
        for f in ("peak_lr", "min_lr_ratio", "beta1", "beta2", "adam_eps"):
            if getattr(self, f) <= 0:
                raise ConfigInvalid(f"{f} must be positive")
        if self.batch_size < 1 or self.grad_accum_steps < 1:
            raise ConfigInvalid("batch_size and grad_accum_steps must be >= 1")
        return self

    def to_file(self, path) -> None:
        write_kv(path, {f.name: getattr(self, f.name) for f in fields(self)})

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**read_kv(path, known)).validate()


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup 0 -> peak, then cosine decay to peak * min_lr_ratio."""
    if step <= 0:
        return 0.0
    if step <= cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    span = cfg.total_steps - cfg.warmup_steps
    progress = (step - cfg.warmup_steps) / span if span else 1.0
    floor = cfg.min_lr_ratio
    return cfg.peak_lr * (floor + (1 - floor) * 0.5 * (1 + math.cos(math.pi * progress)))


def init_moments(params: ParamStore) -> dict:
    return {"m": {n: np.zeros_like(t) for n, t in params.tensors.items()},
            "v": {n: np.zeros_like(t) for n, t in params.tensors.items()}}


def adamw_step(params: ParamStore, grads: ParamStore, moments: dict,
               step: int, cfg: TrainConfig, lr: float | None = None) -> None:
    """One decoupled-weight-decay update in place; step is 1-based."""
    if lr is None:
        lr = lr_at(step, cfg)
    bc1 = 1.0 - cfg.beta1 ** step
    bc2 = 1.0 - cfg.beta2 ** step
    for name in params.names():
        g = grads[name]
        m = moments["m"][name]
        v = moments["v"][name]
        m *= cfg.beta1
        m += (1 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1 - cfg.beta2) * np.square(g)
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
        update += cfg.weight_decay * params[name]
        if not np.all(np.isfinite(update)):
            raise NumericalDivergence(f"non-finite update for {name}")
        params[name] -= lr * update


def clip_global_norm(grads: ParamStore, max_norm: float) -> float:
    total = math.sqrt(sum(float(np.square(grads[n]).sum())
                          for n in grads.names()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for name in grads.names():
            grads[name] *= scale
    return total


def _epoch_perm(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng((seed, epoch)).permutation(n)


@dataclass
class TrainResult:
    trace: list = field(default_factory=list)  # (step, loss, lr)
    checkpoints: list = field(default_factory=list)
    params: ParamStore | None = None
    moments: dict | None = None


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, ids: np.ndarray,
          mask: np.ndarray | None = None, out_dir=None, allreduce=None,
          resume_from=None, tile_size: int = 64) -> TrainResult:
    """Run total_steps optimizer steps over packed rows [N, seq].

    ids/mask come from the corpus packer. Emits trace.csv plus
    step-%08d.ckpt files under out_dir when given.
    """
    model_cfg.validate()
    train_cfg.validate()
    ids = np.asarray(ids)
    if ids.ndim != 2 or ids.shape[0] == 0:
        raise ConfigInvalid("need a non-empty [rows, seq] token array")
    if ids.shape[1] > model_cfg.max_seq_len:
        raise ConfigInvalid(
            f"shard seq {ids.shape[1]} exceeds max_seq_len {model_cfg.max_seq_len}")
    if int(ids.max()) >= model_cfg.vocab_size:
        raise VocabMismatch(
            f"shard contains id {int(ids.max())} but model vocab is "
            f"{model_cfg.vocab_size}")
    if mask is None:
        mask = np.ones_like(ids, dtype=bool)

    if resume_from is not None:
        params, start_step, moments = load_checkpoint(resume_from)
        if params.config != model_cfg:
            raise ConfigInvalid("checkpoint config does not match model config")
        if moments is None:
            raise ConfigInvalid("checkpoint lacks optimizer moments; cannot resume")
    else:
        params = init_params(model_cfg, seed=train_cfg.seed)
        start_step = 0
        moments = init_moments(params)
    if allreduce is None:
        allreduce = lambda g: g

    n_rows = ids.shape[0]
    rows_per_step = train_cfg.batch_size * train_cfg.grad_accum_steps
    result = TrainResult()
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    perm_cache = {}

    def row_at(position):
        epoch, offset = divmod(position, n_rows)
        if epoch not in perm_cache:
            perm_cache.clear()  # only the current epoch's permutation is live
            perm_cache[epoch] = _epoch_perm(train_cfg.seed, epoch, n_rows)
        return perm_cache[epoch][offset]

    for step in range(start_step + 1, train_cfg.total_steps + 1):
        base = (step - 1) * rows_per_step
        total_grads = params.zeros_like()
        weighted_loss = 0.0
        total_tokens = 0
        for micro in range(train_cfg.grad_accum_steps):
            rows = [row_at(base + micro * train_cfg.batch_size + j)
                    for j in range(train_cfg.batch_size)]
            batch = TokenBatch(ids[rows].astype(np.int64), mask[rows])
            loss, grads = loss_and_grads(params, batch, tile_size=tile_size)
            n_tok = target_count(batch)
            weighted_loss += loss * n_tok
            total_tokens += n_tok
            for name in total_grads.names():
                total_grads[name] += grads[name] * n_tok
        for name in total_grads.names():
            total_grads[name] /= total_tokens
        step_loss = weighted_loss / total_tokens
        total_grads = allreduce(total_grads)
        clip_global_norm(total_grads, train_cfg.clip_norm)
        lr = lr_at(step, train_cfg)
        adamw_step(params, total_grads, moments, step, train_cfg, lr=lr)
        result.trace.append((step, step_loss, lr))
        if (out_dir is not None and train_cfg.checkpoint_every
                and step % train_cfg.checkpoint_every == 0):
            path = os.path.join(out_dir, f"step-{step:08d}.ckpt")
            save_checkpoint(path, params, step=step, moments=moments)
            result.checkpoints.append(path)

    if out_dir is not None:
        final = os.path.join(out_dir, f"step-{train_cfg.total_steps:08d}.ckpt")
        if final not in result.checkpoints:
            save_checkpoint(final, params, step=train_cfg.total_steps,
                            moments=moments)
            result.checkpoints.append(final)
        with open(os.path.join(out_dir, "trace.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss", "lr"])
            for step, loss, lr in result.trace:
                writer.writerow([step, f"{loss:.8f}", f"{lr:.10g}"])
    result.params = params
    result.moments = moments
    return result


# --- carbon footprint --------------------------------------------------------


@dataclass
class CarbonQuery:
    gpu_count: float
    wall_hours: float
    device_power_kw: float
    pue: float = 1.0
    grid_intensity: float = 0.0  # kgCO2e per kWh

    def validate(self) -> "CarbonQuery":
        if self.gpu_count <= 0 or self.wall_hours <= 0 or self.device_power_kw <= 0:
            raise ConfigInvalid("gpu_count, wall_hours, device_power_kw must be positive")
        if self.pue < 1.0:
            raise ConfigInvalid("pue must be >= 1")
        if self.grid_intensity < 0:
            raise ConfigInvalid("grid_intensity must be >= 0")
        return self


def energy_kwh(q: CarbonQuery) -> float:
    return q.gpu_count * q.wall_hours * q.device_power_kw * q.pue


def estimate_carbon(q: CarbonQuery) -> float:
    """kgCO2e = gpu_count x wall_hours x device_power_kW x PUE x intensity."""
    q.validate()
    return energy_kwh(q) * q.grid_intensity
