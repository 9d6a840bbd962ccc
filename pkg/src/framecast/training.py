"""Optimization: MSE objective, decoupled-decay Adam, one-cycle schedule,
and a seeded, resumable training loop.

Determinism contract: with a fixed seed and thread count, two runs produce
byte-identical metric logs, and an interrupted run resumed from its last
checkpoint continues exactly as the uninterrupted one would have.  Every
random draw comes from a counter-keyed stream ((seed, stream id, epoch or
step)), so nothing depends on how many times any generator was consumed
before, and optimizer moments ride along in checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics, tensor
from .data import Dataset, epoch_order, load_batch
from .model import Model, save_checkpoint, load_checkpoint
from .params import ParameterStore
from .tensor import Tensor

_STREAM_DROPPATH = 307

# Norm gains and shifts, additive biases, and relative position bias tables
# are excluded from weight decay; projection and convolution weights decay.
_NO_DECAY_SUFFIXES = (".gain", ".shift", ".bias", ".bias_table")

LAST_CHECKPOINT = "ckpt_last.bin"
BEST_CHECKPOINT = "ckpt_best.bin"
METRICS_LOG = "metrics.log"


class TrainingDiverged(RuntimeError):
    """Loss left the reals; carries the offending step and learning rate."""

    def __init__(self, step: int, lr: float):
        super().__init__(f"non-finite loss at step {step} (lr={lr:.8e})")
        self.step = step
        self.lr = lr


@dataclass(frozen=True)
class TrainSpec:
    """Optimization hyperparameters."""

    total_steps: int
    batch_size: int = 16
    base_lr: float = 1e-3
    weight_decay: float = 5e-2
    warmup_frac: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 0.0  # 0 disables clipping
    seed: int = 0
    eval_every: int = 0  # 0 disables periodic evaluation
    eval_subset: int = 32

    def __post_init__(self):
        if self.total_steps < 0:
            raise ValueError("total_steps must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.base_lr <= 0.0:
            raise ValueError("base_lr must be positive")
        if not 0.0 < self.warmup_frac < 1.0:
            raise ValueError(f"warmup_frac must be in (0, 1), got {self.warmup_frac}")
        if self.grad_clip < 0.0 or self.weight_decay < 0.0:
            raise ValueError("grad_clip and weight_decay must be non-negative")


def mse_loss(pred: Tensor, truth: Tensor) -> Tensor:
    """Per-pixel mean squared error as a graph node."""
    d = tensor.sub(pred, truth)
    return tensor.mul(d, d).mean()


def decays(name: str) -> bool:
    return not name.endswith(_NO_DECAY_SUFFIXES)


def onecycle_lr(step: int, total_steps: int, base_lr: float,
                warmup_frac: float = 0.1, start_frac: float = 0.1,
                final_frac: float = 0.01) -> float:
    """Linear ramp from start_frac * base_lr to base_lr over the warmup
    steps, then cosine decay to final_frac * base_lr at total_steps.

    Both segments are written as convex blends so the three anchor points
    (start, peak, floor) come out exact in floating point, not merely close.
    """
    if total_steps < 1:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warm = int(round(warmup_frac * total_steps))
    if step <= warm:
        u = step / warm if warm else 1.0
        return base_lr * ((1.0 - u) * start_frac + u)
    u = (step - warm) / (total_steps - warm)
    w = 0.5 * (1.0 + math.cos(math.pi * u))
    return base_lr * ((1.0 - w) * final_frac + w)


class AdamW:
    """Adam with decoupled weight decay.

    The decay step theta <- theta - lr * wd * theta is applied separately
    from (and before) the moment update, and never to parameters matching
    the no-decay suffixes.  Moments live in arrays of the parameter dtype so
    they can be checkpointed and restored bit-exactly.
    """

    def __init__(self, store: ParameterStore, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 5e-2):
        self.store = store
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in store.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in store.items()}

    def step(self, lr: float):
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for name, p in self.store.items():
            g = p.grad
            if g is None:
                raise ValueError(f"parameter {name} has no gradient")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            if self.weight_decay and decays(name):
                p.data -= (lr * self.weight_decay) * p.data
            p.data -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self) -> dict:
        out = {}
        for name in self.m:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict, step_count: int):
        for name in self.m:
            for prefix, slot in (("opt.m.", self.m), ("opt.v.", self.v)):
                key = prefix + name
                if key not in arrays:
                    raise ValueError(f"checkpoint is missing optimizer record {key}")
                if arrays[key].shape != slot[name].shape:
                    raise ValueError(f"optimizer record {key} has shape "
                                     f"{arrays[key].shape}, expected {slot[name].shape}")
                slot[name][...] = arrays[key]
        self.step_count = step_count


def clip_gradients(store: ParameterStore, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for _, p in store.items():
        if p.grad is not None:
            g = p.grad.ravel().astype(np.float64, copy=False)
            total += float(np.dot(g, g))
    norm = math.sqrt(total)
    if norm > max_norm > 0.0:
        scale = max_norm / norm
        for _, p in store.items():
            if p.grad is not None:
                p.grad *= scale
    return norm


def _eval_model(model: Model, split_u8: np.ndarray, batch_size: int) -> dict:
    """Deterministic eval-mode metrics of a model over one dataset split."""
    spec = model.spec
    fin, fout = spec.frames_in, spec.frames_out
    need = fin + fout
    if split_u8.shape[1] < need:
        raise ValueError(f"evaluation needs {need} frames per sequence, "
                         f"split has {split_u8.shape[1]}")
    preds = []
    truths = []
    for i in range(0, len(split_u8), batch_size):
        seqs = split_u8[i:i + batch_size].astype(np.float32) / 255.0
        preds.append(model.predict(seqs[:, :fin], steps=fout))
        truths.append(seqs[:, fin:need])
    return metrics.evaluate(np.concatenate(preds), np.concatenate(truths))


def train(model: Model, dataset: Dataset, tspec: TrainSpec, out_dir,
          resume: bool = False, stop_after: int | None = None,
          echo=None) -> dict:
    """Run the training loop; returns a history dict.

    Writes ``metrics.log`` (one line per step: ``step=<n> lr=<v> loss=<v>``,
    with ``eval_mse=... eval_ssim=... eval_psnr=...`` appended on evaluation
    steps), ``ckpt_last.bin`` at every evaluation point and at the end, and
    ``ckpt_best.bin`` whenever the evaluation MSE improves.  ``resume``
    restarts from ``ckpt_last.bin``; ``stop_after`` limits how many steps
    this call performs (the schedule still spans ``tspec.total_steps``), so
    an interrupted-plus-resumed run retraces the uninterrupted one.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    store = model.store
    opt = AdamW(store, betas=(tspec.beta1, tspec.beta2), eps=tspec.eps,
                weight_decay=tspec.weight_decay)

    start_step = 0
    best_mse = math.inf
    if resume:
        spec, arrays, extra = load_checkpoint(out_dir / LAST_CHECKPOINT)
        if spec != model.spec:
            raise ValueError("checkpoint spec does not match the model")
        store.load_state_dict({k: v for k, v in arrays.items()
                               if not k.startswith("opt.")})
        opt.load_state_arrays(arrays, extra["opt_step"])
        start_step = extra["step"]
        best_mse = extra.get("best_mse", math.inf)

    def save(path, step_done):
        arrays = dict(store.state_dict())
        arrays.update(opt.state_arrays())
        extra = {"step": step_done, "opt_step": opt.step_count,
                 "best_mse": best_mse}
        save_checkpoint(path, model.spec, arrays, extra)

    n_train = len(dataset.train)
    steps_per_epoch = n_train // tspec.batch_size
    if tspec.total_steps > 0 and steps_per_epoch == 0:
        raise ValueError(f"{n_train} training sequences cannot fill a batch "
                         f"of {tspec.batch_size}")
    eval_split = dataset.test[:tspec.eval_subset] if len(dataset.test) else None

    end_step = tspec.total_steps
    if stop_after is not None:
        end_step = min(end_step, start_step + stop_after)

    history = {"step": [], "loss": [], "lr": [], "eval": []}
    log_path = out_dir / METRICS_LOG
    order = None
    with open(log_path, "a" if resume else "w") as log:
        for step in range(start_step, end_step):
            epoch, pos = divmod(step, steps_per_epoch)
            if pos == 0 or order is None:
                order = epoch_order(n_train, tspec.batch_size, tspec.seed, epoch)
            x, y = load_batch(dataset.train, order[pos],
                              model.spec.frames_in, model.spec.frames_out,
                              ar=model.spec.ar_mode)
            rng = np.random.default_rng((tspec.seed, _STREAM_DROPPATH, step))
            pred = model.forward(Tensor(x), train=True, rng=rng)
            loss = mse_loss(pred, Tensor(y))
            loss_val = float(loss.data)
            lr = onecycle_lr(step, tspec.total_steps, tspec.base_lr,
                             tspec.warmup_frac)
            if not math.isfinite(loss_val):
                log.write(f"step={step + 1} lr={lr:.8e} loss={loss_val:.8e} "
                          f"diverged\n")
                raise TrainingDiverged(step + 1, lr)
            loss.backward()
            if tspec.grad_clip > 0.0:
                clip_gradients(store, tspec.grad_clip)
            opt.step(lr)
            store.zero_grad()

            done = step + 1
            line = f"step={done} lr={lr:.8e} loss={loss_val:.8e}"
            # evaluation points depend only on the schedule, never on where
            # this particular call stops, so resumed logs match full runs
            if (tspec.eval_every > 0 and eval_split is not None
                    and (done % tspec.eval_every == 0
                         or done == tspec.total_steps)):
                report = _eval_model(model, eval_split, tspec.batch_size)
                line += (f" eval_mse={report['mse']:.8e}"
                         f" eval_ssim={report['ssim']:.8e}"
                         f" eval_psnr={report['psnr']:.8e}")
                history["eval"].append((done, report["mse"], report["ssim"],
                                        report["psnr"]))
                if report["mse"] < best_mse:
                    best_mse = report["mse"]
                    save(out_dir / BEST_CHECKPOINT, done)
                save(out_dir / LAST_CHECKPOINT, done)
            log.write(line + "\n")
            log.flush()
            if echo is not None:
                echo(line)
            history["step"].append(done)
            history["loss"].append(loss_val)
            history["lr"].append(lr)

    save(out_dir / LAST_CHECKPOINT, end_step)
    history["best_mse"] = best_mse
    history["log_path"] = str(log_path)
    return history
