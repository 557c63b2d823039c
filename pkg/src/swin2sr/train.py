"""Adam training loop with step-decay schedule and global-norm clipping."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint
from . import tensor as T
from .data import HR_PATCH, sample_batch, to_batch
from .losses import DEFAULT_LAMBDA_AUX, DEFAULT_LAMBDA_HF, loss_terms
from .model import DYNAMIC_SCALES, ModelConfig, Swin2SR

log = logging.getLogger(__name__)

BETA1, BETA2, EPS = 0.9, 0.99, 1e-8
BASE_LR = 2e-4
CLIP_NORM = 5.0
DECAY_AT = (0.5, 0.75, 0.9)


class TrainingError(RuntimeError):
    pass


def lr_at(it: int, iters: int, base: float = BASE_LR) -> float:
    """Base rate halved once each time ``it`` passes 50%, 75% and 90% of ``iters``."""
    return base * 0.5 ** sum(it >= int(f * iters) for f in DECAY_AT)


class Adam:
    def __init__(self, params: Sequence[T.Tensor], names: Sequence[str]):
        self.params, self.names = list(params), list(names)
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def step(self, lr: float):
        self.step_count += 1
        t = self.step_count
        c1, c2 = 1.0 - BETA1 ** t, 1.0 - BETA2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad.astype(p.dtype, copy=False)
            m *= BETA1
            m += (1.0 - BETA1) * g
            v *= BETA2
            v += (1.0 - BETA2) * g * g
            p.data = p.data - (lr * (m / c1) / (np.sqrt(v / c2) + EPS)).astype(p.dtype)

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for n, m, v in zip(self.names, self.m, self.v):
            out[f"optim.m.{n}"] = m
            out[f"optim.v.{n}"] = v
        out["optim.step"] = np.array([self.step_count], dtype=np.float32)
        return out

    def load(self, state: dict[str, np.ndarray]):
        for i, n in enumerate(self.names):
            self.m[i] = state[f"optim.m.{n}"].astype(self.params[i].dtype).copy()
            self.v[i] = state[f"optim.v.{n}"].astype(self.params[i].dtype).copy()
        self.step_count = int(state["optim.step"][0])


def clip_grad_norm(params: Sequence[T.Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params if p.grad is not None))
    if total > max_norm:
        f = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * f
    return total


@dataclass
class TrainConfig:
    iters: int = 1000
    batch_size: int = 4
    hr_size: int = HR_PATCH
    quality: int | Sequence[int] | None = None
    lambda_aux: float = DEFAULT_LAMBDA_AUX
    lambda_hf: float = DEFAULT_LAMBDA_HF
    lr: float = BASE_LR
    seed: int = 0
    workers: int = 1
    scales: Sequence[int] = field(default_factory=tuple)  # dynamic upsampler: factors to mix


@dataclass
class TrainResult:
    model: Swin2SR
    optimizer: Adam
    history: list[dict]

    def state(self) -> dict[str, np.ndarray]:
        return {**self.model.state_dict(), **self.optimizer.state()}

    def save(self, path):
        checkpoint.save(path, self.state(), self.model.config)


def _param_norm_dump(model: Swin2SR) -> str:
    return ", ".join(f"{n}={float(np.sqrt((p.data.astype(np.float64) ** 2).sum())):.3g}"
                     for n, p in model.named_parameters())


def train(config: ModelConfig, corpus: Sequence[np.ndarray], tc: TrainConfig,
          resume: dict[str, np.ndarray] | None = None, log_every: int = 0,
          until: int | None = None) -> TrainResult:
    """Train from scratch, or continue from a checkpoint's tensors (same ``tc``).

    Batch ``it`` draws from ``default_rng([seed, it])``, so a resumed run sees
    exactly the batches the uninterrupted run would have. ``until`` stops
    early without changing the schedule, which is always laid out over ``tc.iters``.
    """
    model = Swin2SR(config, seed=tc.seed)
    names = [n for n, _ in model.named_parameters()]
    opt = Adam(model.parameters(), names)
    start = 0
    if resume is not None:
        model.load_state_dict({k: v for k, v in resume.items() if not k.startswith("optim.")})
        opt.load(resume)
        start = opt.step_count
    scales = list(tc.scales) or [config.scale]
    if config.upsampler != "dynamic" and scales != [config.scale]:
        raise TrainingError("mixed scales need the dynamic upsampler")
    if config.upsampler == "dynamic" and any(s not in DYNAMIC_SCALES for s in scales):
        raise TrainingError(f"dynamic scales must be within {DYNAMIC_SCALES}")

    history = []
    stop = tc.iters if until is None else min(until, tc.iters)
    for it in range(start, stop):
        pick = np.random.default_rng([tc.seed, it, 1])
        r = scales[int(pick.integers(len(scales)))] if len(scales) > 1 else scales[0]
        batch = sample_batch(corpus, tc.batch_size, r, tc.quality, [tc.seed, it], tc.hr_size, tc.workers)
        lq = to_batch([s.lq for s in batch])
        hr = to_batch([s.hr for s in batch])
        try:
            pred = model(lq, r)
            terms = loss_terms(pred, hr, r, tc.lambda_aux, tc.lambda_hf)
            loss = terms["total"]
            if not np.isfinite(loss.item()):
                raise T.NonFiniteError("loss")
            model.zero_grad()
            T.backward(loss)
        except T.NonFiniteError as exc:
            raise TrainingError(f"non-finite value at iteration {it} ({exc}); parameter norms: "
                                + _param_norm_dump(model)) from None
        gnorm = clip_grad_norm(model.parameters(), CLIP_NORM)
        if not math.isfinite(gnorm):
            raise TrainingError(f"non-finite gradient at iteration {it}; parameter norms: "
                                + _param_norm_dump(model))
        lr = lr_at(it, tc.iters, tc.lr)
        opt.step(lr)
        row = {"iter": it, "scale": r, "lr": lr, "grad_norm": gnorm}
        row.update({k: v.item() for k, v in terms.items()})
        history.append(row)
        if log_every and (it + 1) % log_every == 0:
            log.info("iter %d loss %.5f", it + 1, row["total"])
    return TrainResult(model, opt, history)


def write_loss_csv(history: list[dict], path):
    keys = ["iter", "scale", "lr", "grad_norm", "total", "l1", "aux", "hf"]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for row in history:
            w.writerow([row.get(k, "") for k in keys])


def smoothed(values: Sequence[float], window: int = 50) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    window = max(1, min(window, len(v)))
    return np.convolve(v, np.ones(window) / window, mode="valid")
