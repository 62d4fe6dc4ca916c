"""Synchronous local SGD with weight and update quantization.

Each round, every device starts from the current global model, runs ``H``
minibatch SGD steps in which the post-step weights are stochastically
quantized to ``q_w`` bits, and uploads its model difference quantized to
``q_g`` bits.  The server subtracts the ``p_n``-weighted sum of those
differences from the global model.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError, InvalidArgumentError
from .quantization import FULL_PRECISION, quantize


@dataclass
class DeviceState:
    device_id: int
    shard: np.ndarray
    weight: float
    q_w: int = FULL_PRECISION
    q_g: int = FULL_PRECISION

    def __post_init__(self):
        self.shard = np.asarray(self.shard)
        if self.shard.size == 0:
            raise InvalidArgumentError(f"device {self.device_id} has an empty shard")
        if not 0.0 < self.weight <= 1.0:
            raise InvalidArgumentError(f"device weight must lie in (0, 1], got {self.weight}")


def make_devices(partition, q_w=FULL_PRECISION, q_g=FULL_PRECISION) -> list[DeviceState]:
    """Build device states from a :class:`~fldelay.partition.Partition`.

    ``q_w`` and ``q_g`` may be scalars or per-device sequences.
    """
    n = len(partition.shards)
    q_w = np.broadcast_to(np.asarray(q_w), (n,))
    q_g = np.broadcast_to(np.asarray(q_g), (n,))
    return [
        DeviceState(i, s, float(p), int(qw), int(qg))
        for i, (s, p, qw, qg) in enumerate(zip(partition.shards, partition.weights, q_w, q_g))
    ]


@dataclass
class TrainingConfig:
    H: int = 1
    K: int = 100
    batch_size: int = 32
    lr: float = 0.1
    decay: float = 0.996
    schedule: str = "decay"
    epsilon: float | None = None
    early_stop: bool = False
    seed: int = 0
    sync: str = "broadcast"
    threads: int = 1

    def validate(self, n_devices: int | None = None, adaptive: bool = False):
        if self.H < 1 or self.K < 1:
            raise InvalidArgumentError("H and K must be positive")
        if not adaptive and self.K % self.H:
            raise InvalidArgumentError(f"K={self.K} is not a multiple of H={self.H}")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch size must be positive")
        if self.schedule not in ("decay", "theorem1"):
            raise InvalidArgumentError(f"unknown learning-rate schedule {self.schedule!r}")
        if self.schedule == "decay" and not (self.lr > 0 and 0 < self.decay <= 1):
            raise InvalidArgumentError("need lr > 0 and 0 < decay <= 1")
        if self.sync not in ("broadcast", "literal"):
            raise InvalidArgumentError(f"unknown sync mode {self.sync!r}")
        if self.early_stop and self.epsilon is None:
            raise InvalidArgumentError("early stopping needs epsilon")

    def learning_rate(self, round_idx: int, n_devices: int) -> float:
        if self.schedule == "theorem1":
            return math.sqrt(self.batch_size * n_devices / self.K)
        return self.lr * self.decay**round_idx


def theorem1_lr(batch_size: int, n_devices: int, K: int) -> float:
    """Constant step size ``sqrt(M N / K)`` under which the convergence bound is stated."""
    return math.sqrt(batch_size * n_devices / K)


@dataclass
class TrainingTrace:
    losses: np.ndarray
    grad_norms_sq: np.ndarray
    iteration_round: np.ndarray
    round_H: list
    round_lr: list
    weight_residuals: np.ndarray
    final_model: np.ndarray
    final_loss: float
    transmissions: int
    schedule: str
    n_devices: int
    batch_size: int
    stopped_early: bool = False
    initial_model: np.ndarray | None = None

    @property
    def iterations(self) -> int:
        return int(self.losses.size)

    @property
    def rounds(self) -> int:
        return len(self.round_H)

    @property
    def round_grad_norms_sq(self) -> np.ndarray:
        starts = np.concatenate([[0], np.cumsum(self.round_H)[:-1]]).astype(int)
        return self.grad_norms_sq[starts]

    def mean_grad_norm_sq(self) -> float:
        return float(self.grad_norms_sq.mean())

    def rounds_to_loss(self, target: float) -> int | None:
        """First round whose starting global loss is at or below ``target``."""
        starts = np.concatenate([[0], np.cumsum(self.round_H)[:-1]]).astype(int)
        hits = np.flatnonzero(self.losses[starts] <= target)
        if hits.size:
            return int(hits[0])
        if self.final_loss <= target:
            return self.rounds
        return None


def device_rng(seed: int, device_id: int, round_idx: int, stream: int = 0) -> np.random.Generator:
    """Independent stream for one device in one round."""
    return np.random.default_rng([seed, device_id, round_idx, stream])


def minibatch(rng: np.random.Generator, shard: np.ndarray, batch_size: int) -> np.ndarray:
    if batch_size >= shard.size:
        return shard
    return shard[rng.choice(shard.size, size=batch_size, replace=False)]


def _check_finite(arr, what, device_id):
    if not np.all(np.isfinite(arr)):
        raise DivergenceError(f"non-finite {what} on device {device_id}; reduce the learning rate")


def local_round(task, device: DeviceState, start, H: int, lr: float, batch_size: int, rng,
                record: bool = False):
    """Run ``H`` quantized SGD steps from ``start``; return the quantized model difference.

    With ``record=True`` also return the ``(H, d)`` array of post-step
    weights and the squared weight-quantization residual of every step.
    """
    start = np.asarray(start, dtype=np.float64)
    _check_finite(start, "starting model", device.device_id)
    w = start.copy()
    traj = np.empty((H, w.size)) if record else None
    resid = np.empty(H)
    for h in range(H):
        idx = minibatch(rng, device.shard, batch_size)
        loss, g = task.loss_grad(w, idx)
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite loss on device {device.device_id} at local step {h}")
        _check_finite(g, "gradient", device.device_id)
        stepped = w - lr * g
        w = quantize(stepped, device.q_w, rng)
        r = w - stepped
        resid[h] = r @ r
        if record:
            traj[h] = w
    update = quantize(start - w, device.q_g, rng)
    if record:
        return update, traj, resid
    return update


def aggregate(updates: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """Weighted sum of device updates, accumulated in device order."""
    if len(updates) != len(weights) or not updates:
        raise InvalidArgumentError("need one weight per update")
    dim = np.shape(updates[0])
    if any(np.shape(u) != dim for u in updates):
        raise InvalidArgumentError("updates have mismatched dimensions")
    if abs(math.fsum(weights) - 1.0) > 1e-9:
        raise InvalidArgumentError(f"weights sum to {math.fsum(weights)}, expected 1")
    total = np.zeros(dim)
    for u, p in zip(updates, weights):
        total += p * np.asarray(u, dtype=np.float64)
    return total


def _global_loss_grad(task, devices, w):
    loss = 0.0
    grad = np.zeros_like(w)
    for dev in devices:
        l, g = task.loss_grad(w, dev.shard)
        loss += dev.weight * l
        grad += dev.weight * g
    return loss, grad


def global_loss_grad(task, devices, w):
    """Exact ``F(w) = sum_n p_n F_n(w)`` and its gradient."""
    return _global_loss_grad(task, devices, np.asarray(w, dtype=np.float64))


def train(task, devices: Sequence[DeviceState], config: TrainingConfig, w0=None,
          h_schedule: Callable[[int, float], int] | None = None) -> TrainingTrace:
    """Run rounds of quantized local SGD until ``config.K`` iterations are done.

    ``h_schedule(round, loss_ratio)`` overrides ``config.H`` per round, where
    ``loss_ratio`` is the current global loss over the initial one; the last
    round is truncated so the iteration total stays ``K``.
    """
    config.validate(len(devices), adaptive=h_schedule is not None)
    weights = [d.weight for d in devices]
    if abs(math.fsum(weights) - 1.0) > 1e-9:
        raise InvalidArgumentError("device weights must sum to 1")
    n_dev = len(devices)
    w = task.initial_params(config.seed) if w0 is None else np.array(w0, dtype=np.float64)
    w_init = w.copy()
    starts = [w.copy() for _ in devices]

    losses, gnorms, it_round, resid_rows = [], [], [], []
    round_H, round_lr = [], []
    transmissions = 0
    stopped = False
    loss0 = None
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None

    def record(model):
        loss, g = _global_loss_grad(task, devices, model)
        if not math.isfinite(loss):
            raise DivergenceError("global loss became non-finite")
        losses.append(loss)
        gnorms.append(float(g @ g))
        it_round.append(len(round_H))
        return loss

    try:
        k = 0
        r = 0
        while k < config.K:
            global_w = aggregate(starts, weights) if config.sync == "literal" else w
            loss_now = record(global_w)
            if loss0 is None:
                loss0 = loss_now
            H = config.H
            if h_schedule is not None:
                ratio = loss_now / loss0 if loss0 > 0 else 0.0
                H = max(1, int(h_schedule(r, ratio)))
            H = min(H, config.K - k)
            lr = config.learning_rate(r, n_dev)

            def run(i):
                rng = device_rng(config.seed, devices[i].device_id, r)
                return local_round(task, devices[i], starts[i], H, lr, config.batch_size, rng,
                                   record=True)

            results = list(pool.map(run, range(n_dev))) if pool else [run(i) for i in range(n_dev)]
            for h in range(1, H):
                record(aggregate([res[1][h - 1] for res in results], weights))
            resid_rows.extend(np.stack([res[2] for res in results], axis=1))
            delta = aggregate([res[0] for res in results], weights)
            transmissions += n_dev
            round_H.append(H)
            round_lr.append(lr)
            if config.sync == "literal":
                for i, dev in enumerate(devices):
                    rng = device_rng(config.seed, dev.device_id, r, stream=1)
                    starts[i] = quantize(starts[i] - delta, dev.q_w, rng)
            else:
                w = w - delta
                starts = [w] * n_dev
            k += H
            r += 1
            if config.early_stop and np.mean(gnorms) <= config.epsilon:
                stopped = k < config.K
                break
    finally:
        if pool:
            pool.shutdown()

    final = aggregate(starts, weights) if config.sync == "literal" else w
    final_loss, _ = _global_loss_grad(task, devices, final)
    return TrainingTrace(
        losses=np.array(losses),
        grad_norms_sq=np.array(gnorms),
        iteration_round=np.array(it_round),
        round_H=round_H,
        round_lr=round_lr,
        weight_residuals=np.array(resid_rows),
        final_model=final,
        final_loss=float(final_loss),
        transmissions=transmissions,
        schedule=config.schedule,
        n_devices=n_dev,
        batch_size=config.batch_size,
        stopped_early=stopped,
        initial_model=w_init,
    )


def ceil_iterations(K: int, H: int) -> int:
    """Round ``K`` up to a whole number of rounds of ``H`` iterations, warning if it changes."""
    rounds = -(-K // H)
    if rounds * H != K:
        warnings.warn(
            f"K={K} is not a multiple of H={H}; running {rounds} rounds ({rounds * H} iterations)",
            stacklevel=2,
        )
    return rounds * H


def with_quantization(devices, q_w=None, q_g=None) -> list[DeviceState]:
    """Copies of ``devices`` with new bit widths (scalars or per-device sequences)."""
    n = len(devices)
    qw = np.broadcast_to(np.asarray([d.q_w for d in devices] if q_w is None else q_w), (n,))
    qg = np.broadcast_to(np.asarray([d.q_g for d in devices] if q_g is None else q_g), (n,))
    return [replace(d, q_w=int(a), q_g=int(b)) for d, a, b in zip(devices, qw, qg)]
