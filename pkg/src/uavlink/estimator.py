"""Per-antenna channel-coefficient estimators.

One small ReLU network per antenna and direction (2K in total) regresses the
complex coefficient theta = h * D^2 as (Re, Im) from normalized positions
plus a replicated antenna index ("dimension extension"). Training uses a
FIFO replay buffer, uniform minibatches, and Adam.
"""

from __future__ import annotations

import json
import math
import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np

from .channel import BTU, UTB
from .env import Position


@dataclass(frozen=True)
class TrainConfig:
    """Replay/optimizer hyperparameters shared by all 2K networks."""

    capacity: int = 10_000
    minibatch: int = 64
    train_interval: int = 1
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    hidden: tuple[int, int] = (64, 64)
    pretrain_episodes: int = 500
    mape_window: int = 20
    target_mode: str = "large_scale"  # or "full" (targets include fading)
    target_scale: float = 5.0         # fixed output scaling, folded back on read

    def __post_init__(self):
        for name in ("capacity", "minibatch", "train_interval", "lr",
                     "pretrain_episodes", "mape_window"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.target_mode not in ("large_scale", "full"):
            raise ValueError(f"unknown target_mode {self.target_mode!r}")


def build_input(direction: str, x_v: Position, x_b: Position, k: int,
                n_antennas: int, region_km: float = 1.0) -> np.ndarray:
    """Network input of length 6 + K.

    BS->UAV: [x_v; x_B; k*1_K], UAV->BS: [x_B; x_v; k*1_K]; coordinates are
    normalized by the region side and the index block by K.
    """
    if not 1 <= k <= n_antennas:
        raise ValueError(f"antenna index {k} outside [1, {n_antennas}]")
    v = np.array([x_v.x_km, x_v.y_km, x_v.g_km]) / region_km
    b = np.array([x_b.x_km, x_b.y_km, x_b.g_km]) / region_km
    ext = np.full(n_antennas, k / n_antennas)
    if direction == BTU:
        return np.concatenate([v, b, ext])
    if direction == UTB:
        return np.concatenate([b, v, ext])
    raise ValueError(f"unknown direction {direction!r}")


def xavier_init(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """Uniform Xavier weights on +-sqrt(6 / (fan_in + fan_out))."""
    fan_out, fan_in = shape
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class Mlp:
    """Feed-forward net (ReLU hidden, linear output) with its Adam state."""

    layers: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8

    @classmethod
    def create(cls, layers: tuple[int, ...], rng: np.random.Generator,
               lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
               eps_adam: float = 1e-8) -> "Mlp":
        weights = [xavier_init((layers[i + 1], layers[i]), rng)
                   for i in range(len(layers) - 1)]
        biases = [np.zeros(layers[i + 1]) for i in range(len(layers) - 1)]
        return cls(
            layers=tuple(layers),
            weights=weights,
            biases=biases,
            m_w=[np.zeros_like(w) for w in weights],
            v_w=[np.zeros_like(w) for w in weights],
            m_b=[np.zeros_like(b) for b in biases],
            v_b=[np.zeros_like(b) for b in biases],
            lr=lr, beta1=beta1, beta2=beta2, eps_adam=eps_adam,
        )


def forward_batch(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Forward pass for a batch of inputs (n, in) -> (n, out)."""
    a = np.atleast_2d(x)
    if a.shape[1] != net.layers[0]:
        raise ValueError(f"input width {a.shape[1]} != {net.layers[0]}")
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        a = np.maximum(a @ w.T + b, 0.0)
    return a @ net.weights[-1].T + net.biases[-1]


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Single-input forward pass -> output vector (Re, Im)."""
    return forward_batch(net, np.asarray(x, dtype=float))[0]


def loss_and_grads(net: Mlp, x: np.ndarray, y: np.ndarray):
    """Mean per-sample squared error (summed over output components) and its
    gradients with respect to every weight and bias."""
    n = x.shape[0]
    acts = [x]
    pre = []
    a = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = a @ w.T + b
        pre.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)
    out = a @ net.weights[-1].T + net.biases[-1]

    diff = out - y
    loss = float(np.sum(diff**2) / n)

    g_w = [None] * len(net.weights)
    g_b = [None] * len(net.biases)
    delta = 2.0 * diff / n
    g_w[-1] = delta.T @ acts[-1]
    g_b[-1] = delta.sum(axis=0)
    for layer in range(len(net.weights) - 2, -1, -1):
        delta = (delta @ net.weights[layer + 1]) * (pre[layer] > 0.0)
        g_w[layer] = delta.T @ acts[layer]
        g_b[layer] = delta.sum(axis=0)
    return loss, (g_w, g_b)


def adam_step(net: Mlp, grads) -> Mlp:
    """One Adam update with bias correction; mutates and returns the net."""
    g_w, g_b = grads
    net.step += 1
    b1c = 1.0 - net.beta1**net.step
    b2c = 1.0 - net.beta2**net.step
    for i in range(len(net.weights)):
        for p, g, m, v in ((net.weights[i], g_w[i], net.m_w[i], net.v_w[i]),
                           (net.biases[i], g_b[i], net.m_b[i], net.v_b[i])):
            m *= net.beta1
            m += (1.0 - net.beta1) * g
            v *= net.beta2
            v += (1.0 - net.beta2) * g**2
            p -= net.lr * (m / b1c) / (np.sqrt(v / b2c) + net.eps_adam)
    return net


class ReplayBuffer:
    """Bounded FIFO of (input, target) pairs with uniform minibatch sampling."""

    def __init__(self, capacity: int, input_dim: int, target_dim: int = 2):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._x = np.zeros((capacity, input_dim))
        self._y = np.zeros((capacity, target_dim))
        self._size = 0
        self._cursor = 0

    def __len__(self) -> int:
        return self._size

    def push(self, x: np.ndarray, y: np.ndarray) -> None:
        self._x[self._cursor] = x
        self._y[self._cursor] = y
        self._cursor = (self._cursor + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator):
        """Uniform minibatch without replacement."""
        if n > self._size:
            raise ValueError(f"cannot sample {n} of {self._size} transitions")
        idx = rng.choice(self._size, size=n, replace=False)
        return self._x[idx], self._y[idx]

    def contents(self):
        return self._x[: self._size], self._y[: self._size]


def train_step(net: Mlp, buffer: ReplayBuffer, cfg: TrainConfig,
               rng: np.random.Generator) -> float | None:
    """Sample a minibatch, take one Adam step, return the pre-update loss.

    Returns None while the buffer holds fewer than `minibatch` transitions.
    """
    if len(buffer) < cfg.minibatch:
        return None
    x, y = buffer.sample(cfg.minibatch, rng)
    loss, grads = loss_and_grads(net, x, y)
    adam_step(net, grads)
    return loss


def record_and_maybe_train(net: Mlp, buffer: ReplayBuffer, t_hat: int,
                           transition, cfg: TrainConfig,
                           rng: np.random.Generator) -> float | None:
    """Store one transition; train only on episodes divisible by the interval."""
    buffer.push(*transition)
    if t_hat % cfg.train_interval == 0:
        return train_step(net, buffer, cfg, rng)
    return None


def mape(estimates, targets) -> float:
    """Mean absolute percent error |target - estimate| / |target|.

    Complex inputs are compared through magnitudes of the difference and the
    target. Zero-magnitude targets are excluded with a warning.
    """
    est = np.asarray(estimates)
    tgt = np.asarray(targets)
    if est.shape != tgt.shape or est.size == 0:
        raise ValueError("estimates and targets must be equal-length, nonempty")
    mag = np.abs(tgt)
    mask = mag > 0
    excluded = int(np.sum(~mask))
    if excluded == est.size:
        raise ValueError("all targets have zero magnitude")
    if excluded:
        warnings.warn(f"mape: excluded {excluded} zero-magnitude targets")
    return float(np.mean(np.abs(tgt[mask] - est[mask]) / mag[mask]))


class EstimatorBank:
    """The 2K per-antenna networks with their buffers and error windows."""

    def __init__(self, n_antennas: int, region_km: float, cfg: TrainConfig,
                 nets: dict | None = None):
        self.n_antennas = n_antennas
        self.region_km = region_km
        self.cfg = cfg
        input_dim = 6 + n_antennas
        self.nets = nets or {}
        self.buffers = {}
        self.errors = {}
        for direction in (BTU, UTB):
            for k in range(1, n_antennas + 1):
                self.buffers[direction, k] = ReplayBuffer(cfg.capacity, input_dim)
                self.errors[direction, k] = deque(maxlen=cfg.mape_window)

    @classmethod
    def create(cls, n_antennas: int, region_km: float, cfg: TrainConfig,
               rng: np.random.Generator) -> "EstimatorBank":
        input_dim = 6 + n_antennas
        layers = (input_dim, *cfg.hidden, 2)
        nets = {}
        for direction in (BTU, UTB):
            for k in range(1, n_antennas + 1):
                nets[direction, k] = Mlp.create(
                    layers, rng, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                    eps_adam=cfg.eps_adam)
        return cls(n_antennas, region_km, cfg, nets=nets)

    def estimate(self, x_v: Position, x_b: Position):
        """Estimated complex coefficients (theta_ul, theta_dl), each (K,)."""
        out = {}
        for direction in (BTU, UTB):
            vals = np.zeros(self.n_antennas, dtype=complex)
            for k in range(1, self.n_antennas + 1):
                s = build_input(direction, x_v, x_b, k, self.n_antennas,
                                self.region_km)
                re, im = forward(self.nets[direction, k], s)
                vals[k - 1] = (re + 1j * im) * self.cfg.target_scale
            out[direction] = vals
        return out[BTU], out[UTB]

    def record_episode(self, t_hat: int, x_v: Position, x_b: Position,
                       theta_ul: np.ndarray, theta_dl: np.ndarray,
                       rng: np.random.Generator) -> None:
        """One training episode for every network: store the transition and,
        on training episodes, take one Adam step while logging the minibatch
        MAPE (pre-update estimates against the sampled targets)."""
        targets = {BTU: theta_ul, UTB: theta_dl}
        scale = self.cfg.target_scale
        for direction in (BTU, UTB):
            for k in range(1, self.n_antennas + 1):
                s = build_input(direction, x_v, x_b, k, self.n_antennas,
                                self.region_km)
                net = self.nets[direction, k]
                buffer = self.buffers[direction, k]
                tgt = targets[direction][k - 1] / scale
                buffer.push(s, np.array([tgt.real, tgt.imag]))
                if t_hat % self.cfg.train_interval or len(buffer) < self.cfg.minibatch:
                    continue
                xb, yb = buffer.sample(self.cfg.minibatch, rng)
                est = forward_batch(net, xb)
                self.errors[direction, k].append(
                    mape(est[:, 0] + 1j * est[:, 1], yb[:, 0] + 1j * yb[:, 1]))
                loss, grads = loss_and_grads(net, xb, yb)
                adam_step(net, grads)

    def windowed_mape(self):
        """Windowed mean relative error per network: (ul (K,), dl (K,))."""
        ul = np.array([np.mean(self.errors[BTU, k]) if self.errors[BTU, k]
                       else np.nan for k in range(1, self.n_antennas + 1)])
        dl = np.array([np.mean(self.errors[UTB, k]) if self.errors[UTB, k]
                       else np.nan for k in range(1, self.n_antennas + 1)])
        return ul, dl

    def save(self, path) -> None:
        """Checkpoint every network (row-major weights plus Adam state)."""
        nets = []
        for (direction, k), net in sorted(self.nets.items()):
            nets.append({
                "direction": direction,
                "k": k,
                "layers": list(net.layers),
                "weights": [w.tolist() for w in net.weights],
                "biases": [b.tolist() for b in net.biases],
                "adam": {
                    "step": net.step,
                    "lr": net.lr,
                    "beta1": net.beta1,
                    "beta2": net.beta2,
                    "eps": net.eps_adam,
                    "m_w": [m.tolist() for m in net.m_w],
                    "v_w": [v.tolist() for v in net.v_w],
                    "m_b": [m.tolist() for m in net.m_b],
                    "v_b": [v.tolist() for v in net.v_b],
                },
            })
        doc = {
            "n_antennas": self.n_antennas,
            "region_km": self.region_km,
            "networks": nets,
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(doc, f)

    @classmethod
    def load(cls, path, cfg: TrainConfig) -> "EstimatorBank":
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
        bank = cls(int(doc["n_antennas"]), float(doc["region_km"]), cfg)
        for rec in doc["networks"]:
            adam = rec["adam"]
            net = Mlp(
                layers=tuple(rec["layers"]),
                weights=[np.array(w) for w in rec["weights"]],
                biases=[np.array(b) for b in rec["biases"]],
                m_w=[np.array(m) for m in adam["m_w"]],
                v_w=[np.array(v) for v in adam["v_w"]],
                m_b=[np.array(m) for m in adam["m_b"]],
                v_b=[np.array(v) for v in adam["v_b"]],
                step=int(adam["step"]),
                lr=float(adam["lr"]),
                beta1=float(adam["beta1"]),
                beta2=float(adam["beta2"]),
                eps_adam=float(adam["eps"]),
            )
            bank.nets[rec["direction"], int(rec["k"])] = net
        return bank
