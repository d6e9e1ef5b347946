"""Feed-forward network (dense -> batch norm -> activation -> dropout blocks, sigmoid
output) trained with mini-batches on binary cross-entropy, written against numpy."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .base import Classifier, LearnerError, check_xy
from .cdsc import CDSCState

logger = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
LEAKY_SLOPE = 0.01


@dataclass
class NNConfig:
    units_1: int = 128
    activation_1: str = "relu"
    dropout_1: float = 0.15
    l2_reg_1: float = 1e-3
    num_layers: int = 2
    units_i: int = 64
    activation_i: str = "tanh"
    dropout_i: float = 0.15
    l2_reg_i: float = 0.011
    lr: float = 0.004
    epochs: int = 60
    batch_size: int = 256
    optimizer: str = "Adam"
    loss: str = "binary_crossentropy"
    # stopping / scheduling (not searched)
    kappa_cdsc: int = 5
    r_stop: float = 0.0
    cdsc_patience: int = 3
    lr_plateau: int = 5
    lr_factor: float = 0.5

    def layers(self) -> list[tuple[int, str, float, float]]:
        """(units, activation, dropout, l2) per hidden layer."""
        out = []
        for i in range(self.num_layers):
            if i == 0:
                out.append((self.units_1, self.activation_1, self.dropout_1, self.l2_reg_1))
            else:
                out.append((min(self.units_i, self.units_1), self.activation_i, self.dropout_i, self.l2_reg_i))
        return out


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    if name == "linear":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(float)
    if name == "tanh":
        return 1.0 - a * a
    if name == "leaky_relu":
        return np.where(z > 0, 1.0, LEAKY_SLOPE)
    return np.ones_like(z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _bce_from_logits(z: np.ndarray, y: np.ndarray) -> float:
    # log(1 + exp(z)) - y z, computed stably
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


class _Optimizer:
    def __init__(self, name: str, lr: float):
        if name not in ("Adam", "SGD", "RMSprop"):
            raise ValueError(f"unknown optimizer {name!r}")
        self.name, self.lr, self.t = name, lr, 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for k, g in grads.items():
            if self.name == "SGD":
                params[k] -= self.lr * g
            elif self.name == "RMSprop":
                v = self.v.setdefault(k, np.zeros_like(g))
                v *= 0.9
                v += 0.1 * g * g
                params[k] -= self.lr * g / (np.sqrt(v) + 1e-7)
            else:
                m = self.m.setdefault(k, np.zeros_like(g))
                v = self.v.setdefault(k, np.zeros_like(g))
                m *= 0.9
                m += 0.1 * g
                v *= 0.999
                v += 0.001 * g * g
                mh = m / (1 - 0.9**self.t)
                vh = v / (1 - 0.999**self.t)
                params[k] -= self.lr * mh / (np.sqrt(vh) + 1e-7)


class FeedForwardNetwork(Classifier):
    kind = "nn"

    def __init__(self, cfg: NNConfig | None = None, seed: int = 0):
        super().__init__(seed)
        self.cfg = cfg or NNConfig()
        self.params: dict[str, np.ndarray] = {}
        self.mean = None
        self.scale = None
        self.history: dict[str, list] = {}

    # ------------------------------------------------------------------ parameters

    def init_params(self, n_in: int, rng: np.random.Generator) -> None:
        p = {}
        fan_in = n_in
        for i, (units, act, _, _) in enumerate(self.cfg.layers()):
            gain = 2.0 if act in ("relu", "leaky_relu") else 1.0
            p[f"W{i}"] = rng.normal(0.0, math.sqrt(gain / fan_in), (fan_in, units))
            p[f"g{i}"] = np.ones(units)
            p[f"b{i}"] = np.zeros(units)
            p[f"rm{i}"] = np.zeros(units)
            p[f"rv{i}"] = np.ones(units)
            fan_in = units
        p["Wo"] = rng.normal(0.0, math.sqrt(1.0 / fan_in), (fan_in, 1))
        p["bo"] = np.zeros(1)
        self.params = p

    @staticmethod
    def trainable(name: str) -> bool:
        return not name.startswith(("rm", "rv"))

    # ------------------------------------------------------------------ forward / backward

    def forward(self, Xs: np.ndarray, train: bool, rng: np.random.Generator | None = None, update_stats: bool = False):
        """Logits and a cache for backward. ``train`` uses batch statistics and dropout."""
        p = self.params
        h = Xs
        cache = []
        for i, (_, act, drop, _) in enumerate(self.cfg.layers()):
            z = h @ p[f"W{i}"]
            if train:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                if update_stats:
                    p[f"rm{i}"] = BN_MOMENTUM * p[f"rm{i}"] + (1 - BN_MOMENTUM) * mu
                    p[f"rv{i}"] = BN_MOMENTUM * p[f"rv{i}"] + (1 - BN_MOMENTUM) * var
            else:
                mu, var = p[f"rm{i}"], p[f"rv{i}"]
            inv = 1.0 / np.sqrt(var + BN_EPS)
            zhat = (z - mu) * inv
            u = p[f"g{i}"] * zhat + p[f"b{i}"]
            a = _act(act, u)
            mask = None
            if train and drop > 0 and rng is not None:
                mask = (rng.random(a.shape) >= drop) / (1.0 - drop)
            cache.append((h, zhat, inv, u, a, mask))
            h = a if mask is None else a * mask
        logits = (h @ p["Wo"] + p["bo"])[:, 0]
        return logits, (cache, h)

    def loss_and_grads(self, Xs, y, rng=None, train: bool = True, update_stats: bool = False):
        """Mean BCE plus L2 penalty and gradients of every trainable parameter."""
        p = self.params
        y = np.asarray(y, dtype=float)
        n = len(y)
        logits, (cache, h_last) = self.forward(Xs, train, rng, update_stats)
        loss = _bce_from_logits(logits, y)
        layers = self.cfg.layers()
        for i, (_, _, _, l2) in enumerate(layers):
            loss += l2 * float(np.sum(p[f"W{i}"] ** 2))
        grads = {}
        dlog = (_sigmoid(logits) - y)[:, None] / n
        grads["Wo"] = h_last.T @ dlog
        grads["bo"] = dlog.sum(axis=0)
        dh = dlog @ p["Wo"].T
        for i in range(len(layers) - 1, -1, -1):
            h_in, zhat, inv, u, a_pre, mask = cache[i]
            act, l2 = layers[i][1], layers[i][3]
            if mask is not None:
                dh = dh * mask
            du = dh * _act_grad(act, u, a_pre)
            grads[f"g{i}"] = np.sum(du * zhat, axis=0)
            grads[f"b{i}"] = du.sum(axis=0)
            dzhat = du * p[f"g{i}"]
            if train:
                m = zhat.shape[0]
                dz = inv / m * (m * dzhat - dzhat.sum(axis=0) - zhat * np.sum(dzhat * zhat, axis=0))
            else:
                dz = dzhat * inv
            grads[f"W{i}"] = h_in.T @ dz + 2.0 * l2 * p[f"W{i}"]
            dh = dz @ p[f"W{i}"].T
        return loss, grads

    # ------------------------------------------------------------------ training

    def _standardise(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale

    def fit(self, X, y, X_val=None, y_val=None) -> "FeedForwardNetwork":
        X, y = check_xy(X, y)
        cfg = self.cfg
        rng = np.random.default_rng(self.seed)
        self.mean = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale = np.where(sd > 0, sd, 1.0)
        Xs = self._standardise(X)
        yf = y.astype(float)
        if X_val is None or y_val is None or len(y_val) == 0:
            Xv, yv = Xs, yf
        else:
            Xv = self._standardise(np.asarray(X_val, dtype=float))
            yv = np.asarray(y_val).astype(float)
        self.init_params(X.shape[1], rng)
        opt = _Optimizer(cfg.optimizer, cfg.lr)
        cdsc = CDSCState(kappa_cdsc=cfg.kappa_cdsc, r_stop=cfg.r_stop, patience_epochs=cfg.cdsc_patience)
        best_val, best_params, best_epoch = math.inf, None, -1
        plateau = 0
        hist = {"train_loss": [], "val_loss": [], "lr": [], "cdsc_r": []}
        n = len(y)
        bs = max(1, min(cfg.batch_size, n))
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            tot, cnt = 0.0, 0
            for s in range(0, n, bs):
                idx = order[s : s + bs]
                if len(idx) < 2 and n >= 2:
                    continue
                loss, grads = self.loss_and_grads(Xs[idx], yf[idx], rng, train=True, update_stats=True)
                if not math.isfinite(loss):
                    raise LearnerError(
                        f"non-finite training loss at epoch {epoch}; try a lower learning rate than {opt.lr:g}"
                    )
                opt.step(self.params, grads)
                tot += loss * len(idx)
                cnt += len(idx)
            train_loss = tot / max(cnt, 1)
            val_loss = _bce_from_logits(self.forward(Xv, False)[0], yv)
            if not math.isfinite(val_loss):
                raise LearnerError(f"non-finite validation loss at epoch {epoch}; try a lower learning rate")
            hist["train_loss"].append(train_loss)
            hist["val_loss"].append(val_loss)
            hist["lr"].append(opt.lr)
            if val_loss < best_val - 1e-12:
                best_val, best_epoch = val_loss, epoch
                best_params = {k: v.copy() for k, v in self.params.items()}
                plateau = 0
            else:
                plateau += 1
                if plateau >= cfg.lr_plateau:
                    opt.lr *= cfg.lr_factor
                    plateau = 0
            stop = cdsc.update(train_loss, val_loss)
            hist["cdsc_r"].append(cdsc.r)
            if stop:
                logger.debug("CDSC stop at epoch %d (r=%s)", epoch, cdsc.r)
                break
        if best_params is not None:
            self.params = best_params
        hist["best_epoch"] = best_epoch
        self.history = hist
        return self

    def predict_proba(self, X) -> np.ndarray:
        Xs = self._standardise(np.asarray(X, dtype=float))
        return _sigmoid(self.forward(Xs, False)[0])

    def config_dict(self) -> dict:
        return asdict(self.cfg)

    def params_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "weights": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self.params.items()},
            "history": {k: v for k, v in self.history.items()},
        }

    @classmethod
    def from_dicts(cls, config: dict, params: dict, seed: int) -> "FeedForwardNetwork":
        m = cls(NNConfig(**config), seed)
        m.mean = np.asarray(params["mean"], dtype=float)
        m.scale = np.asarray(params["scale"], dtype=float)
        m.params = {k: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for k, v in params["weights"].items()}
        m.history = dict(params.get("history", {}))
        return m
