"""Hyperparameter search spaces for the three learners.

Each dimension knows how to sample itself from a uniform draw, how to map a value
back onto [0, 1] (for density estimates in the optimiser) and whether a value is
admissible. Narrowed sub-spaces are allowed as long as they stay inside these.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any


@dataclass(frozen=True)
class Dim:
    name: str
    kind: str  # "int" | "float" | "cat"
    low: float = 0.0
    high: float = 0.0
    step: float | None = None
    log: bool = False
    choices: tuple = ()
    # later-layer network dims exist only when num_layers >= 2
    requires_layers: bool = False
    # upper bound taken from another dim's value (units_i <= units_1)
    high_ref: str | None = None

    def grid(self, high: float | None = None) -> list | None:
        """All admissible values for discrete dims, None for continuous ones."""
        if self.kind == "cat":
            return list(self.choices)
        if self.step is None:
            return None
        hi = self.high if high is None else min(self.high, high)
        n = int(math.floor((hi - self.low) / self.step + 1e-9))
        vals = [self.low + i * self.step for i in range(n + 1)]
        if self.kind == "int":
            return [int(round(v)) for v in vals]
        return [round(v, 10) for v in vals]

    def contains(self, v: Any, high: float | None = None) -> bool:
        if self.kind == "cat":
            return v in self.choices
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return False
        hi = self.high if high is None else min(self.high, high)
        g = self.grid(high)
        if g is not None:
            return any(abs(v - x) <= 1e-9 for x in g)
        return self.low - 1e-12 <= v <= hi + 1e-12

    def to_unit(self, v: Any) -> float:
        if self.kind == "cat":
            return (self.choices.index(v) + 0.5) / len(self.choices)
        if self.high == self.low:
            return 0.5
        if self.log:
            return (math.log(v) - math.log(self.low)) / (math.log(self.high) - math.log(self.low))
        return (v - self.low) / (self.high - self.low)

    def from_unit(self, u: float, high: float | None = None) -> Any:
        u = min(max(u, 0.0), 1.0)
        g = self.grid(high)
        if g is not None:
            return g[min(int(u * len(g)), len(g) - 1)]
        hi = self.high if high is None else min(self.high, high)
        if self.log:
            return float(math.exp(math.log(self.low) + u * (math.log(hi) - math.log(self.low))))
        return float(self.low + u * (hi - self.low))

    def narrowed(self, spec: Any) -> "Dim":
        """Sub-space from ``[lo, hi]`` (numeric) or a list of choices (categorical)."""
        if self.kind == "cat":
            ch = tuple(spec)
            bad = [c for c in ch if c not in self.choices]
            if bad or not ch:
                raise ValueError(f"{self.name}: choices {bad or ch!r} outside the search space")
            return replace(self, choices=ch)
        lo, hi = spec
        if not (self.contains(lo) and self.contains(hi)) or lo > hi:
            raise ValueError(f"{self.name}: [{lo}, {hi}] is not inside [{self.low}, {self.high}]")
        return replace(self, low=lo, high=hi)


@dataclass
class Space:
    kind: str
    dims: list[Dim] = field(default_factory=list)

    def dim(self, name: str) -> Dim:
        for d in self.dims:
            if d.name == name:
                return d
        raise KeyError(name)

    def active(self, d: Dim, partial: dict) -> bool:
        return not d.requires_layers or partial.get("num_layers", 1) >= 2

    def high_for(self, d: Dim, partial: dict) -> float | None:
        return partial.get(d.high_ref) if d.high_ref else None

    def narrowed(self, overrides: dict[str, Any]) -> "Space":
        names = {d.name for d in self.dims}
        unknown = set(overrides) - names
        if unknown:
            raise ValueError(f"unknown {self.kind} hyperparameters: {sorted(unknown)}")
        return Space(self.kind, [d.narrowed(overrides[d.name]) if d.name in overrides else d for d in self.dims])


def _i(name, lo, hi, step=1, **kw):
    return Dim(name, "int", lo, hi, step, **kw)


def _f(name, lo, hi, step=None, log=False, **kw):
    return Dim(name, "float", lo, hi, step, log, **kw)


def _c(name, *choices, **kw):
    return Dim(name, "cat", choices=tuple(choices), **kw)


RF_SPACE = Space(
    "rf",
    [
        _i("n_estimators", 100, 1000, 100),
        _i("max_depth", 3, 20),
        _i("min_samples_split", 2, 50),
        _i("min_samples_leaf", 1, 20),
        _c("max_features", None, "sqrt", "log2"),
        _c("criterion", "gini", "entropy", "log_loss"),
        _i("patience", 5, 20),
    ],
)

GBT_SPACE = Space(
    "gbt",
    [
        _i("n_estimators", 100, 2000, 100),
        _f("learning_rate", 0.01, 0.1, log=True),
        _i("max_depth", 3, 20),
        _f("subsample", 0.5, 0.9),
        _f("colsample_bytree", 0.5, 0.9),
        _f("gamma", 0.0, 5.0),
        _f("reg_lambda", 0.1, 10.0),
        _f("reg_alpha", 0.1, 10.0),
    ],
)

NN_SPACE = Space(
    "nn",
    [
        _i("units_1", 64, 512, 64),
        _c("activation_1", "relu", "tanh", "leaky_relu"),
        _f("dropout_1", 0.1, 0.3, 0.05),
        _f("l2_reg_1", 1e-4, 1e-2, log=True),
        _i("num_layers", 1, 5),
        _i("units_i", 32, 512, 32, requires_layers=True, high_ref="units_1"),
        _c("activation_i", "relu", "tanh", "leaky_relu", requires_layers=True),
        _f("dropout_i", 0.1, 0.3, 0.05, requires_layers=True),
        _f("l2_reg_i", 0.001, 0.05, 0.005, requires_layers=True),
        _f("lr", 1e-4, 1e-2, log=True),
        _i("epochs", 50, 150),
        _i("batch_size", 128, 512, 64),
        _c("optimizer", "Adam", "SGD", "RMSprop"),
    ],
)

SPACES = {"rf": RF_SPACE, "gbt": GBT_SPACE, "nn": NN_SPACE}


def space_violations(kind: str, values: dict[str, Any], space: Space | None = None) -> list[str]:
    """Names (with values) of hyperparameters outside the search space."""
    sp = space or SPACES[kind]
    bad = []
    for d in sp.dims:
        if not sp.active(d, values) or d.name not in values:
            continue
        v = values[d.name]
        if not d.contains(v, sp.high_for(d, values)):
            bad.append(f"{d.name}={v!r}")
    return bad


def check_space(kind: str, values: dict[str, Any], space: Space | None = None) -> None:
    bad = space_violations(kind, values, space)
    if bad:
        raise ValueError(f"{kind} hyperparameters outside the search space: {', '.join(bad)}")
