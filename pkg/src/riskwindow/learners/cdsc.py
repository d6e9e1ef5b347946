"""Correlation-dependent stopping: Pearson correlation of recent train/validation errors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def cdsc_correlation(e_tr, e_va) -> float | None:
    """Pearson r of the two error windows; ``None`` when either window is constant."""
    a = np.asarray(e_tr, dtype=float)
    b = np.asarray(e_va, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("error windows must be 1-D, of equal length >= 2")
    # exact check: the centred sum of a constant window need not round to zero
    if np.all(a == a[0]) or np.all(b == b[0]):
        return None
    da = a - a.mean()
    db = b - b.mean()
    sa = np.sqrt(np.sum(da * da))
    sb = np.sqrt(np.sum(db * db))
    return float(np.clip(np.sum(da * db) / (sa * sb), -1.0, 1.0))


@dataclass
class CDSCState:
    kappa_cdsc: int = 5
    r_stop: float = 0.0
    patience_epochs: int = 3
    e_tr: list[float] = field(default_factory=list)
    e_va: list[float] = field(default_factory=list)
    r: float | None = None
    below: int = 0

    def __post_init__(self):
        if self.kappa_cdsc < 1:
            raise ValueError("kappa_cdsc must be >= 1")

    def update(self, train_error: float, val_error: float) -> bool:
        """Record one epoch; True when training should stop."""
        self.e_tr.append(float(train_error))
        self.e_va.append(float(val_error))
        k = self.kappa_cdsc + 1
        if len(self.e_tr) < k:
            return False
        self.r = cdsc_correlation(self.e_tr[-k:], self.e_va[-k:])
        # an undefined correlation does not count as falling below the threshold
        if self.r is not None and self.r < self.r_stop:
            self.below += 1
        else:
            self.below = 0
        return self.below >= self.patience_epochs
