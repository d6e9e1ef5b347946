"""Data preparation: driver-grouped splits, imputation, SMOTE, Shapley-based feature
selection and drift checks that decide when selection must be redone."""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .telemetry import _natural_key
from .windowing import CATEGORICAL_FEATURES, WindowTable

logger = logging.getLogger(__name__)

PARTITIONS = ("train", "val", "test")


class SplitError(ValueError):
    pass


# --------------------------------------------------------------------------- splitting


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.70
    val_frac: float = 0.15
    test_frac: float = 0.15
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_frac, self.val_frac, self.test_frac)
        if any(f <= 0 for f in fr):
            raise ValueError(f"split fractions must be positive, got {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fr)}")

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.train_frac, self.val_frac, self.test_frac)


def assign_drivers(counts: dict[str, int], spec: SplitSpec) -> dict[str, str]:
    """Map each driver to a partition, greedily filling the largest remaining deficit.

    Drivers are placed largest first; equal volumes are ordered by a seeded shuffle so
    the result depends on the driver set and the seed, never on row order.
    """
    if len(counts) < 3:
        raise SplitError(f"need at least 3 drivers for a grouped split, got {len(counts)}")
    names = sorted(counts, key=lambda d: _natural_key((str(d),)))
    rank = {d: i for i, d in enumerate(np.random.default_rng(spec.seed).permutation(len(names)))}
    order = sorted(names, key=lambda d: (-counts[d], rank[names.index(d)]))
    total = float(sum(counts.values()))
    target = [f * total for f in spec.fractions]
    got = [0.0, 0.0, 0.0]
    members: list[list[str]] = [[], [], []]
    for d in order:
        deficits = [target[i] - got[i] for i in range(3)]
        i = int(np.argmax(deficits))
        members[i].append(d)
        got[i] += counts[d]
    # every partition needs someone; take the smallest driver of the most crowded one
    for i in range(3):
        if not members[i]:
            donor = max(range(3), key=lambda j: len(members[j]))
            d = min(members[donor], key=lambda x: (counts[x], rank[names.index(x)]))
            members[donor].remove(d)
            members[i].append(d)
    return {d: PARTITIONS[i] for i in range(3) for d in members[i]}


def _sorted_index(table: WindowTable, idx: np.ndarray) -> np.ndarray:
    keys = [(_natural_key((str(table.driver[i]), str(table.trip[i]))), int(table.t[i])) for i in idx]
    return idx[np.array(sorted(range(len(idx)), key=keys.__getitem__), dtype=np.int64)] if len(idx) else idx


def split_indices(table: WindowTable, spec: SplitSpec) -> dict[str, np.ndarray]:
    """Row indices per partition, each sorted by (driver, trip, t)."""
    drivers, counts = np.unique(table.driver.astype(str), return_counts=True)
    assign = assign_drivers(dict(zip(drivers.tolist(), counts.tolist())), spec)
    part = np.array([assign[str(d)] for d in table.driver], dtype=object)
    return {p: _sorted_index(table, np.flatnonzero(part == p)) for p in PARTITIONS}


def group_split(table: WindowTable, spec: SplitSpec) -> tuple[WindowTable, WindowTable, WindowTable]:
    idx = split_indices(table, spec)
    return tuple(table.take(idx[p]) for p in PARTITIONS)  # type: ignore[return-value]


# --------------------------------------------------------------------------- imputation


@dataclass
class Imputer:
    """Per-column medians learned on training rows; NaN cells are replaced by them."""

    fill: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Imputer":
        X = np.asarray(X, dtype=float)
        fill = np.zeros(X.shape[1])
        for j in range(X.shape[1]):
            col = X[:, j][np.isfinite(X[:, j])]
            fill[j] = float(np.median(col)) if len(col) else 0.0
        return cls(fill)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.array(X, dtype=float, copy=True)
        bad = ~np.isfinite(X)
        X[bad] = np.broadcast_to(self.fill, X.shape)[bad]
        return X


# --------------------------------------------------------------------------- SMOTE


def smote(
    X_min: np.ndarray,
    k_neighbors: int,
    n_synthetic: int,
    seed: int = 0,
    categorical: Sequence[int] = (),
    lam: float | None = None,
) -> np.ndarray:
    """Synthetic minority rows interpolated towards one of the k nearest minority
    neighbours. Distances use standardised numeric columns; categorical columns are
    copied from the base row. ``lam`` fixes the interpolation factor (tests)."""
    X_min = np.asarray(X_min, dtype=float)
    n, F = X_min.shape
    rng = np.random.default_rng(seed)
    if n_synthetic <= 0:
        return np.zeros((0, F))
    if n == 0:
        raise ValueError("no minority rows to oversample")
    base = rng.integers(0, n, n_synthetic)
    if n <= k_neighbors:
        logger.warning("SMOTE: %d minority rows <= k=%d, duplicating rows instead", n, k_neighbors)
        return X_min[base].copy()
    cat = np.zeros(F, dtype=bool)
    cat[list(categorical)] = True
    num = ~cat
    Z = X_min[:, num]
    sd = Z.std(axis=0)
    Z = (Z - Z.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    if Z.shape[1] == 0:
        Z = np.zeros((n, 1))
    _, nbr = cKDTree(Z).query(Z, k=k_neighbors + 1)
    nbr = np.atleast_2d(nbr)
    # drop the row itself (duplicates may push it out of column 0)
    own = nbr == np.arange(n)[:, None]
    first_own = np.where(own.any(axis=1), own.argmax(axis=1), k_neighbors)
    keep = np.ones_like(nbr, dtype=bool)
    keep[np.arange(n), first_own] = False
    nbr = nbr[keep].reshape(n, k_neighbors)
    pick = nbr[base, rng.integers(0, k_neighbors, n_synthetic)]
    lams = np.full(n_synthetic, float(lam)) if lam is not None else rng.random(n_synthetic)
    x = X_min[base]
    out = x + lams[:, None] * (X_min[pick] - x)
    out[:, cat] = x[:, cat]
    return out


def oversample(
    X: np.ndarray, y: np.ndarray, k_neighbors: int = 5, seed: int = 0, categorical: Sequence[int] = ()
) -> tuple[np.ndarray, np.ndarray]:
    """Append SMOTE rows of the minority class until both classes are equally common."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0 or n_pos == n_neg:
        return X, y
    minority = n_pos < n_neg
    need = abs(n_neg - n_pos)
    syn = smote(X[y == minority], k_neighbors, need, seed, categorical)
    return np.vstack([X, syn]), np.concatenate([y, np.full(len(syn), minority)])


# --------------------------------------------------------------------------- Shapley values


@dataclass
class ShapleyResult:
    scores: np.ndarray  # mean |phi| per feature
    phi: np.ndarray  # (n_explain, F) attributions
    se: np.ndarray  # Monte Carlo standard errors of phi
    base_value: float  # mean prediction over the background


def shapley_values(
    predict: Callable[[np.ndarray], np.ndarray],
    background: np.ndarray,
    explain: np.ndarray,
    n_permutations: int,
    seed: int = 0,
) -> ShapleyResult:
    """Permutation-sampling Shapley estimate. The value of a coalition S at row x is the
    mean prediction over background rows with the S columns overwritten by x, so each
    permutation's attributions sum exactly to f-hat(x) minus the background mean."""
    if n_permutations < 1:
        raise ValueError("n_permutations must be >= 1")
    bg = np.asarray(background, dtype=float)
    ex = np.asarray(explain, dtype=float)
    if len(bg) == 0 or len(ex) == 0:
        raise ValueError("background and explain samples must be non-empty")
    n_ex, F = ex.shape
    n_bg = len(bg)
    rng = np.random.default_rng(seed)
    draws = np.zeros((n_permutations, n_ex, F))
    base = float(np.mean(predict(bg)))
    rows = np.arange(n_ex)
    for m in range(n_permutations):
        perm = np.argsort(rng.random((n_ex, F)), axis=1)
        rank = np.empty_like(perm)
        rank[rows[:, None], perm] = np.arange(F)
        # step s holds the first s features of each row's permutation
        mask = rank[None, :, :] < np.arange(F + 1)[:, None, None]
        Z = np.where(mask[:, :, None, :], ex[None, :, None, :], bg[None, None, :, :])
        v = predict(Z.reshape(-1, F)).reshape(F + 1, n_ex, n_bg).mean(axis=2)
        inc = np.diff(v, axis=0)  # (F, n_ex): gain of adding the s-th feature
        draws[m, rows[:, None], perm] = inc.T
    phi = draws.mean(axis=0)
    se = draws.std(axis=0, ddof=1) / math.sqrt(n_permutations) if n_permutations > 1 else np.full_like(phi, np.inf)
    return ShapleyResult(np.abs(phi).mean(axis=0), phi, se, base)


def exact_shapley(predict: Callable[[np.ndarray], np.ndarray], background: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Shapley values of one row by enumerating every coalition (small F only)."""
    bg = np.asarray(background, dtype=float)
    x = np.asarray(x, dtype=float)
    F = len(x)
    if F > 12:
        raise ValueError("exact enumeration is limited to 12 features")
    value = {}
    for r in range(F + 1):
        for S in itertools.combinations(range(F), r):
            Z = bg.copy()
            Z[:, list(S)] = x[list(S)]
            value[frozenset(S)] = float(np.mean(predict(Z)))
    phi = np.zeros(F)
    for i in range(F):
        others = [j for j in range(F) if j != i]
        for r in range(F):
            w = math.factorial(r) * math.factorial(F - r - 1) / math.factorial(F)
            for S in itertools.combinations(others, r):
                s = frozenset(S)
                phi[i] += w * (value[s | {i}] - value[s])
    return phi


def shapley_importance(model, background, explain, n_permutations: int, seed: int = 0) -> ShapleyResult:
    return shapley_values(model.predict_proba, background, explain, n_permutations, seed)


# --------------------------------------------------------------------------- drift


def wasserstein_1d(a, b) -> float:
    """W1 between two empirical distributions via their quantile functions."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if len(a) == 0 or len(b) == 0:
        raise ValueError("samples must be non-empty")
    if len(a) == len(b):
        return float(np.mean(np.abs(a - b)))
    # piecewise-constant quantile functions change only at k/n_a and k/n_b
    u = np.union1d(np.arange(1, len(a) + 1) / len(a), np.arange(1, len(b) + 1) / len(b))
    u = u[u <= 1.0]
    lo = np.concatenate([[0.0], u[:-1]])
    mid = (lo + u) / 2
    qa = a[np.minimum((mid * len(a)).astype(int), len(a) - 1)]
    qb = b[np.minimum((mid * len(b)).astype(int), len(b) - 1)]
    return float(np.sum((u - lo) * np.abs(qa - qb)))


# --------------------------------------------------------------------------- feature selection


@dataclass
class FeatureSelectionState:
    candidates: tuple[str, ...]
    categorical: frozenset[str] = CATEGORICAL_FEATURES
    min_importance: float = 0.001
    tau_delta: float = 0.01
    wasserstein_delta: float = 0.05
    selected: tuple[str, ...] = ()
    scores: dict[str, float] = field(default_factory=dict)
    last_tau: float | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    snapshot: np.ndarray | None = None  # standardised training sample, numeric columns
    step: int = 0
    report: list[tuple] = field(default_factory=list)

    @property
    def numeric(self) -> list[int]:
        return [i for i, n in enumerate(self.candidates) if n not in self.categorical]

    def selected_index(self) -> list[int]:
        return [self.candidates.index(n) for n in self.selected]


def _standardise(state: FeatureSelectionState, X: np.ndarray) -> np.ndarray:
    return (X[:, state.numeric] - state.mean) / state.std


def select_features(
    state: FeatureSelectionState,
    model,
    X: np.ndarray,
    tau: float | None = None,
    *,
    background_size: int = 32,
    explain_size: int = 64,
    n_permutations: int = 8,
    seed: int = 0,
    reason: str = "initial",
) -> FeatureSelectionState:
    """Score every candidate with Shapley values of ``model`` on rows of ``X`` and keep
    the ones whose normalised score exceeds ``min_importance``."""
    X = np.asarray(X, dtype=float)
    if X.shape[1] != len(state.candidates):
        raise ValueError(f"X has {X.shape[1]} columns for {len(state.candidates)} candidates")
    rng = np.random.default_rng(seed)
    bg = X[rng.choice(len(X), min(background_size, len(X)), replace=False)]
    ex = X[rng.choice(len(X), min(explain_size, len(X)), replace=False)]
    res = shapley_importance(model, bg, ex, n_permutations, seed)
    total = float(res.scores.sum())
    norm = res.scores / total if total > 0 else np.zeros_like(res.scores)
    keep = [n for n, s in zip(state.candidates, norm) if s > state.min_importance]
    if not keep:
        top = state.candidates[int(np.argmax(res.scores))]
        logger.warning("no feature scored above %g; keeping %s alone", state.min_importance, top)
        keep = [top]
    num = state.numeric
    mean = X[:, num].mean(axis=0)
    sd = X[:, num].std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    step = state.step + 1
    scores = {n: float(s) for n, s in zip(state.candidates, norm)}
    rows = [(n, scores[n], n in keep, reason, step) for n in state.candidates]
    new = replace(
        state,
        selected=tuple(keep),
        scores=scores,
        last_tau=tau,
        mean=mean,
        std=sd,
        step=step,
        report=state.report + rows,
    )
    new.snapshot = _standardise(new, X)
    return new


def reselect_reason(state: FeatureSelectionState, new_tau: float | None, X_new: np.ndarray) -> str | None:
    """Why selection should be redone (``"tau"`` or ``"drift:<feature>"``), else None."""
    if state.snapshot is None:
        return "initial"
    if new_tau is not None and state.last_tau is not None and abs(new_tau - state.last_tau) > state.tau_delta:
        return "tau"
    Z = _standardise(state, np.asarray(X_new, dtype=float))
    for c, j in enumerate(state.numeric):
        if wasserstein_1d(state.snapshot[:, c], Z[:, c]) > state.wasserstein_delta:
            return f"drift:{state.candidates[j]}"
    return None


def should_reselect(state: FeatureSelectionState, new_tau: float | None, X_new: np.ndarray) -> bool:
    return reselect_reason(state, new_tau, X_new) is not None


def write_selection_report(state: FeatureSelectionState, path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["feature", "score", "selected", "trigger_reason", "timestamp"])
        for name, score, sel, reason, step in state.report:
            w.writerow([name, repr(score), int(sel), reason, step])


# --------------------------------------------------------------------------- assembled datasets


@dataclass
class Datasets:
    """Split tables plus the imputer fitted on the training partition."""

    train: WindowTable
    val: WindowTable
    test: WindowTable
    imputer: Imputer
    stages: list[str] = field(default_factory=list)

    @classmethod
    def build(cls, table: WindowTable, spec: SplitSpec) -> "Datasets":
        train, val, test = group_split(table, spec)
        imp = Imputer.fit(train.features)
        return cls(train, val, test, imp, ["split", "impute"])

    def X(self, part: str, columns: Sequence[int] | None = None) -> np.ndarray:
        X = self.imputer.transform(getattr(self, part).features)
        return X if columns is None else X[:, list(columns)]

    def training_arrays(
        self, y_train: np.ndarray, columns: Sequence[int] | None = None, k_neighbors: int = 5, seed: int = 0,
        use_smote: bool = True,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Training features/labels, oversampled; only the training partition is ever touched."""
        X = self.X("train", columns)
        if not use_smote:
            return X, np.asarray(y_train, dtype=bool)
        names = self.train.feature_names
        cols = range(len(names)) if columns is None else columns
        cat = [i for i, c in enumerate(cols) if names[c] in CATEGORICAL_FEATURES]
        self.stages.append("smote:train")
        return oversample(X, y_train, k_neighbors, seed, cat)
