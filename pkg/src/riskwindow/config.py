"""Run configuration: flat ``key = value`` files with ``@include`` and typed defaults."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .learners.spaces import SPACES


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _names(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.split(",") if x.strip())


@dataclass(frozen=True)
class Key:
    default: Any
    parse: Callable[[str], Any]
    check: Callable[[Any], bool] | None = None
    doc: str = ""


def _prob(v):
    return 0.0 <= v <= 1.0


def _pos(v):
    return v > 0


KEYS: dict[str, Key] = {
    "seed": Key(0, int, lambda v: v >= 0, "master seed"),
    "indicator": Key("unified", str, lambda v: v in ("harsh", "headway", "unified"), "harsh | headway | unified"),
    "output_dir": Key("riskwindow-out", str, None, "output root (RISKWINDOW_OUTPUT overrides)"),
    "data.input": Key("", str, None, "telemetry CSV; empty means the synthetic set in the output root"),
    "data.schema": Key("", str, None, "optional column-mapping file for data.input"),
    # synthetic telemetry
    "synth.n_drivers": Key(12, int, _pos),
    "synth.trips_per_driver": Key(3, int, _pos),
    "synth.trip_length_s": Key(600, int, _pos),
    "synth.p_calm_to_aggressive": Key(0.01, float, _prob),
    "synth.p_aggressive_to_calm": Key(0.04, float, _prob),
    "synth.start_state": Key("stationary", str, lambda v: v in ("stationary", "calm", "aggressive")),
    "synth.driver_heterogeneity": Key(0.5, float, lambda v: v >= 0),
    # windows
    "window.omega": Key(5, int, _pos, "observation window length (steps)"),
    "window.delta": Key(1, int, _pos, "stride (steps)"),
    "window.horizon": Key(2, int, _pos, "prediction window length (steps)"),
    # thresholds
    "threshold.tau_init": Key(0.5, float, _prob),
    "threshold.tau_min": Key(0.05, float, _prob),
    "threshold.tau_max": Key(0.95, float, _prob),
    "threshold.alpha_sens": Key(1.0, float, lambda v: v >= 0),
    "threshold.gamma_pred": Key(0.5, float, lambda v: v >= 0),
    "threshold.kappa_regret": Key(0.05, float, lambda v: v >= 0),
    "threshold.xi_regret": Key(0.02, float, lambda v: v >= 0),
    "threshold.regret_window": Key(10, int, _pos),
    "threshold.delta_b": Key(0.05, float, lambda v: 0 < v < 1),
    "threshold.bernstein_c": Key(1.0, float, _pos),
    "threshold.personalised": Key(True, _bool, None, "anchor a per-driver tau_e in `label`"),
    # headway score
    "headway.alpha": Key((0.2, 0.5, 1.0), _floats, lambda v: len(v) == 3 and all(a >= 0 for a in v)),
    "headway.p_low": Key(10.0, float, lambda v: 0 <= v <= 100),
    "headway.p_high": Key(90.0, float, lambda v: 0 <= v <= 100),
    "headway.sigma_quantile": Key(0.85, float, _prob),
    # split and resampling
    "split.train_frac": Key(0.70, float, _pos),
    "split.val_frac": Key(0.15, float, _pos),
    "split.test_frac": Key(0.15, float, _pos),
    "smote.enabled": Key(True, _bool),
    "smote.k": Key(5, int, _pos),
    # feature selection
    "selection.enabled": Key(True, _bool),
    "selection.min_importance": Key(0.001, float, lambda v: v >= 0),
    "selection.tau_delta": Key(0.01, float, lambda v: v >= 0),
    "selection.wasserstein_delta": Key(0.05, float, lambda v: v >= 0),
    "selection.rows": Key(10_000, int, _pos, "windows subsampled for feature scoring"),
    "selection.permutations": Key(8, int, _pos),
    "selection.background": Key(32, int, _pos),
    "selection.explain": Key(64, int, _pos),
    # optimisation
    "optimizer.models": Key(("rf", "gbt", "nn"), _names, lambda v: bool(v) and set(v) <= set(SPACES)),
    "optimizer.budget": Key(25, int, _pos, "trials per model"),
    "optimizer.inner_steps": Key(10, int, _pos),
    "optimizer.rv_tol": Key(1e-3, float, lambda v: v >= 0),
    "optimizer.n_startup": Key(10, int, lambda v: v >= 0),
    "optimizer.prune": Key(True, _bool),
    "optimizer.warmup_trials": Key(5, int, lambda v: v >= 0),
    "optimizer.reselect": Key(True, _bool, None, "redo feature selection on tau / drift triggers"),
    # ensemble
    "ensemble.grid_min": Key(0.05, float, _prob),
    "ensemble.grid_max": Key(0.95, float, _prob),
    "ensemble.grid_step": Key(0.01, float, _pos),
}

# search-space narrowing: space.<kind>.<param> = lo:hi  or  a|b|c
SPACE_PREFIX = "space."


def _space_key(key: str) -> tuple[str, str] | None:
    if not key.startswith(SPACE_PREFIX):
        return None
    parts = key.split(".")
    if len(parts) != 3 or parts[1] not in SPACES:
        return None
    try:
        SPACES[parts[1]].dim(parts[2])
    except KeyError:
        return None
    return parts[1], parts[2]


def _parse_space_value(kind: str, name: str, text: str):
    d = SPACES[kind].dim(name)
    if d.kind == "cat":
        out = []
        for tok in text.split("|"):
            tok = tok.strip()
            out.append(None if tok == "None" else tok)
        return out
    lo, hi = text.split(":")
    cast = int if d.kind == "int" else float
    return [cast(lo), cast(hi)]


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def _fmt_space(v: list) -> str:
    if len(v) == 2 and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        return f"{v[0]}:{v[1]}"
    return "|".join("None" if x is None else str(x) for x in v)


class RunConfig:
    def __init__(self, values: dict[str, Any] | None = None, spaces: dict[str, dict[str, list]] | None = None):
        self.values = {k: spec.default for k, spec in KEYS.items()}
        self.values.update(values or {})
        self.spaces = {k: dict(v) for k, v in (spaces or {}).items()}
        self.validate()

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    # ------------------------------------------------------------------ parsing

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        values: dict[str, Any] = {}
        spaces: dict[str, dict[str, list]] = {}
        cls._read(Path(path), values, spaces, set())
        return cls(values, spaces)

    @classmethod
    def from_text(cls, text: str, base: Path | None = None) -> "RunConfig":
        values: dict[str, Any] = {}
        spaces: dict[str, dict[str, list]] = {}
        cls._parse(text, base or Path.cwd(), "<text>", values, spaces, set())
        return cls(values, spaces)

    @classmethod
    def _read(cls, path: Path, values, spaces, seen: set) -> None:
        path = path.resolve()
        if path in seen:
            raise ConfigError(f"include cycle at {path}")
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        cls._parse(path.read_text(encoding="utf-8"), path.parent, str(path), values, spaces, seen | {path})

    @classmethod
    def _parse(cls, text: str, base: Path, origin: str, values, spaces, seen: set) -> None:
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("@include"):
                target = line[len("@include"):].strip()
                cls._read(base / target, values, spaces, seen)
                continue
            if "=" not in line:
                raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            sk = _space_key(key)
            if sk is not None:
                try:
                    spaces.setdefault(sk[0], {})[sk[1]] = _parse_space_value(sk[0], sk[1], val)
                except ValueError as exc:
                    raise ConfigError(f"{origin}:{lineno}: bad value for {key}: {exc}") from None
                continue
            if key not in KEYS:
                raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
            try:
                values[key] = KEYS[key].parse(val)
            except ValueError as exc:
                raise ConfigError(f"{origin}:{lineno}: bad value for {key}: {exc}") from None

    def with_overrides(self, pairs: list[str]) -> "RunConfig":
        """Apply ``key=value`` overrides (CLI ``--set``)."""
        text = "\n".join(pairs)
        other = RunConfig.from_text("\n".join([self.dump(), text]))
        return other

    # ------------------------------------------------------------------ validation

    def validate(self) -> None:
        unknown = set(self.values) - set(KEYS)
        if unknown:
            raise ConfigError(f"unknown key(s): {', '.join(sorted(unknown))}")
        for k, spec in KEYS.items():
            if spec.check is not None and not spec.check(self.values[k]):
                raise ConfigError(f"{k}={_fmt(self.values[k])} is out of range" + (f" ({spec.doc})" if spec.doc else ""))
        fr = [self.values[f"split.{p}_frac"] for p in ("train", "val", "test")]
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(
                f"split.train_frac={fr[0]}, split.val_frac={fr[1]}, split.test_frac={fr[2]} must sum to 1 (sum={sum(fr):g})"
            )
        if self.values["threshold.tau_min"] > self.values["threshold.tau_max"]:
            raise ConfigError("threshold.tau_min must not exceed threshold.tau_max")
        if not self.values["threshold.tau_min"] <= self.values["threshold.tau_init"] <= self.values["threshold.tau_max"]:
            raise ConfigError("threshold.tau_init must lie in [threshold.tau_min, threshold.tau_max]")
        if self.values["headway.p_low"] >= self.values["headway.p_high"]:
            raise ConfigError("headway.p_low must be below headway.p_high")
        if self.values["ensemble.grid_min"] > self.values["ensemble.grid_max"]:
            raise ConfigError("ensemble.grid_min must not exceed ensemble.grid_max")
        for kind, dims in self.spaces.items():
            try:
                SPACES[kind].narrowed(dims)
            except ValueError as exc:
                raise ConfigError(f"space.{kind}: {exc}") from None

    # ------------------------------------------------------------------ output

    def dump(self, include_docs: bool = False) -> str:
        lines = []
        for k in KEYS:
            line = f"{k} = {_fmt(self.values[k])}"
            if include_docs and KEYS[k].doc:
                line += f"  # {KEYS[k].doc}"
            lines.append(line)
        for kind in sorted(self.spaces):
            for name in sorted(self.spaces[kind]):
                lines.append(f"space.{kind}.{name} = {_fmt_space(self.spaces[kind][name])}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        # the output root does not change any result
        body = "\n".join(l for l in self.dump().splitlines() if not l.startswith("output_dir ="))
        return hashlib.sha256(body.encode()).hexdigest()[:12]

    def space(self, kind: str):
        return SPACES[kind].narrowed(self.spaces.get(kind, {}))

    def grid(self) -> list[float]:
        lo, hi, st = self["ensemble.grid_min"], self["ensemble.grid_max"], self["ensemble.grid_step"]
        n = int(round((hi - lo) / st))
        return [round(lo + i * st, 10) for i in range(n + 1) if lo + i * st <= hi + 1e-9]
