"""``riskwindow`` command line: synth, label, split, optimize, train, evaluate, report, run."""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import reports
from .config import ConfigError, RunConfig
from .ensemble import make_member, select_ensemble_threshold, weighted_vote, write_artifact, write_grid_csv
from .labeling import (
    HeadwayScoreParams,
    IndicatorMode,
    fit_headway_params,
    harsh_labels,
    headway_labels,
    headway_scores,
    label_table,
)
from .learners import LearnerError, load_model, save_model
from .metrics import MetricBundle, evaluate
from .optimizer import InnerConfig, OptimizationError, TrialContext, optimize, refresh_selection
from .pipeline import Datasets, FeatureSelectionState, SplitError, SplitSpec, write_selection_report
from .telemetry import (
    SynthConfig,
    TelemetryError,
    generate_synthetic,
    ingest_csv,
    read_ground_truth,
    read_profiles,
    write_csv,
    write_diagnostics,
    write_ground_truth,
    write_profiles,
)
from .threshold import BernsteinParams, ThresholdBank, TrajectoryRow, anchor_threshold, write_trajectory
from .windowing import FEATURE_NAMES, WindowParams, WindowTable, build_table, dump_windows

logger = logging.getLogger("riskwindow")

ENV_OUTPUT = "RISKWINDOW_OUTPUT"
EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
DEFAULT_CONFIG = Path(__file__).parent / "data" / "small.cfg"


class MissingInput(ConfigError):
    pass


# --------------------------------------------------------------------------- context


@dataclass
class Run:
    cfg: RunConfig
    out: Path

    @property
    def tag(self) -> str:
        return f"config_hash={self.cfg.hash()} seed={self.cfg['seed']}"

    @property
    def meta(self) -> dict:
        return {"config_hash": self.cfg.hash(), "seed": self.cfg["seed"]}

    def dir(self, name: str) -> Path:
        d = self.out / name
        d.mkdir(parents=True, exist_ok=True)
        return d

    def need(self, path: Path, stage: str) -> Path:
        if not path.exists():
            raise MissingInput(f"missing {path}; run `riskwindow {stage}` first")
        return path

    # ------------------------------------------------------------------ shared loaders

    def window_params(self) -> WindowParams:
        c = self.cfg
        return WindowParams(c["window.omega"], c["window.delta"], c["window.horizon"])

    def table(self) -> WindowTable:
        c = self.cfg
        if c["data.input"]:
            src = Path(c["data.input"])
            if not src.exists():
                raise MissingInput(f"data.input not found: {src}")
            res = ingest_csv(src, c["data.schema"] or None)
            profiles = truth = None
        else:
            d = self.out / "data"
            res = ingest_csv(self.need(d / "telemetry.csv", "synth"))
            profiles = read_profiles(self.need(d / "profiles.csv", "synth"))
            truth = read_ground_truth(self.need(d / "ground_truth.csv", "synth"))
        if res.diagnostics:
            write_diagnostics(res.diagnostics, self.dir("labels") / "ingest_diagnostics.jsonl")
        if not res.trips:
            raise TelemetryError("no usable trips in the input")
        return build_table(res.trips, self.window_params(), profiles, truth)

    def split_spec(self) -> SplitSpec:
        c = self.cfg
        return SplitSpec(c["split.train_frac"], c["split.val_frac"], c["split.test_frac"], c["seed"])

    def datasets(self, table: WindowTable | None = None) -> Datasets:
        return Datasets.build(self.table() if table is None else table, self.split_spec())

    def headway(self, ds: Datasets) -> HeadwayScoreParams | None:
        c = self.cfg
        if IndicatorMode(c["indicator"]) == IndicatorMode.HARSH:
            return None
        return fit_headway_params(
            ds.train, c["headway.alpha"], c["headway.p_low"], c["headway.p_high"], c["headway.sigma_quantile"]
        )

    def threshold_defaults(self) -> dict:
        c = self.cfg
        return {
            "tau_e": c["threshold.tau_init"],
            "tau_min": c["threshold.tau_min"],
            "tau_max": c["threshold.tau_max"],
            "alpha_sens": c["threshold.alpha_sens"],
            "gamma_pred": c["threshold.gamma_pred"],
            "kappa_regret": c["threshold.kappa_regret"],
            "xi_regret": c["threshold.xi_regret"],
            "regret_window": c["threshold.regret_window"],
        }

    def labels_at(self, table: WindowTable, hp, tau):
        return label_table(table, tau, hp, IndicatorMode(self.cfg["indicator"]))


def _seed_for(seed: int, kind: str) -> int:
    return seed * 7919 + {"rf": 1, "gbt": 2, "nn": 3}[kind]


# --------------------------------------------------------------------------- commands


def cmd_synth(run: Run) -> None:
    c = run.cfg
    a2c = c["synth.p_aggressive_to_calm"]
    c2a = c["synth.p_calm_to_aggressive"]
    sc = SynthConfig(
        n_drivers=c["synth.n_drivers"],
        trips_per_driver=c["synth.trips_per_driver"],
        trip_length_s=c["synth.trip_length_s"],
        transition=((1 - c2a, c2a), (a2c, 1 - a2c)),
        start_state=c["synth.start_state"],
        driver_heterogeneity=c["synth.driver_heterogeneity"],
        seed=c["seed"],
    )
    res = generate_synthetic(sc)
    d = run.dir("data")
    write_csv([r for t in res.trips for r in t.records()], d / "telemetry.csv")
    write_profiles(res.profiles, d / "profiles.csv")
    write_ground_truth(res.ground_truth, d / "ground_truth.csv")
    logger.info("synth: %d trips for %d drivers", len(res.trips), len(res.profiles))


def cmd_label(run: Run, indicator: str | None = None, dump: bool = False) -> None:
    c = run.cfg
    if indicator:
        run.cfg = c = RunConfig({**c.values, "indicator": indicator}, c.spaces)
    table = run.table()
    ds = run.datasets(table)
    mode = IndicatorMode(c["indicator"])
    # headway bounds and sigma always come from training drivers only
    hp = fit_headway_params(ds.train, c["headway.alpha"], c["headway.p_low"], c["headway.p_high"], c["headway.sigma_quantile"])
    bank = ThresholdBank(run.threshold_defaults())
    bp = BernsteinParams(c["threshold.delta_b"], c["threshold.bernstein_c"])
    anchors = []
    if c["threshold.personalised"]:
        for drv in sorted(set(table.driver.astype(str)), key=lambda d: (len(d), d)):
            st = bank.get(drv)
            sub = table.take(np.flatnonzero(table.driver == drv))
            tau, stats = anchor_threshold(sub, st, bp)
            st.tau_e = tau
            bound = max((s.bound for s in stats), default=float("nan"))
            anchors.append(TrajectoryRow(drv, 0, tau, 0.0, 0.0, 0.0, 0.0, bound))
    tau = bank.per_window(table)
    r_h = harsh_labels(table, tau)
    score = headway_scores(table, hp)
    r_w = headway_labels(table, hp)
    r = r_h if mode == IndicatorMode.HARSH else r_w if mode == IndicatorMode.HEADWAY else (r_h | r_w)
    d = run.dir("labels")
    rows = (
        (str(table.driver[i]), str(table.trip[i]), int(table.t[i]), float(tau[i]), int(r_h[i]), float(score[i]),
         int(r_w[i]), int(r[i]), "" if table.truth is None else int(table.truth[i]))
        for i in range(len(table))
    )
    reports.write_table(
        d / "labels.csv",
        ["driver", "trip", "t", "tau_e", "r_harsh", "hdw_score", "r_hdw", "r", "planted"],
        rows,
        f"{run.tag} indicator={mode.value}",
    )
    (d / "headway_params.json").write_text(json.dumps({**json.loads(hp.to_json()), **run.meta}, sort_keys=True))
    write_trajectory(anchors, d / "driver_thresholds.csv", run.tag)
    if dump:
        dump_windows(table, d / "windows.jsonl")
    logger.info("label: %d windows, %.1f%% risky (%s)", len(table), 100 * r.mean(), mode.value)


def cmd_split(run: Run) -> None:
    ds = run.datasets()
    rows = []
    for part in ("train", "val", "test"):
        tab = getattr(ds, part)
        drivers, counts = np.unique(tab.driver.astype(str), return_counts=True)
        rows += [(str(d), part, int(n)) for d, n in zip(drivers, counts)]
    reports.write_table(run.dir("split") / "manifest.csv", ["driver", "partition", "n_windows"], rows, run.tag)


def _context(run: Run, ds: Datasets, hp) -> TrialContext:
    c = run.cfg
    inner = InnerConfig(
        steps=c["optimizer.inner_steps"],
        rv_tol=c["optimizer.rv_tol"],
        indicator=IndicatorMode(c["indicator"]),
        threshold=run.threshold_defaults(),
        use_smote=c["smote.enabled"],
        smote_k=c["smote.k"],
        reselect=c["optimizer.reselect"] and c["selection.enabled"],
    )
    sel = None
    if c["selection.enabled"]:
        sel = FeatureSelectionState(
            ds.train.feature_names,
            min_importance=c["selection.min_importance"],
            tau_delta=c["selection.tau_delta"],
            wasserstein_delta=c["selection.wasserstein_delta"],
        )
    return TrialContext(ds, hp, inner, sel, None, c["selection.rows"])


def cmd_optimize(run: Run) -> None:
    c = run.cfg
    ds = run.datasets()
    hp = run.headway(ds)
    base = _context(run, ds, hp)
    if base.selection is not None:
        y0 = run.labels_at(ds.train, hp, c["threshold.tau_init"])
        refresh_selection(base, y0, c["threshold.tau_init"], c["seed"], "initial")
    od, md = run.dir("optimize"), run.dir("models")
    for kind in c["optimizer.models"]:
        ctx = copy.copy(base)
        ctx.selection = copy.deepcopy(base.selection)
        ctx.columns = None if base.columns is None else list(base.columns)
        seed = _seed_for(c["seed"], kind)
        study = optimize(
            kind, ctx, c["optimizer.budget"], seed, c.space(kind), c["optimizer.n_startup"], c["optimizer.prune"],
            c["optimizer.warmup_trials"],
        )
        study.write_jsonl(od / f"study_{kind}.jsonl", run.meta)
        if ctx.selection is not None:
            write_selection_report(ctx.selection, od / f"selection_{kind}.csv", run.tag)
        best = study.best
        cols = None if best.columns is None else [ds.train.feature_names.index(n) for n in best.columns]
        probe = ds.X("val", cols)[:16]
        save_model(
            best.model, md / f"{kind}.json", probe,
            {"tau_e": best.tau_e, "hm": best.hm, "trial_id": best.trial_id, "columns": cols, **run.meta},
        )
        logger.info("optimize %s: best trial %d hm=%.4f tau=%.3f", kind, best.trial_id, best.hm, best.tau_e)


def _load_members(run: Run, ds: Datasets):
    members, paths = [], []
    X_val = ds.X("val")
    for kind in run.cfg["optimizer.models"]:
        p = run.need(run.out / "models" / f"{kind}.json", "optimize")
        model = load_model(p)
        extra = json.loads(p.read_text())["extra"]
        members.append(make_member(model, extra["tau_e"], X_val, kind, extra["columns"]))
        paths.append(str(p.relative_to(run.out)))
    return members, paths


def cmd_train(run: Run) -> None:
    ds = run.datasets()
    hp = run.headway(ds)
    members, paths = _load_members(run, ds)
    tau_star, grid = select_ensemble_threshold(
        members, ds.X("val"), lambda t: run.labels_at(ds.val, hp, t), run.cfg.grid()
    )
    d = run.dir("ensemble")
    write_grid_csv(grid, d / "grid.csv", run.tag)
    write_artifact(members, tau_star, grid, d / "ensemble.json", paths, run.meta)
    logger.info("train: ensemble tau*=%.2f", tau_star)


def _metric_row(part: str, target: str, who: str, tau: float, mb: MetricBundle) -> list:
    return [part, target, who, tau] + mb.csv_row()


def cmd_evaluate(run: Run) -> list[list]:
    ds = run.datasets()
    hp = run.headway(ds)
    art = json.loads(run.need(run.out / "ensemble" / "ensemble.json", "train").read_text())
    members, _ = _load_members(run, ds)
    tau = float(art["tau_star"])
    rows = []
    for part in ("val", "test"):
        tab = getattr(ds, part)
        X = ds.X(part)
        probas = np.stack([m.proba(X) for m in members])
        w = np.array([m.weight for m in members])
        score = (w[:, None] * probas).sum(axis=0) / w.sum()
        pred = weighted_vote(probas > tau, w)
        targets = [("labels", run.labels_at(tab, hp, tau))]
        if tab.truth is not None:
            targets.append(("planted", tab.truth))
        for name, y in targets:
            rows.append(_metric_row(part, name, "ensemble", tau, evaluate(y, pred, score)))
            for m, p in zip(members, probas):
                rows.append(_metric_row(part, name, m.name, m.threshold, evaluate(y, p > m.threshold, p)))
    header = ["partition", "target", "model", "tau_e"] + list(MetricBundle.CSV_FIELDS)
    reports.write_table(run.dir("evaluate") / "metrics.csv", header, rows, run.tag)
    return rows


def cmd_report(run: Run) -> None:
    c = run.cfg
    rd = run.dir("reports")
    trials = {}
    for kind in c["optimizer.models"]:
        trials[kind] = reports.read_trials(run.need(run.out / "optimize" / f"study_{kind}.jsonl", "optimize"))
    hm_rows = reports.hm_vs_tau_rows(trials)
    reports.write_table(rd / "hm_vs_tau.csv", ["model", "trial", "status", "tau_e", "hm"], hm_rows, run.tag)
    grid = None
    gpath = run.out / "ensemble" / "grid.csv"
    if gpath.exists():
        _, g = reports.read_table(gpath)
        grid = [(float(a), float(b)) for a, b in g]
        reports.write_table(rd / "ensemble_hm_vs_tau.csv", ["tau_e", "hm"], grid, run.tag)
    reports.plot_hm_vs_tau(hm_rows, grid, rd / "hm_vs_tau.png")
    rg = reports.regret_rows(trials)
    reports.write_table(
        rd / "regret_trace.csv", ["model", "trial", "step", "tau_e", "hm", "r_t", "r_pt", "ror", "rv"], rg, run.tag
    )
    reports.plot_regret(rg, rd / "regret_trace.png")
    imp_rows = []
    for kind in c["optimizer.models"]:
        p = run.out / "models" / f"{kind}.json"
        if p.exists():
            model = load_model(p)
            cols = json.loads(p.read_text())["extra"]["columns"]
            imp = model.importance()
            if imp is not None:
                names = [FEATURE_NAMES[i] for i in cols] if cols else list(FEATURE_NAMES)
                imp_rows += [(kind, n, float(v)) for n, v in zip(names, imp)]
        sp = run.out / "optimize" / f"selection_{kind}.csv"
        if sp.exists():
            _, srows = reports.read_table(sp)
            last = max((int(r[4]) for r in srows), default=0)
            imp_rows += [(f"shapley:{kind}", r[0], float(r[1])) for r in srows if int(r[4]) == last]
    reports.write_table(rd / "feature_importance.csv", ["model", "feature", "score"], imp_rows, run.tag)
    if imp_rows:
        reports.plot_importance(imp_rows, rd / "feature_importance.png")
    traj = []
    for kind in sorted(trials):
        done = [t for t in trials[kind] if t["status"] == "complete"]
        if not done:
            continue
        best = max(done, key=lambda t: (t["hm"], -t["trial_id"]))
        for s in best["trace"]:
            traj.append(
                (f"{kind}:trial{best['trial_id']}", s["step"], float(s["tau_e"]), float(s["r_t"]), float(s["r_pt"]),
                 float(s["ror"]), float(s["rv"]), None)
            )
    anchors = run.out / "labels" / "driver_thresholds.csv"
    if anchors.exists():
        _, arows = reports.read_table(anchors)
        traj += [(r[0], int(r[1]), *(float(x) for x in r[2:])) for r in arows]
    reports.write_table(
        rd / "threshold_trajectory.csv", ["driver", "step", "tau_e", "r_t", "r_pt", "ror", "rv", "bound"], traj, run.tag
    )
    reports.plot_trajectory(traj, rd / "threshold_trajectory.png")


def cmd_run(run: Run) -> None:
    if not run.cfg["data.input"]:
        cmd_synth(run)
    cmd_label(run)
    cmd_split(run)
    cmd_optimize(run)
    cmd_train(run)
    cmd_evaluate(run)
    cmd_report(run)


# --------------------------------------------------------------------------- argument parsing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="riskwindow", description="Adaptive-threshold risk labeling and model search.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("-c", "--config", help="config file (default: the bundled small config)")
        p.add_argument("-o", "--out", help=f"output root (overrides ${ENV_OUTPUT} and output_dir)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
        return p

    p = sub.add_parser("config", help="print configuration")
    p.add_argument("--defaults", action="store_true", help="print every key with its default value")
    p.add_argument("-c", "--config", help="config file to resolve and print")
    add("synth", "generate synthetic telemetry with planted aggressive regimes")
    p = add("label", "window the telemetry and write risk labels")
    p.add_argument("--indicator", choices=["harsh", "headway", "unified"], help="override the indicator mode")
    p.add_argument("--dump-windows", action="store_true", help="also write every window as JSON lines")
    add("split", "write the driver-grouped partition manifest")
    add("optimize", "run the bi-level search for every configured model")
    add("train", "build the weighted ensemble from the best models")
    add("evaluate", "score the ensemble and members on validation and test")
    add("report", "write report tables and figures")
    add("run", "all stages in order")
    return ap


def _load_config(args) -> RunConfig:
    path = getattr(args, "config", None)
    cfg = RunConfig.from_file(path) if path else RunConfig.from_file(DEFAULT_CONFIG)
    if getattr(args, "set", None):
        cfg = cfg.with_overrides(args.set)
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "config":
            cfg = RunConfig() if args.defaults else _load_config(args)
            sys.stdout.write(cfg.dump(include_docs=args.defaults))
            return EXIT_OK
        cfg = _load_config(args)
        out = Path(args.out or os.environ.get(ENV_OUTPUT) or cfg["output_dir"])
        run = Run(cfg, out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "label":
            cmd_label(run, args.indicator, args.dump_windows)
        else:
            {
                "synth": cmd_synth,
                "split": cmd_split,
                "optimize": cmd_optimize,
                "train": cmd_train,
                "evaluate": cmd_evaluate,
                "report": cmd_report,
                "run": cmd_run,
            }[args.command](run)
    except (ConfigError, TelemetryError, SplitError) as exc:
        print(f"riskwindow: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OptimizationError, LearnerError, OSError, ValueError, RuntimeError) as exc:
        print(f"riskwindow: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
