"""``heatcast`` command line: one pipeline stage per invocation.

Every stage reads files, writes its outputs into ``--out-dir`` and leaves a
``<name>.manifest.json`` beside them (the ``--name`` of a design
stage, otherwise the stage name) recording the arguments, the seed, the
tool version and SHA-256 hashes of inputs and outputs.  Exit status is 0 on
success, 1 on a usage error and 2 on a data or validation error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from datetime import date, datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import conformal as cf
from . import design, diagnostics, ga_synth, sampling, synthgen
from .errors import HeatcastError
from .forest import Forest, ForestParams, fit, oob_report
from .grid_data import BBox, DateRange, Panel, load_panel, select_region, write_panel

log = logging.getLogger("heatcast")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump(obj, path: Path) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")
    return path


def _clean(value):
    """JSON-safe copy: non-finite floats become None."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.generic):
        return _clean(value.item())
    return value


class Run:
    """Collects inputs, outputs and results of one stage for its manifest."""

    def __init__(self, name: str, args: argparse.Namespace):
        self.name = name
        self.args = args
        self.out_dir = Path(args.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.inputs: dict[str, str] = {}
        self.outputs: list[Path] = []
        self.results: dict = {}

    def input(self, path) -> Path:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"no such input file: {p}")
        self.inputs[str(p)] = _sha256(p)
        return p

    def output(self, filename: str) -> Path:
        p = self.out_dir / filename
        self.outputs.append(p)
        return p

    def write_manifest(self) -> Path:
        params = {k: v for k, v in vars(self.args).items() if k != "func"}
        manifest = {
            "subcommand": self.name,
            "tool_version": __version__,
            "seed": self.args.seed,
            "parameters": _clean(params),
            "inputs": self.inputs,
            "outputs": {str(p): _sha256(p) for p in self.outputs},
            "results": _clean(self.results),
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        # design stages are named by their dataset so several can share a folder
        stem = getattr(self.args, "name", None) or self.name.replace(" ", "_")
        return _dump(manifest, self.out_dir / f"{stem}.manifest.json")


def _forest_params(args, seed_offset: int = 0) -> ForestParams:
    return ForestParams(n_trees=args.n_trees, mtry=args.mtry, min_node_size=args.min_node_size,
                        seed=args.seed + seed_offset)


def _load_forest(run: Run, path) -> Forest:
    return Forest.from_json(run.input(path).read_text(encoding="utf-8"))


def _load_dataset(run: Run, path):
    return design.read_dataset(run.input(path))


def _predictors(text: str | None):
    if not text:
        return list(design.DEFAULT_PREDICTORS)
    return [t.strip() for t in text.split(",") if t.strip()]


def _window_spec(args) -> design.WindowSpec:
    return design.WindowSpec.for_event(date.fromisoformat(args.post_start), post_days=args.post_days,
                                       pre_days=args.pre_days, lag_days=args.lag_days)


# -- stages -----------------------------------------------------------------

def cmd_synth(args, run: Run):
    if args.config:
        cfg = synthgen.SynthConfig.from_dict(json.loads(run.input(args.config).read_text(encoding="utf-8")))
        cfg.seed = args.seed
    else:
        cfg = synthgen.PRESETS[args.preset](args.seed)
    panel, truth = synthgen.generate(cfg)
    write_panel(panel, run.output("panel.csv"))
    run.output("truth.json").write_text(truth.to_json() + "\n", encoding="utf-8")
    run.results = {"rows": len(panel), "cells": len(panel.cells), "bayes_error": truth.bayes_error(),
                   "bayes_r2": truth.bayes_r2()}


def cmd_ingest(args, run: Run):
    panel = load_panel(run.input(args.panel))
    if args.region:
        panel = select_region(panel, BBox.parse(args.region))
    if args.dates:
        span = DateRange.parse(args.dates)
        frame = panel.frame
        days = frame["date"].dt.date
        keep = (days >= span.start) & (days <= span.end)
        panel = Panel(frame[keep].reset_index(drop=True), date_span=span)
    write_panel(panel, run.output("panel.csv"))
    run.results = {"rows": len(panel), "cells": len(panel.cells), "date_span": str(panel.date_span)}


def cmd_design_gain(args, run: Run):
    panel = load_panel(run.input(args.panel))
    spec = design.shift_spec(_window_spec(args), args.shift)
    ds = design.build_gain_design(panel, spec, _predictors(args.predictors), scenario=args.scenario)
    design.write_dataset(ds, run.output(args.name + ".csv"))
    run.results = {"window_spec": spec.to_dict(), **design.dataset_to_dict(ds)}


def cmd_design_stack(args, run: Run):
    panel = load_panel(run.input(args.panel))
    spec = _window_spec(args)
    scenarios = [design.Scenario("event", panel, spec, 1)]
    for k, offset in enumerate(args.faux_shift, 1):
        scenarios.append(design.Scenario(f"faux{k}", panel, design.shift_spec(spec, offset), 0))
    ds = design.build_crossover_classification(scenarios, _predictors(args.predictors))
    design.write_dataset(ds, run.output(args.name + ".csv"))
    run.results = design.dataset_to_dict(ds)


def cmd_summary(args, run: Run):
    ds = _load_dataset(run, args.dataset)
    if not isinstance(ds, design.GainDataset):
        raise HeatcastError("summary needs a gain design")
    s = design.gain_summary(ds, args.bin_width)
    _dump(s.to_dict(), run.output("summary.json"))
    run.results = {"n": s.n, "mean": s.mean, "n_negative": s.n_negative}


def cmd_fit(args, run: Run):
    ds = _load_dataset(run, args.dataset)
    if args.task != "auto" and args.task != ds.task:
        raise HeatcastError(f"dataset holds a {ds.task} design, not {args.task}")
    weights = None
    if args.weights:
        weights = np.asarray(json.loads(run.input(args.weights).read_text(encoding="utf-8"))["weights"], dtype=float)
    forest = fit(ds, _forest_params(args), weights=weights, threads=args.threads)
    run.output("forest.json").write_text(forest.to_json() + "\n", encoding="utf-8")
    report = oob_report(forest, ds)
    _dump(_clean(report.to_dict()), run.output("oob.json"))
    run.results = {"task": forest.task, "training_fingerprint": forest.training_fingerprint,
                   **report.to_dict()}


def cmd_importance(args, run: Run):
    forest = _load_forest(run, args.forest)
    ds = _load_dataset(run, args.dataset)
    rep = diagnostics.permutation_importance(forest, ds, n_repeats=args.n_repeats, seed=args.seed)
    _dump(_clean(rep.to_dict()), run.output("importance.json"))
    run.results = {"ranking": rep.ranking()}


def cmd_pdp(args, run: Run):
    forest = _load_forest(run, args.forest)
    ds = _load_dataset(run, args.dataset)
    prof = diagnostics.partial_dependence(forest, ds, args.predictor, n_grid=args.n_grid, mode=args.mode)
    prof.write_csv(run.output(f"pdp_{args.predictor}.csv"))
    _dump(prof.to_dict(), run.output(f"pdp_{args.predictor}.json"))
    run.results = {"points": len(prof.grid), "min": min(prof.response), "max": max(prof.response)}


def cmd_ga(args, run: Run):
    forest = _load_forest(run, args.forest)
    params = ga_synth.GaParams(population_size=args.population_size, n_iterations=args.iterations,
                               elitism=args.elitism, crossover_prob=args.crossover_prob,
                               mutation_prob=args.mutation_prob, seed=args.seed)
    pop = ga_synth.evolve(forest, params)
    sol = ga_synth.solution_vector(pop)
    run.output("population.json").write_text(pop.to_json() + "\n", encoding="utf-8")
    pop.write_history(run.output("history.csv"))
    _dump(_clean(sol.to_dict()), run.output("solution.json"))
    corr = pop.correlation_matrix()
    _dump(_clean({"predictors": pop.predictor_names, "correlation": corr.tolist()}),
          run.output("correlation.json"))
    run.results = {"mean_fitness": sol.mean_fitness, "best_fitness": sol.best_fitness}


def cmd_compare(args, run: Run):
    a = ga_synth.SolutionVector.from_dict(json.loads(run.input(args.solution_a).read_text(encoding="utf-8")))
    b = ga_synth.SolutionVector.from_dict(json.loads(run.input(args.solution_b).read_text(encoding="utf-8")))
    rows = ga_synth.compare_solutions(a, b, k=args.k)
    _dump([r.__dict__ for r in rows], run.output("comparison.json"))
    run.results = {"selected": [r.predictor for r in rows if r.selected]}


def cmd_forecast(args, run: Run):
    ds = _load_dataset(run, args.dataset)
    if not isinstance(ds, design.LabeledDataset):
        raise HeatcastError("forecast needs a stacked classification design")
    forest, cp = cf.split_train_calibrate(ds, args.split_fraction, _forest_params(args), args.alpha, seed=args.seed)
    if args.predict:
        target = _load_dataset(run, args.predict)
        rows = np.arange(len(target))
    else:
        target = ds
        rows = np.asarray(cp.calibration_rows)
    sets = cf.predict_sets(cp, forest, target.X[rows])
    tags = [target.scenario] * len(target) if isinstance(target.scenario, str) else list(target.scenario)
    records = [{"cell": str(target.cells[i]), "scenario": str(tags[i]), **s.to_dict()}
               for i, s in zip(rows, sets)]
    run.output("forest.json").write_text(forest.to_json() + "\n", encoding="utf-8")
    _dump(_clean(cp.to_dict()), run.output("conformal.json"))
    _dump(_clean(records), run.output("sets.json"))
    sizes = [len(s) for s in sets]
    run.results = {"threshold": cp.threshold, "n_cal": cp.n_cal, "n_sets": len(sets),
                   "singletons": sizes.count(1), "empty": sizes.count(0), "both": sizes.count(2)}


def cmd_coverage(args, run: Run):
    forest = _load_forest(run, args.forest)
    cp = cf.ConformalPredictor.from_dict(json.loads(run.input(args.conformal).read_text(encoding="utf-8")))
    ds = _load_dataset(run, args.dataset)
    if args.alpha is not None:
        cp = cp.with_alpha(args.alpha)
    rows = np.arange(len(ds))
    if args.exclude_fitted:
        used = set(cp.train_rows) | set(cp.calibration_rows)
        rows = np.array([i for i in rows if i not in used], dtype=np.int64)
        if len(rows) == 0:
            raise HeatcastError("every row was used for training or calibration")
    cov, size = cf.empirical_coverage(cp, forest, ds.X[rows], ds.labels[rows])
    _dump({"alpha": cp.alpha, "coverage": cov, "mean_set_size": size, "n": int(len(rows))},
          run.output("coverage.json"))
    run.results = {"coverage": cov, "mean_set_size": size}


def _prior(args, ds) -> sampling.PriorSpec:
    if args.population_prior is not None:
        return sampling.PriorSpec(args.population_prior, float(np.mean(ds.labels)))
    return sampling.scenario_prior(ds, args.days_in_month, args.event_days)


def cmd_weights(args, run: Run):
    ds = _load_dataset(run, args.dataset)
    prior = _prior(args, ds)
    wv = sampling.manski_lerman_weights(ds.labels, prior)
    _dump({"prior": prior.to_dict(), **wv.to_dict()}, run.output("weights.json"))
    run.results = {"w1": wv.w1, "w0": wv.w0, **prior.to_dict()}


def cmd_reweigh(args, run: Run):
    ds = _load_dataset(run, args.dataset)
    prior = _prior(args, ds)
    rep = sampling.weighted_refit_report(ds, prior, _forest_params(args), threads=args.threads)
    _dump(_clean(rep.to_dict()), run.output("reweigh_report.json"))
    run.results = {"error_rate": [rep.unweighted.error_rate, rep.weighted.error_rate],
                   "cost_ratio_fp_to_fn": list(rep.cost_ratio_shift),
                   "implied_cost_fp_to_fn": list(rep.implied_cost_shift)}


# -- parser -----------------------------------------------------------------

def _add_forest_args(p):
    p.add_argument("--n-trees", type=int, default=500)
    p.add_argument("--mtry", type=int, default=None)
    p.add_argument("--min-node-size", type=int, default=None)


def _add_window_args(p):
    p.add_argument("--post-start", required=True, help="first day of the event post-test window (YYYY-MM-DD)")
    p.add_argument("--post-days", type=int, default=4)
    p.add_argument("--pre-days", type=int, default=4)
    p.add_argument("--lag-days", type=int, default=14)
    p.add_argument("--predictors", default=None, help="comma-separated variables (default: all but surf_air_temp)")


def _add_prior_args(p):
    p.add_argument("--population-prior", type=float, default=None)
    p.add_argument("--days-in-month", type=int, default=30)
    p.add_argument("--event-days", type=int, default=4)


GLOBAL_DEFAULTS = {"seed": 0, "threads": 1, "out_dir": ".", "verbose": False}


def build_parser() -> argparse.ArgumentParser:
    # Global flags are accepted before or after the subcommand.  Their
    # defaults are filled in after parsing so a subparser cannot overwrite a
    # value given at the top level.
    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out-dir")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="heatcast", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"heatcast {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="command")
    sub.required = True

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic panel")
    p.add_argument("--preset", choices=sorted(synthgen.PRESETS), default="default")
    p.add_argument("--config", help="SynthConfig JSON (overrides --preset)")
    p.set_defaults(func=cmd_synth, stage="synth")

    p = sub.add_parser("ingest", parents=[common], help="validate and subset a panel CSV")
    p.add_argument("panel")
    p.add_argument("--region", help="lat_min,lat_max,lon_min,lon_max in degrees")
    p.add_argument("--dates", help="YYYY-MM-DD..YYYY-MM-DD")
    p.set_defaults(func=cmd_ingest, stage="ingest")

    p = sub.add_parser("design", parents=[common], help="build a gain or stacked design")
    dsub = p.add_subparsers(dest="kind", parser_class=_Parser, metavar="kind")
    dsub.required = True
    g = dsub.add_parser("gain", parents=[common], help="gain-score regression design")
    g.add_argument("panel")
    _add_window_args(g)
    g.add_argument("--shift", type=int, default=0, help="translate all windows by this many days")
    g.add_argument("--scenario", default="event")
    g.add_argument("--name", default="gain")
    g.set_defaults(func=cmd_design_gain, stage="design gain")
    s = dsub.add_parser("stack", parents=[common], help="stacked event/faux classification design")
    s.add_argument("panel")
    _add_window_args(s)
    s.add_argument("--faux-shift", type=int, action="append", required=True,
                   help="offset in days of a faux scenario; repeat for several")
    s.add_argument("--name", default="stack")
    s.set_defaults(func=cmd_design_stack, stage="design stack")

    p = sub.add_parser("summary", parents=[common], help="gain-score summary and histogram")
    p.add_argument("dataset")
    p.add_argument("--bin-width", type=float, default=1.0)
    p.set_defaults(func=cmd_summary, stage="summary")

    p = sub.add_parser("fit", parents=[common], help="fit a forest and report OOB error")
    p.add_argument("dataset")
    p.add_argument("--task", choices=["auto", "regression", "classification"], default="auto")
    p.add_argument("--weights", help="weights JSON written by the weights stage")
    _add_forest_args(p)
    p.set_defaults(func=cmd_fit, stage="fit")

    p = sub.add_parser("importance", parents=[common], help="OOB permutation importance")
    p.add_argument("forest")
    p.add_argument("dataset")
    p.add_argument("--n-repeats", type=int, default=1)
    p.set_defaults(func=cmd_importance, stage="importance")

    p = sub.add_parser("pdp", parents=[common], help="partial dependence profile")
    p.add_argument("forest")
    p.add_argument("dataset")
    p.add_argument("--predictor", required=True)
    p.add_argument("--n-grid", type=int, default=20)
    p.add_argument("--mode", choices=[diagnostics.MEAN_FIXED, diagnostics.AVERAGE_OVER_DATA],
                   default=diagnostics.MEAN_FIXED)
    p.set_defaults(func=cmd_pdp, stage="pdp")

    p = sub.add_parser("ga", parents=[common], help="evolve a synthetic ideal-type population")
    p.add_argument("forest")
    p.add_argument("--population-size", type=int, default=100)
    p.add_argument("--iterations", type=int, default=5000)
    p.add_argument("--elitism", type=int, default=5)
    p.add_argument("--crossover-prob", type=float, default=0.8)
    p.add_argument("--mutation-prob", type=float, default=0.1)
    p.set_defaults(func=cmd_ga, stage="ga")

    p = sub.add_parser("compare", parents=[common], help="rank predictors by solution differences")
    p.add_argument("solution_a")
    p.add_argument("solution_b")
    p.add_argument("--k", type=int, default=3)
    p.set_defaults(func=cmd_compare, stage="compare")

    p = sub.add_parser("forecast", parents=[common], help="calibrate conformal sets and predict")
    p.add_argument("dataset")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--split-fraction", type=float, default=0.5)
    p.add_argument("--predict", help="dataset to predict (default: the calibration rows)")
    _add_forest_args(p)
    p.set_defaults(func=cmd_forecast, stage="forecast")

    p = sub.add_parser("coverage", parents=[common], help="empirical coverage of conformal sets")
    p.add_argument("forest")
    p.add_argument("conformal")
    p.add_argument("dataset")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--exclude-fitted", action="store_true",
                   help="skip rows used for training or calibration")
    p.set_defaults(func=cmd_coverage, stage="coverage")

    p = sub.add_parser("weights", parents=[common], help="Manski-Lerman weights")
    p.add_argument("dataset")
    _add_prior_args(p)
    p.set_defaults(func=cmd_weights, stage="weights")

    p = sub.add_parser("reweigh-report", parents=[common], help="unweighted vs weighted refit")
    p.add_argument("dataset")
    _add_prior_args(p)
    _add_forest_args(p)
    p.set_defaults(func=cmd_reweigh, stage="reweigh-report")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return 1
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    for name, value in GLOBAL_DEFAULTS.items():
        if not hasattr(args, name):
            setattr(args, name, value)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    if args.threads < 1:
        sys.stderr.write("heatcast: --threads must be >= 1\n")
        return 1
    stage = Run(args.stage, args)
    try:
        args.func(args, stage)
        stage.write_manifest()
    except (HeatcastError, ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"heatcast {args.stage}: error: {exc}\n")
        return 2
    log.info("%s wrote %s", args.stage, ", ".join(str(p) for p in stage.outputs))
    return 0


def main() -> None:
    sys.exit(run())
