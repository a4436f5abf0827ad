"""Builders shared by several test modules."""
import numpy as np

from heatcast import design, synthgen
from heatcast.forest import REGRESSION, Forest, ForestParams, Tree

PAPER_PREDICTORS = ["temp_8", "trop_height", "mmr_8"]


def stack_from_config(cfg, predictors=PAPER_PREDICTORS, faux_shift=30):
    """Event stack (label 1) against one shifted faux scenario (label 0)."""
    panel, truth = synthgen.generate(cfg)
    spec = design.WindowSpec.for_event(cfg.dome_window.start)
    scenarios = [design.Scenario("event", panel, spec, 1),
                 design.Scenario("faux", panel, design.shift_spec(spec, faux_shift), 0)]
    return design.build_crossover_classification(scenarios, predictors), truth


def gain_from_config(cfg, predictors=design.DEFAULT_PREDICTORS, shift=0, scenario="event"):
    panel, truth = synthgen.generate(cfg)
    spec = design.shift_spec(design.WindowSpec.for_event(cfg.dome_window.start), shift)
    return design.build_gain_design(panel, spec, predictors, scenario=scenario), truth


def hand_tree(feature, threshold, left, right, value, n_train=1):
    return Tree(np.asarray(feature, dtype=np.int64), np.asarray(threshold, dtype=float),
                np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64),
                np.asarray(value, dtype=float), np.ones(n_train, dtype=np.int64))


def hand_forest(trees, names, lower, upper, task=REGRESSION):
    """A forest assembled from explicit trees; training ranges are the bounds."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    return Forest(trees=trees, task=task, predictor_names=list(names),
                  params=ForestParams(n_trees=len(trees), mtry=1, min_node_size=1),
                  data_fingerprint="hand", training_fingerprint="hand", n_train=1,
                  x_min=lower, x_max=upper, x_q25=lower, x_q75=upper)


def stump(feature, threshold, low_value, high_value):
    """Regression stump: ``low_value`` if x[feature] <= threshold."""
    return hand_tree([feature, -1, -1], [threshold, np.nan, np.nan], [1, -1, -1], [2, -1, -1],
                     [(low_value + high_value) / 2, low_value, high_value])


def leaf(value):
    return hand_tree([-1], [np.nan], [-1], [-1], [value])


def random_cart_case(rng, task, weighted):
    """Small dataset on a coarse lattice so ties in values and gains occur."""
    n = int(rng.integers(2, 13))
    p = int(rng.integers(1, 4))
    X = rng.integers(0, 5, size=(n, p)).astype(float)
    if rng.random() < 0.5:
        X = X + rng.normal(0, 0.01, size=X.shape).round(3)
    if task == REGRESSION:
        y = rng.integers(0, 4, size=n).astype(float)
        if np.all(y == y[0]):
            y[0] += 1.0
    else:
        y = rng.integers(0, 2, size=n).astype(float)
        y[0], y[-1] = 0.0, 1.0
    w = rng.integers(1, 4, size=n).astype(float) if weighted else np.ones(n)
    return X, y, w


def single_tree_splits(X, y, task, w=None, min_node_size=1, seed=0):
    from heatcast.forest import fit_arrays
    params = ForestParams(n_trees=1, mtry=X.shape[1], min_node_size=min_node_size, seed=seed,
                          bootstrap=False)
    names = [f"x{j}" for j in range(X.shape[1])]
    return fit_arrays(X, y, task, names, params, weights=w).trees[0].splits()


SEPARATING = ["temp_6", "mmr_5"]
SEPARATION_PREDICTORS = ["temp_6", "mmr_5", "trop_height", "mmr_8"]


def separation_config(seed, sign):
    """Gain config where ``SEPARATING`` predictors act with sign ``sign``,
    trop_height acts positively regardless and mmr_8 is inert."""
    eff = {name: synthgen.Effect("linear", coef=2.0 * sign) for name in SEPARATING}
    eff["trop_height"] = synthgen.Effect("linear", coef=2.0)
    return synthgen.SynthConfig(predictor_effects=eff, seed=seed, noise_sigma=1.0)


N_TEST, N_TRAIN, N_CAL = 126, 125, 37


def coverage_replication(r, alphas, n_trees=200):
    """One split/calibrate/test draw on a fresh moderate stack.

    Returns ``{alpha: (coverage, mean size)}`` and whether the sets were
    nested across ``alphas`` for every test row.
    """
    from heatcast.conformal import set_matrix, split_train_calibrate

    ds, _ = stack_from_config(synthgen.moderate_stack_config(seed=1000 + r))
    perm = np.random.default_rng(r).permutation(len(ds))
    test, rest = ds.subset(np.sort(perm[:N_TEST])), ds.subset(np.sort(perm[N_TEST:]))
    forest, cp = split_train_calibrate(rest, N_TRAIN / len(rest), ForestParams(n_trees=n_trees, seed=r),
                                       alpha=alphas[0], seed=r)
    assert cp.n_cal == N_CAL
    p1 = forest.predict_array(test.X)
    out, sets = {}, []
    for a in alphas:
        member = set_matrix(cp.with_alpha(a), p1)
        sets.append(member)
        out[a] = (float(member[np.arange(len(test)), test.labels].mean()), float(member.sum(axis=1).mean()))
    order = np.argsort(alphas)[::-1]
    nested = all((sets[j] >= sets[i]).all() for i, j in zip(order, order[1:]))
    return out, nested


def run_pipeline(root, threads=1, seed=3):
    """Drive every CLI stage on small synthetic inputs under ``root``.

    Returns the exit codes by stage; each stage writes into its own folder.
    """
    from heatcast.cli import run

    root = str(root)
    g = ["--seed", str(seed), "--threads", str(threads)]
    steps = {
        "synth": ["synth", "--preset", "default", "--out-dir", f"{root}/synth"],
        "synth_stack": ["synth", "--preset", "high_margin", "--out-dir", f"{root}/synth_stack"],
        "ingest": ["ingest", f"{root}/synth/panel.csv", "--region", "42,50,-123,-115",
                   "--dates", "2021-06-01..2021-07-10", "--out-dir", f"{root}/ingest"],
        "gain": ["design", "gain", f"{root}/synth/panel.csv", "--post-start", "2021-06-27",
                 "--predictors", "topography,trop_height,temp_6,temp_8,mmr_5,mmr_8",
                 "--out-dir", f"{root}/gain"],
        "faux": ["design", "gain", f"{root}/synth/panel.csv", "--post-start", "2021-06-27",
                 "--shift", "-4", "--scenario", "faux", "--name", "faux",
                 "--predictors", "topography,trop_height,temp_6,temp_8,mmr_5,mmr_8",
                 "--out-dir", f"{root}/gain"],
        "stack": ["design", "stack", f"{root}/synth_stack/panel.csv", "--post-start", "2021-06-27",
                  "--faux-shift", "30", "--predictors", "temp_8,trop_height,mmr_8",
                  "--out-dir", f"{root}/stack"],
        "summary": ["summary", f"{root}/gain/gain.csv", "--bin-width", "0.5", "--out-dir", f"{root}/summary"],
        "fit": ["fit", f"{root}/gain/gain.csv", "--task", "regression", "--n-trees", "60",
                "--out-dir", f"{root}/fit"],
        "fit_faux": ["fit", f"{root}/gain/faux.csv", "--n-trees", "60", "--out-dir", f"{root}/fit_faux"],
        "importance": ["importance", f"{root}/fit/forest.json", f"{root}/gain/gain.csv",
                       "--out-dir", f"{root}/importance"],
        "pdp": ["pdp", f"{root}/fit/forest.json", f"{root}/gain/gain.csv", "--predictor", "topography",
                "--n-grid", "8", "--out-dir", f"{root}/pdp"],
        "ga": ["ga", f"{root}/fit/forest.json", "--population-size", "20", "--iterations", "30",
               "--out-dir", f"{root}/ga"],
        "ga_faux": ["ga", f"{root}/fit_faux/forest.json", "--population-size", "20", "--iterations", "30",
                    "--out-dir", f"{root}/ga_faux"],
        "compare": ["compare", f"{root}/ga/solution.json", f"{root}/ga_faux/solution.json", "--k", "2",
                    "--out-dir", f"{root}/compare"],
        "forecast": ["forecast", f"{root}/stack/stack.csv", "--alpha", "0.25", "--n-trees", "100",
                     "--out-dir", f"{root}/forecast"],
        "synth_fresh": ["synth", "--preset", "high_margin", "--out-dir", f"{root}/synth_fresh",
                        "--seed", str(seed + 100)],
        "stack_fresh": ["design", "stack", f"{root}/synth_fresh/panel.csv", "--post-start", "2021-06-27",
                        "--faux-shift", "30", "--predictors", "temp_8,trop_height,mmr_8",
                        "--out-dir", f"{root}/stack_fresh"],
        "coverage": ["coverage", f"{root}/forecast/forest.json", f"{root}/forecast/conformal.json",
                     f"{root}/stack_fresh/stack.csv", "--out-dir", f"{root}/coverage"],
        "weights": ["weights", f"{root}/stack/stack.csv", "--days-in-month", "30", "--event-days", "4",
                    "--out-dir", f"{root}/weights"],
        "fit_weighted": ["fit", f"{root}/stack/stack.csv", "--weights", f"{root}/weights/weights.json",
                         "--n-trees", "60", "--out-dir", f"{root}/fit_weighted"],
        "reweigh": ["reweigh-report", f"{root}/stack/stack.csv", "--n-trees", "60",
                    "--out-dir", f"{root}/reweigh"],
    }
    # stage arguments follow the globals so a stage may override --seed
    return {name: run(g + argv) for name, argv in steps.items()}


def primary_outputs(root):
    """Every non-manifest output file under ``root`` as ``{relative path: bytes}``."""
    from pathlib import Path

    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and not p.name.endswith(".manifest.json")}
