"""Experiment pipeline: data generation, training, prediction and reports.

Every stage reads and writes plain files under one output directory::

    data/cases.csv, data/truth.csv, data/scenario.json
    models/<method>.json   (models/qrf.jsonl for forests)
    models/<method>_logs/  (network training curves)
    forecasts/<method>.csv (125 quantiles per case)
    reports/scores.csv, scores_by_lead.csv, case_scores.csv, calibration.csv,
    reports/dm_tests.csv, best_method.csv, importance.csv

Results depend only on the configuration and the seed; the number of
parallel jobs does not change them.
"""

import json
import logging
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .baselines import EpcModel, RawEnsemble, fit_epc
from .dataset import (
    CaseSet,
    ScenarioConfig,
    generate_scenario,
    load_csv,
    split_chronological,
    write_csv,
    write_truth_csv,
)
from .emos import EmosModel, fit_emos_model
from .exceptions import ConfigError, DataError
from .gbm import GbmModel, fit_gbm_model, gbm_coefficient_importance
from .idr import IdrModel, fit_idr_model
from .mbm import MbmModel, fit_mbm_model
from .nn import NnModel, fit_nn_model, write_training_log
from .qrf import fit_qrf_model, read_forest_jsonl, write_forest_jsonl
from .scoring import EVAL_LEVELS, crps, forecast_error, pi_metrics, squared_error
from .verification import (
    benjamini_hochberg,
    calibration_diagnostics,
    dm_test,
    permutation_importance,
    write_rows,
)

__all__ = [
    "METHODS",
    "RunConfig",
    "load_cases",
    "split_cases",
    "cmd_generate",
    "cmd_train",
    "cmd_predict",
    "cmd_evaluate",
    "cmd_compare",
    "cmd_importance",
    "fit_method",
    "load_model",
]

log = logging.getLogger(__name__)

METHODS = ("epc", "raw", "emos", "mbm", "idr", "emos-gb", "qrf", "drn", "bqn", "hen")
NN_METHODS = ("drn", "bqn", "hen")
# methods whose forecasts use the additional predictors
PREDICTOR_METHODS = ("emos-gb", "qrf", "drn", "bqn", "hen")

_HYPER_KEYS = {
    "epc": set(),
    "raw": set(),
    "emos": {"min_cases"},
    "mbm": {"min_cases"},
    "idr": {"n_subsamples", "ratio"},
    "emos-gb": {"max_iter", "step"},
    "qrf": {"n_trees", "mtry_ratio", "min_node_size", "max_depth"},
    "drn": {"n_members", "epochs", "patience", "learning_rate", "batch_size", "hidden", "embedding_dim"},
}
_HYPER_KEYS["bqn"] = _HYPER_KEYS["hen"] = _HYPER_KEYS["drn"]


@dataclass
class RunConfig:
    """Settings of one experiment run.

    Parameters
    ----------
    scenario : dict, optional
        Synthetic scenario (``ScenarioConfig`` fields, optionally with a
        ``preset`` name). Ignored when ``data`` is given.
    data : str, optional
        Path of a case CSV to use instead of a synthetic scenario.
    years : (train, validation, test), optional
        Calendar years of the split. By default the last year is the test
        year, the one before it the validation year and the rest training.
    methods : tuple of str
    hyper : dict
        Per-method hyperparameter overrides, e.g. ``{"qrf": {"n_trees": 200}}``.
    out : str
    seed : int
    jobs : int
    importance_repeats : int
        Permutations averaged per feature in the importance report.
    """

    scenario: dict | None = None
    data: str | None = None
    years: tuple | None = None
    methods: tuple = METHODS
    hyper: dict = field(default_factory=dict)
    out: str = "run"
    seed: int = 0
    jobs: int = 1
    importance_repeats: int = 10

    def __post_init__(self):
        self.methods = parse_methods(self.methods)
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if self.importance_repeats < 1:
            raise ConfigError("importance_repeats must be at least 1")
        for m, h in self.hyper.items():
            if m not in METHODS:
                raise ConfigError(f"hyperparameters given for unknown method {m!r}")
            bad = set(h) - _HYPER_KEYS[m]
            if bad:
                raise ConfigError(f"unknown hyperparameters for {m}: {sorted(bad)}")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except FileNotFoundError:
            raise DataError(f"no such configuration file: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from None

    @property
    def root(self):
        return Path(self.out)

    def path(self, *parts):
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def hp(self, method):
        return dict(self.hyper.get(method, {}))


def parse_methods(methods):
    if isinstance(methods, str):
        methods = [m.strip() for m in methods.split(",") if m.strip()]
    methods = tuple(methods)
    if not methods:
        raise ConfigError("no methods selected")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    # canonical order keeps report files independent of the order given
    return tuple(m for m in METHODS if m in methods)


# ---------------------------------------------------------------------------
# data


def cmd_generate(cfg):
    """Generate the synthetic scenario and write cases, truth and settings."""
    if cfg.scenario is None:
        raise ConfigError("no scenario configured")
    sc = dict(cfg.scenario)
    sc.setdefault("rng_seed", cfg.seed)
    scenario = generate_scenario(ScenarioConfig.from_dict(sc))
    write_csv(scenario.cases, cfg.path("data", "cases.csv"))
    write_truth_csv(scenario.cases, scenario.mu_true, scenario.sigma_true, cfg.path("data", "truth.csv"))
    with open(cfg.path("data", "scenario.json"), "w", encoding="utf-8") as fh:
        json.dump(scenario.config.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return scenario


def load_cases(cfg):
    path = Path(cfg.data) if cfg.data else cfg.root / "data" / "cases.csv"
    if not path.exists():
        raise DataError(f"no case data at {path}; run 'generate' first or set 'data'")
    return load_csv(path)


def split_cases(cfg, cases):
    if cfg.years is not None:
        return split_chronological(cases, cfg.years)
    years = sorted(np.unique(cases.year).tolist())
    if len(years) < 3:
        raise ConfigError("need at least three years for the default train/validation/test split")
    return split_chronological(cases, (years[:-2], years[-2], years[-1]))


# ---------------------------------------------------------------------------
# models


def fit_method(method, split, seed=0, jobs=1, **hyper):
    """Fit one method on a split.

    Statistical methods use the training and validation periods together;
    networks train on the training period and stop early on the validation
    period.
    """
    full = split.train_full
    if method == "epc":
        return fit_epc(full)
    if method == "raw":
        return RawEnsemble()
    if method == "emos":
        return fit_emos_model(full, jobs=jobs, **hyper)
    if method == "mbm":
        return fit_mbm_model(full, jobs=jobs, **hyper)
    if method == "idr":
        return fit_idr_model(full, seed=seed, jobs=jobs, **hyper)
    if method == "emos-gb":
        return fit_gbm_model(full, jobs=jobs, **hyper)
    if method == "qrf":
        return fit_qrf_model(full, seed=seed, jobs=jobs, **hyper)
    if method in NN_METHODS:
        n_members = hyper.pop("n_members", 10)
        return fit_nn_model(
            split.train, split.validation, method, n_members=n_members, seed=seed, jobs=jobs, spec_overrides=hyper
        )
    raise ConfigError(f"unknown method {method!r}")


_LOADERS = {
    "epc": EpcModel,
    "raw": RawEnsemble,
    "emos": EmosModel,
    "mbm": MbmModel,
    "idr": IdrModel,
    "emos-gb": GbmModel,
    "drn": NnModel,
    "bqn": NnModel,
    "hen": NnModel,
}


def _model_path(cfg, method):
    return cfg.root / "models" / (f"{method}.jsonl" if method == "qrf" else f"{method}.json")


def save_model(cfg, method, model):
    path = cfg.path("models", _model_path(cfg, method).name)
    if method == "qrf":
        write_forest_jsonl(model, path)
        return path
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, sort_keys=True)
        fh.write("\n")
    if method in NN_METHODS:
        for (lead, member), hist in sorted(model.logs.items()):
            write_training_log(hist, cfg.path("models", f"{method}_logs", f"lead{lead:02d}_member{member:02d}.csv"))
    return path


def load_model(cfg, method):
    path = _model_path(cfg, method)
    if not path.exists():
        raise DataError(f"no trained {method} model at {path}; run 'train' first")
    if method == "qrf":
        return read_forest_jsonl(path)
    with open(path, encoding="utf-8") as fh:
        return _LOADERS[method].from_dict(json.load(fh))


def _method_seed(cfg, method):
    return int(np.random.SeedSequence([cfg.seed, METHODS.index(method)]).generate_state(1)[0])


def cmd_train(cfg, split=None):
    """Fit and store every configured method; returns ``{method: model}``."""
    if split is None:
        split = split_cases(cfg, load_cases(cfg))
    models = {}
    for m in cfg.methods:
        log.info("training %s", m)
        model = fit_method(m, split, seed=_method_seed(cfg, m), jobs=cfg.jobs, **cfg.hp(m))
        save_model(cfg, m, model)
        models[m] = model
    return models


# ---------------------------------------------------------------------------
# forecasts and scores


def _case_columns(cases):
    return [cases.station.tolist(), cases.date.astype(str).tolist(), cases.lead.tolist(), cases.obs.tolist()]


def cmd_predict(cfg, split=None, models=None):
    """Write 125 equidistant quantiles per test case and method."""
    if split is None:
        split = split_cases(cfg, load_cases(cfg))
    test = split.test
    header = ["station_id", "date", "lead_time", "obs"] + [f"q{k:03d}" for k in range(1, len(EVAL_LEVELS) + 1)]
    for m in cfg.methods:
        model = models[m] if models else load_model(cfg, m)
        q = np.asarray(model.predict(test).quantiles(EVAL_LEVELS))
        cols = _case_columns(test)
        rows = (
            [st, d, ld, "" if np.isnan(o) else repr(float(o))] + [repr(float(v)) for v in q[i]]
            for i, (st, d, ld, o) in enumerate(zip(*cols))
        )
        write_rows(cfg.path("forecasts", f"{m}.csv"), header, rows)


def evaluate_forecast(forecast, y):
    """Per-case CRPS, squared error, forecast error, PI length and coverage."""
    length, covered = pi_metrics(forecast, y)
    return {
        "crps": np.asarray(crps(forecast, y), dtype=float),
        "se": np.asarray(squared_error(forecast, y), dtype=float),
        "fe": np.asarray(forecast_error(forecast, y), dtype=float),
        "pi_length": np.asarray(length, dtype=float),
        "coverage": np.asarray(covered, dtype=float),
    }


_SCORE_COLS = ("crps", "se", "fe", "pi_length", "coverage")


def cmd_evaluate(cfg, split=None, models=None):
    """Score every method on the test period.

    Returns
    -------
    dict
        ``{method: per-case score dict}`` on the observed test cases.
    """
    if split is None:
        split = split_cases(cfg, load_cases(cfg))
    test = split.test.subset(split.test.has_obs)
    if len(test) == 0:
        raise DataError("no observed test cases")
    results, forecasts = {}, {}
    for m in cfg.methods:
        model = models[m] if models else load_model(cfg, m)
        forecasts[m] = model.predict(test)
        results[m] = evaluate_forecast(forecasts[m], test.obs)

    case_rows, station_rows, lead_rows, cal_rows = [], [], [], []
    cols = _case_columns(test)
    for m in cfg.methods:
        r = results[m]
        for i, (st, d, ld, o) in enumerate(zip(*cols)):
            case_rows.append([m, st, d, ld, float(o)] + [float(r[c][i]) for c in _SCORE_COLS])
        for st in test.stations():
            for ld in test.leads():
                sel = (test.station == st) & (test.lead == ld)
                if np.any(sel):
                    station_rows.append([m, int(st), int(ld), int(sel.sum())] + [float(r[c][sel].mean()) for c in _SCORE_COLS])
        for ld in test.leads():
            sel = test.lead == ld
            lead_rows.append([m, int(ld), int(sel.sum())] + [float(r[c][sel].mean()) for c in _SCORE_COLS])
            # fixed per-method/lead stream so the randomized PIT is reproducible
            rng = np.random.default_rng([cfg.seed, METHODS.index(m), int(ld)])
            diag = calibration_diagnostics(forecasts[m][sel], test.obs[sel], rng=rng)
            kind = "rank" if m == "raw" else "upit"
            cal_rows.append(
                [m, int(ld), kind, len(diag.counts), diag.chi2, diag.p_value, diag.coverage, diag.pi_length,
                 " ".join(str(int(c)) for c in diag.counts)]
            )
        lead_rows.append([m, "all", len(test)] + [float(r[c].mean()) for c in _SCORE_COLS])

    write_rows(cfg.path("reports", "case_scores.csv"), ["method", "station_id", "date", "lead_time", "obs", *_SCORE_COLS], case_rows)
    write_rows(cfg.path("reports", "scores.csv"), ["method", "station_id", "lead_time", "n", *_SCORE_COLS], station_rows)
    write_rows(cfg.path("reports", "scores_by_lead.csv"), ["method", "lead_time", "n", *_SCORE_COLS], lead_rows)
    write_rows(
        cfg.path("reports", "calibration.csv"),
        ["method", "lead_time", "kind", "n_bins", "chi2", "p_value", "coverage", "pi_length", "counts"],
        cal_rows,
    )
    return results


def _read_case_scores(cfg):
    import csv

    path = cfg.root / "reports" / "case_scores.csv"
    if not path.exists():
        raise DataError(f"no case scores at {path}; run 'evaluate' first")
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["method"], []).append(
                (int(row["station_id"]), row["date"], int(row["lead_time"]), float(row["crps"]))
            )
    return out


def compare_scores(scores, alpha=0.05):
    """DM tests for every method pair and station/lead, BH-corrected per pair.

    Parameters
    ----------
    scores : dict
        ``{method: [(station, date, lead, crps), ...]}`` on common cases.

    Returns
    -------
    rows : list
        ``[station, lead, method_a, method_b, t, p, rejected]`` per test.
    """
    methods = [m for m in METHODS if m in scores]
    keyed = {}
    for m in methods:
        keyed[m] = {(s, d, ld): c for s, d, ld, c in scores[m]}
    common = sorted(set.intersection(*(set(k) for k in keyed.values())))
    groups = {}
    for k in common:
        groups.setdefault((k[0], k[2]), []).append(k)
    rows = []
    for a, b in combinations(methods, 2):
        block = []
        for (st, ld), keys in sorted(groups.items()):
            fa = np.array([keyed[a][k] for k in keys])
            fb = np.array([keyed[b][k] for k in keys])
            res = dm_test(fa, fb)
            block.append([st, ld, a, b, res.statistic, res.p_value])
        reject, _ = benjamini_hochberg([r[5] for r in block], alpha)
        rows += [r + [int(x)] for r, x in zip(block, reject)]
    return rows


def cmd_compare(cfg, alpha=0.05):
    """Significance tests between methods and the best method per station."""
    scores = _read_case_scores(cfg)
    if len(scores) < 2:
        raise DataError("comparison needs scores of at least two methods")
    rows = compare_scores(scores, alpha)
    write_rows(cfg.path("reports", "dm_tests.csv"), ["station", "lead", "method_a", "method_b", "t", "p", "rejected"], rows)
    mean = {}
    for m, recs in scores.items():
        for s, _, _, c in recs:
            tot = mean.setdefault((s, m), [0.0, 0])
            tot[0] += c
            tot[1] += 1
    best = []
    for s in sorted({k[0] for k in mean}):
        ranked = sorted((v[0] / v[1], METHODS.index(m), m) for (st, m), v in mean.items() if st == s)
        best.append([s, ranked[0][2], ranked[0][0]] + ([ranked[1][2], ranked[1][0]] if len(ranked) > 1 else ["", ""]))
    write_rows(cfg.path("reports", "best_method.csv"), ["station", "best_method", "crps", "runner_up", "runner_up_crps"], best)
    return rows


# ---------------------------------------------------------------------------
# importance


def importance_rows(method, model, split, rng, n_repeats=10):
    """Importance rows ``[method, lead, kind, feature, delta, delta0]``.

    Permutation importance is computed per lead time on the test period for
    every predictor, the raw ensemble and the joint gust-summary pair.
    EMOS-GB adds coefficient importance and QRF its out-of-bag importance.
    """
    test = split.test.subset(split.test.has_obs)
    names = test.predictor_names
    feats = ["ensemble"]
    if method in PREDICTOR_METHODS:
        feats = list(names) + feats
        if {"vmax_mean", "vmax_sd"} <= set(names):
            feats.append(("vmax_mean", "vmax_sd"))
    rows = []
    for ld in test.leads():
        sub = test.subset(test.lead == ld)
        for f in feats:
            r = permutation_importance(model.predict, sub, f, rng=rng, n_repeats=n_repeats)
            fid = f if isinstance(f, str) else "+".join(f)
            rows.append([method, int(ld), "permutation", fid, r.delta, r.delta0])
    if method == "emos-gb":
        for part, vals in gbm_coefficient_importance(model).items():
            for k, v in vals.items():
                rows.append([method, "all", f"coefficient_{part}", k, float(v), ""])
    if method == "qrf":
        for k, v in model.importance(split.train_full).items():
            rows.append([method, "all", "oob", k, float(v), ""])
    return rows


def cmd_importance(cfg, split=None, models=None, n_repeats=None):
    n_repeats = n_repeats or cfg.importance_repeats
    if split is None:
        split = split_cases(cfg, load_cases(cfg))
    rows = []
    for m in cfg.methods:
        if m in ("epc", "raw"):
            continue
        model = models[m] if models else load_model(cfg, m)
        rng = np.random.default_rng([cfg.seed, METHODS.index(m), 7])
        rows += importance_rows(m, model, split, rng, n_repeats)
    write_rows(cfg.path("reports", "importance.csv"), ["method", "lead", "kind", "feature", "delta", "delta0"], rows)
    return rows
