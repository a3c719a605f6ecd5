"""Experiment configuration and the train/test evaluation protocol."""

import configparser
import csv
import dataclasses
import os
import shutil
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidInputError, StageError
from .evaluation import (EvalReport, ModelResult, error_correlation, mae_with_se, mse_with_se,
                         redundancy_flags, weight_summary, REDUNDANCY_THRESHOLD)
from .io import load_csv, save_model, write_csv
from .learners import DEFAULTS, KINDS, Dataset, LearnerSpec
from .nn import TrainConfig
from .report import emit_report
from .stacking import STACKERS, build_oof_matrix, fit_stacker, predict_stacked

DEFAULT_LEARNERS = ("ols", "lasso", "ridge", "bagging", "random_forest", "gradient_boosting")
# files written by run_experiment that depend on wall-clock time
TIMED_FILES = ("timings.csv", "report_timed.txt")


def synth_example(n=5000, seed=0, noise=1.0, low=-7.5, high=7.5):
    """One-feature data where a line and a parabola each fit best in different regions.

    ``y = 0.6 x + 0.3 x^2 + x sin(x) + N(0, noise^2)`` with ``x`` uniform on
    ``[low, high]``.  Columns are ``x`` and ``x_sq`` so that linear learners
    restricted to one column give the linear and the quadratic fit.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(low, high, size=n)
    y = 0.6 * x + 0.3 * x ** 2 + x * np.sin(x) + rng.normal(0.0, noise, size=n)
    return Dataset(np.column_stack([x, x ** 2]), y, ["x", "x_sq"])


@dataclass
class LearnerEntry:
    name: str
    kind: str
    hyperparams: dict = field(default_factory=dict)
    columns: list | None = None  # column names


@dataclass
class ExperimentConfig:
    data_path: str = ""
    target_column: str = "y"
    test_fraction: float = 0.25
    oof_folds: int = 10
    learners: list = field(default_factory=lambda: [LearnerEntry(k, k) for k in DEFAULT_LEARNERS])
    stackers: list = field(default_factory=lambda: list(STACKERS))
    architecture_sweep: list = field(default_factory=lambda: [1, 3, 10])
    seed: int = 0
    output_dir: str = "results"
    train: TrainConfig = field(default_factory=TrainConfig)
    clip_negative: bool = False
    redundancy_threshold: float = REDUNDANCY_THRESHOLD

    def validate(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")
        if self.oof_folds < 2:
            raise ConfigError(f"oof_folds must be at least 2, got {self.oof_folds}")
        if not self.stackers:
            raise ConfigError("at least one stacker is required")
        unknown = [s for s in self.stackers if s not in STACKERS]
        if unknown:
            raise ConfigError(f"unknown stackers {unknown}; choose from {list(STACKERS)}")
        if not self.learners:
            raise ConfigError("at least one base learner is required")
        names = [e.name for e in self.learners]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate learner names in {names}")
        for e in self.learners:
            if e.kind not in KINDS:
                raise ConfigError(f"learner {e.name!r}: unknown kind {e.kind!r}")
            try:
                LearnerSpec(e.kind, dict(e.hyperparams), name=e.name)
            except InvalidInputError as exc:
                raise ConfigError(f"learner {e.name!r}: {exc}") from exc
        if any(int(h) < 0 for h in self.architecture_sweep):
            raise ConfigError("architecture_sweep entries must be non-negative")
        return self

    def to_dict(self):
        d = dataclasses.asdict(self)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["learners"] = [LearnerEntry(**e) for e in d["learners"]]
        d["train"] = TrainConfig(**d["train"])
        return cls(**d).validate()

    @classmethod
    def from_text(cls, text):
        return config_from_mapping(_read_flat(text))

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())


def _read_flat(text):
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#",), inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[experiment]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    return dict(parser["experiment"])


def _scalar(text):
    t = text.strip()
    low = t.lower()
    if low in ("none", "null", ""):
        return None
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        return t


def _list(text):
    return [p.strip() for p in text.split(",") if p.strip()]


_TOP_KEYS = {"data_path", "target_column", "test_fraction", "oof_folds", "learners", "stackers",
             "architecture_sweep", "seed", "output_dir", "clip_negative",
             "redundancy_threshold"}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}


def config_from_mapping(flat):
    """Build a config from flat dotted keys.

    ``learners`` is a comma list of ``kind`` or ``name:kind`` entries; each
    learner's hyperparameters are ``<name>.<param>``, its feature restriction
    ``<name>.columns``.  Network settings are ``nn.<field>`` for any
    :class:`~featstack.nn.TrainConfig` field.
    """
    cfg = ExperimentConfig()
    train_kwargs = {}
    learner_keys = {}
    for key, raw in flat.items():
        if "." not in key:
            if key not in _TOP_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            continue
        prefix, _, sub = key.partition(".")
        if prefix == "nn":
            if sub not in _TRAIN_KEYS:
                raise ConfigError(f"unknown network setting {key!r}")
            train_kwargs[sub] = _scalar(raw)
        else:
            learner_keys.setdefault(prefix, {})[sub] = raw

    if "data_path" in flat:
        cfg.data_path = flat["data_path"].strip()
    if "target_column" in flat:
        cfg.target_column = flat["target_column"].strip()
    if "output_dir" in flat:
        cfg.output_dir = flat["output_dir"].strip()
    for key, conv in (("test_fraction", float), ("oof_folds", int), ("seed", int),
                      ("redundancy_threshold", float)):
        if key in flat:
            try:
                setattr(cfg, key, conv(flat[key]))
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
    if "clip_negative" in flat:
        cfg.clip_negative = bool(_scalar(flat["clip_negative"]))
    if "stackers" in flat:
        cfg.stackers = _list(flat["stackers"])
    if "architecture_sweep" in flat:
        try:
            cfg.architecture_sweep = [int(v) for v in _list(flat["architecture_sweep"])]
        except ValueError as exc:
            raise ConfigError(f"architecture_sweep: {exc}") from None
    if "learners" in flat:
        entries = []
        for item in _list(flat["learners"]):
            name, _, kind = item.partition(":")
            entries.append(LearnerEntry(name.strip(), (kind or name).strip()))
        cfg.learners = entries
    by_name = {e.name: e for e in cfg.learners}
    for name, params in learner_keys.items():
        if name not in by_name:
            raise ConfigError(f"settings given for unknown learner {name!r}")
        entry = by_name[name]
        for sub, raw in params.items():
            if sub == "columns":
                entry.columns = _list(raw)
            elif entry.kind in DEFAULTS and sub in DEFAULTS[entry.kind]:
                entry.hyperparams[sub] = _scalar(raw)
            else:
                raise ConfigError(f"learner {name!r} ({entry.kind}) has no setting {sub!r}")
    try:
        cfg.train = TrainConfig(**train_kwargs)
    except (TypeError, InvalidInputError) as exc:
        raise ConfigError(f"network settings: {exc}") from exc
    return cfg.validate()


def _seed(base, *tags):
    """Independent 32-bit seed derived from the experiment seed and stage tags."""
    return int(np.random.SeedSequence([base, *tags]).generate_state(1)[0])


def learner_specs(config, data):
    specs = []
    for i, e in enumerate(config.learners):
        cols = None
        if e.columns is not None:
            missing = [c for c in e.columns if c not in data.column_names]
            if missing:
                raise ConfigError(f"learner {e.name!r}: unknown columns {missing}")
            cols = [data.column_names.index(c) for c in e.columns]
        specs.append(LearnerSpec(e.kind, dict(e.hyperparams), _seed(config.seed, 2, i),
                                 e.name, cols))
    return specs


def train_test_split(n, test_fraction, seed):
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(n * test_fraction))
    if n_test < 2 or n - n_test < 2:
        raise InvalidInputError(
            f"a test fraction of {test_fraction} on {n} rows leaves too few rows on one side")
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


@dataclass
class ExperimentResult:
    report: EvalReport
    models: dict
    output_dir: str | None
    test_predictions: dict
    sweeps: dict


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def evaluate(config, data):
    """Run the protocol on an in-memory dataset; no files are written."""
    train_idx, test_idx = _stage("split", train_test_split, len(data), config.test_fraction,
                                 _seed(config.seed, 0))
    train, test = data.subset(train_idx), data.subset(test_idx)
    specs = _stage("learners", learner_specs, config, data)
    oof = _stage("oof", build_oof_matrix, specs, train, config.oof_folds, _seed(config.seed, 1))
    base_models = _stage("base", lambda: [s.fit(train) for s in specs])

    report = EvalReport(learner_names=[s.name for s in specs])
    models, preds, sweeps = {}, {"y": test.target}, {}
    train_config = dataclasses.replace(config.train, seed=_seed(config.seed, 3))
    for kind in config.stackers:
        sweep = None if kind == "breiman" else config.architecture_sweep
        start = time.perf_counter()
        model, sweep_result = _stage(
            f"stack:{kind}", fit_stacker, kind, oof, train, base_models, train_config, sweep,
            config.clip_negative)
        elapsed = time.perf_counter() - start
        model.feature_names = list(data.column_names)
        yhat, weights, _ = _stage(f"predict:{kind}", predict_stacked, model, test.features)
        group = "direct" if kind == "direct_nn" else "stacked"
        neg = getattr(model.meta, "negative_weight_fraction", None)
        report.models.append(ModelResult(
            kind, group, mse_with_se(test.target, yhat), mae_with_se(test.target, yhat),
            None if sweep_result is None else sweep_result.hidden_layers, elapsed,
            None if neg is None else float(neg)))
        if weights is not None:
            report.weight_quantiles[kind] = weight_summary(weights, report.learner_names)
        models[kind] = model
        preds[kind] = yhat
        sweeps[kind] = sweep_result
    for spec, base in zip(specs, base_models):
        yhat = base.predict(test.features)
        report.models.append(ModelResult(spec.name, "base", mse_with_se(test.target, yhat),
                                         mae_with_se(test.target, yhat)))
        preds[spec.name] = yhat
    report.error_correlation = error_correlation(oof, train.target)
    report.redundancy_pairs = redundancy_flags(report.error_correlation,
                                               config.redundancy_threshold)
    return ExperimentResult(report, models, None, preds, sweeps)


def _write_artifacts(result, config, out):
    report = result.report
    emit_report(report, "table", out, include_timings=False)
    emit_report(report, "delimited", out, include_timings=False)
    with open(os.path.join(out, "report.json"), "w") as fh:
        fh.write(report.to_json(include_timings=False))
    timed = emit_report(report, "table", None, include_timings=True)["report.txt"]
    with open(os.path.join(out, "report_timed.txt"), "w") as fh:
        fh.write(timed)
    with open(os.path.join(out, "timings.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "fit_time_s"])
        for name, t in report.fit_times.items():
            w.writerow([name, f"{t:.6f}"])
    with open(os.path.join(out, "test_predictions.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        cols = list(result.test_predictions)
        w.writerow(cols)
        for row in zip(*(result.test_predictions[c] for c in cols)):
            w.writerow([repr(float(v)) for v in row])
    model_dir = os.path.join(out, "models")
    os.makedirs(model_dir, exist_ok=True)
    snapshot = config.to_dict()
    for name, model in result.models.items():
        save_model(model, os.path.join(model_dir, f"{name}.json"), snapshot, config.seed)


def _weight_rows(result, data_rows):
    """Per-row test-set weights for plotting, one CSV per weighted stacker."""
    out = {}
    for name, model in result.models.items():
        _, weights, phi = predict_stacked(model, data_rows)
        if weights is None:
            continue
        header = list(result.report.learner_names) + (["phi"] if phi is not None else [])
        lines = [",".join(header)]
        for i in range(weights.shape[0]):
            vals = list(weights[i]) + ([phi[i]] if phi is not None else [])
            lines.append(",".join(repr(float(v)) for v in vals))
        out[f"weights_{name}_rows.csv"] = "\n".join(lines) + "\n"
    return out


def run_experiment(config, data=None):
    """Full protocol with artifacts written to ``config.output_dir``.

    Artifacts are staged in a temporary directory and moved into place only
    after every stage succeeded; on failure nothing is left behind.
    """
    config.validate()
    if data is None:
        data = _stage("load", load_csv, config.data_path, config.target_column)
    result = evaluate(config, data)
    out = os.path.abspath(config.output_dir)
    parent = os.path.dirname(out)
    os.makedirs(parent, exist_ok=True)
    staging = tempfile.mkdtemp(prefix=".featstack-", dir=parent)
    try:
        _stage("write", _write_artifacts, result, config, staging)
        train_idx, test_idx = train_test_split(len(data), config.test_fraction,
                                               _seed(config.seed, 0))
        for name, text in _weight_rows(result, data.features[test_idx]).items():
            with open(os.path.join(staging, name), "w") as fh:
                fh.write(text)
        os.makedirs(out, exist_ok=True)
        for entry in os.listdir(staging):
            target = os.path.join(out, entry)
            if os.path.isdir(target):
                shutil.rmtree(target)
            os.replace(os.path.join(staging, entry), target)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    result.output_dir = out
    return result


__all__ = ["ExperimentConfig", "LearnerEntry", "ExperimentResult", "config_from_mapping",
           "evaluate", "run_experiment", "synth_example", "train_test_split", "write_csv",
           "TIMED_FILES"]
