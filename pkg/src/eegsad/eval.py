"""Subject-level stratified cross-validation, window-vote aggregation, metrics
and experiment reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import (BAND_NAMES, DataError, ElectrodeLayout, NumericalError, PipelineConfig, Recording, default_layout,
                   fingerprint)
from .dsp import featurize_recording
from .learn import (CnnArchitecture, KnnConfig, SvmConfig, TrainConfig, cnn_init, cnn_train, knn_predict,
                    standardize_fit, svm_fit, svm_predict)
from .tensorize import grid_batch

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# Fold planning

@dataclass(frozen=True)
class Trial:
    index: int
    test: tuple[str, ...]
    validation: tuple[str, ...]
    train: tuple[str, ...]


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[tuple[str, ...], ...]
    trials: tuple[Trial, ...] = ()

    def check_disjoint(self) -> None:
        for t in self.trials:
            s_test, s_val, s_train = set(t.test), set(t.validation), set(t.train)
            if s_test & s_val or s_test & s_train or s_val & s_train:
                raise AssertionError(f"trial {t.index}: subject sets overlap")


def stratified_folds(subjects: Sequence[tuple[str, int]], k: int = 8, seed: int = 0,
                     val_fraction: float = 0.1) -> FoldPlan:
    """Shuffle each class with the seed and deal subjects round-robin into k
    folds, continuing the deal across classes so fold sizes differ by at most
    one. Each trial holds out one fold for testing and a stratified
    `val_fraction` of the remaining subjects for validation."""
    if k < 2:
        raise DataError("k must be >= 2")
    if k > len(subjects):
        raise DataError(f"k={k} folds exceed {len(subjects)} subjects")
    ids = [s for s, _ in subjects]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate subject ids")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(0,))))
    folds: list[list[str]] = [[] for _ in range(k)]
    label_of = dict(subjects)
    pos = 0
    for cls in sorted(set(label_of.values())):
        members = sorted(s for s, lab in subjects if lab == cls)
        for s in (members[i] for i in rng.permutation(len(members))):
            folds[pos % k].append(s)
            pos += 1
    trials = []
    for t in range(k):
        rest = [s for f in range(k) if f != t for s in folds[f]]
        val = _stratified_pick(rest, label_of, val_fraction, seed, t)
        train = tuple(s for s in rest if s not in set(val))
        trials.append(Trial(t, tuple(folds[t]), val, train))
    plan = FoldPlan(tuple(tuple(f) for f in folds), tuple(trials))
    plan.check_disjoint()
    return plan


def _stratified_pick(pool: list[str], label_of: dict, fraction: float, seed: int, trial: int) -> tuple[str, ...]:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(1, trial))))
    n_total = max(1, int(round(fraction * len(pool))))
    classes = sorted({label_of[s] for s in pool})
    by_class = {c: [s for s in pool if label_of[s] == c] for c in classes}
    # largest-remainder apportionment of the validation quota across classes
    quota = {c: n_total * len(by_class[c]) / len(pool) for c in classes}
    take = {c: int(np.floor(q)) for c, q in quota.items()}
    for c in sorted(classes, key=lambda c: (-(quota[c] - take[c]), c))[: n_total - sum(take.values())]:
        take[c] += 1
    picked = []
    for c in classes:
        members = by_class[c]
        order = rng.permutation(len(members))
        n_c = min(take[c], max(len(members) - 1, 0))
        picked += [members[i] for i in order[:n_c]]
    return tuple(picked)


# --------------------------------------------------------------------------
# Aggregation and metrics

@dataclass(frozen=True)
class SubjectAggregate:
    subject_id: str
    p: int
    t: int
    threshold: float
    prediction: int

    @property
    def x(self) -> float:
        return self.p / self.t


def aggregate_subject(window_predictions: Sequence[int], threshold: float = 0.45,
                      subject_id: str = "") -> SubjectAggregate:
    """Patient (1) iff the fraction of positive windows is >= threshold."""
    preds = np.asarray(window_predictions)
    if preds.size == 0:
        raise DataError("no window predictions to aggregate")
    p, t = int((preds == 1).sum()), int(preds.size)
    # exact rational comparison so x == threshold stays on the inclusive side
    patient = Fraction(p, t) >= Fraction(str(threshold))
    return SubjectAggregate(subject_id, p, t, threshold, int(patient))


def integer_percent(num: int, den: int) -> int | None:
    """Whole percent of num/den, rounded half up with exact arithmetic
    (79.6875 -> 80, 87.5 -> 88)."""
    if den == 0:
        return None
    q = Fraction(100 * num, den)
    return int(q + Fraction(1, 2)) if q >= 0 else -int(-q + Fraction(1, 2))


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fn: int
    fp: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    @property
    def accuracy(self) -> float | None:
        return (self.tp + self.tn) / self.total if self.total else None

    @property
    def sensitivity(self) -> float | None:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else None

    @property
    def specificity(self) -> float | None:
        return self.tn / (self.tn + self.fp) if self.tn + self.fp else None

    def percents(self) -> dict[str, int | None]:
        return {"accuracy": integer_percent(self.tp + self.tn, self.total),
                "sensitivity": integer_percent(self.tp, self.tp + self.fn),
                "specificity": integer_percent(self.tn, self.tn + self.fp)}

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fn + other.fn, self.fp + other.fp, self.tn + other.tn)

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fn": self.fn, "fp": self.fp, "tn": self.tn,
                "accuracy": self.accuracy, "sensitivity": self.sensitivity, "specificity": self.specificity,
                "percent": self.percents()}


def compute_metrics(per_subject: Iterable[tuple[int, int]]) -> ConfusionMatrix:
    """Confusion counts from (actual, predicted) pairs, patient = 1 = positive."""
    pairs = list(per_subject)
    if not pairs:
        raise DataError("no subjects to score")
    tp = sum(1 for a, p in pairs if a == 1 and p == 1)
    fn = sum(1 for a, p in pairs if a == 1 and p == 0)
    fp = sum(1 for a, p in pairs if a == 0 and p == 1)
    tn = sum(1 for a, p in pairs if a == 0 and p == 0)
    return ConfusionMatrix(tp, fn, fp, tn)


# --------------------------------------------------------------------------
# Features

@dataclass
class FeatureTable:
    """Band energies per subject: `energies[sid]` is (n_windows, 34, 5)."""

    energies: dict[str, np.ndarray]
    labels: dict[str, int]
    key: dict = field(default_factory=dict)

    @property
    def subjects(self) -> list[tuple[str, int]]:
        return [(s, self.labels[s]) for s in self.energies]


def featurize_cohort(recordings: Sequence[Recording], config: PipelineConfig) -> FeatureTable:
    energies, labels = {}, {}
    for rec in recordings:
        mats = featurize_recording(rec, config)
        energies[rec.subject_id] = np.stack([m.values for m in mats])
        labels[rec.subject_id] = rec.label
    return FeatureTable(energies, labels, config.feature_key())


def save_features(path: str | Path, table: FeatureTable) -> None:
    arrays = {f"e:{sid}": e for sid, e in table.energies.items()}
    meta = {"labels": table.labels, "order": list(table.energies), "key": table.key}
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)
    os.replace(tmp, path)


def load_features(path: str | Path) -> FeatureTable:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        energies = {sid: data[f"e:{sid}"] for sid in meta["order"]}
    return FeatureTable(energies, {k: int(v) for k, v in meta["labels"].items()}, meta["key"])


def build_inputs(energies: np.ndarray, config: PipelineConfig, layout: ElectrodeLayout) -> tuple[np.ndarray, int]:
    """Classifier inputs for a stack of (n, 34, 5) energy matrices.

    CNN: (n, 34, 5, 1) for the concatenated model, (n, 15, 15, 5) for the grid.
    SVM/kNN: the same tensors flattened. Also returns the spline clamp count.
    """
    if config.model == "concat":
        x, clamped = energies[..., None], 0
    else:
        x, clamped = grid_batch(energies, layout, config.interp_method, config.d_max)
    if config.classifier != "cnn":
        x = x.reshape(len(x), -1)
    return x, clamped


# --------------------------------------------------------------------------
# Experiment

def _gather(table: FeatureTable, ids: Sequence[str]):
    x = np.concatenate([table.energies[s] for s in ids])
    y = np.concatenate([np.full(len(table.energies[s]), table.labels[s]) for s in ids])
    owner = np.concatenate([np.full(len(table.energies[s]), i) for i, s in enumerate(ids)])
    return x, y, owner


def _fit_predict(config: PipelineConfig, trial_seed: int, x_tr, y_tr, x_val, y_val, x_te) -> tuple[np.ndarray, dict]:
    stats = standardize_fit(x_tr.reshape(len(x_tr), -1))
    shape = x_tr.shape[1:]

    def scale(x):
        return stats.apply(x.reshape(len(x), -1)).reshape((len(x),) + shape)

    x_tr, x_val, x_te = scale(x_tr), scale(x_val), scale(x_te)
    info: dict = {}
    if config.classifier == "knn":
        return knn_predict(x_tr, y_tr, x_te, KnnConfig(config.knn_k)), info
    if config.classifier == "svm":
        best = None
        for c in config.svm_c:
            cfg = SvmConfig(config.svm_sigma, c, config.svm_tolerance, config.svm_max_passes, config.svm_gamma)
            model = svm_fit(x_tr, y_tr, cfg)
            acc = float((svm_predict(model, x_val) == y_val).mean()) if len(x_val) else 0.0
            if best is None or acc > best[0]:
                best = (acc, c, model)
        _, c, model = best
        info.update({"svm_c": c, "svm_converged": model.converged, "svm_iterations": model.iterations,
                     "n_support": int(model.support_x.shape[0])})
        return svm_predict(model, x_te), info
    dtype = np.dtype(config.cnn_dtype)
    arch = CnnArchitecture(tuple(int(d) for d in shape))
    net = cnn_init(arch, trial_seed, dtype)
    tcfg = TrainConfig(learning_rate=config.cnn_learning_rate, batch_size=config.cnn_batch_size,
                       max_epochs=config.cnn_max_epochs, patience=config.cnn_patience,
                       min_delta=config.cnn_min_delta, seed=trial_seed)
    net, hist = cnn_train(net, x_tr, y_tr, x_val, y_val, tcfg)
    info.update({"best_epoch": hist.best_epoch, "stopped_epoch": hist.stopped_epoch,
                 "best_val_loss": min(hist.val_loss)})
    proba = net.predict_proba(x_te.astype(dtype))
    return proba.argmax(axis=1).astype(np.int64), info


def run_experiment(cohort: Sequence[Recording] | FeatureTable, config: PipelineConfig,
                   layout: ElectrodeLayout | None = None, plan: FoldPlan | None = None) -> dict:
    """Cross-validate one (model, classifier, interpolation) configuration.

    Returns a JSON-ready report with per-trial and pooled confusion matrices and
    per-subject outcomes.
    """
    layout = layout or default_layout()
    table = cohort if isinstance(cohort, FeatureTable) else featurize_cohort(cohort, config)
    plan = plan or stratified_folds(table.subjects, config.folds, config.seed, config.val_fraction)
    plan.check_disjoint()
    trial_seeds = [int(s.generate_state(1, np.uint64)[0])
                   for s in np.random.SeedSequence(config.seed).spawn(len(plan.trials))]

    trials, outcomes = [], []
    pooled = ConfusionMatrix(0, 0, 0, 0)
    clamped_total = 0
    for trial in plan.trials:
        try:
            e_tr, y_tr, _ = _gather(table, trial.train)
            e_val, y_val, _ = _gather(table, trial.validation) if trial.validation else (e_tr[:0], y_tr[:0], None)
            e_te, y_te, owner = _gather(table, trial.test)
            x_tr, c1 = build_inputs(e_tr, config, layout)
            x_val, c2 = build_inputs(e_val, config, layout) if len(e_val) else (x_tr[:0], 0)
            x_te, c3 = build_inputs(e_te, config, layout)
            clamped_total += c1 + c2 + c3
            window_pred, info = _fit_predict(config, trial_seeds[trial.index], x_tr, y_tr, x_val, y_val, x_te)
        except NumericalError as exc:
            raise NumericalError(f"trial {trial.index} failed: {exc}") from exc
        except DataError as exc:
            raise DataError(f"trial {trial.index} failed: {exc}") from exc
        pairs = []
        for i, sid in enumerate(trial.test):
            agg = aggregate_subject(window_pred[owner == i], config.subject_threshold, sid)
            actual = table.labels[sid]
            pairs.append((actual, agg.prediction))
            outcomes.append({"subject_id": sid, "actual": actual, "p": agg.p, "t": agg.t, "x": agg.x,
                             "predicted": agg.prediction, "fold": trial.index})
        cm = compute_metrics(pairs)
        pooled = pooled + cm
        trials.append({"trial": trial.index, "test_subjects": list(trial.test),
                       "validation_subjects": list(trial.validation), "n_train_subjects": len(trial.train),
                       "n_train_windows": int(len(y_tr)), "n_val_windows": int(len(y_val)),
                       "n_test_windows": int(len(y_te)),
                       "window_accuracy": float((window_pred == y_te).mean()),
                       "confusion": cm.to_dict(), **info})
        log.info("trial %d: accuracy %.3f", trial.index, cm.accuracy)
    if pooled.total != len(table.energies):
        raise AssertionError("pooled confusion counts do not cover the cohort")
    row = {"model": config.model, "classifier": config.classifier,
           "interp_method": config.interp_method if config.model == "grid" else None,
           "d_max": config.d_max if config.model == "grid" else None,
           "window_stride": config.window_stride, "accuracy": pooled.accuracy,
           "accuracy_percent": pooled.percents()["accuracy"]}
    return {
        "config": config.to_dict(),
        "fingerprint": config.fingerprint(),
        "seed": config.seed,
        "cohort": {"n_subjects": len(table.energies),
                   "n_patients": sum(1 for v in table.labels.values() if v == 1),
                   "n_windows": int(sum(len(e) for e in table.energies.values()))},
        "band_order": list(BAND_NAMES),
        "interpolation_note": _interp_note(config),
        "spline_clamped_pixels": clamped_total,
        "trials": trials,
        "pooled": pooled.to_dict(),
        "table": [row],
        "subjects": sorted(outcomes, key=lambda r: r["subject_id"]),
    }


def _interp_note(config: PipelineConfig) -> str | None:
    if config.model != "grid":
        return None
    return {"idw_nn": "inverse distance weighting, nearest-electrode border fill",
            "idw_zero": "inverse distance weighting, zero border fill",
            "nearest": "nearest electrode",
            "linear_barycentric": "barycentric-linear over a Delaunay triangulation (bilinear analogue)",
            "cubic_spline": "thin-plate spline (cubic-spline analogue), clamped at zero"}[config.interp_method]


def compare_interpolation(cohort, config: PipelineConfig, methods: Sequence[str], d_max_values: Sequence[float],
                          layout: ElectrodeLayout | None = None) -> list[dict]:
    """One pooled-accuracy row per (method, d_max) under identical folds and seeds.
    d_max only varies the IDW methods; other methods get a single row."""
    if not methods:
        raise DataError("no interpolation methods given")
    table = cohort if isinstance(cohort, FeatureTable) else featurize_cohort(cohort, config)
    plan = stratified_folds(table.subjects, config.folds, config.seed, config.val_fraction)
    rows = []
    for method in methods:
        sweep = d_max_values if method.startswith("idw") else d_max_values[:1]
        for d in sweep:
            cfg = config.replace(model="grid", interp_method=method, d_max=float(d))
            report = run_experiment(table, cfg, layout, plan)
            rows.append(report["table"][0] | {"pooled": report["pooled"]})
    return rows


def stride_values(window_size: int) -> list[int]:
    """N/4, N/2, N and 3N/2."""
    return [window_size // 4, window_size // 2, window_size, 3 * window_size // 2]


def compare_strides(recordings: Sequence[Recording], config: PipelineConfig,
                    layout: ElectrodeLayout | None = None,
                    featurize: Callable[[Sequence[Recording], PipelineConfig], FeatureTable] = featurize_cohort
                    ) -> list[dict]:
    """Cross-validate at each stride with the same subject folds."""
    rows, plan = [], None
    for stride in stride_values(config.window_size):
        cfg = config.replace(window_stride=stride)
        table = featurize(recordings, cfg)
        plan = plan or stratified_folds(table.subjects, cfg.folds, cfg.seed, cfg.val_fraction)
        report = run_experiment(table, cfg, layout, plan)
        rows.append(report["table"][0] | {"n_windows": report["cohort"]["n_windows"], "pooled": report["pooled"]})
    return rows


# --------------------------------------------------------------------------
# Output

def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def subjects_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["subject_id", "actual", "p", "t", "x", "predicted", "fold"])
    for r in report["subjects"]:
        w.writerow([r["subject_id"], r["actual"], r["p"], r["t"], repr(r["x"]), r["predicted"], r["fold"]])
    return buf.getvalue()


def atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_report(out_dir: str | Path, report: dict, stem: str = "report") -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    rpath, cpath = out_dir / f"{stem}.json", out_dir / f"{stem}_subjects.csv"
    atomic_write(rpath, report_json(report))
    atomic_write(cpath, subjects_csv(report))
    return rpath, cpath


def table_fingerprint(rows: list[dict]) -> str:
    return fingerprint(rows)
