"""Cross-validation, ROC/AUC, partition agreement and external replication."""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import cohort, dimred, forest, mixture
from .errors import SchemaError, ValidationError
from .seeding import derive_seed

log = logging.getLogger(__name__)

WINDOWS = {"baseline": (0,), "baseline+12m": (0, 12), "baseline+12m+24m": (0, 12, 24)}


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def write_csv(self, stream) -> None:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(("fpr", "tpr", "threshold"))
        for f, t, th in zip(self.fpr, self.tpr, self.thresholds):
            w.writerow((repr(float(f)), repr(float(t)), repr(float(th))))


@dataclass(frozen=True)
class CvReport:
    classes: tuple
    per_class_auc: dict
    macro_auc: float
    fold_auc: list
    confusion: np.ndarray
    precision: dict
    recall: dict
    folds: np.ndarray
    probabilities: np.ndarray
    rocs: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "per_class_auc": self.per_class_auc,
            "macro_auc": self.macro_auc,
            "fold_auc": self.fold_auc,
            "confusion_matrix": self.confusion.tolist(),
            "precision": self.precision,
            "recall": self.recall,
            "fold_sizes": np.bincount(self.folds).tolist(),
            "folds": self.folds.tolist(),
        }


def stratified_kfold(labels, k: int = 5, seed: int = 0) -> np.ndarray:
    """Fold index per sample: seeded shuffle within class, then round-robin.

    The round-robin position carries over from one class to the next so
    overall fold sizes differ by at most one.
    """
    labels = list(labels)
    if k < 2:
        raise ValidationError("stratified k-fold needs k >= 2")
    counts = Counter(labels)
    small = sorted((c for c, n in counts.items() if n < k), key=str)
    if small:
        raise ValidationError(f"class {small[0]!r} has {counts[small[0]]} members, fewer than k={k}")
    rng = np.random.default_rng(derive_seed(seed, "kfold"))
    folds = np.empty(len(labels), dtype=int)
    pos = 0
    for c in sorted(counts, key=str):
        members = np.flatnonzero([lab == c for lab in labels])
        members = members[rng.permutation(len(members))]
        for i in members:
            folds[i] = pos % k
            pos += 1
    return folds


def roc_curve(scores, labels) -> RocCurve:
    """Threshold sweep over distinct scores; tied scores move together."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValidationError("scores and labels must be equal-length vectors")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("ROC needs both positive and negative samples")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tps = np.cumsum(y)[last]
    fps = (last + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    thresholds = np.r_[np.inf, s[last]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds, auc)


def macro_ovr_auc(probabilities, labels, classes) -> tuple[dict, float, dict]:
    """Per-class one-vs-rest AUC, their unweighted mean, and the curves.

    Classes absent from ``labels`` (or covering every sample) map to None
    and are left out of the mean.
    """
    prob = np.asarray(probabilities, dtype=float)
    labels = np.asarray(list(labels), dtype=object)
    if len(set(labels.tolist())) < 2:
        raise ValidationError("macro AUC needs at least two classes present")
    per, rocs = {}, {}
    for j, c in enumerate(classes):
        pos = labels == c
        if not pos.any() or pos.all():
            log.warning("class %s absent from labels; AUC undefined", c)
            per[str(c)] = None
            continue
        roc = roc_curve(prob[:, j], pos)
        per[str(c)] = roc.auc
        rocs[str(c)] = roc
    defined = [v for v in per.values() if v is not None]
    return per, float(np.mean(defined)), rocs


def adjusted_rand_index(a, b) -> float:
    a, b = list(a), list(b)
    if len(a) != len(b):
        raise ValidationError("partitions have different sizes")
    n = len(a)
    if n < 2:
        return 1.0
    _, ai = np.unique(np.asarray(a, dtype=object).astype(str), return_inverse=True)
    _, bi = np.unique(np.asarray(b, dtype=object).astype(str), return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)
    comb = lambda v: v * (v - 1) / 2.0  # noqa: E731
    index = comb(table).sum()
    rows = comb(table.sum(axis=1)).sum()
    cols = comb(table.sum(axis=0)).sum()
    expected = rows * cols / comb(n)
    top = (rows + cols) / 2.0
    if top == expected:
        return 1.0
    return float((index - expected) / (top - expected))


def cross_validate(matrix, labels, params: forest.ForestParams = forest.ForestParams(), k: int = 5,
                   seed: int = 0, feature_names=None) -> CvReport:
    if isinstance(matrix, cohort.FeatureMatrix):
        feature_names = matrix.feature_names
        x = matrix.values
    else:
        x = np.asarray(matrix, dtype=float)
    labels = list(labels)
    folds = stratified_kfold(labels, k, seed)
    classes = tuple(sorted(set(labels)))
    prob = np.zeros((len(labels), len(classes)))
    fold_auc = []
    lab = np.asarray(labels, dtype=object)
    for f in range(k):
        test = folds == f
        fparams = forest.ForestParams(
            n_trees=params.n_trees,
            max_depth=params.max_depth,
            min_samples_leaf=params.min_samples_leaf,
            mtry=params.mtry,
            bootstrap=params.bootstrap,
            seed=derive_seed(seed, "cv-forest", f),
            class_weight=params.class_weight,
        )
        try:
            model = forest.train_forest(x[~test], lab[~test], fparams, feature_names)
        except ValidationError as exc:
            raise ValidationError(f"fold {f}: {exc}") from exc
        p = forest.predict_proba(model, x[test])
        # align to the full class list; a training fold cannot lack a class under stratification
        cols = [model.classes.index(c) for c in classes]
        prob[test] = p[:, cols]
        try:
            fold_auc.append(macro_ovr_auc(prob[test], lab[test], classes)[0])
        except ValidationError:
            fold_auc.append(None)
    per, macro, rocs = macro_ovr_auc(prob, labels, classes)
    pred = np.argmax(prob, axis=1)
    truth = np.array([classes.index(v) for v in labels])
    conf = np.zeros((len(classes), len(classes)), dtype=int)
    np.add.at(conf, (truth, pred), 1)
    precision, recall = {}, {}
    for j, c in enumerate(classes):
        col, row = conf[:, j].sum(), conf[j].sum()
        precision[str(c)] = float(conf[j, j] / col) if col else None
        recall[str(c)] = float(conf[j, j] / row) if row else None
    return CvReport(classes, per, macro, fold_auc, conf, precision, recall, folds, prob, rocs)


def window_matrix(m: cohort.FeatureMatrix, months) -> cohort.FeatureMatrix:
    sub = m.months(months)
    if not sub.feature_names:
        raise ValidationError(f"window {tuple(months)} selects no feature columns")
    return sub


def windowed_experiment(m: cohort.FeatureMatrix, labels, params: forest.ForestParams = forest.ForestParams(),
                        windows: dict | None = None, k: int = 5, seed: int = 0) -> dict[str, CvReport]:
    """Cross-validate one forest per input window of visit months."""
    windows = WINDOWS if windows is None else windows
    out = {}
    for name, months in windows.items():
        out[name] = cross_validate(window_matrix(m, months), labels, params, k, seed)
    return out


def gmm_view(space: dimred.ProgressionSpace, coords: np.ndarray, view: str = "full") -> np.ndarray:
    if view == "full":
        return coords
    if view == "2d":
        return dimred.combined_2d(space, coords)
    raise ValidationError(f"unknown GMM view {view!r}")


def external_replication(
    space: dimred.ProgressionSpace,
    gmm: mixture.GmmModel,
    model: forest.ForestModel,
    external: cohort.VisitTable,
    *,
    cohorts=("PD",),
    view: str = "full",
) -> tuple[dict, mixture.SubtypeAssignment]:
    """Score a trained pipeline on an independent cohort.

    The external cohort is imputed on its own, aligned to the training
    features (codes it lacks take the training medians), normalized with
    the training parameters and projected into the fitted space. GMM
    subtypes assigned there serve as labels for the trained forest.
    """
    if external.n_patients == 0:
        raise SchemaError("external cohort has no patients")
    train_codes = {cohort.split_feature(n)[0] for n in space.feature_names}
    shared = train_codes & set(external.assessment_codes)
    if not shared:
        raise SchemaError(
            f"no assessment codes shared with the training cohort "
            f"(training has {len(train_codes)}, external has {len(external.assessment_codes)})"
        )
    missing_codes = sorted(train_codes - shared)
    table = cohort.impute(cohort.VisitTable(
        tuple(o for o in external.observations if o.assessment_code in shared),
        external.schedule,
        tuple(c for c in external.assessment_codes if c in shared),
    ))
    raw = cohort.vectorize(table)
    norm = space.normalization
    names = list(norm.get("feature_names") or space.feature_names)
    fill = norm.get("fill_values") or {}
    present = set(raw.feature_names)
    values = np.empty((raw.values.shape[0], len(names)))
    pos = {n: j for j, n in enumerate(raw.feature_names)}
    filled = []
    for j, name in enumerate(names):
        if name in present:
            values[:, j] = raw.values[:, pos[name]]
        elif name in fill:
            values[:, j] = fill[name]
            filled.append(name)
        else:
            raise SchemaError(f"external cohort lacks feature {name} and no training fill value is stored")
    aligned = cohort.FeatureMatrix(raw.patient_ids, tuple(names), values, cohort_labels=raw.cohort_labels)
    normed = cohort.apply_normalization(aligned, {
        "method": norm.get("method", "raw"), "feature_names": names, "params": norm.get("params", {}),
    })

    keep = np.array([lab in set(cohorts) for lab in normed.cohort_labels])
    if not keep.any():
        raise SchemaError(f"external cohort has no patients in cohorts {list(cohorts)}")
    target = normed.rows(keep)
    coords = dimred.project(space, target)
    assignment = mixture.assign_subtypes(gmm, gmm_view(space, coords, view), target.patient_ids)

    feats = target.columns(list(model.feature_names)).values
    prob = forest.predict_proba(model, feats)
    labels = list(assignment.labels)
    counts = Counter(labels)
    n = len(labels)
    balance = {c: counts.get(c, 0) / n for c in model.classes}
    report = {
        "n_patients": external.n_patients,
        "n_scored": n,
        "shared_codes": sorted(shared),
        "missing_codes": missing_codes,
        "filled_features": len(filled),
        "class_counts": {c: counts.get(c, 0) for c in model.classes},
        "class_balance": balance,
        "imbalanced": any(v < 0.10 for v in balance.values()),
    }
    if len(counts) >= 2:
        per, macro, _ = macro_ovr_auc(prob, labels, model.classes)
        report["per_class_auc"] = per
        report["macro_auc"] = macro
    else:
        log.warning("external cohort maps to a single subtype; AUC undefined")
        report["per_class_auc"] = {str(c): None for c in model.classes}
        report["macro_auc"] = None
    pred = [model.classes[i] for i in np.argmax(prob, axis=1)]
    report["accuracy"] = float(np.mean([a == b for a, b in zip(pred, labels)]))
    return report, assignment
