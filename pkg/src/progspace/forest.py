"""Random forest of CART trees for subtype prediction.

Per-tree randomness (bootstrap draw and per-node feature sampling) comes
from ``derive_seed(seed, tree_index)``, so a forest is reproducible tree by
tree regardless of the order trees are grown in.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _cart
from .errors import SchemaError, ValidationError
from .seeding import derive_seed

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 500
    max_depth: int | None = None
    min_samples_leaf: int = 1
    mtry: int | None = None  # None -> ceil(sqrt(p))
    bootstrap: bool = True
    seed: int = 0
    class_weight: dict | None = None

    def resolved_mtry(self, p: int) -> int:
        m = self.mtry if self.mtry is not None else math.ceil(math.sqrt(p))
        if not 1 <= m <= p:
            raise ValidationError(f"mtry={m} must lie in [1, {p}]")
        return m


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray
    decrease: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return _cart.apply_tree(self.feature, self.threshold, self.left, self.right, x)

    def proba(self, x: np.ndarray) -> np.ndarray:
        c = self.counts[self.apply(x)]
        return c / c.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[Tree, ...]
    classes: tuple
    feature_names: tuple[str, ...]
    importances: np.ndarray
    oob_error: float | None = None
    params: ForestParams = field(default_factory=ForestParams)

    def to_json(self) -> str:
        doc = {
            "classes": list(self.classes),
            "feature_names": list(self.feature_names),
            "oob_error": self.oob_error,
            "importances": self.importances.tolist(),
            "params": {
                "n_trees": self.params.n_trees,
                "max_depth": self.params.max_depth,
                "min_samples_leaf": self.params.min_samples_leaf,
                "mtry": self.params.mtry,
                "bootstrap": self.params.bootstrap,
                "seed": self.params.seed,
                "class_weight": self.params.class_weight,
            },
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": t.threshold.tolist(),
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "counts": t.counts.tolist(),
                    "decrease": t.decrease.tolist(),
                }
                for t in self.trees
            ],
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ForestModel":
        d = json.loads(text)
        nc = len(d["classes"])
        trees = tuple(
            Tree(
                feature=np.asarray(t["feature"], dtype=np.int64),
                threshold=np.asarray(t["threshold"], dtype=float),
                left=np.asarray(t["left"], dtype=np.int64),
                right=np.asarray(t["right"], dtype=np.int64),
                counts=np.asarray(t["counts"], dtype=float).reshape(-1, nc),
                decrease=np.asarray(t["decrease"], dtype=float),
            )
            for t in d["trees"]
        )
        return cls(
            trees=trees,
            classes=tuple(d["classes"]),
            feature_names=tuple(d["feature_names"]),
            importances=np.asarray(d["importances"], dtype=float),
            oob_error=d["oob_error"],
            params=ForestParams(**d["params"]),
        )


def gini(counts) -> float:
    c = np.asarray(counts, dtype=float)
    if np.any(c < 0):
        raise ValidationError("class counts must be non-negative")
    n = c.sum()
    if n <= 0:
        raise ValidationError("gini of an empty node is undefined")
    return float(1.0 - np.sum((c / n) ** 2))


def _check_features(x) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=float)
    if x.ndim != 2:
        raise ValidationError("features must be a patients x p matrix")
    if not np.all(np.isfinite(x)):
        raise ValidationError("features contain non-finite values")
    return x


def train_forest(features, labels, params: ForestParams = ForestParams(), feature_names=None) -> ForestModel:
    x = _check_features(features)
    labels = [v.item() if isinstance(v, np.generic) else v for v in labels]
    if len(labels) != len(x):
        raise ValidationError("labels do not align with feature rows")
    classes = tuple(sorted(set(labels)))
    if len(classes) < 2:
        raise ValidationError("training needs at least two distinct labels")
    if params.n_trees < 1 or params.min_samples_leaf < 1:
        raise ValidationError("n_trees and min_samples_leaf must be >= 1")
    n, p = x.shape
    mtry = params.resolved_mtry(p)
    cls_index = {c: i for i, c in enumerate(classes)}
    y = np.array([cls_index[v] for v in labels], dtype=np.int64)
    cw = np.ones(len(classes))
    if params.class_weight:
        for c, wgt in params.class_weight.items():
            if c in cls_index:
                cw[cls_index[c]] = float(wgt)
    names = tuple(feature_names) if feature_names is not None else tuple(f"f{j}" for j in range(p))
    if len(names) != p:
        raise ValidationError("feature_names length differs from feature count")
    max_depth = -1 if params.max_depth is None else int(params.max_depth)

    trees = []
    oob_sum = np.zeros((n, len(classes)))
    oob_hits = np.zeros(n, dtype=int)
    for t in range(params.n_trees):
        tree_seed = derive_seed(params.seed, "tree", t)
        if params.bootstrap:
            rng = np.random.default_rng(tree_seed)
            w = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(float)
        else:
            w = np.ones(n)
        arrays = _cart.build_tree(
            x, y, w, cw, len(classes), mtry, max_depth, params.min_samples_leaf, tree_seed & 0xFFFFFFFF
        )
        tree = Tree(*arrays)
        trees.append(tree)
        if params.bootstrap:
            out = w == 0
            if out.any():
                oob_sum[out] += tree.proba(x[out])
                oob_hits[out] += 1

    oob_error = None
    if params.bootstrap and oob_hits.any():
        seen = oob_hits > 0
        pred = np.argmax(oob_sum[seen], axis=1)
        oob_error = float(np.mean(pred != y[seen]))

    imp = np.zeros(p)
    for tree in trees:
        split = tree.feature >= 0
        np.add.at(imp, tree.feature[split], tree.decrease[split])
    imp /= params.n_trees
    total = imp.sum()
    if total > 0:
        imp = imp / total
    else:
        log.warning("no tree made a split; feature importances are all zero")
    return ForestModel(tuple(trees), classes, names, imp, oob_error, params)


def predict_proba(model: ForestModel, features) -> np.ndarray:
    x = _check_features(features)
    if x.shape[1] != len(model.feature_names):
        raise SchemaError(f"expected {len(model.feature_names)} features, got {x.shape[1]}")
    out = np.zeros((len(x), len(model.classes)))
    for tree in model.trees:
        out += tree.proba(x)
    out /= len(model.trees)
    # renormalize away accumulated rounding so rows sum to 1 to machine precision
    return out / out.sum(axis=1, keepdims=True)


def predict(model: ForestModel, features) -> list:
    proba = predict_proba(model, features)
    return [model.classes[i] for i in np.argmax(proba, axis=1)]


def feature_importance(model: ForestModel) -> list[tuple[str, float]]:
    """(feature, importance) pairs, descending; ties keep feature order."""
    order = np.argsort(-model.importances, kind="stable")
    return [(model.feature_names[j], float(model.importances[j])) for j in order]


def write_importances(model: ForestModel, stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(("feature", "importance"))
    for name, value in feature_importance(model):
        w.writerow((name, repr(value)))
