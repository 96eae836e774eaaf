"""Progression-space factorizations: NMF (primary), PCA and FastICA.

All three produce ``X ~ coords @ loadings`` (PCA/ICA after centering),
with latent dimensions ranked by the share of total variance each rank-1
term carries.
"""

from __future__ import annotations

import csv
import fnmatch
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy.optimize import linear_sum_assignment

from .cohort import FeatureMatrix, split_feature
from .errors import NumericError, PreconditionError, SchemaError, ValidationError
from .seeding import derive_seed

log = logging.getLogger(__name__)

METHODS = ("nmf", "pca", "ica")
_TINY = 1e-300
# monotonicity slack for the NMF objective, relative to its magnitude
_DESCENT_SLACK = 1e-10


@dataclass(frozen=True)
class ProgressionSpace:
    method: str
    rank: int
    patient_coords: np.ndarray
    loadings: np.ndarray
    feature_names: tuple[str, ...]
    dimension_order: tuple[int, ...] = ()
    dimension_names: tuple[str, ...] = ()
    explained: tuple[float, ...] = ()
    center: np.ndarray | None = None
    projection: np.ndarray | None = None
    patient_ids: tuple[str, ...] = ()
    normalization: dict = field(default_factory=dict)
    fit_report: dict = field(default_factory=dict)

    def ordered_coords(self, coords: np.ndarray | None = None) -> np.ndarray:
        c = self.patient_coords if coords is None else coords
        order = list(self.dimension_order) or list(range(self.rank))
        return c[:, order]

    def ordered_names(self) -> list[str]:
        order = list(self.dimension_order) or list(range(self.rank))
        names = list(self.dimension_names) or [f"dim{k + 1}" for k in range(self.rank)]
        return [names[k] for k in order]

    def to_json(self) -> str:
        doc = {
            "method": self.method,
            "rank": self.rank,
            "feature_names": list(self.feature_names),
            "patient_ids": list(self.patient_ids),
            "normalization": self.normalization,
            "W": self.patient_coords.tolist(),
            "H": self.loadings.tolist(),
            "center": None if self.center is None else self.center.tolist(),
            "projection": None if self.projection is None else self.projection.tolist(),
            "dimension_order": list(self.dimension_order),
            "dimension_names": list(self.dimension_names),
            "explained_variance": list(self.explained),
            "fit_report": self.fit_report,
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ProgressionSpace":
        d = json.loads(text)
        rank = int(d["rank"])
        arr = lambda v, cols: np.asarray(v, dtype=float).reshape(-1, cols)  # noqa: E731
        nfeat = len(d["feature_names"])
        return cls(
            method=d["method"],
            rank=rank,
            patient_coords=arr(d["W"], rank),
            loadings=arr(d["H"], nfeat),
            feature_names=tuple(d["feature_names"]),
            dimension_order=tuple(d["dimension_order"]),
            dimension_names=tuple(d["dimension_names"]),
            explained=tuple(d["explained_variance"]),
            center=None if d["center"] is None else np.asarray(d["center"], dtype=float),
            projection=None if d["projection"] is None else arr(d["projection"], nfeat),
            patient_ids=tuple(d["patient_ids"]),
            normalization=d["normalization"],
            fit_report=d["fit_report"],
        )


def _check_rank(x: np.ndarray, rank: int) -> None:
    if rank < 1 or rank > min(x.shape):
        raise ValidationError(f"rank {rank} outside [1, {min(x.shape)}] for a {x.shape} matrix")


def _as_array(m) -> np.ndarray:
    return np.asarray(m.values if isinstance(m, FeatureMatrix) else m, dtype=float)


def _norm_meta(m) -> dict:
    if not isinstance(m, FeatureMatrix):
        return {}
    return {"method": m.normalization, "feature_names": list(m.feature_names), "params": m.norm_params}


def _names(m, x) -> tuple[str, ...]:
    if isinstance(m, FeatureMatrix):
        return m.feature_names
    return tuple(f"f{j}" for j in range(x.shape[1]))


def _ids(m) -> tuple[str, ...]:
    return m.patient_ids if isinstance(m, FeatureMatrix) else ()


# ---------------------------------------------------------------- NMF


def frobenius(x, w, h) -> float:
    r = x - w @ h
    return float(np.einsum("ij,ij->", r, r))


def _update_h(x, w, h):
    return h * (w.T @ x) / np.maximum(w.T @ w @ h, _TINY)


def _update_w(x, w, h):
    return w * (x @ h.T) / np.maximum(w @ (h @ h.T), _TINY)


def _nmf_run(x, rank, max_iter, tol, rng):
    scale = np.sqrt(x.mean() / rank)
    w = scale * rng.random((x.shape[0], rank))
    h = scale * rng.random((rank, x.shape[1]))
    obj = frobenius(x, w, h)
    history = [obj]
    converged = False
    for _ in range(max_iter):
        h = _update_h(x, w, h)
        w = _update_w(x, w, h)
        new = frobenius(x, w, h)
        if new > obj + _DESCENT_SLACK * max(obj, 1.0):
            raise NumericError(f"NMF objective increased from {obj!r} to {new!r}")
        if w.min() < 0 or h.min() < 0:
            raise NumericError("NMF factor left the nonnegative orthant")
        history.append(new)
        done = obj == 0 or (obj - new) / obj < tol
        obj = new
        if done:
            converged = True
            break
    return w, h, history, converged


def solve_coords(x, h, w0=None, max_iter=200000, tol=1e-13):
    """Nonnegative least squares for W with H frozen, via multiplicative updates.

    Iterates until the largest entrywise change in W falls below ``tol``
    (relative to the largest coordinate); the objective is strictly convex
    in W when H has full row rank, so every start reaches the same point.
    """
    x = np.asarray(x, dtype=float)
    if w0 is None:
        w = np.full((x.shape[0], h.shape[0]), max(np.sqrt(max(x.mean(), 0.0) / h.shape[0]), 1e-3))
    else:
        w = np.array(w0, dtype=float)
    hht = h @ h.T
    xht = x @ h.T
    for _ in range(max_iter):
        w_new = w * xht / np.maximum(w @ hht, _TINY)
        step = np.max(np.abs(w_new - w)) if w.size else 0.0
        w = w_new
        if step <= tol * max(1.0, float(np.max(w)) if w.size else 0.0):
            break
    return w


def fit_nmf(
    m: FeatureMatrix | np.ndarray,
    rank: int = 3,
    max_iter: int = 2000,
    tol: float = 1e-6,
    seed: int = 0,
    n_restarts: int = 5,
) -> ProgressionSpace:
    """Lee-Seung multiplicative-update NMF, best of ``n_restarts`` by objective.

    Coordinates of the winning restart are refined with H frozen so that
    projecting the training matrix reproduces them.
    """
    x = _as_array(m)
    if isinstance(m, FeatureMatrix) and m.normalization not in ("minmax", "raw"):
        raise PreconditionError(f"NMF needs a nonnegative (minmax) matrix, got {m.normalization}")
    if x.size and x.min() < 0:
        raise PreconditionError("NMF input has negative entries")
    _check_rank(x, rank)
    best = None
    for r in range(n_restarts):
        rng = np.random.default_rng(derive_seed(seed, "nmf", r))
        w, h, hist, conv = _nmf_run(x, rank, max_iter, tol, rng)
        if best is None or hist[-1] < best[2][-1]:
            best = (w, h, hist, conv, r)
    w, h, hist, conv, r = best
    w = solve_coords(x, h, w0=w)
    report = {
        "iterations": len(hist) - 1,
        "objective": frobenius(x, w, h),
        "converged": bool(conv),
        "restart": r,
        "n_restarts": n_restarts,
        "objective_history": hist,
    }
    space = ProgressionSpace(
        method="nmf",
        rank=rank,
        patient_coords=w,
        loadings=h,
        feature_names=_names(m, x),
        center=np.zeros(x.shape[1]),
        patient_ids=_ids(m),
        normalization=_norm_meta(m),
        fit_report=report,
    )
    return _with_variance(space, x)


# ---------------------------------------------------------------- PCA


def _sign_fix(directions: np.ndarray) -> np.ndarray:
    """Flip each row so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(directions), axis=1)
    signs = np.sign(directions[np.arange(len(directions)), idx])
    signs[signs == 0] = 1.0
    return directions * signs[:, None]


def fit_pca(m: FeatureMatrix | np.ndarray, rank: int = 3) -> ProgressionSpace:
    x = _as_array(m)
    _check_rank(x, rank)
    mean = x.mean(axis=0)
    xc = x - mean
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    comps = _sign_fix(vt[:rank])
    scores = xc @ comps.T
    var = s**2 / x.shape[0]
    report = {
        "iterations": 0,
        "objective": float(np.sum((xc - scores @ comps) ** 2)),
        "converged": True,
        "eigenvalues": var[:rank].tolist(),
    }
    space = ProgressionSpace(
        method="pca",
        rank=rank,
        patient_coords=scores,
        loadings=comps,
        feature_names=_names(m, x),
        center=mean,
        projection=comps,
        patient_ids=_ids(m),
        normalization=_norm_meta(m),
        fit_report=report,
    )
    return _with_variance(space, x)


# ---------------------------------------------------------------- FastICA


def _sym_decorrelate(w):
    s, u = np.linalg.eigh(w @ w.T)
    s = np.clip(s, _TINY, None)
    return (u * (1.0 / np.sqrt(s))) @ u.T @ w


def fit_ica(
    m: FeatureMatrix | np.ndarray,
    rank: int = 3,
    max_iter: int = 500,
    tol: float = 1e-6,
    seed: int = 0,
) -> ProgressionSpace:
    """Symmetric FastICA with the log-cosh contrast on PCA-whitened data."""
    x = _as_array(m)
    _check_rank(x, rank)
    n = x.shape[0]
    mean = x.mean(axis=0)
    xc = x - mean
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    var = s[:rank] ** 2 / n
    if np.any(var <= 1e-12 * max(var.max(), 1e-300)):
        raise NumericError("data has fewer than rank non-degenerate directions; cannot whiten")
    whitening = vt[:rank] / np.sqrt(var)[:, None]
    z = xc @ whitening.T

    rng = np.random.default_rng(derive_seed(seed, "ica"))
    w = _sym_decorrelate(rng.standard_normal((rank, rank)))
    converged = False
    it = 0
    change = np.inf
    for it in range(1, max_iter + 1):
        y = z @ w.T
        g = np.tanh(y)
        gp = 1.0 - g**2
        w_new = _sym_decorrelate(g.T @ z / n - gp.mean(axis=0)[:, None] * w)
        change = float(np.max(np.abs(np.abs(np.einsum("ij,ij->i", w_new, w)) - 1.0)))
        w = w_new
        if change < tol:
            converged = True
            break
    if not converged:
        log.warning("FastICA did not converge in %d iterations (change %.3g)", max_iter, change)

    unmix = w @ whitening
    mixing = w @ (vt[:rank] * np.sqrt(var)[:, None])
    # orient each component so its dominant loading is positive
    idx = np.argmax(np.abs(mixing), axis=1)
    signs = np.sign(mixing[np.arange(rank), idx])
    signs[signs == 0] = 1.0
    unmix = unmix * signs[:, None]
    mixing = mixing * signs[:, None]
    sources = xc @ unmix.T
    report = {
        "iterations": it,
        "objective": float(np.sum((xc - sources @ mixing) ** 2)),
        "converged": converged,
        "last_change": change,
        "unmixing": (w * signs[:, None]).tolist(),
    }
    space = ProgressionSpace(
        method="ica",
        rank=rank,
        patient_coords=sources,
        loadings=mixing,
        feature_names=_names(m, x),
        center=mean,
        projection=unmix,
        patient_ids=_ids(m),
        normalization=_norm_meta(m),
        fit_report=report,
    )
    return _with_variance(space, x)


# ---------------------------------------------------------------- shared


def fit(m, method: str = "nmf", rank: int = 3, max_iter: int = 2000, tol: float = 1e-6, seed: int = 0,
        n_restarts: int = 5) -> ProgressionSpace:
    if method == "nmf":
        return fit_nmf(m, rank, max_iter, tol, seed, n_restarts)
    if method == "pca":
        return fit_pca(m, rank)
    if method == "ica":
        return fit_ica(m, rank, max_iter, tol, seed)
    raise ValidationError(f"unknown dimensionality-reduction method {method!r}")


def _aligned(space: ProgressionSpace, m) -> np.ndarray:
    if isinstance(m, FeatureMatrix):
        if set(m.feature_names) != set(space.feature_names):
            extra = sorted(set(m.feature_names) - set(space.feature_names))[:3]
            lack = sorted(set(space.feature_names) - set(m.feature_names))[:3]
            raise SchemaError(f"feature names differ from the fitted space (extra {extra}, missing {lack})")
        pos = {n: j for j, n in enumerate(m.feature_names)}
        return m.values[:, [pos[n] for n in space.feature_names]]
    x = np.asarray(m, dtype=float)
    if x.ndim != 2 or x.shape[1] != len(space.feature_names):
        raise SchemaError(f"expected {len(space.feature_names)} columns")
    return x


def project(space: ProgressionSpace, m: FeatureMatrix | np.ndarray) -> np.ndarray:
    """Map patients into a fitted space; columns are matched by feature name."""
    x = _aligned(space, m)
    if space.method == "nmf":
        # held-out minmax values may leave [0, 1] slightly; negatives have no NMF meaning
        return solve_coords(np.clip(x, 0.0, None), space.loadings)
    return (x - space.center) @ space.projection.T


def explained_variance(space: ProgressionSpace, m: FeatureMatrix | np.ndarray, coords=None) -> np.ndarray:
    """Share of total column variance carried by each rank-1 term coords_k * loadings_k."""
    x = _aligned(space, m)
    total = x.var(axis=0).sum()
    if total == 0:
        return np.zeros(space.rank)
    if coords is None:
        coords = project(space, x)
    per = coords.var(axis=0) * np.sum(space.loadings**2, axis=1)
    return np.clip(per / total, 0.0, 1.0)


def _with_variance(space: ProgressionSpace, x: np.ndarray) -> ProgressionSpace:
    shares = explained_variance(space, x, coords=space.patient_coords)
    order = tuple(int(k) for k in np.argsort(-shares, kind="stable"))
    return replace(space, explained=tuple(float(s) for s in shares), dimension_order=order)


def name_dimensions(space: ProgressionSpace, families: Mapping[str, str]) -> ProgressionSpace:
    """Label each latent dimension by the code family dominating its loadings.

    ``families`` maps glob patterns (or exact codes) to family names. The
    dimension/family pairing maximizes total loading mass, so names are
    distinct whenever there are at least as many families as dimensions.
    """
    if not families:
        return space
    fams = list(dict.fromkeys(families.values()))
    mass = np.zeros((space.rank, len(fams)))
    for j, name in enumerate(space.feature_names):
        code = split_feature(name)[0] if "@" in name else name
        fam = next((f for pat, f in families.items() if fnmatch.fnmatchcase(code, pat)), None)
        if fam is not None:
            mass[:, fams.index(fam)] += np.abs(space.loadings[:, j])
    if not mass.any():
        log.warning("no feature matched the dimension-family map; dimensions left unnamed")
        return space
    share = mass / np.maximum(mass.sum(axis=1, keepdims=True), _TINY)
    rows, cols = linear_sum_assignment(-share)
    names = [f"dim{k + 1}" for k in range(space.rank)]
    for r, c in zip(rows, cols):
        names[r] = fams[c]
    return replace(space, dimension_names=tuple(names))


def write_coords(space: ProgressionSpace, coords: np.ndarray, patient_ids, stream) -> None:
    """CSV ``patient_id,dim1..dimK`` with dim1 the highest-variance dimension."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["patient_id"] + [f"dim{k + 1}" for k in range(space.rank)])
    for pid, row in zip(patient_ids, space.ordered_coords(coords)):
        w.writerow([pid] + [repr(float(v)) for v in row])


def combined_2d(space: ProgressionSpace, coords: np.ndarray | None = None) -> np.ndarray:
    """Two-column view: the motor dimension, and the sum of all the others.

    Without a dimension named ``motor`` the highest-variance dimension
    takes its place.
    """
    c = space.patient_coords if coords is None else np.asarray(coords)
    if "motor" in space.dimension_names:
        lead = space.dimension_names.index("motor")
    else:
        lead = space.dimension_order[0] if space.dimension_order else 0
    rest = [k for k in range(space.rank) if k != lead]
    return np.column_stack([c[:, lead], c[:, rest].sum(axis=1) if rest else np.zeros(len(c))])
