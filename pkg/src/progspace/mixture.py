"""Gaussian mixture subtyping in the progression space.

EM with full covariances, k-means++ initialisation, BIC model-order
selection, and subtype labels PDVec1..PDVecK ordered by how far each
component mean sits from the origin (larger coordinates = more decline).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ProgspaceError, ValidationError
from .seeding import derive_seed

log = logging.getLogger(__name__)

REG_FLOOR = 1e-6
# allowed per-iteration log-likelihood decrease, relative to max(|logL|, 1)
MONOTONE_SLACK = 1e-9
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihood: float = float("nan")
    n_iter: int = 0
    converged: bool = False
    subtype_order: tuple[int, ...] = ()
    reg_floor: float = REG_FLOOR
    history: tuple[float, ...] = ()

    @property
    def k(self) -> int:
        return len(self.weights)

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @property
    def n_params(self) -> int:
        return n_parameters(self.k, self.d)

    def to_json(self) -> str:
        return json.dumps(
            {
                "k": self.k,
                "d": self.d,
                "weights": self.weights.tolist(),
                "means": self.means.tolist(),
                "covariances": self.covariances.tolist(),
                "subtype_order": list(self.subtype_order),
                "fit_report": {
                    "log_likelihood": self.log_likelihood,
                    "n_iter": self.n_iter,
                    "converged": self.converged,
                    "reg_floor": self.reg_floor,
                    "history": list(self.history),
                },
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "GmmModel":
        d = json.loads(text)
        rep = d["fit_report"]
        k, dim = d["k"], d["d"]
        return cls(
            weights=np.asarray(d["weights"], dtype=float),
            means=np.asarray(d["means"], dtype=float).reshape(k, dim),
            covariances=np.asarray(d["covariances"], dtype=float).reshape(k, dim, dim),
            log_likelihood=rep["log_likelihood"],
            n_iter=rep["n_iter"],
            converged=rep["converged"],
            subtype_order=tuple(d["subtype_order"]),
            reg_floor=rep["reg_floor"],
            history=tuple(rep["history"]),
        )


@dataclass(frozen=True)
class ModelSelectionReport:
    candidates: dict = field(default_factory=dict)
    chosen_k: int = 0

    def as_dict(self) -> dict:
        return {"chosen_k": self.chosen_k, "candidates": {str(k): v for k, v in self.candidates.items()}}


@dataclass(frozen=True)
class SubtypeAssignment:
    patient_ids: tuple[str, ...]
    labels: tuple[str, ...]
    responsibilities: np.ndarray  # columns in PDVec order

    def as_dict(self) -> dict[str, dict]:
        return {
            p: {"subtype": lab, "responsibilities": r.tolist()}
            for p, lab, r in zip(self.patient_ids, self.labels, self.responsibilities)
        }

    def write_csv(self, stream) -> None:
        k = self.responsibilities.shape[1]
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["patient_id", "subtype"] + [f"resp_{j + 1}" for j in range(k)])
        for p, lab, r in zip(self.patient_ids, self.labels, self.responsibilities):
            w.writerow([p, lab] + [repr(float(v)) for v in r])


def n_parameters(k: int, d: int) -> int:
    return (k - 1) + k * d + k * d * (d + 1) // 2


def subtype_label(rank: int) -> str:
    return f"PDVec{rank + 1}"


def _check_coords(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValidationError("coordinates must be a patients x d matrix")
    if not np.all(np.isfinite(x)):
        raise ValidationError("coordinates contain non-finite values")
    return x


def _component_log_density(x, means, covs) -> np.ndarray:
    d = x.shape[1]
    try:
        chol = np.linalg.cholesky(covs)
    except np.linalg.LinAlgError:
        raise NumericError("a component covariance is not positive definite") from None
    inv = np.linalg.inv(chol)
    # k x n x d whitened residuals
    z = (x[None, :, :] - means[:, None, :]) @ np.swapaxes(inv, 1, 2)
    maha = np.sum(z * z, axis=2).T
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
    return -0.5 * (d * _LOG_2PI + logdet + maha)


def _e_step(x, weights, means, covs):
    with np.errstate(divide="ignore"):
        lw = _component_log_density(x, means, covs) + np.log(weights)
    top = lw.max(axis=1, keepdims=True)
    shifted = np.exp(lw - top)
    total = shifted.sum(axis=1, keepdims=True)
    norm = (top + np.log(total))[:, 0]
    resp = shifted / total
    return float(norm.sum()), resp


def _m_step(x, resp, reg_floor):
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    means = resp.T @ x / nk[:, None]
    diff = x[None, :, :] - means[:, None, :]
    covs = np.swapaxes(diff * resp.T[:, :, None], 1, 2) @ diff / nk[:, None, None]
    covs = floor_eigenvalues(covs, reg_floor)
    weights = nk / nk.sum()
    return weights, means, covs


def floor_eigenvalues(cov: np.ndarray, reg_floor: float) -> np.ndarray:
    """Closest covariance(s) with every eigenvalue >= reg_floor.

    This is the exact maximiser of the Gaussian M-step objective over the
    fixed set {cov >= reg_floor * I}, so EM stays monotone in log-likelihood.
    Accepts a single matrix or a stack.
    """
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    eye = np.eye(cov.shape[-1])
    try:
        np.linalg.cholesky(cov - reg_floor * eye)
        return cov
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(cov)
    vals = np.maximum(vals, reg_floor)
    out = (vecs * vals[..., None, :]) @ np.swapaxes(vecs, -1, -2)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def _kmeans_init(x, k, rng) -> np.ndarray:
    """k-means++ seeding followed by a single Lloyd pass; returns hard assignments."""
    n = len(x)
    idx = [int(rng.integers(n))]
    d2 = np.sum((x - x[idx[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        nxt = int(rng.choice(n, p=d2 / total)) if total > 0 else int(rng.integers(n))
        idx.append(nxt)
        d2 = np.minimum(d2, np.sum((x - x[nxt]) ** 2, axis=1))
    centers = x[idx]
    dist = ((x[:, None, :] - centers[None]) ** 2).sum(axis=2)
    labels = np.argmin(dist, axis=1)
    for j in range(k):
        if np.any(labels == j):
            centers[j] = x[labels == j].mean(axis=0)
    dist = ((x[:, None, :] - centers[None]) ** 2).sum(axis=2)
    labels = np.argmin(dist, axis=1)
    # a component left empty keeps its seed point so every mean starts on data
    for j in range(k):
        if not np.any(labels == j):
            labels[idx[j]] = j
    return labels


def velocity_order(means: np.ndarray) -> tuple[int, ...]:
    """Rank of each component (0 = slowest) by Euclidean norm of its mean."""
    norms = np.linalg.norm(means, axis=1)
    order = np.argsort(norms, kind="stable")
    rank = np.empty(len(order), dtype=int)
    rank[order] = np.arange(len(order))
    return tuple(int(r) for r in rank)


def _em(x, k, resp, max_iter, tol, reg_floor):
    n = len(x)
    weights, means, covs = _m_step(x, resp, reg_floor)
    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        ll, resp = _e_step(x, weights, means, covs)
        if history:
            prev = history[-1]
            if ll < prev - MONOTONE_SLACK * max(abs(prev), 1.0):
                raise NumericError(f"EM log-likelihood decreased from {prev!r} to {ll!r} at iteration {it}")
        history.append(ll)
        if len(history) > 1 and (history[-1] - history[-2]) / n < tol:
            converged = True
        weights, means, covs = _m_step(x, resp, reg_floor)
        if converged:
            break
    ll, _ = _e_step(x, weights, means, covs)
    if ll < history[-1] - MONOTONE_SLACK * max(abs(history[-1]), 1.0):
        raise NumericError("EM log-likelihood decreased on the final M-step")
    history.append(ll)
    return weights, means, covs, history, converged, it


def fit_gmm(
    coords,
    k: int,
    max_iter: int = 500,
    tol: float = 1e-6,
    seed: int = 0,
    n_init: int = 10,
    reg_floor: float = REG_FLOOR,
) -> GmmModel:
    """Full-covariance EM, best of ``n_init`` k-means++ starts by log-likelihood.

    Convergence is declared when the mean per-point log-likelihood improves
    by less than ``tol``.
    """
    x = _check_coords(coords)
    n = len(x)
    if k < 1:
        raise ValidationError("k must be >= 1")
    if n < k:
        raise ValidationError(f"{n} points cannot support {k} components")
    best = None
    for i in range(n_init):
        rng = np.random.default_rng(derive_seed(seed, "gmm-init", i))
        labels = _kmeans_init(x, k, rng)
        resp = np.zeros((n, k))
        resp[np.arange(n), labels] = 1.0
        fit = _em(x, k, resp, max_iter, tol, reg_floor)
        if best is None or fit[3][-1] > best[3][-1]:
            best = fit
    weights, means, covs, history, converged, it = best
    return GmmModel(
        weights=weights,
        means=means,
        covariances=covs,
        log_likelihood=history[-1],
        n_iter=it,
        converged=converged,
        subtype_order=velocity_order(means),
        reg_floor=reg_floor,
        history=tuple(history),
    )


def log_likelihood(model: GmmModel, coords) -> float:
    x = _check_coords(coords)
    if x.shape[1] != model.d:
        raise ValidationError(f"coordinates have {x.shape[1]} dimensions, model has {model.d}")
    return _e_step(x, model.weights, model.means, model.covariances)[0]


def responsibilities(model: GmmModel, coords) -> np.ndarray:
    x = _check_coords(coords)
    if x.shape[1] != model.d:
        raise ValidationError(f"coordinates have {x.shape[1]} dimensions, model has {model.d}")
    return _e_step(x, model.weights, model.means, model.covariances)[1]


def bic(model: GmmModel, coords) -> float:
    x = _check_coords(coords)
    return bic_value(log_likelihood(model, x), model.n_params, len(x))


def bic_value(loglik: float, n_params: int, n: int) -> float:
    return n_params * np.log(n) - 2.0 * loglik


def select_k(
    coords,
    k_range=(1, 6),
    max_iter: int = 500,
    tol: float = 1e-6,
    seed: int = 0,
    n_init: int = 10,
    reg_floor: float = REG_FLOOR,
) -> tuple[ModelSelectionReport, GmmModel]:
    """Fit every k in the inclusive range and keep the lowest-BIC model."""
    x = _check_coords(coords)
    lo, hi = k_range
    if lo < 1 or hi > len(x) or lo > hi:
        raise ValidationError(f"k range [{lo}, {hi}] invalid for {len(x)} points")
    candidates: dict[int, dict] = {}
    models: dict[int, GmmModel] = {}
    for k in range(lo, hi + 1):
        try:
            model = fit_gmm(x, k, max_iter, tol, derive_seed(seed, "select", k), n_init, reg_floor)
        except ProgspaceError as exc:
            log.warning("GMM fit with k=%d failed: %s", k, exc)
            candidates[k] = {"error": str(exc)}
            continue
        ll = log_likelihood(model, x)
        candidates[k] = {
            "log_likelihood": ll,
            "n_params": model.n_params,
            "bic": bic_value(ll, model.n_params, len(x)),
            "converged": model.converged,
        }
        models[k] = model
    if not models:
        raise NumericError(f"every GMM fit in k range [{lo}, {hi}] failed")
    chosen = min(models, key=lambda k: (candidates[k]["bic"], k))
    return ModelSelectionReport(candidates, chosen), models[chosen]


def assign_subtypes(model: GmmModel, coords, patient_ids) -> SubtypeAssignment:
    x = _check_coords(coords)
    if len(patient_ids) != len(x):
        raise ValidationError("patient_ids do not align with coordinate rows")
    resp = responsibilities(model, x)
    order = model.subtype_order or velocity_order(model.means)
    by_rank = np.empty_like(resp)
    for comp, rank in enumerate(order):
        by_rank[:, rank] = resp[:, comp]
    # argmax returns the first maximum, i.e. the lowest PDVec rank on ties
    hard = np.argmax(by_rank, axis=1)
    return SubtypeAssignment(tuple(patient_ids), tuple(subtype_label(r) for r in hard), by_rank)
