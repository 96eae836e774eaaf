"""End-to-end orchestration behind the ``synth``, ``run`` and ``replicate`` commands.

Every stage writes its outputs immediately and is recorded in
``MANIFEST.json``; a failing stage leaves earlier outputs in place and the
manifest names the stage that broke.
"""

from __future__ import annotations

import json
import logging
import os
from collections import Counter
from contextlib import contextmanager
from dataclasses import replace

import numpy as np

from . import cohort, dimred, evaluation, forest, mixture, plotting, synthgen
from .config import PipelineConfig
from .errors import ProgspaceError, StorageError, ValidationError
from .seeding import derive_seed

log = logging.getLogger(__name__)


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


class Outputs:
    """Writes files into one directory and keeps the manifest current."""

    def __init__(self, root: str, command: str):
        self.root = root
        self.manifest = {"command": command, "status": "running", "completed_stages": [], "files": []}
        try:
            os.makedirs(root, exist_ok=True)
        except OSError as exc:
            raise StorageError(f"cannot create output directory {root}: {exc}") from exc
        if not os.access(root, os.W_OK):
            raise StorageError(f"output directory {root} is not writable")
        self._flush()

    def path(self, name: str) -> str:
        return os.path.join(self.root, name)

    def write(self, name: str, text: str) -> str:
        p = self.path(name)
        try:
            with open(p, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise StorageError(f"cannot write {p}: {exc}") from exc
        self._record(name)
        return p

    def write_with(self, name: str, writer) -> str:
        p = self.path(name)
        try:
            with open(p, "w", encoding="utf-8", newline="") as fh:
                writer(fh)
        except OSError as exc:
            raise StorageError(f"cannot write {p}: {exc}") from exc
        self._record(name)
        return p

    def figure(self, name: str, draw, *args, **kwargs) -> None:
        draw(self.path(name), *args, **kwargs)
        self._record(name)

    def _record(self, name):
        if name not in self.manifest["files"]:
            self.manifest["files"].append(name)

    @contextmanager
    def stage(self, name: str):
        try:
            yield
        except ProgspaceError as exc:
            self.manifest["status"] = "failed"
            self.manifest["failed_stage"] = name
            self.manifest["error"] = str(exc)
            self._flush()
            exc.stage = name
            raise
        except Exception as exc:
            self.manifest["status"] = "failed"
            self.manifest["failed_stage"] = name
            self.manifest["error"] = f"{type(exc).__name__}: {exc}"
            self._flush()
            exc.stage = name
            raise
        self.manifest["completed_stages"].append(name)
        self._flush()

    def finish(self):
        self.manifest["status"] = "complete"
        self._flush()

    def _flush(self):
        with open(self.path("MANIFEST.json"), "w", encoding="utf-8") as fh:
            fh.write(_dump(self.manifest))


# ---------------------------------------------------------------- synth


def cmd_synth(cfg: PipelineConfig) -> dict:
    out = Outputs(cfg.paths.out, "synth")
    with out.stage("generate"):
        table, truth = synthgen.generate_cohort(cfg.cohort_spec())
    with out.stage("write"):
        out.write_with("visits.csv", lambda fh: cohort.write_visits(table, fh))
        out.write_with("truth.csv", lambda fh: synthgen.write_truth(truth, fh))
    out.finish()
    counts = Counter(truth.values())
    return {g: counts.get(g, 0) for g in synthgen.GROUPS}


# ---------------------------------------------------------------- run


def _read_visits(path: str, cfg: PipelineConfig) -> cohort.VisitTable:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            return cohort.parse_visits(fh, cfg.cohort.schedule, cfg.cohort.snap_window)
    except FileNotFoundError:
        raise StorageError(f"input file not found: {path}") from None
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc


def prepare_features(table: cohort.VisitTable, cfg: PipelineConfig):
    """impute -> vectorize -> drop static codes -> normalize; returns (raw, normalized)."""
    raw = cohort.drop_static_features(cohort.vectorize(cohort.impute(table)), cfg.cohort.static_epsilon)
    return raw, cohort.normalize(raw, cfg.cohort.normalization)


def fit_space(fm: cohort.FeatureMatrix, raw: cohort.FeatureMatrix, cfg: PipelineConfig):
    d = cfg.dimred
    space = dimred.fit(fm, d.method, d.rank, d.max_iter, d.tol, derive_seed(cfg.seed, "dimred"), d.n_restarts)
    space = dimred.name_dimensions(space, d.families)
    norm = dict(space.normalization)
    norm["fill_values"] = dict(zip(raw.feature_names, np.median(raw.values, axis=0).tolist()))
    return replace(space, normalization=norm)


def subtype(space, fm, cfg: PipelineConfig):
    mask = np.array([lab in set(cfg.gmm.cohorts) for lab in fm.cohort_labels])
    if mask.sum() == 0:
        raise ValidationError(f"no patients in cohorts {list(cfg.gmm.cohorts)} to subtype")
    coords = evaluation.gmm_view(space, space.patient_coords[mask], cfg.gmm.view)
    g = cfg.gmm
    report, model = mixture.select_k(
        coords, (g.k_min, min(g.k_max, len(coords))), g.max_iter, g.tol, derive_seed(cfg.seed, "gmm"),
        g.n_init, g.reg_floor,
    )
    ids = [p for p, keep in zip(fm.patient_ids, mask) if keep]
    return mask, coords, report, model, mixture.assign_subtypes(model, coords, ids)


def cmd_run(cfg: PipelineConfig) -> dict:
    out = Outputs(cfg.paths.out, "run")
    # the output directory is implied by where the file lives; leaving it out
    # keeps run directories comparable byte for byte
    out.write("config.txt", cfg.dump(exclude=("paths.out",)))

    with out.stage("ingest"):
        table = _read_visits(cfg.paths.input, cfg)
        if table.n_patients == 0:
            raise ValidationError(f"{cfg.paths.input} contains no observations")
    with out.stage("features"):
        raw, fm = prepare_features(table, cfg)
        out.write_with("features.csv", lambda fh: cohort.write_feature_matrix(fm, fh))
    with out.stage("dimred"):
        space = fit_space(fm, raw, cfg)
        out.write("progression_space.json", space.to_json() + "\n")
        out.write_with("coordinates.csv", lambda fh: dimred.write_coords(space, space.patient_coords,
                                                                          fm.patient_ids, fh))
        view2d = dimred.combined_2d(space)
        out.write_with("coordinates_2d.csv", lambda fh: _write_2d(fm.patient_ids, view2d, fh))
    with out.stage("subtype"):
        mask, coords, sel, gmm, assignment = subtype(space, fm, cfg)
        out.write("gmm.json", gmm.to_json() + "\n")
        out.write("model_selection.json", _dump(sel.as_dict()))
        out.write_with("assignments.csv", assignment.write_csv)
        if len(set(assignment.labels)) < 2:
            raise ValidationError(f"subtyping found {sel.chosen_k} component(s); prediction needs at least two")

    pd_fm = fm.rows(mask)
    labels = list(assignment.labels)
    params = cfg.forest_params(derive_seed(cfg.seed, "forest"))
    with out.stage("predict"):
        reports = evaluation.windowed_experiment(
            pd_fm, labels, params, cfg.eval.windows, cfg.eval.cv_k, derive_seed(cfg.seed, "cv")
        )
        for name, rep in reports.items():
            tag = _slug(name)
            out.write(f"cv_{tag}.json", _dump(rep.as_dict()))
            for cls, roc in rep.rocs.items():
                out.write_with(f"roc_{tag}_{cls}.csv", roc.write_csv)
        final_months = cfg.eval.windows.get(cfg.eval.final_window)
        if final_months is None:
            raise ValidationError(f"final_window {cfg.eval.final_window!r} is not a configured window")
        final_fm = evaluation.window_matrix(pd_fm, final_months)
        model = forest.train_forest(final_fm.values, labels, params, final_fm.feature_names)
        out.write("forest.json", model.to_json() + "\n")
        out.write_with("importances.csv", lambda fh: forest.write_importances(model, fh))

    summary = {
        "n_patients": len(fm.patient_ids),
        "n_subtyped": int(mask.sum()),
        "n_features": len(fm.feature_names),
        "method": space.method,
        "rank": space.rank,
        "dimension_names": list(space.dimension_names),
        "explained_variance": {
            (space.dimension_names[k] if space.dimension_names else f"dim{k + 1}"): space.explained[k]
            for k in range(space.rank)
        },
        "dimension_order": list(space.dimension_order),
        "chosen_k": sel.chosen_k,
        "bic": {str(k): c.get("bic") for k, c in sel.candidates.items()},
        "subtype_counts": dict(sorted(Counter(labels).items())),
        "windows": {
            name: {"macro_auc": rep.macro_auc, "per_class_auc": rep.per_class_auc}
            for name, rep in reports.items()
        },
        "final_window": cfg.eval.final_window,
        "oob_error": model.oob_error,
    }
    if cfg.paths.truth and os.path.exists(cfg.paths.truth):
        with open(cfg.paths.truth, encoding="utf-8") as fh:
            truth = synthgen.read_truth(fh)
        planted = [truth.get(p) for p in assignment.patient_ids]
        if all(t is not None for t in planted):
            summary["ari_vs_truth"] = evaluation.adjusted_rand_index(planted, labels)
    out.write("summary.json", _dump(summary))

    if cfg.report.figures:
        with out.stage("figures"):
            _figures(out, space, fm, mask, assignment, sel, reports, model)
    out.finish()
    return summary


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in name).strip("_")


def _write_2d(ids, xy, fh):
    import csv

    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("patient_id", "motor", "cognitive_sleep"))
    for pid, (a, b) in zip(ids, xy):
        w.writerow((pid, repr(float(a)), repr(float(b))))


def _figures(out, space, fm, mask, assignment, sel, reports, model):
    group = np.array(fm.cohort_labels, dtype=object)
    group[mask] = assignment.labels
    group = group.tolist()
    names = space.ordered_names()
    ordered = space.ordered_coords()
    view2d = dimred.combined_2d(space)
    out.figure("fig_space_2d.svg", plotting.scatter_2d, view2d, group)
    if space.rank >= 3:
        out.figure("fig_space_3d.svg", plotting.scatter_3d, ordered[:, :3], group, names[:3])
    out.figure("fig_dimensions.svg", plotting.dimension_distributions, ordered, group, names)
    out.figure("fig_bic.svg", plotting.bic_curve, sel.candidates, sel.chosen_k)
    out.figure("fig_importances.svg", plotting.importance_bar, forest.feature_importance(model))
    for name, rep in reports.items():
        out.figure(f"fig_roc_{_slug(name)}.svg", plotting.roc_curves, rep.rocs, title=name)


# ---------------------------------------------------------------- replicate


def _read_text(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc


def load_artifacts(directory: str):
    space = dimred.ProgressionSpace.from_json(_read_text(os.path.join(directory, "progression_space.json")))
    gmm = mixture.GmmModel.from_json(_read_text(os.path.join(directory, "gmm.json")))
    model = forest.ForestModel.from_json(_read_text(os.path.join(directory, "forest.json")))
    return space, gmm, model


def cmd_replicate(cfg: PipelineConfig) -> dict:
    if not cfg.paths.artifacts:
        raise ValidationError("replicate needs paths.artifacts (the output directory of a previous run)")
    if not cfg.paths.external:
        raise ValidationError("replicate needs paths.external (the external visit CSV)")
    out = Outputs(cfg.paths.out, "replicate")
    with out.stage("load"):
        space, gmm, model = load_artifacts(cfg.paths.artifacts)
        table = _read_visits(cfg.paths.external, cfg)
    with out.stage("replicate"):
        report, assignment = evaluation.external_replication(
            space, gmm, model, table, cohorts=cfg.gmm.cohorts, view=cfg.gmm.view
        )
        out.write("replication.json", _dump(report))
        out.write_with("replication_assignments.csv", assignment.write_csv)
    out.finish()
    return report
