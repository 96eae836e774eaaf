"""Synthetic longitudinal cohorts with planted progression subtypes.

Each patient belongs to one of PDVec1/2/3 (slow, moderate, fast) or HC.
A code tied to latent dimension d observed at month m takes the value

    baseline_d + velocity_d * m + N(0, noise_std)

where ``baseline_d`` is drawn once per patient around its group mean and
``velocity_d`` is the group's planted slope.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

from .cohort import DEFAULT_SCHEDULE, VisitObservation, VisitTable
from .errors import DegenerateInputError, ValidationError

GROUPS = ("PDVec1", "PDVec2", "PDVec3", "HC")
DIMENSIONS = ("motor", "cognitive", "sleep")


def _default_velocity():
    return {
        "PDVec1": (0.04, 0.010, 0.020),
        "PDVec2": (0.10, 0.025, 0.050),
        "PDVec3": (0.16, 0.040, 0.080),
        "HC": (0.0, 0.0, 0.0),
    }


def _default_baseline():
    return {
        "PDVec1": (1.0, 0.5, 0.5),
        "PDVec2": (2.0, 1.0, 1.0),
        "PDVec3": (3.0, 1.5, 1.5),
        "HC": (0.0, 0.0, 0.0),
    }


@dataclass(frozen=True)
class CohortSpec:
    n_patients_per_group: dict = field(
        default_factory=lambda: {"PDVec1": 150, "PDVec2": 150, "PDVec3": 150, "HC": 100}
    )
    dimensions: tuple = DIMENSIONS
    velocity_means: dict = field(default_factory=_default_velocity)
    baseline_means: dict = field(default_factory=_default_baseline)
    baseline_std: float | tuple = 0.6  # scalar, or one value per dimension
    noise_std: float = 0.5
    codes_per_dimension: int = 5
    schedule: tuple = DEFAULT_SCHEDULE
    missing_rate: float = 0.05
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.n_patients_per_group) - set(GROUPS)
        if unknown:
            raise ValidationError(f"unknown groups {sorted(unknown)}")
        for g, n in self.n_patients_per_group.items():
            if n < 0:
                raise ValidationError(f"negative patient count for {g}")
        nd = len(self.dimensions)
        for name, table in (("velocity_means", self.velocity_means), ("baseline_means", self.baseline_means)):
            for g in GROUPS:
                if g not in table or len(table[g]) != nd:
                    raise ValidationError(f"{name} needs {nd} values for group {g}")
        v = self.velocity_means
        motor = self.dimensions.index("motor") if "motor" in self.dimensions else 0
        if not v["PDVec1"][motor] < v["PDVec2"][motor] < v["PDVec3"][motor]:
            raise ValidationError("motor velocities must satisfy PDVec1 < PDVec2 < PDVec3")
        if any(x != 0 for x in v["HC"]):
            raise ValidationError("HC velocities must be zero")
        if np.ndim(self.baseline_std) and len(self.baseline_std) not in (1, nd):
            raise ValidationError(f"baseline_std needs 1 or {nd} values")
        if self.noise_std < 0 or np.any(np.asarray(self.baseline_std) < 0):
            raise ValidationError("standard deviations must be non-negative")
        if self.codes_per_dimension < 1:
            raise ValidationError("codes_per_dimension must be >= 1")
        if not 0 <= self.missing_rate < 1:
            raise ValidationError("missing_rate must lie in [0, 1)")
        sched = list(self.schedule)
        if not sched or sched[0] != 0 or any(b <= a for a, b in zip(sched, sched[1:])):
            raise ValidationError("schedule must be strictly increasing from 0")

    @property
    def codes(self) -> list[tuple[str, int]]:
        """(code name, dimension index) pairs."""
        return [
            (f"{dim}_{j + 1:02d}", d)
            for d, dim in enumerate(self.dimensions)
            for j in range(self.codes_per_dimension)
        ]

    def family_map(self) -> dict[str, str]:
        return {code: self.dimensions[d] for code, d in self.codes}


def generate_cohort(spec: CohortSpec) -> tuple[VisitTable, dict[str, str]]:
    """Draw a cohort; returns the visit table and patient_id -> planted group."""
    groups = [g for g in GROUPS for _ in range(spec.n_patients_per_group.get(g, 0))]
    if not groups:
        raise DegenerateInputError("cohort spec has zero patients")
    rng = np.random.default_rng(spec.seed)
    # group membership is shuffled once so patient ids carry no group order
    groups = [groups[i] for i in rng.permutation(len(groups))]
    n = len(groups)
    nd = len(spec.dimensions)
    months = np.asarray(spec.schedule, dtype=float)
    codes = spec.codes

    base_mu = np.array([spec.baseline_means[g] for g in groups], dtype=float)
    slope = np.array([spec.velocity_means[g] for g in groups], dtype=float)
    spread = np.broadcast_to(np.asarray(spec.baseline_std, dtype=float).ravel(), (nd,))
    baseline = base_mu + spread * rng.standard_normal((n, nd))
    code_dim = np.array([d for _, d in codes])
    # patients x months x codes
    clean = baseline[:, None, code_dim] + slope[:, None, code_dim] * months[None, :, None]
    values = clean + spec.noise_std * rng.standard_normal(clean.shape)
    keep = rng.random(clean.shape) >= spec.missing_rate

    width = max(4, len(str(n)))
    ids = [f"P{i + 1:0{width}d}" for i in range(n)]
    obs = []
    for i, pid in enumerate(ids):
        label = "HC" if groups[i] == "HC" else "PD"
        for j, m in enumerate(spec.schedule):
            for k, (code, _) in enumerate(codes):
                if keep[i, j, k]:
                    obs.append(VisitObservation(pid, label, int(m), code, float(values[i, j, k])))
    observed_months = tuple(sorted({o.visit_month for o in obs}))
    table = VisitTable(tuple(obs), observed_months, tuple(sorted({o.assessment_code for o in obs})))
    return table, dict(zip(ids, groups))


def write_truth(truth: dict[str, str], stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(("patient_id", "group"))
    for pid, g in truth.items():
        w.writerow((pid, g))


def read_truth(stream: TextIO) -> dict[str, str]:
    reader = csv.DictReader(stream)
    return {row["patient_id"]: row["group"] for row in reader}
