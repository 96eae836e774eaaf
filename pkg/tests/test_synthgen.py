import io
from collections import Counter
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from progspace import cohort, synthgen
from progspace.errors import DegenerateInputError, ValidationError
from progspace.synthgen import CohortSpec


def noiseless(**kw):
    return CohortSpec(noise_std=0.0, missing_rate=0.0, **kw)


def test_noiseless_linear_value():
    spec = noiseless(
        n_patients_per_group={"PDVec1": 1, "PDVec2": 0, "PDVec3": 0, "HC": 0},
        velocity_means={"PDVec1": (0.1, 0.1, 0.1), "PDVec2": (0.2, 0, 0), "PDVec3": (0.3, 0, 0), "HC": (0, 0, 0)},
        schedule=(0, 10),
        codes_per_dimension=1,
    )
    table, _ = synthgen.generate_cohort(spec)
    vals = {(o.visit_month, o.assessment_code): o.value for o in table.observations}
    for code in ("motor_01", "cognitive_01", "sleep_01"):
        assert vals[(10, code)] - vals[(0, code)] == pytest.approx(1.0, abs=1e-12)


def test_same_seed_identical():
    spec = CohortSpec(seed=11)
    assert synthgen.generate_cohort(spec) == synthgen.generate_cohort(spec)


def test_default_group_sizes():
    table, truth = synthgen.generate_cohort(CohortSpec())
    assert table.n_patients == 550
    assert Counter(truth.values()) == {"PDVec1": 150, "PDVec2": 150, "PDVec3": 150, "HC": 100}
    labels = table.patients
    assert all((labels[p] == "HC") == (g == "HC") for p, g in truth.items())


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**63 - 1))
def test_seed_changes_noise_not_sizes(seed):
    base = CohortSpec(n_patients_per_group={"PDVec1": 5, "PDVec2": 5, "PDVec3": 5, "HC": 5})
    t0, g0 = synthgen.generate_cohort(base)
    t1, g1 = synthgen.generate_cohort(replace(base, seed=seed))
    assert Counter(g0.values()) == Counter(g1.values())
    assert t1.schedule == t0.schedule
    if seed != base.seed:
        assert [o.value for o in t0.observations[:10]] != [o.value for o in t1.observations[:10]]


def test_noiseless_trajectories_affine_with_planted_slope():
    spec = noiseless(n_patients_per_group={"PDVec1": 4, "PDVec2": 4, "PDVec3": 4, "HC": 4})
    table, truth = synthgen.generate_cohort(spec)
    ids, cube = table.cube()
    months = np.asarray(table.schedule, dtype=float)
    dim_of = dict(spec.codes)
    dims = [dim_of[c] for c in table.assessment_codes]
    for i, pid in enumerate(ids):
        slope = np.asarray(spec.velocity_means[truth[pid]])[dims]
        expected = cube[i, 0, :][None, :] + months[:, None] * slope[None, :]
        np.testing.assert_allclose(cube[i], expected, atol=1e-12, rtol=0)


def test_least_squares_slope_converges_as_noise_vanishes():
    errs = []
    for noise in (0.5, 0.05, 0.005):
        spec = CohortSpec(noise_std=noise, missing_rate=0.0,
                          n_patients_per_group={"PDVec1": 30, "PDVec2": 30, "PDVec3": 30, "HC": 30})
        table, truth = synthgen.generate_cohort(spec)
        ids, cube = table.cube()
        months = np.asarray(table.schedule, dtype=float)
        t = months - months.mean()
        slopes = np.einsum("m,imc->ic", t, cube) / np.sum(t**2)
        motor = [j for j, c in enumerate(table.assessment_codes) if c.startswith("motor")]
        err = 0.0
        for g in synthgen.GROUPS:
            rows = [i for i, p in enumerate(ids) if truth[p] == g]
            err = max(err, abs(slopes[np.ix_(rows, motor)].mean() - spec.velocity_means[g][0]))
        errs.append(err)
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-4


def test_missing_rate_deletes_cells():
    table, _ = synthgen.generate_cohort(CohortSpec(missing_rate=0.2, seed=3))
    full = 550 * 5 * 15
    assert 0.17 < 1 - len(table.observations) / full < 0.23


def test_spec_invariants():
    with pytest.raises(ValidationError, match="motor"):
        CohortSpec(velocity_means={"PDVec1": (0.2, 0, 0), "PDVec2": (0.1, 0, 0), "PDVec3": (0.3, 0, 0),
                                   "HC": (0, 0, 0)})
    with pytest.raises(ValidationError, match="HC"):
        CohortSpec(velocity_means={"PDVec1": (0.1, 0, 0), "PDVec2": (0.2, 0, 0), "PDVec3": (0.3, 0, 0),
                                   "HC": (0, 0.01, 0)})
    with pytest.raises(ValidationError):
        CohortSpec(missing_rate=1.0)
    with pytest.raises(ValidationError):
        CohortSpec(baseline_std=(0.1, 0.2))


def test_per_dimension_baseline_spread():
    spec = CohortSpec(baseline_std=(0.0, 0.0, 2.0), noise_std=0.0, missing_rate=0.0)
    table, truth = synthgen.generate_cohort(spec)
    ids, cube = table.cube()
    pd1 = [i for i, p in enumerate(ids) if truth[p] == "PDVec1"]
    base = cube[pd1, 0, :]
    dim_of = dict(spec.codes)
    dims = np.array([dim_of[c] for c in table.assessment_codes])
    assert np.ptp(base[:, dims == 0]) == pytest.approx(0.0, abs=1e-12)
    assert np.std(base[:, dims == 2]) > 1.0


def test_zero_patients_degenerate():
    with pytest.raises(DegenerateInputError):
        synthgen.generate_cohort(CohortSpec(n_patients_per_group={"PDVec1": 0}))


def test_output_parses_back_and_truth_roundtrip():
    table, truth = synthgen.generate_cohort(CohortSpec(n_patients_per_group={"PDVec1": 3, "HC": 2}))
    buf = io.StringIO()
    cohort.write_visits(table, buf)
    assert cohort.parse_visits(buf.getvalue()) == table
    tb = io.StringIO()
    synthgen.write_truth(truth, tb)
    assert tb.getvalue().startswith("patient_id,group\n")
    assert synthgen.read_truth(io.StringIO(tb.getvalue())) == truth
